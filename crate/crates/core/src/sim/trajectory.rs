//! Parametric trajectories with closed-form first and second derivatives.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::quat_from_rpy;

/// Value with first and second time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d: f64,
    pub dd: f64,
}

impl Jet {
    pub const fn constant(v: f64) -> Self {
        Jet { v, d: 0.0, dd: 0.0 }
    }

    pub const fn time(t: f64) -> Self {
        Jet {
            v: t,
            d: 1.0,
            dd: 0.0,
        }
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        Jet {
            v: s,
            d: c * self.d,
            dd: c * self.dd - s * self.d * self.d,
        }
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        Jet {
            v: c,
            d: -s * self.d,
            dd: -s * self.dd - c * self.d * self.d,
        }
    }

    /// Applies a scalar function given its value and first two derivatives at `self.v`.
    pub fn chain(self, f: f64, df: f64, ddf: f64) -> Self {
        Jet {
            v: f,
            d: df * self.d,
            dd: ddf * self.d * self.d + df * self.dd,
        }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet {
            v: self.v + o.v,
            d: self.d + o.d,
            dd: self.dd + o.dd,
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet {
            v: -self.v,
            d: -self.d,
            dd: -self.dd,
        }
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
            dd: self.dd * o.v + 2.0 * self.d * o.d + self.v * o.dd,
        }
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, k: f64) -> Jet {
        Jet {
            v: self.v * k,
            d: self.d * k,
            dd: self.dd * k,
        }
    }
}

/// `6u⁵ - 15u⁴ + 10u³` clamped to `[0, 1]`.
fn smootherstep(u: Jet) -> Jet {
    if u.v <= 0.0 {
        return Jet::constant(0.0);
    }
    if u.v >= 1.0 {
        return Jet::constant(1.0);
    }
    let x = u.v;
    let f = x * x * x * (x * (6.0 * x - 15.0) + 10.0);
    let df = 30.0 * x * x * (x - 1.0) * (x - 1.0);
    let ddf = 60.0 * x * (2.0 * x - 1.0) * (x - 1.0);
    u.chain(f, df, ddf)
}

/// Integral of [`smootherstep`] from 0: `u⁶ - 3u⁵ + 2.5u⁴` on `[0, 1]`.
fn smootherstep_integral(u: Jet) -> Jet {
    if u.v <= 0.0 {
        return Jet::constant(0.0);
    }
    if u.v >= 1.0 {
        return Jet {
            v: 0.5 + (u.v - 1.0),
            d: u.d,
            dd: u.dd,
        };
    }
    let x = u.v;
    let f = x * x * x * x * (x * (x - 3.0) + 2.5);
    let df = x * x * x * (x * (6.0 * x - 15.0) + 10.0);
    let ddf = 30.0 * x * x * (x - 1.0) * (x - 1.0);
    u.chain(f, df, ddf)
}

/// Distance along a path that rests, accelerates smoothly for `ramp` seconds, cruises, and
/// decelerates to a stop after covering `length` in `duration` seconds of motion.
fn travel(t: f64, start: f64, duration: f64, ramp: f64, length: f64) -> Jet {
    let ramp = ramp.min(0.5 * duration);
    let speed = length / (duration - ramp);
    let tau = t - start;
    if tau <= 0.0 {
        return Jet::constant(0.0);
    }
    if tau >= duration {
        return Jet::constant(length);
    }
    let up = smootherstep_integral(Jet::time(tau) * (1.0 / ramp)) * (speed * ramp);
    let down_start = duration - ramp;
    if tau <= down_start {
        return up;
    }
    // Mirror of the ramp-up, measured back from the stop point.
    let back = smootherstep_integral(-Jet::time(tau - duration) * (1.0 / ramp)) * (speed * ramp);
    Jet::constant(length) - back
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// Body to world.
    pub orientation: UnitQuaternion<f64>,
    /// Angular rate in the body frame.
    pub omega_body: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    /// Hovering in place.
    Static { position: [f64; 3], yaw: f64 },
    /// Rest, then a smooth traverse along +x with gentle sway, bob and attitude wobble.
    Corridor {
        length: f64,
        height: f64,
        start: f64,
        ramp: f64,
        sway: f64,
        bob: f64,
        yaw_wobble: f64,
        tilt_wobble: f64,
    },
    /// Rest, then straight travel from `from` to `to`, facing +x.
    Line {
        from: [f64; 3],
        to: [f64; 3],
        start: f64,
        ramp: f64,
    },
    /// Uniform circle, body x along the direction of travel.
    Circle {
        center: [f64; 3],
        radius: f64,
        rate: f64,
    },
}

impl Trajectory {
    pub fn corridor(length: f64) -> Self {
        Trajectory::Corridor {
            length,
            height: 1.5,
            start: 1.0,
            ramp: 1.5,
            sway: 0.15,
            bob: 0.05,
            yaw_wobble: 0.05,
            tilt_wobble: 0.02,
        }
    }

    /// Position and ZYX Euler angles `(roll, pitch, yaw)` as jets.
    fn jets(&self, t: f64, duration: f64) -> ([Jet; 3], [Jet; 3]) {
        let tj = Jet::time(t);
        match *self {
            Trajectory::Static { position, yaw } => (
                position.map(Jet::constant),
                [Jet::constant(0.0), Jet::constant(0.0), Jet::constant(yaw)],
            ),
            Trajectory::Corridor {
                length,
                height,
                start,
                ramp,
                sway,
                bob,
                yaw_wobble,
                tilt_wobble,
            } => {
                let x = travel(t, start, duration - start, ramp, length);
                // Wobble fades in over the first second of motion.
                let env = smootherstep(Jet::time(t - start));
                let wave = |amp: f64, hz: f64, phase: f64| {
                    env * ((tj * (std::f64::consts::TAU * hz) + Jet::constant(phase)).sin()
                        - Jet::constant(phase.sin()))
                        * amp
                };
                let y = wave(sway, 0.23, 0.4);
                let z = Jet::constant(height) + wave(bob, 0.37, 1.1);
                let roll = wave(tilt_wobble, 0.41, 2.0);
                let pitch = wave(tilt_wobble, 0.29, 0.7);
                let yaw = wave(yaw_wobble, 0.19, 1.6);
                ([x, y, z], [roll, pitch, yaw])
            }
            Trajectory::Line {
                from,
                to,
                start,
                ramp,
            } => {
                let (a, b) = (Vector3::from(from), Vector3::from(to));
                let len = (b - a).norm();
                let s = if len > 0.0 {
                    travel(t, start, duration - start, ramp, len) * (1.0 / len)
                } else {
                    Jet::constant(0.0)
                };
                let p = [0, 1, 2].map(|i| Jet::constant(a[i]) + s * (b[i] - a[i]));
                (p, [Jet::constant(0.0); 3])
            }
            Trajectory::Circle {
                center,
                radius,
                rate,
            } => {
                let ang = tj * rate;
                let p = [
                    Jet::constant(center[0]) + ang.cos() * radius,
                    Jet::constant(center[1]) + ang.sin() * radius,
                    Jet::constant(center[2]),
                ];
                let yaw = ang + Jet::constant(std::f64::consts::FRAC_PI_2 * rate.signum());
                (p, [Jet::constant(0.0), Jet::constant(0.0), yaw])
            }
        }
    }

    /// Exact kinematics at time `t` of a run lasting `duration` seconds.
    pub fn evaluate(&self, t: f64, duration: f64) -> KinematicState {
        let (p, [roll, pitch, yaw]) = self.jets(t, duration);
        let (sr, cr) = roll.v.sin_cos();
        let (sp, cp) = pitch.v.sin_cos();
        let omega_body = Vector3::new(
            roll.d - yaw.d * sp,
            pitch.d * cr + yaw.d * cp * sr,
            -pitch.d * sr + yaw.d * cp * cr,
        );
        KinematicState {
            position: Vector3::new(p[0].v, p[1].v, p[2].v),
            velocity: Vector3::new(p[0].d, p[1].d, p[2].d),
            acceleration: Vector3::new(p[0].dd, p[1].dd, p[2].dd),
            orientation: quat_from_rpy(roll.v, pitch.v, yaw.v),
            omega_body,
        }
    }
}
