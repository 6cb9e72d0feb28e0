//! Procedurally textured corridor, per-pixel ray casting and visual degradations.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{stream_seed, DustConfig, ScenarioConfig};
use crate::camera::Camera;
use crate::imaging::{Frame, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Corridor extends over `x ∈ [x_min, x_max]`.
    pub x_min: f64,
    pub x_max: f64,
    pub half_width: f64,
    /// Wall height; above it the scene is empty.
    pub height: f64,
    pub visual_seed: u64,
    pub thermal_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            x_min: -3.0,
            x_max: 27.0,
            half_width: 2.5,
            height: 4.0,
            visual_seed: 17,
            thermal_seed: 9001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    LeftWall,
    RightWall,
    Floor,
    EndWall,
    StartWall,
}

impl Surface {
    fn id(self) -> u64 {
        self as u64 + 1
    }
}

struct Hit {
    surface: Surface,
    distance: f64,
    /// Texture coordinates on the surface, meters.
    uv: (f64, f64),
    /// |cos| of the incidence angle.
    incidence: f64,
}

fn cast(world: &WorldConfig, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut consider = |t: f64, surface: Surface, uv: (f64, f64), incidence: f64| {
        if t > 1e-6 && best.as_ref().is_none_or(|b| t < b.distance) {
            best = Some(Hit {
                surface,
                distance: t,
                uv,
                incidence,
            });
        }
    };
    let w = world.half_width;
    let inside_x = |x: f64| x >= world.x_min && x <= world.x_max;
    let inside_z = |z: f64| (0.0..=world.height).contains(&z);
    if d.y.abs() > 1e-12 {
        for (wall_y, surface) in [(w, Surface::LeftWall), (-w, Surface::RightWall)] {
            let t = (wall_y - o.y) / d.y;
            let p = o + d * t;
            if inside_x(p.x) && inside_z(p.z) {
                consider(t, surface, (p.x, p.z), d.y.abs());
            }
        }
    }
    if d.z.abs() > 1e-12 {
        let t = -o.z / d.z;
        let p = o + d * t;
        if inside_x(p.x) && p.y.abs() <= w {
            consider(t, Surface::Floor, (p.x, p.y), d.z.abs());
        }
    }
    if d.x.abs() > 1e-12 {
        for (wall_x, surface) in [
            (world.x_max, Surface::EndWall),
            (world.x_min, Surface::StartWall),
        ] {
            let t = (wall_x - o.x) / d.x;
            let p = o + d * t;
            if p.y.abs() <= w && inside_z(p.z) {
                consider(t, surface, (p.y, p.z), d.x.abs());
            }
        }
    }
    best
}

#[inline]
fn hash(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut z = seed
        ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Lattice value noise with quintic interpolation, values in `[0, 1)`.
fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
    let (u, v) = (fade(x - fx), fade(y - fy));
    let a = hash(ix, iy, seed);
    let b = hash(ix + 1, iy, seed);
    let c = hash(ix, iy + 1, seed);
    let d = hash(ix + 1, iy + 1, seed);
    let top = a + (b - a) * u;
    let bottom = c + (d - c) * u;
    top + (bottom - top) * v
}

struct TextureParams {
    base_freq: f64,
    octaves: usize,
    persistence: f64,
    contrast: f64,
}

const VISUAL_TEXTURE: TextureParams = TextureParams {
    base_freq: 1.2,
    octaves: 6,
    persistence: 0.6,
    contrast: 2.6,
};

const THERMAL_TEXTURE: TextureParams = TextureParams {
    base_freq: 0.8,
    octaves: 5,
    persistence: 0.62,
    contrast: 2.4,
};

/// Band-limited fBm: octaves finer than the pixel footprint fade out.
fn texture(p: &TextureParams, uv: (f64, f64), footprint: f64, seed: u64) -> f64 {
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = p.base_freq;
    for o in 0..p.octaves {
        let s = seed.wrapping_add(o as u64 * 0x1000_0001);
        // Full weight below a quarter cycle per pixel, gone at half a cycle.
        let w = ((0.5 - footprint * freq) / 0.25).clamp(0.0, 1.0);
        let n = if w > 0.0 {
            value_noise(
                uv.0 * freq + 0.37 * o as f64,
                uv.1 * freq - 0.61 * o as f64,
                s,
            )
        } else {
            0.5
        };
        sum += amp * (w * n + (1.0 - w) * 0.5);
        norm += amp;
        amp *= p.persistence;
        freq *= 2.0;
    }
    (0.5 + p.contrast * (sum / norm - 0.5)).clamp(0.0, 1.0)
}

/// A dust speck alive for `lifetime` frames starting at `birth_frame`, falling `fall_px`
/// pixels per frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DustSpeck {
    pub birth_frame: usize,
    pub lifetime: usize,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub fall_px: f64,
    pub intensity: f64,
}

impl DustSpeck {
    pub fn alive(&self, frame: usize) -> bool {
        frame >= self.birth_frame && frame < self.birth_frame + self.lifetime
    }

    pub fn center(&self, frame: usize) -> (f64, f64) {
        (
            self.x,
            self.y + self.fall_px * (frame - self.birth_frame) as f64,
        )
    }
}

/// Poisson arrivals of specks for every visual frame at or after `dust.start_time`.
pub fn dust_schedule(
    dust: &DustConfig,
    frame_times: &[f64],
    width: usize,
    height: usize,
    seed: u64,
) -> Vec<DustSpeck> {
    let mut out = Vec::new();
    if dust.rate <= 0.0 || dust.lifetime_frames == 0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "dust", 0));
    let poisson = Poisson::new(dust.rate).expect("positive rate");
    for (i, &t) in frame_times.iter().enumerate() {
        if t < dust.start_time {
            continue;
        }
        let n = poisson.sample(&mut rng) as usize;
        for _ in 0..n {
            out.push(DustSpeck {
                birth_frame: i,
                lifetime: dust.lifetime_frames,
                x: rng.random_range(0.0..width as f64),
                y: rng.random_range(0.0..height as f64),
                radius: dust.radius_px * rng.random_range(0.6..1.4),
                fall_px: dust.fall_px_per_frame * rng.random_range(0.5..1.5),
                intensity: dust.intensity * rng.random_range(0.8..1.0),
            });
        }
    }
    out
}

/// Renders one frame of `camera` mounted on a body at pose `(position, orientation)`.
pub(crate) fn render_frame(
    config: &ScenarioConfig,
    camera: &Camera,
    position: &Vector3<f64>,
    orientation: &UnitQuaternion<f64>,
    frame_index: usize,
    timestamp: f64,
    dust: &[DustSpeck],
) -> Frame {
    let intr = &camera.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let world = &config.world;
    let cam_rot = orientation * camera.extrinsics.rotation;
    let origin = position + orientation * camera.extrinsics.translation;
    let visual = camera.spectrum == Spectrum::Visual;
    let (tex, tex_seed) = if visual {
        (&VISUAL_TEXTURE, world.visual_seed)
    } else {
        (&THERMAL_TEXTURE, world.thermal_seed)
    };
    let brightness = if visual {
        config.brightness_at(timestamp)
    } else {
        1.0
    };
    let fog = if visual { config.fog_beta } else { 0.0 };
    let focal = 0.5 * (intr.fx + intr.fy);

    let mut values = vec![0.0f64; w * h];
    for v in 0..h {
        for u in 0..w {
            let n = intr.unproject(u as f64, v as f64);
            let dir = (cam_rot * Vector3::new(n.x, n.y, 1.0)).normalize();
            let (radiance, depth) = match cast(world, &origin, &dir) {
                Some(hit) => {
                    let footprint = hit.distance / (focal * hit.incidence.max(0.05));
                    let seed = tex_seed.wrapping_mul(31).wrapping_add(hit.surface.id());
                    let albedo = texture(tex, hit.uv, footprint, seed);
                    let shade = if visual {
                        // Light carried by the robot.
                        0.35 + 0.65 / (1.0 + (hit.distance / 9.0).powi(2))
                    } else {
                        1.0
                    };
                    let base = if visual {
                        20.0 + 215.0 * albedo * shade
                    } else {
                        30.0 + 200.0 * albedo
                    };
                    (base, hit.distance)
                }
                None => (if visual { 12.0 } else { 25.0 }, f64::INFINITY),
            };
            let mut value = radiance;
            if fog > 0.0 {
                let tr = (-fog * depth).exp();
                value = value * tr + config.fog_airlight * (1.0 - tr);
            }
            values[v * w + u] = value * brightness;
        }
    }

    if visual {
        for s in dust.iter().filter(|s| s.alive(frame_index)) {
            let (cx, cy) = s.center(frame_index);
            let r = s.radius;
            let x0 = (cx - r - 2.0).floor().max(0.0) as usize;
            let x1 = ((cx + r + 2.0).ceil() as usize).min(w - 1);
            let y0 = (cy - r - 2.0).floor().max(0.0) as usize;
            let y1 = ((cy + r + 2.0).ceil().max(0.0) as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    let alpha = (r + 0.5 - d).clamp(0.0, 1.0);
                    let i = y * w + x;
                    values[i] = values[i] * (1.0 - alpha) + s.intensity * alpha;
                }
            }
        }
    }

    let sigma = config.noise.pixel_noise_std;
    let stream = if visual { "visual" } else { "thermal" };
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, stream, frame_index as u64));
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let pixels = values
        .into_iter()
        .map(|v| {
            let noisy = if sigma > 0.0 {
                v + normal.sample(&mut rng)
            } else {
                v
            };
            noisy.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Frame::new(w, h, pixels, timestamp, camera.spectrum, stream).expect("valid frame size")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_ray_hits_end_wall() {
        let world = WorldConfig::default();
        let hit = cast(&world, &Vector3::new(0.0, 0.0, 1.5), &Vector3::x()).unwrap();
        assert_eq!(hit.surface, Surface::EndWall);
        assert!((hit.distance - world.x_max).abs() < 1e-12);
        let up = cast(&world, &Vector3::new(0.0, 0.0, 1.5), &Vector3::z());
        assert!(up.is_none());
        let side = cast(&world, &Vector3::new(0.0, 0.0, 1.5), &Vector3::y()).unwrap();
        assert_eq!(side.surface, Surface::LeftWall);
        assert!((side.distance - 2.5).abs() < 1e-12);
    }

    #[test]
    fn value_noise_is_continuous_and_bounded() {
        for i in 0..1000 {
            let x = i as f64 * 0.0137 - 3.0;
            let a = value_noise(x, 0.5 * x, 5);
            let b = value_noise(x + 1e-7, 0.5 * x, 5);
            assert!((0.0..1.0).contains(&a));
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn distant_texture_is_band_limited() {
        // At a huge footprint every octave is faded, leaving flat mid-gray.
        let v = texture(&VISUAL_TEXTURE, (3.3, 1.7), 100.0, 1);
        assert_eq!(v, 0.5);
    }
}
