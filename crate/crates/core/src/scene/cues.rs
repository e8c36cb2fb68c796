//! Monocular cue simulation.
//!
//! Monocular depth predictors are locally consistent but globally only
//! affine-correct, with slow spatial drift. The simulator reproduces exactly
//! that failure mode: a per-view global affine map of true depth multiplied
//! by a smooth low-frequency warp, plus small random rotations of the true
//! normals.

use super::{GroundTruth, ScalarMap, VectorMap};
use crate::math::{sample_normal, sample_unit_sphere, Vec3};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CueSpec {
    /// Per-view global depth scale is drawn uniformly from this range.
    pub scale_range: (f64, f64),
    /// Per-view shift is uniform in +/- this fraction of the scene width.
    pub shift_frac: f64,
    /// Amplitude of the multiplicative low-frequency warp (0 disables).
    pub warp_amplitude: f64,
    /// Angular normal noise in degrees (0 disables).
    pub normal_noise_deg: f64,
}

impl Default for CueSpec {
    fn default() -> Self {
        Self {
            scale_range: (0.5, 2.0),
            shift_frac: 0.2,
            warp_amplitude: 0.08,
            normal_noise_deg: 3.0,
        }
    }
}

impl CueSpec {
    /// No corruption at all: cues are an exact per-view affine map of truth.
    pub fn exact() -> Self {
        Self {
            scale_range: (1.0, 1.0),
            shift_frac: 0.0,
            warp_amplitude: 0.0,
            normal_noise_deg: 0.0,
        }
    }
}

/// Per-view corruption parameters, recorded for test oracles.
#[derive(Debug, Clone)]
pub struct CueRecord {
    pub scale: f64,
    pub shift: f64,
    /// (freq_u, freq_v, phase) of the three warp cosines.
    pub warp: [(f64, f64, f64); 3],
    pub warp_amplitude: f64,
}

impl CueRecord {
    pub fn warp_at(&self, u: f64, v: f64, width: usize, height: usize) -> f64 {
        if self.warp_amplitude == 0.0 {
            return 1.0;
        }
        let mut s = 0.0;
        for (fu, fv, phase) in self.warp {
            s += (std::f64::consts::TAU
                * (fu * (u + 0.5) / width as f64 + fv * (v + 0.5) / height as f64)
                + phase)
                .cos();
        }
        1.0 + self.warp_amplitude * s / 3.0
    }
}

/// Rotate `n` by `angle_rad` around a uniformly random axis perpendicular
/// to it.
fn rotate_normal<R: Rng>(n: &Vec3, angle_rad: f64, rng: &mut R) -> Vec3 {
    if angle_rad == 0.0 {
        return *n;
    }
    let axis = loop {
        let u = sample_unit_sphere(rng);
        let perp = u - n * u.dot(n);
        let len = perp.norm();
        if len > 1e-6 {
            break perp / len;
        }
    };
    let k = Matrix3::new(
        0.0, -axis[2], axis[1], axis[2], 0.0, -axis[0], -axis[1], axis[0], 0.0,
    );
    let rot = Matrix3::identity() + k * angle_rad.sin() + k * k * (1.0 - angle_rad.cos());
    (rot * n).normalize()
}

/// Simulate monocular depth and normal maps from exact ground truth.
pub fn simulate_monocular_cues(
    gt: &GroundTruth,
    scene_width: f64,
    spec: &CueSpec,
    seed: u64,
) -> (Vec<ScalarMap>, Vec<VectorMap>, Vec<CueRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mono_depth = Vec::with_capacity(gt.depth.len());
    let mut mono_normal = Vec::with_capacity(gt.normal.len());
    let mut records = Vec::with_capacity(gt.depth.len());
    let noise_rad_base = spec.normal_noise_deg.to_radians();
    for (d_true, n_true) in gt.depth.iter().zip(&gt.normal) {
        let (w, h) = (d_true.width, d_true.height);
        let scale = if spec.scale_range.0 == spec.scale_range.1 {
            spec.scale_range.0
        } else {
            rng.gen_range(spec.scale_range.0..spec.scale_range.1)
        };
        let shift = if spec.shift_frac == 0.0 {
            0.0
        } else {
            rng.gen_range(-spec.shift_frac..spec.shift_frac) * scene_width
        };
        let mut warp = [(0.0, 0.0, 0.0); 3];
        for slot in &mut warp {
            *slot = (
                rng.gen_range(0.3..1.5),
                rng.gen_range(0.3..1.5),
                rng.gen_range(0.0..std::f64::consts::TAU),
            );
        }
        let record = CueRecord {
            scale,
            shift,
            warp,
            warp_amplitude: spec.warp_amplitude,
        };

        let mut dm = ScalarMap::new(w, h);
        let mut nm = VectorMap::new(w, h);
        for v in 0..h {
            for u in 0..w {
                let warp_val = record.warp_at(u as f64, v as f64, w, h);
                dm.set(u, v, (scale * d_true.get(u, v) + shift) * warp_val);
                let n = n_true.get(u, v);
                let n_noisy = if noise_rad_base == 0.0 {
                    n
                } else {
                    let angle = noise_rad_base * rng.gen_range(0.8..1.2);
                    rotate_normal(&n, angle, &mut rng)
                };
                nm.set(u, v, &n_noisy);
            }
        }
        mono_depth.push(dm);
        mono_normal.push(nm);
        records.push(record);
    }
    (mono_depth, mono_normal, records)
}

#[derive(Debug, Clone)]
pub struct MvsSpec {
    /// Relative Gaussian depth noise (fraction of true depth).
    pub noise_rel: f64,
    /// Fraction of pixels left invalid (sentinel <= 0), mimicking MVS holes.
    pub hole_fraction: f64,
}

impl Default for MvsSpec {
    fn default() -> Self {
        Self {
            noise_rel: 0.003,
            hole_fraction: 0.2,
        }
    }
}

/// GT-perturbed stand-in for externally computed MVS depth maps. MVS depth is
/// metric, so no affine corruption is applied; invalid pixels are <= 0.
pub fn simulate_mvs_depth(gt: &GroundTruth, spec: &MvsSpec, seed: u64) -> Vec<ScalarMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gt.depth
        .iter()
        .map(|d_true| {
            let mut dm = ScalarMap::new(d_true.width, d_true.height);
            for v in 0..d_true.height {
                for u in 0..d_true.width {
                    if rng.gen_range(0.0..1.0) < spec.hole_fraction {
                        dm.set(u, v, -1.0);
                    } else {
                        let d = d_true.get(u, v);
                        dm.set(u, v, d * (1.0 + spec.noise_rel * sample_normal(&mut rng)));
                    }
                }
            }
            dm
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_scene, SceneSpec};

    #[test]
    fn zero_corruption_is_exact_affine() {
        let spec = SceneSpec::boxes();
        let (bundle, gt) = generate_synthetic_scene(&spec, 11).unwrap();
        let cue = CueSpec {
            scale_range: (0.5, 2.0),
            shift_frac: 0.2,
            warp_amplitude: 0.0,
            normal_noise_deg: 0.0,
        };
        let (md, mn, recs) = simulate_monocular_cues(&gt, bundle.scene_width(), &cue, 99);
        for view in 0..bundle.num_views() {
            let r = &recs[view];
            for v in 0..gt.depth[view].height {
                for u in 0..gt.depth[view].width {
                    let expect = r.scale * gt.depth[view].get(u, v) + r.shift;
                    assert!((md[view].get(u, v) - expect).abs() < 1e-12);
                    assert!((mn[view].get(u, v) - gt.normal[view].get(u, v)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn normal_noise_mean_angle_in_band() {
        let spec = SceneSpec::boxes();
        let (bundle, gt) = generate_synthetic_scene(&spec, 11).unwrap();
        let cue = CueSpec {
            scale_range: (1.0, 1.0),
            shift_frac: 0.0,
            warp_amplitude: 0.0,
            normal_noise_deg: 5.0,
        };
        let (_, mn, _) = simulate_monocular_cues(&gt, bundle.scene_width(), &cue, 5);
        let mut total = 0.0;
        let mut count = 0usize;
        for view in 0..bundle.num_views() {
            for v in 0..gt.normal[view].height {
                for u in 0..gt.normal[view].width {
                    let a = gt.normal[view].get(u, v);
                    let b = mn[view].get(u, v);
                    total += a.dot(&b).clamp(-1.0, 1.0).acos().to_degrees();
                    count += 1;
                }
            }
        }
        assert!(count >= 10_000);
        let mean = total / count as f64;
        assert!((4.0..=6.0).contains(&mean), "mean angular error {mean}");
    }

    #[test]
    fn mvs_depth_has_holes_and_small_noise() {
        let spec = SceneSpec::boxes();
        let (_, gt) = generate_synthetic_scene(&spec, 2).unwrap();
        let mvs = simulate_mvs_depth(
            &gt,
            &MvsSpec {
                noise_rel: 0.003,
                hole_fraction: 0.25,
            },
            7,
        );
        let mut holes = 0usize;
        let mut total = 0usize;
        for (view, dm) in mvs.iter().enumerate() {
            for (i, &d) in dm.data.iter().enumerate() {
                total += 1;
                if d <= 0.0 {
                    holes += 1;
                } else {
                    let rel = (d - gt.depth[view].data[i]).abs() / gt.depth[view].data[i];
                    assert!(rel < 0.03, "relative noise too large: {rel}");
                }
            }
        }
        let frac = holes as f64 / total as f64;
        assert!((0.2..0.3).contains(&frac), "hole fraction {frac}");
    }
}
