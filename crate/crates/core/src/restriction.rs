//! Density restriction: per-view RANSAC alignment of monocular depth to the
//! metric SfM points, then a boolean voxel grid labeling the space within a
//! relative band of any aligned depth map. Rendering skips samples outside
//! labeled voxels, pruning empty space.

use crate::geom::{nearest_pixel, project};
use crate::losses::{solve_patch_alignment, AffineDepthAlignment};
use crate::math::{Aabb, Vec3};
use crate::scene::{Camera, ScalarMap, SceneBundle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RansacParams {
    pub iterations: usize,
    /// Inlier when |s*mono + t - metric| <= threshold_rel * metric.
    pub threshold_rel: f64,
    pub min_inliers: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 1000,
            threshold_rel: 0.05,
            min_inliers: 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum RestrictionError {
    #[error("no view produced a valid RANSAC alignment")]
    NoValidAlignments,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad restriction dump: {0}")]
    Format(String),
}

/// Robustly fit (scale, shift) mapping this view's monocular depth onto the
/// metric depths of the SfM points that project into it. Two-point minimal
/// fits, relative inlier test, least-squares refit on the best consensus.
pub fn ransac_align_view(
    mono_depth: &ScalarMap,
    camera: &Camera,
    sfm_points: &[Vec3],
    params: &RansacParams,
    seed: u64,
) -> AffineDepthAlignment {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for p in sfm_points {
        if let Some((u, v, metric)) = project(camera, p).in_image(camera) {
            let (ui, vi) = nearest_pixel(camera, u, v);
            pairs.push((mono_depth.get(ui, vi), metric));
        }
    }
    if pairs.len() < 2 {
        return AffineDepthAlignment::invalid();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count_inliers = |s: f64, t: f64| -> usize {
        pairs
            .iter()
            .filter(|(m, z)| (s * m + t - z).abs() <= params.threshold_rel * z)
            .count()
    };

    let mut best: Option<(usize, f64, f64)> = None;
    for _ in 0..params.iterations {
        let i = rng.gen_range(0..pairs.len());
        let j = rng.gen_range(0..pairs.len());
        if i == j {
            continue;
        }
        let (m1, z1) = pairs[i];
        let (m2, z2) = pairs[j];
        // Coincident monocular depths make the 2x2 system singular.
        if (m1 - m2).abs() < 1e-12 {
            continue;
        }
        let s = (z1 - z2) / (m1 - m2);
        if s <= 0.0 {
            continue;
        }
        let t = z1 - s * m1;
        let inliers = count_inliers(s, t);
        if best.map_or(true, |(bi, _, _)| inliers > bi) {
            best = Some((inliers, s, t));
        }
    }

    let Some((n_inliers, s0, t0)) = best else {
        return AffineDepthAlignment::invalid();
    };
    if n_inliers < params.min_inliers {
        return AffineDepthAlignment::invalid();
    }
    // Least-squares refit on the consensus set.
    let inlier_pairs: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|(m, z)| (s0 * m + t0 - z).abs() <= params.threshold_rel * z)
        .collect();
    let mono: Vec<f64> = inlier_pairs.iter().map(|p| p.0).collect();
    let metric: Vec<f64> = inlier_pairs.iter().map(|p| p.1).collect();
    let refit = solve_patch_alignment(&mono, &metric, &vec![true; mono.len()]);
    if refit.valid && refit.scale > 0.0 {
        refit
    } else {
        AffineDepthAlignment::invalid()
    }
}

/// Boolean voxel grid of permitted density support.
#[derive(Debug, Clone)]
pub struct RestrictionGrid {
    pub aabb: Aabb,
    pub resolution: [usize; 3],
    bits: Vec<u64>,
    /// Per-view alignments the grid was built from.
    pub alignments: Vec<AffineDepthAlignment>,
}

impl RestrictionGrid {
    /// Fully permissive grid (used when the restriction toggle is off but a
    /// grid value is still convenient).
    pub fn all_true(aabb: Aabb, resolution: [usize; 3]) -> Self {
        let n = resolution[0] * resolution[1] * resolution[2];
        Self {
            aabb,
            resolution,
            bits: vec![u64::MAX; n.div_ceil(64)],
            alignments: Vec::new(),
        }
    }

    /// Fully forbidden grid (test support).
    pub fn all_false(aabb: Aabb, resolution: [usize; 3]) -> Self {
        let n = resolution[0] * resolution[1] * resolution[2];
        Self {
            aabb,
            resolution,
            bits: vec![0; n.div_ceil(64)],
            alignments: Vec::new(),
        }
    }

    #[inline]
    fn voxel_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.resolution[1] + iy) * self.resolution[0] + ix
    }

    #[inline]
    fn get_bit(&self, idx: usize) -> bool {
        self.bits[idx / 64] >> (idx % 64) & 1 == 1
    }

    fn set_bit(&mut self, idx: usize) {
        self.bits[idx / 64] |= 1 << (idx % 64);
    }

    /// Voxel center in world units.
    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let e = self.aabb.extent();
        Vec3::new(
            self.aabb.min[0] + (ix as f64 + 0.5) * e[0] / self.resolution[0] as f64,
            self.aabb.min[1] + (iy as f64 + 0.5) * e[1] / self.resolution[1] as f64,
            self.aabb.min[2] + (iz as f64 + 0.5) * e[2] / self.resolution[2] as f64,
        )
    }

    /// O(1) lookup; anything outside the AABB is forbidden.
    #[inline]
    pub fn is_permitted(&self, x: &Vec3) -> bool {
        let e = self.aabb.extent();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if x[a] < self.aabb.min[a] || x[a] > self.aabb.max[a] {
                return false;
            }
            let f = (x[a] - self.aabb.min[a]) / e[a] * self.resolution[a] as f64;
            idx[a] = (f.floor() as usize).min(self.resolution[a] - 1);
        }
        self.get_bit(self.voxel_index(idx[0], idx[1], idx[2]))
    }

    pub fn count_true(&self) -> usize {
        let n = self.resolution[0] * self.resolution[1] * self.resolution[2];
        (0..n).filter(|&i| self.get_bit(i)).count()
    }

    pub fn num_voxels(&self) -> usize {
        self.resolution[0] * self.resolution[1] * self.resolution[2]
    }
}

/// The labeling predicate for one voxel center: does any view with a valid
/// alignment see it within `tolerance` of its aligned monocular depth?
pub fn center_is_labeled(
    center: &Vec3,
    bundle: &SceneBundle,
    alignments: &[AffineDepthAlignment],
    tolerance: f64,
) -> bool {
    for (view, alignment) in alignments.iter().enumerate() {
        if !alignment.valid {
            continue;
        }
        let camera = &bundle.cameras[view];
        if let Some((u, v, depth)) = project(camera, center).in_image(camera) {
            let (ui, vi) = nearest_pixel(camera, u, v);
            let aligned = alignment.apply(bundle.mono_depth[view].get(ui, vi));
            if (depth - aligned).abs() <= tolerance * aligned {
                return true;
            }
        }
    }
    false
}

/// Build the restriction grid by projecting every voxel center into all views
/// with valid alignments.
pub fn build_restriction(
    bundle: &SceneBundle,
    alignments: &[AffineDepthAlignment],
    resolution: [usize; 3],
    tolerance: f64,
) -> Result<RestrictionGrid, RestrictionError> {
    assert_eq!(alignments.len(), bundle.num_views());
    if !alignments.iter().any(|a| a.valid) {
        return Err(RestrictionError::NoValidAlignments);
    }
    let mut grid = RestrictionGrid {
        aabb: bundle.scene_aabb,
        resolution,
        bits: vec![0; (resolution[0] * resolution[1] * resolution[2]).div_ceil(64)],
        alignments: alignments.to_vec(),
    };
    // The predicate is pure per voxel; parallelize over z-slabs and merge.
    let slabs: Vec<Vec<usize>> = (0..resolution[2])
        .into_par_iter()
        .map(|iz| {
            let mut labeled = Vec::new();
            for iy in 0..resolution[1] {
                for ix in 0..resolution[0] {
                    let center = grid.voxel_center(ix, iy, iz);
                    if center_is_labeled(&center, bundle, alignments, tolerance) {
                        labeled.push(grid.voxel_index(ix, iy, iz));
                    }
                }
            }
            labeled
        })
        .collect();
    for slab in slabs {
        for idx in slab {
            grid.set_bit(idx);
        }
    }
    Ok(grid)
}

/// Run RANSAC for every view of the bundle.
pub fn align_all_views(
    bundle: &SceneBundle,
    params: &RansacParams,
    seed: u64,
) -> Vec<AffineDepthAlignment> {
    let points: Vec<Vec3> = bundle.sfm_points.iter().map(|p| p.position).collect();
    (0..bundle.num_views())
        .map(|view| {
            ransac_align_view(
                &bundle.mono_depth[view],
                &bundle.cameras[view],
                &points,
                params,
                crate::math::stream_key(seed, 0xa11, view as u64, 0),
            )
        })
        .collect()
}

const DUMP_MAGIC: &[u8; 4] = b"MPRG";

/// Dump: header (AABB, resolution) + bit-packed occupancy.
pub fn save_grid(grid: &RestrictionGrid, path: &Path) -> Result<(), RestrictionError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&[1u8])?;
    for a in 0..3 {
        w.write_all(&grid.aabb.min[a].to_le_bytes())?;
    }
    for a in 0..3 {
        w.write_all(&grid.aabb.max[a].to_le_bytes())?;
    }
    for a in 0..3 {
        w.write_all(&(grid.resolution[a] as u32).to_le_bytes())?;
    }
    for word in &grid.bits {
        w.write_all(&word.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_grid(path: &Path) -> Result<RestrictionGrid, RestrictionError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(RestrictionError::Format("bad magic".into()));
    }
    let mut ver = [0u8; 1];
    r.read_exact(&mut ver)?;
    if ver[0] != 1 {
        return Err(RestrictionError::Format(format!("version {}", ver[0])));
    }
    let mut f = [0u8; 8];
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for slot in &mut min {
        r.read_exact(&mut f)?;
        *slot = f64::from_le_bytes(f);
    }
    for slot in &mut max {
        r.read_exact(&mut f)?;
        *slot = f64::from_le_bytes(f);
    }
    let mut d = [0u8; 4];
    let mut resolution = [0usize; 3];
    for slot in &mut resolution {
        r.read_exact(&mut d)?;
        *slot = u32::from_le_bytes(d) as usize;
    }
    let n_words = (resolution[0] * resolution[1] * resolution[2]).div_ceil(64);
    let mut bits = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        r.read_exact(&mut f)?;
        bits.push(u64::from_le_bytes(f));
    }
    Ok(RestrictionGrid {
        aabb: Aabb::new(min, max),
        resolution,
        bits,
        alignments: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_scene, CueSpec, SceneSpec};
    use rand::Rng;

    #[test]
    fn ransac_recovers_inverse_of_exact_cues() {
        let mut spec = SceneSpec::boxes();
        spec.cue = CueSpec {
            scale_range: (0.5, 2.0),
            shift_frac: 0.2,
            warp_amplitude: 0.0,
            normal_noise_deg: 0.0,
        };
        spec.sfm_noise_frac = 0.0;
        spec.sfm_outlier_fraction = 0.0;
        let (bundle, gt) = generate_synthetic_scene(&spec, 31).unwrap();
        let (mono, _, records) = crate::scene::simulate_monocular_cues(
            &gt,
            bundle.scene_width(),
            &spec.cue,
            crate::math::stream_key(31, 0xc0e5, 0, 0),
        );
        // Exact pairs: points on this view's own pixel-center rays, so the
        // nearest-pixel monocular lookup carries no quantization error.
        let sim = crate::scene::simulate_sfm_points(
            &gt,
            &bundle.cameras,
            &bundle.scene_aabb,
            600,
            0.0,
            0.0,
            77,
        );
        let (w, h) = (bundle.cameras[0].width, bundle.cameras[0].height);
        for view in 0..bundle.num_views() {
            let own: Vec<Vec3> = sim
                .points
                .iter()
                .zip(&sim.anchor_indices)
                .filter(|(_, &idx)| idx / (w * h) == view)
                .map(|(p, _)| p.position)
                .collect();
            assert!(own.len() >= 10, "view {view} has {} anchors", own.len());
            let a = ransac_align_view(
                &mono[view],
                &bundle.cameras[view],
                &own,
                &RansacParams::default(),
                5,
            );
            assert!(a.valid, "view {view} alignment invalid");
            // mono = scale*d + shift, so the inverse is s = 1/scale,
            // t = -shift/scale.
            let expect_s = 1.0 / records[view].scale;
            let expect_t = -records[view].shift / records[view].scale;
            assert!(
                (a.scale - expect_s).abs() <= 1e-6 * expect_s.abs(),
                "view {view}: scale {} vs {expect_s}",
                a.scale
            );
            assert!(
                (a.shift - expect_t).abs() <= 1e-6 * expect_t.abs().max(1.0),
                "view {view}: shift {} vs {expect_t}",
                a.shift
            );
        }
    }

    #[test]
    fn ransac_robust_to_outliers_monte_carlo() {
        // Synthetic pair-level data with a planted transform, 30% outliers,
        // 1% relative noise; 95 of 100 seeds must recover within 2%.
        let mut ok = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s_true = rng.gen_range(0.4..2.0);
            let t_true = rng.gen_range(-0.5..0.5);
            let n = 120;
            let n_out = 36;
            let mut mono = ScalarMap::new(n, 1);
            let mut points = Vec::new();
            let camera = Camera {
                fx: 1.0,
                fy: 1.0,
                cx: n as f64 / 2.0,
                cy: 0.5,
                width: n,
                height: 1,
                rotation: nalgebra::Matrix3::identity(),
                translation: Vec3::zeros(),
            };
            for i in 0..n {
                // Place point i so it projects to pixel (i, 0).
                let u = i as f64;
                let dir = camera.pixel_direction(u, 0.0);
                let z_true = rng.gen_range(1.0..4.0);
                let point = camera.translation + dir * z_true;
                points.push(point);
                let m = (z_true - t_true) / s_true;
                if i < n_out {
                    // Outlier monocular reading.
                    mono.set(i, 0, rng.gen_range(-2.0..8.0));
                } else {
                    mono.set(i, 0, m * (1.0 + 0.01 * rng.gen_range(-1.0..1.0)));
                }
            }
            let a = ransac_align_view(
                &mono,
                &camera,
                &points,
                &RansacParams::default(),
                seed ^ 0x9e37,
            );
            if a.valid
                && (a.scale - s_true).abs() <= 0.02 * s_true
                && (a.shift - t_true).abs() <= 0.02 * s_true.max(t_true.abs()).max(1.0)
            {
                ok += 1;
            }
        }
        assert!(ok >= 95, "only {ok}/100 seeds recovered the transform");
    }

    #[test]
    fn ransac_rejects_with_too_few_points() {
        let mono = ScalarMap::new(4, 4);
        let camera = Camera {
            fx: 10.0,
            fy: 10.0,
            cx: 2.0,
            cy: 2.0,
            width: 4,
            height: 4,
            rotation: nalgebra::Matrix3::identity(),
            translation: Vec3::zeros(),
        };
        let behind = vec![Vec3::new(0.0, 0.0, -1.0); 10];
        let a = ransac_align_view(&mono, &camera, &behind, &RansacParams::default(), 1);
        assert!(!a.valid);
    }

    #[test]
    fn grid_monotone_in_tolerance_and_views() {
        let spec = SceneSpec::boxes();
        let (bundle, _) = generate_synthetic_scene(&spec, 9).unwrap();
        let alignments = align_all_views(&bundle, &RansacParams::default(), 2);
        assert!(alignments.iter().filter(|a| a.valid).count() >= 10);
        let res = [32, 32, 32];
        let tight = build_restriction(&bundle, &alignments, res, 0.1).unwrap();
        let loose = build_restriction(&bundle, &alignments, res, 0.25).unwrap();
        for iz in 0..res[2] {
            for iy in 0..res[1] {
                for ix in 0..res[0] {
                    let idx = tight.voxel_index(ix, iy, iz);
                    if tight.get_bit(idx) {
                        assert!(loose.get_bit(idx), "tolerance monotonicity violated");
                    }
                }
            }
        }
        // Fewer views label a subset.
        let mut some = alignments.clone();
        for a in some.iter_mut().skip(4) {
            a.valid = false;
        }
        let fewer = build_restriction(&bundle, &some, res, 0.2).unwrap();
        let all = build_restriction(&bundle, &alignments, res, 0.2).unwrap();
        for i in 0..fewer.num_voxels() {
            if fewer.get_bit(i) {
                assert!(all.get_bit(i), "view monotonicity violated");
            }
        }
    }

    #[test]
    fn lookup_agrees_with_predicate() {
        let spec = SceneSpec::boxes();
        let (bundle, _) = generate_synthetic_scene(&spec, 19).unwrap();
        let alignments = align_all_views(&bundle, &RansacParams::default(), 2);
        let grid = build_restriction(&bundle, &alignments, [24, 24, 24], 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..100_000 {
            let x = Vec3::new(
                rng.gen_range(grid.aabb.min[0]..grid.aabb.max[0]),
                rng.gen_range(grid.aabb.min[1]..grid.aabb.max[1]),
                rng.gen_range(grid.aabb.min[2]..grid.aabb.max[2]),
            );
            // Recompute the predicate at the containing voxel center.
            let e = grid.aabb.extent();
            let idx: Vec<usize> = (0..3)
                .map(|a| {
                    (((x[a] - grid.aabb.min[a]) / e[a] * grid.resolution[a] as f64).floor()
                        as usize)
                        .min(grid.resolution[a] - 1)
                })
                .collect();
            let center = grid.voxel_center(idx[0], idx[1], idx[2]);
            let expect = center_is_labeled(&center, &bundle, &alignments, 0.2);
            assert_eq!(grid.is_permitted(&x), expect);
        }
        assert!(!grid.is_permitted(&Vec3::new(
            grid.aabb.max[0] + 1.0,
            0.0,
            0.0
        )));
    }

    #[test]
    fn grid_dump_roundtrip() {
        let spec = SceneSpec::boxes();
        let (bundle, _) = generate_synthetic_scene(&spec, 3).unwrap();
        let alignments = align_all_views(&bundle, &RansacParams::default(), 2);
        let grid = build_restriction(&bundle, &alignments, [16, 16, 16], 0.2).unwrap();
        let dir = std::env::temp_dir().join("monopatch_grid_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("g.bin");
        save_grid(&grid, &path).unwrap();
        let back = load_grid(&path).unwrap();
        assert_eq!(back.resolution, grid.resolution);
        assert_eq!(back.bits, grid.bits);
        assert_eq!(back.aabb, grid.aabb);
    }
}
