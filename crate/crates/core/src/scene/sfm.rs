//! Sparse SfM point simulation: ground-truth surface samples with isotropic
//! Gaussian noise, plus uniform outliers inside the scene AABB.

use super::{Camera, GroundTruth, SfmPoint};
use crate::geom::project;
use crate::math::{sample_normal, Aabb, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SfmSimResult {
    /// Inliers first, then exactly `num_outliers` outliers.
    pub points: Vec<SfmPoint>,
    pub num_outliers: usize,
    /// Pre-noise surface anchors of the inliers, for test oracles.
    pub anchors: Vec<Vec3>,
    /// Index of each anchor in `gt.surface_points`, for test oracles.
    pub anchor_indices: Vec<usize>,
}

/// Simulate an SfM sparse cloud. Observing views are the views into which the
/// (noisy) point projects with positive depth.
pub fn simulate_sfm_points(
    gt: &GroundTruth,
    cameras: &[Camera],
    aabb: &Aabb,
    count: usize,
    noise_sigma: f64,
    outlier_fraction: f64,
    seed: u64,
) -> SfmSimResult {
    assert!(count >= 10, "sfm simulation needs count >= 10");
    assert!(
        (0.0..=0.5).contains(&outlier_fraction),
        "outlier fraction must be in [0, 0.5]"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_outliers = (outlier_fraction * count as f64).round() as usize;
    let num_inliers = count - num_outliers;

    let mut points = Vec::with_capacity(count);
    let mut anchors = Vec::with_capacity(num_inliers);
    let mut anchor_indices = Vec::with_capacity(num_inliers);
    for _ in 0..num_inliers {
        let idx = rng.gen_range(0..gt.surface_points.len());
        let anchor = gt.surface_points[idx];
        let noisy = if noise_sigma > 0.0 {
            anchor
                + Vec3::new(
                    noise_sigma * sample_normal(&mut rng),
                    noise_sigma * sample_normal(&mut rng),
                    noise_sigma * sample_normal(&mut rng),
                )
        } else {
            anchor
        };
        let position = aabb.clamp(&noisy);
        points.push(SfmPoint {
            views: observing_views(cameras, &position),
            position,
        });
        anchors.push(anchor);
        anchor_indices.push(idx);
    }
    for _ in 0..num_outliers {
        let position = Vec3::new(
            rng.gen_range(aabb.min[0]..aabb.max[0]),
            rng.gen_range(aabb.min[1]..aabb.max[1]),
            rng.gen_range(aabb.min[2]..aabb.max[2]),
        );
        points.push(SfmPoint {
            views: observing_views(cameras, &position),
            position,
        });
    }
    SfmSimResult {
        points,
        num_outliers,
        anchors,
        anchor_indices,
    }
}

fn observing_views(cameras: &[Camera], p: &Vec3) -> Vec<u32> {
    cameras
        .iter()
        .enumerate()
        .filter(|(_, cam)| project(cam, p).in_image(cam).is_some())
        .map(|(i, _)| i as u32)
        .collect()
}
