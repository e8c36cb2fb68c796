//! Geometry extraction and scoring: per-view expected-depth maps, multi-view
//! consistency fusion into a point cloud, precision/recall/F-score at
//! distance thresholds, and the rel / inlier-ratio depth metrics.

use crate::field::RadianceField;
use crate::geom::{nearest_pixel, pixel_to_ray, project};
use crate::math::Vec3;
use crate::render::{render_ray, StepSpec};
use crate::restriction::RestrictionGrid;
use crate::scene::{ScalarMap, SceneBundle, VectorMap};
use rayon::prelude::*;
use std::collections::HashMap;
use thiserror::Error;

/// Pixels below this accumulated opacity are invalid in depth maps.
pub const DEPTH_MAP_MIN_ALPHA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("need at least 2 views to fuse, got {0}")]
    TooFewViews(usize),
}

/// Per-view rendered geometry.
pub struct DepthMaps {
    pub depth: Vec<ScalarMap>,
    pub valid: Vec<Vec<bool>>,
    pub normal: Vec<VectorMap>,
    pub normal_valid: Vec<Vec<bool>>,
}

/// Render full-resolution expected-depth and normal maps for every view.
pub fn render_depth_maps(
    field: &RadianceField,
    bundle: &SceneBundle,
    restriction: Option<&RestrictionGrid>,
    step_divisor: f64,
    want_normals: bool,
) -> DepthMaps {
    let spec = StepSpec {
        base_step: bundle.scene_aabb.diagonal() / step_divisor,
        ..StepSpec::for_aabb(&bundle.scene_aabb)
    };
    let mut out = DepthMaps {
        depth: Vec::new(),
        valid: Vec::new(),
        normal: Vec::new(),
        normal_valid: Vec::new(),
    };
    for view in 0..bundle.num_views() {
        let camera = &bundle.cameras[view];
        let rows: Vec<Vec<(f64, bool, [f64; 3], bool)>> = (0..camera.height)
            .into_par_iter()
            .map(|v| {
                let mut row = Vec::with_capacity(camera.width);
                for u in 0..camera.width {
                    let ray =
                        pixel_to_ray(camera, &bundle.scene_aabb, u as f64, v as f64)
                            .expect("full-image ray");
                    let r = render_ray(field, &ray, restriction, &spec, want_normals);
                    row.push((
                        r.depth,
                        r.alpha >= DEPTH_MAP_MIN_ALPHA,
                        r.normal_grad,
                        r.normal_grad_valid,
                    ));
                }
                row
            })
            .collect();
        let mut depth = ScalarMap::new(camera.width, camera.height);
        let mut valid = vec![false; camera.width * camera.height];
        let mut normal = VectorMap::new(camera.width, camera.height);
        let mut normal_valid = vec![false; camera.width * camera.height];
        for v in 0..camera.height {
            for u in 0..camera.width {
                let (d, ok, n, n_ok) = rows[v][u];
                depth.set(u, v, if ok { d } else { 0.0 });
                valid[v * camera.width + u] = ok;
                normal.set(u, v, &Vec3::new(n[0], n[1], n[2]));
                normal_valid[v * camera.width + u] = n_ok;
            }
        }
        out.depth.push(depth);
        out.valid.push(valid);
        out.normal.push(normal);
        out.normal_valid.push(normal_valid);
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct FusionParams {
    /// A view supports a point when |observed - expected| <= eps_rel * observed.
    pub eps_rel: f64,
    /// Minimum number of supporting views, excluding the reference.
    pub min_support: usize,
    /// Maximum normal disagreement in degrees (<= 0 disables the check).
    pub normal_angle_deg: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            eps_rel: 0.01,
            min_support: 2,
            normal_angle_deg: 30.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FusedCloud {
    pub points: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    pub support: Vec<u32>,
}

/// Multi-view consistency fusion: each unconsumed reference pixel searches
/// the other views for agreeing depths; agreeing pixels are averaged into one
/// point and consumed so surfaces are not emitted twice.
pub fn fuse_depth_maps(
    maps: &DepthMaps,
    bundle: &SceneBundle,
    params: &FusionParams,
) -> Result<FusedCloud, EvalError> {
    let n_views = bundle.num_views();
    if n_views < 2 {
        return Err(EvalError::TooFewViews(n_views));
    }
    let cos_thresh = if params.normal_angle_deg > 0.0 {
        Some(params.normal_angle_deg.to_radians().cos())
    } else {
        None
    };
    let mut consumed: Vec<Vec<bool>> = maps
        .valid
        .iter()
        .map(|v| vec![false; v.len()])
        .collect();
    let mut cloud = FusedCloud::default();

    for ref_view in 0..n_views {
        let camera = &bundle.cameras[ref_view];
        for v in 0..camera.height {
            for u in 0..camera.width {
                let pix = v * camera.width + u;
                if !maps.valid[ref_view][pix] || consumed[ref_view][pix] {
                    continue;
                }
                let d = maps.depth[ref_view].get(u, v);
                let ray = pixel_to_ray(camera, &bundle.scene_aabb, u as f64, v as f64)
                    .expect("depth-map ray");
                let x = ray.at(d);
                let n_ref = maps.normal[ref_view].get(u, v);
                let n_ref_ok = maps.normal_valid[ref_view][pix];

                let mut member_points = vec![x];
                let mut member_colors = vec![bundle.images[ref_view].pixel(u, v)];
                let mut member_pixels: Vec<(usize, usize)> = Vec::new();
                for other in 0..n_views {
                    if other == ref_view {
                        continue;
                    }
                    let cam_o = &bundle.cameras[other];
                    let Some((uo, vo, expected)) = project(cam_o, &x).in_image(cam_o) else {
                        continue;
                    };
                    let (ui, vi) = nearest_pixel(cam_o, uo, vo);
                    let opix = vi * cam_o.width + ui;
                    if !maps.valid[other][opix] || consumed[other][opix] {
                        continue;
                    }
                    let observed = maps.depth[other].get(ui, vi);
                    if (observed - expected).abs() > params.eps_rel * observed {
                        continue;
                    }
                    if let Some(cos_min) = cos_thresh {
                        if n_ref_ok && maps.normal_valid[other][opix] {
                            let n_o = maps.normal[other].get(ui, vi);
                            if n_ref.dot(&n_o) < cos_min {
                                continue;
                            }
                        }
                    }
                    let o_ray = pixel_to_ray(cam_o, &bundle.scene_aabb, ui as f64, vi as f64)
                        .expect("support ray");
                    member_points.push(o_ray.at(observed));
                    member_colors.push(bundle.images[other].pixel(ui, vi));
                    member_pixels.push((other, opix));
                }

                if member_pixels.len() >= params.min_support {
                    let inv = 1.0 / member_points.len() as f64;
                    let mut p = Vec3::zeros();
                    for m in &member_points {
                        p += m;
                    }
                    let mut c = [0.0; 3];
                    for m in &member_colors {
                        for k in 0..3 {
                            c[k] += m[k];
                        }
                    }
                    cloud.points.push(p * inv);
                    cloud.colors.push(c.map(|x| x * inv));
                    cloud.support.push(member_pixels.len() as u32);
                    consumed[ref_view][pix] = true;
                    for (view, opix) in member_pixels {
                        consumed[view][opix] = true;
                    }
                }
            }
        }
    }
    Ok(cloud)
}

/// Uniform spatial hash answering "is any point within tau" exactly via the
/// 27-cell neighborhood (cell size = tau).
pub struct SpatialHash<'a> {
    cell: f64,
    points: &'a [Vec3],
    map: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl<'a> SpatialHash<'a> {
    pub fn build(points: &'a [Vec3], cell: f64) -> Self {
        assert!(cell > 0.0);
        let mut map: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            map.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Self { cell, points, map }
    }

    fn key(p: &Vec3, cell: f64) -> (i64, i64, i64) {
        (
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        )
    }

    pub fn any_within(&self, q: &Vec3, tau: f64) -> bool {
        debug_assert!(tau <= self.cell + 1e-12);
        let (kx, ky, kz) = Self::key(q, self.cell);
        let t2 = tau * tau;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(bucket) = self.map.get(&(kx + dx, ky + dy, kz + dz)) {
                        for &i in bucket {
                            if (self.points[i as usize] - q).norm_squared() <= t2 {
                                return true;
                            }
                        }
                    }
                }
            }
        }
        false
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TauScore {
    pub tau: f64,
    /// Percentages in [0, 100].
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct GeometryScore {
    pub per_tau: Vec<TauScore>,
    /// Mean absolute relative depth error (percent).
    pub rel: Option<f64>,
    /// Share of pixels with max(d/gt, gt/d) < 1.03 (percent).
    pub inlier_ratio: Option<f64>,
}

/// Precision / recall / F at each threshold.
pub fn score_point_clouds(
    predicted: &[Vec3],
    ground_truth: &[Vec3],
    taus: &[f64],
) -> Result<Vec<TauScore>, EvalError> {
    if predicted.is_empty() || ground_truth.is_empty() {
        return Err(EvalError::EmptyCloud);
    }
    let mut out = Vec::with_capacity(taus.len());
    for &tau in taus {
        let gt_hash = SpatialHash::build(ground_truth, tau);
        let pred_hash = SpatialHash::build(predicted, tau);
        let hits_pred = predicted
            .par_iter()
            .filter(|p| gt_hash.any_within(p, tau))
            .count();
        let hits_gt = ground_truth
            .par_iter()
            .filter(|g| pred_hash.any_within(g, tau))
            .count();
        let precision = 100.0 * hits_pred as f64 / predicted.len() as f64;
        let recall = 100.0 * hits_gt as f64 / ground_truth.len() as f64;
        let fscore = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        out.push(TauScore {
            tau,
            precision,
            recall,
            fscore,
        });
    }
    Ok(out)
}

/// rel and inlier ratio over valid predicted pixels, against exact depth.
pub fn score_depth_maps(
    predicted: &[ScalarMap],
    valid: &[Vec<bool>],
    ground_truth: &[ScalarMap],
) -> (f64, f64) {
    let mut rel_sum = 0.0;
    let mut inliers = 0usize;
    let mut count = 0usize;
    for view in 0..predicted.len() {
        let p = &predicted[view];
        let g = &ground_truth[view];
        for i in 0..p.data.len() {
            if !valid[view][i] {
                continue;
            }
            let d = p.data[i];
            let t = g.data[i];
            if t <= 0.0 || d <= 0.0 {
                continue;
            }
            rel_sum += (d - t).abs() / t;
            if (d / t).max(t / d) < 1.03 {
                inliers += 1;
            }
            count += 1;
        }
    }
    if count == 0 {
        return (f64::INFINITY, 0.0);
    }
    (
        100.0 * rel_sum / count as f64,
        100.0 * inliers as f64 / count as f64,
    )
}

/// Write a fused cloud as PLY (binary little-endian or ascii).
pub fn export_cloud(
    cloud: &FusedCloud,
    path: &std::path::Path,
    binary: bool,
) -> Result<(), crate::io::ply::PlyError> {
    let pc = crate::io::ply::PointCloud {
        points: cloud.points.clone(),
        colors: cloud.colors.clone(),
    };
    if binary {
        crate::io::ply::write_cloud_binary(path, &pc)
    } else {
        crate::io::ply::write_cloud_ascii(path, &pc)
    }
}

/// Write per-view depth maps as PFM (invalid pixels are zero).
pub fn export_depth_maps(
    maps: &DepthMaps,
    dir: &std::path::Path,
) -> Result<(), crate::io::pfm::PfmError> {
    std::fs::create_dir_all(dir)?;
    for (i, d) in maps.depth.iter().enumerate() {
        crate::io::pfm::write_scalar(&dir.join(format!("{i:04}.pfm")), d)?;
    }
    Ok(())
}

/// Write per-view normal maps as PFM.
pub fn export_normal_maps(
    maps: &DepthMaps,
    dir: &std::path::Path,
) -> Result<(), crate::io::pfm::PfmError> {
    std::fs::create_dir_all(dir)?;
    for (i, n) in maps.normal.iter().enumerate() {
        crate::io::pfm::write_vector(&dir.join(format!("{i:04}.pfm")), n)?;
    }
    Ok(())
}
