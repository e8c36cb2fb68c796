//! Scene data model: posed images, monocular cue maps, sparse points, and
//! the synthetic generators that stand in for external networks and datasets.
//!
//! Conventions fixed here and used everywhere else:
//! - camera-to-world poses, pinhole model, x-right / y-down / z-forward;
//! - pixel (u, v) maps to camera direction ((u+0.5-cx)/fx, (v+0.5-cy)/fy, 1);
//! - "depth" always means Euclidean distance along the ray, never z-depth.

mod cues;
mod io;
mod sfm;
mod synth;

pub use cues::{simulate_monocular_cues, simulate_mvs_depth, CueRecord, CueSpec, MvsSpec};
pub use io::{load_bundle, load_ground_truth, save_bundle, save_ground_truth, LoadedGroundTruth};
pub use sfm::{simulate_sfm_points, SfmSimResult};
pub use synth::{
    cast_ray, generate_synthetic_scene, look_at_rotation, shade, Hit, Primitive, ScenePreset,
    SceneSpec, Shape, Texture,
};

use crate::math::{Aabb, Vec3};
use nalgebra::Matrix3;
use thiserror::Error;

/// Pinhole camera with a camera-to-world rigid pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-world rotation (columns are the camera axes in world frame).
    pub rotation: Matrix3<f64>,
    /// Camera center in world frame.
    pub translation: Vec3,
}

impl Camera {
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// World-frame unit direction through the center of pixel (u, v).
    pub fn pixel_direction(&self, u: f64, v: f64) -> Vec3 {
        let d_cam = Vec3::new(
            (u + 0.5 - self.cx) / self.fx,
            (v + 0.5 - self.cy) / self.fy,
            1.0,
        );
        (self.rotation * d_cam).normalize()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SceneError::InvalidIntrinsics {
                fx: self.fx,
                fy: self.fy,
            });
        }
        let rtr = self.rotation.transpose() * self.rotation;
        let ortho_err = (rtr - Matrix3::identity()).norm();
        let det = self.rotation.determinant();
        if ortho_err > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(SceneError::InvalidRotation { ortho_err, det });
        }
        Ok(())
    }
}

/// Per-view raster of RGB values in [0,1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// height * width * 3 floats, row-major, channel-interleaved.
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> [f64; 3] {
        let i = (v * self.width + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, u: usize, v: usize, rgb: [f64; 3]) {
        let i = (v * self.width + u) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Per-view scalar map (depth or any single-channel raster), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, x: f64) {
        self.data[v * self.width + u] = x;
    }
}

/// Per-view 3-vector map (normals), row-major, world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl VectorMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Vec3 {
        let i = (v * self.width + u) * 3;
        Vec3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, n: &Vec3) {
        let i = (v * self.width + u) * 3;
        self.data[i] = n[0];
        self.data[i + 1] = n[1];
        self.data[i + 2] = n[2];
    }
}

/// Sparse SfM point with the indices of the views observing it.
#[derive(Debug, Clone, PartialEq)]
pub struct SfmPoint {
    pub position: Vec3,
    pub views: Vec<u32>,
}

/// A posed multi-view capture with monocular cues and sparse geometry.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub images: Vec<RgbImage>,
    pub cameras: Vec<Camera>,
    /// Monocular depth, valid only up to a per-view (and locally varying)
    /// affine ambiguity.
    pub mono_depth: Vec<ScalarMap>,
    /// Monocular unit normals in world frame.
    pub mono_normal: Vec<VectorMap>,
    pub sfm_points: Vec<SfmPoint>,
    pub scene_aabb: Aabb,
}

impl SceneBundle {
    pub fn scene_width(&self) -> f64 {
        self.scene_aabb.longest_edge()
    }

    pub fn num_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.cameras.len();
        if n < 2 {
            return Err(SceneError::TooFewViews { got: n });
        }
        for (name, len) in [
            ("images", self.images.len()),
            ("mono_depth", self.mono_depth.len()),
            ("mono_normal", self.mono_normal.len()),
        ] {
            if len != n {
                return Err(SceneError::ListLengthMismatch {
                    field: name,
                    got: len,
                    expected: n,
                });
            }
        }
        for (view, cam) in self.cameras.iter().enumerate() {
            cam.validate()?;
            let (w, h) = (cam.width, cam.height);
            let img = &self.images[view];
            let md = &self.mono_depth[view];
            let mn = &self.mono_normal[view];
            if (img.width, img.height) != (w, h)
                || (md.width, md.height) != (w, h)
                || (mn.width, mn.height) != (w, h)
            {
                return Err(SceneError::DimensionMismatch { view });
            }
            for v in 0..h {
                for u in 0..w {
                    let norm = mn.get(u, v).norm();
                    if (norm - 1.0).abs() > 1e-4 {
                        return Err(SceneError::NonUnitNormal { view, u, v, norm });
                    }
                }
            }
        }
        if !(self.scene_width() > 0.0) {
            return Err(SceneError::DegenerateAabb);
        }
        for (i, p) in self.sfm_points.iter().enumerate() {
            if !self.scene_aabb.contains(&p.position) {
                return Err(SceneError::PointOutsideAabb { index: i });
            }
        }
        Ok(())
    }
}

/// Exact geometry for synthetic scenes; stands in for laser ground truth.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Per-view Euclidean ray depth, exact from the analytic scene.
    pub depth: Vec<ScalarMap>,
    /// Per-view world-frame surface normals at the first hit.
    pub normal: Vec<VectorMap>,
    /// Surface samples (one per pixel per view, deduplicated by construction
    /// order) for recall scoring.
    pub surface_points: Vec<Vec3>,
    /// Per-view ids of the first-hit primitive (usize::MAX for miss); used by
    /// occlusion-mask oracles.
    pub hit_ids: Vec<Vec<usize>>,
    /// The analytic scene itself, for exact oracles.
    pub primitives: Vec<synth::Primitive>,
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene needs at least 2 views, got {got}")]
    TooFewViews { got: usize },
    #[error("per-view list {field} has length {got}, expected {expected}")]
    ListLengthMismatch {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("view {view}: image/cue dimensions disagree with the camera")]
    DimensionMismatch { view: usize },
    #[error("view {view}: mono normal at ({u},{v}) has norm {norm}")]
    NonUnitNormal {
        view: usize,
        u: usize,
        v: usize,
        norm: f64,
    },
    #[error("camera has non-positive focal length fx={fx} fy={fy}")]
    InvalidIntrinsics { fx: f64, fy: f64 },
    #[error("camera rotation is not a proper rotation (orthogonality error {ortho_err:.2e}, det {det:.6})")]
    InvalidRotation { ortho_err: f64, det: f64 },
    #[error("scene AABB is degenerate")]
    DegenerateAabb,
    #[error("sfm point {index} lies outside the scene AABB")]
    PointOutsideAabb { index: usize },
    #[error("scene spec must name at least one primitive and one view")]
    EmptySpec,
    #[error("missing file for view {view}: {path}")]
    MissingFile { view: usize, path: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
}
