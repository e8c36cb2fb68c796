//! Rays, pixel patches, and projection/unprojection shared by the renderer,
//! the losses, and virtual-view sampling.

use crate::math::{Aabb, Vec3};
use crate::scene::{Camera, SceneBundle};
use rand::Rng;
use thiserror::Error;

/// A world-space ray clipped to the scene AABB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + t * self.dir
    }
}

/// Result of projecting a world point into a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// Pixel coordinates (continuous, pixel centers at half-integers) and
    /// Euclidean distance from the camera center.
    InFront { u: f64, v: f64, depth: f64 },
    BehindCamera,
}

impl Projection {
    /// Accepts positions whose nearest pixel center is inside the image, so
    /// border pixel centers survive reprojection roundoff.
    pub fn in_image(&self, camera: &Camera) -> Option<(f64, f64, f64)> {
        match *self {
            Projection::InFront { u, v, depth }
                if u > -0.5
                    && u < camera.width as f64 - 0.5
                    && v > -0.5
                    && v < camera.height as f64 - 0.5 =>
            {
                Some((u, v, depth))
            }
            _ => None,
        }
    }
}

/// Round continuous pixel coordinates to the nearest valid pixel.
pub fn nearest_pixel(camera: &Camera, u: f64, v: f64) -> (usize, usize) {
    (
        (u.round().max(0.0) as usize).min(camera.width - 1),
        (v.round().max(0.0) as usize).min(camera.height - 1),
    )
}

/// A k x k block of pixels of one view, with the per-pixel rays.
#[derive(Debug, Clone)]
pub struct PixelPatch {
    pub view: usize,
    pub u0: usize,
    pub v0: usize,
    pub side: usize,
    /// Row-major over the patch; all rays share the camera center as origin.
    pub rays: Vec<Ray>,
}

impl PixelPatch {
    /// Pixel coordinates of patch entry i (row-major).
    pub fn pixel(&self, i: usize) -> (usize, usize) {
        (self.u0 + i % self.side, self.v0 + i / self.side)
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("pixel ({u:.2},{v:.2}) outside image {width}x{height}")]
    PixelOutsideImage {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },
    #[error("ray from pixel ({u:.2},{v:.2}) misses the scene AABB")]
    RayMissesScene { u: f64, v: f64 },
    #[error("patch side {side} exceeds image {width}x{height}")]
    PatchTooLarge {
        side: usize,
        width: usize,
        height: usize,
    },
}

/// Build the world-space ray through pixel center (u, v), clipped to the
/// scene AABB.
pub fn pixel_to_ray(camera: &Camera, aabb: &Aabb, u: f64, v: f64) -> Result<Ray, GeomError> {
    if u < 0.0 || u >= camera.width as f64 || v < 0.0 || v >= camera.height as f64 {
        return Err(GeomError::PixelOutsideImage {
            u,
            v,
            width: camera.width,
            height: camera.height,
        });
    }
    let origin = camera.center();
    let dir = camera.pixel_direction(u, v);
    let (t_near, t_far) = aabb
        .clip_ray(&origin, &dir)
        .ok_or(GeomError::RayMissesScene { u, v })?;
    Ok(Ray {
        origin,
        dir,
        t_near,
        t_far,
    })
}

/// Project a world point; depth is Euclidean distance to the camera center.
pub fn project(camera: &Camera, x: &Vec3) -> Projection {
    let p_cam = camera.rotation.transpose() * (x - camera.translation);
    if p_cam[2] <= 0.0 {
        return Projection::BehindCamera;
    }
    Projection::InFront {
        u: camera.fx * p_cam[0] / p_cam[2] + camera.cx - 0.5,
        v: camera.fy * p_cam[1] / p_cam[2] + camera.cy - 0.5,
        depth: (x - camera.translation).norm(),
    }
}

/// Sample `count` patches of side `side` from view `view`, uniform over valid
/// top-left positions. View selection is the caller's: training iterates
/// views round-robin, one view per step.
pub fn sample_patches<R: Rng>(
    bundle: &SceneBundle,
    view: usize,
    side: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<PixelPatch>, GeomError> {
    let camera = &bundle.cameras[view];
    if side > camera.width || side > camera.height {
        return Err(GeomError::PatchTooLarge {
            side,
            width: camera.width,
            height: camera.height,
        });
    }
    let max_u0 = camera.width - side;
    let max_v0 = camera.height - side;
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let u0 = rng.gen_range(0..=max_u0);
        let v0 = rng.gen_range(0..=max_v0);
        patches.push(build_patch(camera, &bundle.scene_aabb, view, u0, v0, side)?);
    }
    Ok(patches)
}

/// Construct the patch at a fixed top-left position.
pub fn build_patch(
    camera: &Camera,
    aabb: &Aabb,
    view: usize,
    u0: usize,
    v0: usize,
    side: usize,
) -> Result<PixelPatch, GeomError> {
    let mut rays = Vec::with_capacity(side * side);
    for dv in 0..side {
        for du in 0..side {
            rays.push(pixel_to_ray(
                camera,
                aabb,
                (u0 + du) as f64,
                (v0 + dv) as f64,
            )?);
        }
    }
    Ok(PixelPatch {
        view,
        u0,
        v0,
        side,
        rays,
    })
}
