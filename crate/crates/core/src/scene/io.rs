//! Scene directory layout:
//!
//! ```text
//! cameras.json            array of {fx,fy,cx,cy,width,height,R:[9],t:[3]}
//! scene.json              scene AABB
//! images/0000.png ...     8-bit RGB
//! mono_depth/0000.pfm     grayscale float32 PFM
//! mono_normal/0000.pfm    3-channel float32 PFM, world frame
//! gt_depth/0000.pfm       (synthetic scenes) exact depth
//! sfm_points.ply          ascii PLY, vertex + visibility elements
//! gt_points.ply           (synthetic scenes) surface samples
//! ```
//!
//! Indices are zero-based and zero-padded to 4 digits.

use super::{Camera, GroundTruth, RgbImage, ScalarMap, SceneBundle, SceneError};
use crate::io::{pfm, ply};
use crate::math::{Aabb, Vec3};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct SceneJson {
    aabb_min: [f64; 3],
    aabb_max: [f64; 3],
}

fn view_name(i: usize, ext: &str) -> String {
    format!("{i:04}.{ext}")
}

pub fn save_bundle(bundle: &SceneBundle, dir: &Path) -> Result<(), SceneError> {
    fs::create_dir_all(dir)?;
    for sub in ["images", "mono_depth", "mono_normal"] {
        fs::create_dir_all(dir.join(sub))?;
    }

    let cams: Vec<CameraJson> = bundle
        .cameras
        .iter()
        .map(|c| {
            let mut r = [0.0; 9];
            for row in 0..3 {
                for col in 0..3 {
                    r[row * 3 + col] = c.rotation[(row, col)];
                }
            }
            CameraJson {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                width: c.width,
                height: c.height,
                r,
                t: [c.translation[0], c.translation[1], c.translation[2]],
            }
        })
        .collect();
    fs::write(
        dir.join("cameras.json"),
        serde_json::to_string_pretty(&cams).expect("camera json"),
    )?;
    fs::write(
        dir.join("scene.json"),
        serde_json::to_string_pretty(&SceneJson {
            aabb_min: bundle.scene_aabb.min,
            aabb_max: bundle.scene_aabb.max,
        })
        .expect("scene json"),
    )?;

    for (i, img) in bundle.images.iter().enumerate() {
        write_png(&dir.join("images").join(view_name(i, "png")), img)?;
    }
    for (i, d) in bundle.mono_depth.iter().enumerate() {
        pfm::write_scalar(&dir.join("mono_depth").join(view_name(i, "pfm")), d)
            .map_err(|e| SceneError::Format(e.to_string()))?;
    }
    for (i, n) in bundle.mono_normal.iter().enumerate() {
        pfm::write_vector(&dir.join("mono_normal").join(view_name(i, "pfm")), n)
            .map_err(|e| SceneError::Format(e.to_string()))?;
    }
    ply::write_sfm_points(&dir.join("sfm_points.ply"), &bundle.sfm_points)
        .map_err(|e| SceneError::Format(e.to_string()))?;
    Ok(())
}

/// Persist the parts of ground truth that have an on-disk form.
pub fn save_ground_truth(gt: &GroundTruth, dir: &Path) -> Result<(), SceneError> {
    fs::create_dir_all(dir.join("gt_depth"))?;
    for (i, d) in gt.depth.iter().enumerate() {
        pfm::write_scalar(&dir.join("gt_depth").join(view_name(i, "pfm")), d)
            .map_err(|e| SceneError::Format(e.to_string()))?;
    }
    let cloud = ply::PointCloud {
        points: gt.surface_points.clone(),
        colors: Vec::new(),
    };
    ply::write_cloud_binary(&dir.join("gt_points.ply"), &cloud)
        .map_err(|e| SceneError::Format(e.to_string()))?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<SceneBundle, SceneError> {
    let cam_path = dir.join("cameras.json");
    let cam_text = fs::read_to_string(&cam_path).map_err(|_| SceneError::MissingFile {
        view: 0,
        path: cam_path.display().to_string(),
    })?;
    let cams: Vec<CameraJson> =
        serde_json::from_str(&cam_text).map_err(|e| SceneError::Format(e.to_string()))?;
    let scene_text =
        fs::read_to_string(dir.join("scene.json")).map_err(|_| SceneError::MissingFile {
            view: 0,
            path: dir.join("scene.json").display().to_string(),
        })?;
    let scene: SceneJson =
        serde_json::from_str(&scene_text).map_err(|e| SceneError::Format(e.to_string()))?;
    let aabb = Aabb::new(scene.aabb_min, scene.aabb_max);

    let cameras: Vec<Camera> = cams
        .into_iter()
        .map(|c| Camera {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: Matrix3::new(
                c.r[0], c.r[1], c.r[2], c.r[3], c.r[4], c.r[5], c.r[6], c.r[7], c.r[8],
            ),
            translation: Vec3::new(c.t[0], c.t[1], c.t[2]),
        })
        .collect();

    let mut images = Vec::with_capacity(cameras.len());
    let mut mono_depth = Vec::with_capacity(cameras.len());
    let mut mono_normal = Vec::with_capacity(cameras.len());
    for view in 0..cameras.len() {
        let img_path = dir.join("images").join(view_name(view, "png"));
        if !img_path.exists() {
            return Err(SceneError::MissingFile {
                view,
                path: img_path.display().to_string(),
            });
        }
        images.push(read_png(&img_path)?);

        let d_path = dir.join("mono_depth").join(view_name(view, "pfm"));
        if !d_path.exists() {
            return Err(SceneError::MissingFile {
                view,
                path: d_path.display().to_string(),
            });
        }
        mono_depth
            .push(pfm::read_scalar(&d_path).map_err(|e| SceneError::Format(e.to_string()))?);

        let n_path = dir.join("mono_normal").join(view_name(view, "pfm"));
        if !n_path.exists() {
            return Err(SceneError::MissingFile {
                view,
                path: n_path.display().to_string(),
            });
        }
        mono_normal
            .push(pfm::read_vector(&n_path).map_err(|e| SceneError::Format(e.to_string()))?);
    }

    let mut sfm_points = ply::read_sfm_points(&dir.join("sfm_points.ply"))
        .map_err(|e| SceneError::Format(e.to_string()))?;
    // Positions were stored as float32; clamp back into the box so rounding
    // at the boundary cannot break the containment invariant.
    for p in &mut sfm_points {
        p.position = aabb.clamp(&p.position);
    }

    let bundle = SceneBundle {
        images,
        cameras,
        mono_depth,
        mono_normal,
        sfm_points,
        scene_aabb: aabb,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Ground truth as reloaded from disk (analytic description is not persisted).
pub struct LoadedGroundTruth {
    pub depth: Vec<ScalarMap>,
    pub points: Vec<Vec3>,
}

pub fn load_ground_truth(dir: &Path, views: usize) -> Result<LoadedGroundTruth, SceneError> {
    let mut depth = Vec::with_capacity(views);
    for view in 0..views {
        let path = dir.join("gt_depth").join(view_name(view, "pfm"));
        if !path.exists() {
            return Err(SceneError::MissingFile {
                view,
                path: path.display().to_string(),
            });
        }
        depth.push(pfm::read_scalar(&path).map_err(|e| SceneError::Format(e.to_string()))?);
    }
    let cloud = ply::read_cloud(&dir.join("gt_points.ply"))
        .map_err(|e| SceneError::Format(e.to_string()))?;
    Ok(LoadedGroundTruth {
        depth,
        points: cloud.points,
    })
}

fn write_png(path: &Path, img: &RgbImage) -> Result<(), SceneError> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for v in 0..img.height {
        for u in 0..img.width {
            let c = img.pixel(u, v);
            buf.put_pixel(
                u as u32,
                v as u32,
                image::Rgb([
                    (c[0].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (c[1].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (c[2].clamp(0.0, 1.0) * 255.0).round() as u8,
                ]),
            );
        }
    }
    buf.save(path)
        .map_err(|e| SceneError::Format(format!("png write: {e}")))?;
    Ok(())
}

fn read_png(path: &Path) -> Result<RgbImage, SceneError> {
    let img = image::open(path)
        .map_err(|e| SceneError::Format(format!("png read: {e}")))?
        .to_rgb8();
    let mut out = RgbImage::new(img.width() as usize, img.height() as usize);
    for v in 0..out.height {
        for u in 0..out.width {
            let p = img.get_pixel(u as u32, v as u32);
            out.set_pixel(
                u,
                v,
                [
                    p[0] as f64 / 255.0,
                    p[1] as f64 / 255.0,
                    p[2] as f64 / 255.0,
                ],
            );
        }
    }
    Ok(out)
}
