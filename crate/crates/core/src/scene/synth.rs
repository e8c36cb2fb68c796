//! Synthetic scene generation: exact ray casting against analytic primitives
//! with Lambertian shading and procedural textures.
//!
//! Scenes are enclosed (a room shell or a backing plane) so every pixel ray
//! hits geometry and ground-truth depth is finite everywhere. The scene AABB
//! is padded slightly beyond the geometry and always contains the cameras.

use super::{Camera, GroundTruth, RgbImage, ScalarMap, SceneBundle, SceneError, VectorMap};
use crate::math::{stream_key, Aabb, Vec3};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RAY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScenePreset {
    /// Room shell with textured objects on the floor, ring of inward cameras.
    Box,
    /// Single backing plane at unit distance, small cluster of cameras.
    Plane,
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub preset: ScenePreset,
    /// Number of objects placed inside the room (Box preset only).
    pub primitives: usize,
    /// Procedural textures when true, flat unit albedo otherwise.
    pub textured: bool,
    pub width: usize,
    pub height: usize,
    pub views: usize,
    pub cue: super::CueSpec,
    pub sfm_count: usize,
    pub sfm_noise_frac: f64,
    pub sfm_outlier_fraction: f64,
}

impl SceneSpec {
    pub fn boxes() -> Self {
        Self {
            preset: ScenePreset::Box,
            primitives: 4,
            textured: true,
            width: 96,
            height: 64,
            views: 12,
            cue: super::CueSpec::default(),
            sfm_count: 400,
            sfm_noise_frac: 0.002,
            sfm_outlier_fraction: 0.1,
        }
    }

    pub fn plane() -> Self {
        Self {
            preset: ScenePreset::Plane,
            primitives: 1,
            textured: true,
            width: 96,
            height: 64,
            views: 2,
            cue: super::CueSpec::default(),
            sfm_count: 120,
            sfm_noise_frac: 0.0,
            sfm_outlier_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Infinite plane through `point` with unit `normal`.
    Plane { point: Vec3, normal: Vec3 },
    /// Solid axis-aligned block seen from outside.
    Block { min: Vec3, max: Vec3 },
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned room shell whose faces are seen from inside.
    RoomShell { min: Vec3, max: Vec3 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    Solid([f64; 3]),
    Checker {
        scale: f64,
        a: [f64; 3],
        b: [f64; 3],
    },
    /// Smooth per-channel sinusoid over world position.
    Sinusoid {
        base: [f64; 3],
        amp: [f64; 3],
        freq: Vec3,
        phase: [f64; 3],
    },
}

impl Texture {
    pub fn albedo(&self, p: &Vec3) -> [f64; 3] {
        match self {
            Texture::Solid(c) => *c,
            Texture::Checker { scale, a, b } => {
                let parity = (0..3)
                    .map(|k| (p[k] / scale).floor() as i64)
                    .sum::<i64>()
                    .rem_euclid(2);
                if parity == 0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Sinusoid {
                base,
                amp,
                freq,
                phase,
            } => {
                let mut c = [0.0; 3];
                for k in 0..3 {
                    let s = (freq[0] * p[0] + freq[1] * p[1] + freq[2] * p[2]
                        + phase[k])
                        .sin();
                    c[k] = (base[k] + amp[k] * s).clamp(0.0, 1.0);
                }
                c
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub texture: Texture,
}

/// First-hit record from exact ray casting.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub position: Vec3,
    /// Unit normal oriented toward the ray origin.
    pub normal: Vec3,
    pub primitive: usize,
}

fn intersect(shape: &Shape, o: &Vec3, v: &Vec3) -> Option<(f64, Vec3)> {
    match shape {
        Shape::Plane { point, normal } => {
            let denom = v.dot(normal);
            if denom.abs() < 1e-12 {
                return None;
            }
            let t = (point - o).dot(normal) / denom;
            if t <= RAY_EPS {
                return None;
            }
            let n = if denom < 0.0 { *normal } else { -*normal };
            Some((t, n))
        }
        Shape::Block { min, max } => {
            let (t0, t1, axis0, _) = slab(o, v, min, max)?;
            if t0 <= RAY_EPS || t0 > t1 {
                return None;
            }
            let mut n = Vec3::zeros();
            n[axis0] = -v[axis0].signum();
            Some((t0, n))
        }
        Shape::Sphere { center, radius } => {
            let oc = o - center;
            let b = oc.dot(v);
            let c = oc.dot(&oc) - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t = if -b - sq > RAY_EPS {
                -b - sq
            } else if -b + sq > RAY_EPS {
                -b + sq
            } else {
                return None;
            };
            let p = o + t * v;
            Some((t, (p - center) / *radius))
        }
        Shape::RoomShell { min, max } => {
            let (t0, t1, _, axis1) = slab(o, v, min, max)?;
            // Only the interior faces are visible; require the ray to start
            // inside the shell.
            if t0 > RAY_EPS || t1 <= RAY_EPS {
                return None;
            }
            let mut n = Vec3::zeros();
            n[axis1] = -v[axis1].signum();
            Some((t1, n))
        }
    }
}

/// Slab test returning (t_entry, t_exit, entry_axis, exit_axis).
fn slab(o: &Vec3, v: &Vec3, min: &Vec3, max: &Vec3) -> Option<(f64, f64, usize, usize)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut axis0 = 0;
    let mut axis1 = 0;
    for a in 0..3 {
        if v[a].abs() < 1e-300 {
            if o[a] < min[a] || o[a] > max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / v[a];
        let mut ta = (min[a] - o[a]) * inv;
        let mut tb = (max[a] - o[a]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        if ta > t0 {
            t0 = ta;
            axis0 = a;
        }
        if tb < t1 {
            t1 = tb;
            axis1 = a;
        }
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1, axis0, axis1))
}

/// Closest hit over all primitives.
pub fn cast_ray(primitives: &[Primitive], o: &Vec3, v: &Vec3) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, prim) in primitives.iter().enumerate() {
        if let Some((t, n)) = intersect(&prim.shape, o, v) {
            if best.as_ref().map_or(true, |h| t < h.t) {
                best = Some(Hit {
                    t,
                    position: o + t * v,
                    normal: n,
                    primitive: i,
                });
            }
        }
    }
    best
}

const LIGHT_DIR: [f64; 3] = [0.25, 0.15, 0.92];
const AMBIENT: f64 = 0.4;
const DIFFUSE: f64 = 0.6;

pub fn shade(primitives: &[Primitive], hit: &Hit) -> [f64; 3] {
    let light = Vec3::new(LIGHT_DIR[0], LIGHT_DIR[1], LIGHT_DIR[2]).normalize();
    let albedo = primitives[hit.primitive].texture.albedo(&hit.position);
    let lambert = AMBIENT + DIFFUSE * hit.normal.dot(&light).max(0.0);
    [
        (albedo[0] * lambert).clamp(0.0, 1.0),
        (albedo[1] * lambert).clamp(0.0, 1.0),
        (albedo[2] * lambert).clamp(0.0, 1.0),
    ]
}

/// Camera-to-world rotation looking from `eye` toward `target` with the
/// project's x-right / y-down / z-forward convention (world z is up).
pub fn look_at_rotation(eye: &Vec3, target: &Vec3) -> Matrix3<f64> {
    let f = (target - eye).normalize();
    let up_hint = if f[2].abs() > 0.9 {
        Vec3::new(0.0, 1.0, 0.0)
    } else {
        Vec3::new(0.0, 0.0, 1.0)
    };
    let x = f.cross(&up_hint).normalize();
    let y = f.cross(&x).normalize();
    Matrix3::from_columns(&[x, y, f])
}

fn box_room() -> (Vec3, Vec3) {
    (Vec3::new(-1.6, -1.2, 0.0), Vec3::new(1.6, 1.2, 2.0))
}

fn build_primitives(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Primitive> {
    let mut prims = Vec::new();
    match spec.preset {
        ScenePreset::Plane => {
            let texture = if spec.textured {
                Texture::Sinusoid {
                    base: [0.55, 0.5, 0.45],
                    amp: [0.3, 0.25, 0.35],
                    freq: Vec3::new(9.0, 0.0, 7.0),
                    phase: [0.0, 1.3, 2.1],
                }
            } else {
                Texture::Solid([1.0, 1.0, 1.0])
            };
            prims.push(Primitive {
                shape: Shape::Plane {
                    point: Vec3::new(0.0, 1.0, 0.0),
                    normal: Vec3::new(0.0, 1.0, 0.0),
                },
                texture,
            });
        }
        ScenePreset::Box => {
            let (rmin, rmax) = box_room();
            // The shell is deliberately texture-poor: a weak large-scale shade
            // ramp, no high-frequency texture. Multi-view photometric cues are
            // ambiguous there, which is the regime where monocular guidance
            // and virtual-view consistency matter.
            let shell_texture = if spec.textured {
                Texture::Sinusoid {
                    base: [0.58, 0.56, 0.6],
                    amp: [0.05, 0.04, 0.05],
                    freq: Vec3::new(0.9, 0.7, 0.5),
                    phase: [0.4, 2.0, 3.4],
                }
            } else {
                Texture::Solid([1.0, 1.0, 1.0])
            };
            prims.push(Primitive {
                shape: Shape::RoomShell {
                    min: rmin,
                    max: rmax,
                },
                texture: shell_texture,
            });
            // Checkerboard floor just above the shell bottom gives strong
            // texture for photometric losses.
            if spec.textured {
                prims.push(Primitive {
                    shape: Shape::Plane {
                        point: Vec3::new(0.0, 0.0, 0.002),
                        normal: Vec3::new(0.0, 0.0, 1.0),
                    },
                    texture: Texture::Checker {
                        scale: 0.35,
                        a: [0.75, 0.72, 0.65],
                        b: [0.3, 0.32, 0.38],
                    },
                });
            }
            for i in 0..spec.primitives {
                let angle = std::f64::consts::TAU * (i as f64 + rng.gen_range(-0.2..0.2))
                    / spec.primitives.max(1) as f64;
                let radius = rng.gen_range(0.35..0.6);
                let cx = radius * angle.cos();
                let cy = radius * angle.sin() * 0.75;
                let texture = if !spec.textured {
                    Texture::Solid([1.0, 1.0, 1.0])
                } else if i % 3 == 0 {
                    Texture::Checker {
                        scale: rng.gen_range(0.08..0.15),
                        a: [0.85, 0.4, 0.3],
                        b: [0.95, 0.9, 0.75],
                    }
                } else {
                    Texture::Sinusoid {
                        base: [
                            rng.gen_range(0.35..0.65),
                            rng.gen_range(0.35..0.65),
                            rng.gen_range(0.35..0.65),
                        ],
                        amp: [0.3, 0.3, 0.3],
                        freq: Vec3::new(
                            rng.gen_range(6.0..14.0),
                            rng.gen_range(6.0..14.0),
                            rng.gen_range(6.0..14.0),
                        ),
                        phase: [
                            rng.gen_range(0.0..6.28),
                            rng.gen_range(0.0..6.28),
                            rng.gen_range(0.0..6.28),
                        ],
                    }
                };
                if i % 2 == 0 {
                    let hx = rng.gen_range(0.14..0.24);
                    let hy = rng.gen_range(0.14..0.24);
                    let hz = rng.gen_range(0.18..0.42);
                    prims.push(Primitive {
                        shape: Shape::Block {
                            min: Vec3::new(cx - hx, cy - hy, 0.0),
                            max: Vec3::new(cx + hx, cy + hy, 2.0 * hz),
                        },
                        texture,
                    });
                } else {
                    let r = rng.gen_range(0.13..0.22);
                    prims.push(Primitive {
                        shape: Shape::Sphere {
                            center: Vec3::new(cx, cy, r),
                            radius: r,
                        },
                        texture,
                    });
                }
            }
        }
    }
    prims
}

fn build_cameras(spec: &SceneSpec) -> (Vec<Camera>, Aabb) {
    let fx = 70.0;
    let fy = 70.0;
    let cx = spec.width as f64 / 2.0;
    let cy = spec.height as f64 / 2.0;
    let mut cameras = Vec::with_capacity(spec.views);
    let aabb = match spec.preset {
        ScenePreset::Plane => {
            let target = Vec3::new(0.0, 1.0, 0.0);
            for i in 0..spec.views {
                let a = std::f64::consts::TAU * i as f64 / spec.views as f64;
                let eye = Vec3::new(0.08 * a.cos(), 0.0, 0.08 * a.sin());
                cameras.push(Camera {
                    fx,
                    fy,
                    cx,
                    cy,
                    width: spec.width,
                    height: spec.height,
                    rotation: look_at_rotation(&eye, &target),
                    translation: eye,
                });
            }
            Aabb::new([-1.0, -0.25, -1.0], [1.0, 1.25, 1.0])
        }
        ScenePreset::Box => {
            let target = Vec3::new(0.0, 0.0, 0.3);
            for i in 0..spec.views {
                let a = std::f64::consts::TAU * i as f64 / spec.views as f64;
                let eye = Vec3::new(1.05 * a.cos(), 0.78 * a.sin(), 1.4);
                cameras.push(Camera {
                    fx,
                    fy,
                    cx,
                    cy,
                    width: spec.width,
                    height: spec.height,
                    rotation: look_at_rotation(&eye, &target),
                    translation: eye,
                });
            }
            let (rmin, rmax) = box_room();
            let pad = 0.05 * (rmax - rmin).amax();
            Aabb::new(
                [rmin[0] - pad, rmin[1] - pad, rmin[2] - pad],
                [rmax[0] + pad, rmax[1] + pad, rmax[2] + pad],
            )
        }
    };
    (cameras, aabb)
}

/// Generate a full synthetic bundle (images, cues, SfM points) plus exact
/// ground truth. Deterministic for a fixed (spec, seed).
pub fn generate_synthetic_scene(
    spec: &SceneSpec,
    seed: u64,
) -> Result<(SceneBundle, GroundTruth), SceneError> {
    if spec.primitives == 0 || spec.views == 0 {
        return Err(SceneError::EmptySpec);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_key(seed, 0x5ce9e, 0, 0));
    let primitives = build_primitives(spec, &mut rng);
    let (cameras, aabb) = build_cameras(spec);

    let mut images = Vec::with_capacity(spec.views);
    let mut depth = Vec::with_capacity(spec.views);
    let mut normal = Vec::with_capacity(spec.views);
    let mut hit_ids = Vec::with_capacity(spec.views);
    let mut surface_points = Vec::new();
    for cam in &cameras {
        let mut img = RgbImage::new(spec.width, spec.height);
        let mut d = ScalarMap::new(spec.width, spec.height);
        let mut n = VectorMap::new(spec.width, spec.height);
        let mut ids = vec![usize::MAX; spec.width * spec.height];
        for v in 0..spec.height {
            for u in 0..spec.width {
                let dir = cam.pixel_direction(u as f64, v as f64);
                let hit = cast_ray(&primitives, &cam.translation, &dir)
                    .unwrap_or_else(|| panic!("open scene: ray ({u},{v}) escaped"));
                // Quantize to 8-bit levels like a real capture; PNG round-trips
                // are then exact.
                let c = shade(&primitives, &hit);
                img.set_pixel(u, v, c.map(|x| (x * 255.0).round() / 255.0));
                d.set(u, v, hit.t);
                n.set(u, v, &hit.normal);
                ids[v * spec.width + u] = hit.primitive;
                surface_points.push(hit.position);
            }
        }
        images.push(img);
        depth.push(d);
        normal.push(n);
        hit_ids.push(ids);
    }

    let gt = GroundTruth {
        depth,
        normal,
        surface_points,
        hit_ids,
        primitives,
    };

    let (mono_depth, mono_normal, _records) = super::simulate_monocular_cues(
        &gt,
        aabb.longest_edge(),
        &spec.cue,
        stream_key(seed, 0xc0e5, 0, 0),
    );
    let sfm = super::simulate_sfm_points(
        &gt,
        &cameras,
        &aabb,
        spec.sfm_count,
        spec.sfm_noise_frac * aabb.longest_edge(),
        spec.sfm_outlier_fraction,
        stream_key(seed, 0x5f3a, 0, 0),
    );

    let bundle = SceneBundle {
        images,
        cameras,
        mono_depth,
        mono_normal,
        sfm_points: sfm.points,
        scene_aabb: aabb,
    };
    bundle.validate()?;
    Ok((bundle, gt))
}
