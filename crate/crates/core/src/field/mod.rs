//! The learnable scene representation: multi-resolution trilinear feature
//! grids feeding three small bias-free MLPs that output density, color, and a
//! surface normal per query. Forward and reverse passes are explicit; every
//! query can record a tape from which parameter gradients are accumulated.
//!
//! Layout of the heads (matching the widths of the reference architecture):
//!
//! ```text
//! features(32) -> d0 -> relu -> { sigma_head -> softplus -> sigma
//!                                 geo_head(15, linear) }
//! (geo, dir)   -> c0 -> relu -> c1 -> sigmoid   -> color
//! geo          -> n0 -> relu -> n1 -> normalize -> mlp normal
//! ```
//!
//! Density-gradient normals come from a central finite-difference stencil of
//! sigma, with the step tied to half the finest grid cell.

mod backward;
mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};

use crate::math::{Aabb, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Compiled capacities of the inline tape buffers. Configurations must fit.
pub const MAX_FEATURES: usize = 32;
pub const MAX_HIDDEN: usize = 16;
pub const MAX_GEO: usize = 15;

/// Degenerate-normal thresholds.
const GRAD_NORM_MIN: f64 = 1e-8;
const RAW_NORM_MIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Number of grid levels.
    pub levels: usize,
    /// Vertices per axis at level 0; level l has base << l, capped below.
    pub base_resolution: usize,
    pub max_resolution: usize,
    /// Feature channels per level.
    pub channels: usize,
    /// Density MLP hidden width.
    pub hidden: usize,
    /// Geometry feature width passed to the color and normal heads.
    pub geo_features: usize,
    pub color_hidden: usize,
    pub normal_hidden: usize,
    /// Constant offset added to the raw density output before softplus.
    pub density_bias: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            base_resolution: 16,
            max_resolution: 128,
            channels: 8,
            hidden: 16,
            geo_features: 15,
            color_hidden: 16,
            normal_hidden: 16,
            density_bias: 0.0,
        }
    }
}

impl FieldConfig {
    /// Small field for fast desk-scale training runs.
    pub fn desk() -> Self {
        Self {
            levels: 3,
            base_resolution: 16,
            max_resolution: 64,
            ..Self::default()
        }
    }

    pub fn encoding_dim(&self) -> usize {
        self.levels * self.channels
    }

    pub fn level_resolution(&self, level: usize) -> usize {
        (self.base_resolution << level).min(self.max_resolution)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let widths = [
            self.levels,
            self.base_resolution,
            self.channels,
            self.hidden,
            self.geo_features,
            self.color_hidden,
            self.normal_hidden,
        ];
        if widths.iter().any(|&w| w == 0) {
            return Err(FieldError::BadConfig("all widths must be >= 1"));
        }
        if self.base_resolution < 2 {
            return Err(FieldError::BadConfig("grid needs >= 2 vertices per axis"));
        }
        if self.max_resolution < self.base_resolution {
            return Err(FieldError::BadConfig("max_resolution < base_resolution"));
        }
        if self.encoding_dim() > MAX_FEATURES
            || self.hidden > MAX_HIDDEN
            || self.color_hidden > MAX_HIDDEN
            || self.normal_hidden > MAX_HIDDEN
            || self.geo_features > MAX_GEO
        {
            return Err(FieldError::BadConfig("config exceeds compiled capacity"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("invalid field config: {0}")]
    BadConfig(&'static str),
    #[error("query position {0:?} outside the scene AABB")]
    OutsideAabb([f64; 3]),
    #[error("finite-difference stencil at {0:?} exits the scene AABB")]
    StencilOutsideAabb([f64; 3]),
}

/// A named contiguous range of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Span {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Flat parameter and gradient storage with named spans per tensor.
#[derive(Debug, Clone)]
pub struct ParameterStore {
    pub params: Vec<f64>,
    pub grads: Vec<f64>,
    pub spans: Vec<Span>,
}

impl ParameterStore {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }

    pub fn span(&self, name: &str) -> &Span {
        self.spans
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("unknown span {name}"))
    }

    pub fn grad_slice(&self, name: &str) -> &[f64] {
        let s = self.span(name);
        &self.grads[s.offset..s.offset + s.len]
    }
}

/// One field evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FieldSample {
    pub position: Vec3,
    pub direction: Vec3,
    pub sigma: f64,
    pub color: [f64; 3],
    /// Unit MLP normal, or zeros when degenerate.
    pub normal_mlp: [f64; 3],
    pub normal_mlp_valid: bool,
    /// Unit density-gradient normal, or zeros when degenerate.
    pub normal_grad: [f64; 3],
    pub normal_grad_valid: bool,
}

/// What a query should produce and record.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleRequest {
    pub normals: bool,
    pub tape: bool,
}

/// Tape of one full query (density + color + mlp normal paths).
#[derive(Debug, Clone)]
pub struct QueryTape {
    x_norm: [f64; 3],
    dir: [f64; 3],
    enc: [f64; MAX_FEATURES],
    h0_pre: [f64; MAX_HIDDEN],
    geo: [f64; MAX_GEO],
    c_pre: [f64; MAX_HIDDEN],
    rgb_raw: [f64; 3],
    n_pre: [f64; MAX_HIDDEN],
    n_raw: [f64; 3],
    n_raw_norm: f64,
    sigma_raw: f64,
}

/// Tape of a density-only query (stencil taps).
#[derive(Debug, Clone)]
pub struct DensityTape {
    x_norm: [f64; 3],
    enc: [f64; MAX_FEATURES],
    h0_pre: [f64; MAX_HIDDEN],
    sigma_raw: f64,
}

/// Tape of a full finite-difference normal stencil (6 taps, +/- per axis).
#[derive(Debug, Clone)]
pub struct StencilTape {
    taps: [DensityTape; 6],
    /// Actual world-space denominators (x+ - x-) per axis after clamping.
    denom: [f64; 3],
    gradient: [f64; 3],
    gradient_norm: f64,
    pub valid: bool,
}

/// Adjoints flowing into one query's outputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleAdjoint {
    pub d_sigma: f64,
    pub d_color: [f64; 3],
    /// With respect to the unit MLP normal.
    pub d_normal_mlp: [f64; 3],
}

/// Deterministic sparse gradient accumulator.
///
/// Gradients of one unit of work (a patch) are collected here and drained as
/// an ordered (index, value) list; the trainer folds those lists in
/// patch-index order so training is bit-reproducible for any thread count.
pub struct GradAccum {
    values: Vec<f64>,
    stamps: Vec<u32>,
    epoch: u32,
    dirty: Vec<u32>,
}

impl GradAccum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn new(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            // Stamps start behind the epoch so the first touch of every
            // index registers as dirty.
            stamps: vec![0; len],
            epoch: 1,
            dirty: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, idx: usize, v: f64) {
        if self.stamps[idx] != self.epoch {
            self.stamps[idx] = self.epoch;
            self.values[idx] = 0.0;
            self.dirty.push(idx as u32);
        }
        self.values[idx] += v;
    }

    /// Extract the accumulated entries in first-touch order and reset.
    pub fn drain(&mut self) -> Vec<(u32, f64)> {
        let out = self
            .dirty
            .iter()
            .map(|&i| (i, self.values[i as usize]))
            .collect();
        self.dirty.clear();
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamps.fill(u32::MAX);
        }
        out
    }

    /// Apply accumulated entries straight into a gradient vector and reset.
    pub fn flush_into(&mut self, grads: &mut [f64]) {
        for &i in &self.dirty {
            grads[i as usize] += self.values[i as usize];
        }
        self.dirty.clear();
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamps.fill(u32::MAX);
        }
    }
}

/// Indices of the MLP weight spans inside the parameter store.
#[derive(Debug, Clone)]
struct MlpLayout {
    w_d0: Span,
    w_geo: Span,
    w_sigma: Span,
    w_c0: Span,
    w_c1: Span,
    w_n0: Span,
    w_n1: Span,
}

pub struct RadianceField {
    pub config: FieldConfig,
    pub aabb: Aabb,
    pub store: ParameterStore,
    level_res: Vec<usize>,
    level_offset: Vec<usize>,
    mlp: MlpLayout,
}

impl RadianceField {
    pub fn new(config: FieldConfig, aabb: Aabb) -> Result<Self, FieldError> {
        config.validate()?;
        let mut spans = Vec::new();
        let mut level_res = Vec::new();
        let mut level_offset = Vec::new();
        let mut offset = 0usize;
        for l in 0..config.levels {
            let r = config.level_resolution(l);
            let len = r * r * r * config.channels;
            level_res.push(r);
            level_offset.push(offset);
            spans.push(Span {
                name: format!("grid{l}"),
                offset,
                len,
            });
            offset += len;
        }
        let enc = config.encoding_dim();
        let mut mat = |name: &str, rows: usize, cols: usize| {
            let s = Span {
                name: name.to_string(),
                offset,
                len: rows * cols,
            };
            offset += rows * cols;
            spans.push(s.clone());
            s
        };
        let mlp = MlpLayout {
            w_d0: mat("w_d0", config.hidden, enc),
            w_geo: mat("w_geo", config.geo_features, config.hidden),
            w_sigma: mat("w_sigma", 1, config.hidden),
            w_c0: mat("w_c0", config.color_hidden, config.geo_features + 3),
            w_c1: mat("w_c1", 3, config.color_hidden),
            w_n0: mat("w_n0", config.normal_hidden, config.geo_features),
            w_n1: mat("w_n1", 3, config.normal_hidden),
        };
        Ok(Self {
            config,
            aabb,
            store: ParameterStore {
                params: vec![0.0; offset],
                grads: vec![0.0; offset],
                spans,
            },
            level_res,
            level_offset,
            mlp,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.len()
    }

    /// Kaiming-style init for the MLPs, small uniform features for the grids.
    pub fn init_random(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..self.config.levels {
            let span = self.store.span(&format!("grid{l}")).clone();
            for p in &mut self.store.params[span.offset..span.offset + span.len] {
                *p = rng.gen_range(-0.05..0.05);
            }
        }
        let enc = self.config.encoding_dim();
        let fans = [
            ("w_d0", enc),
            ("w_geo", self.config.hidden),
            ("w_sigma", self.config.hidden),
            ("w_c0", self.config.geo_features + 3),
            ("w_c1", self.config.color_hidden),
            ("w_n0", self.config.geo_features),
            ("w_n1", self.config.normal_hidden),
        ];
        for (name, fan_in) in fans {
            let bound = (6.0 / fan_in as f64).sqrt();
            let span = self.store.span(name).clone();
            for p in &mut self.store.params[span.offset..span.offset + span.len] {
                *p = rng.gen_range(-bound..bound);
            }
        }
    }

    fn normalize_position(&self, x: &Vec3) -> Result<[f64; 3], FieldError> {
        let tol = 1e-9 * self.aabb.longest_edge();
        for a in 0..3 {
            if x[a] < self.aabb.min[a] - tol || x[a] > self.aabb.max[a] + tol {
                return Err(FieldError::OutsideAabb([x[0], x[1], x[2]]));
            }
        }
        let xn = self.aabb.normalize(&self.aabb.clamp(x));
        Ok([xn[0], xn[1], xn[2]])
    }

    /// Evaluate the field at (x, v). Fails when x is outside the scene AABB;
    /// the density-gradient normal is filled only when requested and uses the
    /// clamped stencil (taps never leave the AABB).
    pub fn query(
        &self,
        x: &Vec3,
        v: &Vec3,
        request: SampleRequest,
    ) -> Result<(FieldSample, Option<QueryTape>, Option<StencilTape>), FieldError> {
        let x_norm = self.normalize_position(x)?;
        let (sample_core, tape) = self.query_core(&x_norm, x, v, request.tape);
        let mut sample = sample_core;
        let mut stencil = None;
        if request.normals {
            if request.tape {
                let st = self.stencil(x);
                if st.valid {
                    let g = st.gradient;
                    sample.normal_grad = [
                        -g[0] / st.gradient_norm,
                        -g[1] / st.gradient_norm,
                        -g[2] / st.gradient_norm,
                    ];
                    sample.normal_grad_valid = true;
                }
                stencil = Some(st);
            } else if let Some(n) = self.gradient_normal_light(x) {
                sample.normal_grad = n;
                sample.normal_grad_valid = true;
            }
        }
        Ok((sample, tape, stencil))
    }

    /// Density-gradient normal as a standalone operation; `eps` defaults to
    /// half the finest grid cell. Errors when the +/- eps stencil would exit
    /// the AABB (rendering uses the clamped variant internally). `None` means
    /// the gradient is degenerate.
    pub fn density_gradient_normal(
        &self,
        x: &Vec3,
        eps: Option<[f64; 3]>,
    ) -> Result<Option<Vec3>, FieldError> {
        let eps = eps.unwrap_or_else(|| self.stencil_eps());
        for a in 0..3 {
            if x[a] - eps[a] < self.aabb.min[a] || x[a] + eps[a] > self.aabb.max[a] {
                return Err(FieldError::StencilOutsideAabb([x[0], x[1], x[2]]));
            }
        }
        self.normalize_position(x)?;
        let mut gradient = [0.0f64; 3];
        for a in 0..3 {
            let mut xp = *x;
            let mut xm = *x;
            xp[a] += eps[a];
            xm[a] -= eps[a];
            let sp = self.density(&xp)?;
            let sm = self.density(&xm)?;
            gradient[a] = (sp - sm) / (2.0 * eps[a]);
        }
        let norm =
            (gradient[0] * gradient[0] + gradient[1] * gradient[1] + gradient[2] * gradient[2])
                .sqrt();
        if norm >= GRAD_NORM_MIN {
            Ok(Some(Vec3::new(
                -gradient[0] / norm,
                -gradient[1] / norm,
                -gradient[2] / norm,
            )))
        } else {
            Ok(None)
        }
    }

    /// Half the finest grid cell, per axis, in world units.
    pub fn stencil_eps(&self) -> [f64; 3] {
        let r = *self.level_res.last().expect("at least one level") as f64;
        let e = self.aabb.extent();
        [
            0.5 * e[0] / (r - 1.0),
            0.5 * e[1] / (r - 1.0),
            0.5 * e[2] / (r - 1.0),
        ]
    }

    /// Density-only evaluation (used by stencils and tests).
    pub fn density(&self, x: &Vec3) -> Result<f64, FieldError> {
        let x_norm = self.normalize_position(x)?;
        Ok(self.density_core(&x_norm, false).0)
    }
}
