//! The training loop: round-robin view iteration, patch (or pixel) sampling,
//! taped rendering, loss assembly, reverse pass, Adam.
//!
//! Parallelism never changes results: each patch produces an ordered list of
//! (parameter, gradient) contributions, and the lists are folded into the
//! store in patch-index order. Sampling and jitter derive from counter-based
//! streams keyed by (seed, step, patch), not from shared rng state.

use crate::field::{FieldConfig, GradAccum, RadianceField};
use crate::geom::{build_patch, sample_patches, PixelPatch};
use crate::losses::{
    depth_losses, huber_rgb, masked_ncc, masked_ssim, mvs_depth_loss, normal_losses,
    solve_patch_alignment, AffineDepthAlignment, LossWeights, TermValues,
};
use crate::math::stream_key;
use crate::render::{render_backward, render_patch, RayAdjoints, StepSpec};
use crate::restriction::{align_all_views, build_restriction, RansacParams, RestrictionGrid};
use crate::scene::{ScalarMap, SceneBundle};
use crate::virtual_view::{correspond_and_render, sample_virtual_origin, THETA_THRESH_DEG};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Monocular supervision applies only where the render sees a surface; this
/// matches the validity threshold of the evaluation depth maps and keeps the
/// depth-normalization backward well-conditioned.
pub const MONO_SUPERVISION_MIN_ALPHA: f64 = 0.5;

/// Ablation toggles; each switches one ingredient of the method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainToggles {
    /// Patch sampling (off = independent random pixels, which also disables
    /// the gradient losses).
    pub patch: bool,
    /// Monocular depth/normal distillation.
    pub mono: bool,
    /// Virtual-view photometric consistency.
    pub virtual_views: bool,
    /// Density restriction grid.
    pub restriction: bool,
    /// Metric MVS depth supervision (needs MVS depth maps).
    pub mvs: bool,
}

impl TrainToggles {
    pub fn full() -> Self {
        Self {
            patch: true,
            mono: true,
            virtual_views: true,
            restriction: true,
            mvs: false,
        }
    }

    pub fn baseline() -> Self {
        Self {
            patch: false,
            mono: false,
            virtual_views: false,
            restriction: false,
            mvs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub patches_per_step: usize,
    pub patch_side: usize,
    pub weights: LossWeights,
    pub lr_start: f64,
    pub lr_end: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub toggles: TrainToggles,
    pub field: FieldConfig,
    /// Sample spacing = AABB diagonal / step_divisor.
    pub step_divisor: f64,
    pub jitter: bool,
    /// Early ray termination during training (0 disables).
    pub min_transmittance: f64,
    pub restriction_resolution: [usize; 3],
    pub restriction_tolerance: f64,
    pub ransac: RansacParams,
    pub theta_thresh_deg: f64,
    /// Views used for training; None = all.
    pub train_views: Option<Vec<usize>>,
    pub log_every: usize,
    /// The monocular terms ramp in linearly over this fraction of training,
    /// letting photometric carving establish geometry before distillation
    /// applies force (0 disables the ramp).
    pub mono_warmup_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            patches_per_step: 128,
            patch_side: 8,
            weights: LossWeights::default(),
            lr_start: 1e-2,
            lr_end: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-15,
            seed: 0,
            toggles: TrainToggles::full(),
            field: FieldConfig::desk(),
            step_divisor: 512.0,
            jitter: true,
            min_transmittance: 1e-4,
            restriction_resolution: [64, 64, 64],
            restriction_tolerance: 0.2,
            ransac: RansacParams::default(),
            theta_thresh_deg: THETA_THRESH_DEG,
            train_views: None,
            log_every: 50,
            mono_warmup_frac: 0.25,
        }
    }
}

impl TrainConfig {
    /// Reduced budget that converges in seconds-to-minutes on a small scene.
    pub fn desk(steps: usize, patches_per_step: usize) -> Self {
        Self {
            steps,
            patches_per_step,
            step_divisor: 128.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps == 0 {
            return Err(TrainError::BadConfig("steps must be >= 1"));
        }
        if !self.weights.validate() {
            return Err(TrainError::BadConfig("loss weights must be >= 0"));
        }
        if self.toggles.virtual_views && !self.toggles.patch {
            return Err(TrainError::BadConfig(
                "virtual-view consistency requires patch sampling",
            ));
        }
        if self.patch_side == 0 || self.patches_per_step == 0 {
            return Err(TrainError::BadConfig("empty batch"));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    BadConfig(&'static str),
    #[error("scene: {0}")]
    Scene(#[from] crate::scene::SceneError),
    #[error("field: {0}")]
    Field(#[from] crate::field::FieldError),
    #[error("geometry: {0}")]
    Geom(#[from] crate::geom::GeomError),
    #[error("restriction: {0}")]
    Restriction(#[from] crate::restriction::RestrictionError),
    #[error("mvs toggle needs per-view mvs depth maps")]
    MissingMvsDepth,
    #[error("non-finite loss at step {step}: {breakdown}")]
    NonFiniteLoss { step: usize, breakdown: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub terms: TermValues,
    pub total: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Exponential moving average of the weighted total, tracked per step.
    pub ema: Vec<f64>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            w,
            "step,rgb,depth,grad_depth,normal,grad_normal,ssim,ncc,mvs,total,lr,seconds"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.3}",
                r.step,
                r.terms.rgb,
                r.terms.depth,
                r.terms.grad_depth,
                r.terms.normal,
                r.terms.grad_normal,
                r.terms.ssim,
                r.terms.ncc,
                r.terms.mvs,
                r.total,
                r.lr,
                r.seconds
            )?;
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

fn cosine_lr(cfg: &TrainConfig, step: usize) -> f64 {
    let t = step as f64 / (cfg.steps.saturating_sub(1).max(1)) as f64;
    cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Everything one patch contributes to a step.
struct PatchOutcome {
    grads: Vec<(u32, f64)>,
    terms: TermValues,
}

thread_local! {
    // Reused across patches and steps; recreated only when the parameter
    // count changes. Contents never leak between patches (drain resets).
    static SCRATCH: std::cell::RefCell<Option<GradAccum>> =
        const { std::cell::RefCell::new(None) };
}

fn with_scratch<R>(num_params: usize, f: impl FnOnce(&mut GradAccum) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut slot = cell.borrow_mut();
        let needs_new = slot.as_ref().map_or(true, |s| s.len() != num_params);
        if needs_new {
            *slot = Some(GradAccum::new(num_params));
        }
        f(slot.as_mut().unwrap())
    })
}

/// Patch-pixel gathers from per-view maps.
fn gather_scalar(map: &ScalarMap, patch: &PixelPatch) -> Vec<f64> {
    (0..patch.len())
        .map(|i| {
            let (u, v) = patch.pixel(i);
            map.get(u, v)
        })
        .collect()
}

fn gather_rgb(img: &crate::scene::RgbImage, patch: &PixelPatch) -> Vec<[f64; 3]> {
    (0..patch.len())
        .map(|i| {
            let (u, v) = patch.pixel(i);
            img.pixel(u, v)
        })
        .collect()
}

fn gather_normals(map: &crate::scene::VectorMap, patch: &PixelPatch) -> Vec<[f64; 3]> {
    (0..patch.len())
        .map(|i| {
            let (u, v) = patch.pixel(i);
            let n = map.get(u, v);
            [n[0], n[1], n[2]]
        })
        .collect()
}

/// Render one training patch (and its virtual patch when enabled), evaluate
/// the enabled losses, and run the reverse pass into a private accumulator.
///
/// `fixed_alignment` carries the batch-level alignment in pixel mode; patch
/// mode solves its own. The returned gradient list is ordered and
/// deterministic, a pure function of (field, inputs, keys).
#[allow(clippy::too_many_arguments)]
fn process_patch(
    field: &RadianceField,
    bundle: &SceneBundle,
    mvs_depth: Option<&[ScalarMap]>,
    restriction: Option<&RestrictionGrid>,
    cfg: &TrainConfig,
    patch: &PixelPatch,
    step: usize,
    patch_idx: usize,
    fixed_alignment: Option<AffineDepthAlignment>,
    mono_ramp: f64,
    scratch: &mut GradAccum,
) -> PatchOutcome {
    let view = patch.view;
    let spec = StepSpec {
        base_step: bundle.scene_aabb.diagonal() / cfg.step_divisor,
        jitter: cfg.jitter,
        jitter_key: stream_key(cfg.seed, 0x1177, step as u64, patch_idx as u64),
        min_transmittance: cfg.min_transmittance,
        background: [0.5; 3],
    };
    let want_normals = cfg.toggles.mono;
    let mut render = render_patch(field, patch, restriction, &spec, want_normals, true);
    let n = patch.len();
    let inv_patches = 1.0 / cfg.patches_per_step as f64;

    let mut terms = TermValues::default();
    let mut adjoints = vec![RayAdjoints::default(); n];

    // RGB Huber.
    let rendered_rgb: Vec<[f64; 3]> = render.results.iter().map(|r| r.color).collect();
    let observed_rgb = gather_rgb(&bundle.images[view], patch);
    let (l_rgb, adj_rgb) = huber_rgb(&rendered_rgb, &observed_rgb);
    terms.rgb = l_rgb;
    for i in 0..n {
        for c in 0..3 {
            adjoints[i].d_color[c] += cfg.weights.rgb * inv_patches * adj_rgb[i][c];
        }
    }

    let rendered_depth: Vec<f64> = render.results.iter().map(|r| r.depth).collect();
    let surface: Vec<bool> = render
        .results
        .iter()
        .map(|r| r.alpha >= MONO_SUPERVISION_MIN_ALPHA)
        .collect();

    // Monocular distillation, gated to pixels whose ray already sees a
    // surface.
    if cfg.toggles.mono {
        let mono = gather_scalar(&bundle.mono_depth[view], patch);
        let alignment = fixed_alignment
            .unwrap_or_else(|| solve_patch_alignment(&mono, &rendered_depth, &surface));
        if alignment.valid {
            let target: Vec<f64> = mono.iter().map(|&m| alignment.apply(m)).collect();
            let r = depth_losses(&target, &rendered_depth, &surface, patch.side);
            terms.depth = r.l_depth;
            for i in 0..n {
                adjoints[i].d_depth +=
                    mono_ramp * cfg.weights.depth * inv_patches * r.adj_depth[i];
            }
            if cfg.toggles.patch {
                terms.grad_depth = r.l_grad_depth;
                for i in 0..n {
                    adjoints[i].d_depth +=
                        mono_ramp * cfg.weights.grad_depth * inv_patches * r.adj_grad_depth[i];
                }
            }
        }

        let mono_n = gather_normals(&bundle.mono_normal[view], patch);
        let ng: Vec<[f64; 3]> = render.results.iter().map(|r| r.normal_grad).collect();
        let nm: Vec<[f64; 3]> = render.results.iter().map(|r| r.normal_mlp).collect();
        let n_valid: Vec<bool> = render
            .results
            .iter()
            .enumerate()
            .map(|(i, r)| r.normal_grad_valid && r.normal_mlp_valid && surface[i])
            .collect();
        let r = normal_losses(&mono_n, &ng, &nm, &n_valid, patch.side);
        terms.normal = r.l_normal;
        for i in 0..n {
            for c in 0..3 {
                adjoints[i].d_normal_grad[c] +=
                    mono_ramp * cfg.weights.normal * inv_patches * r.adj_normal_grad[i][c];
                adjoints[i].d_normal_mlp[c] +=
                    mono_ramp * cfg.weights.normal * inv_patches * r.adj_normal_mlp[i][c];
            }
        }
        if cfg.toggles.patch {
            terms.grad_normal = r.l_grad_normal;
            for i in 0..n {
                for c in 0..3 {
                    adjoints[i].d_normal_grad[c] += mono_ramp
                        * cfg.weights.grad_normal
                        * inv_patches
                        * r.adj_grad_normal_grad[i][c];
                }
            }
        }
    }

    // Metric MVS supervision.
    if cfg.toggles.mvs {
        let maps = mvs_depth.expect("validated: mvs toggle needs maps");
        let mvs = gather_scalar(&maps[view], patch);
        let (l, adj) = mvs_depth_loss(&mvs, &rendered_depth, &surface);
        terms.mvs = l;
        for i in 0..n {
            adjoints[i].d_depth += cfg.weights.mvs * inv_patches * adj[i];
        }
    }

    // Virtual-view photometric consistency. Training depths enter detached:
    // only the virtual renders receive gradients.
    let mut virtual_work = None;
    if cfg.toggles.virtual_views {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(
            cfg.seed,
            0x71e0,
            step as u64,
            patch_idx as u64,
        ));
        let origin = sample_virtual_origin(
            &bundle.cameras[view].center(),
            &bundle.scene_aabb,
            bundle.scene_width(),
            &mut rng,
        );
        let virt = correspond_and_render(
            field,
            restriction,
            patch,
            &render.results,
            &origin,
            &spec,
            &bundle.scene_aabb,
            cfg.theta_thresh_deg.to_radians(),
            true,
        );
        let virt_rgb: Vec<[f64; 3]> = virt.results.iter().map(|r| r.color).collect();
        let (l_ssim, adj_ssim) = masked_ssim(&virt_rgb, &observed_rgb, &virt.mask);
        let (l_ncc, adj_ncc) = masked_ncc(&virt_rgb, &observed_rgb, &virt.mask);
        terms.ssim = l_ssim;
        terms.ncc = l_ncc;
        let mut virt_adjoints = vec![RayAdjoints::default(); n];
        for i in 0..n {
            for c in 0..3 {
                virt_adjoints[i].d_color[c] = inv_patches
                    * (cfg.weights.ssim * adj_ssim[i][c] + cfg.weights.ncc * adj_ncc[i][c]);
            }
        }
        virtual_work = Some((virt, virt_adjoints));
    }

    // Reverse passes, training rays then virtual rays, in pixel order.
    for (i, tape) in render.tapes.drain(..).enumerate() {
        render_backward(field, tape, &adjoints[i], scratch);
    }
    if let Some((virt, virt_adjoints)) = virtual_work {
        for (i, tape) in virt.tapes.into_iter().enumerate() {
            if let Some(tape) = tape {
                render_backward(field, tape, &virt_adjoints[i], scratch);
            }
        }
    }

    PatchOutcome {
        grads: scratch.drain(),
        terms,
    }
}

/// Sample the step's work units: k-by-k patches, or independent pixels as
/// 1x1 patches when patch sampling is off.
fn sample_step_patches(
    bundle: &SceneBundle,
    cfg: &TrainConfig,
    views: &[usize],
    step: usize,
) -> Result<Vec<PixelPatch>, TrainError> {
    let view = views[step % views.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(stream_key(cfg.seed, 0x9a7c, step as u64, 0));
    if cfg.toggles.patch {
        Ok(sample_patches(
            bundle,
            view,
            cfg.patch_side,
            cfg.patches_per_step,
            &mut rng,
        )?)
    } else {
        let camera = &bundle.cameras[view];
        let count = cfg.patches_per_step * cfg.patch_side * cfg.patch_side;
        let mut patches = Vec::with_capacity(count);
        for _ in 0..count {
            let u0 = rng.gen_range(0..camera.width);
            let v0 = rng.gen_range(0..camera.height);
            patches.push(build_patch(camera, &bundle.scene_aabb, view, u0, v0, 1)?);
        }
        Ok(patches)
    }
}

pub struct TrainOutput {
    pub field: RadianceField,
    pub log: TrainLog,
    pub restriction: Option<RestrictionGrid>,
}

/// Train a field on the bundle. Deterministic for a fixed seed, independent
/// of the rayon thread count.
pub fn train(
    bundle: &SceneBundle,
    mvs_depth: Option<&[ScalarMap]>,
    cfg: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    bundle.validate()?;
    if cfg.toggles.mvs && mvs_depth.is_none() {
        return Err(TrainError::MissingMvsDepth);
    }

    let views: Vec<usize> = cfg
        .train_views
        .clone()
        .unwrap_or_else(|| (0..bundle.num_views()).collect());
    assert!(!views.is_empty());

    let restriction = if cfg.toggles.restriction {
        let alignments = align_all_views(bundle, &cfg.ransac, stream_key(cfg.seed, 0xda7a, 0, 0));
        Some(build_restriction(
            bundle,
            &alignments,
            cfg.restriction_resolution,
            cfg.restriction_tolerance,
        )?)
    } else {
        None
    };

    let mut field = RadianceField::new(cfg.field.clone(), bundle.scene_aabb)?;
    field.init_random(stream_key(cfg.seed, 0xf1e1d, 0, 0));
    let mut adam = Adam::new(field.num_params(), cfg);
    let mut log = TrainLog::default();
    let mut ema = f64::NAN;
    let started = std::time::Instant::now();

    // In pixel mode with monocular supervision the alignment is solved per
    // batch, which needs all rendered depths before any loss adjoint exists.
    let needs_batch_alignment = cfg.toggles.mono && !cfg.toggles.patch;

    const CHUNK: usize = 4;
    for step in 0..cfg.steps {
        let patches = sample_step_patches(bundle, cfg, &views, step)?;
        let mono_ramp = if cfg.mono_warmup_frac > 0.0 {
            let horizon = (cfg.mono_warmup_frac * cfg.steps as f64).max(1.0);
            (step as f64 / horizon).min(1.0)
        } else {
            1.0
        };

        let fixed_alignment = if needs_batch_alignment {
            // Cheap untaped pre-pass for depths only.
            let spec_of = |patch_idx: usize| StepSpec {
                base_step: bundle.scene_aabb.diagonal() / cfg.step_divisor,
                jitter: cfg.jitter,
                jitter_key: stream_key(cfg.seed, 0x1177, step as u64, patch_idx as u64),
                min_transmittance: cfg.min_transmittance,
                background: [0.5; 3],
            };
            let results: Vec<(f64, bool, f64)> = patches
                .par_iter()
                .enumerate()
                .map(|(idx, patch)| {
                    let r = render_patch(&field, patch, restriction.as_ref(), &spec_of(idx), false, false);
                    let (u, v) = patch.pixel(0);
                    (
                        r.results[0].depth,
                        r.results[0].alpha >= MONO_SUPERVISION_MIN_ALPHA,
                        bundle.mono_depth[patch.view].get(u, v),
                    )
                })
                .collect();
            let rendered: Vec<f64> = results.iter().map(|r| r.0).collect();
            let valid: Vec<bool> = results.iter().map(|r| r.1).collect();
            let mono: Vec<f64> = results.iter().map(|r| r.2).collect();
            Some(solve_patch_alignment(&mono, &rendered, &valid))
        } else {
            None
        };

        field.store.zero_grads();
        let mut step_terms = TermValues::default();
        let mut chunk_out: Vec<PatchOutcome> = Vec::with_capacity(CHUNK);
        for (chunk_idx, chunk) in patches.chunks(CHUNK).enumerate() {
            chunk
                .par_iter()
                .enumerate()
                .map(|(k, patch)| {
                    let patch_idx = chunk_idx * CHUNK + k;
                    with_scratch(field.num_params(), |scratch| {
                        process_patch(
                            &field,
                            bundle,
                            mvs_depth,
                            restriction.as_ref(),
                            cfg,
                            patch,
                            step,
                            patch_idx,
                            fixed_alignment,
                            mono_ramp,
                            scratch,
                        )
                    })
                })
                .collect_into_vec(&mut chunk_out);
            for out in &chunk_out {
                for &(idx, g) in &out.grads {
                    field.store.grads[idx as usize] += g;
                }
                step_terms.add(&out.terms);
            }
        }
        step_terms.scale(1.0 / patches.len() as f64);

        let total = step_terms.weighted_total(&cfg.weights);
        if !total.is_finite() || !step_terms.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step,
                breakdown: format!("{step_terms:?}"),
            });
        }
        ema = if ema.is_nan() {
            total
        } else {
            0.98 * ema + 0.02 * total
        };
        log.ema.push(ema);

        let lr = cosine_lr(cfg, step);
        adam.step(&mut field.store.params, &field.store.grads, lr);

        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            log.rows.push(LogRow {
                step,
                terms: step_terms,
                total,
                lr,
                seconds: started.elapsed().as_secs_f64(),
            });
        }
    }

    Ok(TrainOutput {
        field,
        log,
        restriction,
    })
}

/// Hold out every tenth view (90/10 split).
pub fn holdout_split(num_views: usize) -> (Vec<usize>, Vec<usize>) {
    let test: Vec<usize> = (0..num_views).filter(|i| i % 10 == 9).collect();
    let train: Vec<usize> = (0..num_views).filter(|i| i % 10 != 9).collect();
    (train, test)
}

/// PSNR (capped at 99 dB) and tile-SSIM over held-out views.
pub fn evaluate_split(
    field: &RadianceField,
    bundle: &SceneBundle,
    restriction: Option<&RestrictionGrid>,
    heldout: &[usize],
    step_divisor: f64,
) -> (f64, f64) {
    let spec = StepSpec {
        base_step: bundle.scene_aabb.diagonal() / step_divisor,
        ..StepSpec::for_aabb(&bundle.scene_aabb)
    };
    let mut mse_sum = 0.0;
    let mut mse_count = 0usize;
    let mut ssim_sum = 0.0;
    let mut ssim_count = 0usize;
    for &view in heldout {
        let camera = &bundle.cameras[view];
        let rows: Vec<Vec<[f64; 3]>> = (0..camera.height)
            .into_par_iter()
            .map(|v| {
                let mut row = Vec::with_capacity(camera.width);
                for u in 0..camera.width {
                    let ray = crate::geom::pixel_to_ray(
                        camera,
                        &bundle.scene_aabb,
                        u as f64,
                        v as f64,
                    )
                    .expect("full-image ray");
                    row.push(crate::render::render_ray(field, &ray, restriction, &spec, false).color);
                }
                row
            })
            .collect();
        for v in 0..camera.height {
            for u in 0..camera.width {
                let got = rows[v][u];
                let want = bundle.images[view].pixel(u, v);
                for c in 0..3 {
                    let d = got[c] - want[c];
                    mse_sum += d * d;
                }
                mse_count += 3;
            }
        }
        // One-window SSIM per 8x8 tile, averaged.
        let tile = 8;
        for tv in 0..(camera.height / tile) {
            for tu in 0..(camera.width / tile) {
                let mut rendered = Vec::with_capacity(tile * tile);
                let mut observed = Vec::with_capacity(tile * tile);
                for dv in 0..tile {
                    for du in 0..tile {
                        let (u, v) = (tu * tile + du, tv * tile + dv);
                        rendered.push(rows[v][u]);
                        observed.push(bundle.images[view].pixel(u, v));
                    }
                }
                let (loss, _) = masked_ssim(&rendered, &observed, &vec![true; tile * tile]);
                ssim_sum += 1.0 - loss;
                ssim_count += 1;
            }
        }
    }
    let mse = mse_sum / mse_count.max(1) as f64;
    let psnr = if mse <= 1e-12 {
        99.0
    } else {
        (-10.0 * mse.log10()).min(99.0)
    };
    (psnr, ssim_sum / ssim_count.max(1) as f64)
}
