//! Differentiable ray marching: stratified samples at fixed spacing, skipping
//! pruned voxels, alpha-composited into color, expected depth, accumulated
//! opacity, and two weight-summed renormalized normals. Taped renders support
//! an exact reverse pass back to the field parameters.

use crate::field::{
    FieldSample, GradAccum, QueryTape, RadianceField, SampleAdjoint, SampleRequest, StencilTape,
};
use crate::geom::{PixelPatch, Ray};
use crate::math::{hash_unit_f64, stream_key, Aabb, Vec3};
use crate::restriction::RestrictionGrid;

/// Expected-depth opacity floor.
pub const DEPTH_EPS: f64 = 1e-4;
/// Below this accumulated opacity, depth and normals are degenerate.
pub const MIN_VALID_ALPHA: f64 = 1e-3;
/// Optical depth per step is clamped here; exp(-80) cannot underflow.
const MAX_OPTICAL_DEPTH: f64 = 80.0;

#[derive(Debug, Clone, Copy)]
pub struct StepSpec {
    /// Sample spacing in world units.
    pub base_step: f64,
    /// Stratified jitter of sample positions inside each step.
    pub jitter: bool,
    /// Stream key deriving the per-sample jitter (counter-based; results are
    /// independent of thread scheduling).
    pub jitter_key: u64,
    /// Early ray termination when transmittance falls below this; 0 disables.
    pub min_transmittance: f64,
    pub background: [f64; 3],
}

impl StepSpec {
    /// Spec default: AABB diagonal / 512, no jitter, no early termination.
    pub fn for_aabb(aabb: &Aabb) -> Self {
        Self {
            base_step: aabb.diagonal() / 512.0,
            jitter: false,
            jitter_key: 0,
            min_transmittance: 0.0,
            background: [0.5, 0.5, 0.5],
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.base_step = step;
        self
    }

    pub fn with_jitter(mut self, key: u64) -> Self {
        self.jitter = true;
        self.jitter_key = key;
        self
    }
}

/// Anything the renderer can march through. Analytic fields implement this
/// for oracle tests; the radiance field attaches tapes when asked.
pub trait FieldSource: Sync {
    fn sample(&self, x: &Vec3, v: &Vec3, request: SampleRequest) -> SourceSample;
}

pub struct SourceSample {
    pub sample: FieldSample,
    pub query_tape: Option<Box<QueryTape>>,
    pub stencil_tape: Option<Box<StencilTape>>,
}

impl FieldSource for RadianceField {
    fn sample(&self, x: &Vec3, v: &Vec3, request: SampleRequest) -> SourceSample {
        // Marching positions live inside the AABB by construction.
        let (sample, q, st) = self
            .query(x, v, request)
            .expect("ray sample left the scene AABB");
        SourceSample {
            sample,
            query_tape: q.map(Box::new),
            stencil_tape: st.map(Box::new),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RenderResult {
    pub color: [f64; 3],
    /// Expected ray depth, normalized by max(alpha, DEPTH_EPS).
    pub depth: f64,
    /// Accumulated opacity in [0, 1].
    pub alpha: f64,
    pub depth_valid: bool,
    pub normal_grad: [f64; 3],
    pub normal_grad_valid: bool,
    pub normal_mlp: [f64; 3],
    pub normal_mlp_valid: bool,
}

impl RenderResult {
    fn background(spec: &StepSpec) -> Self {
        Self {
            color: spec.background,
            depth: 0.0,
            alpha: 0.0,
            depth_valid: false,
            normal_grad: [0.0; 3],
            normal_grad_valid: false,
            normal_mlp: [0.0; 3],
            normal_mlp_valid: false,
        }
    }
}

/// One marched sample retained for the reverse pass.
pub struct SampleRecord {
    pub t: f64,
    /// Transmittance entering this sample.
    pub trans: f64,
    /// exp(-tau); survival of this sample.
    pub e: f64,
    pub weight: f64,
    pub tau_clamped: bool,
    pub sigma: f64,
    pub color: [f64; 3],
    pub normal_grad: [f64; 3],
    pub normal_grad_valid: bool,
    pub normal_mlp: [f64; 3],
    pub normal_mlp_valid: bool,
    pub query_tape: Option<Box<QueryTape>>,
    pub stencil_tape: Option<Box<StencilTape>>,
}

/// Forward tape of one ray.
pub struct RayTape {
    pub records: Vec<SampleRecord>,
    pub delta: f64,
    pub background: [f64; 3],
    /// Forward reductions needed by the reverse pass.
    pub alpha: f64,
    pub sum_wt: f64,
    pub nsum_grad: [f64; 3],
    pub nsum_mlp: [f64; 3],
}

impl RayTape {
    pub fn weights(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.weight).collect()
    }
}

/// Adjoints on one ray's rendered outputs. Normal adjoints are w.r.t. the
/// unit (renormalized) rendered normals.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayAdjoints {
    pub d_color: [f64; 3],
    pub d_depth: f64,
    pub d_alpha: f64,
    pub d_normal_grad: [f64; 3],
    pub d_normal_mlp: [f64; 3],
}

impl RayAdjoints {
    pub fn is_zero(&self) -> bool {
        self.d_color == [0.0; 3]
            && self.d_depth == 0.0
            && self.d_alpha == 0.0
            && self.d_normal_grad == [0.0; 3]
            && self.d_normal_mlp == [0.0; 3]
    }
}

fn finish(
    spec: &StepSpec,
    alpha: f64,
    color_acc: [f64; 3],
    sum_wt: f64,
    nsum_grad: [f64; 3],
    nsum_mlp: [f64; 3],
) -> RenderResult {
    let color = [
        color_acc[0] + (1.0 - alpha) * spec.background[0],
        color_acc[1] + (1.0 - alpha) * spec.background[1],
        color_acc[2] + (1.0 - alpha) * spec.background[2],
    ];
    let depth = sum_wt / alpha.max(DEPTH_EPS);
    let norm_of = |n: [f64; 3]| (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    let unitize = |n: [f64; 3]| {
        let len = norm_of(n);
        if alpha >= MIN_VALID_ALPHA && len >= 1e-12 {
            ([n[0] / len, n[1] / len, n[2] / len], true)
        } else {
            ([0.0; 3], false)
        }
    };
    let (normal_grad, normal_grad_valid) = unitize(nsum_grad);
    let (normal_mlp, normal_mlp_valid) = unitize(nsum_mlp);
    RenderResult {
        color,
        depth,
        alpha,
        depth_valid: alpha >= MIN_VALID_ALPHA,
        normal_grad,
        normal_grad_valid,
        normal_mlp,
        normal_mlp_valid,
    }
}

fn march(
    source: &dyn FieldSource,
    ray: &Ray,
    restriction: Option<&RestrictionGrid>,
    spec: &StepSpec,
    request: SampleRequest,
    mut tape: Option<&mut RayTape>,
) -> RenderResult {
    let delta = spec.base_step;
    let span = ray.t_far - ray.t_near;
    if span <= 0.0 || delta <= 0.0 {
        return RenderResult::background(spec);
    }
    let n_steps = (span / delta).ceil() as usize;

    let mut trans = 1.0f64;
    let mut alpha = 0.0f64;
    let mut color_acc = [0.0f64; 3];
    let mut sum_wt = 0.0f64;
    let mut nsum_grad = [0.0f64; 3];
    let mut nsum_mlp = [0.0f64; 3];

    for i in 0..n_steps {
        if spec.min_transmittance > 0.0 && trans < spec.min_transmittance {
            break;
        }
        let xi = if spec.jitter {
            hash_unit_f64(spec.jitter_key, i as u64)
        } else {
            0.5
        };
        let t = ray.t_near + (i as f64 + xi) * delta;
        if t >= ray.t_far {
            continue;
        }
        let x = ray.at(t);
        if let Some(grid) = restriction {
            if !grid.is_permitted(&x) {
                continue;
            }
        }
        let out = source.sample(&x, &ray.dir, request);
        let s = &out.sample;
        let tau_raw = s.sigma * delta;
        let tau_clamped = tau_raw > MAX_OPTICAL_DEPTH;
        let tau = tau_raw.min(MAX_OPTICAL_DEPTH);
        let e = (-tau).exp();
        let a = 1.0 - e;
        let w = trans * a;

        alpha += w;
        sum_wt += w * t;
        for c in 0..3 {
            color_acc[c] += w * s.color[c];
        }
        if s.normal_grad_valid {
            for c in 0..3 {
                nsum_grad[c] += w * s.normal_grad[c];
            }
        }
        if s.normal_mlp_valid {
            for c in 0..3 {
                nsum_mlp[c] += w * s.normal_mlp[c];
            }
        }
        if let Some(tape) = tape.as_deref_mut() {
            tape.records.push(SampleRecord {
                t,
                trans,
                e,
                weight: w,
                tau_clamped,
                sigma: s.sigma,
                color: s.color,
                normal_grad: s.normal_grad,
                normal_grad_valid: s.normal_grad_valid,
                normal_mlp: s.normal_mlp,
                normal_mlp_valid: s.normal_mlp_valid,
                query_tape: out.query_tape,
                stencil_tape: out.stencil_tape,
            });
        }
        trans *= e;
    }

    let result = finish(spec, alpha, color_acc, sum_wt, nsum_grad, nsum_mlp);
    if let Some(tape) = tape {
        tape.alpha = alpha;
        tape.sum_wt = sum_wt;
        tape.nsum_grad = nsum_grad;
        tape.nsum_mlp = nsum_mlp;
    }
    result
}

/// Render one ray without retaining a tape.
pub fn render_ray(
    source: &dyn FieldSource,
    ray: &Ray,
    restriction: Option<&RestrictionGrid>,
    spec: &StepSpec,
    want_normals: bool,
) -> RenderResult {
    march(
        source,
        ray,
        restriction,
        spec,
        SampleRequest {
            normals: want_normals,
            tape: false,
        },
        None,
    )
}

/// Render one ray and keep the forward tape for `render_backward`.
pub fn render_ray_taped(
    source: &dyn FieldSource,
    ray: &Ray,
    restriction: Option<&RestrictionGrid>,
    spec: &StepSpec,
    want_normals: bool,
) -> (RenderResult, RayTape) {
    let mut tape = RayTape {
        records: Vec::new(),
        delta: spec.base_step,
        background: spec.background,
        alpha: 0.0,
        sum_wt: 0.0,
        nsum_grad: [0.0; 3],
        nsum_mlp: [0.0; 3],
    };
    let result = march(
        source,
        ray,
        restriction,
        spec,
        SampleRequest {
            normals: want_normals,
            tape: true,
        },
        Some(&mut tape),
    );
    (result, tape)
}

/// A rendered patch: per-pixel results in patch layout.
pub struct PatchRender {
    pub results: Vec<RenderResult>,
    pub tapes: Vec<RayTape>,
}

/// Render every pixel of a patch. Per-ray jitter streams derive from the
/// spec's key and the ray index, so a patch renders identically no matter
/// how work is scheduled.
pub fn render_patch(
    source: &dyn FieldSource,
    patch: &PixelPatch,
    restriction: Option<&RestrictionGrid>,
    spec: &StepSpec,
    want_normals: bool,
    taped: bool,
) -> PatchRender {
    let mut results = Vec::with_capacity(patch.len());
    let mut tapes = Vec::with_capacity(if taped { patch.len() } else { 0 });
    for (i, ray) in patch.rays.iter().enumerate() {
        let ray_spec = StepSpec {
            jitter_key: stream_key(spec.jitter_key, 0x7a7, i as u64, 0),
            ..*spec
        };
        if taped {
            let (r, t) = render_ray_taped(source, ray, restriction, &ray_spec, want_normals);
            results.push(r);
            tapes.push(t);
        } else {
            results.push(render_ray(source, ray, restriction, &ray_spec, want_normals));
        }
    }
    PatchRender { results, tapes }
}

/// Exact reverse pass of one ray render. The tape is consumed; gradients for
/// every touched parameter accumulate into `acc`.
pub fn render_backward(
    field: &RadianceField,
    tape: RayTape,
    adj: &RayAdjoints,
    acc: &mut GradAccum,
) {
    if tape.records.is_empty() || adj.is_zero() {
        return;
    }
    let alpha = tape.alpha;

    // Renormalization backward for both rendered normals.
    let unit_backward = |nsum: &[f64; 3], d_unit: &[f64; 3]| -> [f64; 3] {
        let len = (nsum[0] * nsum[0] + nsum[1] * nsum[1] + nsum[2] * nsum[2]).sqrt();
        if alpha < MIN_VALID_ALPHA || len < 1e-12 {
            return [0.0; 3];
        }
        let n = [nsum[0] / len, nsum[1] / len, nsum[2] / len];
        let dot = n[0] * d_unit[0] + n[1] * d_unit[1] + n[2] * d_unit[2];
        [
            (d_unit[0] - n[0] * dot) / len,
            (d_unit[1] - n[1] * dot) / len,
            (d_unit[2] - n[2] * dot) / len,
        ]
    };
    let d_nsum_grad = unit_backward(&tape.nsum_grad, &adj.d_normal_grad);
    let d_nsum_mlp = unit_backward(&tape.nsum_mlp, &adj.d_normal_mlp);

    // Depth normalization branch, differentiated as written.
    let (d_sum_wt, d_alpha_from_depth) = if alpha > DEPTH_EPS {
        (adj.d_depth / alpha, -adj.d_depth * tape.sum_wt / (alpha * alpha))
    } else {
        (adj.d_depth / DEPTH_EPS, 0.0)
    };
    let d_alpha_total = adj.d_alpha + d_alpha_from_depth
        - (adj.d_color[0] * tape.background[0]
            + adj.d_color[1] * tape.background[1]
            + adj.d_color[2] * tape.background[2]);

    // Per-sample weight adjoints.
    let n = tape.records.len();
    let mut d_w = vec![0.0f64; n];
    for (i, rec) in tape.records.iter().enumerate() {
        let mut dw = d_alpha_total + d_sum_wt * rec.t;
        for c in 0..3 {
            dw += adj.d_color[c] * rec.color[c];
        }
        if rec.normal_grad_valid {
            for c in 0..3 {
                dw += d_nsum_grad[c] * rec.normal_grad[c];
            }
        }
        if rec.normal_mlp_valid {
            for c in 0..3 {
                dw += d_nsum_mlp[c] * rec.normal_mlp[c];
            }
        }
        d_w[i] = dw;
    }

    // w_i = T_i a_i with T_{i+1} = T_i (1 - a_i): reverse scan turns the
    // coupling through transmittance into a suffix accumulator.
    let mut d_sigma = vec![0.0f64; n];
    let mut suffix = 0.0f64;
    for i in (0..n).rev() {
        let rec = &tape.records[i];
        let d_a = rec.trans * d_w[i] - suffix / rec.e;
        suffix += d_w[i] * rec.weight;
        let d_tau = d_a * rec.e;
        d_sigma[i] = if rec.tau_clamped {
            0.0
        } else {
            d_tau * tape.delta
        };
    }

    // Chain into the field, in sample order for deterministic accumulation.
    for (i, rec) in tape.records.into_iter().enumerate() {
        let sample_adj = SampleAdjoint {
            d_sigma: d_sigma[i],
            d_color: [
                rec.weight * adj.d_color[0],
                rec.weight * adj.d_color[1],
                rec.weight * adj.d_color[2],
            ],
            d_normal_mlp: if rec.normal_mlp_valid {
                [
                    rec.weight * d_nsum_mlp[0],
                    rec.weight * d_nsum_mlp[1],
                    rec.weight * d_nsum_mlp[2],
                ]
            } else {
                [0.0; 3]
            },
        };
        let tape_q = rec
            .query_tape
            .expect("render_backward needs a taped radiance-field render");
        field.backward_query(&tape_q, &sample_adj, acc);
        if rec.normal_grad_valid {
            let st = rec
                .stencil_tape
                .expect("normals were rendered without stencil tapes");
            let d_ng = [
                rec.weight * d_nsum_grad[0],
                rec.weight * d_nsum_grad[1],
                rec.weight * d_nsum_grad[2],
            ];
            field.backward_stencil(&st, &d_ng, acc);
        }
    }
}
