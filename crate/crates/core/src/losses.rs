//! Training losses over patch buffers: per-pixel Huber RGB, per-patch-aligned
//! monocular depth and normal distillation with forward-difference gradient
//! terms, masked single-window SSIM and NCC for virtual-view consistency, and
//! the optional metric MVS depth L1.
//!
//! Every loss returns its value together with adjoints w.r.t. its rendered
//! inputs. Quantities that are treated as constants during optimization
//! (alignment scale/shift, occlusion masks, unprojected training depths) are
//! plain inputs here, so the adjoints are exact derivatives of what the
//! optimizer actually sees.

/// Scale/shift mapping monocular depth to rendered (or metric) depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineDepthAlignment {
    pub scale: f64,
    pub shift: f64,
    pub valid: bool,
}

impl AffineDepthAlignment {
    pub fn invalid() -> Self {
        Self {
            scale: 1.0,
            shift: 0.0,
            valid: false,
        }
    }

    pub fn apply(&self, d: f64) -> f64 {
        self.scale * d + self.shift
    }
}

/// Unified loss weights.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub rgb: f64,
    pub depth: f64,
    pub grad_depth: f64,
    pub normal: f64,
    pub grad_normal: f64,
    pub ssim: f64,
    pub ncc: f64,
    pub mvs: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 1.0,
            depth: 0.05,
            grad_depth: 0.025,
            normal: 1e-3,
            grad_normal: 5e-4,
            ssim: 1e-4,
            ncc: 1e-4,
            mvs: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> bool {
        [
            self.rgb,
            self.depth,
            self.grad_depth,
            self.normal,
            self.grad_normal,
            self.ssim,
            self.ncc,
            self.mvs,
        ]
        .iter()
        .all(|w| *w >= 0.0)
    }
}

/// Per-term loss values of one unit of work.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TermValues {
    pub rgb: f64,
    pub depth: f64,
    pub grad_depth: f64,
    pub normal: f64,
    pub grad_normal: f64,
    pub ssim: f64,
    pub ncc: f64,
    pub mvs: f64,
}

impl TermValues {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.rgb * self.rgb
            + w.depth * self.depth
            + w.grad_depth * self.grad_depth
            + w.normal * self.normal
            + w.grad_normal * self.grad_normal
            + w.ssim * self.ssim
            + w.ncc * self.ncc
            + w.mvs * self.mvs
    }

    pub fn add(&mut self, other: &TermValues) {
        self.rgb += other.rgb;
        self.depth += other.depth;
        self.grad_depth += other.grad_depth;
        self.normal += other.normal;
        self.grad_normal += other.grad_normal;
        self.ssim += other.ssim;
        self.ncc += other.ncc;
        self.mvs += other.mvs;
    }

    pub fn scale(&mut self, s: f64) {
        self.rgb *= s;
        self.depth *= s;
        self.grad_depth *= s;
        self.normal *= s;
        self.grad_normal *= s;
        self.ssim *= s;
        self.ncc *= s;
        self.mvs *= s;
    }

    pub fn is_finite(&self) -> bool {
        [
            self.rgb,
            self.depth,
            self.grad_depth,
            self.normal,
            self.grad_normal,
            self.ssim,
            self.ncc,
            self.mvs,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Huber threshold on unit-range colors.
pub const HUBER_DELTA: f64 = 0.1;
/// SSIM stabilizers for unit dynamic range.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// NCC variance stabilizer.
pub const NCC_EPS: f64 = 1e-8;
/// Masked windows with fewer pixels than this are skipped.
pub const MIN_MASKED_PIXELS: usize = 4;

/// Mean per-pixel-per-channel Huber loss; adjoints w.r.t. rendered colors.
pub fn huber_rgb(rendered: &[[f64; 3]], observed: &[[f64; 3]]) -> (f64, Vec<[f64; 3]>) {
    assert_eq!(rendered.len(), observed.len());
    let n = (rendered.len() * 3) as f64;
    let mut total = 0.0;
    let mut adj = vec![[0.0; 3]; rendered.len()];
    for (i, (r, o)) in rendered.iter().zip(observed).enumerate() {
        for c in 0..3 {
            let res = r[c] - o[c];
            if res.abs() <= HUBER_DELTA {
                total += 0.5 * res * res;
                adj[i][c] = res / n;
            } else {
                total += HUBER_DELTA * (res.abs() - 0.5 * HUBER_DELTA);
                adj[i][c] = HUBER_DELTA * res.signum() / n;
            }
        }
    }
    (total / n, adj)
}

/// Least-squares (scale, shift) mapping `mono` onto `rendered` over the valid
/// pixels. Gradients never flow through the solve: the result is a constant
/// for the optimizer.
pub fn solve_patch_alignment(
    mono: &[f64],
    rendered: &[f64],
    valid: &[bool],
) -> AffineDepthAlignment {
    assert_eq!(mono.len(), rendered.len());
    assert_eq!(mono.len(), valid.len());
    let mut n = 0.0;
    let mut sd = 0.0;
    let mut sdd = 0.0;
    let mut sr = 0.0;
    let mut sdr = 0.0;
    for i in 0..mono.len() {
        if !valid[i] {
            continue;
        }
        n += 1.0;
        sd += mono[i];
        sdd += mono[i] * mono[i];
        sr += rendered[i];
        sdr += mono[i] * rendered[i];
    }
    if n < 2.0 {
        return AffineDepthAlignment::invalid();
    }
    let mean = sd / n;
    let var = sdd / n - mean * mean;
    // Constant monocular depth cannot fix a scale; keep s = 1 and shift only.
    if var <= 1e-12 * mean * mean || var <= 0.0 {
        return AffineDepthAlignment {
            scale: 1.0,
            shift: sr / n - mean,
            valid: true,
        };
    }
    let det = n * sdd - sd * sd;
    let scale = (n * sdr - sd * sr) / det;
    let shift = (sr - scale * sd) / n;
    if scale <= 0.0 {
        return AffineDepthAlignment::invalid();
    }
    AffineDepthAlignment {
        scale,
        shift,
        valid: true,
    }
}

#[derive(Debug, Clone, Default)]
pub struct DepthLossResult {
    pub l_depth: f64,
    pub l_grad_depth: f64,
    /// Adjoints w.r.t. rendered depth, combining both terms unweighted:
    /// callers scale by their lambdas.
    pub adj_depth: Vec<f64>,
    pub adj_grad_depth: Vec<f64>,
}

/// Absolute and forward-difference depth losses against the aligned
/// monocular target (The aligned target is `s*mono + t` per pixel).
pub fn depth_losses(
    target: &[f64],
    rendered: &[f64],
    valid: &[bool],
    side: usize,
) -> DepthLossResult {
    assert_eq!(target.len(), rendered.len());
    assert_eq!(target.len(), side * side);
    let mut out = DepthLossResult {
        adj_depth: vec![0.0; rendered.len()],
        adj_grad_depth: vec![0.0; rendered.len()],
        ..Default::default()
    };

    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid > 0 {
        let mut total = 0.0;
        for i in 0..rendered.len() {
            if valid[i] {
                let r = rendered[i] - target[i];
                total += r.abs();
                out.adj_depth[i] = r.signum() / n_valid as f64;
            }
        }
        out.l_depth = total / n_valid as f64;
    }

    // Forward differences inside the patch; a pair participates only when
    // both its pixels are valid.
    let mut pairs = Vec::new();
    for v in 0..side {
        for u in 0..side {
            let i = v * side + u;
            if u + 1 < side {
                pairs.push((i, i + 1));
            }
            if v + 1 < side {
                pairs.push((i, i + side));
            }
        }
    }
    let valid_pairs: Vec<(usize, usize)> = pairs
        .into_iter()
        .filter(|&(a, b)| valid[a] && valid[b])
        .collect();
    if !valid_pairs.is_empty() {
        let np = valid_pairs.len() as f64;
        let mut total = 0.0;
        for &(a, b) in &valid_pairs {
            let g = (rendered[b] - rendered[a]) - (target[b] - target[a]);
            total += g.abs();
            let s = g.signum() / np;
            out.adj_grad_depth[b] += s;
            out.adj_grad_depth[a] -= s;
        }
        out.l_grad_depth = total / np;
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct NormalLossResult {
    pub l_normal: f64,
    pub l_grad_normal: f64,
    /// d l_normal / d rendered-gradient-normal.
    pub adj_normal_grad: Vec<[f64; 3]>,
    /// d l_normal / d rendered-mlp-normal.
    pub adj_normal_mlp: Vec<[f64; 3]>,
    /// d l_grad_normal / d rendered-gradient-normal (separate so callers can
    /// weight the two terms independently).
    pub adj_grad_normal_grad: Vec<[f64; 3]>,
}

/// Angular-plus-L1 supervision of both rendered normals by the monocular
/// normal, plus the forward-difference gradient term over the
/// density-gradient normal only. Degenerate pixels are masked from both.
pub fn normal_losses(
    mono: &[[f64; 3]],
    normal_grad: &[[f64; 3]],
    normal_mlp: &[[f64; 3]],
    valid: &[bool],
    side: usize,
) -> NormalLossResult {
    let k2 = side * side;
    assert_eq!(mono.len(), k2);
    assert_eq!(normal_grad.len(), k2);
    assert_eq!(normal_mlp.len(), k2);
    let mut out = NormalLossResult {
        adj_normal_grad: vec![[0.0; 3]; k2],
        adj_normal_mlp: vec![[0.0; 3]; k2],
        adj_grad_normal_grad: vec![[0.0; 3]; k2],
        ..Default::default()
    };

    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid > 0 {
        let nv = n_valid as f64;
        let mut total = 0.0;
        for i in 0..k2 {
            if !valid[i] {
                continue;
            }
            let m = mono[i];
            for (rendered, adj) in [
                (&normal_grad[i], &mut out.adj_normal_grad[i]),
                (&normal_mlp[i], &mut out.adj_normal_mlp[i]),
            ] {
                let mut dot = 0.0;
                let mut l1 = 0.0;
                for c in 0..3 {
                    dot += m[c] * rendered[c];
                    l1 += (m[c] - rendered[c]).abs();
                }
                total += 1.0 - dot + l1;
                for c in 0..3 {
                    adj[c] += (-m[c] + (rendered[c] - m[c]).signum()) / nv;
                }
            }
        }
        out.l_normal = total / nv;
    }

    let mut valid_pairs = Vec::new();
    for v in 0..side {
        for u in 0..side {
            let i = v * side + u;
            if u + 1 < side && valid[i] && valid[i + 1] {
                valid_pairs.push((i, i + 1));
            }
            if v + 1 < side && valid[i] && valid[i + side] {
                valid_pairs.push((i, i + side));
            }
        }
    }
    if !valid_pairs.is_empty() {
        let np = valid_pairs.len() as f64;
        let mut total = 0.0;
        for &(a, b) in &valid_pairs {
            for c in 0..3 {
                let g = (mono[b][c] - mono[a][c]) - (normal_grad[b][c] - normal_grad[a][c]);
                total += g.abs();
                let s = -g.signum() / np;
                out.adj_grad_normal_grad[b][c] += s;
                out.adj_grad_normal_grad[a][c] -= s;
            }
        }
        out.l_grad_normal = total / np;
    }
    out
}

fn luminance(c: &[f64; 3]) -> f64 {
    (c[0] + c[1] + c[2]) / 3.0
}

/// 1 - SSIM over the masked pixel set of the whole patch, computed once (no
/// sliding window) on per-pixel luminances with population statistics.
/// Fewer than `MIN_MASKED_PIXELS` unmasked pixels skips the loss entirely.
pub fn masked_ssim(
    virtual_rgb: &[[f64; 3]],
    target_rgb: &[[f64; 3]],
    mask: &[bool],
) -> (f64, Vec<[f64; 3]>) {
    assert_eq!(virtual_rgb.len(), target_rgb.len());
    assert_eq!(virtual_rgb.len(), mask.len());
    let mut adj = vec![[0.0; 3]; virtual_rgb.len()];
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let n = idx.len();
    if n < MIN_MASKED_PIXELS {
        return (0.0, adj);
    }
    let nf = n as f64;
    let xs: Vec<f64> = idx.iter().map(|&i| luminance(&virtual_rgb[i])).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| luminance(&target_rgb[i])).collect();
    let mu_x = xs.iter().sum::<f64>() / nf;
    let mu_y = ys.iter().sum::<f64>() / nf;
    let mut vx = 0.0;
    let mut vy = 0.0;
    let mut cxy = 0.0;
    for k in 0..n {
        vx += (xs[k] - mu_x) * (xs[k] - mu_x);
        vy += (ys[k] - mu_y) * (ys[k] - mu_y);
        cxy += (xs[k] - mu_x) * (ys[k] - mu_y);
    }
    vx /= nf;
    vy /= nf;
    cxy /= nf;

    let a1 = 2.0 * mu_x * mu_y + SSIM_C1;
    let a2 = 2.0 * cxy + SSIM_C2;
    let b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1;
    let b2 = vx + vy + SSIM_C2;
    let s = (a1 * a2) / (b1 * b2);

    let ds_da1 = a2 / (b1 * b2);
    let ds_da2 = a1 / (b1 * b2);
    let ds_db1 = -s / b1;
    let ds_db2 = -s / b2;
    for (k, &i) in idx.iter().enumerate() {
        let d_mu = ds_da1 * 2.0 * mu_y + ds_db1 * 2.0 * mu_x;
        let d_v = ds_db2 * 2.0 * (xs[k] - mu_x);
        let d_c = ds_da2 * 2.0 * (ys[k] - mu_y);
        let ds_dx = (d_mu + d_v + d_c) / nf;
        let da = -ds_dx / 3.0;
        adj[i] = [da, da, da];
    }
    (1.0 - s, adj)
}

/// 1 - NCC over masked luminances. Skips (loss 0, documented) when either
/// masked signal has (numerically) zero variance, so constant targets can
/// never produce NaN.
pub fn masked_ncc(
    virtual_rgb: &[[f64; 3]],
    target_rgb: &[[f64; 3]],
    mask: &[bool],
) -> (f64, Vec<[f64; 3]>) {
    assert_eq!(virtual_rgb.len(), target_rgb.len());
    assert_eq!(virtual_rgb.len(), mask.len());
    let mut adj = vec![[0.0; 3]; virtual_rgb.len()];
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let n = idx.len();
    if n < MIN_MASKED_PIXELS {
        return (0.0, adj);
    }
    let nf = n as f64;
    let xs: Vec<f64> = idx.iter().map(|&i| luminance(&virtual_rgb[i])).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| luminance(&target_rgb[i])).collect();
    let mu_x = xs.iter().sum::<f64>() / nf;
    let mu_y = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for k in 0..n {
        sxx += (xs[k] - mu_x) * (xs[k] - mu_x);
        syy += (ys[k] - mu_y) * (ys[k] - mu_y);
        sxy += (xs[k] - mu_x) * (ys[k] - mu_y);
    }
    if sxx <= 1e-12 || syy <= 1e-12 {
        return (0.0, adj);
    }
    let denom = ((sxx + NCC_EPS) * (syy + NCC_EPS)).sqrt();
    let ncc = sxy / denom;
    for (k, &i) in idx.iter().enumerate() {
        let dncc = ((ys[k] - mu_y) - sxy * (xs[k] - mu_x) / (sxx + NCC_EPS)) / denom;
        let da = -dncc / 3.0;
        adj[i] = [da, da, da];
    }
    (1.0 - ncc, adj)
}

/// Metric MVS depth L1 (no alignment); invalid MVS pixels carry a sentinel
/// `<= 0` and rendered-invalid pixels are skipped too.
pub fn mvs_depth_loss(
    mvs: &[f64],
    rendered: &[f64],
    rendered_valid: &[bool],
) -> (f64, Vec<f64>) {
    assert_eq!(mvs.len(), rendered.len());
    let mut adj = vec![0.0; rendered.len()];
    let idx: Vec<usize> = (0..mvs.len())
        .filter(|&i| mvs[i] > 0.0 && rendered_valid[i])
        .collect();
    if idx.is_empty() {
        return (0.0, adj);
    }
    let nf = idx.len() as f64;
    let mut total = 0.0;
    for &i in &idx {
        let r = rendered[i] - mvs[i];
        total += r.abs();
        adj[i] = r.signum() / nf;
    }
    (total / nf, adj)
}
