//! Forward evaluation: grid gather, MLP heads, activations.

use super::*;

#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Trilinear cell of one level: base vertex (clamped so the cell is interior)
/// and fractional weights.
#[inline]
pub(crate) fn cell_of(x_norm: &[f64; 3], res: usize) -> ([usize; 3], [f64; 3]) {
    let mut i0 = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let u = x_norm[a].clamp(0.0, 1.0) * (res - 1) as f64;
        let i = (u.floor() as usize).min(res - 2);
        i0[a] = i;
        frac[a] = u - i as f64;
    }
    (i0, frac)
}

/// Weights of the 8 cell corners in (dz, dy, dx) bit order.
#[inline]
pub(crate) fn corner_weights(frac: &[f64; 3]) -> [f64; 8] {
    let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
    let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
    [
        gz * gy * gx,
        gz * gy * fx,
        gz * fy * gx,
        gz * fy * fx,
        fz * gy * gx,
        fz * gy * fx,
        fz * fy * gx,
        fz * fy * fx,
    ]
}

impl RadianceField {
    /// Base parameter index of grid vertex (ix, iy, iz) at `level`.
    #[inline]
    pub(crate) fn vertex_index(&self, level: usize, ix: usize, iy: usize, iz: usize) -> usize {
        let r = self.level_res[level];
        self.level_offset[level] + ((iz * r + iy) * r + ix) * self.config.channels
    }

    /// Multi-level trilinear feature gather into `enc`.
    pub(crate) fn encode(&self, x_norm: &[f64; 3], enc: &mut [f64; MAX_FEATURES]) {
        let c = self.config.channels;
        for l in 0..self.config.levels {
            let res = self.level_res[l];
            let (i0, frac) = cell_of(x_norm, res);
            let w = corner_weights(&frac);
            let out = &mut enc[l * c..(l + 1) * c];
            out.fill(0.0);
            for (corner, &wc) in w.iter().enumerate() {
                if wc == 0.0 {
                    continue;
                }
                let ix = i0[0] + (corner & 1);
                let iy = i0[1] + ((corner >> 1) & 1);
                let iz = i0[2] + (corner >> 2);
                let base = self.vertex_index(l, ix, iy, iz);
                let p = &self.store.params[base..base + c];
                for (o, &pv) in out.iter_mut().zip(p) {
                    *o += wc * pv;
                }
            }
        }
    }

    #[inline]
    pub(crate) fn matvec(&self, span: &Span, rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
        let w = &self.store.params[span.offset..span.offset + span.len];
        for r in 0..rows {
            let row = &w[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[r] = acc;
        }
    }

    /// Density path only: enc -> hidden -> sigma. Returns (sigma, tape parts).
    pub(crate) fn density_core(&self, x_norm: &[f64; 3], want_tape: bool) -> (f64, Option<DensityTape>) {
        let cfg = &self.config;
        let enc_dim = cfg.encoding_dim();
        let mut enc = [0.0; MAX_FEATURES];
        self.encode(x_norm, &mut enc);
        let mut h0_pre = [0.0; MAX_HIDDEN];
        self.matvec(&self.mlp.w_d0, cfg.hidden, enc_dim, &enc[..enc_dim], &mut h0_pre[..cfg.hidden]);
        let mut h0 = [0.0; MAX_HIDDEN];
        for i in 0..cfg.hidden {
            h0[i] = h0_pre[i].max(0.0);
        }
        let mut sig = [0.0; 1];
        self.matvec(&self.mlp.w_sigma, 1, cfg.hidden, &h0[..cfg.hidden], &mut sig);
        let sigma_raw = sig[0];
        let sigma = softplus(sigma_raw + cfg.density_bias);
        let tape = want_tape.then(|| DensityTape {
            x_norm: *x_norm,
            enc,
            h0_pre,
            sigma_raw,
        });
        (sigma, tape)
    }

    /// Full query core (sigma, color, mlp normal); position must already be
    /// normalized. The gradient normal is attached by the caller.
    pub(crate) fn query_core(
        &self,
        x_norm: &[f64; 3],
        x: &Vec3,
        v: &Vec3,
        want_tape: bool,
    ) -> (FieldSample, Option<QueryTape>) {
        let cfg = &self.config;
        let enc_dim = cfg.encoding_dim();
        let mut enc = [0.0; MAX_FEATURES];
        self.encode(x_norm, &mut enc);

        let mut h0_pre = [0.0; MAX_HIDDEN];
        self.matvec(&self.mlp.w_d0, cfg.hidden, enc_dim, &enc[..enc_dim], &mut h0_pre[..cfg.hidden]);
        let mut h0 = [0.0; MAX_HIDDEN];
        for i in 0..cfg.hidden {
            h0[i] = h0_pre[i].max(0.0);
        }

        let mut sig = [0.0; 1];
        self.matvec(&self.mlp.w_sigma, 1, cfg.hidden, &h0[..cfg.hidden], &mut sig);
        let sigma_raw = sig[0];
        let sigma = softplus(sigma_raw + cfg.density_bias);

        let mut geo = [0.0; MAX_GEO];
        self.matvec(
            &self.mlp.w_geo,
            cfg.geo_features,
            cfg.hidden,
            &h0[..cfg.hidden],
            &mut geo[..cfg.geo_features],
        );

        // Color head input: geometry features then the raw view direction.
        let mut cin = [0.0; MAX_GEO + 3];
        cin[..cfg.geo_features].copy_from_slice(&geo[..cfg.geo_features]);
        cin[cfg.geo_features] = v[0];
        cin[cfg.geo_features + 1] = v[1];
        cin[cfg.geo_features + 2] = v[2];
        let mut c_pre = [0.0; MAX_HIDDEN];
        self.matvec(
            &self.mlp.w_c0,
            cfg.color_hidden,
            cfg.geo_features + 3,
            &cin[..cfg.geo_features + 3],
            &mut c_pre[..cfg.color_hidden],
        );
        let mut c_relu = [0.0; MAX_HIDDEN];
        for i in 0..cfg.color_hidden {
            c_relu[i] = c_pre[i].max(0.0);
        }
        let mut rgb_raw = [0.0; 3];
        self.matvec(
            &self.mlp.w_c1,
            3,
            cfg.color_hidden,
            &c_relu[..cfg.color_hidden],
            &mut rgb_raw,
        );
        let color = [sigmoid(rgb_raw[0]), sigmoid(rgb_raw[1]), sigmoid(rgb_raw[2])];

        let mut n_pre = [0.0; MAX_HIDDEN];
        self.matvec(
            &self.mlp.w_n0,
            cfg.normal_hidden,
            cfg.geo_features,
            &geo[..cfg.geo_features],
            &mut n_pre[..cfg.normal_hidden],
        );
        let mut n_relu = [0.0; MAX_HIDDEN];
        for i in 0..cfg.normal_hidden {
            n_relu[i] = n_pre[i].max(0.0);
        }
        let mut n_raw = [0.0; 3];
        self.matvec(
            &self.mlp.w_n1,
            3,
            cfg.normal_hidden,
            &n_relu[..cfg.normal_hidden],
            &mut n_raw,
        );
        let n_raw_norm = (n_raw[0] * n_raw[0] + n_raw[1] * n_raw[1] + n_raw[2] * n_raw[2]).sqrt();
        let (normal_mlp, normal_mlp_valid) = if n_raw_norm < RAW_NORM_MIN {
            ([0.0; 3], false)
        } else {
            (
                [
                    n_raw[0] / n_raw_norm,
                    n_raw[1] / n_raw_norm,
                    n_raw[2] / n_raw_norm,
                ],
                true,
            )
        };

        let sample = FieldSample {
            position: *x,
            direction: *v,
            sigma,
            color,
            normal_mlp,
            normal_mlp_valid,
            normal_grad: [0.0; 3],
            normal_grad_valid: false,
        };
        let tape = want_tape.then(|| QueryTape {
            x_norm: *x_norm,
            dir: [v[0], v[1], v[2]],
            enc,
            h0_pre,
            geo,
            c_pre,
            rgb_raw,
            n_pre,
            n_raw,
            n_raw_norm,
            sigma_raw,
        });
        (sample, tape)
    }

    /// Tape-free variant of `stencil` for evaluation renders: returns the
    /// unit density-gradient normal when non-degenerate.
    pub(crate) fn gradient_normal_light(&self, x: &Vec3) -> Option<[f64; 3]> {
        let eps = self.stencil_eps();
        let mut gradient = [0.0f64; 3];
        for a in 0..3 {
            let mut xp = *x;
            let mut xm = *x;
            xp[a] = (x[a] + eps[a]).min(self.aabb.max[a]);
            xm[a] = (x[a] - eps[a]).max(self.aabb.min[a]);
            let xp_n = self.aabb.normalize(&xp);
            let xm_n = self.aabb.normalize(&xm);
            let (sp, _) = self.density_core(&[xp_n[0], xp_n[1], xp_n[2]], false);
            let (sm, _) = self.density_core(&[xm_n[0], xm_n[1], xm_n[2]], false);
            gradient[a] = (sp - sm) / (xp[a] - xm[a]);
        }
        let norm =
            (gradient[0] * gradient[0] + gradient[1] * gradient[1] + gradient[2] * gradient[2])
                .sqrt();
        (norm >= GRAD_NORM_MIN).then(|| {
            [
                -gradient[0] / norm,
                -gradient[1] / norm,
                -gradient[2] / norm,
            ]
        })
    }

    /// Central-difference density-gradient stencil with taps clamped into the
    /// AABB; the effective denominator per axis is the actual tap separation.
    pub(crate) fn stencil(&self, x: &Vec3) -> StencilTape {
        let eps = self.stencil_eps();
        let mut taps: [Option<DensityTape>; 6] = Default::default();
        let mut sigmas = [0.0f64; 6];
        let mut denom = [0.0f64; 3];
        for a in 0..3 {
            let mut xp = *x;
            let mut xm = *x;
            xp[a] = (x[a] + eps[a]).min(self.aabb.max[a]);
            xm[a] = (x[a] - eps[a]).max(self.aabb.min[a]);
            denom[a] = xp[a] - xm[a];
            let xp_n = self.aabb.normalize(&xp);
            let xm_n = self.aabb.normalize(&xm);
            let (sp, tp) = self.density_core(&[xp_n[0], xp_n[1], xp_n[2]], true);
            let (sm, tm) = self.density_core(&[xm_n[0], xm_n[1], xm_n[2]], true);
            sigmas[2 * a] = sp;
            sigmas[2 * a + 1] = sm;
            taps[2 * a] = tp;
            taps[2 * a + 1] = tm;
        }
        let gradient = [
            (sigmas[0] - sigmas[1]) / denom[0],
            (sigmas[2] - sigmas[3]) / denom[1],
            (sigmas[4] - sigmas[5]) / denom[2],
        ];
        let gradient_norm =
            (gradient[0] * gradient[0] + gradient[1] * gradient[1] + gradient[2] * gradient[2])
                .sqrt();
        StencilTape {
            taps: taps.map(|t| t.expect("stencil taps are always taped")),
            denom,
            gradient,
            gradient_norm,
            valid: gradient_norm >= GRAD_NORM_MIN,
        }
    }
}
