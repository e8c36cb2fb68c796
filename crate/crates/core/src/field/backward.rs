//! Reverse passes: adjoints on query outputs are pushed through the
//! activations, the MLP weights, and the trilinear gather into a GradAccum.

use super::*;
use crate::field::forward::{cell_of, corner_weights, sigmoid};

impl RadianceField {
    /// Scatter an encoding adjoint through the trilinear weights.
    fn backward_encode(&self, x_norm: &[f64; 3], d_enc: &[f64], acc: &mut GradAccum) {
        let c = self.config.channels;
        for l in 0..self.config.levels {
            let res = self.level_res[l];
            let (i0, frac) = cell_of(x_norm, res);
            let w = corner_weights(&frac);
            let d_level = &d_enc[l * c..(l + 1) * c];
            for (corner, &wc) in w.iter().enumerate() {
                if wc == 0.0 {
                    continue;
                }
                let ix = i0[0] + (corner & 1);
                let iy = i0[1] + ((corner >> 1) & 1);
                let iz = i0[2] + (corner >> 2);
                let base = self.vertex_index(l, ix, iy, iz);
                for (ch, &dv) in d_level.iter().enumerate() {
                    if dv != 0.0 {
                        acc.add(base + ch, wc * dv);
                    }
                }
            }
        }
    }

    /// y = W x: accumulate dW += dy ⊗ x and return dx via W^T dy.
    fn backward_matvec(
        &self,
        span: &Span,
        rows: usize,
        cols: usize,
        x: &[f64],
        d_y: &[f64],
        d_x: Option<&mut [f64]>,
        acc: &mut GradAccum,
    ) {
        let w = &self.store.params[span.offset..span.offset + span.len];
        for r in 0..rows {
            let dy = d_y[r];
            if dy == 0.0 {
                continue;
            }
            let base = span.offset + r * cols;
            for (k, &xk) in x.iter().enumerate() {
                if xk != 0.0 {
                    acc.add(base + k, dy * xk);
                }
            }
        }
        if let Some(d_x) = d_x {
            for (k, slot) in d_x.iter_mut().enumerate() {
                let mut s = 0.0;
                for r in 0..rows {
                    let dy = d_y[r];
                    if dy != 0.0 {
                        s += w[r * cols + k] * dy;
                    }
                }
                *slot += s;
            }
        }
    }

    /// Reverse pass of one full query.
    pub fn backward_query(&self, tape: &QueryTape, adj: &SampleAdjoint, acc: &mut GradAccum) {
        let cfg = &self.config;
        let enc_dim = cfg.encoding_dim();
        let mut h0 = [0.0; MAX_HIDDEN];
        for i in 0..cfg.hidden {
            h0[i] = tape.h0_pre[i].max(0.0);
        }
        let mut d_geo = [0.0; MAX_GEO];
        let mut d_h0 = [0.0; MAX_HIDDEN];

        // Color head.
        if adj.d_color != [0.0; 3] {
            let mut d_rgb_raw = [0.0; 3];
            for k in 0..3 {
                let s = sigmoid(tape.rgb_raw[k]);
                d_rgb_raw[k] = adj.d_color[k] * s * (1.0 - s);
            }
            let mut c_relu = [0.0; MAX_HIDDEN];
            for i in 0..cfg.color_hidden {
                c_relu[i] = tape.c_pre[i].max(0.0);
            }
            let mut d_c_relu = [0.0; MAX_HIDDEN];
            self.backward_matvec(
                &self.mlp.w_c1,
                3,
                cfg.color_hidden,
                &c_relu[..cfg.color_hidden],
                &d_rgb_raw,
                Some(&mut d_c_relu[..cfg.color_hidden]),
                acc,
            );
            let mut d_c_pre = [0.0; MAX_HIDDEN];
            for i in 0..cfg.color_hidden {
                d_c_pre[i] = if tape.c_pre[i] > 0.0 { d_c_relu[i] } else { 0.0 };
            }
            let mut cin = [0.0; MAX_GEO + 3];
            cin[..cfg.geo_features].copy_from_slice(&tape.geo[..cfg.geo_features]);
            cin[cfg.geo_features..cfg.geo_features + 3].copy_from_slice(&tape.dir);
            let mut d_cin = [0.0; MAX_GEO + 3];
            self.backward_matvec(
                &self.mlp.w_c0,
                cfg.color_hidden,
                cfg.geo_features + 3,
                &cin[..cfg.geo_features + 3],
                &d_c_pre[..cfg.color_hidden],
                Some(&mut d_cin[..cfg.geo_features + 3]),
                acc,
            );
            for i in 0..cfg.geo_features {
                d_geo[i] += d_cin[i]; // direction part is not learnable
            }
        }

        // Normal head: adjoint is w.r.t. the unit normal.
        if adj.d_normal_mlp != [0.0; 3] && tape.n_raw_norm >= 1e-12 {
            let norm = tape.n_raw_norm;
            let n = [
                tape.n_raw[0] / norm,
                tape.n_raw[1] / norm,
                tape.n_raw[2] / norm,
            ];
            let dot = n[0] * adj.d_normal_mlp[0]
                + n[1] * adj.d_normal_mlp[1]
                + n[2] * adj.d_normal_mlp[2];
            let d_n_raw = [
                (adj.d_normal_mlp[0] - n[0] * dot) / norm,
                (adj.d_normal_mlp[1] - n[1] * dot) / norm,
                (adj.d_normal_mlp[2] - n[2] * dot) / norm,
            ];
            let mut n_relu = [0.0; MAX_HIDDEN];
            for i in 0..cfg.normal_hidden {
                n_relu[i] = tape.n_pre[i].max(0.0);
            }
            let mut d_n_relu = [0.0; MAX_HIDDEN];
            self.backward_matvec(
                &self.mlp.w_n1,
                3,
                cfg.normal_hidden,
                &n_relu[..cfg.normal_hidden],
                &d_n_raw,
                Some(&mut d_n_relu[..cfg.normal_hidden]),
                acc,
            );
            let mut d_n_pre = [0.0; MAX_HIDDEN];
            for i in 0..cfg.normal_hidden {
                d_n_pre[i] = if tape.n_pre[i] > 0.0 { d_n_relu[i] } else { 0.0 };
            }
            self.backward_matvec(
                &self.mlp.w_n0,
                cfg.normal_hidden,
                cfg.geo_features,
                &tape.geo[..cfg.geo_features],
                &d_n_pre[..cfg.normal_hidden],
                Some(&mut d_geo[..cfg.geo_features]),
                acc,
            );
        }

        // Geometry feature head back into the shared hidden layer.
        if d_geo[..cfg.geo_features].iter().any(|&v| v != 0.0) {
            self.backward_matvec(
                &self.mlp.w_geo,
                cfg.geo_features,
                cfg.hidden,
                &h0[..cfg.hidden],
                &d_geo[..cfg.geo_features],
                Some(&mut d_h0[..cfg.hidden]),
                acc,
            );
        }

        // Density head.
        if adj.d_sigma != 0.0 {
            let d_sigma_raw = adj.d_sigma * sigmoid(tape.sigma_raw + cfg.density_bias);
            self.backward_matvec(
                &self.mlp.w_sigma,
                1,
                cfg.hidden,
                &h0[..cfg.hidden],
                &[d_sigma_raw],
                Some(&mut d_h0[..cfg.hidden]),
                acc,
            );
        }

        if d_h0[..cfg.hidden].iter().any(|&v| v != 0.0) {
            let mut d_h0_pre = [0.0; MAX_HIDDEN];
            for i in 0..cfg.hidden {
                d_h0_pre[i] = if tape.h0_pre[i] > 0.0 { d_h0[i] } else { 0.0 };
            }
            let mut d_enc = [0.0; MAX_FEATURES];
            self.backward_matvec(
                &self.mlp.w_d0,
                cfg.hidden,
                enc_dim,
                &tape.enc[..enc_dim],
                &d_h0_pre[..cfg.hidden],
                Some(&mut d_enc[..enc_dim]),
                acc,
            );
            self.backward_encode(&tape.x_norm, &d_enc[..enc_dim], acc);
        }
    }

    /// Reverse pass of a density-only tap: adjoint on sigma.
    fn backward_density(&self, tape: &DensityTape, d_sigma: f64, acc: &mut GradAccum) {
        if d_sigma == 0.0 {
            return;
        }
        let cfg = &self.config;
        let enc_dim = cfg.encoding_dim();
        let d_sigma_raw = d_sigma * sigmoid(tape.sigma_raw + cfg.density_bias);
        let mut h0 = [0.0; MAX_HIDDEN];
        for i in 0..cfg.hidden {
            h0[i] = tape.h0_pre[i].max(0.0);
        }
        let mut d_h0 = [0.0; MAX_HIDDEN];
        self.backward_matvec(
            &self.mlp.w_sigma,
            1,
            cfg.hidden,
            &h0[..cfg.hidden],
            &[d_sigma_raw],
            Some(&mut d_h0[..cfg.hidden]),
            acc,
        );
        let mut d_h0_pre = [0.0; MAX_HIDDEN];
        for i in 0..cfg.hidden {
            d_h0_pre[i] = if tape.h0_pre[i] > 0.0 { d_h0[i] } else { 0.0 };
        }
        let mut d_enc = [0.0; MAX_FEATURES];
        self.backward_matvec(
            &self.mlp.w_d0,
            cfg.hidden,
            enc_dim,
            &tape.enc[..enc_dim],
            &d_h0_pre[..cfg.hidden],
            Some(&mut d_enc[..enc_dim]),
            acc,
        );
        self.backward_encode(&tape.x_norm, &d_enc[..enc_dim], acc);
    }

    /// Reverse pass of the finite-difference normal: adjoint is w.r.t. the
    /// unit n-gradient normal; each stencil tap contributes.
    pub fn backward_stencil(&self, tape: &StencilTape, d_normal: &[f64; 3], acc: &mut GradAccum) {
        if !tape.valid || *d_normal == [0.0; 3] {
            return;
        }
        // n = -g / |g|
        let norm = tape.gradient_norm;
        let n = [
            -tape.gradient[0] / norm,
            -tape.gradient[1] / norm,
            -tape.gradient[2] / norm,
        ];
        let dot = n[0] * d_normal[0] + n[1] * d_normal[1] + n[2] * d_normal[2];
        let d_g = [
            -(d_normal[0] - n[0] * dot) / norm,
            -(d_normal[1] - n[1] * dot) / norm,
            -(d_normal[2] - n[2] * dot) / norm,
        ];
        for a in 0..3 {
            let d_sig = d_g[a] / tape.denom[a];
            self.backward_density(&tape.taps[2 * a], d_sig, acc);
            self.backward_density(&tape.taps[2 * a + 1], -d_sig, acc);
        }
    }
}
