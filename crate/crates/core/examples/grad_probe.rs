//! Gradient-magnitude diagnostic: one taped render of a training patch and a
//! breakdown of each loss term's gradient norm per parameter span.

use monopatch_core::field::{GradAccum, RadianceField};
use monopatch_core::geom::sample_patches;
use monopatch_core::losses::*;
use monopatch_core::math::stream_key;
use monopatch_core::render::{render_backward, render_patch, RayAdjoints, StepSpec};
use monopatch_core::scene::{generate_synthetic_scene, SceneSpec};
use monopatch_core::virtual_view::correspond_and_render;
use rand::SeedableRng;

fn span_norms(field: &RadianceField, grads: &[f64]) -> String {
    let mut out = String::new();
    for span in &field.store.spans {
        let slice = &grads[span.offset..span.offset + span.len];
        let norm: f64 = slice.iter().map(|g| g * g).sum::<f64>().sqrt();
        out.push_str(&format!("{}={:.3e} ", span.name, norm));
    }
    out
}

fn main() {
    let steps_trained: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let spec = SceneSpec::boxes();
    let (bundle, _gt) = generate_synthetic_scene(&spec, 7).unwrap();

    // Optionally pre-train RGB-only to see grad magnitudes mid-training.
    let mut cfg = monopatch_core::train::TrainConfig::desk(steps_trained.max(1), 8);
    cfg.seed = 7;
    cfg.toggles = monopatch_core::train::TrainToggles {
        patch: true,
        mono: false,
        virtual_views: false,
        restriction: false,
        mvs: false,
    };
    let field = if steps_trained > 0 {
        monopatch_core::train::train(&bundle, None, &cfg).unwrap().field
    } else {
        let mut f = RadianceField::new(cfg.field.clone(), bundle.scene_aabb).unwrap();
        f.init_random(stream_key(7, 0xf1e1d, 0, 0));
        f
    };

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let patch = sample_patches(&bundle, 0, 8, 1, &mut rng).unwrap().remove(0);
    let spec_step = StepSpec {
        base_step: bundle.scene_aabb.diagonal() / 128.0,
        jitter: false,
        jitter_key: 1,
        min_transmittance: 1e-4,
        background: [0.5; 3],
    };
    let render = render_patch(&field, &patch, None, &spec_step, true, true);
    let n = patch.len();

    let observed: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let (u, v) = patch.pixel(i);
            bundle.images[0].pixel(u, v)
        })
        .collect();
    let rendered_rgb: Vec<[f64; 3]> = render.results.iter().map(|r| r.color).collect();
    let rendered_depth: Vec<f64> = render.results.iter().map(|r| r.depth).collect();
    let depth_valid: Vec<bool> = render.results.iter().map(|r| r.depth_valid).collect();
    let mono: Vec<f64> = (0..n)
        .map(|i| {
            let (u, v) = patch.pixel(i);
            bundle.mono_depth[0].get(u, v)
        })
        .collect();
    let mono_n: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let (u, v) = patch.pixel(i);
            let m = bundle.mono_normal[0].get(u, v);
            [m[0], m[1], m[2]]
        })
        .collect();

    let w = LossWeights::default();
    let mut cases: Vec<(&str, Vec<RayAdjoints>)> = Vec::new();

    // RGB.
    let (_, adj) = huber_rgb(&rendered_rgb, &observed);
    let mut a = vec![RayAdjoints::default(); n];
    for i in 0..n {
        a[i].d_color = adj[i].map(|x| w.rgb * x);
    }
    cases.push(("rgb", a));

    // Depth.
    let alignment = solve_patch_alignment(&mono, &rendered_depth, &depth_valid);
    println!(
        "alignment: s={:.4} t={:.4} valid={}",
        alignment.scale, alignment.shift, alignment.valid
    );
    if alignment.valid {
        let target: Vec<f64> = mono.iter().map(|&m| alignment.apply(m)).collect();
        let r = depth_losses(&target, &rendered_depth, &depth_valid, patch.side);
        let mut a = vec![RayAdjoints::default(); n];
        for i in 0..n {
            a[i].d_depth = w.depth * r.adj_depth[i] + w.grad_depth * r.adj_grad_depth[i];
        }
        cases.push(("depth", a));
    }

    // Normals.
    let ng: Vec<[f64; 3]> = render.results.iter().map(|r| r.normal_grad).collect();
    let nm: Vec<[f64; 3]> = render.results.iter().map(|r| r.normal_mlp).collect();
    let nv: Vec<bool> = render
        .results
        .iter()
        .map(|r| r.normal_grad_valid && r.normal_mlp_valid)
        .collect();
    let r = normal_losses(&mono_n, &ng, &nm, &nv, patch.side);
    let mut a = vec![RayAdjoints::default(); n];
    for i in 0..n {
        for c in 0..3 {
            a[i].d_normal_grad[c] =
                w.normal * r.adj_normal_grad[i][c] + w.grad_normal * r.adj_normal_grad[i][c];
            a[i].d_normal_mlp[c] = w.normal * r.adj_normal_mlp[i][c];
        }
    }
    cases.push(("normal", a));

    // Virtual (SSIM + NCC).
    let virt = correspond_and_render(
        &field,
        None,
        &patch,
        &render.results,
        &bundle.cameras[0].center(),
        &spec_step,
        &bundle.scene_aabb,
        10f64.to_radians(),
        true,
    );
    let virt_rgb: Vec<[f64; 3]> = virt.results.iter().map(|r| r.color).collect();
    let (_, adj_ssim) = masked_ssim(&virt_rgb, &observed, &virt.mask);
    let (_, adj_ncc) = masked_ncc(&virt_rgb, &observed, &virt.mask);
    let mut a = vec![RayAdjoints::default(); n];
    for i in 0..n {
        for c in 0..3 {
            a[i].d_color[c] = w.ssim * adj_ssim[i][c] + w.ncc * adj_ncc[i][c];
        }
    }

    for (name, adjoints) in cases {
        let render2 = render_patch(&field, &patch, None, &spec_step, true, true);
        let mut acc = GradAccum::new(field.num_params());
        for (i, tape) in render2.tapes.into_iter().enumerate() {
            render_backward(&field, tape, &adjoints[i], &mut acc);
        }
        let mut grads = vec![0.0; field.num_params()];
        acc.flush_into(&mut grads);
        println!("{name:7}: {}", span_norms(&field, &grads));
    }
    {
        let mut acc = GradAccum::new(field.num_params());
        for (i, tape) in virt.tapes.into_iter().enumerate() {
            if let Some(t) = tape {
                render_backward(&field, t, &a[i], &mut acc);
            }
        }
        let mut grads = vec![0.0; field.num_params()];
        acc.flush_into(&mut grads);
        println!("virtual: {}", span_norms(&field, &grads));
    }
}
