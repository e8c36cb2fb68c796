//! Scratch harness for tuning the desk-scale training budget: runs the
//! ablation rows on the standard box scene and prints F-scores and timing.

use monopatch_core::eval::{
    fuse_depth_maps, render_depth_maps, score_depth_maps, score_point_clouds, FusionParams,
};
use monopatch_core::scene::{generate_synthetic_scene, SceneSpec};
use monopatch_core::train::{holdout_split, train, evaluate_split, TrainConfig, TrainToggles};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let patches: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(16);
    let divisor: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(128.0);
    let only: Option<String> = args.get(4).cloned();
    let env_f = |name: &str, default: f64| -> f64 {
        std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
    };
    let w_depth = env_f("W_DEPTH", 0.05);
    let w_grad_depth = env_f("W_GRAD_DEPTH", 0.025);
    let w_normal = env_f("W_NORMAL", 1e-3);
    let w_grad_normal = env_f("W_GRAD_NORMAL", 5e-4);
    let density_bias = env_f("DENSITY_BIAS", 0.0);

    let mut spec = SceneSpec::boxes();
    if std::env::var("EXACT_CUES").is_ok() {
        spec.cue = monopatch_core::scene::CueSpec::exact();
    }
    let (bundle, gt) = generate_synthetic_scene(&spec, 7).unwrap();
    let scene_width = bundle.scene_width();
    println!(
        "scene: {} views, width {scene_width:.2}, gt points {}",
        bundle.num_views(),
        gt.surface_points.len()
    );

    let rows: Vec<(&str, TrainToggles)> = vec![
        (
            "baseline ",
            TrainToggles {
                patch: false,
                mono: false,
                virtual_views: false,
                restriction: false,
                mvs: false,
            },
        ),
        (
            "patch+mono",
            TrainToggles {
                patch: true,
                mono: true,
                virtual_views: false,
                restriction: false,
                mvs: false,
            },
        ),
        (
            "+virtual  ",
            TrainToggles {
                patch: true,
                mono: true,
                virtual_views: true,
                restriction: false,
                mvs: false,
            },
        ),
        (
            "+restrict ",
            TrainToggles {
                patch: true,
                mono: true,
                virtual_views: true,
                restriction: true,
                mvs: false,
            },
        ),
    ];

    let (mut train_views, test_views) = holdout_split(bundle.num_views());
    if std::env::var("SPARSE").is_ok() {
        train_views = vec![0, 2, 4, 6, 8, 10];
    }
    for (name, toggles) in rows {
        if let Some(filter) = &only {
            if !name.trim().contains(filter.as_str()) {
                continue;
            }
        }
        let t0 = Instant::now();
        let mut cfg = TrainConfig::desk(steps, patches);
        cfg.seed = 7;
        cfg.toggles = toggles;
        cfg.step_divisor = divisor;
        cfg.train_views = Some(train_views.clone());
        cfg.weights.depth = w_depth;
        cfg.weights.grad_depth = w_grad_depth;
        cfg.weights.normal = w_normal;
        cfg.weights.grad_normal = w_grad_normal;
        cfg.field.density_bias = density_bias;
        if std::env::var("NO_JITTER").is_ok() {
            cfg.jitter = false;
        }
        let out = match train(&bundle, None, &cfg) {
            Ok(o) => o,
            Err(e) => {
                println!("{name}: TRAIN FAILED: {e}");
                continue;
            }
        };
        let t_train = t0.elapsed().as_secs_f64();
        if std::env::var("DUMP_LOG").is_ok() {
            for r in &out.log.rows {
                println!(
                    "  step {:4} rgb {:.4} depth {:.4} gdep {:.4} nrm {:.4} gnrm {:.4} ssim {:.4} ncc {:.4} total {:.5}",
                    r.step, r.terms.rgb, r.terms.depth, r.terms.grad_depth,
                    r.terms.normal, r.terms.grad_normal, r.terms.ssim, r.terms.ncc, r.total
                );
            }
        }

        let t1 = Instant::now();
        let maps = render_depth_maps(&out.field, &bundle, out.restriction.as_ref(), divisor, true);
        let cloud = fuse_depth_maps(&maps, &bundle, &FusionParams::default()).unwrap();
        let taus = [0.02 * scene_width, 0.05 * scene_width];
        let scores = match score_point_clouds(&cloud.points, &gt.surface_points, &taus) {
            Ok(s) => s,
            Err(e) => {
                println!("{name}: {e} (cloud {} pts)", cloud.points.len());
                continue;
            }
        };
        let (rel, inlier) = score_depth_maps(&maps.depth, &maps.valid, &gt.depth);
        let (psnr, ssim) = evaluate_split(&out.field, &bundle, out.restriction.as_ref(), &test_views, divisor);
        let t_eval = t1.elapsed().as_secs_f64();
        println!(
            "{name}: F2={:.1} F5={:.1} P2={:.1} R2={:.1} rel={rel:.2}% inl={inlier:.1}% psnr={psnr:.1} ssim={ssim:.3} cloud={} train={t_train:.0}s eval={t_eval:.0}s",
            scores[0].fscore,
            scores[1].fscore,
            scores[0].precision,
            scores[0].recall,
            cloud.points.len()
        );
    }
}
