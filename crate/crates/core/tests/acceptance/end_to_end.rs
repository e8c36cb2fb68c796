//! Criteria 6 and 7: direction-preserving ablation ordering and the
//! MVS-depth variant, on the standard 12-view synthetic box scene.

use super::*;

/// Desk-scale training budget shared by every ablation row.
pub const ABLATION_STEPS: usize = 400;
pub const ABLATION_PATCHES: usize = 12;
pub const ABLATION_SEED: u64 = 7;

fn desk_config(toggles: TrainToggles, train_views: Vec<usize>) -> TrainConfig {
    let mut cfg = TrainConfig::desk(ABLATION_STEPS, ABLATION_PATCHES);
    cfg.seed = ABLATION_SEED;
    cfg.toggles = toggles;
    cfg.train_views = Some(train_views);
    cfg.field.density_bias = -2.0;
    cfg
}

struct RowResult {
    f2: f64,
    f5: f64,
    rel: f64,
}

fn run_row(
    bundle: &monopatch_core::scene::SceneBundle,
    gt: &monopatch_core::scene::GroundTruth,
    toggles: TrainToggles,
    train_views: &[usize],
    mvs: Option<&[monopatch_core::scene::ScalarMap]>,
) -> RowResult {
    let cfg = desk_config(toggles, train_views.to_vec());
    let out = train(bundle, mvs, &cfg).expect("training");
    let maps = render_depth_maps(
        &out.field,
        bundle,
        out.restriction.as_ref(),
        cfg.step_divisor,
        true,
    );
    let cloud = fuse_depth_maps(&maps, bundle, &FusionParams::default()).expect("fusion");
    let width = bundle.scene_width();
    let scores = score_point_clouds(
        &cloud.points,
        &gt.surface_points,
        &[0.02 * width, 0.05 * width],
    )
    .map(|s| (s[0].fscore, s[1].fscore))
    .unwrap_or((0.0, 0.0));
    let (rel, _) = score_depth_maps(&maps.depth, &maps.valid, &gt.depth);
    RowResult {
        f2: scores.0,
        f5: scores.1,
        rel,
    }
}

/// Criterion 6: F@2% strictly increases along
/// baseline -> +patch+mono -> +virtual -> +restriction, and the full method's
/// mean depth abs-rel is at least 30% below the RGB-only baseline's. The
/// whole matrix (plus fusion and scoring) fits the stated wall budget.
#[test]
fn criterion_6_ablation_ordering() {
    let started = Instant::now();
    let (bundle, gt) = generate_synthetic_scene(&SceneSpec::boxes(), ABLATION_SEED).unwrap();
    let (train_views, _) = holdout_split(bundle.num_views());

    let rows = [
        ("baseline", TrainToggles::baseline()),
        (
            "+patch+mono",
            TrainToggles {
                patch: true,
                mono: true,
                virtual_views: false,
                restriction: false,
                mvs: false,
            },
        ),
        (
            "+virtual",
            TrainToggles {
                patch: true,
                mono: true,
                virtual_views: true,
                restriction: false,
                mvs: false,
            },
        ),
        (
            "+restriction",
            TrainToggles {
                patch: true,
                mono: true,
                virtual_views: true,
                restriction: true,
                mvs: false,
            },
        ),
    ];
    let mut results = Vec::new();
    for (name, toggles) in rows {
        let r = run_row(&bundle, &gt, toggles, &train_views, None);
        println!(
            "  {name:13} F@2%={:6.2} F@5%={:6.2} rel={:5.2}%",
            r.f2, r.f5, r.rel
        );
        results.push(r);
    }
    assert!(
        results[0].f2 < results[1].f2,
        "baseline {:.2} !< +patch+mono {:.2}",
        results[0].f2,
        results[1].f2
    );
    assert!(
        results[1].f2 < results[2].f2,
        "+patch+mono {:.2} !< +virtual {:.2}",
        results[1].f2,
        results[2].f2
    );
    assert!(
        results[2].f2 < results[3].f2,
        "+virtual {:.2} !< +restriction {:.2}",
        results[2].f2,
        results[3].f2
    );
    assert!(
        results[3].rel <= 0.7 * results[0].rel,
        "full rel {:.2}% not 30% below baseline {:.2}%",
        results[3].rel,
        results[0].rel
    );
    let secs = started.elapsed().as_secs_f64();
    assert!(
        secs < 900.0,
        "ablation matrix took {secs:.0}s (budget 900s on a 4-core desktop)"
    );
    println!("ACCEPTANCE 6 ablation-ordering: PASS ({secs:.0}s)");
}

/// Criterion 7: metric MVS supervision (GT-perturbed depth, weight 0.1)
/// strictly improves F@2% over the full method on the same scene.
#[test]
fn criterion_7_mvs_variant() {
    let started = Instant::now();
    let (bundle, gt) = generate_synthetic_scene(&SceneSpec::boxes(), ABLATION_SEED).unwrap();
    let (train_views, _) = holdout_split(bundle.num_views());
    let mvs_maps = simulate_mvs_depth(&gt, &MvsSpec::default(), 1234);

    let full = run_row(&bundle, &gt, TrainToggles::full(), &train_views, None);
    let with_mvs = run_row(
        &bundle,
        &gt,
        TrainToggles {
            mvs: true,
            ..TrainToggles::full()
        },
        &train_views,
        Some(&mvs_maps),
    );
    println!(
        "  full F@2%={:.2}  full+mvs F@2%={:.2}",
        full.f2, with_mvs.f2
    );
    assert!(
        with_mvs.f2 > full.f2,
        "mvs variant {:.2} did not improve over full {:.2}",
        with_mvs.f2,
        full.f2
    );
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 300.0, "mvs variant took {secs:.0}s (budget 300s)");
    println!("ACCEPTANCE 7 mvs-variant: PASS ({secs:.0}s)");
}
