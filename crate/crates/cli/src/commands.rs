//! Subcommand implementations.

use crate::manifest::ManifestWriter;
use anyhow::{Context, Result};
use monopatch_core::eval::{
    export_cloud, export_depth_maps, export_normal_maps, fuse_depth_maps, render_depth_maps,
    score_depth_maps, score_point_clouds, DepthMaps, FusionParams, GeometryScore,
};
use monopatch_core::field::{load_checkpoint, save_checkpoint};
use monopatch_core::io::{pfm, ply};
use monopatch_core::restriction::{align_all_views, build_restriction, load_grid, save_grid};
use monopatch_core::scene::{
    generate_synthetic_scene, load_bundle, load_ground_truth, save_bundle, save_ground_truth,
    simulate_mvs_depth, MvsSpec, ScalarMap, SceneBundle, SceneSpec,
};
use monopatch_core::train::{
    evaluate_split, holdout_split, train, TrainConfig, TrainToggles,
};
use std::fmt;
use std::path::Path;

/// Errors from bad user input (exit code 1, vs 2 for runtime failures).
#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ValidationError {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ValidationError(msg.into()).into()
}

pub fn synth(
    spec_name: &str,
    seed: u64,
    out: &Path,
    views: Option<usize>,
    with_mvs: bool,
) -> Result<()> {
    let mut spec = match spec_name {
        "box" => SceneSpec::boxes(),
        "plane" => SceneSpec::plane(),
        other => return Err(invalid(format!("unknown scene spec {other:?}"))),
    };
    if let Some(v) = views {
        spec.views = v;
    }
    let mut manifest = ManifestWriter::new(
        "synth",
        seed,
        serde_json::json!({"spec": spec_name, "views": spec.views, "with_mvs": with_mvs}),
    );
    let (bundle, gt) = generate_synthetic_scene(&spec, seed)?;
    save_bundle(&bundle, out)?;
    save_ground_truth(&gt, out)?;
    if with_mvs {
        let maps = simulate_mvs_depth(&gt, &MvsSpec::default(), seed ^ 0x3157);
        let dir = out.join("mvs_depth");
        std::fs::create_dir_all(&dir)?;
        for (i, m) in maps.iter().enumerate() {
            pfm::write_scalar(&dir.join(format!("{i:04}.pfm")), m)?;
        }
    }
    manifest.output(out);
    manifest.finish(out)?;
    println!(
        "wrote {} views to {}",
        bundle.num_views(),
        out.display()
    );
    Ok(())
}

/// Apply `key = value` lines from a config file onto the train config.
fn apply_config_file(cfg: &mut TrainConfig, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(invalid(format!(
                "{}:{}: expected key = value",
                path.display(),
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let parse_f = || -> Result<f64> {
            value
                .parse()
                .map_err(|_| invalid(format!("bad float for {key}: {value:?}")))
        };
        let parse_u = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| invalid(format!("bad integer for {key}: {value:?}")))
        };
        match key {
            "steps" => cfg.steps = parse_u()?,
            "patches_per_step" => cfg.patches_per_step = parse_u()?,
            "patch_side" => cfg.patch_side = parse_u()?,
            "lr_start" => cfg.lr_start = parse_f()?,
            "lr_end" => cfg.lr_end = parse_f()?,
            "adam_beta1" => cfg.adam_beta1 = parse_f()?,
            "adam_beta2" => cfg.adam_beta2 = parse_f()?,
            "adam_eps" => cfg.adam_eps = parse_f()?,
            "seed" => cfg.seed = parse_u()? as u64,
            "step_divisor" => cfg.step_divisor = parse_f()?,
            "jitter" => cfg.jitter = value == "true" || value == "1",
            "min_transmittance" => cfg.min_transmittance = parse_f()?,
            "restriction_resolution" => {
                let r = parse_u()?;
                cfg.restriction_resolution = [r, r, r];
            }
            "restriction_tolerance" => cfg.restriction_tolerance = parse_f()?,
            "theta_thresh_deg" => cfg.theta_thresh_deg = parse_f()?,
            "log_every" => cfg.log_every = parse_u()?,
            "weights.rgb" => cfg.weights.rgb = parse_f()?,
            "weights.depth" => cfg.weights.depth = parse_f()?,
            "weights.grad_depth" => cfg.weights.grad_depth = parse_f()?,
            "weights.normal" => cfg.weights.normal = parse_f()?,
            "weights.grad_normal" => cfg.weights.grad_normal = parse_f()?,
            "weights.ssim" => cfg.weights.ssim = parse_f()?,
            "weights.ncc" => cfg.weights.ncc = parse_f()?,
            "weights.mvs" => cfg.weights.mvs = parse_f()?,
            "field.levels" => cfg.field.levels = parse_u()?,
            "field.base_resolution" => cfg.field.base_resolution = parse_u()?,
            "field.max_resolution" => cfg.field.max_resolution = parse_u()?,
            "field.channels" => cfg.field.channels = parse_u()?,
            "field.density_bias" => cfg.field.density_bias = parse_f()?,
            other => return Err(invalid(format!("unknown config key {other:?}"))),
        }
    }
    Ok(())
}

fn apply_disables(cfg: &mut TrainConfig, disable: &[String]) -> Result<()> {
    for d in disable {
        match d.as_str() {
            "mono" => cfg.toggles.mono = false,
            "virtual" => cfg.toggles.virtual_views = false,
            "restriction" => cfg.toggles.restriction = false,
            "patch" => {
                cfg.toggles.patch = false;
                cfg.toggles.virtual_views = false;
            }
            other => return Err(invalid(format!("unknown --disable value {other:?}"))),
        }
    }
    Ok(())
}

fn load_mvs_maps(dir: &Path, views: usize) -> Result<Vec<ScalarMap>> {
    let mut maps = Vec::with_capacity(views);
    for i in 0..views {
        let path = dir.join(format!("{i:04}.pfm"));
        if !path.exists() {
            return Err(invalid(format!("missing mvs depth {}", path.display())));
        }
        maps.push(pfm::read_scalar(&path)?);
    }
    Ok(maps)
}

#[allow(clippy::too_many_arguments)]
pub fn train_cmd(
    scene: &Path,
    config: Option<&Path>,
    out: &Path,
    disable: &[String],
    mvs_depth: Option<&Path>,
    seed: Option<u64>,
    steps: Option<usize>,
    patches: Option<usize>,
) -> Result<()> {
    let bundle = load_bundle(scene)?;
    let mut cfg = TrainConfig::default();
    if let Some(path) = config {
        apply_config_file(&mut cfg, path)?;
    }
    apply_disables(&mut cfg, disable)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(p) = patches {
        cfg.patches_per_step = p;
    }
    let mvs_maps = match mvs_depth {
        Some(dir) => {
            cfg.toggles.mvs = true;
            Some(load_mvs_maps(dir, bundle.num_views())?)
        }
        None => None,
    };
    cfg.validate().map_err(|e| invalid(e.to_string()))?;

    let mut manifest = ManifestWriter::new(
        "train",
        cfg.seed,
        serde_json::to_value(&cfg).expect("config json"),
    );
    manifest.input(scene);

    let output = train(&bundle, mvs_maps.as_deref(), &cfg)?;
    std::fs::create_dir_all(out)?;
    let ckpt = out.join("field.ckpt");
    save_checkpoint(&output.field, cfg.steps as u64, &ckpt)?;
    output.log.write_csv(&out.join("train_log.csv"))?;
    if let Some(grid) = &output.restriction {
        save_grid(grid, &out.join("restriction.bin"))?;
    }
    manifest.output(&ckpt);
    manifest.finish(out)?;
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

pub fn render_cmd(
    scene: &Path,
    checkpoint: &Path,
    out: &Path,
    restriction: Option<&Path>,
) -> Result<()> {
    let bundle = load_bundle(scene)?;
    let (field, step) = load_checkpoint(checkpoint)?;
    let grid = restriction.map(load_grid).transpose()?;
    let mut manifest = ManifestWriter::new(
        "render",
        0,
        serde_json::json!({"checkpoint": checkpoint.display().to_string(), "step": step}),
    );
    manifest.input(scene);
    manifest.input(checkpoint);

    let maps = render_depth_maps(&field, &bundle, grid.as_ref(), 256.0, true);
    export_depth_maps(&maps, &out.join("depth"))?;
    export_normal_maps(&maps, &out.join("normal"))?;
    // Color images.
    let color_dir = out.join("color");
    std::fs::create_dir_all(&color_dir)?;
    let spec = monopatch_core::render::StepSpec {
        base_step: bundle.scene_aabb.diagonal() / 256.0,
        ..monopatch_core::render::StepSpec::for_aabb(&bundle.scene_aabb)
    };
    for (view, camera) in bundle.cameras.iter().enumerate() {
        let mut img = image::RgbImage::new(camera.width as u32, camera.height as u32);
        for v in 0..camera.height {
            for u in 0..camera.width {
                let ray = monopatch_core::geom::pixel_to_ray(
                    camera,
                    &bundle.scene_aabb,
                    u as f64,
                    v as f64,
                )
                .expect("render ray");
                let r = monopatch_core::render::render_ray(&field, &ray, grid.as_ref(), &spec, false);
                img.put_pixel(
                    u as u32,
                    v as u32,
                    image::Rgb(r.color.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)),
                );
            }
        }
        img.save(color_dir.join(format!("{view:04}.png")))?;
    }
    manifest.output(out);
    manifest.finish(out)?;
    println!("rendered {} views to {}", bundle.num_views(), out.display());
    Ok(())
}

pub fn restriction_cmd(
    scene: &Path,
    out: &Path,
    resolution: usize,
    tolerance: f64,
    seed: u64,
) -> Result<()> {
    let bundle = load_bundle(scene)?;
    let mut manifest = ManifestWriter::new(
        "restriction",
        seed,
        serde_json::json!({"resolution": resolution, "tolerance": tolerance}),
    );
    manifest.input(scene);
    let alignments = align_all_views(&bundle, &Default::default(), seed);
    let valid = alignments.iter().filter(|a| a.valid).count();
    let grid = build_restriction(
        &bundle,
        &alignments,
        [resolution, resolution, resolution],
        tolerance,
    )?;
    std::fs::create_dir_all(out)?;
    let path = out.join("restriction.bin");
    save_grid(&grid, &path)?;
    manifest.output(&path);
    manifest.finish(out)?;
    println!(
        "labeled {}/{} voxels from {valid} aligned views -> {}",
        grid.count_true(),
        grid.num_voxels(),
        path.display()
    );
    Ok(())
}

/// Load depth (and, when present, normal) PFMs from a render output layout.
fn load_depth_maps(dir: &Path, bundle: &SceneBundle) -> Result<DepthMaps> {
    let depth_dir = if dir.join("depth").is_dir() {
        dir.join("depth")
    } else {
        dir.to_path_buf()
    };
    let normal_dir = if depth_dir.parent().map(|p| p.join("normal").is_dir()) == Some(true) {
        Some(depth_dir.parent().unwrap().join("normal"))
    } else {
        None
    };
    let mut maps = DepthMaps {
        depth: Vec::new(),
        valid: Vec::new(),
        normal: Vec::new(),
        normal_valid: Vec::new(),
    };
    for view in 0..bundle.num_views() {
        let path = depth_dir.join(format!("{view:04}.pfm"));
        if !path.exists() {
            return Err(invalid(format!("missing depth map {}", path.display())));
        }
        let depth = pfm::read_scalar(&path)?;
        let valid: Vec<bool> = depth.data.iter().map(|&d| d > 0.0).collect();
        let (normal, normal_valid) = if let Some(nd) = &normal_dir {
            let npath = nd.join(format!("{view:04}.pfm"));
            if npath.exists() {
                let n = pfm::read_vector(&npath)?;
                let nv: Vec<bool> = (0..depth.data.len())
                    .map(|i| {
                        let v = monopatch_core::math::Vec3::new(
                            n.data[3 * i],
                            n.data[3 * i + 1],
                            n.data[3 * i + 2],
                        );
                        v.norm() > 0.5
                    })
                    .collect();
                (n, nv)
            } else {
                (
                    monopatch_core::scene::VectorMap::new(depth.width, depth.height),
                    vec![false; depth.data.len()],
                )
            }
        } else {
            (
                monopatch_core::scene::VectorMap::new(depth.width, depth.height),
                vec![false; depth.data.len()],
            )
        };
        maps.depth.push(depth);
        maps.valid.push(valid);
        maps.normal.push(normal);
        maps.normal_valid.push(normal_valid);
    }
    Ok(maps)
}

pub fn fuse_cmd(
    scene: &Path,
    depth: &Path,
    out: &Path,
    eps_rel: f64,
    min_support: usize,
) -> Result<()> {
    let bundle = load_bundle(scene)?;
    let maps = load_depth_maps(depth, &bundle)?;
    let params = FusionParams {
        eps_rel,
        min_support,
        ..FusionParams::default()
    };
    let mut manifest = ManifestWriter::new(
        "fuse",
        0,
        serde_json::json!({"eps_rel": eps_rel, "min_support": min_support}),
    );
    manifest.input(scene);
    manifest.input(depth);
    let cloud = fuse_depth_maps(&maps, &bundle, &params)?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    export_cloud(&cloud, out, true)?;
    manifest.output(out);
    manifest.finish(out.parent().unwrap_or(Path::new(".")))?;
    println!("fused {} points -> {}", cloud.points.len(), out.display());
    Ok(())
}

pub fn eval_cmd(
    pred: &Path,
    gt: &Path,
    tau: &[f64],
    scene: Option<&Path>,
    depth: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let pred_cloud = ply::read_cloud(pred)?;
    let gt_cloud = ply::read_cloud(gt)?;
    let bundle = scene.map(load_bundle).transpose()?;
    let taus: Vec<f64> = match &bundle {
        Some(b) => tau.iter().map(|t| t * b.scene_width()).collect(),
        None => tau.to_vec(),
    };
    let per_tau = score_point_clouds(&pred_cloud.points, &gt_cloud.points, &taus)?;
    let mut score = GeometryScore {
        per_tau,
        rel: None,
        inlier_ratio: None,
    };
    if let (Some(bundle), Some(depth_dir), Some(scene_dir)) = (&bundle, depth, scene) {
        let maps = load_depth_maps(depth_dir, bundle)?;
        let gt_maps = load_ground_truth(scene_dir, bundle.num_views())?;
        let (rel, inlier) = score_depth_maps(&maps.depth, &maps.valid, &gt_maps.depth);
        score.rel = Some(rel);
        score.inlier_ratio = Some(inlier);
    }
    let json = serde_json::to_string_pretty(&score)?;
    println!("{json}");
    if let Some(path) = out {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, &json)?;
    }
    Ok(())
}

fn parse_rows(rows: Option<&str>) -> Result<Vec<(String, TrainToggles)>> {
    let spec = rows.unwrap_or("-,m,r,pm,pv,pmv,pmvr");
    let mut out = Vec::new();
    for token in spec.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let mut t = TrainToggles::baseline();
        if token != "-" {
            for ch in token.chars() {
                match ch {
                    'p' => t.patch = true,
                    'm' => t.mono = true,
                    'v' => t.virtual_views = true,
                    'r' => t.restriction = true,
                    's' => t.mvs = true,
                    other => {
                        return Err(invalid(format!(
                            "unknown toggle {other:?} in row {token:?}"
                        )))
                    }
                }
            }
        }
        if t.virtual_views && !t.patch {
            return Err(invalid(format!(
                "row {token:?}: virtual views require patch sampling"
            )));
        }
        out.push((token.to_string(), t));
    }
    if out.is_empty() {
        return Err(invalid("no ablation rows requested"));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn ablate_cmd(
    scene: &Path,
    out: &Path,
    rows: Option<&str>,
    seed: Option<u64>,
    steps: Option<usize>,
    patches: Option<usize>,
    mvs_depth: Option<&Path>,
) -> Result<()> {
    let bundle = load_bundle(scene)?;
    let gt = load_ground_truth(scene, bundle.num_views())?;
    let rows = parse_rows(rows)?;
    let seed = seed.unwrap_or(7);
    let steps = steps.unwrap_or(400);
    let patches = patches.unwrap_or(16);
    let mvs_maps = mvs_depth
        .map(|d| load_mvs_maps(d, bundle.num_views()))
        .transpose()?;

    let mut manifest = ManifestWriter::new(
        "ablate",
        seed,
        serde_json::json!({"rows": rows.iter().map(|r| r.0.clone()).collect::<Vec<_>>(),
                           "steps": steps, "patches": patches}),
    );
    manifest.input(scene);

    std::fs::create_dir_all(out)?;
    let csv_path = out.join("ablation.csv");
    let mut csv = String::from("patch,mono,virtual,restriction,psnr,ssim,f2,f5,seconds\n");
    let (train_views, test_views) = holdout_split(bundle.num_views());
    let scene_width = bundle.scene_width();
    for (name, toggles) in rows {
        if toggles.mvs && mvs_maps.is_none() {
            return Err(invalid(format!("row {name:?} needs --mvs-depth")));
        }
        let started = std::time::Instant::now();
        let mut cfg = TrainConfig::desk(steps, patches);
        cfg.seed = seed;
        cfg.toggles = toggles;
        cfg.train_views = Some(train_views.clone());
        let output = train(&bundle, mvs_maps.as_deref(), &cfg)?;
        let (psnr, ssim) = evaluate_split(
            &output.field,
            &bundle,
            output.restriction.as_ref(),
            &test_views,
            cfg.step_divisor,
        );
        let maps = render_depth_maps(
            &output.field,
            &bundle,
            output.restriction.as_ref(),
            cfg.step_divisor,
            true,
        );
        let cloud = fuse_depth_maps(&maps, &bundle, &FusionParams::default())?;
        let scores = match score_point_clouds(
            &cloud.points,
            &gt.points,
            &[0.02 * scene_width, 0.05 * scene_width],
        ) {
            Ok(s) => s,
            Err(_) => vec![
                monopatch_core::eval::TauScore {
                    tau: 0.02 * scene_width,
                    precision: 0.0,
                    recall: 0.0,
                    fscore: 0.0,
                },
                monopatch_core::eval::TauScore {
                    tau: 0.05 * scene_width,
                    precision: 0.0,
                    recall: 0.0,
                    fscore: 0.0,
                },
            ],
        };
        let seconds = started.elapsed().as_secs_f64();
        let line = format!(
            "{},{},{},{},{:.2},{:.4},{:.2},{:.2},{:.1}\n",
            toggles.patch as u8,
            toggles.mono as u8,
            toggles.virtual_views as u8,
            toggles.restriction as u8,
            psnr,
            ssim,
            scores[0].fscore,
            scores[1].fscore,
            seconds
        );
        print!("{name}: {line}");
        csv.push_str(&line);
    }
    std::fs::write(&csv_path, csv)?;
    manifest.output(&csv_path);
    manifest.finish(out)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}
