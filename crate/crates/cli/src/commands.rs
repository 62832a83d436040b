use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use splatground_core::config::{BackendKind, Config};
use splatground_core::edit::EditCommand;
use splatground_core::eval::{
    generate_synthetic, run_benchmark, BenchmarkManifest, Layout, SyntheticSceneSpec,
};
use splatground_core::field::{train_field, Classifier, SupervisionSet};
use splatground_core::glspag::{ground as ground_query, GroundingResult};
use splatground_core::imageio;
use splatground_core::lmseg::{BboxFillBackend, GroundingBackend, OracleBackend, RemoteBackend};
use splatground_core::render::{render_hard_mask, render_identity_map, render_rgb, render_soft_mask, RgbImage};
use splatground_core::scene::{
    load_mask3d, load_scene, read_gaussians, save_cameras, save_mask3d, save_scene, Mask2D, Scene,
};
use splatground_core::{Error, Result};

use crate::report::{GroundReport, MaskFiles, ViewReport};
use crate::{BuildArgs, EditArgs, EditKind, EvalArgs, GenArgs, GroundArgs, LayoutArg, RenderArgs, RenderWhat};

/// Creates `<output_dir>/<UTC timestamp>-seed<seed>`, with a numeric suffix
/// when that name is taken.
fn run_dir(config: &Config) -> Result<PathBuf> {
    let base = &config.output_dir;
    fs::create_dir_all(base).map_err(|e| io_err(base, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let name = format!("{stamp}-seed{}", config.seed);
    for n in 0.. {
        let dir = if n == 0 {
            base.join(&name)
        } else {
            base.join(format!("{name}-{n}"))
        };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir, e)),
        }
    }
    unreachable!()
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn load_field_scene(config: &Config, scene: &Path, cameras: &Path) -> Result<Scene> {
    let mut s = load_scene(scene, cameras)?;
    if s.feature_dim() != config.feature_dim {
        s.reset_features(config.feature_dim);
    }
    Ok(s)
}

/// Scene and classifier bound together: the scene's instance count is the
/// classifier's.
fn load_trained(scene: &Path, cameras: &Path, classifier: &Path) -> Result<(Scene, Classifier)> {
    let mut s = load_scene(scene, cameras)?;
    let c = Classifier::load(classifier)?;
    if s.feature_dim() != c.feature_dim() {
        return Err(Error::Dimension(format!(
            "scene features have {} dimensions, classifier expects {}",
            s.feature_dim(),
            c.feature_dim()
        )));
    }
    s.num_instances = c.num_instances();
    Ok((s, c))
}

fn oracle_from_manifest(path: &Path) -> Result<OracleBackend> {
    let manifest = BenchmarkManifest::load(path)?;
    let idmaps = manifest
        .oracle_idmaps
        .as_deref()
        .ok_or_else(|| Error::Input(format!("{}: no oracle_idmaps entry", path.display())))?;
    let maps = SupervisionSet::load(&manifest.resolve(idmaps))?.maps;
    let queries = manifest.cases.iter().map(|c| (c.query.clone(), c.oracle_id)).collect();
    Ok(OracleBackend::new(maps, queries))
}

fn make_backend(config: &Config, kind: BackendKind, manifest: Option<&Path>) -> Result<Box<dyn GroundingBackend>> {
    Ok(match kind {
        BackendKind::Oracle => {
            let path = manifest.ok_or_else(|| Error::Input("the oracle backend needs --manifest".into()))?;
            Box::new(oracle_from_manifest(path)?)
        }
        BackendKind::BboxFill => Box::new(BboxFillBackend::new(config.remote())?),
        BackendKind::Remote => Box::new(RemoteBackend::new(config.remote())?),
    })
}

fn backend_name(kind: BackendKind) -> &'static str {
    match kind {
        BackendKind::Oracle => "oracle",
        BackendKind::BboxFill => "bbox-fill",
        BackendKind::Remote => "remote",
    }
}

pub fn gen_synthetic(config: &Config, args: &GenArgs) -> Result<PathBuf> {
    let spec = SyntheticSceneSpec {
        num_objects: args.objects,
        gaussians_per_object: args.gaussians_per_object,
        seed: config.seed,
        layout: match args.layout {
            LayoutArg::Scattered => Layout::Scattered,
            LayoutArg::Occluded => Layout::Occluded,
        },
        num_cameras: args.cameras,
        width: args.width,
        height: args.height,
        holdout_every: args.holdout_every,
        feature_dim: config.feature_dim,
        ..SyntheticSceneSpec::default()
    };
    let syn = generate_synthetic(&spec)?;
    let dir = run_dir(config)?;
    save_scene(&syn.scene, &dir.join("scene.ply"))?;
    save_cameras(&syn.scene.cameras, &dir.join("cameras.json"))?;
    syn.training_supervision().save(&dir.join("supervision"))?;
    syn.supervision.save(&dir.join("idmaps"))?;

    let mut manifest = BenchmarkManifest::new("scene.ply".into(), "cameras.json".into(), "classifier.json".into());
    manifest.oracle_idmaps = Some("idmaps/manifest.json".into());
    manifest.add_cases(&dir, "gt", &syn.cases)?;
    manifest.save(&dir.join("benchmark.json"))?;

    let objects: Vec<_> = syn
        .objects
        .iter()
        .map(|o| {
            serde_json::json!({
                "id": o.id,
                "color": o.color_name,
                "center": [o.center.x, o.center.y, o.center.z],
                "extent": [o.extent.x, o.extent.y, o.extent.z],
            })
        })
        .collect();
    write_json(
        &dir.join("labels.json"),
        &serde_json::json!({ "objects": objects, "gaussian_labels": syn.labels, "eval_cameras": syn.eval_cameras }),
    )?;
    println!(
        "{} gaussians, {} cameras, {} objects, {} queries",
        syn.scene.len(),
        syn.scene.cameras.len(),
        syn.objects.len(),
        syn.cases.len()
    );
    Ok(dir)
}

pub fn build_field(config: &Config, args: &BuildArgs) -> Result<PathBuf> {
    let mut scene = load_field_scene(config, &args.scene.scene, &args.scene.cameras)?;
    let supervision = SupervisionSet::load(&args.supervision)?;
    let mut params = config.train_params();
    if let Some(steps) = args.steps {
        params.steps = steps;
    }
    let report = train_field(&mut scene, &supervision, &params)?;
    let dir = run_dir(config)?;
    report.classifier.save(&dir.join("classifier.json"))?;
    save_scene(&scene, &dir.join("scene.ply"))?;
    save_cameras(&scene.cameras, &dir.join("cameras.json"))?;
    write_json(
        &dir.join("training.json"),
        &serde_json::json!({
            "steps": params.steps,
            "instances": report.classifier.num_instances(),
            "accuracy": report.accuracy,
            "losses": report.losses,
        }),
    )?;
    println!(
        "K = {}, {} steps, final loss {:.5}, supervised pixel accuracy {:.4}",
        report.classifier.num_instances(),
        params.steps,
        report.losses.last().copied().unwrap_or(f64::NAN),
        report.accuracy
    );
    Ok(dir)
}

const TINT: [f64; 3] = [1.0, 0.15, 0.15];

/// Tints `mask` pixels and outlines `bbox` in green (vote for the winner),
/// red (other vote) or gray (abstained).
fn annotate(image: &RgbImage, mask: Option<&Mask2D>, bbox: Option<[f64; 4]>, outline: [f64; 3]) -> RgbImage {
    let mut out = image.clone();
    let (w, h) = (image.width, image.height);
    if let Some(m) = mask {
        for (p, &on) in m.bits.iter().enumerate() {
            if on {
                for c in 0..3 {
                    out.data[p * 3 + c] = 0.5 * out.data[p * 3 + c] + 0.5 * TINT[c];
                }
            }
        }
    }
    if let Some([x1, y1, x2, y2]) = bbox {
        let clamp = |v: f64, hi: usize| (v.floor().max(0.0) as usize).min(hi - 1);
        let (x1, x2) = (clamp(x1, w), clamp(x2 - 1.0, w));
        let (y1, y2) = (clamp(y1, h), clamp(y2 - 1.0, h));
        let mut paint = |x: usize, y: usize| {
            let p = (y * w + x) * 3;
            out.data[p..p + 3].copy_from_slice(&outline);
        };
        for x in x1..=x2 {
            paint(x, y1);
            paint(x, y2);
        }
        for y in y1..=y2 {
            paint(x1, y);
            paint(x2, y);
        }
    }
    out
}

fn write_views(scene: &Scene, result: &GroundingResult, dir: &Path) -> Result<Vec<ViewReport>> {
    let views_dir = dir.join("views");
    fs::create_dir_all(&views_dir).map_err(|e| io_err(&views_dir, e))?;
    let mut reports = Vec::new();
    for o in &result.outcomes {
        let image = &result.plan.views[&o.camera_id].image;
        let outline = match o.instance_id {
            Some(id) if id == result.winner_id => [0.1, 0.9, 0.1],
            Some(_) => [0.9, 0.1, 0.1],
            None => [0.6, 0.6, 0.6],
        };
        let bbox = o.response.as_ref().map(|r| r.bbox.as_array());
        let name = format!("views/global_{:04}.png", o.camera_id);
        imageio::write_rgb(&annotate(image, o.mask2d.as_ref(), bbox, outline), &dir.join(&name))?;
        reports.push(ViewReport {
            camera_id: o.camera_id,
            bbox: o.response.as_ref().map(|r| r.bbox),
            category: o.response.as_ref().map(|r| r.category.clone()),
            rationale: o.response.as_ref().map(|r| r.rationale.clone()),
            instance_id: o.instance_id,
            overlap_fraction: o.overlap_fraction,
            mask_pixels: o.mask2d.as_ref().map_or(0, |m| m.count()),
            image: name,
        });
    }
    for &cam in &result.local_views {
        let image = &result.plan.views[&cam].image;
        let mask = render_hard_mask(scene, scene.camera(cam)?, result.final_mask())?;
        let name = format!("views/local_{cam:04}.png");
        imageio::write_rgb(&annotate(image, Some(&mask), None, [0.0; 3]), &dir.join(name))?;
    }
    Ok(reports)
}

pub fn ground(config: &Config, args: &GroundArgs) -> Result<PathBuf> {
    let (scene, classifier) = load_trained(&args.scene.scene, &args.scene.cameras, &args.classifier)?;
    let kind = args.backend.map_or(config.backend.kind, Into::into);
    let backend = make_backend(config, kind, args.manifest.as_deref())?;
    let mut grounding = config.grounding();
    grounding.skip_refine = args.skip_refine;
    let result = ground_query(&scene, &classifier, &args.query, &grounding, backend.as_ref())?;

    let dir = run_dir(config)?;
    save_mask3d(&result.coarse_mask, &dir.join("coarse.mask3d"))?;
    let refined = match &result.refine.mask {
        Some(m) => {
            save_mask3d(m, &dir.join("refined.mask3d"))?;
            Some("refined.mask3d".to_string())
        }
        None => None,
    };
    let final_mask = result.final_mask();
    save_mask3d(final_mask, &dir.join("mask.mask3d"))?;
    let selected = scene.filtered(&final_mask.hard());
    let selected_ply = if selected.is_empty() {
        None
    } else {
        save_scene(&selected, &dir.join("selected.ply"))?;
        Some("selected.ply".to_string())
    };
    let views = write_views(&scene, &result, &dir)?;
    let masks = MaskFiles {
        coarse: "coarse.mask3d".into(),
        refined,
        final_mask: "mask.mask3d".into(),
        selected_ply,
    };
    let report = GroundReport::new(&result, config.seed, backend_name(kind), views, masks);
    write_json(&dir.join("result.json"), &report)?;
    println!(
        "'{}' -> instance {} ({} gaussians, {} of {} views voted for it)",
        args.query,
        result.winner_id,
        final_mask.selected_count(),
        result.outcomes.iter().filter(|o| o.instance_id == Some(result.winner_id)).count(),
        result.outcomes.len()
    );
    Ok(dir)
}

pub fn edit(config: &Config, args: &EditArgs) -> Result<PathBuf> {
    let bytes = fs::read(&args.scene).map_err(|e| io_err(&args.scene, e))?;
    let scene = Scene::new(read_gaussians(&bytes)?, Vec::new())?;
    let mask = load_mask3d(&args.mask)?;
    let command = match (args.kind, &args.recolor) {
        (EditKind::Remove, None) => EditCommand::Remove,
        (EditKind::Remove, Some(_)) => return Err(Error::Input("--recolor only applies to recolor".into())),
        (EditKind::Recolor, Some(values)) => EditCommand::recolor_from_slice(values)?,
        (EditKind::Recolor, None) => return Err(Error::Input("recolor needs --recolor with 12 values".into())),
    };
    if mask.selected_count() == 0 {
        log::warn!("mask selects no gaussians");
    }
    let edited = command.apply(&scene, &mask)?;
    let dir = run_dir(config)?;
    save_scene(&edited, &dir.join("edited.ply"))?;
    println!("{} -> {} gaussians", scene.len(), edited.len());
    Ok(dir)
}

pub fn eval(config: &Config, args: &EvalArgs) -> Result<PathBuf> {
    let manifest = BenchmarkManifest::load(&args.manifest)?;
    let pick = |flag: &Option<PathBuf>, entry: &str| flag.clone().unwrap_or_else(|| manifest.resolve(entry));
    let (scene, classifier) = load_trained(
        &pick(&args.scene, &manifest.scene),
        &pick(&args.cameras, &manifest.cameras),
        &pick(&args.classifier, &manifest.classifier),
    )?;
    let kind = args.backend.map_or(config.backend.kind, Into::into);
    let backend = make_backend(config, kind, Some(&args.manifest))?;
    let cases = manifest.load_cases()?;
    let report = run_benchmark(
        &scene,
        &classifier,
        &cases,
        backend.as_ref(),
        &config.grounding(),
        args.band,
        args.parallel,
    )?;
    let dir = run_dir(config)?;
    write_json(&dir.join("report.json"), &report)?;
    print!("{}", report.table());
    Ok(dir)
}

pub fn render(config: &Config, args: &RenderArgs) -> Result<PathBuf> {
    if args.what == RenderWhat::Softmask && args.mask.is_none() {
        return Err(Error::Input("softmask rendering needs --mask".into()));
    }
    if args.what == RenderWhat::Idmap && args.classifier.is_none() {
        return Err(Error::Input("idmap rendering needs --classifier".into()));
    }
    let scene = match &args.classifier {
        Some(c) => load_trained(&args.scene.scene, &args.scene.cameras, c)?.0,
        None => load_scene(&args.scene.scene, &args.scene.cameras)?,
    };
    let camera = scene.camera(args.camera)?;
    let dir = run_dir(config)?;
    let name = match args.what {
        RenderWhat::Rgb => {
            let name = format!("rgb_{:04}.png", args.camera);
            imageio::write_rgb(&render_rgb(&scene, camera)?, &dir.join(&name))?;
            name
        }
        RenderWhat::Idmap => {
            let classifier = Classifier::load(args.classifier.as_deref().expect("checked above"))?;
            let map = render_identity_map(&scene, camera, &classifier)?;
            let name = format!("idmap_{:04}.png", args.camera);
            imageio::write_identity_map(&map, &dir.join(&name))?;
            let counts: BTreeMap<u16, usize> = map.ids.iter().fold(BTreeMap::new(), |mut m, &id| {
                *m.entry(id).or_default() += 1;
                m
            });
            println!("pixels per id: {counts:?}");
            name
        }
        RenderWhat::Softmask => {
            let mask = load_mask3d(args.mask.as_deref().expect("checked above"))?;
            let soft = render_soft_mask(&scene, camera, &mask)?;
            let name = format!("softmask_{:04}.png", args.camera);
            imageio::write_gray(&soft.values, soft.width(), soft.height(), &dir.join(&name))?;
            name
        }
    };
    println!("wrote {name} ({}x{})", camera.width, camera.height);
    Ok(dir)
}
