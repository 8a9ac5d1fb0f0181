//! The operations behind each `unmix-stereo` subcommand. Every command
//! returns a [`RunReport`]; callers decide where to print or store it.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{load_config, parse_config, ConfigOverrides};
use report::Stopwatch;
pub use report::{sha256_hex, ItemState, ItemStatus, RunReport, SCHEMA_VERSION};

use crate::error::{Error, Result};
use crate::imagebase::{
    load_image, load_kitti_disparity, load_pfm, save_image, save_kitti_disparity, save_pfm,
    BitDepth, DisparityMap, PlanarImage,
};
use crate::metrics::{
    bad_pixel_ratio, d1_all, disparity_to_depth, eigen_depth_metrics, psnr, psnr_with, PsnrOptions,
    DEFAULT_MAX_DEPTH, DEFAULT_MIN_DEPTH,
};
use crate::mixture::{compose, MixtureOperator, View};
use crate::oracle::{
    colorize_anaglyph, fill_occlusions, lr_consistency, match_left, match_right, rl_consistency,
};
use crate::solver::{ablate_separation_only, solve, Solution, SolverConfig, TraceEntry};
use crate::synthetic::{constant_shift_scene, random_two_plane_scene};

/// Warning attached to runs on a mixture with no usable texture.
pub const ILL_POSED_WARNING: &str =
    "ill-posed input: mixture is textureless, disparities are unconstrained";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads a disparity map by extension: `.pfm` as float, anything else as a
/// KITTI 16-bit PNG.
pub fn load_disparity(path: &Path) -> Result<DisparityMap> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pfm") => load_pfm(path),
        _ => load_kitti_disparity(path),
    }
}

pub fn cmd_compose(
    left: &Path,
    right: &Path,
    op: MixtureOperator,
    out: &Path,
) -> Result<RunReport> {
    let mut report = RunReport::new("compose");
    let mut clock = Stopwatch::start();
    report.input("left", left);
    report.input("right", right);
    report.operator = Some(op.name().into());
    let l = load_image(left)?;
    let r = load_image(right)?;
    let m = compose(op, &l, &r)?;
    report.timing.insert("compose".into(), clock.lap());
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_image(&m, out, BitDepth::Sixteen)?;
    report.artifact("mixture", out)?;
    for (key, path) in [("left", left), ("right", right)] {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        report
            .checksums
            .insert(format!("input_{key}"), sha256_hex(&bytes));
    }
    report.timing.insert("write".into(), clock.lap());
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UnmixOptions {
    pub ablate_separation_only: bool,
}

/// Writes the loss trace as CSV, one row per entry.
pub fn write_trace_csv(trace: &[TraceEntry], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([
        "phase",
        "level",
        "iteration",
        "step_size",
        "content_left",
        "content_right",
        "prior_left",
        "prior_right",
        "warp_left",
        "warp_right",
        "smooth_left",
        "smooth_right",
        "total",
    ])
    .map_err(|e| csv_error(path, e))?;
    for e in trace {
        let l = &e.loss;
        let phase = serde_json::to_value(e.phase)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        let mut row = vec![phase, e.level.to_string(), e.iteration.to_string()];
        row.extend(
            [
                e.step_size,
                l.content_left,
                l.content_right,
                l.prior_left,
                l.prior_right,
                l.warp_left,
                l.warp_right,
                l.smooth_left,
                l.smooth_right,
                l.total,
            ]
            .iter()
            .map(|v| v.to_string()),
        );
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Serialization(format!("{}: {e}", path.display()))
}

fn write_solution(
    sol: &Solution,
    op: MixtureOperator,
    mixture: &PlanarImage,
    dir: &Path,
    report: &mut RunReport,
) -> Result<()> {
    let p = |name: &str| dir.join(name);
    save_image(&sol.left, p("left.png"), BitDepth::Sixteen)?;
    save_image(&sol.right, p("right.png"), BitDepth::Sixteen)?;
    save_pfm(&sol.d_left, p("d_left.pfm"))?;
    save_pfm(&sol.d_right, p("d_right.pfm"))?;
    save_kitti_disparity(&sol.d_left, p("d_left.png"))?;
    save_kitti_disparity(&sol.d_right, p("d_right.png"))?;
    write_trace_csv(&sol.loss_trace, &p("trace.csv"))?;
    let mut names = vec![
        ("left", "left.png"),
        ("right", "right.png"),
        ("d_left_pfm", "d_left.pfm"),
        ("d_right_pfm", "d_right.pfm"),
        ("d_left_png", "d_left.png"),
        ("d_right_png", "d_right.png"),
        ("trace", "trace.csv"),
    ];
    if op == MixtureOperator::Anaglyph {
        let (cl, cr) = colorize_anaglyph(mixture, &sol.d_left, &sol.d_right)?;
        save_image(&cl, p("left_colorized.png"), BitDepth::Sixteen)?;
        save_image(&cr, p("right_colorized.png"), BitDepth::Sixteen)?;
        names.push(("left_colorized", "left_colorized.png"));
        names.push(("right_colorized", "right_colorized.png"));
    }
    for (key, file) in names {
        report.artifact(key, &p(file))?;
    }
    Ok(())
}

pub fn cmd_unmix(
    mixture_path: &Path,
    op: MixtureOperator,
    cfg: &SolverConfig,
    out_dir: &Path,
    opts: UnmixOptions,
) -> Result<RunReport> {
    let mut report = RunReport::new("unmix");
    let mut clock = Stopwatch::start();
    report.input("mixture", mixture_path);
    report.operator = Some(op.name().into());
    report.config = Some(*cfg);
    let mixture = load_image(mixture_path)?;
    report.timing.insert("load".into(), clock.lap());
    let sol = if opts.ablate_separation_only {
        ablate_separation_only(&mixture, op, cfg)?
    } else {
        solve(&mixture, op, cfg)?
    };
    report.timing.insert("solve".into(), clock.lap());
    create_dir(out_dir)?;
    write_solution(&sol, op, &mixture, out_dir, &mut report)?;
    report.timing.insert("write".into(), clock.lap());

    let last = sol.loss_trace.last().map(|e| e.loss).unwrap_or_default();
    report.metric("loss", last);
    report.metric("diagnostics", &sol.diagnostics);
    report.metric("ablate_separation_only", opts.ablate_separation_only);
    if sol.diagnostics.ill_posed {
        report.warnings.push(ILL_POSED_WARNING.into());
    }
    if sol.diagnostics.fell_back_to_initial {
        report.warnings.push(
            "optimization did not improve on the initialization; initialization returned".into(),
        );
    }
    let path = out_dir.join("report.json");
    report.write(&path)?;
    Ok(report)
}

pub fn cmd_colorize(
    mixture: &Path,
    d_left: &Path,
    d_right: &Path,
    out_dir: &Path,
) -> Result<RunReport> {
    let mut report = RunReport::new("colorize");
    let mut clock = Stopwatch::start();
    report.input("mixture", mixture);
    report.input("d_left", d_left);
    report.input("d_right", d_right);
    report.operator = Some(MixtureOperator::Anaglyph.name().into());
    let m = load_image(mixture)?;
    let (l, r) = colorize_anaglyph(&m, &load_disparity(d_left)?, &load_disparity(d_right)?)?;
    report.timing.insert("colorize".into(), clock.lap());
    create_dir(out_dir)?;
    for (key, img) in [("left", &l), ("right", &r)] {
        let path = out_dir.join(format!("{key}_colorized.png"));
        save_image(img, &path, BitDepth::Sixteen)?;
        report.artifact(key, &path)?;
    }
    report.timing.insert("write".into(), clock.lap());
    Ok(report)
}

pub fn cmd_oracle(left: &Path, right: &Path, d_max: usize, out_dir: &Path) -> Result<RunReport> {
    let mut report = RunReport::new("oracle");
    let mut clock = Stopwatch::start();
    report.input("left", left);
    report.input("right", right);
    let (l, r) = (load_image(left)?, load_image(right)?);
    let w = crate::losses::LossWeights::default();
    let dl = match_left(&l, &r, d_max, &w)?;
    let dr = match_right(&l, &r, d_max, &w)?;
    let ml = lr_consistency(&dl, &dr, crate::oracle::DEFAULT_LR_TAU)?;
    let mr = rl_consistency(&dl, &dr, crate::oracle::DEFAULT_LR_TAU)?;
    let (fl, fr) = (fill_occlusions(&dl, &ml)?, fill_occlusions(&dr, &mr)?);
    report.timing.insert("match".into(), clock.lap());
    report.metric("d_max", d_max);
    report.metric("occluded_left", ml.count());
    report.metric("occluded_right", mr.count());
    create_dir(out_dir)?;
    for (key, map) in [
        ("d_left", &dl),
        ("d_right", &dr),
        ("d_left_filled", &fl),
        ("d_right_filled", &fr),
    ] {
        let pfm = out_dir.join(format!("{key}.pfm"));
        let png = out_dir.join(format!("{key}.png"));
        save_pfm(map, &pfm)?;
        save_kitti_disparity(map, &png)?;
        report.artifact(&format!("{key}_pfm"), &pfm)?;
        report.artifact(&format!("{key}_png"), &png)?;
    }
    report.timing.insert("write".into(), clock.lap());
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalKind {
    Separation,
    Disparity,
    Depth,
}

impl std::str::FromStr for EvalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separation" => Ok(EvalKind::Separation),
            "disparity" => Ok(EvalKind::Disparity),
            "depth" => Ok(EvalKind::Depth),
            _ => Err(Error::InvalidArgument(format!(
                "unknown evaluation kind {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Extra bad-pixel threshold reported as `bad_tau`.
    pub tau: Option<f64>,
    /// Official KITTI D1 rule (3 px and 5%).
    pub official_d1: bool,
    /// Border excluded from PSNR.
    pub crop: usize,
    /// Multiplier applied to ground-truth disparities.
    pub gt_scale: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    /// With both set, depth evaluation converts disparity inputs.
    pub focal: Option<f64>,
    pub baseline: Option<f64>,
    pub csv: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            tau: None,
            official_d1: false,
            crop: 0,
            gt_scale: 1.0,
            min_depth: DEFAULT_MIN_DEPTH,
            max_depth: DEFAULT_MAX_DEPTH,
            focal: None,
            baseline: None,
            csv: None,
        }
    }
}

fn list_files(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && ext.as_deref().is_some_and(|e| exts.contains(&e)) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

fn scale_map(d: DisparityMap, s: f64) -> Result<DisparityMap> {
    if s == 1.0 {
        return Ok(d);
    }
    let values = d.values().iter().map(|v| v * s).collect();
    DisparityMap::with_validity(d.width(), d.height(), values, d.validity().to_vec())
}

fn evaluate_item(
    kind: EvalKind,
    pred: &Path,
    gt: &Path,
    opts: &EvalOptions,
) -> Result<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    match kind {
        EvalKind::Separation => {
            let (p, g) = (load_image(pred)?, load_image(gt)?);
            let v = psnr_with(
                &p,
                &g,
                &PsnrOptions {
                    crop: opts.crop,
                    channels: None,
                },
            )?;
            m.insert("psnr".into(), v);
        }
        EvalKind::Disparity => {
            let p = load_disparity(pred)?;
            let g = scale_map(load_disparity(gt)?, opts.gt_scale)?;
            m.insert("bad1".into(), bad_pixel_ratio(&p, &g, 1.0)?);
            m.insert("bad3".into(), bad_pixel_ratio(&p, &g, 3.0)?);
            m.insert("d1_all".into(), d1_all(&p, &g, opts.official_d1)?);
            if let Some(t) = opts.tau {
                m.insert("bad_tau".into(), bad_pixel_ratio(&p, &g, t)?);
            }
        }
        EvalKind::Depth => {
            let p = load_disparity(pred)?;
            let g = scale_map(load_disparity(gt)?, opts.gt_scale)?;
            let (p, g) = match (opts.focal, opts.baseline) {
                (Some(f), Some(b)) => {
                    (disparity_to_depth(&p, f, b)?, disparity_to_depth(&g, f, b)?)
                }
                (None, None) => (p, g),
                _ => {
                    return Err(Error::InvalidArgument(
                        "depth conversion needs both focal and baseline".into(),
                    ))
                }
            };
            let d = eigen_depth_metrics(&p, &g, opts.min_depth, opts.max_depth)?;
            for (k, v) in [
                ("abs_rel", d.abs_rel),
                ("sq_rel", d.sq_rel),
                ("rmse", d.rmse),
                ("rmse_log", d.rmse_log),
                ("delta1", d.delta1),
                ("delta2", d.delta2),
                ("delta3", d.delta3),
            ] {
                m.insert(k.into(), v);
            }
        }
    }
    Ok(m)
}

/// Compares same-named files in `pred_dir` and `gt_dir`. Files present on
/// only one side are reported as failed items; an empty intersection is an
/// error. For separation runs, items whose stem ends in `left`/`right` also
/// feed `psnr_left`/`psnr_right`.
pub fn cmd_evaluate(
    pred_dir: &Path,
    gt_dir: &Path,
    kind: EvalKind,
    opts: &EvalOptions,
) -> Result<RunReport> {
    let mut report = RunReport::new("evaluate");
    let mut clock = Stopwatch::start();
    report.input("pred_dir", pred_dir);
    report.input("gt_dir", gt_dir);
    let exts: &[&str] = match kind {
        EvalKind::Separation => &["png", "ppm", "pgm", "pnm"],
        EvalKind::Disparity | EvalKind::Depth => &["pfm", "png"],
    };
    let pred = list_files(pred_dir, exts)?;
    let gt = list_files(gt_dir, exts)?;
    let common: Vec<&String> = pred.keys().filter(|k| gt.contains_key(*k)).collect();
    if common.is_empty() {
        return Err(Error::EmptySet(format!(
            "no matching files between {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    for (name, side) in pred
        .keys()
        .filter(|k| !gt.contains_key(*k))
        .map(|k| (k, "ground truth"))
        .chain(
            gt.keys()
                .filter(|k| !pred.contains_key(*k))
                .map(|k| (k, "prediction")),
        )
    {
        report.items.push(ItemStatus {
            name: name.clone(),
            status: ItemState::Error,
            message: Some(format!("missing {side}")),
        });
    }

    let mut per_item = serde_json::Map::new();
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut rows = Vec::new();
    for name in common {
        match evaluate_item(kind, &pred[name], &gt[name], opts) {
            Ok(m) => {
                let stem = Path::new(name)
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("");
                for (k, v) in &m {
                    let mut keys = vec![k.clone()];
                    if k == "psnr" {
                        if stem.ends_with("left") {
                            keys.push("psnr_left".into());
                        } else if stem.ends_with("right") {
                            keys.push("psnr_right".into());
                        }
                    }
                    for key in keys {
                        let e = sums.entry(key).or_insert((0.0, 0));
                        e.0 += v;
                        e.1 += 1;
                    }
                }
                rows.push((name.clone(), m.clone()));
                per_item.insert(name.clone(), serde_json::to_value(&m).unwrap_or_default());
                report.items.push(ItemStatus {
                    name: name.clone(),
                    status: ItemState::Ok,
                    message: None,
                });
            }
            Err(e) => report.items.push(ItemStatus {
                name: name.clone(),
                status: ItemState::Error,
                message: Some(e.to_string()),
            }),
        }
    }
    report.items.sort_by(|a, b| a.name.cmp(&b.name));
    for (k, (s, n)) in &sums {
        report.metric(k, s / *n as f64);
    }
    report.metric("kind", kind);
    report.metric("items", serde_json::Value::Object(per_item));
    report.timing.insert("evaluate".into(), clock.lap());

    if let Some(csv_path) = &opts.csv {
        let keys: Vec<String> = sums
            .keys()
            .filter(|k| !k.starts_with("psnr_"))
            .cloned()
            .collect();
        let mut w = csv::Writer::from_path(csv_path).map_err(|e| csv_error(csv_path, e))?;
        let mut header = vec!["item".to_string()];
        header.extend(keys.iter().cloned());
        w.write_record(&header)
            .map_err(|e| csv_error(csv_path, e))?;
        for (name, m) in &rows {
            let mut rec = vec![name.clone()];
            rec.extend(
                keys.iter()
                    .map(|k| m.get(k).map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&rec).map_err(|e| csv_error(csv_path, e))?;
        }
        w.flush().map_err(|e| Error::io(csv_path, e))?;
        report.artifact("csv", csv_path)?;
    }
    Ok(report)
}

/// One stereo pair found in a benchmark directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchScene {
    pub name: String,
    pub left: PathBuf,
    pub right: PathBuf,
    pub gt_left: Option<PathBuf>,
}

/// Scans `<scene>_left.png` / `<scene>_right.png` (+ `<scene>_disp_left.pfm`).
/// Returns the complete pairs and the names of incomplete ones.
pub fn scan_dataset(dir: &Path) -> Result<(Vec<BenchScene>, Vec<String>)> {
    let files = list_files(dir, &["png", "pfm"])?;
    let mut scenes = Vec::new();
    let mut broken = Vec::new();
    for name in files.keys() {
        if let Some(scene) = name.strip_suffix("_left.png") {
            let right = format!("{scene}_right.png");
            if files.contains_key(&right) {
                let gt = format!("{scene}_disp_left.pfm");
                scenes.push(BenchScene {
                    name: scene.to_string(),
                    left: files[name].clone(),
                    right: files[&right].clone(),
                    gt_left: files.get(&gt).cloned(),
                });
            } else {
                broken.push(format!("{name}: missing {right}"));
            }
        } else if let Some(scene) = name.strip_suffix("_right.png") {
            if !files.contains_key(&format!("{scene}_left.png")) {
                broken.push(format!("{name}: missing {scene}_left.png"));
            }
        }
    }
    Ok((scenes, broken))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scene: String,
    pub psnr_left: f64,
    pub psnr_right: f64,
    pub psnr_left_ablation: f64,
    pub psnr_right_ablation: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_left_colorized: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_right_colorized: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bad1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bad3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d1_all: Option<f64>,
}

fn bench_scene(
    scene: &BenchScene,
    op: MixtureOperator,
    cfg: &SolverConfig,
    out_dir: &Path,
) -> Result<BenchRow> {
    let (l, r) = (load_image(&scene.left)?, load_image(&scene.right)?);
    let m = compose(op, &l, &r)?;
    let joint = solve(&m, op, cfg)?;
    let abl = ablate_separation_only(&m, op, cfg)?;
    let dir = out_dir.join(&scene.name);
    create_dir(&dir)?;
    save_image(&joint.left, dir.join("left.png"), BitDepth::Sixteen)?;
    save_image(&joint.right, dir.join("right.png"), BitDepth::Sixteen)?;
    save_pfm(&joint.d_left, dir.join("d_left.pfm"))?;
    save_pfm(&joint.d_right, dir.join("d_right.pfm"))?;
    write_trace_csv(&joint.loss_trace, &dir.join("trace.csv"))?;
    let mut row = BenchRow {
        scene: scene.name.clone(),
        psnr_left: psnr(&joint.left, &l)?,
        psnr_right: psnr(&joint.right, &r)?,
        psnr_left_ablation: psnr(&abl.left, &l)?,
        psnr_right_ablation: psnr(&abl.right, &r)?,
        psnr_left_colorized: None,
        psnr_right_colorized: None,
        bad1: None,
        bad3: None,
        d1_all: None,
    };
    if op == MixtureOperator::Anaglyph {
        let (cl, cr) = colorize_anaglyph(&m, &joint.d_left, &joint.d_right)?;
        let ch = |v: View| op.free_channels(v, 3);
        row.psnr_left_colorized = Some(psnr_with(
            &cl,
            &l,
            &PsnrOptions {
                crop: 0,
                channels: Some(ch(View::Left)),
            },
        )?);
        row.psnr_right_colorized = Some(psnr_with(
            &cr,
            &r,
            &PsnrOptions {
                crop: 0,
                channels: Some(ch(View::Right)),
            },
        )?);
    }
    if let Some(gt) = &scene.gt_left {
        let g = load_pfm(gt)?;
        row.bad1 = Some(bad_pixel_ratio(&joint.d_left, &g, 1.0)?);
        row.bad3 = Some(bad_pixel_ratio(&joint.d_left, &g, 3.0)?);
        row.d1_all = Some(d1_all(&joint.d_left, &g, false)?);
    }
    Ok(row)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Joint recovery against the separation-only ablation on every pair of a
/// dataset directory. Scenes run in parallel; results are assembled in
/// scene-name order.
pub fn cmd_bench(
    dataset: &Path,
    op: MixtureOperator,
    cfg: &SolverConfig,
    out_dir: &Path,
) -> Result<RunReport> {
    let mut report = RunReport::new("bench");
    let mut clock = Stopwatch::start();
    report.input("dataset", dataset);
    report.operator = Some(op.name().into());
    report.config = Some(*cfg);
    let (scenes, broken) = scan_dataset(dataset)?;
    if scenes.is_empty() {
        return Err(Error::EmptySet(format!(
            "no pairs found in {}",
            dataset.display()
        )));
    }
    create_dir(out_dir)?;
    let results: Vec<Result<BenchRow>> = scenes
        .par_iter()
        .map(|s| bench_scene(s, op, cfg, out_dir))
        .collect();
    report.timing.insert("solve".into(), clock.lap());

    for b in broken {
        let name = b.split(':').next().unwrap_or_default().to_string();
        report.items.push(ItemStatus {
            name,
            status: ItemState::Error,
            message: Some(b),
        });
    }
    let mut rows = Vec::new();
    for (scene, res) in scenes.iter().zip(results) {
        match res {
            Ok(row) => {
                report.items.push(ItemStatus {
                    name: scene.name.clone(),
                    status: ItemState::Ok,
                    message: None,
                });
                rows.push(row);
            }
            Err(e) => report.items.push(ItemStatus {
                name: scene.name.clone(),
                status: ItemState::Error,
                message: Some(e.to_string()),
            }),
        }
    }

    let table = out_dir.join("bench.csv");
    let mut w = csv::Writer::from_path(&table).map_err(|e| csv_error(&table, e))?;
    w.write_record([
        "scene",
        "psnr_left",
        "psnr_right",
        "psnr_left_ablation",
        "psnr_right_ablation",
        "bad1",
    ])
    .map_err(|e| csv_error(&table, e))?;
    for r in &rows {
        w.write_record([
            r.scene.clone(),
            r.psnr_left.to_string(),
            r.psnr_right.to_string(),
            r.psnr_left_ablation.to_string(),
            r.psnr_right_ablation.to_string(),
            r.bad1.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| csv_error(&table, e))?;
    }
    w.flush().map_err(|e| Error::io(&table, e))?;
    report.artifact("table", &table)?;

    let joint = mean(rows.iter().map(|r| 0.5 * (r.psnr_left + r.psnr_right)));
    let ablation = mean(
        rows.iter()
            .map(|r| 0.5 * (r.psnr_left_ablation + r.psnr_right_ablation)),
    );
    report.metric("psnr_left", mean(rows.iter().map(|r| r.psnr_left)));
    report.metric("psnr_right", mean(rows.iter().map(|r| r.psnr_right)));
    report.metric("psnr_joint", joint);
    report.metric("psnr_ablation", ablation);
    report.metric(
        "joint_beats_ablation",
        joint.zip(ablation).map(|(j, a)| j >= a),
    );
    report.metric("bad1", mean(rows.iter().filter_map(|r| r.bad1)));
    report.metric("bad3", mean(rows.iter().filter_map(|r| r.bad3)));
    report.metric("d1_all", mean(rows.iter().filter_map(|r| r.d1_all)));
    report.metric("scenes", &rows);
    report.timing.insert("report".into(), clock.lap());
    report.write(&out_dir.join("report.json"))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    ConstantShift,
    TwoPlane,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" | "constant-shift" => Ok(SceneKind::ConstantShift),
            "two-plane" => Ok(SceneKind::TwoPlane),
            _ => Err(Error::InvalidArgument(format!("unknown scene kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub kind: SceneKind,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// Shift of constant-disparity scenes.
    pub disparity: usize,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            kind: SceneKind::ConstantShift,
            count: 10,
            width: 128,
            height: 96,
            disparity: 4,
            seed: 0,
        }
    }
}

/// Writes a benchmark-layout dataset of synthetic pairs with ground truth.
pub fn cmd_synth(out_dir: &Path, opts: &SynthOptions) -> Result<RunReport> {
    let mut report = RunReport::new("synth");
    let mut clock = Stopwatch::start();
    create_dir(out_dir)?;
    report.metric("kind", opts.kind);
    report.metric("count", opts.count);
    for i in 0..opts.count {
        let seed = opts.seed + i as u64;
        let scene = match opts.kind {
            SceneKind::ConstantShift => {
                constant_shift_scene(opts.width, opts.height, opts.disparity, seed)?
            }
            SceneKind::TwoPlane => random_two_plane_scene(opts.width, opts.height, seed)?,
        };
        let name = format!("scene{i:03}");
        let files = [
            (format!("{name}_left.png"), "left"),
            (format!("{name}_right.png"), "right"),
        ];
        save_image(&scene.left, out_dir.join(&files[0].0), BitDepth::Sixteen)?;
        save_image(&scene.right, out_dir.join(&files[1].0), BitDepth::Sixteen)?;
        let gt = out_dir.join(format!("{name}_disp_left.pfm"));
        save_pfm(&scene.d_left, &gt)?;
        for (file, view) in &files {
            report.artifact(&format!("{name}_{view}"), &out_dir.join(file))?;
        }
        report.artifact(&format!("{name}_disp_left"), &gt)?;
    }
    report.timing.insert("generate".into(), clock.lap());
    Ok(report)
}
