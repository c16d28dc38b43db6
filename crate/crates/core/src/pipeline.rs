//! Batch commands over a manifest: score, calibrate and fuse, evaluate, and
//! synthesize data. Every command writes under one output directory with
//! fixed file names, so reruns with the same inputs are byte-identical.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dtf::{self, read_typed, write_typed, Tensor};
use crate::error::{Error, Result};
use crate::manifest::{load_validated, read_panoptic, write_json, write_panoptic, Manifest, Record};
use crate::mask_scores::{mask_confidence_counts, Detector, MaskMethod};
use crate::metrics::{miou, ConfusionMatrix, PanopticStats, ScoreAccumulator, EXACT_LIMIT};
use crate::negdata::{paste_instance, paste_patch, BinaryMask, MixedSample, PasteMode, PasteSpec};
use crate::openset::{calibrate_from, fuse_open_masks, panoptic_assemble, PanopticConfig, ThresholdCalibration};
use crate::pixel_scores::{pixel_score, PixelMethod};
use crate::pnm::{read_ppm, write_pgm16, write_ppm};
use crate::synthgen::{gen_scene, SceneConfig};
use crate::tensor::{float_tensor, AnomalyMap, LabelMap};
use crate::Scalar;

pub const WORKERS_ENV: &str = "MASKOOD_WORKERS";
pub const METRICS_FILE: &str = "metrics.json";
pub const PR_CURVE_FILE: &str = "pr_curve.csv";
pub const ROC_CURVE_FILE: &str = "roc_curve.csv";
pub const HIST_INLIER_FILE: &str = "hist_inlier.csv";
pub const HIST_OUTLIER_FILE: &str = "hist_outlier.csv";
pub const SCORES_DIR: &str = "scores";
pub const LABELS_DIR: &str = "labels";
pub const PANOPTIC_DIR: &str = "panoptic";
pub const DEFAULT_BINS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::invalid(format!("unknown precision {s:?}"))),
        }
    }
}

/// A scoring method selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mask(MaskMethod),
    Pixel(PixelMethod),
}

impl Method {
    pub const NAMES: [&'static str; 9] = ["am", "ahm", "aem", "eam", "msp", "maxlogit", "entropy", "energy", "kl"];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mask(MaskMethod::Am) => "am",
            Method::Mask(MaskMethod::Ahm) => "ahm",
            Method::Mask(MaskMethod::Aem) => "aem",
            Method::Mask(MaskMethod::Eam) => "eam",
            Method::Pixel(PixelMethod::MaxSoftmax) => "msp",
            Method::Pixel(PixelMethod::MaxLogit) => "maxlogit",
            Method::Pixel(PixelMethod::Entropy) => "entropy",
            Method::Pixel(PixelMethod::Energy) => "energy",
            Method::Pixel(PixelMethod::KlUniform) => "kl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "am" => Method::Mask(MaskMethod::Am),
            "ahm" => Method::Mask(MaskMethod::Ahm),
            "aem" => Method::Mask(MaskMethod::Aem),
            "eam" => Method::Mask(MaskMethod::Eam),
            "msp" => Method::Pixel(PixelMethod::MaxSoftmax),
            "maxlogit" => Method::Pixel(PixelMethod::MaxLogit),
            "entropy" => Method::Pixel(PixelMethod::Entropy),
            "energy" => Method::Pixel(PixelMethod::Energy),
            "kl" => Method::Pixel(PixelMethod::KlUniform),
            _ => {
                return Err(Error::invalid(format!(
                    "unknown method {s:?}, expected one of {}",
                    Method::NAMES.join(", ")
                )))
            }
        })
    }
}

/// How the anomaly threshold of the open-set commands is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    /// Calibrated on the manifest's outlier ground truth.
    Calibrate {
        target_tpr: f64,
    },
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Calibrate { target_tpr: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PasteInlier {
    pub image_id: String,
    pub image_path: String,
    /// u8 tensor K×H×W, nonzero = class present.
    pub class_masks_path: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PasteNegative {
    pub image_path: String,
    /// u8 tensor H×W.
    pub mask_path: String,
}

/// Input list of the `paste` command. Paths are relative to the list file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PasteInputs {
    pub inliers: Vec<PasteInlier>,
    #[serde(default)]
    pub negatives: Vec<PasteNegative>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PasteRecord {
    pub image_id: String,
    pub image_path: String,
    pub class_masks_path: String,
    pub void_mask_path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Score { method: Method, detector: Detector, pgm: bool },
    Openset { threshold: Threshold },
    PanopticInfer { threshold: Threshold, min_pixels: usize, mask_conf_threshold: f64, things: Option<PathBuf> },
    EvalOod { bins: Option<usize> },
    EvalSeg,
    EvalPanoptic,
    Paste { inputs: PathBuf, spec: PasteSpec },
    Synth { scene: SceneConfig, count: usize },
    Hist { bins: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    /// 0 lets the pool pick; the environment variable overrides either.
    pub workers: usize,
    pub precision: Precision,
}

impl RunConfig {
    pub fn effective_workers(&self) -> Result<usize> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| Error::invalid(format!("{WORKERS_ENV}={v:?} is not a worker count"))),
            Err(_) => Ok(self.workers),
        }
    }

    fn load_manifest(&self) -> Result<Manifest> {
        let path = self.manifest.as_ref().ok_or_else(|| Error::invalid("this command needs a manifest"))?;
        Manifest::load(path)
    }
}

pub fn run(cfg: &RunConfig, cmd: &Command) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.effective_workers()?)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    mkdir(&cfg.out)?;
    pool.install(|| match cfg.precision {
        Precision::F32 => dispatch::<f32>(cfg, cmd),
        Precision::F64 => dispatch::<f64>(cfg, cmd),
    })
}

fn dispatch<T: Scalar>(cfg: &RunConfig, cmd: &Command) -> Result<()> {
    match cmd {
        Command::Score { method, detector, pgm } => score::<T>(cfg, *method, detector, *pgm),
        Command::Openset { threshold } => openset::<T>(cfg, *threshold),
        Command::PanopticInfer { threshold, min_pixels, mask_conf_threshold, things } => {
            panoptic_infer::<T>(cfg, *threshold, *min_pixels, *mask_conf_threshold, things.as_deref())
        }
        Command::EvalOod { bins } => eval_ood::<T>(cfg, *bins),
        Command::EvalSeg => eval_seg(cfg),
        Command::EvalPanoptic => eval_panoptic(cfg),
        Command::Paste { inputs, spec } => paste(cfg, inputs, spec),
        Command::Synth { scene, count } => synth::<T>(cfg, scene, *count),
        Command::Hist { bins } => hist::<T>(cfg, *bins),
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs `f` on every record in parallel; results keep manifest order and the
/// first failing record (in manifest order) is reported.
fn per_record<R: Send>(manifest: &Manifest, f: impl Fn(&Record) -> Result<R> + Sync) -> Result<Vec<R>> {
    let results: Vec<Result<R>> =
        manifest.records.par_iter().map(|r| f(r).map_err(|e| e.in_record(&r.image_id))).collect();
    results.into_iter().collect()
}

fn scores_path(out: &Path, id: &str) -> PathBuf {
    out.join(SCORES_DIR).join(format!("{id}.dtf"))
}

fn read_scores<T: Scalar>(out: &Path, id: &str) -> Result<AnomalyMap<T>> {
    AnomalyMap::from_tensor(dtf::read_tensor(scores_path(out, id))?.into_float()?)
}

fn read_ood_gt(manifest: &Manifest, record: &Record) -> Result<LabelMap> {
    let rel = record.ood_gt_path.as_ref().ok_or_else(|| Error::invalid("record has no ood_gt_path"))?;
    LabelMap::from_tensor(1, read_typed(manifest.resolve(rel))?)
}

fn n_classes(manifest: &Manifest, record: &Record) -> Result<usize> {
    let cls = dtf::read_tensor(manifest.resolve(&record.cls_path))?;
    match cls.shape() {
        [_, cols] if *cols >= 2 => Ok(cols - 1),
        s => Err(Error::shape(format!("class scores must be N×(K+1), got {s:?}"))),
    }
}

/// Merges `entries` into the metrics file, keeping keys sorted.
fn merge_metrics(out: &Path, entries: Map<String, Value>) -> Result<()> {
    let path = out.join(METRICS_FILE);
    let mut current = match fs::read_to_string(&path) {
        Ok(text) => match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(m)) => m,
            Ok(_) => Map::new(),
            Err(e) => return Err(Error::Json { path, source: e }),
        },
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Map::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    current.extend(entries);
    write_json(&path, &Value::Object(current))
}

fn write_csv<const N: usize>(path: &Path, header: [&str; N], rows: impl Iterator<Item = [f64; N]>) -> Result<()> {
    let csv_error = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::invalid(format!("csv {}: {kind:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row.map(|v| v.to_string())).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("metrics are built from json objects"),
    }
}

fn score<T: Scalar>(cfg: &RunConfig, method: Method, detector: &Detector, pgm: bool) -> Result<()> {
    detector.validate()?;
    let manifest = cfg.load_manifest()?;
    let dir = cfg.out.join(SCORES_DIR);
    mkdir(&dir)?;
    per_record(&manifest, |rec| {
        if matches!(method, Method::Pixel(_)) && rec.pixel_logits_path.is_none() {
            return Err(Error::PixelLogitsRequired(rec.image_id.clone()));
        }
        let loaded = load_validated::<T>(&manifest, rec)?;
        let s = match method {
            Method::Mask(m) => m.score(&loaded.masks, &loaded.cls, detector)?,
            Method::Pixel(p) => {
                let logits =
                    loaded.pixel_logits.as_ref().ok_or_else(|| Error::PixelLogitsRequired(rec.image_id.clone()))?;
                pixel_score(logits, p)?
            }
        };
        dtf::write_tensor(scores_path(&cfg.out, &rec.image_id), &float_tensor(s.to_tensor()))?;
        if pgm {
            write_pgm16(dir.join(format!("{}.pgm", rec.image_id)), &s)?;
        }
        Ok(())
    })?;
    write_json(
        dir.join("meta.json"),
        &json!({ "method": method.name(), "detector": detector, "precision": cfg.precision }),
    )
}

/// Pools the scores of every record, exact when small enough, binned otherwise.
fn collect_scores<T: Scalar>(cfg: &RunConfig, manifest: &Manifest, bins: Option<usize>) -> Result<ScoreAccumulator> {
    let ranges = per_record(manifest, |rec| {
        let s = read_scores::<T>(&cfg.out, &rec.image_id)?;
        let gt = read_ood_gt(manifest, rec)?;
        let labeled = gt.data.iter().filter(|&&g| g != crate::IGNORE).count();
        Ok((labeled, s.range()))
    })?;
    let total: u64 = ranges.iter().map(|r| r.0 as u64).sum();
    let proto = if bins.is_none() && total <= EXACT_LIMIT {
        ScoreAccumulator::exact()
    } else {
        let (lo, hi) = ranges
            .iter()
            .filter_map(|r| r.1)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| (lo.min(a.as_f64()), hi.max(b.as_f64())));
        let (lo, hi) = if lo.is_finite() { (lo, if hi > lo { hi } else { lo + 1.0 }) } else { (0.0, 1.0) };
        ScoreAccumulator::binned(bins.unwrap_or(DEFAULT_BINS), lo, hi)?
    };
    let parts = per_record(manifest, |rec| {
        let mut acc = proto.empty_like();
        acc.accumulate(&read_scores::<T>(&cfg.out, &rec.image_id)?, &read_ood_gt(manifest, rec)?)?;
        Ok(acc)
    })?;
    let mut acc = proto;
    for part in parts {
        acc.merge(part)?;
    }
    Ok(acc)
}

fn resolve_threshold<T: Scalar>(
    cfg: &RunConfig,
    manifest: &Manifest,
    threshold: Threshold,
) -> Result<(f64, Option<ThresholdCalibration>)> {
    match threshold {
        Threshold::Fixed(tau) if tau.is_finite() => Ok((tau, None)),
        Threshold::Fixed(tau) => Err(Error::invalid(format!("threshold must be finite, got {tau}"))),
        Threshold::Calibrate { target_tpr } => {
            let acc = collect_scores::<T>(cfg, manifest, None)?;
            let cal = calibrate_from(&acc, target_tpr)?;
            Ok((cal.tau, Some(cal)))
        }
    }
}

fn threshold_metrics(tau: f64, cal: Option<ThresholdCalibration>) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("tau".into(), json!(tau));
    if let Some(c) = cal {
        m.insert("calibration_target_tpr".into(), json!(c.target_tpr));
        m.insert("calibration_tpr".into(), json!(c.achieved_tpr));
        m.insert("calibration_fpr".into(), json!(c.achieved_fpr));
    }
    m
}

fn openset<T: Scalar>(cfg: &RunConfig, threshold: Threshold) -> Result<()> {
    let manifest = cfg.load_manifest()?;
    let (tau, cal) = resolve_threshold::<T>(cfg, &manifest, threshold)?;
    let dir = cfg.out.join(LABELS_DIR);
    mkdir(&dir)?;
    per_record(&manifest, |rec| {
        let loaded = load_validated::<T>(&manifest, rec)?;
        let s = read_scores::<T>(&cfg.out, &rec.image_id)?;
        let labels = fuse_open_masks(&loaded.masks, &loaded.cls, &s, T::lit(tau))?;
        write_typed(dir.join(format!("{}.dtf", rec.image_id)), labels.to_tensor())
    })?;
    merge_metrics(&cfg.out, threshold_metrics(tau, cal))
}

fn load_things(cfg: &RunConfig, explicit: Option<&Path>) -> Result<Vec<u8>> {
    let default = cfg.manifest.as_ref().and_then(|m| m.parent()).map(|d| d.join("things.json"));
    let path = match (explicit, default) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) if p.is_file() => p,
        _ => return Ok(Vec::new()),
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path, source: e })
}

fn panoptic_infer<T: Scalar>(
    cfg: &RunConfig,
    threshold: Threshold,
    min_pixels: usize,
    mask_conf_threshold: f64,
    things: Option<&Path>,
) -> Result<()> {
    let manifest = cfg.load_manifest()?;
    let pcfg = PanopticConfig { min_pixels, mask_conf_threshold, thing_classes: load_things(cfg, things)? };
    let (tau, cal) = resolve_threshold::<T>(cfg, &manifest, threshold)?;
    let dir = cfg.out.join(PANOPTIC_DIR);
    mkdir(&dir)?;
    per_record(&manifest, |rec| {
        let loaded = load_validated::<T>(&manifest, rec)?;
        let s = read_scores::<T>(&cfg.out, &rec.image_id)?;
        let map = panoptic_assemble(&loaded.masks, &loaded.cls, &s, T::lit(tau), &pcfg)?;
        write_panoptic(&dir.join(&rec.image_id), &map)
    })?;
    merge_metrics(&cfg.out, threshold_metrics(tau, cal))
}

fn eval_ood<T: Scalar>(cfg: &RunConfig, bins: Option<usize>) -> Result<()> {
    let manifest = cfg.load_manifest()?;
    let acc = collect_scores::<T>(cfg, &manifest, bins)?;
    let curve = acc.curve();
    let (outliers, inliers) = acc.totals();
    let mut m = object(json!({
        "ap": curve.average_precision()?,
        "fpr95": curve.fpr_at_tpr(0.95)?,
        "fpr90": curve.fpr_at_tpr(0.90)?,
        "auroc": curve.auroc()?,
        "n_outlier": outliers,
        "n_inlier": inliers,
        "accumulator": if matches!(acc, ScoreAccumulator::Exact(_)) { "exact" } else { "binned" },
    }));
    let meta = cfg.out.join(SCORES_DIR).join("meta.json");
    if let Ok(text) = fs::read_to_string(&meta) {
        if let Ok(Value::Object(meta)) = serde_json::from_str::<Value>(&text) {
            if let Some(method) = meta.get("method") {
                m.insert("method".into(), method.clone());
            }
        }
    }
    write_csv(
        &cfg.out.join(PR_CURVE_FILE),
        ["threshold", "precision", "recall"],
        curve.pr_points().into_iter().map(|(t, p, r)| [t, p, r]),
    )?;
    write_csv(
        &cfg.out.join(ROC_CURVE_FILE),
        ["threshold", "fpr", "tpr"],
        curve.roc_points().into_iter().map(|(t, f, r)| [t, f, r]),
    )?;
    merge_metrics(&cfg.out, m)
}

fn eval_seg(cfg: &RunConfig) -> Result<()> {
    let manifest = cfg.load_manifest()?;
    let parts = per_record(&manifest, |rec| {
        let k = n_classes(&manifest, rec)?;
        let rel = rec.gt_semantic_path.as_ref().ok_or_else(|| Error::invalid("record has no gt_semantic_path"))?;
        let gt = LabelMap::from_tensor(k, read_typed(manifest.resolve(rel))?)?;
        let pred =
            LabelMap::from_tensor(k, read_typed(cfg.out.join(LABELS_DIR).join(format!("{}.dtf", rec.image_id)))?)?;
        let mut cm = ConfusionMatrix::new(k);
        cm.accumulate(&pred, &gt)?;
        Ok(cm)
    })?;
    let mut parts = parts.into_iter();
    let mut cm = parts.next().ok_or_else(|| Error::invalid("manifest has no records"))?;
    for part in parts {
        cm.merge(&part)?;
    }
    let m = object(json!({ "miou": miou(&cm)?, "class_iou": cm.class_iou() }));
    merge_metrics(&cfg.out, m)
}

fn eval_panoptic(cfg: &RunConfig) -> Result<()> {
    let manifest = cfg.load_manifest()?;
    let parts = per_record(&manifest, |rec| {
        let k = n_classes(&manifest, rec)?;
        let rel = rec.gt_panoptic_path.as_ref().ok_or_else(|| Error::invalid("record has no gt_panoptic_path"))?;
        let gt = read_panoptic(&manifest.resolve(rel))?;
        let pred = read_panoptic(&cfg.out.join(PANOPTIC_DIR).join(&rec.image_id))?;
        let mut stats = PanopticStats::default();
        stats.accumulate(&pred, &gt)?;
        Ok((k, stats))
    })?;
    let k = parts.first().map(|p| p.0).ok_or_else(|| Error::invalid("manifest has no records"))?;
    if parts.iter().any(|p| p.0 != k) {
        return Err(Error::invalid("records disagree on the class count"));
    }
    let mut stats = PanopticStats::default();
    for (_, part) in &parts {
        stats.merge(part);
    }
    let known: Vec<u8> = (0..k as u8).collect();
    let result = stats.summarize(&known, k as u8);
    let q = |q: Option<crate::metrics::Quality>| {
        q.map_or((Value::Null, Value::Null, Value::Null), |q| (json!(q.pq), json!(q.sq), json!(q.rq)))
    };
    let (pq, sq, rq) = q(result.known);
    let (pqu, squ, rqu) = q(result.unknown);
    let m = object(json!({
        "pq": pq, "sq": sq, "rq": rq,
        "pq_unknown": pqu, "sq_unknown": squ, "rq_unknown": rqu,
    }));
    merge_metrics(&cfg.out, m)
}

fn hist<T: Scalar>(cfg: &RunConfig, bins: usize) -> Result<()> {
    let manifest = cfg.load_manifest()?;
    let parts = per_record(&manifest, |rec| {
        let loaded = load_validated::<T>(&manifest, rec)?;
        mask_confidence_counts(&loaded.masks, &read_ood_gt(&manifest, rec)?, bins)
    })?;
    let mut counts = [vec![0u64; bins], vec![0u64; bins]];
    for part in parts {
        for (total, p) in counts.iter_mut().zip(part) {
            total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
        }
    }
    if counts.iter().all(|c| c.iter().all(|&v| v == 0)) {
        return Err(Error::EmptyPartition("no inlier or outlier pixels"));
    }
    for (c, name) in counts.iter().zip([HIST_INLIER_FILE, HIST_OUTLIER_FILE]) {
        let total: u64 = c.iter().sum();
        let rows =
            c.iter().enumerate().filter(|_| total > 0).map(|(b, &v)| [b as f64 / bins as f64, v as f64 / total as f64]);
        write_csv(&cfg.out.join(name), ["bin", "frequency"], rows)?;
    }
    Ok(())
}

fn synth<T: Scalar>(cfg: &RunConfig, scene: &SceneConfig, count: usize) -> Result<()> {
    scene.validate()?;
    let dir = cfg.out.join("scenes");
    mkdir(&dir)?;
    let results: Vec<Result<Record>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let id = format!("scene_{i:04}");
            let s = gen_scene::<T>(&SceneConfig { seed: scene.seed ^ i as u64, ..scene.clone() })?;
            let rel = |suffix: &str| format!("scenes/{id}.{suffix}");
            dtf::write_tensor(cfg.out.join(rel("masks.dtf")), &float_tensor(s.masks.to_tensor()))?;
            dtf::write_tensor(cfg.out.join(rel("cls.dtf")), &float_tensor(s.cls.to_tensor()))?;
            dtf::write_tensor(cfg.out.join(rel("logits.dtf")), &float_tensor(s.pixel_logits.to_tensor()))?;
            write_typed(cfg.out.join(rel("semantic.dtf")), s.gt_semantic.to_tensor())?;
            write_typed(cfg.out.join(rel("ood.dtf")), s.ood_gt.to_tensor())?;
            write_panoptic(&cfg.out.join(rel("panoptic")), &s.gt_panoptic)?;
            Ok(Record {
                image_id: id.clone(),
                masks_path: rel("masks.dtf"),
                cls_path: rel("cls.dtf"),
                pixel_logits_path: Some(rel("logits.dtf")),
                gt_semantic_path: Some(rel("semantic.dtf")),
                gt_panoptic_path: Some(rel("panoptic")),
                ood_gt_path: Some(rel("ood.dtf")),
            })
        })
        .collect();
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    Manifest { records, base_dir: cfg.out.clone() }.save(cfg.out.join("manifest.json"))?;
    write_json(cfg.out.join("things.json"), &scene.things())?;
    write_json(cfg.out.join("scene_config.json"), scene)
}

fn read_masks(path: &Path) -> Result<Vec<BinaryMask>> {
    let t: Tensor<u8> = read_typed(path)?;
    let [k, h, w] = match t.shape[..] {
        [k, h, w] => [k, h, w],
        _ => return Err(Error::shape(format!("class masks must be K×H×W, got {:?}", t.shape))),
    };
    (0..k).map(|c| BinaryMask::from_u8(h, w, &t.data[c * h * w..(c + 1) * h * w])).collect()
}

fn read_mask(path: &Path) -> Result<BinaryMask> {
    let t: Tensor<u8> = read_typed(path)?;
    match t.shape[..] {
        [h, w] => BinaryMask::from_u8(h, w, &t.data),
        _ => Err(Error::shape(format!("mask must be H×W, got {:?}", t.shape))),
    }
}

fn paste(cfg: &RunConfig, inputs_path: &Path, spec: &PasteSpec) -> Result<()> {
    spec.validate()?;
    let text = fs::read_to_string(inputs_path).map_err(|e| Error::io(inputs_path, e))?;
    let inputs: PasteInputs =
        serde_json::from_str(&text).map_err(|e| Error::Json { path: inputs_path.into(), source: e })?;
    let base = inputs_path.parent().map(Path::to_path_buf).unwrap_or_default();
    if spec.mode == PasteMode::Instance && inputs.negatives.is_empty() {
        return Err(Error::invalid("instance pasting needs at least one negative"));
    }
    let dir = cfg.out.join("paste");
    mkdir(&dir)?;
    let n = inputs.inliers.len();
    let paste_one = |i: usize| -> Result<PasteRecord> {
        let inlier = &inputs.inliers[i];
        let sample_spec = spec.derived(i as u64);
        let image = read_ppm(base.join(&inlier.image_path))?;
        let masks = read_masks(&base.join(&inlier.class_masks_path))?;
        let sample: MixedSample = match spec.mode {
            PasteMode::Instance => {
                let neg = &inputs.negatives[i % inputs.negatives.len()];
                let neg_image = read_ppm(base.join(&neg.image_path))?;
                let neg_mask = read_mask(&base.join(&neg.mask_path))?;
                paste_instance(&image, &masks, &neg_image, &neg_mask, &sample_spec)?
            }
            PasteMode::Patch => {
                // donor is the next image of the batch
                let donor = read_ppm(base.join(&inputs.inliers[(i + 1) % n].image_path))?;
                paste_patch(&image, &masks, &donor, &sample_spec)?
            }
        };
        let id = &inlier.image_id;
        let rec = PasteRecord {
            image_id: id.clone(),
            image_path: format!("paste/{id}.ppm"),
            class_masks_path: format!("paste/{id}.classes.dtf"),
            void_mask_path: format!("paste/{id}.void.dtf"),
        };
        let (h, w) = (sample.image.height, sample.image.width);
        write_ppm(cfg.out.join(&rec.image_path), &sample.image)?;
        let k = sample.class_masks.len();
        let data = sample.class_masks.iter().flat_map(|m| m.to_u8()).collect();
        write_typed(cfg.out.join(&rec.class_masks_path), Tensor::new(vec![k, h, w], data)?)?;
        write_typed(cfg.out.join(&rec.void_mask_path), Tensor::new(vec![h, w], sample.void_mask.to_u8())?)?;
        Ok(rec)
    };
    let results: Vec<Result<PasteRecord>> =
        (0..n).into_par_iter().map(|i| paste_one(i).map_err(|e| e.in_record(&inputs.inliers[i].image_id))).collect();
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_json(cfg.out.join("paste_manifest.json"), &records)
}
