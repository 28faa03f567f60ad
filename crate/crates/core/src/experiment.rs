//! Experiment configuration, orchestration and on-disk artifacts.
//!
//! A run writes into one directory:
//!
//! * `frames_<augmentor>.csv`: one row per tracked frame,
//! * `resets_<augmentor>.csv`: one row per sequence of the reset protocol,
//! * `summary.json` and `success_plot.csv`, both derived from the CSVs,
//! * `mixnet.dmix` / `single.dmix` when a network had to be trained.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::eval::{ope_summary, reset_eval, success_curve, FrameResult, ResetOutcome, SequenceRunner};
use crate::geometry::BoundingBox;
use crate::mixnet::{Branches, MixNet};
use crate::opt::OptConfig;
use crate::sim::{gen_sequence, run_tracker, Augmentor, Difficulty, EmbeddingExtractor, SceneConfig, SyntheticSequence, Tracker, TrackerConfig, TrackerMode};
use crate::train::{train_mixnet, CorpusConfig, TrainConfig};
use crate::Rng;

pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "success_plot.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentorKind {
    None,
    Mixnet,
    Single,
    Opt,
}

impl AugmentorKind {
    pub const ALL: [AugmentorKind; 4] = [Self::None, Self::Mixnet, Self::Single, Self::Opt];
    /// Which augmentor's metrics are repeated at the top of the summary.
    const PRIMARY_ORDER: [AugmentorKind; 4] = [Self::Mixnet, Self::Single, Self::Opt, Self::None];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Mixnet => "mixnet",
            Self::Single => "single",
            Self::Opt => "opt",
        }
    }

    pub fn branches(self) -> Option<Branches> {
        match self {
            Self::Mixnet => Some(Branches::Dual),
            Self::Single => Some(Branches::Single),
            _ => None,
        }
    }

    pub fn frames_file(self) -> String {
        format!("frames_{}.csv", self.name())
    }

    pub fn resets_file(self) -> String {
        format!("resets_{}.csv", self.name())
    }
}

impl fmt::Display for AugmentorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentor {s:?}; expected none, mixnet, single or opt")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub augmentors: Vec<AugmentorKind>,
    pub sequences: usize,
    pub frames: usize,
    pub seed: u64,
    pub scene: SceneConfig,
    pub channels: usize,
    pub stride: usize,
    pub extractor_seed: u64,
    pub tracker: TrackerConfig,
    pub train: TrainConfig,
    pub opt: OptConfig,
    pub weights: Option<PathBuf>,
    pub single_weights: Option<PathBuf>,
    pub reset: bool,
    pub fail_iou: f64,
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_mode(TrackerMode::Classifier)
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value {value:?} for key {key}; expected true or false"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

/// `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn for_mode(mode: TrackerMode) -> Self {
        Self {
            augmentors: vec![AugmentorKind::None, AugmentorKind::Mixnet],
            sequences: 2,
            frames: 50,
            seed: 1,
            scene: SceneConfig {
                height: 64,
                width: 64,
                object_w: 16,
                object_h: 16,
                difficulty: Difficulty::default(),
            },
            channels: 8,
            stride: 4,
            extractor_seed: 1,
            tracker: TrackerConfig::for_mode(mode),
            train: TrainConfig::default(),
            opt: OptConfig::default(),
            weights: None,
            single_weights: None,
            reset: true,
            fail_iou: 0.0,
            timing: true,
        }
    }

    /// Build from pairs. `mode` is applied first so the mode-dependent
    /// defaults (capacity, update period) can be overridden by later keys;
    /// repeated keys take the last value.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mode = match pairs.iter().rev().find(|(k, _)| k == "mode") {
            Some((_, v)) => v.parse::<TrackerMode>().map_err(|_| Error::Config(format!("bad mode {v:?}")))?,
            None => TrackerMode::Classifier,
        };
        let mut cfg = Self::for_mode(mode);
        for (k, v) in pairs.iter().filter(|(k, _)| k != "mode") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    /// Read a config file, then apply `overrides` on top.
    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = parse_pairs(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        pairs.extend_from_slice(overrides);
        Self::from_pairs(&pairs).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.scene.difficulty;
        let t = &mut self.tracker;
        match key {
            "augmentors" => {
                let mut list = Vec::new();
                for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let kind: AugmentorKind = name.parse()?;
                    if !list.contains(&kind) {
                        list.push(kind);
                    }
                }
                self.augmentors = list;
            }
            "sequences" => self.sequences = parse_value(key, v)?,
            "frames" => self.frames = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "height" => self.scene.height = parse_value(key, v)?,
            "width" => self.scene.width = parse_value(key, v)?,
            "object_w" => self.scene.object_w = parse_value(key, v)?,
            "object_h" => self.scene.object_h = parse_value(key, v)?,
            "motion" => d.motion = parse_value(key, v)?,
            "drift" => d.drift = parse_value(key, v)?,
            "noise" => d.noise = parse_value(key, v)?,
            "distractors" => d.distractors = parse_value(key, v)?,
            "channels" => self.channels = parse_value(key, v)?,
            "stride" => self.stride = parse_value(key, v)?,
            "extractor_seed" => self.extractor_seed = parse_value(key, v)?,
            "capacity" => t.capacity = parse_value(key, v)?,
            "kernel" => t.kernel = parse_value(key, v)?,
            "sigma" => t.sigma = parse_value(key, v)?,
            "reg" => t.reg = parse_value(key, v)?,
            "step_scale" => t.step_scale = parse_value(key, v)?,
            "steps_per_update" => t.steps_per_update = parse_value(key, v)?,
            "init_steps" => t.init_steps = parse_value(key, v)?,
            "update_period" => t.update_period = parse_value(key, v)?,
            "template_rate" => t.template_rate = parse_value(key, v)?,
            "search_radius" => t.search_radius = if v == "none" { None } else { Some(parse_value(key, v)?) },
            "alpha_aug" => t.blend.alpha_aug = parse_value(key, v)?,
            "alpha_raw" => t.blend.alpha_raw = parse_value(key, v)?,
            "tracker_seed" => t.seed = parse_value(key, v)?,
            "learning_rate" => self.train.learning_rate = parse_value(key, v)?,
            "momentum" => self.train.momentum = parse_value(key, v)?,
            "weight_decay" => self.train.weight_decay = parse_value(key, v)?,
            "epochs" => self.train.epochs = parse_value(key, v)?,
            "samples_per_epoch" => self.train.samples_per_epoch = parse_value(key, v)?,
            "batch_size" => self.train.batch_size = parse_value(key, v)?,
            "train_seed" => self.train.seed = parse_value(key, v)?,
            "max_query_offset" => self.train.max_query_offset = parse_value(key, v)?,
            "opt_iterations" => self.opt.iterations = parse_value(key, v)?,
            "opt_step_size" => self.opt.step_size = parse_value(key, v)?,
            "opt_guarded" => self.opt.guarded = parse_bool(key, v)?,
            "weights" => self.weights = optional_path(v),
            "single_weights" => self.single_weights = optional_path(v),
            "reset" => self.reset = parse_bool(key, v)?,
            "fail_iou" => self.fail_iou = parse_value(key, v)?,
            "timing" => self.timing = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.augmentors.is_empty() {
            return Err(Error::Config("augmentors must name at least one augmentor".into()));
        }
        if self.sequences == 0 || self.frames < 2 {
            return Err(Error::Config("need at least one sequence of at least two frames".into()));
        }
        if self.reset && self.frames <= 6 {
            return Err(Error::Config("the reset protocol needs more than 6 frames".into()));
        }
        if self.channels == 0 || self.stride == 0 {
            return Err(Error::Config("channels and stride must be positive".into()));
        }
        self.tracker.validate()?;
        self.train.validate()?;
        self.opt.validate()
    }

    pub fn mode(&self) -> TrackerMode {
        self.tracker.mode
    }

    pub fn corpus(&self) -> CorpusConfig {
        CorpusConfig {
            scene: self.scene,
            tracker: self.tracker,
            extractor_seed: self.extractor_seed,
            channels: self.channels,
            stride: self.stride,
        }
    }

    pub fn extractor(&self) -> Result<EmbeddingExtractor> {
        EmbeddingExtractor::new(self.extractor_seed, self.channels, self.stride)
    }

    /// Evaluation sequence `idx`.
    pub fn sequence(&self, idx: usize) -> Result<SyntheticSequence> {
        gen_sequence(Rng::derive(self.seed, idx as u64).next_u64(), self.frames, &self.scene)
    }
}

/// Networks needed by the configured augmentors, loaded or freshly trained.
#[derive(Debug, Clone, Default)]
pub struct Networks {
    pub dual: Option<MixNet<f32>>,
    pub single: Option<MixNet<f32>>,
}

fn check_net(net: &MixNet<f32>, cfg: &ExperimentConfig, branches: Branches, path: &Path) -> Result<()> {
    if net.mode() != branches {
        return Err(Error::Config(format!("{} holds a {:?} network, expected {:?}", path.display(), net.mode(), branches)));
    }
    let (n, k) = (cfg.tracker.capacity, cfg.tracker.mix_outputs());
    if net.n() != n || net.k() != k {
        return Err(Error::Config(format!(
            "{} predicts {}x{} kernels, this configuration needs {k}x{n}",
            path.display(),
            net.k(),
            net.n()
        )));
    }
    Ok(())
}

/// Train a network with `branches` on the configured corpus.
pub fn train_network(cfg: &ExperimentConfig, branches: Branches, log: &mut dyn FnMut(&str)) -> Result<(MixNet<f32>, Vec<crate::Tensor4<f32>>)> {
    let train = TrainConfig { branches, ..cfg.train };
    let out = train_mixnet::<f32>(&cfg.corpus(), &train, |epoch, loss| {
        log(&format!("train {branches:?}: epoch {} loss {loss:.6}", epoch + 1))
    })?;
    Ok((out.net, out.velocity))
}

/// Load the configured weight files; train and save into `out_dir` any
/// network whose path is not set.
pub fn prepare_networks(cfg: &ExperimentConfig, out_dir: &Path, log: &mut dyn FnMut(&str)) -> Result<Networks> {
    let mut nets = Networks::default();
    for kind in [AugmentorKind::Mixnet, AugmentorKind::Single] {
        if !cfg.augmentors.contains(&kind) {
            continue;
        }
        let branches = kind.branches().expect("network augmentor");
        let given = match kind {
            AugmentorKind::Mixnet => &cfg.weights,
            _ => &cfg.single_weights,
        };
        let net = match given {
            Some(path) => {
                let (net, _) = MixNet::<f32>::load(path)?;
                check_net(&net, cfg, branches, path)?;
                net
            }
            None => {
                let (net, velocity) = train_network(cfg, branches, log)?;
                let path = out_dir.join(format!("{}.dmix", kind.name()));
                net.save(&path, Some(&velocity))?;
                log(&format!("saved {}", path.display()));
                net
            }
        };
        match kind {
            AugmentorKind::Mixnet => nets.dual = Some(net),
            _ => nets.single = Some(net),
        }
    }
    Ok(nets)
}

fn augmentor<'a>(kind: AugmentorKind, cfg: &ExperimentConfig, nets: &'a Networks) -> Result<Augmentor<'a, f32>> {
    let missing = || Error::Config(format!("no network loaded for augmentor {kind}"));
    Ok(match kind {
        AugmentorKind::None => Augmentor::None,
        AugmentorKind::Opt => Augmentor::Opt(cfg.opt),
        AugmentorKind::Mixnet => Augmentor::Net(nets.dual.as_ref().ok_or_else(missing)?),
        AugmentorKind::Single => Augmentor::Net(nets.single.as_ref().ok_or_else(missing)?),
    })
}

/// Per-sequence reset-protocol counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResetRow {
    pub seq_id: usize,
    pub failures: usize,
    pub restarts: usize,
    pub tracked: usize,
    pub iou_sum: f64,
}

impl ResetRow {
    fn new(seq_id: usize, r: &ResetOutcome) -> Self {
        Self {
            seq_id,
            failures: r.failures.len(),
            restarts: r.restarts.len(),
            tracked: r.tracked,
            iou_sum: r.iou_sum,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentorRun {
    pub frames: Vec<FrameResult>,
    pub resets: Vec<ResetRow>,
}

/// Track every configured sequence with one augmentor.
pub fn track_sequences(cfg: &ExperimentConfig, kind: AugmentorKind, nets: &Networks, log: &mut dyn FnMut(&str)) -> Result<AugmentorRun> {
    let extractor = cfg.extractor()?;
    let mut run = AugmentorRun::default();
    for seq_id in 0..cfg.sequences {
        let seq = cfg.sequence(seq_id)?;
        let out = run_tracker(&seq, &extractor, &cfg.tracker, augmentor(kind, cfg, nets)?)?;
        run.frames.extend(out.iter().map(|o| FrameResult {
            seq_id,
            frame: o.frame,
            pred: o.bbox,
            truth: seq.truth[o.frame],
            seconds: if cfg.timing { o.seconds } else { 0.0 },
        }));
        if cfg.reset {
            let mut runner = SequenceRunner {
                tracker: Tracker::new(cfg.tracker, &extractor, augmentor(kind, cfg, nets)?)?,
                seq: &seq,
            };
            let r = reset_eval(&mut runner, &seq.truth, cfg.fail_iou)?;
            run.resets.push(ResetRow::new(seq_id, &r));
        }
        log(&format!("{kind}: sequence {}/{} done", seq_id + 1, cfg.sequences));
    }
    Ok(run)
}

/// One row of a per-frame CSV, columns in file order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub seq_id: usize,
    pub frame: usize,
    pub pred_x: f64,
    pub pred_y: f64,
    pub pred_w: f64,
    pub pred_h: f64,
    pub gt_x: f64,
    pub gt_y: f64,
    pub gt_w: f64,
    pub gt_h: f64,
    pub iou: f64,
    pub center_err: f64,
    pub frame_seconds: f64,
}

impl From<&FrameResult> for FrameRow {
    fn from(r: &FrameResult) -> Self {
        Self {
            seq_id: r.seq_id,
            frame: r.frame,
            pred_x: r.pred.x,
            pred_y: r.pred.y,
            pred_w: r.pred.w,
            pred_h: r.pred.h,
            gt_x: r.truth.x,
            gt_y: r.truth.y,
            gt_w: r.truth.w,
            gt_h: r.truth.h,
            iou: r.iou(),
            center_err: r.center_error(),
            frame_seconds: r.seconds,
        }
    }
}

impl FrameRow {
    pub fn to_result(&self) -> Result<FrameResult> {
        Ok(FrameResult {
            seq_id: self.seq_id,
            frame: self.frame,
            pred: BoundingBox::new(self.pred_x, self.pred_y, self.pred_w, self.pred_h)?,
            truth: BoundingBox::new(self.gt_x, self.gt_y, self.gt_w, self.gt_h)?,
            seconds: self.frame_seconds,
        })
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_frames_csv(path: impl AsRef<Path>, frames: &[FrameResult]) -> Result<()> {
    write_csv(path.as_ref(), frames.iter().map(FrameRow::from))
}

pub fn read_frames_csv(path: impl AsRef<Path>) -> Result<Vec<FrameRow>> {
    read_csv(path.as_ref())
}

pub fn write_resets_csv(path: impl AsRef<Path>, rows: &[ResetRow]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

pub fn read_resets_csv(path: impl AsRef<Path>) -> Result<Vec<ResetRow>> {
    read_csv(path.as_ref())
}

/// Write one augmentor's CSVs into `dir`.
pub fn write_run(dir: &Path, kind: AugmentorKind, run: &AugmentorRun) -> Result<()> {
    write_frames_csv(dir.join(kind.frames_file()), &run.frames)?;
    if !run.resets.is_empty() {
        write_resets_csv(dir.join(kind.resets_file()), &run.resets)?;
    }
    Ok(())
}

/// Metrics of one augmentor as stored in the summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentorSummary {
    pub auc: f64,
    pub precision: f64,
    pub norm_precision: f64,
    pub mean_fps: Option<f64>,
    /// Total failures over all sequences; `None` without reset results.
    pub robustness: Option<usize>,
    /// Mean IoU over all frames scored by the reset protocol.
    pub accuracy: Option<f64>,
    pub sequences: usize,
    pub frames: usize,
}

/// Summary of one augmentor from its per-frame rows and reset rows.
pub fn summarize(rows: &[FrameRow], resets: Option<&[ResetRow]>) -> Result<AugmentorSummary> {
    let results = rows.iter().map(FrameRow::to_result).collect::<Result<Vec<_>>>()?;
    let ope = ope_summary(&results)?;
    let mut seqs: Vec<usize> = rows.iter().map(|r| r.seq_id).collect();
    seqs.dedup();
    let (robustness, accuracy) = match resets {
        Some(r) if !r.is_empty() => {
            let tracked: usize = r.iter().map(|x| x.tracked).sum();
            let iou: f64 = r.iter().map(|x| x.iou_sum).sum();
            (Some(r.iter().map(|x| x.failures).sum()), (tracked > 0).then(|| iou / tracked as f64))
        }
        _ => (None, None),
    };
    Ok(AugmentorSummary {
        auc: ope.auc,
        precision: ope.precision,
        norm_precision: ope.norm_precision,
        mean_fps: ope.mean_fps,
        robustness,
        accuracy,
        sequences: seqs.len(),
        frames: rows.len(),
    })
}

/// Summarize every `frames_<augmentor>.csv` in `dir`, writing
/// `summary.json` and `success_plot.csv` there. The top level repeats the
/// metrics of the first augmentor present in the order mixnet, single, opt,
/// none; each augmentor also gets its own object.
pub fn evaluate_dir(dir: impl AsRef<Path>) -> Result<Value> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "results directory not found")));
    }
    let mut per = Vec::new();
    let mut plot = Vec::new();
    for kind in AugmentorKind::ALL {
        let path = dir.join(kind.frames_file());
        if !path.exists() {
            continue;
        }
        let rows = read_frames_csv(&path)?;
        let reset_path = dir.join(kind.resets_file());
        let resets = if reset_path.exists() { Some(read_resets_csv(&reset_path)?) } else { None };
        let summary = summarize(&rows, resets.as_deref()).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let results = rows.iter().map(FrameRow::to_result).collect::<Result<Vec<_>>>()?;
        for (threshold, success_rate) in success_curve(&results)? {
            plot.push(PlotRow {
                augmentor: kind,
                threshold,
                success_rate,
            });
        }
        per.push((kind, summary));
    }
    let primary = AugmentorKind::PRIMARY_ORDER
        .into_iter()
        .find_map(|k| per.iter().find(|(p, _)| *p == k))
        .ok_or_else(|| Error::Format(format!("{}: no frames_<augmentor>.csv files", dir.display())))?;
    let mut top = match serde_json::to_value(primary.1)? {
        Value::Object(m) => m,
        _ => unreachable!("struct serializes to an object"),
    };
    top.insert("primary".into(), json!(primary.0));
    for (kind, s) in &per {
        top.insert(kind.name().into(), serde_json::to_value(s)?);
    }
    let value = Value::Object(top);
    write_csv(&dir.join(PLOT_FILE), &plot)?;
    let path = dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(value)
}

#[derive(Debug, Clone, Copy, Serialize)]
struct PlotRow {
    augmentor: AugmentorKind,
    threshold: f64,
    success_rate: f64,
}

/// Load the config, prepare networks, track with every augmentor and
/// write all artifacts into `out_dir`. Returns the summary.
pub fn run_experiment(config: impl AsRef<Path>, out_dir: impl AsRef<Path>, log: &mut dyn FnMut(&str)) -> Result<Value> {
    let cfg = ExperimentConfig::load(config, &[])?;
    run_with_config(&cfg, out_dir, log)
}

pub fn run_with_config(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>, log: &mut dyn FnMut(&str)) -> Result<Value> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let nets = prepare_networks(cfg, out, log)?;
    for &kind in &cfg.augmentors {
        let run = track_sequences(cfg, kind, &nets, log)?;
        write_run(out, kind, &run)?;
    }
    evaluate_dir(out)
}
