//! One-pass and reset-based tracking metrics, plus augmentor latency.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::mix::BlendConfig;
use crate::sim::{lipschitz_estimate, Augmentor, ObjectModel, SyntheticSequence, Tracker, TrackerConfig, TrackerState, UpdateSet};
use crate::tensor::{Scalar, Tensor4};
use crate::Rng;

pub const PRECISION_PX: f64 = 20.0;
pub const NORM_PRECISION: f64 = 0.2;
pub const RESTART_GAP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub seq_id: usize,
    pub frame: usize,
    pub pred: BoundingBox,
    pub truth: BoundingBox,
    pub seconds: f64,
}

impl FrameResult {
    pub fn iou(&self) -> f64 {
        self.pred.iou(&self.truth)
    }

    pub fn center_error(&self) -> f64 {
        self.pred.center_distance(&self.truth)
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

/// Thresholds `0, 0.05, ..., 1.0`.
pub fn success_thresholds() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

fn nonempty(op: &'static str, results: &[FrameResult]) -> Result<()> {
    if results.is_empty() {
        return Err(Error::invalid(op, "no frames"));
    }
    Ok(())
}

/// Fraction of frames with IoU strictly above each threshold.
pub fn success_curve(results: &[FrameResult]) -> Result<Vec<(f64, f64)>> {
    nonempty("success_curve", results)?;
    let ious: Vec<f64> = results.iter().map(FrameResult::iou).collect();
    Ok(success_thresholds()
        .into_iter()
        .map(|t| (t, ious.iter().filter(|&&v| v > t).count() as f64 / ious.len() as f64))
        .collect())
}

/// Mean of the 21-point success curve.
pub fn success_auc(results: &[FrameResult]) -> Result<f64> {
    let curve = success_curve(results)?;
    Ok(curve.iter().map(|(_, s)| s).sum::<f64>() / curve.len() as f64)
}

/// Fraction of frames whose centre error is at most `threshold_px`.
pub fn precision(results: &[FrameResult], threshold_px: f64) -> Result<f64> {
    nonempty("precision", results)?;
    Ok(results.iter().filter(|r| r.center_error() <= threshold_px).count() as f64 / results.len() as f64)
}

/// Fraction of frames whose centre error over the truth diagonal is at most 0.2.
pub fn norm_precision(results: &[FrameResult]) -> Result<f64> {
    nonempty("norm_precision", results)?;
    Ok(results
        .iter()
        .filter(|r| r.center_error() / r.truth.diagonal() <= NORM_PRECISION)
        .count() as f64
        / results.len() as f64)
}

/// Frames per second over the summed frame times; `None` when no time was
/// recorded.
pub fn mean_fps(results: &[FrameResult]) -> Option<f64> {
    let total: f64 = results.iter().map(|r| r.seconds).sum();
    (total > 0.0).then(|| results.len() as f64 / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpeSummary {
    pub auc: f64,
    pub precision: f64,
    pub norm_precision: f64,
    pub mean_fps: Option<f64>,
}

pub fn ope_summary(results: &[FrameResult]) -> Result<OpeSummary> {
    Ok(OpeSummary {
        auc: success_auc(results)?,
        precision: precision(results, PRECISION_PX)?,
        norm_precision: norm_precision(results)?,
        mean_fps: mean_fps(results),
    })
}

/// A tracker that can be (re)started from a truth box at any frame.
pub trait RestartableTracker {
    fn init(&mut self, frame: usize, bbox: BoundingBox) -> Result<()>;
    fn track(&mut self, frame: usize) -> Result<BoundingBox>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResetOutcome {
    /// Frames where the overlap dropped to `fail_iou` or below.
    pub failures: Vec<usize>,
    /// Frames the tracker was re-initialized at.
    pub restarts: Vec<usize>,
    /// Frames scored for accuracy (tracked after an initialization).
    pub tracked: usize,
    pub iou_sum: f64,
}

impl ResetOutcome {
    pub fn robustness(&self) -> usize {
        self.failures.len()
    }

    /// Mean IoU over tracked frames, `None` if none were tracked.
    pub fn accuracy(&self) -> Option<f64> {
        (self.tracked > 0).then(|| self.iou_sum / self.tracked as f64)
    }
}

/// Reset-based protocol: start on frame 0's truth; on a failure
/// (IoU <= `fail_iou`) skip ahead and re-initialize on the truth box exactly
/// five frames later. Initialization frames and skipped frames are not
/// scored; the failure frame is. A failure within the last five frames ends
/// the run without a restart.
pub fn reset_eval(tracker: &mut dyn RestartableTracker, truth: &[BoundingBox], fail_iou: f64) -> Result<ResetOutcome> {
    if truth.len() <= 6 {
        return Err(Error::invalid("reset_eval", format!("sequence of {} frames is too short", truth.len())));
    }
    let mut out = ResetOutcome::default();
    tracker.init(0, truth[0])?;
    let mut t = 1;
    while t < truth.len() {
        let pred = tracker.track(t).map_err(|e| e.at_frame(t))?;
        let v = pred.iou(&truth[t]);
        out.tracked += 1;
        out.iou_sum += v;
        if v <= fail_iou {
            out.failures.push(t);
            let restart = t + RESTART_GAP;
            if restart >= truth.len() {
                break;
            }
            tracker.init(restart, truth[restart]).map_err(|e| e.at_frame(restart))?;
            out.restarts.push(restart);
            t = restart + 1;
        } else {
            t += 1;
        }
    }
    Ok(out)
}

/// [`RestartableTracker`] over a synthetic sequence.
pub struct SequenceRunner<'a, 'b, T> {
    pub tracker: Tracker<'a, T>,
    pub seq: &'b SyntheticSequence,
}

impl<T: Scalar> RestartableTracker for SequenceRunner<'_, '_, T> {
    fn init(&mut self, frame: usize, bbox: BoundingBox) -> Result<()> {
        self.tracker.init(&self.seq.frames[frame], self.seq.height, self.seq.width, bbox, frame)
    }

    fn track(&mut self, frame: usize) -> Result<BoundingBox> {
        Ok(self.tracker.track(&self.seq.frames[frame], self.seq.height, self.seq.width, frame)?.bbox)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchShapes {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Default for BenchShapes {
    fn default() -> Self {
        Self { n: 50, c: 32, h: 22, w: 22 }
    }
}

impl std::str::FromStr for BenchShapes {
    type Err = Error;

    /// `N,C,H,W`.
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("shapes must be N,C,H,W, got {s:?}")))?;
        match v[..] {
            [n, c, h, w] if n > 0 && c > 0 && h >= 3 && w >= 3 => Ok(Self { n, c, h, w }),
            _ => Err(Error::Config(format!("shapes must be four positive counts with H,W >= 3, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub repetitions: usize,
    pub median: f64,
    pub p90: f64,
    pub samples: Vec<f64>,
}

impl LatencyStats {
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("latency", "no samples"));
        }
        let repetitions = samples.len();
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let at = |q: f64| sorted[((q * (repetitions - 1) as f64).round() as usize).min(repetitions - 1)];
        let median = if repetitions % 2 == 1 {
            sorted[repetitions / 2]
        } else {
            0.5 * (sorted[repetitions / 2 - 1] + sorted[repetitions / 2])
        };
        samples.shrink_to_fit();
        Ok(Self {
            repetitions,
            median,
            p90: at(0.9).max(median),
            samples,
        })
    }
}

/// Classifier-mode update set with random content of the given shapes.
pub fn bench_set<T: Scalar>(shapes: &BenchShapes, seed: u64) -> Result<UpdateSet<T>> {
    let mut rng = Rng::new(seed);
    let BenchShapes { n, c, h, w } = *shapes;
    let stride = 4;
    let config = TrackerConfig {
        capacity: n,
        ..TrackerConfig::classifier()
    };
    let samples = Tensor4::uniform([n, c, h, w], 0.0, 1.0, &mut rng);
    let boxes = (0..n)
        .map(|_| {
            let x = rng.uniform_in(0.0, (w * stride) as f64 * 0.7);
            let y = rng.uniform_in(0.0, (h * stride) as f64 * 0.7);
            BoundingBox::new(x, y, 16.0, 16.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let lipschitz = lipschitz_estimate(&samples, config.kernel, config.reg, 30)?;
    let state = TrackerState {
        config,
        model: ObjectModel::Classifier {
            weight: Tensor4::uniform([1, c, config.kernel, config.kernel], -0.1, 0.1, &mut rng),
            bias: T::zero(),
        },
        step_size: config.step_scale / lipschitz,
        stride,
        bbox: boxes[n - 1],
    };
    UpdateSet::new(state, samples, boxes)
}

/// Wall time of computing the mixing kernels alone, one warm-up call excluded.
pub fn bench_augmentor<T: Scalar>(shapes: &BenchShapes, augmentor: &Augmentor<'_, T>, repetitions: usize) -> Result<LatencyStats> {
    if repetitions == 0 {
        return Err(Error::invalid("bench_augmentor", "repetitions must be positive"));
    }
    let set = bench_set::<T>(shapes, 7)?;
    let blend = BlendConfig::default();
    augmentor.kernels(&set, &blend)?;
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        std::hint::black_box(augmentor.kernels(&set, &blend)?);
        samples.push(start.elapsed().as_secs_f64());
    }
    LatencyStats::from_samples(samples)
}
