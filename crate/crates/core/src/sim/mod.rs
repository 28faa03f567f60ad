//! Desk-scale tracking: synthetic sequences, a frozen embedding extractor,
//! sample memory, two reference trackers and the per-frame loop.

mod extractor;
mod memory;
mod sequence;
mod tracker;

use std::time::Instant;

pub use extractor::EmbeddingExtractor;
pub use memory::{build_training_set, hflip, MemoryEntry, SampleMemory};
pub use sequence::{gen_sequence, load_sequence, save_sequence, Difficulty, SceneConfig, SyntheticSequence};
pub use tracker::{
    box_target, cell_to_pixel, classifier_objective, crop, gradient_steps, lipschitz_estimate, localize, pixel_to_cell, FitTrace, Localization,
    ObjectModel, TrackerConfig, TrackerMode, TrackerState, UpdateProblem, UpdateSet,
};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::mix::{BlendConfig, MixKernelPair};
use crate::mixnet::MixNet;
use crate::opt::{deepmix_opt, OptConfig};
use crate::tensor::{Scalar, Tensor4};
use crate::Rng;

/// Source of mixing kernels at update time.
#[derive(Debug, Clone, Copy)]
pub enum Augmentor<'a, T> {
    None,
    /// Kernels predicted by a network (dual or single branch).
    Net(&'a MixNet<T>),
    /// Kernels optimized online against the newest sample.
    Opt(OptConfig),
}

impl<T: Scalar> Augmentor<'_, T> {
    /// Kernels for an update set, or `None` when augmentation is off.
    pub fn kernels(&self, set: &UpdateSet<T>, blend: &BlendConfig) -> Result<Option<MixKernelPair<T>>> {
        match self {
            Augmentor::None => Ok(None),
            Augmentor::Net(net) => {
                let want = set.kernel_dims();
                if net.n() != want.c || net.k() != want.n {
                    return Err(Error::invalid(
                        "augmentor",
                        format!("network predicts {}x{} kernels, update needs {}x{}", net.k(), net.n(), want.n, want.c),
                    ));
                }
                Ok(Some(net.forward(&set.samples)?))
            }
            Augmentor::Opt(cfg) => Ok(Some(deepmix_opt(&opt_problem(set, blend)?, cfg)?.0)),
        }
    }
}

/// Opt objective used during tracking: the newest sample is the query and a
/// Gaussian at its box the target.
pub fn opt_problem<T: Scalar>(set: &UpdateSet<T>, blend: &BlendConfig) -> Result<UpdateProblem<T>> {
    let d = set.samples.dims();
    let query = set.samples.sample(d.n - 1);
    let target = box_target(&set.boxes[d.n - 1], d.h, d.w, set.state.stride, set.state.config.sigma)?;
    UpdateProblem::new(set.clone(), query, target, *blend)
}

/// One model update from the memory bank. An empty memory leaves the state
/// unchanged.
pub fn update_model<T: Scalar>(state: &TrackerState<T>, memory: &SampleMemory<T>, augmentor: &Augmentor<'_, T>, blend: &BlendConfig) -> Result<TrackerState<T>> {
    if memory.is_empty() {
        return Ok(state.clone());
    }
    let (samples, boxes) = memory.stack()?;
    let set = UpdateSet::new(state.clone(), samples, boxes)?;
    let input = match augmentor.kernels(&set, blend)? {
        None => set.raw_input(),
        Some(k) => set.augmented(&k, blend)?,
    };
    set.updated_state(&input)
}

/// Fresh state from one embedding and its box. The memory is reset and
/// seeded with `capacity` sample-level variants of the embedding; the
/// classifier is fitted on them from zero with `init_steps` steps, its step
/// size set from the bank's curvature.
pub fn init_state<T: Scalar>(
    config: &TrackerConfig,
    embedding: &Tensor4<T>,
    bbox: BoundingBox,
    stride: usize,
    frame: usize,
    memory: &mut SampleMemory<T>,
) -> Result<TrackerState<T>> {
    config.validate()?;
    let mut rng = Rng::derive(config.seed, frame as u64);
    let (samples, boxes) = build_training_set(embedding, bbox, config.capacity, stride, &mut rng)?;
    memory.clear();
    for (i, b) in boxes.iter().enumerate() {
        memory.push(samples.sample(i), *b, frame)?;
    }
    let d = embedding.dims();
    let c = d.c;
    match config.mode {
        TrackerMode::Siamese => {
            let (cx, cy) = bbox.center();
            let cell = (
                pixel_to_cell(cy, stride).round().clamp(0.0, (d.h - 1) as f64) as usize,
                pixel_to_cell(cx, stride).round().clamp(0.0, (d.w - 1) as f64) as usize,
            );
            Ok(TrackerState {
                config: *config,
                model: ObjectModel::Template(crop(embedding, cell, config.kernel)),
                step_size: 0.0,
                stride,
                bbox,
            })
        }
        TrackerMode::Classifier => {
            let l = lipschitz_estimate(&samples, config.kernel, config.reg, 30)?;
            let step_size = if l > 0.0 { config.step_scale / l } else { 0.0 };
            let state = TrackerState {
                config: *config,
                model: ObjectModel::Classifier {
                    weight: Tensor4::zeros([1, c, config.kernel, config.kernel]),
                    bias: T::zero(),
                },
                step_size,
                stride,
                bbox,
            };
            let set = UpdateSet::new(state.clone(), samples.clone(), boxes)?;
            let labels = set.labels().expect("classifier sets carry labels");
            let trace = gradient_steps(&samples, labels, Tensor4::zeros([1, c, config.kernel, config.kernel]), T::zero(), step_size, config.reg, config.init_steps)?;
            let (weight, bias) = trace.params.last().cloned().unwrap();
            Ok(TrackerState {
                model: ObjectModel::Classifier { weight, bias },
                ..state
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub bbox: BoundingBox,
    pub peak: f64,
    pub updated: bool,
}

/// Stateful per-sequence tracker.
pub struct Tracker<'a, T> {
    config: TrackerConfig,
    extractor: &'a EmbeddingExtractor,
    augmentor: Augmentor<'a, T>,
    state: Option<TrackerState<T>>,
    memory: SampleMemory<T>,
    init_frame: usize,
}

impl<'a, T: Scalar> Tracker<'a, T> {
    pub fn new(config: TrackerConfig, extractor: &'a EmbeddingExtractor, augmentor: Augmentor<'a, T>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            memory: SampleMemory::new(config.capacity)?,
            config,
            extractor,
            augmentor,
            state: None,
            init_frame: 0,
        })
    }

    pub fn state(&self) -> Option<&TrackerState<T>> {
        self.state.as_ref()
    }

    pub fn memory(&self) -> &SampleMemory<T> {
        &self.memory
    }

    pub fn init(&mut self, image: &[f32], h: usize, w: usize, bbox: BoundingBox, frame: usize) -> Result<()> {
        let emb = self.extractor.extract(image, h, w)?;
        self.state = Some(init_state(&self.config, &emb, bbox, self.extractor.stride(), frame, &mut self.memory)?);
        self.init_frame = frame;
        Ok(())
    }

    /// Localize, remember the result, and update on scheduled frames.
    pub fn track(&mut self, image: &[f32], h: usize, w: usize, frame: usize) -> Result<StepResult> {
        let mut step = self.observe(image, h, w, frame)?;
        if self.update_due(frame) {
            let state = self.state.as_mut().expect("observe checked initialization");
            *state = update_model(state, &self.memory, &self.augmentor, &self.config.blend)?;
            step.updated = true;
        }
        Ok(step)
    }

    /// Localize and remember the result without updating the model.
    pub fn observe(&mut self, image: &[f32], h: usize, w: usize, frame: usize) -> Result<StepResult> {
        let state = self.state.as_mut().ok_or_else(|| Error::invalid("track", "tracker not initialized"))?;
        let emb = self.extractor.extract(image, h, w)?;
        let loc = localize(state, &emb)?;
        state.bbox = loc.bbox;
        self.memory.push(emb, loc.bbox, frame)?;
        Ok(StepResult {
            bbox: loc.bbox,
            peak: loc.peak.as_f64(),
            updated: false,
        })
    }

    pub fn update_due(&self, frame: usize) -> bool {
        frame > self.init_frame && (frame - self.init_frame) % self.config.update_period == 0
    }

    /// The update set an update would be computed from right now.
    pub fn update_set(&self) -> Result<UpdateSet<T>> {
        let state = self.state.as_ref().ok_or_else(|| Error::invalid("update_set", "tracker not initialized"))?;
        let (samples, boxes) = self.memory.stack()?;
        UpdateSet::new(state.clone(), samples, boxes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutput {
    pub frame: usize,
    pub bbox: BoundingBox,
    /// Heat-map peak; `None` on the initialization frame.
    pub peak: Option<f64>,
    pub seconds: f64,
}

/// One-pass run: initialize on frame 0's truth box, then track every later
/// frame. Frame 0's output is the truth box.
pub fn run_tracker<T: Scalar>(
    seq: &SyntheticSequence,
    extractor: &EmbeddingExtractor,
    config: &TrackerConfig,
    augmentor: Augmentor<'_, T>,
) -> Result<Vec<FrameOutput>> {
    if seq.len() < 2 {
        return Err(Error::invalid("run_tracker", "sequence shorter than 2 frames"));
    }
    let (h, w) = (seq.height, seq.width);
    let mut tracker = Tracker::new(*config, extractor, augmentor)?;
    let mut out = Vec::with_capacity(seq.len());
    let start = Instant::now();
    tracker.init(&seq.frames[0], h, w, seq.truth[0], 0).map_err(|e| e.at_frame(0))?;
    out.push(FrameOutput {
        frame: 0,
        bbox: seq.truth[0],
        peak: None,
        seconds: start.elapsed().as_secs_f64(),
    });
    for t in 1..seq.len() {
        let start = Instant::now();
        let r = tracker.track(&seq.frames[t], h, w, t).map_err(|e| e.at_frame(t))?;
        out.push(FrameOutput {
            frame: t,
            bbox: r.bbox,
            peak: Some(r.peak),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}
