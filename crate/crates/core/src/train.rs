//! Offline MixNet training through the tracker's own update.
//!
//! Each training item is a snapshot of an unaugmented tracker at one of its
//! scheduled updates on a synthetic video, plus a later query frame. The loss is the squared error between the
//! query heat map after the augmented update and a Gaussian at the true
//! position; it is backpropagated through the update into the network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixnet::{Branches, MixNet};
use crate::geometry::BoundingBox;
use crate::mix::BlendConfig;
use crate::sim::{box_target, gen_sequence, Augmentor, EmbeddingExtractor, SceneConfig, Tracker, TrackerConfig, TrackerState, UpdateProblem, UpdateSet};
use crate::tensor::{Scalar, SgdConfig, SgdState, Tensor4};
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub samples_per_epoch: usize,
    /// Items averaged per SGD step.
    pub batch_size: usize,
    pub seed: u64,
    /// Largest distance in frames from the newest bank frame to the query.
    pub max_query_offset: usize,
    pub branches: Branches,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            momentum: 0.9,
            weight_decay: 0.0005,
            epochs: 10,
            samples_per_epoch: 100,
            batch_size: 1,
            seed: 42,
            max_query_offset: 5,
            branches: Branches::Dual,
        }
    }
}

impl TrainConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("bad optimizer settings {self:?}")));
        }
        if self.epochs == 0 || self.samples_per_epoch == 0 || self.batch_size == 0 || self.max_query_offset == 0 {
            return Err(Error::Config("epochs, samples_per_epoch, batch_size and max_query_offset must be positive".into()));
        }
        Ok(())
    }
}

/// Scene, backbone and tracker settings the corpus is drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub scene: SceneConfig,
    pub tracker: TrackerConfig,
    pub extractor_seed: u64,
    pub channels: usize,
    pub stride: usize,
}

/// Ingredients of one training problem, cheap to keep between epochs.
#[derive(Debug, Clone)]
pub struct CorpusItem<T> {
    pub state: TrackerState<T>,
    pub samples: Tensor4<T>,
    pub boxes: Vec<BoundingBox>,
    pub query: Tensor4<T>,
    pub target: Tensor4<T>,
}

impl<T: Scalar> CorpusItem<T> {
    pub fn problem(&self, blend: BlendConfig) -> Result<UpdateProblem<T>> {
        let set = UpdateSet::new(self.state.clone(), self.samples.clone(), self.boxes.clone())?;
        UpdateProblem::new(set, self.query.clone(), self.target.clone(), blend)
    }
}

/// Training item `idx` of the corpus rooted at `seed`.
///
/// An unaugmented tracker runs on a fresh sequence up to a scheduled update
/// frame `u`, drawn from the first `2N` frames; its state and memory at that
/// moment form the update set. The query is frame `u + offset`,
/// `1 <= offset <= max_offset`, with a Gaussian target at the true box.
pub fn corpus_item<T: Scalar>(corpus: &CorpusConfig, extractor: &EmbeddingExtractor, seed: u64, idx: usize, max_offset: usize) -> Result<CorpusItem<T>> {
    let cfg = &corpus.tracker;
    let period = cfg.update_period;
    let mut rng = Rng::derive(seed, idx as u64);
    let updates = (2 * cfg.capacity / period).max(1);
    let u = period * (1 + rng.below(updates));
    let q = u + 1 + rng.below(max_offset);
    let seq = gen_sequence(rng.next_u64(), q + 1, &corpus.scene)?;
    let (h, w) = (seq.height, seq.width);
    let mut tracker = Tracker::<T>::new(*cfg, extractor, Augmentor::None)?;
    tracker.init(&seq.frames[0], h, w, seq.truth[0], 0)?;
    for t in 1..u {
        tracker.track(&seq.frames[t], h, w, t)?;
    }
    tracker.observe(&seq.frames[u], h, w, u)?;
    let set = tracker.update_set()?;
    let query = extractor.extract::<T>(&seq.frames[q], h, w)?;
    let d = query.dims();
    let target = box_target(&seq.truth[q], d.h, d.w, extractor.stride(), cfg.sigma)?;
    Ok(CorpusItem {
        state: set.state,
        samples: set.samples,
        boxes: set.boxes,
        query,
        target,
    })
}

/// Query loss with no augmentation at all.
pub fn baseline_loss<T: Scalar>(problem: &UpdateProblem<T>) -> Result<f64> {
    let (model, _) = problem.set.fit(&problem.set.raw_input())?;
    Ok(model.heat(&problem.query)?.sub(&problem.target)?.sum_sq().as_f64())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub net: MixNet<T>,
    pub velocity: Vec<Tensor4<T>>,
    /// Mean training loss of each epoch, measured before each item's step.
    pub loss_history: Vec<f64>,
}

/// Train a fresh network; `progress` is called after each epoch.
pub fn train_mixnet<T: Scalar>(corpus: &CorpusConfig, cfg: &TrainConfig, mut progress: impl FnMut(usize, f64)) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    corpus.tracker.validate()?;
    let extractor = EmbeddingExtractor::new(corpus.extractor_seed, corpus.channels, corpus.stride)?;
    let mut init_rng = Rng::derive(cfg.seed, u64::MAX);
    let mut net = MixNet::<T>::new(corpus.tracker.capacity, corpus.tracker.mix_outputs(), cfg.branches, &mut init_rng)?;
    let mut params = net.params();
    let mut sgd = SgdState::new(cfg.sgd(), &params)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let items = (0..cfg.samples_per_epoch)
        .map(|i| corpus_item::<T>(corpus, &extractor, cfg.seed, i, cfg.max_query_offset))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..cfg.samples_per_epoch).collect();
    for epoch in 0..cfg.epochs {
        Rng::derive(cfg.seed, epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        let mut batch: Option<Vec<Tensor4<T>>> = None;
        let mut in_batch = 0;
        for (pos, &idx) in order.iter().enumerate() {
            let problem = items[idx].problem(corpus.tracker.blend)?;
            let (kernels, cache) = net.forward_cached(&problem.set.samples)?;
            let (loss, go, gb) = problem.gradient(&kernels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, sample {idx}")));
            }
            total += loss;
            let grads = net.backward(&cache, &go, &gb)?;
            match &mut batch {
                None => batch = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.axpy(T::one(), g)?;
                    }
                }
            }
            in_batch += 1;
            if in_batch == cfg.batch_size || pos + 1 == order.len() {
                let scale = T::one() / T::lit(in_batch as f64);
                let grads: Vec<_> = batch.take().unwrap().iter().map(|g| g.scale(scale)).collect();
                if grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient at epoch {epoch}, sample {idx}")));
                }
                sgd.step(&mut params, &grads)?;
                net.set_params(params.clone())?;
                in_batch = 0;
            }
        }
        let mean = total / order.len() as f64;
        progress(epoch, mean);
        history.push(mean);
    }
    Ok(TrainOutcome {
        net,
        velocity: sgd.velocity().to_vec(),
        loss_history: history,
    })
}
