use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::mix::{alpha_blend, mask_from_boxes, template_refresh, template_refresh_grad, BlendConfig, MixKernelPair, MixPlan, ObjectMask};
use crate::tensor::{argmax2d, conv2d, conv2d_grad_input, conv2d_grad_kernel, gaussian_map, Dims, Patches, Scalar, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackerMode {
    /// Template cross-correlation with a running-average template.
    Siamese,
    /// Online convolutional classifier fitted by gradient descent.
    Classifier,
}

impl std::str::FromStr for TrackerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "siamese" => Ok(TrackerMode::Siamese),
            "classifier" => Ok(TrackerMode::Classifier),
            _ => Err(Error::Config(format!("unknown tracker mode {s:?} (siamese|classifier)"))),
        }
    }
}

impl std::fmt::Display for TrackerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrackerMode::Siamese => "siamese",
            TrackerMode::Classifier => "classifier",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub mode: TrackerMode,
    /// Sample memory size `N`.
    pub capacity: usize,
    /// Classifier filter size, or template crop size, in cells (odd).
    pub kernel: usize,
    /// Std-dev of Gaussian heat-map targets, in cells.
    pub sigma: f64,
    /// Ridge weight on the classifier filter.
    pub reg: f64,
    /// Classifier step size as a fraction of `1 / L`, `L` the estimated
    /// gradient Lipschitz constant at initialization.
    pub step_scale: f64,
    pub steps_per_update: usize,
    pub init_steps: usize,
    /// Update on every `update_period`-th frame after initialization.
    pub update_period: usize,
    /// Running-average weight of a new template.
    pub template_rate: f64,
    /// Restrict the peak search to cells within this Chebyshev distance of
    /// the previous position; `None` searches the whole map.
    pub search_radius: Option<usize>,
    pub blend: BlendConfig,
    pub seed: u64,
}

impl TrackerConfig {
    pub fn classifier() -> Self {
        Self {
            mode: TrackerMode::Classifier,
            capacity: 50,
            kernel: 5,
            sigma: 1.0,
            reg: 0.01,
            step_scale: 1.0,
            steps_per_update: 3,
            init_steps: 20,
            update_period: 5,
            template_rate: 0.1,
            search_radius: Some(4),
            blend: BlendConfig::default(),
            seed: 0,
        }
    }

    pub fn siamese() -> Self {
        Self {
            mode: TrackerMode::Siamese,
            capacity: 15,
            update_period: 10,
            ..Self::classifier()
        }
    }

    pub fn for_mode(mode: TrackerMode) -> Self {
        match mode {
            TrackerMode::Siamese => Self::siamese(),
            TrackerMode::Classifier => Self::classifier(),
        }
    }

    /// Number of augmented samples `K`: one per bank entry for the
    /// classifier, a single refreshed template for Siamese mode.
    pub fn mix_outputs(&self) -> usize {
        match self.mode {
            TrackerMode::Siamese => 1,
            TrackerMode::Classifier => self.capacity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.capacity == 0 {
            return bad("capacity must be positive");
        }
        if self.kernel % 2 == 0 {
            return bad("kernel size must be odd");
        }
        if !(self.sigma > 0.0) || !(self.reg >= 0.0) || !(self.step_scale > 0.0) {
            return bad("sigma and step_scale must be positive, reg non-negative");
        }
        if self.update_period == 0 {
            return bad("update_period must be positive");
        }
        if !(0.0..=1.0).contains(&self.template_rate) {
            return bad("template_rate must lie in [0, 1]");
        }
        self.blend.validate()
    }
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self::classifier()
    }
}

/// The object model `theta`.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectModel<T> {
    /// `(1, C, t, t)` template, correlated with the search embedding.
    Template(Tensor4<T>),
    /// `(1, C, k, k)` filter and scalar bias.
    Classifier { weight: Tensor4<T>, bias: T },
}

impl<T: Scalar> ObjectModel<T> {
    fn kernel(&self) -> &Tensor4<T> {
        match self {
            ObjectModel::Template(t) => t,
            ObjectModel::Classifier { weight, .. } => weight,
        }
    }

    /// Heat map `(1, 1, h, w)` over an embedding; same spatial size.
    pub fn heat(&self, embedding: &Tensor4<T>) -> Result<Tensor4<T>> {
        let k = self.kernel();
        let heat = conv2d(embedding, k, k.dims().h / 2)?;
        Ok(match self {
            ObjectModel::Template(_) => heat,
            ObjectModel::Classifier { bias, .. } => heat.map(|v| v + *bias),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState<T> {
    pub config: TrackerConfig,
    pub model: ObjectModel<T>,
    /// Classifier gradient step `eta`, fixed at initialization.
    pub step_size: f64,
    pub stride: usize,
    /// Last reported box; its size is the tracked size.
    pub bbox: BoundingBox,
}

/// Feature-cell coordinates of a pixel-space point. Cell `i` is centred on
/// pixel coordinate `stride * i + 0.5`.
pub fn pixel_to_cell(p: f64, stride: usize) -> f64 {
    (p - 0.5) / stride as f64
}

pub fn cell_to_pixel(c: f64, stride: usize) -> f64 {
    c * stride as f64 + 0.5
}

/// Gaussian target `(1, 1, h, w)` peaked at the box centre (clamped into the map).
pub fn box_target<T: Scalar>(bbox: &BoundingBox, h: usize, w: usize, stride: usize, sigma: f64) -> Result<Tensor4<T>> {
    let (cx, cy) = bbox.center();
    let row = pixel_to_cell(cy, stride).clamp(0.0, (h - 1) as f64);
    let col = pixel_to_cell(cx, stride).clamp(0.0, (w - 1) as f64);
    gaussian_map(h, w, (row, col), sigma)
}

fn nearest_cell(p: f64, stride: usize, len: usize) -> usize {
    pixel_to_cell(p, stride).round().clamp(0.0, (len - 1) as f64) as usize
}

/// `t x t` window of `x (1, C, h, w)` centred on a cell, zero outside.
pub fn crop<T: Scalar>(x: &Tensor4<T>, center: (usize, usize), t: usize) -> Tensor4<T> {
    let d = x.dims();
    let half = (t / 2) as isize;
    Tensor4::from_fn(Dims::new(1, d.c, t, t), |_, c, i, j| {
        let y = center.0 as isize + i as isize - half;
        let xx = center.1 as isize + j as isize - half;
        if y >= 0 && xx >= 0 && (y as usize) < d.h && (xx as usize) < d.w {
            x.get(0, c, y as usize, xx as usize)
        } else {
            T::zero()
        }
    })
}

/// Adjoint of [`crop`].
fn uncrop<T: Scalar>(g: &Tensor4<T>, center: (usize, usize), dims: Dims) -> Tensor4<T> {
    let t = g.dims().h;
    let half = (t / 2) as isize;
    let mut out = Tensor4::zeros(dims);
    for c in 0..dims.c {
        for i in 0..t {
            for j in 0..t {
                let y = center.0 as isize + i as isize - half;
                let x = center.1 as isize + j as isize - half;
                if y >= 0 && x >= 0 && (y as usize) < dims.h && (x as usize) < dims.w {
                    out.set(0, c, y as usize, x as usize, g.get(0, c, i, j));
                }
            }
        }
    }
    out
}

fn box_cell(bbox: &BoundingBox, stride: usize, h: usize, w: usize) -> (usize, usize) {
    let (cx, cy) = bbox.center();
    (nearest_cell(cy, stride, h), nearest_cell(cx, stride, w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization<T> {
    pub heat: Tensor4<T>,
    pub cell: (usize, usize),
    pub peak: T,
    pub bbox: BoundingBox,
}

/// Sub-cell offset of a peak from a parabola through it and its two
/// neighbours, in `[-0.5, 0.5]`; zero at the border or on a flat top.
fn parabolic_offset(i: usize, len: usize, f: impl Fn(usize) -> f64) -> f64 {
    if i == 0 || i + 1 >= len {
        return 0.0;
    }
    let (l, c, r) = (f(i - 1), f(i), f(i + 1));
    let curv = l - 2.0 * c + r;
    if curv < 0.0 && curv.is_finite() {
        (0.5 * (l - r) / curv).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Heat map, peak cell and box for one embedding. The box keeps the state's
/// size and is centred on the peak, refined to sub-cell precision.
pub fn localize<T: Scalar>(state: &TrackerState<T>, embedding: &Tensor4<T>) -> Result<Localization<T>> {
    let heat = state.model.heat(embedding)?;
    let d = heat.dims();
    let cell = match state.config.search_radius {
        None => argmax2d(&heat)?,
        Some(r) => {
            let (py, px) = box_cell(&state.bbox, state.stride, d.h, d.w);
            let mut windowed = heat.clone();
            for y in 0..d.h {
                for x in 0..d.w {
                    if y.abs_diff(py) > r || x.abs_diff(px) > r {
                        windowed.set(0, 0, y, x, T::neg_infinity());
                    }
                }
            }
            argmax2d(&windowed)?
        }
    };
    let peak = heat.get(0, 0, cell.0, cell.1);
    let at = |y: usize, x: usize| heat.get(0, 0, y, x).as_f64();
    let dy = parabolic_offset(cell.0, d.h, |y| at(y, cell.1));
    let dx = parabolic_offset(cell.1, d.w, |x| at(cell.0, x));
    let bbox = state.bbox.with_center(
        cell_to_pixel(cell.1 as f64 + dx, state.stride),
        cell_to_pixel(cell.0 as f64 + dy, state.stride),
    );
    Ok(Localization { heat, cell, peak, bbox })
}

/// Classifier regression objective `(1/N) sum_i |conv(s_i, w) + b - y_i|^2 + reg |w|^2`.
pub fn classifier_objective<T: Scalar>(samples: &Tensor4<T>, labels: &Tensor4<T>, weight: &Tensor4<T>, bias: T, reg: f64) -> Result<f64> {
    let r = conv2d(samples, weight, weight.dims().h / 2)?.map(|v| v + bias).sub(labels)?;
    let n = samples.dims().n as f64;
    Ok(r.sum_sq().as_f64() / n + reg * weight.sum_sq().as_f64())
}

/// Largest eigenvalue of the classifier objective's Hessian over
/// `(weight, bias)`, by power iteration.
pub fn lipschitz_estimate<T: Scalar>(samples: &Tensor4<T>, kernel: usize, reg: f64, iterations: usize) -> Result<f64> {
    let d = samples.dims();
    let patches = Patches::new(samples, kernel, kernel, kernel / 2)?;
    let c = T::lit(2.0 / d.n as f64);
    let mut w = Tensor4::full(Dims::new(1, d.c, kernel, kernel), T::one());
    let mut b = T::one();
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        let norm = (w.sum_sq() + b * b).sqrt();
        if norm == T::zero() {
            break;
        }
        w = w.scale(T::one() / norm);
        b = b / norm;
        let r = patches.conv(&w)?.map(|v| v + b);
        let mut hw = patches.grad_kernel(&r)?.scale(c);
        hw.axpy(T::lit(2.0 * reg), &w)?;
        let hb = c * r.sum();
        estimate = (hw.sum_sq() + hb * hb).sqrt().as_f64();
        w = hw;
        b = hb;
    }
    Ok(estimate)
}

/// Gradient steps taken by the classifier update, kept for backprop.
#[derive(Debug, Clone)]
pub struct FitTrace<T> {
    /// `(w_t, b_t)` for `t = 0..=steps`.
    pub params: Vec<(Tensor4<T>, T)>,
    /// Residuals `conv(S, w_t) + b_t - Y` for `t = 0..steps`.
    pub residuals: Vec<Tensor4<T>>,
}

/// Everything an update needs besides the kernels: the bank, its masks and
/// labels, and the state it starts from. Shared by tracking, the
/// optimization-based kernels and MixNet training.
#[derive(Debug, Clone)]
pub struct UpdateSet<T> {
    pub state: TrackerState<T>,
    pub samples: Tensor4<T>,
    pub boxes: Vec<BoundingBox>,
    /// Classifier: per-sample masks `(N, C, h, w)`; Siamese: the newest
    /// sample's mask `(1, C, h, w)`.
    mask: ObjectMask<T>,
    /// Classifier Gaussian labels `(N, 1, h, w)`.
    labels: Option<Tensor4<T>>,
    plan: Option<MixPlan<T>>,
}

impl<T: Scalar> UpdateSet<T> {
    pub fn new(state: TrackerState<T>, samples: Tensor4<T>, boxes: Vec<BoundingBox>) -> Result<Self> {
        let d = samples.dims();
        if boxes.len() != d.n || d.n == 0 {
            return Err(Error::shape("update_set", d, format!("{} boxes", boxes.len())));
        }
        let stride = state.stride;
        let (mask, labels, plan) = match state.config.mode {
            TrackerMode::Classifier => {
                let mask = mask_from_boxes(&boxes, (d.c, d.h, d.w), stride)?;
                let maps = boxes
                    .iter()
                    .map(|b| box_target::<T>(b, d.h, d.w, stride, state.config.sigma))
                    .collect::<Result<Vec<_>>>()?;
                let labels = Tensor4::stack(&maps.iter().collect::<Vec<_>>())?;
                (mask, Some(labels), Some(MixPlan::new(&samples, 3)?))
            }
            TrackerMode::Siamese => (mask_from_boxes(&boxes[d.n - 1..], (d.c, d.h, d.w), stride)?, None, None),
        };
        Ok(Self {
            state,
            samples,
            boxes,
            mask,
            labels,
            plan,
        })
    }

    pub fn mode(&self) -> TrackerMode {
        self.state.config.mode
    }

    pub fn mask(&self) -> &ObjectMask<T> {
        &self.mask
    }

    pub fn labels(&self) -> Option<&Tensor4<T>> {
        self.labels.as_ref()
    }

    /// `(K, N, 3, 3)` for this bank.
    pub fn kernel_dims(&self) -> Dims {
        let n = self.samples.dims().n;
        let k = match self.mode() {
            TrackerMode::Classifier => n,
            TrackerMode::Siamese => 1,
        };
        Dims::new(k, n, 3, 3)
    }

    fn current(&self) -> Tensor4<T> {
        self.samples.sample(self.samples.dims().n - 1)
    }

    fn current_cell(&self) -> (usize, usize) {
        let d = self.samples.dims();
        box_cell(&self.boxes[d.n - 1], self.state.stride, d.h, d.w)
    }

    /// The samples the update consumes when no augmentation is applied.
    pub fn raw_input(&self) -> Tensor4<T> {
        match self.mode() {
            TrackerMode::Classifier => self.samples.clone(),
            TrackerMode::Siamese => self.current(),
        }
    }

    /// Unblended augmented samples: the mixed bank (classifier) or the
    /// refreshed newest sample (Siamese).
    pub fn mixed(&self, kernels: &MixKernelPair<T>) -> Result<Tensor4<T>> {
        if kernels.dims() != self.kernel_dims() {
            return Err(Error::shape("update_mix", kernels.dims(), self.kernel_dims()));
        }
        match &self.plan {
            Some(plan) => plan.combine(kernels, &self.mask),
            None => template_refresh(&self.current(), kernels, &self.mask),
        }
    }

    /// `alpha_aug * mixed + alpha_raw * raw`.
    pub fn augmented(&self, kernels: &MixKernelPair<T>, blend: &BlendConfig) -> Result<Tensor4<T>> {
        alpha_blend(&self.mixed(kernels)?, &self.raw_input(), blend)
    }

    /// Apply the tracker's update rule to prepared input samples.
    pub fn fit(&self, input: &Tensor4<T>) -> Result<(ObjectModel<T>, Option<FitTrace<T>>)> {
        let cfg = &self.state.config;
        match (&self.state.model, &self.labels) {
            (ObjectModel::Template(theta), _) => {
                let t = theta.dims().h;
                let fresh = crop(input, self.current_cell(), t);
                let r = T::lit(cfg.template_rate);
                let theta = theta.zip_map(&fresh, "template_update", |a, b| (T::one() - r) * a + r * b)?;
                Ok((ObjectModel::Template(theta), None))
            }
            (ObjectModel::Classifier { weight, bias }, Some(labels)) => {
                let trace = gradient_steps(input, labels, weight.clone(), *bias, self.state.step_size, cfg.reg, cfg.steps_per_update)?;
                let (w, b) = trace.params.last().cloned().unwrap();
                Ok((ObjectModel::Classifier { weight: w, bias: b }, Some(trace)))
            }
            (ObjectModel::Classifier { .. }, None) => Err(Error::invalid("update_fit", "classifier bank without labels")),
        }
    }

    /// State after an update on `input`.
    pub fn updated_state(&self, input: &Tensor4<T>) -> Result<TrackerState<T>> {
        let (model, _) = self.fit(input)?;
        Ok(TrackerState {
            model,
            ..self.state.clone()
        })
    }
}

/// `steps` fixed-size gradient steps on [`classifier_objective`].
pub fn gradient_steps<T: Scalar>(
    samples: &Tensor4<T>,
    labels: &Tensor4<T>,
    weight: Tensor4<T>,
    bias: T,
    step: f64,
    reg: f64,
    steps: usize,
) -> Result<FitTrace<T>> {
    let k = weight.dims().h;
    let patches = Patches::new(samples, k, k, k / 2)?;
    let c = T::lit(2.0 / samples.dims().n as f64);
    let eta = T::lit(step);
    let decay = T::one() - T::lit(2.0 * step * reg);
    let mut params = vec![(weight, bias)];
    let mut residuals = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (w, b) = params.last().unwrap();
        let r = patches.conv(w)?.map(|v| v + *b).sub(labels)?;
        let gk = patches.grad_kernel(&r)?;
        let w_next = w.zip_map(&gk, "gradient_step", |wi, gi| decay * wi - eta * c * gi)?;
        let b_next = *b - eta * c * r.sum();
        residuals.push(r);
        params.push((w_next, b_next));
    }
    Ok(FitTrace { params, residuals })
}

/// An update set plus a query embedding and its target heat map: the
/// objective `|heat(update(kernels), query) - target|^2`.
#[derive(Debug, Clone)]
pub struct UpdateProblem<T> {
    pub set: UpdateSet<T>,
    pub query: Tensor4<T>,
    pub target: Tensor4<T>,
    pub blend: BlendConfig,
}

impl<T: Scalar> UpdateProblem<T> {
    pub fn new(set: UpdateSet<T>, query: Tensor4<T>, target: Tensor4<T>, blend: BlendConfig) -> Result<Self> {
        let s = set.samples.dims();
        let q = query.dims();
        if q != Dims::new(1, s.c, s.h, s.w) {
            return Err(Error::shape("update_problem", q, s));
        }
        if target.dims() != Dims::new(1, 1, s.h, s.w) {
            return Err(Error::shape("update_problem", target.dims(), Dims::new(1, 1, s.h, s.w)));
        }
        blend.validate()?;
        Ok(Self { set, query, target, blend })
    }

    /// Heat map on the query after an update with `kernels`.
    pub fn heat(&self, kernels: &MixKernelPair<T>) -> Result<Tensor4<T>> {
        let input = self.set.augmented(kernels, &self.blend)?;
        let (model, _) = self.set.fit(&input)?;
        model.heat(&self.query)
    }

    pub fn objective(&self, kernels: &MixKernelPair<T>) -> Result<f64> {
        let heat = self.heat(kernels)?;
        Ok(heat.sub(&self.target)?.sum_sq().as_f64())
    }

    /// Objective and its gradients with respect to both kernels.
    pub fn gradient(&self, kernels: &MixKernelPair<T>) -> Result<(f64, Tensor4<T>, Tensor4<T>)> {
        let set = &self.set;
        let input = set.augmented(kernels, &self.blend)?;
        let (model, trace) = set.fit(&input)?;
        let heat = model.heat(&self.query)?;
        let diff = heat.sub(&self.target)?;
        let value = diff.sum_sq().as_f64();
        let gheat = diff.scale(T::lit(2.0));
        let a = T::lit(self.blend.alpha_aug);
        match (&model, trace) {
            (ObjectModel::Classifier { weight, .. }, Some(trace)) => {
                let g_input = backprop_steps(&self.query, &input, &trace, weight.dims(), &gheat, set.state.step_size, set.state.config.reg)?;
                let plan = set.plan.as_ref().expect("classifier sets carry a mix plan");
                let (go, gb) = plan.combine_grad(&set.mask, &g_input.scale(a))?;
                Ok((value, go, gb))
            }
            (ObjectModel::Template(theta), _) => {
                let t = theta.dims();
                let gtheta = conv2d_grad_kernel(&self.query, t, &gheat, t.h / 2)?;
                let r = T::lit(set.state.config.template_rate);
                let g_cur = uncrop(&gtheta, set.current_cell(), input.dims()).scale(r * a);
                let (go, gb) = template_refresh_grad(&set.current(), set.kernel_dims(), &set.mask, &g_cur)?;
                Ok((value, go, gb))
            }
            _ => Err(Error::invalid("update_gradient", "classifier update produced no trace")),
        }
    }
}

/// Reverse pass through [`gradient_steps`] followed by the query heat map:
/// returns the gradient with respect to the training samples.
fn backprop_steps<T: Scalar>(
    query: &Tensor4<T>,
    samples: &Tensor4<T>,
    trace: &FitTrace<T>,
    wdims: Dims,
    gheat: &Tensor4<T>,
    step: f64,
    reg: f64,
) -> Result<Tensor4<T>> {
    let pad = wdims.h / 2;
    let patches = Patches::new(samples, wdims.h, wdims.w, pad)?;
    let c = T::lit(step * 2.0 / samples.dims().n as f64);
    let decay = T::one() - T::lit(2.0 * step * reg);
    let mut gw = conv2d_grad_kernel(query, wdims, gheat, pad)?;
    let mut gb = gheat.sum();
    let mut gs = Tensor4::zeros(samples.dims());
    for t in (0..trace.residuals.len()).rev() {
        let (w_t, _) = &trace.params[t];
        let gr = patches.conv(&gw)?.map(|v| -c * (v + gb));
        gs.axpy(-c, &conv2d_grad_input(samples.dims(), &gw, &trace.residuals[t], pad)?)?;
        gs.axpy(T::one(), &conv2d_grad_input(samples.dims(), w_t, &gr, pad)?)?;
        gw = gw.scale(decay);
        gw.axpy(T::one(), &patches.grad_kernel(&gr)?)?;
        gb = gb + gr.sum();
    }
    Ok(gs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor4d;
    use crate::Rng;

    fn classifier_state(c: usize, rng: &mut Rng) -> TrackerState<f64> {
        TrackerState {
            config: TrackerConfig {
                capacity: 4,
                kernel: 3,
                reg: 0.05,
                ..TrackerConfig::classifier()
            },
            model: ObjectModel::Classifier {
                weight: Tensor4d::randn([1, c, 3, 3], 0.2, rng),
                bias: 0.1,
            },
            step_size: 0.05,
            stride: 4,
            bbox: BoundingBox::new(8.0, 8.0, 8.0, 8.0).unwrap(),
        }
    }

    fn siamese_state(c: usize, rng: &mut Rng) -> TrackerState<f64> {
        TrackerState {
            config: TrackerConfig {
                capacity: 4,
                kernel: 3,
                template_rate: 0.3,
                ..TrackerConfig::siamese()
            },
            model: ObjectModel::Template(Tensor4d::randn([1, c, 3, 3], 0.5, rng)),
            step_size: 0.0,
            stride: 4,
            bbox: BoundingBox::new(8.0, 8.0, 8.0, 8.0).unwrap(),
        }
    }

    fn random_boxes(n: usize, rng: &mut Rng) -> Vec<BoundingBox> {
        (0..n)
            .map(|_| BoundingBox::new(rng.uniform_in(0.0, 14.0), rng.uniform_in(0.0, 14.0), 8.0, 8.0).unwrap())
            .collect()
    }

    fn problem(state: TrackerState<f64>, rng: &mut Rng) -> UpdateProblem<f64> {
        let (n, c, h) = (4, 2, 6);
        let x = Tensor4d::randn([n, c, h, h], 1.0, rng);
        let set = UpdateSet::new(state, x, random_boxes(n, rng)).unwrap();
        let q = Tensor4d::randn([1, c, h, h], 1.0, rng);
        let target = gaussian_map(h, h, (2.0, 3.0), 1.0).unwrap();
        UpdateProblem::new(set, q, target, BlendConfig { alpha_aug: 0.5, alpha_raw: 0.8 }).unwrap()
    }

    fn random_kernels(dims: Dims, rng: &mut Rng) -> MixKernelPair<f64> {
        MixKernelPair::new(Tensor4d::randn(dims, 0.3, rng), Tensor4d::randn(dims, 0.3, rng)).unwrap()
    }

    fn check_fd(p: &UpdateProblem<f64>, rng: &mut Rng) {
        let k = random_kernels(p.set.kernel_dims(), rng);
        let (value, go, gb) = p.gradient(&k).unwrap();
        assert!((value - p.objective(&k).unwrap()).abs() < 1e-12 * value.max(1.0));
        let eps = 1e-6;
        for branch in 0..2 {
            for _ in 0..6 {
                let idx = rng.below(k.dims().len());
                let bump = |delta: f64| {
                    let mut kk = k.clone();
                    let w = if branch == 0 { &mut kk.w_obj } else { &mut kk.w_bkg };
                    w.data_mut()[idx] += delta;
                    p.objective(&kk).unwrap()
                };
                let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
                let an = if branch == 0 { go.data()[idx] } else { gb.data()[idx] };
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
                assert!(rel < 1e-5, "branch {branch} idx {idx}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn classifier_gradient_matches_fd() {
        let mut rng = Rng::new(31);
        let state = classifier_state(2, &mut rng);
        let p = problem(state, &mut rng);
        check_fd(&p, &mut rng);
    }

    #[test]
    fn siamese_gradient_matches_fd() {
        let mut rng = Rng::new(32);
        let state = siamese_state(2, &mut rng);
        let p = problem(state, &mut rng);
        check_fd(&p, &mut rng);
    }

    #[test]
    fn gradient_steps_decrease_objective() {
        let mut rng = Rng::new(33);
        let x = Tensor4d::randn([5, 3, 7, 7], 1.0, &mut rng);
        let labels = Tensor4d::stack(&(0..5).map(|i| gaussian_map(7, 7, (i as f64, 3.0), 1.0).unwrap()).collect::<Vec<_>>().iter().collect::<Vec<_>>()).unwrap();
        let l = lipschitz_estimate(&x, 3, 0.01, 50).unwrap();
        let trace = gradient_steps(&x, &labels, Tensor4d::zeros([1, 3, 3, 3]), 0.0, 1.0 / l, 0.01, 10).unwrap();
        let vals: Vec<f64> = trace
            .params
            .iter()
            .map(|(w, b)| classifier_objective(&x, &labels, w, *b, 0.01).unwrap())
            .collect();
        assert!(vals.windows(2).all(|v| v[1] < v[0]), "{vals:?}");
    }

    #[test]
    fn lipschitz_matches_dense_eigenvalue() {
        // tiny problem: build the Hessian explicitly and compare with power iteration
        let mut rng = Rng::new(34);
        let x = Tensor4d::randn([3, 1, 3, 3], 1.0, &mut rng);
        let reg = 0.1;
        let dim = 10;
        let apply = |v: &[f64]| -> Vec<f64> {
            let w = Tensor4d::from_vec([1, 1, 3, 3], v[..9].to_vec()).unwrap();
            let r = conv2d(&x, &w, 1).unwrap().map(|t| t + v[9]);
            let gw = conv2d_grad_kernel(&x, w.dims(), &r, 1).unwrap();
            let mut out: Vec<f64> = gw.data().iter().zip(&v[..9]).map(|(g, wi)| 2.0 / 3.0 * g + 2.0 * reg * wi).collect();
            out.push(2.0 / 3.0 * r.sum());
            out
        };
        let cols: Vec<Vec<f64>> = (0..dim).map(|j| apply(&(0..dim).map(|i| f64::from(u8::from(i == j))).collect::<Vec<_>>())).collect();
        // dense power iteration on the explicit (symmetric PSD) matrix
        let mut v = vec![1.0; dim];
        let mut best = 0.0;
        for _ in 0..5000 {
            let hv: Vec<f64> = (0..dim).map(|i| (0..dim).map(|j| cols[j][i] * v[j]).sum()).collect();
            let norm = hv.iter().map(|a| a * a).sum::<f64>().sqrt();
            best = norm / v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v = hv.iter().map(|a| a / norm).collect();
        }
        let est = lipschitz_estimate(&x, 3, reg, 200).unwrap();
        assert!((est - best).abs() < 1e-6 * best, "{est} vs {best}");
    }

    #[test]
    fn localize_finds_planted_template() {
        let mut rng = Rng::new(35);
        let template = Tensor4d::uniform([1, 3, 3, 3], 0.5, 1.0, &mut rng);
        let mut emb = Tensor4d::zeros([1, 3, 12, 12]);
        for c in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    emb.set(0, c, 6 + i, 2 + j, template.get(0, c, i, j));
                }
            }
        }
        let mut state = siamese_state(3, &mut rng);
        state.model = ObjectModel::Template(template);
        state.config.search_radius = None;
        let loc = localize(&state, &emb).unwrap();
        assert_eq!(loc.cell, (7, 3));
        assert_eq!(loc.heat.dims(), Dims::new(1, 1, 12, 12));
        assert_eq!(loc.bbox.center(), (cell_to_pixel(3.0, 4), cell_to_pixel(7.0, 4)));
    }

    #[test]
    fn zero_classifier_is_flat() {
        let mut rng = Rng::new(36);
        let mut state = classifier_state(2, &mut rng);
        state.model = ObjectModel::Classifier {
            weight: Tensor4d::zeros([1, 2, 3, 3]),
            bias: 0.0,
        };
        state.config.search_radius = None;
        let loc = localize(&state, &Tensor4d::randn([1, 2, 5, 5], 1.0, &mut rng)).unwrap();
        assert_eq!(loc.cell, (0, 0));
        assert!(loc.heat.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn search_window_limits_peak() {
        let mut state = classifier_state(1, &mut Rng::new(1));
        state.model = ObjectModel::Classifier {
            weight: Tensor4d::from_fn([1, 1, 3, 3], |_, _, y, x| f64::from(u8::from(y == 1 && x == 1))),
            bias: 0.0,
        };
        state.config.search_radius = Some(1);
        // previous box centred on cell (3, 3)
        state.bbox = BoundingBox::new(10.5, 10.5, 4.0, 4.0).unwrap();
        let mut emb = Tensor4d::zeros([1, 1, 10, 10]);
        emb.set(0, 0, 9, 9, 5.0);
        emb.set(0, 0, 4, 2, 1.0);
        assert_eq!(localize(&state, &emb).unwrap().cell, (4, 2));
        state.config.search_radius = None;
        assert_eq!(localize(&state, &emb).unwrap().cell, (9, 9));
    }

    #[test]
    fn crop_adjoint() {
        let mut rng = Rng::new(37);
        let x = Tensor4d::randn([1, 2, 6, 6], 1.0, &mut rng);
        let g = Tensor4d::randn([1, 2, 5, 5], 1.0, &mut rng);
        for center in [(0, 0), (3, 2), (5, 5)] {
            let lhs = crop(&x, center, 5).dot(&g).unwrap();
            let rhs = x.dot(&uncrop(&g, center, x.dims())).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_objective_gives_zero_gradient() {
        let mut rng = Rng::new(38);
        let state = classifier_state(2, &mut rng);
        let mut p = problem(state, &mut rng);
        let k = random_kernels(p.set.kernel_dims(), &mut rng);
        p.target = p.heat(&k).unwrap();
        let (v, go, gb) = p.gradient(&k).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(go.max_abs(), 0.0);
        assert_eq!(gb.max_abs(), 0.0);
    }

    #[test]
    fn objective_matches_naive_sum() {
        let mut rng = Rng::new(39);
        let state = classifier_state(2, &mut rng);
        let p = problem(state, &mut rng);
        let k = random_kernels(p.set.kernel_dims(), &mut rng);
        let heat = p.heat(&k).unwrap();
        let mut naive = 0.0;
        for i in 0..heat.data().len() {
            let d = heat.data()[i] - p.target.data()[i];
            naive += d * d;
        }
        assert!((p.objective(&k).unwrap() - naive).abs() < 1e-10);
        // shifting heat and target together leaves the objective unchanged
        let shifted: f64 = heat.map(|v| v + 3.0).sub(&p.target.map(|v| v + 3.0)).unwrap().sum_sq();
        assert!((shifted - naive).abs() < 1e-9);
    }
}
