//! Mixing kernels found by direct gradient descent on the heat-map objective
//! of an [`UpdateProblem`], instead of predicted by a network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mix::MixKernelPair;
use crate::sim::UpdateProblem;
use crate::tensor::{Scalar, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptInit {
    /// Every entry `1/(9N)`, the untrained MixNet's output.
    UniformAverage,
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub init: OptInit,
    /// Halve the step while it would raise the objective.
    pub guarded: bool,
    /// Halvings tried before giving up on an iteration (then no step).
    pub max_halvings: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            step_size: 0.1,
            init: OptInit::UniformAverage,
            guarded: true,
            max_halvings: 10,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(self.step_size > 0.0) {
            return Err(Error::Config(format!("opt needs iterations >= 1 and a positive step, got {self:?}")));
        }
        Ok(())
    }
}

pub fn opt_objective<T: Scalar>(problem: &UpdateProblem<T>, kernels: &MixKernelPair<T>) -> Result<f64> {
    problem.objective(kernels)
}

/// `(grad_w_obj, grad_w_bkg)` of [`opt_objective`].
pub fn opt_gradient<T: Scalar>(problem: &UpdateProblem<T>, kernels: &MixKernelPair<T>) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let (_, go, gb) = problem.gradient(kernels)?;
    Ok((go, gb))
}

pub fn initial_kernels<T: Scalar>(problem: &UpdateProblem<T>, init: OptInit) -> MixKernelPair<T> {
    let d = problem.set.kernel_dims();
    let v = match init {
        OptInit::UniformAverage => T::one() / T::lit((9 * d.c) as f64),
        OptInit::Zeros => T::zero(),
    };
    MixKernelPair::uniform(d.n, d.c, v)
}

fn step_from<T: Scalar>(k: &MixKernelPair<T>, go: &Tensor4<T>, gb: &Tensor4<T>, step: f64) -> Result<MixKernelPair<T>> {
    let s = T::lit(step);
    Ok(MixKernelPair {
        w_obj: k.w_obj.zip_map(go, "opt_step", |w, g| w - s * g)?,
        w_bkg: k.w_bkg.zip_map(gb, "opt_step", |w, g| w - s * g)?,
    })
}

/// Gradient descent on the kernels. Returns the final kernels and the
/// objective before the first and after every iteration
/// (`iterations + 1` values). In guarded mode a step that would raise the
/// objective is halved until it does not, and skipped if no halving helps,
/// so the trace never increases.
pub fn deepmix_opt<T: Scalar>(problem: &UpdateProblem<T>, cfg: &OptConfig) -> Result<(MixKernelPair<T>, Vec<f64>)> {
    cfg.validate()?;
    let finite = |v: f64, i: usize| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("opt objective at iteration {i}")))
        }
    };
    let mut kernels = initial_kernels(problem, cfg.init);
    let mut value = finite(problem.objective(&kernels)?, 0)?;
    let mut trace = vec![value];
    for i in 1..=cfg.iterations {
        let (v, go, gb) = problem.gradient(&kernels)?;
        finite(v, i)?;
        let mut step = cfg.step_size;
        if cfg.guarded {
            for _ in 0..=cfg.max_halvings {
                let cand = step_from(&kernels, &go, &gb, step)?;
                let cv = problem.objective(&cand)?;
                if cv.is_finite() && cv <= value {
                    kernels = cand;
                    value = cv;
                    break;
                }
                step *= 0.5;
            }
        } else {
            kernels = step_from(&kernels, &go, &gb, step)?;
            value = finite(problem.objective(&kernels)?, i)?;
        }
        trace.push(value);
    }
    Ok((kernels, trace))
}
