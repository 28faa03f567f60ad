//! Kernel-predicting network.
//!
//! Each branch maps the channel-mean of the sample bank, `(1, N, h, w)`, to a
//! `(K, N, 3, 3)` mixing kernel:
//!
//! ```text
//! conv3x3 N->2N, ReLU, conv3x3 2N->2N, ReLU, conv3x3 2N->K*N, avg-pool to 3x3
//! ```
//!
//! Dual mode has independent object and background branches; single mode has
//! one branch whose kernel serves both roles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{Container, Record};
use crate::error::{Error, Result};
use crate::mix::MixKernelPair;
use crate::tensor::{conv2d, conv2d_grad, conv2d_grad_kernel, pooled_conv2d, pooled_conv2d_grad, Dims, Scalar, Tensor4};
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branches {
    Dual,
    Single,
}

impl Branches {
    pub fn count(self) -> usize {
        match self {
            Branches::Dual => 2,
            Branches::Single => 1,
        }
    }
}

const BRANCH_NAMES: [&str; 2] = ["obj", "bkg"];
const LAYER_NAMES: [&str; 3] = ["conv1", "conv2", "conv3"];

/// One 3x3 convolution with per-channel bias stored as `(1, cout, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
}

impl<T: Scalar> ConvLayer<T> {
    fn he_uniform(cin: usize, cout: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (cin * 9) as f64).sqrt();
        Self {
            weight: Tensor4::uniform(Dims::new(cout, cin, 3, 3), -bound, bound, rng),
            bias: Tensor4::zeros(Dims::new(1, cout, 1, 1)),
        }
    }

    fn add_bias(&self, x: &mut Tensor4<T>) {
        let d = x.dims();
        let plane = d.plane();
        for (c, chunk) in x.data_mut().chunks_mut(plane).enumerate() {
            let b = self.bias.data()[c % d.c];
            chunk.iter_mut().for_each(|v| *v = *v + b);
        }
    }
}

fn bias_grad<T: Scalar>(g: &Tensor4<T>) -> Tensor4<T> {
    let d = g.dims();
    let mut out = Tensor4::zeros(Dims::new(1, d.c, 1, 1));
    for (c, chunk) in g.data().chunks(d.plane()).enumerate() {
        let s = chunk.iter().fold(T::zero(), |a, &v| a + v);
        out.data_mut()[c % d.c] = out.data()[c % d.c] + s;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub layers: [ConvLayer<T>; 3],
}

/// Intermediate activations of one branch, kept for the backward pass.
#[derive(Debug, Clone)]
struct BranchCache<T> {
    a1: Tensor4<T>,
    r1: Tensor4<T>,
    a2: Tensor4<T>,
    r2: Tensor4<T>,
}

impl<T: Scalar> Branch<T> {
    fn forward(&self, z: &Tensor4<T>, k: usize, n: usize) -> Result<(Tensor4<T>, BranchCache<T>)> {
        let [l1, l2, l3] = &self.layers;
        let mut a1 = conv2d(z, &l1.weight, 1)?;
        l1.add_bias(&mut a1);
        let r1 = a1.relu();
        let mut a2 = conv2d(&r1, &l2.weight, 1)?;
        l2.add_bias(&mut a2);
        let r2 = a2.relu();
        let mut p = pooled_conv2d(&r2, &l3.weight, 1, 3, 3)?;
        l3.add_bias(&mut p);
        Ok((p.reshape(Dims::new(k, n, 3, 3))?, BranchCache { a1, r1, a2, r2 }))
    }

    fn backward(&self, z: &Tensor4<T>, cache: &BranchCache<T>, gk: &Tensor4<T>) -> Result<[ConvLayer<T>; 3]> {
        let [l1, l2, l3] = &self.layers;
        let gp = gk.clone().reshape(Dims::new(1, l3.weight.dims().n, 3, 3))?;
        let gb3 = bias_grad(&gp);
        let (gr2, gw3) = pooled_conv2d_grad(&cache.r2, &l3.weight, &gp, 1)?;
        let ga2 = gr2.zip_map(&cache.a2, "relu_grad", |g, a| if a > T::zero() { g } else { T::zero() })?;
        let gb2 = bias_grad(&ga2);
        let (gr1, gw2) = conv2d_grad(&cache.r1, &l2.weight, &ga2, 1)?;
        let ga1 = gr1.zip_map(&cache.a1, "relu_grad", |g, a| if a > T::zero() { g } else { T::zero() })?;
        let gb1 = bias_grad(&ga1);
        let gw1 = conv2d_grad_kernel(z, l1.weight.dims(), &ga1, 1)?;
        Ok([
            ConvLayer { weight: gw1, bias: gb1 },
            ConvLayer { weight: gw2, bias: gb2 },
            ConvLayer { weight: gw3, bias: gb3 },
        ])
    }
}

/// Network parameters. `n` and `k` are fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MixNet<T> {
    n: usize,
    k: usize,
    branches: Vec<Branch<T>>,
}

/// Activations from [`MixNet::forward_cached`].
#[derive(Debug, Clone)]
pub struct MixNetCache<T> {
    z: Tensor4<T>,
    branches: Vec<BranchCache<T>>,
}

/// Per-sample channel mean: `(N, C, h, w) -> (1, N, h, w)`.
pub fn channel_mean<T: Scalar>(samples: &Tensor4<T>) -> Tensor4<T> {
    let d = samples.dims();
    let plane = d.plane();
    let inv = T::one() / T::lit(d.c as f64);
    let mut out = Tensor4::zeros(Dims::new(1, d.n, d.h, d.w));
    for n in 0..d.n {
        let dst = &mut out.data_mut()[n * plane..(n + 1) * plane];
        for chunk in samples.sample_slice(n).chunks(plane) {
            for (o, &v) in dst.iter_mut().zip(chunk) {
                *o = *o + v;
            }
        }
        dst.iter_mut().for_each(|v| *v = *v * inv);
    }
    out
}

impl<T: Scalar> MixNet<T> {
    /// He-uniform first two layers, zero biases; the last layer has zero
    /// weights and bias `1/(9n)`, so every predicted kernel entry starts at
    /// `1/(9n)`.
    pub fn new(n: usize, k: usize, branches: Branches, rng: &mut Rng) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::invalid("mixnet_init", format!("n={n}, k={k} must be positive")));
        }
        let init = T::one() / T::lit((9 * n) as f64);
        let branches = (0..branches.count())
            .map(|_| Branch {
                layers: [
                    ConvLayer::he_uniform(n, 2 * n, rng),
                    ConvLayer::he_uniform(2 * n, 2 * n, rng),
                    ConvLayer {
                        weight: Tensor4::zeros(Dims::new(k * n, 2 * n, 3, 3)),
                        bias: Tensor4::full(Dims::new(1, k * n, 1, 1), init),
                    },
                ],
            })
            .collect();
        Ok(Self { n, k, branches })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> Branches {
        if self.branches.len() == 2 {
            Branches::Dual
        } else {
            Branches::Single
        }
    }

    pub fn branches(&self) -> &[Branch<T>] {
        &self.branches
    }

    pub fn branches_mut(&mut self) -> &mut [Branch<T>] {
        &mut self.branches
    }

    fn check_input(&self, samples: &Tensor4<T>) -> Result<()> {
        let d = samples.dims();
        if d.n != self.n {
            return Err(Error::shape("mixnet_forward", d, format!("{}xCxhxw", self.n)));
        }
        if d.h < 3 || d.w < 3 {
            return Err(Error::invalid("mixnet_forward", format!("spatial dims of {d} below 3x3")));
        }
        Ok(())
    }

    pub fn forward(&self, samples: &Tensor4<T>) -> Result<MixKernelPair<T>> {
        Ok(self.forward_cached(samples)?.0)
    }

    pub fn forward_cached(&self, samples: &Tensor4<T>) -> Result<(MixKernelPair<T>, MixNetCache<T>)> {
        self.check_input(samples)?;
        let z = channel_mean(samples);
        let mut kernels = Vec::with_capacity(2);
        let mut caches = Vec::with_capacity(2);
        for b in &self.branches {
            let (w, c) = b.forward(&z, self.k, self.n)?;
            kernels.push(w);
            caches.push(c);
        }
        let pair = match kernels.len() {
            2 => {
                let w_bkg = kernels.pop().unwrap();
                MixKernelPair::new(kernels.pop().unwrap(), w_bkg)?
            }
            _ => MixKernelPair::shared(kernels.pop().unwrap())?,
        };
        Ok((pair, MixNetCache { z, branches: caches }))
    }

    /// Parameter gradients given the loss gradients with respect to both
    /// predicted kernels. In single mode the two are summed into the one
    /// branch.
    pub fn backward(&self, cache: &MixNetCache<T>, g_obj: &Tensor4<T>, g_bkg: &Tensor4<T>) -> Result<Vec<Tensor4<T>>> {
        let want = Dims::new(self.k, self.n, 3, 3);
        if g_obj.dims() != want || g_bkg.dims() != want {
            return Err(Error::shape("mixnet_backward", g_obj.dims(), want));
        }
        let mut out = Vec::with_capacity(6 * self.branches.len());
        match self.mode() {
            Branches::Dual => {
                for ((b, c), g) in self.branches.iter().zip(&cache.branches).zip([g_obj, g_bkg]) {
                    out.extend(flatten(b.backward(&cache.z, c, g)?));
                }
            }
            Branches::Single => {
                let g = g_obj.add(g_bkg)?;
                out.extend(flatten(self.branches[0].backward(&cache.z, &cache.branches[0], &g)?));
            }
        }
        Ok(out)
    }

    /// Parameters in a fixed order: per branch, per layer, weight then bias.
    pub fn params(&self) -> Vec<Tensor4<T>> {
        self.branches.iter().flat_map(|b| flatten(b.layers.clone())).collect()
    }

    pub fn set_params(&mut self, params: Vec<Tensor4<T>>) -> Result<()> {
        let want = self.params();
        if params.len() != want.len() {
            return Err(Error::invalid("mixnet_params", format!("{} tensors, expected {}", params.len(), want.len())));
        }
        for (p, w) in params.iter().zip(&want) {
            if p.dims() != w.dims() {
                return Err(Error::shape("mixnet_params", p.dims(), w.dims()));
            }
            if !p.is_finite() {
                return Err(Error::NonFinite("mixnet parameter".into()));
            }
        }
        let mut it = params.into_iter();
        for b in &mut self.branches {
            for l in &mut b.layers {
                l.weight = it.next().unwrap();
                l.bias = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Tensor names in [`MixNet::params`] order, e.g. `obj.conv2.bias`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in BRANCH_NAMES.iter().take(self.branches.len()) {
            for l in LAYER_NAMES {
                names.push(format!("{b}.{l}.weight"));
                names.push(format!("{b}.{l}.bias"));
            }
        }
        names
    }

    /// Container with every parameter and, if given, one `<name>.momentum`
    /// slot per parameter.
    pub fn to_container(&self, momentum: Option<&[Tensor4<T>]>) -> Result<Container> {
        let mut c = Container::default();
        let names = self.param_names();
        for (name, p) in names.iter().zip(self.params()) {
            c.push(Record::from_tensor(name.clone(), &p));
        }
        if let Some(m) = momentum {
            if m.len() != names.len() {
                return Err(Error::invalid("save_weights", "momentum slot count does not match parameters"));
            }
            for (name, v) in names.iter().zip(m) {
                c.push(Record::from_tensor(format!("{name}.momentum"), v));
            }
        }
        Ok(c)
    }

    /// Rebuild from a container; `n`, `k` and the branch count come from the
    /// stored shapes. Returns the momentum slots when all are present.
    pub fn from_container(c: &Container) -> Result<(Self, Option<Vec<Tensor4<T>>>)> {
        let w1: Tensor4<T> = c.require("obj.conv1.weight")?.to_tensor()?;
        let n = w1.dims().c;
        let w3: Tensor4<T> = c.require("obj.conv3.weight")?.to_tensor()?;
        if n == 0 || w3.dims().n % n != 0 {
            return Err(Error::Format(format!("conv3 output {} is not a multiple of n={n}", w3.dims().n)));
        }
        let k = w3.dims().n / n;
        let mode = if c.get("bkg.conv1.weight").is_some() {
            Branches::Dual
        } else {
            Branches::Single
        };
        let mut net = Self::new(n, k, mode, &mut Rng::new(0))?;
        let names = net.param_names();
        let params = names
            .iter()
            .map(|name| c.require(name)?.to_tensor())
            .collect::<Result<Vec<_>>>()?;
        net.set_params(params).map_err(|e| Error::Format(e.to_string()))?;
        let slots: Vec<_> = names.iter().filter_map(|name| c.get(&format!("{name}.momentum"))).collect();
        let momentum = if slots.len() == names.len() {
            Some(slots.iter().map(|r| r.to_tensor()).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        Ok((net, momentum))
    }

    pub fn save(&self, path: impl AsRef<Path>, momentum: Option<&[Tensor4<T>]>) -> Result<()> {
        self.to_container(momentum)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<Vec<Tensor4<T>>>)> {
        Self::from_container(&Container::load(path)?)
    }
}

fn flatten<T>(layers: [ConvLayer<T>; 3]) -> Vec<Tensor4<T>> {
    layers.into_iter().flat_map(|l| [l.weight, l.bias]).collect()
}
