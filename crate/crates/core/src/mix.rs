//! Object-aware sample mixing.
//!
//! A bank of `N` embeddings `X (N, C, h, w)` is fused into `K` new samples by
//! two `K x N x k x k` kernels, one for object regions and one for background:
//!
//! ```text
//! X^ = (W_obj * X) . M + (W_bkg * X) . (1 - M)
//! ```
//!
//! where `*` filters every channel of `X` independently as an `N`-channel
//! image (zero padding, same spatial size) and `M` is the binary object mask.
//! The result is blended back with the raw samples as `a_aug X^ + a_raw X`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::tensor::{conv2d, conv2d_grad_input, Dims, Patches, Scalar, Tensor4};

/// Binary mask, constant across channels, marking each sample's object cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask<T> {
    mask: Tensor4<T>,
    stride: usize,
    /// `true` for samples whose box missed the feature map entirely.
    empty: Vec<bool>,
}

impl<T: Scalar> ObjectMask<T> {
    pub fn tensor(&self) -> &Tensor4<T> {
        &self.mask
    }

    pub fn dims(&self) -> Dims {
        self.mask.dims()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Per-sample flag: the box lay entirely outside the map.
    pub fn empty_flags(&self) -> &[bool] {
        &self.empty
    }

    pub fn any_empty(&self) -> bool {
        self.empty.iter().any(|&e| e)
    }

    /// Wrap an existing 0/1 tensor (channel-constant).
    pub fn from_tensor(mask: Tensor4<T>, stride: usize) -> Result<Self> {
        if mask.data().iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::invalid("object_mask", "entries must be exactly 0 or 1"));
        }
        let d = mask.dims();
        let plane = d.plane();
        let mut empty = Vec::with_capacity(d.n);
        for n in 0..d.n {
            let s = mask.sample_slice(n);
            let first = &s[..plane];
            if (1..d.c).any(|c| &s[c * plane..(c + 1) * plane] != first) {
                return Err(Error::invalid("object_mask", "mask must be constant across channels"));
            }
            empty.push(first.iter().all(|&v| v == T::zero()));
        }
        Ok(Self { mask, stride, empty })
    }

    pub fn complement(&self) -> Self {
        let mask = self.mask.map(|v| T::one() - v);
        let plane = self.mask.dims().plane();
        let empty = (0..mask.dims().n)
            .map(|n| mask.sample_slice(n)[..plane].iter().all(|&v| v == T::zero()))
            .collect();
        Self {
            mask,
            stride: self.stride,
            empty,
        }
    }

    /// Mask of the single sample `i`, as a one-sample mask.
    pub fn sample(&self, i: usize) -> Self {
        Self {
            mask: self.mask.sample(i),
            stride: self.stride,
            empty: vec![self.empty[i]],
        }
    }
}

/// Feature-cell span `[lo, hi]` covered by `[start, start + extent)` pixels,
/// rounded outward and clamped to `0..len`. `None` when it misses the map.
fn cell_span(start: f64, extent: f64, stride: usize, len: usize) -> Option<(usize, usize)> {
    let s = stride as f64;
    let lo = (start / s).floor() as i64;
    let hi = ((start + extent) / s).ceil() as i64 - 1;
    let lo = lo.max(0);
    let hi = hi.min(len as i64 - 1);
    (lo <= hi).then_some((lo as usize, hi as usize))
}

/// Object masks for `N` boxes on a `(c, h, w)` feature map with the given
/// stride (pixels per cell). Cell rows `floor(y/stride) ..= ceil((y+h)/stride)-1`
/// are set, likewise for columns, clamped to the map. A box that misses the
/// map yields an all-zero plane and raises its flag in
/// [`ObjectMask::empty_flags`].
pub fn mask_from_boxes<T: Scalar>(boxes: &[BoundingBox], feature: (usize, usize, usize), stride: usize) -> Result<ObjectMask<T>> {
    let (c, h, w) = feature;
    if boxes.is_empty() {
        return Err(Error::invalid("mask_from_boxes", "need at least one box"));
    }
    if stride == 0 {
        return Err(Error::invalid("mask_from_boxes", "stride must be positive"));
    }
    let mut mask = Tensor4::zeros(Dims::new(boxes.len(), c, h, w));
    let mut empty = Vec::with_capacity(boxes.len());
    let plane = h * w;
    for (n, b) in boxes.iter().enumerate() {
        let rows = cell_span(b.y, b.h, stride, h);
        let cols = cell_span(b.x, b.w, stride, w);
        let (Some((r0, r1)), Some((c0, c1))) = (rows, cols) else {
            empty.push(true);
            continue;
        };
        empty.push(false);
        let sample = mask.sample_slice_mut(n);
        for ch in 0..c {
            for y in r0..=r1 {
                sample[ch * plane + y * w + c0..=ch * plane + y * w + c1].fill(T::one());
            }
        }
    }
    Ok(ObjectMask { mask, stride, empty })
}

/// The object/background kernel pair, each `(K, N, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixKernelPair<T> {
    pub w_obj: Tensor4<T>,
    pub w_bkg: Tensor4<T>,
}

impl<T: Scalar> MixKernelPair<T> {
    pub fn new(w_obj: Tensor4<T>, w_bkg: Tensor4<T>) -> Result<Self> {
        if w_obj.dims() != w_bkg.dims() {
            return Err(Error::shape("mix_kernel_pair", w_obj.dims(), w_bkg.dims()));
        }
        let k = w_obj.dims();
        if k.h != k.w || k.h % 2 == 0 {
            return Err(Error::invalid("mix_kernel_pair", format!("kernels must be square and odd, got {k}")));
        }
        if !w_obj.is_finite() || !w_bkg.is_finite() {
            return Err(Error::NonFinite("mixing kernel".into()));
        }
        Ok(Self { w_obj, w_bkg })
    }

    /// Both roles share one kernel.
    pub fn shared(w: Tensor4<T>) -> Result<Self> {
        Self::new(w.clone(), w)
    }

    /// Every entry `value`.
    pub fn uniform(k: usize, n: usize, value: T) -> Self {
        let w = Tensor4::full(Dims::new(k, n, 3, 3), value);
        Self { w_obj: w.clone(), w_bkg: w }
    }

    /// Identity mixing: output `k` copies input `k` (requires `K == N`).
    pub fn delta(n: usize) -> Self {
        let mut w = Tensor4::zeros(Dims::new(n, n, 3, 3));
        for i in 0..n {
            w.set(i, i, 1, 1, T::one());
        }
        Self { w_obj: w.clone(), w_bkg: w }
    }

    pub fn dims(&self) -> Dims {
        self.w_obj.dims()
    }

    pub fn outputs(&self) -> usize {
        self.w_obj.dims().n
    }

    pub fn inputs(&self) -> usize {
        self.w_obj.dims().c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendConfig {
    pub alpha_aug: f64,
    pub alpha_raw: f64,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            alpha_aug: 0.05,
            alpha_raw: 0.8,
        }
    }
}

impl BlendConfig {
    /// Blend that returns the raw samples untouched.
    pub const IDENTITY: BlendConfig = BlendConfig {
        alpha_aug: 0.0,
        alpha_raw: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_aug >= 0.0 && self.alpha_raw >= 0.0) {
            return Err(Error::invalid("blend", format!("weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Precomputed patches of a sample bank, shared by every kernel applied to it.
///
/// The bank is viewed channel-major, `(C, N, h, w)`, so each feature channel
/// becomes one batch item filtered as an `N`-channel image.
#[derive(Debug, Clone)]
pub struct MixPlan<T> {
    samples: Dims,
    ksize: usize,
    patches: Patches<T>,
}

impl<T: Scalar> MixPlan<T> {
    pub fn new(samples: &Tensor4<T>, ksize: usize) -> Result<Self> {
        if ksize % 2 == 0 {
            return Err(Error::invalid("sample_mix_conv", format!("kernel size {ksize} must be odd")));
        }
        Ok(Self {
            samples: samples.dims(),
            ksize,
            patches: Patches::new(&samples.swap_nc(), ksize, ksize, ksize / 2)?,
        })
    }

    pub fn samples_dims(&self) -> Dims {
        self.samples
    }

    fn check_kernel(&self, kernel: &Tensor4<T>) -> Result<()> {
        let k = kernel.dims();
        if k.c != self.samples.n || k.h != self.ksize || k.w != self.ksize {
            return Err(Error::shape("sample_mix_conv", self.samples, k));
        }
        Ok(())
    }

    fn out_dims(&self, k: usize) -> Dims {
        Dims::new(k, self.samples.c, self.samples.h, self.samples.w)
    }

    /// `W * X`: `(K, C, h, w)`.
    pub fn mix(&self, kernel: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_kernel(kernel)?;
        Ok(self.patches.conv(kernel)?.swap_nc())
    }

    /// Gradient of `<W * X, grad_out>` with respect to `W`.
    pub fn kernel_grad(&self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = grad_out.dims();
        if g != self.out_dims(g.n) {
            return Err(Error::shape("sample_mix_conv_grad", g, self.out_dims(g.n)));
        }
        self.patches.grad_kernel(&grad_out.swap_nc())
    }

    /// Gradient of `<W * X, grad_out>` with respect to `X`.
    pub fn samples_grad(&self, kernel: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_kernel(kernel)?;
        let k = kernel.dims().n;
        if grad_out.dims() != self.out_dims(k) {
            return Err(Error::shape("sample_mix_conv_grad", grad_out.dims(), self.out_dims(k)));
        }
        let swapped = Dims::new(self.samples.c, self.samples.n, self.samples.h, self.samples.w);
        Ok(conv2d_grad_input(swapped, kernel, &grad_out.swap_nc(), self.ksize / 2)?.swap_nc())
    }

    fn check_mask(&self, kernels: &MixKernelPair<T>, mask: &ObjectMask<T>) -> Result<()> {
        self.check_kernel(&kernels.w_obj)?;
        let want = self.out_dims(kernels.outputs());
        if mask.dims() != want {
            return Err(Error::shape("deepmix_combine", mask.dims(), want));
        }
        Ok(())
    }

    /// `(W_obj * X) . M + (W_bkg * X) . (1 - M)`.
    pub fn combine(&self, kernels: &MixKernelPair<T>, mask: &ObjectMask<T>) -> Result<Tensor4<T>> {
        self.check_mask(kernels, mask)?;
        let obj = self.mix(&kernels.w_obj)?;
        let bkg = self.mix(&kernels.w_bkg)?;
        let mut out = obj;
        for ((o, &b), &m) in out.data_mut().iter_mut().zip(bkg.data()).zip(mask.tensor().data()) {
            *o = *o * m + b * (T::one() - m);
        }
        Ok(out)
    }

    /// Gradients of `<combine(kernels, mask), grad_out>` with respect to both
    /// kernels. The combination is linear in each kernel, so the kernels
    /// themselves are not needed.
    pub fn combine_grad(&self, mask: &ObjectMask<T>, grad_out: &Tensor4<T>) -> Result<(Tensor4<T>, Tensor4<T>)> {
        if mask.dims() != grad_out.dims() {
            return Err(Error::shape("deepmix_combine_grad", mask.dims(), grad_out.dims()));
        }
        let g_obj = grad_out.mul(mask.tensor())?;
        let g_bkg = grad_out.sub(&g_obj)?;
        Ok((self.kernel_grad(&g_obj)?, self.kernel_grad(&g_bkg)?))
    }
}

/// Filter every channel of `samples (N, C, h, w)` with `kernel (K, N, k, k)`,
/// treating the channel's `N` sample planes as input channels. Returns
/// `(K, C, h, w)`.
pub fn sample_mix_conv<T: Scalar>(samples: &Tensor4<T>, kernel: &Tensor4<T>) -> Result<Tensor4<T>> {
    if kernel.dims().c != samples.dims().n {
        return Err(Error::shape("sample_mix_conv", samples.dims(), kernel.dims()));
    }
    MixPlan::new(samples, kernel.dims().h)?.mix(kernel)
}

/// Adjoints of [`sample_mix_conv`]: `(grad_samples, grad_kernel)`.
pub fn sample_mix_conv_grad<T: Scalar>(
    samples: &Tensor4<T>,
    kernel: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    if kernel.dims().c != samples.dims().n {
        return Err(Error::shape("sample_mix_conv_grad", samples.dims(), kernel.dims()));
    }
    let plan = MixPlan::new(samples, kernel.dims().h)?;
    Ok((plan.samples_grad(kernel, grad_out)?, plan.kernel_grad(grad_out)?))
}

/// Object/background mixing of a sample bank. `mask` must already have the
/// output dims `(K, C, h, w)`.
pub fn deepmix_combine<T: Scalar>(samples: &Tensor4<T>, kernels: &MixKernelPair<T>, mask: &ObjectMask<T>) -> Result<Tensor4<T>> {
    if kernels.inputs() != samples.dims().n {
        return Err(Error::shape("deepmix_combine", samples.dims(), kernels.dims()));
    }
    MixPlan::new(samples, kernels.dims().h)?.combine(kernels, mask)
}

/// `alpha_aug * aug + alpha_raw * raw`.
pub fn alpha_blend<T: Scalar>(aug: &Tensor4<T>, raw: &Tensor4<T>, cfg: &BlendConfig) -> Result<Tensor4<T>> {
    cfg.validate()?;
    let (a, r) = (T::lit(cfg.alpha_aug), T::lit(cfg.alpha_raw));
    aug.zip_map(raw, "alpha_blend", |x, y| a * x + r * y)
}

/// Mean of a `(K, N, k, k)` kernel over its first two axes: `(1, 1, k, k)`.
fn reduce_kernel<T: Scalar>(w: &Tensor4<T>) -> Tensor4<T> {
    let d = w.dims();
    let taps = d.plane();
    let inv = T::one() / T::lit((d.n * d.c) as f64);
    let mut out = Tensor4::zeros(Dims::new(1, 1, d.h, d.w));
    for chunk in w.data().chunks(taps) {
        for (o, &v) in out.data_mut().iter_mut().zip(chunk) {
            *o = *o + v;
        }
    }
    out.map(|v| v * inv)
}

/// Apply a history-derived kernel pair to a single current feature map.
///
/// The `(K, N, k, k)` kernels are averaged over both leading axes to one
/// `k x k` filter per branch, which then filters every channel of
/// `current (1, C, h, w)`; the object branch applies inside `mask`, the
/// background branch outside. An empty kernel pair (no history) leaves the
/// feature unchanged.
pub fn template_refresh<T: Scalar>(current: &Tensor4<T>, kernels: &MixKernelPair<T>, mask: &ObjectMask<T>) -> Result<Tensor4<T>> {
    let d = current.dims();
    if d.n != 1 {
        return Err(Error::shape("template_refresh", d, "1xCxhxw"));
    }
    if kernels.dims().is_empty() {
        return Ok(current.clone());
    }
    if mask.dims() != d {
        return Err(Error::shape("template_refresh", mask.dims(), d));
    }
    let k = kernels.dims().h;
    let planes = current.clone().reshape(Dims::new(d.c, 1, d.h, d.w))?;
    let patches = Patches::new(&planes, k, k, k / 2)?;
    let obj = patches.conv(&reduce_kernel(&kernels.w_obj))?;
    let bkg = patches.conv(&reduce_kernel(&kernels.w_bkg))?;
    let mut out = obj.reshape(d)?;
    for ((o, &b), &m) in out.data_mut().iter_mut().zip(bkg.data()).zip(mask.tensor().data()) {
        *o = *o * m + b * (T::one() - m);
    }
    Ok(out)
}

/// Gradients of `<template_refresh(current, kernels, mask), grad_out>` with
/// respect to the full `(K, N, k, k)` kernels.
pub fn template_refresh_grad<T: Scalar>(
    current: &Tensor4<T>,
    kernel_dims: Dims,
    mask: &ObjectMask<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let d = current.dims();
    if grad_out.dims() != d || mask.dims() != d {
        return Err(Error::shape("template_refresh_grad", grad_out.dims(), d));
    }
    if kernel_dims.is_empty() {
        return Ok((Tensor4::zeros(kernel_dims), Tensor4::zeros(kernel_dims)));
    }
    let k = kernel_dims.h;
    let planes = current.clone().reshape(Dims::new(d.c, 1, d.h, d.w))?;
    let patches = Patches::new(&planes, k, k, k / 2)?;
    let g_obj = grad_out.mul(mask.tensor())?;
    let g_bkg = grad_out.sub(&g_obj)?;
    let share = T::one() / T::lit((kernel_dims.n * kernel_dims.c) as f64);
    let expand = |g: Tensor4<T>| -> Result<Tensor4<T>> {
        let reduced = patches.grad_kernel(&g.reshape(Dims::new(d.c, 1, d.h, d.w))?)?;
        let taps: Vec<T> = reduced.data().iter().map(|&v| v * share).collect();
        Ok(Tensor4::from_fn(kernel_dims, |_, _, y, x| taps[y * k + x]))
    };
    Ok((expand(g_obj)?, expand(g_bkg)?))
}

/// Apply one shared `(1, 1, k, k)` filter to every channel of a `(1, C, h, w)`
/// map. Exposed for tests of the refresh path.
pub fn filter_channels<T: Scalar>(current: &Tensor4<T>, filter: &Tensor4<T>) -> Result<Tensor4<T>> {
    let d = current.dims();
    let k = filter.dims().h;
    let planes = current.clone().reshape(Dims::new(d.c * d.n, 1, d.h, d.w))?;
    conv2d(&planes, filter, k / 2)?.reshape(d)
}
