//! Dense 4-D tensors and the numeric kernels built on them.
//!
//! Storage is row-major `(n, c, h, w)`, `w` fastest. Convolutions are
//! cross-correlations (no kernel flip) as in deep-learning frameworks.

mod conv;
mod pool;
mod sgd;

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use conv::{conv2d, conv2d_grad, conv2d_grad_input, conv2d_grad_kernel, pooled_conv2d, pooled_conv2d_grad, Patches};
pub use pool::{adaptive_avg_pool, adaptive_avg_pool_grad, pool_bin};
pub use sgd::{SgdConfig, SgdState};

/// Element precision tag, also used as the on-disk dtype code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Real element type: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const DTYPE: DType;

    /// `C = A·B` (or `C += A·B` when `accumulate`) for raw row/column strides.
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-aliasing views of
    /// `m×k`, `k×n` and `m×n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
        accumulate: bool,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        c: *mut f32,
        rsc: isize,
        csc: isize,
        accumulate: bool,
    ) {
        let beta = if accumulate { 1.0 } else { 0.0 };
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }

    fn lit(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        c: *mut f64,
        rsc: isize,
        csc: isize,
        accumulate: bool,
    ) {
        let beta = if accumulate { 1.0 } else { 0.0 };
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }

    fn lit(v: f64) -> Self {
        v
    }
}

/// Row-major matrix product on slices. `a` is `m×k` (stored `k×m` when
/// `a_t`), `b` is `k×n` (stored `n×k` when `b_t`), `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: out length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(T::zero());
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; the three slices are distinct borrows.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            c.as_mut_ptr(),
            n as isize,
            1,
            accumulate,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Dims {
    fn from(d: [usize; 4]) -> Self {
        Dims::new(d[0], d[1], d[2], d[3])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: Dims,
    data: Vec<T>,
}

pub type Tensor4f = Tensor4<f32>;
pub type Tensor4d = Tensor4<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    /// Multiply by a scalar operand.
    Scale,
}

/// Right-hand operand of [`elementwise`].
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a, T> {
    Tensor(&'a Tensor4<T>),
    Scalar(T),
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(dims: impl Into<Dims>) -> Self {
        let dims = dims.into();
        Self {
            data: vec![T::zero(); dims.len()],
            dims,
        }
    }

    pub fn full(dims: impl Into<Dims>, value: T) -> Self {
        let dims = dims.into();
        Self {
            data: vec![value; dims.len()],
            dims,
        }
    }

    pub fn from_vec(dims: impl Into<Dims>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        if dims.len() != data.len() {
            return Err(Error::shape("from_vec", dims, format!("{} elements", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: impl Into<Dims>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let dims = dims.into();
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for y in 0..dims.h {
                    for x in 0..dims.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self { dims, data }
    }

    /// Independent normal entries with the given standard deviation.
    pub fn randn(dims: impl Into<Dims>, std: f64, rng: &mut crate::Rng) -> Self {
        let dims = dims.into();
        let data = (0..dims.len()).map(|_| T::lit(rng.normal() * std)).collect();
        Self { dims, data }
    }

    pub fn uniform(dims: impl Into<Dims>, lo: f64, hi: f64, rng: &mut crate::Rng) -> Self {
        let dims = dims.into();
        let data = (0..dims.len()).map(|_| T::lit(rng.uniform_in(lo, hi))).collect();
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(n < self.dims.n && c < self.dims.c && y < self.dims.h && x < self.dims.w);
        ((n * self.dims.c + c) * self.dims.h + y) * self.dims.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    pub fn reshape(self, dims: impl Into<Dims>) -> Result<Self> {
        let dims = dims.into();
        if dims.len() != self.data.len() {
            return Err(Error::shape("reshape", self.dims, dims));
        }
        Ok(Self { dims, data: self.data })
    }

    /// Copy of sample `i` as a `(1, c, h, w)` tensor.
    pub fn sample(&self, i: usize) -> Self {
        let s = self.dims.sample();
        Self {
            dims: Dims::new(1, self.dims.c, self.dims.h, self.dims.w),
            data: self.data[i * s..(i + 1) * s].to_vec(),
        }
    }

    pub fn sample_slice(&self, i: usize) -> &[T] {
        let s = self.dims.sample();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_slice_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.dims.sample();
        &mut self.data[i * s..(i + 1) * s]
    }

    /// Concatenate along the sample axis.
    pub fn stack(parts: &[&Tensor4<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("stack", "no tensors to stack"))?;
        let (c, h, w) = (first.dims.c, first.dims.h, first.dims.w);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut n = 0;
        for p in parts {
            if (p.dims.c, p.dims.h, p.dims.w) != (c, h, w) {
                return Err(Error::shape("stack", first.dims, p.dims));
            }
            data.extend_from_slice(&p.data);
            n += p.dims.n;
        }
        Ok(Self {
            dims: Dims::new(n, c, h, w),
            data,
        })
    }

    /// Swap the first two axes: `(n, c, h, w) -> (c, n, h, w)`.
    pub fn swap_nc(&self) -> Self {
        let d = self.dims;
        let plane = d.plane();
        let mut data = vec![T::zero(); d.len()];
        for n in 0..d.n {
            for c in 0..d.c {
                let src = (n * d.c + c) * plane;
                let dst = (c * d.n + n) * plane;
                data[dst..dst + plane].copy_from_slice(&self.data[src..src + plane]);
            }
        }
        Self {
            dims: Dims::new(d.c, d.n, d.h, d.w),
            data,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::shape(op, self.dims, other.dims));
        }
        Ok(Self {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape("axpy", self.dims, other.dims));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * b;
        }
        Ok(())
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.dims != other.dims {
            return Err(Error::shape("dot", self.dims, other.dims));
        }
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn norm(&self) -> T {
        self.sum_sq().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.dims != other.dims {
            return Err(Error::shape("max_abs_diff", self.dims, other.dims));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}

impl<T: Scalar> fmt::Display for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor4<{:?}>[{}]", T::DTYPE, self.dims)
    }
}

/// Pointwise `a op b`; scalar operands broadcast, tensors must match exactly.
pub fn elementwise<T: Scalar>(a: &Tensor4<T>, b: Operand<'_, T>, op: ElementwiseOp) -> Result<Tensor4<T>> {
    match (op, b) {
        (ElementwiseOp::Add, Operand::Tensor(t)) => a.add(t),
        (ElementwiseOp::Sub, Operand::Tensor(t)) => a.sub(t),
        (ElementwiseOp::Mul, Operand::Tensor(t)) => a.mul(t),
        (ElementwiseOp::Add, Operand::Scalar(s)) => Ok(a.map(|v| v + s)),
        (ElementwiseOp::Sub, Operand::Scalar(s)) => Ok(a.map(|v| v - s)),
        (ElementwiseOp::Mul | ElementwiseOp::Scale, Operand::Scalar(s)) => Ok(a.scale(s)),
        (ElementwiseOp::Scale, Operand::Tensor(t)) => Err(Error::invalid(
            "elementwise",
            format!("scale expects a scalar operand, got tensor {}", t.dims()),
        )),
    }
}

/// Position `(row, col)` of the largest entry of a `(1, 1, h, w)` map.
/// Ties resolve to the first occurrence in row-major order.
pub fn argmax2d<T: Scalar>(map: &Tensor4<T>) -> Result<(usize, usize)> {
    let d = map.dims();
    if d.n != 1 || d.c != 1 {
        return Err(Error::shape("argmax2d", d, "1x1xhxw"));
    }
    if d.is_empty() {
        return Err(Error::invalid("argmax2d", "empty map"));
    }
    let mut best = 0;
    for (i, &v) in map.data().iter().enumerate() {
        // strict comparison keeps the first maximum; NaN never wins
        if v > map.data()[best] {
            best = i;
        }
    }
    Ok((best / d.w, best % d.w))
}

/// `exp(-|p - peak|^2 / (2 sigma^2))` on an `h x w` grid. The peak may sit
/// between grid points; on a grid point its value is exactly one.
pub fn gaussian_map<T: Scalar>(h: usize, w: usize, peak: (f64, f64), sigma: f64) -> Result<Tensor4<T>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("gaussian_map", format!("sigma must be positive, got {sigma}")));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("gaussian_map", "empty map"));
    }
    let (pr, pc) = peak;
    if !(pr >= 0.0 && pr <= (h - 1) as f64 && pc >= 0.0 && pc <= (w - 1) as f64) {
        return Err(Error::invalid(
            "gaussian_map",
            format!("peak ({pr}, {pc}) outside {h}x{w} map"),
        ));
    }
    let denom = 2.0 * sigma * sigma;
    Ok(Tensor4::from_fn(Dims::new(1, 1, h, w), |_, _, y, x| {
        let dy = y as f64 - pr;
        let dx = x as f64 - pc;
        T::lit((-(dy * dy + dx * dx) / denom).exp())
    }))
}
