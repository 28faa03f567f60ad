//! 2-D cross-correlation via im2col + GEMM, with exact adjoints.

use super::pool::pool_bin;
use super::{gemm, Dims, Scalar, Tensor4};
use crate::error::{Error, Result};

/// Unfolded input patches (im2col) of a batch, reusable across kernels.
///
/// Row `r = (c, i, j)` of the `R x (n*P)` matrix holds the input value seen
/// by kernel tap `(c, i, j)` at every output position of every sample, with
/// `R = cin*kh*kw` and `P = oh*ow`. Out-of-bounds taps read zero.
#[derive(Debug, Clone)]
pub struct Patches<T> {
    input: Dims,
    kh: usize,
    kw: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    cols: Vec<T>,
}

fn out_size(op: &'static str, input: Dims, kh: usize, kw: usize, padding: usize) -> Result<(usize, usize)> {
    if kh == 0 || kw == 0 {
        return Err(Error::invalid(op, "kernel spatial size must be positive"));
    }
    let (h, w) = (input.h + 2 * padding, input.w + 2 * padding);
    if h < kh || w < kw {
        return Err(Error::shape(op, input, format!("kernel {kh}x{kw} with padding {padding}")));
    }
    Ok((h - kh + 1, w - kw + 1))
}

impl<T: Scalar> Patches<T> {
    pub fn new(input: &Tensor4<T>, kh: usize, kw: usize, padding: usize) -> Result<Self> {
        let d = input.dims();
        let (oh, ow) = out_size("conv2d", d, kh, kw, padding)?;
        let p = oh * ow;
        let np = d.n * p;
        let rows = d.c * kh * kw;
        let mut cols = vec![T::zero(); rows * np];
        let src = input.data();
        for c in 0..d.c {
            for i in 0..kh {
                for j in 0..kw {
                    let r = (c * kh + i) * kw + j;
                    // valid output columns for this tap: 0 <= x + j - pad < w
                    let x_lo = padding.saturating_sub(j);
                    let x_hi = (d.w + padding).saturating_sub(j).min(ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for n in 0..d.n {
                        let plane = &src[(n * d.c + c) * d.h * d.w..][..d.h * d.w];
                        let dst = &mut cols[r * np + n * p..][..p];
                        for y in 0..oh {
                            let iy = y + i;
                            if iy < padding || iy - padding >= d.h {
                                continue;
                            }
                            let row = &plane[(iy - padding) * d.w..][..d.w];
                            let ix0 = x_lo + j - padding;
                            dst[y * ow + x_lo..y * ow + x_hi].copy_from_slice(&row[ix0..ix0 + (x_hi - x_lo)]);
                        }
                    }
                }
            }
        }
        Ok(Self {
            input: d,
            kh,
            kw,
            padding,
            oh,
            ow,
            cols,
        })
    }

    pub fn input_dims(&self) -> Dims {
        self.input
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (self.oh, self.ow)
    }

    fn rows(&self) -> usize {
        self.input.c * self.kh * self.kw
    }

    fn check_kernel(&self, op: &'static str, kernel: &Tensor4<T>) -> Result<()> {
        let k = kernel.dims();
        if k.c != self.input.c || k.h != self.kh || k.w != self.kw {
            return Err(Error::shape(op, self.input, k));
        }
        Ok(())
    }

    fn check_grad_out(&self, op: &'static str, cout: usize, g: &Tensor4<T>) -> Result<()> {
        let want = Dims::new(self.input.n, cout, self.oh, self.ow);
        if g.dims() != want {
            return Err(Error::shape(op, g.dims(), want));
        }
        Ok(())
    }

    /// Cross-correlate with `kernel (cout, cin, kh, kw)`.
    pub fn conv(&self, kernel: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_kernel("conv2d", kernel)?;
        let cout = kernel.dims().n;
        let np = self.input.n * self.oh * self.ow;
        let mut out = vec![T::zero(); cout * np];
        gemm(cout, self.rows(), np, kernel.data(), false, &self.cols, false, &mut out, false);
        let out = from_channel_major(out, self.input.n, cout, self.oh * self.ow);
        Tensor4::from_vec(Dims::new(self.input.n, cout, self.oh, self.ow), out)
    }

    /// Gradient of `<conv(kernel), grad_out>` with respect to the kernel.
    pub fn grad_kernel(&self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cout = grad_out.dims().c;
        self.check_grad_out("conv2d_grad", cout, grad_out)?;
        let np = self.input.n * self.oh * self.ow;
        let g = to_channel_major(grad_out);
        let mut gk = vec![T::zero(); cout * self.rows()];
        gemm(cout, np, self.rows(), &g, false, &self.cols, true, &mut gk, false);
        Tensor4::from_vec(Dims::new(cout, self.input.c, self.kh, self.kw), gk)
    }

    /// Average of each patch row over the adaptive-pool bins of the output
    /// grid: an `R x (n*B)` matrix for `B = out_h*out_w`.
    fn pooled_cols(&self, out_h: usize, out_w: usize) -> Vec<T> {
        let (n, p, b) = (self.input.n, self.oh * self.ow, out_h * out_w);
        let rows = self.rows();
        let mut pooled = vec![T::zero(); rows * n * b];
        for (bi, bj, y0, y1, x0, x1) in bins(self.oh, self.ow, out_h, out_w) {
            let inv = T::one() / T::lit(((y1 - y0) * (x1 - x0)) as f64);
            let bin = bi * out_w + bj;
            for r in 0..rows {
                for s in 0..n {
                    let src = &self.cols[r * n * p + s * p..][..p];
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        for &v in &src[y * self.ow + x0..y * self.ow + x1] {
                            acc = acc + v;
                        }
                    }
                    pooled[r * n * b + s * b + bin] = acc * inv;
                }
            }
        }
        pooled
    }
}

/// Every adaptive-pool bin as `(bi, bj, y0, y1, x0, x1)`.
fn bins(h: usize, w: usize, out_h: usize, out_w: usize) -> impl Iterator<Item = (usize, usize, usize, usize, usize, usize)> {
    (0..out_h).flat_map(move |bi| {
        let (y0, y1) = pool_bin(bi, h, out_h);
        (0..out_w).map(move |bj| {
            let (x0, x1) = pool_bin(bj, w, out_w);
            (bi, bj, y0, y1, x0, x1)
        })
    })
}

/// `(cout, n*P)` GEMM layout to `(n, cout, P)` tensor layout.
fn from_channel_major<T: Scalar>(m: Vec<T>, n: usize, cout: usize, p: usize) -> Vec<T> {
    if n == 1 || cout == 1 {
        return m;
    }
    let mut out = vec![T::zero(); m.len()];
    for o in 0..cout {
        for s in 0..n {
            out[(s * cout + o) * p..][..p].copy_from_slice(&m[o * n * p + s * p..][..p]);
        }
    }
    out
}

fn to_channel_major<T: Scalar>(t: &Tensor4<T>) -> Vec<T> {
    let d = t.dims();
    let p = d.plane();
    if d.n == 1 || d.c == 1 {
        return t.data().to_vec();
    }
    let mut out = vec![T::zero(); d.len()];
    for s in 0..d.n {
        for o in 0..d.c {
            out[o * d.n * p + s * p..][..p].copy_from_slice(&t.data()[(s * d.c + o) * p..][..p]);
        }
    }
    out
}

/// Scatter-add an `R x (n*P)` column gradient back onto the input grid.
fn col2im<T: Scalar>(gcols: &[T], input: Dims, kh: usize, kw: usize, padding: usize, oh: usize, ow: usize) -> Tensor4<T> {
    let p = oh * ow;
    let np = input.n * p;
    let mut out = Tensor4::zeros(input);
    let dst_all = out.data_mut();
    for c in 0..input.c {
        for i in 0..kh {
            for j in 0..kw {
                let r = (c * kh + i) * kw + j;
                let x_lo = padding.saturating_sub(j);
                let x_hi = (input.w + padding).saturating_sub(j).min(ow);
                if x_lo >= x_hi {
                    continue;
                }
                for n in 0..input.n {
                    let src = &gcols[r * np + n * p..][..p];
                    let plane = &mut dst_all[(n * input.c + c) * input.h * input.w..][..input.h * input.w];
                    for y in 0..oh {
                        let iy = y + i;
                        if iy < padding || iy - padding >= input.h {
                            continue;
                        }
                        let row = &mut plane[(iy - padding) * input.w..][..input.w];
                        let ix0 = x_lo + j - padding;
                        for (d, &s) in row[ix0..ix0 + (x_hi - x_lo)]
                            .iter_mut()
                            .zip(&src[y * ow + x_lo..y * ow + x_hi])
                        {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Cross-correlation `out[n,o,y,x] = sum_{c,i,j} in[n,c,y+i-p,x+j-p] * k[o,c,i,j]`
/// with zero padding `p`. Output spatial size is `h + 2p - kh + 1`.
pub fn conv2d<T: Scalar>(input: &Tensor4<T>, kernel: &Tensor4<T>, padding: usize) -> Result<Tensor4<T>> {
    check_cin("conv2d", input, kernel)?;
    let k = kernel.dims();
    Patches::new(input, k.h, k.w, padding)?.conv(kernel)
}

fn check_cin<T: Scalar>(op: &'static str, input: &Tensor4<T>, kernel: &Tensor4<T>) -> Result<()> {
    if input.dims().c != kernel.dims().c {
        return Err(Error::shape(op, input.dims(), kernel.dims()));
    }
    Ok(())
}

fn check_grad_dims<T: Scalar>(input: &Tensor4<T>, kernel: &Tensor4<T>, grad_out: &Tensor4<T>, padding: usize) -> Result<()> {
    check_cin("conv2d_grad", input, kernel)?;
    let k = kernel.dims();
    let (oh, ow) = out_size("conv2d_grad", input.dims(), k.h, k.w, padding)?;
    let want = Dims::new(input.dims().n, k.n, oh, ow);
    if grad_out.dims() != want {
        return Err(Error::shape("conv2d_grad", grad_out.dims(), want));
    }
    Ok(())
}

/// Adjoint of [`conv2d`] with respect to its input.
pub fn conv2d_grad_input<T: Scalar>(
    input_dims: Dims,
    kernel: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    padding: usize,
) -> Result<Tensor4<T>> {
    let k = kernel.dims();
    if input_dims.c != k.c {
        return Err(Error::shape("conv2d_grad", input_dims, k));
    }
    let (oh, ow) = out_size("conv2d_grad", input_dims, k.h, k.w, padding)?;
    let want = Dims::new(input_dims.n, k.n, oh, ow);
    if grad_out.dims() != want {
        return Err(Error::shape("conv2d_grad", grad_out.dims(), want));
    }
    let rows = k.c * k.h * k.w;
    let np = input_dims.n * oh * ow;
    let g = to_channel_major(grad_out);
    let mut gcols = vec![T::zero(); rows * np];
    gemm(rows, k.n, np, kernel.data(), true, &g, false, &mut gcols, false);
    Ok(col2im(&gcols, input_dims, k.h, k.w, padding, oh, ow))
}

/// Adjoint of [`conv2d`] with respect to its kernel.
pub fn conv2d_grad_kernel<T: Scalar>(
    input: &Tensor4<T>,
    kernel_dims: Dims,
    grad_out: &Tensor4<T>,
    padding: usize,
) -> Result<Tensor4<T>> {
    if input.dims().c != kernel_dims.c {
        return Err(Error::shape("conv2d_grad", input.dims(), kernel_dims));
    }
    let p = Patches::new(input, kernel_dims.h, kernel_dims.w, padding)?;
    if grad_out.dims().c != kernel_dims.n {
        return Err(Error::shape("conv2d_grad", grad_out.dims(), kernel_dims));
    }
    p.grad_kernel(grad_out)
}

/// Both adjoints of [`conv2d`]: `(grad_input, grad_kernel)`.
pub fn conv2d_grad<T: Scalar>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    padding: usize,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    check_grad_dims(input, kernel, grad_out, padding)?;
    let gi = conv2d_grad_input(input.dims(), kernel, grad_out, padding)?;
    let gk = conv2d_grad_kernel(input, kernel.dims(), grad_out, padding)?;
    Ok((gi, gk))
}

/// `adaptive_avg_pool(conv2d(input, kernel, padding), out_h, out_w)` computed
/// without materializing the full-resolution convolution output. Both are
/// linear, so pooling the patch matrix first gives the same result.
pub fn pooled_conv2d<T: Scalar>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    padding: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor4<T>> {
    check_cin("pooled_conv2d", input, kernel)?;
    let k = kernel.dims();
    let patches = Patches::new(input, k.h, k.w, padding)?;
    check_pool_dims(&patches, out_h, out_w)?;
    let n = input.dims().n;
    let b = out_h * out_w;
    let pooled = patches.pooled_cols(out_h, out_w);
    let mut z = vec![T::zero(); k.n * n * b];
    gemm(k.n, patches.rows(), n * b, kernel.data(), false, &pooled, false, &mut z, false);
    Tensor4::from_vec(Dims::new(n, k.n, out_h, out_w), from_channel_major(z, n, k.n, b))
}

fn check_pool_dims<T: Scalar>(patches: &Patches<T>, out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 || out_h > patches.oh || out_w > patches.ow {
        return Err(Error::invalid(
            "pooled_conv2d",
            format!("pool {out_h}x{out_w} from {}x{}", patches.oh, patches.ow),
        ));
    }
    Ok(())
}

/// Adjoints of [`pooled_conv2d`]: `(grad_input, grad_kernel)`.
pub fn pooled_conv2d_grad<T: Scalar>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    padding: usize,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    check_cin("pooled_conv2d_grad", input, kernel)?;
    let k = kernel.dims();
    let g = grad_out.dims();
    let patches = Patches::new(input, k.h, k.w, padding)?;
    check_pool_dims(&patches, g.h, g.w)?;
    if g.n != input.dims().n || g.c != k.n {
        return Err(Error::shape("pooled_conv2d_grad", g, k));
    }
    let (n, rows) = (g.n, patches.rows());
    let b = g.h * g.w;
    let gz = to_channel_major(grad_out);
    let pooled = patches.pooled_cols(g.h, g.w);

    let mut gk = vec![T::zero(); k.n * rows];
    gemm(k.n, n * b, rows, &gz, false, &pooled, true, &mut gk, false);

    let mut gpooled = vec![T::zero(); rows * n * b];
    gemm(rows, k.n, n * b, kernel.data(), true, &gz, false, &mut gpooled, false);

    let (oh, ow) = (patches.oh, patches.ow);
    let p = oh * ow;
    let mut gcols = vec![T::zero(); rows * n * p];
    for (bi, bj, y0, y1, x0, x1) in bins(oh, ow, g.h, g.w) {
        let inv = T::one() / T::lit(((y1 - y0) * (x1 - x0)) as f64);
        let bin = bi * g.w + bj;
        for r in 0..rows {
            for s in 0..n {
                let v = gpooled[r * n * b + s * b + bin] * inv;
                let dst = &mut gcols[r * n * p + s * p..][..p];
                for y in y0..y1 {
                    for d in &mut dst[y * ow + x0..y * ow + x1] {
                        *d = *d + v;
                    }
                }
            }
        }
    }
    let gi = col2im(&gcols, input.dims(), k.h, k.w, padding, oh, ow);
    Ok((gi, Tensor4::from_vec(k, gk)?))
}
