use super::{Dims, Scalar, Tensor4};
use crate::error::{Error, Result};

/// Bin `i` of `out` over an axis of length `len`: rows
/// `[floor(i*len/out), ceil((i+1)*len/out))`. Adjacent bins may overlap by one
/// cell when `out` does not divide `len`.
pub fn pool_bin(i: usize, len: usize, out: usize) -> (usize, usize) {
    let start = i * len / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end)
}

fn check(op: &'static str, d: Dims, out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(op, "output dims must be positive"));
    }
    if out_h > d.h || out_w > d.w {
        return Err(Error::invalid(op, format!("cannot pool {d} to {out_h}x{out_w}")));
    }
    Ok(())
}

/// Mean over each bin of [`pool_bin`], per sample and channel.
pub fn adaptive_avg_pool<T: Scalar>(input: &Tensor4<T>, out_h: usize, out_w: usize) -> Result<Tensor4<T>> {
    let d = input.dims();
    check("adaptive_avg_pool", d, out_h, out_w)?;
    let mut out = Tensor4::zeros(Dims::new(d.n, d.c, out_h, out_w));
    for n in 0..d.n {
        for c in 0..d.c {
            let plane = &input.data()[(n * d.c + c) * d.plane()..][..d.plane()];
            for bi in 0..out_h {
                let (y0, y1) = pool_bin(bi, d.h, out_h);
                for bj in 0..out_w {
                    let (x0, x1) = pool_bin(bj, d.w, out_w);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        for &v in &plane[y * d.w + x0..y * d.w + x1] {
                            acc = acc + v;
                        }
                    }
                    let count = T::lit(((y1 - y0) * (x1 - x0)) as f64);
                    out.set(n, c, bi, bj, acc / count);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`adaptive_avg_pool`] back to an `h x w` grid.
pub fn adaptive_avg_pool_grad<T: Scalar>(grad_out: &Tensor4<T>, h: usize, w: usize) -> Result<Tensor4<T>> {
    let g = grad_out.dims();
    check("adaptive_avg_pool_grad", Dims::new(g.n, g.c, h, w), g.h, g.w)?;
    let mut out = Tensor4::zeros(Dims::new(g.n, g.c, h, w));
    for n in 0..g.n {
        for c in 0..g.c {
            for bi in 0..g.h {
                let (y0, y1) = pool_bin(bi, h, g.h);
                for bj in 0..g.w {
                    let (x0, x1) = pool_bin(bj, w, g.w);
                    let v = grad_out.get(n, c, bi, bj) / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let i = out.index(n, c, y, x);
                            out.data_mut()[i] = out.data()[i] + v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
