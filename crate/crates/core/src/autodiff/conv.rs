//! Same-padded 2D cross-correlation kernels.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

pub(crate) fn check(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<ConvDims> {
    let [c_in, h, w] = x.shape()[..] else {
        return Err(Error::shape("conv2d", format!("input must be CxHxW, got {:?}", x.shape())));
    };
    let [c_out, kc_in, kh, kw] = kernel.shape()[..] else {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be Cout x Cin x k x k, got {:?}", kernel.shape()),
        ));
    };
    if kc_in != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("kernel dimension 1 (input channels) is {kc_in} but input has {c_in} channels"),
        ));
    }
    if kh != kw {
        return Err(Error::shape("conv2d", format!("kernel dimensions 2 and 3 differ: {kh} vs {kw}")));
    }
    if kh % 2 == 0 {
        return Err(Error::shape("conv2d", format!("kernel size {kh} must be odd")));
    }
    if bias.len() != c_out {
        return Err(Error::shape(
            "conv2d",
            format!("bias has {} entries but kernel dimension 0 (output channels) is {c_out}", bias.len()),
        ));
    }
    Ok(ConvDims {
        c_in,
        c_out,
        h,
        w,
        k: kh,
    })
}

/// Calls `f(out_offset, in_offset, len)` for each row span touched by tap
/// offset `(dy, dx)`.
#[inline]
fn for_each_row(d: &ConvDims, dy: isize, dx: isize, mut f: impl FnMut(usize, usize, usize)) {
    let (h, w) = (d.h as isize, d.w as isize);
    let y0 = (-dy).max(0);
    let y1 = (h - dy).min(h);
    let x0 = (-dx).max(0);
    let x1 = (w - dx).min(w);
    if y0 >= y1 || x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let out_row = y as usize * d.w;
        let in_row = (y + dy) as usize * d.w;
        f(out_row + x0 as usize, in_row + (x0 + dx) as usize, (x1 - x0) as usize);
    }
}

pub(crate) fn forward(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = check(x, kernel, bias)?;
    let plane = d.h * d.w;
    let p = (d.k / 2) as isize;
    let mut out = vec![0.0; d.c_out * plane];
    let (xs, ks) = (x.data(), kernel.data());
    for co in 0..d.c_out {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.fill(bias.data()[co]);
        for ci in 0..d.c_in {
            let inp = &xs[ci * plane..(ci + 1) * plane];
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let wgt = ks[((co * d.c_in + ci) * d.k + ky) * d.k + kx];
                    for_each_row(&d, ky as isize - p, kx as isize - p, |oi, ii, n| {
                        for (a, b) in o[oi..oi + n].iter_mut().zip(&inp[ii..ii + n]) {
                            *a += wgt * b;
                        }
                    });
                }
            }
        }
    }
    Tensor::new(&[d.c_out, d.h, d.w], out)
}

/// Gradients of a conv output w.r.t. (input, kernel, bias).
pub(crate) fn backward(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let d = check(x, kernel, bias)?;
    let plane = d.h * d.w;
    let p = (d.k / 2) as isize;
    let (xs, ks, gs) = (x.data(), kernel.data(), grad_out.data());
    let mut gx = want_input.then(|| vec![0.0; d.c_in * plane]);
    let mut gk = vec![0.0; kernel.len()];
    let mut gb = vec![0.0; d.c_out];
    for co in 0..d.c_out {
        let g = &gs[co * plane..(co + 1) * plane];
        gb[co] = g.iter().sum();
        for ci in 0..d.c_in {
            let inp = &xs[ci * plane..(ci + 1) * plane];
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let idx = ((co * d.c_in + ci) * d.k + ky) * d.k + kx;
                    let wgt = ks[idx];
                    let mut acc = 0.0;
                    for_each_row(&d, ky as isize - p, kx as isize - p, |oi, ii, n| {
                        acc += g[oi..oi + n]
                            .iter()
                            .zip(&inp[ii..ii + n])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                        if let Some(gx) = gx.as_mut() {
                            let gi = &mut gx[ci * plane..(ci + 1) * plane];
                            for (a, b) in gi[ii..ii + n].iter_mut().zip(&g[oi..oi + n]) {
                                *a += wgt * b;
                            }
                        }
                    });
                    gk[idx] += acc;
                }
            }
        }
    }
    let gx = match gx {
        Some(v) => Some(Tensor::new(x.shape(), v)?),
        None => None,
    };
    Ok((gx, Tensor::new(kernel.shape(), gk)?, Tensor::new(bias.shape(), gb)?))
}
