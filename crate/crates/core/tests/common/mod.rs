#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssrecon::dataio::dataset::{generate_phantoms, AcquisitionSpec};
use ssrecon::dataio::metrics::{SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use ssrecon::{Dataset, Graph, ModelParams, NodeId, Tensor, Variant};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Uniform magnitudes in `[margin, margin + spread)` with random sign, so
/// finite differences never straddle a kink at zero.
pub fn away_from_zero(shape: &[usize], rng: &mut impl Rng, margin: f64, spread: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = margin + rng.gen_range(0.0..spread);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute norm when both are tiny.
pub fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.sub(b).unwrap().norm();
    let scale = a.norm().max(b.norm());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn scalar_rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

fn root_value(g: &mut Graph, root: NodeId) -> f64 {
    g.forward().unwrap();
    g.value(root).item()
}

/// Central-difference gradient of `root` w.r.t. every entry of `leaf`.
pub fn numeric_grad(g: &mut Graph, root: NodeId, leaf: NodeId, h: f64) -> Tensor {
    let base = g.value(leaf).clone();
    let mut out = Tensor::zeros(base.shape());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus.data_mut()[i] += h;
        g.set_value(leaf, plus).unwrap();
        let fp = root_value(g, root);
        let mut minus = base.clone();
        minus.data_mut()[i] -= h;
        g.set_value(leaf, minus).unwrap();
        let fm = root_value(g, root);
        out.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    g.set_value(leaf, base).unwrap();
    g.forward().unwrap();
    out
}

/// Largest normwise relative error between backward and central
/// differences over `leaves`.
pub fn grad_check(g: &mut Graph, root: NodeId, leaves: &[NodeId], h: f64) -> f64 {
    g.backward(root).unwrap();
    let analytic: Vec<Tensor> = leaves.iter().map(|&l| g.grad(l).unwrap().clone()).collect();
    leaves
        .iter()
        .zip(&analytic)
        .map(|(&l, a)| rel_err(a, &numeric_grad(g, root, l, h)))
        .fold(0.0, f64::max)
}

/// Outcome of one randomized directional-derivative check.
#[derive(Clone, Copy, Debug)]
pub enum Directional {
    /// relative error between backward and the central difference
    Checked(f64),
    /// the two one-sided differences disagree by more than `kink_tol`: a
    /// ReLU or threshold kink lies inside the stencil, where no
    /// finite-difference comparison is meaningful
    Kink,
}

/// Compares `⟨∇root, v⟩` for a random direction `v` over all `leaves`
/// against `(f(p+hv) − f(p−hv)) / 2h`.
pub fn directional_check(
    g: &mut Graph,
    root: NodeId,
    leaves: &[NodeId],
    rng: &mut impl Rng,
    h: f64,
    kink_tol: f64,
) -> Directional {
    g.backward(root).unwrap();
    let base: Vec<Tensor> = leaves.iter().map(|&l| g.value(l).clone()).collect();
    let dirs: Vec<Tensor> = base.iter().map(|b| uniform(b.shape(), rng, -1.0, 1.0)).collect();
    let analytic: f64 = leaves
        .iter()
        .zip(&dirs)
        .map(|(&l, d)| g.grad(l).unwrap().dot(d).unwrap())
        .sum();
    let eval = |step: f64, g: &mut Graph| {
        for ((&l, b), d) in leaves.iter().zip(&base).zip(&dirs) {
            let mut v = b.clone();
            v.axpy(step, d).unwrap();
            g.set_value(l, v).unwrap();
        }
        root_value(g, root)
    };
    let f0 = eval(0.0, g);
    let fp = eval(h, g);
    let fm = eval(-h, g);
    for (&l, b) in leaves.iter().zip(&base) {
        g.set_value(l, b.clone()).unwrap();
    }
    g.forward().unwrap();
    let forward = (fp - f0) / h;
    let backward = (f0 - fm) / h;
    if scalar_rel_err(forward, backward) > kink_tol {
        return Directional::Kink;
    }
    Directional::Checked(scalar_rel_err(analytic, (fp - fm) / (2.0 * h)))
}

/// `sum(op · w)` for a fixed random `w`: a generic scalar readout.
pub fn readout(g: &mut Graph, node: NodeId, rng: &mut impl Rng) -> NodeId {
    let shape = g.value(node).shape().to_vec();
    let w = g.constant(uniform(&shape, rng, -1.0, 1.0));
    let p = g.mul(node, w).unwrap();
    g.sum(p).unwrap()
}

pub fn toy_dataset(n: usize, count: usize, variant: Variant, image_seed: u64, spec: &AcquisitionSpec) -> Dataset {
    let imgs = generate_phantoms(n, variant, count, image_seed).unwrap();
    Dataset::prepare(&imgs, spec).unwrap()
}

pub fn small_spec(subset_seed: u64) -> AcquisitionSpec {
    AcquisitionSpec {
        accel: 4.0,
        acs_lines: 2,
        sel_acs: 1,
        mask_seed: 1,
        subset_seed,
    }
}

/// Adds uniform noise to every parameter. Freshly initialised models have
/// exactly zero biases, which parks ReLUs on their kink wherever the
/// thresholded code is zero; finite differences are only meaningful away
/// from such points.
pub fn jitter(params: &mut ModelParams, rng: &mut impl Rng, scale: f64) {
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

/// Centered unitary 2D DFT by direct summation:
/// `X[k,l] = (HW)^(-1/2) Σ x[j,m] exp(−2πi((k−ch)(j−ch)/H + (l−cw)(m−cw)/W))`
/// with `ch = H/2`, `cw = W/2` (floor).
pub fn naive_dft2c(x: &Tensor) -> Tensor {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let (ch, cw) = ((h / 2) as f64, (w / 2) as f64);
    let d = x.data();
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = Tensor::zeros(&[2, h, w]);
    for k in 0..h {
        for l in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for j in 0..h {
                for m in 0..w {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * ((k as f64 - ch) * (j as f64 - ch) / h as f64 + (l as f64 - cw) * (m as f64 - cw) / w as f64);
                    let (s, c) = phase.sin_cos();
                    let (xr, xi) = (d[j * w + m], d[h * w + j * w + m]);
                    re += xr * c - xi * s;
                    im += xr * s + xi * c;
                }
            }
            out.data_mut()[k * w + l] = re * scale;
            out.data_mut()[h * w + k * w + l] = im * scale;
        }
    }
    out
}

/// Mean of squared differences over entries where `sel` (H×W) is 1, with
/// both channels counted.
pub fn masked_mse_loop(a: &Tensor, b: &Tensor, sel: &Tensor) -> f64 {
    let (h, w) = (a.shape()[1], a.shape()[2]);
    let (mut acc, mut n) = (0.0, 0usize);
    for c in 0..2 {
        for i in 0..h * w {
            if sel.data()[i] == 1.0 {
                let d = a.data()[c * h * w + i] - b.data()[c * h * w + i];
                acc += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

/// PSNR from an explicit squared-error loop.
pub fn psnr_loop(a: &Tensor, b: &Tensor, range: f64) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        acc += (x - y) * (x - y);
    }
    20.0 * range.log10() - 10.0 * (acc / a.len() as f64).log10()
}

/// SSIM by direct summation over every window with 2D Gaussian weights.
pub fn ssim_brute(x: &Tensor, y: &Tensor, range: f64) -> f64 {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let k = SSIM_WINDOW;
    let c = (k / 2) as f64;
    let mut wts = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            wts[i * k + j] = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    let norm: f64 = wts.iter().sum();
    let (c1, c2) = ((SSIM_K1 * range).powi(2), (SSIM_K2 * range).powi(2));
    let (mut total, mut count) = (0.0, 0);
    for i0 in 0..=h - k {
        for j0 in 0..=w - k {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = wts[i * k + j] / norm;
                    let a = x.data()[(i0 + i) * w + j0 + j];
                    let b = y.data()[(i0 + i) * w + j0 + j];
                    mx += wt * a;
                    my += wt * b;
                    xx += wt * a * a;
                    yy += wt * b * b;
                    xy += wt * a * b;
                }
            }
            let (sx, sy, sxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sx + sy + c2));
            count += 1;
        }
    }
    total / count as f64
}
