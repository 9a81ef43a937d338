//! Centered Fourier encoding, Cartesian sampling masks and the selection
//! subsets fed to the two parallel branches.
//!
//! Conventions: images and k-space are `2×H×W` tensors (real, imag). The
//! transform is unitary (`1/sqrt(HW)` scaling) with DC at index `(H/2, W/2)`.
//! ACS regions are full central rows.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

/// Index in the unshifted array that lands at position `i` after `fftshift`.
#[inline]
fn shift_src(i: usize, n: usize) -> usize {
    (i + n - n / 2) % n
}

/// Index in the unshifted array that lands at position `i` after `ifftshift`.
#[inline]
fn ishift_src(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

fn fft2_shifted(t: &Tensor, dir: Direction, op: &'static str) -> Result<Tensor> {
    let (h, w) = t.complex_dims(op)?;
    let data = t.data();
    let (re, im) = data.split_at(h * w);

    // ifftshift on the way in
    let mut buf: Vec<Complex64> = Vec::with_capacity(h * w);
    for i in 0..h {
        let si = ishift_src(i, h);
        for j in 0..w {
            let sj = ishift_src(j, w);
            let k = si * w + sj;
            buf.push(Complex64::new(re[k], im[k]));
        }
    }

    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let (row, col) = match dir {
            Direction::Forward => (planner.plan_fft_forward(w), planner.plan_fft_forward(h)),
            Direction::Inverse => (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h)),
        };
        row.process(&mut buf);
        let mut tr = vec![Complex64::new(0.0, 0.0); h * w];
        for i in 0..h {
            for j in 0..w {
                tr[j * h + i] = buf[i * w + j];
            }
        }
        col.process(&mut tr);
        for j in 0..w {
            for i in 0..h {
                buf[i * w + j] = tr[j * h + i];
            }
        }
    });

    // fftshift on the way out, with unitary scaling
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![0.0; 2 * h * w];
    let (ore, oim) = out.split_at_mut(h * w);
    for i in 0..h {
        let si = shift_src(i, h);
        for j in 0..w {
            let v = buf[si * w + shift_src(j, w)];
            ore[i * w + j] = v.re * scale;
            oim[i * w + j] = v.im * scale;
        }
    }
    Tensor::new(&[2, h, w], out)
}

/// Unitary centered 2D DFT of a `2×H×W` complex image.
pub fn fft2_centered(img: &Tensor) -> Result<Tensor> {
    fft2_shifted(img, Direction::Forward, "fft2_centered")
}

/// Inverse of [`fft2_centered`]; also its adjoint.
pub fn ifft2_centered(ksp: &Tensor) -> Result<Tensor> {
    fft2_shifted(ksp, Direction::Inverse, "ifft2_centered")
}

/// Multiplies every channel of a `C×H×W` tensor by an `H×W` pattern.
pub fn apply_pattern(t: &Tensor, pattern: &Tensor) -> Result<Tensor> {
    let plane = pattern.len();
    let ok = t.shape().len() == 3 && pattern.shape() == &t.shape()[1..];
    if !ok {
        return Err(Error::shape(
            "apply_pattern",
            format!("pattern {:?} does not match trailing dims of {:?}", pattern.shape(), t.shape()),
        ));
    }
    let mut out = t.clone();
    for chan in out.data_mut().chunks_mut(plane) {
        for (v, &m) in chan.iter_mut().zip(pattern.data()) {
            *v *= m;
        }
    }
    Ok(out)
}

/// Metadata stored alongside a mask pattern (the JSON sidecar).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskInfo {
    pub height: usize,
    pub width: usize,
    /// Nominal acceleration rate `H·W / count`.
    pub accel: f64,
    pub acs_lines: usize,
    pub seed: u64,
}

/// Binary Cartesian sampling pattern `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    info: MaskInfo,
    pattern: Tensor,
}

/// First row of the centered ACS band of `acs` rows in an `h`-row grid.
pub fn acs_start(h: usize, acs: usize) -> usize {
    (h - acs) / 2
}

impl Mask {
    pub fn from_pattern(pattern: Tensor, info: MaskInfo) -> Result<Self> {
        if pattern.shape() != [info.height, info.width] {
            return Err(Error::shape(
                "Mask::from_pattern",
                format!("pattern {:?} vs declared {}x{}", pattern.shape(), info.height, info.width),
            ));
        }
        if pattern.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::contract("Mask::from_pattern", "pattern must be binary"));
        }
        if info.acs_lines > info.height {
            return Err(Error::contract("Mask::from_pattern", "acs_lines exceeds height"));
        }
        Ok(Self { info, pattern })
    }

    /// Fully sampled mask.
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            info: MaskInfo {
                height,
                width,
                accel: 1.0,
                acs_lines: height,
                seed: 0,
            },
            pattern: Tensor::ones(&[height, width]),
        }
    }

    pub fn info(&self) -> &MaskInfo {
        &self.info
    }

    pub fn pattern(&self) -> &Tensor {
        &self.pattern
    }

    pub fn height(&self) -> usize {
        self.info.height
    }

    pub fn width(&self) -> usize {
        self.info.width
    }

    pub fn acs_lines(&self) -> usize {
        self.info.acs_lines
    }

    pub fn count(&self) -> usize {
        self.pattern.count_nonzero()
    }

    /// `1 - P`, the unscanned locations.
    pub fn complement(&self) -> Tensor {
        self.pattern.map(|v| 1.0 - v)
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.pattern.shape() == other.pattern.shape()
            && self
                .pattern
                .data()
                .iter()
                .zip(other.pattern.data())
                .all(|(a, b)| a <= b)
    }

    pub fn acs_rows_full(&self) -> bool {
        let (h, w) = (self.height(), self.width());
        let start = acs_start(h, self.acs_lines());
        self.pattern.data()[start * w..(start + self.acs_lines()) * w]
            .iter()
            .all(|&v| v == 1.0)
    }

    fn check_image(&self, t: &Tensor, op: &'static str) -> Result<()> {
        let (h, w) = t.complex_dims(op)?;
        if (h, w) != (self.height(), self.width()) {
            return Err(Error::shape(
                op,
                format!("tensor is {h}x{w} but mask is {}x{}", self.height(), self.width()),
            ));
        }
        Ok(())
    }
}

/// Draws a pattern with the central `acs` rows set and every other point
/// sampled independently with probability `p`.
fn bernoulli_pattern(rng: &mut impl Rng, h: usize, w: usize, acs: usize, p: f64) -> Tensor {
    let start = acs_start(h, acs);
    let acs_rows = start..start + acs;
    Tensor::from_fn(&[h, w], |k| {
        if acs_rows.contains(&(k / w)) || rng.gen::<f64>() < p {
            1.0
        } else {
            0.0
        }
    })
}

const MASK_DRAW_LIMIT: usize = 10_000;

/// 2D random undersampling mask: full central ACS rows plus uniform
/// per-point Bernoulli sampling elsewhere, so the sampled fraction is
/// `1/accel`. Draws whose count lands outside ±2% of the budget (or the
/// nearest integer, on grids too small for that) are rejected and redrawn
/// from the same stream.
pub fn make_undersampling_mask(h: usize, w: usize, accel: f64, acs_lines: usize, seed: u64) -> Result<Mask> {
    if h == 0 || w == 0 {
        return Err(Error::Mask(format!("empty grid {h}x{w}")));
    }
    if accel.is_nan() || accel < 1.0 {
        return Err(Error::Mask(format!("acceleration {accel} must be >= 1")));
    }
    if acs_lines >= h && accel > 1.0 {
        return Err(Error::Mask(format!("{acs_lines} ACS lines leave nothing to undersample in {h} rows")));
    }
    let total = (h * w) as f64;
    let target = total / accel;
    let acs_points = (acs_lines.min(h) * w) as f64;
    if acs_points > target * 1.02 {
        return Err(Error::Mask(format!(
            "ACS alone ({acs_points} points) exceeds the budget of {target:.0} points at accel {accel}"
        )));
    }
    let p = ((target - acs_points) / (total - acs_points)).clamp(0.0, 1.0);
    // tiny grids: at least the nearest integer count is acceptable
    let tol = (0.02 * target).max(0.5);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MASK_DRAW_LIMIT {
        let pattern = bernoulli_pattern(&mut rng, h, w, acs_lines.min(h), p);
        let n = pattern.count_nonzero() as f64;
        if (n - target).abs() <= tol {
            return Mask::from_pattern(
                pattern,
                MaskInfo {
                    height: h,
                    width: w,
                    accel,
                    acs_lines: acs_lines.min(h),
                    seed,
                },
            );
        }
    }
    Err(Error::Mask(format!(
        "no draw within 2% of {target:.0} points after {MASK_DRAW_LIMIT} attempts"
    )))
}

/// The two branch input supports, each an intersection of `parent` with a
/// random selection mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetPair {
    pub sub1: Mask,
    pub sub2: Mask,
    pub parent: Mask,
}

impl SubsetPair {
    /// Fraction of parent points covered by `sub1 ∪ sub2`.
    pub fn coverage(&self) -> f64 {
        let union = self
            .sub1
            .pattern()
            .data()
            .iter()
            .zip(self.sub2.pattern().data())
            .filter(|(a, b)| **a == 1.0 || **b == 1.0)
            .count();
        union as f64 / self.parent.count() as f64
    }

    /// Fraction of parent points present in both subsets.
    pub fn overlap(&self) -> f64 {
        let both = self
            .sub1
            .pattern()
            .data()
            .iter()
            .zip(self.sub2.pattern().data())
            .filter(|(a, b)| **a == 1.0 && **b == 1.0)
            .count();
        both as f64 / self.parent.count() as f64
    }
}

pub const SUBSET_RETRIES: usize = 100;
pub const SUBSET_FRACTION: (f64, f64) = (0.4, 0.6);

/// Builds two distinct selection subsets of `parent`, each holding the
/// central `sel_acs` rows and about half of the parent's points.
pub fn make_selection_subsets(parent: &Mask, sel_acs: usize, seed: u64) -> Result<SubsetPair> {
    if sel_acs > parent.acs_lines() {
        return Err(Error::contract(
            "make_selection_subsets",
            format!("selection ACS {sel_acs} exceeds parent ACS {}", parent.acs_lines()),
        ));
    }
    let (h, w) = (parent.height(), parent.width());
    let parent_n = parent.count() as f64;
    let start = acs_start(h, sel_acs);
    let band = &parent.pattern().data()[start * w..(start + sel_acs) * w];
    let band_n = band.iter().filter(|&&v| v == 1.0).count() as f64;
    let rest = parent_n - band_n;
    let q = if rest > 0.0 {
        ((0.5 * parent_n - band_n) / rest).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let (lo, hi) = (SUBSET_FRACTION.0 * parent_n, SUBSET_FRACTION.1 * parent_n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |avoid: Option<&Tensor>| -> Result<Mask> {
        let mut duplicates = 0;
        for _ in 0..SUBSET_RETRIES {
            let sel = bernoulli_pattern(&mut rng, h, w, sel_acs, q);
            let pattern = sel.zip_map(parent.pattern(), "make_selection_subsets", |a, b| a * b)?;
            let n = pattern.count_nonzero() as f64;
            if n < lo || n > hi {
                continue;
            }
            if avoid == Some(&pattern) {
                duplicates += 1;
                continue;
            }
            return Mask::from_pattern(
                pattern,
                MaskInfo {
                    height: h,
                    width: w,
                    accel: (h * w) as f64 / n,
                    acs_lines: sel_acs,
                    seed,
                },
            );
        }
        Err(Error::Subset(format!(
            "no selection within [{lo:.0}, {hi:.0}] points after {SUBSET_RETRIES} retries \
             ({duplicates} in range but identical to subset 1)"
        )))
    };
    let sub1 = draw(None)?;
    let sub2 = draw(Some(sub1.pattern()))?;
    Ok(SubsetPair {
        sub1,
        sub2,
        parent: parent.clone(),
    })
}

/// `A x = P F x`
pub fn apply_a(x: &Tensor, m: &Mask) -> Result<Tensor> {
    m.check_image(x, "apply_A")?;
    apply_pattern(&fft2_centered(x)?, m.pattern())
}

/// `Aᵀ y = F⁻¹ P y`
pub fn apply_at(y: &Tensor, m: &Mask) -> Result<Tensor> {
    m.check_image(y, "apply_At")?;
    ifft2_centered(&apply_pattern(y, m.pattern())?)
}

/// `Ā x = (I − P) F x`
pub fn apply_abar(x: &Tensor, m: &Mask) -> Result<Tensor> {
    m.check_image(x, "apply_Abar")?;
    apply_pattern(&fft2_centered(x)?, &m.complement())
}
