//! Training objectives for the parallel branches and the comparison modes.
//!
//! Parallel mode, per sample:
//!
//! ```text
//! L = mse_P(A x₁, y) + mse_P(A x₂, y) + α·mse_{I−P}(Ā x₁, Ā x₂) + β·cons₁ + γ·cons₂
//! ```
//!
//! where both reconstruction terms use every scanned point of `y`, not only
//! the subset a branch was fed. Batch values are sample means.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::kspace::Mask;
use crate::model::{Reconstruction, SymmetryPair};
use crate::tensor::Tensor;

pub const DEFAULT_WEIGHT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// difference loss
    pub alpha: f64,
    /// symmetry constraint, branch 1
    pub beta: f64,
    /// symmetry constraint, branch 2 (and the single branch of ssdu/supervised)
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_WEIGHT,
            beta: DEFAULT_WEIGHT,
            gamma: DEFAULT_WEIGHT,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// two branches, reconstruction + difference + symmetry losses
    #[default]
    Parallel,
    /// two branches without the difference term in the gradient
    ParallelNoDiff,
    /// one branch fed subset 1, loss on a designated set of scanned points
    Ssdu,
    /// one branch fed all scanned data, image-domain loss against ground truth
    Supervised,
}

impl LossMode {
    pub fn is_parallel(self) -> bool {
        matches!(self, LossMode::Parallel | LossMode::ParallelNoDiff)
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| Error::Config(format!("unknown loss mode {s:?}")))
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Parallel => "parallel",
            LossMode::ParallelNoDiff => "parallel_no_diff",
            LossMode::Ssdu => "ssdu",
            LossMode::Supervised => "supervised",
        })
    }
}

/// Which scanned points the SSDU-style loss is evaluated on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsduLossMask {
    /// every scanned point, including the branch input
    #[default]
    Full,
    /// scanned points not fed to the branch
    Disjoint,
}

fn pattern_rc(m: &Mask) -> Rc<Tensor> {
    Rc::new(m.pattern().clone())
}

/// `mse_P(A x, y)` over every scanned point of `m_full`.
pub fn recon_loss(g: &mut Graph, y_full: &Tensor, m_full: &Mask, x: NodeId) -> Result<NodeId> {
    let pattern = pattern_rc(m_full);
    let y = g.constant(y_full.clone());
    let fx = g.fft2c(x)?;
    let ax = g.mask(fx, pattern.clone())?;
    g.masked_mse(ax, y, pattern)
}

/// Agreement of the two branches on the unscanned points `I − P`.
pub fn diff_loss(g: &mut Graph, x1: NodeId, x2: NodeId, m_full: &Mask) -> Result<NodeId> {
    let unscanned = Rc::new(m_full.complement());
    let f1 = g.fft2c(x1)?;
    let f2 = g.fft2c(x2)?;
    let a1 = g.mask(f1, unscanned.clone())?;
    let a2 = g.mask(f2, unscanned.clone())?;
    g.masked_mse(a1, a2, unscanned)
}

/// Mean over phases of `mse(G(F(d)), d)`; 0 for an empty list.
pub fn constraint_loss(g: &mut Graph, per_phase: &[SymmetryPair]) -> Result<NodeId> {
    if per_phase.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let mut acc: Option<NodeId> = None;
    for pair in per_phase {
        let ones = Rc::new(Tensor::ones(g.value(pair.reference).shape()));
        let l = g.masked_mse(pair.round_trip, pair.reference, ones)?;
        acc = Some(match acc {
            Some(a) => g.add(a, l)?,
            None => l,
        });
    }
    g.scale(acc.unwrap(), 1.0 / per_phase.len() as f64)
}

/// Supervision available for one sample.
pub struct LossTarget<'a> {
    /// undersampled k-space on `mask`
    pub y_full: &'a Tensor,
    pub mask: &'a Mask,
    /// scanned points scored in ssdu mode
    pub ssdu_loss_mask: Option<&'a Mask>,
    /// `H×W` image, supervised mode only
    pub ground_truth: Option<&'a Tensor>,
}

/// Graph nodes of each loss component. Absent components are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: NodeId,
    pub recon1: NodeId,
    pub recon2: Option<NodeId>,
    pub diff: Option<NodeId>,
    pub cons1: NodeId,
    pub cons2: Option<NodeId>,
}

/// Scalar values of the loss components (0 where absent).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub recon1: f64,
    pub recon2: f64,
    pub diff: f64,
    pub cons1: f64,
    pub cons2: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph) -> LossValues {
        let v = |id: Option<NodeId>| id.map_or(0.0, |i| g.value(i).item());
        LossValues {
            total: v(Some(self.total)),
            recon1: v(Some(self.recon1)),
            recon2: v(self.recon2),
            diff: v(self.diff),
            cons1: v(Some(self.cons1)),
            cons2: v(self.cons2),
        }
    }
}

impl LossValues {
    pub fn accumulate(&mut self, other: &LossValues) {
        self.total += other.total;
        self.recon1 += other.recon1;
        self.recon2 += other.recon2;
        self.diff += other.diff;
        self.cons1 += other.cons1;
        self.cons2 += other.cons2;
    }

    pub fn scaled(&self, c: f64) -> LossValues {
        LossValues {
            total: self.total * c,
            recon1: self.recon1 * c,
            recon2: self.recon2 * c,
            diff: self.diff * c,
            cons1: self.cons1 * c,
            cons2: self.cons2 * c,
        }
    }

    /// Arithmetic mean in iteration order.
    pub fn mean<'a>(values: impl IntoIterator<Item = &'a LossValues>) -> LossValues {
        let mut acc = LossValues::default();
        let mut n = 0usize;
        for v in values {
            acc.accumulate(v);
            n += 1;
        }
        if n == 0 {
            acc
        } else {
            acc.scaled(1.0 / n as f64)
        }
    }
}

fn weighted_sum(g: &mut Graph, terms: &[(f64, NodeId)]) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for &(w, id) in terms {
        let t = if w == 1.0 { id } else { g.scale(id, w)? };
        acc = Some(match acc {
            Some(a) => g.add(a, t)?,
            None => t,
        });
    }
    acc.ok_or_else(|| Error::contract("total_loss", "no terms"))
}

/// Per-sample training loss for `mode`. `branch2` is required by the
/// parallel modes and ignored otherwise.
pub fn total_loss(
    g: &mut Graph,
    mode: LossMode,
    weights: &LossWeights,
    target: &LossTarget<'_>,
    branch1: &Reconstruction,
    branch2: Option<&Reconstruction>,
) -> Result<LossTerms> {
    weights.validate()?;
    match mode {
        LossMode::Parallel | LossMode::ParallelNoDiff => {
            let b2 = branch2.ok_or_else(|| Error::contract("total_loss", "parallel modes need two branches"))?;
            let recon1 = recon_loss(g, target.y_full, target.mask, branch1.x)?;
            let recon2 = recon_loss(g, target.y_full, target.mask, b2.x)?;
            let diff = diff_loss(g, branch1.x, b2.x, target.mask)?;
            let cons1 = constraint_loss(g, &branch1.symmetry)?;
            let cons2 = constraint_loss(g, &b2.symmetry)?;
            // grouped so that swapping the branches leaves the sum bit-identical when β = γ
            let data = g.add(recon1, recon2)?;
            let sym = weighted_sum(g, &[(weights.beta, cons1), (weights.gamma, cons2)])?;
            let total = if mode == LossMode::Parallel {
                weighted_sum(g, &[(1.0, data), (weights.alpha, diff), (1.0, sym)])?
            } else {
                g.add(data, sym)?
            };
            Ok(LossTerms {
                total,
                recon1,
                recon2: Some(recon2),
                diff: Some(diff),
                cons1,
                cons2: Some(cons2),
            })
        }
        LossMode::Ssdu => {
            let loss_mask = target.ssdu_loss_mask.unwrap_or(target.mask);
            let recon1 = recon_loss(g, target.y_full, loss_mask, branch1.x)?;
            let cons1 = constraint_loss(g, &branch1.symmetry)?;
            let total = weighted_sum(g, &[(1.0, recon1), (weights.gamma, cons1)])?;
            Ok(LossTerms {
                total,
                recon1,
                recon2: None,
                diff: None,
                cons1,
                cons2: None,
            })
        }
        LossMode::Supervised => {
            let gt = target
                .ground_truth
                .ok_or_else(|| Error::contract("total_loss", "supervised mode needs a ground-truth image"))?;
            let gt = g.constant(gt.to_complex()?);
            let ones = Rc::new(Tensor::ones(g.value(gt).shape()));
            let recon1 = g.masked_mse(branch1.x, gt, ones)?;
            let cons1 = constraint_loss(g, &branch1.symmetry)?;
            let total = weighted_sum(g, &[(1.0, recon1), (weights.gamma, cons1)])?;
            Ok(LossTerms {
                total,
                recon1,
                recon2: None,
                diff: None,
                cons1,
                cons2: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::{apply_a, make_undersampling_mask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn recon_loss_zero_for_consistent_image() {
        let m = make_undersampling_mask(8, 8, 2.0, 2, 1).unwrap();
        let x = random(&[2, 8, 8], 2);
        let y = apply_a(&x, &m).unwrap();
        let mut g = Graph::new();
        let xn = g.leaf(x);
        let l = recon_loss(&mut g, &y, &m, xn).unwrap();
        assert!(g.value(l).item() < 1e-28);
    }

    #[test]
    fn recon_loss_of_zero_image_is_mean_power_per_entry() {
        let m = make_undersampling_mask(8, 8, 2.0, 2, 1).unwrap();
        let y = apply_a(&random(&[2, 8, 8], 3), &m).unwrap();
        let mut g = Graph::new();
        let xn = g.leaf(Tensor::zeros(&[2, 8, 8]));
        let l = recon_loss(&mut g, &y, &m, xn).unwrap();
        // real and imaginary parts count as separate entries
        let expect = y.data().iter().map(|v| v * v).sum::<f64>() / (2 * m.count()) as f64;
        assert!((g.value(l).item() - expect).abs() < 1e-14);
    }

    #[test]
    fn diff_loss_zero_cases_and_symmetry() {
        let m = make_undersampling_mask(8, 8, 2.0, 2, 1).unwrap();
        let mut g = Graph::new();
        let a = g.leaf(random(&[2, 8, 8], 4));
        let b = g.leaf(random(&[2, 8, 8], 5));
        let same = diff_loss(&mut g, a, a, &m).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
        let ab = diff_loss(&mut g, a, b, &m).unwrap();
        let ba = diff_loss(&mut g, b, a, &m).unwrap();
        assert_eq!(g.value(ab).item(), g.value(ba).item());
        assert!(g.value(ab).item() > 0.0);
        let full = diff_loss(&mut g, a, b, &Mask::full(8, 8)).unwrap();
        assert_eq!(g.value(full).item(), 0.0);
    }

    #[test]
    fn constraint_loss_cases() {
        let mut g = Graph::new();
        let empty = constraint_loss(&mut g, &[]).unwrap();
        assert_eq!(g.value(empty).item(), 0.0);
        let r = g.leaf(random(&[3, 4, 4], 1));
        let one = g.constant(Tensor::ones(&[3, 4, 4]));
        let shifted = g.add(r, one).unwrap();
        let l = constraint_loss(
            &mut g,
            &[SymmetryPair {
                reference: r,
                round_trip: shifted,
            }],
        )
        .unwrap();
        assert!((g.value(l).item() - 1.0).abs() < 1e-15);
        let same = constraint_loss(
            &mut g,
            &[SymmetryPair {
                reference: r,
                round_trip: r,
            }],
        )
        .unwrap();
        assert_eq!(g.value(same).item(), 0.0);
    }

    #[test]
    fn supervised_requires_ground_truth() {
        let m = Mask::full(8, 8);
        let y = Tensor::zeros(&[2, 8, 8]);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 8, 8]));
        let rec = Reconstruction {
            x,
            zero_filled: x,
            symmetry: vec![],
        };
        let target = LossTarget {
            y_full: &y,
            mask: &m,
            ssdu_loss_mask: None,
            ground_truth: None,
        };
        let err = total_loss(&mut g, LossMode::Supervised, &LossWeights::default(), &target, &rec, None);
        assert!(matches!(err, Err(Error::Contract { .. })));
        let err = total_loss(&mut g, LossMode::Parallel, &LossWeights::default(), &target, &rec, None);
        assert!(err.is_err());
    }

    #[test]
    fn mode_names_parse() {
        assert_eq!("parallel_no_diff".parse::<LossMode>().unwrap(), LossMode::ParallelNoDiff);
        assert_eq!("parallel-no-diff".parse::<LossMode>().unwrap(), LossMode::ParallelNoDiff);
        assert_eq!(LossMode::Ssdu.to_string(), "ssdu");
        assert!("unet".parse::<LossMode>().is_err());
    }

    #[test]
    fn negative_weights_rejected() {
        let w = LossWeights {
            alpha: -1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }
}
