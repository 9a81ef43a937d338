//! Unrolled ISTA reconstructor with learned sparsifying transforms.
//!
//! Each phase takes a gradient step on `½‖Ax − y‖²` and then a learned
//! proximal step:
//!
//! ```text
//! r = x − ρ·Aᵀ(Ax − y)
//! d = D(r)                        2 → C
//! z = F(d) = F2(relu(F1(d)))      C → C → C
//! x' = r + H(G(soft(z, θ)))       G = G2∘relu∘G1,  H: C → 2
//! ```
//!
//! `G` mirrors `F` and is trained towards `G∘F = I` by the symmetry loss.

pub mod checkpoint;

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::kspace::Mask;
use crate::tensor::Tensor;

pub const DEFAULT_PHASES: usize = 9;
pub const DEFAULT_CHANNELS: usize = 16;
pub const KERNEL_SIZE: usize = 3;
pub const INIT_RHO: f64 = 0.5;
pub const INIT_THETA: f64 = 0.01;

/// Inverse of softplus: the raw value whose softplus is `theta`.
pub fn theta_to_raw(theta: f64) -> f64 {
    theta.exp_m1().ln()
}

pub fn raw_to_theta(raw: f64) -> f64 {
    raw.max(0.0) + (-raw.abs()).exp().ln_1p()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        Self {
            kernel: Tensor::zeros(&[c_out, c_in, k, k]),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    /// Xavier-uniform kernel with the given gain; zero bias.
    pub fn xavier(c_out: usize, c_in: usize, k: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = xavier_bound(c_out, c_in, k, gain);
        Self {
            kernel: Tensor::from_fn(&[c_out, c_in, k, k], |_| rng.gen_range(-bound..=bound)),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    /// Identity map between equal channel counts (centre tap 1).
    pub fn identity(c: usize, k: usize) -> Self {
        let mut p = Self::zeros(c, c, k);
        let centre = k / 2;
        for ch in 0..c {
            p.kernel.data_mut()[((ch * c + ch) * k + centre) * k + centre] = 1.0;
        }
        p
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }
}

/// `gain · sqrt(6 / (fan_in + fan_out))` with fans counting the receptive field.
pub fn xavier_bound(c_out: usize, c_in: usize, k: usize, gain: f64) -> f64 {
    let fan_in = (c_in * k * k) as f64;
    let fan_out = (c_out * k * k) as f64;
    gain * (6.0 / (fan_in + fan_out)).sqrt()
}

/// Learnable parameters of one unrolled phase.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseParams {
    pub rho: Tensor,
    /// `θ = softplus(theta_raw)`, so the threshold is never negative.
    pub theta_raw: Tensor,
    pub conv_d: ConvParams,
    pub conv_f1: ConvParams,
    pub conv_f2: ConvParams,
    pub conv_g1: ConvParams,
    pub conv_g2: ConvParams,
    pub conv_h: ConvParams,
}

impl PhaseParams {
    pub fn theta(&self) -> f64 {
        raw_to_theta(self.theta_raw.item())
    }

    fn convs(&self) -> [(&'static str, &ConvParams); 6] {
        [
            ("conv_d", &self.conv_d),
            ("conv_f1", &self.conv_f1),
            ("conv_f2", &self.conv_f2),
            ("conv_g1", &self.conv_g1),
            ("conv_g2", &self.conv_g2),
            ("conv_h", &self.conv_h),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let Self {
            rho,
            theta_raw,
            conv_d,
            conv_f1,
            conv_f2,
            conv_g1,
            conv_g2,
            conv_h,
        } = self;
        let mut out = vec![rho, theta_raw];
        for c in [conv_d, conv_f1, conv_f2, conv_g1, conv_g2, conv_h] {
            out.push(&mut c.kernel);
            out.push(&mut c.bias);
        }
        out
    }

    /// All-zero transforms: the phase reduces to a plain gradient step.
    pub fn zero_denoiser(channels: usize, rho: f64) -> Self {
        let k = KERNEL_SIZE;
        Self {
            rho: Tensor::scalar(rho),
            theta_raw: Tensor::scalar(theta_to_raw(INIT_THETA)),
            conv_d: ConvParams::zeros(channels, 2, k),
            conv_f1: ConvParams::zeros(channels, channels, k),
            conv_f2: ConvParams::zeros(channels, channels, k),
            conv_g1: ConvParams::zeros(channels, channels, k),
            conv_g2: ConvParams::zeros(channels, channels, k),
            conv_h: ConvParams::zeros(2, channels, k),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub phases: Vec<PhaseParams>,
    pub channels: usize,
}

impl ModelParams {
    /// Xavier-uniform (gain 1) kernels, zero biases, `ρ = 0.5`, `θ = 0.01`.
    pub fn init(phases: usize, channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("channel width must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = KERNEL_SIZE;
        let c = channels;
        let phases = (0..phases)
            .map(|_| PhaseParams {
                rho: Tensor::scalar(INIT_RHO),
                theta_raw: Tensor::scalar(theta_to_raw(INIT_THETA)),
                conv_d: ConvParams::xavier(c, 2, k, 1.0, &mut rng),
                conv_f1: ConvParams::xavier(c, c, k, 1.0, &mut rng),
                conv_f2: ConvParams::xavier(c, c, k, 1.0, &mut rng),
                conv_g1: ConvParams::xavier(c, c, k, 1.0, &mut rng),
                conv_g2: ConvParams::xavier(c, c, k, 1.0, &mut rng),
                conv_h: ConvParams::xavier(2, c, k, 1.0, &mut rng),
            })
            .collect();
        Ok(Self { phases, channels })
    }

    pub fn num_phases(&self) -> usize {
        self.phases.len()
    }

    /// Parameter tensors with stable dotted names, in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, p) in self.phases.iter().enumerate() {
            out.push((format!("phase{i}.rho"), &p.rho));
            out.push((format!("phase{i}.theta_raw"), &p.theta_raw));
            for (name, c) in p.convs() {
                out.push((format!("phase{i}.{name}.kernel"), &c.kernel));
                out.push((format!("phase{i}.{name}.bias"), &c.bias));
            }
        }
        out
    }

    /// Mutable view in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.phases.iter_mut().flat_map(PhaseParams::tensors_mut).collect()
    }

    /// Registers every parameter as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> ModelNodes {
        let conv = |g: &mut Graph, c: &ConvParams| ConvNodes {
            kernel: g.leaf(c.kernel.clone()),
            bias: g.leaf(c.bias.clone()),
        };
        let phases = self
            .phases
            .iter()
            .map(|p| PhaseNodes {
                rho: g.leaf(p.rho.clone()),
                theta_raw: g.leaf(p.theta_raw.clone()),
                conv_d: conv(g, &p.conv_d),
                conv_f1: conv(g, &p.conv_f1),
                conv_f2: conv(g, &p.conv_f2),
                conv_g1: conv(g, &p.conv_g1),
                conv_g2: conv(g, &p.conv_g2),
                conv_h: conv(g, &p.conv_h),
            })
            .collect();
        ModelNodes { phases }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvNodes {
    pub kernel: NodeId,
    pub bias: NodeId,
}

#[derive(Clone, Debug)]
pub struct PhaseNodes {
    pub rho: NodeId,
    pub theta_raw: NodeId,
    pub conv_d: ConvNodes,
    pub conv_f1: ConvNodes,
    pub conv_f2: ConvNodes,
    pub conv_g1: ConvNodes,
    pub conv_g2: ConvNodes,
    pub conv_h: ConvNodes,
}

/// Graph handles of a bound [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ModelNodes {
    pub phases: Vec<PhaseNodes>,
}

impl ModelNodes {
    /// Node ids in the order of [`ModelParams::named_tensors`].
    pub fn ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for p in &self.phases {
            out.push(p.rho);
            out.push(p.theta_raw);
            for c in [p.conv_d, p.conv_f1, p.conv_f2, p.conv_g1, p.conv_g2, p.conv_h] {
                out.push(c.kernel);
                out.push(c.bias);
            }
        }
        out
    }

    /// Gradients collected after `Graph::backward`.
    pub fn grads(&self, g: &Graph) -> Result<Vec<Tensor>> {
        self.ids()
            .into_iter()
            .map(|id| {
                g.grad(id)
                    .cloned()
                    .ok_or_else(|| Error::contract("ModelNodes::grads", "backward has not been run"))
            })
            .collect()
    }
}

/// Pair compared by the symmetry loss: the transform input `D(r)` and its
/// round trip `G(F(D(r)))` without thresholding.
#[derive(Clone, Copy, Debug)]
pub struct SymmetryPair {
    pub reference: NodeId,
    pub round_trip: NodeId,
}

#[derive(Clone, Debug)]
pub struct PhaseOutput {
    pub x: NodeId,
    pub symmetry: SymmetryPair,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub x: NodeId,
    pub zero_filled: NodeId,
    pub symmetry: Vec<SymmetryPair>,
}

fn conv(g: &mut Graph, x: NodeId, c: ConvNodes) -> Result<NodeId> {
    g.conv2d(x, c.kernel, c.bias)
}

fn two_layer(g: &mut Graph, x: NodeId, first: ConvNodes, second: ConvNodes) -> Result<NodeId> {
    let h = conv(g, x, first)?;
    let h = g.relu(h)?;
    conv(g, h, second)
}

/// `(D(r), F(D(r)))`
fn analysis(g: &mut Graph, r: NodeId, p: &PhaseNodes) -> Result<(NodeId, NodeId)> {
    let d = conv(g, r, p.conv_d)?;
    let z = two_layer(g, d, p.conv_f1, p.conv_f2)?;
    Ok((d, z))
}

/// `x − ρ·Aᵀ(Ax − y)`
pub fn gradient_step(g: &mut Graph, x: NodeId, y: NodeId, pattern: &Rc<Tensor>, rho: NodeId) -> Result<NodeId> {
    let fx = g.fft2c(x)?;
    let ax = g.mask(fx, pattern.clone())?;
    let res = g.sub(ax, y)?;
    let res = g.mask(res, pattern.clone())?;
    let back = g.ifft2c(res)?;
    let step = g.mul_scalar(back, rho)?;
    g.sub(x, step)
}

/// Returns `D(r)` and `G(F(D(r)))` for the symmetry constraint.
pub fn symmetry_features(g: &mut Graph, r: NodeId, p: &PhaseNodes) -> Result<SymmetryPair> {
    let (d, z) = analysis(g, r, p)?;
    let round_trip = two_layer(g, z, p.conv_g1, p.conv_g2)?;
    Ok(SymmetryPair {
        reference: d,
        round_trip,
    })
}

/// One unrolled iteration. `y` must be a `2×H×W` node supported on `pattern`.
pub fn phase_forward(g: &mut Graph, x_prev: NodeId, y: NodeId, pattern: &Rc<Tensor>, p: &PhaseNodes) -> Result<PhaseOutput> {
    let r = gradient_step(g, x_prev, y, pattern, p.rho)?;
    let (d, z) = analysis(g, r, p)?;
    let theta = g.softplus(p.theta_raw)?;
    let s = g.soft_threshold(z, theta)?;
    let back = two_layer(g, s, p.conv_g1, p.conv_g2)?;
    let resid = conv(g, back, p.conv_h)?;
    let x = g.add(r, resid)?;
    let round_trip = two_layer(g, z, p.conv_g1, p.conv_g2)?;
    Ok(PhaseOutput {
        x,
        symmetry: SymmetryPair {
            reference: d,
            round_trip,
        },
    })
}

/// Zero-filled start `x⁰ = Aᵀy` followed by every phase of `params`.
pub fn reconstruct(g: &mut Graph, y: &Tensor, m: &Mask, params: &ModelNodes) -> Result<Reconstruction> {
    let (h, w) = y.complex_dims("reconstruct")?;
    if (h, w) != (m.height(), m.width()) {
        return Err(Error::shape(
            "reconstruct",
            format!("k-space is {h}x{w} but mask is {}x{}", m.height(), m.width()),
        ));
    }
    let pattern = Rc::new(m.pattern().clone());
    let y = g.constant(y.clone());
    let masked = g.mask(y, pattern.clone())?;
    let zero_filled = g.ifft2c(masked)?;
    let mut x = zero_filled;
    let mut symmetry = Vec::with_capacity(params.phases.len());
    for p in &params.phases {
        let out = phase_forward(g, x, y, &pattern, p)?;
        x = out.x;
        symmetry.push(out.symmetry);
    }
    Ok(Reconstruction {
        x,
        zero_filled,
        symmetry,
    })
}

/// Inference without keeping the graph: returns the `2×H×W` image.
pub fn reconstruct_image(y: &Tensor, m: &Mask, params: &ModelParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let nodes = params.bind(&mut g);
    let rec = reconstruct(&mut g, y, m, &nodes)?;
    Ok(g.value(rec.x).clone())
}
