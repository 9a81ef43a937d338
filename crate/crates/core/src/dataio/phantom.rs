//! Synthetic head phantoms standing in for real brain slices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One additive ellipse: intensity, semi-axes, centre, rotation (degrees).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi_deg: f64,
}

const fn e(intensity: f64, a: f64, b: f64, x0: f64, y0: f64, phi_deg: f64) -> Ellipse {
    Ellipse {
        intensity,
        a,
        b,
        x0,
        y0,
        phi_deg,
    }
}

/// Modified Shepp–Logan (Toft) ellipse table on `[-1, 1]²`.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    e(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    e(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    e(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    e(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    e(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    e(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    e(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    e(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    e(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    e(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

impl Ellipse {
    /// Normalised radius² of `(x, y)`; inside when ≤ 1.
    pub fn radius2(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }
}

/// Pixel-centre coordinates: column `j` → `x`, row `i` → `y` (row 0 at the top).
pub fn pixel_coords(i: usize, j: usize, n: usize) -> (f64, f64) {
    let x = (2.0 * j as f64 + 1.0) / n as f64 - 1.0;
    let y = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
    (x, y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Shepp–Logan; seed 0 is the standard table, other seeds jitter it.
    Shepp,
    /// Random smooth-edged ellipses inside a head outline.
    Blobs,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp" => Ok(Variant::Shepp),
            "blobs" => Ok(Variant::Blobs),
            other => Err(Error::Config(format!("unknown phantom variant {other:?} (expected shepp or blobs)"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Shepp => "shepp",
            Variant::Blobs => "blobs",
        })
    }
}

fn render(n: usize, ellipses: &[Ellipse], edge: Option<f64>) -> Tensor {
    Tensor::from_fn(&[n, n], |k| {
        let (x, y) = pixel_coords(k / n, k % n, n);
        let v: f64 = ellipses
            .iter()
            .map(|el| {
                let r2 = el.radius2(x, y);
                let inside = match edge {
                    None => (r2 <= 1.0) as u8 as f64,
                    // logistic roll-off over roughly `edge` in normalised radius
                    Some(w) => 1.0 / (1.0 + ((r2.sqrt() - 1.0) / w).exp()),
                };
                el.intensity * inside
            })
            .sum();
        v.clamp(0.0, 1.0)
    })
}

fn jittered_shepp(rng: &mut impl Rng) -> Vec<Ellipse> {
    let scale = rng.gen_range(0.85..1.05);
    let mut out: Vec<Ellipse> = SHEPP_LOGAN
        .iter()
        .map(|el| Ellipse {
            intensity: el.intensity,
            a: el.a * scale * rng.gen_range(0.9..1.1),
            b: el.b * scale * rng.gen_range(0.9..1.1),
            x0: el.x0 * scale + rng.gen_range(-0.03..0.03),
            y0: el.y0 * scale + rng.gen_range(-0.03..0.03),
            phi_deg: el.phi_deg + rng.gen_range(-10.0..10.0),
        })
        .collect();
    for el in out.iter_mut().skip(2) {
        el.intensity *= rng.gen_range(0.5..1.5);
    }
    out
}

fn random_blobs(rng: &mut impl Rng) -> Vec<Ellipse> {
    let mut out = vec![Ellipse {
        intensity: rng.gen_range(0.5..0.8),
        a: rng.gen_range(0.6..0.85),
        b: rng.gen_range(0.7..0.92),
        x0: rng.gen_range(-0.05..0.05),
        y0: rng.gen_range(-0.05..0.05),
        phi_deg: rng.gen_range(-15.0..15.0),
    }];
    let count = rng.gen_range(3..=7);
    for _ in 0..count {
        out.push(Ellipse {
            intensity: rng.gen_range(-0.4..0.4),
            a: rng.gen_range(0.06..0.35),
            b: rng.gen_range(0.06..0.35),
            x0: rng.gen_range(-0.4..0.4),
            y0: rng.gen_range(-0.45..0.45),
            phi_deg: rng.gen_range(0.0..180.0),
        });
    }
    out
}

/// `n×n` phantom with values in `[0, 1]`.
pub fn phantom(n: usize, variant: Variant, seed: u64) -> Result<Tensor> {
    if n < 8 {
        return Err(Error::Config(format!("phantom size {n} is below the minimum of 8")));
    }
    Ok(match variant {
        Variant::Shepp if seed == 0 => render(n, &SHEPP_LOGAN, None),
        Variant::Shepp => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            render(n, &jittered_shepp(&mut rng), None)
        }
        Variant::Blobs => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let edge = 1.5 / n as f64;
            render(n, &random_blobs(&mut rng), Some(edge.max(0.01)))
        }
    })
}
