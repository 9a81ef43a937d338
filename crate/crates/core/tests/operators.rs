//! Algebra of the centered FFT and the masked encoding operators.

mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use ssrecon::dataio::simulate_acquisition;
use ssrecon::kspace::{apply_a, apply_abar, apply_at, apply_pattern, fft2_centered, ifft2_centered};
use ssrecon::{Mask, MaskInfo, Tensor};

fn random_mask(h: usize, w: usize, rng: &mut impl Rng) -> Mask {
    let p = Tensor::from_fn(&[h, w], |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
    Mask::from_pattern(
        p,
        MaskInfo {
            height: h,
            width: w,
            accel: 1.0,
            acs_lines: 0,
            seed: 0,
        },
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn fft_is_unitary(seed in any::<u64>(), h in 1usize..17, w in 1usize..17) {
        let mut r = rng(seed);
        let x = uniform(&[2, h, w], &mut r, -1.0, 1.0);
        let y = uniform(&[2, h, w], &mut r, -1.0, 1.0);
        let fx = fft2_centered(&x).unwrap();
        let fy = fft2_centered(&y).unwrap();
        prop_assert!((fx.norm() - x.norm()).abs() <= 1e-10 * x.norm());
        // real part of the complex inner product is preserved
        prop_assert!((fx.dot(&fy).unwrap() - x.dot(&y).unwrap()).abs() < 1e-10 * x.norm() * y.norm());
        let back = ifft2_centered(&fx).unwrap();
        prop_assert!(back.sub(&x).unwrap().max_abs() < 1e-10);
        let fwd = fft2_centered(&ifft2_centered(&x).unwrap()).unwrap();
        prop_assert!(fwd.sub(&x).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn adjoint_identity(seed in any::<u64>(), h in 1usize..13, w in 1usize..13) {
        let mut r = rng(seed);
        let m = random_mask(h, w, &mut r);
        let x = uniform(&[2, h, w], &mut r, -1.0, 1.0);
        let y = uniform(&[2, h, w], &mut r, -1.0, 1.0);
        let lhs = apply_a(&x, &m).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&apply_at(&y, &m).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn scanned_plus_unscanned_is_the_full_transform(seed in any::<u64>(), h in 1usize..13, w in 1usize..13) {
        let mut r = rng(seed);
        let m = random_mask(h, w, &mut r);
        let x = uniform(&[2, h, w], &mut r, -1.0, 1.0);
        let a = apply_a(&x, &m).unwrap();
        let abar = apply_abar(&x, &m).unwrap();
        let f = fft2_centered(&x).unwrap();
        // disjoint supports: the sum is exact entrywise
        for ((&p, &q), &v) in a.data().iter().zip(abar.data()).zip(f.data()) {
            prop_assert!(p == 0.0 || q == 0.0);
            prop_assert_eq!(p + q, v);
        }
        let ones = Tensor::ones(&[h, w]);
        let sum = m.pattern().add(&m.complement()).unwrap();
        prop_assert_eq!(sum, ones);
    }

    #[test]
    fn a_at_is_idempotent(seed in any::<u64>(), h in 1usize..13, w in 1usize..13) {
        let mut r = rng(seed);
        let m = random_mask(h, w, &mut r);
        let y = uniform(&[2, h, w], &mut r, -1.0, 1.0);
        let once = apply_a(&apply_at(&y, &m).unwrap(), &m).unwrap();
        let twice = apply_a(&apply_at(&once, &m).unwrap(), &m).unwrap();
        prop_assert!(twice.sub(&once).unwrap().max_abs() < 1e-10);
        // on data supported on the mask, A Aᵀ is the identity
        let supported = apply_pattern(&y, m.pattern()).unwrap();
        prop_assert!(once.sub(&supported).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn acquisition_is_linear(seed in any::<u64>(), n in 2usize..12) {
        let mut r = rng(seed);
        let m = random_mask(n, n, &mut r);
        let a = uniform(&[n, n], &mut r, 0.0, 1.0);
        let b = uniform(&[n, n], &mut r, 0.0, 1.0);
        let sum = simulate_acquisition(&a.add(&b).unwrap(), &m).unwrap();
        let parts = simulate_acquisition(&a, &m).unwrap().add(&simulate_acquisition(&b, &m).unwrap()).unwrap();
        prop_assert!(sum.sub(&parts).unwrap().max_abs() < 1e-10);
    }
}

#[test]
fn full_mask_acquisition_is_the_fft() {
    let mut r = rng(3);
    let img = uniform(&[9, 6], &mut r, 0.0, 1.0);
    let y = simulate_acquisition(&img, &Mask::full(9, 6)).unwrap();
    assert_eq!(y, fft2_centered(&img.to_complex().unwrap()).unwrap());
    let zero = simulate_acquisition(&Tensor::zeros(&[9, 6]), &Mask::full(9, 6)).unwrap();
    assert_eq!(zero.max_abs(), 0.0);
}

#[test]
fn operators_reject_mismatched_shapes() {
    let m = Mask::full(4, 4);
    let x = Tensor::zeros(&[2, 4, 5]);
    assert!(apply_a(&x, &m).is_err());
    assert!(apply_at(&x, &m).is_err());
    assert!(apply_abar(&Tensor::zeros(&[3, 4, 4]), &m).is_err());
}
