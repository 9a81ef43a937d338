//! Tensor files, phantoms, datasets and image metrics.

mod common;

use common::*;
use proptest::prelude::*;
use ssrecon::dataio::dataset::{generate_phantoms, load_phantoms, save_phantoms};
use ssrecon::dataio::metrics::{gaussian_taps, SSIM_SIGMA, SSIM_WINDOW};
use ssrecon::dataio::rten::{self, DType};
use ssrecon::dataio::{phantom, simulate_acquisition};
use ssrecon::kspace::apply_at;
use ssrecon::{psnr, ssim, Dataset, Mask, Tensor, Variant};

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn rten_f64_round_trip_is_exact(seed in any::<u64>(), dims in prop::collection::vec(1usize..5, 0..4)) {
        let mut r = rng(seed);
        let t = uniform(&dims, &mut r, -1e6, 1e6);
        let bytes = rten::encode(&t, DType::F64);
        prop_assert_eq!(bytes.len(), rten::header_len(dims.len()) + 8 * t.len());
        let (back, dtype) = rten::decode(&bytes).unwrap();
        prop_assert_eq!(dtype, DType::F64);
        prop_assert_eq!(back, t);
    }

    #[test]
    fn rten_f32_round_trip_matches_a_cast(seed in any::<u64>(), n in 1usize..40) {
        let mut r = rng(seed);
        let t = uniform(&[n], &mut r, -10.0, 10.0);
        let (back, dtype) = rten::decode(&rten::encode(&t, DType::F32)).unwrap();
        prop_assert_eq!(dtype, DType::F32);
        for (a, b) in t.data().iter().zip(back.data()) {
            prop_assert_eq!(*a as f32 as f64, *b);
        }
    }

    #[test]
    fn psnr_matches_a_scalar_loop(seed in any::<u64>(), h in 1usize..10, w in 1usize..10, range in 0.5f64..4.0) {
        let mut r = rng(seed);
        let a = uniform(&[h, w], &mut r, 0.0, 1.0);
        let b = uniform(&[h, w], &mut r, 0.0, 1.0);
        prop_assert!((psnr(&a, &b, range).unwrap() - psnr_loop(&a, &b, range)).abs() < 1e-9);
    }
}

#[test]
fn rten_rejects_corrupt_input() {
    let t = Tensor::from_fn(&[2, 3], |i| i as f64);
    let mut bytes = rten::encode(&t, DType::F64);
    assert!(rten::decode(&bytes[..bytes.len() - 1]).is_err());
    bytes[0] = b'X';
    assert!(rten::decode(&bytes).is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.rten");
    let u = Tensor::scalar(4.5);
    rten::write_tensors(&path, &[t.clone(), u.clone()], DType::F64).unwrap();
    assert_eq!(rten::read_tensors(&path).unwrap(), vec![t, u]);
    assert!(rten::read_tensor(&dir.path().join("missing.rten")).is_err());
}

#[test]
fn psnr_closed_form() {
    // MSE 0.25 on unit range: 10·log10(4)
    let a = Tensor::full(&[4, 4], 0.25);
    let b = Tensor::full(&[4, 4], 0.75);
    assert!((psnr(&a, &b, 1.0).unwrap() - 6.020_599_913_279_624).abs() < 1e-12);
    assert!(psnr(&a, &Tensor::zeros(&[4, 5]), 1.0).is_err());
}

#[test]
fn ssim_matches_brute_force() {
    let mut r = rng(17);
    for (h, w) in [(11, 11), (16, 13), (24, 24)] {
        let a = uniform(&[h, w], &mut r, 0.0, 1.0);
        let mut b = a.clone();
        for v in b.data_mut() {
            *v = (*v + 0.2 * (rand::Rng::gen::<f64>(&mut r) - 0.5)).clamp(0.0, 1.0);
        }
        let got = ssim(&a, &b, 1.0).unwrap();
        let want = ssim_brute(&a, &b, 1.0);
        assert!((got - want).abs() < 1e-7, "{h}x{w}: {got} vs {want}");
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(got < 1.0);
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert!(ssim(&Tensor::zeros(&[10, 20]), &Tensor::zeros(&[10, 20]), 1.0).is_err());
}

#[test]
fn phantoms_are_bounded_and_reproducible() {
    for variant in [Variant::Shepp, Variant::Blobs] {
        for seed in [0, 1, 2] {
            let p = phantom(32, variant, seed).unwrap();
            assert_eq!(p.shape(), &[32, 32]);
            assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(p.max_abs() > 0.0);
            assert_eq!(p, phantom(32, variant, seed).unwrap());
        }
        assert_ne!(phantom(32, variant, 1).unwrap(), phantom(32, variant, 2).unwrap());
    }
    // standard table: outer skull ellipse at intensity 1, border outside it
    let std = phantom(64, Variant::Shepp, 0).unwrap();
    assert_eq!(std.data()[0], 0.0);
    assert!(phantom(4, Variant::Shepp, 0).is_err());
}

#[test]
fn phantom_files_round_trip() {
    let imgs = generate_phantoms(16, Variant::Blobs, 3, 8).unwrap();
    assert_eq!(imgs[2].0, "img0002");
    let dir = tempfile::tempdir().unwrap();
    let path = save_phantoms(dir.path(), 16, Variant::Blobs, 8, &imgs, false).unwrap();
    assert_eq!(load_phantoms(&path).unwrap(), imgs);
    assert_eq!(load_phantoms(dir.path()).unwrap(), imgs);
    assert!(save_phantoms(dir.path(), 16, Variant::Blobs, 8, &imgs, false).is_err());
}

#[test]
fn dataset_round_trip() {
    let ds = toy_dataset(16, 3, Variant::Blobs, 2, &small_spec(6));
    let dir = tempfile::tempdir().unwrap();
    let manifest = ds.save(dir.path(), false).unwrap();
    let back = Dataset::load(&manifest).unwrap();
    assert_eq!(back, ds);
    assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    assert!(ds.save(dir.path(), false).is_err());
    for s in &ds.samples {
        // stored k-space vanishes off the parent mask
        let off = ssrecon::kspace::apply_pattern(&s.kspace, &s.mask().complement()).unwrap();
        assert_eq!(off.max_abs(), 0.0);
        assert!(s.subsets.sub1.is_subset_of(s.mask()));
    }
}

#[test]
fn zero_filling_loses_to_full_sampling() {
    let img = phantom(32, Variant::Shepp, 0).unwrap();
    let full = Mask::full(32, 32);
    let under = ssrecon::make_undersampling_mask(32, 32, 4.0, 4, 1).unwrap();
    let zf = |m: &Mask| apply_at(&simulate_acquisition(&img, m).unwrap(), m).unwrap().magnitude().unwrap();
    let p_full = psnr(&img, &zf(&full), 1.0).unwrap();
    let p_under = psnr(&img, &zf(&under), 1.0).unwrap();
    // full sampling is exact up to rounding
    assert!(p_full > 150.0, "{p_full}");
    assert!(p_under < p_full);
    assert!(p_under > 10.0 && p_under < 40.0, "{p_under}");
}
