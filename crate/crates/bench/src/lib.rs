//! Deterministic inputs shared by the benchmarks.

use ssrecon::dataio::dataset::{generate_phantoms, AcquisitionSpec};
use ssrecon::{Dataset, Tensor, Variant};

/// Smooth pseudo-random values in `[-1, 1]` without an RNG dependency.
pub fn signal(shape: &[usize], phase: f64) -> Tensor {
    Tensor::from_fn(shape, |i| ((i as f64) * 0.618_033_988_75 + phase).sin())
}

/// One-sample dataset of an `n×n` Shepp–Logan phantom at 4× with a
/// selection band of `n/16` rows.
pub fn sample_dataset(n: usize) -> Dataset {
    let imgs = generate_phantoms(n, Variant::Shepp, 1, 0).expect("phantom");
    let spec = AcquisitionSpec {
        accel: 4.0,
        acs_lines: n / 8,
        sel_acs: n / 16,
        mask_seed: 1,
        subset_seed: 2,
    };
    Dataset::prepare(&imgs, &spec).expect("dataset")
}
