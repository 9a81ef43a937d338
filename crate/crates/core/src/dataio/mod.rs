//! File formats, synthetic data and image-quality metrics.

pub mod dataset;
pub mod metrics;
pub mod phantom;
pub mod rten;

pub use dataset::{simulate_acquisition, AcquisitionSpec, Dataset, DatasetManifest, Sample};
pub use metrics::{psnr, ssim};
pub use phantom::{phantom, Variant};
