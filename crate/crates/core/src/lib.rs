//! Self-supervised training of unrolled ISTA reconstructors for undersampled
//! MRI using two parallel branches fed with disjointly drawn k-space subsets.
//!
//! Module map:
//! - [`autodiff`]: reverse-mode differentiation over dense tensors
//! - [`kspace`]: centered FFTs, sampling masks, encoding operators
//! - [`model`]: the unrolled reconstructor and its checkpoints
//! - [`objective`]: reconstruction, difference and symmetry losses
//! - [`trainer`]: Adam, learning-rate schedule, parallel training loop
//! - [`dataio`]: RTEN files, phantoms, datasets, PSNR/SSIM

pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod kspace;
pub mod model;
pub mod objective;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Graph, NodeId};
pub use dataio::{psnr, ssim, Dataset, DatasetManifest, Sample, Variant};
pub use error::{Error, Result};
pub use kspace::{make_selection_subsets, make_undersampling_mask, Mask, MaskInfo, SubsetPair};
pub use model::checkpoint::Checkpoint;
pub use model::ModelParams;
pub use objective::{LossMode, LossValues, LossWeights, SsduLossMask};
pub use tensor::Tensor;
pub use trainer::{EpochRecord, TrainConfig};
