//! Optimization targets: the 2-D mixed Gaussian and the image datasets.

pub mod data;
pub mod gaussian;

pub use data::{
    dataset_available, load_cifar10, load_dataset, load_idx, subsample, Dataset, DatasetId, Split,
    CLASS_COUNT,
};
pub use gaussian::{GaussianComponent, MixedGaussian};
