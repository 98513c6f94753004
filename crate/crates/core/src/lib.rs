//! Long-tail cross-modal hashing on feature vectors.

pub mod affinity;
pub mod datagen;
pub mod dataset;
pub mod diffkernel;
pub mod error;
pub mod hashlearn;
pub mod hsic;
pub mod icae;
pub mod meta;
pub mod pipeline;
pub mod retrieval;
pub mod store;
pub mod verify;

pub use dataset::{Dataset, LabelMatrix, Modality};
pub use diffkernel::{Activation, Matrix, Mlp};
pub use error::{Error, Result};
