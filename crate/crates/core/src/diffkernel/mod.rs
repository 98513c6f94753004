//! Dense matrices, small feed-forward networks with hand-written backward
//! passes, plain SGD and a central-difference gradient oracle.

pub mod grad;
pub mod layer;
pub mod matrix;

pub use grad::{finite_diff_grad, relative_error, sgd_step};
pub use layer::{sigmoid, softplus, Activation, DenseLayer, LayerGrads, Mlp, MlpGrads, Tape};
pub use matrix::{dot, pairwise_sq_dists_cols, Matrix};
