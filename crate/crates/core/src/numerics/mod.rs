//! Dense linear algebra and probability helpers shared by every module.

mod gemm;
mod linalg;
mod prob;
mod rng;
mod tensor;

pub use gemm::{matmul_nn, matmul_nt, matmul_tn};
pub(crate) use gemm::dgemm_strided;
pub use linalg::{singular_values, spd_inverse_diag, symmetric_eigenvalues, SpdMatrix};
pub use prob::{argmax_lowest, shannon_entropy, sigmoid, softmax, softplus};
pub use rng::{derive_seed, mix64, rng_for, standard_normal, truncated_normal};
pub use tensor::Tensor;
