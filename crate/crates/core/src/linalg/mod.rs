//! Dense Hermitian linear algebra: eigendecomposition, projector frames and
//! subspace metrics.

mod frame;
mod operator;
mod subspace;

pub use frame::{householder_qr, Frame};
pub use operator::{eigh, singular_values, spectral_norm, HermitianOperator, Spectrum};
#[allow(unused_imports)]
pub(crate) use operator::{check_same_dim, max_abs, symmetrize};
pub use subspace::{
    density_matrix, density_matrix_from_spectrum, frobenius_distance, principal_sines, sub_frame,
    subspace_distance, DensityMatrix, GapPolicy,
};
