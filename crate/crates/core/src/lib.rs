//! Koopman spectral comparison toolkit.
//!
//! Trajectory ensembles are delay-embedded, decomposed with residual-refined
//! DMD, and compared through the 2-Wasserstein distance between eigenvalue
//! sets. The [`optimizers`] module generates the iterative-algorithm
//! trajectories the comparisons are usually run on.

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod compare;
pub mod error;
pub mod io;
pub mod optimizers;
pub mod rng;
pub mod spectral;
pub mod synthetic;
pub mod trajectory;

pub use compare::{
    ks_two_sample, semi_conjugacy, shuffle_control, wasserstein, window_distance_matrix,
    EigenvalueSet, SpectrumComparison,
};
pub use error::{Error, ErrorClass, Result};
pub use spectral::{dmd_rrr, Complex64, DecompositionConfig, SpectralDecomposition};
pub use trajectory::{delay_embed, pca_reduce, window, TrajectoryEnsemble, WindowSpec};
