//! Generalized Radon transforms on rectangular grids.
//!
//! A family of distributions `y ↦ σ(y)` over a grid domain defines the
//! transform `R f(y) = ⟨σ(y), f⟩`. This crate builds such families (point
//! evaluations, lines, circles), evaluates and samples the transform, and
//! checks numerically that the second fundamental form of the family,
//! paired with test functions whose transform has vanishing differential,
//! equals the Hessian of the transform.
//!
//! Distributions are weight vectors over grid nodes with quadrature baked
//! in, so every pairing is a plain dot product.

pub mod curvature;
pub mod domain;
pub mod embeddings;
mod error;
pub mod fd;
pub mod io;
pub mod parallel;
pub mod precise;
mod spline;
pub mod transform;

pub use curvature::{
    annihilator_basis, differential_of_transform, flat_covariant_derivative,
    hessian_of_transform, sff_pairing, verify_curvature_theorem, AnnihilatorBasis,
    CurvatureReport, HessianMatrix, HessianMode, VerifyOptions,
};
pub use domain::{
    eval_functional, make_grid, make_test_function, pair, DistributionVector, GridDomain,
    Interval, KernelOrder, TestFunction,
};
pub use embeddings::{
    circle_embedding, dirac_embedding, fd_second, fd_tangent, line_embedding, Chart, Embedding,
    EmbeddingDescriptor, TangentFrame,
};
pub use error::{Error, Result};
pub use transform::{
    kernel_diagnostics, operator_matrix, radon_forward, separates_points_check, KernelReport,
    OperatorMatrix, SampledTransform, SeparationReport,
};
