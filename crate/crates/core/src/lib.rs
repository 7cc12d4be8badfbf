//! Empirical differential balanced truncation of nonlinear systems
//! `x' = f(x) + B u`, `y = h(x)` along a fixed trajectory.
//!
//! The pipeline: simulate a base trajectory ([`sim`]), compute differential
//! reachability and observability Gramians along it ([`gramian`]), balance
//! or eigen-truncate ([`balancing`]), and compare the reduced model with the
//! full one. [`symmetry`] certifies variational symmetry so a single Gramian
//! suffices.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`.

// `!(a > b)` is used on purpose so NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balancing;
pub mod error;
pub mod gramian;
pub mod io;
pub mod linalg;
pub mod models;
pub mod scalar;
pub mod sim;
pub mod symmetry;
pub mod system;

pub use balancing::{
    balance, balance_matrices, compare_output_series, compare_outputs, eigen_truncate_basis,
    truncate, BalancingResiduals, BalancingResult, EigenBasis, ErrorReport, Projection,
    ReducedModel,
};
pub use error::{Error, Result};
pub use gramian::{
    common_nullspace_probe, frechet_impulse_response, frechet_initial_state_response,
    gramian_pair, lti_gramian_oracle, observability_gramian, pd_probe, reachability_gramian,
    FrechetProbe, Gramian, GramianKind, GramianMethod, GramianOptions, GramianPair,
    ImpulseRealization, PdReport, Quadrature,
};
pub use models::{ModelSpec, QuarticPotential};
pub use scalar::Real;
pub use sim::{
    fundamental_matrix, integrate, integrate_variational, FundamentalMatrix, InputSignal, Scheme,
    TimeGrid, Trajectory, VariationalTrajectory,
};
pub use symmetry::{
    check_variational_symmetry, default_samples, dual_reachability_gramian,
    dual_variational_response, DualGramianReport, SymmetryCertificate,
};
pub use system::{JacobianMode, SystemModel};

pub type SystemModel64 = SystemModel<f64>;
pub type TimeGrid64 = TimeGrid<f64>;
pub type InputSignal64 = InputSignal<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type VariationalTrajectory64 = VariationalTrajectory<f64>;
pub type Gramian64 = Gramian<f64>;
pub type GramianOptions64 = GramianOptions<f64>;
pub type BalancingResult64 = BalancingResult<f64>;
pub type ReducedModel64 = ReducedModel<f64>;
pub type SymmetryCertificate64 = SymmetryCertificate<f64>;
