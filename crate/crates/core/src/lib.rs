//! Conformal immersions of the sphere with prescribed mean curvature: a
//! spectral representation on Gauss–Legendre grids, curvature identities,
//! normalized affine classes, explicit minimal-surface families and a
//! gauge-fixed continuation solver.

pub mod affine;
pub mod branch;
pub mod charts;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod harmonics;
pub mod io;
pub mod solver;
pub mod weierstrass;

pub use affine::{canonical_representative, class_membership, AffineFunction};
pub use branch::{detect_branch_points, BranchPoint, BranchReport, SingularPoint};
pub use charts::{Chart, ChartPoint};
pub use error::{PmcError, Result};
pub use geometry::{
    codazzi_residual, conformality_residual, fundamental_forms, gauss_identity_residual,
    mc_residual, obstruction_vector, verify, FundamentalForms, ImmersionField, VerificationReport,
    MC_CONSTANT,
};
pub use grid::SphericalGrid;
pub use harmonics::{evaluate_at, Derivative, HarmonicField, SphericalTransform};
pub use io::{FieldSpec, Mesh, RunManifest};
pub use solver::{
    affine_insolvability_check, conformalize, gauge_projected_step, normal_variation_operator,
    residual, solve_pmc, ContinuationState, GaugeBasis, SolveReport, SolveStatus, SolverConfig,
};
pub use weierstrass::{DiskGrid, Family, FamilyKind, PlanarImmersion};
