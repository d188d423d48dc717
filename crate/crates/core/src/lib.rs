//! Numerical toolkit for p-convexity on gridded domains in `R^n`.
//!
//! The pipeline: certify that an exhaustion function is strictly
//! p-plurisubharmonic ([`positivity`]), build weights `φ = χ∘ρ` from it
//! ([`weights`]), assemble the weighted de Rham complex with exact discrete
//! adjoints ([`complex`]), solve `dα = η` by normal-equations CG and measure
//! the a-priori estimates ([`solver`]), and compute Betti numbers of the
//! masked grid complex ([`cohomology`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohomology;
pub mod complex;
pub mod error;
pub mod fields;
pub mod multilinear;
pub mod positivity;
pub mod solver;
pub mod weights;

pub use cohomology::{betti, verify_vanishing, BettiReport, VanishingVerdict};
pub use complex::{Complex, DiscreteForm, FormSpace, SparseMatrix};
pub use error::{Diagnosis, Error, Result};
pub use fields::{Expr, GridDomain, ScalarField};
pub use multilinear::{
    extend_endomorphism, lambda1_k, multi_indices, sign, ExtendedEndomorphism, MultiIndex,
    SymMatrix,
};
pub use positivity::{is_p_positive, is_strictly_p_psh, psh_on_grid, BranchVerdict, PshReport};
pub use solver::{solve, SolveOptions, SolveReport};
pub use weights::{build_weight_chain, WeightChain, WeightOptions};
