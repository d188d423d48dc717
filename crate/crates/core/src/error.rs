use thiserror::Error;

use crate::fields::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated a documented precondition (dimensions, degrees, ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("derivative stencil at node {node} leaves the mask")]
    Stencil { node: usize },

    #[error("point {point:?} is not a node of the grid")]
    OffGrid { point: Vec<f64> },

    #[error("sublevel set {{rho <= {m}}} contains no grid node")]
    EmptySublevel { m: f64 },

    #[error(
        "domain not strictly p-convex at degree {degree}: lambda_1^[{degree}] = {value:e} at node {node}"
    )]
    NotStrictlyConvex {
        degree: usize,
        node: usize,
        value: f64,
    },

    #[error("weight range {range:e} cannot be represented without underflow of exp(-phi)")]
    WeightOverflow { range: f64 },

    #[error("input form is not closed: |d eta| = {d_norm:e}, |eta| = {norm:e}")]
    NotClosed { d_norm: f64, norm: f64 },

    #[error(
        "conjugate gradient did not converge after {iterations} iterations \
         (relative residual {residual:e}, diagnosis: {diagnosis})"
    )]
    NoConvergence {
        iterations: usize,
        residual: f64,
        /// Rayleigh quotient of the final residual relative to the operator scale.
        rayleigh: f64,
        diagnosis: Diagnosis,
    },

    #[error("rank computation needs {entries} dense entries (cap {cap}) and the sparse path is disabled")]
    RankCapExceeded { entries: usize, cap: usize },

    #[error("ranks in degree {degree} exceed the cochain dimension")]
    RankNullity { degree: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Why a normal-equations solve stalled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnosis {
    /// The stalled residual is (numerically) annihilated by d d*, so the input
    /// carries a nontrivial cohomology class.
    Cohomology,
    IllConditioned,
}

impl std::fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diagnosis::Cohomology => f.write_str("nonvanishing cohomology class"),
            Diagnosis::IllConditioned => f.write_str("ill-conditioned system"),
        }
    }
}

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
