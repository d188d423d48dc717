//! The JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use pconvex::solver::{DEFAULT_BASIC_C, DEFAULT_PROP_C, DEFAULT_TOL};
use pconvex::{Expr, GridDomain, ScalarField, SolveOptions, WeightOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cells {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative residual for `solve`.
    #[serde(default = "default_solve_tol")]
    pub solve: f64,
    #[serde(default)]
    pub max_iter: Option<usize>,
    /// Absolute eigenvalue tolerance for positivity; the scale-aware default
    /// is used when absent.
    #[serde(default)]
    pub positivity: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            solve: DEFAULT_TOL,
            max_iter: None,
            positivity: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_c_basic")]
    pub c_basic: f64,
    #[serde(default = "default_c_prop")]
    pub c_prop: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            trials: default_trials(),
            c_basic: DEFAULT_BASIC_C,
            c_prop: DEFAULT_PROP_C,
        }
    }
}

fn default_solve_tol() -> f64 {
    DEFAULT_TOL
}
fn default_trials() -> usize {
    100
}
fn default_c_basic() -> f64 {
    DEFAULT_BASIC_C
}
fn default_c_prop() -> f64 {
    DEFAULT_PROP_C
}
fn default_psi() -> String {
    "0".into()
}
fn default_safety() -> f64 {
    2.0
}
fn default_gamma() -> f64 {
    1.0
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "box")]
    pub bounds: BoxSpec,
    pub cells: Cells,
    /// Nodes where this expression is positive form the domain; the whole
    /// box when absent.
    #[serde(default)]
    pub mask: Option<String>,
    pub rho: String,
    #[serde(default = "default_psi")]
    pub psi: String,
    /// Weight for the pointwise estimate check; defaults to `rho`.
    #[serde(default)]
    pub phi: Option<String>,
    pub p: usize,
    /// Form degree for weights, solve and estimates; defaults to `p`.
    #[serde(default)]
    pub degree: Option<usize>,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default = "default_gamma")]
    pub gamma_constant: f64,
    /// Allow `safety < 1` for negative controls.
    #[serde(default)]
    pub force: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub estimates: EstimateConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn dim(&self) -> usize {
        self.bounds.lower.len()
    }

    pub fn degree(&self) -> usize {
        self.degree.unwrap_or(self.p)
    }

    fn validate(&self) -> Result<(), Failure> {
        let n = self.dim();
        if self.bounds.upper.len() != n {
            return Err(Failure::Config("box lower and upper differ in length".into()));
        }
        if let Cells::PerAxis(c) = &self.cells {
            if c.len() != n {
                return Err(Failure::Config(format!("cells has {} entries for dimension {n}", c.len())));
            }
        }
        if self.p == 0 || self.p > n {
            return Err(Failure::Config(format!("p must lie in 1..={n}")));
        }
        if self.degree() == 0 || self.degree() > n {
            return Err(Failure::Config(format!("degree must lie in 1..={n}")));
        }
        let phi = self.phi.as_ref().unwrap_or(&self.rho);
        for (what, text) in [("rho", &self.rho), ("psi", &self.psi), ("phi", phi)] {
            pconvex::fields::parse(text, n).map_err(|e| Failure::Config(format!("{what}: {e}")))?;
        }
        if let Some(m) = &self.mask {
            pconvex::fields::parse(m, n).map_err(|e| Failure::Config(format!("mask: {e}")))?;
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form, with
    /// the output directory left out.
    pub fn hash(&self) -> String {
        let mut content = self.clone();
        content.output = PathBuf::new();
        let json = serde_json::to_string(&content).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn grid(&self) -> Result<Arc<GridDomain>, Failure> {
        let n = self.dim();
        let cells = match &self.cells {
            Cells::Uniform(c) => vec![*c; n],
            Cells::PerAxis(c) => c.clone(),
        };
        let grid = GridDomain::new(self.bounds.lower.clone(), self.bounds.upper.clone(), cells)
            .map_err(|e| Failure::Config(e.to_string()))?;
        let grid = match &self.mask {
            Some(m) => {
                let expr: Expr = pconvex::fields::parse(m, n).map_err(|e| Failure::Config(format!("mask: {e}")))?;
                grid.with_mask_expr(&expr).map_err(|e| Failure::Config(e.to_string()))?
            }
            None => grid,
        };
        Ok(Arc::new(grid))
    }

    pub fn rho(&self) -> Result<ScalarField, Failure> {
        ScalarField::parse(&self.rho, self.dim()).map_err(|e| Failure::Config(format!("rho: {e}")))
    }

    pub fn psi(&self) -> Result<ScalarField, Failure> {
        ScalarField::parse(&self.psi, self.dim()).map_err(|e| Failure::Config(format!("psi: {e}")))
    }

    pub fn weight_options(&self) -> WeightOptions {
        WeightOptions {
            degree: self.degree(),
            safety: self.safety,
            gamma_constant: self.gamma_constant,
            force: self.force,
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tolerances.solve,
            max_iter: self.tolerances.max_iter,
        }
    }
}
