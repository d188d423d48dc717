//! Branch-wise p-positivity of symmetric matrices and strict
//! p-plurisubharmonicity verdicts for Hessian fields.
//!
//! A matrix `A` lies in the k-th branch cone `P_p^(k)` when `D^[p]_A` has at
//! least `C(n,p) - k + 1` non-negative eigenvalues. With ascending eigenvalues
//! `μ_1 ≤ … ≤ μ_N` of `D^[p]_A` that is `μ_k ≥ 0`; interior membership
//! (strictness) is `μ_k > 0`. Both comparisons use a tolerance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::fields::{GridDomain, ScalarField};
use crate::multilinear::{binomial, extend_endomorphism, SymMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchVerdict {
    pub p: usize,
    pub branch: usize,
    pub nonneg_count: usize,
    /// `C(n,p) - branch + 1`.
    pub threshold: usize,
    pub member: bool,
    pub strict: bool,
    /// The eigenvalue of `D^[p]` at ascending position `branch`.
    pub margin: f64,
}

/// Scale-aware roundoff floor `1e-9 · (1 + ‖A‖)`.
pub fn default_tolerance(a: &SymMatrix) -> f64 {
    1e-9 * (1.0 + a.norm_bound())
}

/// Number of eigenvalues `≥ -tol`.
pub fn count_nonneg(a: &SymMatrix, tol: f64) -> usize {
    a.eigenvalues().iter().filter(|&&v| v >= -tol).count()
}

pub fn is_p_positive(a: &SymMatrix, p: usize, branch: usize, tol: Option<f64>) -> Result<BranchVerdict> {
    let n = a.dim();
    if p == 0 || p > n {
        return contract(format!("p must be in 1..={n}, got {p}"));
    }
    let total = binomial(n, p);
    if branch == 0 || branch > total {
        return contract(format!("branch must be in 1..={total}, got {branch}"));
    }
    let tol = tol.unwrap_or_else(|| default_tolerance(a));
    let eigs = extend_endomorphism(a, p)?.eigenvalues();
    let nonneg_count = eigs.iter().filter(|&&v| v >= -tol).count();
    let threshold = total - branch + 1;
    let margin = eigs[branch - 1];
    Ok(BranchVerdict {
        p,
        branch,
        nonneg_count,
        threshold,
        member: nonneg_count >= threshold,
        strict: margin > tol,
        margin,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointVerdict {
    pub point: Vec<f64>,
    /// Grid node, when the point came from a grid.
    pub node: Option<usize>,
    pub verdict: BranchVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PshReport {
    pub p: usize,
    pub points: Vec<PointVerdict>,
    /// Minimum of `λ_1^[p]` over the evaluated points.
    pub min_margin: f64,
    /// Index into `points` attaining `min_margin`.
    pub argmin: usize,
    pub all_member: bool,
    pub all_strict: bool,
    /// Grid nodes skipped because their derivative stencil was one-sided.
    pub excluded_nodes: Vec<usize>,
}

impl PshReport {
    fn assemble(p: usize, points: Vec<PointVerdict>, excluded_nodes: Vec<usize>) -> Result<Self> {
        if points.is_empty() {
            return contract("no points to evaluate");
        }
        let mut argmin = 0;
        for (i, pv) in points.iter().enumerate() {
            if pv.verdict.margin < points[argmin].verdict.margin {
                argmin = i;
            }
        }
        Ok(PshReport {
            p,
            min_margin: points[argmin].verdict.margin,
            argmin,
            all_member: points.iter().all(|v| v.verdict.member),
            all_strict: points.iter().all(|v| v.verdict.strict),
            points,
            excluded_nodes,
        })
    }

    /// First point that fails strictness, if any.
    pub fn witness(&self) -> Option<&PointVerdict> {
        if self.all_strict {
            None
        } else {
            Some(&self.points[self.argmin])
        }
    }
}

/// Branch-1 verdicts for a Hessian source evaluated at each point.
pub fn is_strictly_p_psh<F>(hess: F, points: &[Vec<f64>], p: usize, tol: Option<f64>) -> Result<PshReport>
where
    F: Fn(&[f64]) -> Result<SymMatrix> + Sync,
{
    let verdicts: Result<Vec<PointVerdict>> = points
        .par_iter()
        .map(|x| {
            let a = hess(x)?;
            Ok(PointVerdict {
                point: x.clone(),
                node: None,
                verdict: is_p_positive(&a, p, 1, tol)?,
            })
        })
        .collect();
    PshReport::assemble(p, verdicts?, Vec::new())
}

/// Branch-1 verdicts for `Hess f` at every masked node of `grid`. Nodes with
/// one-sided stencils (sampled fields only) are excluded and listed.
pub fn psh_on_grid(f: &ScalarField, grid: &GridDomain, p: usize, tol: Option<f64>) -> Result<PshReport> {
    let nodes: Vec<usize> = grid.masked_nodes().collect();
    let evaluated: Result<Vec<Option<PointVerdict>>> = nodes
        .par_iter()
        .map(|&node| {
            let h = f.hessian_at_node(grid, node)?;
            if h.flagged {
                return Ok(None);
            }
            Ok(Some(PointVerdict {
                point: grid.coords(node),
                node: Some(node),
                verdict: is_p_positive(&h.value, p, 1, tol)?,
            }))
        })
        .collect();
    let evaluated = evaluated?;
    let excluded = nodes
        .iter()
        .zip(&evaluated)
        .filter(|(_, v)| v.is_none())
        .map(|(&n, _)| n)
        .collect();
    PshReport::assemble(p, evaluated.into_iter().flatten().collect(), excluded)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_examples() {
        assert_eq!(count_nonneg(&SymMatrix::from_diagonal(&[1.0, -1.0, 0.0]), 0.0), 2);
        assert_eq!(count_nonneg(&SymMatrix::from_diagonal(&[-1e-14, 1.0]), 1e-12), 2);
    }

    #[test]
    fn identity_is_strict_for_every_p() {
        for n in 1..=5 {
            for p in 1..=n {
                let v = is_p_positive(&SymMatrix::identity(n), p, 1, None).unwrap();
                assert!(v.member && v.strict);
                assert_eq!(v.margin, p as f64);
            }
        }
    }

    #[test]
    fn eigen_sum_examples() {
        let v = is_p_positive(&SymMatrix::from_diagonal(&[-1.0, 3.0]), 2, 1, None).unwrap();
        assert!(v.member && v.strict);
        assert_eq!(v.margin, 2.0);
        let v = is_p_positive(&SymMatrix::from_diagonal(&[-3.0, 1.0, 1.0]), 2, 1, None).unwrap();
        assert!(!v.member);
        assert_eq!(v.nonneg_count, 1);
        assert_eq!(v.threshold, 3);
        // branch 3 only needs one non-negative pair sum
        let v = is_p_positive(&SymMatrix::from_diagonal(&[-3.0, 1.0, 1.0]), 2, 3, None).unwrap();
        assert!(v.member && v.strict);
    }

    #[test]
    fn range_checks() {
        let a = SymMatrix::identity(3);
        assert!(is_p_positive(&a, 0, 1, None).is_err());
        assert!(is_p_positive(&a, 4, 1, None).is_err());
        assert!(is_p_positive(&a, 2, 0, None).is_err());
        assert!(is_p_positive(&a, 2, 4, None).is_err());
        assert!(is_p_positive(&a, 2, 3, None).is_ok());
    }

    #[test]
    fn psh_examples() {
        let f = ScalarField::parse("abs2", 3).unwrap();
        let pts: Vec<Vec<f64>> = vec![vec![0.0; 3], vec![1.0, -2.0, 0.5], vec![3.0, 3.0, 3.0]];
        let r = is_strictly_p_psh(|x| f.hessian(x), &pts, 1, None).unwrap();
        assert!(r.all_strict);
        assert_eq!(r.min_margin, 2.0);
        assert!(r.witness().is_none());

        let saddle = ScalarField::parse("x1^2 - x2^2", 2).unwrap();
        let r = is_strictly_p_psh(|x| saddle.hessian(x), &[vec![0.3, 0.1]], 2, None).unwrap();
        assert!(r.all_member);
        assert!(!r.all_strict);
        assert_eq!(r.min_margin, 0.0);
    }

    #[test]
    fn evaluation_failures_propagate() {
        let f = ScalarField::parse("-log(1 - abs2)", 2).unwrap();
        let err = is_strictly_p_psh(|x| f.hessian(x), &[vec![0.0, 0.0], vec![1.0, 0.0]], 1, None)
            .unwrap_err();
        match err {
            crate::Error::Eval(e) => assert_eq!(e.point, vec![1.0, 0.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_barrier_on_ball_grid_is_strict() {
        // analytic eigenvalues of Hess(-log(1-r^2)): 2/(1-r^2) (tangential),
        // 2(1+r^2)/(1-r^2)^2 (radial); both positive inside the ball
        let grid = GridDomain::centered(2, 1.0, 16)
            .unwrap()
            .with_mask(|x| x[0] * x[0] + x[1] * x[1] < 1.0)
            .unwrap();
        let f = ScalarField::parse("-log(1 - abs2)", 2).unwrap();
        let r = psh_on_grid(&f, &grid, 1, None).unwrap();
        assert!(r.all_strict);
        for pv in &r.points {
            let r2: f64 = pv.point.iter().map(|x| x * x).sum();
            let expected = 2.0 / (1.0 - r2);
            assert!((pv.verdict.margin - expected).abs() < 1e-9 * expected);
        }
        assert!((r.min_margin - 2.0).abs() < 1e-12);
    }
}
