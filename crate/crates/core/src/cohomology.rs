//! Betti numbers of the masked cubical complex and the vanishing check
//! `b_k = 0` for `k >= p` on certified strictly p-convex grids.
//!
//! Ranks are taken on the unscaled `±1` coboundaries. Small matrices go
//! through a dense SVD with the threshold `1e-9 · σ_max`; larger ones through
//! exact sparse elimination modulo the prime `2^31 - 1`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::complex::Complex;
use crate::error::{contract, Error, Result};
use crate::fields::{GridDomain, ScalarField};
use crate::positivity::{psh_on_grid, PointVerdict};

/// Dense SVD is used while `rows · cols` stays at or below this.
pub const DEFAULT_DENSE_CAP: usize = 200_000;
pub const SVD_RELATIVE_TOL: f64 = 1e-9;
const PRIME: u64 = 2_147_483_647;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMethod {
    DenseSvd,
    SparseModular,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOptions {
    pub dense_cap: usize,
    /// Without it, matrices above `dense_cap` are an error.
    pub allow_sparse: bool,
    pub svd_tol: f64,
}

impl Default for RankOptions {
    fn default() -> Self {
        RankOptions {
            dense_cap: DEFAULT_DENSE_CAP,
            allow_sparse: true,
            svd_tol: SVD_RELATIVE_TOL,
        }
    }
}

/// Rank of `d_k : C^k -> C^{k+1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub degree: usize,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub method: RankMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeBetti {
    pub degree: usize,
    pub dim: usize,
    /// Rank of `d_k` (zero in top degree).
    pub rank_d: usize,
    pub nullity: usize,
    /// Rank of `d_{k-1}` (zero in degree 0).
    pub rank_prev: usize,
    pub betti: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BettiReport {
    pub grid_hash: String,
    pub dim: usize,
    pub degrees: Vec<DegreeBetti>,
    pub ranks: Vec<RankRecord>,
    /// `Σ (-1)^k dim C^k` and `Σ (-1)^k b_k`, when every degree was computed.
    pub euler: Option<(i64, i64)>,
    /// Connected components of the mask, for comparison with `b_0`.
    pub mask_components: usize,
}

impl BettiReport {
    pub fn betti(&self, k: usize) -> Option<usize> {
        self.degrees.iter().find(|d| d.degree == k).map(|d| d.betti)
    }

    pub fn betti_numbers(&self) -> Vec<usize> {
        self.degrees.iter().map(|d| d.betti).collect()
    }

    pub fn euler_consistent(&self) -> Option<bool> {
        self.euler.map(|(a, b)| a == b)
    }
}

pub fn betti(grid: &Arc<GridDomain>, degrees: &[usize]) -> Result<BettiReport> {
    betti_with(&Complex::new(grid.clone())?, degrees, &RankOptions::default())
}

pub fn betti_with(complex: &Complex, degrees: &[usize], options: &RankOptions) -> Result<BettiReport> {
    let grid = complex.grid();
    let n = grid.dim();
    let mut degrees = degrees.to_vec();
    degrees.sort_unstable();
    degrees.dedup();
    if let Some(&k) = degrees.iter().find(|&&k| k > n) {
        return contract(format!("degree {k} exceeds dimension {n}"));
    }
    let components = grid.components();
    if components > 1 {
        log::warn!("mask has {components} connected components; b_0 will report them");
    }

    let mut needed: Vec<usize> = degrees
        .iter()
        .flat_map(|&k| [k.checked_sub(1), (k < n).then_some(k)])
        .flatten()
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let ranks: Vec<RankRecord> = needed
        .iter()
        .map(|&k| rank_of_coboundary(complex, k, options))
        .collect::<Result<_>>()?;
    let rank = |k: usize| ranks.iter().find(|r| r.degree == k).map_or(0, |r| r.rank);

    let mut out = Vec::with_capacity(degrees.len());
    for &k in &degrees {
        let dim = complex.space(k).dim();
        let rank_d = if k < n { rank(k) } else { 0 };
        let rank_prev = if k > 0 { rank(k - 1) } else { 0 };
        let betti = dim
            .checked_sub(rank_d + rank_prev)
            .ok_or(Error::RankNullity { degree: k })?;
        out.push(DegreeBetti {
            degree: k,
            dim,
            rank_d,
            nullity: dim - rank_d,
            rank_prev,
            betti,
        });
    }
    let euler = (out.len() == n + 1).then(|| {
        let alt = |f: &dyn Fn(&DegreeBetti) -> usize| -> i64 {
            out.iter()
                .map(|d| if d.degree % 2 == 0 { f(d) as i64 } else { -(f(d) as i64) })
                .sum()
        };
        (alt(&|d| d.dim), alt(&|d| d.betti))
    });
    Ok(BettiReport {
        grid_hash: grid.hash(),
        dim: n,
        degrees: out,
        ranks,
        euler,
        mask_components: components,
    })
}

fn rank_of_coboundary(complex: &Complex, k: usize, options: &RankOptions) -> Result<RankRecord> {
    let entries = complex.coboundary(k)?;
    let rows = complex.space(k + 1).dim();
    let cols = complex.space(k).dim();
    let size = rows.saturating_mul(cols);
    let (rank, method) = if size <= options.dense_cap {
        (dense_rank(rows, cols, &entries, options.svd_tol), RankMethod::DenseSvd)
    } else if options.allow_sparse {
        (modular_rank(rows, cols, &entries), RankMethod::SparseModular)
    } else {
        return Err(Error::RankCapExceeded {
            entries: size,
            cap: options.dense_cap,
        });
    };
    Ok(RankRecord {
        degree: k,
        rows,
        cols,
        rank,
        method,
    })
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn dense_rank(rows: usize, cols: usize, entries: &[(usize, usize, i8)], rel_tol: f64) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    let mut m = DMatrix::<f64>::zeros(rows, cols);
    for &(r, c, s) in entries {
        m[(r, c)] += s as f64;
    }
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Rank over `Z / (2^31 - 1)` by row reduction with sparse rows. For the
/// cubical coboundaries this equals the rational rank.
pub fn modular_rank(rows: usize, cols: usize, entries: &[(usize, usize, i8)]) -> usize {
    let mut by_row: Vec<Vec<(usize, u64)>> = vec![Vec::new(); rows];
    for &(r, c, s) in entries {
        by_row[r].push((c, (s as i64).rem_euclid(PRIME as i64) as u64));
    }
    let mut pivots: Vec<Option<Vec<(usize, u64)>>> = vec![None; cols];
    let mut rank = 0;
    for mut row in by_row {
        row.sort_unstable_by_key(|e| e.0);
        row = merge(&row, &[], 0);
        while let Some(&(lead, v)) = row.first() {
            match &pivots[lead] {
                Some(p) => row = merge(&row, p, PRIME - v),
                None => {
                    let inv = pow_mod(v, PRIME - 2);
                    row.iter_mut().for_each(|e| e.1 = e.1 * inv % PRIME);
                    pivots[lead] = Some(row);
                    rank += 1;
                    break;
                }
            }
        }
    }
    rank
}

/// `a + f·b` on sorted sparse rows, dropping zeros and merging duplicates.
fn merge(a: &[(usize, u64)], b: &[(usize, u64)], f: u64) -> Vec<(usize, u64)> {
    let mut out: Vec<(usize, u64)> = Vec::with_capacity(a.len() + b.len());
    let mut push = |c: usize, v: u64| match out.last_mut() {
        Some(last) if last.0 == c => last.1 = (last.1 + v) % PRIME,
        _ => out.push((c, v)),
    };
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i].0 <= b[j].0) {
            push(a[i].0, a[i].1);
            i += 1;
        } else {
            push(b[j].0, b[j].1 * f % PRIME);
            j += 1;
        }
    }
    out.retain(|e| e.1 != 0);
    out
}

fn pow_mod(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1;
    base %= PRIME;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % PRIME;
        }
        base = base * base % PRIME;
        exp >>= 1;
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanishingVerdict {
    pub p: usize,
    pub certified_convexity: bool,
    /// Set only when certified: the theorem then predicts `b_k = 0` for `k >= p`.
    pub vanishing_claimed: bool,
    pub betti: BettiReport,
    /// Degrees `k >= p` with `b_k > 0`. Only meaningful when certified.
    pub violations: Vec<usize>,
    pub theorem_consistent: bool,
    pub min_margin: f64,
    pub witness: Option<PointVerdict>,
    pub excluded_nodes: usize,
}

/// Certifies strict p-plurisubharmonicity of `rho` on the masked nodes and,
/// when it holds, checks that every Betti number from degree `p` up vanishes.
/// An uncertified domain is a verdict with nothing claimed.
pub fn verify_vanishing(grid: &Arc<GridDomain>, rho: &ScalarField, p: usize) -> Result<VanishingVerdict> {
    let n = grid.dim();
    if p == 0 || p > n {
        return contract(format!("p must lie in 1..={n}, got {p}"));
    }
    let psh = psh_on_grid(rho, grid, p, None)?;
    let certified = psh.all_strict;
    let betti = betti(grid, &(0..=n).collect::<Vec<_>>())?;
    let violations: Vec<usize> = betti
        .degrees
        .iter()
        .filter(|d| d.degree >= p && d.betti > 0)
        .map(|d| d.degree)
        .collect();
    Ok(VanishingVerdict {
        p,
        certified_convexity: certified,
        vanishing_claimed: certified,
        theorem_consistent: !certified || violations.is_empty(),
        violations,
        min_margin: psh.min_margin,
        witness: psh.witness().cloned(),
        excluded_nodes: psh.excluded_nodes.len(),
        betti,
    })
}

/// Reference domains with exhaustion functions and the degree at which they
/// are strictly convex.
pub mod models {
    use super::*;

    #[derive(Clone, Debug)]
    pub struct ModelDomain {
        pub name: &'static str,
        pub grid: Arc<GridDomain>,
        pub rho: ScalarField,
        pub p: usize,
    }

    fn abs2(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    /// Unit ball in `R^n` with `ρ = -log(1 - |x|²)`, strictly 1-convex.
    pub fn ball(n: usize, cells: usize) -> Result<ModelDomain> {
        let grid = GridDomain::centered(n, 1.0, cells)?.with_mask(|x| abs2(x) < 1.0)?;
        Ok(ModelDomain {
            name: "ball",
            grid: Arc::new(grid),
            rho: ScalarField::parse("-log(1 - abs2)", n)?,
            p: 1,
        })
    }

    pub const ANNULUS_RADII: (f64, f64) = (0.4, 1.0);

    /// Planar annulus `a < |x| < b` with the two-sided log barrier. Its
    /// Laplacian is positive (strictly 2-convex) while the tangential
    /// eigenvalue is negative near the inner circle.
    pub fn annulus(cells: usize) -> Result<ModelDomain> {
        let (a, b) = ANNULUS_RADII;
        let grid = GridDomain::centered(2, 1.1 * b, cells)?.with_mask(|x| {
            let s = abs2(x);
            a * a < s && s < b * b
        })?;
        let rho = format!("-log(abs2 - {}) - log({} - abs2)", a * a, b * b);
        Ok(ModelDomain {
            name: "annulus",
            grid: Arc::new(grid),
            rho: ScalarField::parse(&rho, 2)?,
            p: 2,
        })
    }

    pub const SHELL_RADII: (f64, f64) = (0.45, 1.05);

    /// Spherical shell `a < |x| < b` in `R^3`. The quadratic term makes the
    /// trace of the Hessian positive, so the barrier is strictly 3-convex.
    pub fn shell(cells: usize) -> Result<ModelDomain> {
        let (a, b) = SHELL_RADII;
        let grid = GridDomain::centered(3, 1.1, cells)?.with_mask(|x| {
            let s = abs2(x);
            a * a < s && s < b * b
        })?;
        let rho = format!("abs2 - log(abs2 - {}) - log({} - abs2)", a * a, b * b);
        Ok(ModelDomain {
            name: "shell",
            grid: Arc::new(grid),
            rho: ScalarField::parse(&rho, 3)?,
            p: 3,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::models::*;
    use super::*;

    fn all(n: usize) -> Vec<usize> {
        (0..=n).collect()
    }

    #[test]
    fn disk_is_contractible() {
        let m = ball(2, 8).unwrap();
        let r = betti(&m.grid, &all(2)).unwrap();
        assert_eq!(r.betti_numbers(), vec![1, 0, 0]);
        assert!(r.ranks.iter().all(|x| x.method == RankMethod::DenseSvd));
        assert_eq!(r.euler_consistent(), Some(true));
    }

    #[test]
    fn annulus_has_one_loop() {
        let m = annulus(16).unwrap();
        let r = betti(&m.grid, &all(2)).unwrap();
        assert_eq!(r.betti_numbers(), vec![1, 1, 0]);
    }

    #[test]
    fn shell_has_one_void() {
        let m = shell(12).unwrap();
        let r = betti(&m.grid, &all(3)).unwrap();
        assert_eq!(r.betti_numbers(), vec![1, 0, 1, 0]);
        assert_eq!(r.euler_consistent(), Some(true));
    }

    #[test]
    fn betti_numbers_survive_refinement() {
        let pairs = [
            (ball(2, 8).unwrap(), ball(2, 16).unwrap()),
            (annulus(16).unwrap(), annulus(32).unwrap()),
            (shell(12).unwrap(), shell(24).unwrap()),
        ];
        for (coarse, fine) in pairs {
            let n = coarse.grid.dim();
            let a = betti(&coarse.grid, &all(n)).unwrap();
            let b = betti(&fine.grid, &all(n)).unwrap();
            assert_eq!(a.betti_numbers(), b.betti_numbers(), "{}", coarse.name);
        }
    }

    #[test]
    fn dense_and_modular_ranks_agree_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let n = 2 + trial % 2;
            let cells = if n == 2 { 7 } else { 4 };
            let base = GridDomain::centered(n, 1.0, cells).unwrap();
            let mask: Vec<bool> = (0..base.node_count()).map(|_| rng.random_bool(0.75)).collect();
            if !mask.iter().any(|&m| m) {
                continue;
            }
            let grid = Arc::new(base.with_mask_vec(mask).unwrap());
            let c = Complex::new(grid.clone()).unwrap();
            for k in 0..n {
                let e = c.coboundary(k).unwrap();
                let (rows, cols) = (c.space(k + 1).dim(), c.space(k).dim());
                assert_eq!(dense_rank(rows, cols, &e, SVD_RELATIVE_TOL), modular_rank(rows, cols, &e));
            }
            let r = betti(&grid, &all(n)).unwrap();
            assert_eq!(r.betti(0), Some(grid.components()), "trial {trial}");
            assert_eq!(r.euler_consistent(), Some(true));
        }
    }

    #[test]
    fn sparse_path_and_cap() {
        let m = annulus(16).unwrap();
        let c = Complex::new(m.grid.clone()).unwrap();
        let sparse = RankOptions {
            dense_cap: 0,
            ..RankOptions::default()
        };
        let r = betti_with(&c, &all(2), &sparse).unwrap();
        assert_eq!(r.betti_numbers(), vec![1, 1, 0]);
        assert!(r.ranks.iter().all(|x| x.method == RankMethod::SparseModular));
        let capped = RankOptions {
            allow_sparse: false,
            ..sparse
        };
        assert!(matches!(
            betti_with(&c, &[1], &capped),
            Err(Error::RankCapExceeded { .. })
        ));
        assert!(betti_with(&c, &[3], &RankOptions::default()).is_err());
    }

    #[test]
    fn partial_degree_sets() {
        let m = annulus(12).unwrap();
        let r = betti(&m.grid, &[1]).unwrap();
        assert_eq!(r.betti_numbers(), vec![1]);
        assert_eq!(r.euler, None);
    }

    #[test]
    fn vanishing_on_model_domains() {
        for m in [ball(2, 16).unwrap(), annulus(16).unwrap(), shell(12).unwrap()] {
            let v = verify_vanishing(&m.grid, &m.rho, m.p).unwrap();
            assert!(v.certified_convexity, "{}: margin {}", m.name, v.min_margin);
            assert!(v.theorem_consistent, "{}", m.name);
            assert!(v.violations.is_empty());
        }
    }

    #[test]
    fn annulus_is_not_one_convex() {
        let m = annulus(16).unwrap();
        let v = verify_vanishing(&m.grid, &m.rho, 1).unwrap();
        assert!(!v.certified_convexity);
        assert!(!v.vanishing_claimed);
        assert!(v.theorem_consistent);
        assert_eq!(v.betti.betti(1), Some(1));
        let w = v.witness.unwrap();
        assert!(w.verdict.margin < 0.0);
        // the tangential eigenvalue is most negative at the inner circle
        let r = w.point.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(r < 0.6, "witness at radius {r}");
    }

    #[test]
    fn modular_arithmetic() {
        assert_eq!(pow_mod(3, PRIME - 1), 1);
        assert_eq!(merge(&[(0, 1), (2, 5)], &[(0, 1), (1, 1)], PRIME - 1), vec![(1, PRIME - 1), (2, 5)]);
        // 2x2 with determinant zero over Q
        assert_eq!(modular_rank(2, 2, &[(0, 0, 1), (0, 1, -1), (1, 0, -1), (1, 1, 1)]), 1);
    }
}
