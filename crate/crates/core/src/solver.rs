//! Solving `dα = η` through the normal equations `d*d α = d*η`, and empirical
//! checks of the weighted a-priori estimates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::complex::{weighted_norm, Complex, DiscreteForm, FormSpace};
use crate::error::{contract, Diagnosis, Error, Result};
use crate::fields::{GridDomain, ScalarField};
use crate::multilinear::extend_endomorphism;
use crate::weights::WeightChain;

/// Stalled residuals whose relative Rayleigh quotient falls below this are
/// treated as (numerically) harmonic.
pub const HARMONIC_RAYLEIGH: f64 = 1e-6;

/// The iteration stops after this many steps without a relative residual
/// drop of at least `1 - PLATEAU_PROGRESS`.
const PLATEAU_WINDOW: usize = 100;
const PLATEAU_PROGRESS: f64 = 0.99;

/// Default convergence tolerance on the relative residual.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Baseline constants for the estimate checks. The theory gives none; the
/// weighted estimate carries the factor 2 of its AM-GM step.
pub const DEFAULT_BASIC_C: f64 = 1.0;
pub const DEFAULT_PROP_C: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    /// Defaults to `10·√dim + 200`.
    pub max_iter: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_iter: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub degree: usize,
    /// `‖dα - η‖ / ‖η‖` in the `φ-ψ` metric.
    pub residual: f64,
    /// Largest normalized overlap of `α` with probe vectors of `ker d` in the
    /// `φ-2ψ` metric.
    pub minimality_gap: f64,
    pub iterations: usize,
    pub max_iter: usize,
    pub closedness: f64,
    pub grid_hash: String,
    pub chain_id: String,
}

/// Short digest of a weight chain's summary.
pub fn chain_id(chain: &WeightChain) -> String {
    let json = serde_json::to_string(&chain.summary()).expect("summary serializes");
    hex::encode(&Sha256::digest(json.as_bytes())[..8])
}

/// Operators and metrics of the window `k-1 → k → k+1`.
struct Window<'a> {
    complex: &'a Complex,
    k: usize,
    /// Dof masses `e^{-w} Π h` on degrees k-1 and k.
    mass_lo: Vec<f64>,
    mass_mid: Vec<f64>,
}

impl Window<'_> {
    /// `m_lo⁻¹ Dᵀ (row_mass · v)`: the adjoint of `d` when degree k carries
    /// the metric `row_mass`.
    fn d_star(&self, v: &[f64], row_mass: &[f64]) -> Vec<f64> {
        let d = self.complex.d_matrix(self.k - 1).expect("degree checked");
        let mut out = vec![0.0; self.mass_lo.len()];
        for r in 0..d.rows() {
            let w = v[r] * row_mass[r];
            for (c, x) in d.row(r) {
                out[c] += x * w;
            }
        }
        out.iter_mut().zip(&self.mass_lo).for_each(|(o, m)| *o /= m);
        out
    }

    fn d(&self, alpha: &[f64]) -> Vec<f64> {
        self.complex.d_matrix(self.k - 1).expect("degree checked").matvec(alpha)
    }

    /// Row metric `1 / Σ_j D_ij² / m_lo_j`, which gives `d d*` a unit
    /// diagonal. Scaling only the residual side keeps every iterate in
    /// `im d*`, so the minimum-norm property survives.
    fn scaled_row_mass(&self) -> Vec<f64> {
        let d = self.complex.d_matrix(self.k - 1).expect("degree checked");
        (0..d.rows())
            .map(|r| {
                let s: f64 = d.row(r).map(|(c, v)| v * v / self.mass_lo[c]).sum();
                if s > 0.0 {
                    1.0 / s
                } else {
                    self.mass_mid[r]
                }
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64], m: &[f64]) -> f64 {
    a.iter().zip(b).zip(m).map(|((x, y), w)| x * y * w).sum()
}

/// Solves `dα = η` for a closed k-form `η` with the weights of `chain`
/// (built for degree k). Returns the minimum-`‖·‖_{φ-2ψ}` solution.
pub fn solve(eta: &DiscreteForm, chain: &WeightChain, options: &SolveOptions) -> Result<(DiscreteForm, SolveReport)> {
    let complex = Complex::new(chain.grid().clone())?;
    solve_with(&complex, eta, chain, options)
}

pub fn solve_with(
    complex: &Complex,
    eta: &DiscreteForm,
    chain: &WeightChain,
    options: &SolveOptions,
) -> Result<(DiscreteForm, SolveReport)> {
    let k = eta.degree();
    let n = complex.grid().dim();
    if k == 0 || k > n {
        return contract(format!("solve needs 1 <= k <= {n}, got {k}"));
    }
    if chain.degree() != k {
        return contract(format!("weight chain built for degree {}, form has degree {k}", chain.degree()));
    }
    if chain.grid().as_ref() != complex.grid().as_ref() || eta.grid().as_ref() != complex.grid().as_ref() {
        return Err(Error::GridMismatch("form, chain and complex must share a grid".into()));
    }
    if !(options.tol > 0.0) {
        return contract("tolerance must be positive");
    }
    let w_lo = chain.weight(k - 1)?;
    let w_mid = chain.weight(k)?;
    let lo = complex.space(k - 1);
    let mid = complex.space(k);
    let rhs = mid.pack(eta)?;
    let eta_norm = weighted_norm(eta, &w_mid)?;
    let max_iter = options
        .max_iter
        .unwrap_or_else(|| (10.0 * (mid.dim() as f64).sqrt()).ceil() as usize + 200);

    let closedness = if k < n {
        let w_hi = chain.weight(k + 1)?;
        let d_norm = weighted_norm(&complex.d(eta)?, &w_hi)?;
        let scale: f64 = complex.grid().spacing().iter().map(|h| 2.0 / h).sum();
        if d_norm > options.tol * eta_norm * scale {
            return Err(Error::NotClosed { d_norm, norm: eta_norm });
        }
        if eta_norm > 0.0 {
            d_norm / (eta_norm * scale)
        } else {
            0.0
        }
    } else {
        0.0
    };

    let report = |residual, minimality_gap, iterations| SolveReport {
        degree: k,
        residual,
        minimality_gap,
        iterations,
        max_iter,
        closedness,
        grid_hash: complex.grid().hash(),
        chain_id: chain_id(chain),
    };
    if eta_norm == 0.0 {
        return Ok((lo.zeros(), report(0.0, 0.0, 0)));
    }

    let win = Window {
        complex,
        k,
        mass_lo: lo.mass(&w_lo),
        mass_mid: mid.mass(&w_mid),
    };
    let (ml, mm) = (&win.mass_lo, &win.mass_mid);
    let mt = win.scaled_row_mass();
    let rhs_norm = dot(&rhs, &rhs, mm).sqrt();

    // CGLS: CG on d*d α = d*η from α = 0 keeps α in im d*, the minimum-norm
    // solution; with a harmonic part in η the residual plateaus at it
    let mut alpha = vec![0.0; lo.dim()];
    let mut r = rhs.clone();
    let mut s = win.d_star(&r, &mt);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s, ml);
    let mut best = f64::INFINITY;
    let mut last_progress = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter && gamma > 0.0 {
        let q = win.d(&p);
        let qq = dot(&q, &q, &mt);
        if !(qq > 0.0) {
            break;
        }
        let step = gamma / qq;
        alpha.iter_mut().zip(&p).for_each(|(x, d)| *x += step * d);
        r.iter_mut().zip(&q).for_each(|(x, d)| *x -= step * d);
        iterations += 1;
        if iterations % 50 == 0 {
            // refresh to keep the recursive residual honest
            let da = win.d(&alpha);
            r = rhs.iter().zip(&da).map(|(a, b)| a - b).collect();
        }
        let res = dot(&r, &r, mm).sqrt() / rhs_norm;
        if res <= options.tol {
            converged = true;
            break;
        }
        if res < PLATEAU_PROGRESS * best {
            best = res;
            last_progress = iterations;
        }
        if iterations - last_progress >= PLATEAU_WINDOW {
            break;
        }
        s = win.d_star(&r, &mt);
        let gamma_new = dot(&s, &s, ml);
        let b = gamma_new / gamma;
        gamma = gamma_new;
        p.iter_mut().zip(&s).for_each(|(q, ss)| *q = ss + b * *q);
    }

    let d_alpha = win.d(&alpha);
    let res_vec: Vec<f64> = rhs.iter().zip(&d_alpha).map(|(a, b)| a - b).collect();
    let residual = dot(&res_vec, &res_vec, mm).sqrt() / rhs_norm;
    if !converged || residual > options.tol {
        // ‖d*r‖² / ‖r‖² in the scaled metric, where d d* has unit diagonal
        let ds = win.d_star(&res_vec, &mt);
        let rr = dot(&res_vec, &res_vec, &mt);
        let rayleigh = if rr > 0.0 {
            dot(&ds, &ds, ml) / rr
        } else {
            0.0
        };
        let diagnosis = if rayleigh < HARMONIC_RAYLEIGH {
            Diagnosis::Cohomology
        } else {
            Diagnosis::IllConditioned
        };
        return Err(Error::NoConvergence {
            iterations,
            residual,
            rayleigh,
            diagnosis,
        });
    }
    let alpha_dofs = alpha;
    let alpha = lo.unpack(&alpha_dofs);
    let gap = minimality_gap(complex, &alpha, &w_lo)?;
    Ok((alpha, report(residual, gap, iterations)))
}

/// `max |⟨α, z⟩| / (‖α‖‖z‖)` over probes `z ∈ ker d`: the constant 0-form,
/// or `d` of seeded random forms one degree lower.
pub fn minimality_gap(complex: &Complex, alpha: &DiscreteForm, w: &[f64]) -> Result<f64> {
    let j = alpha.degree();
    let space = complex.space(j);
    let a = space.pack(alpha)?;
    let mass = space.mass(w);
    let an = dot(&a, &a, &mass).sqrt();
    if an == 0.0 {
        return Ok(0.0);
    }
    let probes: Vec<Vec<f64>> = if j == 0 {
        vec![vec![1.0; space.dim()]]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6b65_7264);
        (0..3)
            .map(|_| {
                let g = complex.space(j - 1).random_form(&mut rng, 0);
                space.pack(&complex.d(&g)?)
            })
            .collect::<Result<_>>()?
    };
    let mut gap = 0.0f64;
    for z in probes {
        let zn = dot(&z, &z, &mass).sqrt();
        if zn > 0.0 {
            gap = gap.max(dot(&a, &z, &mass).abs() / (an * zn));
        }
    }
    Ok(gap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub trials: usize,
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub mean_ratio: f64,
    /// Trial attaining `max_ratio`.
    pub argmax: usize,
    pub ratios: Vec<f64>,
}

impl RatioStats {
    fn from_ratios(ratios: Vec<f64>) -> Self {
        let mut argmax = 0;
        for (i, r) in ratios.iter().enumerate() {
            if *r > ratios[argmax] {
                argmax = i;
            }
        }
        RatioStats {
            trials: ratios.len(),
            max_ratio: ratios[argmax],
            min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
            mean_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
            argmax,
            ratios,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasicEstimateReport {
    pub degree: usize,
    pub seed: u64,
    pub c_config: f64,
    pub stats: RatioStats,
    /// `max_ratio` finite and at most `c_config`.
    pub passed: bool,
    pub grid_hash: String,
    pub chain_id: String,
}

/// `‖η‖²_{φ-ψ} / (‖d*η‖²_{φ-2ψ} + ‖dη‖²_φ)`.
pub fn basic_estimate_ratio(complex: &Complex, chain: &WeightChain, eta: &DiscreteForm) -> Result<f64> {
    let k = eta.degree();
    let n = complex.grid().dim();
    let w_lo = chain.weight(k - 1)?;
    let w_mid = chain.weight(k)?;
    let lhs = weighted_norm(eta, &w_mid)?.powi(2);
    let ds = weighted_norm(&complex.d_star(eta, &w_mid, &w_lo)?, &w_lo)?.powi(2);
    let dd = if k < n {
        weighted_norm(&complex.d(eta)?, &chain.weight(k + 1)?)?.powi(2)
    } else {
        0.0
    };
    Ok(lhs / (ds + dd))
}

fn random_forms(space: &FormSpace, trials: usize, seed: u64) -> Result<Vec<DiscreteForm>> {
    if trials == 0 {
        return contract("at least one trial is needed");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let forms: Vec<DiscreteForm> = (0..trials).map(|_| space.random_form(&mut rng, 2)).collect();
    if forms[0].is_zero() {
        return contract("no active entry has mask depth >= 2; grid too coarse for test forms");
    }
    Ok(forms)
}

/// Maximum of the basic-estimate ratio over `trials` random compactly
/// supported k-forms.
pub fn check_basic_estimate(
    chain: &WeightChain,
    k: usize,
    trials: usize,
    seed: u64,
    c_config: f64,
) -> Result<BasicEstimateReport> {
    if chain.degree() != k || k == 0 {
        return contract(format!("chain built for degree {}, estimate requested at {k}", chain.degree()));
    }
    let complex = Complex::new(chain.grid().clone())?;
    let forms = random_forms(complex.space(k), trials, seed)?;
    let ratios = forms
        .iter()
        .map(|eta| basic_estimate_ratio(&complex, chain, eta))
        .collect::<Result<Vec<f64>>>()?;
    let stats = RatioStats::from_ratios(ratios);
    Ok(BasicEstimateReport {
        degree: k,
        seed,
        c_config,
        passed: stats.max_ratio.is_finite() && stats.max_ratio <= c_config,
        stats,
        grid_hash: chain.grid().hash(),
        chain_id: chain_id(chain),
    })
}

/// The integrals entering the weighted estimate for one form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateTerms {
    /// `∫ Σ εε ∂²φ η η e^{-φ}`.
    pub hessian: f64,
    /// `∫ Σ |D⁺_ℓ η_I|² e^{-φ}`.
    pub gradient: f64,
    pub d_star: f64,
    pub d: f64,
    /// `∫ Σ |∂ψ|² |η|² e^{-φ}`.
    pub psi: f64,
}

impl EstimateTerms {
    pub fn rhs(&self) -> f64 {
        self.d_star + self.d + self.psi
    }

    pub fn base_ratio(&self) -> f64 {
        self.hessian / self.rhs()
    }

    pub fn stronger_ratio(&self) -> f64 {
        (self.hessian + self.gradient) / self.rhs()
    }
}

/// Node arrays needed by [`estimate_terms`].
pub struct EstimateWeights {
    phi: Vec<f64>,
    psi: Vec<f64>,
    hess_phi: Vec<Option<crate::multilinear::SymMatrix>>,
    grad_psi_sq: Vec<f64>,
}

impl EstimateWeights {
    pub fn new(phi: &ScalarField, psi: &ScalarField, grid: &GridDomain) -> Result<Self> {
        if !phi.is_closed() {
            return contract("the estimate check needs a closed-form phi");
        }
        let phi_v = phi.sample(grid)?;
        let psi_v = psi.sample(grid)?;
        let mut hess_phi = vec![None; grid.node_count()];
        let mut grad_psi_sq = vec![0.0; grid.node_count()];
        for x in grid.masked_nodes() {
            hess_phi[x] = Some(phi.hessian_at_node(grid, x)?.value);
            grad_psi_sq[x] = psi.grad_at_node(grid, x)?.value.iter().map(|g| g * g).sum();
        }
        Ok(EstimateWeights {
            phi: phi_v,
            psi: psi_v,
            hess_phi,
            grad_psi_sq,
        })
    }

    fn shifted(&self, c: f64) -> Vec<f64> {
        self.phi.iter().zip(&self.psi).map(|(p, q)| p - c * q).collect()
    }
}

pub fn estimate_terms(complex: &Complex, weights: &EstimateWeights, eta: &DiscreteForm) -> Result<EstimateTerms> {
    let grid = complex.grid();
    let k = eta.degree();
    let n = grid.dim();
    if k == 0 || k > n {
        return contract(format!("estimate needs 1 <= k <= {n}"));
    }
    let vol = grid.cell_volume();
    let h = grid.spacing();
    let comps = eta.components();
    let mut hessian = 0.0;
    let mut gradient = 0.0;
    let mut psi = 0.0;
    let mut local = vec![0.0; comps.len()];
    for x in grid.masked_nodes() {
        let e = (-weights.phi[x]).exp() * vol;
        let mut any = false;
        for (c, comp) in comps.iter().enumerate() {
            local[c] = comp[x];
            any |= comp[x] != 0.0;
        }
        if any {
            let hs = weights.hess_phi[x].as_ref().expect("masked node");
            hessian += extend_endomorphism(hs, k)?.matrix().quadratic_form(&local) * e;
            psi += weights.grad_psi_sq[x] * local.iter().map(|v| v * v).sum::<f64>() * e;
        }
        for comp in comps {
            for (l, hl) in h.iter().enumerate() {
                let up = grid.neighbor(x, l, 1).map_or(0.0, |y| comp[y]);
                let g = (up - comp[x]) / hl;
                gradient += g * g * e;
            }
        }
    }
    let w_lo = weights.shifted(2.0);
    let w_mid = weights.shifted(1.0);
    let d_star = weighted_norm(&complex.d_star(eta, &w_mid, &w_lo)?, &w_lo)?.powi(2);
    let d = if k < n {
        weighted_norm(&complex.d(eta)?, &weights.phi)?.powi(2)
    } else {
        0.0
    };
    Ok(EstimateTerms {
        hessian,
        gradient,
        d_star,
        d,
        psi,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropEstimateReport {
    pub degree: usize,
    pub seed: u64,
    pub c_config: f64,
    /// Hessian term over the right-hand side.
    pub base: RatioStats,
    /// Hessian plus gradient term over the right-hand side.
    pub stronger: RatioStats,
    pub passed_base: bool,
    pub passed_stronger: bool,
    pub grid_hash: String,
}

/// Empirical constants of the weighted estimate and its stronger variant
/// over `trials` random compactly supported k-forms.
pub fn check_prop_estimate(
    phi: &ScalarField,
    psi: &ScalarField,
    grid: &std::sync::Arc<GridDomain>,
    k: usize,
    trials: usize,
    seed: u64,
    c_config: f64,
) -> Result<PropEstimateReport> {
    let complex = Complex::new(grid.clone())?;
    let weights = EstimateWeights::new(phi, psi, grid)?;
    if k == 0 || k > grid.dim() {
        return contract(format!("estimate needs 1 <= k <= {}", grid.dim()));
    }
    let forms = random_forms(complex.space(k), trials, seed)?;
    let terms = forms
        .iter()
        .map(|eta| estimate_terms(&complex, &weights, eta))
        .collect::<Result<Vec<_>>>()?;
    let base = RatioStats::from_ratios(terms.iter().map(EstimateTerms::base_ratio).collect());
    let stronger = RatioStats::from_ratios(terms.iter().map(EstimateTerms::stronger_ratio).collect());
    Ok(PropEstimateReport {
        degree: k,
        seed,
        c_config,
        passed_base: base.max_ratio.is_finite() && base.max_ratio <= c_config,
        passed_stronger: stronger.max_ratio.is_finite() && stronger.max_ratio <= c_config,
        base,
        stronger,
        grid_hash: grid.hash(),
    })
}
