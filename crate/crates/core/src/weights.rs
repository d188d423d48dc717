//! Weights from a strictly p-psh exhaustion `ρ`: the sublevel constants
//! `L^(m)` and `γ^(m)`, the convex reparametrization `χ`, and the chain
//! `(φ-2ψ, φ-ψ, φ)` with `φ = χ∘ρ` and the coercivity floor `μ`.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::fields::{io, GridDomain, SampledField, ScalarField};
use crate::multilinear::{lambda1_k, SymMatrix};

/// Largest `|w|` allowed for any weight after centering; `exp(±w)` and the
/// squared norms built from it stay finite.
pub const MAX_WEIGHT_ABS: f64 = 600.0;

/// Relative slope increase across the knot range, so that `χ'' > 0`.
const CURVATURE_BUMP: f64 = 0.25;

/// Integer levels `⌈min ρ⌉ ..= ⌈max ρ⌉`.
pub fn sampled_levels(rho_values: impl IntoIterator<Item = f64>) -> Vec<i64> {
    let (lo, hi) = rho_values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Vec::new();
    }
    (lo.ceil() as i64..=hi.ceil() as i64).collect()
}

/// Masked nodes with `ρ ≤ m`.
pub fn sublevel_nodes(rho: &ScalarField, grid: &GridDomain, m: f64) -> Result<Vec<usize>> {
    let values = rho.sample(grid)?;
    Ok(grid.masked_nodes().filter(|&v| values[v] <= m).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LValue {
    pub m: f64,
    pub value: f64,
    /// Node attaining the minimum.
    pub node: usize,
    /// `value ≤ 0`: `ρ` is not strictly p-convex at this degree on `K^(m)`.
    pub nonpositive: bool,
}

/// `L^(m)`: minimum of `λ_1^[k](Hess ρ)` over `K^(m)`.
pub fn l_m(rho: &ScalarField, grid: &GridDomain, k: usize, m: f64) -> Result<LValue> {
    let data = node_data(rho, grid, k)?;
    l_from_data(&data, m)
}

/// `L^(m)` at every sampled level, from one pass over the nodes. Levels
/// with `L ≤ 0` are kept and marked `nonpositive`.
pub fn l_table(rho: &ScalarField, grid: &GridDomain, k: usize) -> Result<Vec<LValue>> {
    let data = node_data(rho, grid, k)?;
    sampled_levels(data.iter().flatten().filter(|d| !d.flagged).map(|d| d.rho))
        .into_iter()
        .map(|m| l_from_data(&data, m as f64))
        .collect()
}

/// `γ^(m)`: maximum of `C|∇ψ|² + e^ψ` over `K^(m) = {ρ ≤ m}`.
pub fn gamma_m(rho: &ScalarField, psi: &ScalarField, grid: &GridDomain, m: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return contract("gamma constant C must be positive");
    }
    let nodes = sublevel_nodes(rho, grid, m)?;
    if nodes.is_empty() {
        return Err(Error::EmptySublevel { m });
    }
    let psi_nodes = psi_data(psi, grid)?;
    Ok(nodes
        .iter()
        .filter_map(|&v| psi_nodes[v].as_ref())
        .map(|(p, g)| gamma_integrand(*p, g, c))
        .fold(f64::NEG_INFINITY, f64::max))
}

fn gamma_integrand(psi: f64, grad: &[f64], c: f64) -> f64 {
    c * grad.iter().map(|x| x * x).sum::<f64>() + psi.exp()
}

/// Monotone convex C¹ spline: `χ'` is piecewise linear through `slopes` at
/// `knots`, and `χ` extends linearly beyond the outer knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl Chi {
    fn segment(&self, t: f64) -> Option<usize> {
        let last = self.knots.len() - 1;
        if t < self.knots[0] || t > self.knots[last] {
            return None;
        }
        let j = self.knots.partition_point(|&k| k <= t);
        Some(j.saturating_sub(1).min(last - 1))
    }

    pub fn value(&self, t: f64) -> f64 {
        let last = self.knots.len() - 1;
        match self.segment(t) {
            Some(j) => {
                let u = t - self.knots[j];
                let dt = self.knots[j + 1] - self.knots[j];
                self.values[j] + self.slopes[j] * u + 0.5 * (self.slopes[j + 1] - self.slopes[j]) / dt * u * u
            }
            None if t < self.knots[0] => self.values[0] + self.slopes[0] * (t - self.knots[0]),
            None => self.values[last] + self.slopes[last] * (t - self.knots[last]),
        }
    }

    pub fn slope(&self, t: f64) -> f64 {
        match self.segment(t) {
            Some(j) => {
                let u = (t - self.knots[j]) / (self.knots[j + 1] - self.knots[j]);
                self.slopes[j] + (self.slopes[j + 1] - self.slopes[j]) * u
            }
            None if t < self.knots[0] => self.slopes[0],
            None => self.slopes[self.slopes.len() - 1],
        }
    }

    pub fn curvature(&self, t: f64) -> f64 {
        match self.segment(t) {
            Some(j) => (self.slopes[j + 1] - self.slopes[j]) / (self.knots[j + 1] - self.knots[j]),
            None => 0.0,
        }
    }
}

/// Builds `χ` from a table of `(m, γ^(m)/L^(m))` so that `χ'(t)` dominates
/// `safety · max{ratio_m : m ≥ ⌈t⌉}` on `[min m - 1, max m]`.
pub fn build_chi(requirements: &[(f64, f64)], safety: f64) -> Result<Chi> {
    if !(safety >= 1.0) {
        return contract(format!("safety must be at least 1, got {safety}"));
    }
    chi_from_table(requirements, safety)
}

fn chi_from_table(requirements: &[(f64, f64)], safety: f64) -> Result<Chi> {
    if requirements.is_empty() {
        return contract("empty slope requirement table");
    }
    if !(safety > 0.0 && safety.is_finite()) {
        return contract("safety must be positive");
    }
    if requirements.iter().any(|&(m, r)| !(m.is_finite() && r.is_finite() && r > 0.0)) {
        return contract("slope requirements must be finite and positive");
    }
    let mut table = requirements.to_vec();
    table.sort_by(|a, b| a.0.total_cmp(&b.0));
    table.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 = a.1.max(b.1);
            true
        } else {
            false
        }
    });

    // suffix max of the ratios, then a running max so χ' is nondecreasing
    let mut req: Vec<f64> = table.iter().map(|&(_, r)| safety * r).collect();
    for j in (0..req.len() - 1).rev() {
        req[j] = req[j].max(req[j + 1]);
    }
    let mut knots = vec![table[0].0 - 1.0];
    knots.extend(table.iter().map(|&(m, _)| m));
    let mut slopes = vec![req[0]];
    slopes.extend(req.iter().copied());
    for j in 1..slopes.len() {
        slopes[j] = slopes[j].max(slopes[j - 1]);
    }
    let base = slopes[0];
    let segments = (knots.len() - 1) as f64;
    for (j, s) in slopes.iter_mut().enumerate() {
        *s += base * CURVATURE_BUMP * j as f64 / segments;
    }
    let mut values = vec![0.0];
    for j in 1..knots.len() {
        let dt = knots[j] - knots[j - 1];
        values.push(values[j - 1] + 0.5 * dt * (slopes[j - 1] + slopes[j]));
    }
    Ok(Chi { knots, values, slopes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightOptions {
    /// Form degree `k` of the target cohomology.
    pub degree: usize,
    pub safety: f64,
    /// The constant `C` in `γ^(m)`.
    pub gamma_constant: f64,
    /// Accept `safety < 1` (negative controls); invariant failures are then
    /// recorded instead of being impossible by construction.
    pub force: bool,
}

impl WeightOptions {
    pub fn new(degree: usize) -> Self {
        WeightOptions {
            degree,
            safety: 2.0,
            gamma_constant: 1.0,
            force: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaValue {
    pub m: f64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// min over nodes and levels of `χ'(ρ)L^(m) - μ`.
    pub upper_slack: f64,
    /// min over nodes and levels of `μ - γ^(m)`.
    pub lower_slack: f64,
    /// min over nodes of `λ_1^[k](Hess φ) - μ`.
    pub coercive_slack: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightChainSummary {
    pub degree: usize,
    pub safety: f64,
    pub gamma_constant: f64,
    pub grid_hash: String,
    /// Constant subtracted from `χ∘ρ` to center `φ`.
    pub shift: f64,
    pub chi: Chi,
    pub l_table: Vec<LValue>,
    pub gamma_table: Vec<GammaValue>,
    pub invariants: InvariantReport,
    pub mu_min: f64,
    pub phi_range: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct WeightChain {
    options: WeightOptions,
    grid: Arc<GridDomain>,
    chi: Chi,
    shift: f64,
    rho: Vec<f64>,
    phi: SampledField,
    psi: SampledField,
    mu: SampledField,
    grad_phi: Vec<Vec<f64>>,
    grad_psi: Vec<Vec<f64>>,
    hess_phi: Vec<SymMatrix>,
    l_table: Vec<LValue>,
    gamma_table: Vec<GammaValue>,
    invariants: InvariantReport,
}

struct NodeData {
    rho: f64,
    grad: Vec<f64>,
    hess: SymMatrix,
    /// One-sided stencil or no stencil; excluded from reductions.
    flagged: bool,
    lambda: f64,
}

fn node_data(rho: &ScalarField, grid: &GridDomain, k: usize) -> Result<Vec<Option<NodeData>>> {
    let n = grid.dim();
    if k == 0 || k > n {
        return contract(format!("degree must be in 1..={n}, got {k}"));
    }
    let values = rho.sample(grid)?;
    (0..grid.node_count())
        .into_par_iter()
        .map(|node| {
            if !grid.is_masked(node) {
                return Ok(None);
            }
            let (grad, hess) = match (rho.grad_at_node(grid, node), rho.hessian_at_node(grid, node)) {
                (Ok(g), Ok(h)) => (g, h),
                (Err(Error::Stencil { .. }), _) | (_, Err(Error::Stencil { .. })) => {
                    return Ok(Some(NodeData {
                        rho: values[node],
                        grad: vec![0.0; n],
                        hess: SymMatrix::zeros(n),
                        flagged: true,
                        lambda: 0.0,
                    }))
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            let lambda = lambda1_k(&hess.value, k)?;
            Ok(Some(NodeData {
                rho: values[node],
                grad: grad.value,
                hess: hess.value,
                flagged: grad.flagged || hess.flagged,
                lambda,
            }))
        })
        .collect()
}

fn l_from_data(data: &[Option<NodeData>], m: f64) -> Result<LValue> {
    let mut best: Option<(usize, f64)> = None;
    for (node, d) in data.iter().enumerate() {
        if let Some(d) = d {
            if !d.flagged && d.rho <= m && best.is_none_or(|(_, v)| d.lambda < v) {
                best = Some((node, d.lambda));
            }
        }
    }
    let (node, value) = best.ok_or(Error::EmptySublevel { m })?;
    Ok(LValue {
        m,
        value,
        node,
        nonpositive: value <= 0.0,
    })
}

/// `(ψ, ∇ψ)` per masked node; `None` off the mask or where no stencil fits.
fn psi_data(psi: &ScalarField, grid: &GridDomain) -> Result<Vec<Option<(f64, Vec<f64>)>>> {
    let values = psi.sample(grid)?;
    (0..grid.node_count())
        .into_par_iter()
        .map(|node| {
            if !grid.is_masked(node) {
                return Ok(None);
            }
            match psi.grad_at_node(grid, node) {
                Ok(g) => Ok(Some((values[node], g.value))),
                Err(Error::Stencil { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Builds the weight chain for degree `options.degree`. `psi` defaults to 0.
pub fn build_weight_chain(
    rho: &ScalarField,
    psi: Option<&ScalarField>,
    grid: &Arc<GridDomain>,
    options: &WeightOptions,
) -> Result<WeightChain> {
    let k = options.degree;
    if !options.force && !(options.safety >= 1.0) {
        return contract(format!("safety must be at least 1, got {}", options.safety));
    }
    if !(options.gamma_constant > 0.0) {
        return contract("gamma constant C must be positive");
    }
    let zero = ScalarField::constant(0.0, grid.dim());
    let psi = psi.unwrap_or(&zero);
    let data = node_data(rho, grid, k)?;
    let psi_nodes = psi_data(psi, grid)?;

    let levels = sampled_levels(data.iter().flatten().filter(|d| !d.flagged).map(|d| d.rho));
    if levels.is_empty() {
        return contract("no node with a centered stencil for rho");
    }
    let mut l_table = Vec::with_capacity(levels.len());
    let mut gamma_table = Vec::with_capacity(levels.len());
    for &m in &levels {
        let m = m as f64;
        let l = l_from_data(&data, m)?;
        if l.nonpositive {
            return Err(Error::NotStrictlyConvex {
                degree: k,
                node: l.node,
                value: l.value,
            });
        }
        l_table.push(l);
        let g = data
            .iter()
            .zip(&psi_nodes)
            .filter_map(|(d, p)| match (d, p) {
                (Some(d), Some((pv, pg))) if !d.flagged && d.rho <= m => {
                    Some(gamma_integrand(*pv, pg, options.gamma_constant))
                }
                _ => None,
            })
            .fold(f64::NEG_INFINITY, f64::max);
        gamma_table.push(GammaValue { m, value: g });
    }
    let requirements: Vec<(f64, f64)> = l_table
        .iter()
        .zip(&gamma_table)
        .map(|(l, g)| (l.m, g.value / l.value))
        .collect();
    let chi = chi_from_table(&requirements, options.safety)?;

    // suffix min of L over levels m ≥ ⌈ρ⌉
    let mut l_suffix: Vec<f64> = l_table.iter().map(|l| l.value).collect();
    for j in (0..l_suffix.len() - 1).rev() {
        l_suffix[j] = l_suffix[j].min(l_suffix[j + 1]);
    }
    let first_level = levels[0];
    let level_index = |r: f64| -> usize {
        let j = (r.ceil() as i64 - first_level).max(0) as usize;
        j.min(levels.len() - 1)
    };

    let node_count = grid.node_count();
    let n = grid.dim();
    let mut rho_values = vec![0.0; node_count];
    let mut phi_raw = vec![0.0; node_count];
    let mut mu = vec![0.0; node_count];
    let mut psi_values = vec![0.0; node_count];
    let mut grad_phi = vec![vec![0.0; n]; node_count];
    let mut grad_psi = vec![vec![0.0; n]; node_count];
    let mut hess_phi = vec![SymMatrix::zeros(n); node_count];
    for (node, d) in data.iter().enumerate() {
        let Some(d) = d else { continue };
        let s = chi.slope(d.rho);
        rho_values[node] = d.rho;
        phi_raw[node] = chi.value(d.rho);
        mu[node] = s * l_suffix[level_index(d.rho)];
        grad_phi[node] = d.grad.iter().map(|g| s * g).collect();
        hess_phi[node] = d
            .hess
            .scaled(s)
            .add_scaled(chi.curvature(d.rho), &SymMatrix::outer(&d.grad))?;
        if let Some((pv, pg)) = &psi_nodes[node] {
            psi_values[node] = *pv;
            grad_psi[node] = pg.clone();
        }
    }

    let masked: Vec<usize> = grid.masked_nodes().collect();
    let (lo, hi) = masked
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(phi_raw[v]), hi.max(phi_raw[v]))
        });
    let shift = 0.5 * (lo + hi);
    for &v in &masked {
        phi_raw[v] -= shift;
    }
    let widest = masked
        .iter()
        .map(|&v| {
            let (p, q) = (phi_raw[v], psi_values[v]);
            p.abs().max((p - q).abs()).max((p - 2.0 * q).abs())
        })
        .fold(0.0, f64::max);
    if !(widest <= MAX_WEIGHT_ABS) {
        return Err(Error::WeightOverflow { range: 2.0 * widest });
    }
    if shift != 0.0 {
        log::debug!("phi centered by subtracting {shift}");
    }

    let invariants = check_invariants(&data, &chi, &mu, &hess_phi, &l_table, &gamma_table, k)?;
    if !invariants.holds {
        if options.force {
            log::warn!("weight chain invariants fail (forced build): {invariants:?}");
        } else {
            log::error!("weight chain invariants fail: {invariants:?}");
        }
    }

    Ok(WeightChain {
        options: options.clone(),
        grid: grid.clone(),
        chi,
        shift,
        rho: rho_values,
        phi: SampledField::new(grid.clone(), phi_raw)?,
        psi: SampledField::new(grid.clone(), psi_values)?,
        mu: SampledField::new(grid.clone(), mu)?,
        grad_phi,
        grad_psi,
        hess_phi,
        l_table,
        gamma_table,
        invariants,
    })
}

fn check_invariants(
    data: &[Option<NodeData>],
    chi: &Chi,
    mu: &[f64],
    hess_phi: &[SymMatrix],
    l_table: &[LValue],
    gamma_table: &[GammaValue],
    k: usize,
) -> Result<InvariantReport> {
    let mut upper = f64::INFINITY;
    let mut lower = f64::INFINITY;
    let mut coercive = f64::INFINITY;
    let mut holds = true;
    for (node, d) in data.iter().enumerate() {
        let Some(d) = d else { continue };
        if d.flagged {
            continue;
        }
        let s = chi.slope(d.rho);
        let scale = 1.0 + mu[node].abs();
        for (l, g) in l_table.iter().zip(gamma_table) {
            if d.rho > l.m {
                continue;
            }
            let up = s * l.value - mu[node];
            let lo = mu[node] - g.value;
            upper = upper.min(up);
            lower = lower.min(lo);
            holds &= up >= -1e-9 * scale && lo >= -1e-9 * scale.max(g.value);
        }
        let hs = &hess_phi[node];
        let c = lambda1_k(hs, k)? - mu[node];
        coercive = coercive.min(c);
        holds &= c >= -1e-9 * (1.0 + hs.norm_bound());
    }
    Ok(InvariantReport {
        upper_slack: upper,
        lower_slack: lower,
        coercive_slack: coercive,
        holds,
    })
}

impl WeightChain {
    pub fn degree(&self) -> usize {
        self.options.degree
    }

    pub fn options(&self) -> &WeightOptions {
        &self.options
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn chi(&self) -> &Chi {
        &self.chi
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn phi(&self) -> &SampledField {
        &self.phi
    }

    pub fn psi(&self) -> &SampledField {
        &self.psi
    }

    pub fn mu(&self) -> &SampledField {
        &self.mu
    }

    pub fn hess_phi(&self, node: usize) -> &SymMatrix {
        &self.hess_phi[node]
    }

    pub fn l_table(&self) -> &[LValue] {
        &self.l_table
    }

    pub fn gamma_table(&self) -> &[GammaValue] {
        &self.gamma_table
    }

    pub fn invariants(&self) -> &InvariantReport {
        &self.invariants
    }

    fn psi_multiple(&self, degree: usize) -> Result<f64> {
        let k = self.options.degree;
        match degree {
            d if d + 1 == k => Ok(2.0),
            d if d == k => Ok(1.0),
            d if d == k + 1 => Ok(0.0),
            d => contract(format!("degree {d} is outside the window around {k}")),
        }
    }

    /// Node values of the weight on degree `j` forms: `φ-2ψ`, `φ-ψ`, `φ` for
    /// `j = k-1, k, k+1`.
    pub fn weight(&self, degree: usize) -> Result<Vec<f64>> {
        let c = self.psi_multiple(degree)?;
        Ok(self
            .phi
            .values()
            .iter()
            .zip(self.psi.values())
            .map(|(p, q)| p - c * q)
            .collect())
    }

    /// Gradient of [`WeightChain::weight`] at every node.
    pub fn weight_gradient(&self, degree: usize) -> Result<Vec<Vec<f64>>> {
        let c = self.psi_multiple(degree)?;
        Ok(self
            .grad_phi
            .iter()
            .zip(&self.grad_psi)
            .map(|(gp, gq)| gp.iter().zip(gq).map(|(a, b)| a - c * b).collect())
            .collect())
    }

    pub fn summary(&self) -> WeightChainSummary {
        let (lo, hi) = self
            .grid
            .masked_nodes()
            .map(|v| self.phi.values()[v])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        WeightChainSummary {
            degree: self.options.degree,
            safety: self.options.safety,
            gamma_constant: self.options.gamma_constant,
            grid_hash: self.grid.hash(),
            shift: self.shift,
            chi: self.chi.clone(),
            l_table: self.l_table.clone(),
            gamma_table: self.gamma_table.clone(),
            invariants: self.invariants,
            mu_min: self
                .grid
                .masked_nodes()
                .map(|v| self.mu.values()[v])
                .fold(f64::INFINITY, f64::min),
            phi_range: [lo, hi],
        }
    }

    /// Writes `weights.json` and the sampled `phi`, `psi`, `mu` fields.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("weights.json"), serde_json::to_string_pretty(&self.summary())?)?;
        io::write_sampled(&self.phi, dir, "phi")?;
        io::write_sampled(&self.psi, dir, "psi")?;
        io::write_sampled(&self.mu, dir, "mu")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(half: f64, cells: usize, r: f64) -> Arc<GridDomain> {
        Arc::new(
            GridDomain::centered(2, half, cells)
                .unwrap()
                .with_mask(|x| x[0] * x[0] + x[1] * x[1] < r * r)
                .unwrap(),
        )
    }

    #[test]
    fn sublevel_examples() {
        let grid = GridDomain::centered(2, 2.0, 8).unwrap();
        let rho = ScalarField::parse("abs2", 2).unwrap();
        let nodes = sublevel_nodes(&rho, &grid, 1.0).unwrap();
        assert_eq!(nodes.len(), 13);
        for &v in &nodes {
            let x = grid.coords(v);
            assert!(x[0] * x[0] + x[1] * x[1] <= 1.0);
        }
        assert!(sublevel_nodes(&rho, &grid, -0.5).unwrap().is_empty());
        let a = sublevel_nodes(&rho, &grid, 2.0).unwrap();
        let b = sublevel_nodes(&rho, &grid, 5.0).unwrap();
        assert!(a.iter().all(|v| b.contains(v)));
    }

    #[test]
    fn l_table_matches_single_levels() {
        let grid = disk(1.0, 8, 0.95);
        let rho = ScalarField::parse("-log(1 - abs2)", 2).unwrap();
        let table = l_table(&rho, &grid, 1).unwrap();
        assert!(!table.is_empty());
        for l in &table {
            assert_eq!(*l, l_m(&rho, &grid, 1, l.m).unwrap());
        }
    }

    #[test]
    fn l_examples() {
        let grid = disk(1.0, 8, 1.0);
        let rho = ScalarField::parse("abs2", 2).unwrap();
        for k in 1..=2 {
            assert_eq!(l_m(&rho, &grid, k, 1.0).unwrap().value, 2.0 * k as f64);
        }
        let rho = ScalarField::parse("x1^2 + 3*x2^2", 2).unwrap();
        assert_eq!(l_m(&rho, &grid, 1, 4.0).unwrap().value, 2.0);
        let saddle = ScalarField::parse("x1^2 - x2^2", 2).unwrap();
        let l = l_m(&saddle, &grid, 1, 4.0).unwrap();
        assert!(l.nonpositive);
        assert_eq!(l.value, -2.0);
        assert!(matches!(l_m(&rho, &grid, 1, -1.0), Err(Error::EmptySublevel { .. })));
    }

    #[test]
    fn gamma_examples() {
        let grid = disk(1.0, 8, 1.0);
        let rho = ScalarField::parse("abs2", 2).unwrap();
        let zero = ScalarField::constant(0.0, 2);
        for c in [0.5, 1.0, 3.0] {
            assert_eq!(gamma_m(&rho, &zero, &grid, 1.0, c).unwrap(), 1.0);
        }
        let slab = GridDomain::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![4, 4]).unwrap();
        let psi = ScalarField::parse("x1", 2).unwrap();
        let g = gamma_m(&rho, &psi, &slab, 10.0, 2.0).unwrap();
        assert!((g - (2.0 + std::f64::consts::E)).abs() < 1e-12);
        let g1 = gamma_m(&rho, &psi, &slab, 0.3, 2.0).unwrap();
        assert!(g1 <= g);
        assert!(gamma_m(&rho, &psi, &slab, 1.0, 0.0).is_err());
    }

    #[test]
    fn chi_constant_requirement() {
        let chi = build_chi(&[(0.0, 0.5), (1.0, 0.5), (2.0, 0.5)], 2.0).unwrap();
        for i in 0..=300 {
            let t = -1.0 + 3.0 * i as f64 / 300.0;
            assert!(chi.slope(t) >= 1.0 - 1e-15);
            assert!(chi.curvature(t) >= 0.0);
        }
        assert_eq!(chi.slopes[0], 1.0);
    }

    #[test]
    fn chi_uses_suffix_max() {
        let table = [(0.0, 3.0), (1.0, 2.0), (2.0, 1.0), (3.0, 5.0)];
        let chi = build_chi(&table, 1.5).unwrap();
        let suffix = |t: f64| {
            table
                .iter()
                .filter(|(m, _)| *m >= t.ceil())
                .map(|(_, r)| *r)
                .fold(0.0, f64::max)
        };
        for i in 0..=1000 {
            let t = -1.0 + 4.0 * i as f64 / 1000.0;
            assert!(chi.slope(t) >= 1.5 * suffix(t) - 1e-12, "t = {t}");
            assert!(chi.curvature(t) >= 0.0);
        }
        for w in chi.knots.windows(2) {
            assert!(chi.value(w[1]) > chi.value(w[0]));
        }
        // C¹ at knots
        for &t in &chi.knots[1..chi.knots.len() - 1] {
            assert!((chi.slope(t - 1e-9) - chi.slope(t + 1e-9)).abs() < 1e-6);
            assert!((chi.value(t - 1e-9) - chi.value(t)).abs() < 1e-7);
        }
    }

    #[test]
    fn chi_rejects_bad_tables() {
        assert!(build_chi(&[], 2.0).is_err());
        assert!(build_chi(&[(0.0, -1.0)], 2.0).is_err());
        assert!(build_chi(&[(0.0, f64::NAN)], 2.0).is_err());
        assert!(build_chi(&[(0.0, 1.0)], 0.5).is_err());
    }

    #[test]
    fn quadratic_chain() {
        let grid = disk(1.0, 12, 1.0);
        let rho = ScalarField::parse("abs2", 2).unwrap();
        let chain = build_weight_chain(&rho, None, &grid, &WeightOptions::new(1)).unwrap();
        assert!(chain.invariants().holds);
        for v in grid.masked_nodes() {
            assert!(chain.mu().values()[v] >= 1.0 - 1e-12);
        }
        // φ increases with |x|²
        let mut pairs: Vec<(f64, f64)> = grid
            .masked_nodes()
            .map(|v| (chain.rho()[v], chain.phi().values()[v]))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-12);
        }
        let a = chain.weight(0).unwrap();
        assert_eq!(a, chain.weight(1).unwrap());
        assert_eq!(a, chain.weight(2).unwrap());
        assert!(chain.weight(3).is_err());
    }

    #[test]
    fn safety_scales_mu() {
        let grid = disk(1.0, 10, 0.95);
        let rho = ScalarField::parse("-log(1 - abs2)", 2).unwrap();
        let mut opts = WeightOptions::new(1);
        opts.safety = 1.0;
        let a = build_weight_chain(&rho, None, &grid, &opts).unwrap();
        opts.safety = 2.0;
        let b = build_weight_chain(&rho, None, &grid, &opts).unwrap();
        assert!(a.invariants().holds && b.invariants().holds);
        for v in grid.masked_nodes() {
            let (ma, mb) = (a.mu().values()[v], b.mu().values()[v]);
            assert!(mb <= 2.0 * ma * (1.0 + 1e-12) && mb >= ma);
        }
    }

    #[test]
    fn weak_safety_needs_force() {
        let grid = disk(1.0, 10, 0.95);
        let rho = ScalarField::parse("abs2", 2).unwrap();
        let mut opts = WeightOptions::new(1);
        opts.safety = 0.5;
        assert!(build_weight_chain(&rho, None, &grid, &opts).is_err());
        opts.force = true;
        let chain = build_weight_chain(&rho, None, &grid, &opts).unwrap();
        assert!(!chain.invariants().holds);
        assert!(chain.invariants().lower_slack < 0.0);
    }

    #[test]
    fn saddle_is_rejected_with_witness() {
        let grid = disk(1.0, 8, 1.0);
        let rho = ScalarField::parse("x1^2 - x2^2", 2).unwrap();
        match build_weight_chain(&rho, None, &grid, &WeightOptions::new(1)) {
            Err(Error::NotStrictlyConvex { degree: 1, value, .. }) => assert_eq!(value, -2.0),
            other => panic!("unexpected {other:?}"),
        }
        // degree 2 sums both eigenvalues: trace 0, still not strict
        assert!(build_weight_chain(&rho, None, &grid, &WeightOptions::new(2)).is_err());
    }

    #[test]
    fn nonzero_psi_separates_weights() {
        let grid = disk(1.0, 10, 0.95);
        let rho = ScalarField::parse("abs2", 2).unwrap();
        let psi = ScalarField::parse("0.3*x1", 2).unwrap();
        let chain = build_weight_chain(&rho, Some(&psi), &grid, &WeightOptions::new(1)).unwrap();
        assert!(chain.invariants().holds);
        let v = grid.locate(&[0.4, 0.0]).unwrap();
        let (w0, w1, w2) = (chain.weight(0).unwrap(), chain.weight(1).unwrap(), chain.weight(2).unwrap());
        assert!((w2[v] - w1[v] - 0.12).abs() < 1e-12);
        assert!((w1[v] - w0[v] - 0.12).abs() < 1e-12);
        let g = chain.weight_gradient(1).unwrap();
        let s = chain.chi().slope(chain.rho()[v]);
        assert!((g[v][0] - (s * 0.8 - 0.3)).abs() < 1e-12);
    }

    #[test]
    fn steep_weights_overflow() {
        let grid = disk(1.0, 10, 0.95);
        let rho = ScalarField::parse("abs2", 2).unwrap();
        let psi = ScalarField::parse("3*x1", 2).unwrap();
        let mut opts = WeightOptions::new(1);
        opts.gamma_constant = 1e4;
        match build_weight_chain(&rho, Some(&psi), &grid, &opts) {
            Err(Error::WeightOverflow { range }) => assert!(range > 2.0 * MAX_WEIGHT_ABS),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn summary_round_trips() {
        let grid = disk(1.0, 8, 0.95);
        let rho = ScalarField::parse("abs2", 2).unwrap();
        let chain = build_weight_chain(&rho, None, &grid, &WeightOptions::new(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        chain.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("weights.json")).unwrap();
        let back: WeightChainSummary = serde_json::from_str(&text).unwrap();
        assert_eq!(back, chain.summary());
        let phi = io::read_sampled(&dir.path().join("phi.json")).unwrap();
        assert_eq!(phi.values(), chain.phi().values());
    }
}
