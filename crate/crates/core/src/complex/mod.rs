//! The discrete weighted de Rham complex on a masked grid.
//!
//! A degree-k form has one grid array per multi-index `I`. The entry at node
//! `x` lives on the k-cube with base vertex `x` spanned by the axes in `I`,
//! and it is active only when every vertex of that cube is a masked node, so
//! the active entries form the cubical complex of the mask. The exterior
//! derivative uses forward differences,
//! `(du)_I(x) = Σ_pos (-1)^pos (u_{I∖ℓ}(x+e_ℓ) - u_{I∖ℓ}(x)) / h_ℓ`, with
//! `ℓ = I[pos]`; shifts commute, so `d∘d = 0` up to roundoff. The weighted
//! adjoint is the exact matrix adjoint for the inner product
//! `Σ u_I v_I e^{-w(x)} Π h`.

pub mod io;
mod sparse;

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

pub use sparse::SparseMatrix;

use crate::error::{contract, Error, Result};
use crate::fields::{GridDomain, ScalarField};
use crate::multilinear::{extend_endomorphism, multi_indices, sign, FormBasis, MultiIndex, SymMatrix};

const INACTIVE: usize = usize::MAX;

/// Active entries of degree-k forms and their packing into a dof vector
/// (component-major, nodes ascending).
#[derive(Clone, Debug)]
pub struct FormSpace {
    grid: Arc<GridDomain>,
    degree: usize,
    basis: FormBasis,
    active: Vec<Vec<bool>>,
    dofs: Vec<(usize, usize)>,
    index: Vec<Vec<usize>>,
}

impl FormSpace {
    pub fn new(grid: Arc<GridDomain>, degree: usize) -> Result<Self> {
        let n = grid.dim();
        if degree > n {
            return contract(format!("form degree {degree} exceeds dimension {n}"));
        }
        let basis = FormBasis::new(n, degree);
        let mut active = Vec::with_capacity(basis.len());
        let mut index = Vec::with_capacity(basis.len());
        let mut dofs = Vec::new();
        for (c, idx) in basis.indices().iter().enumerate() {
            let mut act = vec![false; grid.node_count()];
            let mut ix = vec![INACTIVE; grid.node_count()];
            for node in grid.masked_nodes() {
                if cube_is_masked(&grid, node, idx.as_slice()) {
                    act[node] = true;
                    ix[node] = dofs.len();
                    dofs.push((c, node));
                }
            }
            active.push(act);
            index.push(ix);
        }
        Ok(FormSpace {
            grid,
            degree,
            basis,
            active,
            dofs,
            index,
        })
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn basis(&self) -> &FormBasis {
        &self.basis
    }

    /// Number of active entries.
    pub fn dim(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_active(&self, component: usize, node: usize) -> bool {
        self.active[component][node]
    }

    pub fn dof(&self, component: usize, node: usize) -> Option<usize> {
        let i = self.index[component][node];
        (i != INACTIVE).then_some(i)
    }

    /// `(component, node)` of every dof.
    pub fn dofs(&self) -> &[(usize, usize)] {
        &self.dofs
    }

    pub fn zeros(&self) -> DiscreteForm {
        DiscreteForm::zeros(self.grid.clone(), self.degree)
    }

    pub fn pack(&self, form: &DiscreteForm) -> Result<Vec<f64>> {
        self.check(form)?;
        Ok(self
            .dofs
            .iter()
            .map(|&(c, node)| form.components[c][node])
            .collect())
    }

    pub fn unpack(&self, values: &[f64]) -> DiscreteForm {
        assert_eq!(values.len(), self.dim(), "dof vector length mismatch");
        let mut form = self.zeros();
        for (&(c, node), &v) in self.dofs.iter().zip(values) {
            form.components[c][node] = v;
        }
        form
    }

    /// Samples `f(I, x)` at the base node of every active entry.
    pub fn form_from_fn(&self, f: impl Fn(&MultiIndex, &[f64]) -> f64) -> DiscreteForm {
        let mut form = self.zeros();
        for &(c, node) in &self.dofs {
            form.components[c][node] = f(&self.basis.indices()[c], &self.grid.coords(node));
        }
        form
    }

    /// Per-dof measure `e^{-w(x)} Π h` for a node weight `w`.
    pub fn mass(&self, weight: &[f64]) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.dofs
            .iter()
            .map(|&(_, node)| (-weight[node]).exp() * vol)
            .collect()
    }

    /// Standard normal values on active entries whose base node has mask
    /// depth at least `min_depth`, zero elsewhere.
    pub fn random_form(&self, rng: &mut impl Rng, min_depth: usize) -> DiscreteForm {
        let depth = self.grid.mask_depth();
        let mut form = self.zeros();
        for &(c, node) in &self.dofs {
            if depth[node] >= min_depth {
                form.components[c][node] = rng.sample(StandardNormal);
            }
        }
        form
    }

    fn check(&self, form: &DiscreteForm) -> Result<()> {
        if form.degree != self.degree {
            return contract(format!("expected a {}-form, got degree {}", self.degree, form.degree));
        }
        if form.grid.as_ref() != self.grid.as_ref() {
            return Err(Error::GridMismatch("form lives on another grid".into()));
        }
        Ok(())
    }
}

fn cube_is_masked(grid: &GridDomain, node: usize, axes: &[usize]) -> bool {
    (0..1usize << axes.len()).all(|bits| {
        let mut v = Some(node);
        for (t, &a) in axes.iter().enumerate() {
            if bits >> t & 1 == 1 {
                v = v.and_then(|v| grid.neighbor(v, a, 1));
            }
        }
        v.is_some_and(|v| grid.is_masked(v))
    })
}

/// A degree-k form: one node array per multi-index (lexicographic), zero at
/// inactive entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteForm {
    degree: usize,
    grid: Arc<GridDomain>,
    components: Vec<Vec<f64>>,
}

impl DiscreteForm {
    pub fn zeros(grid: Arc<GridDomain>, degree: usize) -> Self {
        let count = multi_indices(grid.dim(), degree).len();
        let nodes = grid.node_count();
        DiscreteForm {
            degree,
            grid,
            components: vec![vec![0.0; nodes]; count],
        }
    }

    /// Values at inactive entries are dropped.
    pub fn from_components(space: &FormSpace, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != space.basis.len() {
            return contract(format!(
                "a {}-form in dimension {} has {} components, got {}",
                space.degree,
                space.grid.dim(),
                space.basis.len(),
                components.len()
            ));
        }
        let mut form = space.zeros();
        for (c, comp) in components.into_iter().enumerate() {
            if comp.len() != space.grid.node_count() {
                return contract("component length does not match node count");
            }
            for (node, v) in comp.into_iter().enumerate() {
                if space.active[c][node] {
                    if !v.is_finite() {
                        return contract(format!("non-finite value at node {node}"));
                    }
                    form.components[c][node] = v;
                }
            }
        }
        Ok(form)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn component(&self, index: &MultiIndex) -> Option<&[f64]> {
        let pos = multi_indices(self.grid.dim(), self.degree)
            .iter()
            .position(|m| m == index)?;
        Some(&self.components[pos])
    }

    pub fn scaled(&self, c: f64) -> DiscreteForm {
        let mut out = self.clone();
        out.components.iter_mut().flatten().for_each(|v| *v *= c);
        out
    }

    pub fn sub(&self, other: &DiscreteForm) -> Result<DiscreteForm> {
        if self.degree != other.degree || self.grid.as_ref() != other.grid.as_ref() {
            return contract("subtracting forms of different degree or grid");
        }
        let mut out = self.clone();
        for (a, b) in out.components.iter_mut().zip(&other.components) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x -= y);
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().flatten().all(|&v| v == 0.0)
    }
}

/// `±1` incidence of `d` from degree `k` to `k+1`: `(row, col, sign, axis)`.
fn incidence(from: &FormSpace, to: &FormSpace) -> Vec<(usize, usize, i8, usize)> {
    let grid = &to.grid;
    let mut out = Vec::with_capacity(to.dim() * 2 * to.degree);
    for (row, &(c, node)) in to.dofs.iter().enumerate() {
        let idx = &to.basis.indices()[c];
        for pos in 0..idx.len() {
            let (j, axis, s) = idx.remove_at(pos);
            let jc = from.basis.position(&j).expect("face index in basis");
            let up = grid.neighbor(node, axis, 1).expect("active cube stays in the box");
            let lo = from.dof(jc, node).expect("faces of active cubes are active");
            let hi = from.dof(jc, up).expect("faces of active cubes are active");
            out.push((row, hi, s, axis));
            out.push((row, lo, -s, axis));
        }
    }
    out
}

/// A sparse operator between form spaces, with the weights it was built for.
#[derive(Clone, Debug)]
pub struct WeightedOperator {
    pub matrix: SparseMatrix,
    pub from_degree: usize,
    pub to_degree: usize,
    pub label: String,
}

/// All form spaces of a grid and the exterior derivatives between them.
#[derive(Clone, Debug)]
pub struct Complex {
    grid: Arc<GridDomain>,
    spaces: Vec<Arc<FormSpace>>,
    d: Vec<SparseMatrix>,
    incidence: Vec<Vec<(usize, usize, i8, usize)>>,
}

impl Complex {
    pub fn new(grid: Arc<GridDomain>) -> Result<Self> {
        let n = grid.dim();
        let spaces: Vec<Arc<FormSpace>> = (0..=n)
            .map(|k| FormSpace::new(grid.clone(), k).map(Arc::new))
            .collect::<Result<_>>()?;
        let h = grid.spacing().to_vec();
        let mut d = Vec::with_capacity(n);
        let mut inc = Vec::with_capacity(n);
        for k in 0..n {
            let tri = incidence(&spaces[k], &spaces[k + 1]);
            d.push(SparseMatrix::from_triplets(
                spaces[k + 1].dim(),
                spaces[k].dim(),
                tri.iter().map(|&(r, c, s, a)| (r, c, s as f64 / h[a])).collect(),
            ));
            inc.push(tri);
        }
        Ok(Complex {
            grid,
            spaces,
            d,
            incidence: inc,
        })
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn space(&self, k: usize) -> &Arc<FormSpace> {
        &self.spaces[k]
    }

    /// `d` from degree `k` to `k+1` on packed dofs.
    pub fn d_matrix(&self, k: usize) -> Result<&SparseMatrix> {
        self.d
            .get(k)
            .ok_or_else(|| Error::Contract(format!("d is undefined on {k}-forms in dimension {}", self.grid.dim())))
    }

    /// Unscaled `±1` coboundary of degree `k` as `(row, col, sign)`.
    pub fn coboundary(&self, k: usize) -> Result<Vec<(usize, usize, i8)>> {
        self.d_matrix(k)?;
        Ok(self.incidence[k].iter().map(|&(r, c, s, _)| (r, c, s)).collect())
    }

    pub fn d(&self, u: &DiscreteForm) -> Result<DiscreteForm> {
        let k = u.degree;
        let dm = self.d_matrix(k)?;
        let x = self.spaces[k].pack(u)?;
        Ok(self.spaces[k + 1].unpack(&dm.matvec(&x)))
    }

    /// `d*_{φ₂,φ₁}` from degree `k` (weight `phi_from = φ₂`) to `k-1`
    /// (weight `phi_to = φ₁`): entries `D_ba e^{φ₁(a) - φ₂(b)}`.
    pub fn d_star_operator(&self, k: usize, phi_from: &[f64], phi_to: &[f64]) -> Result<WeightedOperator> {
        if k == 0 {
            return contract("d* is undefined on 0-forms");
        }
        let dm = self.d_matrix(k - 1)?;
        let left: Vec<f64> = self.spaces[k - 1].dofs.iter().map(|&(_, x)| phi_to[x].exp()).collect();
        let right: Vec<f64> = self.spaces[k].dofs.iter().map(|&(_, x)| (-phi_from[x]).exp()).collect();
        Ok(WeightedOperator {
            matrix: dm.transpose().scaled(&left, &right),
            from_degree: k,
            to_degree: k - 1,
            label: format!("d* from degree {k} to {}", k - 1),
        })
    }

    pub fn d_star(&self, v: &DiscreteForm, phi_from: &[f64], phi_to: &[f64]) -> Result<DiscreteForm> {
        let k = v.degree;
        let op = self.d_star_operator(k, phi_from, phi_to)?;
        let x = self.spaces[k].pack(v)?;
        Ok(self.spaces[k - 1].unpack(&op.matrix.matvec(&x)))
    }
}

/// `d u` (builds the complex of `u`'s grid).
pub fn d(u: &DiscreteForm) -> Result<DiscreteForm> {
    if u.degree >= u.grid.dim() {
        return contract(format!("d of a {}-form in dimension {}", u.degree, u.grid.dim()));
    }
    Complex::new(u.grid.clone())?.d(u)
}

/// `Σ_I Σ_x u_I v_I e^{-w(x)} Π h`.
pub fn weighted_inner(u: &DiscreteForm, v: &DiscreteForm, w: &[f64]) -> Result<f64> {
    if u.degree != v.degree || u.grid.as_ref() != v.grid.as_ref() {
        return contract("inner product of forms with different degree or grid");
    }
    if w.len() != u.grid.node_count() {
        return contract("weight length does not match node count");
    }
    let vol = u.grid.cell_volume();
    let mut acc = 0.0;
    for (a, b) in u.components.iter().zip(&v.components) {
        for node in 0..a.len() {
            if a[node] != 0.0 && b[node] != 0.0 {
                acc += a[node] * b[node] * (-w[node]).exp();
            }
        }
    }
    Ok(acc * vol)
}

pub fn weighted_norm(u: &DiscreteForm, w: &[f64]) -> Result<f64> {
    Ok(weighted_inner(u, u, w)?.sqrt())
}

/// Weighted adjoint of `d` (see [`Complex::d_star`]).
pub fn d_star(v: &DiscreteForm, phi_from: &[f64], phi_to: &[f64]) -> Result<DiscreteForm> {
    Complex::new(v.grid.clone())?.d_star(v, phi_from, phi_to)
}

/// The continuous adjoint expression
/// `-e^{φ₁} Σ ε(ℓJ,I) (D⁻_ℓ v_I - v_I ∂_ℓφ₂)` with backward differences and
/// the supplied gradient of `φ₂`. Differs from [`d_star`] by `O(h)`.
pub fn d_star_formula(
    v: &DiscreteForm,
    phi_from: &[f64],
    grad_phi_from: &[Vec<f64>],
    phi_to: &[f64],
) -> Result<DiscreteForm> {
    let k = v.degree;
    if k == 0 {
        return contract("d* is undefined on 0-forms");
    }
    let grid = v.grid.clone();
    let target = FormSpace::new(grid.clone(), k - 1)?;
    let source = FormBasis::new(grid.dim(), k);
    let h = grid.spacing();
    let mut out = target.zeros();
    for &(c, x) in target.dofs() {
        let j = &target.basis.indices()[c];
        let mut acc = 0.0;
        for l in 0..grid.dim() {
            let Some((i, s)) = j.insert(l) else { continue };
            let ic = source.position(&i).expect("index in basis");
            let vi = &v.components[ic];
            let back = grid.neighbor(x, l, -1).map_or(0.0, |y| vi[y]);
            let dminus = (vi[x] - back) / h[l];
            acc += s as f64 * (dminus - vi[x] * grad_phi_from[x][l]);
        }
        out.components[c][x] = -(phi_to[x] - phi_from[x]).exp() * acc;
    }
    Ok(out)
}

fn check_node_array(grid: &GridDomain, f: &[f64], axis: usize) -> Result<()> {
    if f.len() != grid.node_count() {
        return contract("array length does not match node count");
    }
    if axis >= grid.dim() {
        return contract(format!("axis {axis} out of range for dimension {}", grid.dim()));
    }
    Ok(())
}

fn masked_value(grid: &GridDomain, f: &[f64], node: Option<usize>) -> f64 {
    node.filter(|&m| grid.is_masked(m)).map_or(0.0, |m| f[m])
}

/// Forward difference `D⁺_j f` of a node array, zero-extended off the mask.
pub fn forward_diff(grid: &GridDomain, f: &[f64], j: usize) -> Result<Vec<f64>> {
    check_node_array(grid, f, j)?;
    let h = grid.spacing()[j];
    Ok((0..grid.node_count())
        .map(|x| {
            if !grid.is_masked(x) {
                return 0.0;
            }
            (masked_value(grid, f, grid.neighbor(x, j, 1)) - f[x]) / h
        })
        .collect())
}

/// Backward difference `D⁻_j f`, zero-extended off the mask.
pub fn backward_diff(grid: &GridDomain, f: &[f64], j: usize) -> Result<Vec<f64>> {
    check_node_array(grid, f, j)?;
    let h = grid.spacing()[j];
    Ok((0..grid.node_count())
        .map(|x| {
            if !grid.is_masked(x) {
                return 0.0;
            }
            (f[x] - masked_value(grid, f, grid.neighbor(x, j, -1))) / h
        })
        .collect())
}

/// `δ^φ_j f = (∂_jφ) f - D⁻_j f`, with the gradient of `φ` taken from the
/// field (exact for closed fields).
pub fn delta(grid: &GridDomain, f: &[f64], phi: &ScalarField, j: usize) -> Result<Vec<f64>> {
    let df = backward_diff(grid, f, j)?;
    let mut out = vec![0.0; grid.node_count()];
    for x in grid.masked_nodes() {
        let g = phi.grad_at_node(grid, x)?.value[j];
        out[x] = g * f[x] - df[x];
    }
    Ok(out)
}

/// Matrix adjoint of `D⁺_j` in the `e^{-φ}` metric:
/// `-e^{φ} D⁻_j(f e^{-φ})`.
pub fn delta_exact(grid: &GridDomain, f: &[f64], phi: &[f64], j: usize) -> Result<Vec<f64>> {
    check_node_array(grid, phi, j)?;
    let g: Vec<f64> = f.iter().zip(phi).map(|(a, p)| a * (-p).exp()).collect();
    let dg = backward_diff(grid, &g, j)?;
    Ok(dg.iter().zip(phi).map(|(a, p)| -p.exp() * a).collect())
}

/// Per-node `|(δ_j D⁺_k - D⁺_k δ_j) f + (∂²φ/∂x^j∂x^k) f|`; `None` at nodes
/// of mask depth < 3, where the stencils reach the zero extension.
pub fn commutator_defect(
    grid: &GridDomain,
    phi: &ScalarField,
    j: usize,
    k: usize,
    f: &[f64],
) -> Result<Vec<Option<f64>>> {
    if !phi.is_closed() {
        return contract("commutator residual needs a closed-form weight");
    }
    check_node_array(grid, f, j)?;
    check_node_array(grid, f, k)?;
    let a = delta(grid, &forward_diff(grid, f, k)?, phi, j)?;
    let b = forward_diff(grid, &delta(grid, f, phi, j)?, k)?;
    let depth = grid.mask_depth();
    (0..grid.node_count())
        .map(|x| {
            if !grid.is_masked(x) || depth[x] < 3 {
                return Ok(None);
            }
            let hjk = phi.hessian_at_node(grid, x)?.value.get(j, k);
            Ok(Some((a[x] - b[x] + hjk * f[x]).abs()))
        })
        .collect()
}

/// Max of [`commutator_defect`] over the nodes of mask depth ≥ 3.
pub fn commutator_residual(grid: &GridDomain, phi: &ScalarField, j: usize, k: usize, f: &[f64]) -> Result<f64> {
    Ok(commutator_defect(grid, phi, j, k, f)?
        .into_iter()
        .flatten()
        .fold(0.0, f64::max))
}

/// `Σ_J Σ_{ℓ₁,ℓ₂} ε(ℓ₁J,I₁) ε(ℓ₂J,I₂) H[ℓ₁][ℓ₂] η_{I₁} η_{I₂}` evaluated by
/// brute force over raw tuples; `eta` is indexed by lexicographic `I`.
pub fn hessian_quadratic_form(hess: &SymMatrix, k: usize, eta: &[f64]) -> Result<f64> {
    let n = hess.dim();
    let targets = multi_indices(n, k);
    if k == 0 || eta.len() != targets.len() {
        return contract("eta must have C(n,k) entries with k >= 1");
    }
    let mut acc = 0.0;
    for j in multi_indices(n, k - 1) {
        for l1 in 0..n {
            let mut t1 = vec![l1];
            t1.extend_from_slice(j.as_slice());
            for l2 in 0..n {
                let mut t2 = vec![l2];
                t2.extend_from_slice(j.as_slice());
                for (a, i1) in targets.iter().enumerate() {
                    let s1 = sign(&t1, i1.as_slice())?;
                    if s1 == 0 {
                        continue;
                    }
                    for (b, i2) in targets.iter().enumerate() {
                        let s2 = sign(&t2, i2.as_slice())?;
                        if s2 != 0 {
                            acc += (s1 * s2) as f64 * hess.get(l1, l2) * eta[a] * eta[b];
                        }
                    }
                }
            }
        }
    }
    Ok(acc)
}

/// `⟨D^[k]_H η, η⟩`, the same quadratic form through the extension matrix.
pub fn extension_quadratic_form(hess: &SymMatrix, k: usize, eta: &[f64]) -> Result<f64> {
    let ext = extend_endomorphism(hess, k)?;
    if eta.len() != ext.basis().len() {
        return contract("eta must have C(n,k) entries");
    }
    Ok(ext.matrix().quadratic_form(eta))
}

/// Cochain of the angular form `dθ` in the `(x1, x2)` plane: each edge
/// carries the wrapped angle increment divided by its length. Exactly closed
/// on every cell that does not contain the axis `x1 = x2 = 0`.
pub fn angular_form(space: &FormSpace) -> Result<DiscreteForm> {
    let grid = &space.grid;
    if space.degree != 1 || grid.dim() < 2 {
        return contract("the angular form is a 1-form in dimension at least 2");
    }
    let theta = |node: usize| {
        let x = grid.coords(node);
        x[1].atan2(x[0])
    };
    let h = grid.spacing();
    let mut form = space.zeros();
    for &(c, x) in space.dofs() {
        let axis = space.basis.indices()[c].as_slice()[0];
        if axis > 1 {
            continue;
        }
        let y = grid.neighbor(x, axis, 1).expect("active edge");
        let mut dt = theta(y) - theta(x);
        if dt > std::f64::consts::PI {
            dt -= std::f64::consts::TAU;
        } else if dt < -std::f64::consts::PI {
            dt += std::f64::consts::TAU;
        }
        form.components[c][x] = dt / h[axis];
    }
    Ok(form)
}
