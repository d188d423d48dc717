//! Scalar fields on `R^n`: closed-form expressions with exact derivatives, or
//! values tabulated on a masked grid with finite-difference derivatives.

mod expr;
mod grid;
pub mod io;
mod parser;

use std::sync::Arc;

pub use expr::{DomainErrorKind, EvalError, Expr, Func};
pub use grid::{GridDomain, GridSpec, MAX_DIM};
pub use parser::{parse, ParseError, ParseErrorKind};

use crate::error::{contract, Error, Result};
use crate::multilinear::SymMatrix;

/// A derivative evaluated at a grid node. `flagged` marks nodes where the
/// centered stencil left the mask and a one-sided stencil was used; such
/// nodes are excluded from min/max reductions.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeDerivative<T> {
    pub value: T,
    pub flagged: bool,
}

/// Closed-form field with pre-differentiated gradient and Hessian trees.
#[derive(Clone, Debug)]
pub struct ClosedField {
    n: usize,
    expr: Expr,
    grad: Vec<Expr>,
    /// Upper triangle, row-major.
    hess: Vec<Expr>,
}

impl ClosedField {
    pub fn new(expr: Expr, n: usize) -> Result<Self> {
        if expr.arity() > n {
            return contract(format!(
                "expression uses x{} but the field dimension is {n}",
                expr.arity()
            ));
        }
        let grad: Vec<Expr> = (0..n).map(|i| expr.derivative(i)).collect();
        let mut hess = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                hess.push(grad[i].derivative(j));
            }
        }
        Ok(ClosedField { n, expr, grad, hess })
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.expr.eval(x)?)
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.grad.iter().map(|g| Ok(g.eval(x)?)).collect()
    }

    pub fn hessian(&self, x: &[f64]) -> Result<SymMatrix> {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        let mut t = 0;
        for i in 0..n {
            for j in i..n {
                let v = self.hess[t].eval(x)?;
                data[i * n + j] = v;
                data[j * n + i] = v;
                t += 1;
            }
        }
        SymMatrix::symmetrized(n, data)
    }
}

#[derive(Clone, Debug)]
pub struct SampledField {
    grid: Arc<GridDomain>,
    /// One value per grid node; entries outside the mask are zero.
    values: Vec<f64>,
}

// (offset, weight) stencils in units of 1/h and 1/h^2.
const D1_CENTRAL: &[(isize, f64)] = &[(-1, -0.5), (1, 0.5)];
const D1_FORWARD: &[(isize, f64)] = &[(0, -1.5), (1, 2.0), (2, -0.5)];
const D1_BACKWARD: &[(isize, f64)] = &[(0, 1.5), (-1, -2.0), (-2, 0.5)];
const D2_CENTRAL: &[(isize, f64)] = &[(-1, 1.0), (0, -2.0), (1, 1.0)];
const D2_FORWARD: &[(isize, f64)] = &[(0, 2.0), (1, -5.0), (2, 4.0), (3, -1.0)];
const D2_BACKWARD: &[(isize, f64)] = &[(0, 2.0), (-1, -5.0), (-2, 4.0), (-3, -1.0)];

impl SampledField {
    pub fn new(grid: Arc<GridDomain>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return contract("sampled field length does not match node count");
        }
        for node in 0..values.len() {
            if grid.is_masked(node) {
                if !values[node].is_finite() {
                    return contract(format!("sampled value at node {node} is not finite"));
                }
            } else {
                values[node] = 0.0;
            }
        }
        Ok(SampledField { grid, values })
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn apply_1d(&self, node: usize, axis: usize, stencil: &[(isize, f64)]) -> Option<f64> {
        let mut acc = 0.0;
        for &(off, w) in stencil {
            let m = self.grid.masked_neighbor(node, axis, off)?;
            acc += w * self.values[m];
        }
        Some(acc)
    }

    fn first(&self, node: usize, axis: usize) -> Option<(f64, bool)> {
        let h = self.grid.spacing()[axis];
        if let Some(v) = self.apply_1d(node, axis, D1_CENTRAL) {
            return Some((v / h, false));
        }
        [D1_FORWARD, D1_BACKWARD]
            .iter()
            .find_map(|s| self.apply_1d(node, axis, s))
            .map(|v| (v / h, true))
    }

    fn second(&self, node: usize, axis: usize) -> Option<(f64, bool)> {
        let h = self.grid.spacing()[axis];
        if let Some(v) = self.apply_1d(node, axis, D2_CENTRAL) {
            return Some((v / (h * h), false));
        }
        [D2_FORWARD, D2_BACKWARD]
            .iter()
            .find_map(|s| self.apply_1d(node, axis, s))
            .map(|v| (v / (h * h), true))
    }

    fn mixed(&self, node: usize, a: usize, b: usize) -> Option<(f64, bool)> {
        let (ha, hb) = (self.grid.spacing()[a], self.grid.spacing()[b]);
        let kinds = [D1_CENTRAL, D1_FORWARD, D1_BACKWARD];
        for (ia, sa) in kinds.iter().enumerate() {
            for (ib, sb) in kinds.iter().enumerate() {
                let mut acc = 0.0;
                let mut ok = true;
                'outer: for &(oa, wa) in *sa {
                    for &(ob, wb) in *sb {
                        match self
                            .grid
                            .masked_neighbor(node, a, oa)
                            .and_then(|m| self.grid.masked_neighbor(m, b, ob))
                        {
                            Some(m) => acc += wa * wb * self.values[m],
                            None => {
                                ok = false;
                                break 'outer;
                            }
                        }
                    }
                }
                if ok {
                    return Some((acc / (ha * hb), ia + ib > 0));
                }
            }
        }
        None
    }

    pub fn grad_at_node(&self, node: usize) -> Result<NodeDerivative<Vec<f64>>> {
        if !self.grid.is_masked(node) {
            return Err(Error::Stencil { node });
        }
        let mut flagged = false;
        let mut g = Vec::with_capacity(self.grid.dim());
        for axis in 0..self.grid.dim() {
            let (v, f) = self.first(node, axis).ok_or(Error::Stencil { node })?;
            flagged |= f;
            g.push(v);
        }
        Ok(NodeDerivative { value: g, flagged })
    }

    pub fn hessian_at_node(&self, node: usize) -> Result<NodeDerivative<SymMatrix>> {
        if !self.grid.is_masked(node) {
            return Err(Error::Stencil { node });
        }
        let n = self.grid.dim();
        let mut data = vec![0.0; n * n];
        let mut flagged = false;
        for i in 0..n {
            let (v, f) = self.second(node, i).ok_or(Error::Stencil { node })?;
            flagged |= f;
            data[i * n + i] = v;
            for j in i + 1..n {
                let (v, f) = self.mixed(node, i, j).ok_or(Error::Stencil { node })?;
                flagged |= f;
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Ok(NodeDerivative {
            value: SymMatrix::symmetrized(n, data)?,
            flagged,
        })
    }
}

/// A scalar field on `R^n`.
#[derive(Clone, Debug)]
pub enum ScalarField {
    Closed(ClosedField),
    Sampled(SampledField),
}

impl ScalarField {
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        Ok(ScalarField::Closed(ClosedField::new(parse(text, n)?, n)?))
    }

    pub fn closed(expr: Expr, n: usize) -> Result<Self> {
        Ok(ScalarField::Closed(ClosedField::new(expr, n)?))
    }

    pub fn constant(c: f64, n: usize) -> Self {
        ScalarField::Closed(ClosedField::new(Expr::Const(c), n).expect("constant has arity 0"))
    }

    pub fn dim(&self) -> usize {
        match self {
            ScalarField::Closed(c) => c.n,
            ScalarField::Sampled(s) => s.grid.dim(),
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, ScalarField::Closed(_))
    }

    fn node_of(s: &SampledField, x: &[f64]) -> Result<usize> {
        s.grid
            .locate(x)
            .filter(|&m| s.grid.is_masked(m))
            .ok_or_else(|| Error::OffGrid { point: x.to_vec() })
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        match self {
            ScalarField::Closed(c) => c.value(x),
            ScalarField::Sampled(s) => Ok(s.values[Self::node_of(s, x)?]),
        }
    }

    /// Exact for closed fields; second-order finite differences for sampled
    /// ones (the point must be a masked node).
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            ScalarField::Closed(c) => c.grad(x),
            ScalarField::Sampled(s) => Ok(s.grad_at_node(Self::node_of(s, x)?)?.value),
        }
    }

    pub fn hessian(&self, x: &[f64]) -> Result<SymMatrix> {
        match self {
            ScalarField::Closed(c) => c.hessian(x),
            ScalarField::Sampled(s) => Ok(s.hessian_at_node(Self::node_of(s, x)?)?.value),
        }
    }

    fn check_grid(&self, grid: &GridDomain) -> Result<()> {
        if self.dim() != grid.dim() {
            return Err(Error::GridMismatch(format!(
                "field dimension {} vs grid dimension {}",
                self.dim(),
                grid.dim()
            )));
        }
        if let ScalarField::Sampled(s) = self {
            if s.grid.as_ref() != grid {
                return Err(Error::GridMismatch("sampled field lives on another grid".into()));
            }
        }
        Ok(())
    }

    /// Values at every node; zero outside the mask.
    pub fn sample(&self, grid: &GridDomain) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        match self {
            ScalarField::Sampled(s) => Ok(s.values.clone()),
            ScalarField::Closed(c) => {
                let mut out = vec![0.0; grid.node_count()];
                for node in grid.masked_nodes() {
                    out[node] = c.value(&grid.coords(node))?;
                }
                Ok(out)
            }
        }
    }

    pub fn to_sampled(&self, grid: &Arc<GridDomain>) -> Result<SampledField> {
        SampledField::new(grid.clone(), self.sample(grid)?)
    }

    pub fn grad_at_node(&self, grid: &GridDomain, node: usize) -> Result<NodeDerivative<Vec<f64>>> {
        self.check_grid(grid)?;
        match self {
            ScalarField::Closed(c) => Ok(NodeDerivative {
                value: c.grad(&grid.coords(node))?,
                flagged: false,
            }),
            ScalarField::Sampled(s) => s.grad_at_node(node),
        }
    }

    pub fn hessian_at_node(&self, grid: &GridDomain, node: usize) -> Result<NodeDerivative<SymMatrix>> {
        self.check_grid(grid)?;
        match self {
            ScalarField::Closed(c) => Ok(NodeDerivative {
                value: c.hessian(&grid.coords(node))?,
                flagged: false,
            }),
            ScalarField::Sampled(s) => s.hessian_at_node(node),
        }
    }
}

impl From<SampledField> for ScalarField {
    fn from(s: SampledField) -> Self {
        ScalarField::Sampled(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_derivatives() {
        let f = ScalarField::parse("abs2", 2).unwrap();
        assert_eq!(f.grad(&[1.0, 2.0]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(f.hessian(&[0.3, -0.7]).unwrap(), SymMatrix::identity(2).scaled(2.0));
        let c = ScalarField::parse("3.5", 3).unwrap();
        assert_eq!(c.grad(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 3]);
        let m = ScalarField::parse("x1*x2", 2).unwrap();
        assert_eq!(
            m.hessian(&[0.4, 0.9]).unwrap(),
            SymMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
        );
    }

    #[test]
    fn log_barrier_hessian_at_origin() {
        // hand differentiation: -log(1-r^2) = r^2 + r^4/2 + ..., so Hess(0) = 2I
        let f = ScalarField::parse("-log(1 - abs2)", 3).unwrap();
        let h = f.hessian(&[0.0; 3]).unwrap();
        assert_eq!(h, SymMatrix::identity(3).scaled(2.0));
    }

    #[test]
    fn arity_is_checked() {
        assert!(ScalarField::closed(Expr::Var(2), 2).is_err());
    }

    #[test]
    fn sampled_derivatives_of_quadratics_are_exact() {
        // second-order stencils reproduce quadratics exactly, one-sided included
        let grid = Arc::new(GridDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![8, 8]).unwrap());
        let f = ScalarField::parse("x1^2 + 3*x1*x2 - x2^2 + x1", 2).unwrap();
        let s: ScalarField = f.to_sampled(&grid).unwrap().into();
        let mut flagged = 0;
        for node in grid.masked_nodes() {
            let x = grid.coords(node);
            let g = s.grad_at_node(&grid, node).unwrap();
            let exact = f.grad(&x).unwrap();
            for a in 0..2 {
                assert!((g.value[a] - exact[a]).abs() < 1e-12);
            }
            let h = s.hessian_at_node(&grid, node).unwrap();
            assert!((h.value.get(0, 0) - 2.0).abs() < 1e-10);
            assert!((h.value.get(0, 1) - 3.0).abs() < 1e-10);
            assert!((h.value.get(1, 1) + 2.0).abs() < 1e-10);
            flagged += h.flagged as usize;
        }
        // boundary ring (32 nodes) uses one-sided stencils
        assert_eq!(flagged, 32);
    }

    #[test]
    fn sampled_point_lookup() {
        let grid = Arc::new(GridDomain::centered(1, 1.0, 4).unwrap());
        let s: ScalarField = ScalarField::parse("x1^2", 1)
            .unwrap()
            .to_sampled(&grid)
            .unwrap()
            .into();
        assert_eq!(s.value(&[0.5]).unwrap(), 0.25);
        assert!(matches!(s.value(&[0.2]), Err(Error::OffGrid { .. })));
        assert!((s.grad(&[0.5]).unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isolated_node_has_no_stencil() {
        let grid = Arc::new(
            GridDomain::centered(1, 1.0, 4)
                .unwrap()
                .with_mask(|x| x[0].abs() < 0.1)
                .unwrap(),
        );
        let s = ScalarField::constant(1.0, 1).to_sampled(&grid).unwrap();
        assert!(matches!(s.grad_at_node(2), Err(Error::Stencil { node: 2 })));
    }
}
