use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::expr::Expr;
use crate::error::{contract, Result};

pub const MAX_DIM: usize = 4;

/// Serializable description of a grid box (mask excluded).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
}

/// Uniform axis-aligned node grid over a box, with a node mask selecting the
/// discrete model of an open domain. Nodes are numbered lexicographically in
/// their integer coordinates (last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct GridDomain {
    spec: GridSpec,
    h: Vec<f64>,
    shape: Vec<usize>,
    strides: Vec<usize>,
    mask: Vec<bool>,
}

impl GridDomain {
    /// A fully masked box.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        let n = lower.len();
        if n == 0 || n > MAX_DIM {
            return contract(format!("grid dimension must be in 1..={MAX_DIM}, got {n}"));
        }
        if upper.len() != n || cells.len() != n {
            return contract("lower, upper and cells must have equal length");
        }
        if cells.contains(&0) {
            return contract("every axis needs at least one cell");
        }
        let h: Vec<f64> = (0..n).map(|a| (upper[a] - lower[a]) / cells[a] as f64).collect();
        if h.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return contract("grid spacing must be positive and finite");
        }
        let shape: Vec<usize> = cells.iter().map(|c| c + 1).collect();
        let mut strides = vec![1usize; n];
        for a in (0..n - 1).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        let count = shape.iter().product();
        Ok(GridDomain {
            spec: GridSpec { lower, upper, cells },
            h,
            shape,
            strides,
            mask: vec![true; count],
        })
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        GridDomain::new(spec.lower.clone(), spec.upper.clone(), spec.cells.clone())
    }

    /// Symmetric box `[-half, half]^n` with `cells` cells per axis.
    pub fn centered(n: usize, half: f64, cells: usize) -> Result<Self> {
        GridDomain::new(vec![-half; n], vec![half; n], vec![cells; n])
    }

    pub fn with_mask(mut self, inside: impl Fn(&[f64]) -> bool) -> Result<Self> {
        for node in 0..self.node_count() {
            self.mask[node] = inside(&self.coords(node));
        }
        self.check_mask()?;
        Ok(self)
    }

    /// Masks the nodes where `expr > 0`. Evaluation failures count as outside.
    pub fn with_mask_expr(self, expr: &Expr) -> Result<Self> {
        self.with_mask(|x| expr.eval(x).map(|v| v > 0.0).unwrap_or(false))
    }

    pub fn with_mask_vec(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.node_count() {
            return contract("mask length does not match node count");
        }
        self.mask = mask;
        self.check_mask()?;
        Ok(self)
    }

    fn check_mask(&self) -> Result<()> {
        if !self.mask.iter().any(|&m| m) {
            return contract("mask selects no node");
        }
        let components = self.components();
        if components > 1 {
            log::warn!("mask has {components} connected components; b0 will exceed 1");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn min_spacing(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Volume of one grid cell, `Π h_a`.
    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn node_count(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_masked(&self, node: usize) -> bool {
        self.mask[node]
    }

    pub fn masked_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn multi(&self, node: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.shape)
            .map(|(s, d)| (node / s) % d)
            .collect()
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        self.multi(node)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.spec.lower[a] + i as f64 * self.h[a])
            .collect()
    }

    /// Node displaced by `offset` along `axis`, if it lies in the box.
    pub fn neighbor(&self, node: usize, axis: usize, offset: isize) -> Option<usize> {
        let i = (node / self.strides[axis]) % self.shape[axis];
        let j = i as isize + offset;
        if j < 0 || j >= self.shape[axis] as isize {
            None
        } else {
            Some((node as isize + offset * self.strides[axis] as isize) as usize)
        }
    }

    /// Masked neighbor, `None` when outside the box or the mask.
    pub fn masked_neighbor(&self, node: usize, axis: usize, offset: isize) -> Option<usize> {
        self.neighbor(node, axis, offset).filter(|&m| self.mask[m])
    }

    /// The node coinciding with `point` (to 1e-9 of the spacing).
    pub fn locate(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.dim() {
            return None;
        }
        let mut node = 0;
        for a in 0..self.dim() {
            let t = (point[a] - self.spec.lower[a]) / self.h[a];
            let i = t.round();
            if (t - i).abs() > 1e-9 || i < 0.0 || i >= self.shape[a] as f64 {
                return None;
            }
            node += i as usize * self.strides[a];
        }
        Some(node)
    }

    /// Connected components of the mask under axis-neighbor adjacency.
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.node_count()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in self.masked_nodes() {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for a in 0..self.dim() {
                    for off in [-1, 1] {
                        if let Some(w) = self.masked_neighbor(v, a, off) {
                            if !seen[w] {
                                seen[w] = true;
                                queue.push_back(w);
                            }
                        }
                    }
                }
            }
        }
        count
    }

    /// Index-space L∞ distance from each node to the nearest node that is
    /// unmasked or outside the box. Unmasked nodes get 0.
    pub fn mask_depth(&self) -> Vec<usize> {
        let n = self.dim();
        let mut depth = vec![usize::MAX; self.node_count()];
        let mut queue = VecDeque::new();
        for node in 0..self.node_count() {
            let idx = self.multi(node);
            if !self.mask[node] {
                depth[node] = 0;
                queue.push_back(node);
            } else if idx.iter().zip(&self.shape).any(|(&i, &s)| i == 0 || i + 1 == s) {
                // the virtual outside ring is one step away
                depth[node] = 1;
                queue.push_back(node);
            }
        }
        let offsets = king_offsets(n);
        while let Some(v) = queue.pop_front() {
            let idx = self.multi(v);
            for off in &offsets {
                let mut w = 0usize;
                let mut ok = true;
                for a in 0..n {
                    let j = idx[a] as isize + off[a];
                    if j < 0 || j >= self.shape[a] as isize {
                        ok = false;
                        break;
                    }
                    w += j as usize * self.strides[a];
                }
                if ok && depth[w] > depth[v] + 1 {
                    depth[w] = depth[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        depth
    }

    /// SHA-256 over the box description and the mask.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for a in 0..self.dim() {
            hasher.update(self.spec.lower[a].to_le_bytes());
            hasher.update(self.spec.upper[a].to_le_bytes());
            hasher.update((self.spec.cells[a] as u64).to_le_bytes());
        }
        let bits: Vec<u8> = self.mask.iter().map(|&m| m as u8).collect();
        hasher.update(&bits);
        hex::encode(hasher.finalize())
    }
}

fn king_offsets(n: usize) -> Vec<Vec<isize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v: Vec<isize>| {
                [-1, 0, 1].into_iter().map(move |d| {
                    let mut w = v.clone();
                    w.push(d);
                    w
                })
            })
            .collect();
    }
    out.retain(|v| v.iter().any(|&d| d != 0));
    out
}
