//! Exterior-algebra combinatorics and the derivation extension of a symmetric
//! endomorphism to `Λ^k`.
//!
//! Axes are 0-based throughout the API; `Display` prints them 1-based to match
//! the usual `dx^1 ∧ dx^2` notation. All `Λ^k` matrix layouts are indexed by
//! multi-indices in lexicographic order.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// A strictly increasing tuple of axes indexing the basis form `dx^I`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(entries: Vec<usize>) -> Result<Self> {
        if entries.windows(2).any(|w| w[0] >= w[1]) {
            return contract(format!("multi-index {entries:?} is not strictly increasing"));
        }
        Ok(MultiIndex(entries))
    }

    pub fn empty() -> Self {
        MultiIndex(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, axis: usize) -> bool {
        self.0.binary_search(&axis).is_ok()
    }

    /// Inserts `axis` and returns the sorted index together with
    /// `ε(axis·J, I)`, the sign picked up moving `axis` to its sorted slot.
    /// `None` if the axis is already present.
    pub fn insert(&self, axis: usize) -> Option<(MultiIndex, i8)> {
        match self.0.binary_search(&axis) {
            Ok(_) => None,
            Err(pos) => {
                let mut v = self.0.clone();
                v.insert(pos, axis);
                let sign = if pos % 2 == 0 { 1 } else { -1 };
                Some((MultiIndex(v), sign))
            }
        }
    }

    /// Removes the entry at `pos`; the sign `ε(I[pos]·J, I)` is `(-1)^pos`.
    pub fn remove_at(&self, pos: usize) -> (MultiIndex, usize, i8) {
        let mut v = self.0.clone();
        let axis = v.remove(pos);
        (MultiIndex(v), axis, if pos.is_multiple_of(2) { 1 } else { -1 })
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|&i| i + 1).collect()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self.0.iter().map(|i| format!("dx{}", i + 1)).collect();
        f.write_str(&parts.join("^"))
    }
}

/// Sign of the permutation taking `i2` to `i1`; zero when `i1` is not a
/// permutation of `i2` (including repeated entries). `i1` need not be sorted.
pub fn sign(i1: &[usize], i2: &[usize]) -> Result<i8> {
    if i1.len() != i2.len() {
        return contract(format!(
            "sign: length mismatch {} vs {}",
            i1.len(),
            i2.len()
        ));
    }
    let mut perm = Vec::with_capacity(i1.len());
    for a in i1 {
        match i2.iter().position(|b| b == a) {
            Some(p) if !perm.contains(&p) => perm.push(p),
            _ => return Ok(0),
        }
    }
    let mut inversions = 0usize;
    for i in 0..perm.len() {
        for j in i + 1..perm.len() {
            if perm[i] > perm[j] {
                inversions += 1;
            }
        }
    }
    Ok(if inversions.is_multiple_of(2) { 1 } else { -1 })
}

/// All `C(n, k)` strictly increasing `k`-tuples over `0..n`, lexicographic.
/// Empty when `k > n`.
pub fn multi_indices(n: usize, k: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(MultiIndex(cur.clone()));
        // advance to the next combination
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < n - k + i {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Lexicographic basis of `Λ^k R^n` with reverse lookup.
#[derive(Clone, Debug)]
pub struct FormBasis {
    n: usize,
    k: usize,
    indices: Vec<MultiIndex>,
    lookup: HashMap<MultiIndex, usize>,
}

impl FormBasis {
    pub fn new(n: usize, k: usize) -> Self {
        let indices = multi_indices(n, k);
        let lookup = indices
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        FormBasis {
            n,
            k,
            indices,
            lookup,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn position(&self, index: &MultiIndex) -> Option<usize> {
        self.lookup.get(index).copied()
    }
}

/// Real symmetric `n × n` matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Rejects input that is not exactly symmetric.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return contract(format!("expected {} entries, got {}", n * n, data.len()));
        }
        for i in 0..n {
            for j in i + 1..n {
                if data[i * n + j] != data[j * n + i] {
                    return contract(format!("matrix is not symmetric at ({i}, {j})"));
                }
            }
        }
        Ok(SymMatrix { n, data })
    }

    /// Averages the input with its transpose.
    pub fn symmetrized(n: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return contract(format!("expected {} entries, got {}", n * n, data.len()));
        }
        for i in 0..n {
            for j in i + 1..n {
                let avg = 0.5 * (data[i * n + j] + data[j * n + i]);
                data[i * n + j] = avg;
                data[j * n + i] = avg;
            }
        }
        Ok(SymMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return contract("rows must form a square matrix");
        }
        SymMatrix::new(n, rows.concat())
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = SymMatrix::zeros(n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Rank-one `v vᵀ`.
    pub fn outer(v: &[f64]) -> Self {
        let n = v.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = v[i] * v[j];
            }
        }
        SymMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, c: f64) -> Self {
        SymMatrix {
            n: self.n,
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &SymMatrix) -> Result<Self> {
        if self.n != other.n {
            return contract("dimension mismatch in matrix sum");
        }
        Ok(SymMatrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + c * b)
                .collect(),
        })
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// `vᵀ A v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            acc += v[i] * row.iter().zip(v).map(|(a, x)| a * x).sum::<f64>();
        }
        acc
    }

    /// Max absolute row sum; an upper bound for the spectral norm.
    pub fn norm_bound(&self) -> f64 {
        (0..self.n)
            .map(|i| self.data[i * self.n..(i + 1) * self.n].iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Eigenvalues in ascending order (cyclic Jacobi rotations).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev = jacobi_eigenvalues(self.n, self.data.clone());
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }
}

fn jacobi_eigenvalues(n: usize, mut a: Vec<f64>) -> Vec<f64> {
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// The derivation extension `D^[k]` of a symmetric matrix acting on `Λ^k`.
#[derive(Clone, Debug)]
pub struct ExtendedEndomorphism {
    basis: FormBasis,
    matrix: SymMatrix,
}

impl ExtendedEndomorphism {
    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn basis(&self) -> &FormBasis {
        &self.basis
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.matrix.eigenvalues()
    }
}

/// Entry `(I1, I2)` is `Σ_{|J|=k-1} Σ_{l1,l2} ε(l1 J, I1) ε(l2 J, I2) A[l1][l2]`.
pub fn extend_endomorphism(a: &SymMatrix, k: usize) -> Result<ExtendedEndomorphism> {
    let n = a.dim();
    if k == 0 || k > n {
        return contract(format!("extend_endomorphism: need 1 <= k <= n, got k={k}, n={n}"));
    }
    let basis = FormBasis::new(n, k);
    let dim = basis.len();
    let mut data = vec![0.0; dim * dim];
    for j in multi_indices(n, k - 1) {
        let slots: Vec<(usize, usize, f64)> = (0..n)
            .filter_map(|l| {
                j.insert(l).map(|(i, s)| {
                    let pos = basis.position(&i).expect("index in basis");
                    (l, pos, f64::from(s))
                })
            })
            .collect();
        for &(l1, i1, s1) in &slots {
            for &(l2, i2, s2) in &slots {
                data[i1 * dim + i2] += s1 * s2 * a.get(l1, l2);
            }
        }
    }
    Ok(ExtendedEndomorphism {
        basis,
        matrix: SymMatrix { n: dim, data },
    })
}

/// `λ_1 + … + λ_k`, the sum of the `k` smallest eigenvalues; equal to the
/// least eigenvalue of `D^[k]`.
pub fn lambda1_k(a: &SymMatrix, k: usize) -> Result<f64> {
    if k == 0 || k > a.dim() {
        return contract(format!("lambda1_k: need 1 <= k <= n, got k={k}, n={}", a.dim()));
    }
    Ok(a.eigenvalues().iter().take(k).sum())
}
