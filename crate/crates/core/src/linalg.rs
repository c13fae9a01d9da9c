//! Sparse storage and direct solvers used by the time steppers.
//!
//! Discretized PDE operators are banded once the unknowns are reordered, so
//! [`LinearSolver`] runs a reverse Cuthill-McKee pass over the sparsity
//! pattern and switches to a banded LU with partial pivoting whenever the
//! resulting bandwidth is small. Dense LU is the fallback.

use std::collections::VecDeque;

use nalgebra::LU;

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Compressed sparse row copy of a dense matrix, used for fast products.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_dense(m: &Matrix) -> Self {
        let (nrows, ncols) = m.shape();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..nrows {
            for j in 0..ncols {
                let v = m[(i, j)];
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn mul_vec(&self, x: &Vector) -> Vector {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = Vector::zeros(self.nrows);
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
        y
    }

    /// `y = Mᵀ x`.
    pub fn tr_mul_vec(&self, x: &Vector) -> Vector {
        debug_assert_eq!(x.len(), self.nrows);
        let mut y = Vector::zeros(self.ncols);
        for i in 0..self.nrows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.values[k] * xi;
            }
        }
        y
    }
}

/// Reverse Cuthill-McKee ordering of the symmetrized pattern of `m`.
///
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(m: &Matrix) -> Vec<usize> {
    let n = m.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && (m[(i, j)] != 0.0 || m[(j, i)] != 0.0) {
                adj[i].push(j);
            }
        }
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    for list in adj.iter_mut() {
        list.sort_by_key(|&v| (degree[v], v));
    }

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        // Start each component from an unvisited node of minimum degree.
        let start = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
            .expect("unvisited node exists");
        let mut queue = VecDeque::new();
        queue.push_back(start);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &nb in &adj[v] {
                if !visited[nb] {
                    visited[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Lower and upper bandwidth of `m` under the ordering `perm`.
pub fn bandwidth(m: &Matrix, perm: &[usize]) -> (usize, usize) {
    let n = m.nrows();
    let mut kl = 0;
    let mut ku = 0;
    for i in 0..n {
        for j in 0..n {
            if m[(perm[i], perm[j])] != 0.0 {
                if i > j {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
    }
    (kl, ku)
}

/// Banded LU factorization with partial pivoting.
///
/// Row `i` stores columns `i - kl ..= i + kl + ku`; the extra `kl` upper
/// diagonals absorb the fill produced by row interchanges.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku_ext: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    inv_diag: Vec<f64>,
}

impl BandLu {
    pub fn factor(m: &Matrix, kl: usize, ku: usize) -> Result<Self> {
        let n = m.nrows();
        let ku_ext = ku + kl;
        let width = kl + ku_ext + 1;
        let mut lu = Self {
            n,
            kl,
            ku_ext,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
            inv_diag: vec![0.0; n],
        };
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + ku).min(n - 1);
            for j in lo..=hi {
                *lu.at_mut(i, j) = m[(i, j)];
            }
        }

        let mut max_pivot: f64 = 0.0;
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.at(k, k).abs();
            for i in k + 1..=last_row {
                let v = lu.at(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Numerical(format!(
                    "banded LU: exactly singular pivot at column {k}"
                )));
            }
            lu.pivots[k] = p;
            let last_col = (k + ku_ext).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = lu.at(k, j);
                    let b = lu.at(p, j);
                    *lu.at_mut(k, j) = b;
                    *lu.at_mut(p, j) = a;
                }
            }
            let pivot = lu.at(k, k);
            max_pivot = max_pivot.max(pivot.abs());
            min_pivot = min_pivot.min(pivot.abs());
            for i in k + 1..=last_row {
                let l = lu.at(i, k) / pivot;
                *lu.at_mut(i, k) = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let ukj = lu.at(k, j);
                        *lu.at_mut(i, j) -= l * ukj;
                    }
                }
            }
        }
        check_pivot_ratio(min_pivot, max_pivot)?;
        lu.inv_diag = (0..n).map(|k| 1.0 / lu.at(k, k)).collect();
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku_ext);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.idx(i, j);
        &mut self.data[k]
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let (kl, w) = (self.kl, self.width);
        let data = &self.data[..];
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    // column k of row i sits at offset k + kl - i
                    b[i] -= data[i * w + k + kl - i] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let row = &data[i * w..(i + 1) * w];
            let last = (i + self.ku_ext).min(n - 1);
            let mut acc = b[i];
            for (off, &bj) in row[kl + 1..kl + 1 + (last - i)].iter().zip(&b[i + 1..=last]) {
                acc -= off * bj;
            }
            b[i] = acc * self.inv_diag[i];
        }
    }
}

fn check_pivot_ratio(min_pivot: f64, max_pivot: f64) -> Result<()> {
    if !(min_pivot.is_finite() && max_pivot.is_finite()) || min_pivot <= 1e-14 * max_pivot {
        return Err(Error::Numerical(format!(
            "LU factorization is numerically singular (pivot ratio {:.3e})",
            min_pivot / max_pivot
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
enum SolverKind {
    Dense {
        lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        lu_t: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        /// Explicit inverse for small systems, where a product beats the
        /// triangular solves.
        inv: Option<Matrix>,
    },
    Banded {
        perm: Vec<usize>,
        fwd: BandLu,
        trans: BandLu,
    },
}

/// Largest dense system solved through an explicit inverse.
const SMALL_DENSE: usize = 64;

/// Direct solver for `M x = b` and `Mᵀ x = b` with a fixed matrix `M`.
#[derive(Clone, Debug)]
pub struct LinearSolver {
    n: usize,
    kind: SolverKind,
}

impl LinearSolver {
    /// Factors `m`, choosing a banded factorization when it pays off.
    pub fn new(m: &Matrix) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(Error::Usage(format!(
                "linear solver needs a square matrix, got {}x{}",
                n,
                m.ncols()
            )));
        }
        if n == 0 {
            return Err(Error::Usage("linear solver on an empty matrix".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("matrix has non-finite entries".into()));
        }
        if n >= 48 {
            let perm = reverse_cuthill_mckee(m);
            let (kl, ku) = bandwidth(m, &perm);
            if (2 * kl + ku + 1) * 4 < n {
                let permuted = Matrix::from_fn(n, n, |i, j| m[(perm[i], perm[j])]);
                let fwd = BandLu::factor(&permuted, kl, ku)?;
                let trans = BandLu::factor(&permuted.transpose(), ku, kl)?;
                return Ok(Self {
                    n,
                    kind: SolverKind::Banded { perm, fwd, trans },
                });
            }
        }
        let lu = m.clone().lu();
        let lu_t = m.transpose().lu();
        let u = lu.u();
        let diag = u.diagonal().map(f64::abs);
        check_pivot_ratio(diag.min(), diag.max())?;
        let inv = if n <= SMALL_DENSE {
            lu.try_inverse().filter(|m| m.iter().all(|v| v.is_finite()))
        } else {
            None
        };
        Ok(Self {
            n,
            kind: SolverKind::Dense { lu, lu_t, inv },
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_banded(&self) -> bool {
        matches!(self.kind, SolverKind::Banded { .. })
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        self.solve_impl(b, false)
    }

    pub fn solve_transpose(&self, b: &Vector) -> Vector {
        self.solve_impl(b, true)
    }

    /// Column-wise solve.
    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        if let SolverKind::Dense { lu, inv, .. } = &self.kind {
            return match inv {
                Some(inv) => inv * b,
                None => lu.solve(b).expect("factorization checked for singularity"),
            };
        }
        let mut out = Matrix::zeros(b.nrows(), b.ncols());
        for (j, col) in b.column_iter().enumerate() {
            out.set_column(j, &self.solve(&col.into_owned()));
        }
        out
    }

    pub fn solve_transpose_matrix(&self, b: &Matrix) -> Matrix {
        if let SolverKind::Dense { lu_t, inv, .. } = &self.kind {
            return match inv {
                Some(inv) => inv.tr_mul(b),
                None => lu_t.solve(b).expect("factorization checked for singularity"),
            };
        }
        let mut out = Matrix::zeros(b.nrows(), b.ncols());
        for (j, col) in b.column_iter().enumerate() {
            out.set_column(j, &self.solve_transpose(&col.into_owned()));
        }
        out
    }

    fn solve_impl(&self, b: &Vector, transpose: bool) -> Vector {
        debug_assert_eq!(b.len(), self.n);
        match &self.kind {
            SolverKind::Dense { lu, lu_t, inv } => match (inv, transpose) {
                (Some(inv), false) => inv * b,
                (Some(inv), true) => inv.tr_mul(b),
                (None, false) => lu.solve(b).expect("factorization checked for singularity"),
                (None, true) => lu_t.solve(b).expect("factorization checked for singularity"),
            },
            SolverKind::Banded { perm, fwd, trans } => {
                let mut work: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
                if transpose {
                    trans.solve_in_place(&mut work);
                } else {
                    fwd.solve_in_place(&mut work);
                }
                let mut x = Vector::zeros(self.n);
                for (i, &p) in perm.iter().enumerate() {
                    x[p] = work[i];
                }
                x
            }
        }
    }
}
