//! Finite-dimensional weighted inner-product spaces and linear maps.
//!
//! A [`SpaceSpec`] carries a symmetric positive-definite Gram matrix `G` so
//! that `(x, y) = xᵀ G y`. Every adjoint in the crate is taken with respect
//! to these weights, `L* = G_dom⁻¹ Lᵀ G_cod`, never as a plain transpose.

use std::fmt;
use std::sync::Arc;

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg::CsrMatrix;
use crate::{Matrix, Vector};

/// Seed for the power-iteration start vector.
const POWER_ITERATION_SEED: u64 = 0x005e_ed0f_1a77;

/// Role of a space in the control system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SpaceLabel {
    /// State space.
    H,
    /// Input space.
    U,
    /// Output space.
    Z,
}

impl fmt::Display for SpaceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SpaceLabel::H => "H",
            SpaceLabel::U => "U",
            SpaceLabel::Z => "Z",
        };
        f.write_str(s)
    }
}

/// A real Hilbert space `R^dim` with inner product `xᵀ G y`.
#[derive(Clone)]
pub struct SpaceSpec {
    label: SpaceLabel,
    gram: Matrix,
    gram_csr: CsrMatrix,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl fmt::Debug for SpaceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpaceSpec")
            .field("label", &self.label)
            .field("dim", &self.dim())
            .finish()
    }
}

impl SpaceSpec {
    /// Builds a space from its Gram matrix.
    ///
    /// The matrix must be symmetric to machine precision and positive
    /// definite; semidefinite weights are rejected.
    pub fn new(label: SpaceLabel, gram: Matrix) -> Result<Self> {
        let n = gram.nrows();
        if n == 0 || gram.ncols() != n {
            return Err(Error::Config(format!(
                "Gram matrix of {label} must be square and non-empty, got {}x{}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        let scale = gram.amax();
        if !scale.is_finite() || scale == 0.0 {
            return Err(Error::Config(format!("Gram matrix of {label} is zero or non-finite")));
        }
        let asym = (&gram - gram.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::Config(format!(
                "Gram matrix of {label} is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let chol = Cholesky::new(gram.clone())
            .ok_or_else(|| Error::Config(format!("Gram matrix of {label} is not positive definite")))?;
        let ldiag = chol.l_dirty().diagonal();
        let (lmin, lmax) = (ldiag.min(), ldiag.max());
        if lmin <= 0.0 || lmin * lmin <= 1e-14 * lmax * lmax {
            return Err(Error::Config(format!(
                "Gram matrix of {label} is numerically semidefinite"
            )));
        }
        let gram_csr = CsrMatrix::from_dense(&gram);
        Ok(Self {
            label,
            gram,
            gram_csr,
            chol,
        })
    }

    pub fn euclidean(label: SpaceLabel, dim: usize) -> Self {
        Self::scaled(label, dim, 1.0)
    }

    /// Space with `G = weight · I`, e.g. a uniform mesh with cell size `weight`.
    pub fn scaled(label: SpaceLabel, dim: usize, weight: f64) -> Self {
        assert!(dim > 0 && weight > 0.0, "scaled space needs dim > 0 and weight > 0");
        Self::new(label, Matrix::identity(dim, dim) * weight).expect("scaled identity is SPD")
    }

    pub fn label(&self) -> SpaceLabel {
        self.label
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    /// `(x, y)`; fails on a dimension mismatch.
    pub fn inner(&self, x: &Vector, y: &Vector) -> Result<f64> {
        check_dim("inner product", self.dim(), x.len())?;
        check_dim("inner product", self.dim(), y.len())?;
        Ok(self.dot(x, y))
    }

    /// `(x, y)` without dimension checks.
    pub fn dot(&self, x: &Vector, y: &Vector) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        x.dot(&self.gram_csr.mul_vec(y))
    }

    pub fn norm(&self, x: &Vector) -> f64 {
        self.dot(x, x).max(0.0).sqrt()
    }

    pub fn norm_squared(&self, x: &Vector) -> f64 {
        self.dot(x, x).max(0.0)
    }

    /// `G x`: maps a vector to the covector representing `(x, ·)`.
    pub fn apply_gram(&self, x: &Vector) -> Vector {
        self.gram_csr.mul_vec(x)
    }

    /// `G⁻¹ x`.
    pub fn solve_gram(&self, x: &Vector) -> Vector {
        self.chol.solve(x)
    }

    pub fn solve_gram_matrix(&self, x: &Matrix) -> Matrix {
        self.chol.solve(x)
    }

    /// Lower Cholesky factor `L` with `G = L Lᵀ`.
    pub fn cholesky_factor(&self) -> Matrix {
        self.chol.l()
    }

    /// Uniform sample from the ball of the given radius in this space's norm.
    pub fn random_in_ball<R: Rng + ?Sized>(&self, rng: &mut R, radius: f64) -> Vector {
        let n = self.dim();
        let dir = self.random_unit(rng);
        let r: f64 = rng.random::<f64>().powf(1.0 / n as f64);
        dir * (r * radius)
    }

    /// Uniform sample from the unit sphere of this space.
    pub fn random_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let n = self.dim();
        loop {
            let y = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = y.norm();
            if norm > 1e-12 {
                // w = L⁻ᵀ y has ‖w‖_G = ‖y‖
                let l = self.chol.l_dirty();
                let w = l
                    .tr_solve_lower_triangular(&(y / norm))
                    .expect("Cholesky factor is nonsingular");
                return w;
            }
        }
    }
}

type Applier = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Dense(Matrix),
    Operator { apply: Applier, adjoint: Applier },
}

/// Linear map between two weighted spaces.
#[derive(Clone)]
pub struct LinMap {
    domain: Arc<SpaceSpec>,
    codomain: Arc<SpaceSpec>,
    repr: Repr,
}

impl fmt::Debug for LinMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinMap")
            .field("domain", &self.domain)
            .field("codomain", &self.codomain)
            .field("dense", &matches!(self.repr, Repr::Dense(_)))
            .finish()
    }
}

impl LinMap {
    /// Map given by a `codomain.dim × domain.dim` matrix.
    pub fn dense(domain: Arc<SpaceSpec>, codomain: Arc<SpaceSpec>, matrix: Matrix) -> Result<Self> {
        check_dim("linear map rows", codomain.dim(), matrix.nrows())?;
        check_dim("linear map columns", domain.dim(), matrix.ncols())?;
        Ok(Self {
            domain,
            codomain,
            repr: Repr::Dense(matrix),
        })
    }

    /// Matrix-free map with a caller-supplied adjoint applier.
    pub fn operator<F, G>(domain: Arc<SpaceSpec>, codomain: Arc<SpaceSpec>, apply: F, adjoint: G) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
        G: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Self {
            domain,
            codomain,
            repr: Repr::Operator {
                apply: Arc::new(apply),
                adjoint: Arc::new(adjoint),
            },
        }
    }

    pub fn identity(space: Arc<SpaceSpec>) -> Self {
        let n = space.dim();
        Self {
            domain: space.clone(),
            codomain: space,
            repr: Repr::Dense(Matrix::identity(n, n)),
        }
    }

    pub fn zero(domain: Arc<SpaceSpec>, codomain: Arc<SpaceSpec>) -> Self {
        let m = Matrix::zeros(codomain.dim(), domain.dim());
        Self {
            domain,
            codomain,
            repr: Repr::Dense(m),
        }
    }

    pub fn domain(&self) -> &Arc<SpaceSpec> {
        &self.domain
    }

    pub fn codomain(&self) -> &Arc<SpaceSpec> {
        &self.codomain
    }

    pub fn matrix(&self) -> Option<&Matrix> {
        match &self.repr {
            Repr::Dense(m) => Some(m),
            Repr::Operator { .. } => None,
        }
    }

    /// Dense matrix of the map, assembled column by column if needed.
    pub fn to_matrix(&self) -> Matrix {
        match &self.repr {
            Repr::Dense(m) => m.clone(),
            Repr::Operator { apply, .. } => {
                let n = self.domain.dim();
                let mut out = Matrix::zeros(self.codomain.dim(), n);
                for j in 0..n {
                    let mut e = Vector::zeros(n);
                    e[j] = 1.0;
                    out.set_column(j, &apply(&e));
                }
                out
            }
        }
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        check_dim("linear map input", self.domain.dim(), x.len())?;
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &Vector) -> Vector {
        match &self.repr {
            Repr::Dense(m) => m * x,
            Repr::Operator { apply, .. } => apply(x),
        }
    }

    /// Applies the adjoint `L*` without forming it.
    pub fn apply_adjoint(&self, y: &Vector) -> Result<Vector> {
        check_dim("adjoint input", self.codomain.dim(), y.len())?;
        Ok(match &self.repr {
            Repr::Dense(m) => self.domain.solve_gram(&(m.transpose() * self.codomain.apply_gram(y))),
            Repr::Operator { adjoint, .. } => adjoint(y),
        })
    }

    /// The Gram-weighted adjoint `G_dom⁻¹ Lᵀ G_cod`.
    pub fn adjoint(&self) -> Result<LinMap> {
        match &self.repr {
            Repr::Dense(m) => {
                let rhs = m.transpose() * self.codomain.gram();
                let adj = self.domain.solve_gram_matrix(&rhs);
                LinMap::dense(self.codomain.clone(), self.domain.clone(), adj)
            }
            Repr::Operator { apply, adjoint } => Ok(LinMap {
                domain: self.codomain.clone(),
                codomain: self.domain.clone(),
                repr: Repr::Operator {
                    apply: adjoint.clone(),
                    adjoint: apply.clone(),
                },
            }),
        }
    }
}

/// Result of a power-iteration norm estimate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormEstimate {
    pub value: f64,
    /// `‖L*L x − σ² x‖ / ‖x‖` at the final iterate.
    pub residual: f64,
    pub iterations: usize,
}

/// Gram-weighted operator norm by power iteration on `L*L`.
///
/// The Rayleigh quotients of a positive semidefinite self-adjoint operator
/// are nondecreasing along power iteration, so more iterations never lower
/// the estimate.
pub fn operator_norm(map: &LinMap, iters: usize) -> Result<NormEstimate> {
    if iters == 0 {
        return Err(Error::Usage("operator_norm needs at least one iteration".into()));
    }
    let dom = map.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITERATION_SEED);
    let mut x = dom.random_unit(&mut rng);
    let mut sigma2 = 0.0;
    let mut residual = 0.0;
    for _ in 0..iters {
        let lx = map.apply_unchecked(&x);
        sigma2 = map.codomain().norm_squared(&lx);
        let next = map.apply_adjoint(&lx)?;
        residual = dom.norm(&(&next - &x * sigma2));
        let nn = dom.norm(&next);
        if nn == 0.0 {
            return Ok(NormEstimate {
                value: 0.0,
                residual: 0.0,
                iterations: iters,
            });
        }
        x = next / nn;
    }
    Ok(NormEstimate {
        value: sigma2.sqrt(),
        residual,
        iterations: iters,
    })
}

/// Smallest singular value of `map` between its weighted spaces, i.e. the
/// largest `σ` with `‖L z‖ ≥ σ ‖z‖` for every `z`. A map whose domain is
/// larger than its codomain has a kernel and returns zero.
pub fn smallest_singular_value(map: &LinMap) -> Result<f64> {
    let (m, n) = (map.codomain().dim(), map.domain().dim());
    if n > m {
        return Ok(0.0);
    }
    let whitened = whitened_matrix(map)?;
    let sv = whitened.singular_values();
    Ok(sv.min().max(0.0))
}

/// Exact Gram-weighted operator norm from a dense SVD; meant for small maps
/// such as `B` whose norm feeds the controller gains.
pub fn spectral_norm(map: &LinMap) -> Result<f64> {
    let whitened = whitened_matrix(map)?;
    Ok(whitened.singular_values().max())
}

/// `L_codᵀ · M · L_dom⁻ᵀ`, the matrix of the map in orthonormal coordinates.
pub(crate) fn whitened_matrix(map: &LinMap) -> Result<Matrix> {
    let m = map.to_matrix();
    let l_cod = map.codomain().cholesky_factor();
    let l_dom = map.domain().cholesky_factor();
    // M L_dom⁻ᵀ = (L_dom⁻¹ Mᵀ)ᵀ
    let right = l_dom
        .solve_lower_triangular(&m.transpose())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?
        .transpose();
    Ok(l_cod.transpose() * right)
}
