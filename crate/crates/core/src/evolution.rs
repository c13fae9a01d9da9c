//! Open-loop dynamics `dw/dt + A w + F(w) = f(t)`, its first variation and
//! the exact discrete adjoint of the first variation.
//!
//! Time stepping is first-order IMEX: implicit in `A`, explicit in `F`,
//!
//! ```text
//! (I + dt A) w' = w + dt (f - F(w)).
//! ```
//!
//! The tangent step linearizes the same map, `v' = R (v - dt dF(w) v)` with
//! `R = (I + dt A)⁻¹`, so finite differences of the discrete flow converge to
//! the discrete tangent and the reverse sweep is its exact transpose.

use std::fmt;
use std::sync::Arc;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{CsrMatrix, LinearSolver};
use crate::space::{LinMap, SpaceSpec};
use crate::{Matrix, Vector};

/// Nonlinear part `F` of the plant together with its differential.
///
/// Transposes are plain Euclidean transposes of the Jacobian; Gram weights
/// are applied by the callers.
pub trait Nonlinearity: Send + Sync {
    fn eval(&self, w: &Vector) -> Vector;

    /// `dF(w) h`.
    fn differential(&self, w: &Vector, h: &Vector) -> Vector;

    /// `dF(w)ᵀ p`.
    fn differential_transpose(&self, w: &Vector, p: &Vector) -> Vector;

    /// `dF(w)ᵀ P` column by column.
    fn differential_transpose_matrix(&self, w: &Vector, p: &Matrix) -> Matrix {
        let cols: Vec<Vector> = p
            .column_iter()
            .map(|c| self.differential_transpose(w, &c.into_owned()))
            .collect();
        Matrix::from_columns(&cols)
    }

    /// True when `F` vanishes identically; lets callers skip flows.
    fn is_zero(&self) -> bool {
        false
    }
}

/// `F = 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroNonlinearity;

impl Nonlinearity for ZeroNonlinearity {
    fn eval(&self, w: &Vector) -> Vector {
        Vector::zeros(w.len())
    }

    fn differential(&self, w: &Vector, _h: &Vector) -> Vector {
        Vector::zeros(w.len())
    }

    fn differential_transpose(&self, w: &Vector, _p: &Vector) -> Vector {
        Vector::zeros(w.len())
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// Pointwise cubic `F(w)_i = c · w_i³`.
#[derive(Clone, Copy, Debug)]
pub struct CubicNonlinearity {
    pub coeff: f64,
}

impl Nonlinearity for CubicNonlinearity {
    fn eval(&self, w: &Vector) -> Vector {
        w.map(|x| self.coeff * x * x * x)
    }

    fn differential(&self, w: &Vector, h: &Vector) -> Vector {
        w.zip_map(h, |x, hi| 3.0 * self.coeff * x * x * hi)
    }

    fn differential_transpose(&self, w: &Vector, p: &Vector) -> Vector {
        self.differential(w, p)
    }
}

/// Raw ingredients of a [`Plant`].
pub struct PlantParts {
    pub name: String,
    pub space_h: SpaceSpec,
    pub space_u: SpaceSpec,
    pub space_z: SpaceSpec,
    /// `dim H × dim H`.
    pub a: Matrix,
    pub nonlinearity: Arc<dyn Nonlinearity>,
    /// `dim H × dim U`.
    pub b: Matrix,
    /// `dim Z × dim H`.
    pub c: Matrix,
    /// Certified monotonicity constant, `None` when no certificate exists.
    pub alpha_cert: Option<f64>,
    pub lip_f: Option<f64>,
    pub lip_df: Option<f64>,
}

/// Discretized plant `dw/dt + A w + F(w) = B u + d`, `y = C w`.
#[derive(Clone)]
pub struct Plant {
    name: String,
    h: Arc<SpaceSpec>,
    u: Arc<SpaceSpec>,
    z: Arc<SpaceSpec>,
    a: Matrix,
    a_csr: CsrMatrix,
    a_solver: Arc<LinearSolver>,
    nonlinearity: Arc<dyn Nonlinearity>,
    b: LinMap,
    c: LinMap,
    alpha_cert: Option<f64>,
    lip_f: Option<f64>,
    lip_df: Option<f64>,
}

impl fmt::Debug for Plant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Plant")
            .field("name", &self.name)
            .field("dim_h", &self.h.dim())
            .field("dim_u", &self.u.dim())
            .field("dim_z", &self.z.dim())
            .field("alpha_cert", &self.alpha_cert)
            .finish()
    }
}

impl Plant {
    /// Validates the parts and factors `A`.
    ///
    /// Checks `F(0) = 0`, `dF(0) = 0` on a few directions and that `A` is
    /// invertible by a solve round trip.
    pub fn new(parts: PlantParts) -> Result<Self> {
        let n = parts.space_h.dim();
        let (nu, nz) = (parts.space_u.dim(), parts.space_z.dim());
        check_dim("A rows", n, parts.a.nrows())?;
        check_dim("A columns", n, parts.a.ncols())?;
        check_dim("B rows", n, parts.b.nrows())?;
        check_dim("B columns", nu, parts.b.ncols())?;
        check_dim("C rows", nz, parts.c.nrows())?;
        check_dim("C columns", n, parts.c.ncols())?;
        if let Some(a) = parts.alpha_cert {
            if !a.is_finite() || a <= 0.0 {
                return Err(Error::Config(format!(
                    "certified monotonicity constant must be positive, got {a}"
                )));
            }
        }

        let f = &parts.nonlinearity;
        let zero = Vector::zeros(n);
        let f0 = f.eval(&zero);
        if f0.amax() != 0.0 {
            return Err(Error::Config(format!("F(0) = 0 violated: |F(0)| = {:.3e}", f0.amax())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0xf0);
        for _ in 0..3 {
            let h = parts.space_h.random_unit(&mut rng);
            let df0 = f.differential(&zero, &h);
            if df0.amax() > 1e-12 * h.amax() {
                return Err(Error::Config(format!(
                    "dF(0) = 0 violated: |dF(0)h| = {:.3e}",
                    df0.amax()
                )));
            }
        }

        let a_solver = LinearSolver::new(&parts.a).map_err(|e| Error::Config(format!("A is not invertible: {e}")))?;
        let probe = parts.space_h.random_unit(&mut rng);
        let x = a_solver.solve(&probe);
        let back = &parts.a * x;
        let rel = (&back - &probe).norm() / probe.norm();
        if !rel.is_finite() || rel > 1e-8 {
            return Err(Error::Config(format!(
                "A is numerically singular: solve round trip error {rel:.3e}"
            )));
        }

        let h = Arc::new(parts.space_h);
        let u = Arc::new(parts.space_u);
        let z = Arc::new(parts.space_z);
        let b = LinMap::dense(u.clone(), h.clone(), parts.b)?;
        let c = LinMap::dense(h.clone(), z.clone(), parts.c)?;
        Ok(Self {
            name: parts.name,
            a_csr: CsrMatrix::from_dense(&parts.a),
            a: parts.a,
            a_solver: Arc::new(a_solver),
            nonlinearity: parts.nonlinearity,
            h,
            u,
            z,
            b,
            c,
            alpha_cert: parts.alpha_cert,
            lip_f: parts.lip_f,
            lip_df: parts.lip_df,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn space_h(&self) -> &Arc<SpaceSpec> {
        &self.h
    }

    pub fn space_u(&self) -> &Arc<SpaceSpec> {
        &self.u
    }

    pub fn space_z(&self) -> &Arc<SpaceSpec> {
        &self.z
    }

    pub fn dim_h(&self) -> usize {
        self.h.dim()
    }

    pub fn dim_u(&self) -> usize {
        self.u.dim()
    }

    pub fn dim_z(&self) -> usize {
        self.z.dim()
    }

    pub fn a_matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &LinMap {
        &self.b
    }

    pub fn c(&self) -> &LinMap {
        &self.c
    }

    pub fn b_matrix(&self) -> &Matrix {
        self.b.matrix().expect("B is stored densely")
    }

    pub fn c_matrix(&self) -> &Matrix {
        self.c.matrix().expect("C is stored densely")
    }

    pub fn nonlinearity(&self) -> &Arc<dyn Nonlinearity> {
        &self.nonlinearity
    }

    pub fn is_linear(&self) -> bool {
        self.nonlinearity.is_zero()
    }

    pub fn alpha_cert(&self) -> Option<f64> {
        self.alpha_cert
    }

    /// The certified α, or an infeasibility error when there is none.
    pub fn require_alpha(&self) -> Result<f64> {
        self.alpha_cert
            .ok_or_else(|| Error::Infeasible(format!("plant '{}' has no monotonicity certificate", self.name)))
    }

    pub fn lip_f(&self) -> Option<f64> {
        self.lip_f
    }

    pub fn lip_df(&self) -> Option<f64> {
        self.lip_df
    }

    pub fn apply_a(&self, w: &Vector) -> Vector {
        self.a_csr.mul_vec(w)
    }

    pub fn solve_a(&self, b: &Vector) -> Vector {
        self.a_solver.solve(b)
    }

    pub fn solve_a_transpose(&self, b: &Vector) -> Vector {
        self.a_solver.solve_transpose(b)
    }

    pub fn solve_a_transpose_matrix(&self, b: &Matrix) -> Matrix {
        self.a_solver.solve_transpose_matrix(b)
    }

    pub fn eval_f(&self, w: &Vector) -> Vector {
        self.nonlinearity.eval(w)
    }

    pub fn apply_df(&self, w: &Vector, h: &Vector) -> Vector {
        self.nonlinearity.differential(w, h)
    }

    /// `𝒜(w) = A w + F(w)`.
    pub fn apply_nonlinear_a(&self, w: &Vector) -> Result<Vector> {
        check_dim("state", self.dim_h(), w.len())?;
        Ok(self.apply_a(w) + self.eval_f(w))
    }

    pub fn output(&self, w: &Vector) -> Vector {
        self.c.apply_unchecked(w)
    }

    pub fn input(&self, u: &Vector) -> Vector {
        self.b.apply_unchecked(u)
    }
}

/// Right-hand side `f(t)` of the open-loop equation.
#[derive(Clone, Default)]
pub enum Forcing {
    #[default]
    Zero,
    Constant(Vector),
    TimeVarying(Arc<dyn Fn(f64) -> Vector + Send + Sync>),
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Zero => f.write_str("Zero"),
            Forcing::Constant(v) => write!(f, "Constant(len {})", v.len()),
            Forcing::TimeVarying(_) => f.write_str("TimeVarying"),
        }
    }
}

impl Forcing {
    pub fn at(&self, t: f64, dim: usize) -> Vector {
        match self {
            Forcing::Zero => Vector::zeros(dim),
            Forcing::Constant(v) => v.clone(),
            Forcing::TimeVarying(f) => f(t),
        }
    }
}

/// States on a uniform time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> &Vector {
        &self.states[0]
    }

    pub fn last(&self) -> &Vector {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// Number of steps of size `dt` in `[0, t_final]`; `dt` must divide `t_final`.
pub fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Usage(format!("time step must be positive, got {dt}")));
    }
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::Usage(format!("horizon must be positive, got {t_final}")));
    }
    let n = (t_final / dt).round();
    if n < 1.0 || (n * dt - t_final).abs() > 1e-9 * t_final {
        return Err(Error::Usage(format!("dt = {dt} does not divide T = {t_final}")));
    }
    Ok(n as usize)
}

/// IMEX Euler stepper holding the factorization of `I + dt A`.
#[derive(Clone, Debug)]
pub struct ImexStepper {
    dt: f64,
    shifted: Arc<LinearSolver>,
}

impl ImexStepper {
    /// Factors `I + dt A`. Fails when `dt · lip_F ≥ 1` for a plant with a
    /// known Lipschitz bound; warns when the bound is unknown.
    pub fn new(plant: &Plant, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Usage(format!("time step must be positive, got {dt}")));
        }
        match plant.lip_f {
            Some(l) if dt * l >= 1.0 => {
                return Err(Error::Usage(format!(
                    "explicit stability guard violated: dt * lip_F = {:.3} >= 1",
                    dt * l
                )))
            }
            None if !plant.is_linear() => {
                warn!(
                    "plant '{}' has no Lipschitz bound for F; step size {dt} is unguarded",
                    plant.name
                )
            }
            _ => {}
        }
        let n = plant.dim_h();
        let m = Matrix::identity(n, n) + &plant.a * dt;
        let shifted = LinearSolver::new(&m).map_err(|e| Error::Numerical(format!("factoring I + dt A failed: {e}")))?;
        Ok(Self {
            dt,
            shifted: Arc::new(shifted),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `(I + dt A)⁻¹ x`.
    pub fn resolvent(&self, x: &Vector) -> Vector {
        self.shifted.solve(x)
    }

    /// `(I + dt A)⁻ᵀ x`.
    pub fn resolvent_transpose(&self, x: &Vector) -> Vector {
        self.shifted.solve_transpose(x)
    }

    pub fn resolvent_transpose_matrix(&self, x: &Matrix) -> Matrix {
        self.shifted.solve_transpose_matrix(x)
    }

    pub fn resolvent_matrix(&self, x: &Matrix) -> Matrix {
        self.shifted.solve_matrix(x)
    }

    /// One step: solves `(I + dt A) w' = w + dt (f - F(w))`.
    pub fn step(&self, plant: &Plant, w: &Vector, f: &Vector) -> Vector {
        let mut rhs = f - plant.eval_f(w);
        rhs *= self.dt;
        rhs += w;
        self.shifted.solve(&rhs)
    }

    /// `v' = R (v - dt dF(x) v)`.
    pub fn tangent_step(&self, plant: &Plant, x: &Vector, v: &Vector) -> Vector {
        let mut rhs = plant.apply_df(x, v);
        rhs *= -self.dt;
        rhs += v;
        self.shifted.solve(&rhs)
    }

    /// Euclidean transpose of [`Self::tangent_step`]: `(I - dt dF(x)ᵀ) Rᵀ p`.
    pub fn tangent_step_transpose(&self, plant: &Plant, x: &Vector, p: &Vector) -> Vector {
        let q = self.shifted.solve_transpose(p);
        let mut out = plant.nonlinearity.differential_transpose(x, &q);
        out *= -self.dt;
        out += q;
        out
    }

    /// Runs `steps` steps from `w0`.
    pub fn flow(&self, plant: &Plant, w0: &Vector, forcing: &Forcing, steps: usize) -> Trajectory {
        let n = plant.dim_h();
        let mut times = Vec::with_capacity(steps + 1);
        let mut states = Vec::with_capacity(steps + 1);
        times.push(0.0);
        states.push(w0.clone());
        let mut w = w0.clone();
        for k in 0..steps {
            let t = k as f64 * self.dt;
            let f = forcing.at(t, n);
            w = self.step(plant, &w, &f);
            times.push((k + 1) as f64 * self.dt);
            states.push(w.clone());
        }
        Trajectory {
            dt: self.dt,
            times,
            states,
        }
    }

    /// Tangent states `v_k` along `base` with `v_0 = h`.
    pub fn tangent_flow(&self, plant: &Plant, base: &Trajectory, h: &Vector) -> Trajectory {
        let mut states = Vec::with_capacity(base.len());
        let mut v = h.clone();
        states.push(v.clone());
        for x in &base.states[..base.steps()] {
            v = self.tangent_step(plant, x, &v);
            states.push(v.clone());
        }
        Trajectory {
            dt: self.dt,
            times: base.times.clone(),
            states,
        }
    }

    /// Gram-weighted adjoint of the tangent composite. Entry `k` of the
    /// result is `(S_{K-1} ⋯ S_k)* ζ_T`, so entry `0` pairs with `h` under
    /// exact discrete duality.
    pub fn adjoint_tangent_flow(&self, plant: &Plant, base: &Trajectory, zeta_t: &Vector) -> Trajectory {
        let k_steps = base.steps();
        let h = plant.space_h();
        let mut covectors = vec![Vector::zeros(plant.dim_h()); k_steps + 1];
        let mut p = h.apply_gram(zeta_t);
        covectors[k_steps] = p.clone();
        for k in (0..k_steps).rev() {
            p = self.tangent_step_transpose(plant, &base.states[k], &p);
            covectors[k] = p.clone();
        }
        let states = covectors.iter().map(|p| h.solve_gram(p)).collect();
        Trajectory {
            dt: self.dt,
            times: base.times.clone(),
            states,
        }
    }

    /// Reverse sweep for the covector `g`:
    ///
    /// ```text
    /// p_K = c_K dF(x_K)ᵀ g,   p_k = c_k dF(x_k)ᵀ g + S_kᵀ p_{k+1},
    /// ```
    ///
    /// with trapezoid weights `c_k`. Returns `p_0`, which equals
    /// `(Σ_k c_k dF(x_k) v_k)ᵀ g` as a linear form in `v_0`.
    pub fn quadrature_adjoint(&self, plant: &Plant, states: &[Vector], g: &Vector) -> Vector {
        let k_steps = states.len() - 1;
        if k_steps == 0 {
            return Vector::zeros(g.len());
        }
        let f = &plant.nonlinearity;
        let half = 0.5 * self.dt;
        let mut p = f.differential_transpose(&states[k_steps], g) * half;
        for k in (0..k_steps).rev() {
            let q = self.resolvent_transpose(&p);
            let w = if k == 0 { half } else { self.dt };
            p = &q - f.differential_transpose(&states[k], &(&q * self.dt - g * w));
        }
        p
    }
}

impl ImexStepper {
    /// [`Self::quadrature_adjoint`] for several covectors at once (columns
    /// of `g`).
    pub fn quadrature_adjoint_block(&self, plant: &Plant, states: &[Vector], g: &Matrix) -> Matrix {
        let k_steps = states.len() - 1;
        if k_steps == 0 {
            return Matrix::zeros(g.nrows(), g.ncols());
        }
        let f = &plant.nonlinearity;
        let half = 0.5 * self.dt;
        let mut p = f.differential_transpose_matrix(&states[k_steps], g) * half;
        for k in (0..k_steps).rev() {
            let q = self.shifted.solve_transpose_matrix(&p);
            let w = if k == 0 { half } else { self.dt };
            // dF(x_k)ᵀ is linear: one application covers both terms
            p = &q - f.differential_transpose_matrix(&states[k], &(&q * self.dt - g * w));
        }
        p
    }
}

/// Trapezoid rule over a uniform grid of vectors.
pub fn trapezoid<'a, I>(dt: f64, values: I, dim: usize) -> Vector
where
    I: ExactSizeIterator<Item = &'a Vector>,
{
    let n = values.len();
    let mut acc = Vector::zeros(dim);
    if n < 2 {
        return acc;
    }
    for (k, v) in values.enumerate() {
        let w = if k == 0 || k + 1 == n { 0.5 * dt } else { dt };
        acc.axpy(w, v, 1.0);
    }
    acc
}

/// `A w + F(w)`.
pub fn apply_nonlinear_a(plant: &Plant, w: &Vector) -> Result<Vector> {
    plant.apply_nonlinear_a(w)
}

/// One IMEX step with a freshly factored `I + dt A`.
pub fn step(plant: &Plant, w: &Vector, f: &Vector, dt: f64) -> Result<Vector> {
    check_dim("state", plant.dim_h(), w.len())?;
    check_dim("forcing", plant.dim_h(), f.len())?;
    Ok(ImexStepper::new(plant, dt)?.step(plant, w, f))
}

/// Trajectory on `[0, t_final]` with step `dt`.
pub fn flow(plant: &Plant, w0: &Vector, forcing: &Forcing, t_final: f64, dt: f64) -> Result<Trajectory> {
    check_dim("initial state", plant.dim_h(), w0.len())?;
    let steps = step_count(t_final, dt)?;
    Ok(ImexStepper::new(plant, dt)?.flow(plant, w0, forcing, steps))
}

pub fn tangent_flow(plant: &Plant, base: &Trajectory, h: &Vector) -> Result<Trajectory> {
    check_dim("tangent direction", plant.dim_h(), h.len())?;
    Ok(ImexStepper::new(plant, base.dt)?.tangent_flow(plant, base, h))
}

pub fn adjoint_tangent_flow(plant: &Plant, base: &Trajectory, zeta_t: &Vector) -> Result<Trajectory> {
    check_dim("adjoint terminal state", plant.dim_h(), zeta_t.len())?;
    Ok(ImexStepper::new(plant, base.dt)?.adjoint_tangent_flow(plant, base, zeta_t))
}

/// Outcome of [`estimate_alpha`].
#[derive(Clone, Debug, Serialize)]
pub struct AlphaEstimate {
    /// Minimum sampled quotient.
    pub estimate: f64,
    pub alpha_cert: Option<f64>,
    pub pairs: usize,
    /// The sampled minimum fell below the certificate.
    pub violated: bool,
}

impl AlphaEstimate {
    /// Certificate present and not contradicted by the samples.
    pub fn pass(&self) -> bool {
        self.alpha_cert.is_some() && !self.violated
    }
}

/// Samples `(𝒜(w₁) − 𝒜(w₂), w₁ − w₂) / ‖w₁ − w₂‖²` over pairs drawn uniformly
/// from the ball of the given radius and returns the minimum.
pub fn estimate_alpha(plant: &Plant, n_samples: usize, radius: f64, seed: u64) -> Result<AlphaEstimate> {
    if n_samples < 2 {
        return Err(Error::Usage("estimate_alpha needs at least two samples".into()));
    }
    let h = plant.space_h();
    let quotients: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let w1 = h.random_in_ball(&mut rng, radius);
            let w2 = h.random_in_ball(&mut rng, radius);
            let diff = &w1 - &w2;
            let nd = h.norm_squared(&diff);
            if nd <= f64::MIN_POSITIVE {
                return None;
            }
            let a1 = plant.apply_a(&w1) + plant.eval_f(&w1);
            let a2 = plant.apply_a(&w2) + plant.eval_f(&w2);
            Some(h.dot(&(a1 - a2), &diff) / nd)
        })
        .collect();
    let estimate = quotients.iter().copied().fold(f64::INFINITY, f64::min);
    let violated = match plant.alpha_cert {
        Some(a) => estimate < a - 1e-10 * a.abs().max(1.0),
        None => false,
    };
    Ok(AlphaEstimate {
        estimate,
        alpha_cert: plant.alpha_cert,
        pairs: quotients.len(),
        violated,
    })
}

/// Linearized monotonicity `(A h + dF(w) h, h) / ‖h‖²` sampled over `w` in a
/// ball and unit directions `h`.
pub fn estimate_alpha_linearized(plant: &Plant, n_samples: usize, radius: f64, seed: u64) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::Usage("need at least one sample".into()));
    }
    let h = plant.space_h();
    let min = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let w = h.random_in_ball(&mut rng, radius);
            let dir = h.random_unit(&mut rng);
            let lin = plant.apply_a(&dir) + plant.apply_df(&w, &dir);
            h.dot(&lin, &dir)
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(min)
}

/// Outcome of a ratio test against `e^{-α t}`.
#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    /// Maximum over grid times of the observed ratio.
    pub max_ratio: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Runs both unforced flows and checks
/// `‖𝒯_t w₁ − 𝒯_t w₂‖ ≤ (1 + tol) e^{-α t} ‖w₁ − w₂‖` on the grid.
pub fn contraction_check(
    plant: &Plant,
    w1: &Vector,
    w2: &Vector,
    t_final: f64,
    dt: f64,
    tol: f64,
) -> Result<DecayReport> {
    let alpha = plant.require_alpha()?;
    check_dim("first state", plant.dim_h(), w1.len())?;
    check_dim("second state", plant.dim_h(), w2.len())?;
    let h = plant.space_h();
    let d0 = h.norm(&(w1 - w2));
    if d0 == 0.0 {
        return Ok(DecayReport {
            max_ratio: 1.0,
            tol,
            pass: true,
        });
    }
    let steps = step_count(t_final, dt)?;
    let stepper = ImexStepper::new(plant, dt)?;
    let (mut x1, mut x2) = (w1.clone(), w2.clone());
    let zero = Vector::zeros(plant.dim_h());
    let mut max_ratio: f64 = 1.0;
    for k in 1..=steps {
        x1 = stepper.step(plant, &x1, &zero);
        x2 = stepper.step(plant, &x2, &zero);
        let t = k as f64 * dt;
        let ratio = h.norm(&(&x1 - &x2)) / ((-alpha * t).exp() * d0);
        max_ratio = max_ratio.max(ratio);
    }
    Ok(DecayReport {
        max_ratio,
        tol,
        pass: max_ratio <= 1.0 + tol,
    })
}

/// Checks `‖v(t; w₀, h)‖ ≤ (1 + tol) e^{-α t} ‖h‖` along the unforced flow.
pub fn linearized_decay_check(
    plant: &Plant,
    w0: &Vector,
    h: &Vector,
    t_final: f64,
    dt: f64,
    tol: f64,
) -> Result<DecayReport> {
    let alpha = plant.require_alpha()?;
    check_dim("base state", plant.dim_h(), w0.len())?;
    check_dim("direction", plant.dim_h(), h.len())?;
    let space = plant.space_h();
    let h0 = space.norm(h);
    if h0 == 0.0 {
        return Ok(DecayReport {
            max_ratio: 0.0,
            tol,
            pass: true,
        });
    }
    let steps = step_count(t_final, dt)?;
    let stepper = ImexStepper::new(plant, dt)?;
    let zero = Vector::zeros(plant.dim_h());
    let mut x = w0.clone();
    let mut v = h.clone();
    let mut max_ratio: f64 = 1.0;
    for k in 1..=steps {
        v = stepper.tangent_step(plant, &x, &v);
        x = stepper.step(plant, &x, &zero);
        let t = k as f64 * dt;
        max_ratio = max_ratio.max(space.norm(&v) / ((-alpha * t).exp() * h0));
    }
    Ok(DecayReport {
        max_ratio,
        tol,
        pass: max_ratio <= 1.0 + tol,
    })
}
