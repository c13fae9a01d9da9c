//! Example plants: a random linear benchmark, a scalar cubic plant, the
//! damped sine-Gordon equation and a pre-stabilized Wilson-Cowan field.

use std::f64::consts::PI;
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{CubicNonlinearity, Nonlinearity, Plant, PlantParts, ZeroNonlinearity};
use crate::space::{smallest_singular_value, LinMap, SpaceLabel, SpaceSpec};
use crate::{Matrix, Vector};

/// Parameters of the random linear benchmark `A = α I + skew`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearBenchmarkParams {
    pub n: usize,
    /// `dim U = dim Z`.
    #[serde(default = "default_inputs")]
    pub inputs: usize,
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    /// Scale of the skew-symmetric part.
    #[serde(default = "default_skew")]
    pub skew: f64,
    /// Rows of `C` forced to zero; used to build infeasible plants.
    #[serde(default)]
    pub zero_output_rows: Vec<usize>,
}

fn default_inputs() -> usize {
    2
}

fn default_skew() -> f64 {
    1.0
}

impl LinearBenchmarkParams {
    pub fn new(n: usize, alpha: f64, seed: u64) -> Self {
        Self {
            n,
            inputs: default_inputs().min(n),
            alpha,
            seed,
            skew: default_skew(),
            zero_output_rows: Vec::new(),
        }
    }
}

/// `A = α I + s (K − Kᵀ)` with Gaussian `K`, random `B` and `C`, `F = 0`.
///
/// Draws are repeated until `σ_min(C A⁻¹ B)` is well away from zero, unless
/// rows of `C` are zeroed on purpose.
pub fn make_linear_benchmark(params: &LinearBenchmarkParams) -> Result<Plant> {
    let n = params.n;
    let m = params.inputs;
    if n == 0 {
        return Err(Error::Usage("benchmark dimension must be at least 1".into()));
    }
    if m == 0 || m > n {
        return Err(Error::Usage(format!(
            "benchmark needs 1 <= inputs <= n, got {m} for n = {n}"
        )));
    }
    if !(params.alpha > 0.0) {
        return Err(Error::Usage(format!(
            "benchmark alpha must be positive, got {}",
            params.alpha
        )));
    }
    if let Some(&r) = params.zero_output_rows.iter().find(|&&r| r >= m) {
        return Err(Error::Usage(format!("zero_output_rows entry {r} out of range")));
    }
    let scale = 1.0 / (n as f64).sqrt();
    for attempt in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(attempt);
        let mut normal = || rng.sample::<f64, _>(StandardNormal);
        let k = Matrix::from_fn(n, n, |_, _| normal() * scale);
        let a = Matrix::identity(n, n) * params.alpha + (&k - k.transpose()) * params.skew;
        let b = Matrix::from_fn(n, m, |_, _| normal());
        let mut c = Matrix::from_fn(m, n, |_, _| normal() * scale);
        for &r in &params.zero_output_rows {
            c.row_mut(r).fill(0.0);
        }
        let Some(a_inv) = a.clone().try_inverse() else { continue };
        let g = &c * a_inv * &b;
        let sv = g.singular_values();
        if params.zero_output_rows.is_empty() && sv.min() < 1e-2 * sv.max() {
            continue;
        }
        return Plant::new(PlantParts {
            name: format!("linear-benchmark-n{n}-seed{}", params.seed),
            space_h: SpaceSpec::euclidean(SpaceLabel::H, n),
            space_u: SpaceSpec::euclidean(SpaceLabel::U, m),
            space_z: SpaceSpec::euclidean(SpaceLabel::Z, m),
            a,
            nonlinearity: Arc::new(ZeroNonlinearity),
            b,
            c,
            alpha_cert: Some(params.alpha),
            lip_f: Some(0.0),
            lip_df: Some(0.0),
        });
    }
    Err(Error::Numerical(
        "could not draw a benchmark with full-rank C A⁻¹ B".into(),
    ))
}

/// Parameters of the scalar plant `dw/dt + a w + c w³ = b u`, `y = c_out w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarParams {
    pub a: f64,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default)]
    pub cubic: f64,
}

fn one() -> f64 {
    1.0
}

/// Scalar plant; monotone with constant `a` whenever `cubic ≥ 0`.
pub fn make_scalar_plant(params: &ScalarParams) -> Result<Plant> {
    if params.cubic < 0.0 {
        return Err(Error::Usage(
            "scalar plant needs a nonnegative cubic coefficient".into(),
        ));
    }
    let nonlinearity: Arc<dyn Nonlinearity> = if params.cubic == 0.0 {
        Arc::new(ZeroNonlinearity)
    } else {
        Arc::new(CubicNonlinearity { coeff: params.cubic })
    };
    Plant::new(PlantParts {
        name: "scalar".into(),
        space_h: SpaceSpec::euclidean(SpaceLabel::H, 1),
        space_u: SpaceSpec::euclidean(SpaceLabel::U, 1),
        space_z: SpaceSpec::euclidean(SpaceLabel::Z, 1),
        a: Matrix::from_element(1, 1, params.a),
        nonlinearity,
        b: Matrix::from_element(1, 1, params.b),
        c: Matrix::from_element(1, 1, params.c),
        alpha_cert: (params.a > 0.0).then_some(params.a),
        lip_f: (params.cubic == 0.0).then_some(0.0),
        lip_df: (params.cubic == 0.0).then_some(0.0),
    })
}

/// Damped sine-Gordon equation on `(0, L)` with Dirichlet conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SineGordonParams {
    pub length: f64,
    pub xi: f64,
    pub gamma: f64,
    /// Interior grid points.
    pub n: usize,
    /// Control window `𝒪 = (a, b)`.
    pub window: [f64; 2],
}

impl Default for SineGordonParams {
    fn default() -> Self {
        Self {
            length: PI,
            xi: 2.0,
            gamma: 0.05,
            n: 200,
            window: [PI / 4.0, 3.0 * PI / 4.0],
        }
    }
}

/// Derived constants of a sine-Gordon discretization.
#[derive(Clone, Debug, Serialize)]
pub struct SineGordonConstants {
    pub h: f64,
    pub lambda1: f64,
    pub lambda1_discrete: f64,
    pub epsilon: f64,
    pub epsilon_discrete: f64,
    /// `min` over both `λ₁` values of `ε/2 − γ λ₁`.
    pub margin: f64,
    pub feasible: bool,
    pub global: bool,
}

fn epsilon_for(xi: f64, lambda1: f64) -> f64 {
    (xi / 4.0).min(lambda1 / (2.0 * xi))
}

impl SineGordonParams {
    fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::Usage(format!(
                "sine-Gordon needs at least 3 grid points, got {}",
                self.n
            )));
        }
        if !(self.length > 0.0 && self.xi > 0.0 && self.gamma > 0.0) {
            return Err(Error::Usage("sine-Gordon needs positive length, xi and gamma".into()));
        }
        let [a, b] = self.window;
        if !(0.0 <= a && a < b && b <= self.length) {
            return Err(Error::Usage(format!(
                "control window ({a}, {b}) not inside (0, {})",
                self.length
            )));
        }
        Ok(())
    }

    pub fn mesh_width(&self) -> f64 {
        self.length / (self.n + 1) as f64
    }

    /// Optimal Poincaré constant `(π/L)²`.
    pub fn lambda1(&self) -> f64 {
        (PI / self.length).powi(2)
    }

    /// Smallest eigenvalue of the discrete Dirichlet Laplacian.
    pub fn lambda1_discrete(&self) -> f64 {
        let h = self.mesh_width();
        let s = (PI * h / (2.0 * self.length)).sin();
        4.0 * s * s / (h * h)
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_for(self.xi, self.lambda1())
    }

    pub fn constants(&self) -> SineGordonConstants {
        let l1 = self.lambda1();
        let l1d = self.lambda1_discrete();
        let eps = epsilon_for(self.xi, l1);
        let eps_d = epsilon_for(self.xi, l1d);
        let margin = (eps / 2.0 - self.gamma * l1).min(eps_d / 2.0 - self.gamma * l1d);
        let global = eps / (2.0 * (1.0 + l1)) > self.gamma && eps_d / (2.0 * (1.0 + l1d)) > self.gamma;
        SineGordonConstants {
            h: self.mesh_width(),
            lambda1: l1,
            lambda1_discrete: l1d,
            epsilon: eps,
            epsilon_discrete: eps_d,
            margin,
            feasible: margin > 0.0,
            global,
        }
    }

    /// Interior grid indices (0-based, point `x = (i+1) h`) inside the window.
    pub fn window_indices(&self) -> Vec<usize> {
        let h = self.mesh_width();
        let [a, b] = self.window;
        (0..self.n)
            .filter(|&i| {
                let x = (i + 1) as f64 * h;
                x > a && x < b
            })
            .collect()
    }
}

/// `F[θ, ζ] = [0, γ (sin θ − θ)]`.
#[derive(Clone, Copy, Debug)]
struct SineGordonNonlinearity {
    n: usize,
    gamma: f64,
}

impl Nonlinearity for SineGordonNonlinearity {
    fn eval(&self, w: &Vector) -> Vector {
        let mut out = Vector::zeros(2 * self.n);
        for i in 0..self.n {
            let th = w[i];
            out[self.n + i] = self.gamma * (th.sin() - th);
        }
        out
    }

    fn differential(&self, w: &Vector, h: &Vector) -> Vector {
        let mut out = Vector::zeros(2 * self.n);
        for i in 0..self.n {
            out[self.n + i] = self.gamma * (w[i].cos() - 1.0) * h[i];
        }
        out
    }

    fn differential_transpose(&self, w: &Vector, p: &Vector) -> Vector {
        let mut out = Vector::zeros(2 * self.n);
        for i in 0..self.n {
            out[i] = self.gamma * (w[i].cos() - 1.0) * p[self.n + i];
        }
        out
    }
}

/// State `w = [θ, ζ]` on the interior grid, second-order differences for
/// `−∂ₓₓ`, output the one-sided Neumann trace at `x = 0`, and the energy
/// inner product `∫ θₓ θₓ' + ∫ (ζ + εθ)(ζ' + εθ')`.
///
/// Without a positive monotonicity margin the plant is built without a
/// certificate.
pub fn make_sine_gordon(params: &SineGordonParams) -> Result<Plant> {
    params.validate()?;
    let n = params.n;
    let h = params.mesh_width();
    let consts = params.constants();
    let eps = consts.epsilon;

    let mut lap = Matrix::zeros(n, n);
    for i in 0..n {
        lap[(i, i)] = 2.0 / (h * h);
        if i > 0 {
            lap[(i, i - 1)] = -1.0 / (h * h);
        }
        if i + 1 < n {
            lap[(i, i + 1)] = -1.0 / (h * h);
        }
    }

    let mut a = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = -1.0;
        a[(n + i, n + i)] = params.xi;
    }
    a.view_mut((n, 0), (n, n))
        .copy_from(&(&lap + Matrix::identity(n, n) * params.gamma));

    // ∫ θₓ θₓ' = h θᵀ Lh θ' on the Dirichlet grid
    let mut gram = Matrix::zeros(2 * n, 2 * n);
    gram.view_mut((0, 0), (n, n))
        .copy_from(&(&lap * h + Matrix::identity(n, n) * (eps * eps * h)));
    for i in 0..n {
        gram[(i, n + i)] = eps * h;
        gram[(n + i, i)] = eps * h;
        gram[(n + i, n + i)] = h;
    }

    let window = params.window_indices();
    if window.is_empty() {
        return Err(Error::Usage("control window contains no grid points".into()));
    }
    let m = window.len();
    let mut b = Matrix::zeros(2 * n, m);
    for (j, &i) in window.iter().enumerate() {
        b[(n + i, j)] = 1.0;
    }
    let mut c = Matrix::zeros(1, 2 * n);
    c[(0, 0)] = 4.0 / (2.0 * h);
    c[(0, 1)] = -1.0 / (2.0 * h);

    let alpha_cert = if consts.feasible {
        Some(consts.margin)
    } else {
        warn!(
            "sine-Gordon with gamma = {} violates gamma < eps/(2 lambda1); no monotonicity certificate",
            params.gamma
        );
        None
    };
    let l1 = consts.lambda1_discrete.min(consts.lambda1);
    Plant::new(PlantParts {
        name: format!("sine-gordon-n{n}"),
        space_h: SpaceSpec::new(SpaceLabel::H, gram)?,
        space_u: SpaceSpec::scaled(SpaceLabel::U, m, h),
        space_z: SpaceSpec::euclidean(SpaceLabel::Z, 1),
        a,
        nonlinearity: Arc::new(SineGordonNonlinearity { n, gamma: params.gamma }),
        b,
        c,
        alpha_cert,
        // ‖θ‖_{L²} ≤ ‖w‖ / √λ₁ and |sin a − a − sin b + b| ≤ 2|a − b|
        lip_f: Some(2.0 * params.gamma / l1.sqrt()),
        // sup |θ| ≤ (√L / 2) ‖θₓ‖
        lip_df: Some(params.gamma * params.length.sqrt() / 2.0 / l1.sqrt()),
    })
}

/// Random smooth sine-Gordon state: a combination of the first `modes`
/// Dirichlet sine modes in both components, scaled to the given norm.
pub fn sine_gordon_smooth_state<R: Rng + ?Sized>(
    plant: &Plant,
    params: &SineGordonParams,
    rng: &mut R,
    modes: usize,
    norm: f64,
) -> Vector {
    let n = params.n;
    let h = params.mesh_width();
    let mut w = Vector::zeros(2 * n);
    for k in 1..=modes.max(1) {
        let a: f64 = rng.sample::<f64, _>(StandardNormal) / k as f64;
        let b: f64 = rng.sample::<f64, _>(StandardNormal) / k as f64;
        for i in 0..n {
            let s = (k as f64 * PI * (i + 1) as f64 * h / params.length).sin();
            w[i] += a * s;
            w[n + i] += b * s;
        }
    }
    let current = plant.space_h().norm(&w);
    if current == 0.0 {
        return w;
    }
    w * (norm / current)
}

/// Scalar activation with `s(0) = 0` and bounded derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Arctan,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Arctan => x.atan(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let c = x.cosh();
                if c.is_finite() {
                    1.0 / (c * c)
                } else {
                    0.0
                }
            }
            Activation::Arctan => 1.0 / (1.0 + x * x),
        }
    }

    /// `sup |s'|`.
    pub fn derivative_bound(self) -> f64 {
        1.0
    }

    /// `sup |s' − s'(0)|`.
    pub fn derivative_deviation_bound(self) -> f64 {
        1.0
    }
}

/// Interaction kernel `k(x, ν)` on `Ω × Ω`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Kernel {
    Constant { value: f64 },
    Gaussian { amplitude: f64, width: f64 },
}

impl Kernel {
    pub fn eval(&self, x: f64, nu: f64) -> f64 {
        match *self {
            Kernel::Constant { value } => value,
            Kernel::Gaussian { amplitude, width } => amplitude * (-((x - nu) / width).powi(2)).exp(),
        }
    }
}

/// Pre-stabilized Wilson-Cowan field on `Ω = (0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WilsonCowanParams {
    /// Midpoint-grid cells.
    pub n: usize,
    pub alpha_gain: f64,
    pub kernel: Kernel,
    pub activation: Activation,
    pub window: [f64; 2],
}

impl Default for WilsonCowanParams {
    fn default() -> Self {
        Self {
            n: 32,
            alpha_gain: 0.05,
            kernel: Kernel::Constant { value: 0.1 },
            activation: Activation::Tanh,
            window: [0.25, 0.75],
        }
    }
}

impl WilsonCowanParams {
    pub fn mesh_width(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.mesh_width();
        (0..self.n).map(|i| (i as f64 + 0.5) * h).collect()
    }

    pub fn window_indices(&self) -> Vec<usize> {
        let [a, b] = self.window;
        self.nodes()
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > a && x < b)
            .map(|(i, _)| i)
            .collect()
    }

    /// Kernel values `k(x_i, x_j)` on the midpoint grid.
    pub fn kernel_matrix(&self) -> Matrix {
        let x = self.nodes();
        Matrix::from_fn(self.n, self.n, |i, j| self.kernel.eval(x[i], x[j]))
    }

    pub fn feasible(&self) -> bool {
        self.alpha_gain > compute_m_ks(self)
    }

    pub fn global(&self) -> bool {
        self.alpha_gain > 2.0 * compute_m_ks(self)
    }
}

/// `∬ |k(x, ν) L_s|² dx dν` by the midpoint rule, with `L_s = sup |s'|`.
pub fn compute_m_ks(params: &WilsonCowanParams) -> f64 {
    let h = params.mesh_width();
    let ls = params.activation.derivative_bound();
    params.kernel_matrix().iter().map(|k| (k * ls).powi(2)).sum::<f64>() * h * h
}

/// `F(w)_i = Σ_j k_ij h (s(w_j) − s'(0) w_j)`.
struct WilsonCowanNonlinearity {
    weights: Matrix,
    activation: Activation,
    slope0: f64,
}

impl Nonlinearity for WilsonCowanNonlinearity {
    fn eval(&self, w: &Vector) -> Vector {
        let act = self.activation;
        let g = w.map(|x| act.eval(x) - self.slope0 * x);
        &self.weights * g
    }

    fn differential(&self, w: &Vector, h: &Vector) -> Vector {
        let act = self.activation;
        let g = w.zip_map(h, |x, hi| (act.derivative(x) - self.slope0) * hi);
        &self.weights * g
    }

    fn differential_transpose(&self, w: &Vector, p: &Vector) -> Vector {
        let act = self.activation;
        let q = self.weights.tr_mul(p);
        w.zip_map(&q, |x, qi| (act.derivative(x) - self.slope0) * qi)
    }

    fn differential_transpose_matrix(&self, w: &Vector, p: &Matrix) -> Matrix {
        let act = self.activation;
        let scale = w.map(|x| act.derivative(x) - self.slope0);
        let mut q = self.weights.tr_mul(p);
        for (i, mut row) in q.row_iter_mut().enumerate() {
            row *= scale[i];
        }
        q
    }
}

/// Midpoint discretization with `G = h I`, `A = α I + K`, `B` the indicator
/// of `𝒪` and `C` the restriction to the `𝒪` grid.
pub fn make_wilson_cowan(params: &WilsonCowanParams) -> Result<Plant> {
    let n = params.n;
    if n < 2 {
        return Err(Error::Usage("Wilson-Cowan grid needs at least 2 cells".into()));
    }
    if !(params.alpha_gain > 0.0) {
        return Err(Error::Usage("Wilson-Cowan gain must be positive".into()));
    }
    let k = params.kernel_matrix();
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Usage("kernel has non-finite values".into()));
    }
    let h = params.mesh_width();
    let slope0 = params.activation.derivative(0.0);
    let weights = &k * h;
    let a = Matrix::identity(n, n) * params.alpha_gain + &weights * slope0;

    let window = params.window_indices();
    if window.is_empty() {
        return Err(Error::Usage("control window contains no grid points".into()));
    }
    let m = window.len();
    let mut b = Matrix::zeros(n, m);
    for (j, &i) in window.iter().enumerate() {
        b[(i, j)] = 1.0;
    }
    let c = b.transpose();

    let m_ks = compute_m_ks(params);
    let alpha_cert = if params.alpha_gain > m_ks {
        Some(params.alpha_gain - m_ks)
    } else {
        warn!(
            "Wilson-Cowan gain {} does not exceed M_ks = {m_ks}; no monotonicity certificate",
            params.alpha_gain
        );
        None
    };
    // ‖k‖ in Hilbert-Schmidt norm bounds the integral operator on L²
    let k_hs = (k.iter().map(|v| v * v).sum::<f64>() * h * h).sqrt();
    Plant::new(PlantParts {
        name: format!("wilson-cowan-n{n}"),
        space_h: SpaceSpec::scaled(SpaceLabel::H, n, h),
        space_u: SpaceSpec::scaled(SpaceLabel::U, m, h),
        space_z: SpaceSpec::scaled(SpaceLabel::Z, m, h),
        a,
        nonlinearity: Arc::new(WilsonCowanNonlinearity {
            weights,
            activation: params.activation,
            slope0,
        }),
        b,
        c,
        alpha_cert,
        lip_f: Some(k_hs * params.activation.derivative_deviation_bound()),
        lip_df: None,
    })
}

/// `σ_min(C A⁻¹ B)` in the weighted norms.
pub fn non_resonance_margin(plant: &Plant) -> Result<f64> {
    let bmat = plant.b_matrix();
    let cols: Vec<Vector> = (0..bmat.ncols())
        .map(|j| plant.solve_a(&bmat.column(j).into_owned()))
        .collect();
    let a_inv_b = Matrix::from_columns(&cols);
    let g = plant.c_matrix() * a_inv_b;
    let map = LinMap::dense(plant.space_u().clone(), plant.space_z().clone(), g)?;
    smallest_singular_value(&map)
}
