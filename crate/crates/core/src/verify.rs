//! Independent oracles and the check battery.
//!
//! [`dense_linear_oracle`] solves the linear closed loop exactly with a dense
//! matrix exponential. [`fd_check_dm`] and [`refinement_ladder`] attribute
//! discretization error, and [`run_battery`] aggregates every numerical
//! check into a [`VerificationReport`].

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::LU;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::evolution::{contraction_check, estimate_alpha, linearized_decay_check, Plant};
use crate::forwarding::{ForwardingConfig, ForwardingMap};
use crate::regulator::{dissipation, simulate, FeedbackScheme, Scenario, SimulationRun};
use crate::{Matrix, Vector};

/// Exact solution of the linear closed loop in `[w, η]` coordinates.
#[derive(Clone, Debug)]
pub struct LinearOracle {
    /// `M = −C A⁻¹`.
    pub m: Matrix,
    /// `B* M*`, the constant feedback gain acting on `η`.
    pub k_star: Matrix,
    /// Closed-loop matrix `J` of `d[w, η]/dt = J [w, η] + c`.
    pub closed_loop: Matrix,
    pub affine: Vector,
    pub w_star: Vector,
    pub z_star: Vector,
    pub eta_star: Vector,
    pub spectral_abscissa: f64,
    pub rho: f64,
    dim_h: usize,
    gram_h: Matrix,
    gram_z: Matrix,
}

impl LinearOracle {
    /// `(w(t), z(t))` from `(w0, z0)`.
    pub fn state_at(&self, w0: &Vector, z0: &Vector, t: f64) -> (Vector, Vector) {
        let x0 = self.stack(w0, &(z0 - &self.m * w0));
        let xs = self.stack(&self.w_star, &self.eta_star);
        let x = &xs + (&self.closed_loop * t).exp() * (x0 - &xs);
        let w = x.rows(0, self.dim_h).into_owned();
        let eta = x.rows(self.dim_h, x.len() - self.dim_h).into_owned();
        let z = eta + &self.m * &w;
        (w, z)
    }

    /// Closed-loop trajectory on the given times.
    pub fn trajectory(&self, w0: &Vector, z0: &Vector, times: &[f64]) -> Vec<(Vector, Vector)> {
        times.par_iter().map(|&t| self.state_at(w0, z0, t)).collect()
    }

    /// `½‖w‖² + (ρ/2)‖z − M w‖²`.
    pub fn lyapunov(&self, w: &Vector, z: &Vector) -> f64 {
        let eta = z - &self.m * w;
        0.5 * w.dot(&(&self.gram_h * w)) + 0.5 * self.rho * eta.dot(&(&self.gram_z * &eta))
    }

    fn stack(&self, w: &Vector, eta: &Vector) -> Vector {
        let mut x = Vector::zeros(w.len() + eta.len());
        x.rows_mut(0, w.len()).copy_from(w);
        x.rows_mut(w.len(), eta.len()).copy_from(eta);
        x
    }
}

/// Largest dimension accepted by [`dense_linear_oracle`].
pub const ORACLE_MAX_DIM: usize = 200;

/// Dense reference solution of the linear closed loop with forcing
/// `(d, y_ref)`. The state matrix is inverted directly, independently of
/// the plant's own solver.
pub fn dense_linear_oracle(plant: &Plant, d: &Vector, y_ref: &Vector, rho: f64) -> Result<LinearOracle> {
    if !plant.is_linear() {
        return Err(Error::Usage("the dense oracle needs a linear plant".into()));
    }
    let n = plant.dim_h();
    if n > ORACLE_MAX_DIM {
        return Err(Error::Usage(format!(
            "oracle limited to dim H ≤ {ORACLE_MAX_DIM}, got {n}"
        )));
    }
    check_dim("disturbance", n, d.len())?;
    check_dim("reference", plant.dim_z(), y_ref.len())?;
    let a = plant.a_matrix();
    let a_inv = LU::new(a.clone())
        .try_inverse()
        .ok_or_else(|| Error::Infeasible("state matrix is singular".into()))?;
    let m = -(plant.c_matrix() * a_inv);
    let k0 = &m * plant.b_matrix();
    let gz = plant.space_z().gram();
    let k_star = plant.space_u().solve_gram_matrix(&(k0.transpose() * gz));
    let q = plant.dim_z();
    let mut j = Matrix::zeros(n + q, n + q);
    j.view_mut((0, 0), (n, n)).copy_from(&(-a));
    j.view_mut((0, n), (n, q)).copy_from(&(plant.b_matrix() * &k_star));
    j.view_mut((n, n), (q, q)).copy_from(&(-(&k0 * &k_star)));
    let mut c = Vector::zeros(n + q);
    c.rows_mut(0, n).copy_from(d);
    c.rows_mut(n, q).copy_from(&(-y_ref - &m * d));
    let x_star = LU::new(j.clone())
        .solve(&(-&c))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Infeasible("closed-loop matrix is singular".into()))?;
    let w_star = x_star.rows(0, n).into_owned();
    let eta_star = x_star.rows(n, q).into_owned();
    let z_star = &eta_star + &m * &w_star;
    let spectral_abscissa = j
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LinearOracle {
        m,
        k_star,
        closed_loop: j,
        affine: c,
        w_star,
        z_star,
        eta_star,
        spectral_abscissa,
        rho,
        dim_h: n,
        gram_h: plant.space_h().gram().clone(),
        gram_z: gz.clone(),
    })
}

/// Largest `‖w − w_ref‖_H + ‖z − z_ref‖_Z` between a run and the oracle,
/// sampled every `stride` grid points.
pub fn oracle_trajectory_error(plant: &Plant, oracle: &LinearOracle, run: &SimulationRun, stride: usize) -> f64 {
    let first = &run.states[0];
    let idx: Vec<usize> = (0..run.states.len()).step_by(stride.max(1)).collect();
    idx.par_iter()
        .map(|&k| {
            let (w, z) = oracle.state_at(&first.w, &first.z, run.times[k]);
            let s = &run.states[k];
            plant.space_h().norm(&(&s.w - w)) + plant.space_z().norm(&(&s.z - z))
        })
        .reduce(|| 0.0, f64::max)
}

/// Central-difference check of `dM`.
#[derive(Clone, Debug, Serialize)]
pub struct FdTable {
    pub eps: Vec<f64>,
    pub relative_error: Vec<f64>,
    /// Order between the last two levels; `None` when an error vanishes.
    pub observed_order: Option<f64>,
}

impl FdTable {
    pub fn last_error(&self) -> f64 {
        *self.relative_error.last().unwrap_or(&0.0)
    }
}

/// `‖(M(w + εh) − M(w − εh)) / 2ε − dM(w) h‖ / ‖dM(w) h‖` for each `ε`.
pub fn fd_check_dm(fmap: &ForwardingMap, w: &Vector, h: &Vector, eps_ladder: &[f64]) -> Result<FdTable> {
    if eps_ladder.is_empty() || eps_ladder.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::Usage("eps ladder must be non-empty and decreasing".into()));
    }
    let dm = fmap.eval_dm(w, h)?;
    let zs = fmap.plant().space_z();
    let scale = zs.norm(&dm);
    let relative_error: Vec<f64> = eps_ladder
        .par_iter()
        .map(|&eps| {
            let plus = fmap.eval_m(&(w + h * eps))?;
            let minus = fmap.eval_m(&(w - h * eps))?;
            let err = zs.norm(&((plus - minus) / (2.0 * eps) - &dm));
            Ok(if scale > 0.0 { err / scale } else { err })
        })
        .collect::<Result<_>>()?;
    let observed_order = match relative_error.len() {
        n if n >= 2 => order(
            eps_ladder[n - 2],
            eps_ladder[n - 1],
            relative_error[n - 2],
            relative_error[n - 1],
        ),
        _ => None,
    };
    Ok(FdTable {
        eps: eps_ladder.to_vec(),
        relative_error,
        observed_order,
    })
}

fn order(l0: f64, l1: f64, v0: f64, v1: f64) -> Option<f64> {
    if v0 > 0.0 && v1 > 0.0 {
        Some((v0 / v1).ln() / (l0 / l1).ln())
    } else {
        None
    }
}

/// Discretization parameter varied by a ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadderParameter {
    Dt,
    DtQuad,
    TauMax,
    N,
}

/// Residual recomputed along a parameter ladder.
#[derive(Clone, Debug, Serialize)]
pub struct RefinementTable {
    pub parameter: LadderParameter,
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
    /// Empirical order between consecutive levels.
    pub orders: Vec<Option<f64>>,
}

impl RefinementTable {
    /// Order between the two finest levels.
    pub fn observed_order(&self) -> Option<f64> {
        self.orders.last().copied().flatten()
    }

    pub fn monotone_decreasing(&self) -> bool {
        self.values.windows(2).all(|p| p[1] <= p[0])
    }
}

/// Evaluates `residual` at each level (in parallel) and tabulates the
/// empirical order `log(r_i / r_{i+1}) / log(l_i / l_{i+1})`.
pub fn refinement_ladder<F>(parameter: LadderParameter, levels: &[f64], residual: F) -> Result<RefinementTable>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if levels.len() < 3 {
        return Err(Error::Usage("a refinement ladder needs at least 3 levels".into()));
    }
    let values: Vec<f64> = levels.par_iter().map(|&l| residual(l)).collect::<Result<_>>()?;
    let orders = (1..levels.len())
        .map(|i| order(levels[i - 1], levels[i], values[i - 1], values[i]))
        .collect();
    Ok(RefinementTable {
        parameter,
        levels: levels.to_vec(),
        values,
        orders,
    })
}

/// Outcome of one named check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    #[serde(skip)]
    pub mandatory: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckResult {
    /// Passes when `value ≤ bound`.
    pub fn at_most(value: f64, bound: f64) -> Self {
        Self {
            value,
            bound,
            pass: value <= bound,
            mandatory: true,
            note: None,
        }
    }

    /// Passes when `value ≥ bound`.
    pub fn at_least(value: f64, bound: f64) -> Self {
        Self {
            value,
            bound,
            pass: value >= bound,
            mandatory: true,
            note: None,
        }
    }

    pub fn failed(note: impl Into<String>) -> Self {
        Self {
            value: f64::NAN,
            bound: f64::NAN,
            pass: false,
            mandatory: true,
            note: Some(note.into()),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn advisory(mut self) -> Self {
        self.mandatory = false;
        self
    }
}

/// Named checks, refinement tables and the overall verdict.
#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub plant: String,
    pub pass: bool,
    pub failed: Vec<String>,
    pub checks: BTreeMap<String, CheckResult>,
    pub refinement: BTreeMap<String, RefinementTable>,
}

impl VerificationReport {
    pub fn from_checks(
        plant: &str,
        checks: BTreeMap<String, CheckResult>,
        refinement: BTreeMap<String, RefinementTable>,
    ) -> Self {
        let failed: Vec<String> = checks
            .iter()
            .filter(|(_, c)| c.mandatory && !c.pass)
            .map(|(k, _)| k.clone())
            .collect();
        Self {
            plant: plant.to_string(),
            pass: failed.is_empty(),
            failed,
            checks,
            refinement,
        }
    }
}

/// Tolerances, sample counts and toggles of the battery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Radius of the ball the local checks sample from.
    pub state_radius: f64,
    pub monotonicity_samples: usize,
    pub contraction_pairs: usize,
    pub contraction_slack: f64,
    /// Time steps over the decay horizon; `α dt` stays fixed so the lag of
    /// implicit Euler behind `e^{-α t}` is about `1.25 · decay_horizon / decay_steps`.
    pub decay_steps: usize,
    /// Horizon of the decay checks in units of `1/α`.
    pub decay_horizon: f64,
    pub duality_samples: usize,
    pub duality_tol: f64,
    pub fd_samples: usize,
    pub fd_eps: Vec<f64>,
    pub fd_tol: f64,
    pub functional_samples: usize,
    pub functional_tol: f64,
    pub m_zero_tol: f64,
    pub dissipation_runs: usize,
    pub dissipation_dt: f64,
    pub dissipation_time: f64,
    pub dissipation_scheme: FeedbackScheme,
    /// Accepted growth of the fitted constant when `dt` is halved.
    pub dissipation_ratio: f64,
    /// Fitted constants below this are treated as zero.
    pub dissipation_floor: f64,
    pub coercivity: bool,
    pub coercivity_samples: usize,
    pub coercivity_radius: f64,
    /// Defaults to `λ̃`.
    pub lambda_global: Option<f64>,
    pub global: bool,
    pub global_runs: usize,
    pub global_radius: f64,
    pub global_time: f64,
    pub global_dt: f64,
    pub global_scheme: FeedbackScheme,
    pub global_tol: f64,
    /// Adds a functional-equation ladder over `dt_quad`.
    pub refinement: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            state_radius: 1.0,
            monotonicity_samples: 200,
            contraction_pairs: 10,
            contraction_slack: 0.05,
            decay_steps: 1250,
            decay_horizon: 5.0,
            duality_samples: 5,
            duality_tol: 1e-9,
            fd_samples: 2,
            fd_eps: vec![1e-3, 1e-4],
            fd_tol: 1e-4,
            functional_samples: 5,
            functional_tol: 1e-3,
            m_zero_tol: 1e-14,
            dissipation_runs: 3,
            dissipation_dt: 0.05,
            dissipation_time: 10.0,
            dissipation_scheme: FeedbackScheme::Explicit,
            dissipation_ratio: 1.5,
            dissipation_floor: 1e-8,
            coercivity: false,
            coercivity_samples: 50,
            coercivity_radius: 10.0,
            lambda_global: None,
            global: false,
            global_runs: 3,
            global_radius: 10.0,
            global_time: 400.0,
            global_dt: 1.0,
            global_scheme: FeedbackScheme::LinearlyImplicit,
            global_tol: 1e-4,
            refinement: false,
        }
    }
}

/// Draws a state of norm at most `radius`.
pub type StateSampler = dyn Fn(&mut ChaCha8Rng, f64) -> Vector + Send + Sync;

/// Uniform sampler on the ball of `H`.
pub fn ball_sampler(plant: Arc<Plant>) -> Box<StateSampler> {
    Box::new(move |rng, r| plant.space_h().random_in_ball(rng, r))
}

fn rng_for(seed: u64, check: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ check.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

type CheckOutput = Vec<(String, CheckResult)>;

#[derive(Clone, Copy, Debug)]
enum Check {
    Certificate,
    Monotonicity,
    Contraction,
    LinearizedDecay,
    MZero,
    Functional,
    Duality,
    FiniteDifference,
    Range,
    Dissipation,
    Coercivity,
    Global,
}

/// Runs every enabled check. Checks run in parallel and are merged by name.
/// A check that cannot run (for example because the monotonicity constant
/// is not certified) is reported as failed with a note.
pub fn run_battery(fmap: &ForwardingMap, config: &VerifyConfig, sampler: &StateSampler) -> Result<VerificationReport> {
    let mut list = vec![
        Check::Certificate,
        Check::Monotonicity,
        Check::Contraction,
        Check::LinearizedDecay,
        Check::MZero,
        Check::Functional,
        Check::Duality,
        Check::FiniteDifference,
        Check::Range,
        Check::Dissipation,
    ];
    if config.coercivity {
        list.push(Check::Coercivity);
    }
    if config.global {
        list.push(Check::Global);
    }
    let outputs: Vec<(CheckOutput, Option<(String, RefinementTable)>)> = list
        .par_iter()
        .map(|&check| {
            let result = run_check(check, fmap, config, sampler);
            match result {
                Ok(out) => (out, None),
                Err(e) => (
                    vec![(check_name(check).to_string(), CheckResult::failed(e.to_string()))],
                    None,
                ),
            }
        })
        .collect();
    let mut checks = BTreeMap::new();
    let mut refinement = BTreeMap::new();
    for (out, table) in outputs {
        checks.extend(out);
        if let Some((k, t)) = table {
            refinement.insert(k, t);
        }
    }
    if config.refinement && !fmap.plant().is_linear() {
        let table = functional_ladder(fmap, config, sampler)?;
        refinement.insert("functional_equation_vs_dt_quad".into(), table);
    }
    Ok(VerificationReport::from_checks(fmap.plant().name(), checks, refinement))
}

fn check_name(check: Check) -> &'static str {
    match check {
        Check::Certificate => "alpha_certificate",
        Check::Monotonicity => "monotonicity",
        Check::Contraction => "contraction",
        Check::LinearizedDecay => "linearized_decay",
        Check::MZero => "m_zero",
        Check::Functional => "functional_equation",
        Check::Duality => "dm_duality",
        Check::FiniteDifference => "dm_finite_difference",
        Check::Range => "range_condition",
        Check::Dissipation => "lyapunov_dissipation",
        Check::Coercivity => "uniform_coercivity",
        Check::Global => "global_convergence",
    }
}

fn single(check: Check, result: CheckResult) -> Result<CheckOutput> {
    Ok(vec![(check_name(check).to_string(), result)])
}

fn run_check(check: Check, fmap: &ForwardingMap, cfg: &VerifyConfig, sampler: &StateSampler) -> Result<CheckOutput> {
    let plant = fmap.plant();
    let h = plant.space_h();
    let tag = check as u64;
    match check {
        Check::Certificate => match plant.alpha_cert() {
            Some(a) => single(check, CheckResult::at_least(a, 0.0)),
            None => single(
                check,
                CheckResult::failed("no monotonicity certificate for these parameters"),
            ),
        },
        Check::Monotonicity => {
            let est = estimate_alpha(plant, cfg.monotonicity_samples, cfg.state_radius, cfg.seed ^ tag)?;
            let mut r = CheckResult {
                value: est.estimate,
                bound: est.alpha_cert.unwrap_or(f64::NAN),
                pass: est.pass(),
                mandatory: true,
                note: None,
            };
            if est.alpha_cert.is_none() {
                r = r.with_note("sampled quotient has no certificate to compare with");
            }
            single(check, r)
        }
        Check::Contraction | Check::LinearizedDecay => {
            let alpha = plant.require_alpha()?;
            let horizon = cfg.decay_horizon / alpha;
            let dt = horizon / cfg.decay_steps.max(1) as f64;
            let worst = (0..cfg.contraction_pairs)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng_for(cfg.seed, tag, i as u64);
                    let w1 = sampler(&mut rng, cfg.state_radius);
                    let w2 = sampler(&mut rng, cfg.state_radius);
                    let rep = if matches!(check, Check::Contraction) {
                        contraction_check(plant, &w1, &w2, horizon, dt, cfg.contraction_slack)?
                    } else {
                        let dir = h.random_unit(&mut rng);
                        linearized_decay_check(plant, &w1, &dir, horizon, dt, cfg.contraction_slack)?
                    };
                    Ok(rep.max_ratio)
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            single(check, CheckResult::at_most(worst, 1.0 + cfg.contraction_slack))
        }
        Check::MZero => {
            let m0 = fmap.eval_m(&Vector::zeros(plant.dim_h()))?;
            single(check, CheckResult::at_most(plant.space_z().norm(&m0), cfg.m_zero_tol))
        }
        Check::Functional => {
            let worst = sampled_max(cfg.functional_samples, |i| {
                let mut rng = rng_for(cfg.seed, tag, i);
                let w = sampler(&mut rng, cfg.state_radius);
                fmap.functional_equation_residual(&w)
            })?;
            single(check, CheckResult::at_most(worst, cfg.functional_tol))
        }
        Check::Duality => {
            let zs = plant.space_z();
            let worst = sampled_max(cfg.duality_samples, |i| {
                let mut rng = rng_for(cfg.seed, tag, i);
                let w = sampler(&mut rng, cfg.state_radius);
                let dir = h.random_unit(&mut rng);
                let zeta = zs.random_unit(&mut rng);
                let lin = fmap.linearize(&w)?;
                let lhs = zs.dot(&lin.dm(&dir)?, &zeta);
                let adj = lin.dm_adjoint(&zeta)?;
                let rhs = h.dot(&dir, &adj);
                let scale = zs.norm(&lin.dm(&dir)?) + h.norm(&adj);
                Ok(if scale > 0.0 { (lhs - rhs).abs() / scale } else { 0.0 })
            })?;
            single(check, CheckResult::at_most(worst, cfg.duality_tol))
        }
        Check::FiniteDifference => {
            let worst = sampled_max(cfg.fd_samples, |i| {
                let mut rng = rng_for(cfg.seed, tag, i);
                let w = sampler(&mut rng, cfg.state_radius);
                let dir = sampler(&mut rng, 1.0);
                let dir = &dir / h.norm(&dir).max(f64::MIN_POSITIVE);
                Ok(fd_check_dm(fmap, &w, &dir, &cfg.fd_eps)?.last_error())
            })?;
            single(check, CheckResult::at_most(worst, cfg.fd_tol))
        }
        Check::Range => {
            let lambda = fmap.coercivity_lambda();
            let mut r = CheckResult {
                value: lambda,
                bound: 0.0,
                pass: lambda > 0.0,
                mandatory: true,
                note: None,
            };
            if lambda == 0.0 {
                r = r.with_note("B* dM(0)* is not coercive (rank deficient)");
            }
            single(check, r)
        }
        Check::Dissipation => dissipation_check(fmap, cfg, sampler),
        Check::Coercivity => {
            let gains = fmap.gains()?;
            let lg = cfg.lambda_global.unwrap_or(gains.lambda_tilde);
            let rep =
                fmap.uniform_coercivity_check(cfg.coercivity_samples, cfg.coercivity_radius, cfg.seed ^ tag, lg)?;
            single(check, CheckResult::at_least(rep.min_lambda, lg))
        }
        Check::Global => {
            fmap.gains()?;
            let zs = plant.space_z();
            let worst = sampled_max(cfg.global_runs, |i| {
                let mut rng = rng_for(cfg.seed, tag, i);
                let w = sampler(&mut rng, cfg.global_radius);
                let w = &w * (cfg.global_radius / h.norm(&w).max(f64::MIN_POSITIVE));
                let mut scen = Scenario::zero(fmap, cfg.global_time, cfg.global_dt);
                scen.name = format!("global-{i}");
                scen.w0 = w;
                let run = simulate(fmap, &scen, cfg.global_scheme)?;
                if run.aborted {
                    return Ok(f64::INFINITY);
                }
                let last = run.last_state();
                Ok(h.norm(&last.w) + zs.norm(&last.z))
            })?;
            single(check, CheckResult::at_most(worst, cfg.global_tol))
        }
    }
}

fn sampled_max<F>(n: usize, f: F) -> Result<f64>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    let values = (0..n as u64).into_par_iter().map(&f).collect::<Result<Vec<f64>>>()?;
    Ok(values.into_iter().fold(0.0, f64::max))
}

/// Fitted dissipation constant over `runs` random runs at step `dt`, with
/// the quadrature step tied to `dt`.
pub fn fitted_dissipation_constant(
    fmap: &ForwardingMap,
    dt: f64,
    t_final: f64,
    scheme: FeedbackScheme,
    initial: &[(Vector, Vector)],
) -> Result<f64> {
    let cfg = ForwardingConfig {
        dt_quad: dt,
        ..fmap.config().clone()
    };
    let tied = ForwardingMap::new(fmap.plant().clone(), cfg)?;
    let cs = initial
        .par_iter()
        .enumerate()
        .map(|(i, (w0, z0))| {
            let mut scen = Scenario::zero(&tied, t_final, dt);
            scen.name = format!("dissipation-{i}");
            scen.w0 = w0.clone();
            scen.z0 = z0.clone();
            let run = simulate(&tied, &scen, scheme)?;
            if run.aborted {
                return Err(Error::Numerical(format!("dissipation run {i} diverged")));
            }
            Ok(dissipation(&tied, &run)?.c)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(cs.into_iter().fold(0.0, f64::max))
}

fn dissipation_check(fmap: &ForwardingMap, cfg: &VerifyConfig, sampler: &StateSampler) -> Result<CheckOutput> {
    fmap.gains()?;
    let zs = fmap.plant().space_z();
    let initial: Vec<(Vector, Vector)> = (0..cfg.dissipation_runs)
        .map(|i| {
            let mut rng = rng_for(cfg.seed, Check::Dissipation as u64, i as u64);
            let w = sampler(&mut rng, cfg.state_radius);
            let z = zs.random_in_ball(&mut rng, cfg.state_radius);
            (w, z)
        })
        .collect();
    let dt = cfg.dissipation_dt;
    let c_coarse = fitted_dissipation_constant(fmap, dt, cfg.dissipation_time, cfg.dissipation_scheme, &initial)?;
    let c_fine = fitted_dissipation_constant(fmap, dt / 2.0, cfg.dissipation_time, cfg.dissipation_scheme, &initial)?;
    let ratio = if c_coarse.max(c_fine) <= cfg.dissipation_floor {
        0.0
    } else {
        c_fine / c_coarse.max(cfg.dissipation_floor)
    };
    let r = CheckResult::at_most(ratio, cfg.dissipation_ratio).with_note(format!(
        "fitted c = {c_coarse:.4e} at dt = {dt}, {c_fine:.4e} at dt = {}",
        dt / 2.0
    ));
    Ok(vec![(check_name(Check::Dissipation).to_string(), r)])
}

fn functional_ladder(fmap: &ForwardingMap, cfg: &VerifyConfig, sampler: &StateSampler) -> Result<RefinementTable> {
    let base = fmap.config().clone();
    let alpha = fmap.plant().require_alpha()?;
    let states: Vec<Vector> = (0..cfg.functional_samples.max(1))
        .map(|i| sampler(&mut rng_for(cfg.seed, 1000, i as u64), cfg.state_radius))
        .collect();
    let levels = [base.dt_quad, base.dt_quad / 2.0, base.dt_quad / 4.0];
    refinement_ladder(LadderParameter::DtQuad, &levels, |dtq| {
        let halvings = (base.dt_quad / dtq).log2().round();
        let c = ForwardingConfig {
            dt_quad: dtq,
            tau_max: Some(fmap.tau_max() + 2.0 * halvings / alpha),
            ..base.clone()
        };
        let f = ForwardingMap::new(fmap.plant().clone(), c)?;
        states
            .iter()
            .map(|w| f.functional_equation_residual(w))
            .try_fold(0.0f64, |acc, r| Ok(acc.max(r?)))
    })
}
