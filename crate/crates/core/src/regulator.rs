//! Closed loop `dw/dt + A w + F(w) = B u + d`, `dz/dt = C w − y_ref` under
//! the forwarding feedback `u = B* dM(w)* (z − M(w))`.
//!
//! Two time discretizations are provided. [`FeedbackScheme::Explicit`]
//! evaluates `u` at the current state, steps `w` by IMEX Euler with forcing
//! `B u + d` and `z` by explicit Euler. When `B* dM*` has large gains the
//! integrator mode `η = z − M(w)` becomes stiff, and
//! [`FeedbackScheme::LinearlyImplicit`] instead computes `u` from a
//! linearization of `η` at the next step, with `dM` frozen at the current
//! state. Both schemes have exactly the equilibria of the continuous loop.

use nalgebra::LU;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::evolution::{step_count, ImexStepper};
use crate::forwarding::{ForwardingMap, Gains};
use crate::{Matrix, Vector};

/// Closed-loop state `[w, z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopState {
    pub w: Vector,
    pub z: Vector,
}

impl ClosedLoopState {
    pub fn new(w: Vector, z: Vector) -> Self {
        Self { w, z }
    }

    pub fn zeros(dim_h: usize, dim_z: usize) -> Self {
        Self {
            w: Vector::zeros(dim_h),
            z: Vector::zeros(dim_z),
        }
    }
}

/// Time discretization of the closed loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackScheme {
    #[default]
    Explicit,
    LinearlyImplicit,
}

/// Constant disturbance and reference with an initial condition and grid.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub d: Vector,
    pub y_ref: Vector,
    pub w0: Vector,
    pub z0: Vector,
    pub t_final: f64,
    pub dt: f64,
}

impl Scenario {
    /// Zero disturbance, reference and initial state.
    pub fn zero(fmap: &ForwardingMap, t_final: f64, dt: f64) -> Self {
        let p = fmap.plant();
        Self {
            name: "zero".into(),
            d: Vector::zeros(p.dim_h()),
            y_ref: Vector::zeros(p.dim_z()),
            w0: Vector::zeros(p.dim_h()),
            z0: Vector::zeros(p.dim_z()),
            t_final,
            dt,
        }
    }

    pub fn validate(&self, fmap: &ForwardingMap) -> Result<usize> {
        let p = fmap.plant();
        check_dim("disturbance", p.dim_h(), self.d.len())?;
        check_dim("reference", p.dim_z(), self.y_ref.len())?;
        check_dim("initial state", p.dim_h(), self.w0.len())?;
        check_dim("initial integrator", p.dim_z(), self.z0.len())?;
        step_count(self.t_final, self.dt)
    }
}

/// `u = B* dM(w)* (z − M(w))`.
pub fn feedback(fmap: &ForwardingMap, state: &ClosedLoopState) -> Result<Vector> {
    check_dim("integrator state", fmap.plant().dim_z(), state.z.len())?;
    let lin = fmap.linearize(&state.w)?;
    let eta = &state.z - lin.m();
    lin.dm_adjoint_b(&eta)
}

/// `V = ½‖w‖² + (ρ/2)‖z − M(w)‖²`.
pub fn lyapunov(fmap: &ForwardingMap, state: &ClosedLoopState) -> Result<f64> {
    let rho = fmap.gains()?.rho;
    check_dim("integrator state", fmap.plant().dim_z(), state.z.len())?;
    let m = fmap.eval_m(&state.w)?;
    Ok(lyapunov_value(fmap, rho, &state.w, &(&state.z - m)))
}

fn lyapunov_value(fmap: &ForwardingMap, rho: f64, w: &Vector, eta: &Vector) -> f64 {
    let p = fmap.plant();
    0.5 * p.space_h().norm_squared(w) + 0.5 * rho * p.space_z().norm_squared(eta)
}

/// One closed-loop step engine shared by simulation and equilibrium search.
struct LoopStepper<'a> {
    fmap: &'a ForwardingMap,
    stepper: ImexStepper,
    scheme: FeedbackScheme,
    /// `(I + dt A)⁻¹ B`, only for the linearly implicit scheme.
    rb: Option<Matrix>,
    d: Vector,
    y_ref: Vector,
    dt: f64,
}

/// Quantities evaluated at the start of a step.
struct StepInfo {
    u: Vector,
    eta: Vector,
}

impl<'a> LoopStepper<'a> {
    fn new(fmap: &'a ForwardingMap, scheme: FeedbackScheme, dt: f64, d: &Vector, y_ref: &Vector) -> Result<Self> {
        let plant = fmap.plant();
        let stepper = ImexStepper::new(plant, dt)?;
        let rb = match scheme {
            FeedbackScheme::Explicit => None,
            FeedbackScheme::LinearlyImplicit => Some(stepper.resolvent_matrix(plant.b_matrix())),
        };
        Ok(Self {
            fmap,
            stepper,
            scheme,
            rb,
            d: d.clone(),
            y_ref: y_ref.clone(),
            dt,
        })
    }

    fn step(&self, state: &ClosedLoopState) -> Result<(StepInfo, ClosedLoopState)> {
        let plant = self.fmap.plant();
        let lin = self.fmap.linearize(&state.w)?;
        let eta = &state.z - lin.m();
        match self.scheme {
            FeedbackScheme::Explicit => {
                let u = lin.dm_adjoint_b(&eta)?;
                let forcing = plant.input(&u) + &self.d;
                let w = self.stepper.step(plant, &state.w, &forcing);
                let z = &state.z + (plant.output(&state.w) - &self.y_ref) * self.dt;
                Ok((StepInfo { u, eta }, ClosedLoopState { w, z }))
            }
            FeedbackScheme::LinearlyImplicit => {
                let dt = self.dt;
                let p = self.rb.as_ref().expect("resolvent of B is cached");
                let jac = lin.jacobian();
                let gz = plant.space_z().gram();
                let k_star = plant
                    .space_u()
                    .solve_gram_matrix(&(plant.b_matrix().transpose() * jac.transpose() * gz));
                let w_bar = self.stepper.step(plant, &state.w, &self.d);
                let cp = plant.c_matrix() * p;
                let dp = &jac * p;
                let m = plant.dim_u();
                let lhs = Matrix::identity(m, m) - &k_star * (cp * (dt * dt) - dp * dt);
                let pred = &state.z + (plant.output(&w_bar) - &self.y_ref) * dt - lin.m() - &jac * (&w_bar - &state.w);
                let rhs = &k_star * pred;
                let u = LU::new(lhs)
                    .solve(&rhs)
                    .ok_or_else(|| Error::Numerical("singular linearly implicit feedback system".into()))?;
                let w = w_bar + p * &u * dt;
                let z = &state.z + (plant.output(&w) - &self.y_ref) * dt;
                Ok((StepInfo { u, eta }, ClosedLoopState { w, z }))
            }
        }
    }
}

/// Recorded closed-loop run.
#[derive(Clone, Debug)]
pub struct SimulationRun {
    pub scenario: String,
    pub scheme: FeedbackScheme,
    pub gains: Gains,
    pub dt: f64,
    pub y_ref: Vector,
    pub times: Vec<f64>,
    pub states: Vec<ClosedLoopState>,
    /// Control applied on `[t_n, t_{n+1})`; the last entry is the feedback
    /// at the final state.
    pub controls: Vec<Vector>,
    pub outputs: Vec<Vector>,
    pub etas: Vec<Vector>,
    pub lyapunov: Vec<f64>,
    pub aborted: bool,
    pub abort_reason: Option<String>,
}

impl SimulationRun {
    pub fn last_state(&self) -> &ClosedLoopState {
        self.states.last().expect("run has at least one state")
    }
}

/// Norm beyond which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Simulates the closed loop over the scenario horizon.
pub fn simulate(fmap: &ForwardingMap, scenario: &Scenario, scheme: FeedbackScheme) -> Result<SimulationRun> {
    let steps = scenario.validate(fmap)?;
    let gains = fmap.gains()?;
    let plant = fmap.plant();
    let engine = LoopStepper::new(fmap, scheme, scenario.dt, &scenario.d, &scenario.y_ref)?;
    let mut run = SimulationRun {
        scenario: scenario.name.clone(),
        scheme,
        gains,
        dt: scenario.dt,
        y_ref: scenario.y_ref.clone(),
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        outputs: Vec::with_capacity(steps + 1),
        etas: Vec::with_capacity(steps + 1),
        lyapunov: Vec::with_capacity(steps + 1),
        aborted: false,
        abort_reason: None,
    };
    let mut state = ClosedLoopState::new(scenario.w0.clone(), scenario.z0.clone());
    let record = |run: &mut SimulationRun, n: usize, state: &ClosedLoopState, info: &StepInfo| {
        run.times.push(n as f64 * scenario.dt);
        run.outputs.push(plant.output(&state.w));
        run.lyapunov.push(lyapunov_value(fmap, gains.rho, &state.w, &info.eta));
        run.controls.push(info.u.clone());
        run.etas.push(info.eta.clone());
        run.states.push(state.clone());
    };
    for n in 0..=steps {
        if let Some(reason) = divergence(fmap, &state) {
            run.aborted = true;
            run.abort_reason = Some(format!("{reason} at t = {}", n as f64 * scenario.dt));
            break;
        }
        if n == steps {
            let lin = fmap.linearize(&state.w)?;
            let eta = &state.z - lin.m();
            let u = lin.dm_adjoint_b(&eta)?;
            record(&mut run, n, &state, &StepInfo { u, eta });
            break;
        }
        let (info, next) = engine.step(&state)?;
        record(&mut run, n, &state, &info);
        state = next;
    }
    Ok(run)
}

fn divergence(fmap: &ForwardingMap, state: &ClosedLoopState) -> Option<String> {
    let p = fmap.plant();
    let nw = p.space_h().norm(&state.w);
    let nz = p.space_z().norm(&state.z);
    if !nw.is_finite() || !nz.is_finite() {
        return Some("non-finite state".into());
    }
    if nw > DIVERGENCE_THRESHOLD || nz > DIVERGENCE_THRESHOLD {
        return Some(format!("state norm exceeded {DIVERGENCE_THRESHOLD:e}"));
    }
    None
}

/// Controls for [`find_equilibrium`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumOptions {
    pub dt: f64,
    /// Time between stagnation checks.
    pub check_interval: f64,
    pub max_time: f64,
    /// Relative change between checks that counts as stagnation.
    pub tol: f64,
    /// Length of the tail average after stagnation.
    pub average_window: f64,
    pub scheme: FeedbackScheme,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            dt: 0.05,
            check_interval: 5.0,
            max_time: 5000.0,
            tol: 1e-13,
            average_window: 1.0,
            scheme: FeedbackScheme::Explicit,
        }
    }
}

/// Result of [`find_equilibrium`].
#[derive(Clone, Debug)]
pub struct EquilibriumResult {
    pub w_star: Vector,
    pub z_star: Vector,
    pub found: bool,
    pub time: f64,
    /// `‖−𝒜(w*) + B u* + d‖_H` with `u*` the feedback at the equilibrium.
    pub state_residual: f64,
    /// `‖C w* − y_ref‖_Z`.
    pub output_residual: f64,
    /// Relative change at the last stagnation check.
    pub last_change: f64,
    pub message: Option<String>,
}

/// Locates the closed-loop equilibrium for `(d, y_ref)` by simulating from
/// `start` (the origin by default) until the state stagnates, then averages
/// over a short tail.
pub fn find_equilibrium(
    fmap: &ForwardingMap,
    d: &Vector,
    y_ref: &Vector,
    start: Option<&ClosedLoopState>,
    opts: &EquilibriumOptions,
) -> Result<EquilibriumResult> {
    let plant = fmap.plant();
    check_dim("disturbance", plant.dim_h(), d.len())?;
    check_dim("reference", plant.dim_z(), y_ref.len())?;
    fmap.gains()?;
    let engine = LoopStepper::new(fmap, opts.scheme, opts.dt, d, y_ref)?;
    let per_check = ((opts.check_interval / opts.dt).round() as usize).max(1);
    let per_avg = ((opts.average_window / opts.dt).round() as usize).max(1);
    let max_steps = (opts.max_time / opts.dt).ceil() as usize;
    let h = plant.space_h();
    let zs = plant.space_z();
    let mut state = start
        .cloned()
        .unwrap_or_else(|| ClosedLoopState::zeros(plant.dim_h(), plant.dim_z()));
    let mut checkpoint = state.clone();
    let mut steps = 0usize;
    let mut last_change = f64::INFINITY;
    let mut found = false;
    let mut message = None;
    while steps < max_steps {
        let (_, next) = engine.step(&state)?;
        state = next;
        steps += 1;
        if let Some(reason) = divergence(fmap, &state) {
            message = Some(reason);
            break;
        }
        if steps.is_multiple_of(per_check) {
            let change = h.norm(&(&state.w - &checkpoint.w)) + zs.norm(&(&state.z - &checkpoint.z));
            let scale = 1.0 + h.norm(&state.w) + zs.norm(&state.z);
            last_change = change / scale;
            if last_change <= opts.tol {
                found = true;
                break;
            }
            checkpoint = state.clone();
        }
    }
    if !found && message.is_none() {
        message = Some(format!(
            "no stagnation within t = {} (last relative change {last_change:.3e})",
            opts.max_time
        ));
    }
    let (w_star, z_star) = if found {
        let mut w_acc = state.w.clone();
        let mut z_acc = state.z.clone();
        for _ in 0..per_avg {
            let (_, next) = engine.step(&state)?;
            state = next;
            w_acc += &state.w;
            z_acc += &state.z;
        }
        let k = (per_avg + 1) as f64;
        (w_acc / k, z_acc / k)
    } else {
        (state.w.clone(), state.z.clone())
    };
    let eq_state = ClosedLoopState::new(w_star.clone(), z_star.clone());
    let (state_residual, output_residual) = equilibrium_residuals(fmap, &eq_state, d, y_ref)?;
    Ok(EquilibriumResult {
        w_star,
        z_star,
        found,
        time: steps as f64 * opts.dt,
        state_residual,
        output_residual,
        last_change,
        message,
    })
}

/// `(‖−𝒜(w) + B u + d‖_H, ‖C w − y_ref‖_Z)` with `u` the feedback at the state.
pub fn equilibrium_residuals(
    fmap: &ForwardingMap,
    state: &ClosedLoopState,
    d: &Vector,
    y_ref: &Vector,
) -> Result<(f64, f64)> {
    let plant = fmap.plant();
    let u = feedback(fmap, state)?;
    let r = plant.input(&u) + d - plant.apply_nonlinear_a(&state.w)?;
    let e = plant.output(&state.w) - y_ref;
    Ok((plant.space_h().norm(&r), plant.space_z().norm(&e)))
}

/// Empirical convergence metrics of a run.
#[derive(Clone, Debug, Serialize)]
pub struct RegulationReport {
    pub scenario: String,
    pub w_star: Vec<f64>,
    pub z_star: Vec<f64>,
    pub final_output_error: f64,
    /// Root mean square of `‖C w − y_ref‖_Z` over the final window.
    pub averaged_output_error: f64,
    pub window: f64,
    /// Decay rate of `‖[w − w*, η − η*]‖_ρ` fitted between 10% and 0.1% of
    /// the initial deviation; `None` when the band is never crossed.
    pub fitted_rate: Option<f64>,
    pub kappa: f64,
    pub lyapunov_monotone: bool,
    pub lyapunov_max_increase: f64,
    /// Range of `‖[w − w*, z − z*]‖ / ‖[w − w*, η − η*]‖_ρ` along the run.
    pub coordinate_ratio: Option<[f64; 2]>,
    pub aborted: bool,
}

/// Deviation of each recorded state from `[w*, η*]` in the ρ-norm.
pub fn rho_deviation(fmap: &ForwardingMap, run: &SimulationRun, w_star: &Vector, z_star: &Vector) -> Result<Vec<f64>> {
    let p = fmap.plant();
    let eta_star = z_star - fmap.eval_m(w_star)?;
    let rho = run.gains.rho;
    Ok(run
        .states
        .iter()
        .zip(&run.etas)
        .map(|(s, eta)| {
            (p.space_h().norm_squared(&(&s.w - w_star)) + rho * p.space_z().norm_squared(&(eta - &eta_star))).sqrt()
        })
        .collect())
}

/// Least-squares decay rate of `dev` over the band `[1e-3, 1e-1] · dev[0]`.
pub fn fit_decay_rate(times: &[f64], dev: &[f64]) -> Option<f64> {
    let d0 = *dev.first()?;
    if !(d0 > 0.0) {
        return None;
    }
    let (hi, lo) = (0.1 * d0, 1e-3 * d0);
    let start = dev.iter().position(|&v| v <= hi)?;
    let end = dev[start..]
        .iter()
        .position(|&v| v < lo)
        .map_or(dev.len(), |e| start + e);
    let pts: Vec<(f64, f64)> = (start..end)
        .filter(|&i| dev[i] > 0.0)
        .map(|i| (times[i], dev[i].ln()))
        .collect();
    if pts.len() < 3 || end == dev.len() {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(-sxy / sxx)
}

/// Builds the [`RegulationReport`] of a run against a known equilibrium.
pub fn convergence_report(
    fmap: &ForwardingMap,
    run: &SimulationRun,
    w_star: &Vector,
    z_star: &Vector,
    window: f64,
) -> Result<RegulationReport> {
    let p = fmap.plant();
    let zs = p.space_z();
    let errs: Vec<f64> = run.outputs.iter().map(|y| zs.norm(&(y - &run.y_ref))).collect();
    let final_output_error = *errs.last().unwrap_or(&0.0);
    let t_end = *run.times.last().unwrap_or(&0.0);
    let t_start = (t_end - window).max(0.0);
    // trapezoid of the squared error over the final window
    let mut integral = 0.0;
    for i in 1..run.times.len() {
        if run.times[i] <= t_start + 1e-12 {
            continue;
        }
        let dt = run.times[i] - run.times[i - 1];
        integral += 0.5 * dt * (errs[i].powi(2) + errs[i - 1].powi(2));
    }
    let span = t_end - t_start;
    let averaged_output_error = if span > 0.0 {
        (integral / span).sqrt()
    } else {
        final_output_error
    };

    let dev = rho_deviation(fmap, run, w_star, z_star)?;
    let fitted_rate = fit_decay_rate(&run.times, &dev);

    let mut max_inc: f64 = 0.0;
    for pair in run.lyapunov.windows(2) {
        max_inc = max_inc.max(pair[1] - pair[0]);
    }
    let v0 = run.lyapunov.first().copied().unwrap_or(0.0);

    let mut ratio: Option<[f64; 2]> = None;
    for (s, &dv) in run.states.iter().zip(&dev) {
        if dv <= 1e-12 * dev[0].max(1e-300) {
            continue;
        }
        let dz = (p.space_h().norm_squared(&(&s.w - w_star)) + zs.norm_squared(&(&s.z - z_star))).sqrt();
        let r = dz / dv;
        ratio = Some(match ratio {
            None => [r, r],
            Some([lo, hi]) => [lo.min(r), hi.max(r)],
        });
    }

    Ok(RegulationReport {
        scenario: run.scenario.clone(),
        w_star: w_star.iter().copied().collect(),
        z_star: z_star.iter().copied().collect(),
        final_output_error,
        averaged_output_error,
        window,
        fitted_rate,
        kappa: run.gains.kappa,
        lyapunov_monotone: max_inc <= 1e-12 * v0.max(1e-300),
        lyapunov_max_increase: max_inc,
        coordinate_ratio: ratio,
        aborted: run.aborted,
    })
}

/// Per-step dissipation excess of a run with `d = 0`, `y_ref = 0`:
/// `e_n = (V_{n+1} − V_n)/dt + (α/2)‖w_n‖² + (ρ/2)‖u_n‖²`, and the fitted
/// constant `c = max_n max(e_n, 0) / dt`.
#[derive(Clone, Debug, Serialize)]
pub struct DissipationReport {
    pub dt: f64,
    pub steps: usize,
    pub max_excess: f64,
    pub c: f64,
}

pub fn dissipation(fmap: &ForwardingMap, run: &SimulationRun) -> Result<DissipationReport> {
    let p = fmap.plant();
    let alpha = run.gains.alpha;
    let rho = run.gains.rho;
    let mut max_excess = f64::NEG_INFINITY;
    let n = run.lyapunov.len();
    for k in 0..n.saturating_sub(1) {
        let dv = (run.lyapunov[k + 1] - run.lyapunov[k]) / run.dt;
        let bound = -0.5 * alpha * p.space_h().norm_squared(&run.states[k].w)
            - 0.5 * rho * p.space_u().norm_squared(&run.controls[k]);
        max_excess = max_excess.max(dv - bound);
    }
    if n < 2 {
        max_excess = 0.0;
    }
    Ok(DissipationReport {
        dt: run.dt,
        steps: n.saturating_sub(1),
        max_excess,
        c: max_excess.max(0.0) / run.dt,
    })
}

/// Ratio `‖Δ(t)‖_ρ / (e^{−κ t} ‖Δ(0)‖_ρ)` between two runs, maximized over
/// the grid, where `Δ = [w₁ − w₂, η₁ − η₂]`.
pub fn rho_contraction_ratio(fmap: &ForwardingMap, a: &SimulationRun, b: &SimulationRun) -> Result<f64> {
    let p = fmap.plant();
    let kappa = a.gains.kappa;
    let rho = a.gains.rho;
    let n = a.states.len().min(b.states.len());
    let dist = |k: usize| {
        (p.space_h().norm_squared(&(&a.states[k].w - &b.states[k].w))
            + rho * p.space_z().norm_squared(&(&a.etas[k] - &b.etas[k])))
        .sqrt()
    };
    let d0 = dist(0);
    if d0 == 0.0 {
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    for k in 0..n {
        worst = worst.max(dist(k) / ((-kappa * a.times[k]).exp() * d0));
    }
    Ok(worst)
}
