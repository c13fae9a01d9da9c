//! `gains`, `simulate`, `verify` and `sweep`.

use std::path::PathBuf;

use fwdreg_core::forwarding::ForwardingMap;
use fwdreg_core::regulator::{
    convergence_report, equilibrium_residuals, find_equilibrium, rho_deviation, simulate, ClosedLoopState,
    EquilibriumOptions, RegulationReport, Scenario, SimulationRun,
};
use fwdreg_core::verify::{dense_linear_oracle, run_battery, VerificationReport};
use fwdreg_core::{FeedbackScheme, Vector};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{horizon, Built, EquilibriumMode, Loaded, RunConfig, ScenarioConfig, VectorSpec};
use crate::output::{num, OutDir, Stamp};
use crate::{CliError, Outcome};

/// Loaded configuration plus command-line overrides.
pub struct Context {
    pub config: RunConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub out: OutDir,
}

impl Context {
    pub fn new(loaded: Loaded, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, CliError> {
        let Loaded { config, sha256, .. } = loaded;
        let dir = out.unwrap_or_else(|| config.output.dir.clone());
        Ok(Self {
            seed: seed.unwrap_or(config.seed),
            config,
            config_sha256: sha256,
            out: OutDir::new(dir)?,
        })
    }

    pub fn stamp(&self) -> Stamp {
        Stamp {
            config_sha256: self.config_sha256.clone(),
            seed: self.seed,
        }
    }

    fn setup(&self) -> Result<(Built, ForwardingMap), CliError> {
        let built = self.config.build_plant()?;
        let fmap = self.config.forwarding_map(built.plant.clone())?;
        Ok((built, fmap))
    }
}

/// Controller constants with the inputs they are computed from.
#[derive(Clone, Debug, Serialize)]
pub struct GainsReport {
    pub plant: String,
    pub alpha: Option<f64>,
    pub lambda: f64,
    pub lambda_tilde: f64,
    pub rho: Option<f64>,
    pub kappa: Option<f64>,
    pub feasible: bool,
    pub b_norm: f64,
    pub ca_inv_norm: f64,
    pub tau_max: f64,
    pub dt_quad: f64,
    pub quadrature_steps: usize,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub plant_constants: serde_json::Value,
}

pub fn gains_report(built: &Built, fmap: &ForwardingMap) -> GainsReport {
    let plant = fmap.plant();
    let gains = fmap.gains().ok();
    let lambda = fmap.coercivity_lambda();
    GainsReport {
        plant: plant.name().to_string(),
        alpha: plant.alpha_cert(),
        lambda,
        lambda_tilde: gains.map_or(lambda / 3.0, |g| g.lambda_tilde),
        rho: gains.map(|g| g.rho),
        kappa: gains.map(|g| g.kappa),
        feasible: gains.is_some(),
        b_norm: fmap.b_norm(),
        ca_inv_norm: fmap.ca_inv_norm(),
        tau_max: fmap.tau_max(),
        dt_quad: fmap.dt_quad(),
        quadrature_steps: fmap.quadrature_steps(),
        plant_constants: built.extra.clone(),
    }
}

pub fn cmd_gains(ctx: &Context) -> Result<(GainsReport, Outcome), CliError> {
    let (built, fmap) = ctx.setup()?;
    let report = gains_report(&built, &fmap);
    ctx.out.write_json("gains.json", &report)?;
    let outcome = if report.feasible {
        Outcome::Pass
    } else {
        Outcome::Infeasible
    };
    Ok((report, outcome))
}

/// Where the deviation reference of a scenario came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumSource {
    None,
    Oracle,
    Search,
    FinalState,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquilibriumSummary {
    pub source: EquilibriumSource,
    pub found: bool,
    pub state_residual: f64,
    pub output_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub scheme: FeedbackScheme,
    pub t_final: f64,
    pub dt: f64,
    pub steps: usize,
    pub aborted: bool,
    pub abort_reason: Option<String>,
    pub equilibrium: EquilibriumSummary,
    pub report: RegulationReport,
    pub csv: String,
}

/// Builds the core scenario from its configuration.
pub fn scenario(
    ctx: &Context,
    built: &Built,
    fmap: &ForwardingMap,
    name: &str,
    sc: &ScenarioConfig,
) -> Result<Scenario, CliError> {
    let kappa = fmap.gains()?.kappa;
    let p = &built.plant;
    let vec = |spec: &VectorSpec, is_state: bool, field: &str| {
        let space = if is_state { p.space_h() } else { p.space_z() };
        built.vector(spec, space, is_state, ctx.seed, &format!("scenario.{name}.{field}"))
    };
    Ok(Scenario {
        name: name.to_string(),
        d: vec(&sc.d, true, "d")?,
        y_ref: vec(&sc.y_ref, false, "y_ref")?,
        w0: vec(&sc.w0, true, "w0")?,
        z0: vec(&sc.z0, false, "z0")?,
        t_final: horizon(sc.t_final, sc.t_final_kappa, sc.dt, kappa)?,
        dt: sc.dt,
    })
}

fn reference(
    fmap: &ForwardingMap,
    scen: &Scenario,
    sc: &ScenarioConfig,
    run: &SimulationRun,
) -> Result<(EquilibriumSource, bool, Vector, Vector), CliError> {
    let plant = fmap.plant();
    let mode = match sc.equilibrium {
        EquilibriumMode::Auto if plant.is_linear() => EquilibriumMode::Oracle,
        EquilibriumMode::Auto => EquilibriumMode::Final,
        m => m,
    };
    let last = run.last_state();
    Ok(match mode {
        EquilibriumMode::Oracle => {
            let rho = run.gains.rho;
            let o = dense_linear_oracle(plant, &scen.d, &scen.y_ref, rho)?;
            (EquilibriumSource::Oracle, true, o.w_star, o.z_star)
        }
        EquilibriumMode::Find => {
            let opts = EquilibriumOptions {
                dt: sc.dt,
                scheme: sc.scheme,
                ..EquilibriumOptions::default()
            };
            let r = find_equilibrium(fmap, &scen.d, &scen.y_ref, None, &opts)?;
            if let Some(m) = &r.message {
                warn!("scenario {}: {m}", scen.name);
            }
            (EquilibriumSource::Search, r.found, r.w_star, r.z_star)
        }
        EquilibriumMode::Final | EquilibriumMode::Auto => {
            (EquilibriumSource::FinalState, false, last.w.clone(), last.z.clone())
        }
        EquilibriumMode::None => (EquilibriumSource::None, false, last.w.clone(), last.z.clone()),
    })
}

fn run_scenario(
    ctx: &Context,
    built: &Built,
    fmap: &ForwardingMap,
    name: &str,
    sc: &ScenarioConfig,
) -> Result<ScenarioSummary, CliError> {
    let scen = scenario(ctx, built, fmap, name, sc)?;
    info!("scenario {name}: T = {}, dt = {}", scen.t_final, scen.dt);
    let run = simulate(fmap, &scen, sc.scheme)?;
    let (source, found, w_star, z_star) = reference(fmap, &scen, sc, &run)?;
    let window = sc.window_kappa / run.gains.kappa;
    let report = convergence_report(fmap, &run, &w_star, &z_star, window)?;
    let (state_residual, output_residual) = equilibrium_residuals(
        fmap,
        &ClosedLoopState::new(w_star.clone(), z_star.clone()),
        &scen.d,
        &scen.y_ref,
    )?;
    let deviations = if source == EquilibriumSource::None {
        None
    } else {
        Some(rho_deviation(fmap, &run, &w_star, &z_star)?)
    };
    let csv = write_trajectory(ctx, fmap, &run, deviations.as_deref(), &w_star, &z_star)?;
    Ok(ScenarioSummary {
        name: name.to_string(),
        scheme: sc.scheme,
        t_final: scen.t_final,
        dt: scen.dt,
        steps: run.times.len().saturating_sub(1),
        aborted: run.aborted,
        abort_reason: run.abort_reason.clone(),
        equilibrium: EquilibriumSummary {
            source,
            found,
            state_residual,
            output_residual,
        },
        report,
        csv,
    })
}

fn write_trajectory(
    ctx: &Context,
    fmap: &ForwardingMap,
    run: &SimulationRun,
    deviations: Option<&[f64]>,
    w_star: &Vector,
    z_star: &Vector,
) -> Result<String, CliError> {
    let p = fmap.plant();
    let (h, zs) = (p.space_h(), p.space_z());
    let mut header = vec!["t".to_string(), "w_norm".to_string()];
    header.extend((0..p.dim_z()).map(|i| format!("z{i}")));
    header.extend((0..p.dim_z()).map(|i| format!("y{i}")));
    header.extend((0..p.dim_u()).map(|i| format!("u{i}")));
    header.extend(["V".to_string(), "eta_norm".to_string()]);
    if deviations.is_some() {
        header.extend(["dev_rho".to_string(), "dev_wz".to_string()]);
    }
    let n = run.times.len();
    let stride = ctx.config.output.stride.max(1);
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
    if n > 0 && idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    let rows = idx.into_iter().map(|k| {
        let s = &run.states[k];
        let mut row = vec![num(run.times[k]), num(h.norm(&s.w))];
        row.extend(s.z.iter().map(|&x| num(x)));
        row.extend(run.outputs[k].iter().map(|&x| num(x)));
        row.extend(run.controls[k].iter().map(|&x| num(x)));
        row.push(num(run.lyapunov[k]));
        row.push(num(zs.norm(&run.etas[k])));
        if let Some(dev) = deviations {
            row.push(num(dev[k]));
            let dwz = (h.norm_squared(&(&s.w - w_star)) + zs.norm_squared(&(&s.z - z_star))).sqrt();
            row.push(num(dwz));
        }
        row
    });
    let name = format!("{}.csv", run.scenario);
    ctx.out.write_csv(&name, &ctx.stamp(), &header, rows)?;
    Ok(name)
}

pub fn cmd_simulate(ctx: &Context) -> Result<(Vec<ScenarioSummary>, Outcome), CliError> {
    let (built, fmap) = ctx.setup()?;
    fmap.gains()?;
    let names: Vec<(&String, &ScenarioConfig)> = ctx.config.scenario.iter().collect();
    let summaries = names
        .par_iter()
        .map(|(name, sc)| run_scenario(ctx, &built, &fmap, name, sc))
        .collect::<Result<Vec<_>, CliError>>()?;
    for s in &summaries {
        ctx.out.write_json(&format!("{}.json", s.name), s)?;
    }
    ctx.out.write_json("simulate.json", &summaries)?;
    let outcome = if summaries.iter().any(|s| s.aborted) {
        Outcome::Diverged
    } else {
        Outcome::Pass
    };
    Ok((summaries, outcome))
}

pub fn cmd_verify(ctx: &Context) -> Result<(VerificationReport, Outcome), CliError> {
    let (built, fmap) = ctx.setup()?;
    let mut vc = ctx.config.verify.clone();
    vc.seed = ctx.seed;
    let report = run_battery(&fmap, &vc, &*built.sampler)?;
    ctx.out.write_json("verify.json", &report)?;
    let outcome = if report.pass {
        Outcome::Pass
    } else {
        Outcome::VerificationFailed
    };
    Ok((report, outcome))
}

/// One cell of the disturbance/reference grid.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub d_norm: f64,
    pub y_norm: f64,
    pub success: bool,
    pub found: bool,
    pub aborted: bool,
    pub state_residual: f64,
    pub output_residual: f64,
    pub final_output_error: f64,
    pub averaged_output_error: f64,
    pub fitted_rate: Option<f64>,
    pub message: Option<String>,
}

impl SweepRow {
    fn failed(d_norm: f64, y_norm: f64, message: String) -> Self {
        Self {
            d_norm,
            y_norm,
            success: false,
            found: false,
            aborted: false,
            state_residual: f64::NAN,
            output_residual: f64::NAN,
            final_output_error: f64::NAN,
            averaged_output_error: f64::NAN,
            fitted_rate: None,
            message: Some(message),
        }
    }
}

pub fn cmd_sweep(ctx: &Context) -> Result<(Vec<SweepRow>, Outcome), CliError> {
    let sweep = ctx
        .config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [sweep] section".into()))?;
    let (built, fmap) = ctx.setup()?;
    let gains = fmap.gains()?;
    let t_final = horizon(sweep.t_final, sweep.t_final_kappa, sweep.dt, gains.kappa)?;
    let p = &built.plant;
    let unit = |shape, is_state: bool, label: &str| {
        let spec = VectorSpec::Shaped {
            norm: 1.0,
            shape,
            seed: None,
        };
        let space = if is_state { p.space_h() } else { p.space_z() };
        built.vector(&spec, space, is_state, ctx.seed, label)
    };
    let d_dir = unit(sweep.d_shape, true, "sweep.d")?;
    let y_dir = unit(sweep.y_shape, false, "sweep.y_ref")?;
    let cells: Vec<(usize, usize)> = (0..sweep.d_norms.len())
        .flat_map(|i| (0..sweep.y_norms.len()).map(move |j| (i, j)))
        .collect();
    let cell_dir = ctx.out.subdir("sweep")?;
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(i, j)| {
            let (dn, yn) = (sweep.d_norms[i], sweep.y_norms[j]);
            let row = sweep_cell(&fmap, &d_dir * dn, &y_dir * yn, t_final, sweep.dt, sweep, gains.kappa)
                .unwrap_or_else(|e| SweepRow::failed(dn, yn, e.to_string()));
            let row = SweepRow {
                d_norm: dn,
                y_norm: yn,
                ..row
            };
            if let Err(e) = cell_dir.write_json(&format!("cell_{i}_{j}.json"), &row) {
                warn!("sweep cell ({i}, {j}): {e}");
            }
            row
        })
        .collect();
    let header: Vec<String> = [
        "d_norm",
        "y_norm",
        "success",
        "found",
        "aborted",
        "state_residual",
        "output_residual",
        "final_output_error",
        "averaged_output_error",
        "fitted_rate",
        "message",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let records = rows.iter().map(|r| {
        vec![
            num(r.d_norm),
            num(r.y_norm),
            r.success.to_string(),
            r.found.to_string(),
            r.aborted.to_string(),
            num(r.state_residual),
            num(r.output_residual),
            num(r.final_output_error),
            num(r.averaged_output_error),
            r.fitted_rate.map(num).unwrap_or_default(),
            r.message.clone().unwrap_or_default(),
        ]
    });
    ctx.out.write_csv("sweep.csv", &ctx.stamp(), &header, records)?;
    Ok((rows, Outcome::Pass))
}

fn sweep_cell(
    fmap: &ForwardingMap,
    d: Vector,
    y_ref: Vector,
    t_final: f64,
    dt: f64,
    sweep: &crate::config::SweepConfig,
    kappa: f64,
) -> Result<SweepRow, CliError> {
    let eq = find_equilibrium(fmap, &d, &y_ref, None, &sweep.equilibrium)?;
    let plant = fmap.plant();
    let scen = Scenario {
        name: "sweep".into(),
        w0: Vector::zeros(plant.dim_h()),
        z0: Vector::zeros(plant.dim_z()),
        d,
        y_ref,
        t_final,
        dt,
    };
    let run = simulate(fmap, &scen, sweep.scheme)?;
    let rep = convergence_report(fmap, &run, &eq.w_star, &eq.z_star, sweep.window_kappa / kappa)?;
    let success = eq.found && !run.aborted && eq.output_residual <= sweep.tol && rep.final_output_error <= sweep.tol;
    Ok(SweepRow {
        d_norm: 0.0,
        y_norm: 0.0,
        success,
        found: eq.found,
        aborted: run.aborted,
        state_residual: eq.state_residual,
        output_residual: eq.output_residual,
        final_output_error: rep.final_output_error,
        averaged_output_error: rep.averaged_output_error,
        fitted_rate: rep.fitted_rate,
        message: eq.message.or(run.abort_reason),
    })
}
