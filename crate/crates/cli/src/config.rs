//! TOML run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fwdreg_core::forwarding::{ForwardingConfig, ForwardingMap};
use fwdreg_core::plants::{
    make_linear_benchmark, make_scalar_plant, make_sine_gordon, make_wilson_cowan, sine_gordon_smooth_state,
    LinearBenchmarkParams, ScalarParams, SineGordonParams, WilsonCowanParams,
};
use fwdreg_core::regulator::{EquilibriumOptions, FeedbackScheme};
use fwdreg_core::verify::{ball_sampler, StateSampler, VerifyConfig};
use fwdreg_core::{Plant, SpaceSpec, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Whole configuration file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Sine modes used for smooth sine-Gordon states.
    #[serde(default = "default_modes")]
    pub smooth_modes: usize,
    pub plant: PlantConfig,
    #[serde(default)]
    pub forwarding: ForwardingConfig,
    #[serde(default)]
    pub scenario: BTreeMap<String, ScenarioConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
    pub sweep: Option<SweepConfig>,
}

fn default_modes() -> usize {
    5
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantConfig {
    Linear(LinearBenchmarkParams),
    Scalar(ScalarParams),
    SineGordon(SineGordonParams),
    WilsonCowan(WilsonCowanParams),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write every `stride`-th grid point to trajectory CSVs.
    pub stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            stride: 1,
        }
    }
}

/// Shape of a generated vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Uniformly random direction.
    #[default]
    Random,
    /// All entries equal.
    Constant,
    /// Low sine modes (sine-Gordon states only).
    Smooth,
}

/// A vector given either explicitly or by norm and shape.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Values(Vec<f64>),
    Shaped {
        norm: f64,
        #[serde(default)]
        shape: Shape,
        seed: Option<u64>,
    },
}

impl Default for VectorSpec {
    fn default() -> Self {
        VectorSpec::Shaped {
            norm: 0.0,
            shape: Shape::Random,
            seed: None,
        }
    }
}

/// Reference point for deviation norms in trajectory output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumMode {
    /// Dense oracle for linear plants, final state otherwise.
    #[default]
    Auto,
    None,
    Final,
    Find,
    Oracle,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub t_final: Option<f64>,
    /// Horizon in units of `1/κ`, rounded up to the grid.
    pub t_final_kappa: Option<f64>,
    pub dt: f64,
    #[serde(default)]
    pub scheme: FeedbackScheme,
    #[serde(default)]
    pub d: VectorSpec,
    #[serde(default)]
    pub y_ref: VectorSpec,
    #[serde(default)]
    pub w0: VectorSpec,
    #[serde(default)]
    pub z0: VectorSpec,
    #[serde(default)]
    pub equilibrium: EquilibriumMode,
    /// Averaging window in units of `1/κ`.
    #[serde(default = "one")]
    pub window_kappa: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub d_norms: Vec<f64>,
    pub y_norms: Vec<f64>,
    #[serde(default)]
    pub d_shape: Shape,
    #[serde(default = "constant_shape")]
    pub y_shape: Shape,
    pub t_final: Option<f64>,
    pub t_final_kappa: Option<f64>,
    pub dt: f64,
    #[serde(default)]
    pub scheme: FeedbackScheme,
    #[serde(default)]
    pub equilibrium: EquilibriumOptions,
    /// Output error accepted as regulated.
    #[serde(default = "default_sweep_tol")]
    pub tol: f64,
    #[serde(default = "one")]
    pub window_kappa: f64,
}

fn constant_shape() -> Shape {
    Shape::Constant
}

fn default_sweep_tol() -> f64 {
    1e-6
}

/// Horizon from either an absolute time or a multiple of `1/κ`, rounded up
/// to a whole number of steps.
pub fn horizon(t_final: Option<f64>, t_final_kappa: Option<f64>, dt: f64, kappa: f64) -> Result<f64, CliError> {
    let t = match (t_final, t_final_kappa) {
        (Some(t), None) => t,
        (None, Some(k)) => k / kappa,
        _ => return Err(CliError::Config("give exactly one of t_final and t_final_kappa".into())),
    };
    let positive = |x: f64| x > 0.0 && x.is_finite();
    if !positive(dt) || !positive(t) {
        return Err(CliError::Config(format!(
            "need positive horizon and step, got T = {t}, dt = {dt}"
        )));
    }
    Ok((t / dt).ceil() * dt)
}

/// Loaded configuration with its hash.
pub struct Loaded {
    pub config: RunConfig,
    pub sha256: String,
    pub path: PathBuf,
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let config = parse(&text)?;
    Ok(Loaded {
        config,
        sha256: hex::encode(Sha256::digest(text.as_bytes())),
        path: path.to_path_buf(),
    })
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

/// Plant with its state samplers.
pub struct Built {
    pub plant: Arc<Plant>,
    /// Sampler used by the verification battery.
    pub sampler: Box<StateSampler>,
    smooth: Option<Box<StateSampler>>,
    pub extra: serde_json::Value,
}

impl RunConfig {
    pub fn build_plant(&self) -> Result<Built, CliError> {
        let modes = self.smooth_modes;
        Ok(match &self.plant {
            PlantConfig::Linear(p) => {
                let plant = Arc::new(make_linear_benchmark(p)?);
                Built {
                    sampler: ball_sampler(plant.clone()),
                    plant,
                    smooth: None,
                    extra: serde_json::Value::Null,
                }
            }
            PlantConfig::Scalar(p) => {
                let plant = Arc::new(make_scalar_plant(p)?);
                Built {
                    sampler: ball_sampler(plant.clone()),
                    plant,
                    smooth: None,
                    extra: serde_json::Value::Null,
                }
            }
            PlantConfig::SineGordon(p) => {
                let plant = Arc::new(make_sine_gordon(p)?);
                let smooth = |plant: Arc<Plant>, params: SineGordonParams| -> Box<StateSampler> {
                    Box::new(move |rng, r| sine_gordon_smooth_state(&plant, &params, rng, modes, r))
                };
                Built {
                    sampler: smooth(plant.clone(), p.clone()),
                    smooth: Some(smooth(plant.clone(), p.clone())),
                    plant,
                    extra: serde_json::to_value(p.constants()).unwrap_or_default(),
                }
            }
            PlantConfig::WilsonCowan(p) => {
                let plant = Arc::new(make_wilson_cowan(p)?);
                let extra = serde_json::json!({
                    "m_ks": fwdreg_core::plants::compute_m_ks(p),
                    "feasible": p.feasible(),
                    "global": p.global(),
                });
                Built {
                    sampler: ball_sampler(plant.clone()),
                    plant,
                    smooth: None,
                    extra,
                }
            }
        })
    }

    pub fn forwarding_map(&self, plant: Arc<Plant>) -> Result<ForwardingMap, CliError> {
        Ok(ForwardingMap::new(plant, self.forwarding.clone())?)
    }
}

impl Built {
    /// Realizes a vector in `space`; `label` and `seed` fix the random stream.
    pub fn vector(
        &self,
        spec: &VectorSpec,
        space: &SpaceSpec,
        is_state: bool,
        seed: u64,
        label: &str,
    ) -> Result<Vector, CliError> {
        match spec {
            VectorSpec::Values(v) => {
                if v.len() != space.dim() {
                    return Err(CliError::Config(format!(
                        "{label}: expected {} entries, got {}",
                        space.dim(),
                        v.len()
                    )));
                }
                Ok(Vector::from_column_slice(v))
            }
            VectorSpec::Shaped { norm, shape, seed: own } => {
                if *norm == 0.0 {
                    return Ok(Vector::zeros(space.dim()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(own.unwrap_or(seed));
                rng.set_stream(stream_id(label));
                let v = match shape {
                    Shape::Random => space.random_unit(&mut rng),
                    Shape::Constant => {
                        let ones = Vector::from_element(space.dim(), 1.0);
                        &ones / space.norm(&ones)
                    }
                    Shape::Smooth => match (&self.smooth, is_state) {
                        (Some(s), true) => s(&mut rng, 1.0),
                        _ => {
                            return Err(CliError::Config(format!(
                                "{label}: smooth shape is only available for sine-Gordon states"
                            )))
                        }
                    },
                };
                Ok(v * *norm)
            }
        }
    }
}

/// FNV-1a of a label, used as a ChaCha stream id.
fn stream_id(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_linear() {
        let c = parse(
            r#"
            [plant]
            kind = "linear"
            n = 4
            alpha = 0.5
            "#,
        )
        .unwrap();
        assert!(matches!(c.plant, PlantConfig::Linear(ref p) if p.n == 4 && p.inputs == 2));
        assert!(c.scenario.is_empty());
        assert_eq!(c.output.stride, 1);
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = parse(
            r#"
            [plant]
            kind = "scalar"
            a = 2.0
            bogus = 1
            "#,
        );
        assert!(err.is_err());
        let err = parse(
            r#"
            [plant]
            kind = "scalar"
            a = 2.0
            [verify]
            tolerance = 1
            "#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn sine_gordon_defaults_and_vectors() {
        let c = parse(
            r#"
            [plant]
            kind = "sine_gordon"
            n = 20
            [scenario.a]
            dt = 0.5
            t_final = 2.0
            y_ref = [0.01]
            d = { norm = 0.01, shape = "smooth" }
            "#,
        )
        .unwrap();
        let b = c.build_plant().unwrap();
        let s = &c.scenario["a"];
        let d = b.vector(&s.d, b.plant.space_h(), true, 0, "a.d").unwrap();
        assert!((b.plant.space_h().norm(&d) - 0.01).abs() < 1e-15);
        let d2 = b.vector(&s.d, b.plant.space_h(), true, 0, "a.d").unwrap();
        assert_eq!(d, d2);
        assert!(b.vector(&s.y_ref, b.plant.space_z(), false, 0, "a.y").unwrap()[0] == 0.01);
        assert!(b.vector(&s.d, b.plant.space_z(), false, 0, "a.d").is_err());
    }

    #[test]
    fn horizon_rules() {
        assert!((horizon(Some(1.05), None, 0.1, 1.0).unwrap() - 1.1).abs() < 1e-12);
        assert_eq!(horizon(None, Some(2.0), 0.5, 0.25).unwrap(), 8.0);
        assert!(horizon(Some(1.0), Some(1.0), 0.1, 1.0).is_err());
        assert!(horizon(None, None, 0.1, 1.0).is_err());
    }
}
