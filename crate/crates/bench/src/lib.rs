//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use fwdreg_core::forwarding::{ForwardingConfig, ForwardingMap};
use fwdreg_core::plants::{
    make_linear_benchmark, make_sine_gordon, make_wilson_cowan, sine_gordon_smooth_state, LinearBenchmarkParams,
    SineGordonParams, WilsonCowanParams,
};
use fwdreg_core::{Plant, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn sine_gordon() -> Arc<Plant> {
    Arc::new(make_sine_gordon(&SineGordonParams::default()).expect("sine-Gordon plant"))
}

pub fn wilson_cowan() -> Arc<Plant> {
    Arc::new(make_wilson_cowan(&WilsonCowanParams::default()).expect("Wilson-Cowan plant"))
}

pub fn linear(n: usize) -> Arc<Plant> {
    Arc::new(make_linear_benchmark(&LinearBenchmarkParams::new(n, 0.5, 11)).expect("linear plant"))
}

/// Smooth unit-norm sine-Gordon state.
pub fn sine_gordon_state(plant: &Plant) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    sine_gordon_smooth_state(plant, &SineGordonParams::default(), &mut rng, 5, 1.0)
}

/// Random state of the given norm.
pub fn ball_state(plant: &Plant, radius: f64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let w = plant.space_h().random_unit(&mut rng);
    w * radius
}

/// Forwarding map with a fixed horizon so timings do not depend on the tail rule.
pub fn forwarding(plant: Arc<Plant>, dt_quad: f64, tau: f64) -> ForwardingMap {
    let cfg = ForwardingConfig {
        dt_quad,
        tau_max: Some(tau),
        ..Default::default()
    };
    ForwardingMap::new(plant, cfg).expect("forwarding map")
}
