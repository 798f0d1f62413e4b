//! Browser bindings: build the two-area model, design an attack gain for a
//! pole region, and simulate the saturated attack. Results cross the
//! boundary as JSON strings.

use gridlock::attack_sim::{frequencies_of, simulate, threshold_times, SimConfig, DEFAULT_THRESHOLDS};
use gridlock::grid::{build_admittance, kundur_two_area, partition_admittance, validate_topology, ValidatedGrid};
use gridlock::lmi::design::{design_gain, DesignOptions};
use gridlock::region::{RegionConstraint, StabilityRegion};
use gridlock::state_space::{eigenvalues, grid_ss, StateSpace};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Samples kept per plotted series.
const PLOT_POINTS: usize = 600;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn complex_list(v: impl IntoIterator<Item = Complex64>) -> Value {
    v.into_iter().map(|z| json!([z.re, z.im])).collect()
}

fn model_of(grid: &ValidatedGrid) -> Result<StateSpace, String> {
    let partition = partition_admittance(&build_admittance(grid), &grid.kinds()).map_err(|e| e.to_string())?;
    grid_ss(grid, &partition, &grid.demand_buses()).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    model: StateSpace,
    gain: DMatrix<f64>,
}

impl Demo {
    fn build(kp: f64, ki: f64) -> Result<Demo, String> {
        let grid = validate_topology(kundur_two_area())
            .and_then(|g| g.with_governor(kp, ki))
            .map_err(|e| e.to_string())?;
        let model = model_of(&grid)?;
        let gain = DMatrix::zeros(model.inputs(), model.states());
        Ok(Demo { model, gain })
    }

    fn modes_json(&self) -> Result<Value, String> {
        let acl = &self.model.a + &self.model.b * &self.gain;
        let eig = eigenvalues(&acl).map_err(|e| e.to_string())?;
        Ok(json!({
            "states": self.model.states(),
            "inputs": self.model.inputs(),
            "stable": eig.is_stable(),
            "modes": complex_list(eig.values.iter().copied()),
        }))
    }

    fn design_json(&mut self, regions: &str) -> Result<Value, String> {
        let constraints: Vec<RegionConstraint> = serde_json::from_str(regions).map_err(|e| e.to_string())?;
        let region = StabilityRegion::new(constraints).map_err(|e| e.to_string())?;
        let d =
            design_gain(&self.model.a, &self.model.b, &region, &DesignOptions::default()).map_err(|e| e.to_string())?;
        self.gain = d.k;
        Ok(json!({
            "passed": d.report.passed,
            "placed": complex_list(d.report.placed()),
            "offenders": complex_list(d.report.offenders()),
            "gain_norm": self.gain.norm(),
        }))
    }

    fn simulate_json(&self, cap_mw: f64, duration: f64, seed: u64) -> Result<Value, String> {
        let cfg = SimConfig {
            duration,
            cap_mw: if cap_mw > 0.0 { cap_mw } else { f64::INFINITY },
            seed,
            ..SimConfig::default()
        };
        let trace = simulate(&self.model, &self.gain, &cfg).map_err(|e| e.to_string())?;
        let freqs = frequencies_of(&trace, &self.model);
        let report = threshold_times(&trace.times, &freqs, self.model.nominal_hz, &DEFAULT_THRESHOLDS)
            .map_err(|e| e.to_string())?;
        let stride = trace.len().div_ceil(PLOT_POINTS).max(1);
        let pick = |v: &[f64]| v.iter().step_by(stride).copied().collect::<Vec<_>>();
        let inputs: Vec<Vec<f64>> = (0..self.model.inputs())
            .map(|j| trace.inputs.iter().step_by(stride).map(|u| u[j]).collect())
            .collect();
        Ok(json!({
            "t": pick(&trace.times),
            "f": freqs.iter().map(|f| pick(f)).collect::<Vec<_>>(),
            "u": inputs,
            "nominal_hz": self.model.nominal_hz,
            "crossings": report.crossings.iter().map(|c| json!([c.threshold, c.time])).collect::<Vec<_>>(),
            "worst_hz": report.worst_deviation_hz,
        }))
    }
}

#[wasm_bindgen]
impl Demo {
    /// Two-area grid with governor gains `kp`, `ki` on every generator.
    #[wasm_bindgen(constructor)]
    pub fn new(kp: f64, ki: f64) -> Result<Demo, JsError> {
        Demo::build(kp, ki).map_err(err)
    }

    /// `{states, inputs, stable, modes: [[re, im], ...]}` for `A + B K`.
    pub fn modes(&self) -> Result<String, JsError> {
        self.modes_json().map(|v| v.to_string()).map_err(err)
    }

    /// Design and keep a gain for `regions`, a JSON list such as
    /// `[{"strip": {"alpha": -0.5, "beta": 0}}]`.
    pub fn design(&mut self, regions: &str) -> Result<String, JsError> {
        self.design_json(regions).map(|v| v.to_string()).map_err(err)
    }

    /// Drop the designed gain.
    pub fn reset(&mut self) {
        self.gain.fill(0.0);
    }

    /// Run the attack with per-input cap `cap_mw` (non-positive means
    /// unbounded) and return decimated time, frequency and input series.
    pub fn simulate(&self, cap_mw: f64, duration: f64, seed: u64) -> Result<String, JsError> {
        self.simulate_json(cap_mw, duration, seed)
            .map(|v| v.to_string())
            .map_err(err)
    }
}
