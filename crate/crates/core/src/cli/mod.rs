//! The `build`, `design`, `simulate` and `sweep` pipelines behind the
//! binary. Each returns a printable summary or a [`CliError`] carrying the
//! process exit code.

mod output;
mod plot;
mod scenario;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack_sim::{
    frequencies_of, perturb_model, simulate, sweep_caps, threshold_times, write_threshold_csv, write_trace_csv,
    SimError, ThresholdReport, ThresholdRow, Trace, DEFAULT_THRESHOLDS,
};
use crate::grid::{GridError, GridTopology};
use crate::lmi::design::{design_gain, DeflatedMode, DesignOptions};
use crate::lmi::{LmiCertificate, LmiError, VerificationReport};
use crate::region::{RegionError, StabilityRegion};
use crate::state_space::{eigenvalues, ModelError, StateSpace};

pub use output::write_atomic;
pub use plot::{Chart, Guide, Series};
pub use scenario::{attack_model, Governor, Perturbation, Prepared, Scenario, PRESET_NAME};

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_REJECTED: u8 = 4;
pub const EXIT_BLOWUP: u8 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{message}")]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<RegionError> for CliError {
    fn from(e: RegionError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::NonFiniteState { .. } => EXIT_BLOWUP,
            _ => EXIT_VALIDATION,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<LmiError> for CliError {
    fn from(e: LmiError) -> Self {
        let code = match e {
            LmiError::Infeasible { .. } | LmiError::NumericalBreakdown(_) => EXIT_INFEASIBLE,
            _ => EXIT_VALIDATION,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub scenario: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Options {
    fn scenario(&self) -> Result<Scenario, CliError> {
        let mut s = match &self.scenario {
            Some(path) => Scenario::load(path)?,
            None => Scenario::default(),
        };
        if let Some(out) = &self.out {
            s.outputs = out.clone();
        }
        if let Some(seed) = self.seed {
            s.sim.seed = seed;
        }
        Ok(s)
    }

    fn prepare(&self) -> Result<Prepared, CliError> {
        self.scenario()?.prepare()
    }
}

/// What a successful command printed and wrote.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub text: String,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    fn line(&mut self, s: impl AsRef<str>) {
        self.text.push_str(s.as_ref());
        self.text.push('\n');
    }
}

/// Persisted attack gain. Only `k` is required, so hand-written gains load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainArtifact {
    #[serde(default)]
    pub hash: String,
    #[serde(default)]
    pub seed: u64,
    /// `exact` or a description of the perturbed model designed on.
    #[serde(default)]
    pub design_model: String,
    /// Rows per input; per-unit input per per-unit state.
    pub k: Vec<Vec<f64>>,
    #[serde(default)]
    pub dominant_modes: Vec<Complex64>,
    #[serde(default)]
    pub deflated: Vec<DeflatedMode>,
    #[serde(default)]
    pub verification: Option<VerificationReport>,
    #[serde(default)]
    pub certificate: Option<LmiCertificate>,
}

impl GainArtifact {
    pub fn gain(&self, model: &StateSpace) -> Result<DMatrix<f64>, CliError> {
        let (m, n) = (model.inputs(), model.states());
        if self.k.len() != m || self.k.iter().any(|r| r.len() != n) {
            return Err(CliError::validation(format!(
                "gain artifact does not match the model: expected {m} rows of {n} entries"
            )));
        }
        Ok(DMatrix::from_fn(m, n, |i, j| self.k[i][j]))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = scenario::read_file(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("gain artifact {}: {e}", path.display())))
    }

    fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("artifact serialises");
        v.push(b'\n');
        v
    }
}

fn fmt_complex(z: Complex64) -> String {
    if z.im.abs() < 5e-5 {
        format!("{:.4}", z.re)
    } else {
        format!("{:.4} {} j{:.4}", z.re, if z.im < 0.0 { '-' } else { '+' }, z.im.abs())
    }
}

/// Design on `design_model`; every verification failure aborts.
fn design_artifact(
    design_model: &StateSpace,
    region: &StabilityRegion,
    hash: String,
    seed: u64,
    label: String,
) -> Result<GainArtifact, CliError> {
    let design = design_gain(&design_model.a, &design_model.b, region, &DesignOptions::default())?;
    if !design.report.passed {
        let offenders: Vec<String> = design.report.offenders().into_iter().map(fmt_complex).collect();
        return Err(CliError {
            code: EXIT_REJECTED,
            message: format!(
                "verification FAIL: closed-loop modes outside the region: {}",
                offenders.join(", ")
            ),
        });
    }
    let k = design.k;
    Ok(GainArtifact {
        hash,
        seed,
        design_model: label,
        k: (0..k.nrows()).map(|i| k.row(i).iter().copied().collect()).collect(),
        dominant_modes: design.report.placed().filter(|z| z.im >= 0.0).take(3).collect(),
        deflated: design.reduction.deflated,
        verification: Some(design.report),
        certificate: Some(design.certificate),
    })
}

fn gain_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("gain-{hash}.json"))
}

/// Reuse the content-addressed artifact when present, otherwise design and
/// persist it. Returns the artifact, its path and whether it was reused.
fn obtain_gain(
    prep: &Prepared,
    design_model: &StateSpace,
    tag: &str,
) -> Result<(GainArtifact, PathBuf, bool), CliError> {
    let hash = prep.design_hash(tag);
    let path = gain_path(&prep.scenario.outputs, &hash);
    if path.exists() {
        let art = GainArtifact::load(&path)?;
        if art.hash == hash {
            art.gain(&prep.model)?;
            return Ok((art, path, true));
        }
    }
    let art = design_artifact(
        design_model,
        &prep.scenario.region,
        hash,
        prep.scenario.sim.seed,
        tag.into(),
    )?;
    write_atomic(&path, &art.to_json())?;
    Ok((art, path, false))
}

/// Summary of a grid: dimensions and open-loop modes. `grid` is a file path
/// or the preset name; without it the scenario's grid is used.
pub fn cmd_build(grid: Option<&str>, opts: &Options) -> Result<Outcome, CliError> {
    let s = opts.scenario()?;
    let prep = match grid {
        Some(name) if name == PRESET_NAME => s.prepare_with(crate::grid::kundur_two_area())?,
        Some(name) => s.prepare_with(GridTopology::from_json(&scenario::read_file(Path::new(name))?)?)?,
        None => s.prepare()?,
    };
    let model = &prep.model;
    let eig = eigenvalues(&model.a)?;
    let mut out = Outcome::default();
    out.line(format!("n={}, m={}", model.states(), model.inputs()));
    let inputs: Vec<String> = model.input_labels.iter().map(|b| prep.grid.label(*b)).collect();
    out.line(format!(
        "generators: {}, load buses: {}, attack inputs at buses {}",
        prep.grid.generator_buses().len(),
        prep.grid.load_buses().len(),
        inputs.join(", ")
    ));
    out.line(format!("total fixed load: {} MW", prep.grid.total_fixed_load_mw()));
    out.line(format!(
        "open-loop {}, max Re = {:.4e}",
        if eig.is_stable() { "stable" } else { "unstable" },
        eig.max_real()
    ));
    out.line("dominant open-loop modes:");
    for z in eig.values.iter().filter(|z| z.im >= 0.0).take(6) {
        out.line(format!("  {}", fmt_complex(*z)));
    }
    if opts.out.is_some() {
        let summary = serde_json::json!({
            "states": model.states(),
            "inputs": model.inputs(),
            "state_labels": model.state_labels,
            "a": model.a.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "b": model.b.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "eigenvalues": eig.values,
        });
        let path = prep.scenario.outputs.join("model.json");
        let mut bytes = serde_json::to_vec_pretty(&summary).expect("model serialises");
        bytes.push(b'\n');
        out.files.push(write_atomic(&path, &bytes)?);
    }
    Ok(out)
}

pub fn cmd_design(opts: &Options) -> Result<Outcome, CliError> {
    let prep = opts.prepare()?;
    let hash = prep.design_hash("exact");
    let art = design_artifact(
        &prep.model,
        &prep.scenario.region,
        hash.clone(),
        prep.scenario.sim.seed,
        "exact".into(),
    )?;
    let path = gain_path(&prep.scenario.outputs, &hash);
    write_atomic(&path, &art.to_json())?;
    let mut out = Outcome::default();
    describe_design(&mut out, &art);
    out.line(format!("wrote {}", path.display()));
    out.files.push(path);
    Ok(out)
}

fn describe_design(out: &mut Outcome, art: &GainArtifact) {
    let placed = art.verification.as_ref().map_or(0, |r| r.placed().count());
    out.line(format!(
        "verification: PASS ({placed} modes placed, {} split off)",
        art.deflated.len()
    ));
    out.line("dominant closed-loop modes:");
    for z in &art.dominant_modes {
        out.line(format!("  {}", fmt_complex(*z)));
    }
}

fn frequency_chart<'a>(trace: &'a Trace, series: &'a [Vec<f64>], nominal: f64) -> String {
    let mut guides = vec![Guide {
        value: nominal,
        label: format!("{nominal} Hz"),
    }];
    for tau in DEFAULT_THRESHOLDS {
        for sign in [1.0, -1.0] {
            guides.push(Guide {
                value: nominal * (1.0 + sign * tau),
                label: format!("{}{}%", if sign > 0.0 { '+' } else { '-' }, tau * 100.0),
            });
        }
    }
    Chart {
        title: "Generator frequency",
        x_label: "time (s)",
        y_label: "frequency (Hz)",
        x: &trace.times,
        series: series
            .iter()
            .enumerate()
            .map(|(g, v)| Series {
                label: format!("generator {g}"),
                values: v,
            })
            .collect(),
        guides,
    }
    .render()
}

fn input_chart(trace: &Trace, series: &[Vec<f64>], labels: &[String], cap: f64) -> String {
    let guides = if cap.is_finite() {
        vec![
            Guide {
                value: cap,
                label: format!("+{cap} MW"),
            },
            Guide {
                value: -cap,
                label: format!("-{cap} MW"),
            },
        ]
    } else {
        vec![]
    };
    Chart {
        title: "Attack load",
        x_label: "time (s)",
        y_label: "load change (MW)",
        x: &trace.times,
        series: series
            .iter()
            .zip(labels)
            .map(|(v, l)| Series {
                label: format!("bus {l}"),
                values: v,
            })
            .collect(),
        guides,
    }
    .render()
}

fn fmt_time(t: Option<f64>) -> String {
    t.map_or("not reached".into(), |t| format!("{t:.2} s"))
}

fn report_thresholds(out: &mut Outcome, report: &ThresholdReport) {
    for c in &report.crossings {
        out.line(format!("{}% threshold: {}", c.threshold * 100.0, fmt_time(c.time)));
    }
    let worst = report.worst_deviation_hz.iter().copied().fold(0.0, f64::max);
    out.line(format!("largest deviation: {worst:.4} Hz"));
}

/// Simulate the scenario under the gain in `gain` (or the scenario's
/// content-addressed artifact, designed on demand).
pub fn cmd_simulate(opts: &Options, gain: Option<&Path>) -> Result<Outcome, CliError> {
    let prep = opts.prepare()?;
    let mut out = Outcome::default();
    let art = match gain {
        Some(path) => {
            out.line(format!("gain from {}", path.display()));
            GainArtifact::load(path)?
        }
        None => {
            let (art, path, reused) = obtain_gain(&prep, &prep.model, "exact")?;
            out.line(format!(
                "gain {} {}",
                if reused { "reused from" } else { "designed into" },
                path.display()
            ));
            art
        }
    };
    let k = art.gain(&prep.model)?;
    let dir = &prep.scenario.outputs;
    let cfg = &prep.scenario.sim;
    let trace = match simulate(&prep.model, &k, cfg) {
        Ok(t) => t,
        Err(e @ SimError::NonFiniteState { time }) => {
            let report = serde_json::json!({ "status": "blow-up", "time": time, "error": e.to_string() });
            write_atomic(&dir.join("report.json"), report.to_string().as_bytes())?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let freqs = frequencies_of(&trace, &prep.model);
    let nominal = prep.model.nominal_hz;
    let report = threshold_times(&trace.times, &freqs, nominal, &DEFAULT_THRESHOLDS)?;

    let mut csv = Vec::new();
    write_trace_csv(&trace, &mut csv).map_err(|e| CliError::validation(e.to_string()))?;
    out.files.push(write_atomic(&dir.join("trace.csv"), &csv)?);
    let mut csv = Vec::new();
    let rows = [ThresholdRow::new(&prep.scenario.name, cfg.cap_mw, &report)];
    write_threshold_csv(&rows, &mut csv).map_err(|e| CliError::validation(e.to_string()))?;
    out.files.push(write_atomic(&dir.join("thresholds.csv"), &csv)?);

    let m = prep.model.inputs();
    let inputs: Vec<Vec<f64>> = (0..m).map(|j| trace.inputs.iter().map(|u| u[j]).collect()).collect();
    let labels: Vec<String> = prep.model.input_labels.iter().map(|b| prep.grid.label(*b)).collect();
    out.files.push(write_atomic(
        &dir.join("inputs.svg"),
        input_chart(&trace, &inputs, &labels, cfg.cap_mw).as_bytes(),
    )?);
    out.files.push(write_atomic(
        &dir.join("frequency.svg"),
        frequency_chart(&trace, &freqs, nominal).as_bytes(),
    )?);
    let peak = trace.inputs.iter().flatten().fold(0.0f64, |a, u| a.max(u.abs()));
    let summary = serde_json::json!({
        "status": "ok",
        "scenario": prep.scenario.name,
        "gain_hash": art.hash,
        "cap_mw": if cfg.cap_mw.is_finite() { Some(cfg.cap_mw) } else { None },
        "peak_input_mw": peak,
        "thresholds": report,
    });
    out.files
        .push(write_atomic(&dir.join("report.json"), summary.to_string().as_bytes())?);

    out.line(format!("n={}, m={}, {} samples", prep.model.states(), m, trace.len()));
    out.line(format!("peak |input|: {peak:.3} MW (cap {} MW)", cfg.cap_mw));
    report_thresholds(&mut out, &report);
    for f in &out.files.clone() {
        out.line(format!("wrote {}", f.display()));
    }
    Ok(out)
}

fn render_table(rows: &[(String, ThresholdRow)]) -> String {
    let mut s = String::new();
    let width = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(9);
    let _ = writeln!(
        s,
        "{:<width$}  {:>14}  {:>14}",
        "Test case", "2.5% threshold", "5% threshold"
    );
    for (label, row) in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>14}  {:>14}",
            label,
            fmt_time(row.t_2_5pct),
            fmt_time(row.t_5pct)
        );
    }
    s
}

/// One fixed design swept over every cap, plus the perturbed-design row
/// when the scenario asks for it.
pub fn cmd_sweep(opts: &Options) -> Result<Outcome, CliError> {
    let prep = opts.prepare()?;
    let scenario = &prep.scenario;
    if scenario.caps_mw.is_empty() {
        return Err(CliError::validation("caps_mw is empty"));
    }
    let mut out = Outcome::default();
    let (art, path, reused) = obtain_gain(&prep, &prep.model, "exact")?;
    out.line(format!(
        "gain {} {}",
        if reused { "reused from" } else { "designed into" },
        path.display()
    ));
    let k = art.gain(&prep.model)?;
    let sweep = sweep_caps(&prep.model, &k, &scenario.caps_mw, &scenario.sim)?;
    let mut rows: Vec<(String, ThresholdRow)> = sweep
        .iter()
        .map(|r| {
            (
                format!("ΔP_EV ≤ ±{} MW", r.cap_mw),
                ThresholdRow::new(&scenario.name, r.cap_mw, &r.report),
            )
        })
        .collect();

    if let Some(p) = scenario.perturbation {
        let perturbed = perturb_model(&prep.model, p.relative_error, p.seed)?;
        let tag = format!("perturbed:{}:{}", p.relative_error, p.seed);
        let (part, ppath, preused) = obtain_gain(&prep, &perturbed, &tag)?;
        out.line(format!(
            "perturbed-model gain {} {}",
            if preused { "reused from" } else { "designed into" },
            ppath.display()
        ));
        let pk = part.gain(&prep.model)?;
        let cfg = &scenario.sim;
        let trace = simulate(&prep.model, &pk, cfg)?;
        let freqs = frequencies_of(&trace, &prep.model);
        let report = threshold_times(&trace.times, &freqs, prep.model.nominal_hz, &DEFAULT_THRESHOLDS)?;
        let pct = p.relative_error * 100.0;
        rows.push((
            format!("{pct}% error, ±{} MW", cfg.cap_mw),
            ThresholdRow::new(&format!("{}+{pct}%error", scenario.name), cfg.cap_mw, &report),
        ));
    }

    let dir = &scenario.outputs;
    let plain: Vec<ThresholdRow> = rows.iter().map(|(_, r)| r.clone()).collect();
    let mut csv = Vec::new();
    write_threshold_csv(&plain, &mut csv).map_err(|e| CliError::validation(e.to_string()))?;
    out.files.push(write_atomic(&dir.join("sweep.csv"), &csv)?);
    let table = render_table(&rows);
    out.files.push(write_atomic(&dir.join("sweep.txt"), table.as_bytes())?);
    out.text.push_str(&table);
    for f in &out.files.clone() {
        out.line(format!("wrote {}", f.display()));
    }
    Ok(out)
}
