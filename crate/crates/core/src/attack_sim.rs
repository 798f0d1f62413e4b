//! Saturated load-altering attack simulation on the linear grid model.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::state_space::StateSpace;

/// Relative local error allowed per step before the step is refined.
pub const STEP_TOLERANCE: f64 = 1e-6;
/// Alarm and trip deviation thresholds as fractions of nominal frequency.
pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.025, 0.05];
/// Magnitude of the default seeded load-angle perturbation (p.u.).
pub const DEFAULT_PERTURBATION: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("NonFiniteState: state overflowed at t = {time} s")]
    NonFiniteState { time: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub attack_start: f64,
    /// Per-input bound in MW; infinite (`null` in JSON) disables saturation.
    #[serde(deserialize_with = "cap_or_unbounded")]
    pub cap_mw: f64,
    pub initial_state: Option<Vec<f64>>,
    pub seed: u64,
}

fn cap_or_unbounded<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            duration: 60.0,
            attack_start: 5.0,
            cap_mw: 100.0,
            initial_state: None,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.attack_start >= 0.0) || !(self.duration > self.attack_start) {
            return bad(format!(
                "need duration > attack_start >= 0, got {} and {}",
                self.duration, self.attack_start
            ));
        }
        if !self.duration.is_finite() {
            return bad("duration must be finite".into());
        }
        if !(self.cap_mw > 0.0) {
            return bad(format!("cap_mw must be positive, got {}", self.cap_mw));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt - 1e-9).ceil() as usize
    }

    /// The explicit initial state, or the seeded default: uniform in
    /// `±1e-3` on load-angle states (on every state when there are none).
    pub fn initial_state_for(&self, ss: &StateSpace) -> Result<Vec<f64>, SimError> {
        let n = ss.states();
        if let Some(x0) = &self.initial_state {
            if x0.len() != n {
                return Err(SimError::DimensionMismatch(format!(
                    "initial state has {} entries, model has {n} states",
                    x0.len()
                )));
            }
            return Ok(x0.clone());
        }
        let mut targets = ss.load_angle_states();
        if targets.is_empty() {
            targets = (0..n).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut x0 = vec![0.0; n];
        for i in targets {
            x0[i] = rng.random_range(-DEFAULT_PERTURBATION..=DEFAULT_PERTURBATION);
        }
        Ok(x0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Post-saturation inputs in MW.
    pub inputs: Vec<Vec<f64>>,
    /// Hz, one entry per generator speed state.
    pub frequencies: Vec<Vec<f64>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Frequency series of generator `g`.
    pub fn generator_series(&self, g: usize) -> Vec<f64> {
        self.frequencies.iter().map(|f| f[g]).collect()
    }

    pub fn generator_count(&self) -> usize {
        self.frequencies.first().map_or(0, Vec::len)
    }
}

/// `out = x + h·k`.
fn offset(out: &mut [f64], x: &[f64], h: f64, k: &[f64]) {
    for ((o, xi), ki) in out.iter_mut().zip(x).zip(k) {
        *o = xi + h * ki;
    }
}

pub fn saturate(u: &[f64], cap: f64) -> Vec<f64> {
    u.iter().map(|v| v.clamp(-cap, cap)).collect()
}

/// Row-major dense copy for the inner loop.
struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Dense {
    fn new(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Dense { rows, cols, data }
    }

    fn mul_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn mul_add_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

struct Dynamics {
    a: Dense,
    /// `B / base`, so it takes MW.
    b_mw: Dense,
    /// `K · base`, so it yields MW.
    k_mw: Dense,
    cap: f64,
    u: Vec<f64>,
}

impl Dynamics {
    fn input(&mut self, x: &[f64]) {
        self.k_mw.mul_into(x, &mut self.u);
        for v in self.u.iter_mut() {
            *v = v.clamp(-self.cap, self.cap);
        }
    }

    fn eval(&mut self, x: &[f64], attacked: bool, out: &mut [f64]) {
        self.a.mul_into(x, out);
        if attacked {
            self.input(x);
            let u = std::mem::take(&mut self.u);
            self.b_mw.mul_add_into(&u, out);
            self.u = u;
        }
    }
}

struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Rk4 {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    fn step(&mut self, f: &mut Dynamics, attacked: bool, x: &[f64], h: f64, out: &mut [f64]) {
        f.eval(x, attacked, &mut self.k1);
        offset(&mut self.tmp, x, 0.5 * h, &self.k1);
        f.eval(&self.tmp, attacked, &mut self.k2);
        offset(&mut self.tmp, x, 0.5 * h, &self.k2);
        f.eval(&self.tmp, attacked, &mut self.k3);
        offset(&mut self.tmp, x, h, &self.k3);
        f.eval(&self.tmp, attacked, &mut self.k4);
        for (i, o) in out.iter_mut().enumerate() {
            *o = x[i] + h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

struct Integrator {
    rk: Rk4,
    full: Vec<f64>,
    half: Vec<f64>,
    two_half: Vec<f64>,
    cur: Vec<f64>,
    /// Substeps per unit-length piece, carried between intervals.
    density: f64,
}

impl Integrator {
    /// Advance `x` by `h` with the current phase. Each substep is accepted
    /// only if one full step and two half steps agree to the relative
    /// tolerance; otherwise the whole piece is redone with twice as many
    /// substeps.
    fn advance(&mut self, f: &mut Dynamics, attacked: bool, x: &mut [f64], h: f64) -> bool {
        let n = x.len();
        loop {
            let subs = ((h * self.density).ceil() as usize).max(1);
            let hs = h / subs as f64;
            self.cur.copy_from_slice(x);
            let mut worst: f64 = 0.0;
            let mut failed = false;
            for _ in 0..subs {
                self.rk.step(f, attacked, &self.cur, hs, &mut self.full);
                self.rk.step(f, attacked, &self.cur, 0.5 * hs, &mut self.half);
                self.rk.step(f, attacked, &self.half, 0.5 * hs, &mut self.two_half);
                let mut diff: f64 = 0.0;
                let mut size: f64 = 0.0;
                for i in 0..n {
                    diff = diff.max((self.full[i] - self.two_half[i]).abs());
                    size = size.max(self.two_half[i].abs());
                }
                if !size.is_finite() || !diff.is_finite() {
                    return false;
                }
                let err = if size > 0.0 { diff / size } else { diff };
                worst = worst.max(err);
                if err > STEP_TOLERANCE {
                    failed = true;
                    break;
                }
                self.cur.copy_from_slice(&self.two_half);
            }
            if failed {
                self.density = (subs as f64 * 2.0) / h;
                if self.density * h > 1e7 {
                    return false;
                }
                continue;
            }
            x.copy_from_slice(&self.cur);
            if worst < STEP_TOLERANCE / 64.0 && subs > 1 {
                self.density = ((subs / 2) as f64) / h;
            }
            return true;
        }
    }
}

fn check_dimensions(ss: &StateSpace, k: &DMatrix<f64>) -> Result<(), SimError> {
    if k.shape() != (ss.inputs(), ss.states()) {
        return Err(SimError::DimensionMismatch(format!(
            "gain is {}x{}, expected {}x{}",
            k.nrows(),
            k.ncols(),
            ss.inputs(),
            ss.states()
        )));
    }
    Ok(())
}

/// Integrate `ẋ = Ax` before the attack and `ẋ = Ax + B·sat(Kx)` from
/// `attack_start` on, with inputs in MW at the model's system base.
pub fn simulate(ss: &StateSpace, k: &DMatrix<f64>, cfg: &SimConfig) -> Result<Trace, SimError> {
    cfg.validate()?;
    check_dimensions(ss, k)?;
    let n = ss.states();
    let m = ss.inputs();
    let base = ss.base_mva;
    let mut f = Dynamics {
        a: Dense::new(&ss.a),
        b_mw: Dense::new(&(&ss.b / base)),
        k_mw: Dense::new(&(k * base)),
        cap: cfg.cap_mw,
        u: vec![0.0; m],
    };
    let mut integ = Integrator {
        rk: Rk4::new(n),
        full: vec![0.0; n],
        half: vec![0.0; n],
        two_half: vec![0.0; n],
        cur: vec![0.0; n],
        density: 1.0 / cfg.dt,
    };
    let speeds = ss.speed_states();
    let freq_of = |x: &[f64]| -> Vec<f64> { speeds.iter().map(|&i| ss.nominal_hz + x[i] / (2.0 * PI)).collect() };

    let steps = cfg.steps();
    let mut trace = Trace {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        frequencies: Vec::with_capacity(steps + 1),
    };
    let mut x = cfg.initial_state_for(ss)?;
    let record = |trace: &mut Trace, f: &mut Dynamics, t: f64, x: &[f64]| {
        let u = if t >= cfg.attack_start {
            f.input(x);
            f.u.clone()
        } else {
            vec![0.0; m]
        };
        trace.times.push(t);
        trace.states.push(x.to_vec());
        trace.inputs.push(u);
        trace.frequencies.push(freq_of(x));
    };
    record(&mut trace, &mut f, 0.0, &x);

    for step in 0..steps {
        let t0 = step as f64 * cfg.dt;
        let t1 = ((step + 1) as f64 * cfg.dt).min(cfg.duration);
        let ok = if t0 < cfg.attack_start && cfg.attack_start < t1 {
            integ.advance(&mut f, false, &mut x, cfg.attack_start - t0)
                && integ.advance(&mut f, true, &mut x, t1 - cfg.attack_start)
        } else {
            integ.advance(&mut f, t0 >= cfg.attack_start, &mut x, t1 - t0)
        };
        if !ok || x.iter().any(|v| !v.is_finite() || v.abs() > 1e150) {
            return Err(SimError::NonFiniteState { time: t1 });
        }
        record(&mut trace, &mut f, t1, &x);
    }
    Ok(trace)
}

/// Per-generator frequency series in Hz.
pub fn frequencies_of(trace: &Trace, ss: &StateSpace) -> Vec<Vec<f64>> {
    ss.speed_states()
        .iter()
        .map(|&i| trace.states.iter().map(|x| ss.nominal_hz + x[i] / (2.0 * PI)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    /// Fraction of nominal frequency.
    pub threshold: f64,
    pub time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub crossings: Vec<Crossing>,
    /// Largest |f - nominal| per generator, Hz.
    pub worst_deviation_hz: Vec<f64>,
}

impl ThresholdReport {
    pub fn time_for(&self, threshold: f64) -> Option<f64> {
        self.crossings
            .iter()
            .find(|c| (c.threshold - threshold).abs() < 1e-12)
            .and_then(|c| c.time)
    }
}

/// First time any generator deviates by at least `τ·nominal`, linearly
/// interpolated between samples.
pub fn threshold_times(
    times: &[f64],
    freqs: &[Vec<f64>],
    nominal: f64,
    thresholds: &[f64],
) -> Result<ThresholdReport, SimError> {
    for &tau in thresholds {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(SimError::InvalidConfig(format!("threshold {tau} outside (0, 1)")));
        }
    }
    if freqs.iter().any(|s| s.len() != times.len()) {
        return Err(SimError::DimensionMismatch(
            "frequency series and time grid differ in length".into(),
        ));
    }
    let worst_deviation_hz = freqs
        .iter()
        .map(|s| s.iter().map(|f| (f - nominal).abs()).fold(0.0, f64::max))
        .collect();
    let crossings = thresholds
        .iter()
        .map(|&tau| {
            let limit = tau * nominal;
            let mut found = None;
            'scan: for i in 0..times.len() {
                let mut best: Option<f64> = None;
                for s in freqs {
                    let d1 = (s[i] - nominal).abs();
                    if d1 < limit {
                        continue;
                    }
                    let t = if i == 0 {
                        times[0]
                    } else {
                        let d0 = (s[i - 1] - nominal).abs();
                        let frac = if d1 > d0 { (limit - d0) / (d1 - d0) } else { 1.0 };
                        times[i - 1] + frac.clamp(0.0, 1.0) * (times[i] - times[i - 1])
                    };
                    best = Some(best.map_or(t, |b: f64| b.min(t)));
                }
                if best.is_some() {
                    found = best;
                    break 'scan;
                }
            }
            Crossing {
                threshold: tau,
                time: found,
            }
        })
        .collect();
    Ok(ThresholdReport {
        crossings,
        worst_deviation_hz,
    })
}

/// Multiply every nonzero entry of `A` then `B` (row-major) by `1 + δ`,
/// `δ` uniform in `±relative_error`.
pub fn perturb_model(ss: &StateSpace, relative_error: f64, seed: u64) -> Result<StateSpace, SimError> {
    if !(0.0..1.0).contains(&relative_error) {
        return Err(SimError::InvalidConfig(format!(
            "relative error {relative_error} outside [0, 1)"
        )));
    }
    let mut out = ss.clone();
    if relative_error == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for mat in [&mut out.a, &mut out.b] {
        for i in 0..mat.nrows() {
            for j in 0..mat.ncols() {
                let v = mat[(i, j)];
                if v != 0.0 {
                    let delta = rng.random_range(-relative_error..=relative_error);
                    mat[(i, j)] = v * (1.0 + delta);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cap_mw: f64,
    pub report: ThresholdReport,
}

/// One simulation per cap, everything else fixed; rows follow `caps`.
pub fn sweep_caps(ss: &StateSpace, k: &DMatrix<f64>, caps: &[f64], cfg: &SimConfig) -> Result<Vec<SweepRow>, SimError> {
    if caps.is_empty() {
        return Err(SimError::InvalidConfig("cap list is empty".into()));
    }
    let run = |cap: f64| -> Result<SweepRow, SimError> {
        let cfg = SimConfig {
            cap_mw: cap,
            ..cfg.clone()
        };
        let trace = simulate(ss, k, &cfg)?;
        let freqs = frequencies_of(&trace, ss);
        let report = threshold_times(&trace.times, &freqs, ss.nominal_hz, &DEFAULT_THRESHOLDS)?;
        Ok(SweepRow { cap_mw: cap, report })
    };
    for &cap in caps {
        SimConfig {
            cap_mw: cap,
            ..cfg.clone()
        }
        .validate()?;
    }
    #[cfg(not(target_arch = "wasm32"))]
    {
        std::thread::scope(|scope| {
            let handles: Vec<_> = caps.iter().map(|&cap| scope.spawn(move || run(cap))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        })
    }
    #[cfg(target_arch = "wasm32")]
    {
        caps.iter().map(|&cap| run(cap)).collect()
    }
}

/// Chargers of `charger_kw` needed to draw `power_mw`.
pub fn ev_equivalent(power_mw: f64, charger_kw: f64) -> Result<u64, SimError> {
    if !(charger_kw > 0.0) {
        return Err(SimError::InvalidConfig(format!(
            "charger rating must be positive, got {charger_kw} kW"
        )));
    }
    if !(power_mw >= 0.0) || !power_mw.is_finite() {
        return Err(SimError::InvalidConfig(format!(
            "power must be finite and non-negative, got {power_mw} MW"
        )));
    }
    let exact = power_mw * 1000.0 / charger_kw;
    let nearest = exact.round();
    let count = if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    Ok(count as u64)
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// CSV with `t,state_*,u_*,f_gen_*` columns, one row per sample.
pub fn write_trace_csv<W: Write>(trace: &Trace, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let n = trace.states.first().map_or(0, Vec::len);
    let m = trace.inputs.first().map_or(0, Vec::len);
    let g = trace.generator_count();
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("state_{i}")));
    header.extend((0..m).map(|i| format!("u_{i}")));
    header.extend((0..g).map(|i| format!("f_gen_{i}")));
    w.write_record(&header)?;
    for i in 0..trace.len() {
        let row = std::iter::once(trace.times[i])
            .chain(trace.states[i].iter().copied())
            .chain(trace.inputs[i].iter().copied())
            .chain(trace.frequencies[i].iter().copied())
            .map(fmt_num);
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub scenario: String,
    pub cap_mw: f64,
    pub t_2_5pct: Option<f64>,
    pub t_5pct: Option<f64>,
}

impl ThresholdRow {
    pub fn new(scenario: &str, cap_mw: f64, report: &ThresholdReport) -> Self {
        ThresholdRow {
            scenario: scenario.to_string(),
            cap_mw,
            t_2_5pct: report.time_for(0.025),
            t_5pct: report.time_for(0.05),
        }
    }
}

/// CSV with columns `scenario,cap_mw,t_2_5pct,t_5pct`; an empty cell means
/// the threshold was never reached.
pub fn write_threshold_csv<W: Write>(rows: &[ThresholdRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["scenario", "cap_mw", "t_2_5pct", "t_5pct"])?;
    }
    w.flush()?;
    Ok(())
}
