//! Grid topology, validation and the DC power-flow admittance structure.
//!
//! Everything is expressed in per-unit on the grid's declared system base.
//! Angles are radians, speeds rad/s, and the susceptance of a line is the
//! reciprocal of its series reactance.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frequency sensitivity assigned to buses that carry neither a generator
/// nor a real load when a topology is assembled programmatically.
pub const DEFAULT_INTERIOR_SENSITIVITY: f64 = 0.01;

const KUNDUR_JSON: &str = include_str!("../data/kundur_two_area.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub usize);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bus {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    GeneratorBus,
    LoadBus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub index: BusId,
    pub kind: BusKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    /// Series susceptance y_ab in per-unit.
    pub admittance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Inertia M, per-unit power per rad/s².
    pub inertia: f64,
    /// Mechanical damping D, per-unit power per rad/s.
    pub damping: f64,
    /// Governor proportional gain on speed deviation.
    pub kp: f64,
    /// Governor integral gain (acts on the rotor angle).
    pub ki: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    /// D_L, per-unit power per rad/s of bus-angle rate.
    pub frequency_sensitivity: f64,
    /// Frequency-insensitive demand in MW.
    #[serde(default)]
    pub fixed_load_mw: f64,
}

/// Physical description of a grid, exactly as read from a grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTopology {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: BTreeMap<BusId, GeneratorParams>,
    pub loads: BTreeMap<BusId, LoadParams>,
    pub system_base_mva: f64,
    pub nominal_frequency_hz: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("bus indices must be dense and 0-based; expected {expected}, found {found}")]
    NonDenseBusIndex { expected: usize, found: usize },
    #[error("line {line} refers to unknown {bus}")]
    UnknownBus { line: usize, bus: BusId },
    #[error("line {line} connects {bus} to itself")]
    SelfLoop { line: usize, bus: BusId },
    #[error("NonPositiveAdmittance: line {line} has admittance {admittance}")]
    NonPositiveAdmittance { line: usize, admittance: f64 },
    #[error("NoGeneratorBuses: grid has no generator bus")]
    NoGeneratorBuses,
    #[error("NoLoadBuses: grid has no load bus")]
    NoLoadBuses,
    #[error("DisconnectedGraph: {unreached} of {total} buses unreachable from bus 0")]
    DisconnectedGraph { unreached: usize, total: usize },
    #[error("MissingParams: {0} has no parameters for its kind")]
    MissingParams(BusId),
    #[error("UnexpectedParams: {0} has parameters that do not match its kind")]
    UnexpectedParams(BusId),
    #[error("InvalidGeneratorParams: {bus}: {reason}")]
    InvalidGeneratorParams { bus: BusId, reason: &'static str },
    #[error("ZeroFrequencySensitivity: {0} has D_L <= 0")]
    ZeroFrequencySensitivity(BusId),
    #[error("system base must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("nominal frequency must be positive, got {0}")]
    NonPositiveFrequency(f64),
    #[error("adjacency matrix is {got}x{got}, expected {expected}x{expected}")]
    KindsMismatch { expected: usize, got: usize },
    #[error("grid file: {0}")]
    Parse(String),
}

/// A topology whose invariants have been checked. Parallel lines are merged.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedGrid {
    topology: GridTopology,
}

impl ValidatedGrid {
    pub fn topology(&self) -> &GridTopology {
        &self.topology
    }

    pub fn bus_count(&self) -> usize {
        self.topology.buses.len()
    }

    pub fn kinds(&self) -> Vec<BusKind> {
        self.topology.buses.iter().map(|b| b.kind).collect()
    }

    pub fn generator_buses(&self) -> Vec<BusId> {
        self.buses_of(BusKind::GeneratorBus)
    }

    pub fn load_buses(&self) -> Vec<BusId> {
        self.buses_of(BusKind::LoadBus)
    }

    fn buses_of(&self, kind: BusKind) -> Vec<BusId> {
        self.topology
            .buses
            .iter()
            .filter(|b| b.kind == kind)
            .map(|b| b.index)
            .collect()
    }

    pub fn generator(&self, bus: BusId) -> &GeneratorParams {
        &self.topology.generators[&bus]
    }

    pub fn load(&self, bus: BusId) -> &LoadParams {
        &self.topology.loads[&bus]
    }

    /// Load buses with a positive fixed demand, i.e. the buses where EV
    /// charging load lives.
    pub fn demand_buses(&self) -> Vec<BusId> {
        self.load_buses()
            .into_iter()
            .filter(|b| self.load(*b).fixed_load_mw > 0.0)
            .collect()
    }

    pub fn total_fixed_load_mw(&self) -> f64 {
        self.topology.loads.values().map(|l| l.fixed_load_mw).sum()
    }

    pub fn system_base_mva(&self) -> f64 {
        self.topology.system_base_mva
    }

    pub fn nominal_frequency_hz(&self) -> f64 {
        self.topology.nominal_frequency_hz
    }

    pub fn label(&self, bus: BusId) -> String {
        self.topology.buses[bus.0]
            .label
            .clone()
            .unwrap_or_else(|| bus.0.to_string())
    }

    /// Replace the governor gains of every generator.
    pub fn with_governor(mut self, kp: f64, ki: f64) -> Result<Self, GridError> {
        for g in self.topology.generators.values_mut() {
            g.kp = kp;
            g.ki = ki;
        }
        validate_topology(self.topology)
    }
}

impl GridTopology {
    pub fn from_json(text: &str) -> Result<Self, GridError> {
        serde_json::from_str(text).map_err(|e| GridError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }
}

/// Check every topology invariant, reporting the first one violated.
pub fn validate_topology(mut raw: GridTopology) -> Result<ValidatedGrid, GridError> {
    if !(raw.system_base_mva > 0.0) {
        return Err(GridError::NonPositiveBase(raw.system_base_mva));
    }
    if !(raw.nominal_frequency_hz > 0.0) {
        return Err(GridError::NonPositiveFrequency(raw.nominal_frequency_hz));
    }
    raw.buses.sort_by_key(|b| b.index);
    for (expected, bus) in raw.buses.iter().enumerate() {
        if bus.index.0 != expected {
            return Err(GridError::NonDenseBusIndex {
                expected,
                found: bus.index.0,
            });
        }
    }
    let n = raw.buses.len();
    for (i, line) in raw.lines.iter().enumerate() {
        for bus in [line.from, line.to] {
            if bus.0 >= n {
                return Err(GridError::UnknownBus { line: i, bus });
            }
        }
        if line.from == line.to {
            return Err(GridError::SelfLoop {
                line: i,
                bus: line.from,
            });
        }
        if !(line.admittance > 0.0) || !line.admittance.is_finite() {
            return Err(GridError::NonPositiveAdmittance {
                line: i,
                admittance: line.admittance,
            });
        }
    }
    raw.lines = merge_parallel(&raw.lines);

    if !raw.buses.iter().any(|b| b.kind == BusKind::GeneratorBus) {
        return Err(GridError::NoGeneratorBuses);
    }
    if !raw.buses.iter().any(|b| b.kind == BusKind::LoadBus) {
        return Err(GridError::NoLoadBuses);
    }

    let unreached = unreachable_count(n, &raw.lines);
    if unreached > 0 {
        return Err(GridError::DisconnectedGraph { unreached, total: n });
    }

    for bus in &raw.buses {
        let (has_gen, has_load) = (
            raw.generators.contains_key(&bus.index),
            raw.loads.contains_key(&bus.index),
        );
        match bus.kind {
            BusKind::GeneratorBus if !has_gen => return Err(GridError::MissingParams(bus.index)),
            BusKind::LoadBus if !has_load => return Err(GridError::MissingParams(bus.index)),
            BusKind::GeneratorBus if has_load => return Err(GridError::UnexpectedParams(bus.index)),
            BusKind::LoadBus if has_gen => return Err(GridError::UnexpectedParams(bus.index)),
            _ => {}
        }
    }
    for bus in raw.generators.keys().chain(raw.loads.keys()) {
        if bus.0 >= n {
            return Err(GridError::UnexpectedParams(*bus));
        }
    }

    for (bus, g) in &raw.generators {
        let reason = if !(g.inertia > 0.0) {
            Some("inertia must be positive")
        } else if !(g.damping >= 0.0) {
            Some("damping must be non-negative")
        } else if !(g.kp >= 0.0) {
            Some("kp must be non-negative")
        } else if !(g.ki >= 0.0) {
            Some("ki must be non-negative")
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(GridError::InvalidGeneratorParams { bus: *bus, reason });
        }
    }
    for (bus, l) in &raw.loads {
        if !(l.frequency_sensitivity > 0.0) {
            return Err(GridError::ZeroFrequencySensitivity(*bus));
        }
    }

    Ok(ValidatedGrid { topology: raw })
}

fn merge_parallel(lines: &[Line]) -> Vec<Line> {
    let mut merged: BTreeMap<(BusId, BusId), f64> = BTreeMap::new();
    for line in lines {
        let key = if line.from < line.to {
            (line.from, line.to)
        } else {
            (line.to, line.from)
        };
        *merged.entry(key).or_insert(0.0) += line.admittance;
    }
    merged
        .into_iter()
        .map(|((from, to), admittance)| Line { from, to, admittance })
        .collect()
}

fn unreachable_count(n: usize, lines: &[Line]) -> usize {
    if n == 0 {
        return 0;
    }
    let mut adjacency = vec![Vec::new(); n];
    for line in lines {
        adjacency[line.from.0].push(line.to.0);
        adjacency[line.to.0].push(line.from.0);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(bus) = queue.pop_front() {
        for &next in &adjacency[bus] {
            if !seen[next] {
                seen[next] = true;
                queue.push_back(next);
            }
        }
    }
    seen.iter().filter(|s| !**s).count()
}

/// Active power flowing from `a` to `b` over `line`, in per-unit.
pub fn line_flow(line: &Line, theta_a: f64, theta_b: f64) -> f64 {
    line.admittance * (theta_a - theta_b)
}

/// Laplacian-form bus admittance matrix: off-diagonals are `-y`, diagonals
/// the sum of incident admittances.
pub fn build_admittance(grid: &ValidatedGrid) -> DMatrix<f64> {
    let n = grid.bus_count();
    let mut y = DMatrix::zeros(n, n);
    for line in &grid.topology.lines {
        let (a, b) = (line.from.0, line.to.0);
        y[(a, b)] -= line.admittance;
        y[(b, a)] -= line.admittance;
        y[(a, a)] += line.admittance;
        y[(b, b)] += line.admittance;
    }
    y
}

/// Power injected into the network at every bus for the given angles,
/// `P_i = sum_k Y_ik theta_k`. The load-side convention of the attack model
/// is the negation of this.
pub fn bus_injection(y: &DMatrix<f64>, theta: &[f64]) -> Vec<f64> {
    (0..y.nrows())
        .map(|i| (0..y.ncols()).map(|k| y[(i, k)] * theta[k]).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmittancePartition {
    pub y_gg: DMatrix<f64>,
    pub y_gl: DMatrix<f64>,
    pub y_lg: DMatrix<f64>,
    pub y_ll: DMatrix<f64>,
    pub generator_order: Vec<BusId>,
    pub load_order: Vec<BusId>,
}

impl AdmittancePartition {
    pub fn generator_count(&self) -> usize {
        self.generator_order.len()
    }

    pub fn load_count(&self) -> usize {
        self.load_order.len()
    }

    /// Place the four blocks back at their original bus positions.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let n = self.generator_count() + self.load_count();
        let mut y = DMatrix::zeros(n, n);
        let blocks = [
            (&self.generator_order, &self.generator_order, &self.y_gg),
            (&self.generator_order, &self.load_order, &self.y_gl),
            (&self.load_order, &self.generator_order, &self.y_lg),
            (&self.load_order, &self.load_order, &self.y_ll),
        ];
        for (rows, cols, block) in blocks {
            for (i, r) in rows.iter().enumerate() {
                for (j, c) in cols.iter().enumerate() {
                    y[(r.0, c.0)] = block[(i, j)];
                }
            }
        }
        y
    }
}

pub fn partition_admittance(y: &DMatrix<f64>, kinds: &[BusKind]) -> Result<AdmittancePartition, GridError> {
    if y.nrows() != kinds.len() || y.ncols() != kinds.len() {
        return Err(GridError::KindsMismatch {
            expected: kinds.len(),
            got: y.nrows(),
        });
    }
    let pick = |kind| -> Vec<BusId> {
        kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == kind)
            .map(|(i, _)| BusId(i))
            .collect()
    };
    let generator_order = pick(BusKind::GeneratorBus);
    let load_order = pick(BusKind::LoadBus);
    if generator_order.is_empty() {
        return Err(GridError::NoGeneratorBuses);
    }
    if load_order.is_empty() {
        return Err(GridError::NoLoadBuses);
    }
    let block =
        |rows: &[BusId], cols: &[BusId]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| y[(rows[i].0, cols[j].0)]);
    Ok(AdmittancePartition {
        y_gg: block(&generator_order, &generator_order),
        y_gl: block(&generator_order, &load_order),
        y_lg: block(&load_order, &generator_order),
        y_ll: block(&load_order, &load_order),
        generator_order,
        load_order,
    })
}

/// The built-in two-area, four-machine benchmark grid.
pub fn kundur_two_area() -> GridTopology {
    GridTopology::from_json(KUNDUR_JSON).expect("bundled preset parses")
}
