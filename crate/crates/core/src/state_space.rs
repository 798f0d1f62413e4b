//! Linear state-space models of the grid, closed loops and eigen-analysis.
//!
//! The grid state is ordered `(δ_1..δ_G, ω_1..ω_G, θ_1..θ_L)`: generator
//! rotor angles (rad), generator speed deviations (rad/s) and load-bus
//! angles (rad). Inputs are load changes at selected load buses in
//! per-unit of the system base.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{AdmittancePartition, BusId, GeneratorParams, ValidatedGrid};
use crate::region::StabilityRegion;

/// Eigenvalues this close to the origin belong to the rotational reference
/// mode and are left out of stability classification.
pub const REFERENCE_MODE_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("ConvergenceFailure: eigenvalue iteration did not converge")]
    ConvergenceFailure,
    #[error("DomainError: {0}")]
    DomainError(String),
    #[error("{0} is not a load bus")]
    NotALoadBus(BusId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateLabel {
    /// δ of a generator bus.
    Angle(BusId),
    /// ω of a generator bus.
    Speed(BusId),
    /// θ of a load bus.
    LoadAngle(BusId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub state_labels: Vec<StateLabel>,
    pub input_labels: Vec<BusId>,
    /// MVA per unit of input; inputs in MW are divided by this at `B`.
    pub base_mva: f64,
    pub nominal_hz: f64,
}

impl StateSpace {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        state_labels: Vec<StateLabel>,
        input_labels: Vec<BusId>,
    ) -> Result<Self, ModelError> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n {
            return Err(ModelError::DimensionMismatch(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if state_labels.len() != n || input_labels.len() != b.ncols() {
            return Err(ModelError::DimensionMismatch(
                "labels do not match matrix dimensions".into(),
            ));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::DomainError("non-finite model entry".into()));
        }
        Ok(StateSpace {
            a,
            b,
            state_labels,
            input_labels,
            base_mva: 1.0,
            nominal_hz: 60.0,
        })
    }

    pub fn with_units(mut self, base_mva: f64, nominal_hz: f64) -> Self {
        self.base_mva = base_mva;
        self.nominal_hz = nominal_hz;
        self
    }

    /// Unlabelled model, for systems that are not derived from a grid.
    pub fn from_matrices(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, ModelError> {
        let labels = (0..a.nrows()).map(|i| StateLabel::Angle(BusId(i))).collect();
        let inputs = (0..b.ncols()).map(BusId).collect();
        Self::new(a, b, labels, inputs)
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    /// Indices of the ω states, in generator order.
    pub fn speed_states(&self) -> Vec<usize> {
        self.state_labels
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, StateLabel::Speed(_)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn load_angle_states(&self) -> Vec<usize> {
        self.state_labels
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, StateLabel::LoadAngle(_)))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Swing equation of one machine under a PI governor, driven by the
/// electrical load at its terminal.
pub fn generator_ss(params: &GeneratorParams) -> StateSpace {
    let m = params.inertia;
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -params.ki / m, -(params.kp + params.damping) / m]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, -1.0 / m]);
    StateSpace {
        a,
        b,
        state_labels: vec![StateLabel::Angle(BusId(0)), StateLabel::Speed(BusId(0))],
        input_labels: vec![BusId(0)],
        base_mva: 1.0,
        nominal_hz: 60.0,
    }
}

/// Extended grid model. `inputs` selects the load buses that accept a load
/// change; a positive input is additional demand.
pub fn grid_ss(
    grid: &ValidatedGrid,
    partition: &AdmittancePartition,
    inputs: &[BusId],
) -> Result<StateSpace, ModelError> {
    let gens = &partition.generator_order;
    let loads = &partition.load_order;
    let (g, l) = (gens.len(), loads.len());
    if g + l != grid.bus_count()
        || partition.y_gg.shape() != (g, g)
        || partition.y_gl.shape() != (g, l)
        || partition.y_lg.shape() != (l, g)
        || partition.y_ll.shape() != (l, l)
    {
        return Err(ModelError::DimensionMismatch(
            "partition does not match the grid".into(),
        ));
    }
    if gens != &grid.generator_buses() || loads != &grid.load_buses() {
        return Err(ModelError::DimensionMismatch(
            "partition bus order does not match the grid".into(),
        ));
    }

    let n = 2 * g + l;
    let mut a = DMatrix::zeros(n, n);
    for (i, bus) in gens.iter().enumerate() {
        let p = grid.generator(*bus);
        a[(i, g + i)] = 1.0;
        let row = g + i;
        for j in 0..g {
            a[(row, j)] = -partition.y_gg[(i, j)] / p.inertia;
        }
        a[(row, i)] -= p.ki / p.inertia;
        a[(row, g + i)] = -(p.kp + p.damping) / p.inertia;
        for j in 0..l {
            a[(row, 2 * g + j)] = -partition.y_gl[(i, j)] / p.inertia;
        }
    }
    for (i, bus) in loads.iter().enumerate() {
        let d_l = grid.load(*bus).frequency_sensitivity;
        let row = 2 * g + i;
        for j in 0..g {
            a[(row, j)] = -partition.y_lg[(i, j)] / d_l;
        }
        for j in 0..l {
            a[(row, 2 * g + j)] = -partition.y_ll[(i, j)] / d_l;
        }
    }

    let mut b = DMatrix::zeros(n, inputs.len());
    for (col, bus) in inputs.iter().enumerate() {
        let pos = loads
            .iter()
            .position(|x| x == bus)
            .ok_or(ModelError::NotALoadBus(*bus))?;
        b[(2 * g + pos, col)] = -1.0 / grid.load(*bus).frequency_sensitivity;
    }

    let labels = gens
        .iter()
        .map(|b| StateLabel::Angle(*b))
        .chain(gens.iter().map(|b| StateLabel::Speed(*b)))
        .chain(loads.iter().map(|b| StateLabel::LoadAngle(*b)))
        .collect();
    Ok(StateSpace::new(a, b, labels, inputs.to_vec())?.with_units(grid.system_base_mva(), grid.nominal_frequency_hz()))
}

/// `A + B K`.
pub fn closed_loop(ss: &StateSpace, k: &DMatrix<f64>) -> Result<DMatrix<f64>, ModelError> {
    if k.shape() != (ss.inputs(), ss.states()) {
        return Err(ModelError::DimensionMismatch(format!(
            "gain is {}x{}, expected {}x{}",
            k.nrows(),
            k.ncols(),
            ss.inputs(),
            ss.states()
        )));
    }
    Ok(&ss.a + &ss.b * k)
}

/// Eigenvalues sorted by descending real part, then descending |imag|,
/// then positive imaginary part first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSet {
    pub values: Vec<Complex64>,
}

impl EigenSet {
    pub fn from_unsorted(mut values: Vec<Complex64>) -> Self {
        values.sort_by(|x, y| eigen_order(*x, *y));
        EigenSet { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dominant(&self) -> Option<Complex64> {
        self.values.first().copied()
    }

    /// Eigenvalues with the reference mode removed.
    pub fn non_reference(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.values.iter().copied().filter(|z| !is_reference_mode(*z))
    }

    /// True when every non-reference eigenvalue has a negative real part.
    pub fn is_stable(&self) -> bool {
        self.non_reference().all(|z| z.re < 0.0)
    }

    pub fn max_real(&self) -> f64 {
        self.values.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn eigen_order(x: Complex64, y: Complex64) -> Ordering {
    y.re.total_cmp(&x.re)
        .then(y.im.abs().total_cmp(&x.im.abs()))
        .then(y.im.total_cmp(&x.im))
}

pub fn is_reference_mode(z: Complex64) -> bool {
    z.re.abs() <= REFERENCE_MODE_TOL && z.im.abs() <= REFERENCE_MODE_TOL
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Result<EigenSet, ModelError> {
    if !a.is_square() {
        return Err(ModelError::DimensionMismatch("matrix is not square".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::DomainError("non-finite matrix entry".into()));
    }
    if a.nrows() == 0 {
        return Ok(EigenSet { values: vec![] });
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 100_000).ok_or(ModelError::ConvergenceFailure)?;
    let values = schur.complex_eigenvalues().iter().copied().collect();
    Ok(EigenSet::from_unsorted(values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityBoundary {
    pub zeta: f64,
    pub omega_n: f64,
    /// Upper member of the pair `a ± jb`.
    pub lambda_s: Complex64,
}

impl StabilityBoundary {
    pub fn pair(&self) -> [Complex64; 2] {
        [self.lambda_s, self.lambda_s.conj()]
    }

    pub fn natural_frequency_hz(&self) -> f64 {
        self.omega_n / (2.0 * PI)
    }
}

/// Eigenvalue pair of a mode with damping ratio `zeta` and natural
/// frequency `omega_n` (rad/s).
pub fn stability_boundary(zeta: f64, omega_n: f64) -> Result<StabilityBoundary, ModelError> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(ModelError::DomainError(format!("damping ratio {zeta} outside (0, 1]")));
    }
    if !(omega_n > 0.0) || !omega_n.is_finite() {
        return Err(ModelError::DomainError(format!(
            "natural frequency {omega_n} must be positive"
        )));
    }
    let a = -zeta * omega_n;
    let b = omega_n * (1.0 - zeta * zeta).sqrt();
    Ok(StabilityBoundary {
        zeta,
        omega_n,
        lambda_s: Complex64::new(a, b),
    })
}

pub fn in_region(eig: Complex64, region: &StabilityRegion) -> bool {
    region.contains(eig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{
        build_admittance, kundur_two_area, partition_admittance, validate_topology, Bus, BusKind, GridTopology, Line,
        LoadParams,
    };
    use std::collections::BTreeMap;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn generator_model_examples() {
        let ss = generator_ss(&GeneratorParams {
            inertia: 1.0,
            damping: 0.0,
            kp: 0.0,
            ki: 0.0,
        });
        assert_eq!(ss.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(ss.b, DMatrix::from_row_slice(2, 1, &[0.0, -1.0]));

        let ss = generator_ss(&GeneratorParams {
            inertia: 2.0,
            damping: 1.0,
            kp: 3.0,
            ki: 4.0,
        });
        assert_eq!(ss.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -2.0]));
        assert_eq!(ss.b, DMatrix::from_row_slice(2, 1, &[0.0, -0.5]));
    }

    #[test]
    fn eigenvalue_examples() {
        let eig = eigenvalues(&DMatrix::identity(3, 3)).unwrap();
        assert!(eig.values.iter().all(|z| (*z - c(1.0, 0.0)).norm() < 1e-12));

        let eig = eigenvalues(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        assert!((eig.values[0] - c(0.0, 1.0)).norm() < 1e-12);
        assert!((eig.values[1] - c(0.0, -1.0)).norm() < 1e-12);

        let eig = eigenvalues(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -2.0])).unwrap();
        assert!((eig.values[0] - c(-1.0, 1.0)).norm() < 1e-12);
        assert!((eig.values[1] - c(-1.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn closed_loop_examples() {
        let ss = StateSpace::from_matrices(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        assert_eq!(closed_loop(&ss, &DMatrix::zeros(1, 2)).unwrap(), ss.a);
        let acl = closed_loop(&ss, &DMatrix::from_row_slice(1, 2, &[-2.0, -3.0])).unwrap();
        assert_eq!(acl, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]));
        let eig = eigenvalues(&acl).unwrap();
        assert!((eig.values[0] - c(-1.0, 0.0)).norm() < 1e-12);
        assert!((eig.values[1] - c(-2.0, 0.0)).norm() < 1e-12);
        assert!(closed_loop(&ss, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn boundary_examples() {
        let b = stability_boundary(0.03, 2.513).unwrap();
        assert!((b.lambda_s.re + 0.0754).abs() < 1e-3);
        assert!((b.lambda_s.im - 2.512).abs() < 1e-3);
        let b = stability_boundary(1.0, 5.0).unwrap();
        assert_eq!(b.lambda_s, c(-5.0, 0.0));
        let b = stability_boundary(0.5, 2.0).unwrap();
        assert!((b.lambda_s.re + 1.0).abs() < 1e-12);
        assert!((b.lambda_s.im - 3f64.sqrt()).abs() < 1e-12);
        assert!(stability_boundary(0.0, 1.0).is_err());
        assert!(stability_boundary(1.5, 1.0).is_err());
        assert!(stability_boundary(0.5, 0.0).is_err());
    }

    #[test]
    fn region_membership_examples() {
        let strip = StabilityRegion::strip(-0.5, 0.0).unwrap();
        assert!(in_region(c(0.2, 0.1), &strip));
        assert!(in_region(c(0.2, -0.1), &strip));
        let disk = StabilityRegion::disk(0.0, 0.5).unwrap();
        assert!(!in_region(c(-1.0, 0.0), &disk));
        assert!(in_region(c(0.1766, 0.0), &disk));
    }

    fn single_bus_case(with_line: bool) -> (ValidatedGrid, GeneratorParams) {
        let params = GeneratorParams {
            inertia: 2.0,
            damping: 0.5,
            kp: 1.0,
            ki: 0.3,
        };
        let lines = if with_line {
            vec![Line {
                from: BusId(0),
                to: BusId(1),
                admittance: 5.0,
            }]
        } else {
            vec![Line {
                from: BusId(0),
                to: BusId(1),
                admittance: 1.0,
            }]
        };
        let raw = GridTopology {
            buses: vec![
                Bus {
                    index: BusId(0),
                    kind: BusKind::GeneratorBus,
                    label: None,
                },
                Bus {
                    index: BusId(1),
                    kind: BusKind::LoadBus,
                    label: None,
                },
            ],
            lines,
            generators: BTreeMap::from([(BusId(0), params)]),
            loads: BTreeMap::from([(
                BusId(1),
                LoadParams {
                    frequency_sensitivity: 0.2,
                    fixed_load_mw: 50.0,
                },
            )]),
            system_base_mva: 100.0,
            nominal_frequency_hz: 60.0,
        };
        (validate_topology(raw).unwrap(), params)
    }

    #[test]
    fn one_generator_grid_row_structure() {
        let (grid, _) = single_bus_case(true);
        let part = partition_admittance(&build_admittance(&grid), &grid.kinds()).unwrap();
        let ss = grid_ss(&grid, &part, &[BusId(1)]).unwrap();
        assert_eq!(ss.a.shape(), (3, 3));
        assert_eq!(ss.a.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_admittance_grid_reduces_to_generator_model() {
        // Y ≡ 0 is not a valid topology, so feed a zero partition directly.
        let (grid, params) = single_bus_case(false);
        let mut part = partition_admittance(&build_admittance(&grid), &grid.kinds()).unwrap();
        part.y_gg.fill(0.0);
        part.y_gl.fill(0.0);
        part.y_lg.fill(0.0);
        part.y_ll.fill(0.0);
        let ss = grid_ss(&grid, &part, &[BusId(1)]).unwrap();
        let single = generator_ss(&params);
        assert_eq!(ss.a.view((0, 0), (2, 2)), single.a.view((0, 0), (2, 2)));
    }

    #[test]
    fn positive_load_step_decelerates_generator() {
        let (grid, _) = single_bus_case(true);
        let part = partition_admittance(&build_admittance(&grid), &grid.kinds()).unwrap();
        let ss = grid_ss(&grid, &part, &[BusId(1)]).unwrap();
        // Integrate a small forward-Euler step response from rest.
        let mut x = nalgebra::DVector::zeros(3);
        let u = nalgebra::DVector::from_element(1, 0.1);
        let dt = 1e-4;
        for _ in 0..2000 {
            x += (&ss.a * &x + &ss.b * &u) * dt;
        }
        assert!(x[1] < 0.0, "speed deviation {} should be negative", x[1]);
    }

    #[test]
    fn kundur_dimensions_and_open_loop_stability() {
        let grid = validate_topology(kundur_two_area()).unwrap();
        let part = partition_admittance(&build_admittance(&grid), &grid.kinds()).unwrap();
        let ss = grid_ss(&grid, &part, &grid.demand_buses()).unwrap();
        assert_eq!(ss.states(), 15);
        assert_eq!(ss.inputs(), 2);
        assert_eq!(ss.input_labels, vec![BusId(6), BusId(8)]);
        let eig = eigenvalues(&ss.a).unwrap();
        assert!(eig.values.iter().filter(|z| z.re.abs() <= 1e-6).count() <= 1);
        assert!(eig.is_stable());
    }
}
