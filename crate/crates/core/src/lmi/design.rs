//! Gain design for full grid models.
//!
//! Grid models carry modes the feedback cannot or should not move: very fast
//! load-angle modes (their damping is set by the small frequency
//! sensitivity), modes no input reaches, and the rotational reference mode.
//! These are split off through their right invariant subspace `V`; the LMI
//! is solved on the complement `T` (rows orthonormal, `T V = 0`) and the gain
//! is lifted as `K = K_r T`, which leaves the split-off eigenvalues in place.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{solve_feasibility, LmiCertificate, LmiError, LmiProblem, SolveOptions};
use crate::linalg::{eigen_basis, eigen_clusters, orthogonal_complement_rows};
use crate::region::StabilityRegion;
use crate::state_space::{eigenvalues, is_reference_mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeKind {
    Reference,
    Fast,
    Uncontrollable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeflatedMode {
    pub value: Complex64,
    pub kind: ModeKind,
}

#[derive(Debug, Clone, Copy)]
pub struct DesignOptions {
    /// Modes with `|λ|` above this are split off. Infinite disables.
    pub fast_cutoff: f64,
    /// Relative PBH threshold; modes with `σ_min([A-λI, B]) / ‖[A B]‖`
    /// below it are split off. Zero disables.
    pub controllability_tol: f64,
    pub epsilon: f64,
    pub solve: SolveOptions,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            fast_cutoff: 100.0,
            controllability_tol: 1e-8,
            epsilon: 1e-6,
            solve: SolveOptions::default(),
        }
    }
}

impl DesignOptions {
    /// No splitting: the LMI sees the whole system.
    pub fn full() -> Self {
        DesignOptions {
            fast_cutoff: f64::INFINITY,
            controllability_tol: 0.0,
            epsilon: 1e-6,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    /// `r × n`, orthonormal rows.
    pub t: DMatrix<f64>,
    pub deflated: Vec<DeflatedMode>,
}

impl Reduction {
    pub fn identity(n: usize) -> Self {
        Reduction {
            t: DMatrix::identity(n, n),
            deflated: vec![],
        }
    }
}

fn pbh_margin(a: &DMatrix<f64>, b: &DMatrix<f64>, z: Complex64, scale: f64) -> f64 {
    let n = a.nrows();
    let m = b.ncols();
    let mat = DMatrix::from_fn(n, n + m, |i, j| {
        if j < n {
            let v = Complex64::new(a[(i, j)], 0.0);
            if i == j {
                v - z
            } else {
                v
            }
        } else {
            Complex64::new(b[(i, j - n)], 0.0)
        }
    });
    // σ_min of a wide matrix: singular values of an n×(n+m) matrix are n.
    let sv = nalgebra::SVD::new(mat, false, false).singular_values;
    sv.iter().copied().fold(f64::INFINITY, f64::min) / scale
}

/// Split off reference, fast and uncontrollable modes.
pub fn reduce(a: &DMatrix<f64>, b: &DMatrix<f64>, options: &DesignOptions) -> Result<Reduction, LmiError> {
    let n = a.nrows();
    let eig = eigenvalues(a).map_err(|e| LmiError::NumericalBreakdown(e.to_string()))?;
    let scale = a.norm().max(b.norm()).max(1.0);
    let mut deflated = Vec::new();
    let mut columns: Vec<DMatrix<f64>> = Vec::new();
    for (z, k) in eigen_clusters(&eig.values, 1e-10) {
        let kind = if is_reference_mode(z) {
            Some(ModeKind::Reference)
        } else if z.norm() > options.fast_cutoff {
            if z.re >= 0.0 {
                return Err(LmiError::NumericalBreakdown(format!(
                    "fast mode {z} is not stable and cannot be split off"
                )));
            }
            Some(ModeKind::Fast)
        } else if options.controllability_tol > 0.0 && pbh_margin(a, b, z, scale) < options.controllability_tol {
            Some(ModeKind::Uncontrollable)
        } else {
            None
        };
        let Some(kind) = kind else { continue };
        let (basis, _) =
            eigen_basis(a, z, k).ok_or_else(|| LmiError::NumericalBreakdown(format!("mode {z} is defective")))?;
        for _ in 0..k {
            deflated.push(DeflatedMode { value: z, kind });
            if z.im != 0.0 {
                deflated.push(DeflatedMode { value: z.conj(), kind });
            }
        }
        columns.push(basis);
    }
    if deflated.is_empty() {
        return Ok(Reduction::identity(n));
    }
    let width: usize = columns.iter().map(|c| c.ncols()).sum();
    if width >= n {
        return Err(LmiError::NumericalBreakdown(
            "every mode was split off; nothing left to place".into(),
        ));
    }
    let mut v = DMatrix::zeros(n, width);
    let mut col = 0;
    for c in &columns {
        v.view_mut((0, col), (n, c.ncols())).copy_from(c);
        col += c.ncols();
    }
    Ok(Reduction {
        t: orthogonal_complement_rows(&v),
        deflated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeStatus {
    InRegion,
    Outside,
    Reference,
    Deflated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCheck {
    pub value: Complex64,
    pub status: ModeStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub modes: Vec<ModeCheck>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn placed(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.modes
            .iter()
            .filter(|m| matches!(m.status, ModeStatus::InRegion | ModeStatus::Outside))
            .map(|m| m.value)
    }

    pub fn offenders(&self) -> Vec<Complex64> {
        self.modes
            .iter()
            .filter(|m| m.status == ModeStatus::Outside)
            .map(|m| m.value)
            .collect()
    }
}

/// Eigenvalues of `A + BK` checked against the region. Only the reference
/// mode is exempt.
pub fn verify_certificate(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    region: &StabilityRegion,
) -> Result<VerificationReport, LmiError> {
    verify_with_deflation(a, b, k, region, &[])
}

/// As [`verify_certificate`], additionally exempting closed-loop
/// eigenvalues that coincide with the listed split-off modes.
pub fn verify_with_deflation(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    region: &StabilityRegion,
    deflated: &[DeflatedMode],
) -> Result<VerificationReport, LmiError> {
    let acl = a + b * k;
    let eig = eigenvalues(&acl).map_err(|e| LmiError::NumericalBreakdown(e.to_string()))?;
    let mut modes: Vec<ModeCheck> = eig
        .values
        .iter()
        .map(|&z| ModeCheck {
            value: z,
            status: if region.contains(z) {
                ModeStatus::InRegion
            } else {
                ModeStatus::Outside
            },
        })
        .collect();
    for d in deflated {
        let tol = 1e-6 * d.value.norm().max(1.0);
        let best = modes
            .iter_mut()
            .filter(|m| m.status != ModeStatus::Deflated && m.status != ModeStatus::Reference)
            .min_by(|x, y| (x.value - d.value).norm().total_cmp(&(y.value - d.value).norm()));
        if let Some(m) = best {
            if (m.value - d.value).norm() <= tol {
                m.status = match d.kind {
                    ModeKind::Reference => ModeStatus::Reference,
                    _ => ModeStatus::Deflated,
                };
            }
        }
    }
    for m in modes.iter_mut() {
        if m.status == ModeStatus::Outside && is_reference_mode(m.value) {
            m.status = ModeStatus::Reference;
        }
    }
    let passed = modes.iter().all(|m| m.status != ModeStatus::Outside);
    Ok(VerificationReport { modes, passed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainDesign {
    /// `m × n` gain on the full state.
    pub k: DMatrix<f64>,
    /// Certificate for the reduced system `(T A Tᵀ, T B)`.
    pub certificate: LmiCertificate,
    pub reduction: Reduction,
    pub report: VerificationReport,
}

/// Design `K` placing every movable mode of `(A, B)` in `region`.
pub fn design_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    region: &StabilityRegion,
    options: &DesignOptions,
) -> Result<GainDesign, LmiError> {
    region.validate()?;
    let reduction = reduce(a, b, options)?;
    let t = &reduction.t;
    let a_r = t * a * t.transpose();
    let b_r = t * b;
    let problem = LmiProblem::new(a_r, b_r, region.clone(), options.epsilon)?;
    let certificate = solve_feasibility(&problem, &options.solve)?;
    let k = &certificate.k * t;
    let report = verify_with_deflation(a, b, &k, region, &reduction.deflated)?;
    Ok(GainDesign {
        k,
        certificate,
        reduction,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_keeps_split_modes_fixed() {
        // One fast stable mode, two slow controllable ones.
        let a = DMatrix::from_row_slice(3, 3, &[-500.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, -0.2]);
        let b = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
        let region = StabilityRegion::strip(-0.5, 0.0).unwrap();
        let design = design_gain(&a, &b, &region, &DesignOptions::default()).unwrap();
        assert_eq!(design.reduction.t.nrows(), 2);
        assert!(design.report.passed, "{:?}", design.report);
        let fast: Vec<_> = design
            .report
            .modes
            .iter()
            .filter(|m| m.status == ModeStatus::Deflated)
            .collect();
        assert_eq!(fast.len(), 1);
        assert!((fast[0].value.re + 500.0).abs() < 1e-6);
    }

    #[test]
    fn uncontrollable_mode_is_split_off() {
        let a = DMatrix::from_row_slice(3, 3, &[-3.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0]);
        let b = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
        let region = StabilityRegion::strip(0.5, 2.0).unwrap();
        let design = design_gain(&a, &b, &region, &DesignOptions::default()).unwrap();
        assert_eq!(design.reduction.deflated.len(), 1);
        assert_eq!(design.reduction.deflated[0].kind, ModeKind::Uncontrollable);
        assert!(design.report.passed);
        // With the full model the stuck mode at -3 makes the strip infeasible.
        assert!(matches!(
            design_gain(&a, &b, &region, &DesignOptions::full()),
            Err(LmiError::Infeasible { .. })
        ));
    }
}
