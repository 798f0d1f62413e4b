//! Region pole placement by state feedback as an LMI feasibility problem.
//!
//! For `u = Kx` the closed loop `A + BK` has every eigenvalue in the region
//! when there are `P ≻ 0` and `W` (with `K = W P⁻¹`) such that each region
//! block evaluated at `(P, W)` is negative definite.

pub mod barrier;
pub mod design;

pub use design::{verify_certificate, ModeCheck, ModeStatus, VerificationReport};

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{condition_number, real_modal_basis, sym_max_eig, sym_min_eig};
use crate::region::{RegionConstraint, RegionError, StabilityRegion};
use crate::state_space::eigenvalues;
use barrier::{AffineBlock, BarrierOptions, Termination};

/// `K = W P⁻¹` is refused above this condition number of `P`.
pub const MAX_P_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmiError {
    #[error("Infeasible: no certificate found (best block residuals {best_residuals:?})")]
    Infeasible { best_residuals: Vec<f64> },
    #[error("NumericalBreakdown: {0}")]
    NumericalBreakdown(String),
    #[error("MixedSystems: LMIs refer to different (A, B)")]
    MixedSystems,
    #[error("{0}")]
    BadRegion(#[from] RegionError),
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
}

/// Find `P, W` for one system and one region.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub region: StabilityRegion,
    /// Strict inequalities are enforced as `⪯ -εI`, and `P ⪰ εI`.
    pub epsilon: f64,
}

impl LmiProblem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, region: StabilityRegion, epsilon: f64) -> Result<Self, LmiError> {
        if !(epsilon > 0.0) {
            return Err(LmiError::DimensionMismatch(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if !a.is_square() || b.nrows() != a.nrows() {
            return Err(LmiError::DimensionMismatch(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(LmiError::DimensionMismatch("non-finite entry".into()));
        }
        region.validate()?;
        Ok(LmiProblem { a, b, region, epsilon })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    /// Matrices that must all be negative definite.
    pub fn blocks(&self, p: &DMatrix<f64>, w: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        constraint_blocks(&self.a, &self.b, &self.region, p, w)
    }

    /// Largest eigenvalue of every block, in constraint order.
    pub fn residuals(&self, p: &DMatrix<f64>, w: &DMatrix<f64>) -> Vec<f64> {
        self.blocks(p, w).iter().map(sym_max_eig).collect()
    }
}

fn constraint_blocks(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    region: &StabilityRegion,
    p: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Vec<DMatrix<f64>> {
    let apbw = a * p + b * w;
    let lyap = &apbw + apbw.transpose();
    let mut out = Vec::new();
    for c in &region.constraints {
        match *c {
            RegionConstraint::Strip { alpha, beta } => {
                out.push(&lyap + p * (2.0 * alpha));
                out.push(-&lyap - p * (2.0 * beta));
            }
            RegionConstraint::Disk { q, r } => {
                let n = p.nrows();
                let off = p * q + &apbw;
                let mut m = DMatrix::zeros(2 * n, 2 * n);
                m.view_mut((0, 0), (n, n)).copy_from(&(p * -r));
                m.view_mut((n, n), (n, n)).copy_from(&(p * -r));
                m.view_mut((0, n), (n, n)).copy_from(&off);
                m.view_mut((n, 0), (n, n)).copy_from(&off.transpose());
                out.push(m);
            }
        }
    }
    out
}

/// Strip `-β < Re λ < -α`.
pub fn strip_lmi(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    alpha: f64,
    beta: f64,
    epsilon: f64,
) -> Result<LmiProblem, LmiError> {
    LmiProblem::new(a, b, StabilityRegion::strip(alpha, beta)?, epsilon)
}

/// Disk `|λ + q| < r`.
pub fn disk_lmi(a: DMatrix<f64>, b: DMatrix<f64>, q: f64, r: f64, epsilon: f64) -> Result<LmiProblem, LmiError> {
    LmiProblem::new(a, b, StabilityRegion::disk(q, r)?, epsilon)
}

/// One problem over shared `(P, W)` carrying every constraint. The
/// strictest epsilon wins.
pub fn intersect(problems: &[LmiProblem]) -> Result<LmiProblem, LmiError> {
    let (first, rest) = problems.split_first().ok_or(RegionError::Empty)?;
    let mut region = first.region.clone();
    let mut epsilon = first.epsilon;
    for p in rest {
        if p.a != first.a || p.b != first.b {
            return Err(LmiError::MixedSystems);
        }
        region = region.intersect(&p.region);
        epsilon = epsilon.max(p.epsilon);
    }
    LmiProblem::new(first.a.clone(), first.b.clone(), region, epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiCertificate {
    pub p: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Largest eigenvalue of each block at `(P, W)`; all negative.
    pub residuals: Vec<f64>,
    pub p_min_eig: f64,
    pub p_condition: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Upper bound on `P` in solver coordinates, keeps the problem bounded.
    pub p_bound: f64,
    /// Stop once the phase-I variable reaches this value.
    pub target: f64,
    pub modal_preconditioning: bool,
    pub barrier: BarrierOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            p_bound: 1e9,
            target: -1.0,
            modal_preconditioning: true,
            barrier: BarrierOptions::default(),
        }
    }
}

fn sym_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            out.push(e);
        }
    }
    out
}

fn unpack(z: &DVector<f64>, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut p = DMatrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            p[(i, j)] = z[idx];
            p[(j, i)] = z[idx];
            idx += 1;
        }
    }
    let mut w = DMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            w[(i, j)] = z[idx];
            idx += 1;
        }
    }
    (p, w)
}

/// Phase-I problem: minimise `t` with every region block `⪯ tI`,
/// `I ⪯ P ⪯ ρI`. Returns the final `(P, W, t)` and Newton count.
fn phase_one(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    region: &StabilityRegion,
    options: &SolveOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64, usize), LmiError> {
    let n = a.nrows();
    let m = b.ncols();
    let np = n * (n + 1) / 2;
    let nvar = np + m * n + 1;
    let t_index = nvar - 1;

    let zero_p = DMatrix::zeros(n, n);
    let zero_w = DMatrix::zeros(m, n);
    let p_basis = sym_basis(n);
    // Block images of every basis element (the map is linear in (P, W)).
    let mut images: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(nvar - 1);
    for e in &p_basis {
        images.push(constraint_blocks(a, b, region, e, &zero_w));
    }
    for i in 0..m {
        for j in 0..n {
            let mut e = DMatrix::zeros(m, n);
            e[(i, j)] = 1.0;
            images.push(constraint_blocks(a, b, region, &zero_p, &e));
        }
    }
    let block_count = images[0].len();

    let mut blocks = Vec::with_capacity(block_count + 2);
    for k in 0..block_count {
        let dim = images[0][k].nrows();
        let mut coeffs: Vec<(usize, DMatrix<f64>)> = images
            .iter()
            .enumerate()
            .filter(|(_, img)| img[k].iter().any(|v| *v != 0.0))
            .map(|(i, img)| (i, -&img[k]))
            .collect();
        coeffs.push((t_index, DMatrix::identity(dim, dim)));
        blocks.push(AffineBlock {
            constant: DMatrix::zeros(dim, dim),
            coeffs,
        });
    }
    blocks.push(AffineBlock {
        constant: -DMatrix::identity(n, n),
        coeffs: p_basis.iter().cloned().enumerate().collect(),
    });
    blocks.push(AffineBlock {
        constant: DMatrix::identity(n, n) * options.p_bound,
        coeffs: p_basis.iter().map(|e| -e).enumerate().collect(),
    });

    let mut z0 = DVector::zeros(nvar);
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            if i == j {
                z0[idx] = 2.0;
            }
            idx += 1;
        }
    }
    let (p0, w0) = unpack(&z0, n, m);
    let worst = constraint_blocks(a, b, region, &p0, &w0)
        .iter()
        .map(sym_max_eig)
        .fold(f64::NEG_INFINITY, f64::max);
    z0[t_index] = worst + 1.0;

    let mut c = DVector::zeros(nvar);
    c[t_index] = 1.0;
    let target = options.target;
    let result = barrier::minimize(&blocks, &c, z0, &options.barrier, |z| z[t_index] <= target)
        .ok_or_else(|| LmiError::NumericalBreakdown("infeasible starting point".into()))?;
    let (p, w) = unpack(&result.z, n, m);
    let t = result.z[t_index];
    if result.termination == Termination::IterationLimit && t >= 0.0 {
        return Err(LmiError::NumericalBreakdown("barrier iteration limit reached".into()));
    }
    Ok((p, w, t, result.newton_steps))
}

/// `K = W P⁻¹`, refused when `P` is not safely positive definite.
pub fn recover_gain(p: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>, LmiError> {
    if !p.is_square() || w.ncols() != p.nrows() {
        return Err(LmiError::DimensionMismatch("W must have as many columns as P".into()));
    }
    let lo = sym_min_eig(p);
    let hi = sym_max_eig(p);
    if !(lo > 0.0) || hi / lo > MAX_P_CONDITION {
        return Err(LmiError::NumericalBreakdown(format!(
            "P has condition number {:.3e}",
            hi / lo
        )));
    }
    let chol =
        Cholesky::new(p.clone()).ok_or_else(|| LmiError::NumericalBreakdown("P is not positive definite".into()))?;
    let k = chol.solve(&w.transpose()).transpose();
    let misfit = (&k * p - w).norm();
    if misfit > 1e-8 * w.norm().max(f64::MIN_POSITIVE) {
        return Err(LmiError::NumericalBreakdown(format!(
            "gain recovery residual {misfit:.3e}"
        )));
    }
    Ok(k)
}

/// `P ⪰ εI` and every block `⪯ -ε/2 I`.
pub fn satisfies_lmis(problem: &LmiProblem, p: &DMatrix<f64>, w: &DMatrix<f64>) -> bool {
    let eps = problem.epsilon;
    sym_min_eig(p) >= eps * (1.0 - 1e-9) && problem.residuals(p, w).iter().all(|r| *r <= -0.5 * eps * (1.0 - 1e-9))
}

/// Rescale each modal block of `S` so its rows of `S⁻¹B` have unit norm,
/// within six decades of the best-actuated block. Scaling a whole block
/// keeps `S⁻¹AS` block-diagonal.
fn balance_inputs(mut s: DMatrix<f64>, widths: &[usize], b: &DMatrix<f64>) -> DMatrix<f64> {
    let Some(inv) = s.clone().try_inverse() else {
        return s;
    };
    let b_m = inv * b;
    let mut norms = Vec::with_capacity(widths.len());
    let mut start = 0;
    for &w in widths {
        norms.push(b_m.rows(start, w).norm());
        start += w;
    }
    let top = norms.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return s;
    }
    let mut start = 0;
    for (&w, &nrm) in widths.iter().zip(&norms) {
        let c = nrm.max(top * 1e-6);
        for j in start..start + w {
            let mut col = s.column_mut(j);
            col *= c;
        }
        start += w;
    }
    s
}

/// Solve the feasibility problem and recover `K`.
pub fn solve_feasibility(problem: &LmiProblem, options: &SolveOptions) -> Result<LmiCertificate, LmiError> {
    let n = problem.states();
    if n == 0 {
        return Err(LmiError::DimensionMismatch("empty system".into()));
    }

    // Solve in coordinates x = S x̃ that block-diagonalise A. The LMIs are
    // congruence invariant, so (P̃, W̃) maps back as P = S P̃ Sᵀ, W = W̃ Sᵀ.
    let modal = if options.modal_preconditioning {
        eigenvalues(&problem.a)
            .ok()
            .and_then(|eig| real_modal_basis(&problem.a, &eig.values))
    } else {
        None
    };
    let modal = modal.map(|(s, widths)| balance_inputs(s, &widths, &problem.b));
    let (s, s_inv) = match modal.and_then(|s| s.clone().try_inverse().map(|inv| (s, inv))) {
        Some(pair) => pair,
        None => (DMatrix::identity(n, n), DMatrix::identity(n, n)),
    };
    let a_m = &s_inv * &problem.a * &s;
    let b_m = &s_inv * &problem.b;

    let (p_m, w_m, t, steps) = phase_one(&a_m, &b_m, &problem.region, options)?;
    let p_orig = &s * &p_m * s.transpose();
    let w_orig = &w_m * s.transpose();
    if t >= 0.0 {
        return Err(LmiError::Infeasible {
            best_residuals: problem.residuals(&p_orig, &w_orig),
        });
    }

    // Gain from the well-conditioned coordinates: K = K̃ S⁻¹.
    let k_m = recover_gain(&p_m, &w_m)?;
    let k = &k_m * &s_inv;

    let sym = |x: DMatrix<f64>| (&x + x.transpose()) * 0.5;
    let mut p = sym(p_orig);
    let mut w = w_orig;
    let eps = problem.epsilon;
    let p_min = sym_min_eig(&p);
    let worst = problem.residuals(&p, &w).into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !(p_min > 0.0) || !(worst < 0.0) {
        return Err(LmiError::NumericalBreakdown(format!(
            "certificate lost definiteness in original coordinates (λmin(P)={p_min:.3e}, worst block {worst:.3e})"
        )));
    }
    let scale = 1f64.max(eps / p_min).max(0.5 * eps / -worst);
    p *= scale;
    w *= scale;

    let residuals = problem.residuals(&p, &w);
    let p_min_eig = sym_min_eig(&p);
    Ok(LmiCertificate {
        p_condition: condition_number(&p),
        p,
        w,
        k,
        residuals,
        p_min_eig,
        newton_steps: steps,
    })
}
