//! Log-barrier interior-point method for linear objectives over
//! intersections of linear matrix inequalities `G_b(z) ≻ 0`, each affine in
//! the decision vector `z`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// `G(z) = constant + Σ z_i · coeffs[i]`, required positive definite.
#[derive(Debug, Clone)]
pub struct AffineBlock {
    pub constant: DMatrix<f64>,
    /// Sparse list of (variable index, coefficient matrix).
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
}

impl AffineBlock {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut g = self.constant.clone();
        for (i, f) in &self.coeffs {
            if z[*i] != 0.0 {
                g += f * z[*i];
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    /// Growth factor of the barrier weight between centering passes.
    pub mu: f64,
    pub initial_weight: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    /// Stop when the barrier duality-gap bound `ν / s` falls below this.
    pub gap_tol: f64,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        BarrierOptions {
            mu: 8.0,
            initial_weight: 1.0,
            max_outer: 80,
            max_newton: 80,
            gap_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The caller's stopping predicate accepted an iterate.
    Target,
    /// The central path converged to the optimum.
    Converged,
    /// Newton could not make progress.
    Stalled,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct BarrierResult {
    pub z: DVector<f64>,
    pub termination: Termination,
    pub newton_steps: usize,
}

struct Factored {
    chol: Vec<Cholesky<f64, Dyn>>,
}

fn factor(blocks: &[AffineBlock], z: &DVector<f64>) -> Option<Factored> {
    let mut chol = Vec::with_capacity(blocks.len());
    for b in blocks {
        let g = b.eval(z);
        if g.iter().any(|v| !v.is_finite()) {
            return None;
        }
        chol.push(Cholesky::new(g)?);
    }
    Some(Factored { chol })
}

fn barrier_value(f: &Factored) -> f64 {
    -f.chol.iter().map(|c| c.ln_determinant()).sum::<f64>()
}

fn objective(c: &DVector<f64>, z: &DVector<f64>, weight: f64, f: &Factored) -> f64 {
    weight * c.dot(z) + barrier_value(f)
}

/// Gradient and Hessian of `weight·cᵀz − Σ log det G_b(z)`.
fn derivatives(blocks: &[AffineBlock], f: &Factored, c: &DVector<f64>, weight: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = c.len();
    let mut grad = c * weight;
    let mut hess = DMatrix::zeros(n, n);
    for (block, chol) in blocks.iter().zip(&f.chol) {
        let l = chol.l();
        // X_i = L⁻¹ F_i L⁻ᵀ, so tr(G⁻¹F_i) = tr(X_i) and
        // tr(G⁻¹F_i G⁻¹F_j) = <X_i, X_j>.
        let scaled: Vec<(usize, DMatrix<f64>)> = block
            .coeffs
            .iter()
            .map(|(i, fi)| {
                let left = l.solve_lower_triangular(fi).expect("cholesky factor is nonsingular");
                let x = l
                    .solve_lower_triangular(&left.transpose())
                    .expect("cholesky factor is nonsingular");
                (*i, x)
            })
            .collect();
        for (a, (i, xi)) in scaled.iter().enumerate() {
            grad[*i] -= xi.trace();
            for (j, xj) in scaled.iter().skip(a) {
                let v = xi.dot(xj);
                hess[(*i, *j)] += v;
                if i != j {
                    hess[(*j, *i)] += v;
                }
            }
        }
    }
    (grad, hess)
}

/// Solve `H d = -g` with Jacobi scaling and escalating regularisation.
fn newton_direction(grad: &DVector<f64>, hess: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = grad.len();
    let scale: DVector<f64> = DVector::from_fn(n, |i, _| {
        let d = hess[(i, i)];
        if d > 0.0 && d.is_finite() {
            1.0 / d.sqrt()
        } else {
            1.0
        }
    });
    let scaled = DMatrix::from_fn(n, n, |i, j| hess[(i, j)] * scale[i] * scale[j]);
    let rhs = DVector::from_fn(n, |i, _| -grad[i] * scale[i]);
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut m = scaled.clone();
        for i in 0..n {
            m[(i, i)] += reg;
        }
        if let Some(ch) = Cholesky::new(m) {
            let y = ch.solve(&rhs);
            if y.iter().all(|v| v.is_finite()) {
                return Some(y.component_mul(&scale));
            }
        }
        reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
    }
    None
}

/// Minimise `cᵀz` subject to every block being positive definite, starting
/// from the strictly feasible `z0`. `stop` is consulted after every Newton
/// step and may end the solve early.
pub fn minimize(
    blocks: &[AffineBlock],
    c: &DVector<f64>,
    z0: DVector<f64>,
    options: &BarrierOptions,
    mut stop: impl FnMut(&DVector<f64>) -> bool,
) -> Option<BarrierResult> {
    let nu: f64 = blocks.iter().map(|b| b.dim() as f64).sum();
    let mut z = z0;
    let mut fac = factor(blocks, &z)?;
    let mut weight = options.initial_weight;
    let mut newton_steps = 0;

    for _ in 0..options.max_outer {
        let mut stalled = false;
        for _ in 0..options.max_newton {
            let (grad, hess) = derivatives(blocks, &fac, c, weight);
            let Some(dir) = newton_direction(&grad, &hess) else {
                stalled = true;
                break;
            };
            let decrement = -grad.dot(&dir);
            if !(decrement > 1e-12) {
                break;
            }
            let f0 = objective(c, &z, weight, &fac);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let trial = &z + &dir * step;
                if let Some(tf) = factor(blocks, &trial) {
                    let f1 = objective(c, &trial, weight, &tf);
                    if f1 <= f0 - 0.01 * step * decrement {
                        accepted = Some((trial, tf));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((trial, tf)) = accepted else {
                stalled = true;
                break;
            };
            z = trial;
            fac = tf;
            newton_steps += 1;
            if stop(&z) {
                return Some(BarrierResult {
                    z,
                    termination: Termination::Target,
                    newton_steps,
                });
            }
            if decrement / 2.0 < 1e-10 {
                break;
            }
        }
        if nu / weight < options.gap_tol {
            return Some(BarrierResult {
                z,
                termination: Termination::Converged,
                newton_steps,
            });
        }
        if stalled && nu / weight < 1e-4 {
            return Some(BarrierResult {
                z,
                termination: Termination::Stalled,
                newton_steps,
            });
        }
        weight *= options.mu;
    }
    Some(BarrierResult {
        z,
        termination: Termination::IterationLimit,
        newton_steps,
    })
}
