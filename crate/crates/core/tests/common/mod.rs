//! Generators and property checks shared by the property suites and the
//! acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeMap;

use gridlock::attack_sim::{saturate, simulate, threshold_times, SimConfig, DEFAULT_THRESHOLDS};
use gridlock::grid::{
    build_admittance, line_flow, partition_admittance, validate_topology, Bus, BusId, BusKind, GeneratorParams,
    GridTopology, Line, LoadParams,
};
use gridlock::linalg::sym_max_eig;
use gridlock::lmi::{recover_gain, solve_feasibility, LmiError, LmiProblem, SolveOptions};
use gridlock::region::{RegionConstraint, StabilityRegion};
use gridlock::state_space::{eigenvalues, StateSpace};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::Rng;

pub type Check = Result<(), TestCaseError>;

// ---------- generators ----------

/// Connected grid: a random spanning tree plus extra edges, bus 0 a
/// generator and at least one load bus.
pub fn grid_strategy() -> impl Strategy<Value = GridTopology> {
    (2usize..=9)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec(any::<prop::sample::Index>(), n - 1),
                proptest::collection::vec((0..n, 0..n, 0.1f64..50.0), 0..n),
                proptest::collection::vec(0.1f64..50.0, n - 1),
                proptest::collection::vec(any::<bool>(), n),
                proptest::collection::vec((0.05f64..20.0, 0.0f64..2.0, 0.0f64..5.0, 0.0f64..5.0), n),
                proptest::collection::vec((1e-3f64..1.0, 0.0f64..500.0), n),
            )
        })
        .prop_map(|(n, parents, extra, tree_y, gen_flags, gparams, lparams)| {
            let mut kinds: Vec<BusKind> = gen_flags
                .iter()
                .map(|g| if *g { BusKind::GeneratorBus } else { BusKind::LoadBus })
                .collect();
            kinds[0] = BusKind::GeneratorBus;
            if kinds.iter().all(|k| *k == BusKind::GeneratorBus) {
                kinds[n - 1] = BusKind::LoadBus;
            }
            let mut lines: Vec<Line> = (1..n)
                .map(|i| Line {
                    from: BusId(parents[i - 1].index(i)),
                    to: BusId(i),
                    admittance: tree_y[i - 1],
                })
                .collect();
            lines.extend(extra.into_iter().filter(|(a, b, _)| a != b).map(|(a, b, y)| Line {
                from: BusId(a),
                to: BusId(b),
                admittance: y,
            }));
            let buses = (0..n)
                .map(|i| Bus {
                    index: BusId(i),
                    kind: kinds[i],
                    label: None,
                })
                .collect();
            let mut generators = BTreeMap::new();
            let mut loads = BTreeMap::new();
            for i in 0..n {
                match kinds[i] {
                    BusKind::GeneratorBus => {
                        let (m, d, kp, ki) = gparams[i];
                        generators.insert(
                            BusId(i),
                            GeneratorParams {
                                inertia: m,
                                damping: d,
                                kp,
                                ki,
                            },
                        );
                    }
                    BusKind::LoadBus => {
                        let (dl, pf) = lparams[i];
                        loads.insert(
                            BusId(i),
                            LoadParams {
                                frequency_sensitivity: dl,
                                fixed_load_mw: pf,
                            },
                        );
                    }
                }
            }
            GridTopology {
                buses,
                lines,
                generators,
                loads,
                system_base_mva: 100.0,
                nominal_frequency_hz: 60.0,
            }
        })
}

pub fn matrix_strategy(max_n: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_n).prop_flat_map(move |n| {
        proptest::collection::vec(-scale..scale, n * n).prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
    })
}

pub fn is_controllable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let m = b.ncols();
    let mut c = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        c.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * &block;
    }
    let sv = c.svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    max > 0.0 && min / max > 1e-6
}

pub fn system_strategy(max_n: usize) -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
    (1..=max_n, 1usize..=2)
        .prop_flat_map(|(n, m)| {
            (
                proptest::collection::vec(-2.0f64..2.0, n * n),
                proptest::collection::vec(-2.0f64..2.0, n * m),
            )
                .prop_map(move |(a, b)| (DMatrix::from_row_slice(n, n, &a), DMatrix::from_row_slice(n, m, &b)))
        })
        .prop_filter("controllable", |(a, b)| is_controllable(a, b))
}

pub fn region_strategy() -> impl Strategy<Value = StabilityRegion> {
    prop_oneof![
        (-3.0f64..2.5, 0.3f64..3.0).prop_map(|(alpha, w)| StabilityRegion::strip(alpha, alpha + w).unwrap()),
        (-3.0f64..3.0, 0.3f64..3.0).prop_map(|(q, r)| StabilityRegion::disk(q, r).unwrap()),
        Just(StabilityRegion::default_attack()),
    ]
}

/// Seeded random controllable system with `n ≤ max_n` states.
pub fn random_system(rng: &mut impl Rng, max_n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    loop {
        let n = rng.random_range(1..=max_n);
        let m = rng.random_range(1..=3.min(n));
        let scale = rng.random_range(0.2..3.0);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-scale..scale));
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.5..1.5));
        if is_controllable(&a, &b) {
            return (a, b);
        }
    }
}

/// Seeded random region: strip, disk or an overlapping intersection.
pub fn random_region(rng: &mut impl Rng) -> StabilityRegion {
    let strip = |rng: &mut dyn rand::RngCore| {
        let alpha = rng.random_range(-3.0..2.0);
        RegionConstraint::Strip {
            alpha,
            beta: alpha + rng.random_range(0.3..3.0),
        }
    };
    let disk = |rng: &mut dyn rand::RngCore| RegionConstraint::Disk {
        q: rng.random_range(-3.0..3.0),
        r: rng.random_range(0.3..3.0),
    };
    loop {
        let constraints = match rng.random_range(0..3) {
            0 => vec![strip(rng)],
            1 => vec![disk(rng)],
            _ => vec![strip(rng), disk(rng)],
        };
        let region = StabilityRegion { constraints };
        let (lo, hi) = region.real_span();
        if region.validate().is_ok() && hi - lo > 0.2 {
            return region;
        }
    }
}

// ---------- property checks ----------

/// Symmetry, zero row sums, off-diagonal structure and partition round trip.
pub fn check_admittance(topology: GridTopology) -> Check {
    let grid = validate_topology(topology).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let y = build_admittance(&grid);
    prop_assert_eq!(&y, &y.transpose());
    for i in 0..y.nrows() {
        let s: f64 = y.row(i).iter().sum();
        prop_assert!(s.abs() <= 1e-12 * (1.0 + y[(i, i)].abs()), "row {} sums to {}", i, s);
    }
    for line in &grid.topology().lines {
        prop_assert!(y[(line.from.0, line.to.0)] < 0.0);
    }
    let part = partition_admittance(&y, &grid.kinds()).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(part.reassemble(), y);
    prop_assert_eq!(part.y_lg.clone(), part.y_gl.transpose());
    Ok(())
}

pub fn check_flow_antisymmetry(y: f64, a: f64, b: f64) -> Check {
    let fwd = Line {
        from: BusId(0),
        to: BusId(1),
        admittance: y,
    };
    let back = Line {
        from: BusId(1),
        to: BusId(0),
        admittance: y,
    };
    prop_assert_eq!(line_flow(&fwd, a, b), -line_flow(&back, b, a));
    Ok(())
}

/// Non-real eigenvalues of a real matrix pair up with their conjugates.
pub fn check_conjugate_closure(a: DMatrix<f64>) -> Check {
    let eig = eigenvalues(&a).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let scale = 1.0 + a.norm();
    for z in &eig.values {
        let best = eig
            .values
            .iter()
            .map(|w| (w - z.conj()).norm())
            .fold(f64::INFINITY, f64::min);
        prop_assert!(best <= 1e-9 * scale, "{} has no conjugate partner ({})", z, best);
    }
    Ok(())
}

/// Recorded inputs never exceed the cap and are zero before the attack.
pub fn check_saturation(a: DMatrix<f64>, b: DMatrix<f64>, k_scale: f64, cap: f64, seed: u64) -> Check {
    let n = a.nrows();
    let m = b.ncols();
    let ss = StateSpace::from_matrices(a * 0.5, b).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let k = DMatrix::from_fn(m, n, |i, j| {
        k_scale * (((i * 7 + j * 3 + seed as usize) % 5) as f64 - 2.0)
    });
    let cfg = SimConfig {
        dt: 0.01,
        duration: 2.0,
        attack_start: 0.5,
        cap_mw: cap,
        initial_state: Some((0..n).map(|i| 0.1 * (i as f64 + 1.0)).collect()),
        seed,
    };
    let trace = simulate(&ss, &k, &cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
    for (t, u) in trace.times.iter().zip(&trace.inputs) {
        for v in u {
            prop_assert!(v.abs() <= cap, "|u| = {} > cap {}", v.abs(), cap);
            if *t < cfg.attack_start {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }
    prop_assert_eq!(saturate(&[2.0 * cap, -2.0 * cap], cap), vec![cap, -cap]);
    Ok(())
}

/// The 2.5 % crossing never comes after the 5 % one.
pub fn check_threshold_ordering(steps: Vec<Vec<f64>>) -> Check {
    let g = steps[0].len();
    let mut f = vec![60.0; g];
    let mut freqs: Vec<Vec<f64>> = vec![Vec::with_capacity(steps.len()); g];
    for step in &steps {
        for j in 0..g {
            f[j] += step[j];
            freqs[j].push(f[j]);
        }
    }
    let times: Vec<f64> = (0..steps.len()).map(|i| i as f64 * 0.1).collect();
    let report =
        threshold_times(&times, &freqs, 60.0, &DEFAULT_THRESHOLDS).map_err(|e| TestCaseError::fail(e.to_string()))?;
    if let (Some(a), Some(b)) = (report.time_for(0.025), report.time_for(0.05)) {
        prop_assert!(a <= b, "2.5% at {} after 5% at {}", a, b);
    }
    if report.time_for(0.025).is_none() {
        prop_assert!(report.time_for(0.05).is_none());
    }
    Ok(())
}

/// Scaling a certificate by `c > 0` leaves `K` and every residual sign alone.
pub fn check_congruence((a, b): (DMatrix<f64>, DMatrix<f64>), region: StabilityRegion, c: f64) -> Check {
    let problem = LmiProblem::new(a, b, region, 1e-6).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let cert = match solve_feasibility(&problem, &SolveOptions::default()) {
        Ok(cert) => cert,
        Err(LmiError::Infeasible { .. }) => return Err(TestCaseError::reject("infeasible")),
        Err(e) => return Err(TestCaseError::fail(e.to_string())),
    };
    let (p, w) = (&cert.p * c, &cert.w * c);
    let k = recover_gain(&p, &w).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let tol = 1e-7 * (1.0 + cert.k.norm());
    prop_assert!((&k - &cert.k).norm() <= tol, "K moved by {}", (&k - &cert.k).norm());
    let before = problem.residuals(&cert.p, &cert.w);
    let after = problem.residuals(&p, &w);
    for (r0, r1) in before.iter().zip(&after) {
        prop_assert!(*r0 < 0.0 && *r1 < 0.0, "residuals {} -> {}", r0, r1);
        prop_assert!((r1 - c * r0).abs() <= 1e-8 * c * (1.0 + r0.abs()) * (1.0 + p.norm()));
    }
    Ok(())
}

/// The 2n x 2n disk block and its Schur complement agree on definiteness.
pub fn check_disk_schur(acl: DMatrix<f64>, p_seed: DMatrix<f64>, q: f64, r: f64) -> Check {
    let n = acl.nrows();
    let p = &p_seed * p_seed.transpose() + DMatrix::identity(n, n) * 0.1;
    let problem = LmiProblem::new(
        acl.clone(),
        DMatrix::zeros(n, 1),
        StabilityRegion::disk(q, r).unwrap(),
        1e-6,
    )
    .map_err(|e| TestCaseError::fail(e.to_string()))?;
    let block = sym_max_eig(&problem.blocks(&p, &DMatrix::zeros(1, n))[0]);
    let shifted = &acl + DMatrix::identity(n, n) * q;
    let schur = sym_max_eig(&(&shifted * &p * shifted.transpose() / r - &p * r));
    let scale = 1e-8 * (1.0 + p.norm()) * (1.0 + shifted.norm()).powi(2) / r.min(1.0);
    if block.abs() > scale && schur.abs() > scale {
        prop_assert_eq!(block < 0.0, schur < 0.0, "block {} vs schur {}", block, schur);
    }
    Ok(())
}

/// Zero gain and zero start produce an identically zero trace.
pub fn check_energy_free(a: DMatrix<f64>) -> Check {
    let n = a.nrows();
    let ss = StateSpace::from_matrices(a, DMatrix::from_element(n, 1, 1.0))
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    let cfg = SimConfig {
        dt: 0.01,
        duration: 1.0,
        attack_start: 0.2,
        initial_state: Some(vec![0.0; n]),
        ..SimConfig::default()
    };
    let trace = simulate(&ss, &DMatrix::zeros(1, n), &cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(trace.states.iter().flatten().all(|v| *v == 0.0));
    prop_assert!(trace.inputs.iter().flatten().all(|v| *v == 0.0));
    Ok(())
}

pub fn walk_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=4).prop_flat_map(|g| proptest::collection::vec(proptest::collection::vec(-0.6f64..0.65, g), 2..200))
}
