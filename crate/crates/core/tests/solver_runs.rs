use std::f64::consts::PI;

use mfg_core::continuation::{apriori_monitor, run_continuation, standard_test_battery, ContinuationSchedule, FloorRule, Verdict};
use mfg_core::operator::{weak_solution_certificate, MFGState};
use mfg_core::solver::{extragradient_solve, natural_residual, Metric, SolverConfig};
use mfg_core::{HamiltonianSpec, MfgError, ProblemData, ScalarField, TorusGrid};

fn power_data(n: usize, eps: f64, potential: impl Fn(f64) -> f64) -> ProblemData {
    let g = TorusGrid::new(1, n).unwrap();
    let one = ScalarField::constant(g, 1.0);
    let spec = HamiltonianSpec::power(2.0, 1.0, one.clone(), one).unwrap();
    ProblemData::new(spec, ScalarField::from_fn(g, |x| potential(x[0])), eps, false, 0.0).unwrap()
}

fn sine(x: f64) -> f64 {
    0.5 + 0.2 * (2.0 * PI * x).sin()
}

#[test]
fn converges_to_the_constant_solution() {
    let data = power_data(64, 1e-3, |_| 0.0);
    let z0 = MFGState::constant(*data.grid(), 0.5, 0.0);
    let out = extragradient_solve(&data, &z0, &SolverConfig::default()).unwrap();
    assert!(out.z.m().map(|v| v - 1.0).max_abs() <= 1e-3);
    assert!(out.z.u().map(|v| v - 1.0).max_abs() <= 1e-2);
    assert!(out.stats.final_residual <= 1e-10);
    assert!(natural_residual(&data, &out.z, 1.0).unwrap() <= 1e-10);
    assert!(out.stats.pairing_checks > 0 && out.stats.pairing_failures == 0);
}

#[test]
fn infeasible_start_is_lifted_to_the_floor() {
    let data = power_data(32, 1e-2, |_| 0.0);
    let g = *data.grid();
    let cold = extragradient_solve(&data, &MFGState::constant(g, -1.0, 0.0), &SolverConfig::default()).unwrap();
    let lifted = extragradient_solve(&data, &MFGState::constant(g, 0.0, 0.0), &SolverConfig::default()).unwrap();
    assert_eq!(cold.stats.iterations, lifted.stats.iterations);
    assert_eq!(cold.z, lifted.z);
}

#[test]
fn runs_are_bit_reproducible() {
    let data = power_data(32, 1e-2, sine);
    let z0 = MFGState::constant(*data.grid(), 1.0, 0.0);
    let cfg = SolverConfig { rng_seed: 42, ..Default::default() };
    let a = extragradient_solve(&data, &z0, &cfg).unwrap();
    let b = extragradient_solve(&data, &z0, &cfg).unwrap();
    assert_eq!(a.stats.iterations, b.stats.iterations);
    assert_eq!(a.stats.trace, b.stats.trace);
    assert_eq!(a.z, b.z);
}

#[test]
fn every_iterate_respects_the_floor() {
    let g = TorusGrid::new(1, 32).unwrap();
    let one = ScalarField::constant(g, 1.0);
    let spec = HamiltonianSpec::congestion(2.0, 1.0, 0.5, one.clone(), one).unwrap();
    let floor = 0.05;
    let data = ProblemData::new(spec, ScalarField::from_fn(g, |x| 2.0 * (2.0 * PI * x[0]).sin()), 0.1, false, floor).unwrap();
    let z0 = MFGState::constant(g, 1.0, 0.0);
    for max_iter in [1, 2, 5, 20, 100] {
        let cfg = SolverConfig { max_iter, ..Default::default() };
        let z = match extragradient_solve(&data, &z0, &cfg) {
            Ok(out) => out.z,
            Err(MfgError::SolverFailure(f)) => f.best,
            Err(e) => panic!("{e}"),
        };
        assert!(z.m().min() >= floor);
    }
}

#[test]
fn accepted_steps_are_fejer_monotone() {
    for metric in [Metric::Euclidean, Metric::Sobolev { weight: 1.0 }] {
        let data = power_data(8, 0.05, |_| 0.0);
        let g = *data.grid();
        let z0 = MFGState::new(ScalarField::from_fn(g, |x| 0.6 + 0.3 * (2.0 * PI * x[0]).sin()), ScalarField::from_fn(g, |x| 0.2 * (2.0 * PI * x[0]).cos())).unwrap();
        let cfg = SolverConfig { metric, tol_natural: 1e-13, ..Default::default() };
        let star = extragradient_solve(&data, &z0, &cfg).unwrap().z;
        let sobolev = mfg_core::solver::SobolevMetric::new(g, 1.0);
        let dist = |z: &MFGState| {
            let d = z.axpy(-1.0, &star).unwrap();
            match metric {
                Metric::Euclidean => d.norm(),
                Metric::Sobolev { .. } => (mfg_core::grid::inner_product(d.m(), d.m()).unwrap() + sobolev.energy(d.u())).sqrt(),
            }
        };
        let mut prev = dist(&z0);
        let mut z = z0.clone();
        for _ in 0..200 {
            let step = SolverConfig { max_iter: 1, probe_every: 0, ..cfg.clone() };
            z = match extragradient_solve(&data, &z, &step) {
                Ok(out) => out.z,
                Err(MfgError::SolverFailure(f)) => f.best,
                Err(e) => panic!("{e}"),
            };
            let d = dist(&z);
            assert!(d <= prev + 1e-10, "{metric:?}: {d} > {prev}");
            prev = d;
        }
    }
}

#[test]
fn constant_benchmark_is_a_strong_candidate() {
    let data = power_data(64, 0.1, |_| 0.0);
    let schedule = ContinuationSchedule::new(0.1, 0.1, 4, FloorRule::Zero).unwrap();
    let out = run_continuation(&data, &schedule, &SolverConfig::default(), None).unwrap();
    assert_eq!(out.verdict, Verdict::StrongCandidate);
    let monitor = apriori_monitor(&out.track.apriori_values(), 10.0).unwrap();
    assert!(monitor.max_over_min_ratio <= 1.5, "{monitor:?}");
    assert!(out.track.stages.iter().skip(1).all(|s| s.drift.is_some()));
}

#[test]
fn sine_potential_is_a_strong_candidate() {
    // The unregularized mass gap is -ε int u^3 with u near 1.5, so the
    // schedule has to reach ε = 1e-5 before it drops below 1e-4.
    let data = power_data(64, 0.1, sine);
    let schedule = ContinuationSchedule::new(0.1, 0.1, 5, FloorRule::Zero).unwrap();
    let out = run_continuation(&data, &schedule, &SolverConfig::default(), None).unwrap();
    assert_eq!(out.verdict, Verdict::StrongCandidate);
    let last = out.track.stages.last().unwrap().original;
    assert!(last.hj_max_pos <= 1e-4 && last.hj_max_on_support <= 1e-4 && last.transport_l1 <= 1e-4 && last.mass_gap.abs() <= 1e-4);

    // Converged iterates certify themselves and random smooth test pairs.
    let final_data = data.clone().with_epsilon(out.track.stages.last().unwrap().epsilon).unwrap();
    let z = &out.final_state;
    let own = MFGState::new(z.m().map(|v| v + 1e-3), z.u().clone()).unwrap();
    assert!(weak_solution_certificate(&final_data, z, &[own]).unwrap().min_value >= -1e-6);
    let battery = standard_test_battery(*data.grid());
    assert!(weak_solution_certificate(&final_data, z, &battery).unwrap().min_value >= -1e-5);
}

#[test]
fn single_stage_satisfies_the_mass_identity() {
    let data = power_data(64, 1.0, sine);
    let schedule = ContinuationSchedule::new(1.0, 0.5, 1, FloorRule::Zero).unwrap();
    let out = run_continuation(&data, &schedule, &SolverConfig::default(), None).unwrap();
    assert_ne!(out.verdict, Verdict::StrongCandidate);
    let s = &out.track.stages[0];
    assert!((s.mass_defect + s.eps_mass_term).abs() <= 1e-8);
}

#[test]
fn warm_starts_do_not_cost_more_than_cold_starts() {
    let mut warm_total = Vec::new();
    let mut cold_total = Vec::new();
    for seed in [0, 1, 2] {
        let data = power_data(64, 0.1, sine);
        let cfg = SolverConfig { rng_seed: seed, ..Default::default() };
        let mut schedule = ContinuationSchedule::new(0.1, 0.1, 4, FloorRule::Zero).unwrap();
        warm_total.push(run_continuation(&data, &schedule, &cfg, None).unwrap().track.total_iterations());
        schedule.warm_start = false;
        cold_total.push(run_continuation(&data, &schedule, &cfg, None).unwrap().track.total_iterations());
    }
    warm_total.sort_unstable();
    cold_total.sort_unstable();
    assert!(warm_total[1] <= cold_total[1], "warm {warm_total:?} cold {cold_total:?}");
}

#[test]
fn congestion_runs_stay_above_the_floor() {
    let g = TorusGrid::new(1, 32).unwrap();
    let one = ScalarField::constant(g, 1.0);
    let spec = HamiltonianSpec::congestion(2.0, 1.0, 0.5, one.clone(), one).unwrap();
    let rule = FloorRule::for_family(spec.family());
    let data = ProblemData::new(spec, ScalarField::from_fn(g, |x| 1.5 * (2.0 * PI * x[0]).sin()), 0.1, false, rule.delta(0.1)).unwrap();
    let schedule = ContinuationSchedule::new(0.1, 0.1, 3, rule).unwrap();
    let out = run_continuation(&data, &schedule, &SolverConfig::default(), None).unwrap();
    for s in &out.track.stages {
        assert!(s.min_m >= s.delta, "stage {}: {} < {}", s.stage, s.min_m, s.delta);
        assert!((0.0..=1.0).contains(&s.floored_fraction));
    }
}

#[test]
fn stage_failure_aborts_with_a_partial_track() {
    let data = power_data(64, 0.1, sine);
    let schedule = ContinuationSchedule::new(0.1, 0.1, 3, FloorRule::Zero).unwrap();
    let cfg = SolverConfig { max_iter: 3, ..Default::default() };
    match run_continuation(&data, &schedule, &cfg, None) {
        Err(MfgError::ContinuationAborted(f)) => {
            assert_eq!(f.stage, 1);
            assert!(f.track.stages.is_empty());
            assert!(f.best.is_some());
        }
        other => panic!("expected an abort, got {:?}", other.map(|o| o.verdict)),
    }
}
