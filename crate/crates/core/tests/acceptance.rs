//! Acceptance suite: one pass/fail line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::Rng;

use mfg_core::continuation::{apriori_monitor, run_continuation, ContinuationOutput, ContinuationSchedule, FloorRule, DEFAULT_APRIORI_THRESHOLD};
use mfg_core::grid::{divergence, gradient, inner_product, norm, vector_inner_product, VectorField};
use mfg_core::hamiltonian::{check_growth, check_monotonicity, GrowthCertificate, Inequality};
use mfg_core::infconv::{draw_envelope_sample, envelope, envelope_oracle, EnvelopeSpec};
use mfg_core::operator::monotonicity_pairing_scaled;
use mfg_core::rng::{stream, substream};
use mfg_core::solver::{extragradient_solve, projected_gradient_reference, Metric, SolverConfig, VariationalOperator};
use mfg_core::{ExponentSet, Family, HamiltonianSpec, Kernel, MFGState, MfgError, OperatorOutput, ProblemData, Result, ScalarField, TorusGrid};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within_budget(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

fn coefficient(grid: TorusGrid, c0: f64, c1: f64) -> ScalarField {
    ScalarField::from_fn(grid, |x| c0 + c1 * (2.0 * PI * x[0]).sin())
}

fn family_spec(grid: TorusGrid, family: Family, alpha: f64, beta: f64) -> HamiltonianSpec {
    let a = coefficient(grid, 1.0, 0.5);
    let b = coefficient(grid, 0.75, -0.25);
    let g = coefficient(grid, 0.5, 0.25);
    HamiltonianSpec::new(family, alpha, beta, a, b, Some(g)).expect("valid spec")
}

fn monotone_families() -> Vec<(String, Family, f64, f64)> {
    let mut out = Vec::new();
    for alpha in [1.5, 2.0, 3.0] {
        for beta in [0.5, 1.0, 2.0] {
            out.push((format!("power a={alpha} b={beta}"), Family::Power, alpha, beta));
        }
    }
    for tau in [0.0, 0.5, 1.0] {
        out.push((format!("congestion tau={tau}"), Family::Congestion { tau }, 2.0, 1.0));
    }
    for kernel in [Kernel::ExpSquare, Kernel::CoshMinusOne] {
        out.push((format!("weak {}", kernel.name()), Family::Weak { kernel }, 2.0, 1.0));
    }
    out
}

fn random_state<R: Rng>(grid: TorusGrid, floor: f64, rng: &mut R) -> MFGState {
    let n = grid.node_count();
    let m = (0..n).map(|_| floor + rng.gen_range(0.0..3.0_f64).powi(2)).collect();
    let u = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
    MFGState::new(ScalarField::from_values(grid, m).unwrap(), ScalarField::from_values(grid, u).unwrap()).unwrap()
}

fn criterion_1() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst_hmon = f64::INFINITY;
    let mut worst_pairing = f64::INFINITY;
    let mut failures = Vec::new();
    for (idx, (name, family, alpha, beta)) in monotone_families().into_iter().enumerate() {
        let grid = if idx % 2 == 0 { TorusGrid::new(1, 16)? } else { TorusGrid::new(2, 5)? };
        let spec = family_spec(grid, family, alpha, beta);
        let floor = if matches!(family, Family::Congestion { .. }) { 1e-6 } else { 0.0 };
        let rep = check_monotonicity(&spec, 10_000, floor, idx as u64)?;
        worst_hmon = worst_hmon.min(rep.min_lhs);
        if rep.min_lhs < -1e-10 {
            failures.push(format!("{name}: hmon {:e}", rep.min_lhs));
        }
        let use_envelope = matches!(family, Family::Weak { .. });
        for eps in [0.0, 0.1] {
            let data = ProblemData::new(spec.clone(), ScalarField::zeros(grid), eps, use_envelope, floor)?;
            let mut rng = substream(idx as u64, 99, (eps * 10.0) as u64);
            for _ in 0..1000 {
                let z1 = random_state(grid, data.m_floor(), &mut rng);
                let z2 = random_state(grid, data.m_floor(), &mut rng);
                let pv = monotonicity_pairing_scaled(&data, &z1, &z2)?;
                let rel = pv.value / pv.scale.max(1.0);
                worst_pairing = worst_pairing.min(rel);
                if pv.value < -1e-9 * pv.scale.max(1.0) {
                    failures.push(format!("{name} eps={eps}: pairing {:e} (scale {:e})", pv.value, pv.scale));
                    break;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && within_budget(elapsed, 30);
    Ok(outcome(
        pass,
        format!(
            "min hmon {worst_hmon:.3e}, min pairing/scale {worst_pairing:.3e}, {:.1}s{}",
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    ))
}

fn criterion_2() -> Result<Outcome> {
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut worst = f64::INFINITY;
    let targets = [Inequality::Lower, Inequality::Lagrangian, Inequality::BoundsH, Inequality::Alternative2, Inequality::BoundsHPlus];
    for (idx, (name, family, alpha, beta)) in monotone_families().into_iter().enumerate() {
        let grid = TorusGrid::new(1, 8)?;
        let spec = family_spec(grid, family, alpha, beta);
        for ineq in targets {
            if !ineq.applies_to(family) {
                continue;
            }
            let cert = GrowthCertificate::documented(&spec, ineq)?;
            let rep = check_growth(&spec, &cert, 10_000, idx as u64)?;
            checked += 1;
            worst = worst.min(rep.worst_slack);
            if rep.worst_slack < 0.0 {
                failures.push(format!("{name} {}: slack {:e} at {:?}", ineq.id(), rep.worst_slack, rep.witness));
            }
        }
    }
    Ok(outcome(
        failures.is_empty(),
        format!("{checked} (family, inequality) runs, min slack {worst:.3e}{}", if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }),
    ))
}

fn criterion_3() -> Result<Outcome> {
    let grid = TorusGrid::new(1, 4)?;
    let mut failures = Vec::new();

    // Oracle agreement on 100 random (p, m, ε).
    let weak = family_spec(grid, Family::Weak { kernel: Kernel::ExpSquare }, 2.0, 1.0);
    let power = family_spec(grid, Family::Power, 1.5, 1.0);
    let region = mfg_core::hamiltonian::SampleBox { m_min: 1e-3, m_max: 10.0, p_max: 3.0 };
    let mut rng = stream(11, 77);
    let mut worst_ratio = 0.0_f64;
    for k in 0..100 {
        let base = if k % 2 == 0 { &weak } else { &power };
        let (node, p, m, eps) = draw_envelope_sample(&grid, &region, &mut rng);
        let spec = EnvelopeSpec::new(base, eps)?;
        let env = envelope(&spec, node, &p, m)?;
        let oracle = envelope_oracle(&spec, node, &p, m, Some(norm(&p)), 20_001)?;
        let gap = oracle.value - env.value;
        worst_ratio = worst_ratio.max(gap.abs() / oracle.resolution_bound.max(f64::MIN_POSITIVE));
        if gap < -1e-9 * (1.0 + env.value.abs()) || gap > oracle.resolution_bound {
            failures.push(format!("oracle sample {k}: gap {gap:e}, bound {:e}", oracle.resolution_bound));
        }
    }

    // Zero region and optimality identity.
    let mut zero_hits = 0;
    let mut worst_identity = 0.0_f64;
    let wide = mfg_core::hamiltonian::SampleBox { m_min: 1e-6, m_max: 10.0, p_max: 5.0 };
    for (base, alpha) in [(&weak, 2.0), (&power, 1.5)] {
        for _ in 0..5000 {
            let (node, p, m, eps) = draw_envelope_sample(&grid, &wide, &mut rng);
            let spec = EnvelopeSpec::new(base, eps)?;
            let env = envelope(&spec, node, &p, m)?;
            let dph = norm(&base.eval_dp_h(node, &p, m)?);
            if dph <= (1.0 - 1e-12) / eps {
                zero_hits += 1;
                if env.q_star != [0.0, 0.0] {
                    failures.push(format!("nonzero minimizer in the zero region at p={p:?}"));
                }
            } else if norm(&env.q_star) > 0.0 {
                let q = norm(&env.q_star);
                let lhs = norm(&base.eval_dp_h(node, &mfg_core::grid::sub(&p, &env.q_star), m)?);
                let rhs = (1.0 + alpha * q.powf(alpha - 1.0)) / eps;
                worst_identity = worst_identity.max((lhs - rhs).abs());
                if (lhs - rhs).abs() > 1e-9 {
                    failures.push(format!("optimality identity off by {:e} at p={p:?} eps={eps}", lhs - rhs));
                }
            }
        }
    }

    // Hand case: |p|^2 part only, p = 2, ε = 1.
    let unit = ScalarField::constant(grid, 1.0);
    let hand = HamiltonianSpec::power(2.0, 1.0, unit.clone(), unit)?;
    let env = envelope(&EnvelopeSpec::new(&hand, 1.0)?, 0, &[2.0, 0.0], 1.0)?;
    let p_part = env.value + 1.0;
    if (env.q_star[0] - 0.75).abs() > 1e-9 || (p_part - 2.875).abs() > 1e-9 {
        failures.push(format!("hand case gave q*={:?}, p-part {p_part}", env.q_star));
    }
    failures.truncate(5);
    Ok(outcome(
        failures.is_empty(),
        format!(
            "max oracle gap/bound {worst_ratio:.3}, {zero_hits} zero-region hits, max identity error {worst_identity:.2e}, hand q*={:.12}{}",
            env.q_star[0],
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    ))
}

fn power_data(grid: TorusGrid, potential: ScalarField) -> Result<ProblemData> {
    let one = ScalarField::constant(grid, 1.0);
    ProblemData::new(HamiltonianSpec::power(2.0, 1.0, one.clone(), one)?, potential, 0.0, false, 0.0)
}

/// Root of `c + ε c^3 = 1` by Newton from 1.
fn constant_root(eps: f64) -> f64 {
    let mut c = 1.0_f64;
    for _ in 0..100 {
        c -= (c + eps * c.powi(3) - 1.0) / (1.0 + 3.0 * eps * c * c);
    }
    c
}

fn criterion_4() -> Result<Outcome> {
    let start = Instant::now();
    let grid = TorusGrid::new(1, 64)?;
    let data = power_data(grid, ScalarField::zeros(grid))?;
    let schedule = ContinuationSchedule::new(0.1, 0.1, 4, FloorRule::Zero)?;
    let out = run_continuation(&data, &schedule, &SolverConfig::default(), None)?;
    let elapsed = start.elapsed();
    let m_err = out.final_state.m().map(|v| v - 1.0).max_abs();
    let u_err = out.final_state.u().map(|v| v - 1.0).max_abs();
    let mut worst_identity = 0.0_f64;
    for s in &out.track.stages {
        worst_identity = worst_identity.max((s.mean_m - constant_root(s.epsilon)).abs());
    }
    let pass = m_err <= 1e-3 && u_err <= 1e-2 && worst_identity <= 1e-4 && within_budget(elapsed, 60);
    Ok(outcome(
        pass,
        format!(
            "|m-1|_inf {m_err:.2e}, |u-1|_inf {u_err:.2e}, max |mean m - c(eps)| {worst_identity:.2e}, verdict {}, {} iterations, {:.1}s",
            out.verdict,
            out.track.total_iterations(),
            elapsed.as_secs_f64()
        ),
    ))
}

fn sine_potential(grid: TorusGrid) -> ScalarField {
    coefficient(grid, 0.5, 0.2)
}

fn criterion_5() -> Result<Outcome> {
    let start = Instant::now();
    let grid = TorusGrid::new(1, 128)?;
    let data = power_data(grid, sine_potential(grid))?;
    let schedule = ContinuationSchedule::new(0.1, 0.1, 6, FloorRule::Zero)?;
    let out = run_continuation(&data, &schedule, &SolverConfig::default(), None)?;
    let elapsed = start.elapsed();
    let last = out.track.stages.last().unwrap().original;
    let worst_identity = out.track.stages.iter().map(|s| (s.mass_defect + s.eps_mass_term).abs()).fold(0.0, f64::max);
    let pass = last.hj_max_pos <= 1e-4
        && last.hj_max_on_support <= 1e-4
        && last.transport_l1 <= 1e-4
        && last.mass_gap.abs() <= 1e-5
        && worst_identity <= 1e-8
        && within_budget(elapsed, 300);
    Ok(outcome(
        pass,
        format!(
            "hj+ {:.2e}, hj on support {:.2e}, transport l1 {:.2e}, mass gap {:.2e}, max mass identity error {worst_identity:.2e}, verdict {}, {:.1}s",
            last.hj_max_pos,
            last.hj_max_on_support,
            last.transport_l1,
            last.mass_gap,
            out.verdict,
            elapsed.as_secs_f64()
        ),
    ))
}

fn benchmark(name: &str, grid: TorusGrid) -> Result<ContinuationOutput> {
    let one = ScalarField::constant(grid, 1.0);
    let (spec, potential, envelope_on) = match name {
        "power" => (HamiltonianSpec::power(2.0, 1.0, one.clone(), one)?, sine_potential(grid), false),
        "congestion" => (HamiltonianSpec::congestion(2.0, 1.0, 0.5, one.clone(), one)?, sine_potential(grid), false),
        _ => (HamiltonianSpec::weak(2.0, 1.0, Kernel::ExpSquare, one.clone(), one.clone(), one)?, sine_potential(grid), true),
    };
    let floor_rule = FloorRule::for_family(spec.family());
    let data = ProblemData::new(spec, potential, 0.1, envelope_on, floor_rule.delta(0.1))?;
    let schedule = ContinuationSchedule::new(0.1, 0.1, 4, floor_rule)?;
    run_continuation(&data, &schedule, &SolverConfig::default(), None)
}

fn criterion_6_and_7() -> Result<(Outcome, Outcome)> {
    let grid = TorusGrid::new(1, 64)?;
    let mut details = Vec::new();
    let mut pass = true;
    let mut weak_out = None;
    for name in ["power", "congestion", "weak"] {
        let out = benchmark(name, grid)?;
        let verdict = apriori_monitor(&out.track.apriori_values(), DEFAULT_APRIORI_THRESHOLD)?;
        pass &= !verdict.alarm;
        details.push(format!("{name} ratio {:.3}", verdict.max_over_min_ratio));
        if name == "weak" {
            weak_out = Some(out);
        }
    }
    let weak = weak_out.expect("weak benchmark ran");
    let c7 = outcome(
        weak.weak_certificate.min_value >= -1e-5,
        format!("min certificate {:.3e} (pair {}), verdict {}", weak.weak_certificate.min_value, weak.weak_certificate.witness, weak.verdict),
    );
    Ok((outcome(pass, details.join(", ")), c7))
}

fn criterion_8() -> Result<Outcome> {
    let mut rng = stream(8, 8);
    let mut worst_adj = 0.0_f64;
    for k in 0..100 {
        let grid = if k % 2 == 0 { TorusGrid::new(1, 32)? } else { TorusGrid::new(2, 12)? };
        let n = grid.node_count();
        let u = ScalarField::from_values(grid, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let w = VectorField::from_values(grid, (0..n).map(|_| [rng.gen_range(-1.0..1.0), if grid.dim() == 2 { rng.gen_range(-1.0..1.0) } else { 0.0 }]).collect())?;
        let lhs = vector_inner_product(&gradient(&u), &w)?;
        let rhs = -inner_product(&u, &divergence(&w))?;
        worst_adj = worst_adj.max((lhs - rhs).abs());
    }
    let mut worst_exp = 0.0_f64;
    for _ in 0..50 {
        let alpha = rng.gen_range(1.01..5.0);
        let beta = rng.gen_range(0.05..5.0);
        let tau = rng.gen_range(0.0..=1.0);
        let ex = ExponentSet::new(alpha, beta)?;
        let errs = [
            ex.holder_defect(alpha),
            ex.congestion_holder_defect(alpha, beta, tau),
            (ex.beta_bar - (beta + 1.0)).abs(),
            (ex.gamma_bar / alpha - ex.beta_bar_conj).abs() / ex.beta_bar_conj,
            (1.0 / ex.gamma_bar + 1.0 / ex.gamma_bar_conj - 1.0).abs(),
        ];
        worst_exp = errs.iter().cloned().fold(worst_exp, f64::max);
    }
    Ok(outcome(worst_adj <= 1e-12 && worst_exp <= 1e-14, format!("max adjointness error {worst_adj:.2e}, max exponent identity error {worst_exp:.2e}")))
}

struct Rotation(TorusGrid);

impl VariationalOperator for Rotation {
    fn grid(&self) -> &TorusGrid {
        &self.0
    }

    fn apply(&self, z: &MFGState) -> Result<OperatorOutput> {
        Ok(OperatorOutput { eta_slot: z.u().clone(), nu_slot: z.m().map(|v| -v) })
    }

    fn m_floor(&self) -> f64 {
        f64::NEG_INFINITY
    }
}

fn criterion_9() -> Result<Outcome> {
    let grid = TorusGrid::single_node();
    let op = Rotation(grid);
    let z0 = MFGState::constant(grid, 1.0, 0.0);
    let one_step = SolverConfig { step0: 0.5, max_iter: 1, probe_every: 0, metric: Metric::Euclidean, ..Default::default() };
    let first = match extragradient_solve(&op, &z0, &one_step) {
        Err(MfgError::SolverFailure(f)) => (f.best.m().values()[0], f.best.u().values()[0]),
        other => panic!("one step cannot converge: {:?}", other.map(|o| o.stats.iterations)),
    };
    let cfg = SolverConfig { step0: 0.5, tol_natural: 1e-12, metric: Metric::Euclidean, ..Default::default() };
    let solved = extragradient_solve(&op, &z0, &cfg)?;
    let dist = solved.z.norm();
    let reference = projected_gradient_reference(&op, &z0, 0.5, 200)?;
    let growth = reference.last().unwrap() / reference[0];
    let pass = first == (0.75, 0.5) && dist <= 1e-10 && growth > 1e6;
    Ok(outcome(
        pass,
        format!("one step {first:?}, extragradient |z| {dist:.2e} after {} iterations, forward-step growth {growth:.2e}", solved.stats.iterations),
    ))
}

fn main() {
    let mut all = true;
    let mut emit = |n: usize, name: &str, r: Result<Outcome>| {
        let (pass, detail) = match r {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        all &= pass;
        println!("criterion {n} [{name}]: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    };
    emit(1, "monotonicity suite", criterion_1());
    emit(2, "growth certificates", criterion_2());
    emit(3, "infimal convolution", criterion_3());
    emit(4, "exact constant solution", criterion_4());
    emit(5, "strong certification", criterion_5());
    match criterion_6_and_7() {
        Ok((c6, c7)) => {
            emit(6, "a priori monitor", Ok(c6));
            emit(7, "weak battery", Ok(c7));
        }
        Err(e) => {
            let msg = e.to_string();
            emit(6, "a priori monitor", Err(e));
            emit(7, "weak battery", Ok(outcome(false, format!("benchmarks failed: {msg}"))));
        }
    }
    emit(8, "discrete calculus", criterion_8());
    emit(9, "solver regression", criterion_9());
    if !all {
        std::process::exit(1);
    }
}
