use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use mfg_core::continuation::{apriori_monitor, apriori_quantity, run_continuation, standard_test_battery, AprioriTrack, Verdict, DEFAULT_APRIORI_THRESHOLD};
use mfg_core::grid::{read_scalar_csv, write_scalar_csv};
use mfg_core::hamiltonian::{check_growth, check_monotonicity, GrowthCertificate, Inequality};
use mfg_core::infconv::{check_envelope_bounds, envelope, envelope_oracle, EnvelopeInequality, EnvelopeSpec};
use mfg_core::operator::{eps_mass_term, hj_residual, mass_defect, transport_residual, weak_solution_certificate};
use mfg_core::solver::{extragradient_solve, natural_residual};
use mfg_core::{Family, MFGState, MfgError, TorusGrid};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::{resolve_config, Cli, CliError, Command, RunConfig, EXIT_CERTIFICATE, EXIT_OK, EXIT_UNCONVERGED};

pub fn run(cli: &Cli) -> Result<i32, CliError> {
    let path = match &cli.command {
        Command::Solve(c) | Command::Check(c) | Command::InfconvTable(c) | Command::Sweep(c) => c.path(),
        Command::Diagnose { config, .. } => config.as_ref(),
    };
    let cfg = resolve_config(path, &cli.global)?;
    let dir = cli.global.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output));
    match &cli.command {
        Command::Solve(_) => solve(&cfg, &dir),
        Command::Check(_) => check(&cfg, &dir),
        Command::InfconvTable(_) => infconv_table(&cfg, &dir),
        Command::Sweep(_) => sweep(&cfg, &dir),
        Command::Diagnose { m_csv, u_csv, epsilon, .. } => diagnose(&cfg, m_csv, u_csv, *epsilon, &dir),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_state(dir: &Path, z: &MFGState) -> Result<(), CliError> {
    write_scalar_csv(z.m(), create(dir, "fields_m.csv")?)?;
    write_scalar_csv(z.u(), create(dir, "fields_u.csv")?)?;
    Ok(())
}

fn write_trace(dir: &Path, track: &AprioriTrack) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(dir, "residual_trace.csv")?);
    w.write_record(["stage", "iteration", "sigma", "natural_residual", "pairing_check"])?;
    for (stage, row) in track.traces() {
        w.write_record([
            stage.to_string(),
            row.iteration.to_string(),
            format!("{:e}", row.sigma),
            format!("{:e}", row.natural_residual),
            row.pairing_check.map(|v| format!("{v:e}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn solve(cfg: &RunConfig, dir: &Path) -> Result<i32, CliError> {
    let data = cfg.problem()?;
    let schedule = cfg.schedule()?;
    let solver = cfg.solver();
    info!("solving {} on n = {}, {} stages from ε = {}", data.spec().family().name(), cfg.grid.n, schedule.stages, schedule.eps0);
    match run_continuation(&data, &schedule, &solver, None) {
        Ok(out) => {
            let apriori = apriori_monitor(&out.track.apriori_values(), DEFAULT_APRIORI_THRESHOLD).ok();
            if apriori.is_some_and(|a| a.alarm) {
                warn!("a priori quantity varies by more than {DEFAULT_APRIORI_THRESHOLD}x across stages");
            }
            let report = json!({
                "command": "solve",
                "config": cfg,
                "epsilons": schedule.epsilons(),
                "verdict": out.verdict,
                "weak_certificate": out.weak_certificate,
                "apriori": apriori,
                "total_iterations": out.track.total_iterations(),
                "stages": out.track.stages,
                "failure": Value::Null,
            });
            write_json(dir, "report.json", &report)?;
            write_state(dir, &out.final_state)?;
            write_trace(dir, &out.track)?;
            info!("verdict {} after {} iterations, outputs in {}", out.verdict, out.track.total_iterations(), dir.display());
            println!("{}", out.verdict);
            Ok(if out.verdict == Verdict::Unconverged { EXIT_UNCONVERGED } else { EXIT_OK })
        }
        Err(MfgError::ContinuationAborted(f)) => {
            let report = json!({
                "command": "solve",
                "config": cfg,
                "epsilons": schedule.epsilons(),
                "verdict": Verdict::Unconverged,
                "total_iterations": f.track.total_iterations(),
                "stages": f.track.stages,
                "failure": { "stage": f.stage, "reason": f.reason },
            });
            write_json(dir, "report.json", &report)?;
            if let Some(best) = &f.best {
                write_state(dir, best)?;
            }
            write_trace(dir, &f.track)?;
            eprintln!("error: continuation aborted at stage {} of {}: {}", f.stage, f.stages, f.reason);
            println!("{}", Verdict::Unconverged);
            Ok(EXIT_UNCONVERGED)
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Serialize)]
struct CheckEntry {
    kind: &'static str,
    id: String,
    epsilon: Option<f64>,
    constant: Option<f64>,
    worst: f64,
    pass: bool,
    detail: Value,
}

fn check(cfg: &RunConfig, dir: &Path) -> Result<i32, CliError> {
    let grid = cfg.grid()?;
    let spec = cfg.hamiltonian_on(grid, false)?;
    let family = spec.family();
    let samples = cfg.check.samples;
    let floor = match family {
        Family::Congestion { .. } => cfg.schedule.floor_min,
        _ => 0.0,
    };
    let mut entries = Vec::new();

    let mono = check_monotonicity(&spec, samples, floor, cfg.seed)?;
    entries.push(CheckEntry {
        kind: "monotonicity",
        id: "Hmon".into(),
        epsilon: None,
        constant: None,
        worst: mono.min_lhs,
        pass: mono.min_lhs >= -cfg.check.monotonicity_tol,
        detail: serde_json::to_value(mono)?,
    });

    for ineq in Inequality::ALL.into_iter().filter(|i| i.applies_to(family)) {
        let cert = GrowthCertificate::documented(&spec, ineq)?;
        let report = check_growth(&spec, &cert, samples, cfg.seed)?;
        entries.push(CheckEntry {
            kind: "growth",
            id: ineq.id().into(),
            epsilon: None,
            constant: Some(cert.constant),
            worst: report.worst_slack,
            pass: report.worst_slack >= 0.0,
            detail: serde_json::to_value(report.witness)?,
        });
    }

    if cfg.use_envelope() || !matches!(family, Family::Congestion { .. }) {
        for &eps in &cfg.check.envelope_epsilons {
            let env = EnvelopeSpec::new(&spec, eps)?;
            let mono = check_monotonicity(&env, samples, floor, cfg.seed)?;
            entries.push(CheckEntry {
                kind: "envelope-monotonicity",
                id: "Hmon".into(),
                epsilon: Some(eps),
                constant: None,
                worst: mono.min_lhs,
                pass: mono.min_lhs >= -cfg.check.monotonicity_tol,
                detail: serde_json::to_value(mono)?,
            });
            for ineq in EnvelopeInequality::ALL {
                let report = check_envelope_bounds(&env, ineq, samples, cfg.seed)?;
                entries.push(CheckEntry {
                    kind: "envelope",
                    id: ineq.id().into(),
                    epsilon: Some(eps),
                    constant: Some(report.constant),
                    worst: report.worst_slack,
                    pass: report.worst_slack >= 0.0,
                    detail: json!({ "node": report.node, "p": report.p, "m": report.m }),
                });
            }
        }
    }

    let failures = entries.iter().filter(|e| !e.pass).count();
    for e in &entries {
        let eps = e.epsilon.map(|v| format!(" ε={v}")).unwrap_or_default();
        println!("{:<22} {:<24}{eps} worst {:+.3e} {}", e.kind, e.id, e.worst, if e.pass { "ok" } else { "VIOLATED" });
    }
    write_json(dir, "check_report.json", &json!({ "command": "check", "config": cfg, "entries": entries, "failures": failures }))?;
    if failures > 0 {
        eprintln!("error: {failures} certificate(s) violated");
        Ok(EXIT_CERTIFICATE)
    } else {
        Ok(EXIT_OK)
    }
}

fn infconv_table(cfg: &RunConfig, dir: &Path) -> Result<i32, CliError> {
    // Profiles only depend on the first coordinate, so node 0 of a 1D grid
    // carries the same coefficients as node 0 of the configured grid.
    let grid = TorusGrid::new(1, cfg.grid.n)?;
    let spec = cfg.hamiltonian_on(grid, true)?;
    let t = &cfg.infconv_table;
    let mut rows = Vec::new();
    for &eps in &t.epsilons {
        let env = EnvelopeSpec::new(&spec, eps)?;
        for &m in &t.m_values {
            for &p in &t.p_values {
                let pv = [p, 0.0];
                let value = envelope(&env, 0, &pv, m)?;
                let h = spec.eval_h(0, &pv, m)?;
                let oracle = envelope_oracle(&env, 0, &pv, m, None, t.oracle_points)?;
                rows.push([p, m, eps, value.q_star[0], value.value, h, oracle.value - value.value]);
            }
        }
    }
    let write = |w: &mut dyn Write| -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["p", "m", "epsilon", "q_star", "H_eps", "H", "oracle_gap"])?;
        for r in &rows {
            w.write_record(r.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut std::io::stdout().lock())?;
    write(&mut create(dir, "infconv_table.csv")?)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct SweepRow {
    n: usize,
    epsilon: f64,
    converged: bool,
    iterations: usize,
    natural_residual: f64,
    hj_max_pos: f64,
    hj_max_on_support: f64,
    transport_l1: f64,
    mass_gap: f64,
    apriori_m: f64,
}

fn sweep_point(cfg: &RunConfig, n: usize, epsilon: f64) -> Result<SweepRow, CliError> {
    let data = cfg.problem_on(n, epsilon)?;
    let z0 = MFGState::constant(*data.grid(), 1.0_f64.max(data.m_floor()), 0.0);
    let (z, converged, iterations) = match extragradient_solve(&data, &z0, &cfg.solver()) {
        Ok(out) => (out.z, true, out.stats.iterations),
        Err(MfgError::SolverFailure(f)) => (f.best, false, f.stats.iterations),
        Err(e) => return Err(e.into()),
    };
    let hj = hj_residual(&data, &z)?;
    let tr = transport_residual(&data, &z)?;
    Ok(SweepRow {
        n,
        epsilon,
        converged,
        iterations,
        natural_residual: natural_residual(&data, &z, 1.0)?,
        hj_max_pos: hj.max_pos,
        hj_max_on_support: hj.max_on_support,
        transport_l1: tr.l1,
        mass_gap: tr.mass_gap,
        apriori_m: apriori_quantity(&data, &z)?,
    })
}

/// Thread pool sized by `MFG_THREADS`, or rayon's default when unset.
fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("MFG_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| CliError::Usage(format!("MFG_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::Usage("MFG_THREADS must be a positive integer, got 0".into()));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Usage(format!("cannot build thread pool: {e}")))
}

fn sweep(cfg: &RunConfig, dir: &Path) -> Result<i32, CliError> {
    let points: Vec<(usize, f64)> = cfg.sweep.n_values.iter().flat_map(|&n| cfg.sweep.epsilons.iter().map(move |&e| (n, e))).collect();
    let rows: Vec<SweepRow> = thread_pool()?.install(|| points.par_iter().map(|&(n, e)| sweep_point(cfg, n, e)).collect::<Result<_, _>>())?;
    let mut w = csv::Writer::from_writer(create(dir, "sweep.csv")?);
    for r in &rows {
        w.serialize(r)?;
        println!("n={:<5} ε={:<8e} iterations={:<7} residual={:.3e}{}", r.n, r.epsilon, r.iterations, r.natural_residual, if r.converged { "" } else { " (unconverged)" });
    }
    w.flush()?;
    Ok(if rows.iter().all(|r| r.converged) { EXIT_OK } else { EXIT_UNCONVERGED })
}

fn diagnose(cfg: &RunConfig, m_csv: &Path, u_csv: &Path, epsilon: f64, dir: &Path) -> Result<i32, CliError> {
    let data = cfg.problem_on(cfg.grid.n, epsilon)?;
    let grid = *data.grid();
    let open = |p: &Path| File::open(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())));
    let z = MFGState::new(read_scalar_csv(grid, open(m_csv)?)?, read_scalar_csv(grid, open(u_csv)?)?)?;
    let hj = hj_residual(&data, &z)?;
    let tr = transport_residual(&data, &z)?;
    let weak = weak_solution_certificate(&data, &z, &standard_test_battery(grid))?;
    let report = json!({
        "command": "diagnose",
        "epsilon": epsilon,
        "hj_max_pos": hj.max_pos,
        "hj_max_on_support": hj.max_on_support,
        "transport_l1": tr.l1,
        "mass_gap": tr.mass_gap,
        "mass_defect": mass_defect(&z),
        "eps_mass_term": eps_mass_term(&data, &z),
        "natural_residual": natural_residual(&data, &z, 1.0)?,
        "apriori_m": apriori_quantity(&data, &z)?,
        "weak_certificate": weak,
        "min_m": z.m().min(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    write_json(dir, "diagnose.json", &report)?;
    Ok(EXIT_OK)
}
