//! Projected extragradient for the monotone variational inequality
//! `<A[z], v - z> >= 0` over `{m >= floor} × {u unconstrained}`.
//!
//! Steps are taken in the metric `M = diag(I, I - κΔ_h)`: the value-function
//! slot of the operator contains `-div(m D_pH)`, whose Lipschitz constant grows
//! like `h^-2`, and preconditioning by a discrete `H^1` Riesz map removes that
//! growth. The projection only touches the density slot, where `M` is the
//! identity, so it stays a node-wise clamp. `Metric::Euclidean` recovers the
//! textbook iteration.

use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{invalid, MfgError, Result};
use crate::grid::{gradient, inner_product, vector_inner_product, ScalarField, TorusGrid};
use crate::operator::{MFGState, OperatorOutput, ProblemData};
use crate::rng;

/// An operator the extragradient solver can drive.
pub trait VariationalOperator {
    fn grid(&self) -> &TorusGrid;

    fn apply(&self, z: &MFGState) -> Result<OperatorOutput>;

    /// Lower bound of the density slot. `f64::NEG_INFINITY` leaves the slot
    /// unconstrained.
    fn m_floor(&self) -> f64 {
        0.0
    }
}

impl VariationalOperator for ProblemData {
    fn grid(&self) -> &TorusGrid {
        ProblemData::grid(self)
    }

    fn apply(&self, z: &MFGState) -> Result<OperatorOutput> {
        ProblemData::apply(self, z)
    }

    fn m_floor(&self) -> f64 {
        ProblemData::m_floor(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Metric {
    Euclidean,
    /// `M = diag(I, I - κΔ_h)` with `κ = weight`.
    Sobolev { weight: f64 },
}

impl Default for Metric {
    fn default() -> Self {
        Metric::Sobolev { weight: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverConfig {
    pub step0: f64,
    pub backtrack_ratio: f64,
    pub max_iter: usize,
    pub tol_natural: f64,
    /// Extra density floor on top of the operator's own floor.
    pub m_floor: f64,
    pub rng_seed: u64,
    pub metric: Metric,
    /// Monotonicity probe period in iterations; 0 disables probing.
    pub probe_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step0: 1.0,
            backtrack_ratio: 0.5,
            max_iter: 200_000,
            tol_natural: 1e-10,
            m_floor: 0.0,
            rng_seed: 0,
            metric: Metric::default(),
            probe_every: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step0 > 0.0) || !self.step0.is_finite() {
            return Err(invalid(format!("step0 must be positive, got {}", self.step0)));
        }
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            return Err(invalid(format!("backtrack_ratio must lie in (0, 1), got {}", self.backtrack_ratio)));
        }
        if !(self.tol_natural > 0.0) {
            return Err(invalid(format!("tol_natural must be positive, got {}", self.tol_natural)));
        }
        if !(self.m_floor >= 0.0) || !self.m_floor.is_finite() {
            return Err(invalid(format!("m_floor must be finite and non-negative, got {}", self.m_floor)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        if let Metric::Sobolev { weight } = self.metric {
            if !(weight > 0.0) || !weight.is_finite() {
                return Err(invalid(format!("Sobolev metric weight must be positive, got {weight}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub sigma: f64,
    pub natural_residual: f64,
    /// Value of the monotonicity probe, when one ran at this iteration.
    pub pairing_check: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepHistory {
    pub min_sigma: f64,
    pub max_sigma: f64,
    pub final_sigma: f64,
    pub backtracks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub final_residual: f64,
    pub step_history: StepHistory,
    pub pairing_checks: usize,
    pub pairing_failures: usize,
    pub operator_evaluations: usize,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub z: MFGState,
    pub stats: SolveStats,
}

#[derive(Clone, Debug)]
pub struct SolveFailure {
    pub best: MFGState,
    pub best_residual: f64,
    pub stats: SolveStats,
}

pub fn write_trace_csv<W: std::io::Write>(trace: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "sigma", "natural_residual", "pairing_check"])?;
    for row in trace {
        w.write_record([
            row.iteration.to_string(),
            format!("{:.16e}", row.sigma),
            format!("{:.16e}", row.natural_residual),
            row.pairing_check.map(|v| format!("{v:.16e}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Clamps the density slot to `m_floor`; `u` is unchanged.
pub fn project_cone(z: &MFGState, m_floor: f64) -> MFGState {
    let mut out = z.clone();
    project_in_place(&mut out, m_floor);
    out
}

fn project_in_place(z: &mut MFGState, m_floor: f64) {
    for m in z.m_mut().values_mut() {
        // `max` also maps NaN to the floor, which keeps iterates admissible.
        *m = m.max(m_floor);
    }
}

/// `||z - P(z - step A[z])||_h / step`.
pub fn natural_residual<O: VariationalOperator + ?Sized>(op: &O, z: &MFGState, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(invalid(format!("step must be positive, got {step}")));
    }
    let az = op.apply(z)?;
    Ok(natural_residual_from(z, &az, step, op.m_floor()))
}

fn natural_residual_from(z: &MFGState, az: &OperatorOutput, step: f64, floor: f64) -> f64 {
    let vol = z.grid().cell_volume();
    let mut acc = 0.0;
    for (m, e) in z.m().values().iter().zip(az.eta_slot.values()) {
        let d = m - (m - step * e).max(floor);
        acc += d * d;
    }
    for v in az.nu_slot.values() {
        let d = step * v;
        acc += d * d;
    }
    (vol * acc).sqrt() / step
}

/// `(I - κΔ_h)^{-1}` on the torus, diagonalized by the DFT.
pub struct SobolevMetric {
    grid: TorusGrid,
    weight: f64,
    symbol: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SobolevMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SobolevMetric").field("grid", &self.grid).field("weight", &self.weight).finish()
    }
}

impl SobolevMetric {
    pub fn new(grid: TorusGrid, weight: f64) -> Self {
        let n = grid.n_per_dim();
        let nf = n as f64;
        let symbol = (0..grid.node_count())
            .map(|node| {
                let idx = grid.multi_index(node);
                let lap: f64 = (0..grid.dim())
                    .map(|k| {
                        let s = (std::f64::consts::PI * idx[k] as f64 / nf).sin();
                        4.0 * nf * nf * s * s
                    })
                    .sum();
                1.0 + weight * lap
            })
            .collect();
        let mut planner = FftPlanner::new();
        Self { grid, weight, symbol, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    fn transform(&self, buf: &mut [Complex<f64>], fft: &Arc<dyn Fft<f64>>) {
        let n = self.grid.n_per_dim();
        if self.grid.dim() == 1 {
            fft.process(buf);
            return;
        }
        for row in buf.chunks_mut(n) {
            fft.process(row);
        }
        let mut column = vec![Complex::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                column[i] = buf[i * n + j];
            }
            fft.process(&mut column);
            for i in 0..n {
                buf[i * n + j] = column[i];
            }
        }
    }

    /// Solves `(I - κΔ_h) x = r`.
    pub fn solve(&self, r: &ScalarField) -> ScalarField {
        let mut buf: Vec<Complex<f64>> = r.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        for (c, s) in buf.iter_mut().zip(&self.symbol) {
            *c /= *s;
        }
        self.transform(&mut buf, &self.inverse);
        let norm = 1.0 / self.grid.node_count() as f64;
        let values = buf.iter().map(|c| c.re * norm).collect();
        ScalarField::from_values(self.grid, values).expect("same grid")
    }

    /// `<(I - κΔ_h) v, v>_h = ||v||^2_h + κ||grad v||^2_h`.
    pub fn energy(&self, v: &ScalarField) -> f64 {
        let g = gradient(v);
        inner_product(v, v).expect("same grid") + self.weight * vector_inner_product(&g, &g).expect("same grid")
    }
}

enum Preconditioner {
    Identity,
    Sobolev(SobolevMetric),
}

impl Preconditioner {
    fn new(grid: TorusGrid, metric: Metric) -> Self {
        match metric {
            Metric::Euclidean => Preconditioner::Identity,
            Metric::Sobolev { weight } => Preconditioner::Sobolev(SobolevMetric::new(grid, weight)),
        }
    }

    /// `M^{-1} A` as a state-shaped direction.
    fn dual_to_primal(&self, a: &OperatorOutput) -> MFGState {
        match self {
            Preconditioner::Identity => a.as_state(),
            Preconditioner::Sobolev(s) => MFGState::new(a.eta_slot.clone(), s.solve(&a.nu_slot)).expect("same grid"),
        }
    }

    /// `||d||^2_M`.
    fn primal_energy(&self, d: &MFGState) -> f64 {
        match self {
            Preconditioner::Identity => d.dot(d).expect("same grid"),
            Preconditioner::Sobolev(s) => inner_product(d.m(), d.m()).expect("same grid") + s.energy(d.u()),
        }
    }
}

fn is_finite_output(a: &OperatorOutput) -> bool {
    a.eta_slot.is_finite() && a.nu_slot.is_finite()
}

/// Lipschitz safeguard factor in the backtracking test
/// `σ ||A z - A z̄||_{M^-1} <= θ ||z - z̄||_M`.
const LIPSCHITZ_THETA: f64 = 0.9;
const DOUBLING_PERIOD: usize = 20;
const MIN_SIGMA: f64 = 1e-300;

pub fn extragradient_solve<O: VariationalOperator + ?Sized>(op: &O, z0: &MFGState, cfg: &SolverConfig) -> Result<SolveOutput> {
    cfg.validate()?;
    op.grid().ensure_same(z0.grid())?;
    let floor = if cfg.m_floor > 0.0 { op.m_floor().max(cfg.m_floor) } else { op.m_floor() };
    let precond = Preconditioner::new(*op.grid(), cfg.metric);
    let mut probe_rng = rng::stream(cfg.rng_seed, rng::STREAM_SOLVER_PROBE);

    let mut z = project_cone(z0, floor);
    let mut az = op.apply(&z)?;
    let mut evaluations = 1;
    if !is_finite_output(&az) {
        return Err(MfgError::NonFinite("operator at the initial state".into()));
    }
    let mut sigma = cfg.step0;
    let mut history = StepHistory { min_sigma: sigma, max_sigma: sigma, final_sigma: sigma, backtracks: 0 };
    let mut trace = Vec::new();
    let mut residual = natural_residual_from(&z, &az, 1.0, floor);
    let mut best = (z.clone(), residual);
    let mut pairing_checks = 0;
    let mut pairing_failures = 0;
    let mut accepted = 0;

    let stats = |iterations: usize, residual: f64, history: StepHistory, trace: Vec<TraceRow>, checks: usize, failures: usize, evals: usize| SolveStats {
        iterations,
        final_residual: residual,
        step_history: history,
        pairing_checks: checks,
        pairing_failures: failures,
        operator_evaluations: evals,
        trace,
    };

    for iteration in 0..=cfg.max_iter {
        let probe = if cfg.probe_every > 0 && iteration % cfg.probe_every == 0 {
            let (value, scale) = probe_monotonicity(op, &z, &az, floor, &mut probe_rng)?;
            evaluations += 1;
            pairing_checks += 1;
            if value < -1e-9 * scale.max(1.0) {
                pairing_failures += 1;
                log::warn!("monotonicity probe failed at iteration {iteration}: pairing {value:e}");
            }
            Some(value)
        } else {
            None
        };
        trace.push(TraceRow { iteration, sigma, natural_residual: residual, pairing_check: probe });
        if residual <= cfg.tol_natural {
            history.final_sigma = sigma;
            return Ok(SolveOutput {
                z,
                stats: stats(iteration, residual, history, trace, pairing_checks, pairing_failures, evaluations),
            });
        }
        if iteration == cfg.max_iter {
            break;
        }

        let dir = precond.dual_to_primal(&az);
        let dir_bar = loop {
            let mut z_bar = z.axpy(-sigma, &dir)?;
            project_in_place(&mut z_bar, floor);
            let a_bar = op.apply(&z_bar)?;
            evaluations += 1;
            if is_finite_output(&a_bar) {
                let d = z.axpy(-1.0, &z_bar)?;
                let da = OperatorOutput {
                    eta_slot: az.eta_slot.zip_map(&a_bar.eta_slot, |a, b| a - b)?,
                    nu_slot: az.nu_slot.zip_map(&a_bar.nu_slot, |a, b| a - b)?,
                };
                let dir_bar = precond.dual_to_primal(&a_bar);
                let dda = dir.axpy(-1.0, &dir_bar)?;
                let d_energy = precond.primal_energy(&d);
                let pairing = da.pair(&d)?;
                let dual_energy = da.pair(&dda)?;
                if pairing <= d_energy / (2.0 * sigma) && sigma * sigma * dual_energy <= LIPSCHITZ_THETA * LIPSCHITZ_THETA * d_energy {
                    break dir_bar;
                }
            }
            sigma *= cfg.backtrack_ratio;
            history.backtracks += 1;
            if sigma < MIN_SIGMA {
                history.final_sigma = sigma;
                return Err(MfgError::SolverFailure(Box::new(SolveFailure {
                    best: best.0,
                    best_residual: best.1,
                    stats: stats(iteration, residual, history, trace, pairing_checks, pairing_failures, evaluations),
                })));
            }
        };

        let mut z_next = z.axpy(-sigma, &dir_bar)?;
        project_in_place(&mut z_next, floor);
        let a_next = op.apply(&z_next)?;
        evaluations += 1;
        if !is_finite_output(&a_next) {
            return Err(MfgError::NonFinite(format!("operator at iteration {iteration}")));
        }
        z = z_next;
        az = a_next;
        residual = natural_residual_from(&z, &az, 1.0, floor);
        if residual < best.1 {
            best = (z.clone(), residual);
        }
        history.min_sigma = history.min_sigma.min(sigma);
        history.max_sigma = history.max_sigma.max(sigma);
        accepted += 1;
        if accepted % DOUBLING_PERIOD == 0 {
            sigma *= 2.0;
        }
    }
    history.final_sigma = sigma;
    Err(MfgError::SolverFailure(Box::new(SolveFailure {
        best: best.0,
        best_residual: best.1,
        stats: stats(cfg.max_iter, residual, history, trace, pairing_checks, pairing_failures, evaluations),
    })))
}

/// `<A z' - A z, z' - z>_h` for a random admissible perturbation `z'` of `z`,
/// with the magnitude it is judged against.
fn probe_monotonicity<O: VariationalOperator + ?Sized, R: Rng>(op: &O, z: &MFGState, az: &OperatorOutput, floor: f64, rng: &mut R) -> Result<(f64, f64)> {
    let amplitude = 1e-3 * (1.0 + z.m().max_abs().max(z.u().max_abs()));
    let mut zp = z.clone();
    for v in zp.m_mut().values_mut() {
        *v += amplitude * rng.gen_range(-1.0..1.0);
    }
    for v in zp.u_mut().values_mut() {
        *v += amplitude * rng.gen_range(-1.0..1.0);
    }
    project_in_place(&mut zp, floor);
    let ap = op.apply(&zp)?;
    let d = zp.axpy(-1.0, z)?;
    let vol = z.grid().cell_volume();
    let mut value = 0.0;
    let mut scale = 0.0;
    for i in 0..z.grid().node_count() {
        let t1 = (ap.eta_slot.values()[i] - az.eta_slot.values()[i]) * d.m().values()[i];
        let t2 = (ap.nu_slot.values()[i] - az.nu_slot.values()[i]) * d.u().values()[i];
        value += t1 + t2;
        scale += t1.abs() + t2.abs();
    }
    Ok((vol * value, vol * scale))
}

/// Plain projected forward steps `z ← P(z - σ A z)` with a fixed step, kept as
/// a reference that fails on skew operators. Returns the iterate norms.
pub fn projected_gradient_reference<O: VariationalOperator + ?Sized>(op: &O, z0: &MFGState, sigma: f64, iterations: usize) -> Result<Vec<f64>> {
    let floor = op.m_floor();
    let mut z = project_cone(z0, floor);
    let mut norms = vec![z.norm()];
    for _ in 0..iterations {
        let a = op.apply(&z)?.as_state();
        z = z.axpy(-sigma, &a)?;
        project_in_place(&mut z, floor);
        norms.push(z.norm());
    }
    Ok(norms)
}
