//! Drives `ε → 0` (and the congestion floor `δ(ε) → 0`) through a geometric
//! schedule, records the a priori quantity
//! `M_k = ||m||^β̄_β̄ + ||u||^γ̄_{W^{1,γ̄}}` at each stage, and classifies the
//! final iterate.

use serde::Serialize;

use crate::error::{invalid, MfgError, Result};
use crate::grid::{lp_norm_pow, sobolev_norm_pow, ScalarField, TorusGrid};
use crate::hamiltonian::Family;
use crate::operator::{eps_mass_term, hj_residual, mass_defect, transport_residual, weak_solution_certificate, MFGState, ProblemData, WeakCertificate};
use crate::solver::{extragradient_solve, SolveStats, SolverConfig, TraceRow};

/// Density floor as a function of the stage `ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum FloorRule {
    Zero,
    /// `δ(ε) = max(min, ε)`.
    TrackEpsilon { min: f64 },
    Constant(f64),
}

impl FloorRule {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Congestion { .. } => FloorRule::TrackEpsilon { min: 1e-6 },
            _ => FloorRule::Zero,
        }
    }

    pub fn delta(&self, epsilon: f64) -> f64 {
        match *self {
            FloorRule::Zero => 0.0,
            FloorRule::TrackEpsilon { min } => min.max(epsilon),
            FloorRule::Constant(d) => d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TargetTolerances {
    pub hj_pos: f64,
    pub hj_support: f64,
    pub transport_l1: f64,
    pub mass_gap: f64,
    /// Allowed negativity of the weak certificate.
    pub weak: f64,
}

impl Default for TargetTolerances {
    fn default() -> Self {
        Self { hj_pos: 1e-4, hj_support: 1e-4, transport_l1: 1e-4, mass_gap: 1e-4, weak: 1e-5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinuationSchedule {
    pub eps0: f64,
    pub ratio: f64,
    pub stages: usize,
    pub floor_rule: FloorRule,
    pub target_tols: TargetTolerances,
    /// Start each stage from the previous stage's iterate.
    pub warm_start: bool,
}

impl ContinuationSchedule {
    pub fn new(eps0: f64, ratio: f64, stages: usize, floor_rule: FloorRule) -> Result<Self> {
        let s = Self { eps0, ratio, stages, floor_rule, target_tols: TargetTolerances::default(), warm_start: true };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0 && self.eps0 <= 1.0) {
            return Err(invalid(format!("eps0 must lie in (0, 1], got {}", self.eps0)));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(invalid(format!("ratio must lie in (0, 1), got {}", self.ratio)));
        }
        if self.stages == 0 {
            return Err(invalid("at least one stage is required"));
        }
        let t = &self.target_tols;
        if ![t.hj_pos, t.hj_support, t.transport_l1, t.mass_gap, t.weak].iter().all(|v| *v > 0.0) {
            return Err(invalid("all target tolerances must be positive"));
        }
        match self.floor_rule {
            FloorRule::TrackEpsilon { min } if !(min > 0.0) => Err(invalid("the floor rule minimum must be positive")),
            FloorRule::Constant(d) if !(d >= 0.0) || !d.is_finite() => Err(invalid("the constant floor must be finite and non-negative")),
            _ => Ok(()),
        }
    }

    pub fn epsilons(&self) -> Vec<f64> {
        (0..self.stages).map(|k| self.eps0 * self.ratio.powi(k as i32)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidualSummary {
    pub hj_max_pos: f64,
    pub hj_max_on_support: f64,
    pub transport_l1: f64,
    pub mass_gap: f64,
}

impl ResidualSummary {
    pub fn of(data: &ProblemData, z: &MFGState) -> Result<Self> {
        let hj = hj_residual(data, z)?;
        let tr = transport_residual(data, z)?;
        Ok(Self { hj_max_pos: hj.max_pos, hj_max_on_support: hj.max_on_support, transport_l1: tr.l1, mass_gap: tr.mass_gap })
    }

    pub fn within(&self, tols: &TargetTolerances) -> bool {
        self.hj_max_pos <= tols.hj_pos
            && self.hj_max_on_support <= tols.hj_support
            && self.transport_l1 <= tols.transport_l1
            && self.mass_gap.abs() <= tols.mass_gap
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRecord {
    pub stage: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub iterations: usize,
    pub natural_residual: f64,
    /// `||m||^β̄_β̄ + ||u||^γ̄_{W^{1,γ̄}}`.
    pub apriori_m: f64,
    /// Residuals of the regularized problem solved at this stage.
    pub regularized: ResidualSummary,
    /// Residuals of the unregularized problem (`ε = 0`, base Hamiltonian).
    pub original: ResidualSummary,
    /// `int (m - 1)`.
    pub mass_defect: f64,
    /// `ε int |u|^{γ̄-2}u`.
    pub eps_mass_term: f64,
    pub mean_m: f64,
    pub min_m: f64,
    pub floored_fraction: f64,
    /// `||z_k - z_{k-1}||_h`, absent at the first stage.
    pub drift: Option<f64>,
    pub solver: SolveStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AprioriTrack {
    pub stages: Vec<StageRecord>,
}

impl AprioriTrack {
    pub fn apriori_values(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.apriori_m).collect()
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }

    /// Solver traces of all stages, concatenated in order.
    pub fn traces(&self) -> impl Iterator<Item = (usize, &TraceRow)> {
        self.stages.iter().flat_map(|s| s.solver.trace.iter().map(move |r| (s.stage, r)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "strong-candidate")]
    StrongCandidate,
    #[serde(rename = "weak-candidate")]
    WeakCandidate,
    #[serde(rename = "unconverged")]
    Unconverged,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::StrongCandidate => "strong-candidate",
            Verdict::WeakCandidate => "weak-candidate",
            Verdict::Unconverged => "unconverged",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct ContinuationOutput {
    pub final_state: MFGState,
    pub track: AprioriTrack,
    pub verdict: Verdict,
    pub weak_certificate: WeakCertificate,
}

#[derive(Clone, Debug)]
pub struct ContinuationFailure {
    /// One-based index of the failing stage.
    pub stage: usize,
    pub stages: usize,
    pub reason: String,
    pub track: AprioriTrack,
    pub best: Option<MFGState>,
}

/// The sixteen test pairs `(1 + 0.5 sin(2πk s), 0.3 cos(2πj s))`,
/// `s = x_1 + ... + x_d`, `k, j ∈ {1,..,4}`.
pub fn standard_test_battery(grid: TorusGrid) -> Vec<MFGState> {
    let tau = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(16);
    for k in 1..=4 {
        for j in 1..=4 {
            let mu = ScalarField::from_fn(grid, |x| 1.0 + 0.5 * (tau * k as f64 * (x[0] + x[1])).sin());
            let ups = ScalarField::from_fn(grid, |x| 0.3 * (tau * j as f64 * (x[0] + x[1])).cos());
            out.push(MFGState::new(mu, ups).expect("same grid"));
        }
    }
    out
}

pub fn apriori_quantity(data: &ProblemData, z: &MFGState) -> Result<f64> {
    let ex = data.exponents();
    Ok(lp_norm_pow(z.m(), ex.beta_bar) + sobolev_norm_pow(z.u(), ex.gamma_bar)?)
}

/// Runs the schedule from `z0` (default `m ≡ 1, u ≡ 0`).
pub fn run_continuation(template: &ProblemData, schedule: &ContinuationSchedule, cfg: &SolverConfig, z0: Option<&MFGState>) -> Result<ContinuationOutput> {
    schedule.validate()?;
    cfg.validate()?;
    let grid = *template.grid();
    let initial = match z0 {
        Some(z) => z.clone(),
        None => MFGState::constant(grid, 1.0, 0.0),
    };
    let mut track = AprioriTrack::default();
    let mut current = initial.clone();
    let mut previous: Option<MFGState> = None;
    let mut last_data = None;
    let epsilons = schedule.epsilons();
    let abort = |stage: usize, reason: String, track: &AprioriTrack, best: Option<MFGState>| {
        MfgError::ContinuationAborted(Box::new(ContinuationFailure {
            stage,
            stages: schedule.stages,
            reason,
            track: track.clone(),
            best,
        }))
    };

    for (k, &eps) in epsilons.iter().enumerate() {
        let delta = schedule.floor_rule.delta(eps);
        let data = template.clone().with_epsilon(eps)?.with_floor(delta)?;
        let start = if schedule.warm_start { current.clone() } else { initial.clone() };
        let solved = match extragradient_solve(&data, &start, cfg) {
            Ok(s) => s,
            Err(MfgError::SolverFailure(f)) => {
                let reason = format!("solver stopped at residual {:e} after {} iterations", f.best_residual, f.stats.iterations);
                return Err(abort(k + 1, reason, &track, Some(f.best)));
            }
            Err(e) => return Err(abort(k + 1, e.to_string(), &track, None)),
        };
        let z = solved.z;
        let original_data = template.clone().with_epsilon(0.0)?.with_floor(delta)?;
        let m_vals = z.m().values();
        let floored = m_vals.iter().filter(|&&m| m <= delta).count();
        let record = StageRecord {
            stage: k + 1,
            epsilon: eps,
            delta,
            iterations: solved.stats.iterations,
            natural_residual: solved.stats.final_residual,
            apriori_m: apriori_quantity(&data, &z)?,
            regularized: ResidualSummary::of(&data, &z)?,
            original: ResidualSummary::of(&original_data, &z)?,
            mass_defect: mass_defect(&z),
            eps_mass_term: eps_mass_term(&data, &z),
            mean_m: m_vals.iter().sum::<f64>() / m_vals.len() as f64,
            min_m: z.m().min(),
            floored_fraction: floored as f64 / m_vals.len() as f64,
            drift: previous.as_ref().map(|p| z.axpy(-1.0, p).map(|d| d.norm())).transpose()?,
            solver: solved.stats,
        };
        log::info!(
            "stage {}/{}: eps {:.1e}, {} iterations, residual {:.2e}, M {:.6}",
            k + 1,
            schedule.stages,
            eps,
            record.iterations,
            record.natural_residual,
            record.apriori_m
        );
        track.stages.push(record);
        previous = Some(z.clone());
        current = z;
        last_data = Some(data);
    }

    let data = last_data.expect("at least one stage");
    let last = track.stages.last().expect("at least one stage");
    let weak_certificate = weak_solution_certificate(&data, &current, &standard_test_battery(grid))?;
    let verdict = if last.original.within(&schedule.target_tols) {
        Verdict::StrongCandidate
    } else if weak_certificate.min_value >= -schedule.target_tols.weak {
        Verdict::WeakCandidate
    } else {
        Verdict::Unconverged
    };
    Ok(ContinuationOutput { final_state: current, track, verdict, weak_certificate })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AprioriVerdict {
    pub max_over_min_ratio: f64,
    pub alarm: bool,
}

/// Ratio of the largest to the smallest `M_k`; a single stage is compared
/// with itself.
pub fn apriori_monitor(values: &[f64], threshold: f64) -> Result<AprioriVerdict> {
    if values.is_empty() {
        return Err(invalid("the a priori monitor needs at least one stage"));
    }
    if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(MfgError::NonFinite("a priori quantity must be finite and positive".into()));
    }
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    let ratio = max / min;
    Ok(AprioriVerdict { max_over_min_ratio: ratio, alarm: ratio > threshold })
}

pub const DEFAULT_APRIORI_THRESHOLD: f64 = 10.0;
