//! Run configuration: strict JSON with defaults for every field.

use std::f64::consts::PI;
use std::path::Path;

use mfg_core::continuation::{ContinuationSchedule, FloorRule, TargetTolerances};
use mfg_core::solver::{Metric, SolverConfig};
use mfg_core::{Family, HamiltonianSpec, Kernel, ProblemData, ScalarField, TorusGrid};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Power,
    Congestion,
    Weak,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    Exp,
    Cosh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Sobolev,
    Euclidean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dim: 1, n: 64 }
    }
}

/// Coefficients are profile strings, see [`Profile`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HamiltonianConfig {
    pub family: FamilyName,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub h_kernel: KernelName,
    pub a: String,
    pub b: String,
    pub g: String,
}

impl Default for HamiltonianConfig {
    fn default() -> Self {
        Self {
            family: FamilyName::Power,
            alpha: 2.0,
            beta: 1.0,
            tau: 0.0,
            h_kernel: KernelName::Exp,
            a: "const:1".into(),
            b: "const:1".into(),
            g: "const:1".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    pub hj_pos: f64,
    pub hj_support: f64,
    pub transport_l1: f64,
    pub mass_gap: f64,
    pub weak: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        let t = TargetTolerances::default();
        Self { hj_pos: t.hj_pos, hj_support: t.hj_support, transport_l1: t.transport_l1, mass_gap: t.mass_gap, weak: t.weak }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub eps0: f64,
    pub ratio: f64,
    pub stages: usize,
    /// Lower bound of the density floor for congestion runs.
    pub floor_min: f64,
    pub warm_start: bool,
    pub tolerances: ToleranceConfig,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { eps0: 0.1, ratio: 0.1, stages: 4, floor_min: 1e-6, warm_start: true, tolerances: ToleranceConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub step0: f64,
    pub backtrack_ratio: f64,
    pub max_iter: usize,
    pub tol_natural: f64,
    pub metric: MetricName,
    pub metric_weight: f64,
    pub probe_every: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            step0: d.step0,
            backtrack_ratio: d.backtrack_ratio,
            max_iter: d.max_iter,
            tol_natural: d.tol_natural,
            metric: MetricName::Sobolev,
            metric_weight: 1.0,
            probe_every: d.probe_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub samples: usize,
    /// Tolerance on the most negative monotonicity left-hand side.
    pub monotonicity_tol: f64,
    pub envelope_epsilons: Vec<f64>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { samples: 10_000, monotonicity_tol: 1e-10, envelope_epsilons: vec![1.0, 0.1, 0.01] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub n_values: Vec<usize>,
    pub epsilons: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { n_values: vec![32, 64], epsilons: vec![0.1, 0.01] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfconvTableConfig {
    pub p_values: Vec<f64>,
    pub m_values: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub oracle_points: usize,
}

impl Default for InfconvTableConfig {
    fn default() -> Self {
        Self {
            p_values: (0..=16).map(|k| 0.25 * k as f64).collect(),
            m_values: vec![0.5, 1.0, 2.0],
            epsilons: vec![1.0, 0.1, 0.01],
            oracle_points: 4001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub hamiltonian: HamiltonianConfig,
    pub potential: String,
    /// Defaults to `true` for the weak family and `false` otherwise.
    pub use_envelope: Option<bool>,
    pub schedule: ScheduleConfig,
    pub solver: SolverSection,
    pub check: CheckConfig,
    pub sweep: SweepConfig,
    pub infconv_table: InfconvTableConfig,
    pub output: String,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            hamiltonian: HamiltonianConfig::default(),
            potential: "const:0".into(),
            use_envelope: None,
            schedule: ScheduleConfig::default(),
            solver: SolverSection::default(),
            check: CheckConfig::default(),
            sweep: SweepConfig::default(),
            infconv_table: InfconvTableConfig::default(),
            output: "mfg-out".into(),
            seed: 0,
        }
    }
}

/// Spatial profile of a coefficient or potential.
///
/// `const:c` is constant, `sin1:c0,c1` is `c0 + c1 sin(2π x_0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Profile {
    Const(f64),
    Sin1(f64, f64),
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self, String> {
        let (kind, args) = s.split_once(':').ok_or_else(|| format!("profile {s:?} has no ':'"))?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("profile {s:?}: {e}")))
            .collect::<Result<_, _>>()?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(format!("profile {s:?} has a non-finite value"));
        }
        match (kind.trim(), nums.as_slice()) {
            ("const", [c]) => Ok(Profile::Const(*c)),
            ("sin1", [c0, c1]) => Ok(Profile::Sin1(*c0, *c1)),
            ("const", _) => Err(format!("profile {s:?}: const takes one value")),
            ("sin1", _) => Err(format!("profile {s:?}: sin1 takes two values")),
            _ => Err(format!("profile {s:?}: unknown kind {kind:?}, expected const or sin1")),
        }
    }

    pub fn field(self, grid: TorusGrid) -> ScalarField {
        match self {
            Profile::Const(c) => ScalarField::constant(grid, c),
            Profile::Sin1(c0, c1) => ScalarField::from_fn(grid, |x| c0 + c1 * (2.0 * PI * x[0]).sin()),
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
    cfg.validate()?;
    Ok(cfg)
}

fn positive(errors: &mut Vec<String>, name: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        errors.push(format!("{name} must be positive and finite, got {v}"));
    }
}

impl RunConfig {
    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut e = Vec::new();
        if !(1..=2).contains(&self.grid.dim) {
            e.push(format!("grid.dim must be 1 or 2, got {}", self.grid.dim));
        }
        if self.grid.n < 3 {
            e.push(format!("grid.n must be at least 3, got {}", self.grid.n));
        }
        let h = &self.hamiltonian;
        if !(h.alpha > 1.0 && h.alpha.is_finite()) {
            e.push(format!("hamiltonian.alpha must exceed 1, got {}", h.alpha));
        }
        positive(&mut e, "hamiltonian.beta", h.beta);
        if h.family == FamilyName::Congestion && !(0.0..=1.0).contains(&h.tau) {
            e.push(format!("hamiltonian.tau must lie in [0, 1], got {}", h.tau));
        }
        for (name, s) in [("hamiltonian.a", &h.a), ("hamiltonian.b", &h.b), ("hamiltonian.g", &h.g), ("potential", &self.potential)] {
            if let Err(msg) = Profile::parse(s) {
                e.push(format!("{name}: {msg}"));
            }
        }
        let s = &self.schedule;
        if !(s.eps0 > 0.0 && s.eps0 <= 1.0) {
            e.push(format!("schedule.eps0 must lie in (0, 1], got {}", s.eps0));
        }
        if !(s.ratio > 0.0 && s.ratio < 1.0) {
            e.push(format!("schedule.ratio must lie in (0, 1), got {}", s.ratio));
        }
        if s.stages == 0 {
            e.push("schedule.stages must be at least 1".into());
        }
        positive(&mut e, "schedule.floor_min", s.floor_min);
        let t = &s.tolerances;
        for (name, v) in [("hj_pos", t.hj_pos), ("hj_support", t.hj_support), ("transport_l1", t.transport_l1), ("mass_gap", t.mass_gap), ("weak", t.weak)] {
            positive(&mut e, &format!("schedule.tolerances.{name}"), v);
        }
        let v = &self.solver;
        positive(&mut e, "solver.step0", v.step0);
        if !(v.backtrack_ratio > 0.0 && v.backtrack_ratio < 1.0) {
            e.push(format!("solver.backtrack_ratio must lie in (0, 1), got {}", v.backtrack_ratio));
        }
        if v.max_iter == 0 {
            e.push("solver.max_iter must be at least 1".into());
        }
        positive(&mut e, "solver.tol_natural", v.tol_natural);
        positive(&mut e, "solver.metric_weight", v.metric_weight);
        if self.check.samples == 0 {
            e.push("check.samples must be at least 1".into());
        }
        if !(self.check.monotonicity_tol >= 0.0) {
            e.push(format!("check.monotonicity_tol must be non-negative, got {}", self.check.monotonicity_tol));
        }
        for &eps in self.check.envelope_epsilons.iter().chain(&self.sweep.epsilons).chain(&self.infconv_table.epsilons) {
            if !(eps > 0.0 && eps <= 1.0) {
                e.push(format!("envelope epsilons must lie in (0, 1], got {eps}"));
            }
        }
        if self.sweep.n_values.iter().any(|&n| n < 3) {
            e.push("sweep.n_values entries must be at least 3".into());
        }
        if self.infconv_table.oracle_points < 3 {
            e.push("infconv_table.oracle_points must be at least 3".into());
        }
        if self.infconv_table.m_values.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            e.push("infconv_table.m_values must be non-negative and finite".into());
        }
        if self.infconv_table.p_values.iter().any(|p| !p.is_finite()) {
            e.push("infconv_table.p_values must be finite".into());
        }
        if self.output.trim().is_empty() {
            e.push("output must name a directory".into());
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(e))
        }
    }

    pub fn grid(&self) -> Result<TorusGrid, CliError> {
        Ok(TorusGrid::new(self.grid.dim, self.grid.n)?)
    }

    pub fn family(&self) -> Family {
        let h = &self.hamiltonian;
        match h.family {
            FamilyName::Power => Family::Power,
            FamilyName::Congestion => Family::Congestion { tau: h.tau },
            FamilyName::Weak => Family::Weak {
                kernel: match h.h_kernel {
                    KernelName::Exp => Kernel::ExpSquare,
                    KernelName::Cosh => Kernel::CoshMinusOne,
                },
            },
        }
    }

    /// `verified = false` skips the coefficient sign checks so that the
    /// certificate battery can report them instead.
    pub fn hamiltonian_on(&self, grid: TorusGrid, verified: bool) -> Result<HamiltonianSpec, CliError> {
        let h = &self.hamiltonian;
        let field = |s: &str| Profile::parse(s).map(|p| p.field(grid)).map_err(|m| CliError::Config(vec![m]));
        let (a, b, g) = (field(&h.a)?, field(&h.b)?, field(&h.g)?);
        let g = matches!(h.family, FamilyName::Weak).then_some(g);
        let spec = if verified {
            HamiltonianSpec::new(self.family(), h.alpha, h.beta, a, b, g)?
        } else {
            HamiltonianSpec::new_unverified(self.family(), h.alpha, h.beta, a, b, g)?
        };
        Ok(spec)
    }

    pub fn use_envelope(&self) -> bool {
        self.use_envelope.unwrap_or(self.hamiltonian.family == FamilyName::Weak)
    }

    pub fn floor_rule(&self) -> FloorRule {
        match self.hamiltonian.family {
            FamilyName::Congestion => FloorRule::TrackEpsilon { min: self.schedule.floor_min },
            _ => FloorRule::Zero,
        }
    }

    /// Problem data at the first stage of the schedule on a grid with `n` nodes per axis.
    pub fn problem_on(&self, n: usize, epsilon: f64) -> Result<ProblemData, CliError> {
        let grid = TorusGrid::new(self.grid.dim, n)?;
        let spec = self.hamiltonian_on(grid, true)?;
        let potential = Profile::parse(&self.potential).map_err(|m| CliError::Config(vec![m]))?.field(grid);
        Ok(ProblemData::new(spec, potential, epsilon, self.use_envelope(), self.floor_rule().delta(epsilon))?)
    }

    pub fn problem(&self) -> Result<ProblemData, CliError> {
        self.problem_on(self.grid.n, self.schedule.eps0)
    }

    pub fn schedule(&self) -> Result<ContinuationSchedule, CliError> {
        let s = &self.schedule;
        let mut schedule = ContinuationSchedule::new(s.eps0, s.ratio, s.stages, self.floor_rule())?;
        let t = &s.tolerances;
        schedule.target_tols = TargetTolerances { hj_pos: t.hj_pos, hj_support: t.hj_support, transport_l1: t.transport_l1, mass_gap: t.mass_gap, weak: t.weak };
        schedule.warm_start = s.warm_start;
        Ok(schedule)
    }

    pub fn solver(&self) -> SolverConfig {
        let v = &self.solver;
        SolverConfig {
            step0: v.step0,
            backtrack_ratio: v.backtrack_ratio,
            max_iter: v.max_iter,
            tol_natural: v.tol_natural,
            rng_seed: self.seed,
            metric: match v.metric {
                MetricName::Sobolev => Metric::Sobolev { weight: v.metric_weight },
                MetricName::Euclidean => Metric::Euclidean,
            },
            probe_every: v.probe_every,
            ..SolverConfig::default()
        }
    }
}
