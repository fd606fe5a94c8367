//! The three prototype Hamiltonian families and their certificates.
//!
//! ```text
//! Power:       H = a(x)|p|^α - b(x) m^β
//! Congestion:  H = a(x)|p|^{α(1+τ/β)} / m^τ - b(x) m^β
//! Weak:        H = g(x) h(p) + a(x)|p|^α - b(x) m^β
//! ```
//!
//! All three are radial in `p`: `H(x,p,m) = φ(x,|p|,m)` with `φ` convex and
//! non-decreasing in `|p|`, which the envelope code relies on.
//!
//! At `m = 0` the Hamiltonian is extended by its monotone limit (the supremum
//! over `m > 0`), which is `+∞` for congestion with `τ > 0` and `p ≠ 0`, and
//! the flux `m D_pH` by its continuous limit.
//!
//! Why the weak family is monotone: for any `m`-independent convex `h`, the
//! kinetic part of the monotonicity pairing regroups as
//! `m1 [h(p2) - h(p1) - Dh(p1)(p2-p1)] + m2 [h(p1) - h(p2) - Dh(p2)(p1-p2)]`,
//! a sum of two Bregman divergences weighted by non-negative densities, and the
//! `-b m^β` part adds `b (m1^β - m2^β)(m1 - m2) >= 0`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MfgError, Result};
use crate::grid::{dot, norm, scale, sub, ScalarField, TorusGrid, Vect, MAX_DIM};
use crate::rng;

/// Convex, `C^1`, non-negative kernels for the weak-growth family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `h(p) = exp(|p|^2) - 1`
    ExpSquare,
    /// `h(p) = cosh(|p|) - 1`
    CoshMinusOne,
}

impl Kernel {
    #[inline]
    pub fn value(self, r: f64) -> f64 {
        match self {
            Kernel::ExpSquare => (r * r).exp_m1(),
            Kernel::CoshMinusOne => {
                let s = (0.5 * r).sinh();
                2.0 * s * s
            }
        }
    }

    /// Radial derivative `h'(r)`.
    #[inline]
    pub fn slope(self, r: f64) -> f64 {
        match self {
            Kernel::ExpSquare => 2.0 * r * (r * r).exp(),
            Kernel::CoshMinusOne => r.sinh(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::ExpSquare => "exp",
            Kernel::CoshMinusOne => "cosh",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Family {
    Power,
    Congestion { tau: f64 },
    Weak { kernel: Kernel },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Power => "power",
            Family::Congestion { .. } => "congestion",
            Family::Weak { .. } => "weak",
        }
    }
}

/// `β̄ = β + 1`, `γ̄ = α(β+1)/β` and their conjugates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    pub beta_bar: f64,
    pub gamma_bar: f64,
    pub beta_bar_conj: f64,
    pub gamma_bar_conj: f64,
}

impl ExponentSet {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(invalid(format!("alpha must satisfy alpha > 1, got {alpha}")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(invalid(format!("beta must satisfy beta > 0, got {beta}")));
        }
        let beta_bar = beta + 1.0;
        let gamma_bar = alpha * (beta + 1.0) / beta;
        Ok(Self {
            beta_bar,
            gamma_bar,
            beta_bar_conj: conjugate(beta_bar),
            gamma_bar_conj: conjugate(gamma_bar),
        })
    }

    /// `|1/γ̄' - (1/β̄ + (α-1)/γ̄)|`, zero up to rounding.
    pub fn holder_defect(&self, alpha: f64) -> f64 {
        (1.0 / self.gamma_bar_conj - (1.0 / self.beta_bar + (alpha - 1.0) / self.gamma_bar)).abs()
    }

    /// Congestion variant `|1/γ̄' - ((1-τ)/β̄ + (α(1+τ/β)-1)/γ̄)|`.
    pub fn congestion_holder_defect(&self, alpha: f64, beta: f64, tau: f64) -> f64 {
        let growth = alpha * (1.0 + tau / beta);
        (1.0 / self.gamma_bar_conj - ((1.0 - tau) / self.beta_bar + (growth - 1.0) / self.gamma_bar)).abs()
    }
}

pub fn conjugate(q: f64) -> f64 {
    q / (q - 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    family: Family,
    alpha: f64,
    beta: f64,
    a: ScalarField,
    b: ScalarField,
    g: ScalarField,
}

impl HamiltonianSpec {
    /// Builds a spec and checks every structural assumption, including
    /// strictly positive `a` and `b` and non-negative `g`.
    pub fn new(family: Family, alpha: f64, beta: f64, a: ScalarField, b: ScalarField, g: Option<ScalarField>) -> Result<Self> {
        let spec = Self::new_unverified(family, alpha, beta, a, b, g)?;
        if !(spec.a.min() > 0.0) {
            return Err(invalid(format!("coefficient a must be strictly positive, min is {}", spec.a.min())));
        }
        if !(spec.b.min() > 0.0) {
            return Err(invalid(format!("coefficient b must be strictly positive, min is {}", spec.b.min())));
        }
        if matches!(family, Family::Weak { .. }) && spec.g.min() < 0.0 {
            return Err(invalid(format!("coefficient g must be non-negative, min is {}", spec.g.min())));
        }
        Ok(spec)
    }

    /// Checks exponents, grids and finiteness only. Coefficient signs are
    /// left alone so that broken models can be fed to the certificate
    /// battery and caught there.
    pub fn new_unverified(
        family: Family,
        alpha: f64,
        beta: f64,
        a: ScalarField,
        b: ScalarField,
        g: Option<ScalarField>,
    ) -> Result<Self> {
        ExponentSet::new(alpha, beta)?;
        if let Family::Congestion { tau } = family {
            if !(0.0..=1.0).contains(&tau) {
                return Err(invalid(format!("tau must lie in [0, 1], got {tau}")));
            }
        }
        let grid = *a.grid();
        grid.ensure_same(b.grid())?;
        let g = match (family, g) {
            (Family::Weak { .. }, Some(g)) => g,
            (Family::Weak { .. }, None) => ScalarField::constant(grid, 1.0),
            (_, _) => ScalarField::zeros(grid),
        };
        grid.ensure_same(g.grid())?;
        for (name, f) in [("a", &a), ("b", &b), ("g", &g)] {
            if !f.is_finite() {
                return Err(MfgError::NonFinite(format!("coefficient {name}")));
            }
        }
        Ok(Self { family, alpha, beta, a, b, g })
    }

    pub fn power(alpha: f64, beta: f64, a: ScalarField, b: ScalarField) -> Result<Self> {
        Self::new(Family::Power, alpha, beta, a, b, None)
    }

    pub fn congestion(alpha: f64, beta: f64, tau: f64, a: ScalarField, b: ScalarField) -> Result<Self> {
        Self::new(Family::Congestion { tau }, alpha, beta, a, b, None)
    }

    pub fn weak(alpha: f64, beta: f64, kernel: Kernel, g: ScalarField, a: ScalarField, b: ScalarField) -> Result<Self> {
        Self::new(Family::Weak { kernel }, alpha, beta, a, b, Some(g))
    }

    pub fn grid(&self) -> &TorusGrid {
        self.a.grid()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn tau(&self) -> f64 {
        match self.family {
            Family::Congestion { tau } => tau,
            _ => 0.0,
        }
    }

    pub fn a(&self) -> &ScalarField {
        &self.a
    }

    pub fn b(&self) -> &ScalarField {
        &self.b
    }

    pub fn g(&self) -> &ScalarField {
        &self.g
    }

    pub fn exponents(&self) -> ExponentSet {
        ExponentSet::new(self.alpha, self.beta).expect("validated at construction")
    }

    /// Growth exponent of the kinetic term in `|p|`: `α`, or `α(1+τ/β)` for
    /// congestion.
    pub fn kinetic_exponent(&self) -> f64 {
        match self.family {
            Family::Congestion { tau } => self.alpha * (1.0 + tau / self.beta),
            _ => self.alpha,
        }
    }

    pub fn requires_positive_density(&self) -> bool {
        matches!(self.family, Family::Congestion { tau } if tau > 0.0)
    }

    /// Radial profile `(φ(r), φ'(r))` at a density where `H` is finite: any
    /// `m > 0`, or `m = 0` for the power and weak families.
    #[inline]
    pub(crate) fn profile(&self, node: usize, r: f64, m: f64) -> (f64, f64) {
        let a = self.a.values()[node];
        let b = self.b.values()[node];
        let potential = b * m.powf(self.beta);
        match self.family {
            Family::Power => {
                let r_am1 = r.powf(self.alpha - 1.0);
                (a * r_am1 * r - potential, a * self.alpha * r_am1)
            }
            Family::Weak { kernel } => {
                let g = self.g.values()[node];
                let r_am1 = r.powf(self.alpha - 1.0);
                (
                    g * kernel.value(r) + a * r_am1 * r - potential,
                    g * kernel.slope(r) + a * self.alpha * r_am1,
                )
            }
            Family::Congestion { tau } => {
                let growth = self.kinetic_exponent();
                let r_gm1 = r.powf(growth - 1.0);
                let inv_mt = m.powf(-tau);
                (a * r_gm1 * r * inv_mt - potential, a * growth * r_gm1 * inv_mt)
            }
        }
    }

    fn check_inputs(&self, node: usize, p: &Vect, m: f64) -> Result<()> {
        if node >= self.grid().node_count() {
            return Err(invalid(format!("node {node} out of range")));
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(MfgError::NonFinite(format!("momentum {p:?}")));
        }
        if !m.is_finite() || m < 0.0 {
            return Err(invalid(format!("density must be finite and non-negative, got {m}")));
        }
        Ok(())
    }

    /// `H(x,p,m)` for `m >= 0`, with the `m = 0` limit (possibly `+∞`).
    pub fn eval_h(&self, node: usize, p: &Vect, m: f64) -> Result<f64> {
        self.check_inputs(node, p, m)?;
        Ok(self.h_unchecked(node, p, m))
    }

    #[inline]
    pub(crate) fn h_unchecked(&self, node: usize, p: &Vect, m: f64) -> f64 {
        let r = norm(p);
        if m == 0.0 {
            if let Family::Congestion { tau } = self.family {
                if tau > 0.0 {
                    return if r > 0.0 { f64::INFINITY } else { 0.0 };
                }
            }
        }
        self.profile(node, r, m).0
    }

    /// `D_pH(x,p,m)` for `m > 0`. At `p = 0` this is the zero subgradient.
    pub fn eval_dp_h(&self, node: usize, p: &Vect, m: f64) -> Result<Vect> {
        self.check_inputs(node, p, m)?;
        if m <= 0.0 {
            return Err(invalid("D_pH is only defined for m > 0; use eval_m_dp_h at m = 0"));
        }
        Ok(self.dp_h_unchecked(node, p, m))
    }

    #[inline]
    pub(crate) fn dp_h_unchecked(&self, node: usize, p: &Vect, m: f64) -> Vect {
        let r = norm(p);
        if r == 0.0 {
            return [0.0; MAX_DIM];
        }
        let slope = self.profile(node, r, m).1;
        scale(p, slope / r)
    }

    /// The flux `m D_pH(x,p,m)`, continuously extended to `m = 0`.
    pub fn eval_m_dp_h(&self, node: usize, p: &Vect, m: f64) -> Result<Vect> {
        self.check_inputs(node, p, m)?;
        Ok(self.m_dp_h_unchecked(node, p, m))
    }

    #[inline]
    pub(crate) fn m_dp_h_unchecked(&self, node: usize, p: &Vect, m: f64) -> Vect {
        if m > 0.0 {
            return scale(&self.dp_h_unchecked(node, p, m), m);
        }
        match self.family {
            Family::Congestion { tau: 1.0 } => {
                let r = norm(p);
                if r == 0.0 {
                    return [0.0; MAX_DIM];
                }
                let growth = self.kinetic_exponent();
                let a = self.a.values()[node];
                scale(p, a * growth * r.powf(growth - 2.0))
            }
            _ => [0.0; MAX_DIM],
        }
    }

    fn extents(f: &ScalarField) -> (f64, f64) {
        (f.min(), f.max())
    }
}

/// Pointwise access to a Hamiltonian and its extended flux. Implemented by the
/// base families and by their infimal-convolution envelopes.
pub trait LocalHamiltonian {
    fn grid(&self) -> &TorusGrid;

    /// `(H(x,p,m), m D_pH(x,p,m))` with the `m = 0` extensions.
    fn value_and_flux(&self, node: usize, p: &Vect, m: f64) -> Result<(f64, Vect)>;

    fn requires_positive_density(&self) -> bool {
        false
    }
}

impl LocalHamiltonian for HamiltonianSpec {
    fn grid(&self) -> &TorusGrid {
        HamiltonianSpec::grid(self)
    }

    #[inline]
    fn value_and_flux(&self, node: usize, p: &Vect, m: f64) -> Result<(f64, Vect)> {
        Ok((self.h_unchecked(node, p, m), self.m_dp_h_unchecked(node, p, m)))
    }

    fn requires_positive_density(&self) -> bool {
        HamiltonianSpec::requires_positive_density(self)
    }
}

/// Left-hand side of the Lasry–Lions monotonicity condition
/// `(-H1 + H2)(m1 - m2) + (m1 D_pH1 - m2 D_pH2)·(p1 - p2)`.
pub fn hmon_lhs<L: LocalHamiltonian + ?Sized>(ham: &L, node: usize, p1: &Vect, m1: f64, p2: &Vect, m2: f64) -> Result<f64> {
    let (h1, j1) = ham.value_and_flux(node, p1, m1)?;
    let (h2, j2) = ham.value_and_flux(node, p2, m2)?;
    Ok((h2 - h1) * (m1 - m2) + dot(&sub(&j1, &j2), &sub(p1, p2)))
}

/// Sampling region for the certificate batteries: uniform node, uniform
/// `p ∈ [-p_max, p_max]^d`, log-uniform `m ∈ [m_min, m_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleBox {
    pub m_min: f64,
    pub m_max: f64,
    pub p_max: f64,
}

/// Smallest density ever sampled, even when the floor is zero.
pub const TINY_DENSITY: f64 = 1e-8;

impl SampleBox {
    pub fn with_floor(m_floor: f64) -> Self {
        Self { m_min: m_floor.max(TINY_DENSITY), m_max: 10.0, p_max: 10.0 }
    }

    pub(crate) fn draw<R: Rng>(&self, grid: &TorusGrid, rng: &mut R) -> (usize, Vect, f64) {
        let node = rng.gen_range(0..grid.node_count());
        let mut p = [0.0; MAX_DIM];
        for slot in p.iter_mut().take(grid.dim()) {
            *slot = rng.gen_range(-self.p_max..=self.p_max);
        }
        let (lo, hi) = (self.m_min.ln(), self.m_max.ln());
        let m = if hi > lo { rng.gen_range(lo..hi).exp() } else { self.m_min };
        (node, p, m)
    }
}

impl Default for SampleBox {
    fn default() -> Self {
        Self::with_floor(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonotonicityWitness {
    pub node: usize,
    pub p1: Vect,
    pub m1: f64,
    pub p2: Vect,
    pub m2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub min_lhs: f64,
    pub witness: MonotonicityWitness,
    pub samples: usize,
}

/// Samples the monotonicity condition and reports its smallest value. A
/// `min_lhs` below `-1e-10` means the model is not monotone.
pub fn check_monotonicity<L: LocalHamiltonian + ?Sized>(ham: &L, sample_count: usize, m_floor: f64, rng_seed: u64) -> Result<MonotonicityReport> {
    if ham.requires_positive_density() && !(m_floor > 0.0) {
        return Err(invalid("congestion models need a strictly positive density floor for sampling"));
    }
    check_monotonicity_in(ham, sample_count, SampleBox::with_floor(m_floor), rng_seed)
}

pub fn check_monotonicity_in<L: LocalHamiltonian + ?Sized>(ham: &L, sample_count: usize, region: SampleBox, rng_seed: u64) -> Result<MonotonicityReport> {
    if sample_count == 0 {
        return Err(invalid("sample_count must be at least 1"));
    }
    let grid = *ham.grid();
    let mut rng = rng::stream(rng_seed, rng::STREAM_MONOTONICITY);
    let mut best: Option<MonotonicityReport> = None;
    for _ in 0..sample_count {
        let (node, p1, m1) = region.draw(&grid, &mut rng);
        let (_, p2, m2) = region.draw(&grid, &mut rng);
        let lhs = hmon_lhs(ham, node, &p1, m1, &p2, m2)?;
        if best.is_none_or(|b| lhs < b.min_lhs) {
            best = Some(MonotonicityReport {
                min_lhs: lhs,
                witness: MonotonicityWitness { node, p1, m1, p2, m2 },
                samples: sample_count,
            });
        }
    }
    Ok(best.expect("at least one sample"))
}

/// The growth and Lagrangian inequalities that can be certified by sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Inequality {
    /// `H(x,0,m) <= -m^β/C + C`
    #[serde(rename = "assH.upper")]
    AssUpper,
    /// Upper bound on `|D_pH|` (power or congestion form).
    #[serde(rename = "assH.DpH.upper")]
    DpHUpper,
    /// Coercive lower bound on `H` (power or congestion form).
    #[serde(rename = "assH.lower")]
    Lower,
    /// `D_pH·p - H >= m^β/C - C`
    #[serde(rename = "DpHdotp-minus-H")]
    Lagrangian,
    /// `H <= C(|p|^α + 1) - m^β/C`
    #[serde(rename = "boundsH")]
    BoundsH,
    /// `H >= -C(m^β+1)` and `D_pH·p - H >= (|p|^α + m^β)/C - C`
    #[serde(rename = "alternative2")]
    Alternative2,
    /// `H <= C(1/m + 1/m^τ)(|p|^{α(1+τ/β)} + 1) - m^β/C`
    #[serde(rename = "boundsH+")]
    BoundsHPlus,
    /// Pointwise integrability of the flux:
    /// `|m D_pH|^{γ̄'} <= C(m^β̄ + |p|^γ̄ + 1)`.
    #[serde(rename = "boundsmDpH")]
    BoundsMDpH,
}

impl Inequality {
    pub const ALL: [Inequality; 8] = [
        Inequality::AssUpper,
        Inequality::DpHUpper,
        Inequality::Lower,
        Inequality::Lagrangian,
        Inequality::BoundsH,
        Inequality::Alternative2,
        Inequality::BoundsHPlus,
        Inequality::BoundsMDpH,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Inequality::AssUpper => "assH.upper",
            Inequality::DpHUpper => "assH.DpH.upper",
            Inequality::Lower => "assH.lower",
            Inequality::Lagrangian => "DpHdotp-minus-H",
            Inequality::BoundsH => "boundsH",
            Inequality::Alternative2 => "alternative2",
            Inequality::BoundsHPlus => "boundsH+",
            Inequality::BoundsMDpH => "boundsmDpH",
        }
    }

    pub fn applies_to(self, family: Family) -> bool {
        use Inequality::*;
        match family {
            Family::Power => !matches!(self, BoundsHPlus),
            Family::Congestion { .. } => matches!(self, AssUpper | DpHUpper | Lower | Lagrangian | BoundsHPlus | BoundsMDpH),
            Family::Weak { .. } => matches!(self, AssUpper | Lower | Lagrangian),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthCertificate {
    pub constant: f64,
    pub inequality: Inequality,
}

impl GrowthCertificate {
    pub fn new(constant: f64, inequality: Inequality) -> Result<Self> {
        if !(constant >= 1.0) || !constant.is_finite() {
            return Err(invalid(format!("certificate constants must be finite and >= 1, got {constant}")));
        }
        Ok(Self { constant, inequality })
    }

    /// The constant this crate certifies for `inequality`, computed from the
    /// coefficient ranges. Larger constants remain valid.
    pub fn documented(spec: &HamiltonianSpec, inequality: Inequality) -> Result<Self> {
        ensure_applicable(spec, inequality)?;
        let (a_min, a_max) = HamiltonianSpec::extents(&spec.a);
        let (b_min, b_max) = HamiltonianSpec::extents(&spec.b);
        let alpha = spec.alpha;
        let growth = spec.kinetic_exponent();
        let gbc = spec.exponents().gamma_bar_conj;
        use Inequality::*;
        let c: f64 = match (inequality, spec.family) {
            (AssUpper, _) | (Lagrangian, _) => 1.0 / b_min,
            (Lower, _) => (1.0 / a_min).max(b_max),
            (DpHUpper, _) => growth * a_max,
            (BoundsH, _) => a_max.max(1.0 / b_min),
            (Alternative2, _) => b_max.max(1.0 / (a_min * (alpha - 1.0))).max(1.0 / b_min),
            (BoundsHPlus, _) => a_max.max(1.0 / b_min),
            (BoundsMDpH, _) => (growth * a_max).powf(gbc),
        };
        // Non-positive coefficients give a meaningless constant; fall back to
        // 1 and let the sampler expose the violation.
        let c = if c.is_finite() && c > 0.0 { c.max(1.0) } else { 1.0 };
        Self::new(c, inequality)
    }
}

fn ensure_applicable(spec: &HamiltonianSpec, inequality: Inequality) -> Result<()> {
    if !inequality.applies_to(spec.family) {
        return Err(MfgError::NotApplicable { inequality: inequality.id(), family: spec.family.name() });
    }
    Ok(())
}

/// Slack of a certified inequality at one point; non-negative means it holds.
pub fn growth_slack(spec: &HamiltonianSpec, cert: &GrowthCertificate, node: usize, p: &Vect, m: f64) -> Result<f64> {
    ensure_applicable(spec, cert.inequality)?;
    if !(m > 0.0) {
        return Err(invalid("growth inequalities are sampled at m > 0"));
    }
    let c = cert.constant;
    let beta = spec.beta;
    let alpha = spec.alpha;
    let r = norm(p);
    let mb = m.powf(beta);
    let h = spec.eval_h(node, p, m)?;
    let dph = spec.eval_dp_h(node, p, m)?;
    let lagrangian = dot(&dph, p) - h;
    let congestion = matches!(spec.family, Family::Congestion { .. });
    let tau = spec.tau();
    let growth = spec.kinetic_exponent();
    use Inequality::*;
    let slack = match cert.inequality {
        AssUpper => (-mb / c + c) - spec.eval_h(node, &[0.0; MAX_DIM], m)?,
        DpHUpper => {
            let bound = if congestion {
                c * (1.0 / m + m.powf(-tau)) * r.powf(growth - 1.0) + c * (m.powf(beta - beta / alpha) + 1.0 / m)
            } else {
                c * (r.powf(alpha - 1.0) + m.powf(beta - beta / alpha) + 1.0)
            };
            bound - norm(&dph)
        }
        Lower => {
            let bound = if congestion {
                r.powf(growth) / (c * (m.powf(tau) + 1.0)) - c * (mb + 1.0)
            } else {
                r.powf(alpha) / c - c * (mb + 1.0)
            };
            h - bound
        }
        Lagrangian => lagrangian - (mb / c - c),
        BoundsH => c * (r.powf(alpha) + 1.0) - mb / c - h,
        Alternative2 => {
            let first = h + c * (mb + 1.0);
            let second = lagrangian - ((r.powf(alpha) + mb) / c - c);
            first.min(second)
        }
        BoundsHPlus => c * (1.0 / m + m.powf(-tau)) * (r.powf(growth) + 1.0) - mb / c - h,
        BoundsMDpH => {
            let ex = spec.exponents();
            let flux = norm(&spec.eval_m_dp_h(node, p, m)?);
            c * (m.powf(ex.beta_bar) + r.powf(ex.gamma_bar) + 1.0) - flux.powf(ex.gamma_bar_conj)
        }
    };
    Ok(slack)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthWitness {
    pub node: usize,
    pub p: Vect,
    pub m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthReport {
    pub inequality: Inequality,
    pub constant: f64,
    pub worst_slack: f64,
    pub witness: GrowthWitness,
    pub samples: usize,
}

pub fn check_growth(spec: &HamiltonianSpec, cert: &GrowthCertificate, sample_count: usize, rng_seed: u64) -> Result<GrowthReport> {
    check_growth_in(spec, cert, sample_count, SampleBox::with_floor(1e-6), rng_seed)
}

pub fn check_growth_in(spec: &HamiltonianSpec, cert: &GrowthCertificate, sample_count: usize, region: SampleBox, rng_seed: u64) -> Result<GrowthReport> {
    ensure_applicable(spec, cert.inequality)?;
    if sample_count == 0 {
        return Err(invalid("sample_count must be at least 1"));
    }
    let index = Inequality::ALL.iter().position(|i| *i == cert.inequality).unwrap_or(0) as u64;
    let mut rng = rng::substream(rng_seed, rng::STREAM_GROWTH, index);
    let grid = *spec.grid();
    let mut best: Option<GrowthReport> = None;
    for _ in 0..sample_count {
        let (node, p, m) = region.draw(&grid, &mut rng);
        let slack = growth_slack(spec, cert, node, &p, m)?;
        if best.is_none_or(|b| slack < b.worst_slack) {
            best = Some(GrowthReport {
                inequality: cert.inequality,
                constant: cert.constant,
                worst_slack: slack,
                witness: GrowthWitness { node, p, m },
                samples: sample_count,
            });
        }
    }
    Ok(best.expect("at least one sample"))
}
