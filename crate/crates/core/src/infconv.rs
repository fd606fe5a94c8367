//! Infimal convolution `H^ε(p) = inf_q H(p - q) + K(q)/ε` with
//! `K(q) = |q| + |q|^α`.
//!
//! Since `∂K(0)` is the closed unit ball, the minimizer is `q = 0` as long as
//! `|D_pH(p)| <= 1/ε`. Outside that region every built-in family is radial, so
//! `q = s p/|p|` with `s` the root of the increasing scalar map
//! `s ↦ (1 + α s^{α-1})/ε - φ'(|p| - s)` on `[0, |p|]`.

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, MfgError, Result};
use crate::grid::{add, dot, norm, scale, sub, TorusGrid, Vect, MAX_DIM};
use crate::hamiltonian::{GrowthCertificate, HamiltonianSpec, Inequality, LocalHamiltonian, SampleBox};
use crate::rng;

/// Margin on the `q = 0` test so that momenta on the boundary of the zero
/// region do not dither between the two branches.
pub const ZERO_REGION_MARGIN: f64 = 1e-12;

const PROX_STEP_TOL: f64 = 1e-10;
const PROX_MAX_ITER: usize = 200;

pub fn k_fn(q: &Vect, alpha: f64) -> f64 {
    let r = norm(q);
    r + r.powf(alpha)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EnvelopeMethod {
    /// Bisection on the scalar optimality condition of the radial reduction.
    #[default]
    Radial,
    /// Proximal-gradient fixed point with the closed-form prox of `K`.
    ProxGradient,
}

#[derive(Clone, Copy, Debug)]
pub struct EnvelopeSpec<'a> {
    base: &'a HamiltonianSpec,
    epsilon: f64,
    method: EnvelopeMethod,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvelopeValue {
    pub value: f64,
    pub q_star: Vect,
    pub grad_p: Vect,
}

impl<'a> EnvelopeSpec<'a> {
    pub fn new(base: &'a HamiltonianSpec, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(invalid(format!("envelope epsilon must lie in (0, 1], got {epsilon}")));
        }
        Ok(Self { base, epsilon, method: EnvelopeMethod::Radial })
    }

    pub fn with_method(mut self, method: EnvelopeMethod) -> Self {
        self.method = method;
        self
    }

    pub fn base(&self) -> &'a HamiltonianSpec {
        self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The exponent of `K`, inherited from the base Hamiltonian.
    pub fn alpha(&self) -> f64 {
        self.base.alpha()
    }

    pub fn method(&self) -> EnvelopeMethod {
        self.method
    }

    fn check_density(&self, m: f64) -> Result<()> {
        if !m.is_finite() || m < 0.0 {
            return Err(invalid(format!("density must be finite and non-negative, got {m}")));
        }
        if m == 0.0 && self.base.requires_positive_density() {
            return Err(invalid("the congestion envelope needs m > 0"));
        }
        Ok(())
    }
}

/// Evaluates `H^ε`, its minimizer and `D_pH^ε` at one node.
pub fn envelope(spec: &EnvelopeSpec<'_>, node: usize, p: &Vect, m: f64) -> Result<EnvelopeValue> {
    spec.check_density(m)?;
    let base = spec.base;
    let h = base.eval_h(node, p, m)?;
    let r = norm(p);
    let (_, slope) = base.profile(node, r, m);
    if slope <= (1.0 - ZERO_REGION_MARGIN) / spec.epsilon {
        return Ok(EnvelopeValue { value: h, q_star: [0.0; MAX_DIM], grad_p: base.dp_h_unchecked(node, p, m) });
    }
    match spec.method {
        EnvelopeMethod::Radial => Ok(radial(spec, node, p, m)),
        EnvelopeMethod::ProxGradient => prox_gradient(spec, node, p, m),
    }
}

fn radial(spec: &EnvelopeSpec<'_>, node: usize, p: &Vect, m: f64) -> EnvelopeValue {
    let alpha = spec.alpha();
    let eps = spec.epsilon;
    let r = norm(p);
    let residual = |s: f64| (1.0 + alpha * s.powf(alpha - 1.0)) / eps - spec.base.profile(node, r - s, m).1;
    let (mut lo, mut hi) = (0.0_f64, r);
    let tol = 1e-15 * r;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if residual(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    let dir = scale(p, 1.0 / r);
    let (phi, slope) = spec.base.profile(node, r - s, m);
    EnvelopeValue {
        value: phi + (s + s.powf(alpha)) / eps,
        q_star: scale(&dir, s),
        grad_p: scale(&dir, slope),
    }
}

/// Proximal map of `λK` at `y`.
pub fn prox_k(y: &Vect, lambda: f64, alpha: f64) -> Vect {
    let r = norm(y);
    if r <= lambda {
        return [0.0; MAX_DIM];
    }
    let rho = if alpha == 2.0 {
        (r - lambda) / (1.0 + 2.0 * lambda)
    } else {
        // g(ρ) = ρ - r + λ + λαρ^{α-1} is increasing with a root in (0, r - λ).
        let g = |rho: f64| rho - r + lambda + lambda * alpha * rho.powf(alpha - 1.0);
        let (mut lo, mut hi) = (0.0, r - lambda);
        let mut rho = 0.5 * hi;
        for _ in 0..200 {
            let val = g(rho);
            if val == 0.0 {
                break;
            }
            if val > 0.0 {
                hi = rho;
            } else {
                lo = rho;
            }
            if hi - lo <= 1e-15 * r {
                break;
            }
            let deriv = 1.0 + lambda * alpha * (alpha - 1.0) * rho.powf(alpha - 2.0);
            let newton = rho - val / deriv;
            rho = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        rho
    };
    scale(y, rho / r)
}

fn prox_gradient(spec: &EnvelopeSpec<'_>, node: usize, p: &Vect, m: f64) -> Result<EnvelopeValue> {
    let base = spec.base;
    let alpha = spec.alpha();
    let eps = spec.epsilon;
    // f(q) = H(p - q), ∇f(q) = -D_pH(p - q).
    let f = |q: &Vect| base.h_unchecked(node, &sub(p, q), m);
    let mut q = [0.0; MAX_DIM];
    let mut t = 1.0_f64;
    let mut last_step = f64::INFINITY;
    for _ in 0..PROX_MAX_ITER {
        let grad = scale(&base.dp_h_unchecked(node, &sub(p, &q), m), -1.0);
        let fq = f(&q);
        let next = loop {
            let trial = prox_k(&sub(&q, &scale(&grad, t)), t / eps, alpha);
            let d = sub(&trial, &q);
            if f(&trial) <= fq + dot(&grad, &d) + dot(&d, &d) / (2.0 * t) || t < 1e-300 {
                break trial;
            }
            t *= 0.5;
        };
        last_step = norm(&sub(&next, &q));
        q = next;
        if last_step <= PROX_STEP_TOL {
            let pq = sub(p, &q);
            return Ok(EnvelopeValue {
                value: base.h_unchecked(node, &pq, m) + k_fn(&q, alpha) / eps,
                q_star: q,
                grad_p: base.dp_h_unchecked(node, &pq, m),
            });
        }
        t *= 2.0;
    }
    Err(MfgError::EnvelopeNotConverged { iterations: PROX_MAX_ITER, last_step, last_q: q })
}

impl LocalHamiltonian for EnvelopeSpec<'_> {
    fn grid(&self) -> &TorusGrid {
        self.base.grid()
    }

    fn value_and_flux(&self, node: usize, p: &Vect, m: f64) -> Result<(f64, Vect)> {
        let env = envelope(self, node, p, m)?;
        Ok((env.value, scale(&env.grad_p, m)))
    }

    fn requires_positive_density(&self) -> bool {
        self.base.requires_positive_density()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleValue {
    pub value: f64,
    pub argmin: Vect,
    /// Upper bound on `value - H^ε` implied by the grid spacing.
    pub resolution_bound: f64,
}

/// Brute-force minimum of `H(p - q) + K(q)/ε` over a uniform grid of `q` in
/// `[-R, R]^dim`, always including `q = 0`.
pub fn envelope_oracle(spec: &EnvelopeSpec<'_>, node: usize, p: &Vect, m: f64, q_box_radius: Option<f64>, grid_n: usize) -> Result<OracleValue> {
    if grid_n < 3 {
        return Err(invalid("oracle grid needs at least 3 points per axis"));
    }
    spec.check_density(m)?;
    let base = spec.base;
    let alpha = spec.alpha();
    let eps = spec.epsilon;
    let dim = base.grid().dim();
    let radius = match q_box_radius {
        Some(r) => r,
        None => {
            let h = base.eval_h(node, p, m)?;
            let c_m = base.b().max().abs() * m.powf(base.beta());
            norm(p) + (eps * (h.abs() + c_m)).powf(1.0 / alpha)
        }
    };
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(invalid(format!("oracle box radius must be finite and non-negative, got {radius}")));
    }
    let spacing = 2.0 * radius / (grid_n - 1) as f64;
    let coord = |i: usize| if spacing > 0.0 { -radius + spacing * i as f64 } else { 0.0 };
    let objective = |q: &Vect| base.h_unchecked(node, &sub(p, q), m) + k_fn(q, alpha) / eps;

    let mut best_q = [0.0; MAX_DIM];
    let mut best = objective(&best_q);
    let total = grid_n.pow(dim as u32);
    for flat in 0..total {
        let mut q = [0.0; MAX_DIM];
        let mut rest = flat;
        for slot in q.iter_mut().take(dim) {
            *slot = coord(rest % grid_n);
            rest /= grid_n;
        }
        let v = objective(&q);
        if v < best {
            best = v;
            best_q = q;
        }
    }

    // Gradient norm bound of the objective over the cells touching the argmin.
    let grad_bound = |q: &Vect| {
        let pq = sub(p, q);
        let dp = if m > 0.0 { norm(&base.dp_h_unchecked(node, &pq, m)) } else { base.profile(node, norm(&pq), m).1 };
        dp + (1.0 + alpha * norm(q).powf(alpha - 1.0)) / eps
    };
    let mut max_grad = 0.0_f64;
    let offsets: &[f64] = &[-1.0, 0.0, 1.0];
    for &dx in offsets {
        for &dy in if dim == 2 { offsets } else { &[0.0][..] } {
            let q = add(&best_q, &[dx * spacing, dy * spacing]);
            max_grad = max_grad.max(grad_bound(&q));
        }
    }
    Ok(OracleValue {
        value: best,
        argmin: best_q,
        resolution_bound: 2.0 * max_grad * spacing * (dim as f64).sqrt(),
    })
}

/// The sampled inequalities satisfied by `H^ε` for `0 < ε <= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum EnvelopeInequality {
    /// `H^ε <= C_ε|p|^α - m^β/C + C'`, `C_ε = 1/ε + 1/ε^α`, `C' = C + 1`.
    Upper,
    /// `|D_pH^ε| <= (α/ε)(1 + |p|^{α-1} + m^{β-β/α})`.
    Gradient,
    /// `H^ε >= |p|^α/C̃ - C̃(m^β + 1)` with `C̃ = max(2^α(C+1), C)`.
    UniformLower,
    /// `D_pH^ε·p - H^ε >= m^β/C - C`.
    Lagrangian,
    /// `|K(q^ε)/ε - (H^ε - H(p - q^ε))| <= 1e-9`.
    ValueConsistency,
}

impl EnvelopeInequality {
    pub const ALL: [EnvelopeInequality; 5] = [
        EnvelopeInequality::Upper,
        EnvelopeInequality::Gradient,
        EnvelopeInequality::UniformLower,
        EnvelopeInequality::Lagrangian,
        EnvelopeInequality::ValueConsistency,
    ];

    pub fn id(self) -> &'static str {
        match self {
            EnvelopeInequality::Upper => "Heps.upper",
            EnvelopeInequality::Gradient => "DpHeps.upper",
            EnvelopeInequality::UniformLower => "Heps.lower",
            EnvelopeInequality::Lagrangian => "DpHeps-dotp-minus-Heps",
            EnvelopeInequality::ValueConsistency => "Heps.value-consistency",
        }
    }

    /// The base certificate whose constant feeds this inequality.
    fn base_inequality(self) -> Inequality {
        match self {
            EnvelopeInequality::UniformLower => Inequality::Lower,
            _ => Inequality::AssUpper,
        }
    }

    pub fn documented_constant(self, base: &HamiltonianSpec) -> Result<f64> {
        let c = GrowthCertificate::documented(base, self.base_inequality())?.constant;
        Ok(match self {
            EnvelopeInequality::UniformLower => (2f64.powf(base.alpha()) * (c + 1.0)).max(c),
            _ => c,
        })
    }
}

/// Slack of one envelope inequality at a point; non-negative means it holds.
pub fn envelope_slack(spec: &EnvelopeSpec<'_>, inequality: EnvelopeInequality, constant: f64, node: usize, p: &Vect, m: f64) -> Result<f64> {
    let env = envelope(spec, node, p, m)?;
    let base = spec.base;
    let alpha = spec.alpha();
    let beta = base.beta();
    let eps = spec.epsilon;
    let c = constant;
    let r = norm(p);
    let mb = m.powf(beta);
    Ok(match inequality {
        EnvelopeInequality::Upper => {
            let c_eps = 1.0 / eps + eps.powf(-alpha);
            c_eps * r.powf(alpha) - mb / c + (c + 1.0) - env.value
        }
        EnvelopeInequality::Gradient => (alpha / eps) * (1.0 + r.powf(alpha - 1.0) + m.powf(beta - beta / alpha)) - norm(&env.grad_p),
        EnvelopeInequality::UniformLower => env.value - (r.powf(alpha) / c - c * (mb + 1.0)),
        EnvelopeInequality::Lagrangian => dot(&env.grad_p, p) - env.value - (mb / c - c),
        EnvelopeInequality::ValueConsistency => {
            let h_shift = base.eval_h(node, &sub(p, &env.q_star), m)?;
            let gap = (k_fn(&env.q_star, alpha) / eps - (env.value - h_shift)).abs();
            1e-9 - gap
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvelopeBoundReport {
    pub inequality: EnvelopeInequality,
    pub constant: f64,
    pub worst_slack: f64,
    pub node: usize,
    pub p: Vect,
    pub m: f64,
    pub samples: usize,
}

/// Samples one envelope inequality with its documented constant.
pub fn check_envelope_bounds(spec: &EnvelopeSpec<'_>, inequality: EnvelopeInequality, sample_count: usize, rng_seed: u64) -> Result<EnvelopeBoundReport> {
    let constant = inequality.documented_constant(spec.base)?;
    check_envelope_bounds_with(spec, inequality, constant, sample_count, SampleBox::with_floor(1e-6), rng_seed)
}

pub fn check_envelope_bounds_with(
    spec: &EnvelopeSpec<'_>,
    inequality: EnvelopeInequality,
    constant: f64,
    sample_count: usize,
    region: SampleBox,
    rng_seed: u64,
) -> Result<EnvelopeBoundReport> {
    if sample_count == 0 {
        return Err(invalid("sample_count must be at least 1"));
    }
    let index = EnvelopeInequality::ALL.iter().position(|i| *i == inequality).unwrap_or(0) as u64;
    let mut rng = rng::substream(rng_seed, rng::STREAM_ENVELOPE, index);
    let grid = *spec.base.grid();
    let mut worst: Option<EnvelopeBoundReport> = None;
    for _ in 0..sample_count {
        let (node, p, m) = region.draw(&grid, &mut rng);
        let slack = envelope_slack(spec, inequality, constant, node, &p, m)?;
        if worst.is_none_or(|w| slack < w.worst_slack) {
            worst = Some(EnvelopeBoundReport { inequality, constant, worst_slack: slack, node, p, m, samples: sample_count });
        }
    }
    Ok(worst.expect("at least one sample"))
}

/// Draws `(node, p, m, ε)` for envelope property runs: `ε` log-uniform in
/// `[1e-3, 1]`.
pub fn draw_envelope_sample<R: Rng>(grid: &TorusGrid, region: &SampleBox, rng: &mut R) -> (usize, Vect, f64, f64) {
    let (node, p, m) = region.draw(grid, rng);
    let eps = rng.gen_range((1e-3f64).ln()..=0.0).exp();
    (node, p, m, eps)
}
