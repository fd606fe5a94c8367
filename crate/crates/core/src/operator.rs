//! Discrete assembly of the regularized MFG operator
//!
//! ```text
//! A_ε[m,u] = ( -u - H(x,Du,m) + V,
//!              -div(m D_pH(x,Du,m) + ε|Du|^{γ̄-2}Du) + (m - 1) + ε|u|^{γ̄-2}u )
//! ```
//!
//! paired with `(m, u)` through the `h^d`-weighted inner product. The first
//! slot pairs against density variations, the second against value-function
//! variations.

use serde::Serialize;

use crate::error::{invalid, MfgError, Result};
use crate::grid::{divergence, gradient, inner_product, integral, neumaier_sum, scale, ScalarField, TorusGrid, Vect, VectorField};
use crate::hamiltonian::{ExponentSet, Family, HamiltonianSpec, LocalHamiltonian};
use crate::infconv::EnvelopeSpec;

/// Relative threshold for detecting `{m > 0}` in floating point.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct MFGState {
    m: ScalarField,
    u: ScalarField,
}

impl MFGState {
    pub fn new(m: ScalarField, u: ScalarField) -> Result<Self> {
        m.grid().ensure_same(u.grid())?;
        if !m.is_finite() || !u.is_finite() {
            return Err(MfgError::NonFinite("state fields".into()));
        }
        Ok(Self { m, u })
    }

    pub fn constant(grid: TorusGrid, m: f64, u: f64) -> Self {
        Self { m: ScalarField::constant(grid, m), u: ScalarField::constant(grid, u) }
    }

    pub fn grid(&self) -> &TorusGrid {
        self.m.grid()
    }

    pub fn m(&self) -> &ScalarField {
        &self.m
    }

    pub fn u(&self) -> &ScalarField {
        &self.u
    }

    pub fn m_mut(&mut self) -> &mut ScalarField {
        &mut self.m
    }

    pub fn u_mut(&mut self) -> &mut ScalarField {
        &mut self.u
    }

    pub fn into_parts(self) -> (ScalarField, ScalarField) {
        (self.m, self.u)
    }

    /// `self + t * other`, slot by slot.
    pub fn axpy(&self, t: f64, other: &MFGState) -> Result<MFGState> {
        Ok(MFGState {
            m: self.m.zip_map(&other.m, |a, b| a + t * b)?,
            u: self.u.zip_map(&other.u, |a, b| a + t * b)?,
        })
    }

    /// `h^d`-weighted inner product over both slots.
    pub fn dot(&self, other: &MFGState) -> Result<f64> {
        Ok(inner_product(&self.m, &other.m)? + inner_product(&self.u, &other.u)?)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).expect("same grid").sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorOutput {
    pub eta_slot: ScalarField,
    pub nu_slot: ScalarField,
}

impl OperatorOutput {
    pub fn as_state(&self) -> MFGState {
        MFGState { m: self.eta_slot.clone(), u: self.nu_slot.clone() }
    }

    /// `<A[z], w>_h` for a direction `w = (η, ν)`.
    pub fn pair(&self, w: &MFGState) -> Result<f64> {
        Ok(inner_product(&self.eta_slot, &w.m)? + inner_product(&self.nu_slot, &w.u)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemData {
    potential: ScalarField,
    spec: HamiltonianSpec,
    exponents: ExponentSet,
    epsilon: f64,
    use_envelope: bool,
    m_floor: f64,
}

impl ProblemData {
    pub fn new(spec: HamiltonianSpec, potential: ScalarField, epsilon: f64, use_envelope: bool, m_floor: f64) -> Result<Self> {
        spec.grid().ensure_same(potential.grid())?;
        if !potential.is_finite() {
            return Err(MfgError::NonFinite("potential V".into()));
        }
        let exponents = spec.exponents();
        let data = Self { potential, spec, exponents, epsilon: 0.0, use_envelope, m_floor: 0.0 };
        data.with_floor(m_floor)?.with_epsilon(epsilon)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(invalid(format!("epsilon must be finite and non-negative, got {epsilon}")));
        }
        if self.use_envelope && epsilon > 1.0 {
            return Err(invalid(format!("the envelope needs epsilon <= 1, got {epsilon}")));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn with_floor(mut self, m_floor: f64) -> Result<Self> {
        if !(m_floor >= 0.0) || !m_floor.is_finite() {
            return Err(invalid(format!("m_floor must be finite and non-negative, got {m_floor}")));
        }
        if matches!(self.spec.family(), Family::Congestion { .. }) && m_floor <= 0.0 {
            return Err(invalid("congestion problems need a strictly positive density floor"));
        }
        self.m_floor = m_floor;
        Ok(self)
    }

    pub fn with_envelope(mut self, use_envelope: bool) -> Result<Self> {
        self.use_envelope = use_envelope;
        let eps = self.epsilon;
        self.with_epsilon(eps)
    }

    pub fn grid(&self) -> &TorusGrid {
        self.spec.grid()
    }

    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
    }

    pub fn potential(&self) -> &ScalarField {
        &self.potential
    }

    pub fn exponents(&self) -> ExponentSet {
        self.exponents
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn use_envelope(&self) -> bool {
        self.use_envelope
    }

    pub fn m_floor(&self) -> f64 {
        self.m_floor
    }

    /// The pointwise Hamiltonian in use: `H^ε` when the envelope is on and
    /// `ε > 0`, the base `H` otherwise.
    pub fn local(&self) -> Local<'_> {
        if self.use_envelope && self.epsilon > 0.0 {
            Local::Envelope(EnvelopeSpec::new(&self.spec, self.epsilon).expect("epsilon validated"))
        } else {
            Local::Base(&self.spec)
        }
    }

    fn check_admissible(&self, z: &MFGState) -> Result<()> {
        self.grid().ensure_same(z.grid())?;
        let floor = self.m_floor;
        for (node, &m) in z.m.values().iter().enumerate() {
            if !(m >= floor) {
                return Err(MfgError::Inadmissible { node, m, floor });
            }
        }
        Ok(())
    }

    /// Pointwise `(H, m D_pH)` at the state, rejecting infinite values.
    fn local_terms(&self, z: &MFGState, p: &VectorField) -> Result<(Vec<f64>, Vec<Vect>)> {
        let local = self.local();
        let n = self.grid().node_count();
        let mut h = Vec::with_capacity(n);
        let mut flux = Vec::with_capacity(n);
        for (node, (pv, &m)) in p.values().iter().zip(z.m.values()).enumerate() {
            let (hv, fv) = local.value_and_flux(node, pv, m)?;
            if !hv.is_finite() {
                return Err(MfgError::InfiniteHamiltonian { node, m });
            }
            h.push(hv);
            flux.push(fv);
        }
        Ok((h, flux))
    }

    pub fn apply(&self, z: &MFGState) -> Result<OperatorOutput> {
        self.check_admissible(z)?;
        let p = gradient(&z.u);
        let (h, mut flux) = self.local_terms(z, &p)?;
        let eps = self.epsilon;
        let gbar = self.exponents.gamma_bar;
        if eps > 0.0 {
            for (f, pv) in flux.iter_mut().zip(p.values()) {
                let r = crate::grid::norm(pv);
                if r > 0.0 {
                    let w = scale(pv, eps * r.powf(gbar - 2.0));
                    f[0] += w[0];
                    f[1] += w[1];
                }
            }
        }
        let div = divergence(&VectorField::from_values(*self.grid(), flux)?);
        let v = self.potential.values();
        let eta: Vec<f64> = z.u.values().iter().zip(&h).zip(v).map(|((u, hv), vv)| -u - hv + vv).collect();
        let nu: Vec<f64> = div
            .values()
            .iter()
            .zip(z.m.values())
            .zip(z.u.values())
            .map(|((d, m), u)| -d + (m - 1.0) + eps * signed_pow(*u, gbar - 1.0))
            .collect();
        Ok(OperatorOutput {
            eta_slot: ScalarField::from_values(*self.grid(), eta)?,
            nu_slot: ScalarField::from_values(*self.grid(), nu)?,
        })
    }
}

/// The pointwise Hamiltonian selected by a [`ProblemData`].
#[derive(Clone, Copy, Debug)]
pub enum Local<'a> {
    Base(&'a HamiltonianSpec),
    Envelope(EnvelopeSpec<'a>),
}

impl LocalHamiltonian for Local<'_> {
    fn grid(&self) -> &TorusGrid {
        match self {
            Local::Base(s) => s.grid(),
            Local::Envelope(e) => e.base().grid(),
        }
    }

    #[inline]
    fn value_and_flux(&self, node: usize, p: &Vect, m: f64) -> Result<(f64, Vect)> {
        match self {
            Local::Base(s) => s.value_and_flux(node, p, m),
            Local::Envelope(e) => e.value_and_flux(node, p, m),
        }
    }

    fn requires_positive_density(&self) -> bool {
        match self {
            Local::Base(s) => s.requires_positive_density(),
            Local::Envelope(e) => e.requires_positive_density(),
        }
    }
}

/// `sign(s)|s|^e`, with `0^e = 0`.
#[inline]
pub fn signed_pow(s: f64, e: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s.signum() * s.abs().powf(e)
    }
}

/// `-div(|Du|^{q-2}Du) + |u|^{q-2}u`, the gradient of `(1/q)||u||^q_{W^{1,q}}`.
pub fn gamma_laplacian(u: &ScalarField, q: f64) -> Result<ScalarField> {
    if !(q > 1.0) {
        return Err(invalid(format!("exponent must exceed 1, got {q}")));
    }
    let mut p = gradient(u);
    for pv in p.values_mut() {
        let r = crate::grid::norm(pv);
        *pv = if r > 0.0 { scale(pv, r.powf(q - 2.0)) } else { [0.0; crate::grid::MAX_DIM] };
    }
    let div = divergence(&p);
    div.zip_map(u, |d, v| -d + signed_pow(v, q - 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairingValue {
    pub value: f64,
    /// `int |Δη Δm| + |Δν Δu|`, the magnitude the pairing is compared against.
    pub scale: f64,
}

pub fn monotonicity_pairing(data: &ProblemData, z1: &MFGState, z2: &MFGState) -> Result<f64> {
    Ok(monotonicity_pairing_scaled(data, z1, z2)?.value)
}

pub fn monotonicity_pairing_scaled(data: &ProblemData, z1: &MFGState, z2: &MFGState) -> Result<PairingValue> {
    let a1 = data.apply(z1)?;
    let a2 = data.apply(z2)?;
    let grid = *data.grid();
    let vol = grid.cell_volume();
    let mut terms = Vec::with_capacity(2 * grid.node_count());
    for i in 0..grid.node_count() {
        terms.push((a1.eta_slot.values()[i] - a2.eta_slot.values()[i]) * (z1.m.values()[i] - z2.m.values()[i]));
        terms.push((a1.nu_slot.values()[i] - a2.nu_slot.values()[i]) * (z1.u.values()[i] - z2.u.values()[i]));
    }
    let scale = vol * neumaier_sum(terms.iter().map(|t| t.abs()));
    Ok(PairingValue { value: vol * neumaier_sum(terms), scale })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HjResidual {
    pub field: ScalarField,
    pub max_pos: f64,
    pub max_on_support: f64,
}

/// `u + H(x,Du,m) - V`: non-positive everywhere and zero on `{m > 0}` at a
/// strong solution.
pub fn hj_residual(data: &ProblemData, z: &MFGState) -> Result<HjResidual> {
    data.check_admissible(z)?;
    let p = gradient(&z.u);
    let (h, _) = data.local_terms(z, &p)?;
    let values: Vec<f64> = z.u.values().iter().zip(&h).zip(data.potential.values()).map(|((u, hv), v)| u + hv - v).collect();
    let threshold = SUPPORT_THRESHOLD * z.m.max().max(1.0);
    let max_pos = values.iter().fold(0.0_f64, |acc, &v| acc.max(v));
    let max_on_support = values
        .iter()
        .zip(z.m.values())
        .filter(|(_, &m)| m > threshold)
        .fold(0.0_f64, |acc, (v, _)| acc.max(v.abs()));
    Ok(HjResidual { field: ScalarField::from_values(*data.grid(), values)?, max_pos, max_on_support })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportResidual {
    pub field: ScalarField,
    pub l1: f64,
    /// `int (m - 1) + ε int |u|^{γ̄-2}u`, zero at a solution.
    pub mass_gap: f64,
}

pub fn transport_residual(data: &ProblemData, z: &MFGState) -> Result<TransportResidual> {
    let out = data.apply(z)?;
    let field = out.nu_slot;
    let l1 = integral(&field.map(f64::abs));
    Ok(TransportResidual { field, l1, mass_gap: mass_defect(z) + eps_mass_term(data, z) })
}

/// `int (m - 1)`.
pub fn mass_defect(z: &MFGState) -> f64 {
    integral(&z.m.map(|m| m - 1.0))
}

/// `ε int |u|^{γ̄-2}u`.
pub fn eps_mass_term(data: &ProblemData, z: &MFGState) -> f64 {
    let e = data.exponents.gamma_bar - 1.0;
    data.epsilon * integral(&z.u.map(|u| signed_pow(u, e)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeakCertificate {
    pub min_value: f64,
    /// Index of the minimizing test pair.
    pub witness: usize,
}

/// Minimum over test pairs `v = (μ, υ)` of `<A[v], v - z>_h`, the discrete
/// Minty-type integral. It uses the same Hamiltonian and `ε`-terms as `data`,
/// so at `ε = 0` without the envelope it is exactly the weak-solution
/// integral; non-negative values certify weak-solution behaviour.
pub fn weak_solution_certificate(data: &ProblemData, z: &MFGState, test_pairs: &[MFGState]) -> Result<WeakCertificate> {
    if test_pairs.is_empty() {
        return Err(invalid("the weak certificate needs at least one test pair"));
    }
    data.grid().ensure_same(z.grid())?;
    let mut best = WeakCertificate { min_value: f64::INFINITY, witness: 0 };
    for (k, v) in test_pairs.iter().enumerate() {
        if !(v.m.min() > 0.0) {
            return Err(invalid(format!("test pair {k} has a non-positive density")));
        }
        let value = data.apply(v)?.pair(&v.axpy(-1.0, z)?)?;
        if value < best.min_value {
            best = WeakCertificate { min_value: value, witness: k };
        }
    }
    Ok(best)
}
