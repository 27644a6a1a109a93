//! The auxiliary function f, its inverse, Φ_{m,α}, Γ and the three ODE charts.

use serde::{Deserialize, Serialize};

use crate::ambient::WarpModel;
use crate::angle::trig;
use crate::curvature::{cyl_sm, sm_scaled, FlowParams};
use crate::error::{Result, SolvError};

/// Below this |sin φ| the τ-chart hands off to the r(φ) chart.
pub const SIN_FLOOR: f64 = 1e-4;
/// Relative size under which the F-bracket counts as vanishing.
pub const BRACKET_TOL: f64 = 1e-10;
const F_INV_HI: f64 = 1.0 - 1.0 / (1u64 << 40) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chart {
    #[serde(rename = "TauChart")]
    Tau,
    #[serde(rename = "RofPhiChart")]
    RofPhi,
    #[serde(rename = "PhiOfRChart")]
    PhiOfR,
}

impl Chart {
    pub fn name(self) -> &'static str {
        match self {
            Chart::Tau => "TauChart",
            Chart::RofPhi => "RofPhiChart",
            Chart::PhiOfR => "PhiOfRChart",
        }
    }
}

/// A point of a profile curve; φ is a continuous determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub r: f64,
    pub phi: f64,
    pub s: f64,
    pub tau: f64,
    pub chart: Chart,
}

impl PhaseState {
    pub fn new(r: f64, phi: f64) -> Self {
        PhaseState { r, phi, s: 0.0, tau: 0.0, chart: Chart::Tau }
    }
}

/// (1 − x)(1 + x) raised to m/2.
fn one_minus_sq_pow(x: f64, half_m: f64) -> f64 {
    let w = (1.0 - x) * (1.0 + x);
    w.powf(half_m)
}

/// f(x) = x^{1/α}/(1 − x²)^{m/2} on [0, 1).
pub fn f_eval(x: f64, p: &FlowParams) -> Result<f64> {
    if !(0.0..1.0).contains(&x) {
        return Err(SolvError::Domain(format!("f is defined on [0,1), got {x}")));
    }
    Ok(x.powi(p.q()) / one_minus_sq_pow(x, p.m as f64 / 2.0))
}

/// f′(x) = (1 + x²(mα − 1))/(α x (1 − x²))·f(x).
pub fn f_prime(x: f64, p: &FlowParams) -> Result<f64> {
    if !(0.0..1.0).contains(&x) {
        return Err(SolvError::Domain(format!("f′ is defined on [0,1), got {x}")));
    }
    let q = p.q();
    let num = q as f64 * x.powi(q - 1) * (1.0 + x * x * (p.m_alpha() - 1.0));
    Ok(num / one_minus_sq_pow(x, p.m as f64 / 2.0 + 1.0))
}

/// Unique x ∈ [0, 1) with f(x) = v; saturates at 1 − 2⁻⁴⁰.
pub fn f_inv(v: f64, p: &FlowParams) -> f64 {
    if !(v > 0.0) {
        return 0.0;
    }
    let q = p.q() as f64;
    let hm = p.m as f64 / 2.0;
    let target = v.ln();
    // g(x) = ln f(x) − ln v is increasing from −∞ to g(hi).
    let g = |x: f64| q * x.ln() - hm * ((1.0 - x) * (1.0 + x)).ln() - target;
    let dg = |x: f64| q / x + 2.0 * hm * x / ((1.0 - x) * (1.0 + x));
    let mut lo = 0.0f64;
    let mut hi = F_INV_HI;
    if g(hi) <= 0.0 {
        return hi;
    }
    let mut x = if v < 1.0 {
        v.powf(1.0 / q).min(0.5)
    } else {
        (1.0 - v.powf(-1.0 / hm)).max(0.0).sqrt().max(0.5)
    };
    x = x.clamp(1e-300, hi);
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if gx < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let mut next = x - gx / dg(x);
        if !(next > lo && next < hi) {
            next = if lo == 0.0 { 0.5 * hi.min(x.max(hi * 1e-3)) } else { 0.5 * (lo + hi) };
            if lo == 0.0 && gx > 0.0 {
                next = 0.5 * x;
            }
        }
        if (next - x).abs() <= 2e-16 * x {
            return next;
        }
        x = next;
    }
    x
}

/// Γ(r) = f⁻¹(S_m(r)/(cχ)^{1/α}).
pub fn gamma(model: &WarpModel, p: &FlowParams, r: f64) -> f64 {
    let chi = model.eval(r).chi;
    f_inv(cyl_sm(model, p, r) / (p.c * chi).powi(p.q()), p)
}

/// Φ_{m,α}(r) = arccos Γ(r).
pub fn big_phi(model: &WarpModel, p: &FlowParams, r: f64) -> f64 {
    gamma(model, p, r).acos()
}

/// τ-chart vector field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauField {
    pub dr: f64,
    pub dphi: f64,
    pub ds: f64,
}

/// κ_τ = φ̇ + (χ′/χ) sin φ from the soliton equation. For m = n this carries no
/// cancellation, unlike φ̇ itself near the pole.
pub fn kappa_tau_raw(model: &WarpModel, p: &FlowParams, r: f64, phi: f64) -> f64 {
    let (s, c) = trig(phi);
    let w = model.eval(r);
    let m = p.m as i32;
    let lead = model.xi_over_dxi(r).powi(m - 1) * (p.c * w.chi * c).powi(p.q());
    let b2 = p.b2();
    let rest = if b2 == 0.0 { 0.0 } else { b2 * model.xi_ratio(r) * s };
    (lead / s.powi(m - 1) - rest) / p.b1()
}

/// dφ/dτ at (r, φ) without the floor check; ±∞ on the axis.
pub fn phi_dot_raw(model: &WarpModel, p: &FlowParams, r: f64, phi: f64) -> f64 {
    kappa_tau_raw(model, p, r, phi) - model.chi_ratio(r) * trig(phi).0
}

/// τ-chart field without the floor check.
pub fn tau_field_raw(model: &WarpModel, p: &FlowParams, r: f64, phi: f64) -> TauField {
    let (s, c) = trig(phi);
    let chi = model.eval(r).chi;
    TauField { dr: c, dphi: phi_dot_raw(model, p, r, phi), ds: s / chi }
}

/// (dr/dτ, dφ/dτ, ds/dτ).
pub fn vf_tau(model: &WarpModel, p: &FlowParams, state: &PhaseState) -> Result<TauField> {
    let (s, _) = trig(state.phi);
    if s.abs() < SIN_FLOOR {
        return Err(SolvError::SingularChart(format!(
            "|sin φ| = {} below the τ-chart floor",
            s.abs()
        )));
    }
    Ok(tau_field_raw(model, p, state.r, state.phi))
}

/// Terms of the F-bracket times sin^m φ·(cχ)^{1/α}: (drive, S_m sin^m φ), and the
/// prefactor C(n−1,m−1)(ξ′/ξ·sin φ)^{m−1}.
pub(crate) fn r_of_phi_parts(model: &WarpModel, p: &FlowParams, r: f64, phi: f64) -> (f64, f64, f64) {
    let (s, c) = trig(phi);
    let m = p.m as i32;
    let qs = model.xi_ratio(r) * s;
    let drive = (p.c * model.eval(r).chi * c).powi(p.q());
    let lead = qs.powi(m - 1);
    let sm_term = sm_scaled(model, p, r) * lead * s;
    (drive, sm_term, p.b1() * lead)
}

/// dr/dφ = C(n−1,m−1)(ξ′/ξ)^{m−1}(cχ)^{−1/α} cot φ·[cos^{1/α}φ/sin^m φ − S_m/(cχ)^{1/α}]^{−1}.
pub fn vf_r_of_phi(model: &WarpModel, p: &FlowParams, state: &PhaseState) -> Result<f64> {
    let (drive, sm_term, pre) = r_of_phi_parts(model, p, state.r, state.phi);
    let d = drive - sm_term;
    if d.abs() <= BRACKET_TOL * drive.abs().max(sm_term.abs()) {
        return Err(SolvError::SingularChart("F-bracket vanishes".into()));
    }
    let (_, c) = trig(state.phi);
    Ok(pre * c / d)
}

/// dy/dr for y = cos φ with sign σ = sign(sin φ); reduces to G(r, y) on Q₁.
pub fn y_field(model: &WarpModel, p: &FlowParams, r: f64, y: f64, sigma: f64) -> f64 {
    let m = p.m as i32;
    let w2 = (1.0 - y) * (1.0 + y);
    let a = sm_scaled(model, p, r);
    let chi = model.eval(r).chi;
    let sig_m = if m % 2 == 0 { 1.0 } else { sigma };
    let drive = model.xi_over_dxi(r).powi(m - 1) * (p.c * chi * y).powi(p.q()) * w2.powf(1.0 - p.m as f64 / 2.0);
    (a * w2 - sig_m * drive) / (y * p.b1())
}

/// G(r, y) = C(n−1,m−1)^{−1}(ξ/ξ′)^{m−1}(cχ)^{1/α}((1 − y²)/y)[f(Γ(r)) − f(y)].
pub fn vf_y_of_r(model: &WarpModel, p: &FlowParams, r: f64, y: f64) -> Result<f64> {
    if !(y > 0.0 && y < 1.0) {
        return Err(SolvError::Domain(format!("y = {y} outside (0,1)")));
    }
    if !(r > 0.0) {
        return Err(SolvError::Domain(format!("r = {r} must be positive")));
    }
    Ok(y_field(model, p, r, y, 1.0))
}
