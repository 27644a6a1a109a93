//! Principal curvatures, the m-th mean curvature of a rotational profile, the
//! cylindrical curvature S_m(r) and the scalar soliton residual.

use serde::{Deserialize, Serialize};

use crate::ambient::WarpModel;
use crate::angle::trig;
use crate::error::{Result, SolvError};
use crate::phase::PhaseState;

const MAX_BINOMIAL_N: u32 = 64;

/// Speed exponent α of the flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alpha {
    /// α = 1.
    #[serde(rename = "1")]
    One,
    /// α = 1/m.
    #[serde(rename = "1/m")]
    InverseM,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub n: u32,
    pub m: u32,
    pub alpha: Alpha,
    pub c: f64,
}

impl FlowParams {
    pub fn new(n: u32, m: u32, alpha: Alpha, c: f64) -> Result<Self> {
        if n < 2 || n > MAX_BINOMIAL_N {
            return Err(SolvError::InvalidParams(format!("n = {n} outside 2..={MAX_BINOMIAL_N}")));
        }
        if m < 2 || m > n {
            return Err(SolvError::InvalidParams(format!("m = {m} outside 2..=n")));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(SolvError::InvalidParams(format!("c = {c} must be positive")));
        }
        Ok(FlowParams { n, m, alpha, c })
    }

    /// 1/α, always a positive integer (1 or m).
    pub fn q(&self) -> i32 {
        match self.alpha {
            Alpha::One => 1,
            Alpha::InverseM => self.m as i32,
        }
    }

    pub fn alpha_value(&self) -> f64 {
        1.0 / self.q() as f64
    }

    /// m·α.
    pub fn m_alpha(&self) -> f64 {
        self.m as f64 / self.q() as f64
    }

    /// C(n−1, m−1).
    pub fn b1(&self) -> f64 {
        binomial(self.n - 1, self.m - 1)
    }

    /// C(n−1, m), zero when m = n.
    pub fn b2(&self) -> f64 {
        binomial(self.n - 1, self.m)
    }

    pub fn m_even(&self) -> bool {
        self.m % 2 == 0
    }

    /// Phase space is Q₁ ∪ Q₄ only (m even, α = 1/m).
    pub fn restricted_phase_space(&self) -> bool {
        self.m_even() && self.alpha == Alpha::InverseM
    }

    /// φ′(0) of the bowl: c^{1/(mα)}·C(n,m)^{−1/m}.
    pub fn bowl_slope(&self) -> f64 {
        self.c.powf(1.0 / self.m_alpha()) * binomial(self.n, self.m).powf(-1.0 / self.m as f64)
    }
}

/// Exact binomial coefficient, zero for k > n.
pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k) as u128;
    let n = n as u128;
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc * (n - k + i) / i;
    }
    acc as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSample {
    pub kappa_tau: f64,
    pub kappa_theta: f64,
    /// m-th mean curvature S.
    pub mean_curvature: f64,
    pub residual: f64,
}

/// S_m(r) = [C(n−1,m−1)χ′/χ + C(n−1,m)ξ′/ξ]·(ξ′/ξ)^{m−1}.
pub fn cyl_sm(model: &WarpModel, p: &FlowParams, r: f64) -> f64 {
    let q = model.xi_ratio(r);
    sm_scaled(model, p, r) * q.powi(p.m as i32 - 1)
}

/// (ξ/ξ′)^{m−1}·S_m = C(n−1,m−1)χ′/χ + C(n−1,m)ξ′/ξ, finite at r = 0 when m = n.
pub fn sm_scaled(model: &WarpModel, p: &FlowParams, r: f64) -> f64 {
    let b2 = p.b2();
    let chi_part = p.b1() * model.chi_ratio(r);
    if b2 == 0.0 {
        chi_part
    } else {
        chi_part + b2 * model.xi_ratio(r)
    }
}

/// (κ_τ, κ_θ) = (φ̇ + (χ′/χ) sin φ, (ξ′/ξ) sin φ).
pub fn principal_curvatures(model: &WarpModel, state: &PhaseState, phi_dot: f64) -> (f64, f64) {
    let (s, _) = trig(state.phi);
    let kt = phi_dot + model.chi_ratio(state.r) * s;
    let kth = model.xi_ratio(state.r) * s;
    (kt, kth)
}

/// C(n−1,m−1)(ξ′/ξ)^{m−1} sin^{m−1}φ·φ̇ + S_m sin^m φ.
pub fn full_s(model: &WarpModel, p: &FlowParams, state: &PhaseState, phi_dot: f64) -> f64 {
    let (s, _) = trig(state.phi);
    let qs = model.xi_ratio(state.r) * s;
    let lead = qs.powi(p.m as i32 - 1);
    lead * (p.b1() * phi_dot + sm_scaled(model, p, state.r) * s)
}

/// (cχ cos φ)^{1/α}, always an integer power.
pub fn drive(model: &WarpModel, p: &FlowParams, r: f64, cos_phi: f64) -> f64 {
    (p.c * model.eval(r).chi * cos_phi).powi(p.q())
}

fn check_phase_space(p: &FlowParams, cos_phi: f64) -> Result<()> {
    if p.restricted_phase_space() && cos_phi < 0.0 {
        return Err(SolvError::Domain(format!(
            "cos φ = {cos_phi} < 0 is outside the phase space for m even, α = 1/m"
        )));
    }
    Ok(())
}

/// full_S − (cχ cos φ)^{1/α}.
pub fn soliton_residual(model: &WarpModel, p: &FlowParams, state: &PhaseState, phi_dot: f64) -> Result<f64> {
    let (_, c) = trig(state.phi);
    check_phase_space(p, c)?;
    Ok(full_s(model, p, state, phi_dot) - drive(model, p, state.r, c))
}

pub fn curvature_sample(model: &WarpModel, p: &FlowParams, state: &PhaseState, phi_dot: f64) -> Result<CurvatureSample> {
    let (kt, _) = principal_curvatures(model, state, phi_dot);
    curvature_from_kappa(model, p, state, kt)
}

/// Same as curvature_sample, given κ_τ instead of φ̇.
pub fn curvature_from_kappa(model: &WarpModel, p: &FlowParams, state: &PhaseState, kt: f64) -> Result<CurvatureSample> {
    let (sn, c) = trig(state.phi);
    let kth = model.xi_ratio(state.r) * sn;
    let b2 = p.b2();
    let rest = if b2 == 0.0 { 0.0 } else { b2 * kth };
    let s = kth.powi(p.m as i32 - 1) * (p.b1() * kt + rest);
    check_phase_space(p, c)?;
    Ok(CurvatureSample {
        kappa_tau: kt,
        kappa_theta: kth,
        mean_curvature: s,
        residual: s - drive(model, p, state.r, c),
    })
}
