//! Large-r behaviour of Γ(r) and the decay of Q₁ orbits onto it.

use serde::{Deserialize, Serialize};

use crate::ambient::{AsymptoticClass, WarpModel};
use crate::angle::trig;
use crate::curvature::{cyl_sm, FlowParams};
use crate::error::{Result, SolvError};
use crate::integrate::Orbit;
use crate::phase::{f_inv, gamma};

/// Tail radius needed before decay statements are checked.
pub fn tail_threshold(class: &AsymptoticClass) -> f64 {
    match class {
        AsymptoticClass::Euclidean { .. } => 100.0,
        _ => 30.0,
    }
}

fn class_of(model: &WarpModel) -> Result<AsymptoticClass> {
    model
        .asymptotic_class()
        .ok_or_else(|| SolvError::ModelClass("ξ linear with non-constant χ has no tabulated Γ rate".into()))
}

/// S_∞ = [C(n−1,m−1)·lim χ′/χ + C(n−1,m)·lim ξ′/ξ]·(lim ξ′/ξ)^{m−1}.
pub fn s_infinity(model: &WarpModel, p: &FlowParams) -> f64 {
    let (xl, cl) = model.ratio_limits();
    (p.b1() * cl + p.b2() * xl) * xl.powi(p.m as i32 - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub r: f64,
    pub gamma: f64,
    /// Class-normalized Γ; tends to 1 (or to Γ_∞ for the product class).
    pub normalized: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub class: AsymptoticClass,
    pub s_infinity: f64,
    /// Value the normalized quantity is compared with.
    pub target: f64,
    pub points: Vec<RatePoint>,
}

impl RateReport {
    pub fn last_deviation(&self) -> f64 {
        self.points.last().map(|p| p.deviation).unwrap_or(f64::NAN)
    }
}

/// Normalized Γ on the given radii: Γ·cχ_∞·r^{mα} (Euclidean), Γ itself against
/// f⁻¹(S_∞/c^{1/α}) (product), Γ·c·e^{br}/S_∞^α (hyperbolic).
pub fn gamma_rate(model: &WarpModel, p: &FlowParams, r_list: &[f64]) -> Result<RateReport> {
    let class = class_of(model)?;
    if r_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SolvError::Domain("radii must be strictly increasing".into()));
    }
    let s_inf = s_infinity(model, p);
    let target = match class {
        AsymptoticClass::Product { .. } => f_inv(s_inf / p.c.powi(p.q()), p),
        _ => 1.0,
    };
    let points = r_list
        .iter()
        .map(|&r| {
            let g = gamma(model, p, r);
            let normalized = match class {
                AsymptoticClass::Euclidean { chi_infty } => g * p.c * chi_infty * r.powf(p.m_alpha()),
                AsymptoticClass::Product { .. } => g,
                AsymptoticClass::Hyperbolic { rate } => g * p.c * (rate * r).exp() / s_inf.powf(p.alpha_value()),
            };
            RatePoint { r, gamma: g, normalized, deviation: (normalized / target - 1.0).abs() }
        })
        .collect();
    Ok(RateReport { class, s_infinity: s_inf, target, points })
}

/// Weight h(r) in y(r) = Γ(r) + o(1/h(r)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Weight {
    /// h = r^{(m+δ)α}.
    Power { delta: f64 },
    /// h = e^{r^δ}.
    StretchedExp { delta: f64 },
    /// h = e^r, beyond the admissible range.
    Exp,
}

impl Weight {
    pub fn eval(&self, p: &FlowParams, r: f64) -> f64 {
        match *self {
            Weight::Power { delta } => r.powf((p.m as f64 + delta) * p.alpha_value()),
            Weight::StretchedExp { delta } => r.powf(delta).exp(),
            Weight::Exp => r.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub r: f64,
    pub y: f64,
    pub gamma: f64,
    pub weighted: f64,
    /// Admissibility quantity as displayed, and with the extra factor α.
    pub hypothesis: f64,
    pub hypothesis_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub class: AsymptoticClass,
    pub params: FlowParams,
    pub weight: Weight,
    pub samples: Vec<DecaySample>,
    /// sup |y − Γ|·h over [r_a, 2r_a] and over [r_b/2, r_b].
    pub first_sup: f64,
    pub last_sup: f64,
    /// sup |y − Γ| over the last window.
    pub tail_gap: f64,
    /// The weighted gap shrinks by at least 10 between the windows.
    pub monotone_tail: bool,
    /// The hypothesis quantity decreases toward 0 on the tail.
    pub admissible: bool,
    /// monotone_tail, asserted only when admissible.
    pub verdict: Option<bool>,
}

/// d/dr log(χ^{1/α}/S_m) by central differences.
fn log_drive_slope(model: &WarpModel, p: &FlowParams, r: f64) -> f64 {
    let d = 1e-5 * r.max(1.0);
    let g = |x: f64| p.q() as f64 * model.eval(x).chi.ln() - cyl_sm(model, p, x).ln();
    (g(r + d) - g(r - d)) / (2.0 * d)
}

/// Weighted distance from Γ along the Q₁ part of an orbit.
pub fn decay_check(model: &WarpModel, p: &FlowParams, orbit: &Orbit, weight: Weight) -> Result<DecayReport> {
    let class = class_of(model)?;
    let needed = tail_threshold(&class);
    let mut samples: Vec<DecaySample> = Vec::new();
    for s in &orbit.samples {
        let (sn, y) = trig(s.state.phi);
        let r = s.state.r;
        if !(r > 0.0 && sn > 0.0 && y > 0.0) {
            continue;
        }
        if samples.last().is_some_and(|l| r <= l.r) {
            continue;
        }
        let g = gamma(model, p, r);
        let h = weight.eval(p, r);
        let ma = p.m_alpha();
        let hyp = g * (1.0 - g * g) / (1.0 + g * g * (ma - 1.0)) * log_drive_slope(model, p, r) * h;
        samples.push(DecaySample {
            r,
            y,
            gamma: g,
            weighted: (y - g).abs() * h,
            hypothesis: hyp,
            hypothesis_alpha: p.alpha_value() * hyp,
        });
    }
    let reached = samples.last().map(|s| s.r).unwrap_or(0.0);
    if reached < needed {
        return Err(SolvError::TailTooShort { reached, needed });
    }
    let ra = samples[0].r;
    let sup = |lo: f64, hi: f64, f: &dyn Fn(&DecaySample) -> f64| {
        samples.iter().filter(|s| s.r >= lo && s.r <= hi).map(f).fold(0.0, f64::max)
    };
    let first_sup = sup(ra, 2.0 * ra, &|s| s.weighted);
    let last_sup = sup(reached / 2.0, reached, &|s| s.weighted);
    let tail_gap = sup(reached / 2.0, reached, &|s| (s.y - s.gamma).abs());
    let hyp_first = sup(ra, 2.0 * ra, &|s| s.hypothesis.abs());
    let tail: Vec<f64> =
        samples.iter().filter(|s| s.r >= reached / 2.0).map(|s| s.hypothesis.abs()).collect();
    let hyp_last = tail.iter().copied().fold(0.0, f64::max);
    let decreasing = tail.first().zip(tail.last()).is_some_and(|(a, b)| b < a);
    let admissible = !matches!(weight, Weight::Exp) && decreasing && hyp_last < hyp_first;
    let monotone_tail = last_sup * 10.0 <= first_sup;
    Ok(DecayReport {
        class,
        params: *p,
        weight,
        samples,
        first_sup,
        last_sup,
        tail_gap,
        monotone_tail,
        admissible,
        verdict: admissible.then_some(monotone_tail),
    })
}
