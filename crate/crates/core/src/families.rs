//! Soliton families: single and two-branch profile assemblies, symmetry maps,
//! height profiles and the m = n thresholds.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::ambient::WarpModel;
use crate::angle::{trig, Quadrant};
use crate::curvature::{curvature_from_kappa, Alpha, FlowParams};
use crate::error::{Result, SolvError};
use crate::integrate::{
    make_sample, trace_bowl, trace_from_axis, trace_from_pole, trace_orbit, Direction, EndpointClass, Limits, Orbit,
    Sample, BOWL_EPS, RESIDUAL_TOL,
};
use crate::oracle::parallel_separable;
use crate::phase::{phi_dot_raw, PhaseState};

/// Resolution of threshold bisections.
pub const THRESHOLD_TOL: f64 = 1e-6;
pub const JUNCTION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum Family {
    Bowl,
    C1 { r0: f64 },
    C2 { r0: f64 },
    C3 { r1: f64 },
    C4 { r1: f64 },
    C1n { phi0: f64 },
    C3n { phi0: f64 },
    C4n { phi0: f64 },
    ParallelCylinder { r: f64 },
    ParallelBowl,
    ParallelC0 { r0: f64 },
    ParallelConic { phi0: f64 },
    ParallelAnnulus { r0: f64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Bowl => "Bowl",
            Family::C1 { .. } => "C1",
            Family::C2 { .. } => "C2",
            Family::C3 { .. } => "C3",
            Family::C4 { .. } => "C4",
            Family::C1n { .. } => "C1n",
            Family::C3n { .. } => "C3n",
            Family::C4n { .. } => "C4n",
            Family::ParallelCylinder { .. } => "ParallelCylinder",
            Family::ParallelBowl => "ParallelBowl",
            Family::ParallelC0 { .. } => "ParallelC0",
            Family::ParallelConic { .. } => "ParallelConic",
            Family::ParallelAnnulus { .. } => "ParallelAnnulus",
        }
    }
}

/// Parallel-model family request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParallelSpec {
    Cylinder { r: f64 },
    Bowl,
    C0 { r0: f64 },
    Conic { phi0: f64 },
    Annulus { r0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub r: f64,
    pub phi: f64,
    pub s: f64,
    /// Tangent to the horizontal slice there.
    pub tangent: bool,
    /// Perpendicular to the horizontal slice there.
    pub orthogonal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocusKind {
    /// Boundary where the profile meets a slice tangentially.
    TangentBoundary,
    /// Boundary meeting a slice perpendicularly.
    PerpendicularBoundary,
    /// Interior circle where the surface is only C¹.
    C2Singular,
    /// Cone point on the rotation axis.
    ConePoint,
    /// Neck where ⟨X, N⟩ = 0.
    Neck,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Locus {
    pub kind: LocusKind,
    pub r: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionFit {
    pub coeff: f64,
    pub expected: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub r0: Option<f64>,
    pub rn: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Soliton {
    pub family: Family,
    pub params: FlowParams,
    pub branches: Vec<Orbit>,
    pub junction: Option<Junction>,
    pub regularity: Vec<Locus>,
    pub thresholds: Thresholds,
    pub expansion_fit: Option<ExpansionFit>,
}

impl Soliton {
    fn new(family: Family, params: FlowParams, branches: Vec<Orbit>) -> Self {
        Soliton {
            family,
            params,
            branches,
            junction: None,
            regularity: Vec::new(),
            thresholds: Thresholds::default(),
            expansion_fit: None,
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.branches.iter().map(|b| b.max_residual).fold(0.0, f64::max)
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.branches.iter().flat_map(|b| b.samples.iter())
    }

    /// Shifts every height so the minimum is 0.
    fn normalize(&mut self) {
        let min = self.samples().map(|s| s.state.s).fold(f64::INFINITY, f64::min);
        if !min.is_finite() {
            return;
        }
        for b in &mut self.branches {
            for s in &mut b.samples {
                s.state.s -= min;
            }
        }
        if let Some(j) = &mut self.junction {
            j.s -= min;
        }
        for l in &mut self.regularity {
            l.s -= min;
        }
    }
}

fn require_even(p: &FlowParams, what: &str) -> Result<()> {
    if p.m_even() {
        Ok(())
    } else {
        Err(SolvError::Parity(format!("{what} needs m even, got m = {}", p.m)))
    }
}

fn require_odd(p: &FlowParams, what: &str) -> Result<()> {
    if p.m_even() {
        Err(SolvError::Parity(format!("{what} needs m odd, got m = {}", p.m)))
    } else {
        Ok(())
    }
}

/// Least-squares s ≈ a0 + a1 r + a2 r², returning a2.
fn quadratic_fit(pts: &[(f64, f64)]) -> f64 {
    let mut m = [[0.0f64; 3]; 3];
    let mut v = [0.0f64; 3];
    for &(r, s) in pts {
        let basis = [1.0, r, r * r];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            v[i] += basis[i] * s;
        }
    }
    // Cramer's rule on the 3×3 normal equations.
    let det = |a: &[[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let mut m2 = m;
    for i in 0..3 {
        m2[i][2] = v[i];
    }
    det(&m2) / det(&m)
}

/// Bowl expansion fit of s − s0 against r on (0, r_fit].
pub fn bowl_fit(model: &WarpModel, orbit: &Orbit, p: &FlowParams, r_fit: f64) -> Result<ExpansionFit> {
    let s0 = orbit.samples.first().map(|s| s.state.s).unwrap_or(0.0);
    let pts: Vec<(f64, f64)> = (1..=50)
        .filter_map(|k| {
            let r = r_fit * k as f64 / 50.0;
            orbit.s_at(model, r).map(|s| (r, s - s0))
        })
        .collect();
    if pts.len() < 10 {
        return Err(SolvError::Numerical("bowl orbit too short for the expansion fit".into()));
    }
    let coeff = quadratic_fit(&pts);
    let expected = 0.5 * p.bowl_slope();
    Ok(ExpansionFit { coeff, expected, rel_err: (coeff / expected - 1.0).abs() })
}

pub fn build_bowl(model: &WarpModel, p: &FlowParams, limits: &Limits) -> Result<Soliton> {
    let orbit = trace_bowl(model, p, BOWL_EPS, limits)?;
    let fit = bowl_fit(model, &orbit, p, 0.05_f64.min(0.5 * orbit.last().map(|s| s.r).unwrap_or(0.0)))?;
    let family = if model.is_parallel() && p.m == p.n { Family::ParallelBowl } else { Family::Bowl };
    let mut sol = Soliton::new(family, *p, vec![orbit]);
    sol.expansion_fit = Some(fit);
    sol.normalize();
    Ok(sol)
}

fn boundary_locus(orbit: &Orbit, kind: LocusKind) -> Option<Locus> {
    orbit.first().map(|s| Locus { kind, r: s.r, s: s.s })
}

pub fn build_c1(model: &WarpModel, p: &FlowParams, r0: f64, limits: &Limits) -> Result<Soliton> {
    require_even(p, "C1")?;
    let orbit = trace_from_axis(model, p, r0, Quadrant::Q1, limits)?;
    let mut sol = Soliton::new(Family::C1 { r0 }, *p, vec![orbit]);
    sol.regularity.extend(boundary_locus(&sol.branches[0], LocusKind::TangentBoundary));
    sol.junction = Some(Junction { r: r0, phi: 0.0, s: 0.0, tangent: true, orthogonal: false });
    sol.thresholds.r0 = Some(r0);
    sol.normalize();
    Ok(sol)
}

/// τ-direction leaving a vertical point (r, ±π/2) toward the requested sign of dφ.
fn vertical_direction(model: &WarpModel, p: &FlowParams, r: f64, phi: f64, dphi_sign: f64) -> Result<Direction> {
    let pd = phi_dot_raw(model, p, r, phi);
    if pd == 0.0 || !pd.is_finite() {
        return Err(SolvError::Domain(format!("(r={r}, φ={phi}) is an equilibrium of the profile system")));
    }
    Ok(if pd * dphi_sign > 0.0 { Direction::Forward } else { Direction::Backward })
}

pub fn build_c2(model: &WarpModel, p: &FlowParams, r0: f64, limits: &Limits) -> Result<Soliton> {
    require_even(p, "C2")?;
    if p.alpha != Alpha::InverseM {
        return Err(SolvError::InvalidParams("C2 needs α = 1/m".into()));
    }
    let start = PhaseState::new(r0, FRAC_PI_2);
    let d = vertical_direction(model, p, r0, FRAC_PI_2, -1.0)?;
    let orbit = trace_orbit(model, p, &start, d, limits)?;
    let mut sol = Soliton::new(Family::C2 { r0 }, *p, vec![orbit]);
    sol.regularity.extend(boundary_locus(&sol.branches[0], LocusKind::PerpendicularBoundary));
    sol.junction = Some(Junction { r: r0, phi: FRAC_PI_2, s: 0.0, tangent: false, orthogonal: true });
    sol.thresholds.r0 = Some(r0);
    sol.normalize();
    Ok(sol)
}

fn shift_s(orbit: &mut Orbit, ds: f64) {
    for s in &mut orbit.samples {
        s.state.s += ds;
    }
}

/// Joins `first` (ending on the axis) and `second` (starting there).
fn join(first: &Orbit, second: &mut Orbit) -> Result<Junction> {
    let a = first.last().ok_or_else(|| SolvError::Numerical("empty branch".into()))?;
    let b = *second.first().ok_or_else(|| SolvError::Numerical("empty branch".into()))?;
    shift_s(second, a.s - b.s);
    let b = second.first().expect("nonempty");
    let dphi = (a.phi - b.phi).rem_euclid(2.0 * PI);
    let dphi = dphi.min(2.0 * PI - dphi);
    if (a.r - b.r).abs() > JUNCTION_TOL * a.r.max(1.0) || dphi > JUNCTION_TOL || (a.s - b.s).abs() > JUNCTION_TOL {
        return Err(SolvError::Numerical(format!(
            "branches meet at (r={}, φ={}) and (r={}, φ={})",
            a.r, a.phi, b.r, b.phi
        )));
    }
    Ok(Junction { r: a.r, phi: a.phi, s: a.s, tangent: true, orthogonal: false })
}

/// Threshold error for m = n when a branch runs into the pole instead of the axis.
fn threshold_err(r: f64, what: &str) -> SolvError {
    SolvError::Threshold { r0: r, detail: format!("{what} ends at the pole instead of the rotation axis") }
}

/// 𝒞³ through the perpendicular point (r1, −π/2), m odd.
pub fn build_c3(model: &WarpModel, p: &FlowParams, r1: f64, limits: &Limits) -> Result<Soliton> {
    require_odd(p, "C3")?;
    let start = PhaseState::new(r1, -FRAC_PI_2);
    let d = vertical_direction(model, p, r1, -FRAC_PI_2, 1.0)?;
    let q4 = trace_orbit(model, p, &start, d, limits)?;
    let r0 = match q4.end_event {
        EndpointClass::AxisEndpoint { r, .. } => r,
        EndpointClass::PoleEndpoint { .. } => return Err(threshold_err(r1, "Q4 trace")),
        other => {
            return Err(SolvError::Numerical(format!("Q4 trace ended with {} before the axis", other.name())))
        }
    };
    let q3 = trace_orbit(model, p, &start, d.flip(), limits)?;
    let mut q1 = trace_from_axis(model, p, r0, Quadrant::Q1, limits)?;
    let junction = join(&q4, &mut q1)?;
    // Branch A runs Q3 → (r1, −π/2) → Q4 → axis.
    let mut a = reverse_orbit(&q3);
    a.samples.extend(q4.samples.iter().skip(1).copied());
    a.end_event = q4.end_event;
    a.crossings.extend(q4.crossings.iter().copied());
    a.recompute_history();
    let mut sol = Soliton::new(Family::C3 { r1 }, *p, vec![a, q1]);
    sol.junction = Some(junction);
    sol.regularity.push(Locus { kind: LocusKind::C2Singular, r: r0, s: junction.s });
    sol.regularity.push(Locus { kind: LocusKind::Neck, r: r1, s: 0.0 });
    sol.thresholds.r0 = Some(r0);
    sol.normalize();
    Ok(sol)
}

/// 𝒞³ requested by its axis radius: traces the Q4 axis germ to the vertical point.
pub fn build_c3_from_axis(model: &WarpModel, p: &FlowParams, r0: f64, limits: &Limits) -> Result<Soliton> {
    require_odd(p, "C3")?;
    let lim = Limits { stop_at_vertical: true, ..*limits };
    let o = trace_from_axis(model, p, r0, Quadrant::Q4, &lim)?;
    match o.end_event {
        EndpointClass::VerticalCrossing { r, .. } => build_c3(model, p, r, limits),
        EndpointClass::PoleEndpoint { .. } => Err(threshold_err(r0, "Q4 axis orbit")),
        other => Err(SolvError::Numerical(format!("Q4 axis orbit ended with {}", other.name()))),
    }
}

/// 𝒞⁴ through the neck (r1, π/2), m even and α = 1.
pub fn build_c4(model: &WarpModel, p: &FlowParams, r1: f64, limits: &Limits) -> Result<Soliton> {
    require_even(p, "C4")?;
    if p.alpha != Alpha::One {
        return Err(SolvError::InvalidParams("C4 needs α = 1".into()));
    }
    let start = PhaseState::new(r1, FRAC_PI_2);
    let d = vertical_direction(model, p, r1, FRAC_PI_2, 1.0)?;
    let q2 = trace_orbit(model, p, &start, d, limits)?;
    let r0 = match q2.end_event {
        EndpointClass::AxisEndpoint { r, .. } => r,
        EndpointClass::PoleEndpoint { .. } => return Err(threshold_err(r1, "Q2 trace")),
        other => {
            return Err(SolvError::Numerical(format!("Q2 trace ended with {} before the axis", other.name())))
        }
    };
    let q1 = trace_orbit(model, p, &start, d.flip(), limits)?;
    let mut a = reverse_orbit(&q1);
    a.samples.extend(q2.samples.iter().skip(1).copied());
    a.end_event = q2.end_event;
    a.recompute_history();
    let tip = a.last().copied().expect("nonempty");
    let mut sol = Soliton::new(Family::C4 { r1 }, *p, vec![a]);
    sol.junction = Some(Junction { r: r1, phi: FRAC_PI_2, s: 0.0, tangent: false, orthogonal: true });
    sol.regularity.push(Locus { kind: LocusKind::Neck, r: r1, s: 0.0 });
    sol.regularity.push(Locus { kind: LocusKind::C2Singular, r: r0, s: tip.s });
    sol.thresholds.r0 = Some(r0);
    sol.normalize();
    Ok(sol)
}

/// Conic solitons from the pole, m = n.
pub fn build_conic(model: &WarpModel, p: &FlowParams, phi0: f64, limits: &Limits) -> Result<Soliton> {
    if p.m != p.n {
        return Err(SolvError::Domain(format!("no conic solitons for m = {} < n = {}", p.m, p.n)));
    }
    let family = if model.is_parallel() {
        Family::ParallelConic { phi0 }
    } else {
        let even_one = p.m_even() && p.alpha == Alpha::One;
        if phi0 > 0.0 && phi0 < FRAC_PI_2 {
            Family::C1n { phi0 }
        } else if !p.m_even() && phi0 > FRAC_PI_2 && phi0 < PI {
            Family::C3n { phi0 }
        } else if even_one && phi0 >= FRAC_PI_2 && phi0 < PI {
            Family::C4n { phi0 }
        } else {
            return Err(SolvError::Domain(format!(
                "pole angle {phi0} outside the conic families for m = {}, α = {}",
                p.m,
                p.alpha_value()
            )));
        }
    };
    let orbit = trace_from_pole(model, p, phi0, limits)?;
    let mut sol = Soliton::new(family, *p, vec![orbit]);
    sol.regularity.push(Locus { kind: LocusKind::ConePoint, r: 0.0, s: 0.0 });
    if let EndpointClass::AxisEndpoint { r, .. } = sol.branches[0].end_event {
        sol.thresholds.r0 = Some(r);
        let s = sol.branches[0].last().map(|x| x.s).unwrap_or(0.0);
        sol.regularity.push(Locus { kind: LocusKind::TangentBoundary, r, s });
    }
    sol.normalize();
    Ok(sol)
}

/// Parallel-model families (χ ≡ 1, m = n), cross-checked against the separable solution.
pub fn build_parallel(model: &WarpModel, p: &FlowParams, spec: ParallelSpec, limits: &Limits) -> Result<Soliton> {
    if !model.is_parallel() {
        return Err(SolvError::InvalidModel("parallel families need χ ≡ 1".into()));
    }
    if p.m != p.n {
        return Err(SolvError::InvalidParams("parallel families need m = n".into()));
    }
    let sol = match spec {
        ParallelSpec::Cylinder { r } => {
            if !(r > 0.0) {
                return Err(SolvError::Domain(format!("cylinder radius {r} must be positive")));
            }
            let st = PhaseState::new(r, FRAC_PI_2);
            let sample = make_sample(model, p, st)?;
            let mut o = trace_orbit(model, p, &st, Direction::Forward, limits)?;
            o.samples = vec![sample];
            o.end_event = EndpointClass::PoleEquilibrium { r, phi: FRAC_PI_2 };
            o.recompute_history();
            Soliton::new(Family::ParallelCylinder { r }, *p, vec![o])
        }
        ParallelSpec::Bowl => build_bowl(model, p, limits)?,
        ParallelSpec::C0 { r0 } => {
            let o = trace_from_axis(model, p, r0, Quadrant::Q1, limits)?;
            separable_check(model, p, &o, r0, 0.0)?;
            let mut s = Soliton::new(Family::ParallelC0 { r0 }, *p, vec![o]);
            s.regularity.extend(boundary_locus(&s.branches[0], LocusKind::TangentBoundary));
            s.thresholds.r0 = Some(r0);
            s
        }
        ParallelSpec::Conic { phi0 } => build_conic(model, p, phi0, limits)?,
        ParallelSpec::Annulus { r0 } => {
            let o = trace_from_axis(model, p, r0, Quadrant::Q2, limits)?;
            separable_check(model, p, &o, r0, PI)?;
            let mut s = Soliton::new(Family::ParallelAnnulus { r0 }, *p, vec![o]);
            s.regularity.extend(boundary_locus(&s.branches[0], LocusKind::TangentBoundary));
            s.thresholds.r0 = Some(r0);
            s
        }
    };
    let mut sol = sol;
    sol.normalize();
    Ok(sol)
}

/// Compares r along a traced orbit with the separable closed form on the first quadrant span.
fn separable_check(model: &WarpModel, p: &FlowParams, o: &Orbit, r0: f64, phi_axis: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in o.samples.iter().skip(1) {
        let phi = s.state.phi;
        // Fold Q2 angles back onto (0, π/2): the system is symmetric under φ ↦ π − φ up to time reversal.
        let folded = if phi_axis == PI { PI - phi } else { phi };
        if !(folded > 1e-6 && folded < FRAC_PI_2 - 1e-3) {
            if folded >= FRAC_PI_2 - 1e-3 {
                break;
            }
            continue;
        }
        let r = parallel_separable(model, p.n, p.alpha, p.c, r0, 0.0, folded)?;
        worst = worst.max((r - s.state.r).abs() / r.max(1.0));
    }
    if worst > 1e-6 {
        return Err(SolvError::Numerical(format!("separable cross-check off by {worst:e}")));
    }
    Ok(worst)
}

/// (φ, r, s) along the orbit; s is carried through every chart as ∫ sin φ/χ dτ.
pub fn height_profile(orbit: &Orbit) -> Vec<(f64, f64, f64)> {
    orbit.samples.iter().map(|s| (s.state.phi, s.state.r, s.state.s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symmetry {
    /// (r, φ, s) ↦ (r, −φ, −s), for m even.
    Reflection,
    /// (r, φ, s)(τ) ↦ (r, φ + π, s)(−τ), for m odd.
    Reversion,
}

fn remap(model: &WarpModel, p: &FlowParams, s: &Sample, state: PhaseState) -> Result<Sample> {
    if trig(state.phi).0 == 0.0 || !s.phi_dot.is_finite() {
        return make_sample(model, p, state);
    }
    // Both maps reverse the sign of dφ/dτ.
    let pd = -s.phi_dot;
    let curv = curvature_from_kappa(model, p, &state, -s.curv.kappa_tau)?;
    Ok(Sample { state, phi_dot: pd, curv })
}

fn reverse_orbit(o: &Orbit) -> Orbit {
    let mut out = o.clone();
    out.samples.reverse();
    out.start_event = Some(o.end_event);
    out.end_event = o.start_event.unwrap_or(EndpointClass::BudgetExhausted);
    out
}

fn map_event(e: EndpointClass, f: &dyn Fn(f64) -> f64) -> EndpointClass {
    match e {
        EndpointClass::AxisEndpoint { r, phi } => EndpointClass::AxisEndpoint { r, phi: f(phi) },
        EndpointClass::VerticalCrossing { r, phi } => EndpointClass::VerticalCrossing { r, phi: f(phi) },
        EndpointClass::PoleEndpoint { phi } => EndpointClass::PoleEndpoint { phi: f(phi) },
        EndpointClass::PoleEquilibrium { r, phi } => EndpointClass::PoleEquilibrium { r, phi: f(phi) },
        EndpointClass::EscapeToInfinity { phi } => EndpointClass::EscapeToInfinity { phi: f(phi) },
        EndpointClass::BudgetExhausted => EndpointClass::BudgetExhausted,
    }
}

/// Applies a symmetry and re-evaluates every residual on the image.
pub fn apply_symmetry(model: &WarpModel, sol: &Soliton, map: Symmetry) -> Result<Soliton> {
    let p = &sol.params;
    match map {
        Symmetry::Reflection => require_even(p, "reflection")?,
        Symmetry::Reversion => require_odd(p, "reversion")?,
    }
    let mut out = sol.clone();
    for b in &mut out.branches {
        match map {
            Symmetry::Reflection => {
                let f = |x: f64| -x;
                for s in &mut b.samples {
                    let st = PhaseState { phi: -s.state.phi, s: -s.state.s, ..s.state };
                    *s = remap(model, p, s, st)?;
                }
                b.start_event = b.start_event.map(|e| map_event(e, &f));
                b.end_event = map_event(b.end_event, &f);
                b.crossings = b.crossings.iter().map(|&e| map_event(e, &f)).collect();
            }
            Symmetry::Reversion => {
                let mean = b.samples.iter().map(|s| s.state.phi).sum::<f64>() / b.samples.len().max(1) as f64;
                let shift = if mean <= 0.0 { PI } else { -PI };
                let f = move |x: f64| x + shift;
                let mut rev = reverse_orbit(b);
                for s in &mut rev.samples {
                    let st = PhaseState { phi: s.state.phi + shift, tau: -s.state.tau, ..s.state };
                    *s = remap(model, p, s, st)?;
                }
                rev.start_event = rev.start_event.map(|e| map_event(e, &f));
                rev.end_event = map_event(rev.end_event, &f);
                rev.crossings = b.crossings.iter().rev().map(|&e| map_event(e, &f)).collect();
                *b = rev;
            }
        }
        b.recompute_history();
    }
    if map == Symmetry::Reversion {
        out.branches.reverse();
    }
    if let Some(j) = &mut out.junction {
        match map {
            Symmetry::Reflection => {
                j.phi = -j.phi;
                j.s = -j.s;
            }
            Symmetry::Reversion => j.phi += if j.phi <= 0.0 { PI } else { -PI },
        }
    }
    if map == Symmetry::Reflection {
        for l in &mut out.regularity {
            l.s = -l.s;
        }
    }
    out.normalize();
    Ok(out)
}

/// Endpoint radius r0(β) of the pole orbit with angle β, for m = n.
pub fn pole_axis_radius(model: &WarpModel, p: &FlowParams, beta: f64, limits: &Limits) -> Result<f64> {
    let o = trace_from_pole(model, p, beta, limits)?;
    match o.end_event {
        EndpointClass::AxisEndpoint { r, .. } => Ok(r),
        other => Err(SolvError::Threshold {
            r0: f64::NAN,
            detail: format!("pole orbit at β = {beta} ended with {}", other.name()),
        }),
    }
}

/// Estimate of the m = n threshold: r0(β) sampled as β approaches the vertical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    /// (β, r0(β)) with β increasing.
    pub samples: Vec<(f64, f64)>,
    pub monotone_decreasing: bool,
    pub limit: f64,
}

/// Samples r0(β) for β = v + side·2^{−k}, where v = ±π/2 is the vertical the
/// pole angles approach, and extrapolates the limit.
pub fn estimate_threshold(model: &WarpModel, p: &FlowParams, vertical: f64, side: f64, limits: &Limits) -> Result<ThresholdEstimate> {
    if p.m != p.n {
        return Err(SolvError::InvalidParams("thresholds exist only for m = n".into()));
    }
    let mut samples = Vec::new();
    for k in 1..=12 {
        let beta = vertical + side * 0.5f64.powi(k) * FRAC_PI_2;
        samples.push((beta, pole_axis_radius(model, p, beta, limits)?));
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone_decreasing = samples.windows(2).all(|w| w[1].1 < w[0].1);
    // The samples nearest the vertical are geometrically spaced; Aitken extrapolation.
    let near: Vec<f64> = if side > 0.0 {
        samples.iter().take(3).map(|x| x.1).collect()
    } else {
        samples.iter().rev().take(3).map(|x| x.1).collect()
    };
    let (a, b, c) = (near[2], near[1], near[0]);
    let den = a - 2.0 * b + c;
    let limit = if den.abs() > 1e-14 { c - (c - b).powi(2) / (c - 2.0 * b + a) } else { c };
    Ok(ThresholdEstimate { samples, monotone_decreasing, limit })
}

/// Pole angle β whose orbit ends on the axis at r0, by bisection on the endpoint radius.
pub fn pole_angle_for(model: &WarpModel, p: &FlowParams, r0: f64, lo: f64, hi: f64, limits: &Limits) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let ra = pole_axis_radius(model, p, a, limits)?;
    let rb = pole_axis_radius(model, p, b, limits)?;
    if (ra - r0) * (rb - r0) > 0.0 {
        return Err(SolvError::Threshold { r0, detail: format!("axis radius outside [{rb}, {ra}]") });
    }
    while b - a > THRESHOLD_TOL {
        let m = 0.5 * (a + b);
        let rm = pole_axis_radius(model, p, m, limits)?;
        if (rm - r0) * (ra - r0) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Residual tolerance used for every build.
pub fn residual_ok(sol: &Soliton) -> bool {
    sol.max_residual() <= RESIDUAL_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::tau_field_raw;
    use approx::assert_relative_eq;

    fn fp(n: u32, m: u32, alpha: Alpha) -> FlowParams {
        FlowParams::new(n, m, alpha, 1.0).unwrap()
    }

    #[test]
    fn bowl_coefficient_and_convexity() {
        let e = WarpModel::euclidean();
        let p = fp(3, 2, Alpha::InverseM);
        let b = build_bowl(&e, &p, &Limits::with_r_max(10.0)).unwrap();
        let fit = b.expansion_fit.unwrap();
        assert_relative_eq!(fit.expected, 0.288675, max_relative = 1e-5);
        assert!(fit.rel_err < 0.01, "{fit:?}");
        assert!(residual_ok(&b));
        let o = &b.branches[0];
        for s in &o.samples[1..o.len() - 1] {
            assert!(s.curv.kappa_tau > 0.0 && s.curv.kappa_theta > 0.0);
        }
        assert!(o.samples.windows(2).all(|w| w[1].state.s >= w[0].state.s));
    }

    #[test]
    fn parallel_bowls() {
        let e = WarpModel::euclidean();
        let lim = Limits { s_max: 1e3, ..Limits::with_r_max(200.0) };
        let a1 = build_parallel(&e, &fp(2, 2, Alpha::One), ParallelSpec::Bowl, &lim).unwrap();
        let r_end = a1.branches[0].last().unwrap().r;
        assert!(r_end < 10.0, "α = 1 bowl asymptotes a cylinder, reached r = {r_end}");
        let ah = build_parallel(&e, &fp(2, 2, Alpha::InverseM), ParallelSpec::Bowl, &Limits::with_r_max(6.0)).unwrap();
        // s′ = (e^{c²r²} − 1)^{1/2} stays finite: the graph reaches any radius.
        assert_relative_eq!(ah.branches[0].last().unwrap().r, 6.0, max_relative = 1e-9);
    }

    #[test]
    fn c1_c2_boundaries() {
        let h = WarpModel::hyperbolic();
        let p = fp(3, 2, Alpha::InverseM);
        let lim = Limits::with_r_max(8.0);
        let c1 = build_c1(&h, &p, 1.0, &lim).unwrap();
        assert_eq!(c1.branches[0].first().unwrap().phi, 0.0);
        assert!(c1.junction.unwrap().tangent);
        assert!(residual_ok(&c1));
        let c2 = build_c2(&h, &p, 1.0, &lim).unwrap();
        let first = c2.branches[0].first().unwrap();
        assert_eq!(first.phi, FRAC_PI_2);
        assert!(trig(first.phi).1 * h.eval(first.r).chi == 0.0);
        assert!(c2.branches[0].samples[1..].iter().all(|s| trig(s.state.phi).1 > 0.0));
        assert!(matches!(build_c1(&h, &fp(3, 3, Alpha::One), 1.0, &lim), Err(SolvError::Parity(_))));
    }

    #[test]
    fn c1_small_r0_approaches_bowl() {
        let e = WarpModel::euclidean();
        let p = fp(3, 2, Alpha::InverseM);
        let lim = Limits::with_r_max(3.0);
        let bowl = build_bowl(&e, &p, &lim).unwrap();
        let c1 = build_c1(&e, &p, 1e-4, &lim).unwrap();
        for r in [0.5, 1.0, 2.0] {
            let yb = bowl.branches[0].y_at(r).unwrap();
            let yc = c1.branches[0].y_at(r).unwrap();
            assert!((yb - yc).abs() < 1e-3, "r={r}: {yb} vs {yc}");
        }
    }

    #[test]
    fn c3_two_branches() {
        let e = WarpModel::euclidean();
        let p = fp(4, 3, Alpha::One);
        let sol = build_c3(&e, &p, 1.0, &Limits::with_r_max(20.0)).unwrap();
        let r0 = sol.thresholds.r0.unwrap();
        assert!(r0 > 1.0);
        assert_eq!(sol.branches.len(), 2);
        let a = sol.branches[0].last().unwrap();
        let b = sol.branches[1].first().unwrap();
        assert!((a.r - b.r).abs() < JUNCTION_TOL && (a.s - b.s).abs() < JUNCTION_TOL);
        assert!(residual_ok(&sol));
        let min = sol.samples().map(|s| s.state.s).fold(f64::INFINITY, f64::min);
        assert_eq!(min, 0.0);
        let twin = apply_symmetry(&e, &sol, Symmetry::Reversion).unwrap();
        assert!(residual_ok(&twin));
        let back = apply_symmetry(&e, &twin, Symmetry::Reversion).unwrap();
        for (x, y) in back.samples().zip(sol.samples()) {
            assert!((x.state.phi - y.state.phi).abs() < 1e-12 && x.state.r == y.state.r);
            assert!((x.state.s - y.state.s).abs() < 1e-9);
        }
    }

    #[test]
    fn c4_neck_and_tip() {
        let e = WarpModel::euclidean();
        let p = fp(3, 2, Alpha::One);
        let sol = build_c4(&e, &p, 1.0, &Limits::with_r_max(20.0)).unwrap();
        let r0 = sol.thresholds.r0.unwrap();
        assert!(r0 > 1.0);
        let b = &sol.branches[0];
        assert!((b.last().unwrap().phi - PI).abs() < 1e-12);
        // ⟨∂_r, N⟩ = −sin φ ≤ 0 in the profile's orientation.
        assert!(b.samples.iter().all(|s| trig(s.state.phi).0 >= -1e-12));
        assert!(residual_ok(&sol));
        let refl = apply_symmetry(&e, &sol, Symmetry::Reflection).unwrap();
        assert!(residual_ok(&refl));
        let back = apply_symmetry(&e, &refl, Symmetry::Reflection).unwrap();
        for (x, y) in back.samples().zip(sol.samples()) {
            assert_eq!(x.state.phi, y.state.phi);
            assert!((x.state.s - y.state.s).abs() < 1e-9);
        }
        assert!(matches!(apply_symmetry(&e, &sol, Symmetry::Reversion), Err(SolvError::Parity(_))));
    }

    #[test]
    fn reflected_c1_in_q4() {
        let e = WarpModel::euclidean();
        let p = fp(3, 2, Alpha::One);
        let c1 = build_c1(&e, &p, 1.0, &Limits::with_r_max(5.0)).unwrap();
        let r = apply_symmetry(&e, &c1, Symmetry::Reflection).unwrap();
        assert_eq!(r.branches[0].quadrant_history, vec![Quadrant::Q4]);
        assert_eq!(r.branches[0].first().unwrap().phi, 0.0);
    }

    #[test]
    fn conic_radius_decreasing() {
        let h = WarpModel::hyperbolic();
        let p = fp(2, 2, Alpha::One);
        let lim = Limits::with_r_max(20.0);
        let mut last = f64::INFINITY;
        for phi0 in [1.7, 2.0, 2.4, 2.8] {
            let sol = build_conic(&h, &p, phi0, &lim).unwrap();
            assert!(matches!(sol.family, Family::C4n { .. }));
            let r0 = sol.thresholds.r0.unwrap();
            assert!(r0 < last);
            last = r0;
            // s′(r0) = tan π = 0 at the far endpoint.
            assert_eq!(trig(sol.branches[0].last().unwrap().phi).0, 0.0);
        }
        let eq = build_conic(&h, &p, FRAC_PI_2, &lim).unwrap();
        assert!(eq.branches[0].is_empty());
        assert!(build_conic(&h, &fp(3, 2, Alpha::One), 1.0, &lim).is_err());
    }

    #[test]
    fn parallel_cylinder_and_separable() {
        let e = WarpModel::euclidean();
        let p = fp(2, 2, Alpha::One);
        let lim = Limits::with_r_max(5.0);
        let cyl = build_parallel(&e, &p, ParallelSpec::Cylinder { r: 2.0 }, &lim).unwrap();
        assert_eq!(cyl.max_residual(), 0.0);
        let f = tau_field_raw(&e, &p, 2.0, FRAC_PI_2);
        assert!(f.dr.abs() + f.dphi.abs() <= 1e-14);
        let c0 = build_parallel(&e, &p, ParallelSpec::C0 { r0: 1.0 }, &lim).unwrap();
        for s in &c0.branches[0].samples {
            if trig(s.state.phi).1 <= 0.0 {
                break;
            }
            let lhs = 0.5 * (s.state.r * s.state.r - 1.0);
            assert!((lhs - (1.0 - s.state.phi.cos())).abs() <= 1e-8);
        }
        assert!(build_parallel(&WarpModel::hyperbolic(), &p, ParallelSpec::Bowl, &lim).is_err());
    }

    #[test]
    fn parallel_odd_q4_never_vertical() {
        let e = WarpModel::euclidean();
        let p = fp(3, 3, Alpha::InverseM);
        let lim = Limits { stop_at_vertical: true, ..Limits::with_r_max(50.0) };
        let o = trace_from_axis(&e, &p, 1.0, Quadrant::Q4, &lim).unwrap();
        assert!(!matches!(o.end_event, EndpointClass::VerticalCrossing { .. }), "{:?}", o.end_event);
    }

    #[test]
    fn height_profile_matches_expansion() {
        let e = WarpModel::euclidean();
        let p = fp(4, 2, Alpha::One);
        let b = build_bowl(&e, &p, &Limits::with_r_max(2.0)).unwrap();
        let k = 0.5 * p.bowl_slope();
        for (_, r, s) in height_profile(&b.branches[0]) {
            if r > 0.0 && r < 0.02 {
                assert!((s / (r * r) - k).abs() < 1e-3 * k);
            }
            assert!(s >= 0.0);
        }
    }

    #[test]
    fn hyperbolic_threshold_rn() {
        let h = WarpModel::hyperbolic();
        let p = fp(3, 3, Alpha::One);
        let lim = Limits::with_r_max(30.0);
        let est = estimate_threshold(&h, &p, -FRAC_PI_2, 1.0, &lim).unwrap();
        assert!(est.monotone_decreasing);
        assert!(est.limit > 0.0);
        let below = build_c3_from_axis(&h, &p, 0.9 * est.limit, &lim);
        assert!(matches!(below, Err(SolvError::Threshold { .. })), "{below:?}");
        let above = build_c3_from_axis(&h, &p, 1.1 * est.limit, &lim).unwrap();
        assert!(residual_ok(&above));
    }
}
