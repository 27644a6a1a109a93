//! Orbit tracing: adaptive stepping across the three charts, event location on
//! dense output, and regularized starts at the axis, the pole and the bowl tip.
//!
//! The τ-chart and the r(φ) chart use Dormand–Prince 5(4). Far-field tails
//! are stiff in y = cos φ (∂G/∂y grows like r^{2m−1} for α = 1 and
//! exponentially in the hyperbolic model), so the y(r) chart is advanced with
//! a three-stage Radau IIA step instead.

pub mod dopri;
pub mod radau;

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::ambient::WarpModel;
use crate::angle::{trig, Quadrant};
use crate::curvature::{curvature_from_kappa, drive, CurvatureSample, FlowParams};
use crate::error::{Result, SolvError};
use crate::phase::{kappa_tau_raw, phi_dot_raw, vf_r_of_phi, y_field, Chart, PhaseState, SIN_FLOOR};
use dopri::Vec4;

pub const PHI_SEED: f64 = 1e-3;
pub const EPS_POLE: f64 = 1e-6;
pub const BOWL_EPS: f64 = 1e-4;
pub const RESIDUAL_TOL: f64 = 1e-8;
/// The r(φ) chart is left once |sin φ| exceeds this.
pub const SIN_EXIT: f64 = 2e-4;
const EQUILIBRIUM_NORM: f64 = 1e-12;
const STIFF_ENTER: f64 = 1.5;
const Y_CHART_MIN_SIN: f64 = 2e-3;
const Y_CHART_EXIT_SIN: f64 = 1e-3;
const MAX_ATTEMPTS: usize = 4_000_000;
/// Below this |sin φ| a fast-turning orbit is handed to the r(φ) chart.
const AXIS_CHART_SIN: f64 = 0.1;
/// r·|φ̇|/|cos φ| above which φ is the better independent variable; exit uses a tenth of it.
const AXIS_CHART_RATE: f64 = 1e3;

fn fast_turn(r: f64, pd: f64, sn: f64, cs: f64, rate: f64) -> bool {
    sn.abs() < AXIS_CHART_SIN && r * pd.abs() > rate * cs.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }

    fn from_sign(x: f64) -> Self {
        if x >= 0.0 {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EndpointClass {
    AxisEndpoint { r: f64, phi: f64 },
    VerticalCrossing { r: f64, phi: f64 },
    PoleEndpoint { phi: f64 },
    PoleEquilibrium { r: f64, phi: f64 },
    EscapeToInfinity { phi: f64 },
    BudgetExhausted,
}

impl EndpointClass {
    pub fn name(&self) -> &'static str {
        match self {
            EndpointClass::AxisEndpoint { .. } => "AxisEndpoint",
            EndpointClass::VerticalCrossing { .. } => "VerticalCrossing",
            EndpointClass::PoleEndpoint { .. } => "PoleEndpoint",
            EndpointClass::PoleEquilibrium { .. } => "PoleEquilibrium",
            EndpointClass::EscapeToInfinity { .. } => "EscapeToInfinity",
            EndpointClass::BudgetExhausted => "BudgetExhausted",
        }
    }
}

/// Budgets and tolerances for one trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub r_max: f64,
    /// Bound on |τ − τ_init|.
    pub tau_max: f64,
    pub sample_cap: usize,
    /// |s| beyond this ends the trace as an escape.
    pub s_max: f64,
    /// Largest step in the active chart's independent variable.
    pub h_max: f64,
    pub stop_at_vertical: bool,
    pub rtol: f64,
    pub atol: f64,
    pub residual_tol: f64,
    pub eps_pole: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            r_max: 50.0,
            tau_max: 1e12,
            sample_cap: 400_000,
            s_max: f64::INFINITY,
            h_max: f64::INFINITY,
            stop_at_vertical: false,
            rtol: 1e-10,
            atol: 1e-10,
            residual_tol: RESIDUAL_TOL,
            eps_pole: EPS_POLE,
        }
    }
}

impl Limits {
    pub fn with_r_max(r_max: f64) -> Self {
        Limits { r_max, ..Limits::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: PhaseState,
    /// dφ/dτ of the sampled jet; ±∞ on the axis.
    pub phi_dot: f64,
    pub curv: CurvatureSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub samples: Vec<Sample>,
    pub start_event: Option<EndpointClass>,
    pub end_event: EndpointClass,
    pub quadrant_history: Vec<Quadrant>,
    /// Vertical crossings passed through without stopping.
    pub crossings: Vec<EndpointClass>,
    pub max_residual: f64,
}

impl Orbit {
    fn empty() -> Self {
        Orbit {
            samples: Vec::new(),
            start_event: None,
            end_event: EndpointClass::BudgetExhausted,
            quadrant_history: Vec::new(),
            crossings: Vec::new(),
            max_residual: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> Option<&PhaseState> {
        self.samples.first().map(|s| &s.state)
    }

    pub fn last(&self) -> Option<&PhaseState> {
        self.samples.last().map(|s| &s.state)
    }

    pub fn residual_ok(&self, tol: f64) -> bool {
        self.max_residual <= tol
    }

    pub fn recompute_history(&mut self) {
        self.quadrant_history.clear();
        self.max_residual = 0.0;
        for s in &self.samples {
            if let Some(q) = Quadrant::of_interior(s.state.phi) {
                if self.quadrant_history.last() != Some(&q) {
                    self.quadrant_history.push(q);
                }
            }
            self.max_residual = self.max_residual.max(s.curv.residual.abs());
        }
    }

    /// Cubic Hermite interpolation of a sampled quantity against r, using its
    /// r-derivative; returns None outside the sampled r-range.
    fn hermite<V, D>(&self, r: f64, value: V, deriv: D) -> Option<f64>
    where
        V: Fn(&Sample) -> f64,
        D: Fn(&Sample) -> f64,
    {
        for w in self.samples.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let (ra, rb) = (a.state.r, b.state.r);
            if (r - ra) * (r - rb) > 0.0 || ra == rb {
                continue;
            }
            let h = rb - ra;
            let t = (r - ra) / h;
            let (va, vb) = (value(a), value(b));
            let (da, db) = (deriv(a), deriv(b));
            if !(da.is_finite() && db.is_finite()) {
                return Some(va + t * (vb - va));
            }
            let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
            let h10 = t * (1.0 - t) * (1.0 - t);
            let h01 = t * t * (3.0 - 2.0 * t);
            let h11 = t * t * (t - 1.0);
            return Some(h00 * va + h10 * h * da + h01 * vb + h11 * h * db);
        }
        None
    }

    /// y = cos φ at radius r (first matching span).
    pub fn y_at(&self, r: f64) -> Option<f64> {
        self.hermite(
            r,
            |s| trig(s.state.phi).1,
            |s| {
                let (sn, cs) = trig(s.state.phi);
                -sn * s.phi_dot / cs
            },
        )
    }

    /// Height at radius r (first matching span), given the model for ds/dr.
    pub fn s_at(&self, model: &WarpModel, r: f64) -> Option<f64> {
        self.hermite(
            r,
            |s| s.state.s,
            |s| {
                let (sn, cs) = trig(s.state.phi);
                sn / (cs * model.eval(s.state.r).chi)
            },
        )
    }
}

/// Sample at a state, with φ̇ taken from the τ-chart field.
pub fn make_sample(model: &WarpModel, p: &FlowParams, state: PhaseState) -> Result<Sample> {
    let (sn, cs) = trig(state.phi);
    if sn == 0.0 {
        let d = drive(model, p, state.r, cs);
        let pd = if d >= 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        return Ok(Sample {
            state,
            phi_dot: pd,
            curv: CurvatureSample { kappa_tau: pd, kappa_theta: 0.0, mean_curvature: d, residual: 0.0 },
        });
    }
    let kt = kappa_tau_raw(model, p, state.r, state.phi);
    let curv = curvature_from_kappa(model, p, &state, kt)?;
    Ok(Sample { state, phi_dot: kt - model.chi_ratio(state.r) * sn, curv })
}

/// Germ leaving an axis point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisStart {
    pub axis_r: f64,
    pub axis_phi: f64,
    pub seed: PhaseState,
    pub direction: Direction,
    /// K = C(n−1,m−1)(ξ′/ξ)^{m−1}(cχ)^{−1/α} at r0.
    pub k_coeff: f64,
    /// r0 + (K/m)φ_seed^m, up to the orientation signs of the quadrant.
    pub leading_order_r: f64,
}

fn axis_geometry(p: &FlowParams, quadrant: Quadrant) -> Result<(f64, f64)> {
    if p.restricted_phase_space() && matches!(quadrant, Quadrant::Q2 | Quadrant::Q3) {
        return Err(SolvError::InvalidStart(format!(
            "{quadrant:?} lies outside the phase space for m even, α = 1/m"
        )));
    }
    Ok(match quadrant {
        Quadrant::Q1 => (0.0, 1.0),
        Quadrant::Q4 => (0.0, -1.0),
        Quadrant::Q2 => (PI, -1.0),
        Quadrant::Q3 => (-PI, 1.0),
    })
}

/// r(φ)-chart field in a parameter u with dφ/du = dphi_du.
fn rofphi_rhs(model: &WarpModel, p: &FlowParams, x: &Vec4, dphi_du: f64) -> Result<Vec4> {
    if !(x[0] > 0.0) {
        return Err(SolvError::Domain(format!("r = {} left (0, ∞)", x[0])));
    }
    let st = PhaseState::new(x[0], x[1]);
    let f = vf_r_of_phi(model, p, &st)?;
    let (sn, cs) = trig(x[1]);
    let chi = model.eval(x[0]).chi;
    let out = [dphi_du * f, dphi_du, dphi_du * f * sn / (cs * chi), dphi_du * f / cs];
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(SolvError::NonFinite { r: x[0], phi: x[1], s: x[2], tau: x[3] })
    }
}

fn tau_rhs(model: &WarpModel, p: &FlowParams, x: &Vec4, d: f64) -> Result<Vec4> {
    if !(x[0] > 0.0) {
        return Err(SolvError::Domain(format!("r = {} left (0, ∞)", x[0])));
    }
    let (sn, cs) = trig(x[1]);
    let chi = model.eval(x[0]).chi;
    let pd = phi_dot_raw(model, p, x[0], x[1]);
    let out = [d * cs, d * pd, d * sn / chi, d];
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(SolvError::NonFinite { r: x[0], phi: x[1], s: x[2], tau: x[3] })
    }
}

/// Exact r(φ)-chart pre-integration from (r0, kπ) to the seed angle.
pub fn start_from_axis(model: &WarpModel, p: &FlowParams, r0: f64, quadrant: Quadrant) -> Result<AxisStart> {
    start_from_axis_seeded(model, p, r0, quadrant, PHI_SEED)
}

pub fn start_from_axis_seeded(
    model: &WarpModel,
    p: &FlowParams,
    r0: f64,
    quadrant: Quadrant,
    phi_seed: f64,
) -> Result<AxisStart> {
    if !(r0 > 0.0) || !r0.is_finite() {
        return Err(SolvError::InvalidStart(format!("axis radius r0 = {r0} must be positive")));
    }
    let (axis_phi, away) = axis_geometry(p, quadrant)?;
    let f = |x: &Vec4| rofphi_rhs(model, p, x, away);
    let x = dopri::integrate(&f, &[r0, axis_phi, 0.0, 0.0], phi_seed, 1e-13, 1e-14)?;
    let seed_phi = axis_phi + away * phi_seed;
    let mut seed = PhaseState { r: x[0], phi: seed_phi, s: x[2], tau: x[3], chart: Chart::Tau };
    if seed.r <= 0.0 {
        return Err(SolvError::InvalidStart("axis germ left r > 0".into()));
    }
    let pd = phi_dot_raw(model, p, seed.r, seed.phi);
    let direction = Direction::from_sign(away * pd);
    let w = model.eval(r0);
    let k_coeff = p.b1() * model.xi_ratio(r0).powi(p.m as i32 - 1) * (p.c * w.chi).powi(-p.q());
    let f_seed = vf_r_of_phi(model, p, &PhaseState::new(r0, seed_phi))?;
    let leading_order_r = r0 + f_seed * (seed_phi - axis_phi) / p.m as f64;
    seed.chart = Chart::Tau;
    Ok(AxisStart { axis_r: r0, axis_phi, seed, direction, k_coeff, leading_order_r })
}

/// Bowl germ (eps, k·eps, (k/2)eps²) with k = φ′(0).
pub fn start_bowl(_model: &WarpModel, p: &FlowParams, eps: f64) -> Result<PhaseState> {
    if !(eps > 0.0 && eps <= crate::ambient::R_SERIES) {
        return Err(SolvError::InvalidStart(format!("bowl seed radius {eps} outside (0, 1e-3]")));
    }
    let k = p.bowl_slope();
    Ok(PhaseState { r: eps, phi: k * eps, s: 0.5 * k * eps * eps, tau: eps, chart: Chart::RofPhi })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PoleStart {
    Germ { seed: PhaseState, direction: Direction },
    Equilibrium { phi: f64 },
}

/// Pole germ at (eps_pole, φ0); only for m = n.
pub fn start_from_pole(_model: &WarpModel, p: &FlowParams, phi0: f64, eps_pole: f64) -> Result<PoleStart> {
    if p.m != p.n {
        return Err(SolvError::Domain(format!("no orbit has an endpoint at r = 0 when m = {} < n = {}", p.m, p.n)));
    }
    let (sn, cs) = trig(phi0);
    if sn == 0.0 {
        return Err(SolvError::InvalidStart("pole angle must lie off the axis".into()));
    }
    if p.restricted_phase_space() && cs < 0.0 {
        return Err(SolvError::InvalidStart("cos φ0 < 0 outside the phase space".into()));
    }
    if cs == 0.0 {
        return Ok(PoleStart::Equilibrium { phi: phi0 });
    }
    let seed = PhaseState { r: eps_pole, phi: phi0, s: 0.0, tau: 0.0, chart: Chart::Tau };
    Ok(PoleStart::Germ { seed, direction: Direction::from_sign(cs) })
}

/// Orbit from an axis germ, with the axis point prepended.
pub fn trace_from_axis(
    model: &WarpModel,
    p: &FlowParams,
    r0: f64,
    quadrant: Quadrant,
    limits: &Limits,
) -> Result<Orbit> {
    let germ = start_from_axis(model, p, r0, quadrant)?;
    let mut orbit = trace_orbit(model, p, &germ.seed, germ.direction, limits)?;
    let axis = PhaseState { r: r0, phi: germ.axis_phi, s: 0.0, tau: 0.0, chart: Chart::RofPhi };
    orbit.samples.insert(0, make_sample(model, p, axis)?);
    orbit.start_event = Some(EndpointClass::AxisEndpoint { r: r0, phi: germ.axis_phi });
    orbit.recompute_history();
    Ok(orbit)
}

/// Bowl orbit with the tip sample (0, 0) prepended.
pub fn trace_bowl(model: &WarpModel, p: &FlowParams, eps: f64, limits: &Limits) -> Result<Orbit> {
    let seed = start_bowl(model, p, eps)?;
    let mut orbit = trace_orbit(model, p, &seed, Direction::Forward, limits)?;
    let k = p.bowl_slope();
    let d = drive(model, p, 0.0, 1.0);
    let tip = Sample {
        state: PhaseState { r: 0.0, phi: 0.0, s: 0.0, tau: 0.0, chart: Chart::RofPhi },
        phi_dot: k,
        curv: CurvatureSample { kappa_tau: k, kappa_theta: k, mean_curvature: d, residual: 0.0 },
    };
    orbit.samples.insert(0, tip);
    orbit.start_event = None;
    orbit.recompute_history();
    Ok(orbit)
}

/// Orbit from a pole germ; an equilibrium angle yields an empty orbit.
pub fn trace_from_pole(model: &WarpModel, p: &FlowParams, phi0: f64, limits: &Limits) -> Result<Orbit> {
    match start_from_pole(model, p, phi0, limits.eps_pole)? {
        PoleStart::Equilibrium { phi } => {
            let mut o = Orbit::empty();
            o.start_event = Some(EndpointClass::PoleEquilibrium { r: 0.0, phi });
            o.end_event = EndpointClass::PoleEquilibrium { r: 0.0, phi };
            Ok(o)
        }
        PoleStart::Germ { seed, direction } => {
            let mut o = trace_orbit(model, p, &seed, direction, limits)?;
            o.start_event = Some(EndpointClass::PoleEndpoint { phi: phi0 });
            Ok(o)
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Active {
    Tau,
    RofPhi { dphi_du: f64 },
    PhiOfR { sigma: f64, base: f64, sigma_r: f64 },
}

fn bisect<G: Fn(f64) -> f64>(g: G, mut lo: f64, mut hi: f64, span: f64) -> f64 {
    for _ in 0..200 {
        if (hi - lo) * span.abs() <= 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Next multiple of π/2 strictly beyond `phi` in direction `dir`.
fn next_grid(phi: f64, dir: f64) -> (f64, i64) {
    let x = phi / FRAC_PI_2;
    let k = x.round();
    let on_grid = (phi - k * FRAC_PI_2).abs() <= 1e-12;
    let base = if on_grid {
        k
    } else if dir > 0.0 {
        x.floor()
    } else {
        x.ceil()
    };
    let kk = if dir > 0.0 { base + 1.0 } else { base - 1.0 };
    (kk * FRAC_PI_2, kk as i64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ev {
    Grid { target: f64, k: i64 },
    AxisNear,
    RMax,
    Pole,
    SMax,
}

struct Tracer<'a> {
    model: &'a WarpModel,
    p: &'a FlowParams,
    lim: &'a Limits,
    d: f64,
    tau0: f64,
    orbit: Orbit,
}

impl<'a> Tracer<'a> {
    fn push(&mut self, state: PhaseState) -> Result<()> {
        let s = make_sample(self.model, self.p, state)?;
        if let Some(q) = Quadrant::of_interior(state.phi) {
            if self.orbit.quadrant_history.last() != Some(&q) {
                self.orbit.quadrant_history.push(q);
            }
        }
        self.orbit.max_residual = self.orbit.max_residual.max(s.curv.residual.abs());
        self.orbit.samples.push(s);
        Ok(())
    }

    fn finish(mut self, ev: EndpointClass) -> Orbit {
        self.orbit.end_event = ev;
        self.orbit
    }

    fn tau_left(&self, tau: f64) -> f64 {
        self.lim.tau_max - (tau - self.tau0).abs()
    }

    /// Earliest r/s threshold event inside a dense step.
    fn scan_levels(&self, st: &dopri::Step, ev: &mut Option<(f64, Ev)>) {
        let (r0, r1) = (st.y0[0], st.y1[0]);
        let consider = |theta: f64, e: Ev, ev: &mut Option<(f64, Ev)>| {
            if ev.map_or(true, |(t, _)| theta < t) {
                *ev = Some((theta, e));
            }
        };
        if r0 < self.lim.r_max && r1 >= self.lim.r_max {
            let t = bisect(|th| st.dense(th)[0] - self.lim.r_max, 0.0, 1.0, st.h);
            consider(t, Ev::RMax, ev);
        }
        if r1 < self.lim.eps_pole && r0 >= self.lim.eps_pole {
            let t = bisect(|th| self.lim.eps_pole - st.dense(th)[0], 0.0, 1.0, st.h);
            consider(t, Ev::Pole, ev);
        }
        if st.y1[2].abs() > self.lim.s_max && st.y0[2].abs() <= self.lim.s_max {
            let t = bisect(|th| st.dense(th)[2].abs() - self.lim.s_max, 0.0, 1.0, st.h);
            consider(t, Ev::SMax, ev);
        }
    }

    fn terminal(&self, e: Ev, x: &Vec4) -> Option<EndpointClass> {
        match e {
            Ev::RMax => Some(EndpointClass::BudgetExhausted),
            Ev::Pole => Some(EndpointClass::PoleEndpoint { phi: x[1] }),
            Ev::SMax => Some(EndpointClass::EscapeToInfinity { phi: x[1] }),
            _ => None,
        }
    }

    fn pole_check(&self) -> Result<()> {
        if self.p.m < self.p.n {
            return Err(SolvError::Numerical(format!(
                "orbit reached r < {} with m < n, where no endpoint exists",
                self.lim.eps_pole
            )));
        }
        Ok(())
    }

    fn run(mut self, init: &PhaseState) -> Result<Orbit> {
        let model = self.model;
        let p = self.p;
        let lim = *self.lim;
        let d = self.d;
        let mut x: Vec4 = [init.r, init.phi, init.s, init.tau];
        let (sn0, _) = trig(init.phi);

        let pd0 = phi_dot_raw(model, p, init.r, init.phi);
        let cs0 = trig(init.phi).1;
        if cs0.hypot(pd0) < EQUILIBRIUM_NORM {
            self.push(PhaseState { chart: Chart::Tau, ..*init })?;
            return Ok(self.finish(EndpointClass::PoleEquilibrium { r: init.r, phi: init.phi }));
        }

        let mut active = if sn0.abs() < SIN_FLOOR || fast_turn(init.r, pd0, sn0, cs0, AXIS_CHART_RATE) {
            Active::RofPhi { dphi_du: (d * pd0).signum() }
        } else {
            Active::Tau
        };
        let chart_of = |a: &Active| match a {
            Active::Tau => Chart::Tau,
            Active::RofPhi { .. } => Chart::RofPhi,
            Active::PhiOfR { .. } => Chart::PhiOfR,
        };
        self.push(PhaseState { r: x[0], phi: x[1], s: x[2], tau: x[3], chart: chart_of(&active) })?;

        let mut h = (1e-3 / (1.0 + pd0.abs())).min(lim.h_max);
        let mut h_phi = (0.25 * sn0.abs().max(1e-6)).min(lim.h_max);
        let mut h_r = 1e-3 * x[0];
        let mut eq_count = 0usize;
        let mut tau_lock = 0usize;
        let mut attempts = 0usize;
        let mut k: Option<Vec4> = None;

        loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS || self.orbit.samples.len() >= lim.sample_cap {
                return Ok(self.finish(EndpointClass::BudgetExhausted));
            }
            match active {
                Active::Tau => {
                    let f = |y: &Vec4| tau_rhs(model, p, y, d);
                    let k1 = match k {
                        Some(k1) => k1,
                        None => f(&x)?,
                    };
                    let left = self.tau_left(x[3]);
                    if left <= 0.0 {
                        return Ok(self.finish(EndpointClass::BudgetExhausted));
                    }
                    let hh = h.min(left).min(lim.h_max);
                    let st = match dopri::step(&f, &x, &k1, hh, lim.rtol, lim.atol) {
                        Ok(st) => st,
                        Err(e) => {
                            h = hh * 0.25;
                            if h < 1e-15 * (1.0 + x[3].abs()) {
                                return Err(e);
                            }
                            k = Some(k1);
                            continue;
                        }
                    };
                    if st.err > 1.0 {
                        h = hh * dopri::factor(st.err);
                        k = Some(k1);
                        if h < 1e-15 * (1.0 + x[3].abs()) {
                            return Err(SolvError::Numerical(format!("step size underflow at r={}, phi={}", x[0], x[1])));
                        }
                        continue;
                    }

                    let mut ev: Option<(f64, Ev)> = None;
                    let (phi0, phi1) = (st.y0[1], st.y1[1]);
                    let dir = if phi1 > phi0 { 1.0 } else { -1.0 };
                    let (target, kk) = next_grid(phi0, dir);
                    let mut theta_axis = 1.0;
                    if (phi1 - target) * dir >= 0.0 {
                        let t = bisect(|th| (st.dense(th)[1] - target) * dir, 0.0, 1.0, st.h);
                        ev = Some((t, Ev::Grid { target, k: kk }));
                        if kk % 2 == 0 {
                            theta_axis = t;
                        }
                    }
                    let near0 = trig(phi0).0.abs() >= SIN_FLOOR;
                    if tau_lock == 0 && near0 {
                        let g = |th: f64| SIN_FLOOR - trig(st.dense(th)[1]).0.abs();
                        if g(theta_axis) >= 0.0 {
                            let t = bisect(g, 0.0, theta_axis, st.h);
                            if ev.map_or(true, |(te, _)| t <= te) {
                                ev = Some((t, Ev::AxisNear));
                            }
                        }
                    }
                    self.scan_levels(&st, &mut ev);

                    let theta = ev.map_or(1.0, |(t, _)| t);
                    let mut xn = if ev.is_some() { st.dense(theta) } else { st.y1 };
                    xn[3] = x[3] + d * hh * theta;
                    match ev {
                        Some((_, Ev::Grid { target, .. })) => xn[1] = target,
                        Some((_, Ev::RMax)) => xn[0] = lim.r_max,
                        Some((_, Ev::Pole)) => xn[0] = lim.eps_pole,
                        _ => {}
                    }
                    x = xn;
                    tau_lock = tau_lock.saturating_sub(1);
                    self.push(PhaseState { r: x[0], phi: x[1], s: x[2], tau: x[3], chart: Chart::Tau })?;
                    h = hh * dopri::factor(st.err);

                    if let Some((_, e)) = ev {
                        k = None;
                        if e == Ev::Pole {
                            self.pole_check()?;
                        }
                        if let Some(end) = self.terminal(e, &x) {
                            return Ok(self.finish(end));
                        }
                        match e {
                            Ev::Grid { target, k: kk } if kk % 2 == 0 => {
                                return Ok(self.finish(EndpointClass::AxisEndpoint { r: x[0], phi: target }));
                            }
                            Ev::Grid { target, .. } => {
                                let cross = EndpointClass::VerticalCrossing { r: x[0], phi: target };
                                let pd = d * phi_dot_raw(model, p, x[0], x[1]);
                                let leaving = p.restricted_phase_space()
                                    && trig(x[1] + pd.signum() * 1e-3).1 < 0.0;
                                if lim.stop_at_vertical || leaving {
                                    return Ok(self.finish(cross));
                                }
                                self.orbit.crossings.push(cross);
                            }
                            Ev::AxisNear => {
                                let pd = phi_dot_raw(model, p, x[0], x[1]);
                                active = Active::RofPhi { dphi_du: (d * pd).signum() };
                                h_phi = (0.5 * trig(x[1]).0.abs()).min(lim.h_max);
                            }
                            _ => {}
                        }
                        continue;
                    }
                    k = Some(st.k_end);

                    let pd = phi_dot_raw(model, p, x[0], x[1]);
                    let (sn, cs) = trig(x[1]);
                    if tau_lock == 0 && fast_turn(x[0], pd, sn, cs, AXIS_CHART_RATE) {
                        active = Active::RofPhi { dphi_du: (d * pd).signum() };
                        h_phi = (0.5 * sn.abs()).min(lim.h_max);
                        k = None;
                        continue;
                    }
                    if cs.hypot(pd) < EQUILIBRIUM_NORM {
                        eq_count += 1;
                        if eq_count >= 3 {
                            return Ok(self.finish(EndpointClass::PoleEquilibrium { r: x[0], phi: x[1] }));
                        }
                    } else {
                        eq_count = 0;
                    }

                    if sn.abs() > Y_CHART_MIN_SIN && cs.abs() > 1e-12 && tau_lock == 0 {
                        let del = 1e-7;
                        let lam = (phi_dot_raw(model, p, x[0], x[1] + del) - phi_dot_raw(model, p, x[0], x[1] - del))
                            / (2.0 * del);
                        if h * lam.abs() > STIFF_ENTER {
                            let sigma = sn.signum();
                            let yp = y_field(model, p, x[0], cs, sigma);
                            // A stable branch of y′ = 0 between y/2 and 0 keeps y away from 0.
                            let approaching = d * yp < 0.0 && d * y_field(model, p, x[0], 0.5 * cs, sigma) < 0.0;
                            let tc = (cs / yp).abs();
                            if !approaching || tc > 0.05 * x[0] {
                                let acos = cs.acos();
                                let base = 2.0 * PI * ((x[1] - sigma * acos) / (2.0 * PI)).round();
                                active = Active::PhiOfR { sigma, base, sigma_r: (d * cs).signum() };
                                h_r = (cs.abs() * h).min(0.05 * x[0]).max(1e-9 * x[0]);
                                k = None;
                            }
                        }
                    }
                }

                Active::RofPhi { dphi_du } => {
                    let f = |y: &Vec4| rofphi_rhs(model, p, y, dphi_du);
                    let k1 = match k {
                        Some(k1) => k1,
                        None => match f(&x) {
                            Ok(v) => v,
                            Err(SolvError::SingularChart(_)) => {
                                active = Active::Tau;
                                tau_lock = 20;
                                continue;
                            }
                            Err(e) => return Err(e),
                        },
                    };
                    let (target, kk) = next_grid(x[1], dphi_du);
                    let dist = (target - x[1]).abs();
                    let mut hh = h_phi.min(lim.h_max);
                    let landing = hh >= dist;
                    if landing {
                        hh = dist;
                    }
                    let st = match dopri::step(&f, &x, &k1, hh, lim.rtol, lim.atol) {
                        Ok(st) => st,
                        Err(_) => {
                            h_phi = hh * 0.25;
                            k = Some(k1);
                            if h_phi < 1e-14 {
                                active = Active::Tau;
                                tau_lock = 20;
                                k = None;
                            }
                            continue;
                        }
                    };
                    if st.err > 1.0 {
                        h_phi = hh * dopri::factor(st.err);
                        k = Some(k1);
                        continue;
                    }
                    let mut ev: Option<(f64, Ev)> = None;
                    self.scan_levels(&st, &mut ev);
                    let theta = ev.map_or(1.0, |(t, _)| t);
                    let mut xn = if ev.is_some() { st.dense(theta) } else { st.y1 };
                    xn[1] = x[1] + dphi_du * hh * theta;
                    if landing && ev.is_none() {
                        xn[1] = target;
                    }
                    match ev {
                        Some((_, Ev::RMax)) => xn[0] = lim.r_max,
                        Some((_, Ev::Pole)) => xn[0] = lim.eps_pole,
                        _ => {}
                    }
                    x = xn;
                    self.push(PhaseState { r: x[0], phi: x[1], s: x[2], tau: x[3], chart: Chart::RofPhi })?;
                    h_phi = hh * dopri::factor(st.err);
                    if let Some((_, e)) = ev {
                        if e == Ev::Pole {
                            self.pole_check()?;
                        }
                        if let Some(end) = self.terminal(e, &x) {
                            return Ok(self.finish(end));
                        }
                    }
                    if landing {
                        if kk % 2 == 0 {
                            return Ok(self.finish(EndpointClass::AxisEndpoint { r: x[0], phi: target }));
                        }
                        let cross = EndpointClass::VerticalCrossing { r: x[0], phi: target };
                        if lim.stop_at_vertical {
                            return Ok(self.finish(cross));
                        }
                        self.orbit.crossings.push(cross);
                    }
                    if self.tau_left(x[3]) <= 0.0 {
                        return Ok(self.finish(EndpointClass::BudgetExhausted));
                    }
                    k = Some(st.k_end);
                    let (sn, cs) = trig(x[1]);
                    let pd = phi_dot_raw(model, p, x[0], x[1]).abs();
                    if sn.abs() > SIN_EXIT && !fast_turn(x[0], pd, sn, cs, 0.1 * AXIS_CHART_RATE) {
                        active = Active::Tau;
                        k = None;
                        h = (0.1 * hh / (1.0 + pd)).max(0.01 * hh / pd.max(1e-300)).min(lim.h_max);
                    }
                }

                Active::PhiOfR { sigma, base, sigma_r } => {
                    let y0 = trig(x[1]).1;
                    let g = |r: f64, y: f64| y_field(model, p, r, y, sigma);
                    let quad = |r: f64, y: f64| {
                        let w = ((1.0 - y) * (1.0 + y)).sqrt();
                        [sigma * w / (y * model.eval(r).chi), 1.0 / y]
                    };
                    let side = y0.signum();
                    let ok = |y: f64| y * side > 0.0 && y.abs() < 1.0;
                    let mut dr = h_r.min(lim.h_max);
                    let mut hit_rmax = false;
                    let mut hit_pole = false;
                    if sigma_r > 0.0 {
                        if x[0] + dr >= lim.r_max {
                            dr = lim.r_max - x[0];
                            hit_rmax = true;
                        }
                    } else {
                        let floor = lim.eps_pole;
                        if x[0] - dr <= floor {
                            if p.m == p.n {
                                dr = x[0] - floor;
                                hit_pole = true;
                            } else {
                                dr = 0.5 * x[0];
                            }
                        }
                    }
                    let dr_signed = sigma_r * dr;
                    let out = radau::doubled_step(&g, &quad, &ok, x[0], y0, x[2], dr_signed, lim.rtol, lim.atol);
                    let Some((col, err)) = out else {
                        h_r = dr * 0.25;
                        if h_r < 1e-12 * x[0] {
                            active = Active::Tau;
                            tau_lock = 20;
                            k = None;
                        }
                        continue;
                    };
                    if err > 1.0 {
                        h_r = dr * radau::factor(err);
                        continue;
                    }
                    let y1 = col.y1;
                    x = [
                        if hit_rmax { lim.r_max } else if hit_pole { lim.eps_pole } else { x[0] + dr_signed },
                        base + sigma * y1.acos(),
                        x[2] + col.quad[0],
                        x[3] + col.quad[1],
                    ];
                    self.push(PhaseState { r: x[0], phi: x[1], s: x[2], tau: x[3], chart: Chart::PhiOfR })?;
                    h_r = dr * radau::factor(err);
                    if hit_rmax {
                        return Ok(self.finish(EndpointClass::BudgetExhausted));
                    }
                    if hit_pole {
                        return Ok(self.finish(EndpointClass::PoleEndpoint { phi: x[1] }));
                    }
                    if self.tau_left(x[3]) <= 0.0 {
                        return Ok(self.finish(EndpointClass::BudgetExhausted));
                    }
                    if x[2].abs() > lim.s_max {
                        return Ok(self.finish(EndpointClass::EscapeToInfinity { phi: x[1] }));
                    }
                    let w1 = ((1.0 - y1) * (1.0 + y1)).sqrt();
                    let yp = g(x[0], y1);
                    let approaching = d * yp < 0.0 && d * g(x[0], 0.5 * y1) < 0.0;
                    if w1 < Y_CHART_EXIT_SIN || (approaching && (y1 / yp).abs() < 0.01 * x[0]) {
                        active = Active::Tau;
                        k = None;
                        h = (0.1 * dr / y1.abs()).min(lim.h_max);
                    }
                }
            }
        }
    }
}

/// Traces the orbit through `init` in the given τ-direction until an event ends it.
pub fn trace_orbit(
    model: &WarpModel,
    p: &FlowParams,
    init: &PhaseState,
    direction: Direction,
    limits: &Limits,
) -> Result<Orbit> {
    if !(init.r > 0.0) || !init.r.is_finite() || !init.phi.is_finite() {
        return Err(SolvError::InvalidStart(format!("state (r={}, phi={}) is not interior", init.r, init.phi)));
    }
    let (sn, cs) = trig(init.phi);
    if p.restricted_phase_space() && cs < 0.0 {
        return Err(SolvError::InvalidStart(format!(
            "cos φ = {cs} < 0 outside the phase space for m even, α = 1/m"
        )));
    }
    if sn == 0.0 {
        return Err(SolvError::InvalidStart("state lies on the axis; use an axis germ".into()));
    }
    let tracer = Tracer { model, p, lim: limits, d: direction.sign(), tau0: init.tau, orbit: Orbit::empty() };
    tracer.run(init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::Alpha;
    use crate::phase::gamma;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fp(n: u32, m: u32, alpha: Alpha) -> FlowParams {
        FlowParams::new(n, m, alpha, 1.0).unwrap()
    }

    #[test]
    fn q1_orbit_trapped_and_tracks_gamma() {
        let e = WarpModel::euclidean();
        let p = fp(3, 2, Alpha::One);
        let o = trace_orbit(&e, &p, &PhaseState::new(1.0, 0.3), Direction::Forward, &Limits::with_r_max(50.0)).unwrap();
        assert_eq!(o.end_event, EndpointClass::BudgetExhausted);
        assert_eq!(o.quadrant_history, vec![Quadrant::Q1]);
        let last = o.last().unwrap();
        assert_relative_eq!(last.r, 50.0, max_relative = 1e-12);
        assert!((trig(last.phi).1 - gamma(&e, &p, 50.0)).abs() < 1e-3);
        assert!(o.samples.windows(2).all(|w| w[1].state.r >= w[0].state.r));
        assert!(o.residual_ok(RESIDUAL_TOL), "{}", o.max_residual);
    }

    #[test]
    fn q4_escape_reaches_axis() {
        let e = WarpModel::euclidean();
        let init = PhaseState::new(1.0, -FRAC_PI_2);
        // With χ ≡ 1 and m = n the vertical line is a cylinder equilibrium.
        let eq = trace_orbit(&e, &fp(3, 3, Alpha::One), &init, Direction::Forward, &Limits::default()).unwrap();
        assert!(matches!(eq.end_event, EndpointClass::PoleEquilibrium { .. }));
        let p = fp(4, 3, Alpha::One);
        let o = trace_orbit(&e, &p, &init, Direction::Forward, &Limits::with_r_max(50.0)).unwrap();
        match o.end_event {
            EndpointClass::AxisEndpoint { r, phi } => {
                assert!(r > 1.0);
                assert_eq!(phi, 0.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(o.residual_ok(RESIDUAL_TOL));
    }

    #[test]
    fn cylinder_is_equilibrium() {
        let p = fp(2, 2, Alpha::One);
        let o = trace_orbit(&WarpModel::euclidean(), &p, &PhaseState::new(1.0, FRAC_PI_2), Direction::Forward, &Limits::default())
            .unwrap();
        assert_eq!(o.len(), 1);
        assert!(matches!(o.end_event, EndpointClass::PoleEquilibrium { .. }));
        assert_eq!(o.max_residual, 0.0);
    }

    #[test]
    fn axis_germ_examples() {
        let e = WarpModel::euclidean();
        let p = fp(3, 2, Alpha::One);
        let g = start_from_axis_seeded(&e, &p, 1.0, Quadrant::Q1, 0.01).unwrap();
        assert_relative_eq!(g.k_coeff, 2.0, max_relative = 1e-14);
        assert_relative_eq!(g.leading_order_r, 1.0001, max_relative = 1e-6);
        assert!((g.seed.r - 1.0001).abs() < 1e-6);
        let pm = fp(3, 2, Alpha::InverseM);
        let q1 = start_from_axis(&e, &pm, 1.0, Quadrant::Q1).unwrap();
        let q4 = start_from_axis(&e, &pm, 1.0, Quadrant::Q4).unwrap();
        assert_relative_eq!(q1.seed.r, q4.seed.r, max_relative = 1e-14);
        assert_eq!(q1.seed.phi, -q4.seed.phi);
        assert!(start_from_axis(&e, &pm, 1.0, Quadrant::Q2).is_err());
        let h = WarpModel::hyperbolic();
        let a = start_from_axis(&h, &p, 1.0, Quadrant::Q1).unwrap();
        let b = start_from_axis(&h, &p, 0.5, Quadrant::Q1).unwrap();
        let expect = (h.xi_ratio(0.5) / h.xi_ratio(1.0)) * (h.eval(1.0).chi / h.eval(0.5).chi);
        assert_relative_eq!(b.k_coeff / a.k_coeff, expect, max_relative = 1e-13);
    }

    #[test]
    fn bowl_germ_examples() {
        let e = WarpModel::euclidean();
        let s = start_bowl(&e, &fp(3, 2, Alpha::InverseM), 1e-3).unwrap();
        assert_relative_eq!(s.phi, 1e-3 / 3f64.sqrt(), max_relative = 1e-12);
        let lam: f64 = 1.7;
        let base = FlowParams::new(4, 3, Alpha::One, 1.0).unwrap();
        let scaled = FlowParams::new(4, 3, Alpha::One, lam.powf(base.m_alpha())).unwrap();
        assert_relative_eq!(scaled.bowl_slope() / base.bowl_slope(), lam, max_relative = 1e-12);
        let par = FlowParams::new(2, 2, Alpha::One, 2.0).unwrap();
        assert_relative_eq!(start_bowl(&e, &par, 1e-4).unwrap().phi, 1e-4 * 2f64.sqrt(), max_relative = 1e-12);
        assert!(start_bowl(&e, &par, 0.1).is_err());
    }

    #[test]
    fn pole_germ_examples() {
        let h = WarpModel::hyperbolic();
        let p = fp(3, 3, Alpha::One);
        match start_from_pole(&h, &p, FRAC_PI_2 / 2.0, EPS_POLE).unwrap() {
            PoleStart::Germ { seed, direction } => {
                assert!((seed.phi - FRAC_PI_2 / 2.0).abs() <= EPS_POLE);
                assert_eq!(direction, Direction::Forward);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(start_from_pole(&h, &p, FRAC_PI_2, EPS_POLE).unwrap(), PoleStart::Equilibrium { .. }));
        assert!(start_from_pole(&h, &fp(3, 2, Alpha::One), 0.7, EPS_POLE).is_err());
        let o = trace_from_pole(&h, &p, FRAC_PI_2, &Limits::default()).unwrap();
        assert!(o.is_empty());
    }

    #[test]
    fn events() {
        let e = WarpModel::euclidean();
        let p = fp(3, 3, Alpha::One);
        // Q2 start heading up through π/2.
        let lim = Limits { stop_at_vertical: true, ..Limits::with_r_max(20.0) };
        let o = trace_orbit(&e, &p, &PhaseState::new(1.0, 1.2), Direction::Backward, &lim).unwrap();
        if let EndpointClass::VerticalCrossing { phi, .. } = o.end_event {
            assert_eq!(phi, FRAC_PI_2);
        }
        let lim = Limits { tau_max: 0.5, ..Limits::default() };
        let o = trace_orbit(&e, &fp(3, 2, Alpha::One), &PhaseState::new(1.0, 0.3), Direction::Forward, &lim).unwrap();
        assert_eq!(o.end_event, EndpointClass::BudgetExhausted);
        assert_relative_eq!(o.last().unwrap().tau, 0.5, max_relative = 1e-12);
        let pole = trace_from_axis(&WarpModel::hyperbolic(), &p, 0.05, Quadrant::Q4, &Limits {
            stop_at_vertical: true,
            ..Limits::default()
        });
        assert!(pole.is_ok());
    }

    #[test]
    fn invalid_starts() {
        let e = WarpModel::euclidean();
        let pm = fp(3, 2, Alpha::InverseM);
        assert!(matches!(
            trace_orbit(&e, &pm, &PhaseState::new(1.0, 2.0), Direction::Forward, &Limits::default()),
            Err(SolvError::InvalidStart(_))
        ));
        assert!(trace_orbit(&e, &pm, &PhaseState::new(1.0, 0.0), Direction::Forward, &Limits::default()).is_err());
    }

    #[test]
    fn arc_length_in_tau_spans() {
        let e = WarpModel::hyperbolic();
        let p = fp(3, 2, Alpha::One);
        let lim = Limits { h_max: 0.01, ..Limits::with_r_max(3.0) };
        let o = trace_orbit(&e, &p, &PhaseState::new(1.0, 0.5), Direction::Forward, &lim).unwrap();
        for w in o.samples.windows(2) {
            let (a, b) = (&w[0].state, &w[1].state);
            if a.chart != Chart::Tau || b.chart != Chart::Tau {
                continue;
            }
            let dt = b.tau - a.tau;
            let chi = e.eval(0.5 * (a.r + b.r)).chi;
            let chord = ((b.r - a.r).powi(2) + chi * chi * (b.s - a.s).powi(2)).sqrt();
            assert!((dt - chord).abs() <= 1e-8 * dt.max(1.0) + 1e-6 * dt, "{dt} {chord}");
        }
    }

    #[test]
    fn seed_halving_self_check() {
        let e = WarpModel::euclidean();
        let p = fp(3, 2, Alpha::One);
        let a = trace_from_axis(&e, &p, 1.0, Quadrant::Q1, &Limits::with_r_max(5.0)).unwrap();
        let g = start_from_axis_seeded(&e, &p, 1.0, Quadrant::Q1, PHI_SEED / 2.0).unwrap();
        let b = trace_orbit(&e, &p, &g.seed, g.direction, &Limits::with_r_max(5.0)).unwrap();
        for r in [2.0, 3.0, 4.5] {
            assert!((a.y_at(r).unwrap() - b.y_at(r).unwrap()).abs() < 1e-6);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn trapping_q1(r0 in 0.2f64..5.0, phi0 in 0.05f64..1.5) {
            let p = fp(4, 2, Alpha::InverseM);
            let o = trace_orbit(&WarpModel::euclidean(), &p, &PhaseState::new(r0, phi0), Direction::Forward, &Limits::with_r_max(20.0)).unwrap();
            prop_assert_eq!(o.quadrant_history.clone(), vec![Quadrant::Q1]);
            prop_assert!(o.residual_ok(RESIDUAL_TOL));
        }

        #[test]
        fn escape_q4(r0 in 0.2f64..5.0, phi0 in -1.5f64..-0.05) {
            let p = fp(4, 3, Alpha::One);
            let o = trace_orbit(&WarpModel::hyperbolic(), &p, &PhaseState::new(r0, phi0), Direction::Forward, &Limits::with_r_max(60.0)).unwrap();
            let reached = matches!(o.end_event, EndpointClass::AxisEndpoint { r, .. } if r > r0);
            prop_assert!(reached, "{:?}", o.end_event);
        }
    }
}
