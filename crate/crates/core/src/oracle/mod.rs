//! Closed-form integral solutions used as ground truth for the integrator.
//!
//! For m = 2, α = 1/2 the y-chart equation is linear in u = y² = cos²φ:
//! u′ + (ln FG)′u = (ln F)′ with F = χ²ξ^{n−2} and
//! G = exp((2c²/(n−1))∫₀^r χ²ξ/ξ′). Writing Δ = FGu and h = FG(1 − u) gives
//! Δ′ = F′G, h′ = FG′ and (χ s′)² = h/Δ, so every m = 2 profile, including the
//! n = 2 Gauss-curvature ones, is s = ∫ √(h/(χ²Δ)) for suitable constants.

pub mod quad;

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::ambient::WarpModel;
use crate::angle::trig;
use crate::curvature::Alpha;
use crate::error::{Result, SolvError};
use quad::{gauss10, quad};

const GRID: f64 = 0.05;
const QUAD_TOL: f64 = 1e-13;
const BISECT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParallelGauss {
    /// Tangent to the slice at r0.
    Tangent { r0: f64 },
    Bowl,
    /// Cone point at the origin with angle φ0 to the r-axis.
    Conic { phi0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OracleVariant {
    M2General,
    M2C1,
    M2C2,
    M2Bowl,
    Gauss2Nonparallel,
    Gauss2Parallel(ParallelGauss),
    ParallelSeparable,
    Alpha1N2,
}

/// Cumulative integral ∫_a^x f, tabulated on a uniform grid; values between
/// nodes are completed by a ten-point Gauss rule.
struct Cumulative<F: Fn(f64) -> f64> {
    a: f64,
    nodes: Vec<f64>,
    f: F,
}

impl<F: Fn(f64) -> f64> Cumulative<F> {
    fn new(f: F, a: f64, b: f64) -> Result<Self> {
        let count = (((b - a) / GRID).ceil() as usize).max(1);
        let mut nodes = Vec::with_capacity(count + 1);
        nodes.push(0.0);
        let mut acc = 0.0;
        for k in 0..count {
            let lo = a + k as f64 * GRID;
            acc += quad(&f, lo, lo + GRID, QUAD_TOL)?;
            nodes.push(acc);
        }
        Ok(Cumulative { a, nodes, f })
    }

    fn value(&self, x: f64) -> f64 {
        let k = (((x - self.a) / GRID).floor().max(0.0) as usize).min(self.nodes.len() - 1);
        let lo = self.a + k as f64 * GRID;
        self.nodes[k] + if x > lo { gauss10(&self.f, lo, x) } else { 0.0 }
    }

    fn end(&self) -> f64 {
        self.a + (self.nodes.len() - 1) as f64 * GRID
    }
}

/// Monotone bisection for x ∈ [lo, ∞) with g(x) = target, g increasing.
fn solve_increasing<G: Fn(f64) -> Result<f64>>(g: G, target: f64, lo: f64, hi_cap: f64) -> Result<f64> {
    let mut a = lo;
    let mut b = (lo + 1.0).min(hi_cap);
    while g(b)? < target {
        if b >= hi_cap {
            return Err(SolvError::Range(format!("target {target} not reached below r = {hi_cap}")));
        }
        a = b;
        b = (2.0 * b + 1.0).min(hi_cap);
    }
    while b - a > BISECT_TOL * b.max(1.0) {
        let m = 0.5 * (a + b);
        if g(m)? < target {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

fn ln_g_density(model: &WarpModel, n: u32, c: f64) -> impl Fn(f64) -> f64 + '_ {
    let k = 2.0 * c * c / (n - 1) as f64;
    move |r: f64| {
        let chi = model.eval(r).chi;
        k * chi * chi * model.xi_over_dxi(r)
    }
}

/// F = χ²ξ^{n−2} and F′.
fn f_and_prime(model: &WarpModel, n: u32, r: f64) -> (f64, f64) {
    let w = model.eval(r);
    let k = n as i32 - 2;
    let f = w.chi * w.chi * w.xi.powi(k);
    let fp = 2.0 * w.chi * w.dchi * w.xi.powi(k)
        + if k > 0 { k as f64 * w.chi * w.chi * w.xi.powi(k - 1) * w.dxi } else { 0.0 };
    (f, fp)
}

/// Height profile s(r) = ∫_{r0}^r √(h/(χ²Δ)) of an m = 2, α = 1/2 soliton.
pub struct M2Profile<'a> {
    pub variant: OracleVariant,
    pub model: &'a WarpModel,
    pub n: u32,
    pub c: f64,
    pub c0: f64,
    pub r0: f64,
    h0: f64,
    e0: f64,
    r_hi: f64,
    ln_g: Box<dyn Fn(f64) -> f64 + 'a>,
    del: Box<dyn Fn(f64) -> f64 + 'a>,
    hh: Box<dyn Fn(f64) -> f64 + 'a>,
}

impl<'a> M2Profile<'a> {
    /// Profile for a constant of integration C0, valid up to r_hi.
    pub fn from_c0(model: &'a WarpModel, n: u32, c: f64, c0: f64, r_hi: f64) -> Result<Self> {
        // The boundary radius may lie beyond r_hi; widen the search range until it is found.
        let mut span = r_hi.max(1.0);
        loop {
            match Self::from_c0_within(model, n, c, c0, r_hi, span) {
                Err(SolvError::Range(_)) if span < 64.0 => span *= 2.0,
                other => return other,
            }
        }
    }

    fn from_c0_within(model: &'a WarpModel, n: u32, c: f64, c0: f64, r_hi: f64, span: f64) -> Result<Self> {
        if n < 2 {
            return Err(SolvError::InvalidParams("n ≥ 2 required".into()));
        }
        let f0 = if n == 2 { 1.0 } else { 0.0 };
        let ln_g0 = Cumulative::new(ln_g_density(model, n, c), 0.0, span + GRID)?;
        let cap = ln_g0.end();
        let ln_g = |r: f64| ln_g0.value(r);
        let dprime = |r: f64| f_and_prime(model, n, r).1 * ln_g(r).exp();
        let hprime = |r: f64| f_and_prime(model, n, r).0 * ln_g(r).exp() * ln_g_density(model, n, c)(r);
        let (r0, h0, e0, variant) = if c0 < 0.0 {
            let d0 = Cumulative::new(dprime, 0.0, cap)?;
            let r0 = solve_increasing(|r| Ok(d0.value(r)), -c0, 0.0, cap)?;
            let h0t = Cumulative::new(hprime, 0.0, r0.max(GRID))?;
            (r0, f0 - c0 + h0t.value(r0), 0.0, OracleVariant::M2C2)
        } else if c0 > f0 {
            let h0t = Cumulative::new(hprime, 0.0, cap)?;
            let r0 = solve_increasing(|r| Ok(h0t.value(r)), c0 - f0, 0.0, cap)?;
            let (f, _) = f_and_prime(model, n, r0);
            (r0, 0.0, f * ln_g(r0).exp(), OracleVariant::M2C1)
        } else {
            let v = if c0 == 0.0 && n > 2 { OracleVariant::M2Bowl } else { OracleVariant::M2General };
            (0.0, f0 - c0, c0, v)
        };
        let variant = if n == 2 { OracleVariant::Gauss2Nonparallel } else { variant };
        Self::build(model, n, c, c0, r0, h0, e0, r_hi.max(r0), variant)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        model: &'a WarpModel,
        n: u32,
        c: f64,
        c0: f64,
        r0: f64,
        h0: f64,
        e0: f64,
        r_hi: f64,
        variant: OracleVariant,
    ) -> Result<Self> {
        if r_hi < r0 {
            return Err(SolvError::Domain(format!("r_hi = {r_hi} below r0 = {r0}")));
        }
        let top = r_hi + GRID;
        let ln_g_tab = Cumulative::new(ln_g_density(model, n, c), 0.0, top)?;
        let ln_g_at = move |r: f64| ln_g_tab.value(r);
        let ln_g: Box<dyn Fn(f64) -> f64 + 'a> = Box::new(ln_g_at);
        // Tables from r0 need ln G; share it through a second table instance.
        let lg2 = Cumulative::new(ln_g_density(model, n, c), 0.0, top)?;
        let lg3 = Cumulative::new(ln_g_density(model, n, c), 0.0, top)?;
        let dens = ln_g_density(model, n, c);
        let dtab = Cumulative::new(move |r: f64| f_and_prime(model, n, r).1 * lg2.value(r).exp(), r0, top)?;
        let htab = Cumulative::new(
            move |r: f64| f_and_prime(model, n, r).0 * lg3.value(r).exp() * dens(r),
            r0,
            top,
        )?;
        Ok(M2Profile {
            variant,
            model,
            n,
            c,
            c0,
            r0,
            h0,
            e0,
            r_hi,
            ln_g,
            del: Box::new(move |r| dtab.value(r)),
            hh: Box::new(move |r| htab.value(r)),
        })
    }

    /// n = 2, χ ≡ 1 profiles.
    pub fn gauss_parallel(model: &'a WarpModel, c: f64, kind: ParallelGauss, r_hi: f64) -> Result<Self> {
        if !model.is_parallel() {
            return Err(SolvError::InvalidModel("parallel Gauss profiles need χ ≡ 1".into()));
        }
        let variant = OracleVariant::Gauss2Parallel(kind);
        match kind {
            ParallelGauss::Tangent { r0 } => {
                if !(r0 > 0.0) {
                    return Err(SolvError::Domain(format!("tangent radius {r0} must be positive")));
                }
                let lg = Cumulative::new(ln_g_density(model, 2, c), 0.0, r0 + GRID)?;
                let g0 = lg.value(r0).exp();
                Self::build(model, 2, c, g0, r0, 0.0, g0, r_hi, variant)
            }
            ParallelGauss::Bowl => Self::build(model, 2, c, 1.0, 0.0, 0.0, 1.0, r_hi, variant),
            ParallelGauss::Conic { phi0 } => {
                let c0 = phi0.cos().powi(2);
                if !(phi0 > 0.0 && phi0 < FRAC_PI_2) {
                    return Err(SolvError::Domain(format!("cone angle {phi0} outside (0, π/2)")));
                }
                Self::build(model, 2, c, c0, 0.0, 1.0 - c0, c0, r_hi, variant)
            }
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.r0, self.r_hi)
    }

    fn parts(&self, lam: f64) -> (f64, f64) {
        let h = self.h0 + (self.hh)(lam);
        let d = self.e0 + (self.del)(lam);
        (h, d)
    }

    /// ds/dr at r > r0.
    pub fn slope(&self, r: f64) -> Result<f64> {
        self.check(r)?;
        let (h, d) = self.parts(r);
        let chi = self.model.eval(r).chi;
        Ok((h / (chi * chi * d)).max(0.0).sqrt())
    }

    /// y² = cos²φ = Δ/(Δ + h).
    pub fn cos_sq(&self, r: f64) -> Result<f64> {
        self.check(r)?;
        let (h, d) = self.parts(r);
        Ok(d / (d + h))
    }

    pub fn ln_g(&self, r: f64) -> f64 {
        (self.ln_g)(r)
    }

    fn check(&self, r: f64) -> Result<()> {
        if r < self.r0 || r > self.r_hi + GRID {
            return Err(SolvError::Domain(format!(
                "r = {r} outside the profile domain [{}, {}]",
                self.r0, self.r_hi
            )));
        }
        Ok(())
    }

    /// s(r), with s(r0) = 0; the substitution λ = r0 + u² regularizes the start.
    pub fn s(&self, r: f64) -> Result<f64> {
        self.check(r)?;
        let umax = (r - self.r0).sqrt();
        let integrand = |u: f64| {
            let lam = self.r0 + u * u;
            let (h, d) = self.parts(lam);
            let chi = self.model.eval(lam).chi;
            if d <= 0.0 || lam == self.r0 {
                // Δ ≈ F′G(r0)·u² at a perpendicular start, so 2u·√(h/χ²Δ) stays finite.
                let fg = f_and_prime(self.model, self.n, self.r0).1 * self.ln_g(self.r0).exp();
                return if self.e0 == 0.0 && fg > 0.0 { 2.0 * (h.max(0.0) / (chi * chi * fg)).sqrt() } else { 0.0 };
            }
            let arg = h / (chi * chi * d);
            2.0 * u * arg.max(0.0).sqrt()
        };
        // Δ comes from a difference of cumulative tables, so its roundoff caps the attainable tolerance.
        quad(integrand, 0.0, umax, 1e-10)
    }
}

/// m = 2, α = 1/2 height at r for n ≥ 3 and constant C0.
pub fn m2_profile(model: &WarpModel, n: u32, c: f64, c0: f64, r: f64) -> Result<f64> {
    if n < 3 {
        return Err(SolvError::InvalidParams("m2_profile needs n ≥ 3; use gauss_n2_profile for n = 2".into()));
    }
    let prof = M2Profile::from_c0(model, n, c, c0, r)?;
    prof.s(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GaussN2 {
    Nonparallel { c0: f64 },
    Parallel(ParallelGauss),
}

/// n = m = 2, α = 1/2 heights.
pub fn gauss_n2_profile(model: &WarpModel, c: f64, variant: GaussN2, r: f64) -> Result<f64> {
    let prof = match variant {
        GaussN2::Nonparallel { c0 } => M2Profile::from_c0(model, 2, c, c0, r)?,
        GaussN2::Parallel(kind) => M2Profile::gauss_parallel(model, c, kind, r)?,
    };
    prof.s(r)
}

/// I_{r0}(r) = ∫_{r0}^r (ξ/ξ′)^{n−1}.
pub fn i_r0(model: &WarpModel, n: u32, r0: f64, r: f64) -> Result<f64> {
    quad(|x: f64| model.xi_over_dxi(x).powi(n as i32 - 1), r0, r, 1e-13)
}

/// r(φ) on the orbit of the parallel (χ ≡ 1, m = n) system through (r0, φ0).
pub fn parallel_separable(model: &WarpModel, n: u32, alpha: Alpha, c: f64, r0: f64, phi0: f64, phi: f64) -> Result<f64> {
    if !model.is_parallel() {
        return Err(SolvError::InvalidModel("separable solution needs χ ≡ 1".into()));
    }
    let grid = |x: f64| (x / FRAC_PI_2).floor();
    let (lo, hi) = (phi0.min(phi), phi0.max(phi));
    let inner = |x: f64| trig(x).1.abs() > 0.0;
    let crosses = grid(lo) != grid(hi) && !(hi == (grid(hi) * FRAC_PI_2) && grid(lo) + 1.0 == grid(hi));
    if crosses || !inner(phi) {
        return Err(SolvError::Domain(format!("φ = {phi} and φ0 = {phi0} must lie in one quadrant off ±π/2")));
    }
    let nn = n as i32;
    let target = match alpha {
        Alpha::One => quad(|x: f64| trig(x).0.powi(nn - 1), phi0, phi, 1e-14)? / c,
        Alpha::InverseM => {
            quad(
                |x: f64| {
                    let (s, co) = trig(x);
                    (s / co).powi(nn - 1)
                },
                phi0,
                phi,
                1e-14,
            )? / c.powi(nn)
        }
    };
    let b = -i_r0(model, n, 0.0, r0)?;
    if target < b {
        return Err(SolvError::Range(format!("target {target} below the range bound {b} of I")));
    }
    if target == 0.0 {
        return Ok(r0);
    }
    let g = |r: f64| i_r0(model, n, r0, r);
    if target > 0.0 {
        solve_increasing(g, target, r0, 1e6)
    } else {
        let (mut a, mut bb) = (0.0, r0);
        while bb - a > BISECT_TOL * bb.max(1.0) {
            let m = 0.5 * (a + bb);
            if g(m)? < target {
                a = m;
            } else {
                bb = m;
            }
        }
        Ok(0.5 * (a + bb))
    }
}

/// α = 1, n = m = 2, χ ≡ 1 profile through (r0, φ0).
pub struct Alpha1N2<'a> {
    pub model: &'a WarpModel,
    pub c: f64,
    pub r0: f64,
    pub phi0: f64,
    /// Radius where cos φ reaches 0.
    pub r2: f64,
}

impl<'a> Alpha1N2<'a> {
    pub fn new(model: &'a WarpModel, c: f64, r0: f64, phi0: f64) -> Result<Self> {
        if !model.is_parallel() {
            return Err(SolvError::InvalidModel("needs χ ≡ 1".into()));
        }
        if !(r0 > 0.0) {
            return Err(SolvError::Domain(format!("r0 = {r0} must be positive")));
        }
        let cos0 = trig(phi0).1;
        if cos0 == 0.0 {
            return Err(SolvError::Domain("φ0 = ±π/2 gives an empty domain (r2 = r0)".into()));
        }
        let g = |r: f64| Ok(c * i_r0(model, 2, r0, r)?);
        let r2 = if cos0 > 0.0 {
            solve_increasing(g, cos0, r0, 1e6)?
        } else {
            // c·I(r) decreases below 0 as r decreases from r0; I(0) = −∫_0^{r0}.
            let at0 = g(0.0)?;
            if at0 > cos0 {
                0.0
            } else {
                let (mut a, mut b) = (0.0, r0);
                while b - a > BISECT_TOL * b.max(1.0) {
                    let m = 0.5 * (a + b);
                    if g(m)? < cos0 {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                0.5 * (a + b)
            }
        };
        Ok(Alpha1N2 { model, c, r0, phi0, r2 })
    }

    fn in_domain(&self, r: f64) -> bool {
        if trig(self.phi0).1 > 0.0 {
            r >= self.r0 && r < self.r2
        } else {
            r <= self.r0 && r > self.r2.max(0.0)
        }
    }

    /// cos φ(r) = cos φ0 − c·I_{r0}(r).
    pub fn cos_phi(&self, r: f64) -> Result<f64> {
        Ok(trig(self.phi0).1 - self.c * i_r0(self.model, 2, self.r0, r)?)
    }

    pub fn s(&self, r: f64) -> Result<f64> {
        if !self.in_domain(r) {
            return Err(SolvError::Domain(format!("r = {r} outside the profile interval")));
        }
        let sign = if trig(self.phi0).0 >= 0.0 { 1.0 } else { -1.0 };
        let cos0 = trig(self.phi0).1;
        // Track cos φ along the way with a nested cumulative of ξ/ξ′ from r0.
        let inner = |rho: f64| -> f64 {
            let i = gauss_chain(self.model, self.r0, rho);
            let k = self.c * i - cos0;
            (1.0 / (k * k) - 1.0).max(0.0).sqrt()
        };
        // The slope keeps the sign of tan φ = sin φ/cos φ along the branch.
        let tan_sign = if cos0 > 0.0 { sign } else { -sign };
        Ok(tan_sign * quad(inner, self.r0, r, 1e-12)?)
    }
}

/// ∫_{r0}^ρ ξ/ξ′ by composite ten-point Gauss on pieces of length ≤ GRID.
fn gauss_chain(model: &WarpModel, r0: f64, rho: f64) -> f64 {
    let f = |x: f64| model.xi_over_dxi(x);
    let pieces = (((rho - r0).abs() / GRID).ceil() as usize).max(1);
    let h = (rho - r0) / pieces as f64;
    (0..pieces).map(|k| gauss10(&f, r0 + k as f64 * h, r0 + (k + 1) as f64 * h)).sum()
}

/// Height of the α = 1, n = 2 parallel profile.
pub fn alpha1_n2_profile(model: &WarpModel, c: f64, r0: f64, phi0: f64, r: f64) -> Result<f64> {
    Alpha1N2::new(model, c, r0, phi0)?.s(r)
}
