//! Globally adaptive Gauss–Kronrod (10, 21) quadrature.
//!
//! The interval is first mapped by x = a + (b − a)(3t² − 2t³), whose vanishing
//! derivative at both ends absorbs (x − a)^{−1/2} and (b − x)^{−1/2} endpoint
//! singularities.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Result, SolvError};

const MAX_INTERVALS: usize = 5000;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_352,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_5,
    0.149_445_554_002_916_9,
];

/// Gauss weights for the nodes XGK[1], XGK[3], …, XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_36,
    0.295_524_224_714_752_87,
];

/// (Kronrod estimate, |Kronrod − Gauss|) on [a, b].
fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[10] * fc;
    let mut g = 0.0;
    for i in 0..10 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Ten-point Gauss–Legendre on [a, b], for short pieces of smooth integrands.
pub fn gauss10<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for i in 0..5 {
        let x = h * XGK[2 * i + 1];
        acc += WG[i] * (f(c - x) + f(c + x));
    }
    acc * h
}

struct Piece {
    a: f64,
    b: f64,
    val: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// ∫_a^b f with |error| ≤ tol·max(1, |result|).
pub fn quad<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(SolvError::NonIntegrable(format!("infinite interval [{a}, {b}]")));
    }
    let w = b - a;
    let g = |t: f64| {
        let x = a + w * t * t * (3.0 - 2.0 * t);
        let v = f(x) * 6.0 * w * t * (1.0 - t);
        if v.is_finite() {
            v
        } else {
            f64::NAN
        }
    };
    let mut heap = BinaryHeap::new();
    let (v, e) = gk21(&g, 0.0, 1.0);
    heap.push(Piece { a: 0.0, b: 1.0, val: v, err: e });
    let mut total = v;
    let mut total_err = e;
    loop {
        if total.is_nan() || total_err.is_nan() {
            return Err(SolvError::NonIntegrable(format!("integrand not finite on [{a}, {b}]")));
        }
        if total_err <= tol * total.abs().max(1.0) {
            return Ok(total);
        }
        if heap.len() >= MAX_INTERVALS {
            return Err(SolvError::NonIntegrable(format!(
                "refinement stalled on [{a}, {b}] (error estimate {total_err:e})"
            )));
        }
        let worst = heap.pop().expect("nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(SolvError::NonIntegrable(format!("interval underflow near t = {mid}")));
        }
        let (v1, e1) = gk21(&g, worst.a, mid);
        let (v2, e2) = gk21(&g, mid, worst.b);
        total += v1 + v2 - worst.val;
        total_err += e1 + e2 - worst.err;
        heap.push(Piece { a: worst.a, b: mid, val: v1, err: e1 });
        heap.push(Piece { a: mid, b: worst.b, val: v2, err: e2 });
        if total_err < 0.0 {
            total_err = heap.iter().map(|p| p.err).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn examples() {
        assert_relative_eq!(quad(|_| 1.0, 0.0, 1.0, 1e-12).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(quad(|x: f64| x.powf(-0.5), 0.0, 1.0, 1e-12).unwrap(), 2.0, max_relative = 1e-11);
        assert_relative_eq!(quad(f64::sin, 0.0, FRAC_PI_2, 1e-12).unwrap(), 1.0, max_relative = 1e-13);
    }

    #[test]
    fn analytic_singular_integrals() {
        // ∫₀¹ (1−x)^{−1/2} = 2, ∫₀¹ ln x = −1, ∫₀² x^{−1/2}(2−x)^{−1/2} = π.
        assert_relative_eq!(quad(|x: f64| (1.0 - x).powf(-0.5), 0.0, 1.0, 1e-12).unwrap(), 2.0, max_relative = 1e-10);
        assert_relative_eq!(quad(f64::ln, 0.0, 1.0, 1e-12).unwrap(), -1.0, max_relative = 1e-10);
        let v = quad(|x: f64| 1.0 / (x * (2.0 - x)).sqrt(), 0.0, 2.0, 1e-12).unwrap();
        assert_relative_eq!(v, std::f64::consts::PI, max_relative = 1e-10);
        assert_relative_eq!(quad(|x: f64| x * x, 1.0, 0.0, 1e-12).unwrap(), -1.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn non_integrable() {
        assert!(matches!(quad(|x: f64| 1.0 / x, 0.0, 1.0, 1e-10), Err(SolvError::NonIntegrable(_))));
    }

    #[test]
    fn gauss10_polynomial() {
        assert_relative_eq!(gauss10(&|x: f64| x.powi(19), 0.0, 1.0), 0.05, max_relative = 1e-13);
    }
}
