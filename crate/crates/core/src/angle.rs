//! Angle helpers: quadrant-exact trigonometry and quadrant tags.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

/// (sin φ, cos φ), exact at the multiples of the f64 value `FRAC_PI_2`.
///
/// The reduction φ = kπ/2 + δ keeps cos φ accurate in relative terms near
/// the vertical directions.
pub fn trig(phi: f64) -> (f64, f64) {
    let k = (phi / FRAC_PI_2).round();
    let delta = phi - k * FRAC_PI_2;
    let (sd, cd) = if delta == 0.0 { (0.0, 1.0) } else { delta.sin_cos() };
    match (k as i64).rem_euclid(4) {
        0 => (sd, cd),
        1 => (cd, -sd),
        2 => (-sd, -cd),
        _ => (-cd, sd),
    }
}

/// φ reduced into (−π, π].
pub fn principal(phi: f64) -> f64 {
    let mut x = phi.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Quadrant {
    /// Quadrant of an angle strictly inside one of the four open quadrants.
    pub fn of_interior(phi: f64) -> Option<Quadrant> {
        let (s, c) = trig(phi);
        match (s > 0.0, s < 0.0, c > 0.0, c < 0.0) {
            (true, _, true, _) => Some(Quadrant::Q1),
            (true, _, _, true) => Some(Quadrant::Q2),
            (_, true, _, true) => Some(Quadrant::Q3),
            (_, true, true, _) => Some(Quadrant::Q4),
            _ => None,
        }
    }

    /// A representative interior angle.
    pub fn mid_angle(self) -> f64 {
        match self {
            Quadrant::Q1 => PI / 4.0,
            Quadrant::Q2 => 3.0 * PI / 4.0,
            Quadrant::Q3 => -3.0 * PI / 4.0,
            Quadrant::Q4 => -PI / 4.0,
        }
    }

    pub fn parse(tag: &str) -> Option<Quadrant> {
        match tag.to_ascii_uppercase().as_str() {
            "Q1" => Some(Quadrant::Q1),
            "Q2" => Some(Quadrant::Q2),
            "Q3" => Some(Quadrant::Q3),
            "Q4" => Some(Quadrant::Q4),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_at_grid_angles() {
        assert_eq!(trig(0.0), (0.0, 1.0));
        assert_eq!(trig(FRAC_PI_2), (1.0, 0.0));
        assert_eq!(trig(-FRAC_PI_2), (-1.0, 0.0));
        let (s, c) = trig(2.0 * FRAC_PI_2);
        assert_eq!((s, c), (0.0, -1.0));
    }

    #[test]
    fn quadrants() {
        assert_eq!(Quadrant::of_interior(0.3), Some(Quadrant::Q1));
        assert_eq!(Quadrant::of_interior(2.0), Some(Quadrant::Q2));
        assert_eq!(Quadrant::of_interior(-2.0), Some(Quadrant::Q3));
        assert_eq!(Quadrant::of_interior(-0.3), Some(Quadrant::Q4));
        assert_eq!(Quadrant::of_interior(FRAC_PI_2), None);
        assert_eq!(Quadrant::of_interior(PI + 0.3), Some(Quadrant::Q3));
    }

    proptest! {
        #[test]
        fn matches_libm(phi in -20.0f64..20.0) {
            let (s, c) = trig(phi);
            prop_assert!((s - phi.sin()).abs() < 1e-14);
            prop_assert!((c - phi.cos()).abs() < 1e-14);
        }
    }
}
