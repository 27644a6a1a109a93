//! Dormand–Prince 5(4) with the standard dense output, for autonomous systems.

pub type Vec4 = [f64; 4];

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One attempted step: end value, FSAL derivative, error norm and dense coefficients.
#[derive(Debug, Clone)]
pub struct Step {
    pub h: f64,
    pub y0: Vec4,
    pub y1: Vec4,
    pub k_end: Vec4,
    pub err: f64,
    rc: [Vec4; 5],
}

impl Step {
    /// Dense output at fraction θ ∈ [0, 1] of the step.
    pub fn dense(&self, theta: f64) -> Vec4 {
        let t1 = 1.0 - theta;
        let mut out = [0.0; 4];
        for i in 0..4 {
            let r = &self.rc;
            out[i] = r[0][i] + theta * (r[1][i] + t1 * (r[2][i] + theta * (r[3][i] + t1 * r[4][i])));
        }
        out
    }
}

fn axpy(y: &Vec4, terms: &[(f64, &Vec4)], h: f64) -> Vec4 {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..4 {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Takes one step of size `h` from `y0` with known derivative `k1`.
pub fn step<F, E>(f: &F, y0: &Vec4, k1: &Vec4, h: f64, rtol: f64, atol: f64) -> Result<Step, E>
where
    F: Fn(&Vec4) -> Result<Vec4, E>,
{
    let k2 = f(&axpy(y0, &[(A21, k1)], h))?;
    let k3 = f(&axpy(y0, &[(A31, k1), (A32, &k2)], h))?;
    let k4 = f(&axpy(y0, &[(A41, k1), (A42, &k2), (A43, &k3)], h))?;
    let k5 = f(&axpy(y0, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)], h))?;
    let k6 = f(&axpy(y0, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h))?;
    let y1 = axpy(y0, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)], h);
    let k7 = f(&y1)?;

    let mut acc = 0.0;
    for i in 0..4 {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
        acc += (e / sc).powi(2);
    }
    let err = (acc / 4.0).sqrt();

    let mut rc = [[0.0; 4]; 5];
    for i in 0..4 {
        let d = y1[i] - y0[i];
        let r3 = h * k1[i] - d;
        rc[0][i] = y0[i];
        rc[1][i] = d;
        rc[2][i] = r3;
        rc[3][i] = d - h * k7[i] - r3;
        rc[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    Ok(Step { h, y0: *y0, y1, k_end: k7, err: if err.is_nan() { f64::INFINITY } else { err }, rc })
}

/// Step-size factor for the next attempt.
pub fn factor(err: f64) -> f64 {
    if err == 0.0 {
        return 5.0;
    }
    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
}

/// Integrates y′ = f(y) over [0, t_end] with adaptive steps, returning y(t_end).
pub fn integrate<F, E>(f: &F, y0: &Vec4, t_end: f64, rtol: f64, atol: f64) -> Result<Vec4, E>
where
    F: Fn(&Vec4) -> Result<Vec4, E>,
{
    let mut y = *y0;
    let mut t = 0.0;
    let mut k = f(&y)?;
    let mut h = t_end / 16.0;
    let sign = t_end.signum();
    while (t_end - t) * sign > 0.0 {
        if (t + h - t_end) * sign > 0.0 {
            h = t_end - t;
        }
        let st = step(f, &y, &k, h, rtol, atol)?;
        if st.err <= 1.0 {
            t += h;
            y = st.y1;
            k = st.k_end;
        }
        h *= factor(st.err);
        if h.abs() < 1e-300 {
            break;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_growth() {
        let f = |y: &Vec4| -> Result<Vec4, ()> { Ok([y[0], -y[1], 1.0, 0.0]) };
        let y = integrate(&f, &[1.0, 1.0, 0.0, 0.0], 2.0, 1e-12, 1e-12).unwrap();
        assert_relative_eq!(y[0], 2f64.exp(), max_relative = 1e-10);
        assert_relative_eq!(y[1], (-2f64).exp(), max_relative = 1e-10);
        assert_relative_eq!(y[2], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn dense_output_matches_solution() {
        let f = |y: &Vec4| -> Result<Vec4, ()> { Ok([y[1], -y[0], 0.0, 0.0]) };
        let y0 = [0.0, 1.0, 0.0, 0.0];
        let k = f(&y0).unwrap();
        let st = step(&f, &y0, &k, 0.02, 1e-10, 1e-10).unwrap();
        for i in 0..=10 {
            let th = i as f64 / 10.0;
            let d = st.dense(th);
            assert!((d[0] - (0.02 * th).sin()).abs() < 1e-12);
        }
    }
}
