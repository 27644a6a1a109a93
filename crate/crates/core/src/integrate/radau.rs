//! Three-stage Radau IIA for a stiff scalar equation y′ = g(r, y), carrying two
//! quadratures along the collocation stages.

const S6: f64 = 2.449_489_742_783_178;

fn nodes() -> [f64; 3] {
    [(4.0 - S6) / 10.0, (4.0 + S6) / 10.0, 1.0]
}

fn matrix() -> [[f64; 3]; 3] {
    [
        [(88.0 - 7.0 * S6) / 360.0, (296.0 - 169.0 * S6) / 1800.0, (-2.0 + 3.0 * S6) / 225.0],
        [(296.0 + 169.0 * S6) / 1800.0, (88.0 + 7.0 * S6) / 360.0, (-2.0 - 3.0 * S6) / 225.0],
        [(16.0 - S6) / 36.0, (16.0 + S6) / 36.0, 1.0 / 9.0],
    ]
}

/// Solves M x = b for a 3×3 system by partial pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col] == 0.0 || !m[piv][col].is_finite() {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let mut acc = b[i];
        for k in i + 1..3 {
            acc -= m[i][k] * x[k];
        }
        x[i] = acc / m[i][i];
    }
    Some(x)
}

/// Result of one collocation step of signed length `dr`.
#[derive(Debug, Clone, Copy)]
pub struct Collocation {
    pub y1: f64,
    pub quad: [f64; 2],
}

/// One Radau IIA step. `admissible` guards Newton iterates; `quad` gives the
/// integrands carried along.
pub fn step<G, Q, A>(g: &G, quad: &Q, admissible: &A, r0: f64, y0: f64, dr: f64) -> Option<Collocation>
where
    G: Fn(f64, f64) -> f64,
    Q: Fn(f64, f64) -> [f64; 2],
    A: Fn(f64) -> bool,
{
    let c = nodes();
    let a = matrix();
    let rs = [r0 + c[0] * dr, r0 + c[1] * dr, r0 + dr];
    let mut y = [y0; 3];
    let mut converged = false;
    for _ in 0..40 {
        let gv = [g(rs[0], y[0]), g(rs[1], y[1]), g(rs[2], y[2])];
        if gv.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut res = [0.0; 3];
        for i in 0..3 {
            res[i] = -(y[i] - y0 - dr * (a[i][0] * gv[0] + a[i][1] * gv[1] + a[i][2] * gv[2]));
        }
        let mut jac = [0.0; 3];
        for j in 0..3 {
            let d = 1e-7 * y[j].abs().max(1e-300);
            let (lo, hi) = (y[j] - d, y[j] + d);
            jac[j] = if admissible(lo) && admissible(hi) {
                (g(rs[j], hi) - g(rs[j], lo)) / (2.0 * d)
            } else {
                (g(rs[j], y[j] + d) - gv[j]) / d
            };
        }
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = if i == j { 1.0 } else { 0.0 } - dr * a[i][j] * jac[j];
            }
        }
        let delta = solve3(m, res)?;
        let mut lam = 1.0;
        let mut tries = 0;
        while !(0..3).all(|i| admissible(y[i] + lam * delta[i])) {
            lam *= 0.5;
            tries += 1;
            if tries > 60 {
                return None;
            }
        }
        let mut big = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..3 {
            y[i] += lam * delta[i];
            big = big.max((lam * delta[i]).abs());
            scale = scale.max(y[i].abs());
        }
        if big <= 1e-14 * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }
    let mut q = [0.0; 2];
    for j in 0..3 {
        let v = quad(rs[j], y[j]);
        q[0] += a[2][j] * v[0];
        q[1] += a[2][j] * v[1];
    }
    Some(Collocation { y1: y[2], quad: [q[0] * dr, q[1] * dr] })
}

/// Step-doubling estimate: returns the two-half-step solution and the scaled error.
pub fn doubled_step<G, Q, A>(
    g: &G,
    quad: &Q,
    admissible: &A,
    r0: f64,
    y0: f64,
    s0: f64,
    dr: f64,
    rtol: f64,
    atol: f64,
) -> Option<(Collocation, f64)>
where
    G: Fn(f64, f64) -> f64,
    Q: Fn(f64, f64) -> [f64; 2],
    A: Fn(f64) -> bool,
{
    let full = step(g, quad, admissible, r0, y0, dr)?;
    let h1 = step(g, quad, admissible, r0, y0, 0.5 * dr)?;
    let h2 = step(g, quad, admissible, r0 + 0.5 * dr, h1.y1, 0.5 * dr)?;
    let fine = Collocation { y1: h2.y1, quad: [h1.quad[0] + h2.quad[0], h1.quad[1] + h2.quad[1]] };
    let ey = (fine.y1 - full.y1).abs() / 31.0 / (rtol * fine.y1.abs().max(y0.abs()) + atol * 1e-6);
    let s1 = s0 + fine.quad[0];
    let es = (fine.quad[0] - full.quad[0]).abs() / 31.0 / (rtol * s1.abs().max(s0.abs()) + atol);
    Some((fine, ey.max(es)))
}

pub fn factor(err: f64) -> f64 {
    if err == 0.0 {
        return 3.0;
    }
    (0.9 * err.powf(-1.0 / 6.0)).clamp(0.2, 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stiff_linear_relaxation() {
        // y′ = −1e6 (y − cos r): y tracks cos r after a transient.
        let g = |r: f64, y: f64| -1e6 * (y - r.cos());
        let quad = |_r: f64, y: f64| [y, 1.0];
        let ok = |_y: f64| true;
        let mut r = 0.0;
        let mut y = 1.0;
        let mut s = 0.0;
        let mut h: f64 = 0.01;
        while r < 1.0 {
            let dr = h.min(1.0 - r);
            if let Some((out, err)) = doubled_step(&g, &quad, &ok, r, y, s, dr, 1e-10, 1e-10) {
                if err <= 1.0 {
                    r += dr;
                    y = out.y1;
                    s += out.quad[0];
                }
                h = dr * factor(err);
            } else {
                h *= 0.5;
            }
        }
        assert!((y - (1f64.cos() + 1e-6 * 1f64.sin())).abs() < 1e-9);
        assert!((s - 1f64.sin()).abs() < 1e-6);
    }

    #[test]
    fn collocation_exact_for_polynomials() {
        let g = |r: f64, _y: f64| 5.0 * r.powi(4);
        let quad = |r: f64, _y: f64| [r * r, 0.0];
        let out = step(&g, &quad, &|_| true, 0.0, 0.0, 1.0).unwrap();
        assert!((out.y1 - 1.0).abs() < 1e-14);
        assert!((out.quad[0] - 1.0 / 3.0).abs() < 1e-14);
    }
}
