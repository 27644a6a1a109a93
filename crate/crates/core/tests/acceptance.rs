//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use solv::ambient::WarpModel;
use solv::angle::{trig, Quadrant};
use solv::asym::{decay_check, gamma_rate, Weight};
use solv::cli::{m2_oracle_gap, parallel_gap, ORDER_TOL};
use solv::curvature::{binomial, Alpha, FlowParams};
use solv::families::{
    apply_symmetry, build_bowl, build_c1, build_c2, build_c3, build_c3_from_axis, build_c4, build_conic,
    build_parallel, estimate_threshold, residual_ok, ParallelSpec, Soliton, Symmetry,
};
use solv::integrate::{trace_bowl, trace_orbit, Direction, EndpointClass, Limits, BOWL_EPS, RESIDUAL_TOL};
use solv::phase::{tau_field_raw, PhaseState};
use solv::SolvError;

type Outcome = Result<String, String>;

fn fp(n: u32, m: u32, alpha: Alpha, c: f64) -> FlowParams {
    FlowParams::new(n, m, alpha, c).unwrap()
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bowl_expansion() -> Outcome {
    let e = WarpModel::euclidean();
    let mut lines = Vec::new();
    let mut ok = true;
    for (n, m, alpha) in [(3, 2, Alpha::InverseM), (4, 3, Alpha::One)] {
        let p = fp(n, m, alpha, 1.0);
        let sol = build_bowl(&e, &p, &Limits::with_r_max(2.0)).map_err(|e| e.to_string())?;
        let fit = sol.expansion_fit.ok_or("no expansion fit")?;
        // s ≈ (1/2)·C(n,m)^{−1/m}·r² for c = 1.
        let expected = 0.5 * binomial(n, m).powf(-1.0 / m as f64);
        let rel = (fit.coeff / expected - 1.0).abs();
        ok &= rel <= 0.01;
        lines.push(format!("n={n} m={m}: {:.6} vs {expected:.6} (rel {rel:.1e})", fit.coeff));
    }
    ensure(ok, lines.join("; "))
}

fn axis_slope() -> Outcome {
    let e = WarpModel::euclidean();
    let mut lines = Vec::new();
    let mut ok = true;
    for (n, m, alpha, c) in [(3, 2, Alpha::InverseM, 1.0), (4, 3, Alpha::One, 1.0), (5, 2, Alpha::One, 2.0)] {
        let p = fp(n, m, alpha, c);
        let o = trace_bowl(&e, &p, BOWL_EPS, &Limits::with_r_max(0.01)).map_err(|e| e.to_string())?;
        let r0 = 1e-3;
        let w = o
            .samples
            .windows(2)
            .find(|w| w[0].state.r <= r0 && w[1].state.r >= r0)
            .ok_or("no samples around r = 1e-3")?;
        let fd = (w[1].state.phi - w[0].state.phi) / (w[1].state.r - w[0].state.r);
        let ma = m as f64 * p.alpha_value();
        let expected = c.powf(1.0 / ma) * binomial(n, m).powf(-1.0 / m as f64);
        let rel = (fd / expected - 1.0).abs();
        ok &= rel <= 5e-3;
        lines.push(format!("({n},{m},{ma}/{m}) {fd:.6} vs {expected:.6}"));
    }
    ensure(ok, lines.join("; "))
}

fn m2_oracle() -> Outcome {
    let e = WarpModel::euclidean();
    let p = fp(4, 2, Alpha::InverseM, 1.0);
    let lim = Limits::with_r_max(5.0);
    let mut lines = Vec::new();
    let mut ok = true;
    for c0 in [-0.5, 0.0, 0.7] {
        let gap = m2_oracle_gap(&e, &p, c0, &lim, 1e-3).map_err(|e| format!("C0 = {c0}: {e}"))?;
        ok &= gap <= 1e-5;
        lines.push(format!("C0={c0}: {gap:.2e}"));
    }
    ensure(ok, lines.join("; "))
}

fn parallel_oracle() -> Outcome {
    let e = WarpModel::euclidean();
    let lim = Limits::with_r_max(50.0);
    let g1 = parallel_gap(&e, &fp(2, 2, Alpha::One, 1.0), 1.0, &lim).map_err(|e| e.to_string())?;
    let g2 = parallel_gap(&e, &fp(2, 2, Alpha::InverseM, 1.0), 1.0, &lim).map_err(|e| e.to_string())?;
    ensure(g1 <= 1e-8 && g2 <= 1e-6, format!("alpha=1: {g1:.2e}; alpha=1/2: {g2:.2e}"))
}

fn cylinders() -> Outcome {
    let e = WarpModel::euclidean();
    let mut worst = 0.0f64;
    let mut res = 0.0f64;
    for n in [2, 3] {
        for alpha in [Alpha::One, Alpha::InverseM] {
            let p = fp(n, n, alpha, 1.0);
            for r in [0.5, 1.0, 2.0, 5.0] {
                let f = tau_field_raw(&e, &p, r, FRAC_PI_2);
                worst = worst.max(f.dr.hypot(f.dphi));
                let cyl = build_parallel(&e, &p, ParallelSpec::Cylinder { r }, &Limits::with_r_max(10.0))
                    .map_err(|e| e.to_string())?;
                res = res.max(cyl.max_residual());
            }
        }
    }
    ensure(worst <= 1e-14 && res == 0.0, format!("field norm {worst:.1e}, residual {res:e}"))
}

fn gamma_asymptotics() -> Outcome {
    let p = fp(3, 2, Alpha::One, 1.0);
    let eu = gamma_rate(&WarpModel::euclidean(), &p, &[100.0]).map_err(|e| e.to_string())?;
    let hy = gamma_rate(&WarpModel::hyperbolic(), &p, &[30.0]).map_err(|e| e.to_string())?;
    let (de, dh) = (eu.last_deviation(), hy.last_deviation());
    ensure(
        de <= 0.05 && dh <= 0.05,
        format!(
            "euclidean Γr² = {:.4}; hyperbolic Γce^r/S∞ = {:.4} (S∞ = {})",
            eu.points[0].normalized, hy.points[0].normalized, hy.s_infinity
        ),
    )
}

fn decay() -> Outcome {
    let e = WarpModel::euclidean();
    let p = fp(3, 2, Alpha::One, 1.0);
    let o = trace_orbit(&e, &p, &PhaseState::new(1.0, 0.3), Direction::Forward, &Limits::with_r_max(200.0))
        .map_err(|e| e.to_string())?;
    let rep = decay_check(&e, &p, &o, Weight::Power { delta: 0.5 }).map_err(|e| e.to_string())?;
    ensure(
        rep.last_sup * 10.0 <= rep.first_sup,
        format!("sup over [1,2] = {:.3e}, over [100,200] = {:.3e}", rep.first_sup, rep.last_sup),
    )
}

/// Builds a family for the matrix; None when the family does not exist for these parameters.
fn matrix_builds(model: &WarpModel, p: &FlowParams) -> Vec<(String, Result<Soliton, SolvError>)> {
    let lim = Limits::with_r_max(8.0);
    let mut out = vec![("Bowl".to_string(), build_bowl(model, p, &lim))];
    if model.is_parallel() && p.m == p.n {
        out.push(("ParallelCylinder".into(), build_parallel(model, p, ParallelSpec::Cylinder { r: 1.0 }, &lim)));
        out.push(("ParallelC0".into(), build_parallel(model, p, ParallelSpec::C0 { r0: 1.0 }, &lim)));
        return out;
    }
    if p.m_even() {
        out.push(("C1".into(), build_c1(model, p, 1.0, &lim)));
        if p.alpha == Alpha::InverseM {
            out.push(("C2".into(), build_c2(model, p, 1.0, &lim)));
        }
        if p.alpha == Alpha::One {
            out.push(("C4".into(), build_c4(model, p, 1.0, &lim)));
        }
    } else {
        out.push(("C3".into(), build_c3(model, p, 1.0, &lim)));
    }
    if p.m == p.n {
        out.push(("Conic(1.0)".into(), build_conic(model, p, 1.0, &lim)));
    }
    out
}

fn residual_matrix() -> Outcome {
    let models = [("euclidean", WarpModel::euclidean()), ("product", WarpModel::product()), ("hyperbolic", WarpModel::hyperbolic())];
    let mut cases = Vec::new();
    for (mi, _) in models.iter().enumerate() {
        for n in 2..=5u32 {
            for m in 2..=n {
                for alpha in [Alpha::One, Alpha::InverseM] {
                    cases.push((mi, n, m, alpha));
                }
            }
        }
    }
    let results: Vec<(String, Result<f64, String>)> = cases
        .par_iter()
        .flat_map_iter(|&(mi, n, m, alpha)| {
            let (name, model) = (&models[mi].0, &models[mi].1);
            let p = fp(n, m, alpha, 1.0);
            matrix_builds(model, &p).into_iter().filter_map(move |(fam, r)| {
                let tag = format!("{name} ({n},{m},{}) {fam}", p.alpha_value());
                match r {
                    Ok(sol) => Some((tag, Ok(sol.max_residual()))),
                    // The family does not exist at these parameters.
                    Err(SolvError::Parity(_) | SolvError::InvalidParams(_) | SolvError::Threshold { .. }) => None,
                    Err(e) => Some((tag, Err(e.to_string()))),
                }
            })
        })
        .collect();
    let built = results.iter().filter(|r| r.1.is_ok()).count();
    let worst = results.iter().filter_map(|r| r.1.as_ref().ok()).fold(0.0f64, |a, &b| a.max(b));
    let bad: Vec<String> = results
        .iter()
        .filter(|r| r.1.as_ref().map_or(true, |&v| v > RESIDUAL_TOL))
        .map(|r| format!("{}: {:?}", r.0, r.1))
        .collect();
    ensure(bad.is_empty(), format!("{built} builds, max residual {worst:.2e}; failures: {bad:?}"))
}

fn portrait_properties() -> Outcome {
    let e = WarpModel::euclidean();
    let mut rng = ChaCha8Rng::seed_from_u64(20261014);
    let lim = Limits::with_r_max(20.0);
    let mut problems = Vec::new();
    for i in 0..100 {
        let n = rng.gen_range(3..=5);
        let p = fp(n, 2, Alpha::InverseM, rng.gen_range(0.5..2.0));
        let start = PhaseState::new(rng.gen_range(0.1..5.0), rng.gen_range(0.02..FRAC_PI_2 - 0.02));
        match trace_orbit(&e, &p, &start, Direction::Forward, &lim) {
            Ok(o) if o.quadrant_history == [Quadrant::Q1] && o.last().unwrap().r >= start.r => {}
            other => problems.push(format!("trap #{i}: {:?}", other.map(|o| (o.quadrant_history, o.end_event)))),
        }
    }
    let esc_lim = Limits::with_r_max(200.0);
    for i in 0..100 {
        let m = 3;
        let n = rng.gen_range(m..=5);
        let alpha = if rng.gen_bool(0.5) { Alpha::One } else { Alpha::InverseM };
        let p = fp(n, m, alpha, rng.gen_range(0.5..2.0));
        let start = PhaseState::new(rng.gen_range(0.1..5.0), -rng.gen_range(0.02..FRAC_PI_2 - 0.02));
        match trace_orbit(&e, &p, &start, Direction::Forward, &esc_lim) {
            Ok(o) if matches!(o.end_event, EndpointClass::AxisEndpoint { r, .. } if r > start.r && r.is_finite()) => {}
            other => problems.push(format!("escape #{i} {p:?}: {:?}", other.map(|o| o.end_event))),
        }
    }
    let mut worst = 0.0f64;
    for i in 0..20 {
        let p = fp(3, 2, if i % 2 == 0 { Alpha::One } else { Alpha::InverseM }, 1.0);
        let r = rng.gen_range(0.2..3.0);
        let a = rng.gen_range(0.05..1.5);
        let b = rng.gen_range(a + 0.01..FRAC_PI_2 - 0.01);
        // φ_a < φ_b, so y_a > y_b at the common start.
        let oa = trace_orbit(&e, &p, &PhaseState::new(r, a), Direction::Forward, &lim).map_err(|e| e.to_string())?;
        let ob = trace_orbit(&e, &p, &PhaseState::new(r, b), Direction::Forward, &lim).map_err(|e| e.to_string())?;
        for s in &oa.samples {
            if let Some(yb) = ob.y_at(s.state.r) {
                worst = worst.max(yb - trig(s.state.phi).1);
            }
        }
    }
    if worst > ORDER_TOL {
        problems.push(format!("ordering violated by {worst:e}"));
    }
    ensure(problems.is_empty(), format!("max ordering violation {worst:.1e}; {problems:?}"))
}

fn threshold() -> Outcome {
    let h = WarpModel::hyperbolic();
    let p = fp(3, 3, Alpha::One, 1.0);
    let lim = Limits::with_r_max(30.0);
    let est = estimate_threshold(&h, &p, -FRAC_PI_2, 1.0, &lim).map_err(|e| e.to_string())?;
    let below = build_c3_from_axis(&h, &p, 0.9 * est.limit, &lim);
    let above = build_c3_from_axis(&h, &p, 1.1 * est.limit, &lim);
    let ok = est.monotone_decreasing
        && est.limit > 0.0
        && matches!(below, Err(SolvError::Threshold { .. }))
        && above.as_ref().is_ok_and(residual_ok);
    ensure(
        ok,
        format!(
            "r_n ≈ {:.7}, monotone {}, below: {}, above: {}",
            est.limit,
            est.monotone_decreasing,
            below.err().map_or("built".into(), |e| e.to_string()),
            above.map_or_else(|e| e.to_string(), |s| format!("residual {:.1e}", s.max_residual()))
        ),
    )
}

fn symmetry_closure() -> Outcome {
    let e = WarpModel::euclidean();
    let h = WarpModel::hyperbolic();
    let lim = Limits::with_r_max(8.0);
    let sols: Vec<(&WarpModel, Soliton, Symmetry)> = vec![
        (&e, build_bowl(&e, &fp(3, 2, Alpha::InverseM, 1.0), &lim), Symmetry::Reflection),
        (&h, build_c1(&h, &fp(3, 2, Alpha::InverseM, 1.0), 1.0, &lim), Symmetry::Reflection),
        (&h, build_c2(&h, &fp(3, 2, Alpha::InverseM, 1.0), 1.0, &lim), Symmetry::Reflection),
        (&e, build_c4(&e, &fp(3, 2, Alpha::One, 1.0), 1.0, &lim), Symmetry::Reflection),
        (&h, build_conic(&h, &fp(2, 2, Alpha::One, 1.0), 2.0, &lim), Symmetry::Reflection),
        (&e, build_bowl(&e, &fp(4, 3, Alpha::One, 1.0), &lim), Symmetry::Reversion),
        (&e, build_c3(&e, &fp(4, 3, Alpha::One, 1.0), 1.0, &lim), Symmetry::Reversion),
        (&h, build_c3(&h, &fp(5, 3, Alpha::InverseM, 1.0), 1.0, &lim), Symmetry::Reversion),
        (&h, build_c3(&h, &fp(3, 3, Alpha::One, 1.0), 1.0, &lim), Symmetry::Reversion),
        (&e, build_conic(&e, &fp(3, 3, Alpha::One, 1.0), 2.0, &lim), Symmetry::Reversion),
    ]
    .into_iter()
    .map(|(m, s, y)| s.map(|s| (m, s, y)))
    .collect::<Result<_, _>>()
    .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for (model, sol, map) in &sols {
        let img = apply_symmetry(model, sol, *map).map_err(|e| e.to_string())?;
        worst = worst.max(img.max_residual());
        if !residual_ok(&img) || !residual_ok(sol) {
            bad.push(format!("{} {map:?}: {:.2e}", sol.family.name(), img.max_residual()));
        }
        for twin in [&img.branches, &sol.branches] {
            if twin.iter().any(|b| b.samples.iter().any(|s| !s.state.phi.is_finite() || s.state.phi.abs() > PI + 1e-12)) {
                bad.push(format!("{} {map:?}: angle outside [−π, π]", sol.family.name()));
            }
        }
    }
    ensure(bad.is_empty(), format!("{} images, max residual {worst:.2e} {bad:?}", sols.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("bowl expansion", bowl_expansion),
        ("axis slope", axis_slope),
        ("m=2 oracle", m2_oracle),
        ("parallel separable oracle", parallel_oracle),
        ("cylinder equilibria", cylinders),
        ("gamma asymptotics", gamma_asymptotics),
        ("decay to gamma", decay),
        ("residual matrix", residual_matrix),
        ("phase portrait", portrait_properties),
        ("m=n threshold", threshold),
        ("symmetry closure", symmetry_closure),
    ];
    std::panic::set_hook(Box::new(|info| eprintln!("{info}")));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("criterion {}: PASS  {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
