//! Command-line front end. Flags override values read from `--config`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ambient::{audit_grid, check_structural, make_model, ModelSpec, WarpModel};
use crate::angle::{trig, Quadrant};
use crate::curvature::{Alpha, FlowParams};
use crate::error::{Result, SolvError};
use crate::families::{
    build_bowl, build_c1, build_c2, build_c3, build_c4, build_conic, build_parallel, estimate_threshold, ParallelSpec,
    Soliton,
};
use crate::integrate::{
    trace_bowl, trace_from_axis, trace_from_pole, trace_orbit, Direction, Limits, Orbit, RESIDUAL_TOL,
};
use crate::oracle::{i_r0, quad::quad, M2Profile};
use crate::phase::{big_phi, tau_field_raw, PhaseState};

/// Slack for y-ordering of two orbits that both settle onto Γ.
pub const ORDER_TOL: f64 = 1e-8;

pub const CSV_HEADER: &str = "tau,r,phi,s,chart,kappa_tau,kappa_theta,S,residual";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowBlock {
    pub n: Option<u32>,
    pub m: Option<u32>,
    pub alpha: Option<String>,
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub out: Option<PathBuf>,
    pub dir: Option<PathBuf>,
}

/// JSON run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelSpec>,
    pub flow: FlowBlock,
    pub integrator: Option<Limits>,
    pub task: serde_json::Map<String, serde_json::Value>,
    pub output: OutputBlock,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SolvError::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| SolvError::Config(format!("{}: {e}", path.display())))?;
        if let Some(l) = &cfg.integrator {
            for (k, v) in [("rtol", l.rtol), ("atol", l.atol), ("residual_tol", l.residual_tol), ("eps_pole", l.eps_pole)]
            {
                if !(v > 0.0) {
                    return Err(SolvError::Config(format!("integrator.{k} = {v} must be positive")));
                }
            }
        }
        Ok(cfg)
    }

    fn task_f64(&self, key: &str) -> Option<f64> {
        self.task.get(key).and_then(|v| v.as_f64())
    }

    fn task_str(&self, key: &str) -> Option<String> {
        self.task.get(key).and_then(|v| v.as_str().map(str::to_owned))
    }
}

#[derive(Parser, Debug)]
#[command(name = "solv", about = "Rotational translating solitons of S^α-flows in warped products")]
pub struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Ambient model utilities.
    Model {
        #[command(subcommand)]
        action: ModelCmd,
    },
    /// Trace one orbit and write it as CSV.
    Orbit(OrbitArgs),
    /// Build a soliton family member: CSV per branch plus manifest.json.
    Family(FamilyArgs),
    /// Oracle and invariant checks.
    Verify(VerifyArgs),
    /// Vector field on a grid for external plotting.
    Portrait(PortraitArgs),
}

#[derive(Subcommand, Debug)]
pub enum ModelCmd {
    /// Audit Structural Conditions 1–4.
    Check(CommonArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// euclidean, product, hyperbolic or custom.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub b: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub d: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub e: Option<f64>,
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub m: Option<u32>,
    /// 1 or 1/m (also 1/<m> or the decimal value).
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub rmax: Option<f64>,
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long)]
    pub atol: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct OrbitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// interior, axis, pole or bowl.
    #[arg(long)]
    pub start: Option<String>,
    #[arg(long)]
    pub r0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub phi0: Option<f64>,
    #[arg(long)]
    pub quadrant: Option<String>,
    /// forward or backward in τ.
    #[arg(long)]
    pub direction: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct FamilyArgs {
    /// bowl, C1, C2, C3, C4, conic, parallel-cylinder, parallel-bowl, parallel-C0,
    /// parallel-conic or parallel-annulus.
    pub tag: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub r0: Option<f64>,
    #[arg(long)]
    pub r1: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub phi0: Option<f64>,
    /// Output directory for branch CSVs and the manifest.
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    /// m2-oracle, parallel or invariants.
    pub suite: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long = "C0", allow_hyphen_values = true)]
    pub c0: Option<f64>,
    #[arg(long)]
    pub r0: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct PortraitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub rmin: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub phimin: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub phimax: Option<f64>,
    #[arg(long)]
    pub nr: Option<usize>,
    #[arg(long)]
    pub nphi: Option<usize>,
}

/// Parses `1`, `1/m`, `1/<m>` or a decimal equal to 1 or 1/m.
pub fn parse_alpha(s: &str, m: u32) -> Result<Alpha> {
    let t = s.trim();
    if t == "1" || t == "1.0" {
        return Ok(Alpha::One);
    }
    if t == "1/m" {
        return Ok(Alpha::InverseM);
    }
    let v = if let Some(den) = t.strip_prefix("1/") {
        den.parse::<f64>().map(|d| 1.0 / d)
    } else {
        t.parse::<f64>()
    }
    .map_err(|_| SolvError::Config(format!("cannot parse α = {s}")))?;
    if (v - 1.0).abs() < 1e-12 {
        Ok(Alpha::One)
    } else if (v * m as f64 - 1.0).abs() < 1e-12 {
        Ok(Alpha::InverseM)
    } else {
        Err(SolvError::InvalidParams(format!("α = {s} is neither 1 nor 1/m for m = {m}")))
    }
}

fn parse_model(c: &CommonArgs, cfg: &RunConfig) -> Result<ModelSpec> {
    match c.model.as_deref() {
        None => Ok(cfg.model.unwrap_or(ModelSpec::Euclidean)),
        Some("euclidean") => Ok(ModelSpec::Euclidean),
        Some("product") => Ok(ModelSpec::Product),
        Some("hyperbolic") => Ok(ModelSpec::Hyperbolic),
        Some("custom") => {
            let base = match cfg.model {
                Some(ModelSpec::Custom { a, b, d, e }) => (a, b, d, e),
                _ => (0.0, 0.0, 1.0, 0.0),
            };
            Ok(ModelSpec::Custom {
                a: c.a.unwrap_or(base.0),
                b: c.b.unwrap_or(base.1),
                d: c.d.unwrap_or(base.2),
                e: c.e.unwrap_or(base.3),
            })
        }
        Some(other) => Err(SolvError::Config(format!("unknown model {other}"))),
    }
}

/// Resolved run context.
pub struct Ctx {
    pub model: WarpModel,
    pub params: FlowParams,
    pub limits: Limits,
    pub cfg: RunConfig,
    pub out: Option<PathBuf>,
}

fn context(c: &CommonArgs, cfg: RunConfig, defaults: (u32, u32, &str)) -> Result<Ctx> {
    let spec = parse_model(c, &cfg)?;
    let model = make_model(&spec)?;
    let n = c.n.or(cfg.flow.n).unwrap_or(defaults.0);
    let m = c.m.or(cfg.flow.m).unwrap_or(defaults.1.min(n));
    let alpha_s = c.alpha.clone().or(cfg.flow.alpha.clone()).unwrap_or_else(|| defaults.2.to_owned());
    let alpha = parse_alpha(&alpha_s, m)?;
    let cc = c.c.or(cfg.flow.c).unwrap_or(1.0);
    let params = FlowParams::new(n, m, alpha, cc)?;
    let mut limits = cfg.integrator.unwrap_or_default();
    if let Some(r) = c.rmax {
        limits.r_max = r;
    }
    if let Some(t) = c.rtol {
        limits.rtol = t;
    }
    if let Some(t) = c.atol {
        limits.atol = t;
    }
    for (k, v) in [("rmax", limits.r_max), ("rtol", limits.rtol), ("atol", limits.atol)] {
        if !(v > 0.0) {
            return Err(SolvError::Config(format!("{k} = {v} must be positive")));
        }
    }
    let out = c.out.clone().or(cfg.output.out.clone());
    Ok(Ctx { model, params, limits, cfg, out })
}

/// 17 significant digits, so values round-trip exactly.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn orbit_csv(orbit: &Orbit) -> String {
    let mut s = String::with_capacity(160 * orbit.len() + 64);
    s.push_str(CSV_HEADER);
    s.push('\n');
    for x in &orbit.samples {
        let st = &x.state;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            fmt_num(st.tau),
            fmt_num(st.r),
            fmt_num(st.phi),
            fmt_num(st.s),
            st.chart.name(),
            fmt_num(x.curv.kappa_tau),
            fmt_num(x.curv.kappa_theta),
            fmt_num(x.curv.mean_curvature),
            fmt_num(x.curv.residual)
        );
    }
    s
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| SolvError::Config(format!("{}: {e}", dir.display())))?;
        }
    }
    fs::write(path, text).map_err(|e| SolvError::Config(format!("{}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Worker pool capped by `SOLV_THREADS`.
pub fn pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SOLV_THREADS") {
        let k: usize = v.trim().parse().map_err(|_| SolvError::Config(format!("SOLV_THREADS = {v} is not a count")))?;
        b = b.num_threads(k.max(1));
    }
    b.build().map_err(|e| SolvError::Config(e.to_string()))
}

pub fn cmd_model_check(c: &CommonArgs, cfg: RunConfig) -> Result<i32> {
    let spec = parse_model(c, &cfg)?;
    if let Some(n) = c.n.or(cfg.flow.n) {
        if n < 2 {
            return Err(SolvError::InvalidParams(format!("n = {n} must be ≥ 2")));
        }
    }
    let model = WarpModel::from_spec_unchecked(&spec);
    let r_max = c.rmax.or(cfg.integrator.map(|l| l.r_max)).unwrap_or(50.0);
    let report = check_structural(&model, &audit_grid(1e-3, r_max, 2001))?;
    let mut text = String::new();
    for cond in &report.conditions {
        let _ = writeln!(
            text,
            "condition {} ({}): {}{}",
            cond.condition,
            cond.label,
            if cond.passed { "pass" } else { "FAIL" },
            cond.first_violation.map(|r| format!(" at r = {r}")).unwrap_or_default()
        );
    }
    if let Err(e) = make_model(&spec) {
        let _ = writeln!(text, "coefficients rejected: {e}");
        emit(&c.out, &text)?;
        return Ok(1);
    }
    if let Some(f) = report.first_failure() {
        let _ = writeln!(text, "first violation: condition {}: {}", f.condition, f.detail);
    }
    emit(&c.out, &text)?;
    Ok(if report.all_pass() { 0 } else { 1 })
}

fn parse_direction(s: Option<&str>) -> Result<Direction> {
    match s {
        None | Some("forward") => Ok(Direction::Forward),
        Some("backward") => Ok(Direction::Backward),
        Some(o) => Err(SolvError::Config(format!("direction {o} is not forward/backward"))),
    }
}

pub fn cmd_orbit(a: &OrbitArgs, cfg: RunConfig) -> Result<i32> {
    let ctx = context(&a.common, cfg, (3, 2, "1"))?;
    let (model, p, lim) = (&ctx.model, &ctx.params, &ctx.limits);
    let start = a.start.clone().or(ctx.cfg.task_str("start")).unwrap_or_else(|| "interior".into());
    let r0 = a.r0.or(ctx.cfg.task_f64("r0"));
    let phi0 = a.phi0.or(ctx.cfg.task_f64("phi0"));
    let need = |v: Option<f64>, k: &str| v.ok_or_else(|| SolvError::Config(format!("start {start} needs --{k}")));
    let orbit = match start.as_str() {
        "interior" => {
            let dir = parse_direction(a.direction.as_deref().or(ctx.cfg.task_str("direction").as_deref()))?;
            trace_orbit(model, p, &PhaseState::new(need(r0, "r0")?, need(phi0, "phi0")?), dir, lim)?
        }
        "axis" => {
            let qs = a.quadrant.clone().or(ctx.cfg.task_str("quadrant")).unwrap_or_else(|| "Q1".into());
            let q = Quadrant::parse(&qs).ok_or_else(|| SolvError::Config(format!("unknown quadrant {qs}")))?;
            trace_from_axis(model, p, need(r0, "r0")?, q, lim)?
        }
        "pole" => trace_from_pole(model, p, need(phi0, "phi0")?, lim)?,
        "bowl" => trace_bowl(model, p, crate::integrate::BOWL_EPS, lim)?,
        other => return Err(SolvError::Config(format!("unknown start {other}"))),
    };
    let csv = orbit_csv(&orbit);
    match &ctx.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    let start_ev = orbit.start_event.map(|e| e.name()).unwrap_or("Interior");
    let line = format!(
        "start: {start_ev}; end: {}; samples: {}; max_residual: {:e}",
        orbit.end_event.name(),
        orbit.len(),
        orbit.max_residual
    );
    if ctx.out.is_some() {
        println!("{line}");
        println!("endpoint: {}", serde_json::to_string(&orbit.end_event).unwrap_or_default());
    } else {
        eprintln!("{line}");
    }
    Ok(if orbit.residual_ok(lim.residual_tol) { 0 } else { 2 })
}

fn build_family(tag: &str, a: &FamilyArgs, ctx: &Ctx) -> Result<Soliton> {
    let (model, p, lim) = (&ctx.model, &ctx.params, &ctx.limits);
    let get = |v: Option<f64>, k: &str| {
        v.or(ctx.cfg.task_f64(k)).ok_or_else(|| SolvError::Config(format!("family {tag} needs --{k}")))
    };
    match tag {
        "bowl" => build_bowl(model, p, lim),
        "C1" => build_c1(model, p, get(a.r0, "r0")?, lim),
        "C2" => build_c2(model, p, get(a.r0, "r0")?, lim),
        "C3" => build_c3(model, p, get(a.r1, "r1")?, lim),
        "C4" => build_c4(model, p, get(a.r1, "r1")?, lim),
        "conic" | "C1n" | "C3n" | "C4n" => build_conic(model, p, get(a.phi0, "phi0")?, lim),
        "parallel-cylinder" => build_parallel(model, p, ParallelSpec::Cylinder { r: get(a.r, "r")? }, lim),
        "parallel-bowl" => build_parallel(model, p, ParallelSpec::Bowl, lim),
        "parallel-C0" => build_parallel(model, p, ParallelSpec::C0 { r0: get(a.r0, "r0")? }, lim),
        "parallel-conic" => build_parallel(model, p, ParallelSpec::Conic { phi0: get(a.phi0, "phi0")? }, lim),
        "parallel-annulus" => build_parallel(model, p, ParallelSpec::Annulus { r0: get(a.r0, "r0")? }, lim),
        other => Err(SolvError::Config(format!("unknown family {other}"))),
    }
}

fn guidance(e: &SolvError) -> Option<&'static str> {
    match e {
        SolvError::Parity(_) => Some("C1, C2 and C4 need m even; C3 needs m odd"),
        SolvError::Threshold { .. } => {
            Some("for m = n the axis radius must exceed the threshold; see thresholds.rn from a larger radius")
        }
        _ => None,
    }
}

pub fn manifest(sol: &Soliton, files: &[String], rn: Option<f64>) -> serde_json::Value {
    json!({
        "family": sol.family.name(),
        "params": {
            "spec": sol.family,
            "n": sol.params.n,
            "m": sol.params.m,
            "alpha": sol.params.alpha_value(),
            "c": sol.params.c,
        },
        "branches": files,
        "junction": sol.junction.map(|j| json!({"r": j.r, "phi": j.phi, "s": j.s, "tangent": j.tangent, "orthogonal": j.orthogonal})),
        "thresholds": {"r0": sol.thresholds.r0, "rn": rn.or(sol.thresholds.rn)},
        "expansion_fit": sol.expansion_fit.map(|f| json!({"coeff": f.coeff, "expected": f.expected, "rel_err": f.rel_err})),
        "regularity": sol.regularity,
        "max_residual": sol.max_residual(),
    })
}

pub fn cmd_family(a: &FamilyArgs, cfg: RunConfig) -> Result<i32> {
    let tag = a.tag.clone().or(cfg.task_str("family")).ok_or_else(|| SolvError::Config("missing family tag".into()))?;
    let ctx = context(&a.common, cfg, (3, 2, "1"))?;
    let dir = a.dir.clone().or(ctx.cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let sol = match build_family(&tag, a, &ctx) {
        Ok(s) => s,
        Err(e) => {
            if let Some(g) = guidance(&e) {
                eprintln!("hint: {g}");
            }
            return Err(e);
        }
    };
    let p = &ctx.params;
    let rn = if p.m == p.n && !ctx.model.is_parallel() && matches!(tag.as_str(), "C3" | "C4" | "conic" | "C3n" | "C4n") {
        let (v, side) = if p.m_even() { (std::f64::consts::FRAC_PI_2, 1.0) } else { (-std::f64::consts::FRAC_PI_2, 1.0) };
        estimate_threshold(&ctx.model, p, v, side, &ctx.limits).ok().map(|t| t.limit)
    } else {
        None
    };
    let mut files = Vec::new();
    for (i, b) in sol.branches.iter().enumerate() {
        let name = format!("branch{i}.csv");
        write_file(&dir.join(&name), &orbit_csv(b))?;
        files.push(name);
    }
    let man = manifest(&sol, &files, rn);
    let text = serde_json::to_string_pretty(&man).map_err(|e| SolvError::Numerical(e.to_string()))? + "\n";
    write_file(&dir.join("manifest.json"), &text)?;
    println!("{} built: {} branch(es), max_residual {:e}", sol.family.name(), files.len(), sol.max_residual());
    Ok(if sol.max_residual() <= ctx.limits.residual_tol { 0 } else { 2 })
}

/// One row of a verification table.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Check { name: name.into(), value, tol, passed: value <= tol }
    }
}

/// Traced m = 2, α = 1/2 orbit matching the oracle constant C0, with its axis/boundary radius.
pub fn m2_traced(model: &WarpModel, p: &FlowParams, c0: f64, limits: &Limits) -> Result<(Orbit, f64)> {
    let prof = M2Profile::from_c0(model, p.n, p.c, c0, 1.0)?;
    let r0 = prof.r0;
    let orbit = if c0 == 0.0 && p.n > 2 {
        trace_bowl(model, p, crate::integrate::BOWL_EPS, limits)?
    } else if c0 < 0.0 {
        build_c2(model, p, r0, limits)?.branches.remove(0)
    } else if c0 > 1.0 || p.n > 2 {
        trace_from_axis(model, p, r0, Quadrant::Q1, limits)?
    } else {
        return Err(SolvError::Domain("n = 2 cone profiles start at the pole; use the gauss oracle".into()));
    };
    Ok((orbit, r0))
}

/// Sup-norm difference of traced and oracle heights, relative to the oracle's sup norm,
/// over samples at least `collar` away from both ends.
pub fn m2_oracle_gap(model: &WarpModel, p: &FlowParams, c0: f64, limits: &Limits, collar: f64) -> Result<f64> {
    if p.m != 2 || p.alpha != Alpha::InverseM {
        return Err(SolvError::InvalidParams("the m = 2 oracle needs m = 2, α = 1/2".into()));
    }
    let (orbit, r0) = m2_traced(model, p, c0, limits)?;
    let r_end = orbit.samples.iter().map(|s| s.state.r).fold(0.0, f64::max);
    let prof = M2Profile::from_c0(model, p.n, p.c, c0, r_end)?;
    let s_base = orbit.s_at(model, r0).unwrap_or(orbit.samples[0].state.s);
    let pts: Vec<(f64, f64)> = orbit
        .samples
        .iter()
        .filter(|s| s.state.r > r0 + collar && s.state.r < r_end - collar && trig(s.state.phi).1 > 0.0)
        .map(|s| (s.state.r, s.state.s - s_base))
        .collect();
    if pts.is_empty() {
        return Err(SolvError::Numerical("no samples inside the comparison window".into()));
    }
    let stride = pts.len().div_ceil(100);
    let mut diff = 0.0f64;
    let mut norm = 0.0f64;
    for &(r, s) in pts.iter().step_by(stride).chain(pts.last()) {
        let so = prof.s(r)?;
        diff = diff.max((s - so).abs());
        norm = norm.max(so.abs());
    }
    Ok(diff / norm.max(f64::MIN_POSITIVE))
}

/// Max deviation of a traced Q₁ axis orbit (r0, 0) from the separable closed form
/// c^{−1/α}∫₀^φ (sin or tan)^{n−1} = I_{r0}(r), on parallel models with m = n.
/// Smallest cos φ used by the parallel comparison.
pub const PARALLEL_COS_FLOOR: f64 = 1e-4;

/// Sup over the Q₁ samples of |c^q·I_{r0}(r) − ∫φ-side| / max(1, |∫φ-side|).
pub fn parallel_gap(model: &WarpModel, p: &FlowParams, r0: f64, limits: &Limits) -> Result<f64> {
    let o = trace_from_axis(model, p, r0, Quadrant::Q1, limits)?;
    let nn = p.n as i32;
    let mut worst = 0.0f64;
    let (mut prev_phi, mut prev_r) = (0.0, r0);
    let (mut acc_phi, mut acc_r) = (0.0, 0.0);
    for s in o.samples.iter().skip(1) {
        let (sn, cs) = trig(s.state.phi);
        // Near φ = π/2 the tan integral is evaluated within a few ulps of its pole.
        if !(sn > 0.0 && cs > PARALLEL_COS_FLOOR) {
            break;
        }
        let (phi, r) = (s.state.phi, s.state.r);
        let lhs = match p.alpha {
            Alpha::One if nn == 2 => 1.0 - cs,
            Alpha::One => {
                acc_phi += quad(|x: f64| x.sin().powi(nn - 1), prev_phi, phi, 1e-12)?;
                acc_phi
            }
            Alpha::InverseM => {
                acc_phi += quad(|x: f64| x.tan().powi(nn - 1), prev_phi, phi, 1e-12)?;
                acc_phi
            }
        };
        acc_r += i_r0(model, p.n, prev_r, r)?;
        worst = worst.max((p.c.powi(p.q()) * acc_r - lhs).abs() / lhs.abs().max(1.0));
        (prev_phi, prev_r) = (phi, r);
    }
    Ok(worst)
}

pub fn cmd_verify(a: &VerifyArgs, cfg: RunConfig) -> Result<i32> {
    let suite = a.suite.clone().or(cfg.task_str("suite")).ok_or_else(|| SolvError::Config("missing verify suite".into()))?;
    let defaults = match suite.as_str() {
        "m2-oracle" => (4, 2, "1/m"),
        "parallel" => (2, 2, "1"),
        _ => (3, 2, "1"),
    };
    let mut common = a.common.clone();
    if suite == "parallel" && common.m.is_none() {
        common.m = common.n.or(cfg.flow.n);
    }
    let ctx = context(&common, cfg, defaults)?;
    let (model, p) = (&ctx.model, &ctx.params);
    let lim = Limits { r_max: common.rmax.unwrap_or(ctx.limits.r_max.min(5.0)), ..ctx.limits };
    let mut checks = Vec::new();
    match suite.as_str() {
        "m2-oracle" => {
            let c0 = a.c0.or(ctx.cfg.task_f64("C0")).unwrap_or(0.0);
            let gap = m2_oracle_gap(model, p, c0, &lim, 1e-3)?;
            checks.push(Check::new(format!("m2 oracle sup-norm (C0 = {c0})"), gap, 1e-5));
        }
        "parallel" => {
            let r0 = a.r0.or(ctx.cfg.task_f64("r0")).unwrap_or(1.0);
            let tol = if p.alpha == Alpha::One { 1e-8 } else { 1e-6 };
            let lim = Limits { r_max: common.rmax.unwrap_or(ctx.limits.r_max), ..lim };
            checks.push(Check::new("separable closed form", parallel_gap(model, p, r0, &lim)?, tol));
        }
        "invariants" => {
            let o = trace_orbit(model, p, &PhaseState::new(1.0, 0.3), Direction::Forward, &lim)?;
            checks.push(Check::new("max |residual|", o.max_residual, RESIDUAL_TOL));
            let mono = o
                .samples
                .windows(2)
                .filter(|w| trig(w[0].state.phi).1 > 0.0 && trig(w[0].state.phi).0 > 0.0)
                .map(|w| (w[0].state.s - w[1].state.s).max(0.0))
                .fold(0.0, f64::max);
            checks.push(Check::new("Q1 height decrease", mono, 0.0));
            let o2 = trace_orbit(model, p, &PhaseState::new(1.0, 0.6), Direction::Forward, &lim)?;
            let mut crossing = 0.0f64;
            for s in &o.samples {
                let r = s.state.r;
                if let (Some(y1), Some(y2)) = (o.y_at(r), o2.y_at(r)) {
                    crossing = crossing.max(y2 - y1);
                }
            }
            checks.push(Check::new("ordering violation", crossing.max(0.0), ORDER_TOL));
        }
        other => return Err(SolvError::Config(format!("unknown verify suite {other}"))),
    }
    let mut text = String::from("check,value,tol,result\n");
    for c in &checks {
        let _ = writeln!(text, "{},{:e},{:e},{}", c.name, c.value, c.tol, if c.passed { "PASS" } else { "FAIL" });
    }
    emit(&ctx.out, &text)?;
    Ok(if checks.iter().all(|c| c.passed) { 0 } else { 1 })
}

pub fn cmd_portrait(a: &PortraitArgs, cfg: RunConfig) -> Result<i32> {
    let ctx = context(&a.common, cfg, (3, 2, "1"))?;
    let (model, p) = (&ctx.model, &ctx.params);
    let rmin = a.rmin.or(ctx.cfg.task_f64("rmin")).unwrap_or(0.1);
    let rmax = a.common.rmax.or(ctx.cfg.task_f64("rmax")).unwrap_or(5.0);
    let pi = std::f64::consts::PI;
    let phimin = a.phimin.or(ctx.cfg.task_f64("phimin")).unwrap_or(-pi);
    let phimax = a.phimax.or(ctx.cfg.task_f64("phimax")).unwrap_or(pi);
    let nr = a.nr.unwrap_or(40).max(2);
    let nphi = a.nphi.unwrap_or(40).max(2);
    if !(rmin > 0.0 && rmax > rmin && phimax > phimin) {
        return Err(SolvError::Domain("portrait grid bounds must satisfy 0 < rmin < rmax, phimin < phimax".into()));
    }
    let rows: Vec<String> = pool()?.install(|| {
        (0..nr)
            .into_par_iter()
            .map(|i| {
                let r = rmin + (rmax - rmin) * i as f64 / (nr - 1) as f64;
                let phi_curve = big_phi(model, p, r);
                let mut buf = String::new();
                for j in 0..nphi {
                    let phi = phimin + (phimax - phimin) * j as f64 / (nphi - 1) as f64;
                    let (sn, cs) = trig(phi);
                    if p.restricted_phase_space() && cs < 0.0 {
                        continue;
                    }
                    let f = tau_field_raw(model, p, r, phi);
                    let dphi = if sn == 0.0 { f64::NAN } else { f.dphi };
                    let _ = writeln!(
                        buf,
                        "{},{},{},{},{}",
                        fmt_num(r),
                        fmt_num(phi),
                        fmt_num(f.dr),
                        fmt_num(dphi),
                        fmt_num(phi_curve)
                    );
                }
                buf
            })
            .collect()
    });
    let mut text = String::from("r,phi,dr_dtau,dphi_dtau,Phi\n");
    for r in rows {
        text.push_str(&r);
    }
    emit(&ctx.out, &text)?;
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<i32> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match &cli.cmd {
        Cmd::Model { action: ModelCmd::Check(c) } => cmd_model_check(c, cfg),
        Cmd::Orbit(a) => cmd_orbit(a, cfg),
        Cmd::Family(a) => cmd_family(a, cfg),
        Cmd::Verify(a) => cmd_verify(a, cfg),
        Cmd::Portrait(a) => cmd_portrait(a, cfg),
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
