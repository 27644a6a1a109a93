//! Doubly-warped ambient geometries `dr² + ξ(r)² dθ² + χ(r)² ds²` and the
//! structural audit of their warping functions.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolvError};

/// Below this radius the ratios ξ′/ξ and χ′/χ are taken from the series at 0.
pub const R_SERIES: f64 = 1e-3;
/// Tolerance of the finite-difference monotonicity audit.
pub const AUDIT_TOL: f64 = 1e-10;
const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Euclidean,
    Product,
    Hyperbolic,
    Custom,
}

/// Model block of a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Euclidean,
    Product,
    Hyperbolic,
    Custom { a: f64, b: f64, d: f64, e: f64 },
}

/// Coefficients of ξ = a·sinh(br) + d·r and χ = 1 + e·(cosh(br) − 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChiInfinity {
    Finite(f64),
    Infinite,
}

/// Odd/even Taylor data at r = 0: ξ = ξ₁r + ξ₃r³ + ξ₅r⁵, χ = 1 + χ₂r² + χ₄r⁴.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesR0 {
    pub xi1: f64,
    pub xi3: f64,
    pub xi5: f64,
    pub chi2: f64,
    pub chi4: f64,
}

/// Large-r behaviour of the metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AsymptoticClass {
    /// ξ grows linearly, χ → χ_∞.
    Euclidean { chi_infty: f64 },
    /// ξ grows like e^{br}, χ → χ_∞.
    Product { rate: f64, chi_infty: f64 },
    /// ξ and χ both grow like e^{br}.
    Hyperbolic { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpEval {
    pub xi: f64,
    pub dxi: f64,
    pub chi: f64,
    pub dchi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpModel {
    pub kind: ModelKind,
    pub coeffs: Coefficients,
    pub chi_infty: ChiInfinity,
    pub series_r0: SeriesR0,
}

/// Validated construction from a model block.
pub fn make_model(spec: &ModelSpec) -> Result<WarpModel> {
    let model = WarpModel::from_spec_unchecked(spec);
    if let ModelKind::Custom = model.kind {
        validate_custom(&model.coeffs)?;
    }
    Ok(model)
}

fn validate_custom(c: &Coefficients) -> Result<()> {
    let Coefficients { a, b, d, e } = *c;
    if ![a, b, d, e].iter().all(|v| v.is_finite()) {
        return Err(SolvError::InvalidModel("non-finite coefficient".into()));
    }
    if b < 0.0 {
        return Err(SolvError::InvalidModel(format!("b = {b} must be ≥ 0")));
    }
    if b > 0.0 && a < 0.0 {
        return Err(SolvError::InvalidModel(format!(
            "a = {a} < 0 makes ξ negative for large r"
        )));
    }
    if b > 0.0 && e < 0.0 {
        return Err(SolvError::InvalidModel(format!(
            "e = {e} < 0 makes χ negative for large r"
        )));
    }
    let xi1 = a * b + d;
    if (xi1 - 1.0).abs() > NORMALIZATION_TOL {
        return Err(SolvError::InvalidModel(format!(
            "ξ′(0) = ab + d = {xi1}, expected 1"
        )));
    }
    let eb2 = e * b * b;
    if eb2 != 0.0 && (eb2 - 1.0).abs() > NORMALIZATION_TOL {
        return Err(SolvError::InvalidModel(format!(
            "χ″(0) = e·b² = {eb2}, expected 0 (χ ≡ 1) or 1"
        )));
    }
    Ok(())
}

impl WarpModel {
    pub fn euclidean() -> Self {
        Self::from_spec_unchecked(&ModelSpec::Euclidean)
    }

    pub fn product() -> Self {
        Self::from_spec_unchecked(&ModelSpec::Product)
    }

    pub fn hyperbolic() -> Self {
        Self::from_spec_unchecked(&ModelSpec::Hyperbolic)
    }

    /// Builds the model without validation, so that `check_structural` can
    /// audit coefficient sets `make_model` would reject.
    pub fn from_spec_unchecked(spec: &ModelSpec) -> Self {
        let (kind, coeffs) = match *spec {
            ModelSpec::Euclidean => (ModelKind::Euclidean, Coefficients { a: 0.0, b: 0.0, d: 1.0, e: 0.0 }),
            ModelSpec::Product => (ModelKind::Product, Coefficients { a: 1.0, b: 1.0, d: 0.0, e: 0.0 }),
            ModelSpec::Hyperbolic => (ModelKind::Hyperbolic, Coefficients { a: 1.0, b: 1.0, d: 0.0, e: 1.0 }),
            ModelSpec::Custom { a, b, d, e } => (ModelKind::Custom, Coefficients { a, b, d, e }),
        };
        let Coefficients { a, b, d, e } = coeffs;
        let series_r0 = SeriesR0 {
            xi1: a * b + d,
            xi3: a * b.powi(3) / 6.0,
            xi5: a * b.powi(5) / 120.0,
            chi2: e * b * b / 2.0,
            chi4: e * b.powi(4) / 24.0,
        };
        let chi_infty = if e == 0.0 || b == 0.0 {
            ChiInfinity::Finite(1.0)
        } else {
            ChiInfinity::Infinite
        };
        WarpModel { kind, coeffs, chi_infty, series_r0 }
    }

    pub fn spec(&self) -> ModelSpec {
        match self.kind {
            ModelKind::Euclidean => ModelSpec::Euclidean,
            ModelKind::Product => ModelSpec::Product,
            ModelKind::Hyperbolic => ModelSpec::Hyperbolic,
            ModelKind::Custom => {
                let Coefficients { a, b, d, e } = self.coeffs;
                ModelSpec::Custom { a, b, d, e }
            }
        }
    }

    /// χ ≡ 1, i.e. the Killing field ∂_s is parallel.
    pub fn is_parallel(&self) -> bool {
        self.coeffs.e == 0.0 || self.coeffs.b == 0.0
    }

    fn xi_is_linear(&self) -> bool {
        self.coeffs.a == 0.0 || self.coeffs.b == 0.0
    }

    pub fn asymptotic_class(&self) -> Option<AsymptoticClass> {
        let b = self.coeffs.b;
        match (self.xi_is_linear(), self.is_parallel()) {
            (true, true) => Some(AsymptoticClass::Euclidean { chi_infty: 1.0 }),
            (false, true) => Some(AsymptoticClass::Product { rate: b, chi_infty: 1.0 }),
            (false, false) => Some(AsymptoticClass::Hyperbolic { rate: b }),
            (true, false) => None,
        }
    }

    /// Limits of (ξ′/ξ, χ′/χ) as r → ∞.
    pub fn ratio_limits(&self) -> (f64, f64) {
        let b = self.coeffs.b;
        let xi_lim = if self.xi_is_linear() { 0.0 } else { b };
        let chi_lim = if self.is_parallel() { 0.0 } else { b };
        (xi_lim, chi_lim)
    }

    pub fn eval(&self, r: f64) -> WarpEval {
        eval_warp(self, r)
    }

    /// ξ′/ξ; +∞ at r = 0.
    pub fn xi_ratio(&self, r: f64) -> f64 {
        if r < R_SERIES {
            if r == 0.0 {
                return f64::INFINITY;
            }
            let s = &self.series_r0;
            let r2 = r * r;
            (s.xi1 + 3.0 * s.xi3 * r2 + 5.0 * s.xi5 * r2 * r2) / (r * (s.xi1 + s.xi3 * r2 + s.xi5 * r2 * r2))
        } else {
            let w = eval_warp(self, r);
            w.dxi / w.xi
        }
    }

    /// ξ/ξ′; 0 at r = 0.
    pub fn xi_over_dxi(&self, r: f64) -> f64 {
        if r < R_SERIES {
            let s = &self.series_r0;
            let r2 = r * r;
            r * (s.xi1 + s.xi3 * r2 + s.xi5 * r2 * r2) / (s.xi1 + 3.0 * s.xi3 * r2 + 5.0 * s.xi5 * r2 * r2)
        } else {
            let w = eval_warp(self, r);
            w.xi / w.dxi
        }
    }

    /// χ′/χ.
    pub fn chi_ratio(&self, r: f64) -> f64 {
        let w = eval_warp(self, r);
        w.dchi / w.chi
    }
}

/// (ξ, ξ′, χ, χ′) at r ≥ 0; series below `R_SERIES`, closed forms above.
pub fn eval_warp(model: &WarpModel, r: f64) -> WarpEval {
    if r < R_SERIES {
        let s = &model.series_r0;
        let r2 = r * r;
        return WarpEval {
            xi: r * (s.xi1 + s.xi3 * r2 + s.xi5 * r2 * r2),
            dxi: s.xi1 + 3.0 * s.xi3 * r2 + 5.0 * s.xi5 * r2 * r2,
            chi: 1.0 + s.chi2 * r2 + s.chi4 * r2 * r2,
            dchi: 2.0 * s.chi2 * r + 4.0 * s.chi4 * r2 * r,
        };
    }
    match model.kind {
        ModelKind::Euclidean => WarpEval { xi: r, dxi: 1.0, chi: 1.0, dchi: 0.0 },
        ModelKind::Product => WarpEval { xi: r.sinh(), dxi: r.cosh(), chi: 1.0, dchi: 0.0 },
        ModelKind::Hyperbolic => {
            let (sh, ch) = (r.sinh(), r.cosh());
            WarpEval { xi: sh, dxi: ch, chi: ch, dchi: sh }
        }
        ModelKind::Custom => {
            let Coefficients { a, b, d, e } = model.coeffs;
            let br = b * r;
            let (sh, ch) = (br.sinh(), br.cosh());
            let half = (0.5 * br).sinh();
            WarpEval {
                xi: a * sh + d * r,
                dxi: a * b * ch + d,
                chi: 1.0 + e * 2.0 * half * half,
                dchi: e * b * sh,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionResult {
    pub condition: u8,
    pub label: String,
    pub passed: bool,
    pub first_violation: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub conditions: Vec<ConditionResult>,
}

impl AuditReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| !c.passed)
    }
}

/// Audits Structural Conditions 1–4 on `r_grid` (strictly increasing, > 0).
pub fn check_structural(model: &WarpModel, r_grid: &[f64]) -> Result<AuditReport> {
    if r_grid.is_empty() {
        return Err(SolvError::Domain("empty audit grid".into()));
    }
    if r_grid[0] <= 0.0 || r_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SolvError::Domain("audit grid must be positive and strictly increasing".into()));
    }
    let evals: Vec<WarpEval> = r_grid.iter().map(|&r| eval_warp(model, r)).collect();

    // Condition 1: χ positive and non-decreasing.
    let mut c1 = None;
    let mut c1_detail = String::from("χ > 0 and non-decreasing on the grid");
    for (i, w) in evals.iter().enumerate() {
        if !(w.chi > 0.0) {
            c1 = Some(r_grid[i]);
            c1_detail = format!("χ({}) = {} is not positive", r_grid[i], w.chi);
            break;
        }
        if i + 1 < evals.len() && evals[i + 1].chi - w.chi < -AUDIT_TOL {
            c1 = Some(r_grid[i]);
            c1_detail = format!("χ decreases after r = {}", r_grid[i]);
            break;
        }
    }

    // Condition 2: ξ′/ξ decreasing, ξ′χ′/(ξχ) non-increasing.
    let q: Vec<f64> = r_grid.iter().map(|&r| model.xi_ratio(r)).collect();
    let pq: Vec<f64> = r_grid
        .iter()
        .zip(&q)
        .map(|(&r, &qi)| qi * model.chi_ratio(r))
        .collect();
    let mut c2 = None;
    let mut c2_detail = String::new();
    for i in 0..r_grid.len() {
        if !(evals[i].xi > 0.0) {
            c2 = Some(r_grid[i]);
            c2_detail = format!("ξ({}) = {} is not positive", r_grid[i], evals[i].xi);
            break;
        }
        if i + 1 < r_grid.len() {
            if q[i + 1] - q[i] > AUDIT_TOL {
                c2 = Some(r_grid[i]);
                c2_detail = format!("ξ′/ξ increases after r = {}", r_grid[i]);
                break;
            }
            if pq[i + 1] - pq[i] > AUDIT_TOL {
                c2 = Some(r_grid[i]);
                c2_detail = format!("ξ′χ′/(ξχ) increases after r = {}", r_grid[i]);
                break;
            }
        }
    }
    if c2.is_none() {
        let lo = pq.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = pq.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        c2_detail = if hi - lo <= AUDIT_TOL {
            format!("ξ′/ξ decreasing; ξ′χ′/(ξχ) constant = {lo}")
        } else {
            format!("ξ′/ξ decreasing; ξ′χ′/(ξχ) non-increasing in [{lo}, {hi}]")
        };
    }

    // Condition 3: ξ = r + O(r³), χ ∈ {1} ∪ {1 + r²/2 + O(r⁴)}.
    let s = &model.series_r0;
    let xi_ok = (s.xi1 - 1.0).abs() <= NORMALIZATION_TOL;
    let chi_ok = s.chi2.abs() <= NORMALIZATION_TOL || (s.chi2 - 0.5).abs() <= NORMALIZATION_TOL;
    let c3_detail = if xi_ok && chi_ok {
        format!("ξ′(0) = 1, χ″(0)/2 = {}", s.chi2)
    } else if !xi_ok {
        format!("ξ′(0) = {} ≠ 1", s.xi1)
    } else {
        format!("χ″(0)/2 = {} ∉ {{0, 1/2}}", s.chi2)
    };

    // Condition 4: one of the three asymptotic models.
    let class = model.asymptotic_class();
    let c4_detail = match class {
        Some(c) => format!("{c:?}"),
        None => "ξ linear with exponentially growing χ".to_string(),
    };

    Ok(AuditReport {
        conditions: vec![
            ConditionResult {
                condition: 1,
                label: "chi non-decreasing".into(),
                passed: c1.is_none(),
                first_violation: c1,
                detail: c1_detail,
            },
            ConditionResult {
                condition: 2,
                label: "xi'/xi decreasing, xi'chi'/(xi chi) non-increasing".into(),
                passed: c2.is_none(),
                first_violation: c2,
                detail: c2_detail,
            },
            ConditionResult {
                condition: 3,
                label: "behaviour at r = 0".into(),
                passed: xi_ok && chi_ok,
                first_violation: if xi_ok && chi_ok { None } else { Some(0.0) },
                detail: c3_detail,
            },
            ConditionResult {
                condition: 4,
                label: "asymptotic model".into(),
                passed: class.is_some(),
                first_violation: None,
                detail: c4_detail,
            },
        ],
    })
}

/// Uniform audit grid `r_min..=r_max` with `points` nodes.
pub fn audit_grid(r_min: f64, r_max: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points)
        .map(|i| r_min + (r_max - r_min) * i as f64 / (points - 1) as f64)
        .collect()
}
