//! Estimators Bob computes from his counts: heralding efficiency, per-setting
//! correlations, the steering parameter, its systematic and statistical error,
//! and the verdict against the bound.

use serde::Serialize;
use serde_json::Value;

use crate::error::{invalid, numeric, Result, SteeringError};
use crate::geometry::{Direction, MeasurementSet, BUILTIN_SETS};
use crate::simulator::{estimate_xk, Announcement, CountsTable, MisalignmentConfig, ProjectorSign};
use crate::strategies::{bound_curve, BoundCurve};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_X: f64 = 1.0 - 2e-4;
pub const DEFAULT_THRESHOLD: f64 = 3.0;

/// Correlation and marginal of Alice's conclusive announcements for one setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SettingEstimate {
    pub k: usize,
    /// `Ẽ_k`: mean of `A·s` over conclusive clicks.
    pub e_tilde: f64,
    /// `δP̃_k = P̃(A = +1) − P̃(A = −1)`.
    pub delta_p_tilde: f64,
    pub conclusive: u64,
    pub bob_clicks: u64,
}

/// Systematic-error terms for one setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SettingError {
    pub k: usize,
    pub x: f64,
    pub delta_n: f64,
    pub delta_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBudget {
    pub systematic: f64,
    pub statistical: f64,
    pub total: f64,
    pub per_setting: Vec<SettingError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    #[serde(rename = "S")]
    pub s: f64,
    pub epsilon_hat: f64,
    pub bound: f64,
    pub delta_s: f64,
    pub significance: f64,
    pub threshold: f64,
    pub steering_demonstrated: bool,
}

/// Pooled conclusive fraction of Bob's clicks over all settings and signs.
pub fn estimate_epsilon(counts: &CountsTable) -> Result<f64> {
    let clicks = counts.total_detections();
    if clicks == 0 {
        return Err(numeric("no Bob detections; efficiency undefined"));
    }
    Ok(counts.total_conclusive() as f64 / clicks as f64)
}

/// Conclusive fraction per setting; `None` where Bob never clicked.
pub fn epsilon_per_setting(counts: &CountsTable) -> Vec<Option<f64>> {
    (0..counts.n())
        .map(|k| {
            let clicks = counts.bob_detections(k);
            (clicks > 0).then(|| counts.conclusive(k) as f64 / clicks as f64)
        })
        .collect()
}

/// Concordant (`A = s`) and discordant conclusive counts for setting `k`.
fn concordance(counts: &CountsTable, k: usize) -> (u64, u64) {
    use Announcement::{Minus, Plus};
    use ProjectorSign as S;
    let a = counts.count(k, S::Plus, Plus) + counts.count(k, S::Minus, Minus);
    let b = counts.count(k, S::Plus, Minus) + counts.count(k, S::Minus, Plus);
    (a, b)
}

pub fn setting_estimates(counts: &CountsTable) -> Result<Vec<SettingEstimate>> {
    (0..counts.n())
        .map(|k| {
            let (a, b) = concordance(counts, k);
            let total = a + b;
            if total == 0 {
                return Err(numeric(format!("setting k={k} has no conclusive counts")));
            }
            let plus: u64 = ProjectorSign::BOTH
                .iter()
                .map(|&s| counts.count(k, s, Announcement::Plus))
                .sum();
            let minus = total - plus;
            Ok(SettingEstimate {
                k,
                e_tilde: (a as f64 - b as f64) / total as f64,
                delta_p_tilde: (plus as f64 - minus as f64) / total as f64,
                conclusive: total,
                bob_clicks: counts.bob_detections(k),
            })
        })
        .collect()
}

/// `S_n = (1/n) Σ_k Ẽ_k`.
pub fn steering_parameter(estimates: &[SettingEstimate]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(invalid("no settings to average"));
    }
    Ok(estimates.iter().map(|e| e.e_tilde).sum::<f64>() / estimates.len() as f64)
}

fn check_x(x: f64) -> Result<()> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(numeric(format!("alignment bound X = {x} outside (0, 1]")));
    }
    Ok(())
}

/// Bound on the deviation `δ𝒩_k` of the click-rate normalization from one,
/// written in observable quantities only.
pub fn delta_n_bound(x: f64, e_tilde: f64, delta_p_tilde: f64) -> Result<f64> {
    check_x(x)?;
    if e_tilde.abs() > 1.0 || delta_p_tilde.abs() > 1.0 {
        return Err(numeric(format!(
            "correlation {e_tilde} or marginal {delta_p_tilde} outside [-1, 1]"
        )));
    }
    let r = (1.0 - x * x).sqrt();
    let e2 = e_tilde * e_tilde;
    let inner =
        r * r * e2 * e2 + 1.0 - e2 + delta_p_tilde * delta_p_tilde + 2.0 * delta_p_tilde.abs() * r;
    Ok((r * e2 + inner.sqrt()) * r)
}

/// `ΔE_k = (1 − X_k + δ𝒩_k)|Ẽ_k|/X_k + √(1 − X_k) √(1 − (1 − δ𝒩_k)² Ẽ_k²)`.
pub fn setting_systematic(x: f64, est: &SettingEstimate) -> Result<SettingError> {
    let dn = delta_n_bound(x, est.e_tilde, est.delta_p_tilde)?;
    let e = est.e_tilde;
    let first = (1.0 - x + dn) * e.abs() / x;
    let second = (1.0 - x).sqrt() * (1.0 - (1.0 - dn).powi(2) * e * e).max(0.0).sqrt();
    Ok(SettingError {
        k: est.k,
        x,
        delta_n: dn,
        delta_e: first + second,
    })
}

/// `ΔS_sys = (1/n) Σ_k ΔE_k`, the per-setting bounds added linearly.
pub fn systematic_error(
    estimates: &[SettingEstimate],
    x: &[f64],
) -> Result<(f64, Vec<SettingError>)> {
    if x.len() != estimates.len() {
        return Err(invalid(format!(
            "{} alignment bounds for {} settings",
            x.len(),
            estimates.len()
        )));
    }
    if estimates.is_empty() {
        return Err(invalid("no settings"));
    }
    let per: Vec<SettingError> = estimates
        .iter()
        .zip(x)
        .map(|(e, &xk)| setting_systematic(xk, e))
        .collect::<Result<_>>()?;
    let total = per.iter().map(|p| p.delta_e).sum::<f64>() / per.len() as f64;
    Ok((total, per))
}

/// Poisson variance of `Ẽ = (a − b)/(a + b)` with one pseudo-count added to
/// each of `a` and `b`: `4(a+1)(b+1)/(a+b+2)³`.
pub fn correlation_variance(a: u64, b: u64) -> f64 {
    let (a, b) = (a as f64 + 1.0, b as f64 + 1.0);
    4.0 * a * b / (a + b).powi(3)
}

/// `ΔS_stat = (1/n) √(Σ_k σ²(Ẽ_k))`.
pub fn statistical_error(counts: &CountsTable) -> Result<f64> {
    let n = counts.n();
    let mut sum = 0.0;
    for k in 0..n {
        let (a, b) = concordance(counts, k);
        if a + b == 0 {
            return Err(numeric(format!("setting k={k} has no conclusive counts")));
        }
        sum += correlation_variance(a, b);
    }
    Ok(sum.sqrt() / n as f64)
}

pub fn total_error(systematic: f64, statistical: f64) -> Result<f64> {
    if !(systematic >= 0.0 && statistical >= 0.0) {
        return Err(numeric("error components must be non-negative"));
    }
    Ok(systematic.hypot(statistical))
}

pub fn verdict(
    s: f64,
    epsilon_hat: f64,
    set: &MeasurementSet,
    delta_s: f64,
    threshold: f64,
) -> Result<Verdict> {
    verdict_with_curve(s, epsilon_hat, &bound_curve(set)?, delta_s, threshold)
}

pub fn verdict_with_curve(
    s: f64,
    epsilon_hat: f64,
    curve: &BoundCurve,
    delta_s: f64,
    threshold: f64,
) -> Result<Verdict> {
    if !(delta_s > 0.0) {
        return Err(numeric(format!("delta_S = {delta_s} must be positive")));
    }
    let (bound, _) = curve.at(epsilon_hat)?;
    let significance = (s - bound) / delta_s;
    Ok(Verdict {
        s,
        epsilon_hat,
        bound,
        delta_s,
        significance,
        threshold,
        steering_demonstrated: significance > threshold,
    })
}

/// Where the per-setting alignment bounds `X_k` come from.
#[derive(Debug, Clone, PartialEq)]
pub enum XSource {
    Constant(f64),
    Values(Vec<f64>),
    MonteCarlo(MisalignmentConfig),
}

impl Default for XSource {
    fn default() -> Self {
        XSource::Constant(DEFAULT_X)
    }
}

impl XSource {
    pub fn resolve(&self, set: &MeasurementSet) -> Result<Vec<f64>> {
        let x = match self {
            XSource::Constant(x) => vec![*x; set.n()],
            XSource::Values(v) => {
                if v.len() != set.n() {
                    return Err(SteeringError::Schema(format!(
                        "{} alignment bounds supplied for {} settings",
                        v.len(),
                        set.n()
                    )));
                }
                v.clone()
            }
            XSource::MonteCarlo(cfg) => estimate_xk(cfg, set)?,
        };
        for &v in &x {
            check_x(v)?;
        }
        Ok(x)
    }

    fn describe(&self) -> Value {
        match self {
            XSource::Constant(x) => serde_json::json!({ "constant": x }),
            XSource::Values(_) => serde_json::json!("file"),
            XSource::MonteCarlo(cfg) => serde_json::json!({ "monte_carlo": cfg }),
        }
    }
}

/// Per-setting alignment bounds, one value per non-comment line, optionally
/// prefixed by the setting index (`k x`).
pub fn parse_x_values(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split([',', ' ', '\t'])
            .filter(|f| !f.is_empty())
            .collect();
        let parse_err = |message: String| SteeringError::Parse {
            line: i + 1,
            message,
        };
        let value = match fields.as_slice() {
            [x] => x,
            [k, x] => {
                let k: usize = k
                    .parse()
                    .map_err(|_| parse_err(format!("bad setting index `{k}`")))?;
                if k != out.len() {
                    return Err(parse_err(format!(
                        "expected setting {}, found {k}",
                        out.len()
                    )));
                }
                x
            }
            _ => return Err(parse_err(format!("expected `x` or `k x`, found `{line}`"))),
        };
        let x: f64 = value
            .parse()
            .map_err(|_| parse_err(format!("bad number `{value}`")))?;
        out.push(x);
    }
    Ok(out)
}

/// The measurement set a counts table was produced with: a built-in set by
/// name, otherwise the axes echoed in its configuration.
pub fn set_for_counts(counts: &CountsTable) -> Result<MeasurementSet> {
    if BUILTIN_SETS.contains(&counts.set_name.as_str()) {
        let set = MeasurementSet::builtin(&counts.set_name)?;
        if set.n() == counts.n() {
            return Ok(set);
        }
    }
    let echo = &counts.config;
    let axes = echo
        .pointer("/set/axes")
        .or_else(|| echo.pointer("/honest/set/axes"))
        .and_then(Value::as_array)
        .ok_or_else(|| {
            SteeringError::Schema(format!(
                "counts for set `{}` carry no axes and it is not a built-in set",
                counts.set_name
            ))
        })?;
    let dirs = axes
        .iter()
        .map(|a| {
            let v: Vec<f64> = serde_json::from_value(a.clone())?;
            match v.as_slice() {
                [x, y, z] => Direction::normalized(*x, *y, *z),
                _ => Err(SteeringError::Schema(
                    "axis must have three components".into(),
                )),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let set = MeasurementSet::new(counts.set_name.clone(), dirs)?;
    if set.n() != counts.n() {
        return Err(SteeringError::Schema(format!(
            "echoed set has {} axes but the table has {} settings",
            set.n(),
            counts.n()
        )));
    }
    Ok(set)
}

/// Everything Bob concludes from one counts table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub format_version: u32,
    pub set: String,
    pub n: usize,
    pub rounds: u64,
    pub seed: u64,
    #[serde(rename = "S")]
    pub s: f64,
    pub epsilon_hat: f64,
    pub epsilon_per_setting: Vec<Option<f64>>,
    pub settings: Vec<SettingEstimate>,
    pub budget: ErrorBudget,
    pub verdict: Verdict,
    pub x_source: Value,
}

impl AnalysisReport {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per setting.
    pub fn to_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row {
            k: usize,
            e_tilde: f64,
            delta_p_tilde: f64,
            conclusive: u64,
            bob_clicks: u64,
            epsilon_k: Option<f64>,
            x_k: f64,
            delta_n_k: f64,
            delta_e_k: f64,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for (e, p) in self.settings.iter().zip(&self.budget.per_setting) {
            w.serialize(Row {
                k: e.k,
                e_tilde: e.e_tilde,
                delta_p_tilde: e.delta_p_tilde,
                conclusive: e.conclusive,
                bob_clicks: e.bob_clicks,
                epsilon_k: self.epsilon_per_setting[e.k],
                x_k: p.x,
                delta_n_k: p.delta_n,
                delta_e_k: p.delta_e,
            })
            .map_err(csv_error)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| csv_error(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub(crate) fn csv_error(e: csv::Error) -> SteeringError {
    SteeringError::Io(std::io::Error::other(e))
}

pub fn analyze(
    counts: &CountsTable,
    set: &MeasurementSet,
    x_source: &XSource,
    threshold: f64,
) -> Result<AnalysisReport> {
    analyze_with_curve(counts, &bound_curve(set)?, set, x_source, threshold)
}

pub fn analyze_with_curve(
    counts: &CountsTable,
    curve: &BoundCurve,
    set: &MeasurementSet,
    x_source: &XSource,
    threshold: f64,
) -> Result<AnalysisReport> {
    if set.n() != counts.n() {
        return Err(SteeringError::Schema(format!(
            "set `{}` has {} settings but the counts have {}",
            set.name(),
            set.n(),
            counts.n()
        )));
    }
    let epsilon_hat = estimate_epsilon(counts)?;
    let settings = setting_estimates(counts)?;
    let s = steering_parameter(&settings)?;
    let x = x_source.resolve(set)?;
    let (systematic, per_setting) = systematic_error(&settings, &x)?;
    let statistical = statistical_error(counts)?;
    let total = total_error(systematic, statistical)?;
    let verdict = verdict_with_curve(s, epsilon_hat, curve, total, threshold)?;
    Ok(AnalysisReport {
        format_version: REPORT_FORMAT_VERSION,
        set: set.name().to_string(),
        n: set.n(),
        rounds: counts.rounds,
        seed: counts.seed,
        s,
        epsilon_hat,
        epsilon_per_setting: epsilon_per_setting(counts),
        settings,
        budget: ErrorBudget {
            systematic,
            statistical,
            total,
            per_setting,
        },
        verdict,
        x_source: x_source.describe(),
    })
}
