//! Checks of the dataset requirements (relevance, completeness, accuracy,
//! balance) against simulated or recorded traces and the metadata describing
//! how they were collected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::evidence::sha256_hex;
use crate::simulator::{PatientGroup, SimTrace};

pub const HYPO_LIMIT: f64 = 70.0;
pub const HYPER_LIMIT: f64 = 180.0;
pub const CGM_PERIOD_MIN: u32 = 5;
pub const DEFAULT_IMBALANCE_THRESHOLD: f64 = 20.0;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("no traces to audit")]
    NoTraces,
    #[error("invalid design spec: {0}")]
    Design(String),
    #[error("invalid audit context: {0}")]
    Context(String),
}

pub type Result<T> = std::result::Result<T, AuditError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataOrigin {
    Synthetic,
    Clinical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    /// Years, inclusive.
    pub age_range: (f64, f64),
    pub weight_range_kg: (f64, f64),
    #[serde(default)]
    pub sexes: Vec<String>,
    #[serde(default)]
    pub ethnicities: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditContext {
    pub data_origin: DataOrigin,
    #[serde(default)]
    pub sensor_model: Option<String>,
    #[serde(default)]
    pub insulin_type: Option<String>,
    pub diabetes_type: String,
    pub intended_population: Population,
    pub includes_exercise: bool,
    #[serde(default)]
    pub includes_illness: Option<bool>,
    /// Sex and ethnicity of the recorded subjects, when known.
    #[serde(default)]
    pub recorded_sexes: Option<Vec<String>>,
    #[serde(default)]
    pub recorded_ethnicities: Option<Vec<String>>,
}

impl AuditContext {
    pub fn validate(&self) -> Result<()> {
        if self.data_origin == DataOrigin::Clinical && (self.sensor_model.is_none() || self.insulin_type.is_none()) {
            return Err(AuditError::Context("clinical data needs sensor_model and insulin_type".into()));
        }
        check_range("intended_population.age_range", self.intended_population.age_range).map_err(AuditError::Context)?;
        check_range("intended_population.weight_range_kg", self.intended_population.weight_range_kg).map_err(AuditError::Context)?;
        Ok(())
    }
}

/// What the system is designed for; every field except the imbalance
/// threshold is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub diabetes_type: String,
    /// Upper bound on insulin delivered to one patient in one day, U.
    pub max_daily_insulin: f64,
    #[serde(default = "default_imbalance")]
    pub imbalance_threshold: f64,
    /// Insulin type the controller supports; compared with clinical data.
    #[serde(default)]
    pub insulin_type: Option<String>,
}

fn default_imbalance() -> f64 {
    DEFAULT_IMBALANCE_THRESHOLD
}

impl DesignSpec {
    pub fn validate(&self) -> Result<()> {
        if self.diabetes_type.trim().is_empty() {
            return Err(AuditError::Design("diabetes_type is empty".into()));
        }
        if !(self.max_daily_insulin.is_finite() && self.max_daily_insulin > 0.0) {
            return Err(AuditError::Design("max_daily_insulin must be positive".into()));
        }
        if !(self.imbalance_threshold.is_finite() && self.imbalance_threshold >= 1.0) {
            return Err(AuditError::Design("imbalance_threshold must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: DesignSpec = serde_json::from_str(text).map_err(|e| AuditError::Design(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> std::result::Result<(), String> {
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok(())
    } else {
        Err(format!("{name} must be a finite range with lo <= hi"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RequirementId {
    #[serde(rename = "DR.R1")]
    R1,
    #[serde(rename = "DR.R2")]
    R2,
    #[serde(rename = "DR.R3")]
    R3,
    #[serde(rename = "DR.R4")]
    R4,
    #[serde(rename = "DR.R5")]
    R5,
    #[serde(rename = "DR.C1")]
    C1,
    #[serde(rename = "DR.C2")]
    C2,
    #[serde(rename = "DR.C3")]
    C3,
    #[serde(rename = "DR.C4")]
    C4,
    #[serde(rename = "DR.C5")]
    C5,
    #[serde(rename = "DR.A1")]
    A1,
    #[serde(rename = "DR.A2")]
    A2,
    #[serde(rename = "DR.A3")]
    A3,
    #[serde(rename = "DR.B1")]
    B1,
}

impl RequirementId {
    pub const ALL: [RequirementId; 14] = [
        RequirementId::R1,
        RequirementId::R2,
        RequirementId::R3,
        RequirementId::R4,
        RequirementId::R5,
        RequirementId::C1,
        RequirementId::C2,
        RequirementId::C3,
        RequirementId::C4,
        RequirementId::C5,
        RequirementId::A1,
        RequirementId::A2,
        RequirementId::A3,
        RequirementId::B1,
    ];

    pub fn as_str(self) -> &'static str {
        use RequirementId::*;
        match self {
            R1 => "DR.R1",
            R2 => "DR.R2",
            R3 => "DR.R3",
            R4 => "DR.R4",
            R5 => "DR.R5",
            C1 => "DR.C1",
            C2 => "DR.C2",
            C3 => "DR.C3",
            C4 => "DR.C4",
            C5 => "DR.C5",
            A1 => "DR.A1",
            A2 => "DR.A2",
            A3 => "DR.A3",
            B1 => "DR.B1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }

    /// Requirement text.
    pub fn text(self) -> &'static str {
        use RequirementId::*;
        match self {
            R1 | A1 => "Each data sample shall assume sensor positioning which is representative of that used on the patients",
            R2 => "The format of each data sample shall be representative of that captured using sensors deployed on the body",
            R3 => "The type of each data sample (insulin) shall be representative of that used",
            R4 => "Each data sample shall represent the diabetes type for which the system is developed",
            R5 => "Each data sample shall represent the sex, age, and ethnicity of the persons for which the system is developed",
            C1 => "The data samples shall include examples with a sufficient range of meal carbs, different intraday meal intakes, and exercise",
            C2 => "The data samples shall include examples with different sensor positioning",
            C3 => "The data samples shall include examples with different ages and weights within the allowed ranges",
            C4 => "The data samples shall include patients with frequent hypoglycemic, hyperglycemic, and ketoacidosis problems",
            C5 => "The data samples shall include the profile of patients during the day and night and illness",
            A2 => "CGM sensor readings and pump infusions must be correctly recorded",
            A3 => "The total insulin delivered must be within the limit in each data sample",
            B1 => "The datasets shall have a comparable number of samples for features",
        }
    }
}

impl fmt::Display for RequirementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequirementStatus {
    Met,
    PartiallyMet,
    Violated,
    NotApplicable,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementVerdict {
    pub id: RequirementId,
    pub status: RequirementStatus,
    pub rationale: String,
    pub metrics: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlycemicFractions {
    pub hypo: f64,
    pub in_range: f64,
    pub hyper: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlycemicCounts {
    pub hypo: usize,
    pub in_range: usize,
    pub hyper: usize,
}

impl GlycemicCounts {
    pub fn from_values(bg: impl IntoIterator<Item = f64>) -> Self {
        let mut c = Self::default();
        for v in bg {
            if v < HYPO_LIMIT {
                c.hypo += 1;
            } else if v > HYPER_LIMIT {
                c.hyper += 1;
            } else {
                c.in_range += 1;
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.hypo + self.in_range + self.hyper
    }

    /// `None` when there are no samples.
    pub fn fractions(&self) -> Option<GlycemicFractions> {
        let n = self.total();
        if n == 0 {
            return None;
        }
        let hypo = self.hypo as f64 / n as f64;
        let hyper = self.hyper as f64 / n as f64;
        Some(GlycemicFractions {
            hypo,
            hyper,
            // keeps the three summing to one exactly up to rounding of the last op
            in_range: 1.0 - hypo - hyper,
        })
    }
}

/// Fractions of BG samples below 70, within [70, 180] and above 180 mg/dL.
pub fn glycemic_fractions(bg: impl IntoIterator<Item = f64>) -> Option<GlycemicFractions> {
    GlycemicCounts::from_values(bg).fractions()
}

pub fn trace_fractions(traces: &[SimTrace]) -> Option<GlycemicFractions> {
    glycemic_fractions(traces.iter().flat_map(|t| t.rows.iter().map(|r| r.bg)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Always `"audit_report"`.
    pub kind: String,
    pub requirements: Vec<RequirementVerdict>,
    pub fractions: GlycemicFractions,
    pub counts: GlycemicCounts,
    pub patients: usize,
    pub samples: usize,
    pub dataset_hash: String,
}

impl AuditReport {
    pub fn get(&self, id: RequirementId) -> &RequirementVerdict {
        self.requirements.iter().find(|r| r.id == id).expect("report lists every requirement")
    }

    pub fn status(&self, id: RequirementId) -> RequirementStatus {
        self.get(id).status
    }
}

/// Hash over trace metadata and rows, independent of file layout.
pub fn traces_hash(traces: &[SimTrace]) -> String {
    let mut s = String::new();
    for t in traces {
        let _ = writeln!(s, "{},{},{},{},{}", t.meta.patient_id, t.meta.group, t.meta.weight_kg, t.meta.seed, t.sample_period);
        for r in &t.rows {
            let _ = writeln!(s, "{},{:?},{:?},{:?}", r.t, r.bg, r.insulin, r.meal);
        }
    }
    sha256_hex(s.as_bytes())
}

fn verdict(id: RequirementId, status: RequirementStatus, rationale: impl Into<String>, metrics: Value) -> RequirementVerdict {
    let metrics = match metrics {
        Value::Object(m) => m.into_iter().collect(),
        Value::Null => BTreeMap::new(),
        other => BTreeMap::from([("value".to_string(), other)]),
    };
    RequirementVerdict {
        id,
        status,
        rationale: rationale.into(),
        metrics,
    }
}

/// Largest over smallest among the non-empty classes; absent classes are a
/// coverage question, not a balance one.
fn imbalance_ratio(counts: &[usize]) -> f64 {
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    match (present.iter().max(), present.iter().min()) {
        (Some(&max), Some(&min)) => max as f64 / min as f64,
        _ => 1.0,
    }
}

fn span_of(groups: &BTreeSet<PatientGroup>, f: impl Fn(PatientGroup) -> (f64, f64)) -> Option<(f64, f64)> {
    groups.iter().map(|&g| f(g)).reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
}

/// Parts of `want` not covered by the union of the groups' ranges.
fn uncovered(groups: &BTreeSet<PatientGroup>, f: impl Fn(PatientGroup) -> (f64, f64), want: (f64, f64)) -> Vec<(f64, f64)> {
    let mut ranges: Vec<(f64, f64)> = groups.iter().map(|&g| f(g)).collect();
    ranges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut gaps = Vec::new();
    let mut at = want.0;
    for (lo, hi) in ranges {
        if lo > want.1 {
            break;
        }
        if lo > at {
            gaps.push((at, lo - 1.0));
        }
        // ranges are in whole years and kg, so 12 and 13 abut
        at = at.max(hi + 1.0);
        if at > want.1 {
            break;
        }
    }
    if at <= want.1 {
        gaps.push((at, want.1));
    }
    gaps.retain(|g| g.1 >= g.0);
    gaps
}

pub fn audit(traces: &[SimTrace], ctx: &AuditContext, design: &DesignSpec) -> Result<AuditReport> {
    use RequirementId::*;
    use RequirementStatus::*;
    if traces.is_empty() || traces.iter().all(|t| t.rows.is_empty()) {
        return Err(AuditError::NoTraces);
    }
    ctx.validate()?;
    design.validate()?;
    let synthetic = ctx.data_origin == DataOrigin::Synthetic;
    let counts = GlycemicCounts::from_values(traces.iter().flat_map(|t| t.rows.iter().map(|r| r.bg)));
    let fractions = counts.fractions().expect("non-empty");
    let samples = counts.total();
    let groups: BTreeSet<PatientGroup> = traces.iter().map(|t| t.meta.group).collect();
    let mut out = Vec::with_capacity(14);

    // sensor position, insulin type
    let not_applied = |id| verdict(id, NotApplicable, "synthetic data: no physical sensor or insulin product involved", Value::Null);
    if synthetic {
        out.push(not_applied(R1));
    } else {
        out.push(verdict(R1, Unknown, "sensor positioning is not recorded in the trace metadata", json!({"sensor_model": ctx.sensor_model})));
    }

    let period_ok = traces.iter().all(|t| t.sample_period == CGM_PERIOD_MIN);
    let grid_ok = traces
        .iter()
        .all(|t| t.rows.iter().enumerate().all(|(k, r)| r.t as u64 == k as u64 * t.sample_period as u64));
    out.push(if period_ok && grid_ok {
        verdict(R2, Met, "every trace is a 5-minute CGM series on a regular grid", json!({"sample_period_min": CGM_PERIOD_MIN}))
    } else {
        verdict(
            R2,
            Violated,
            "traces do not follow the 5-minute CGM format",
            json!({"periods": traces.iter().map(|t| t.sample_period).collect::<BTreeSet<_>>(), "regular_grid": grid_ok}),
        )
    });

    if synthetic {
        out.push(not_applied(R3));
    } else {
        let recorded = ctx.insulin_type.clone().unwrap_or_default();
        out.push(match &design.insulin_type {
            Some(want) if want.eq_ignore_ascii_case(&recorded) => verdict(R3, Met, "recorded insulin type matches the design", json!({"insulin_type": recorded})),
            Some(want) => verdict(R3, Violated, format!("recorded insulin `{recorded}` differs from supported `{want}`"), json!({"insulin_type": recorded})),
            None => verdict(R3, Unknown, "design does not name a supported insulin type", json!({"insulin_type": recorded})),
        });
    }

    out.push(if ctx.diabetes_type.trim().eq_ignore_ascii_case(design.diabetes_type.trim()) {
        verdict(R4, Met, format!("data represents {}", ctx.diabetes_type), json!({"diabetes_type": ctx.diabetes_type}))
    } else {
        verdict(
            R4,
            Violated,
            format!("data represents {}, system targets {}", ctx.diabetes_type, design.diabetes_type),
            json!({"diabetes_type": ctx.diabetes_type, "design": design.diabetes_type}),
        )
    });

    // population coverage, shared by R5 and C3
    let pop = &ctx.intended_population;
    let age_gaps = uncovered(&groups, PatientGroup::age_range, pop.age_range);
    let weight_gaps = uncovered(&groups, PatientGroup::weight_range, pop.weight_range_kg);
    let covered = age_gaps.is_empty() && weight_gaps.is_empty();
    let coverage = json!({
        "groups": groups.iter().map(|g| g.as_str()).collect::<Vec<_>>(),
        "age_span": span_of(&groups, PatientGroup::age_range),
        "weight_span_kg": span_of(&groups, PatientGroup::weight_range),
        "uncovered_ages": age_gaps,
        "uncovered_weights_kg": weight_gaps,
    });
    let facet = |recorded: &Option<Vec<String>>, wanted: Option<&Vec<String>>| -> &'static str {
        match (recorded, wanted) {
            (_, None) => "NotRequired",
            (_, Some(w)) if w.is_empty() => "NotRequired",
            (None, _) => "Unknown",
            (Some(r), Some(w)) if w.iter().all(|x| r.iter().any(|y| y.eq_ignore_ascii_case(x))) => "Met",
            _ => "Violated",
        }
    };
    let sex = facet(&ctx.recorded_sexes, Some(&pop.sexes));
    let ethnicity = facet(&ctx.recorded_ethnicities, pop.ethnicities.as_ref());
    let mut r5_metrics = coverage.clone();
    r5_metrics["age"] = json!(if age_gaps.is_empty() { "Met" } else { "Violated" });
    r5_metrics["weight"] = json!(if weight_gaps.is_empty() { "Met" } else { "Violated" });
    r5_metrics["sex"] = json!(sex);
    r5_metrics["ethnicity"] = json!(ethnicity);
    let r5_status = if !covered || sex == "Violated" || ethnicity == "Violated" {
        Violated
    } else if sex == "Unknown" || ethnicity == "Unknown" {
        Unknown
    } else {
        Met
    };
    let mut r5_why = if covered {
        "the groups present cover the intended ages and weights".to_string()
    } else {
        format!("the groups present ({}) do not cover the intended ages and weights", groups.iter().map(|g| g.as_str()).collect::<Vec<_>>().join(", "))
    };
    if sex == "Unknown" || ethnicity == "Unknown" {
        r5_why += "; sex and ethnicity of the subjects are unknown";
    }
    out.push(verdict(R5, r5_status, r5_why, r5_metrics));

    // meal variety and exercise
    let mut carbs = BTreeSet::new();
    let mut meal_times = BTreeSet::new();
    for t in traces {
        for r in &t.rows {
            if r.meal > 0.0 {
                carbs.insert(r.meal.to_bits());
                meal_times.insert(r.t % 1440);
            }
        }
    }
    let meals_vary = carbs.len() > 1 && meal_times.len() > 1;
    let c1_metrics = json!({"distinct_meal_sizes": carbs.len(), "distinct_meal_times": meal_times.len(), "includes_exercise": ctx.includes_exercise});
    out.push(match (meals_vary, ctx.includes_exercise) {
        (true, true) => verdict(C1, Met, "meal sizes and times vary and exercise is included", c1_metrics),
        (true, false) => verdict(C1, PartiallyMet, "meal sizes and times vary but the data does not include exercise", c1_metrics),
        (false, _) => verdict(C1, Violated, "meal sizes or meal times do not vary", c1_metrics),
    });

    if synthetic {
        out.push(not_applied(C2));
    } else {
        out.push(verdict(C2, Unknown, "sensor positioning is not recorded in the trace metadata", Value::Null));
    }

    out.push(if covered {
        verdict(C3, Met, "ages and weights span the allowed ranges", coverage)
    } else {
        verdict(C3, Violated, "ages or weights within the allowed ranges are missing", coverage)
    });

    let c4_metrics = json!({"hypo": fractions.hypo, "in_range": fractions.in_range, "hyper": fractions.hyper});
    out.push(if counts.hypo > 0 && counts.hyper > 0 {
        verdict(C4, Met, "both hypoglycemic and hyperglycemic samples are present", c4_metrics)
    } else {
        verdict(C4, Violated, "hypoglycemic or hyperglycemic samples are missing", c4_metrics)
    });

    out.push(match ctx.includes_illness {
        Some(true) => verdict(C5, Met, "day, night and illness profiles are included", json!({"includes_illness": true})),
        Some(false) => verdict(C5, Violated, "illness profiles are not included", json!({"includes_illness": false})),
        None => verdict(C5, Unknown, "met only if the data generation considers illness; not stated", Value::Null),
    });

    if synthetic {
        out.push(not_applied(A1));
    } else {
        out.push(verdict(A1, Unknown, "sensor positioning is not recorded in the trace metadata", Value::Null));
    }

    let mut bad_rows = 0usize;
    let mut gaps = 0usize;
    for t in traces {
        for (k, r) in t.rows.iter().enumerate() {
            let finite = r.bg.is_finite() && r.insulin.is_finite() && r.meal.is_finite();
            if !finite || r.bg <= 0.0 || r.insulin < 0.0 || r.meal < 0.0 {
                bad_rows += 1;
            }
            if k > 0 && r.t != t.rows[k - 1].t + t.sample_period {
                gaps += 1;
            }
        }
    }
    let a2_metrics = json!({"bad_rows": bad_rows, "gaps": gaps, "rows": samples});
    out.push(if bad_rows == 0 && gaps == 0 {
        verdict(A2, Met, "every row is finite with non-negative insulin and meal and BG recorded each period", a2_metrics)
    } else {
        verdict(A2, Violated, "some rows are invalid or BG periods are missing", a2_metrics)
    });

    let mut worst = 0.0f64;
    let mut offending = Vec::new();
    for t in traces {
        let mut daily: BTreeMap<u32, f64> = BTreeMap::new();
        for r in &t.rows {
            *daily.entry(r.t / 1440).or_default() += r.insulin;
        }
        for (day, total) in daily {
            worst = worst.max(total);
            if total > design.max_daily_insulin {
                offending.push(json!({"patient": t.meta.patient_id, "day": day, "insulin": total}));
            }
        }
    }
    let a3_metrics = json!({"max_daily_insulin": worst, "limit": design.max_daily_insulin, "offending": offending});
    out.push(if offending.is_empty() {
        verdict(A3, Met, "every patient-day stays within the insulin limit", a3_metrics)
    } else {
        verdict(A3, Violated, format!("{} patient-days exceed the insulin limit", offending.len()), a3_metrics)
    });

    let mut group_rows: BTreeMap<&str, usize> = BTreeMap::new();
    let mut group_patients: BTreeMap<&str, usize> = BTreeMap::new();
    for t in traces {
        *group_rows.entry(t.meta.group.as_str()).or_default() += t.rows.len();
        *group_patients.entry(t.meta.group.as_str()).or_default() += 1;
    }
    let glycemic_ratio = imbalance_ratio(&[counts.hypo, counts.in_range, counts.hyper]);
    let group_ratio = imbalance_ratio(&group_rows.values().copied().collect::<Vec<_>>());
    let equal_groups = group_patients.values().collect::<BTreeSet<_>>().len() <= 1;
    let b1_metrics = json!({
        "glycemic_ratio": glycemic_ratio,
        "group_ratio": group_ratio,
        "group_samples": group_rows,
        "group_patients": group_patients,
        "equal_group_sizes": equal_groups,
        "threshold": design.imbalance_threshold,
    });
    let mut reasons = Vec::new();
    if glycemic_ratio > design.imbalance_threshold {
        reasons.push(format!("glycemic classes differ by a factor of {glycemic_ratio:.1}"));
    }
    if group_ratio > design.imbalance_threshold {
        reasons.push(format!("patient groups differ by a factor of {group_ratio:.1}"));
    }
    out.push(if reasons.is_empty() {
        let mut why = format!("class ratios within {}", design.imbalance_threshold);
        if !equal_groups {
            why += "; group sizes are not equal";
        }
        verdict(B1, Met, why, b1_metrics)
    } else {
        if !equal_groups {
            reasons.push("group sizes are not equal".into());
        }
        verdict(B1, Violated, reasons.join("; "), b1_metrics)
    });

    out.sort_by_key(|v| RequirementId::ALL.iter().position(|&id| id == v.id));
    Ok(AuditReport {
        kind: "audit_report".into(),
        requirements: out,
        fractions,
        counts,
        patients: traces.len(),
        samples,
        dataset_hash: traces_hash(traces),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

pub fn render_report(report: &AuditReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serialises"),
        ReportFormat::Text => {
            let mut s = String::new();
            for r in &report.requirements {
                let metrics: Vec<String> = r.metrics.iter().map(|(k, v)| format!("{k}={v}")).collect();
                let _ = writeln!(s, "{:<6} {:<13} {} [{}]", r.id.as_str(), format!("{:?}", r.status), r.rationale, metrics.join(" "));
            }
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_fractions() {
        let bg = [65.0, 69.9, 70.0, 100.0, 120.0, 150.0, 180.0, 181.0, 140.0, 90.0];
        let f = glycemic_fractions(bg).unwrap();
        assert_eq!((f.hypo, f.hyper), (0.2, 0.1));
        assert!((f.in_range - 0.7).abs() < 1e-12);
        let f = glycemic_fractions([100.0; 50]).unwrap();
        assert_eq!((f.hypo, f.in_range, f.hyper), (0.0, 1.0, 0.0));
        assert!(glycemic_fractions(std::iter::empty()).is_none());
    }

    #[test]
    fn ratio_ignores_empty_classes() {
        assert_eq!(imbalance_ratio(&[10, 10, 0]), 1.0);
        assert_eq!(imbalance_ratio(&[1, 40, 4]), 40.0);
        assert_eq!(imbalance_ratio(&[]), 1.0);
    }

    #[test]
    fn coverage_gaps() {
        let all: BTreeSet<_> = PatientGroup::ALL.into_iter().collect();
        assert!(uncovered(&all, PatientGroup::age_range, (7.0, 64.0)).is_empty());
        assert_eq!(uncovered(&all, PatientGroup::age_range, (1.0, 90.0)), vec![(1.0, 6.0), (65.0, 90.0)]);
        assert_eq!(uncovered(&all, PatientGroup::weight_range, (20.0, 150.0)), vec![(119.0, 150.0)]);
        let kids: BTreeSet<_> = [PatientGroup::Child].into_iter().collect();
        assert_eq!(uncovered(&kids, PatientGroup::age_range, (10.0, 12.0)), vec![]);
        assert_eq!(uncovered(&kids, PatientGroup::age_range, (10.0, 30.0)), vec![(13.0, 30.0)]);
    }

    #[test]
    fn ids_roundtrip() {
        for id in RequirementId::ALL {
            assert_eq!(RequirementId::parse(id.as_str()), Some(id));
            assert_eq!(serde_json::to_value(id).unwrap(), json!(id.as_str()));
        }
    }

    #[test]
    fn design_spec_requires_fields() {
        assert!(DesignSpec::from_json(r#"{"diabetes_type":"T1D"}"#).is_err());
        let d = DesignSpec::from_json(r#"{"diabetes_type":"T1D","max_daily_insulin":100}"#).unwrap();
        assert_eq!(d.imbalance_threshold, DEFAULT_IMBALANCE_THRESHOLD);
        assert!(DesignSpec::from_json(r#"{"diabetes_type":"T1D","max_daily_insulin":-1}"#).is_err());
    }
}
