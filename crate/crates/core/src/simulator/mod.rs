//! Virtual-patient glucose-insulin simulator.
//!
//! The dynamics are a Bergman-style minimal model with an added gut compartment:
//!
//! ```text
//! dG/dt = -(p1 + X) G + p1 Gb + f kabs Q * 1000 / Vg     plasma glucose, mg/dL
//! dX/dt = -p2 X + p3 (I - Ib)                            remote insulin action, 1/min
//! dI/dt = u(t) - n I                                     plasma insulin, U
//! dQ/dt = meals(t) - kabs Q                              gut carbohydrate, g
//! ```
//!
//! with `Ib = basal_rate / 60 / n`, `Vg = 1.6 dL/kg * weight` and
//! `p3 = SI p2 n / Gb`, so that one unit of insulin removes roughly `SI` mg/dL
//! of glucose in total. Delivering exactly the basal rate with no meals keeps
//! the state at the fixed point `(Gb, 0, Ib, 0)`.
//!
//! Integration is explicit Euler on a fixed step; traces are sampled on a
//! coarser grid (5 minutes by default) where each row reports the CGM reading at
//! the row time and the insulin/meal delivered during the following period.

mod io;

pub use io::{
    export_traces, import_trace, read_manifest, trace_file_name, trace_from_str, trace_to_string, write_manifest, CohortManifest,
    ManifestEntry, TRACE_HEADER,
};

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Glucose distribution volume per kg of body weight, dL/kg.
pub const GLUCOSE_VOLUME_PER_KG: f64 = 1.6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid patient parameters: {0}")]
    InvalidParams(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("simulation state became non-finite at t={t_min} min")]
    NonFinite { t_min: u32 },
    #[error("trace io error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatientGroup {
    Adolescent,
    Adult,
    Child,
}

impl PatientGroup {
    pub const ALL: [PatientGroup; 3] = [PatientGroup::Adolescent, PatientGroup::Adult, PatientGroup::Child];

    pub fn as_str(self) -> &'static str {
        match self {
            PatientGroup::Adolescent => "adolescent",
            PatientGroup::Adult => "adult",
            PatientGroup::Child => "child",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adolescent" => Some(PatientGroup::Adolescent),
            "adult" => Some(PatientGroup::Adult),
            "child" => Some(PatientGroup::Child),
            _ => None,
        }
    }

    /// Body-weight range of the group, kg.
    pub fn weight_range(self) -> (f64, f64) {
        match self {
            PatientGroup::Child => (20.0, 60.0),
            PatientGroup::Adolescent => (35.0, 90.0),
            PatientGroup::Adult => (50.0, 118.0),
        }
    }

    /// Age range represented by the group, years.
    pub fn age_range(self) -> (f64, f64) {
        match self {
            PatientGroup::Child => (7.0, 12.0),
            PatientGroup::Adolescent => (13.0, 19.0),
            PatientGroup::Adult => (20.0, 64.0),
        }
    }

    fn insulin_sensitivity_range(self) -> (f64, f64) {
        match self {
            PatientGroup::Child => (70.0, 110.0),
            PatientGroup::Adolescent => (45.0, 75.0),
            PatientGroup::Adult => (30.0, 55.0),
        }
    }

    fn basal_rate_range(self) -> (f64, f64) {
        match self {
            PatientGroup::Child => (0.3, 0.8),
            PatientGroup::Adolescent => (0.6, 1.4),
            PatientGroup::Adult => (0.7, 1.6),
        }
    }
}

impl fmt::Display for PatientGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientParams {
    pub id: String,
    pub group: PatientGroup,
    /// kg
    pub body_weight: f64,
    /// mg/dL removed per unit of insulin
    pub insulin_sensitivity: f64,
    /// 1/min
    pub glucose_effectiveness: f64,
    pub carb_bioavailability: f64,
    /// 1/min
    pub gut_absorption_rate: f64,
    /// 1/min
    pub insulin_action_rate: f64,
    /// 1/min
    pub insulin_clearance_rate: f64,
    /// U/hr
    pub basal_rate: f64,
    /// g per U
    pub carb_ratio: f64,
    /// mg/dL
    pub basal_glucose: f64,
}

impl PatientParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidParams(format!("{}: {m}", self.id)));
        let rates = [
            ("insulin_sensitivity", self.insulin_sensitivity),
            ("glucose_effectiveness", self.glucose_effectiveness),
            ("gut_absorption_rate", self.gut_absorption_rate),
            ("insulin_action_rate", self.insulin_action_rate),
            ("insulin_clearance_rate", self.insulin_clearance_rate),
            ("basal_rate", self.basal_rate),
            ("carb_ratio", self.carb_ratio),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.carb_bioavailability > 0.0 && self.carb_bioavailability <= 1.0) {
            return bad(format!("carb_bioavailability must lie in (0, 1], got {}", self.carb_bioavailability));
        }
        if !(90.0..=140.0).contains(&self.basal_glucose) {
            return bad(format!("basal_glucose must lie in [90, 140], got {}", self.basal_glucose));
        }
        let (lo, hi) = self.group.weight_range();
        if !(lo..=hi).contains(&self.body_weight) {
            return bad(format!(
                "body weight {} kg outside the {} range [{lo}, {hi}]",
                self.body_weight, self.group
            ));
        }
        Ok(())
    }

    /// Glucose distribution volume, dL.
    pub fn glucose_volume(&self) -> f64 {
        GLUCOSE_VOLUME_PER_KG * self.body_weight
    }

    /// Steady-state plasma insulin under the basal rate, U.
    pub fn basal_insulin(&self) -> f64 {
        self.basal_rate / 60.0 / self.insulin_clearance_rate
    }

    /// Gain from plasma insulin excess to remote insulin action.
    pub fn insulin_gain(&self) -> f64 {
        self.insulin_sensitivity * self.insulin_action_rate * self.insulin_clearance_rate / self.basal_glucose
    }

    /// Carb ratio at which a bolus removes as much glucose as the meal adds.
    pub fn balanced_carb_ratio(&self) -> f64 {
        self.glucose_volume() * self.insulin_sensitivity / (self.carb_bioavailability * 1000.0)
    }
}

/// Draws `n_per_group` patients for each of the three groups, parameters
/// uniform in group-specific ranges. Deterministic in `seed`.
pub fn sample_cohort(n_per_group: usize, seed: u64) -> Vec<PatientParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(3 * n_per_group);
    for group in PatientGroup::ALL {
        for k in 0..n_per_group {
            let u = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| rng.gen_range(lo..=hi);
            let mut p = PatientParams {
                id: format!("{}_{:03}", group.as_str(), k + 1),
                group,
                body_weight: u(&mut rng, group.weight_range()),
                insulin_sensitivity: u(&mut rng, group.insulin_sensitivity_range()),
                glucose_effectiveness: u(&mut rng, (0.01, 0.025)),
                carb_bioavailability: u(&mut rng, (0.8, 1.0)),
                gut_absorption_rate: u(&mut rng, (0.01, 0.025)),
                insulin_action_rate: u(&mut rng, (0.015, 0.03)),
                insulin_clearance_rate: u(&mut rng, (0.05, 0.15)),
                basal_rate: u(&mut rng, group.basal_rate_range()),
                carb_ratio: 1.0,
                basal_glucose: u(&mut rng, (100.0, 140.0)),
            };
            p.carb_ratio = p.balanced_carb_ratio() * u(&mut rng, (0.75, 1.25));
            out.push(p);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MealEvent {
    /// Minutes since trace start, on the 1-minute grid.
    pub time: u32,
    /// g
    pub carbs: f64,
}

/// One daily meal opportunity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MealWindow {
    /// Clock-time window in minutes after midnight, `[start, end)`.
    pub window: (u32, u32),
    /// Carbohydrate range, g.
    pub carbs: (f64, f64),
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    /// Basal infusion plus a carb-ratio bolus at each announced meal.
    BasalBolus,
    BasalOnly,
    /// No insulin at all.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bolus {
    pub time: u32,
    pub units: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub days: u32,
    pub sample_period: u32,
    pub integration_step: u32,
    pub meal_schedule: Vec<MealWindow>,
    pub controller: ControllerMode,
    /// Manual boluses on top of the controller.
    #[serde(default)]
    pub extra_boluses: Vec<Bolus>,
    /// Standard deviation of additive Gaussian CGM noise, mg/dL.
    #[serde(default)]
    pub cgm_noise_sd: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let window = |a: u32, b: u32| MealWindow {
            window: (a * 60, b * 60),
            carbs: (20.0, 80.0),
            probability: 0.95,
        };
        Self {
            days: 40,
            sample_period: 5,
            integration_step: 1,
            meal_schedule: vec![window(7, 9), window(12, 14), window(18, 20)],
            controller: ControllerMode::BasalBolus,
            extra_boluses: Vec::new(),
            cgm_noise_sd: 0.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        if self.days == 0 {
            return bad("days must be >= 1");
        }
        if self.integration_step == 0 || self.sample_period == 0 {
            return bad("sample_period and integration_step must be positive");
        }
        if self.sample_period % self.integration_step != 0 {
            return bad("sample_period must be a multiple of integration_step");
        }
        for w in &self.meal_schedule {
            if w.window.0 >= w.window.1 || w.window.1 > 1440 {
                return bad("meal window must satisfy start < end <= 1440");
            }
            if !(w.carbs.0 > 0.0 && w.carbs.0 <= w.carbs.1) {
                return bad("meal carbs range must be positive and ordered");
            }
            if !(0.0..=1.0).contains(&w.probability) {
                return bad("meal probability must lie in [0, 1]");
            }
        }
        if !(self.cgm_noise_sd >= 0.0) {
            return bad("cgm_noise_sd must be >= 0");
        }
        Ok(())
    }

    pub fn duration_minutes(&self) -> u32 {
        self.days * 1440
    }

    pub fn expected_rows(&self) -> usize {
        (self.duration_minutes() / self.sample_period) as usize + 1
    }
}

/// Per day, each window contributes at most one meal (with its probability) at
/// a uniform minute inside the window, with carbs uniform in its range.
pub fn generate_meals<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Vec<MealEvent> {
    let mut meals = Vec::new();
    for day in 0..cfg.days {
        for w in &cfg.meal_schedule {
            // Draw both values unconditionally so the stream stays aligned.
            let hit: f64 = rng.gen();
            let minute = rng.gen_range(w.window.0..w.window.1);
            let carbs = if w.carbs.0 == w.carbs.1 {
                w.carbs.0
            } else {
                rng.gen_range(w.carbs.0..=w.carbs.1)
            };
            if hit < w.probability {
                meals.push(MealEvent {
                    time: day * 1440 + minute,
                    carbs,
                });
            }
        }
    }
    meals.sort_by_key(|m| m.time);
    meals
}

/// Model state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatientState {
    /// Plasma glucose, mg/dL.
    pub glucose: f64,
    /// Remote insulin action, 1/min.
    pub insulin_action: f64,
    /// Plasma insulin, U.
    pub plasma_insulin: f64,
    /// Gut carbohydrate, g.
    pub gut_carbs: f64,
}

impl PatientState {
    pub fn steady(p: &PatientParams) -> Self {
        Self {
            glucose: p.basal_glucose,
            insulin_action: 0.0,
            plasma_insulin: p.basal_insulin(),
            gut_carbs: 0.0,
        }
    }

    fn is_finite(&self) -> bool {
        self.glucose.is_finite() && self.insulin_action.is_finite() && self.plasma_insulin.is_finite() && self.gut_carbs.is_finite()
    }

    /// One explicit-Euler step of `h` minutes; `insulin` U and `carbs` g enter
    /// their compartments at the start of the step.
    pub fn step(&mut self, p: &PatientParams, h: f64, insulin: f64, carbs: f64) {
        let s = *self;
        let ra = p.carb_bioavailability * p.gut_absorption_rate * s.gut_carbs * 1000.0 / p.glucose_volume();
        let dg = -(p.glucose_effectiveness + s.insulin_action) * s.glucose + p.glucose_effectiveness * p.basal_glucose + ra;
        let dx = -p.insulin_action_rate * s.insulin_action + p.insulin_gain() * (s.plasma_insulin - p.basal_insulin());
        let di = insulin / h - p.insulin_clearance_rate * s.plasma_insulin;
        let dq = carbs / h - p.gut_absorption_rate * s.gut_carbs;
        self.glucose += h * dg;
        self.insulin_action += h * dx;
        self.plasma_insulin += h * di;
        self.gut_carbs += h * dq;
    }
}

/// Basal-bolus dose for one integration step of `step_minutes`: the basal share
/// plus `carbs / carb_ratio` when a meal is announced. Never negative.
pub fn basal_bolus_controller(_state: &PatientState, p: &PatientParams, step_minutes: f64, announced_meal: f64) -> f64 {
    let basal = p.basal_rate * step_minutes / 60.0;
    let bolus = if announced_meal > 0.0 { announced_meal / p.carb_ratio } else { 0.0 };
    (basal + bolus).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Minutes since start.
    pub t: u32,
    /// CGM reading, mg/dL.
    pub bg: f64,
    /// Insulin delivered during `[t, t + sample_period)`, U.
    pub insulin: f64,
    /// Carbohydrate ingested during `[t, t + sample_period)`, g.
    pub meal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub patient_id: String,
    pub group: PatientGroup,
    pub weight_kg: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub meta: TraceMeta,
    pub sample_period: u32,
    pub rows: Vec<TraceRow>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Runs one patient for `cfg.days` and samples `days * 1440 / sample_period + 1`
/// rows. BG is reported unclamped; see [`validate_trace`].
pub fn simulate_patient(p: &PatientParams, cfg: &SimConfig, meals: &[MealEvent]) -> Result<SimTrace> {
    p.validate()?;
    cfg.validate()?;
    let h = cfg.integration_step;
    let hf = h as f64;
    let end = cfg.duration_minutes();
    // The final row still reports insulin/meal for its period.
    let horizon = end + cfg.sample_period;

    let mut meal_iter = meals.iter().peekable();
    let mut bolus_iter = {
        let mut b = cfg.extra_boluses.clone();
        b.sort_by_key(|b| b.time);
        b.into_iter().peekable()
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = if cfg.cgm_noise_sd > 0.0 {
        Some(Normal::new(0.0, cfg.cgm_noise_sd).map_err(|e| SimError::InvalidConfig(e.to_string()))?)
    } else {
        None
    };

    let mut state = PatientState::steady(p);
    let mut rows = Vec::with_capacity(cfg.expected_rows());
    let mut t = 0;
    while t < horizon {
        if t % cfg.sample_period == 0 && t <= end {
            if !state.is_finite() {
                return Err(SimError::NonFinite { t_min: t });
            }
            let bg = state.glucose + noise.as_ref().map_or(0.0, |n| n.sample(&mut noise_rng));
            rows.push(TraceRow {
                t,
                bg,
                insulin: 0.0,
                meal: 0.0,
            });
        }
        let mut carbs = 0.0;
        while let Some(m) = meal_iter.next_if(|m| m.time < t + h) {
            carbs += m.carbs;
        }
        let mut insulin = match cfg.controller {
            ControllerMode::BasalBolus => basal_bolus_controller(&state, p, hf, carbs),
            ControllerMode::BasalOnly => basal_bolus_controller(&state, p, hf, 0.0),
            ControllerMode::Off => 0.0,
        };
        while let Some(b) = bolus_iter.next_if(|b| b.time < t + h) {
            insulin += b.units;
        }
        if let Some(row) = rows.last_mut() {
            row.insulin += insulin;
            row.meal += carbs;
        }
        state.step(p, hf, insulin, carbs);
        t += h;
    }
    if !state.is_finite() {
        return Err(SimError::NonFinite { t_min: t });
    }

    Ok(SimTrace {
        meta: TraceMeta {
            patient_id: p.id.clone(),
            group: p.group,
            weight_kg: p.body_weight,
            seed: cfg.seed,
        },
        sample_period: cfg.sample_period,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceCheck {
    Accept,
    Reject(String),
}

/// Rejects a trace containing any negative BG or any non-finite field; values
/// are never clamped.
pub fn validate_trace(trace: &SimTrace) -> TraceCheck {
    for r in &trace.rows {
        if !(r.bg.is_finite() && r.insulin.is_finite() && r.meal.is_finite()) {
            return TraceCheck::Reject(format!("non-finite value at t={}", r.t));
        }
        if r.bg < 0.0 {
            return TraceCheck::Reject(format!("negative BG at t={}", r.t));
        }
    }
    TraceCheck::Accept
}

/// Seed for patient `index` of a cohort simulated with `seed`.
pub fn patient_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(index as u64 + 1)
}

/// Meals and trace for one cohort member under a shared config.
pub fn simulate_cohort_member(p: &PatientParams, base: &SimConfig, index: usize) -> Result<SimTrace> {
    let cfg = SimConfig {
        seed: patient_seed(base.seed, index),
        ..base.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let meals = generate_meals(&cfg, &mut rng);
    simulate_patient(p, &cfg, &meals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adult() -> PatientParams {
        sample_cohort(1, 5).into_iter().find(|p| p.group == PatientGroup::Adult).unwrap()
    }

    fn no_meal_cfg(days: u32, controller: ControllerMode) -> SimConfig {
        SimConfig {
            days,
            meal_schedule: vec![],
            controller,
            ..SimConfig::default()
        }
    }

    #[test]
    fn cohort_sizes_and_determinism() {
        assert_eq!(sample_cohort(10, 1).len(), 30);
        assert!(sample_cohort(0, 1).is_empty());
        assert_eq!(sample_cohort(4, 9), sample_cohort(4, 9));
        assert_ne!(sample_cohort(4, 9), sample_cohort(4, 10));
        for p in sample_cohort(20, 3) {
            p.validate().unwrap();
        }
    }

    #[test]
    fn forty_days_give_11521_rows() {
        let cfg = SimConfig {
            seed: 3,
            ..SimConfig::default()
        };
        let trace = simulate_cohort_member(&adult(), &cfg, 0).unwrap();
        assert_eq!(trace.len(), 11_521);
        assert_eq!(trace.rows.last().unwrap().t, 40 * 1440);
        assert!(trace.rows.iter().enumerate().all(|(i, r)| r.t == 5 * i as u32));
    }

    #[test]
    fn meal_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cfg = SimConfig::default();
        for w in &mut cfg.meal_schedule {
            w.probability = 0.0;
        }
        assert!(generate_meals(&cfg, &mut rng).is_empty());
        for w in &mut cfg.meal_schedule {
            w.probability = 1.0;
        }
        let meals = generate_meals(&cfg, &mut rng);
        assert_eq!(meals.len(), 120);
        for m in &meals {
            let minute = m.time % 1440;
            assert!(cfg.meal_schedule.iter().any(|w| (w.window.0..w.window.1).contains(&minute)));
        }
    }

    #[test]
    fn carb_mean_close_to_midpoint() {
        let cfg = SimConfig {
            days: 10_000,
            meal_schedule: vec![MealWindow {
                window: (0, 60),
                carbs: (20.0, 80.0),
                probability: 1.0,
            }],
            ..SimConfig::default()
        };
        let meals = generate_meals(&cfg, &mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(meals.len(), 10_000);
        let mean = meals.iter().map(|m| m.carbs).sum::<f64>() / meals.len() as f64;
        assert!((mean - 50.0).abs() <= 0.02 * 50.0, "mean {mean}");
    }

    #[test]
    fn basal_equilibrium_holds_for_a_day() {
        for p in sample_cohort(3, 8) {
            let trace = simulate_patient(&p, &no_meal_cfg(1, ControllerMode::BasalOnly), &[]).unwrap();
            for r in &trace.rows {
                assert!((r.bg - p.basal_glucose).abs() <= 2.0, "{} drifted to {}", p.id, r.bg);
            }
        }
    }

    #[test]
    fn single_meal_raises_bg_within_two_hours() {
        let p = adult();
        let meal = [MealEvent { time: 60, carbs: 50.0 }];
        let trace = simulate_patient(&p, &no_meal_cfg(1, ControllerMode::BasalOnly), &meal).unwrap();
        let pre = trace.rows[12].bg;
        let (peak_t, peak) = trace.rows.iter().map(|r| (r.t, r.bg)).fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        assert!(peak > pre);
        assert!(peak_t > 60 && peak_t <= 180, "peak at {peak_t}");
    }

    #[test]
    fn controller_doses() {
        let mut p = adult();
        p.basal_rate = 1.2;
        p.carb_ratio = 15.0;
        let s = PatientState::steady(&p);
        assert!((basal_bolus_controller(&s, &p, 1.0, 0.0) - 0.02).abs() < 1e-15);
        assert!((basal_bolus_controller(&s, &p, 1.0, 60.0) - 4.02).abs() < 1e-12);
    }

    #[test]
    fn daily_insulin_ledger() {
        let p = adult();
        let meals = [MealEvent { time: 400, carbs: 45.0 }, MealEvent { time: 800, carbs: 70.0 }];
        let cfg = no_meal_cfg(1, ControllerMode::BasalBolus);
        let trace = simulate_patient(&p, &cfg, &meals).unwrap();
        // The last row covers one extra sample period past the end of the day.
        let total: f64 = trace.rows[..trace.len() - 1].iter().map(|r| r.insulin).sum();
        let expected = p.basal_rate * 24.0 + (45.0 + 70.0) / p.carb_ratio;
        assert!((total - expected).abs() <= 1e-9, "{total} vs {expected}");
        let meal_total: f64 = trace.rows.iter().map(|r| r.meal).sum();
        assert!((meal_total - 115.0).abs() < 1e-12);
    }

    #[test]
    fn trace_validation() {
        let p = adult();
        let mut trace = simulate_patient(&p, &no_meal_cfg(1, ControllerMode::BasalOnly), &[]).unwrap();
        assert_eq!(validate_trace(&trace), TraceCheck::Accept);
        let t = trace.rows[7].t;
        trace.rows[7].bg = -3.0;
        assert_eq!(validate_trace(&trace), TraceCheck::Reject(format!("negative BG at t={t}")));
        trace.rows[7].bg = 100.0;
        trace.rows[9].insulin = f64::NAN;
        assert!(matches!(validate_trace(&trace), TraceCheck::Reject(_)));
    }

    #[test]
    fn config_errors() {
        let p = adult();
        let bad = SimConfig {
            days: 0,
            ..SimConfig::default()
        };
        assert!(simulate_patient(&p, &bad, &[]).is_err());
        let bad = SimConfig {
            sample_period: 5,
            integration_step: 2,
            ..SimConfig::default()
        };
        assert!(simulate_patient(&p, &bad, &[]).is_err());
        let mut heavy = p.clone();
        heavy.body_weight = 130.0;
        assert!(matches!(heavy.validate(), Err(SimError::InvalidParams(_))));
    }

    #[test]
    fn same_seed_same_trace() {
        let p = adult();
        let cfg = SimConfig {
            days: 3,
            seed: 4,
            cgm_noise_sd: 2.0,
            ..SimConfig::default()
        };
        let a = simulate_cohort_member(&p, &cfg, 2).unwrap();
        let b = simulate_cohort_member(&p, &cfg, 2).unwrap();
        assert_eq!(a, b);
    }
}
