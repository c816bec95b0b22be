//! Deterministic synthetic cohorts with planted behavior modes, activity plans
//! and sleep outcomes, written in the same CSV formats `ingest` reads.
//!
//! Each day follows the template curve of its mode. A day's plan of light,
//! moderate and vigorous minutes is painted onto the waking-window minutes
//! where the template is highest, so plans land where the mode is active.
//! Noise never moves a minute across a cut-point, which keeps the planted
//! level totals exact.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CutPoints, EPOCH_HEADER, METADATA_HEADER};
use crate::types::{
    ActivityLevel, IntervalType, SleepQuality, EPOCHS_PER_DAY, GOOD_SLEEP_EFFICIENCY,
    MINUTES_PER_DAY,
};

/// Subjects get out of bed at 06:00 and go to bed at 22:00.
pub const WAKE_MINUTE: usize = 360;
pub const BED_MINUTE: usize = 1320;
/// Epochs in one night, 22:00 to 06:00.
pub const NIGHT_EPOCHS: usize = 2 * (MINUTES_PER_DAY - BED_MINUTE + WAKE_MINUTE);

/// Wake epochs at or above this count are split into latency and WASO.
const SPLIT_WAKE_EPOCHS: usize = 20;
/// A short wake blip, too short to count as WASO.
const BLIP_EPOCHS: usize = 4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid cohort spec: {0}")]
    SpecInvalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTemplate {
    pub name: String,
    /// Counts per minute on a day with no plan. Must stay sedentary.
    pub base_curve: Vec<f64>,
    /// Days of week (0 = Monday) that follow this template.
    pub weekday_set: Vec<u8>,
    /// Plans that lead to good sleep.
    #[serde(default)]
    pub recipes: Vec<[f64; 3]>,
    /// Plans followed on non-adherent days.
    #[serde(default)]
    pub decoys: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SleepRule {
    /// A day whose totals are within this L∞ distance of a recipe sleeps well.
    pub tolerance: f64,
    pub good_efficiency: (f64, f64),
    pub poor_efficiency: (f64, f64),
}

impl Default for SleepRule {
    fn default() -> Self {
        SleepRule {
            tolerance: 8.0,
            good_efficiency: (0.92, 0.99),
            poor_efficiency: (0.70, 0.89),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub days_per_subject: usize,
    /// Day of week of day 0.
    pub first_day_of_week: u8,
    pub seed: u64,
    pub modes: Vec<ModeTemplate>,
    pub noise_sd: f64,
    /// Chance that a day follows one of its mode's recipes.
    pub adherence: f64,
    /// Each plan component is moved by up to this many minutes.
    pub plan_jitter: f64,
    /// Count painted on light, moderate and vigorous minutes.
    pub level_counts: [f64; 3],
    pub cut_points: CutPoints,
    pub good_sleep_rule: SleepRule,
}

fn bump(m: usize, center: f64, width: f64) -> f64 {
    (-((m as f64 - center) / width).powi(2)).exp()
}

/// Weekday curve with morning and evening commute peaks.
pub fn commute_curve() -> Vec<f64> {
    (0..MINUTES_PER_DAY)
        .map(|m| (20.0 + 60.0 * bump(m, 450.0, 40.0) + 60.0 * bump(m, 1050.0, 40.0)).round())
        .collect()
}

/// Weekend curve with one broad midday peak.
pub fn late_rise_curve() -> Vec<f64> {
    (0..MINUTES_PER_DAY)
        .map(|m| (20.0 + 60.0 * bump(m, 720.0, 120.0)).round())
        .collect()
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_subjects: 30,
            days_per_subject: 7,
            first_day_of_week: 0,
            seed: 42,
            modes: vec![
                ModeTemplate {
                    name: "commute".into(),
                    base_curve: commute_curve(),
                    weekday_set: vec![0, 1, 2, 3, 4],
                    recipes: vec![[300.0, 30.0, 10.0]],
                    decoys: vec![[100.0, 5.0, 0.0]],
                },
                ModeTemplate {
                    name: "late-rise".into(),
                    base_curve: late_rise_curve(),
                    weekday_set: vec![5, 6],
                    recipes: vec![[150.0, 10.0, 0.0]],
                    decoys: vec![[40.0, 0.0, 0.0]],
                },
            ],
            noise_sd: 0.0,
            adherence: 0.8,
            plan_jitter: 5.0,
            level_counts: [800.0, 2700.0, 5500.0],
            cut_points: CutPoints::default(),
            good_sleep_rule: SleepRule::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::SpecInvalid(msg.into())
}

impl CohortSpec {
    /// Largest count any minute is planted with.
    pub fn peak(&self) -> f64 {
        self.level_counts
            .iter()
            .chain(self.modes.iter().flat_map(|m| m.base_curve.iter()))
            .fold(0.0, |a, &b| a.max(b))
    }

    /// Template index for each day of week.
    fn mode_of_day(&self) -> Result<[usize; 7], SynthError> {
        let mut owner = [None; 7];
        for (i, m) in self.modes.iter().enumerate() {
            for &d in &m.weekday_set {
                let slot = owner
                    .get_mut(d as usize)
                    .ok_or_else(|| invalid(format!("mode {:?}: day of week {d} > 6", m.name)))?;
                if slot.is_some() {
                    return Err(invalid(format!("day of week {d} belongs to two modes")));
                }
                *slot = Some(i);
            }
        }
        let mut out = [0; 7];
        for (d, o) in owner.iter().enumerate() {
            out[d] = o.ok_or_else(|| invalid(format!("day of week {d} has no mode")))?;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_subjects < 1 || self.days_per_subject < 1 {
            return Err(invalid("n_subjects and days_per_subject must be >= 1"));
        }
        if self.first_day_of_week > 6 {
            return Err(invalid("first_day_of_week must be 0..6"));
        }
        if self.modes.is_empty() {
            return Err(invalid("no modes"));
        }
        self.mode_of_day()?;
        self.cut_points
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        let whole = |v: f64| v.is_finite() && v >= 0.0 && v.fract() == 0.0;
        for (level, &c) in ActivityLevel::RECIPE_ORDER.iter().zip(&self.level_counts) {
            if !whole(c) || self.cut_points.level_of(c) != *level {
                return Err(invalid(format!(
                    "level count {c} is not a whole {level} count"
                )));
            }
        }
        let window = (BED_MINUTE - WAKE_MINUTE) as f64;
        if !(self.plan_jitter.is_finite() && self.plan_jitter >= 0.0) {
            return Err(invalid("plan_jitter must be >= 0"));
        }
        for m in &self.modes {
            if m.base_curve.len() != MINUTES_PER_DAY {
                return Err(invalid(format!(
                    "mode {:?}: base_curve needs {MINUTES_PER_DAY} values",
                    m.name
                )));
            }
            if let Some(v) = m
                .base_curve
                .iter()
                .find(|&&v| !whole(v) || v >= self.cut_points.light_min)
            {
                return Err(invalid(format!(
                    "mode {:?}: base_curve value {v} is not a whole count below {}",
                    m.name, self.cut_points.light_min
                )));
            }
            for plan in m.recipes.iter().chain(&m.decoys) {
                if plan.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(invalid(format!(
                        "mode {:?}: plan {plan:?} has a negative value",
                        m.name
                    )));
                }
                if plan.iter().sum::<f64>() + 3.0 * self.plan_jitter > window {
                    return Err(invalid(format!(
                        "mode {:?}: plan {plan:?} does not fit the waking window",
                        m.name
                    )));
                }
            }
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(invalid("noise_sd must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.adherence) {
            return Err(invalid("adherence must be in [0, 1]"));
        }
        let rule = &self.good_sleep_rule;
        if !(rule.tolerance > 0.0) {
            return Err(invalid("tolerance must be > 0"));
        }
        for (lo, hi) in [rule.good_efficiency, rule.poor_efficiency] {
            if !(0.5 <= lo && lo < hi && hi < 1.0) {
                return Err(invalid(format!(
                    "efficiency range ({lo}, {hi}) must satisfy 0.5 <= lo < hi < 1"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanKind {
    Recipe,
    Decoy,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayTruth {
    pub day_index: u32,
    pub day_of_week: u8,
    pub mode: usize,
    pub mode_name: String,
    pub plan: PlanKind,
    pub plan_index: Option<usize>,
    /// Planted `[light, moderate, vigorous]` minutes.
    pub totals: [f64; 3],
    /// Efficiency of the night that follows.
    pub efficiency: f64,
    pub quality: SleepQuality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub subject_id: String,
    pub days: Vec<DayTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedMode {
    pub name: String,
    pub weekday_set: Vec<u8>,
    pub recipes: Vec<[f64; 3]>,
    pub decoys: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub first_day_of_week: u8,
    pub modes: Vec<PlantedMode>,
    pub subjects: Vec<SubjectTruth>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub epochs_csv: Vec<u8>,
    pub metadata_csv: Vec<u8>,
    pub ground_truth: GroundTruth,
}

impl SyntheticCohort {
    pub fn ground_truth_json(&self) -> Result<String, SynthError> {
        Ok(serde_json::to_string_pretty(&self.ground_truth)? + "\n")
    }

    /// Write `epochs.csv`, `metadata.csv` and `ground_truth.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<[std::path::PathBuf; 3], SynthError> {
        std::fs::create_dir_all(dir)?;
        let paths = [
            dir.join("epochs.csv"),
            dir.join("metadata.csv"),
            dir.join("ground_truth.json"),
        ];
        std::fs::write(&paths[0], &self.epochs_csv)?;
        std::fs::write(&paths[1], &self.metadata_csv)?;
        std::fs::write(&paths[2], self.ground_truth_json()?)?;
        Ok(paths)
    }
}

fn rng_for(seed: u64, subject: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((subject as u64) << 32) | stream);
    rng
}

const METADATA_STREAM: u64 = u32::MAX as u64;

/// Waking-window minutes ordered by template value, highest first.
fn placement_order(curve: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (WAKE_MINUTE..BED_MINUTE).collect();
    order.sort_by(|&a, &b| curve[b].total_cmp(&curve[a]).then(a.cmp(&b)));
    order
}

/// Gaussian noise kept inside the cut-point band of `base`.
fn band_noise(base: f64, cp: &CutPoints, noise: Option<&Normal<f64>>, rng: &mut ChaCha8Rng) -> f64 {
    let Some(normal) = noise else {
        return base;
    };
    let (lo, hi) = cp.band(cp.level_of(base));
    let lo = lo.ceil();
    let hi = if hi.is_finite() {
        hi.ceil() - 1.0
    } else {
        f64::INFINITY
    };
    let mut v = base;
    for _ in 0..16 {
        v = (base + normal.sample(rng)).round();
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    v.clamp(lo, hi)
}

struct PlannedDay {
    truth: DayTruth,
    counts: Vec<f64>,
}

fn plan_day(
    spec: &CohortSpec,
    modes: &[usize; 7],
    orders: &[Vec<usize>],
    subject: usize,
    day: usize,
) -> PlannedDay {
    let mut rng = rng_for(spec.seed, subject, day as u64);
    let dow = crate::ingest::day_of_week(day as u32, spec.first_day_of_week);
    let mode = modes[dow as usize];
    let template = &spec.modes[mode];

    let follows_recipe = !template.recipes.is_empty()
        && (template.decoys.is_empty() || rng.random::<f64>() < spec.adherence);
    let (plan, plan_index, target) = if follows_recipe {
        let i = rng.random_range(0..template.recipes.len());
        (PlanKind::Recipe, Some(i), template.recipes[i])
    } else if !template.decoys.is_empty() {
        let i = rng.random_range(0..template.decoys.len());
        (PlanKind::Decoy, Some(i), template.decoys[i])
    } else {
        (PlanKind::None, None, [0.0; 3])
    };
    let totals: [f64; 3] = std::array::from_fn(|i| {
        if plan == PlanKind::None {
            return 0.0;
        }
        let j = if spec.plan_jitter > 0.0 {
            rng.random_range(-spec.plan_jitter..=spec.plan_jitter)
        } else {
            0.0
        };
        (target[i] + j).round().max(0.0)
    });

    let rule = &spec.good_sleep_rule;
    let near_recipe = template.recipes.iter().any(|r| {
        r.iter()
            .zip(&totals)
            .all(|(a, b)| (a - b).abs() <= rule.tolerance)
    });
    let (lo, hi) = if near_recipe {
        rule.good_efficiency
    } else {
        rule.poor_efficiency
    };
    let efficiency = rng.random_range(lo..hi);

    let mut counts = template.base_curve.clone();
    let mut slots = orders[mode].iter();
    // vigorous first so the strongest activity sits on the template's peak
    for level in [2, 1, 0] {
        for &m in slots.by_ref().take(totals[level] as usize) {
            counts[m] = spec.level_counts[level];
        }
    }
    let normal = (spec.noise_sd > 0.0).then(|| Normal::new(0.0, spec.noise_sd).expect("finite sd"));
    for c in counts.iter_mut() {
        *c = band_noise(*c, &spec.cut_points, normal.as_ref(), &mut rng);
    }

    PlannedDay {
        truth: DayTruth {
            day_index: day as u32,
            day_of_week: dow,
            mode,
            mode_name: template.name.clone(),
            plan,
            plan_index,
            totals,
            efficiency,
            quality: SleepQuality::from_efficiency(efficiency, GOOD_SLEEP_EFFICIENCY),
        },
        counts,
    }
}

/// Interval and wake flag of each epoch of a night with the given efficiency.
fn night_layout(efficiency: f64) -> Vec<(IntervalType, bool)> {
    let awake = ((1.0 - efficiency) * NIGHT_EPOCHS as f64).round() as usize;
    let (latency, waso) = if awake >= SPLIT_WAKE_EPOCHS {
        (awake - awake / 2, awake / 2)
    } else {
        (awake, 0)
    };
    let mut night = vec![(IntervalType::RestS, false); NIGHT_EPOCHS];
    night[..latency].fill((IntervalType::Rest, true));
    let blip = latency + 20;
    night[blip..blip + BLIP_EPOCHS].fill((IntervalType::RestS, true));
    let waso_start = latency + (NIGHT_EPOCHS - latency) / 2;
    night[waso_start..waso_start + waso].fill((IntervalType::RestS, true));
    night
}

struct SubjectOutput {
    epochs: Vec<u8>,
    metadata: Vec<u8>,
    truth: SubjectTruth,
}

fn subject_id(index: usize, n: usize) -> String {
    let width = n.to_string().len().max(3);
    format!("S{:0width$}", index + 1)
}

fn generate_subject(
    spec: &CohortSpec,
    modes: &[usize; 7],
    orders: &[Vec<usize>],
    s: usize,
) -> Result<SubjectOutput, SynthError> {
    let id = subject_id(s, spec.n_subjects);
    let n_days = spec.days_per_subject;
    // one extra day carries the morning of the last night
    let planned: Vec<PlannedDay> = (0..=n_days)
        .map(|d| plan_day(spec, modes, orders, s, d))
        .collect();
    let nights: Vec<Vec<(IntervalType, bool)>> = planned[..n_days]
        .iter()
        .map(|p| night_layout(p.truth.efficiency))
        .collect();

    let evening = 2 * BED_MINUTE;
    let morning = 2 * WAKE_MINUTE;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for (d, day) in planned.iter().enumerate() {
        let last_epoch = if d == n_days { morning } else { EPOCHS_PER_DAY };
        for e in 0..last_epoch {
            let (interval, wake) = if e < morning {
                match d.checked_sub(1) {
                    Some(prev) => nights[prev][EPOCHS_PER_DAY - evening + e],
                    None => (IntervalType::RestS, false),
                }
            } else if e >= evening {
                nights[d][e - evening]
            } else {
                (IntervalType::Active, true)
            };
            let minute = day.counts[e / 2];
            let half = (minute / 2.0).floor();
            let count = if e % 2 == 0 { half } else { minute - half };
            w.write_record([
                id.as_str(),
                &d.to_string(),
                &e.to_string(),
                &(count as u64).to_string(),
                interval.as_str(),
                if wake { "1" } else { "0" },
            ])?;
        }
    }
    let epochs = w.into_inner().map_err(|e| SynthError::Io(e.into_error()))?;

    let mut rng = rng_for(spec.seed, s, METADATA_STREAM);
    let age = rng.random_range(20..=80u32);
    let gender = if rng.random::<bool>() { "f" } else { "m" };
    let bmi = (rng.random_range(18.0..40.0f64) * 10.0).round() / 10.0;
    let resting_hr = rng.random_range(55..=95u32);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record([
        id.clone(),
        age.to_string(),
        gender.into(),
        bmi.to_string(),
        resting_hr.to_string(),
    ])?;
    let metadata = w.into_inner().map_err(|e| SynthError::Io(e.into_error()))?;

    Ok(SubjectOutput {
        epochs,
        metadata,
        truth: SubjectTruth {
            subject_id: id,
            days: planted_truth(planned, n_days),
        },
    })
}

fn planted_truth(planned: Vec<PlannedDay>, n_days: usize) -> Vec<DayTruth> {
    planned.into_iter().take(n_days).map(|p| p.truth).collect()
}

/// Generate a cohort. The output depends only on `spec`.
pub fn generate_cohort(spec: &CohortSpec) -> Result<SyntheticCohort, SynthError> {
    spec.validate()?;
    let modes = spec.mode_of_day()?;
    let orders: Vec<Vec<usize>> = spec
        .modes
        .iter()
        .map(|m| placement_order(&m.base_curve))
        .collect();
    let subjects = (0..spec.n_subjects)
        .into_par_iter()
        .map(|s| generate_subject(spec, &modes, &orders, s))
        .collect::<Result<Vec<_>, _>>()?;

    let mut epochs_csv = format!("{}\n", EPOCH_HEADER.join(",")).into_bytes();
    let mut metadata_csv = format!("{}\n", METADATA_HEADER.join(",")).into_bytes();
    let mut truths = Vec::with_capacity(subjects.len());
    for s in subjects {
        epochs_csv.extend_from_slice(&s.epochs);
        metadata_csv.extend_from_slice(&s.metadata);
        truths.push(s.truth);
    }
    Ok(SyntheticCohort {
        epochs_csv,
        metadata_csv,
        ground_truth: GroundTruth {
            seed: spec.seed,
            first_day_of_week: spec.first_day_of_week,
            modes: spec
                .modes
                .iter()
                .map(|m| PlantedMode {
                    name: m.name.clone(),
                    weekday_set: m.weekday_set.clone(),
                    recipes: m.recipes.clone(),
                    decoys: m.decoys.clone(),
                })
                .collect(),
            subjects: truths,
        },
    })
}
