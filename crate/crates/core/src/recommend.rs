//! Continuous recommendation: pick the day's mode from the data so far, rank
//! that mode's recipes, compute what is left to do and apply metadata rules.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::membership_from_distances;
use crate::ingest::{level_minutes, IngestError};
use crate::metrics::{Metric, MetricError, MetricId};
use crate::modes::{assign_mode_partial, BehaviorModeModel, ModeError};
use crate::recipes::RecipeBook;
use crate::types::{ActivityLevel, CoreError, SleepQuality, SubjectMetadata, MINUTES_PER_DAY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecommendError {
    #[error("no recipes for mode {0}")]
    NoRecipesForMode(usize),
    #[error("t_m = {0} is outside 1..=1440")]
    BadWindow(u32),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unknown metadata field {0:?}")]
    UnknownMetadataField(String),
    #[error("invalid rule {id}: {message}")]
    InvalidRule { id: String, message: String },
    #[error("empty cohort")]
    EmptyCohort,
    #[error("n_neighbors must be >= 1")]
    ZeroNeighbors,
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl From<CoreError> for RecommendError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::UnknownMetadataField(f) => RecommendError::UnknownMetadataField(f),
            other => RecommendError::InvalidRule {
                id: String::new(),
                message: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=", alias = "≤")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=", alias = "≥")]
    Ge,
    #[serde(rename = "=", alias = "==")]
    Eq,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Eq => value == threshold,
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "=",
        })
    }
}

/// What a triggered rule does, in terms of the vigorous-minute deficit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RuleAction {
    /// Move items needing more than `minutes` vigorous minutes behind the rest.
    DemoteIfVigorousDeficitAbove { minutes: f64 },
    /// Clamp the vigorous deficit to `minutes`.
    CapVigorousDeficit { minutes: f64 },
    /// Drop items needing more than `minutes` vigorous minutes.
    Exclude {
        #[serde(default)]
        minutes: f64,
    },
}

impl RuleAction {
    pub fn minutes(self) -> f64 {
        match self {
            RuleAction::DemoteIfVigorousDeficitAbove { minutes }
            | RuleAction::CapVigorousDeficit { minutes }
            | RuleAction::Exclude { minutes } => minutes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRule {
    pub id: String,
    pub field: String,
    pub comparator: Comparator,
    pub threshold: f64,
    pub action: RuleAction,
}

impl ConstraintRule {
    pub fn validate(&self) -> Result<(), RecommendError> {
        let m = self.action.minutes();
        if !(m.is_finite() && m >= 0.0) || !self.threshold.is_finite() {
            return Err(RecommendError::InvalidRule {
                id: self.id.clone(),
                message: "minutes must be finite and >= 0 and threshold finite".into(),
            });
        }
        Ok(())
    }

    /// Whether the rule fires for `meta`. An absent value never fires.
    pub fn applies_to(&self, meta: &SubjectMetadata) -> Result<bool, RecommendError> {
        Ok(meta
            .field(&self.field)?
            .is_some_and(|v| self.comparator.holds(v, self.threshold)))
    }
}

fn rule(id: &str, field: &str, threshold: f64, action: RuleAction) -> ConstraintRule {
    ConstraintRule {
        id: id.into(),
        field: field.into(),
        comparator: Comparator::Ge,
        threshold,
        action,
    }
}

/// The shipped rule set.
pub fn default_rules() -> Vec<ConstraintRule> {
    vec![
        rule(
            "resting_hr_high",
            "resting_hr",
            85.0,
            RuleAction::DemoteIfVigorousDeficitAbove { minutes: 15.0 },
        ),
        rule(
            "age_65_plus",
            "age",
            65.0,
            RuleAction::CapVigorousDeficit { minutes: 10.0 },
        ),
        rule(
            "bmi_35_plus",
            "bmi",
            35.0,
            RuleAction::DemoteIfVigorousDeficitAbove { minutes: 20.0 },
        ),
    ]
}

/// Minutes per level still needed to reach `recipe_center`, never negative.
pub fn compute_deficit(recipe_center: [f64; 3], achieved: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| (recipe_center[i] - achieved[i]).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationItem {
    /// Index of the recipe within the mode's recipe list.
    pub recipe_ref: usize,
    pub center: [f64; 3],
    pub membership_probability: f64,
    pub deficit: [f64; 3],
    pub constraint_flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explain {
    pub mode_distance: f64,
    /// L2 distance from the achieved minutes to each recipe, by recipe index.
    pub recipe_distances: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub triggered_rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub subject_id: String,
    pub mode: usize,
    pub t_m: u32,
    /// Level minutes from wake onset to `t_m`.
    pub achieved: [f64; 3],
    pub ordered_items: Vec<RecommendationItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explain: Option<Explain>,
}

/// Apply `rules` in order. Returns the edited items and the ids of the rules
/// that fired.
pub fn apply_constraints(
    items: Vec<RecommendationItem>,
    meta: &SubjectMetadata,
    rules: &[ConstraintRule],
) -> Result<(Vec<RecommendationItem>, Vec<String>), RecommendError> {
    let mut items = items;
    let mut triggered = Vec::new();
    for rule in rules {
        rule.validate()?;
        if !rule.applies_to(meta)? {
            continue;
        }
        triggered.push(rule.id.clone());
        match rule.action {
            RuleAction::DemoteIfVigorousDeficitAbove { minutes } => {
                let (mut keep, mut demoted): (Vec<_>, Vec<_>) =
                    items.into_iter().partition(|it| it.deficit[2] <= minutes);
                for it in &mut demoted {
                    it.constraint_flags.push(rule.id.clone());
                }
                keep.append(&mut demoted);
                items = keep;
            }
            RuleAction::CapVigorousDeficit { minutes } => {
                for it in items.iter_mut().filter(|it| it.deficit[2] > minutes) {
                    it.deficit[2] = minutes;
                    it.constraint_flags.push(rule.id.clone());
                }
            }
            RuleAction::Exclude { minutes } => items.retain(|it| it.deficit[2] <= minutes),
        }
    }
    Ok((items, triggered))
}

/// Inputs observed so far on the day being recommended for.
#[derive(Debug, Clone, Copy)]
pub struct PartialDay<'a> {
    pub counts: &'a [f64],
    pub labels: &'a [ActivityLevel],
    pub t_m: u32,
    /// Minute the subject got up; `None` counts from midnight.
    pub wake_onset: Option<u32>,
}

pub fn recommend(
    modes: &BehaviorModeModel,
    book: &RecipeBook,
    day: PartialDay<'_>,
    meta: &SubjectMetadata,
    rules: &[ConstraintRule],
) -> Result<Recommendation, RecommendError> {
    let t_m = day.t_m;
    if t_m < 1 || t_m as usize > MINUTES_PER_DAY {
        return Err(RecommendError::BadWindow(t_m));
    }
    for len in [day.counts.len(), day.labels.len()] {
        if len != t_m as usize {
            return Err(RecommendError::LengthMismatch {
                expected: t_m as usize,
                got: len,
            });
        }
    }
    let (mode, mode_distance) = assign_mode_partial(modes, day.counts, t_m)?;
    let recipes = book.recipes_for(mode);
    if recipes.is_empty() {
        return Err(RecommendError::NoRecipesForMode(mode));
    }
    let start = day.wake_onset.unwrap_or(0);
    let achieved = if start < t_m {
        level_minutes(day.labels, None, start, t_m).map_err(|e| match e {
            IngestError::LabelLength { got, needed } => RecommendError::LengthMismatch {
                expected: needed,
                got,
            },
            _ => RecommendError::BadWindow(t_m),
        })?
    } else {
        [0.0; 3]
    };

    let l2 = Metric::new(MetricId::L2);
    let recipe_distances = recipes
        .iter()
        .map(|r| l2.distance(&achieved, &r.center))
        .collect::<Result<Vec<_>, _>>()?;
    let probabilities = membership_from_distances(&recipe_distances);
    let mut items: Vec<RecommendationItem> = recipes
        .iter()
        .enumerate()
        .map(|(i, r)| RecommendationItem {
            recipe_ref: i,
            center: r.center,
            membership_probability: probabilities[i],
            deficit: compute_deficit(r.center, achieved),
            constraint_flags: Vec::new(),
        })
        .collect();
    items.sort_by(|a, b| {
        b.membership_probability
            .total_cmp(&a.membership_probability)
    });
    let (ordered_items, triggered_rules) = apply_constraints(items, meta, rules)?;
    Ok(Recommendation {
        subject_id: modes.subject_id.clone(),
        mode,
        t_m,
        achieved,
        ordered_items,
        explain: Some(Explain {
            mode_distance,
            recipe_distances,
            probabilities,
            triggered_rules,
        }),
    })
}

/// A historical day with its full-day level totals and the night that followed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortDay {
    pub subject_id: String,
    pub day_index: u32,
    pub minutes: [f64; 3],
    pub quality: SleepQuality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub subject_id: String,
    pub day_index: u32,
    pub distance: f64,
    pub quality: SleepQuality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrospectiveResult {
    pub success_rate: f64,
    /// Neighbors actually used; fewer than requested when the cohort is small.
    pub n_used: usize,
    pub neighbors: Vec<Neighbor>,
}

/// Judge `target_plan` by the sleep that followed the `n_neighbors` historical
/// days with the closest totals (L2). `exclude` keeps a day from being its
/// own neighbor. Ties go to the lower `(subject_id, day_index)`.
pub fn retrospective_evaluate(
    cohort: &[CohortDay],
    target_plan: [f64; 3],
    n_neighbors: usize,
    exclude: Option<(&str, u32)>,
) -> Result<RetrospectiveResult, RecommendError> {
    if n_neighbors == 0 {
        return Err(RecommendError::ZeroNeighbors);
    }
    let l2 = Metric::new(MetricId::L2);
    let mut scored = cohort
        .iter()
        .filter(|d| exclude.is_none_or(|(s, i)| !(d.subject_id == s && d.day_index == i)))
        .map(|d| {
            Ok(Neighbor {
                subject_id: d.subject_id.clone(),
                day_index: d.day_index,
                distance: l2.distance(&d.minutes, &target_plan)?,
                quality: d.quality,
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    if scored.is_empty() {
        return Err(RecommendError::EmptyCohort);
    }
    scored.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.subject_id.cmp(&b.subject_id))
            .then(a.day_index.cmp(&b.day_index))
    });
    scored.truncate(n_neighbors);
    let good = scored
        .iter()
        .filter(|n| n.quality == SleepQuality::Good)
        .count();
    Ok(RetrospectiveResult {
        success_rate: good as f64 / scored.len() as f64,
        n_used: scored.len(),
        neighbors: scored,
    })
}
