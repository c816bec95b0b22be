//! Per-subject behavior modes: clusters of a subject's daily activity curves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{self, grid_search, ClusterError, GridSpec, KMeansConfig};
use crate::metrics::{fft_features, Metric, MetricError, MetricId};
use crate::types::{ActigraphyDay, MINUTES_PER_DAY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("need at least 2 days to fit modes, got {0}")]
    TooFewDays(usize),
    #[error("days from more than one subject: {0:?} and {1:?}")]
    MixedSubjects(String, String),
    #[error("partial-day assignment needs a time-domain model")]
    FrequencyDomainUnsupported,
    #[error("t_m = {0} is outside 1..=1440")]
    BadWindow(u32),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("model has no day assignments")]
    MissingAssignments,
    #[error("no day of week for day {0}")]
    MissingDayOfWeek(u32),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    Time,
    Frequency,
}

/// Everything that determines a mode fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeFitConfig {
    pub domain: Domain,
    pub grid: GridSpec,
    /// `k` and `metric` are taken from the grid; the rest applies to every scenario.
    pub kmeans: KMeansConfig,
    pub fft_components: usize,
}

impl Default for ModeFitConfig {
    fn default() -> Self {
        ModeFitConfig {
            domain: Domain::Time,
            grid: GridSpec::default(),
            kmeans: KMeansConfig::default(),
            fft_components: 25,
        }
    }
}

impl ModeFitConfig {
    pub fn metric(&self, id: MetricId) -> Metric {
        Metric::with_options(id, self.kmeans.metric_options)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorModeModel {
    pub subject_id: String,
    pub domain: Domain,
    pub metric: MetricId,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub day_assignments: BTreeMap<u32, usize>,
    pub silhouette: f64,
    pub fit_config: ModeFitConfig,
}

impl BehaviorModeModel {
    pub fn fitted_metric(&self) -> Metric {
        self.fit_config.metric(self.metric)
    }

    /// Day indices assigned to `mode`, ascending.
    pub fn days_in_mode(&self, mode: usize) -> Vec<u32> {
        self.day_assignments
            .iter()
            .filter(|(_, &m)| m == mode)
            .map(|(&d, _)| d)
            .collect()
    }
}

fn features(day: &ActigraphyDay, cfg: &ModeFitConfig) -> Result<Vec<f64>, MetricError> {
    match cfg.domain {
        Domain::Time => Ok(day.counts.clone()),
        Domain::Frequency => fft_features(&day.counts, cfg.fft_components),
    }
}

/// Fit behavior modes to one subject's days, choosing `k` and the metric by
/// silhouette over `cfg.grid`.
pub fn fit_behavior_modes(
    days: &[ActigraphyDay],
    cfg: &ModeFitConfig,
) -> Result<BehaviorModeModel, ModeError> {
    if days.len() < 2 {
        return Err(ModeError::TooFewDays(days.len()));
    }
    let subject_id = &days[0].subject_id;
    if let Some(other) = days.iter().find(|d| &d.subject_id != subject_id) {
        return Err(ModeError::MixedSubjects(
            subject_id.clone(),
            other.subject_id.clone(),
        ));
    }
    let data = days
        .iter()
        .map(|d| features(d, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let outcome = grid_search(&data, &cfg.grid, &cfg.kmeans)?;
    let best = outcome.best;
    Ok(BehaviorModeModel {
        subject_id: subject_id.clone(),
        domain: cfg.domain,
        metric: best.metric,
        k: best.k,
        day_assignments: days
            .iter()
            .map(|d| d.day_index)
            .zip(best.model.labels.iter().copied())
            .collect(),
        centroids: best.model.centroids,
        silhouette: best.silhouette,
        fit_config: cfg.clone(),
    })
}

/// One subject-day's mode in a cohort-wide fit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayAssignment {
    pub subject_id: String,
    pub day_index: u32,
    pub mode: usize,
}

/// Modes fitted over every subject's days at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortModeModel {
    pub domain: Domain,
    pub metric: MetricId,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<DayAssignment>,
    pub silhouette: f64,
    pub fit_config: ModeFitConfig,
}

/// Cluster all days of all subjects together.
pub fn fit_cohort_modes(
    days: &[ActigraphyDay],
    cfg: &ModeFitConfig,
) -> Result<CohortModeModel, ModeError> {
    if days.len() < 2 {
        return Err(ModeError::TooFewDays(days.len()));
    }
    let data = days
        .iter()
        .map(|d| features(d, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let best = grid_search(&data, &cfg.grid, &cfg.kmeans)?.best;
    Ok(CohortModeModel {
        domain: cfg.domain,
        metric: best.metric,
        k: best.k,
        assignments: days
            .iter()
            .zip(&best.model.labels)
            .map(|(d, &mode)| DayAssignment {
                subject_id: d.subject_id.clone(),
                day_index: d.day_index,
                mode,
            })
            .collect(),
        centroids: best.model.centroids,
        silhouette: best.silhouette,
        fit_config: cfg.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DayType {
    Weekday,
    Weekend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePurity {
    pub mode: usize,
    /// Days per day of week, Monday first.
    pub counts: [usize; 7],
    pub weekday_fraction: f64,
    pub majority_day_type: DayType,
    pub purity: f64,
}

impl ModePurity {
    pub fn days(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    /// Modes without any day are left out.
    pub modes: Vec<ModePurity>,
}

impl PurityReport {
    /// Size-weighted mean purity over modes.
    pub fn weighted_purity(&self) -> f64 {
        let total: usize = self.modes.iter().map(ModePurity::days).sum();
        if total == 0 {
            return 0.0;
        }
        self.modes
            .iter()
            .map(|m| m.purity * m.days() as f64)
            .sum::<f64>()
            / total as f64
    }
}

/// Weekday/weekend composition of each mode. Saturday and Sunday are weekend;
/// an even split counts as Weekday.
pub fn day_of_week_purity(
    model: &BehaviorModeModel,
    day_of_week: &BTreeMap<u32, u8>,
) -> Result<PurityReport, ModeError> {
    if model.day_assignments.is_empty() {
        return Err(ModeError::MissingAssignments);
    }
    let mut counts = vec![[0usize; 7]; model.k];
    for (&day, &mode) in &model.day_assignments {
        let dow = *day_of_week
            .get(&day)
            .ok_or(ModeError::MissingDayOfWeek(day))?;
        counts[mode][dow as usize % 7] += 1;
    }
    let modes = counts
        .into_iter()
        .enumerate()
        .filter(|(_, c)| c.iter().sum::<usize>() > 0)
        .map(|(mode, counts)| {
            let total: usize = counts.iter().sum();
            let weekday: usize = counts[..5].iter().sum();
            let weekday_fraction = weekday as f64 / total as f64;
            ModePurity {
                mode,
                counts,
                weekday_fraction,
                majority_day_type: if weekday_fraction >= 0.5 {
                    DayType::Weekday
                } else {
                    DayType::Weekend
                },
                purity: weekday_fraction.max(1.0 - weekday_fraction),
            }
        })
        .collect();
    Ok(PurityReport { modes })
}

/// Mode of a partially observed day: the nearest centroid after cropping
/// every centroid to the first `t_m` minutes.
pub fn assign_mode_partial(
    model: &BehaviorModeModel,
    x_partial: &[f64],
    t_m: u32,
) -> Result<(usize, f64), ModeError> {
    if model.domain != Domain::Time {
        return Err(ModeError::FrequencyDomainUnsupported);
    }
    if t_m < 1 || t_m as usize > MINUTES_PER_DAY {
        return Err(ModeError::BadWindow(t_m));
    }
    let t = t_m as usize;
    if x_partial.len() != t {
        return Err(ModeError::LengthMismatch {
            expected: t,
            got: x_partial.len(),
        });
    }
    let cropped: Vec<Vec<f64>> = model
        .centroids
        .iter()
        .map(|c| c[..t.min(c.len())].to_vec())
        .collect();
    Ok(cluster::nearest_centroid(
        &cropped,
        x_partial,
        &model.fitted_metric(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::IntervalType;

    fn day(subject: &str, index: u32, dow: u8, counts: Vec<f64>) -> ActigraphyDay {
        ActigraphyDay {
            subject_id: subject.into(),
            day_index: index,
            day_of_week: dow,
            counts,
            interval: vec![IntervalType::Active; MINUTES_PER_DAY],
            wake: vec![true; MINUTES_PER_DAY],
        }
    }

    fn bump(center: usize, width: f64, height: f64) -> Vec<f64> {
        (0..MINUTES_PER_DAY)
            .map(|m| height * (-((m as f64 - center as f64) / width).powi(2)).exp())
            .collect()
    }

    fn planted_week() -> Vec<ActigraphyDay> {
        (0..7u32)
            .map(|i| {
                let dow = i as u8;
                let mut c = if dow < 5 {
                    let a = bump(450, 30.0, 2000.0);
                    let b = bump(1050, 30.0, 2000.0);
                    a.iter().zip(&b).map(|(x, y)| x + y).collect()
                } else {
                    bump(720, 120.0, 1200.0)
                };
                // small day-specific wobble
                for (m, v) in c.iter_mut().enumerate() {
                    *v += ((m * (i as usize + 3)) % 17) as f64;
                }
                day("s1", i, dow, c)
            })
            .collect()
    }

    #[test]
    fn planted_weekday_weekend_split() {
        let days = planted_week();
        let model = fit_behavior_modes(&days, &ModeFitConfig::default()).unwrap();
        assert_eq!(model.k, 2);
        assert_eq!(model.day_assignments[&5], model.day_assignments[&6]);
        assert!((0..5).all(|d| model.day_assignments[&d] != model.day_assignments[&5]));
    }

    #[test]
    fn frequency_domain_gives_the_same_partition() {
        let days = planted_week();
        let time = fit_behavior_modes(&days, &ModeFitConfig::default()).unwrap();
        let cfg = ModeFitConfig {
            domain: Domain::Frequency,
            ..Default::default()
        };
        let freq = fit_behavior_modes(&days, &cfg).unwrap();
        assert_eq!(freq.centroids[0].len(), 50);
        for a in 0..7 {
            for b in 0..7 {
                assert_eq!(
                    time.day_assignments[&a] == time.day_assignments[&b],
                    freq.day_assignments[&a] == freq.day_assignments[&b]
                );
            }
        }
    }

    #[test]
    fn grid_of_one_surfaces_single_cluster() {
        let days: Vec<_> = (0..7)
            .map(|i| day("s", i, i as u8, vec![5.0; MINUTES_PER_DAY]))
            .collect();
        let cfg = ModeFitConfig {
            grid: GridSpec::new([1], [MetricId::L2]),
            ..Default::default()
        };
        assert_eq!(
            fit_behavior_modes(&days, &cfg),
            Err(ModeError::Cluster(ClusterError::SingleCluster))
        );
    }

    #[test]
    fn too_few_and_mixed() {
        let one = vec![day("a", 0, 0, vec![0.0; MINUTES_PER_DAY])];
        assert_eq!(
            fit_behavior_modes(&one, &ModeFitConfig::default()),
            Err(ModeError::TooFewDays(1))
        );
        let mixed = vec![one[0].clone(), day("b", 1, 1, vec![0.0; MINUTES_PER_DAY])];
        assert!(matches!(
            fit_behavior_modes(&mixed, &ModeFitConfig::default()),
            Err(ModeError::MixedSubjects(..))
        ));
    }

    #[test]
    fn every_day_is_nearest_to_its_own_centroid() {
        let days = planted_week();
        let model = fit_behavior_modes(&days, &ModeFitConfig::default()).unwrap();
        for d in &days {
            let (mode, _) = assign_mode_partial(&model, &d.counts, 1440).unwrap();
            assert_eq!(mode, model.day_assignments[&d.day_index]);
        }
    }

    fn toy_model(centroids: Vec<Vec<f64>>, assignments: &[(u32, usize)]) -> BehaviorModeModel {
        BehaviorModeModel {
            subject_id: "s".into(),
            domain: Domain::Time,
            metric: MetricId::L2,
            k: centroids.len(),
            centroids,
            day_assignments: assignments.iter().copied().collect(),
            silhouette: 0.0,
            fit_config: ModeFitConfig::default(),
        }
    }

    #[test]
    fn partial_assignment_examples() {
        let mut a = vec![0.0; MINUTES_PER_DAY];
        let mut b = vec![50.0; MINUTES_PER_DAY];
        a[100] = 3.0;
        b[100] = 7.0;
        let model = toy_model(vec![a.clone(), b], &[]);
        assert_eq!(assign_mode_partial(&model, &a, 1440).unwrap(), (0, 0.0));
        assert_eq!(assign_mode_partial(&model, &[49.0], 1).unwrap().0, 1);
        assert_eq!(
            assign_mode_partial(&model, &[], 0),
            Err(ModeError::BadWindow(0))
        );
        assert!(matches!(
            assign_mode_partial(&model, &[1.0, 2.0], 3),
            Err(ModeError::LengthMismatch { .. })
        ));
        let mut freq = model.clone();
        freq.domain = Domain::Frequency;
        assert_eq!(
            assign_mode_partial(&freq, &[49.0], 1),
            Err(ModeError::FrequencyDomainUnsupported)
        );
    }

    #[test]
    fn purity_examples() {
        let model = toy_model(
            vec![vec![0.0], vec![1.0]],
            &[
                (0, 0),
                (1, 0),
                (2, 0),
                (3, 0),
                (4, 0),
                (5, 1),
                (6, 1),
                (7, 1),
                (8, 1),
                (9, 1),
            ],
        );
        // days 0..4 are Mon..Fri, 5..9 are Sat, Sun, Mon, Tue, Wed
        let dow: BTreeMap<u32, u8> = (0..10).map(|d| (d, (d % 7) as u8)).collect();
        let report = day_of_week_purity(&model, &dow).unwrap();
        assert_eq!(report.modes[0].weekday_fraction, 1.0);
        assert_eq!(report.modes[0].purity, 1.0);
        assert_eq!(report.modes[1].counts, [1, 1, 1, 0, 0, 1, 1]);
        assert_eq!(report.modes[1].weekday_fraction, 0.6);
        assert_eq!(report.modes[1].purity, 0.6);

        let model = toy_model(vec![vec![0.0]], &[(0, 0), (1, 0), (2, 0), (5, 0)]);
        let report = day_of_week_purity(&model, &dow).unwrap();
        assert_eq!(report.modes[0].weekday_fraction, 0.75);
        assert_eq!(report.modes[0].purity, 0.75);
        assert_eq!(report.modes[0].majority_day_type, DayType::Weekday);

        let empty = toy_model(vec![vec![0.0]], &[]);
        assert_eq!(
            day_of_week_purity(&empty, &dow),
            Err(ModeError::MissingAssignments)
        );
    }

    #[test]
    fn weighted_purity_reconstructs_cohort_ratio() {
        let model = toy_model(
            vec![vec![0.0], vec![1.0]],
            &[(0, 0), (1, 0), (5, 0), (2, 1), (6, 1), (13, 1)],
        );
        let dow: BTreeMap<u32, u8> = (0..14).map(|d| (d, (d % 7) as u8)).collect();
        let report = day_of_week_purity(&model, &dow).unwrap();
        let weekday_days: f64 = report
            .modes
            .iter()
            .map(|m| m.weekday_fraction * m.days() as f64)
            .sum();
        assert!((weekday_days / 6.0 - 3.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn model_json_round_trip() {
        let model = fit_behavior_modes(&planted_week(), &ModeFitConfig::default()).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: BehaviorModeModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }
}
