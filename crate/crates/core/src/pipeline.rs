//! Batch pipeline: epochs and metadata in, a model bundle and run report out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    epochs_to_days, filter_subjects, label_counts, label_minutes, parse_epochs, parse_metadata,
    sleep_records_for_days, summarize_levels, wake_onset, CutPoints, IngestError, REQUIRED_DAYS,
};
use crate::metrics::MetricId;
use crate::modes::{day_of_week_purity, fit_behavior_modes, BehaviorModeModel, ModeFitConfig};
use crate::recipes::{extract_recipes, tag_sleep_quality, RecipeBook, RecipeConfig};
use crate::recommend::{
    recommend, retrospective_evaluate, CohortDay, ConstraintRule, PartialDay, RecommendError,
    Recommendation,
};
use crate::types::{
    ActigraphyDay, EpochRecord, LevelSummary, MetadataOverrides, SleepQuality, SleepRecord,
    SubjectMetadata, MINUTES_PER_DAY,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("bundle format_version {0} is not supported")]
    UnsupportedFormat(u32),
    #[error("bundle has no subjects")]
    EmptyBundle,
    #[error("no subject of the bundle appears in the data")]
    Mismatch,
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub first_day_of_week: u8,
    pub required_days: usize,
    pub cut_points: CutPoints,
    pub modes: ModeFitConfig,
    pub recipes: RecipeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            first_day_of_week: 0,
            required_days: REQUIRED_DAYS,
            cut_points: CutPoints::default(),
            modes: ModeFitConfig::default(),
            recipes: RecipeConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// The config with `seed` pushed into every clustering step.
    pub fn effective(&self) -> PipelineConfig {
        let mut cfg = self.clone();
        cfg.modes.kmeans.seed = self.seed;
        cfg.recipes.seed = self.seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectModel {
    pub modes: BehaviorModeModel,
    pub recipes: RecipeBook,
    pub metadata: Option<SubjectMetadata>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub cut_points: CutPoints,
    pub subjects: BTreeMap<String, SubjectModel>,
}

impl ModelBundle {
    pub fn empty(config: PipelineConfig) -> Self {
        ModelBundle {
            format_version: FORMAT_VERSION,
            cut_points: config.cut_points,
            config,
            subjects: BTreeMap::new(),
        }
    }

    pub fn subject_ids(&self) -> Vec<&str> {
        self.subjects.keys().map(String::as_str).collect()
    }

    pub fn to_json(&self) -> Result<String, PipelineError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, PipelineError> {
        let bundle: ModelBundle = serde_json::from_slice(bytes)?;
        if bundle.format_version != FORMAT_VERSION {
            return Err(PipelineError::UnsupportedFormat(bundle.format_version));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_json(&std::fs::read(path)?)
    }
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("unknown subject {0}")]
    UnknownSubject(String),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
}

impl QueryError {
    /// Stable name of the failure, shared by the CLI and the HTTP API.
    pub fn code(&self) -> &'static str {
        use crate::modes::ModeError;
        match self {
            QueryError::UnknownSubject(_) => "UnknownSubject",
            QueryError::Recommend(e) => {
                match e {
                    RecommendError::NoRecipesForMode(_) => "NoRecipesForMode",
                    RecommendError::BadWindow(_)
                    | RecommendError::Mode(ModeError::BadWindow(_)) => "BadWindow",
                    RecommendError::LengthMismatch { .. }
                    | RecommendError::Mode(ModeError::LengthMismatch { .. }) => "LengthMismatch",
                    RecommendError::UnknownMetadataField(_)
                    | RecommendError::InvalidRule { .. } => "InvalidRule",
                    _ => "DomainError",
                }
            }
        }
    }
}

/// A recommendation query against one bundled subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendRequest {
    pub subject_id: String,
    pub t_m: u32,
    /// Counts for minutes `0..t_m`.
    pub partial_counts: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<MetadataOverrides>,
    /// Replaces the default rule set when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<Vec<ConstraintRule>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wake_onset: Option<u32>,
}

impl ModelBundle {
    pub fn subject(&self, id: &str) -> Result<&SubjectModel, QueryError> {
        self.subjects
            .get(id)
            .ok_or_else(|| QueryError::UnknownSubject(id.to_string()))
    }

    /// Recommend for `req`, using `default_rules` unless the request carries its own.
    pub fn recommend(
        &self,
        req: &RecommendRequest,
        default_rules: &[ConstraintRule],
    ) -> Result<Recommendation, QueryError> {
        let model = self.subject(&req.subject_id)?;
        let labels = label_counts(&req.partial_counts, &self.cut_points);
        let mut meta = model
            .metadata
            .clone()
            .unwrap_or_else(|| SubjectMetadata::empty(req.subject_id.clone()));
        if let Some(o) = &req.metadata {
            meta = meta.overridden_by(o);
        }
        let rules = req.rules.as_deref().unwrap_or(default_rules);
        for r in rules {
            r.validate()?;
        }
        let day = PartialDay {
            counts: &req.partial_counts,
            labels: &labels,
            t_m: req.t_m,
            wake_onset: req.wake_onset,
        };
        Ok(recommend(&model.modes, &model.recipes, day, &meta, rules)?)
    }
}

/// The wire form of a recommendation shared by every interface.
pub fn recommendation_json(rec: &Recommendation) -> String {
    serde_json::to_string(rec).expect("recommendation serializes")
}

/// One subject's assembled data.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub days: Vec<ActigraphyDay>,
    /// Sorted by timestamp.
    pub epochs: Vec<EpochRecord>,
    pub sleep: BTreeMap<u32, SleepRecord>,
    pub wake_onsets: BTreeMap<u32, u32>,
}

impl SubjectData {
    pub fn window_start(&self, day_index: u32) -> u32 {
        self.wake_onsets.get(&day_index).copied().unwrap_or(0)
    }

    /// Full-day level totals from wake onset to midnight.
    pub fn day_summary(
        &self,
        day: &ActigraphyDay,
        cp: &CutPoints,
    ) -> Result<LevelSummary, IngestError> {
        let labels = label_minutes(day, cp);
        summarize_levels(
            day,
            &labels,
            self.window_start(day.day_index),
            MINUTES_PER_DAY as u32,
            false,
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct PreparedCohort {
    pub subjects: BTreeMap<String, SubjectData>,
    pub dropped: Vec<crate::ingest::DroppedSubject>,
    pub row_errors: usize,
    pub incomplete_days: usize,
}

/// Parse epochs and assemble each retained subject's days, nights and wake times.
pub fn prepare_cohort<R: Read>(
    epochs: R,
    cfg: &PipelineConfig,
) -> Result<PreparedCohort, PipelineError> {
    let parsed = parse_epochs(epochs)?;
    let assembled = epochs_to_days(&parsed.records, cfg.first_day_of_week);
    let filtered = filter_subjects(assembled.days, cfg.required_days);

    let mut by_subject: BTreeMap<String, Vec<EpochRecord>> = BTreeMap::new();
    for e in parsed.records {
        by_subject.entry(e.subject_id.clone()).or_default().push(e);
    }
    let mut days_by_subject: BTreeMap<String, Vec<ActigraphyDay>> = BTreeMap::new();
    for d in filtered.kept {
        days_by_subject
            .entry(d.subject_id.clone())
            .or_default()
            .push(d);
    }
    let subjects = days_by_subject
        .into_iter()
        .map(|(id, days)| {
            let epochs = by_subject.remove(&id).unwrap_or_default();
            let indices: Vec<u32> = days.iter().map(|d| d.day_index).collect();
            let sleep = sleep_records_for_days(&epochs, indices.iter().copied());
            let wake_onsets = indices
                .iter()
                .filter_map(|&d| wake_onset(&epochs, d).map(|w| (d, w)))
                .collect();
            (
                id,
                SubjectData {
                    days,
                    epochs,
                    sleep,
                    wake_onsets,
                },
            )
        })
        .collect();
    Ok(PreparedCohort {
        subjects,
        dropped: filtered.dropped,
        row_errors: parsed.row_errors.len(),
        incomplete_days: assembled.incomplete.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectStatus {
    Fitted,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectReport {
    pub subject_id: String,
    pub status: SubjectStatus,
    pub k: Option<usize>,
    pub metric: Option<MetricId>,
    pub silhouette: Option<f64>,
    /// Recipes per mode.
    pub recipe_counts: Vec<usize>,
    pub purity: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub row_errors: usize,
    pub incomplete_days: usize,
    /// Sorted by subject id.
    pub subjects: Vec<SubjectReport>,
}

impl RunReport {
    pub fn fitted(&self) -> usize {
        self.subjects
            .iter()
            .filter(|s| s.status == SubjectStatus::Fitted)
            .count()
    }

    pub fn to_text(&self) -> String {
        let skipped = self
            .subjects
            .iter()
            .filter(|s| s.status == SubjectStatus::Skipped)
            .count();
        let failed = self
            .subjects
            .iter()
            .filter(|s| s.status == SubjectStatus::Failed)
            .count();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "subjects: {} fitted, {skipped} skipped, {failed} failed ({} total)",
            self.fitted(),
            self.subjects.len()
        );
        let _ = writeln!(
            out,
            "rows rejected: {}, incomplete days: {}",
            self.row_errors, self.incomplete_days
        );
        let _ = writeln!(
            out,
            "config: {}",
            serde_json::to_string(&self.config).unwrap_or_default()
        );
        for s in &self.subjects {
            match s.status {
                SubjectStatus::Fitted => {
                    let _ = writeln!(
                        out,
                        "  {} k={} metric={} silhouette={:.4} recipes={:?} purity={:.3}",
                        s.subject_id,
                        s.k.unwrap_or(0),
                        s.metric.map(|m| m.to_string()).unwrap_or_default(),
                        s.silhouette.unwrap_or(f64::NAN),
                        s.recipe_counts,
                        s.purity.unwrap_or(f64::NAN)
                    );
                }
                _ => {
                    let _ = writeln!(out, "  {} {:?}: {}", s.subject_id, s.status, s.message);
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("subject_id,status,k,metric,silhouette,recipes,purity,message\n");
        let opt = |v: Option<String>| v.unwrap_or_default();
        for s in &self.subjects {
            let recipes = s
                .recipe_counts
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(";");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},\"{}\"",
                s.subject_id,
                serde_json::to_value(s.status)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                opt(s.k.map(|k| k.to_string())),
                opt(s.metric.map(|m| m.to_string())),
                opt(s.silhouette.map(|v| v.to_string())),
                recipes,
                opt(s.purity.map(|v| v.to_string())),
                s.message.replace('"', "\"\"")
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub bundle: ModelBundle,
    pub report: RunReport,
}

fn fit_subject(
    data: &SubjectData,
    meta: Option<&SubjectMetadata>,
    cfg: &PipelineConfig,
) -> Result<(SubjectModel, SubjectReport), String> {
    let id = data.days[0].subject_id.clone();
    let modes = fit_behavior_modes(&data.days, &cfg.modes).map_err(|e| e.to_string())?;
    let mut book = RecipeBook {
        subject_id: id.clone(),
        modes: BTreeMap::new(),
    };
    let mut notes = Vec::new();
    for mode in 0..modes.k {
        let mut summaries = Vec::new();
        let mut tags = Vec::new();
        for day in data
            .days
            .iter()
            .filter(|d| modes.day_assignments.get(&d.day_index) == Some(&mode))
        {
            let Some(rec) = data.sleep.get(&day.day_index) else {
                continue;
            };
            summaries.push(
                data.day_summary(day, &cfg.cut_points)
                    .map_err(|e| e.to_string())?,
            );
            tags.push(tag_sleep_quality(rec, &cfg.recipes));
        }
        let recipes = if summaries.len() < 2 {
            notes.push(format!(
                "mode {mode}: {} day(s) with sleep data",
                summaries.len()
            ));
            Vec::new()
        } else {
            extract_recipes(&summaries, &tags, &cfg.recipes)
                .map_err(|e| e.to_string())?
                .recipes()
        };
        book.modes.insert(mode, recipes);
    }
    let dow: BTreeMap<u32, u8> = data
        .days
        .iter()
        .map(|d| (d.day_index, d.day_of_week))
        .collect();
    let purity = day_of_week_purity(&modes, &dow).map_err(|e| e.to_string())?;
    let report = SubjectReport {
        subject_id: id,
        status: SubjectStatus::Fitted,
        k: Some(modes.k),
        metric: Some(modes.metric),
        silhouette: Some(modes.silhouette),
        recipe_counts: (0..modes.k).map(|m| book.recipes_for(m).len()).collect(),
        purity: Some(purity.weighted_purity()),
        message: notes.join("; "),
    };
    Ok((
        SubjectModel {
            modes,
            recipes: book,
            metadata: meta.cloned(),
        },
        report,
    ))
}

fn unfitted(subject_id: String, status: SubjectStatus, message: String) -> SubjectReport {
    SubjectReport {
        subject_id,
        status,
        k: None,
        metric: None,
        silhouette: None,
        recipe_counts: Vec::new(),
        purity: None,
        message,
    }
}

/// Fit modes and recipes for every subject with enough complete days.
/// A subject that fails is reported and left out of the bundle.
pub fn run_pipeline<E: Read, M: Read>(
    epochs: E,
    metadata: M,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let cfg = config.effective();
    cfg.cut_points.validate()?;
    let cohort = prepare_cohort(epochs, &cfg)?;
    let meta: BTreeMap<String, SubjectMetadata> = parse_metadata(metadata)?
        .records
        .into_iter()
        .map(|m| (m.subject_id.clone(), m))
        .collect();

    let fits: Vec<(String, Result<(SubjectModel, SubjectReport), String>)> = cohort
        .subjects
        .par_iter()
        .map(|(id, data)| {
            log::debug!("fitting {id}");
            (id.clone(), fit_subject(data, meta.get(id), &cfg))
        })
        .collect();

    let mut bundle = ModelBundle::empty(cfg.clone());
    let mut reports = Vec::new();
    for (id, fit) in fits {
        match fit {
            Ok((model, report)) => {
                bundle.subjects.insert(id, model);
                reports.push(report);
            }
            Err(message) => {
                log::warn!("subject {id} failed: {message}");
                reports.push(unfitted(id, SubjectStatus::Failed, message));
            }
        }
    }
    for d in &cohort.dropped {
        reports.push(unfitted(
            d.subject_id.clone(),
            SubjectStatus::Skipped,
            format!(
                "{} complete day(s), {} required",
                d.complete_days, cfg.required_days
            ),
        ));
    }
    reports.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(PipelineOutput {
        bundle,
        report: RunReport {
            config: cfg,
            row_errors: cohort.row_errors,
            incomplete_days: cohort.incomplete_days,
            subjects: reports,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub t_m_grid: Vec<u32>,
    pub n_neighbors: usize,
    pub rules: Vec<ConstraintRule>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            t_m_grid: vec![720],
            n_neighbors: 10,
            rules: crate::recommend::default_rules(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub subject_id: String,
    pub day_index: u32,
    pub t_m: u32,
    pub mode: Option<usize>,
    pub success_rate: Option<f64>,
    pub n_neighbors: usize,
    /// `ok`, or why the row was not evaluated.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<EvalRow>,
    /// Mean success rate over evaluated rows.
    pub cohort_mean: Option<f64>,
    pub evaluated: usize,
    pub not_evaluated: usize,
}

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("subject_id,day_index,t_m,mode,success_rate,n_neighbors,status\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.subject_id,
                r.day_index,
                r.t_m,
                r.mode.map(|m| m.to_string()).unwrap_or_default(),
                r.success_rate.map(|v| v.to_string()).unwrap_or_default(),
                r.n_neighbors,
                r.status
            );
        }
        let _ = writeln!(
            out,
            "cohort,,,,{},{},summary",
            self.cohort_mean.map(|v| v.to_string()).unwrap_or_default(),
            self.evaluated
        );
        out
    }
}

/// Historical days with sleep outcomes, for retrospective evaluation.
pub fn cohort_days(
    cohort: &PreparedCohort,
    bundle: &ModelBundle,
) -> Result<Vec<CohortDay>, PipelineError> {
    let cp = &bundle.cut_points;
    let threshold = &bundle.config.recipes;
    let mut out = Vec::new();
    for (id, data) in &cohort.subjects {
        for day in &data.days {
            let Some(rec) = data.sleep.get(&day.day_index) else {
                continue;
            };
            out.push(CohortDay {
                subject_id: id.clone(),
                day_index: day.day_index,
                minutes: data.day_summary(day, cp)?.minutes,
                quality: tag_sleep_quality(rec, threshold),
            });
        }
    }
    Ok(out)
}

/// Replay every bundled subject-day at each `t_m`: recommend, then judge the
/// top item by the sleep of the closest other days in the cohort.
pub fn evaluate_cohort<R: Read>(
    bundle: &ModelBundle,
    epochs: R,
    cfg: &EvalConfig,
) -> Result<EvaluationReport, PipelineError> {
    if bundle.subjects.is_empty() {
        return Err(PipelineError::EmptyBundle);
    }
    let cohort = prepare_cohort(epochs, &bundle.config)?;
    if !bundle
        .subjects
        .keys()
        .any(|id| cohort.subjects.contains_key(id))
    {
        return Err(PipelineError::Mismatch);
    }
    let history = cohort_days(&cohort, bundle)?;
    let cp = &bundle.cut_points;

    let mut jobs = Vec::new();
    for (id, model) in &bundle.subjects {
        let Some(data) = cohort.subjects.get(id) else {
            continue;
        };
        for day in &data.days {
            for &t_m in &cfg.t_m_grid {
                jobs.push((id, model, data, day, t_m));
            }
        }
    }
    let rows: Vec<EvalRow> = jobs
        .par_iter()
        .map(|&(id, model, data, day, t_m)| {
            let row = |mode, success_rate, n_neighbors, status: &str| EvalRow {
                subject_id: id.clone(),
                day_index: day.day_index,
                t_m,
                mode,
                success_rate,
                n_neighbors,
                status: status.to_string(),
            };
            if t_m < 1 || t_m as usize > MINUTES_PER_DAY {
                return row(None, None, 0, "bad_window");
            }
            let t = t_m as usize;
            let labels = label_minutes(day, cp);
            let partial = PartialDay {
                counts: &day.counts[..t],
                labels: &labels[..t],
                t_m,
                wake_onset: Some(data.window_start(day.day_index)),
            };
            let meta = model
                .metadata
                .clone()
                .unwrap_or_else(|| SubjectMetadata::empty(id.clone()));
            let rec = match recommend(&model.modes, &model.recipes, partial, &meta, &cfg.rules) {
                Ok(r) => r,
                Err(RecommendError::NoRecipesForMode(m)) => {
                    return row(Some(m), None, 0, "no_recipes")
                }
                Err(e) => return row(None, None, 0, &format!("error: {e}")),
            };
            let Some(top) = rec.ordered_items.first() else {
                return row(Some(rec.mode), None, 0, "no_items");
            };
            let target: [f64; 3] = std::array::from_fn(|i| rec.achieved[i] + top.deficit[i]);
            match retrospective_evaluate(
                &history,
                target,
                cfg.n_neighbors,
                Some((id.as_str(), day.day_index)),
            ) {
                Ok(r) => row(Some(rec.mode), Some(r.success_rate), r.n_used, "ok"),
                Err(e) => row(Some(rec.mode), None, 0, &format!("error: {e}")),
            }
        })
        .collect();

    let rates: Vec<f64> = rows.iter().filter_map(|r| r.success_rate).collect();
    Ok(EvaluationReport {
        cohort_mean: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
        evaluated: rates.len(),
        not_evaluated: rows.len() - rates.len(),
        rows,
    })
}

/// Sleep quality per day of one subject, for callers that need the tags.
pub fn sleep_tags(data: &SubjectData, cfg: &RecipeConfig) -> BTreeMap<u32, SleepQuality> {
    data.sleep
        .iter()
        .map(|(&d, r)| (d, tag_sleep_quality(r, cfg)))
        .collect()
}
