//! Epoch CSV parsing, minute-level day assembly, cut-point labeling, level
//! summaries and sleep records.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    ActigraphyDay, ActivityLevel, EpochRecord, Gender, IntervalType, LevelSummary, SleepRecord,
    SubjectMetadata, Timestamp, EPOCHS_PER_DAY, MINUTES_PER_DAY,
};

/// Header of the epoch CSV, in order.
pub const EPOCH_HEADER: [&str; 6] = [
    "subject_id",
    "day_index",
    "epoch_index",
    "activity_count",
    "interval_type",
    "wake",
];

/// Leading columns of the metadata CSV; any further columns are extensions.
pub const METADATA_HEADER: [&str; 5] = ["subject_id", "age", "gender", "bmi", "resting_hr"];

/// Complete days a subject needs to stay in the cohort.
pub const REQUIRED_DAYS: usize = 7;

/// WASO needs at least this many consecutive wake epochs (5 minutes).
pub const WASO_MIN_EPOCHS: usize = 10;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed header: expected {expected:?}, found {found:?}")]
    MalformedHeader { expected: String, found: String },
    #[error("non-monotonic timestamp for subject {subject_id} at line {line}")]
    NonMonotonicTimestamp { subject_id: String, line: u64 },
    #[error("window [{t1}, {t2}) is inverted or empty")]
    WindowInverted { t1: u32, t2: u32 },
    #[error("window end {t2} exceeds {MINUTES_PER_DAY} minutes")]
    WindowOutOfRange { t2: u32 },
    #[error("label vector has length {got}, window needs {needed}")]
    LabelLength { got: usize, needed: usize },
    #[error("no REST or REST-S epochs in the night")]
    NoBedInterval,
    #[error("invalid cut-points: {0}")]
    InvalidCutPoints(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Count thresholds (counts/minute) separating the four activity levels.
/// Intervals are lower-inclusive: `[light_min, moderate_min)` is Light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CutPoints {
    pub light_min: f64,
    pub moderate_min: f64,
    pub vigorous_min: f64,
}

impl Default for CutPoints {
    fn default() -> Self {
        CutPoints {
            light_min: 100.0,
            moderate_min: 1535.0,
            vigorous_min: 3962.0,
        }
    }
}

impl CutPoints {
    pub fn new(light_min: f64, moderate_min: f64, vigorous_min: f64) -> Result<Self, IngestError> {
        let cp = CutPoints {
            light_min,
            moderate_min,
            vigorous_min,
        };
        cp.validate()?;
        Ok(cp)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if 0.0 < self.light_min
            && self.light_min < self.moderate_min
            && self.moderate_min < self.vigorous_min
        {
            Ok(())
        } else {
            Err(IngestError::InvalidCutPoints(format!(
                "need 0 < {} < {} < {}",
                self.light_min, self.moderate_min, self.vigorous_min
            )))
        }
    }

    pub fn level_of(&self, count: f64) -> ActivityLevel {
        if count < self.light_min {
            ActivityLevel::Sedentary
        } else if count < self.moderate_min {
            ActivityLevel::Light
        } else if count < self.vigorous_min {
            ActivityLevel::Moderate
        } else {
            ActivityLevel::Vigorous
        }
    }

    /// Half-open count band `[lo, hi)` of a level; `hi` is infinite for Vigorous.
    pub fn band(&self, level: ActivityLevel) -> (f64, f64) {
        match level {
            ActivityLevel::Sedentary => (0.0, self.light_min),
            ActivityLevel::Light => (self.light_min, self.moderate_min),
            ActivityLevel::Moderate => (self.moderate_min, self.vigorous_min),
            ActivityLevel::Vigorous => (self.vigorous_min, f64::INFINITY),
        }
    }
}

/// A CSV row that could not be used. The row is skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedEpochs {
    /// Sorted by `(subject_id, timestamp)`.
    pub records: Vec<EpochRecord>,
    pub row_errors: Vec<RowError>,
}

fn check_header(
    found: &csv::StringRecord,
    expected: &[&str],
    allow_extra: bool,
) -> Result<(), IngestError> {
    let names: Vec<&str> = found.iter().map(str::trim).collect();
    let ok = if allow_extra {
        names.len() >= expected.len() && names[..expected.len()] == *expected
    } else {
        names == expected
    };
    if ok {
        Ok(())
    } else {
        Err(IngestError::MalformedHeader {
            expected: expected.join(","),
            found: names.join(","),
        })
    }
}

fn parse_epoch_row(row: &csv::StringRecord) -> Result<EpochRecord, String> {
    if row.len() != EPOCH_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            EPOCH_HEADER.len(),
            row.len()
        ));
    }
    let field = |i: usize| row.get(i).unwrap_or("").trim();
    let subject_id = field(0);
    if subject_id.is_empty() {
        return Err("empty subject_id".into());
    }
    let day_index: u32 = field(1)
        .parse()
        .map_err(|_| format!("bad day_index {:?}", field(1)))?;
    let epoch_index: u32 = field(2)
        .parse()
        .map_err(|_| format!("bad epoch_index {:?}", field(2)))?;
    if epoch_index as usize >= EPOCHS_PER_DAY {
        return Err(format!(
            "epoch_index {epoch_index} out of range 0..{EPOCHS_PER_DAY}"
        ));
    }
    let activity_count: u32 = field(3)
        .parse()
        .map_err(|_| format!("bad activity_count {:?}", field(3)))?;
    let interval_type: IntervalType = field(4)
        .parse()
        .map_err(|_| format!("unknown interval_type {:?}", field(4)))?;
    let wake = match field(5) {
        "0" => false,
        "1" => true,
        other => return Err(format!("bad wake {other:?}")),
    };
    Ok(EpochRecord {
        subject_id: subject_id.to_string(),
        timestamp: Timestamp::from_day_epoch(day_index, epoch_index),
        activity_count,
        interval_type,
        wake,
    })
}

/// Parse the epoch CSV. Bad rows are skipped and listed; a bad header or a
/// subject whose timestamps go backwards aborts the parse.
pub fn parse_epochs<R: Read>(source: R) -> Result<ParsedEpochs, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    check_header(reader.headers()?, &EPOCH_HEADER, false)?;

    let mut out = ParsedEpochs::default();
    let mut last_seen: HashMap<String, Timestamp> = HashMap::new();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                out.row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_epoch_row(&row) {
            Ok(rec) => {
                if let Some(prev) = last_seen.get(&rec.subject_id) {
                    if rec.timestamp <= *prev {
                        return Err(IngestError::NonMonotonicTimestamp {
                            subject_id: rec.subject_id,
                            line,
                        });
                    }
                }
                last_seen.insert(rec.subject_id.clone(), rec.timestamp);
                out.records.push(rec);
            }
            Err(message) => out.row_errors.push(RowError { line, message }),
        }
    }
    out.records.sort_by(|a, b| {
        a.subject_id
            .cmp(&b.subject_id)
            .then(a.timestamp.cmp(&b.timestamp))
    });
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct ParsedMetadata {
    pub records: Vec<SubjectMetadata>,
    pub row_errors: Vec<RowError>,
}

fn optional_number(raw: &str, name: &str) -> Result<Option<f64>, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw.parse().map_err(|_| format!("bad {name} {raw:?}"))?;
    if !v.is_finite() {
        return Err(format!("{name} is not finite"));
    }
    Ok(Some(v))
}

/// Parse the metadata CSV (`subject_id,age,gender,bmi,resting_hr[,extra...]`).
/// Empty cells are absent values.
pub fn parse_metadata<R: Read>(source: R) -> Result<ParsedMetadata, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = reader.headers()?.clone();
    check_header(&header, &METADATA_HEADER, true)?;
    let extras: Vec<String> = header
        .iter()
        .skip(METADATA_HEADER.len())
        .map(|s| s.trim().to_string())
        .collect();

    let mut out = ParsedMetadata::default();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                out.row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parsed = (|| -> Result<SubjectMetadata, String> {
            if row.len() != header.len() {
                return Err(format!(
                    "expected {} fields, found {}",
                    header.len(),
                    row.len()
                ));
            }
            let subject_id = row[0].trim();
            if subject_id.is_empty() {
                return Err("empty subject_id".into());
            }
            let mut meta = SubjectMetadata::empty(subject_id);
            meta.age = optional_number(&row[1], "age")?;
            meta.gender = match row[2].trim() {
                "" => None,
                g => Some(g.parse::<Gender>().map_err(|e| e.to_string())?),
            };
            meta.bmi = optional_number(&row[3], "bmi")?;
            meta.resting_hr = optional_number(&row[4], "resting_hr")?;
            for (name, raw) in extras.iter().zip(row.iter().skip(METADATA_HEADER.len())) {
                meta.extensions
                    .insert(name.clone(), optional_number(raw, name)?);
            }
            if let Some(v) = meta.validate().first() {
                return Err(v.message.clone());
            }
            Ok(meta)
        })();
        match parsed {
            Ok(meta) => out.records.push(meta),
            Err(message) => out.row_errors.push(RowError { line, message }),
        }
    }
    out.records.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(out)
}

/// A subject-day that lacked some of its 2880 epochs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncompleteDay {
    pub subject_id: String,
    pub day_index: u32,
    pub epochs_present: usize,
}

#[derive(Debug, Clone, Default)]
pub struct AssembledDays {
    /// Sorted by `(subject_id, day_index)`.
    pub days: Vec<ActigraphyDay>,
    pub incomplete: Vec<IncompleteDay>,
}

/// Day of week (0 = Monday) of `day_index` when day 0 falls on `first_day_of_week`.
pub fn day_of_week(day_index: u32, first_day_of_week: u8) -> u8 {
    ((first_day_of_week as u32 + day_index) % 7) as u8
}

/// Collapse epochs into minute-level days.
///
/// Minute `m` sums epochs `2m` and `2m+1`. Its interval is the higher
/// precedence of the two (EXCLUDED > REST-S > REST > ACTIVE) and it is awake if
/// either epoch is. Days missing any epoch are dropped and reported.
pub fn epochs_to_days(epochs: &[EpochRecord], first_day_of_week: u8) -> AssembledDays {
    let mut groups: BTreeMap<(&str, u32), Vec<Option<&EpochRecord>>> = BTreeMap::new();
    for e in epochs {
        let slots = groups
            .entry((e.subject_id.as_str(), e.day_index()))
            .or_insert_with(|| vec![None; EPOCHS_PER_DAY]);
        slots[e.epoch_index() as usize] = Some(e);
    }

    let mut out = AssembledDays::default();
    for ((subject_id, day_index), slots) in groups {
        let present = slots.iter().filter(|s| s.is_some()).count();
        if present != EPOCHS_PER_DAY {
            out.incomplete.push(IncompleteDay {
                subject_id: subject_id.to_string(),
                day_index,
                epochs_present: present,
            });
            continue;
        }
        let mut counts = Vec::with_capacity(MINUTES_PER_DAY);
        let mut interval = Vec::with_capacity(MINUTES_PER_DAY);
        let mut wake = Vec::with_capacity(MINUTES_PER_DAY);
        for pair in slots.chunks_exact(2) {
            let (a, b) = (
                pair[0].expect("complete day"),
                pair[1].expect("complete day"),
            );
            counts.push(a.activity_count as f64 + b.activity_count as f64);
            interval.push(
                if b.interval_type.precedence() > a.interval_type.precedence() {
                    b.interval_type
                } else {
                    a.interval_type
                },
            );
            wake.push(a.wake || b.wake);
        }
        out.days.push(ActigraphyDay {
            subject_id: subject_id.to_string(),
            day_index,
            day_of_week: day_of_week(day_index, first_day_of_week),
            counts,
            interval,
            wake,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedSubject {
    pub subject_id: String,
    pub complete_days: usize,
}

#[derive(Debug, Clone, Default)]
pub struct FilteredDays {
    pub kept: Vec<ActigraphyDay>,
    pub dropped: Vec<DroppedSubject>,
}

/// Drop subjects with fewer than `required` complete days; keep the first
/// `required` days (by `day_index`) of everyone else.
pub fn filter_subjects(days: Vec<ActigraphyDay>, required: usize) -> FilteredDays {
    let mut by_subject: BTreeMap<String, Vec<ActigraphyDay>> = BTreeMap::new();
    for d in days {
        by_subject.entry(d.subject_id.clone()).or_default().push(d);
    }
    let mut out = FilteredDays::default();
    for (subject_id, mut days) in by_subject {
        if days.len() < required {
            out.dropped.push(DroppedSubject {
                subject_id,
                complete_days: days.len(),
            });
            continue;
        }
        days.sort_by_key(|d| d.day_index);
        days.truncate(required);
        out.kept.extend(days);
    }
    out
}

pub fn label_counts(counts: &[f64], cp: &CutPoints) -> Vec<ActivityLevel> {
    counts.iter().map(|&c| cp.level_of(c)).collect()
}

/// Activity level of every minute of `day`.
pub fn label_minutes(day: &ActigraphyDay, cp: &CutPoints) -> Vec<ActivityLevel> {
    label_counts(&day.counts, cp)
}

/// `[light, moderate, vigorous]` minute counts over `[t1, t2)`.
///
/// When `active` is given only minutes annotated ACTIVE are counted.
pub fn level_minutes(
    labels: &[ActivityLevel],
    active: Option<&[IntervalType]>,
    t1: u32,
    t2: u32,
) -> Result<[f64; 3], IngestError> {
    if t1 >= t2 {
        return Err(IngestError::WindowInverted { t1, t2 });
    }
    if t2 as usize > MINUTES_PER_DAY {
        return Err(IngestError::WindowOutOfRange { t2 });
    }
    let (lo, hi) = (t1 as usize, t2 as usize);
    if labels.len() < hi {
        return Err(IngestError::LabelLength {
            got: labels.len(),
            needed: hi,
        });
    }
    if let Some(iv) = active {
        if iv.len() < hi {
            return Err(IngestError::LabelLength {
                got: iv.len(),
                needed: hi,
            });
        }
    }
    let mut minutes = [0.0; 3];
    for m in lo..hi {
        if let Some(iv) = active {
            if iv[m] != IntervalType::Active {
                continue;
            }
        }
        if let Some(slot) = labels[m].recipe_slot() {
            minutes[slot] += 1.0;
        }
    }
    Ok(minutes)
}

pub fn summarize_levels(
    day: &ActigraphyDay,
    labels: &[ActivityLevel],
    t1: u32,
    t2: u32,
    active_only: bool,
) -> Result<LevelSummary, IngestError> {
    let active = active_only.then_some(day.interval.as_slice());
    let minutes = level_minutes(labels, active, t1, t2)?;
    Ok(LevelSummary {
        subject_id: day.subject_id.clone(),
        day_index: day.day_index,
        window_start: t1,
        window_end: t2,
        minutes,
    })
}

fn adjacent(a: &EpochRecord, b: &EpochRecord) -> bool {
    b.timestamp.half_minutes() == a.timestamp.half_minutes() + 1
}

/// Sleep record of one night from its epochs.
///
/// Time in bed is every REST and REST-S epoch. Time awake in bed is every
/// REST epoch plus WASO: runs of at least ten consecutive wake epochs inside
/// REST-S. The night is attributed to the day of its first in-bed epoch.
pub fn compute_sleep_record(night: &[EpochRecord]) -> Result<SleepRecord, IngestError> {
    let first = night
        .iter()
        .find(|e| e.interval_type.is_in_bed())
        .ok_or(IngestError::NoBedInterval)?;

    let mut rest = 0usize;
    let mut rest_s = 0usize;
    let mut waso = 0usize;
    let mut run = 0usize;
    let mut prev: Option<&EpochRecord> = None;
    for e in night {
        match e.interval_type {
            IntervalType::Rest => rest += 1,
            IntervalType::RestS => rest_s += 1,
            _ => {}
        }
        let extends_run = e.interval_type == IntervalType::RestS
            && e.wake
            && prev.is_some_and(|p| adjacent(p, e));
        if !extends_run {
            if run >= WASO_MIN_EPOCHS {
                waso += run;
            }
            run = 0;
        }
        if e.interval_type == IntervalType::RestS && e.wake {
            run += 1;
        }
        prev = Some(e);
    }
    if run >= WASO_MIN_EPOCHS {
        waso += run;
    }

    let in_bed = 0.5 * (rest + rest_s) as f64;
    let awake = 0.5 * rest as f64 + 0.5 * waso as f64;
    SleepRecord::from_bed_minutes(first.subject_id.clone(), first.day_index(), in_bed, awake)
        .map_err(|_| IngestError::NoBedInterval)
}

/// The night belonging to `day_index`: the longest contiguous REST/REST-S run
/// that starts in the second half of that day. It may run into the next day.
///
/// `subject_epochs` must be one subject's epochs sorted by timestamp.
pub fn locate_night(subject_epochs: &[EpochRecord], day_index: u32) -> Option<&[EpochRecord]> {
    let half_day = (EPOCHS_PER_DAY / 2) as u32;
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < subject_epochs.len() {
        if !subject_epochs[i].interval_type.is_in_bed() {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i + 1;
        while end < subject_epochs.len()
            && subject_epochs[end].interval_type.is_in_bed()
            && adjacent(&subject_epochs[end - 1], &subject_epochs[end])
        {
            end += 1;
        }
        let s = &subject_epochs[start];
        if s.day_index() == day_index && s.epoch_index() >= half_day {
            let better = match best {
                None => true,
                Some((bs, be)) => end - start > be - bs,
            };
            if better {
                best = Some((start, end));
            }
        }
        i = end;
    }
    best.map(|(s, e)| &subject_epochs[s..e])
}

/// Sleep records for the given days of one subject, keyed by day index.
/// Days with no night are absent.
pub fn sleep_records_for_days(
    subject_epochs: &[EpochRecord],
    day_indices: impl IntoIterator<Item = u32>,
) -> BTreeMap<u32, SleepRecord> {
    day_indices
        .into_iter()
        .filter_map(|d| {
            let night = locate_night(subject_epochs, d)?;
            compute_sleep_record(night).ok().map(|r| (d, r))
        })
        .collect()
}

/// Minute at which the night of `day_index - 1` ended on `day_index`, if that
/// night ran past midnight.
pub fn wake_onset(subject_epochs: &[EpochRecord], day_index: u32) -> Option<u32> {
    let prev = day_index.checked_sub(1)?;
    let night = locate_night(subject_epochs, prev)?;
    let last = night.last()?;
    if last.day_index() != day_index {
        return None;
    }
    Some((last.epoch_index() + 1).div_ceil(2))
}
