//! Domain types shared across the pipeline.
//!
//! Every type here is plain data: immutable once built, `Send + Sync`, and
//! (de)serializable to JSON with the field names used in model files and the
//! HTTP API.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Minutes in one actigraphy day.
pub const MINUTES_PER_DAY: usize = 1440;
/// 30-second epochs in one actigraphy day.
pub const EPOCHS_PER_DAY: usize = 2 * MINUTES_PER_DAY;
/// Sleep efficiency a night must strictly exceed to count as good sleep.
pub const GOOD_SLEEP_EFFICIENCY: f64 = 0.90;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("unknown activity level {0:?}")]
    UnknownActivityLevel(String),
    #[error("unknown interval_type {0:?}")]
    UnknownIntervalType(String),
    #[error("unknown gender {0:?}")]
    UnknownGender(String),
    #[error("timestamp {0} is not a multiple of half a minute")]
    BadTimestamp(f64),
    #[error("invalid sleep minutes: in_bed={in_bed}, awake_in_bed={awake}")]
    InvalidSleepMinutes { in_bed: f64, awake: f64 },
    #[error("unknown metadata field {0:?}")]
    UnknownMetadataField(String),
}

/// Movement intensity of one minute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityLevel {
    Sedentary,
    Light,
    Moderate,
    Vigorous,
}

impl ActivityLevel {
    pub const ALL: [ActivityLevel; 4] = [
        ActivityLevel::Sedentary,
        ActivityLevel::Light,
        ActivityLevel::Moderate,
        ActivityLevel::Vigorous,
    ];

    /// Order of the three components of every recipe / level-summary vector.
    pub const RECIPE_ORDER: [ActivityLevel; 3] = [
        ActivityLevel::Light,
        ActivityLevel::Moderate,
        ActivityLevel::Vigorous,
    ];

    /// Slot of this level in a `[light, moderate, vigorous]` vector.
    /// Sedentary minutes never enter recipe math.
    pub fn recipe_slot(self) -> Option<usize> {
        match self {
            ActivityLevel::Sedentary => None,
            ActivityLevel::Light => Some(0),
            ActivityLevel::Moderate => Some(1),
            ActivityLevel::Vigorous => Some(2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityLevel::Sedentary => "sedentary",
            ActivityLevel::Light => "light",
            ActivityLevel::Moderate => "moderate",
            ActivityLevel::Vigorous => "vigorous",
        }
    }
}

impl fmt::Display for ActivityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivityLevel {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sedentary" => Ok(ActivityLevel::Sedentary),
            "light" => Ok(ActivityLevel::Light),
            "moderate" => Ok(ActivityLevel::Moderate),
            "vigorous" => Ok(ActivityLevel::Vigorous),
            _ => Err(CoreError::UnknownActivityLevel(s.to_string())),
        }
    }
}

/// Device annotation of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntervalType {
    #[serde(rename = "ACTIVE")]
    Active,
    #[serde(rename = "REST")]
    Rest,
    #[serde(rename = "REST-S", alias = "REST_S")]
    RestS,
    #[serde(rename = "EXCLUDED")]
    Excluded,
}

impl IntervalType {
    /// Rank used when two epochs collapse into one minute; higher wins.
    pub fn precedence(self) -> u8 {
        match self {
            IntervalType::Active => 0,
            IntervalType::Rest => 1,
            IntervalType::RestS => 2,
            IntervalType::Excluded => 3,
        }
    }

    pub fn is_in_bed(self) -> bool {
        matches!(self, IntervalType::Rest | IntervalType::RestS)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IntervalType::Active => "ACTIVE",
            IntervalType::Rest => "REST",
            IntervalType::RestS => "REST-S",
            IntervalType::Excluded => "EXCLUDED",
        }
    }
}

impl fmt::Display for IntervalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IntervalType {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ACTIVE" => Ok(IntervalType::Active),
            "REST" => Ok(IntervalType::Rest),
            "REST-S" | "REST_S" => Ok(IntervalType::RestS),
            "EXCLUDED" => Ok(IntervalType::Excluded),
            _ => Err(CoreError::UnknownIntervalType(s.to_string())),
        }
    }
}

/// Minutes since the cohort epoch, at half-minute resolution.
///
/// Stored as a count of half minutes so ordering and equality are exact;
/// serialized as a (possibly fractional) number of minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(u64);

impl Timestamp {
    pub fn from_half_minutes(half_minutes: u64) -> Self {
        Timestamp(half_minutes)
    }

    pub fn from_day_epoch(day_index: u32, epoch_index: u32) -> Self {
        Timestamp(day_index as u64 * EPOCHS_PER_DAY as u64 + epoch_index as u64)
    }

    pub fn half_minutes(self) -> u64 {
        self.0
    }

    pub fn minutes(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub fn day_index(self) -> u32 {
        (self.0 / EPOCHS_PER_DAY as u64) as u32
    }

    pub fn epoch_index(self) -> u32 {
        (self.0 % EPOCHS_PER_DAY as u64) as u32
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.minutes())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let minutes = f64::deserialize(deserializer)?;
        let half = minutes * 2.0;
        if !(half.is_finite() && half >= 0.0 && half.fract() == 0.0) {
            return Err(serde::de::Error::custom(CoreError::BadTimestamp(minutes)));
        }
        Ok(Timestamp(half as u64))
    }
}

/// One 30-second device epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub subject_id: String,
    pub timestamp: Timestamp,
    pub activity_count: u32,
    pub interval_type: IntervalType,
    pub wake: bool,
}

impl EpochRecord {
    pub fn day_index(&self) -> u32 {
        self.timestamp.day_index()
    }

    pub fn epoch_index(&self) -> u32 {
        self.timestamp.epoch_index()
    }
}

/// One subject-day of minute-level counts plus per-minute annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActigraphyDay {
    pub subject_id: String,
    pub day_index: u32,
    /// 0 = Monday .. 6 = Sunday.
    pub day_of_week: u8,
    pub counts: Vec<f64>,
    pub interval: Vec<IntervalType>,
    pub wake: Vec<bool>,
}

impl ActigraphyDay {
    pub fn is_weekend(&self) -> bool {
        self.day_of_week >= 5
    }
}

/// A single broken invariant found by [`validate_day`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Check every [`ActigraphyDay`] invariant, reporting rather than failing.
pub fn validate_day(day: &ActigraphyDay) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: String, message: String| out.push(Violation { field, message });

    if day.day_of_week > 6 {
        push(
            "day_of_week".into(),
            format!("day_of_week {} > 6", day.day_of_week),
        );
    }
    for (name, len) in [
        ("counts", day.counts.len()),
        ("interval", day.interval.len()),
        ("wake", day.wake.len()),
    ] {
        if len != MINUTES_PER_DAY {
            push(format!("{name}.length"), format!("{name}.length"));
        }
    }
    for (i, &c) in day.counts.iter().enumerate() {
        if !c.is_finite() {
            push(format!("counts[{i}]"), format!("counts[{i}] is not finite"));
        } else if c < 0.0 {
            push(format!("counts[{i}]"), format!("counts[{i}] < 0"));
        }
    }
    out
}

/// Minutes per activity level inside `[window_start, window_end)`, in
/// `[light, moderate, vigorous]` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub subject_id: String,
    pub day_index: u32,
    pub window_start: u32,
    pub window_end: u32,
    pub minutes: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SleepQuality {
    Good,
    Poor,
}

impl SleepQuality {
    /// Good iff `efficiency` is strictly above `threshold`.
    pub fn from_efficiency(efficiency: f64, threshold: f64) -> Self {
        if efficiency > threshold {
            SleepQuality::Good
        } else {
            SleepQuality::Poor
        }
    }
}

/// One night in bed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepRecord {
    pub subject_id: String,
    pub day_index: u32,
    pub minutes_in_bed: f64,
    pub minutes_asleep: f64,
    pub minutes_awake_in_bed: f64,
    pub efficiency: f64,
    pub quality: SleepQuality,
}

impl SleepRecord {
    /// Builds a record from time in bed and time awake in bed.
    ///
    /// Efficiency is `1 - awake / in_bed`; a night with no time in bed has
    /// efficiency 0 and is Poor.
    pub fn from_bed_minutes(
        subject_id: impl Into<String>,
        day_index: u32,
        minutes_in_bed: f64,
        minutes_awake_in_bed: f64,
    ) -> Result<Self, CoreError> {
        let valid = minutes_in_bed.is_finite()
            && minutes_awake_in_bed.is_finite()
            && minutes_in_bed >= 0.0
            && minutes_awake_in_bed >= 0.0
            && minutes_awake_in_bed <= minutes_in_bed;
        if !valid {
            return Err(CoreError::InvalidSleepMinutes {
                in_bed: minutes_in_bed,
                awake: minutes_awake_in_bed,
            });
        }
        let efficiency = if minutes_in_bed > 0.0 {
            1.0 - minutes_awake_in_bed / minutes_in_bed
        } else {
            0.0
        };
        Ok(SleepRecord {
            subject_id: subject_id.into(),
            day_index,
            minutes_in_bed,
            minutes_asleep: minutes_in_bed - minutes_awake_in_bed,
            minutes_awake_in_bed,
            efficiency,
            quality: SleepQuality::from_efficiency(efficiency, GOOD_SLEEP_EFFICIENCY),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Other,
}

impl Gender {
    /// Numeric code used when a constraint rule compares on gender.
    pub fn code(self) -> f64 {
        match self {
            Gender::Female => 0.0,
            Gender::Male => 1.0,
            Gender::Other => 2.0,
        }
    }
}

impl FromStr for Gender {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Gender::Female),
            "m" | "male" => Ok(Gender::Male),
            "o" | "other" => Ok(Gender::Other),
            _ => Err(CoreError::UnknownGender(s.to_string())),
        }
    }
}

/// Lifestyle profile of a subject. `None` marks an absent value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetadata {
    pub subject_id: String,
    pub age: Option<f64>,
    pub gender: Option<Gender>,
    pub bmi: Option<f64>,
    pub resting_hr: Option<f64>,
    #[serde(default)]
    pub extensions: BTreeMap<String, Option<f64>>,
}

impl SubjectMetadata {
    pub fn empty(subject_id: impl Into<String>) -> Self {
        SubjectMetadata {
            subject_id: subject_id.into(),
            age: None,
            gender: None,
            bmi: None,
            resting_hr: None,
            extensions: BTreeMap::new(),
        }
    }

    /// Numeric value of a named field; `Ok(None)` when the field exists but
    /// is absent for this subject.
    pub fn field(&self, name: &str) -> Result<Option<f64>, CoreError> {
        match name {
            "age" => Ok(self.age),
            "gender" => Ok(self.gender.map(Gender::code)),
            "bmi" => Ok(self.bmi),
            "resting_hr" => Ok(self.resting_hr),
            other => self
                .extensions
                .get(other)
                .copied()
                .ok_or_else(|| CoreError::UnknownMetadataField(other.to_string())),
        }
    }

    /// Fields present in `overrides` replace ours.
    pub fn overridden_by(&self, overrides: &MetadataOverrides) -> SubjectMetadata {
        let mut out = self.clone();
        if let Some(v) = overrides.age {
            out.age = Some(v);
        }
        if let Some(g) = overrides.gender {
            out.gender = Some(g);
        }
        if let Some(v) = overrides.bmi {
            out.bmi = Some(v);
        }
        if let Some(v) = overrides.resting_hr {
            out.resting_hr = Some(v);
        }
        for (k, v) in &overrides.extensions {
            out.extensions.insert(k.clone(), Some(*v));
        }
        out
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, value) in [
            ("age", self.age),
            ("bmi", self.bmi),
            ("resting_hr", self.resting_hr),
        ] {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    out.push(Violation {
                        field: name.into(),
                        message: format!("{name} must be > 0, got {v}"),
                    });
                }
            }
        }
        out
    }
}

/// Partial metadata supplied with a recommendation request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetadataOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bmi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resting_hr: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extensions: BTreeMap<String, f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_day() -> ActigraphyDay {
        ActigraphyDay {
            subject_id: "s".into(),
            day_index: 0,
            day_of_week: 0,
            counts: vec![0.0; MINUTES_PER_DAY],
            interval: vec![IntervalType::Active; MINUTES_PER_DAY],
            wake: vec![false; MINUTES_PER_DAY],
        }
    }

    #[test]
    fn well_formed_day_has_no_violations() {
        assert!(validate_day(&zero_day()).is_empty());
    }

    #[test]
    fn short_counts_vector_reported() {
        let mut day = zero_day();
        day.counts.pop();
        let report = validate_day(&day);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].to_string(), "counts.length");
    }

    #[test]
    fn negative_count_reported_with_index() {
        let mut day = zero_day();
        day.counts[7] = -3.0;
        let report = validate_day(&day);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].to_string(), "counts[7] < 0");
        assert_eq!(report[0].field, "counts[7]");
    }

    #[test]
    fn zero_bed_time_is_poor() {
        let rec = SleepRecord::from_bed_minutes("s", 0, 0.0, 0.0).unwrap();
        assert_eq!(rec.efficiency, 0.0);
        assert_eq!(rec.quality, SleepQuality::Poor);
    }

    #[test]
    fn awake_exceeding_bed_is_rejected() {
        assert!(SleepRecord::from_bed_minutes("s", 0, 10.0, 11.0).is_err());
    }

    #[test]
    fn interval_type_parses_both_spellings() {
        assert_eq!(
            "REST-S".parse::<IntervalType>().unwrap(),
            IntervalType::RestS
        );
        assert_eq!(
            "REST_S".parse::<IntervalType>().unwrap(),
            IntervalType::RestS
        );
        assert!("RESTX".parse::<IntervalType>().is_err());
    }

    #[test]
    fn metadata_field_lookup() {
        let mut meta = SubjectMetadata::empty("s");
        meta.resting_hr = Some(90.0);
        meta.extensions.insert("vo2max".into(), None);
        assert_eq!(meta.field("resting_hr").unwrap(), Some(90.0));
        assert_eq!(meta.field("age").unwrap(), None);
        assert_eq!(meta.field("vo2max").unwrap(), None);
        assert!(matches!(
            meta.field("shoe_size"),
            Err(CoreError::UnknownMetadataField(_))
        ));
    }

    proptest! {
        #[test]
        fn sleep_record_efficiency_identity(in_bed in 0.5f64..900.0, frac in 0.0f64..=1.0) {
            let awake = in_bed * frac;
            let rec = SleepRecord::from_bed_minutes("s", 3, in_bed, awake).unwrap();
            prop_assert!((rec.minutes_asleep + rec.minutes_awake_in_bed - rec.minutes_in_bed).abs() <= 1e-9);
            prop_assert!((rec.efficiency - (1.0 - awake / in_bed)).abs() <= 1e-12);
            prop_assert!((rec.efficiency - rec.minutes_asleep / rec.minutes_in_bed).abs() <= 1e-9);
            prop_assert_eq!(rec.quality == SleepQuality::Good, rec.efficiency > 0.90);
        }

        #[test]
        fn core_types_round_trip_through_json(
            counts in proptest::collection::vec(0.0f64..1e6, MINUTES_PER_DAY),
            dow in 0u8..7,
            day in 0u32..10_000,
            minutes in proptest::array::uniform3(0.0f64..1440.0),
            half in 0u64..10_000_000,
            in_bed in 1.0f64..900.0,
            frac in 0.0f64..=1.0,
        ) {
            let d = ActigraphyDay {
                subject_id: "S001".into(),
                day_index: day,
                day_of_week: dow,
                interval: (0..MINUTES_PER_DAY).map(|i| match i % 4 {
                    0 => IntervalType::Active,
                    1 => IntervalType::Rest,
                    2 => IntervalType::RestS,
                    _ => IntervalType::Excluded,
                }).collect(),
                wake: (0..MINUTES_PER_DAY).map(|i| i % 3 == 0).collect(),
                counts,
            };
            let back: ActigraphyDay = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
            prop_assert_eq!(back, d);

            let s = LevelSummary { subject_id: "S".into(), day_index: day, window_start: 0, window_end: 1440, minutes };
            let back: LevelSummary = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
            prop_assert_eq!(back, s);

            let e = EpochRecord {
                subject_id: "S".into(),
                timestamp: Timestamp::from_half_minutes(half),
                activity_count: (half % 9000) as u32,
                interval_type: IntervalType::RestS,
                wake: half % 2 == 0,
            };
            let back: EpochRecord = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
            prop_assert_eq!(back, e);

            let r = SleepRecord::from_bed_minutes("S", day, in_bed, in_bed * frac).unwrap();
            let back: SleepRecord = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            prop_assert_eq!(back, r);
        }
    }
}
