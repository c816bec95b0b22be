//! CSV exports of a fitted bundle for plotting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ingest::day_of_week;
use crate::modes::{day_of_week_purity, Domain};
use crate::pipeline::{ModelBundle, SubjectModel};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown subject {0}")]
    UnknownSubject(String),
    #[error("bundle has no subjects")]
    EmptyBundle,
    #[error("{0}")]
    Mode(#[from] crate::modes::ModeError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

const DAY_NAMES: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];

fn subject<'a>(bundle: &'a ModelBundle, id: &str) -> Result<&'a SubjectModel, ReportError> {
    bundle
        .subjects
        .get(id)
        .ok_or_else(|| ReportError::UnknownSubject(id.to_string()))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, ReportError> {
    let bytes = w
        .into_inner()
        .map_err(|e| ReportError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per minute (or per spectral value), one column per mode.
pub fn export_mode_centers(bundle: &ModelBundle, subject_id: &str) -> Result<String, ReportError> {
    let model = &subject(bundle, subject_id)?.modes;
    let mut w = csv::Writer::from_writer(Vec::new());
    let index = match model.domain {
        Domain::Time => "minute",
        Domain::Frequency => "component",
    };
    let mut header = vec![index.to_string()];
    header.extend((0..model.k).map(|m| format!("mode{m}")));
    w.write_record(&header)?;
    let len = model.centroids.first().map_or(0, Vec::len);
    for i in 0..len {
        let mut row = vec![i.to_string()];
        row.extend(model.centroids.iter().map(|c| c[i].to_string()));
        w.write_record(&row)?;
    }
    finish(w)
}

/// Day-of-week counts and purity for every mode of every subject.
pub fn export_composition(bundle: &ModelBundle) -> Result<String, ReportError> {
    if bundle.subjects.is_empty() {
        return Err(ReportError::EmptyBundle);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["subject_id", "mode"];
    header.extend(DAY_NAMES);
    header.push("purity");
    w.write_record(&header)?;
    for (id, s) in &bundle.subjects {
        let dow: BTreeMap<u32, u8> = s
            .modes
            .day_assignments
            .keys()
            .map(|&d| (d, day_of_week(d, bundle.config.first_day_of_week)))
            .collect();
        for p in day_of_week_purity(&s.modes, &dow)?.modes {
            let mut row = vec![id.clone(), p.mode.to_string()];
            row.extend(p.counts.iter().map(usize::to_string));
            row.push(p.purity.to_string());
            w.write_record(&row)?;
        }
    }
    finish(w)
}

/// Every recipe of one subject with its sleep outcome counts.
pub fn export_recipes(bundle: &ModelBundle, subject_id: &str) -> Result<String, ReportError> {
    let s = subject(bundle, subject_id)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "mode",
        "recipe_idx",
        "light",
        "moderate",
        "vigorous",
        "good",
        "poor",
    ])?;
    for (mode, recipes) in &s.recipes.modes {
        for (i, r) in recipes.iter().enumerate() {
            w.write_record([
                mode.to_string(),
                i.to_string(),
                r.center[0].to_string(),
                r.center[1].to_string(),
                r.center[2].to_string(),
                r.good_count.to_string(),
                r.poor_count.to_string(),
            ])?;
        }
    }
    finish(w)
}

/// Write `composition.csv` plus `centers_<id>.csv` and `recipes_<id>.csv` for each subject.
pub fn write_figures(bundle: &ModelBundle, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<(), ReportError> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    put("composition.csv".into(), export_composition(bundle)?)?;
    for id in bundle.subjects.keys() {
        put(
            format!("centers_{id}.csv"),
            export_mode_centers(bundle, id)?,
        )?;
        put(format!("recipes_{id}.csv"), export_recipes(bundle, id)?)?;
    }
    Ok(written)
}
