//! `paris`: synthesize cohorts, fit model bundles, recommend, evaluate and serve.
//!
//! Exit codes: 0 ok, 1 empty result, 2 input error, 3 unknown entity, 4 domain error.

mod config;

use std::fs::File;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use paris::pipeline::{
    evaluate_cohort, recommendation_json, run_pipeline, EvalConfig, ModelBundle, PipelineError,
    RecommendRequest,
};
use paris::synth::{generate_cohort, CohortSpec};
use paris::types::{Gender, MetadataOverrides};
use paris_service::ServiceConfig;

use config::{load_rules, read_json, ConfigFlags};

#[derive(Debug)]
pub enum CliError {
    Empty(String),
    Input(String),
    Unknown(String),
    Domain(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Empty(_) => 1,
            CliError::Input(_) => 2,
            CliError::Unknown(_) => 3,
            CliError::Domain(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Empty(m)
            | CliError::Input(m)
            | CliError::Unknown(m)
            | CliError::Domain(m) => m,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "paris",
    version,
    about = "Activity recommendations for better sleep from actigraphy"
)]
struct Cli {
    /// Worker threads for fitting and evaluation (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Random seed for clustering or synthesis; echoed in reports
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort with planted modes, recipes and sleep
    Synth {
        /// Cohort spec JSON; omitted fields take their defaults
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory for epochs.csv, metadata.csv and ground_truth.json
        #[arg(long)]
        out: PathBuf,
        /// Override the number of subjects
        #[arg(long)]
        subjects: Option<usize>,
        /// Override the noise standard deviation (counts)
        #[arg(long)]
        noise_sd: Option<f64>,
    },
    /// Fit behavior modes and recipes for every subject
    Fit {
        /// Epoch CSV
        #[arg(long)]
        epochs: PathBuf,
        /// Metadata CSV
        #[arg(long)]
        metadata: Option<PathBuf>,
        /// Bundle file to write
        #[arg(long)]
        out: PathBuf,
        /// Run report as text (default: standard output)
        #[arg(long)]
        report: Option<PathBuf>,
        /// Run report as CSV
        #[arg(long)]
        report_csv: Option<PathBuf>,
        /// Directory for mode-center, composition and recipe CSVs
        #[arg(long)]
        figures_dir: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Recommend remaining activity for one subject from a partial day
    Recommend {
        /// Bundle file
        #[arg(long)]
        bundle: PathBuf,
        /// Subject id
        #[arg(long)]
        subject: String,
        /// Partial-day CSV with header minute,count and minutes 0, 1, ...
        #[arg(long)]
        partial: PathBuf,
        /// Current minute of the day (default: number of partial rows)
        #[arg(long)]
        t_m: Option<u32>,
        /// Minute the subject got up (default 0)
        #[arg(long)]
        wake_onset: Option<u32>,
        /// Constraint rules JSON (default: built-in rules)
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Include distances, probabilities and triggered rules
        #[arg(long)]
        explain: bool,
        /// Override age
        #[arg(long)]
        age: Option<f64>,
        /// Override gender (female, male or other)
        #[arg(long)]
        gender: Option<Gender>,
        /// Override body mass index
        #[arg(long)]
        bmi: Option<f64>,
        /// Override resting heart rate
        #[arg(long)]
        resting_hr: Option<f64>,
    },
    /// Replay each bundled day and score top recommendations by neighbor sleep
    Evaluate {
        /// Bundle file
        #[arg(long)]
        bundle: PathBuf,
        /// Epoch CSV the bundle was fitted on
        #[arg(long)]
        epochs: PathBuf,
        /// Neighbors consulted per recommendation
        #[arg(long)]
        n_neighbors: Option<usize>,
        /// Comma-separated minutes of day to evaluate at
        #[arg(long, value_delimiter = ',')]
        t_m: Option<Vec<u32>>,
        /// Constraint rules JSON
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Evaluation CSV (default: standard output)
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON settings file (its `evaluate` and `rules_path` sections apply)
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve the HTTP API over a bundle
    Serve {
        /// Bundle file
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Constraint rules JSON
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Static web UI directory served at /
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Token required by POST /api/v1/admin/reload
        #[arg(long)]
        admin_token: Option<String>,
        /// Allowed CORS origin, repeatable (default: any)
        #[arg(long)]
        cors_origin: Vec<String>,
    },
}

fn write_out(path: Option<&Path>, body: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, body)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(body.as_bytes())
            .map_err(|e| CliError::Input(format!("stdout: {e}"))),
    }
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("cannot read {what} {}: {e}", path.display())))
}

fn load_bundle(path: &Path) -> Result<ModelBundle, CliError> {
    ModelBundle::load(path)
        .map_err(|e| CliError::Input(format!("cannot load bundle {}: {e}", path.display())))
}

fn cmd_synth(
    spec: Option<PathBuf>,
    out: PathBuf,
    subjects: Option<usize>,
    noise_sd: Option<f64>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let mut spec: CohortSpec = match &spec {
        Some(p) => read_json(p, "spec")?,
        None => CohortSpec::default(),
    };
    if let Some(n) = subjects {
        spec.n_subjects = n;
    }
    if let Some(sd) = noise_sd {
        spec.noise_sd = sd;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let cohort = generate_cohort(&spec).map_err(|e| CliError::Input(e.to_string()))?;
    cohort
        .write_to_dir(&out)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", out.display())))?;
    let days: usize = cohort
        .ground_truth
        .subjects
        .iter()
        .map(|s| s.days.len())
        .sum();
    let epochs = cohort.epochs_csv.iter().filter(|&&b| b == b'\n').count() - 1;
    println!(
        "wrote {} subjects, {days} days, {epochs} epochs to {} (seed {})",
        cohort.ground_truth.subjects.len(),
        out.display(),
        spec.seed
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    epochs: PathBuf,
    metadata: Option<PathBuf>,
    out: PathBuf,
    report: Option<PathBuf>,
    report_csv: Option<PathBuf>,
    figures_dir: Option<PathBuf>,
    flags: ConfigFlags,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let cfg = flags.resolve(seed)?;
    let epochs = open(&epochs, "epochs")?;
    let meta_bytes = match &metadata {
        Some(p) => std::fs::read(p)
            .map_err(|e| CliError::Input(format!("cannot read metadata {}: {e}", p.display())))?,
        None => (paris::ingest::METADATA_HEADER.join(",") + "\n").into_bytes(),
    };
    let output = run_pipeline(epochs, meta_bytes.as_slice(), &cfg.pipeline)?;
    output.bundle.save(&out)?;
    write_out(report.as_deref(), &output.report.to_text())?;
    if let Some(p) = &report_csv {
        write_out(Some(p), &output.report.to_csv())?;
    }
    if output.report.fitted() == 0 {
        return Err(CliError::Empty("no subject could be fitted".into()));
    }
    if let Some(dir) = &figures_dir {
        paris::report::write_figures(&output.bundle, dir)
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    Ok(())
}

fn read_partial(path: &Path) -> Result<Vec<f64>, CliError> {
    let bad = |m: String| CliError::Input(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_reader(open(path, "partial day")?);
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != ["minute", "count"] {
        return Err(bad(format!(
            "header must be minute,count, got {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut counts = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let minute: usize = row[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("row {}: bad minute {:?}", i + 1, &row[0])))?;
        if minute != i {
            return Err(bad(format!(
                "row {}: expected minute {i}, got {minute}",
                i + 1
            )));
        }
        let count: f64 = row[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("row {}: bad count {:?}", i + 1, &row[1])))?;
        if !(count.is_finite() && count >= 0.0) {
            return Err(bad(format!("row {}: count must be finite and >= 0", i + 1)));
        }
        counts.push(count);
    }
    Ok(counts)
}

fn cmd_recommend(args: Command) -> Result<(), CliError> {
    let Command::Recommend {
        bundle,
        subject,
        partial,
        t_m,
        wake_onset,
        rules,
        explain,
        age,
        gender,
        bmi,
        resting_hr,
    } = args
    else {
        unreachable!()
    };
    let bundle = load_bundle(&bundle)?;
    let rules = load_rules(rules.as_deref(), None)?;
    let counts = read_partial(&partial)?;
    let overrides = MetadataOverrides {
        age,
        gender,
        bmi,
        resting_hr,
        ..Default::default()
    };
    let req = RecommendRequest {
        subject_id: subject,
        t_m: t_m.unwrap_or(counts.len() as u32),
        partial_counts: counts,
        metadata: (overrides != MetadataOverrides::default()).then_some(overrides),
        rules: None,
        wake_onset,
    };
    let mut rec = bundle.recommend(&req, &rules).map_err(|e| match e.code() {
        "UnknownSubject" => CliError::Unknown(e.to_string()),
        _ => CliError::Domain(format!("{}: {e}", e.code())),
    })?;
    if !explain {
        rec.explain = None;
    }
    write_out(None, &(recommendation_json(&rec) + "\n"))
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    bundle: PathBuf,
    epochs: PathBuf,
    n_neighbors: Option<usize>,
    t_m: Option<Vec<u32>>,
    rules: Option<PathBuf>,
    out: Option<PathBuf>,
    config: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = ConfigFlags {
        config,
        ..Default::default()
    }
    .resolve(None)?;
    let bundle = load_bundle(&bundle)?;
    let eval = EvalConfig {
        t_m_grid: t_m.unwrap_or(cfg.evaluate.t_m_grid.clone()),
        n_neighbors: n_neighbors.unwrap_or(cfg.evaluate.n_neighbors),
        rules: load_rules(rules.as_deref(), Some(&cfg))?,
    };
    if eval.n_neighbors == 0 {
        return Err(CliError::Input("--n-neighbors must be >= 1".into()));
    }
    let report = evaluate_cohort(&bundle, open(&epochs, "epochs")?, &eval)?;
    write_out(out.as_deref(), &report.to_csv())?;
    match report.cohort_mean {
        Some(mean) => {
            log::info!(
                "cohort mean success rate {mean:.4} over {} rows",
                report.evaluated
            );
            Ok(())
        }
        None => Err(CliError::Empty(
            "no recommendation could be evaluated".into(),
        )),
    }
}

fn cmd_serve(args: Command) -> Result<(), CliError> {
    let Command::Serve {
        bundle,
        port,
        host,
        rules,
        ui_dir,
        admin_token,
        cors_origin,
    } = args
    else {
        unreachable!()
    };
    if !bundle.is_file() {
        return Err(CliError::Input(format!(
            "bundle {} does not exist",
            bundle.display()
        )));
    }
    let ip = host
        .parse()
        .map_err(|_| CliError::Input(format!("bad --host {host:?}")))?;
    let config = ServiceConfig {
        bundle_path: Some(bundle),
        rules: load_rules(rules.as_deref(), None)?,
        admin_token,
        cors_origins: cors_origin,
        ui_dir,
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Input(e.to_string()))?;
    rt.block_on(paris_service::serve(SocketAddr::new(ip, port), config))
        .map_err(|e| CliError::Input(format!("server: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    match cli.command {
        Command::Synth {
            spec,
            out,
            subjects,
            noise_sd,
        } => cmd_synth(spec, out, subjects, noise_sd, cli.seed),
        Command::Fit {
            epochs,
            metadata,
            out,
            report,
            report_csv,
            figures_dir,
            flags,
        } => cmd_fit(
            epochs,
            metadata,
            out,
            report,
            report_csv,
            figures_dir,
            flags,
            cli.seed,
        ),
        c @ Command::Recommend { .. } => cmd_recommend(c),
        Command::Evaluate {
            bundle,
            epochs,
            n_neighbors,
            t_m,
            rules,
            out,
            config,
        } => cmd_evaluate(bundle, epochs, n_neighbors, t_m, rules, out, config),
        c @ Command::Serve { .. } => cmd_serve(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PARIS_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("paris: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
