//! `aps-assure`: runs the glucose-predictor assurance pipeline step by step or
//! end to end. Every step reads and writes plain files; JSON carries evidence
//! between steps.
//!
//! Exit codes: 0 success, 1 the step ran but its evidence is negative (RMSE
//! over threshold, a counterexample, a violated data requirement, a
//! contradicted root goal), 2 bad usage or an unreadable/unwritable file.

/// `print!` that ignores a closed stdout, e.g. when piped into `head`.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

/// `println!` counterpart of [`out!`].
macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

pub mod assure;
pub mod case;
pub mod data;
pub mod error;
pub mod model;
pub mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use aps_core::gsn::{builtin_template, GoalStatus, Profile};
use aps_core::nn::TrainingConfig;
use aps_core::simulator::SimConfig;
use aps_core::verifier::suite::{soundness_suite, SuiteConfig};
use aps_core::verifier::VerifierConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, Status};
use error::{emit, read_json, to_json, write_text, Result};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "APS_ASSURE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "aps-assure", version, about = "Assurance pipeline for an ML blood-glucose predictor")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a virtual patient cohort into per-patient CSV traces.
    Simulate(SimulateArgs),
    /// Train a predictor on the training side of a cohort split.
    Train(TrainArgs),
    /// Train one predictor per hidden-layer configuration and tabulate test RMSE.
    Ablate(AblateArgs),
    /// Compute pooled test RMSE evidence for a model.
    Evaluate(EvaluateArgs),
    /// Verify one property file against a model.
    Verify(VerifyArgs),
    /// Verify a set of properties, or run the randomized soundness suite.
    VerifySuite(VerifySuiteArgs),
    /// Audit a cohort against the data requirements.
    Audit(AuditArgs),
    /// Create, instantiate, bind, evaluate and render assurance cases.
    #[command(subcommand)]
    Case(CaseCommand),
    /// Run the whole pipeline from a config file and report the case status.
    Assure(AssureArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 30)]
    pub patients: usize,
    #[arg(long, default_value_t = 40, value_parser = clap::value_parser!(u32).range(1..))]
    pub days: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Standard deviation of Gaussian CGM noise, mg/dL.
    #[arg(long, default_value_t = 0.0)]
    pub cgm_noise_sd: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Share of windows used for training.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

impl SplitArgs {
    fn config(&self) -> model::SplitConfig {
        model::SplitConfig {
            train_fraction: self.train_fraction,
            seed: self.split_seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainingArgs {
    fn config(&self, hidden: Vec<usize>) -> TrainingConfig {
        TrainingConfig {
            hidden,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            ..TrainingConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Cohort directory written by `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Hidden layer widths.
    #[arg(long, default_value = "8,8")]
    pub hidden: String,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Model file; the loss history goes next to it as `<stem>.loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated hidden configurations, layers joined by `x`.
    #[arg(long, default_value = model::DEFAULT_GRID)]
    pub hidden_grid: String,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 12.0)]
    pub threshold: f64,
    /// CSV with one `h1,h2,rmse` row per configuration.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the sweep as bindable JSON evidence.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Pass iff RMSE is strictly below this, mg/dL.
    #[arg(long, default_value_t = 12.0)]
    pub threshold: f64,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Evaluate on every window instead of the test side of the split.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifierArgs {
    /// Per-property timeout in seconds.
    #[arg(long, default_value_t = 300.0)]
    pub timeout: f64,
    #[arg(long)]
    pub max_subproblems: Option<u64>,
    #[arg(long)]
    pub falsify_samples: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Full verifier config as JSON; the flags above override it.
    #[arg(long)]
    pub verifier_config: Option<PathBuf>,
}

impl VerifierArgs {
    fn config(&self) -> Result<VerifierConfig> {
        let mut c: VerifierConfig = match &self.verifier_config {
            Some(p) => read_json(p)?,
            None => VerifierConfig::default(),
        };
        c.timeout_secs = self.timeout;
        c.seed = self.seed;
        if let Some(m) = self.max_subproblems {
            c.max_subproblems = m;
        }
        if let Some(f) = self.falsify_samples {
            c.falsify_samples = f;
        }
        c.validate().map_err(CliError::usage)?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Property in the property language.
    #[arg(long)]
    pub property: PathBuf,
    #[command(flatten)]
    pub verifier: VerifierArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifySuiteArgs {
    /// Model to verify; not needed with --soundness.
    #[arg(long, required_unless_present = "soundness")]
    pub model: Option<PathBuf>,
    /// JSON with `thresholds`, per-channel `box` and optional `templates`.
    #[arg(long, conflicts_with = "properties")]
    pub thresholds: Option<PathBuf>,
    /// Directory of `.prop` files.
    #[arg(long)]
    pub properties: Option<PathBuf>,
    /// Cross-check the verifier against the exact oracle on random networks.
    #[arg(long, conflicts_with_all = ["thresholds", "properties"])]
    pub soundness: bool,
    /// Soundness suite size.
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
    #[command(flatten)]
    pub verifier: VerifierArgs,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TextOrJson {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Data context JSON: origin, sensor, population, exercise, illness.
    #[arg(long)]
    pub context: PathBuf,
    /// Design specification JSON.
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long, value_enum, default_value_t = TextOrJson::Json)]
    pub format: TextOrJson,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RenderFormat {
    Dot,
    Toml,
    Structure,
}

#[derive(Debug, Subcommand)]
pub enum CaseCommand {
    /// Write the built-in template.
    Init {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fill the template parameters from a profile JSON.
    Instantiate {
        #[arg(long)]
        case: PathBuf,
        /// `{"mode": "Population"|"Patient", "values": {...}}`
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bind an evidence JSON to a solution node.
    Bind {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        solution: String,
        #[arg(long)]
        evidence: PathBuf,
        /// Defaults to rewriting the case in place.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate goal statuses; exits 1 when the root is contradicted.
    Status {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, value_enum, default_value_t = TextOrJson::Text)]
        format: TextOrJson,
    },
    /// Export the case graph.
    Render {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, value_enum, default_value_t = RenderFormat::Dot)]
        format: RenderFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct AssureArgs {
    /// Pipeline config JSON.
    #[arg(long)]
    pub config: PathBuf,
}

/// Sets up the global thread pool from `APS_ASSURE_THREADS`.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<Status> {
    init_threads()?;
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Ablate(a) => ablate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Verify(a) => verify_one(a),
        Command::VerifySuite(a) => verify_suite(a),
        Command::Audit(a) => audit(a),
        Command::Case(c) => case_cmd(c),
        Command::Assure(a) => {
            let o = assure::run(&a.config)?;
            out!("{}", o.report);
            outln!("case written to {}", o.case_file.display());
            Ok(o.exit_status())
        }
    }
}

pub fn exit_code(r: &Result<Status>) -> ExitCode {
    match r {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Failed) => ExitCode::from(1),
        Err(_) => ExitCode::from(2),
    }
}

fn simulate(a: SimulateArgs) -> Result<Status> {
    let cfg = SimConfig {
        days: a.days,
        seed: a.seed,
        cgm_noise_sd: a.cgm_noise_sd,
        ..SimConfig::default()
    };
    let s = data::simulate(a.patients, &cfg, &a.out)?;
    outln!("accepted {} rejected {}", s.traces.len(), s.rejected());
    for e in s.manifest.patients.iter().filter(|e| !e.accepted) {
        outln!("rejected {}: {}", e.params.id, e.reject_reason.as_deref().unwrap_or(""));
    }
    Ok(Status::Ok)
}

fn train(a: TrainArgs) -> Result<Status> {
    let traces = data::load_cohort(&a.data)?;
    let (train_set, test_set) = model::split_cohort(&traces, a.split.config())?;
    let cfg = a.training.config(model::parse_hidden(&a.hidden)?);
    let (net, hist) = model::fit(&train_set, &cfg)?;
    model::save(&net, &hist, &a.out)?;
    let value = aps_core::dataset::rmse(&net, &test_set).map_err(CliError::usage)?;
    outln!("trained {:?} on {} windows; test RMSE {value:.3} mg/dL", net.dims(), train_set.len());
    Ok(Status::Ok)
}

fn ablate(a: AblateArgs) -> Result<Status> {
    let traces = data::load_cohort(&a.data)?;
    let (train_set, test_set) = model::split_cohort(&traces, a.split.config())?;
    let grid = model::parse_grid(&a.hidden_grid)?;
    let base = a.training.config(vec![8, 8]);
    let result = model::ablate(&train_set, &test_set, &grid, &base, a.threshold)?;
    let csv = result.to_csv();
    write_text(&a.out, &csv)?;
    if let Some(j) = &a.json {
        write_text(j, &to_json(&result))?;
    }
    out!("{csv}");
    Ok(Status::from_pass(result.pass))
}

fn evaluate(a: EvaluateArgs) -> Result<Status> {
    let net = model::load(&a.model)?;
    let traces = data::load_cohort(&a.data)?;
    let test = if a.all {
        aps_core::dataset::Dataset::from_traces(&traces)
    } else {
        model::split_cohort(&traces, a.split.config())?.1
    };
    let ev = model::evaluate(&net, &test, a.threshold)?;
    emit(a.out.as_deref(), &to_json(&ev))?;
    if a.out.is_some() {
        outln!("RMSE {:.3} mg/dL, threshold {}, {}", ev.value, ev.threshold, if ev.pass { "pass" } else { "fail" });
    }
    Ok(Status::from_pass(ev.pass))
}

fn verify_one(a: VerifyArgs) -> Result<Status> {
    let net = model::load(&a.model)?;
    let prop = verify::load_property(&a.property)?;
    let v = verify::run(&net, &prop, &a.verifier.config()?)?;
    emit(a.out.as_deref(), &to_json(&v))?;
    if a.out.is_some() {
        outln!("{} {}", v.property_id, v.outcome.label());
    }
    Ok(Status::from_pass(!matches!(v.outcome, aps_core::verifier::Outcome::Counterexample(_))))
}

fn verify_suite(a: VerifySuiteArgs) -> Result<Status> {
    let vcfg = a.verifier.config()?;
    if a.soundness {
        let report = soundness_suite(&SuiteConfig {
            cases: a.cases,
            seed: a.verifier.seed,
            verifier: vcfg,
            ..SuiteConfig::default()
        })
        .map_err(CliError::usage)?;
        write_text(&a.out.join("soundness.json"), &to_json(&report))?;
        outln!(
            "{} cases: {} disagreements, {} counterexamples ({} invalid), {} unknown, {:.1}s",
            report.cases.len(),
            report.disagreements,
            report.counterexamples,
            report.invalid_witnesses,
            report.verify_unknown,
            report.wall_time
        );
        return Ok(Status::from_pass(report.disagreements == 0 && report.invalid_witnesses == 0));
    }
    let model_path = a.model.as_ref().expect("clap requires --model");
    let net = model::load(model_path)?;
    let items = match (&a.thresholds, &a.properties) {
        (Some(t), _) => verify::ThresholdsFile::load(t)?.items()?,
        (None, Some(d)) => verify::directory_items(d)?,
        (None, None) => verify::reference_items(),
    };
    let (report, _) = verify::run_suite(&net, &items, &vcfg, &a.out)?;
    out!("{}", report.to_text());
    Ok(Status::from_pass(report.counterexamples() == 0))
}

fn audit(a: AuditArgs) -> Result<Status> {
    let traces = data::load_cohort(&a.data)?;
    let ctx = data::load_context(&a.context)?;
    let design = data::load_design(&a.design)?;
    let report = data::run_audit(&traces, &ctx, &design)?;
    emit(a.out.as_deref(), &data::render(&report, matches!(a.format, TextOrJson::Json)))?;
    let violated = report.requirements.iter().any(|r| r.status == aps_core::audit::RequirementStatus::Violated);
    Ok(Status::from_pass(!violated))
}

fn case_cmd(c: CaseCommand) -> Result<Status> {
    match c {
        CaseCommand::Init { out } => {
            let t = builtin_template();
            match out {
                Some(p) => case::save(&t, &p)?,
                None => out!("{}", t.to_text().map_err(CliError::usage)?),
            }
        }
        CaseCommand::Instantiate { case, profile, out } => {
            let profile: Profile = read_json(&profile)?;
            let c = case::load(&case)?.instantiate(&profile).map_err(CliError::usage)?;
            case::save(&c, &out)?;
        }
        CaseCommand::Bind { case, solution, evidence, out } => {
            let c = case::load(&case)?;
            let art = case::load_artifact(&evidence)?;
            let bound = case::bind(&c, &solution, art)?;
            case::save(&bound, out.as_deref().unwrap_or(&case))?;
        }
        CaseCommand::Status { case, format } => {
            let c = case::load(&case)?;
            let s = c.evaluate_status();
            match format {
                TextOrJson::Text => out!("{}", case::status_text(&c, &s)),
                TextOrJson::Json => out!("{}", case::status_json(&c, &s)),
            }
            return Ok(Status::from_pass(s.root_status != GoalStatus::Contradicted));
        }
        CaseCommand::Render { case, format, out } => {
            let c = case::load(&case)?;
            let text = match format {
                RenderFormat::Dot => c.export_dot(),
                RenderFormat::Toml => c.to_text().map_err(CliError::usage)?,
                RenderFormat::Structure => c.structure().join("\n") + "\n",
            };
            emit(out.as_deref(), &text)?;
        }
    }
    Ok(Status::Ok)
}
