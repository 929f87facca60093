//! The end-to-end pipeline: data, model, evaluation, verification, audit,
//! evidence binding and case status.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use aps_core::audit::{AuditContext, DesignSpec};
use aps_core::dataset::DEFAULT_RMSE_THRESHOLD;
use aps_core::gsn::{builtin_template, Artifact, CaseStatus, Pass, Profile};
use aps_core::nn::TrainingConfig;
use aps_core::simulator::SimConfig;
use aps_core::verifier::VerifierConfig;
use serde::{Deserialize, Serialize};

use crate::error::{read_json, to_json, write_text, CliError, Result, Status};
use crate::{case, data, model, verify};

/// A value given inline or as a path to a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: serde::de::DeserializeOwned + Clone> Source<T> {
    fn resolve(&self, base: &Path) -> Result<T> {
        match self {
            Source::Path(p) => read_json(&base.join(p)),
            Source::Inline(v) => Ok(v.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateStage {
    pub patients: usize,
    pub days: u32,
    pub seed: u64,
    pub cgm_noise_sd: f64,
}

impl Default for SimulateStage {
    fn default() -> Self {
        Self {
            patients: 30,
            days: 40,
            seed: 1,
            cgm_noise_sd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationStage {
    #[serde(default = "default_grid")]
    pub grid: String,
    pub epochs: Option<usize>,
}

fn default_grid() -> String {
    model::DEFAULT_GRID.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualEvidence {
    pub pass: Pass,
    pub summary: String,
}

/// Pipeline description. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Where every artifact is written.
    pub out_dir: PathBuf,
    /// Existing cohort directory; simulated into `out_dir/cohort` when absent.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub simulate: SimulateStage,
    /// Existing model file; trained into `out_dir/model.json` when absent.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub training: Option<TrainingConfig>,
    #[serde(default)]
    pub split: model::SplitConfig,
    #[serde(default = "default_threshold")]
    pub rmse_threshold: f64,
    #[serde(default)]
    pub ablation: Option<AblationStage>,
    /// Thresholds file for the template suite; the reference queries when absent.
    #[serde(default)]
    pub thresholds: Option<PathBuf>,
    #[serde(default)]
    pub verifier: VerifierConfig,
    pub context: Source<AuditContext>,
    pub design: Source<DesignSpec>,
    /// Case file to start from; the built-in template when absent.
    #[serde(default)]
    pub case: Option<PathBuf>,
    #[serde(default)]
    pub profile: Option<Source<Profile>>,
    /// Solution id to manually reviewed evidence.
    #[serde(default)]
    pub manual: BTreeMap<String, ManualEvidence>,
}

fn default_threshold() -> f64 {
    DEFAULT_RMSE_THRESHOLD
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Status of the finished case and where it was written.
#[derive(Debug)]
pub struct AssureOutcome {
    pub status: CaseStatus,
    pub case_file: PathBuf,
    pub report: String,
}

impl AssureOutcome {
    pub fn exit_status(&self) -> Status {
        Status::from_pass(case::root_acceptable(&self.status))
    }
}

fn log(msg: &str) {
    eprintln!("[assure] {msg}");
}

/// Solution id for an ML-RQ1.x verdict.
fn verdict_solution(property_id: &str) -> Option<String> {
    property_id.strip_prefix("ML-RQ1.").map(|n| format!("Sn-RQ1.{n}"))
}

pub fn run(config_path: &Path) -> Result<AssureOutcome> {
    let cfg = PipelineConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out = base.join(&cfg.out_dir);
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;

    // resolve every input before the slow stages
    let ctx = cfg.context.resolve(&base)?;
    ctx.validate().map_err(CliError::usage)?;
    let design = cfg.design.resolve(&base)?;
    design.validate().map_err(CliError::usage)?;
    let profile = cfg.profile.as_ref().map(|p| p.resolve(&base)).transpose()?;
    let mut case = match &cfg.case {
        Some(p) => case::load(&base.join(p))?,
        None => builtin_template(),
    };
    let model_path = cfg.model.as_ref().map(|p| base.join(p));
    if let Some(p) = &model_path {
        if !p.is_file() {
            return Err(CliError::io(p, "model file not found"));
        }
    }
    let items = match &cfg.thresholds {
        Some(p) => verify::ThresholdsFile::load(&base.join(p))?.items()?,
        None => verify::reference_items(),
    };
    cfg.verifier.validate().map_err(CliError::usage)?;

    let traces = match &cfg.data {
        Some(d) => data::load_cohort(&base.join(d))?,
        None => {
            let sim = SimConfig {
                days: cfg.simulate.days,
                seed: cfg.simulate.seed,
                cgm_noise_sd: cfg.simulate.cgm_noise_sd,
                ..SimConfig::default()
            };
            let s = data::simulate(cfg.simulate.patients, &sim, &out.join("cohort"))?;
            log(&format!("simulated {} accepted, {} rejected", s.traces.len(), s.rejected()));
            s.traces
        }
    };
    let (train_set, test_set) = model::split_cohort(&traces, cfg.split)?;
    let training = cfg.training.clone().unwrap_or_default();
    let net = match &model_path {
        Some(p) => model::load(p)?,
        None => {
            let (net, hist) = model::fit(&train_set, &training)?;
            model::save(&net, &hist, &out.join("model.json"))?;
            log("trained model.json");
            net
        }
    };

    let rmse = model::evaluate(&net, &test_set, cfg.rmse_threshold)?;
    let rmse_file = out.join("rmse.json");
    write_text(&rmse_file, &to_json(&rmse))?;
    log(&format!("test RMSE {:.3} mg/dL (threshold {})", rmse.value, rmse.threshold));
    case = case::bind(&case, "Sn-RQ1", Artifact::from_rmse(&rmse, &rmse_file.display().to_string()))?;

    if let Some(ab) = &cfg.ablation {
        let grid = model::parse_grid(&ab.grid)?;
        let base_cfg = TrainingConfig {
            epochs: ab.epochs.unwrap_or(training.epochs),
            ..training.clone()
        };
        let result = model::ablate(&train_set, &test_set, &grid, &base_cfg, cfg.rmse_threshold)?;
        write_text(&out.join("ablation.csv"), &result.to_csv())?;
        let file = out.join("ablation.json");
        let text = to_json(&result);
        write_text(&file, &text)?;
        case = case::bind(&case, "Sn-L1", Artifact::from_json(&text, &file.display().to_string()).map_err(CliError::usage)?)?;
        log("hidden-size sweep done");
    }

    let vdir = out.join("verification");
    let (report, verdicts) = verify::run_suite(&net, &items, &cfg.verifier, &vdir)?;
    let mut per_solution: BTreeMap<String, Vec<Artifact>> = BTreeMap::new();
    for (row, v) in report.rows.iter().zip(&verdicts) {
        if let Some(sn) = verdict_solution(&v.property_id) {
            per_solution.entry(sn).or_default().push(Artifact::from_verdict(v, &vdir.join(&row.verdict_file).display().to_string()));
        }
    }
    for (sn, parts) in &per_solution {
        if let Some(a) = case::combine(parts) {
            case = case::bind(&case, sn, a)?;
        }
    }
    log(&format!("verified {} properties, {} counterexamples", report.rows.len(), report.counterexamples()));

    let audit = data::run_audit(&traces, &ctx, &design)?;
    let audit_file = out.join("audit.json");
    write_text(&audit_file, &data::render(&audit, true))?;
    case = case::bind(&case, "Sn-G5-2", Artifact::from_audit(&audit, &audit_file.display().to_string()))?;

    for (sn, m) in &cfg.manual {
        case = case::bind(&case, sn, Artifact::manual(m.pass, &m.summary))?;
    }
    if let Some(p) = &profile {
        case = case.instantiate(p).map_err(CliError::usage)?;
    }
    let status = case.evaluate_status();
    let case_file = out.join("case.toml");
    case::save(&case, &case_file)?;
    write_text(&out.join("status.json"), &case::status_json(&case, &status))?;
    write_text(&out.join("case.dot"), &case.export_dot())?;
    let report = case::status_text(&case, &status);
    write_text(&out.join("status.txt"), &report)?;
    Ok(AssureOutcome { status, case_file, report })
}
