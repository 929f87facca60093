//! Cohort simulation, cohort loading and the dataset audit.

use std::path::Path;

use aps_core::audit::{audit, render_report, AuditContext, AuditReport, DesignSpec, ReportFormat};
use aps_core::simulator::{
    export_traces, import_trace, read_manifest, sample_cohort, simulate_cohort_member, trace_file_name, validate_trace, write_manifest,
    CohortManifest, ManifestEntry, PatientParams, SimConfig, SimTrace, TraceCheck,
};
use rayon::prelude::*;

use crate::error::{read_json, read_text, CliError, Result};

/// `n` patients drawn round-robin over the groups, in cohort order.
pub fn cohort_params(n: usize, seed: u64) -> Vec<PatientParams> {
    let per_group = n.div_ceil(3);
    let all = sample_cohort(per_group, seed);
    let mut picked: Vec<usize> = (0..per_group).flat_map(|k| (0..3).map(move |g| g * per_group + k)).take(n).collect();
    picked.sort_unstable();
    picked.into_iter().map(|i| all[i].clone()).collect()
}

#[derive(Debug)]
pub struct SimulationSummary {
    pub manifest: CohortManifest,
    pub traces: Vec<SimTrace>,
}

impl SimulationSummary {
    pub fn rejected(&self) -> usize {
        self.manifest.patients.len() - self.traces.len()
    }
}

/// Simulates `patients` cohort members in parallel and writes one CSV per
/// accepted trace plus the cohort manifest into `out`.
pub fn simulate(patients: usize, cfg: &SimConfig, out: &Path) -> Result<SimulationSummary> {
    if patients == 0 {
        return Err(CliError::usage("--patients must be at least 1"));
    }
    cfg.validate().map_err(CliError::usage)?;
    let params = cohort_params(patients, cfg.seed);
    let runs: Vec<_> = params
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let outcome = match simulate_cohort_member(p, cfg, i) {
                Ok(trace) => match validate_trace(&trace) {
                    TraceCheck::Accept => Ok(trace),
                    TraceCheck::Reject(why) => Err(why),
                },
                Err(e) => Err(e.to_string()),
            };
            (i, outcome)
        })
        .collect();
    let mut traces = Vec::new();
    let mut entries = Vec::new();
    for ((i, outcome), p) in runs.into_iter().zip(&params) {
        let seed = aps_core::simulator::patient_seed(cfg.seed, i);
        match outcome {
            Ok(trace) => {
                entries.push(ManifestEntry {
                    params: p.clone(),
                    seed,
                    file: Some(trace_file_name(&p.id)),
                    accepted: true,
                    reject_reason: None,
                });
                traces.push(trace);
            }
            Err(why) => entries.push(ManifestEntry {
                params: p.clone(),
                seed,
                file: None,
                accepted: false,
                reject_reason: Some(why),
            }),
        }
    }
    export_traces(&traces, out).map_err(|e| CliError::Io(e.to_string()))?;
    let manifest = CohortManifest {
        days: cfg.days,
        sample_period: cfg.sample_period,
        seed: cfg.seed,
        patients: entries,
    };
    write_manifest(&manifest, out).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(SimulationSummary { manifest, traces })
}

/// The accepted traces listed in the manifest of `dir`.
pub fn load_cohort(dir: &Path) -> Result<Vec<SimTrace>> {
    if !dir.is_dir() {
        return Err(CliError::io(dir, "data directory not found"));
    }
    let manifest = read_manifest(dir).map_err(|e| CliError::Io(e.to_string()))?;
    let traces = manifest
        .accepted()
        .filter_map(|e| e.file.as_ref())
        .map(|f| import_trace(dir.join(f)).map_err(|e| CliError::Io(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if traces.is_empty() {
        return Err(CliError::usage(format!("{}: the manifest lists no accepted traces", dir.display())));
    }
    Ok(traces)
}

pub fn load_context(path: &Path) -> Result<AuditContext> {
    let ctx: AuditContext = read_json(path)?;
    ctx.validate().map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok(ctx)
}

pub fn load_design(path: &Path) -> Result<DesignSpec> {
    DesignSpec::from_json(&read_text(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn run_audit(traces: &[SimTrace], ctx: &AuditContext, design: &DesignSpec) -> Result<AuditReport> {
    audit(traces, ctx, design).map_err(CliError::usage)
}

pub fn render(report: &AuditReport, json: bool) -> String {
    let mut s = render_report(report, if json { ReportFormat::Json } else { ReportFormat::Text });
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_over_groups() {
        let ids: Vec<String> = cohort_params(4, 1).into_iter().map(|p| p.id).collect();
        assert_eq!(ids, ["adolescent_001", "adolescent_002", "adult_001", "child_001"]);
        assert_eq!(cohort_params(30, 1).len(), 30);
        assert_eq!(cohort_params(30, 1), sample_cohort(10, 1));
    }
}
