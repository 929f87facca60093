//! Trace CSV files and the cohort manifest.
//!
//! ```text
//! # patient_id,group,weight_kg,seed
//! # adult_001,adult,72.5,1234
//! # sample_period_min,5
//! t_min,bg_mgdl,insulin_U,meal_g
//! 0,120,0.0125,0
//! ```
//!
//! Floats are written with shortest round-trip formatting.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PatientGroup, PatientParams, Result, SimError, SimTrace, TraceMeta, TraceRow};

pub const TRACE_HEADER: [&str; 4] = ["t_min", "bg_mgdl", "insulin_U", "meal_g"];

fn io_err(path: &Path, e: impl std::fmt::Display) -> SimError {
    SimError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn trace_file_name(patient_id: &str) -> String {
    format!("{patient_id}.csv")
}

pub fn trace_to_string(trace: &SimTrace) -> String {
    let m = &trace.meta;
    let mut out = format!(
        "# patient_id,group,weight_kg,seed\n# {},{},{},{}\n# sample_period_min,{}\n",
        m.patient_id, m.group, m.weight_kg, m.seed, trace.sample_period
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER).expect("in-memory write");
    for r in &trace.rows {
        w.write_record(&[r.t.to_string(), r.bg.to_string(), r.insulin.to_string(), r.meal.to_string()])
            .expect("in-memory write");
    }
    out.push_str(std::str::from_utf8(&w.into_inner().expect("in-memory flush")).expect("ascii csv"));
    out
}

/// Writes one CSV per trace into `dir` (created if missing) and returns the paths.
pub fn export_traces(traces: &[SimTrace], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut paths = Vec::with_capacity(traces.len());
    for t in traces {
        let path = dir.join(trace_file_name(&t.meta.patient_id));
        fs::write(&path, trace_to_string(t)).map_err(|e| io_err(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn import_trace(path: impl AsRef<Path>) -> Result<SimTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    trace_from_str(&text).map_err(|m| io_err(path, m))
}

pub fn trace_from_str(text: &str) -> std::result::Result<SimTrace, String> {
    let mut comments = Vec::new();
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        match line.strip_prefix('#') {
            Some(c) => comments.push(c.trim()),
            None => break,
        }
        body_start += line.len();
    }
    let mut meta = None;
    let mut sample_period = 5;
    let mut it = comments.iter();
    while let Some(line) = it.next() {
        if *line == "patient_id,group,weight_kg,seed" {
            let values = it.next().ok_or("metadata header without values")?;
            let f: Vec<&str> = values.split(',').collect();
            if f.len() != 4 {
                return Err(format!("metadata line has {} fields, expected 4", f.len()));
            }
            meta = Some(TraceMeta {
                patient_id: f[0].to_string(),
                group: PatientGroup::parse(f[1]).ok_or_else(|| format!("unknown group `{}`", f[1]))?,
                weight_kg: f[2].parse().map_err(|e| format!("weight_kg: {e}"))?,
                seed: f[3].parse().map_err(|e| format!("seed: {e}"))?,
            });
        } else if let Some(v) = line.strip_prefix("sample_period_min,") {
            sample_period = v.trim().parse().map_err(|e| format!("sample_period_min: {e}"))?;
        }
    }
    let meta = meta.ok_or("missing `# patient_id,group,weight_kg,seed` metadata")?;

    let mut rdr = csv::Reader::from_reader(text[body_start..].as_bytes());
    let header = rdr.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(TRACE_HEADER) {
        return Err(format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        if rec.len() != 4 {
            return Err(format!("row {}: expected 4 fields, got {}", i + 1, rec.len()));
        }
        let num = |k: usize| rec[k].trim().parse::<f64>().map_err(|e| format!("row {} column {}: {e}", i + 1, TRACE_HEADER[k]));
        rows.push(TraceRow {
            t: rec[0].trim().parse().map_err(|e| format!("row {} t_min: {e}", i + 1))?,
            bg: num(1)?,
            insulin: num(2)?,
            meal: num(3)?,
        });
    }
    Ok(SimTrace {
        meta,
        sample_period,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub params: PatientParams,
    pub seed: u64,
    /// File name relative to the manifest, present for accepted traces.
    pub file: Option<String>,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub days: u32,
    pub sample_period: u32,
    pub seed: u64,
    pub patients: Vec<ManifestEntry>,
}

impl CohortManifest {
    pub const FILE_NAME: &'static str = "cohort.json";

    pub fn accepted(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.patients.iter().filter(|p| p.accepted)
    }
}

pub fn write_manifest(m: &CohortManifest, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let path = dir.as_ref().join(CohortManifest::FILE_NAME);
    let text = serde_json::to_string_pretty(m).map_err(|e| io_err(&path, e))?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<CohortManifest> {
    let path = dir.as_ref().join(CohortManifest::FILE_NAME);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(&path, e))
}
