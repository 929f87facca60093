//! Single-property verification and the property suite.

use std::collections::BTreeMap;
use std::path::Path;

use aps_core::nn::Network;
use aps_core::property::{instantiate, parse_dsl, reference_queries, render_dsl, BoxSpec, Channel, Interval, Property, TEMPLATE_IDS};
use aps_core::verifier::{verify, Outcome, Verdict, VerifierConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{read_json, read_text, to_json, write_text, CliError, Result};

pub fn load_property(path: &Path) -> Result<Property> {
    parse_dsl(&read_text(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn run(net: &Network, prop: &Property, cfg: &VerifierConfig) -> Result<Verdict> {
    verify(net, prop, cfg).map_err(CliError::usage)
}

/// Template instantiation request: threshold values, one interval per input
/// channel (missing channels span the training range) and optionally the
/// templates to instantiate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsFile {
    pub thresholds: BTreeMap<String, f64>,
    #[serde(default, rename = "box")]
    pub input_box: BTreeMap<String, (f64, f64)>,
    #[serde(default)]
    pub templates: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteItem {
    pub name: String,
    pub label: String,
    pub property: Property,
}

impl ThresholdsFile {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    fn input_box(&self) -> Result<BoxSpec> {
        let mut b = BoxSpec::default();
        for (name, &(lo, hi)) in &self.input_box {
            let ch = Channel::from_name(name).filter(|c| c.is_input()).ok_or_else(|| CliError::usage(format!("unknown input channel `{name}`")))?;
            b.set_channel(ch, Interval::new(lo, hi));
        }
        Ok(b)
    }

    /// Every requested template whose thresholds are all given. With no
    /// explicit list, templates lacking a threshold or unsupported are skipped.
    pub fn items(&self) -> Result<Vec<SuiteItem>> {
        let b = self.input_box()?;
        let explicit = self.templates.is_some();
        let ids: Vec<String> = self.templates.clone().unwrap_or_else(|| TEMPLATE_IDS.iter().map(|s| s.to_string()).collect());
        let mut out = Vec::new();
        for id in ids {
            match instantiate(&id, &self.thresholds, b.clone()) {
                Ok(property) => out.push(SuiteItem {
                    name: id.to_lowercase().replace(['-', '.'], "_"),
                    label: id.clone(),
                    property,
                }),
                Err(e) if explicit => return Err(CliError::usage(format!("{id}: {e}"))),
                Err(_) => {}
            }
        }
        if out.is_empty() {
            return Err(CliError::usage("no template could be instantiated from the thresholds file"));
        }
        Ok(out)
    }
}

pub fn reference_items() -> Vec<SuiteItem> {
    reference_queries()
        .into_iter()
        .map(|q| SuiteItem {
            name: q.name,
            label: q.label,
            property: q.property,
        })
        .collect()
}

/// Every `*.prop` file in `dir`, by file name.
pub fn directory_items(dir: &Path) -> Result<Vec<SuiteItem>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "prop"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::usage(format!("{}: no .prop files", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let property = load_property(p)?;
            Ok(SuiteItem {
                name: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                label: property.id.clone(),
                property,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub name: String,
    pub property_id: String,
    pub label: String,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub subproblems: u64,
    pub wall_time: f64,
    pub verdict_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    /// Always `"verification_report"`.
    pub kind: String,
    pub model_hash: String,
    pub config_hash: String,
    pub rows: Vec<SuiteRow>,
}

impl SuiteResult {
    pub fn counterexamples(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome == "Counterexample").count()
    }

    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0);
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&format!("{:<24} {:<w$}  {:<14} {:>9.2}s\n", r.name, r.label, r.outcome, r.wall_time));
        }
        s
    }
}

/// Verifies every item in parallel, writing `<name>.prop` and `<name>.json`
/// per item plus `report.json` and `report.txt` into `out`.
pub fn run_suite(net: &Network, items: &[SuiteItem], cfg: &VerifierConfig, out: &Path) -> Result<(SuiteResult, Vec<Verdict>)> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let verdicts = items.par_iter().map(|it| run(net, &it.property, cfg)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (it, v) in items.iter().zip(&verdicts) {
        let file = format!("{}.json", it.name);
        write_text(&out.join(format!("{}.prop", it.name)), &render_dsl(&it.property))?;
        write_text(&out.join(&file), &to_json(v))?;
        rows.push(SuiteRow {
            name: it.name.clone(),
            property_id: v.property_id.clone(),
            label: it.label.clone(),
            outcome: v.outcome.label().into(),
            reason: match &v.outcome {
                Outcome::Unknown(r) => Some(r.clone()),
                _ => None,
            },
            subproblems: v.stats.subproblems,
            wall_time: v.stats.wall_time,
            verdict_file: file,
        });
    }
    let result = SuiteResult {
        kind: "verification_report".into(),
        model_hash: aps_core::verifier::model_hash(net),
        config_hash: cfg.hash(),
        rows,
    };
    write_text(&out.join("report.json"), &to_json(&result))?;
    write_text(&out.join("report.txt"), &result.to_text())?;
    Ok((result, verdicts))
}
