//! Assurance case files and status reports.

use std::path::Path;

use aps_core::gsn::{load_case, save_case, Artifact, AssuranceCase, CaseStatus, GoalStatus, NodeKind, Pass};
use aps_core::evidence::sha256_hex;
use serde::Serialize;

use crate::error::{read_text, CliError, Result};

pub fn load(path: &Path) -> Result<AssuranceCase> {
    if !path.is_file() {
        return Err(CliError::io(path, "case file not found"));
    }
    load_case(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn save(case: &AssuranceCase, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    save_case(case, path).map_err(|e| CliError::io(path, e))
}

pub fn load_artifact(path: &Path) -> Result<Artifact> {
    Artifact::from_json(&read_text(path)?, &path.display().to_string()).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn bind(case: &AssuranceCase, solution: &str, artifact: Artifact) -> Result<AssuranceCase> {
    case.bind_evidence(solution, artifact).map_err(CliError::usage)
}

/// One artifact standing for several of the same kind: the worst pass wins.
pub fn combine(parts: &[Artifact]) -> Option<Artifact> {
    let first = parts.first()?;
    let rank = |p: Pass| match p {
        Pass::Negative => 2,
        Pass::Inconclusive => 1,
        Pass::Positive => 0,
    };
    let pass = parts.iter().map(|a| a.pass).max_by_key(|&p| rank(p)).unwrap_or(Pass::Positive);
    let digests: Vec<&str> = parts.iter().map(|a| a.digest.as_str()).collect();
    Some(Artifact {
        kind: first.kind,
        pass,
        source: parts.iter().map(|a| a.source.as_str()).collect::<Vec<_>>().join(";"),
        digest: sha256_hex(digests.join("").as_bytes()),
        summary: parts.iter().map(|a| a.summary.as_str()).collect::<Vec<_>>().join("; "),
    })
}

/// Supported and PartiallySupported roots count as acceptable.
pub fn root_acceptable(s: &CaseStatus) -> bool {
    matches!(s.root_status, GoalStatus::Supported | GoalStatus::PartiallySupported)
}

#[derive(Serialize)]
struct StatusJson<'a> {
    root: &'a str,
    root_status: GoalStatus,
    nodes: &'a std::collections::BTreeMap<String, GoalStatus>,
    unbound_solutions: Vec<&'a str>,
}

pub fn unbound(case: &AssuranceCase) -> Vec<&str> {
    case.nodes.iter().filter(|n| n.kind == NodeKind::Solution && case.binding(&n.id).is_none()).map(|n| n.id.as_str()).collect()
}

pub fn status_json(case: &AssuranceCase, s: &CaseStatus) -> String {
    crate::error::to_json(&StatusJson {
        root: &s.root,
        root_status: s.root_status,
        nodes: &s.nodes,
        unbound_solutions: unbound(case),
    })
}

/// Root first, then every goal and strategy with its status and every
/// solution with its bound evidence.
pub fn status_text(case: &AssuranceCase, s: &CaseStatus) -> String {
    let mut out = format!("root {} {:?}\n", s.root, s.root_status);
    for n in &case.nodes {
        let Some(st) = s.of(&n.id) else { continue };
        if n.id == s.root {
            continue;
        }
        match case.binding(&n.id) {
            Some(b) => out.push_str(&format!("{:<10} {:?} ({})\n", n.id, st, b.artifact.summary)),
            None => out.push_str(&format!("{:<10} {:?}\n", n.id, st)),
        }
    }
    out
}
