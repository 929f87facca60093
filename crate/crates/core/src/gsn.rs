//! Goal Structuring Notation model of the assurance case for the glucose
//! predictor: the built-in template, validation, instantiation for a patient
//! or a population, evidence binding and status propagation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditReport, RequirementStatus};
use crate::dataset::RmseEvidence;
use crate::evidence::sha256_hex;
use crate::verifier::{Outcome, Verdict};

#[derive(Debug, Error)]
pub enum GsnError {
    #[error("unknown solution `{0}`")]
    UnknownSolution(String),
    #[error("solution `{solution}` does not accept {kind:?} evidence")]
    Inadmissible { solution: String, kind: ArtifactKind },
    #[error("unresolved placeholders: {}", format_slots(.0))]
    Unresolved(Vec<(String, String)>),
    #[error("invalid case: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("unrecognised evidence: {0}")]
    Evidence(String),
    #[error("case file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_slots(slots: &[(String, String)]) -> String {
    slots.iter().map(|(n, s)| format!("{n}:{{{s}}}")).collect::<Vec<_>>().join(", ")
}

pub type Result<T> = std::result::Result<T, GsnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Goal,
    Strategy,
    Context,
    Assumption,
    Justification,
    Solution,
}

impl NodeKind {
    fn is_contextual(self) -> bool {
        matches!(self, NodeKind::Context | NodeKind::Assumption | NodeKind::Justification)
    }
}

/// The P-marker: nodes that must be instantiated for a patient or a population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Instantiation {
    Fixed,
    PerPatient,
    PerPopulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    RmseEval,
    VerificationVerdict,
    AuditReport,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryItem {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub statement: String,
    pub instantiation: Instantiation,
    #[serde(default = "yes")]
    pub developed: bool,
    /// Requirement tables carried by a context.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub items: Vec<RegistryItem>,
    /// Evidence kinds a solution accepts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub admissible: Vec<ArtifactKind>,
}

fn yes() -> bool {
    true
}

impl Node {
    /// `{name}` slots in the statement and items, in order of appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out = Vec::new();
        for text in std::iter::once(&self.statement).chain(self.items.iter().map(|i| &i.text)) {
            for name in slots(text) {
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }
}

fn slots(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(a) = rest.find('{') {
        match rest[a + 1..].find('}') {
            Some(b) => {
                let name = &rest[a + 1..a + 1 + b];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    out.push(name.to_string());
                }
                rest = &rest[a + 1 + b + 1..];
            }
            None => break,
        }
    }
    out
}

fn fill(text: &str, values: &BTreeMap<String, String>) -> String {
    let mut s = text.to_string();
    for (k, v) in values {
        s = s.replace(&format!("{{{k}}}"), v);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkKind {
    SupportedBy,
    InContextOf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub from: String,
    pub to: String,
    pub kind: LinkKind,
    /// Assurance claim point on this link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acp: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Positive,
    Negative,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub kind: ArtifactKind,
    pub pass: Pass,
    /// Where the evidence lives, usually a file path.
    pub source: String,
    /// sha256 of the evidence document.
    pub digest: String,
    pub summary: String,
}

impl Artifact {
    pub fn manual(pass: Pass, summary: &str) -> Self {
        Artifact {
            kind: ArtifactKind::Manual,
            pass,
            source: "manual".into(),
            digest: sha256_hex(summary.as_bytes()),
            summary: summary.into(),
        }
    }

    pub fn from_rmse(ev: &RmseEvidence, source: &str) -> Self {
        Artifact {
            kind: ArtifactKind::RmseEval,
            pass: if ev.pass { Pass::Positive } else { Pass::Negative },
            source: source.into(),
            digest: sha256_hex(serde_json::to_string(ev).expect("serialisable").as_bytes()),
            summary: format!("RMSE {:.3} mg/dL against threshold {}", ev.value, ev.threshold),
        }
    }

    pub fn from_verdict(v: &Verdict, source: &str) -> Self {
        let pass = match v.outcome {
            Outcome::Proved => Pass::Positive,
            Outcome::Counterexample(_) => Pass::Negative,
            Outcome::Unknown(_) => Pass::Inconclusive,
        };
        Artifact {
            kind: ArtifactKind::VerificationVerdict,
            pass,
            source: source.into(),
            digest: sha256_hex(serde_json::to_string(v).expect("serialisable").as_bytes()),
            summary: format!("{} {}", v.property_id, v.outcome.label()),
        }
    }

    /// Violated anywhere is negative; Met or NotApplicable everywhere is
    /// positive; anything else is inconclusive.
    pub fn from_audit(r: &AuditReport, source: &str) -> Self {
        let statuses: Vec<RequirementStatus> = r.requirements.iter().map(|q| q.status).collect();
        let pass = if statuses.contains(&RequirementStatus::Violated) {
            Pass::Negative
        } else if statuses.iter().all(|s| matches!(s, RequirementStatus::Met | RequirementStatus::NotApplicable)) {
            Pass::Positive
        } else {
            Pass::Inconclusive
        };
        let violated: Vec<&str> = r.requirements.iter().filter(|q| q.status == RequirementStatus::Violated).map(|q| q.id.as_str()).collect();
        Artifact {
            kind: ArtifactKind::AuditReport,
            pass,
            source: source.into(),
            digest: sha256_hex(serde_json::to_string(r).expect("serialisable").as_bytes()),
            summary: if violated.is_empty() { "no violated data requirement".into() } else { format!("violated: {}", violated.join(", ")) },
        }
    }

    /// Recognises the JSON written by the evaluation, verification and audit
    /// steps, and `{"kind": "manual", "pass": ..., "summary": ...}`.
    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| GsnError::Evidence(e.to_string()))?;
        let kind = v.get("kind").and_then(|k| k.as_str()).unwrap_or("");
        let bad = |e: serde_json::Error| GsnError::Evidence(e.to_string());
        if kind == "rmse" {
            return Ok(Self::from_rmse(&serde_json::from_value(v).map_err(bad)?, source));
        }
        if kind == "audit_report" {
            return Ok(Self::from_audit(&serde_json::from_value(v).map_err(bad)?, source));
        }
        if kind.starts_with("rmse") {
            // derived RMSE summaries such as the hidden-size sweep
            let pass = v.get("pass").and_then(|p| p.as_bool()).ok_or_else(|| GsnError::Evidence(format!("`{kind}` without a boolean pass")))?;
            return Ok(Artifact {
                kind: ArtifactKind::RmseEval,
                pass: if pass { Pass::Positive } else { Pass::Negative },
                source: source.into(),
                digest: sha256_hex(text.as_bytes()),
                summary: kind.to_string(),
            });
        }
        if kind == "manual" {
            let pass: Pass = serde_json::from_value(v.get("pass").cloned().unwrap_or_default()).map_err(bad)?;
            let summary = v.get("summary").and_then(|s| s.as_str()).unwrap_or("manual evidence");
            return Ok(Artifact {
                source: source.into(),
                digest: sha256_hex(text.as_bytes()),
                ..Self::manual(pass, summary)
            });
        }
        if v.get("outcome").is_some() {
            return Ok(Self::from_verdict(&serde_json::from_value(v).map_err(bad)?, source));
        }
        Err(GsnError::Evidence("expected rmse, verdict, audit or manual JSON".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceBinding {
    pub solution_id: String,
    pub artifact: Artifact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileMode {
    Patient,
    Population,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub mode: ProfileMode,
    #[serde(default)]
    pub values: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssuranceCase {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Profile>,
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    #[serde(default)]
    pub bindings: Vec<EvidenceBinding>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoalStatus {
    Supported,
    Undeveloped,
    Contradicted,
    PartiallySupported,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseStatus {
    pub root: String,
    pub root_status: GoalStatus,
    /// Every goal, strategy and solution.
    pub nodes: BTreeMap<String, GoalStatus>,
}

impl CaseStatus {
    pub fn of(&self, id: &str) -> Option<GoalStatus> {
        self.nodes.get(id).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node: Option<String>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.node {
            Some(n) => write!(f, "{n}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn node(id: &str, kind: NodeKind, inst: Instantiation, statement: &str) -> Node {
    Node {
        id: id.into(),
        kind,
        statement: statement.into(),
        instantiation: inst,
        developed: true,
        items: Vec::new(),
        admissible: Vec::new(),
    }
}

fn items(rows: &[(&str, &str)]) -> Vec<RegistryItem> {
    rows.iter().map(|(id, text)| RegistryItem { id: (*id).into(), text: (*text).into() }).collect()
}

fn solution(id: &str, statement: &str, admissible: &[ArtifactKind]) -> Node {
    Node {
        admissible: admissible.to_vec(),
        ..node(id, NodeKind::Solution, Instantiation::Fixed, statement)
    }
}

pub const ML_LEARNING_GOAL: &str = "GL-1";

/// The glucose-predictor case: controller template, ML development, ML model
/// and ML data arguments. Profile-dependent contexts start out per-population.
pub fn builtin_template() -> AssuranceCase {
    use ArtifactKind::*;
    use Instantiation::*;
    use NodeKind::*;
    let p = PerPopulation;
    let mut nodes = vec![
        node("G0", Goal, Fixed, "The learning-enabled APS controller is safe and effective while the device is used in treating the patient"),
        node(
            "C0-1",
            Context,
            p,
            "Environment and system of the APS controller for {scope}: inputs are the history of CGM values and injected insulin and a prediction horizon of {horizon_min} min; output is the amount of insulin to inject; environmental phenomena include uncertain meal intake and daily activity",
        ),
        Node {
            items: items(&[
                ("RQ.C.1", "Accurately calculate dose of basal and bolus insulin"),
                ("RQ.C.1.1", "Determine the output every T minutes (e.g., T=5 in MiniMed)"),
                ("RQ.C.1.2", "Stop dosing if a maximum amount has been delivered by the pump"),
                ("RQ.C.1.3", "Suspend dosing if the actual or predicted CGM readings fall below a threshold"),
                ("RQ.C.1.4", "Interrupt in a safe way if trustworthy control is not guaranteed"),
                ("RQ.C.1.5", "BG should not remain below 10th-percentile threshold for more than {alpha1} minutes"),
                ("RQ.C.1.6", "BG should not remain above 90th-percentile threshold for more than {alpha2} minutes following a bolus injection"),
                ("RQ.C.1.7", "BG should not remain above 90th-percentile threshold for more than {alpha3} minutes"),
                ("RQ.C.1.8", "The BG value is always greater than 70 and less than 180"),
                ("RQ.C.1.9", "The controller infuses additional insulin while the blood glucose level is below a target level"),
                ("RQ.C.1.10", "The morning wake up blood glucose level can not exceed {beta}"),
            ]),
            ..node("C0-2", Context, p, "Requirements of the learning-enabled APS controller for {scope}")
        },
        node("A0-1", Assumption, Fixed, "The outputs of the ML component, abstracted as ML_abs, are safe"),
        node(
            "G1-1",
            Goal,
            Fixed,
            "Assuming that the BG predictions are accurate, the insulin dosage management component is sufficiently safe and effective for treating patients",
        ),
        node("G1-2", Goal, Fixed, "The ML glucose prediction component is sufficiently safe and effective"),
        node(
            "C1-1",
            Context,
            p,
            "ML glucose prediction component for {scope}: CGM, insulin and meal values over the last {input_window_min} min from the CGM and pump devices in, BG {horizon_min} min ahead out",
        ),
        Node {
            items: items(&[
                ("ML-RQ1", "Accurately predict the BG values {horizon_min} minutes in the future"),
                ("ML-RQ1.1", "BG's rate of change has to be bound by established physiological norms"),
                ("ML-RQ1.2", "Meal intake has a direct effect on the BG value"),
                ("ML-RQ1.3", "Exercise has an inverse effect on the BG value"),
                ("ML-RQ1.4", "Within t minutes of a bolus, there should be an accompanying change in BG of more than alpha"),
                ("ML-RQ1.5", "The glucose level starts to rise at a specific time after a meal's onset"),
                ("ML-RQ1.6", "There is a delay between the injection of insulin and the disposal of glucose"),
                ("ML-RQ1.7", "The blood concentration of insulin reaches its maximum after a particular time"),
                ("ML-RQ1.8", "Insulin has an inverse effect on the BG value"),
                ("ML-RQ2", "Perform as required for different patients of different ages/sexes"),
                ("ML-RQ3", "Perform as required in the presence of external factors such as meals and exercises"),
            ]),
            ..node("C1-2", Context, p, "Performance and robustness requirements, independent of ML technology, allocated to the ML glucose prediction component")
        },
        node("G2-1", Goal, Fixed, "The development of the ML model predicting the BG values is sufficiently safe and effective"),
        Node {
            developed: false,
            ..node("G2-2", Goal, Fixed, "The integration of the ML component into the system is sufficiently safe and effective")
        },
        Node {
            items: items(&[
                ("ML-RQ1", "ML component should predict the glucose value with the mean prediction error of less than {thres} mg/dL"),
                ("ML-RQ1.1", "for all i: |BG_in[i+1] - BG_in[i]| <= Delta => for all j: |BG_out[j+1] - BG_out[j]| <= Delta"),
                ("ML-RQ1.2", "some i: M_in[i] >= beta1 => some j: BG_out[j] >= rho1"),
                ("ML-RQ1.3", "No available data"),
                ("ML-RQ1.4", "In_in[0] >= beta2 => some j >= 1: |BG_out[j] - BG_out[0]| >= alpha"),
                ("ML-RQ1.5", "some i: M_in[i] >= beta3 => some j >= 1: |BG_out[j] - BG_out[0]| > 0"),
                ("ML-RQ1.6", "In_in[0] >= beta4 => 70 <= BG_out[5] <= 180 and for all j < 5: (BG_out[j] <= 70 or BG_out[j] >= 180)"),
                ("ML-RQ1.7", "In_in[0] >= beta4 => 70 <= BG_out[5] <= 180 and for all j < 5: (BG_out[j] <= 70 or BG_out[j] >= 180)"),
                ("ML-RQ1.8", "some i: In_in[i] >= beta5 => some j: BG_out[j] <= rho2"),
                ("ML-RQ2", "RMSE below {thres} mg/dL on patients held out from training"),
                ("ML-RQ3", "RMSE below {thres} mg/dL in the presence of meals and exercise"),
            ]),
            ..node("C2-1", Context, p, "ML requirements expressed over the inputs and outputs of the ML model")
        },
        node("S2-1", Strategy, Fixed, "Argument over the development of the ML component: the design and training of the ML model"),
        node("G3-1", Goal, Fixed, "The ML model satisfies the ML requirements"),
        node(
            "G3-2",
            Goal,
            Fixed,
            "The ML requirements are a valid development of the APS requirements allocated to the glucose prediction component",
        ),
        node("C3-1", Context, p, "ML model created: {architecture}, inputs scaled to [0, 1]"),
        node("C3-2", Context, p, "ML data: CGM, insulin and meal records of {scope}; {data_description}"),
        node("G4-1", Goal, Fixed, "The ML model satisfies the performance requirements"),
        node("G4-2", Goal, Fixed, "The ML model satisfies the robustness requirements"),
        node(
            ML_LEARNING_GOAL,
            Goal,
            Fixed,
            "The iterative ML learning process that selected the model structure and parameters is sufficient",
        ),
        node("G4-3", Goal, Fixed, "The ML data meet the desiderata of relevance, completeness, accuracy and balance"),
        node("C4-1", Context, p, "Development, test and verification datasets: {split}"),
        Node {
            items: crate::audit::RequirementId::ALL.iter().map(|r| RegistryItem { id: r.as_str().into(), text: r.text().into() }).collect(),
            ..node(
                "C4-2",
                Context,
                p,
                "ML data requirements for {scope}, intended for ages {age_range} years and body weights {weight_range_kg} kg",
            )
        },
        node("G5-1", Goal, Fixed, "The list of ML data requirements is sufficient"),
        node("G5-2", Goal, Fixed, "The ML data meet the ML data requirements"),
        solution("Sn-G1-1", "Verification and validation results of the insulin dosage management component", &[Manual]),
        solution("Sn-G3-2", "One-to-one mapping between the allocated requirements and the ML requirements", &[Manual]),
        solution("Sn-RQ1", "RMSE of the model on the held-out test split", &[RmseEval]),
    ];
    for id in ["1.1", "1.2", "1.4", "1.5", "1.6", "1.7", "1.8"] {
        nodes.push(solution(&format!("Sn-RQ{id}"), &format!("Formal verification verdict for ML-RQ{id}"), &[VerificationVerdict]));
    }
    nodes.extend([
        solution("Sn-RQ2", "RMSE on patients held out from training", &[RmseEval, Manual]),
        solution("Sn-RQ3", "Evaluation in the presence of meals and exercise", &[RmseEval, Manual]),
        solution("Sn-L1", "Hidden-size sweep and training versus validation loss", &[RmseEval, Manual]),
        solution("Sn-G5-1", "Review of the data requirements against the desiderata", &[Manual]),
        solution("Sn-G5-2", "Audit of the dataset against the data requirements", &[AuditReport]),
    ]);
    let s = |from: &str, to: &str| Link { from: from.into(), to: to.into(), kind: LinkKind::SupportedBy, acp: None };
    let c = |from: &str, to: &str| Link { from: from.into(), to: to.into(), kind: LinkKind::InContextOf, acp: None };
    let acp = |from: &str, to: &str, name: &str| Link { acp: Some(name.into()), ..s(from, to) };
    let mut links = vec![
        c("G0", "C0-1"),
        c("G0", "C0-2"),
        s("G0", "G1-1"),
        s("G0", "G1-2"),
        c("G1-1", "A0-1"),
        c("G1-1", "C0-2"),
        s("G1-1", "Sn-G1-1"),
        c("G1-2", "C1-1"),
        c("G1-2", "C1-2"),
        s("G1-2", "G2-1"),
        s("G1-2", "G2-2"),
        c("G2-1", "C2-1"),
        s("G2-1", "S2-1"),
        s("S2-1", "G3-1"),
        s("S2-1", "G3-2"),
        s("G3-2", "Sn-G3-2"),
        c("G3-1", "C3-1"),
        c("G3-1", "C3-2"),
        s("G3-1", "G4-1"),
        s("G3-1", "G4-2"),
        acp("G3-1", ML_LEARNING_GOAL, "ACP-ML-learning"),
        acp("G3-1", "G4-3", "ACP-ML-data"),
        c("G4-1", "C4-1"),
        s("G4-1", "Sn-RQ1"),
    ];
    for id in ["1.1", "1.2", "1.4", "1.5", "1.6", "1.7", "1.8"] {
        links.push(s("G4-1", &format!("Sn-RQ{id}")));
    }
    links.extend([
        s("G4-2", "Sn-RQ2"),
        s("G4-2", "Sn-RQ3"),
        s(ML_LEARNING_GOAL, "Sn-L1"),
        c("G4-3", "C4-1"),
        c("G4-3", "C4-2"),
        s("G4-3", "G5-1"),
        s("G4-3", "G5-2"),
        s("G5-1", "Sn-G5-1"),
        s("G5-2", "Sn-G5-2"),
    ]);
    AssuranceCase {
        name: "ML glucose prediction component of an APS".into(),
        profile: None,
        nodes,
        links,
        bindings: Vec::new(),
    }
}

impl AssuranceCase {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    fn supported_by<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.links.iter().filter(move |l| l.kind == LinkKind::SupportedBy && l.from == id).map(|l| l.to.as_str())
    }

    pub fn root(&self) -> Option<&str> {
        let targets: BTreeSet<&str> = self.links.iter().filter(|l| l.kind == LinkKind::SupportedBy).map(|l| l.to.as_str()).collect();
        let mut roots = self.nodes.iter().filter(|n| n.kind == NodeKind::Goal && !targets.contains(n.id.as_str()));
        match (roots.next(), roots.next()) {
            (Some(r), None) => Some(&r.id),
            _ => None,
        }
    }

    pub fn binding(&self, solution: &str) -> Option<&EvidenceBinding> {
        self.bindings.iter().find(|b| b.solution_id == solution)
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        let mut push = |node: Option<&str>, m: String| v.push(Violation { node: node.map(str::to_string), message: m });
        let mut kinds: BTreeMap<&str, NodeKind> = BTreeMap::new();
        for n in &self.nodes {
            if kinds.insert(&n.id, n.kind).is_some() {
                push(Some(&n.id), "duplicate id".into());
            }
            if n.kind == NodeKind::Solution && n.admissible.is_empty() {
                push(Some(&n.id), "solution accepts no evidence kind".into());
            }
        }
        for l in &self.links {
            let (Some(&from), Some(&to)) = (kinds.get(l.from.as_str()), kinds.get(l.to.as_str())) else {
                push(None, format!("dangling link {} -> {}", l.from, l.to));
                continue;
            };
            if !matches!(from, NodeKind::Goal | NodeKind::Strategy) {
                push(Some(&l.from), format!("{from:?} cannot have outgoing links"));
            }
            match l.kind {
                LinkKind::SupportedBy if to.is_contextual() => push(Some(&l.to), format!("SupportedBy link into {to:?}")),
                LinkKind::InContextOf if !to.is_contextual() => push(Some(&l.to), format!("InContextOf link into {to:?}")),
                _ => {}
            }
            if l.acp.is_some() && l.kind != LinkKind::SupportedBy {
                push(Some(&l.from), "assurance claim point on a context link".into());
            }
        }
        let goals_without_parent: Vec<&str> = {
            let targets: BTreeSet<&str> = self.links.iter().filter(|l| l.kind == LinkKind::SupportedBy).map(|l| l.to.as_str()).collect();
            self.nodes.iter().filter(|n| n.kind == NodeKind::Goal && !targets.contains(n.id.as_str())).map(|n| n.id.as_str()).collect()
        };
        if goals_without_parent.len() != 1 {
            push(None, format!("expected a single root goal, found {:?}", goals_without_parent));
        }
        for n in &self.nodes {
            let children: Vec<&str> = self.supported_by(&n.id).collect();
            match n.kind {
                NodeKind::Strategy if !children.iter().any(|c| kinds.get(c) == Some(&NodeKind::Goal)) => {
                    push(Some(&n.id), "strategy without a supporting goal".into())
                }
                NodeKind::Goal if !n.developed && !children.is_empty() => push(Some(&n.id), "undeveloped goal has supporting nodes".into()),
                _ => {}
            }
        }
        if let Some(cycle_at) = self.find_cycle() {
            push(Some(&cycle_at), "cycle".into());
        }
        for b in &self.bindings {
            match self.node(&b.solution_id) {
                Some(n) if n.kind == NodeKind::Solution => {
                    if !n.admissible.contains(&b.artifact.kind) {
                        push(Some(&b.solution_id), format!("inadmissible {:?} binding", b.artifact.kind));
                    }
                }
                _ => push(Some(&b.solution_id), "binding to a missing solution".into()),
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    fn find_cycle(&self) -> Option<String> {
        // 0 unvisited, 1 on stack, 2 done
        let mut state: BTreeMap<&str, u8> = self.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
        fn visit<'a>(case: &'a AssuranceCase, id: &'a str, state: &mut BTreeMap<&'a str, u8>) -> Option<String> {
            match state.get(id) {
                Some(1) => return Some(id.to_string()),
                Some(2) | None => return None,
                _ => {}
            }
            state.insert(id, 1);
            for l in case.links.iter().filter(|l| l.from == id) {
                if let Some(c) = visit(case, &l.to, state) {
                    return Some(c);
                }
            }
            state.insert(id, 2);
            None
        }
        let ids: Vec<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        ids.into_iter().find_map(|id| visit(self, id, &mut state))
    }

    /// Adds a link, refusing one that would break validity.
    pub fn with_link(&self, link: Link) -> Result<AssuranceCase> {
        let mut next = self.clone();
        next.links.push(link);
        next.validate().map_err(GsnError::Invalid)?;
        Ok(next)
    }

    /// `{node, slot}` pairs still unresolved in profile-dependent nodes.
    pub fn unresolved(&self) -> Vec<(String, String)> {
        self.nodes
            .iter()
            .filter(|n| n.instantiation != Instantiation::Fixed)
            .flat_map(|n| n.placeholders().into_iter().map(move |s| (n.id.clone(), s)))
            .collect()
    }

    /// Fills every profile-dependent node from `profile.values`. `{scope}` is
    /// derived from the mode and the `subject` value.
    pub fn instantiate(&self, profile: &Profile) -> Result<AssuranceCase> {
        let mut values = profile.values.clone();
        if let Some(subject) = profile.values.get("subject") {
            let scope = match profile.mode {
                ProfileMode::Patient => format!("the individual patient {subject}"),
                ProfileMode::Population => format!("the cohort of patients {subject}"),
            };
            values.entry("scope".into()).or_insert(scope);
        }
        let inst = match profile.mode {
            ProfileMode::Patient => Instantiation::PerPatient,
            ProfileMode::Population => Instantiation::PerPopulation,
        };
        let mut next = self.clone();
        let mut missing = Vec::new();
        for n in next.nodes.iter_mut().filter(|n| n.instantiation != Instantiation::Fixed) {
            for slot in n.placeholders() {
                if !values.contains_key(&slot) {
                    missing.push((n.id.clone(), slot));
                }
            }
            n.statement = fill(&n.statement, &values);
            for item in &mut n.items {
                item.text = fill(&item.text, &values);
            }
            n.instantiation = inst;
        }
        if !missing.is_empty() {
            return Err(GsnError::Unresolved(missing));
        }
        next.profile = Some(profile.clone());
        Ok(next)
    }

    /// Binds (or rebinds) evidence to a solution.
    pub fn bind_evidence(&self, solution_id: &str, artifact: Artifact) -> Result<AssuranceCase> {
        let n = self
            .node(solution_id)
            .filter(|n| n.kind == NodeKind::Solution)
            .ok_or_else(|| GsnError::UnknownSolution(solution_id.into()))?;
        if !n.admissible.contains(&artifact.kind) {
            return Err(GsnError::Inadmissible {
                solution: solution_id.into(),
                kind: artifact.kind,
            });
        }
        let mut next = self.clone();
        next.bindings.retain(|b| b.solution_id != solution_id);
        next.bindings.push(EvidenceBinding {
            solution_id: solution_id.into(),
            artifact,
        });
        Ok(next)
    }

    /// Contradicted dominates; a node holds only if all its supports hold;
    /// no support at all, or an undeveloped goal, is Undeveloped.
    pub fn evaluate_status(&self) -> CaseStatus {
        let mut memo: BTreeMap<String, GoalStatus> = BTreeMap::new();
        for n in &self.nodes {
            if !n.kind.is_contextual() {
                self.status_of(&n.id, &mut memo, &mut BTreeSet::new());
            }
        }
        let root = self.root().unwrap_or("").to_string();
        CaseStatus {
            root_status: memo.get(&root).copied().unwrap_or(GoalStatus::Undeveloped),
            root,
            nodes: memo,
        }
    }

    fn status_of(&self, id: &str, memo: &mut BTreeMap<String, GoalStatus>, path: &mut BTreeSet<String>) -> GoalStatus {
        if let Some(&s) = memo.get(id) {
            return s;
        }
        let Some(n) = self.node(id) else { return GoalStatus::Undeveloped };
        // a cycle cannot support anything
        if !path.insert(id.to_string()) {
            return GoalStatus::Undeveloped;
        }
        let s = if n.kind == NodeKind::Solution {
            match self.binding(id).map(|b| b.artifact.pass) {
                None => GoalStatus::Undeveloped,
                Some(Pass::Positive) => GoalStatus::Supported,
                Some(Pass::Negative) => GoalStatus::Contradicted,
                Some(Pass::Inconclusive) => GoalStatus::PartiallySupported,
            }
        } else if !n.developed {
            GoalStatus::Undeveloped
        } else {
            let children: Vec<String> = self.supported_by(id).map(str::to_string).collect();
            let st: Vec<GoalStatus> = children.iter().map(|c| self.status_of(c, memo, path)).collect();
            if st.is_empty() || st.iter().all(|&s| s == GoalStatus::Undeveloped) {
                GoalStatus::Undeveloped
            } else if st.contains(&GoalStatus::Contradicted) {
                GoalStatus::Contradicted
            } else if st.iter().all(|&s| s == GoalStatus::Supported) {
                GoalStatus::Supported
            } else {
                GoalStatus::PartiallySupported
            }
        };
        path.remove(id);
        memo.insert(id.to_string(), s);
        s
    }

    /// One `node ...` line per node and one `link ...` line per link; the
    /// shape of the graph without statements or bindings.
    pub fn structure(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .nodes
            .iter()
            .map(|n| {
                let p = if n.instantiation == Instantiation::Fixed { "-" } else { "P" };
                let mut line = format!("node {} {:?} {p}", n.id, n.kind);
                if !n.developed {
                    line += " undeveloped";
                }
                line
            })
            .collect();
        out.extend(self.links.iter().map(|l| match &l.acp {
            Some(a) => format!("link {} {:?} {} {a}", l.from, l.kind, l.to),
            None => format!("link {} {:?} {}", l.from, l.kind, l.to),
        }));
        out
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GsnError::Format(e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GsnError::Format(e.to_string()))
    }

    /// Graphviz rendering with the usual GSN shapes; `(P)` marks nodes that
    /// depend on the patient or population.
    pub fn export_dot(&self) -> String {
        let status = self.evaluate_status();
        let mut s = String::from("digraph gsn {\n  rankdir=TB;\n  node [fontsize=10];\n");
        for n in &self.nodes {
            let shape = match n.kind {
                NodeKind::Goal => "box",
                NodeKind::Strategy => "parallelogram",
                NodeKind::Context => "box\", style=\"rounded",
                NodeKind::Assumption | NodeKind::Justification => "ellipse",
                NodeKind::Solution => "circle",
            };
            let mut label = n.id.clone();
            if n.instantiation != Instantiation::Fixed {
                label += " (P)";
            }
            match n.kind {
                NodeKind::Assumption => label += " A",
                NodeKind::Justification => label += " J",
                _ => {}
            }
            if !n.developed {
                label += " <>";
            }
            if let Some(st) = status.of(&n.id) {
                label += &format!("\\n[{st:?}]");
            }
            let text: String = n.statement.chars().take(80).collect::<String>().replace('"', "'");
            let _ = writeln!(s, "  \"{}\" [shape=\"{shape}\", label=\"{label}\\n{text}\"];", n.id);
        }
        for l in &self.links {
            let mut attrs = match l.kind {
                LinkKind::SupportedBy => "arrowhead=normal".to_string(),
                LinkKind::InContextOf => "arrowhead=onormal".to_string(),
            };
            if let Some(a) = &l.acp {
                attrs += &format!(", label=\"\u{25A0} {a}\"");
            }
            let _ = writeln!(s, "  \"{}\" -> \"{}\" [{attrs}];", l.from, l.to);
        }
        s.push_str("}\n");
        s
    }
}

pub fn save_case(case: &AssuranceCase, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, case.to_text()?)?;
    Ok(())
}

pub fn load_case(path: impl AsRef<Path>) -> Result<AssuranceCase> {
    AssuranceCase::from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_scanner() {
        assert_eq!(slots("a {x} b {y_2} {} {not a slot} {x"), vec!["x", "y_2"]);
        let v = BTreeMap::from([("x".to_string(), "1".to_string())]);
        assert_eq!(fill("{x}+{x}={y}", &v), "1+1={y}");
    }

    #[test]
    fn template_is_valid() {
        let t = builtin_template();
        t.validate().unwrap();
        assert_eq!(t.root(), Some("G0"));
        assert_eq!(t.evaluate_status().root_status, GoalStatus::Undeveloped);
    }
}
