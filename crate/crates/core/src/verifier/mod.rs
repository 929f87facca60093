//! Verification of properties against a trained network: a cheap
//! falsification search, then input-splitting branch-and-bound over relaxed
//! bounds and LP feasibility. An exhaustive activation-pattern oracle covers
//! small networks for cross-checking.
//!
//! Everything here works in network units: inputs scaled to the training
//! range, outputs in mg/dL. Properties written in physical or mixed units are
//! mapped first. Strict comparisons are proved in their widened form, so a
//! `Proved` verdict means no input violates the property by more than
//! `eps_strict`.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::sha256_hex;
use crate::nn::{model_to_string, Network, NnError};
use crate::property::{compile_with_limit, to_network_units, Comparator, Interval, Property, PropertyError, UnitMode};

mod bounds;
pub mod lp;
mod oracle;
mod search;
pub mod suite;

pub use bounds::{interval_bounds, relaxed_bounds, relaxed_bounds_within, AffineForm, BoundsResult, LayerBounds};
pub use lp::{lp_feasible, lp_maximize, Constraint, LpInstability, LpOutcome, Relation};
pub use oracle::{exact_oracle, exact_oracle_with, ORACLE_MAX_RELUS};
pub use search::falsify;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Property(#[from] PropertyError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("property is written in {0:?} units but the model has no input scaler")]
    NoScaler(UnitMode),
    #[error("network has {inputs} inputs and {outputs} outputs, property needs {want_in} and {want_out}")]
    Shape {
        inputs: usize,
        outputs: usize,
        want_in: usize,
        want_out: usize,
    },
    #[error("invalid verifier configuration: {0}")]
    Config(String),
    #[error("exact oracle supports at most {max} hidden ReLUs, network has {got}")]
    TooLarge { got: usize, max: usize },
}

pub type Result<T> = std::result::Result<T, VerifyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitHeuristic {
    /// Widest free input dimension, lowest index on ties.
    WidestDim,
    /// Width times the weight the relaxation puts on the dimension.
    BoundsImpact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub max_subproblems: u64,
    pub timeout_secs: f64,
    pub falsify_samples: u64,
    pub falsify_descent_steps: u64,
    pub split_heuristic: SplitHeuristic,
    pub lp_tolerance: f64,
    /// Widening applied to every comparison while proving.
    pub eps_strict: f64,
    pub clause_limit: usize,
    /// Subproblems with at most this many unstable ReLUs are decided by
    /// enumerating activation patterns instead of splitting further.
    pub exact_node_relus: usize,
    pub seed: u64,
    /// Worker threads for the branch queue; results are reproducible only with 1.
    pub workers: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            max_subproblems: 200_000,
            timeout_secs: 300.0,
            falsify_samples: 10_000,
            falsify_descent_steps: 200,
            split_heuristic: SplitHeuristic::WidestDim,
            lp_tolerance: lp::DEFAULT_LP_TOLERANCE,
            eps_strict: 1e-6,
            clause_limit: crate::property::DEFAULT_CLAUSE_LIMIT,
            exact_node_relus: 4,
            seed: 0,
            workers: 1,
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VerifyError::Config(m.to_string()));
        if self.max_subproblems == 0 {
            return bad("max_subproblems must be positive");
        }
        if !(self.timeout_secs > 0.0) {
            return bad("timeout must be positive");
        }
        if !(self.lp_tolerance > 0.0 && self.lp_tolerance < 1e-2) {
            return bad("lp_tolerance must lie in (0, 1e-2)");
        }
        if !(self.eps_strict > self.lp_tolerance) {
            return bad("eps_strict must exceed lp_tolerance");
        }
        if self.workers == 0 || self.clause_limit == 0 {
            return bad("workers and clause_limit must be positive");
        }
        Ok(())
    }

    /// Hash of the fields that influence verdicts; `workers` is left out.
    pub fn hash(&self) -> String {
        let canonical = VerifierConfig { workers: 1, ..self.clone() };
        sha256_hex(serde_json::to_string(&canonical).expect("config serialises").as_bytes())
    }
}

/// A violating input in network units and the network output there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    /// The same input in physical units when the model carries a scaler.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_physical: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Proved,
    Counterexample(Witness),
    Unknown(String),
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Proved => "Proved",
            Outcome::Counterexample(_) => "Counterexample",
            Outcome::Unknown(_) => "Unknown",
        }
    }

    pub fn is_decisive(&self) -> bool {
        !matches!(self, Outcome::Unknown(_))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyStats {
    pub subproblems: u64,
    pub max_depth: u64,
    pub wall_time: f64,
    pub lp_calls: u64,
    pub queries: usize,
    /// Queries after splitting `|e| >= c` atoms into their two sides.
    pub branches: usize,
    pub falsify_samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VerdictJson", try_from = "VerdictJson")]
pub struct Verdict {
    pub property_id: String,
    pub outcome: Outcome,
    pub stats: VerifyStats,
    pub config_hash: String,
    pub model_hash: String,
    /// No input in the box satisfies the precondition.
    pub vacuous: bool,
}

#[derive(Serialize, Deserialize)]
struct VerdictJson {
    property_id: String,
    outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    witness: Option<Witness>,
    stats: VerifyStats,
    config_hash: String,
    model_hash: String,
    #[serde(default)]
    vacuous: bool,
}

impl From<Verdict> for VerdictJson {
    fn from(v: Verdict) -> Self {
        let outcome = v.outcome.label().to_string();
        let (reason, witness) = match v.outcome {
            Outcome::Proved => (None, None),
            Outcome::Counterexample(w) => (None, Some(w)),
            Outcome::Unknown(r) => (Some(r), None),
        };
        VerdictJson {
            property_id: v.property_id,
            outcome,
            reason,
            witness,
            stats: v.stats,
            config_hash: v.config_hash,
            model_hash: v.model_hash,
            vacuous: v.vacuous,
        }
    }
}

impl TryFrom<VerdictJson> for Verdict {
    type Error = String;

    fn try_from(j: VerdictJson) -> std::result::Result<Self, String> {
        let outcome = match (j.outcome.as_str(), j.witness) {
            ("Proved", _) => Outcome::Proved,
            ("Counterexample", Some(w)) => Outcome::Counterexample(w),
            ("Counterexample", None) => return Err("Counterexample verdict without a witness".into()),
            ("Unknown", _) => Outcome::Unknown(j.reason.unwrap_or_default()),
            (other, _) => return Err(format!("unknown outcome `{other}`")),
        };
        Ok(Verdict {
            property_id: j.property_id,
            outcome,
            stats: j.stats,
            config_hash: j.config_hash,
            model_hash: j.model_hash,
            vacuous: j.vacuous,
        })
    }
}

/// `coef . v + constant  cmp  bound` with dense coefficients.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LinAtom {
    pub coef: Vec<f64>,
    pub constant: f64,
    pub cmp: Comparator,
    pub bound: f64,
}

impl LinAtom {
    pub fn value(&self, v: &[f64]) -> f64 {
        self.coef.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() + self.constant
    }

    pub fn holds(&self, v: &[f64]) -> bool {
        self.cmp.holds(self.value(v), self.bound)
    }

    pub fn margin(&self, v: &[f64]) -> f64 {
        let val = self.value(v);
        if self.cmp.is_upper() {
            self.bound - val
        } else {
            val - self.bound
        }
    }

    /// The atom as a non-strict LP row loosened by `eps`.
    pub fn widened(&self, eps: f64) -> Constraint {
        let rhs = self.bound - self.constant;
        if self.cmp.is_upper() {
            Constraint::le(self.coef.clone(), rhs + eps)
        } else {
            Constraint::ge(self.coef.clone(), rhs - eps)
        }
    }
}

/// One conjunctive piece of the violation set, free of absolute values.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Branch {
    pub query: usize,
    pub input_box: Vec<Interval>,
    pub pre: Vec<LinAtom>,
    pub post: Vec<LinAtom>,
}

impl Branch {
    pub fn pre_holds(&self, x: &[f64]) -> bool {
        self.pre.iter().all(|a| a.holds(x))
    }
}

/// A property mapped to network units and split into branches.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub native: Property,
    pub branches: Vec<Branch>,
    pub queries: usize,
}

fn lin_atoms(atoms: &[crate::property::AffineAtom], dim: usize) -> Vec<Vec<LinAtom>> {
    // each atom contributes one or two alternatives
    let mut acc: Vec<Vec<LinAtom>> = vec![Vec::new()];
    for a in atoms {
        let (coef, constant) = a.expr.dense(dim);
        let plain = LinAtom {
            coef: coef.clone(),
            constant,
            cmp: a.comparator,
            bound: a.bound,
        };
        let alts = if a.is_abs_outside() {
            let flipped = LinAtom {
                coef: coef.iter().map(|v| -v).collect(),
                constant: -constant,
                ..plain.clone()
            };
            vec![plain, flipped]
        } else {
            debug_assert!(!a.abs, "abs-inside atoms are expanded by compile");
            vec![plain]
        };
        acc = acc
            .into_iter()
            .flat_map(|base| {
                alts.iter().map(move |alt| {
                    let mut b = base.clone();
                    b.push(alt.clone());
                    b
                })
            })
            .collect();
    }
    acc
}

pub(crate) fn prepare(net: &Network, prop: &Property, cfg: &VerifierConfig) -> Result<Problem> {
    cfg.validate()?;
    let want_in = crate::dataset::INPUT_DIM;
    let want_out = crate::dataset::OUTPUT_STEPS;
    if net.input_dim() != want_in || net.output_dim() != want_out {
        return Err(VerifyError::Shape {
            inputs: net.input_dim(),
            outputs: net.output_dim(),
            want_in,
            want_out,
        });
    }
    let native = match prop.unit_mode {
        UnitMode::NetworkNative => prop.clone(),
        mode => {
            let scaler = net.input_scaler.as_ref().ok_or(VerifyError::NoScaler(mode))?;
            to_network_units(prop, scaler)?.0
        }
    };
    let queries = compile_with_limit(&native, cfg.clause_limit)?;
    let mut branches = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        for pre in lin_atoms(&q.pre, want_in) {
            for post in lin_atoms(&q.neg_post, want_out) {
                branches.push(Branch {
                    query: qi,
                    input_box: q.input_box.clone(),
                    pre: pre.clone(),
                    post,
                });
            }
        }
    }
    Ok(Problem {
        native,
        branches,
        queries: queries.len(),
    })
}

pub fn model_hash(net: &Network) -> String {
    model_to_string(net).map(|s| sha256_hex(s.as_bytes())).unwrap_or_default()
}

/// A concrete input that violates `native` (already in network units), with
/// its output, or `None`.
pub(crate) fn check_witness(net: &Network, native: &Property, box_: &[Interval], x: &[f64]) -> Option<Witness> {
    if !box_.iter().zip(x).all(|(iv, v)| iv.contains(*v)) {
        return None;
    }
    let y = net.forward_unchecked(x);
    if native.evaluate_concrete(x, &y) {
        return None;
    }
    Some(Witness {
        input: x.to_vec(),
        input_physical: net.input_scaler.as_ref().map(|s| s.invert(x)),
        output: y,
    })
}

/// True when no input in the box satisfies the precondition of any query.
pub(crate) fn is_vacuous(problem: &Problem, tol: f64) -> std::result::Result<bool, LpInstability> {
    let mut seen = Vec::new();
    for b in &problem.branches {
        if b.pre.is_empty() {
            return Ok(false);
        }
        if seen.contains(&(&b.pre, &b.input_box)) {
            continue;
        }
        seen.push((&b.pre, &b.input_box));
        let rows: Vec<Constraint> = b.pre.iter().map(|a| a.widened(0.0)).collect();
        if let LpOutcome::Feasible(_) = lp_feasible(&b.input_box, &rows, tol)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Falsification followed by branch-and-bound; see the module docs for the
/// meaning of each outcome.
pub fn verify(net: &Network, prop: &Property, cfg: &VerifierConfig) -> Result<Verdict> {
    let start = Instant::now();
    let problem = prepare(net, prop, cfg)?;
    let mut stats = VerifyStats {
        queries: problem.queries,
        branches: problem.branches.len(),
        ..Default::default()
    };
    let vacuous = match is_vacuous(&problem, cfg.lp_tolerance) {
        Ok(v) => v,
        Err(_) => false,
    };
    let outcome = search::run(net, &problem, cfg, start, &mut stats);
    stats.wall_time = start.elapsed().as_secs_f64();
    Ok(Verdict {
        property_id: prop.id.clone(),
        outcome,
        stats,
        config_hash: cfg.hash(),
        model_hash: model_hash(net),
        vacuous,
    })
}
