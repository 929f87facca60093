//! Implication properties over network inputs and outputs.
//!
//! A [`Property`] reads `box(x) && pre(x) => post(N(x))`, where `pre` and `post`
//! are and/or trees of affine atoms. Inputs use the channel-major layout of
//! [`crate::dataset`]; outputs are the six predicted BG values in mg/dL.

mod compile;
mod dsl;
mod templates;
mod units;

pub use compile::{compile, compile_with_limit, Query, DEFAULT_CLAUSE_LIMIT};
pub use dsl::{parse_dsl, render_dsl, ParseError};
pub use templates::{instantiate, reference_queries, required_thresholds, ReferenceQuery, TEMPLATE_IDS};
pub use units::{to_network_units, UnitNote};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{INPUT_DIM, INPUT_STEPS, OUTPUT_STEPS};

#[derive(Debug, Error, PartialEq)]
pub enum PropertyError {
    #[error("unknown property template `{0}`")]
    UnknownTemplate(String),
    #[error("{id} is not supported: {reason}")]
    NotSupported { id: String, reason: String },
    #[error("missing threshold `{name}` for {id}")]
    MissingThreshold { id: String, name: String },
    #[error("invalid property: {0}")]
    Invalid(String),
    #[error("compiled form needs {needed} clauses, above the limit of {limit}")]
    ClauseLimit { needed: usize, limit: usize },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

pub type Result<T> = std::result::Result<T, PropertyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    BgIn,
    InIn,
    MIn,
    BgOut,
}

impl Channel {
    pub const INPUTS: [Channel; 3] = [Channel::BgIn, Channel::InIn, Channel::MIn];

    pub fn name(self) -> &'static str {
        match self {
            Channel::BgIn => "BG_in",
            Channel::InIn => "In_in",
            Channel::MIn => "M_in",
            Channel::BgOut => "BG_out",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Channel::BgIn, Channel::InIn, Channel::MIn, Channel::BgOut].into_iter().find(|c| c.name() == s)
    }

    pub fn len(self) -> usize {
        match self {
            Channel::BgOut => OUTPUT_STEPS,
            _ => INPUT_STEPS,
        }
    }

    pub fn is_input(self) -> bool {
        self != Channel::BgOut
    }

    fn offset(self) -> usize {
        match self {
            Channel::BgIn | Channel::BgOut => 0,
            Channel::InIn => INPUT_STEPS,
            Channel::MIn => 2 * INPUT_STEPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarRef {
    pub channel: Channel,
    pub index: usize,
}

impl VarRef {
    pub fn new(channel: Channel, index: usize) -> Self {
        Self { channel, index }
    }

    pub fn bg_in(i: usize) -> Self {
        Self::new(Channel::BgIn, i)
    }

    pub fn in_in(i: usize) -> Self {
        Self::new(Channel::InIn, i)
    }

    pub fn m_in(i: usize) -> Self {
        Self::new(Channel::MIn, i)
    }

    pub fn bg_out(j: usize) -> Self {
        Self::new(Channel::BgOut, j)
    }

    /// Position in the network input vector, or in the output vector for `BG_out`.
    pub fn position(self) -> usize {
        self.channel.offset() + self.index
    }

    pub fn from_input_position(k: usize) -> Self {
        let ch = Channel::INPUTS[k / INPUT_STEPS];
        Self::new(ch, k % INPUT_STEPS)
    }

    pub fn is_valid(self) -> bool {
        self.index < self.channel.len()
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.channel.name(), self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    Le,
    Ge,
    Lt,
    Gt,
}

impl Comparator {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Le => lhs <= rhs,
            Comparator::Ge => lhs >= rhs,
            Comparator::Lt => lhs < rhs,
            Comparator::Gt => lhs > rhs,
        }
    }

    pub fn negate(self) -> Self {
        match self {
            Comparator::Le => Comparator::Gt,
            Comparator::Ge => Comparator::Lt,
            Comparator::Lt => Comparator::Ge,
            Comparator::Gt => Comparator::Le,
        }
    }

    pub fn is_strict(self) -> bool {
        matches!(self, Comparator::Lt | Comparator::Gt)
    }

    /// True for `<=` and `<`.
    pub fn is_upper(self) -> bool {
        matches!(self, Comparator::Le | Comparator::Lt)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Le => "<=",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    pub var: VarRef,
}

/// `sum(coef * var) + constant`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<Term>,
    pub constant: f64,
}

impl LinExpr {
    pub fn var(v: VarRef) -> Self {
        Self {
            terms: vec![Term { coef: 1.0, var: v }],
            constant: 0.0,
        }
    }

    /// `a - b`
    pub fn diff(a: VarRef, b: VarRef) -> Self {
        Self {
            terms: vec![Term { coef: 1.0, var: a }, Term { coef: -1.0, var: b }],
            constant: 0.0,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let v = if t.var.channel.is_input() { x[t.var.position()] } else { y[t.var.position()] };
                t.coef * v
            })
            .sum::<f64>()
            + self.constant
    }

    pub fn negated(&self) -> Self {
        Self {
            terms: self.terms.iter().map(|t| Term { coef: -t.coef, var: t.var }).collect(),
            constant: -self.constant,
        }
    }

    pub fn over_inputs(&self) -> bool {
        self.terms.iter().all(|t| t.var.channel.is_input())
    }

    pub fn over_outputs(&self) -> bool {
        self.terms.iter().all(|t| !t.var.channel.is_input())
    }

    /// Dense coefficient vector of length `dim` and the constant.
    pub fn dense(&self, dim: usize) -> (Vec<f64>, f64) {
        let mut c = vec![0.0; dim];
        for t in &self.terms {
            c[t.var.position()] += t.coef;
        }
        (c, self.constant)
    }
}

/// `expr cmp bound`, or `|expr| cmp bound` when `abs` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineAtom {
    pub expr: LinExpr,
    pub comparator: Comparator,
    pub bound: f64,
    pub abs: bool,
    /// Name of the threshold the bound was taken from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<String>,
}

impl AffineAtom {
    pub fn new(expr: LinExpr, comparator: Comparator, bound: f64) -> Self {
        Self {
            expr,
            comparator,
            bound,
            abs: false,
            threshold: None,
        }
    }

    pub fn abs(expr: LinExpr, comparator: Comparator, bound: f64) -> Self {
        Self { abs: true, ..Self::new(expr, comparator, bound) }
    }

    pub fn with_threshold(mut self, name: &str) -> Self {
        self.threshold = Some(name.to_string());
        self
    }

    pub fn holds(&self, x: &[f64], y: &[f64]) -> bool {
        let v = self.expr.eval(x, y);
        self.comparator.holds(if self.abs { v.abs() } else { v }, self.bound)
    }

    pub fn negated(&self) -> Self {
        Self {
            comparator: self.comparator.negate(),
            ..self.clone()
        }
    }

    /// `|e| >= c` or `|e| > c`: a two-way disjunction `e >= c || -e >= c`.
    pub fn is_abs_outside(&self) -> bool {
        self.abs && !self.comparator.is_upper()
    }

    /// Signed slack: positive when satisfied with margin, negative when violated.
    /// Strictness is ignored.
    pub fn margin(&self, x: &[f64], y: &[f64]) -> f64 {
        let v = self.expr.eval(x, y);
        let v = if self.abs { v.abs() } else { v };
        if self.comparator.is_upper() {
            self.bound - v
        } else {
            v - self.bound
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Formula {
    Atom(AffineAtom),
    /// Empty conjunction is `true`.
    And(Vec<Formula>),
    /// Empty disjunction is `false`.
    Or(Vec<Formula>),
}

impl Formula {
    pub fn truth() -> Self {
        Formula::And(Vec::new())
    }

    /// Conjunction, flattening nested conjunctions and unwrapping singletons.
    pub fn and(parts: Vec<Formula>) -> Self {
        let mut flat = Vec::new();
        for p in parts {
            match p {
                Formula::And(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Formula::And(flat)
        }
    }

    /// Disjunction, flattening nested disjunctions and unwrapping singletons.
    pub fn or(parts: Vec<Formula>) -> Self {
        let mut flat = Vec::new();
        for p in parts {
            match p {
                Formula::Or(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Formula::Or(flat)
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> bool {
        match self {
            Formula::Atom(a) => a.holds(x, y),
            Formula::And(v) => v.iter().all(|f| f.eval(x, y)),
            Formula::Or(v) => v.iter().any(|f| f.eval(x, y)),
        }
    }

    /// Pushes a negation to the atoms (De Morgan, comparator flips).
    pub fn negated(&self) -> Self {
        match self {
            Formula::Atom(a) => Formula::Atom(a.negated()),
            Formula::And(v) => Formula::Or(v.iter().map(Formula::negated).collect()),
            Formula::Or(v) => Formula::And(v.iter().map(Formula::negated).collect()),
        }
    }

    pub fn atoms(&self) -> Vec<&AffineAtom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a AffineAtom>) {
        match self {
            Formula::Atom(a) => out.push(a),
            Formula::And(v) | Formula::Or(v) => v.iter().for_each(|f| f.collect_atoms(out)),
        }
    }

    pub fn map_atoms(&self, f: &mut impl FnMut(&AffineAtom) -> AffineAtom) -> Formula {
        match self {
            Formula::Atom(a) => Formula::Atom(f(a)),
            Formula::And(v) => Formula::And(v.iter().map(|g| g.map_atoms(f)).collect()),
            Formula::Or(v) => Formula::Or(v.iter().map(|g| g.map_atoms(f)).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Per-input intervals as written in a property. A missing entry means the
/// full training range, `[0, 1]` in network units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub dims: Vec<Option<Interval>>,
}

impl Default for BoxSpec {
    fn default() -> Self {
        Self { dims: vec![None; INPUT_DIM] }
    }
}

impl BoxSpec {
    /// The same interval on every step of each input channel.
    pub fn uniform(bg: Interval, insulin: Interval, meal: Interval) -> Self {
        let mut b = Self::default();
        b.set_channel(Channel::BgIn, bg);
        b.set_channel(Channel::InIn, insulin);
        b.set_channel(Channel::MIn, meal);
        b
    }

    pub fn set(&mut self, v: VarRef, iv: Interval) -> &mut Self {
        self.dims[v.position()] = Some(iv);
        self
    }

    pub fn set_channel(&mut self, ch: Channel, iv: Interval) -> &mut Self {
        for i in 0..ch.len() {
            self.set(VarRef::new(ch, i), iv);
        }
        self
    }

    pub fn get(&self, v: VarRef) -> Option<Interval> {
        self.dims[v.position()]
    }

    /// Concrete box with missing entries replaced by `[0, 1]`.
    pub fn resolved(&self) -> Vec<Interval> {
        self.dims.iter().map(|d| d.unwrap_or_else(Interval::unit)).collect()
    }

    /// Membership over the entries that are present.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.dims.iter().zip(x).all(|(d, &v)| d.map_or(true, |iv| iv.contains(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitMode {
    /// All input values are in scaled network units.
    NetworkNative,
    /// All input values are physical (mg/dL, U, g) and go through the scaler.
    Physical,
    /// Values with magnitude above 1 are physical, the rest network units.
    Mixed,
}

impl UnitMode {
    pub fn keyword(self) -> &'static str {
        match self {
            UnitMode::NetworkNative => "native",
            UnitMode::Physical => "physical",
            UnitMode::Mixed => "mixed",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "native" => Some(UnitMode::NetworkNative),
            "physical" => Some(UnitMode::Physical),
            "mixed" => Some(UnitMode::Mixed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Property {
    pub id: String,
    pub input_box: BoxSpec,
    pub pre: Formula,
    pub post: Formula,
    pub thresholds: BTreeMap<String, f64>,
    pub unit_mode: UnitMode,
}

impl Property {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PropertyError::Invalid(format!("{}: {m}", self.id)));
        if self.input_box.dims.len() != INPUT_DIM {
            return bad(format!("box has {} entries, expected {INPUT_DIM}", self.input_box.dims.len()));
        }
        for (k, d) in self.input_box.dims.iter().enumerate() {
            if let Some(iv) = d {
                if !(iv.lo.is_finite() && iv.hi.is_finite() && iv.lo <= iv.hi) {
                    return bad(format!("box entry {} is not a finite interval with lo <= hi", VarRef::from_input_position(k)));
                }
            }
        }
        for (section, f, want_input) in [("pre", &self.pre, true), ("post", &self.post, false)] {
            for a in f.atoms() {
                if a.expr.terms.is_empty() {
                    return bad(format!("{section} atom without variables"));
                }
                for t in &a.expr.terms {
                    if !t.var.is_valid() {
                        return bad(format!("variable {} out of range", t.var));
                    }
                    if t.var.channel.is_input() != want_input {
                        return bad(format!("{section} refers to {}", t.var));
                    }
                    if !t.coef.is_finite() {
                        return bad(format!("non-finite coefficient on {}", t.var));
                    }
                }
                if !(a.bound.is_finite() && a.expr.constant.is_finite()) {
                    return bad(format!("non-finite bound in {section}"));
                }
                if let Some(name) = &a.threshold {
                    match self.thresholds.get(name) {
                        None => {
                            return Err(PropertyError::MissingThreshold {
                                id: self.id.clone(),
                                name: name.clone(),
                            })
                        }
                        Some(&v) if v != a.bound => return bad(format!("atom bound {} disagrees with {name}={v}", a.bound)),
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    /// `box(x) && pre(x) => post(y)`; a point outside the box or failing `pre`
    /// satisfies the property vacuously.
    pub fn evaluate_concrete(&self, x: &[f64], y: &[f64]) -> bool {
        !(self.input_box.contains(x) && self.pre.eval(x, y)) || self.post.eval(x, y)
    }
}

/// Free-function form of [`Property::evaluate_concrete`].
pub fn evaluate_concrete(prop: &Property, x: &[f64], y: &[f64]) -> bool {
    prop.evaluate_concrete(x, y)
}
