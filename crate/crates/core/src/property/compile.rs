//! Reduction of a property to a list of violation queries.
//!
//! The violation set `{x in box : pre(x) && !post(N(x))}` is the union of
//! `DNF(pre) x DNF(!post)`. Inside each query an `|e| <= c` atom becomes the
//! pair `e <= c, -e <= c`; an `|e| >= c` atom stays whole and stands for the
//! disjunction `e >= c || -e >= c`, which the verifier splits itself.

use serde::{Deserialize, Serialize};

use super::{AffineAtom, Formula, Interval, Property, PropertyError, Result};

pub const DEFAULT_CLAUSE_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub input_box: Vec<Interval>,
    /// Conjunction over inputs.
    pub pre: Vec<AffineAtom>,
    /// Conjunction over outputs; satisfied means the property is violated.
    pub neg_post: Vec<AffineAtom>,
}

impl Query {
    /// Exact membership in the query's constraint set.
    pub fn satisfied(&self, x: &[f64], y: &[f64]) -> bool {
        self.input_box.iter().zip(x).all(|(iv, &v)| iv.contains(v))
            && self.pre.iter().all(|a| a.holds(x, y))
            && self.neg_post.iter().all(|a| a.holds(x, y))
    }

    /// Membership with every bound loosened by `eps` (strict comparators
    /// treated as non-strict).
    pub fn satisfied_relaxed(&self, x: &[f64], y: &[f64], eps: f64) -> bool {
        self.input_box.iter().zip(x).all(|(iv, &v)| iv.lo - eps <= v && v <= iv.hi + eps)
            && self.pre.iter().chain(&self.neg_post).all(|a| a.margin(x, y) >= -eps)
    }
}

pub fn compile(prop: &Property) -> Result<Vec<Query>> {
    compile_with_limit(prop, DEFAULT_CLAUSE_LIMIT)
}

pub fn compile_with_limit(prop: &Property, limit: usize) -> Result<Vec<Query>> {
    prop.validate()?;
    let neg_post = prop.post.negated();
    let needed = clause_count(&prop.pre).saturating_mul(clause_count(&neg_post));
    if needed > limit {
        return Err(PropertyError::ClauseLimit { needed, limit });
    }
    let input_box = prop.input_box.resolved();
    let pre_clauses = dnf(&prop.pre);
    let post_clauses = dnf(&neg_post);
    let mut out = Vec::with_capacity(needed);
    for p in &pre_clauses {
        for q in &post_clauses {
            out.push(Query {
                input_box: input_box.clone(),
                pre: p.clone(),
                neg_post: q.clone(),
            });
        }
    }
    Ok(out)
}

fn clause_count(f: &Formula) -> usize {
    match f {
        Formula::Atom(_) => 1,
        Formula::And(v) => v.iter().fold(1usize, |acc, g| acc.saturating_mul(clause_count(g))),
        Formula::Or(v) => v.iter().fold(0usize, |acc, g| acc.saturating_add(clause_count(g))),
    }
}

fn expand_atom(a: &AffineAtom) -> Vec<AffineAtom> {
    if a.abs && a.comparator.is_upper() {
        let pos = AffineAtom { abs: false, ..a.clone() };
        let neg = AffineAtom {
            expr: a.expr.negated(),
            abs: false,
            ..a.clone()
        };
        vec![pos, neg]
    } else {
        vec![a.clone()]
    }
}

fn dnf(f: &Formula) -> Vec<Vec<AffineAtom>> {
    match f {
        Formula::Atom(a) => vec![expand_atom(a)],
        Formula::Or(v) => v.iter().flat_map(dnf).collect(),
        Formula::And(v) => {
            let mut acc: Vec<Vec<AffineAtom>> = vec![Vec::new()];
            for g in v {
                let rhs = dnf(g);
                let mut next = Vec::with_capacity(acc.len() * rhs.len());
                for a in &acc {
                    for b in &rhs {
                        let mut c = a.clone();
                        c.extend(b.iter().cloned());
                        next.push(c);
                    }
                }
                acc = next;
            }
            acc
        }
    }
}
