//! Text form of properties.
//!
//! ```text
//! property ML-RQ1.2 {
//!   box BG_in[*]=[180,183]; In_in[*]=0.006525; M_in[0..10]=0; M_in[11]=20;
//!   pre: M_in[11] >= beta1 || M_in[10] >= beta1;
//!   post: BG_out[5] > 200;
//!   thresholds: beta1=20;
//!   units: mixed;
//! }
//! ```
//!
//! Grammar:
//!
//! ```text
//! property  := "property" ID "{" section* "}"
//! section   := "box" [":"] (SEL "=" VAL ";")*
//!            | "pre:" formula ";" | "post:" formula ";"
//!            | "thresholds:" [NAME "=" NUM ("," NAME "=" NUM)*] ";"
//!            | "units:" ("native" | "physical" | "mixed") ";"
//! SEL       := CHANNEL "[" ("*" | INT | INT ".." INT) "]"      ranges are inclusive
//! VAL       := NUM | "[" NUM "," NUM "]"
//! formula   := conj ("||" conj)*
//! conj      := prim ("&&" prim)*
//! prim      := "(" formula ")" | "true" | "false" | atom
//! atom      := (expr | "|" expr "|") ("<=" | ">=" | "<" | ">") (NUM | NAME)
//! expr      := ["-"] term (("+" | "-") term)*
//! term      := NUM ["*" VAR] | VAR
//! VAR       := CHANNEL "[" INT "]"
//! ```
//!
//! `CHANNEL` is one of `BG_in`, `In_in`, `M_in`, `BG_out`; indices are 0-based.
//! A bound written as a name refers to the `thresholds` section. Box entries
//! that are never assigned default to `[0,1]` in network units; later
//! assignments override earlier ones. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{
    AffineAtom, BoxSpec, Channel, Comparator, Formula, Interval, LinExpr, Property, PropertyError, Result, Term, UnitMode, VarRef,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

type PResult<T> = std::result::Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn error<T>(&self, at: usize, message: impl Into<String>) -> PResult<T> {
        let before = &self.src[..at];
        let line = before.matches('\n').count() + 1;
        let column = before.rfind('\n').map_or(at, |nl| at - nl - 1) + 1;
        Err(ParseError {
            line,
            column,
            message: message.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        loop {
            let r = self.rest();
            let trimmed = r.trim_start();
            self.pos += r.len() - trimmed.len();
            if trimmed.starts_with('#') {
                self.pos += trimmed.find('\n').unwrap_or(trimmed.len());
            } else {
                break;
            }
        }
    }

    fn peek_is(&mut self, tok: &str) -> bool {
        self.skip_ws();
        self.rest().starts_with(tok)
    }

    fn eat(&mut self, tok: &str) -> bool {
        if self.peek_is(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> PResult<()> {
        if self.eat(tok) {
            Ok(())
        } else {
            let found: String = self.rest().chars().take(12).collect();
            self.error(self.pos, format!("expected `{tok}`, found `{found}`"))
        }
    }

    fn peek_ident(&mut self) -> Option<&'a str> {
        self.skip_ws();
        let r = self.rest();
        let first = r.chars().next()?;
        if !(first.is_ascii_alphabetic() || first == '_') {
            return None;
        }
        let end = r.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(r.len());
        Some(&r[..end])
    }

    fn ident(&mut self) -> PResult<&'a str> {
        match self.peek_ident() {
            Some(id) => {
                self.pos += id.len();
                Ok(id)
            }
            None => self.error(self.pos, "expected a name"),
        }
    }

    fn word(&mut self) -> PResult<&'a str> {
        self.skip_ws();
        let r = self.rest();
        let end = r.find(|c: char| c.is_whitespace() || c == '{').unwrap_or(r.len());
        if end == 0 {
            return self.error(self.pos, "expected a property id");
        }
        self.pos += end;
        Ok(&r[..end])
    }

    fn unsigned(&mut self) -> PResult<f64> {
        self.skip_ws();
        let r = self.rest().as_bytes();
        let mut i = 0;
        let digits = |i: &mut usize| {
            let s = *i;
            while *i < r.len() && r[*i].is_ascii_digit() {
                *i += 1;
            }
            *i > s
        };
        if !digits(&mut i) {
            return self.error(self.pos, "expected a number");
        }
        if i + 1 < r.len() && r[i] == b'.' && r[i + 1].is_ascii_digit() {
            i += 1;
            digits(&mut i);
        }
        if i < r.len() && (r[i] == b'e' || r[i] == b'E') {
            let mut j = i + 1;
            if j < r.len() && (r[j] == b'+' || r[j] == b'-') {
                j += 1;
            }
            if digits(&mut j) {
                i = j;
            }
        }
        let text = &self.rest()[..i];
        let start = self.pos;
        self.pos += i;
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => self.error(start, format!("invalid number `{text}`")),
        }
    }

    fn number(&mut self) -> PResult<f64> {
        let neg = self.eat("-");
        let v = self.unsigned()?;
        Ok(if neg { -v } else { v })
    }

    fn index(&mut self) -> PResult<usize> {
        self.skip_ws();
        let start = self.pos;
        let v = self.unsigned()?;
        if v.fract() != 0.0 || v < 0.0 {
            return self.error(start, "expected an integer index");
        }
        Ok(v as usize)
    }

    fn channel(&mut self) -> PResult<Channel> {
        self.skip_ws();
        let start = self.pos;
        let name = self.ident()?;
        match Channel::from_name(name) {
            Some(c) => Ok(c),
            None => self.error(start, format!("unknown channel `{name}`")),
        }
    }

    fn var(&mut self) -> PResult<VarRef> {
        let ch = self.channel()?;
        self.expect("[")?;
        let at = self.pos;
        let i = self.index()?;
        if i >= ch.len() {
            return self.error(at, format!("index {i} out of range for {}", ch.name()));
        }
        self.expect("]")?;
        Ok(VarRef::new(ch, i))
    }

    fn selector(&mut self) -> PResult<Vec<VarRef>> {
        self.skip_ws();
        let at = self.pos;
        let ch = self.channel()?;
        if !ch.is_input() {
            return self.error(at, "box entries must name input channels");
        }
        self.expect("[")?;
        let (a, b) = if self.eat("*") {
            (0, ch.len() - 1)
        } else {
            let a = self.index()?;
            let b = if self.eat("..") { self.index()? } else { a };
            (a, b)
        };
        if a > b || b >= ch.len() {
            return self.error(at, format!("invalid index range {a}..{b} for {}", ch.name()));
        }
        self.expect("]")?;
        Ok((a..=b).map(|i| VarRef::new(ch, i)).collect())
    }

    fn interval(&mut self) -> PResult<Interval> {
        if self.eat("[") {
            let lo = self.number()?;
            self.expect(",")?;
            let hi = self.number()?;
            self.expect("]")?;
            Ok(Interval::new(lo, hi))
        } else {
            Ok(Interval::point(self.number()?))
        }
    }

    fn expr(&mut self) -> PResult<LinExpr> {
        let mut e = LinExpr::default();
        let mut sign = if self.eat("-") { -1.0 } else { 1.0 };
        loop {
            self.skip_ws();
            if self.rest().starts_with(|c: char| c.is_ascii_digit()) {
                let c = self.unsigned()?;
                if self.eat("*") {
                    let var = self.var()?;
                    e.terms.push(Term { coef: sign * c, var });
                } else {
                    e.constant += sign * c;
                }
            } else {
                let var = self.var()?;
                e.terms.push(Term { coef: sign, var });
            }
            if self.eat("+") {
                sign = 1.0;
            } else if self.peek_is("-") {
                self.pos += 1;
                sign = -1.0;
            } else {
                return Ok(e);
            }
        }
    }

    fn comparator(&mut self) -> PResult<Comparator> {
        for (tok, c) in [("<=", Comparator::Le), (">=", Comparator::Ge), ("<", Comparator::Lt), (">", Comparator::Gt)] {
            if self.eat(tok) {
                return Ok(c);
            }
        }
        self.error(self.pos, "expected a comparison operator")
    }

    fn atom(&mut self) -> PResult<AffineAtom> {
        self.skip_ws();
        let abs = self.rest().starts_with('|') && !self.rest().starts_with("||");
        if abs {
            self.pos += 1;
        }
        let expr = self.expr()?;
        if abs {
            self.expect("|")?;
        }
        let comparator = self.comparator()?;
        self.skip_ws();
        let (bound, threshold) = match self.peek_ident() {
            Some(_) => (f64::NAN, Some(self.ident()?.to_string())),
            None => (self.number()?, None),
        };
        Ok(AffineAtom {
            expr,
            comparator,
            bound,
            abs,
            threshold,
        })
    }

    fn prim(&mut self) -> PResult<Formula> {
        if self.eat("(") {
            let f = self.formula()?;
            self.expect(")")?;
            return Ok(f);
        }
        match self.peek_ident() {
            Some("true") => {
                self.pos += 4;
                Ok(Formula::And(Vec::new()))
            }
            Some("false") => {
                self.pos += 5;
                Ok(Formula::Or(Vec::new()))
            }
            _ => Ok(Formula::Atom(self.atom()?)),
        }
    }

    fn conj(&mut self) -> PResult<Formula> {
        let mut parts = vec![self.prim()?];
        while self.eat("&&") {
            parts.push(self.prim()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::And(parts) })
    }

    fn formula(&mut self) -> PResult<Formula> {
        let mut parts = vec![self.conj()?];
        while self.eat("||") {
            parts.push(self.conj()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::Or(parts) })
    }
}

fn resolve(f: &mut Formula, thresholds: &BTreeMap<String, f64>, id: &str) -> Result<()> {
    match f {
        Formula::Atom(a) => {
            if let Some(name) = &a.threshold {
                a.bound = *thresholds.get(name).ok_or_else(|| PropertyError::MissingThreshold {
                    id: id.to_string(),
                    name: name.clone(),
                })?;
            }
            Ok(())
        }
        Formula::And(v) | Formula::Or(v) => v.iter_mut().try_for_each(|g| resolve(g, thresholds, id)),
    }
}

pub fn parse_dsl(text: &str) -> Result<Property> {
    let mut p = Parser { src: text, pos: 0 };
    if p.peek_ident() != Some("property") {
        return Err(p.error::<()>(p.pos, "expected `property`").unwrap_err().into());
    }
    p.pos += "property".len();
    let id = p.word()?.to_string();
    p.expect("{")?;
    let mut input_box = BoxSpec::default();
    let mut pre = Formula::truth();
    let mut post = None;
    let mut thresholds = BTreeMap::new();
    let mut unit_mode = UnitMode::Mixed;
    while !p.eat("}") {
        p.skip_ws();
        let at = p.pos;
        match p.peek_ident() {
            Some("box") => {
                p.pos += 3;
                p.eat(":");
                while matches!(p.peek_ident(), Some(n) if Channel::from_name(n).is_some()) {
                    let vars = p.selector()?;
                    p.expect("=")?;
                    let iv = p.interval()?;
                    p.expect(";")?;
                    for v in vars {
                        input_box.set(v, iv);
                    }
                }
            }
            Some(kw @ ("pre" | "post")) => {
                p.pos += kw.len();
                p.expect(":")?;
                let f = p.formula()?;
                p.expect(";")?;
                if kw == "pre" {
                    pre = f;
                } else {
                    post = Some(f);
                }
            }
            Some("thresholds") => {
                p.pos += "thresholds".len();
                p.expect(":")?;
                if p.peek_ident().is_some() {
                    loop {
                        let name = p.ident()?.to_string();
                        p.expect("=")?;
                        thresholds.insert(name, p.number()?);
                        if !p.eat(",") {
                            break;
                        }
                    }
                }
                p.expect(";")?;
            }
            Some("units") => {
                p.pos += "units".len();
                p.expect(":")?;
                let kw_at = p.pos;
                let kw = p.ident()?;
                unit_mode = match UnitMode::from_keyword(kw) {
                    Some(m) => m,
                    None => return Err(p.error::<()>(kw_at, format!("unknown unit mode `{kw}`")).unwrap_err().into()),
                };
                p.expect(";")?;
            }
            _ if p.rest().is_empty() => return Err(p.error::<()>(at, "unexpected end of input, missing `}`").unwrap_err().into()),
            _ => return Err(p.error::<()>(at, "expected `box`, `pre`, `post`, `thresholds`, `units` or `}`").unwrap_err().into()),
        }
    }
    p.skip_ws();
    if !p.rest().is_empty() {
        return Err(p.error::<()>(p.pos, "trailing input after `}`").unwrap_err().into());
    }
    let Some(mut post) = post else {
        return Err(p.error::<()>(p.pos, "property has no `post` section").unwrap_err().into());
    };
    resolve(&mut pre, &thresholds, &id)?;
    resolve(&mut post, &thresholds, &id)?;
    let prop = Property {
        id,
        input_box,
        pre,
        post,
        thresholds,
        unit_mode,
    };
    prop.validate()?;
    Ok(prop)
}

fn render_expr(e: &LinExpr, out: &mut String) {
    for (i, t) in e.terms.iter().enumerate() {
        let neg = t.coef < 0.0;
        let mag = t.coef.abs();
        if i == 0 {
            if neg {
                out.push('-');
            }
        } else {
            out.push_str(if neg { " - " } else { " + " });
        }
        if mag != 1.0 {
            let _ = write!(out, "{mag}*");
        }
        let _ = write!(out, "{}", t.var);
    }
    if e.constant != 0.0 {
        let _ = write!(out, " {} {}", if e.constant < 0.0 { "-" } else { "+" }, e.constant.abs());
    }
}

fn render_atom(a: &AffineAtom, out: &mut String) {
    if a.abs {
        out.push('|');
    }
    render_expr(&a.expr, out);
    if a.abs {
        out.push('|');
    }
    let _ = write!(out, " {} ", a.comparator.symbol());
    match &a.threshold {
        Some(name) => out.push_str(name),
        None => {
            let _ = write!(out, "{}", a.bound);
        }
    }
}

fn render_formula(f: &Formula, out: &mut String) {
    match f {
        Formula::Atom(a) => render_atom(a, out),
        Formula::And(v) if v.is_empty() => out.push_str("true"),
        Formula::Or(v) if v.is_empty() => out.push_str("false"),
        Formula::And(v) | Formula::Or(v) => {
            let sep = if matches!(f, Formula::And(_)) { " && " } else { " || " };
            for (i, g) in v.iter().enumerate() {
                if i > 0 {
                    out.push_str(sep);
                }
                let wrap = matches!(g, Formula::And(w) | Formula::Or(w) if !w.is_empty());
                if wrap {
                    out.push('(');
                }
                render_formula(g, out);
                if wrap {
                    out.push(')');
                }
            }
        }
    }
}

fn render_box(b: &BoxSpec, out: &mut String) {
    let mut entries = Vec::new();
    for ch in Channel::INPUTS {
        let mut i = 0;
        while i < ch.len() {
            let cur = b.get(VarRef::new(ch, i));
            let mut j = i;
            while j + 1 < ch.len() && b.get(VarRef::new(ch, j + 1)) == cur {
                j += 1;
            }
            if let Some(iv) = cur {
                let sel = if i == 0 && j == ch.len() - 1 {
                    "*".to_string()
                } else if i == j {
                    i.to_string()
                } else {
                    format!("{i}..{j}")
                };
                let val = if iv.lo == iv.hi {
                    format!("{}", iv.lo)
                } else {
                    format!("[{},{}]", iv.lo, iv.hi)
                };
                entries.push(format!("{}[{sel}]={val};", ch.name()));
            }
            i = j + 1;
        }
    }
    if !entries.is_empty() {
        let _ = writeln!(out, "  box {}", entries.join(" "));
    }
}

/// Canonical text of `prop`; `parse_dsl(render_dsl(p)) == p` for properties
/// whose and/or nodes never have exactly one child.
pub fn render_dsl(prop: &Property) -> String {
    let mut out = format!("property {} {{\n", prop.id);
    render_box(&prop.input_box, &mut out);
    if prop.pre != Formula::truth() {
        out.push_str("  pre: ");
        render_formula(&prop.pre, &mut out);
        out.push_str(";\n");
    }
    out.push_str("  post: ");
    render_formula(&prop.post, &mut out);
    out.push_str(";\n");
    if !prop.thresholds.is_empty() {
        let list: Vec<String> = prop.thresholds.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "  thresholds: {};", list.join(", "));
    }
    let _ = writeln!(out, "  units: {};", prop.unit_mode.keyword());
    out.push_str("}\n");
    out
}
