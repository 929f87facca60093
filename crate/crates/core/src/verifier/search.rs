use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bounds::{relaxed_bounds_within, BoundsResult};
use super::lp::{lp_feasible, Constraint, LpOutcome};
use super::oracle::{sign_pattern, Enumerator};
use super::{check_witness, prepare, Branch, Network, Outcome, Problem, Result, SplitHeuristic, VerifierConfig, VerifyStats, Witness};
use crate::property::{Interval, Property};

fn center(b: &[Interval]) -> Vec<f64> {
    b.iter().map(|iv| 0.5 * (iv.lo + iv.hi)).collect()
}

/// Smallest atom margin over the branch at `x`; positive inside the violation set.
fn score(net: &Network, br: &Branch, x: &[f64]) -> f64 {
    let y = net.forward_unchecked(x);
    br.pre
        .iter()
        .map(|a| a.margin(x))
        .chain(br.post.iter().map(|a| a.margin(&y)))
        .fold(f64::INFINITY, f64::min)
}

/// Uniform sampling with the box centre first, then coordinate ascent on the
/// violation margin from the best samples. Any witness returned violates the
/// property exactly.
pub fn falsify(net: &Network, prop: &Property, cfg: &VerifierConfig) -> Result<Option<Witness>> {
    let problem = prepare(net, prop, cfg)?;
    let mut n = 0;
    Ok(falsify_problem(net, &problem, cfg, &mut n))
}

pub(crate) fn falsify_problem(net: &Network, problem: &Problem, cfg: &VerifierConfig, drawn: &mut u64) -> Option<Witness> {
    let nb = problem.branches.len();
    if nb == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    const STARTS: usize = 4;
    // best (score, x) per branch
    let mut best: Vec<Vec<(f64, Vec<f64>)>> = vec![Vec::new(); nb];
    for s in 0..cfg.falsify_samples {
        let bi = (s % nb as u64) as usize;
        let br = &problem.branches[bi];
        let x = if s < nb as u64 {
            center(&br.input_box)
        } else {
            br.input_box.iter().map(|iv| if iv.hi > iv.lo { rng.gen_range(iv.lo..=iv.hi) } else { iv.lo }).collect()
        };
        *drawn += 1;
        if br.pre_holds(&x) {
            if let Some(w) = check_witness(net, &problem.native, &br.input_box, &x) {
                return Some(w);
            }
        }
        let sc = score(net, br, &x);
        let slot = &mut best[bi];
        if slot.len() < STARTS || sc > slot.last().unwrap().0 {
            slot.push((sc, x));
            slot.sort_by(|a, b| b.0.total_cmp(&a.0));
            slot.truncate(STARTS);
        }
    }
    for (bi, starts) in best.into_iter().enumerate() {
        let br = &problem.branches[bi];
        for (sc, x) in starts {
            if let Some(w) = descend(net, problem, br, x, sc, cfg.falsify_descent_steps) {
                return Some(w);
            }
        }
    }
    None
}

fn descend(net: &Network, problem: &Problem, br: &Branch, mut x: Vec<f64>, mut sc: f64, steps: u64) -> Option<Witness> {
    let free: Vec<usize> = (0..x.len()).filter(|&d| br.input_box[d].width() > 0.0).collect();
    if free.is_empty() {
        return None;
    }
    let mut step: Vec<f64> = br.input_box.iter().map(|iv| 0.25 * iv.width()).collect();
    for _ in 0..steps {
        let mut improved: Option<(f64, usize, f64)> = None;
        for &d in &free {
            for dir in [-1.0, 1.0] {
                let iv = br.input_box[d];
                let v = (x[d] + dir * step[d]).clamp(iv.lo, iv.hi);
                if v == x[d] {
                    continue;
                }
                let old = x[d];
                x[d] = v;
                let s = score(net, br, &x);
                x[d] = old;
                if s > improved.map_or(sc, |m| m.0) {
                    improved = Some((s, d, v));
                }
            }
        }
        match improved {
            Some((s, d, v)) => {
                x[d] = v;
                sc = s;
                if br.pre_holds(&x) {
                    if let Some(w) = check_witness(net, &problem.native, &br.input_box, &x) {
                        return Some(w);
                    }
                }
            }
            None => {
                let mut all_tiny = true;
                for &d in &free {
                    step[d] *= 0.5;
                    all_tiny &= step[d] < 1e-9 * br.input_box[d].width().max(1e-300);
                }
                if all_tiny {
                    break;
                }
            }
        }
    }
    None
}

enum BranchResult {
    Proved,
    Witness(Witness),
    Unknown(String),
}

struct Shared<'a> {
    net: &'a Network,
    problem: &'a Problem,
    cfg: &'a VerifierConfig,
    start: Instant,
    subproblems: AtomicU64,
    lp_calls: AtomicU64,
    max_depth: AtomicU64,
    stop: AtomicBool,
}

struct Node {
    input: Vec<Interval>,
    depth: u64,
    parent: Option<Arc<BoundsResult>>,
}

enum Step {
    Discharged,
    Witness(Witness),
    Split(Vec<Interval>, Vec<Interval>, Arc<BoundsResult>),
    Undecided(&'static str),
    Fail(String),
}

impl Shared<'_> {
    fn eps(&self) -> f64 {
        self.cfg.eps_strict
    }

    fn process(&self, br: &Branch, node: &Node) -> Step {
        let net = self.net;
        let eps = self.eps();
        // pre atoms over the box alone
        for a in &br.pre {
            let lo = a.constant + a.coef.iter().zip(&node.input).map(|(&c, iv)| if c >= 0.0 { c * iv.lo } else { c * iv.hi }).sum::<f64>();
            let hi = a.constant + a.coef.iter().zip(&node.input).map(|(&c, iv)| if c >= 0.0 { c * iv.hi } else { c * iv.lo }).sum::<f64>();
            if (a.cmp.is_upper() && lo > a.bound + eps) || (!a.cmp.is_upper() && hi < a.bound - eps) {
                return Step::Discharged;
            }
        }
        let bounds = relaxed_bounds_within(net, &node.input, node.parent.as_deref());
        let mut rows: Vec<Constraint> = br.pre.iter().map(|a| a.widened(eps)).collect();
        let mut impact = vec![0.0; node.input.len()];
        for a in &br.post {
            let range = bounds.linear_range(net, &a.coef);
            let (lo, hi) = (range.lo + a.constant, range.hi + a.constant);
            if (a.cmp.is_upper() && lo > a.bound + eps) || (!a.cmp.is_upper() && hi < a.bound - eps) {
                return Step::Discharged;
            }
            let (lower, upper) = bounds.linear_bounds(net, &a.coef);
            let (form, row) = if a.cmp.is_upper() {
                let r = Constraint::le(lower.coef.clone(), a.bound + eps - a.constant - lower.constant);
                (lower, r)
            } else {
                let r = Constraint::ge(upper.coef.clone(), a.bound - eps - a.constant - upper.constant);
                (upper, r)
            };
            for (s, c) in impact.iter_mut().zip(&form.coef) {
                *s += c.abs();
            }
            if row.coef.iter().any(|&c| c != 0.0) {
                rows.push(row);
            }
        }
        let mut candidates = vec![center(&node.input)];
        if !rows.is_empty() {
            self.lp_calls.fetch_add(1, Ordering::Relaxed);
            match lp_feasible(&node.input, &rows, self.cfg.lp_tolerance) {
                Ok(LpOutcome::Infeasible) => return Step::Discharged,
                Ok(LpOutcome::Feasible(p)) => candidates.insert(0, p),
                Err(_) => return Step::Fail("lp_instability".into()),
            }
        }
        for x in &candidates {
            if br.pre_holds(x) {
                if let Some(w) = check_witness(net, &self.problem.native, &br.input_box, x) {
                    return Step::Witness(w);
                }
            }
        }
        // few open ReLUs left: decide the node exactly
        if bounds.unstable_count(net) <= self.cfg.exact_node_relus {
            let fixed = sign_pattern(net, &bounds.layers);
            let mut e = Enumerator::new(net, self.problem, br, &node.input, self.cfg.lp_tolerance);
            e.widen = eps;
            let r = e.run(&fixed);
            self.lp_calls.fetch_add(e.lp_calls, Ordering::Relaxed);
            return match r {
                Ok(Some(w)) => Step::Witness(w),
                Ok(None) if e.boundary => Step::Undecided("tolerance"),
                Ok(None) => Step::Discharged,
                Err(()) => Step::Fail("lp_instability".into()),
            };
        }
        let widths: Vec<f64> = node.input.iter().map(|iv| iv.width()).collect();
        let widest = (0..widths.len()).fold(None, |best: Option<usize>, d| match best {
            Some(b) if widths[b] >= widths[d] => Some(b),
            _ if widths[d] > 0.0 => Some(d),
            b => b,
        });
        let Some(widest) = widest else {
            return Step::Undecided("tolerance");
        };
        let dim = match self.cfg.split_heuristic {
            SplitHeuristic::WidestDim => widest,
            SplitHeuristic::BoundsImpact => {
                for a in &br.pre {
                    for (s, c) in impact.iter_mut().zip(&a.coef) {
                        *s += c.abs();
                    }
                }
                let mut best = None;
                for d in 0..widths.len() {
                    let s = impact[d] * widths[d];
                    if s > 0.0 && best.map_or(true, |(_, bs)| s > bs) {
                        best = Some((d, s));
                    }
                }
                best.map_or(widest, |b| b.0)
            }
        };
        let iv = node.input[dim];
        if iv.width() <= 1e-9 * (1.0 + iv.lo.abs()) {
            return Step::Undecided("precision");
        }
        let mid = 0.5 * (iv.lo + iv.hi);
        let mut lo_box = node.input.clone();
        let mut hi_box = node.input.clone();
        lo_box[dim].hi = mid;
        hi_box[dim].lo = mid;
        Step::Split(lo_box, hi_box, Arc::new(bounds))
    }

    fn run_branch(&self, br: &Branch) -> BranchResult {
        let mut stack = vec![Node {
            input: br.input_box.clone(),
            depth: 0,
            parent: None,
        }];
        let mut undecided: Option<&'static str> = None;
        let timeout = self.cfg.timeout_secs;
        while let Some(node) = stack.pop() {
            if self.stop.load(Ordering::Relaxed) {
                return BranchResult::Unknown("stopped".into());
            }
            if self.subproblems.fetch_add(1, Ordering::Relaxed) >= self.cfg.max_subproblems {
                self.subproblems.fetch_sub(1, Ordering::Relaxed);
                return BranchResult::Unknown("max_subproblems".into());
            }
            if self.start.elapsed().as_secs_f64() > timeout {
                return BranchResult::Unknown("timeout".into());
            }
            self.max_depth.fetch_max(node.depth, Ordering::Relaxed);
            match self.process(br, &node) {
                Step::Discharged => {}
                Step::Witness(w) => return BranchResult::Witness(w),
                Step::Fail(r) => return BranchResult::Unknown(r),
                Step::Undecided(r) => undecided = undecided.or(Some(r)),
                Step::Split(lo, hi, bounds) => {
                    let depth = node.depth + 1;
                    stack.push(Node {
                        input: hi,
                        depth,
                        parent: Some(bounds.clone()),
                    });
                    stack.push(Node {
                        input: lo,
                        depth,
                        parent: Some(bounds),
                    });
                }
            }
        }
        match undecided {
            Some(r) => BranchResult::Unknown(r.into()),
            None => BranchResult::Proved,
        }
    }
}

pub(crate) fn run(net: &Network, problem: &Problem, cfg: &VerifierConfig, start: Instant, stats: &mut VerifyStats) -> Outcome {
    let mut drawn = 0;
    let found = falsify_problem(net, problem, cfg, &mut drawn);
    stats.falsify_samples = drawn;
    if let Some(w) = found {
        return Outcome::Counterexample(w);
    }
    let shared = Shared {
        net,
        problem,
        cfg,
        start,
        subproblems: AtomicU64::new(0),
        lp_calls: AtomicU64::new(0),
        max_depth: AtomicU64::new(0),
        stop: AtomicBool::new(false),
    };
    let results: Vec<BranchResult> = if cfg.workers <= 1 {
        let mut out = Vec::new();
        for br in &problem.branches {
            let r = shared.run_branch(br);
            let done = matches!(&r, BranchResult::Witness(_)) || matches!(&r, BranchResult::Unknown(s) if s == "lp_instability");
            out.push(r);
            if done {
                break;
            }
        }
        out
    } else {
        let slots: Mutex<Vec<Option<BranchResult>>> = Mutex::new((0..problem.branches.len()).map(|_| None).collect());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build();
        let work = || {
            use rayon::prelude::*;
            problem.branches.par_iter().enumerate().for_each(|(i, br)| {
                let r = shared.run_branch(br);
                if matches!(r, BranchResult::Witness(_)) {
                    shared.stop.store(true, Ordering::Relaxed);
                }
                slots.lock().unwrap()[i] = Some(r);
            })
        };
        match pool {
            Ok(p) => p.install(work),
            Err(_) => work(),
        }
        slots.into_inner().unwrap().into_iter().flatten().collect()
    };
    stats.subproblems = shared.subproblems.load(Ordering::Relaxed);
    stats.lp_calls = shared.lp_calls.load(Ordering::Relaxed);
    stats.max_depth = shared.max_depth.load(Ordering::Relaxed);

    let mut unknown: Option<String> = None;
    for r in results {
        match r {
            BranchResult::Witness(w) => return Outcome::Counterexample(w),
            BranchResult::Unknown(s) if s != "stopped" => {
                // instability outranks budget reasons
                if unknown.is_none() || s == "lp_instability" {
                    unknown = Some(s);
                }
            }
            _ => {}
        }
    }
    match unknown {
        Some(r) => Outcome::Unknown(r),
        None => Outcome::Proved,
    }
}
