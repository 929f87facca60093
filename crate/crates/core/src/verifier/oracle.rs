//! Exhaustive check for small networks: every activation pattern of the
//! unstable ReLUs is visited depth-first, pruned by LP feasibility, and at the
//! leaves the network is affine, so the violation set of each branch is a
//! polytope decided by one LP.

use std::time::Instant;

use super::bounds::{interval_bounds, LayerBounds};
use super::lp::{lp_feasible, lp_maximize, Constraint, LpOutcome};
use super::{check_witness, is_vacuous, model_hash, prepare, Branch, LinAtom, Outcome, Problem, Result, Verdict, VerifierConfig, VerifyError, VerifyStats};
use crate::nn::{Activation, Network};
use crate::property::{Interval, Property};

pub const ORACLE_MAX_RELUS: usize = 16;

pub fn exact_oracle(net: &Network, prop: &Property) -> Result<Verdict> {
    exact_oracle_with(net, prop, &VerifierConfig::default())
}

/// Uses only `lp_tolerance` and `clause_limit` from `cfg`.
pub fn exact_oracle_with(net: &Network, prop: &Property, cfg: &VerifierConfig) -> Result<Verdict> {
    let relus = net.hidden_relu_count();
    if relus > ORACLE_MAX_RELUS {
        return Err(VerifyError::TooLarge {
            got: relus,
            max: ORACLE_MAX_RELUS,
        });
    }
    let start = Instant::now();
    let problem = prepare(net, prop, cfg)?;
    let mut stats = VerifyStats {
        queries: problem.queries,
        branches: problem.branches.len(),
        ..Default::default()
    };
    let mut boundary = false;
    let mut outcome = Outcome::Proved;
    for br in &problem.branches {
        let fixed = sign_pattern(net, &interval_bounds(net, &br.input_box).layers);
        let mut e = Enumerator::new(net, &problem, br, &br.input_box, cfg.lp_tolerance);
        let r = e.run(&fixed);
        stats.lp_calls += e.lp_calls;
        stats.subproblems += e.leaves;
        match r {
            Ok(Some(w)) => {
                outcome = Outcome::Counterexample(w);
                break;
            }
            Ok(None) => boundary |= e.boundary,
            Err(()) => {
                outcome = Outcome::Unknown("lp_instability".into());
                break;
            }
        }
    }
    if boundary && outcome == Outcome::Proved {
        outcome = Outcome::Unknown("boundary".into());
    }
    stats.wall_time = start.elapsed().as_secs_f64();
    Ok(Verdict {
        property_id: prop.id.clone(),
        outcome,
        stats,
        config_hash: cfg.hash(),
        model_hash: model_hash(net),
        vacuous: is_vacuous(&problem, cfg.lp_tolerance).unwrap_or(false),
    })
}

/// Affine map `rows . x + consts`.
#[derive(Clone)]
struct Affine {
    rows: Vec<Vec<f64>>,
    consts: Vec<f64>,
}

/// Per layer and neuron: `Some(true)` when active over the whole box,
/// `Some(false)` when inactive, `None` when the sign is open.
pub(crate) fn sign_pattern(net: &Network, layers: &[LayerBounds]) -> Vec<Vec<Option<bool>>> {
    net.layers
        .iter()
        .zip(layers)
        .map(|(l, lb)| {
            lb.lo
                .iter()
                .zip(&lb.hi)
                .map(|(&lo, &hi)| match l.spec.activation {
                    Activation::Identity => Some(true),
                    Activation::Relu if lo >= 0.0 => Some(true),
                    Activation::Relu if hi <= 0.0 => Some(false),
                    Activation::Relu => None,
                })
                .collect()
        })
        .collect()
}

/// Depth-first walk over the open activation signs of one branch restricted
/// to `input`.
pub(crate) struct Enumerator<'a> {
    net: &'a Network,
    problem: &'a Problem,
    br: &'a Branch,
    input: &'a [Interval],
    tol: f64,
    /// When positive, leaves whose loosened constraints are feasible count
    /// as `boundary`.
    pub widen: f64,
    pub lp_calls: u64,
    pub leaves: u64,
    /// A leaf LP was feasible but its point did not re-validate exactly.
    pub boundary: bool,
}

impl<'a> Enumerator<'a> {
    pub fn new(net: &'a Network, problem: &'a Problem, br: &'a Branch, input: &'a [Interval], tol: f64) -> Self {
        Self {
            net,
            problem,
            br,
            input,
            tol,
            widen: 0.0,
            lp_calls: 0,
            leaves: 0,
            boundary: false,
        }
    }

    /// A validated witness inside `input`, or `None` when the branch has no
    /// violation there at tolerance (check `boundary`). `Err` on LP trouble.
    pub fn run(&mut self, fixed: &[Vec<Option<bool>>]) -> std::result::Result<Option<super::Witness>, ()> {
        let n = self.net.input_dim();
        let identity = Affine {
            rows: (0..n)
                .map(|i| {
                    let mut r = vec![0.0; n];
                    r[i] = 1.0;
                    r
                })
                .collect(),
            consts: vec![0.0; n],
        };
        let rows: Vec<Constraint> = self.br.pre.iter().map(|a| a.widened(0.0)).collect();
        self.layer(0, &identity, rows, fixed)
    }

    fn feasible(&mut self, rows: &[Constraint]) -> std::result::Result<bool, ()> {
        self.lp_calls += 1;
        match lp_feasible(self.input, rows, self.tol) {
            Ok(LpOutcome::Feasible(_)) => Ok(true),
            Ok(LpOutcome::Infeasible) => Ok(false),
            Err(_) => Err(()),
        }
    }

    /// `act` is the (affine) input to layer `k` under the pattern chosen so far.
    fn layer(&mut self, k: usize, act: &Affine, rows: Vec<Constraint>, fixed: &[Vec<Option<bool>>]) -> std::result::Result<Option<super::Witness>, ()> {
        let layer = &self.net.layers[k];
        let mut z = Affine {
            rows: Vec::with_capacity(layer.out_dim()),
            consts: Vec::with_capacity(layer.out_dim()),
        };
        let n = self.net.input_dim();
        for o in 0..layer.out_dim() {
            let mut r = vec![0.0; n];
            let mut c = layer.bias[o];
            for (i, &w) in layer.row(o).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                c += w * act.consts[i];
                for (rv, av) in r.iter_mut().zip(&act.rows[i]) {
                    *rv += w * av;
                }
            }
            z.rows.push(r);
            z.consts.push(c);
        }
        if k + 1 == self.net.layers.len() {
            return self.leaf(&z, rows);
        }
        let mut pattern: Vec<bool> = fixed[k].iter().map(|f| f.unwrap_or(false)).collect();
        let free: Vec<usize> = (0..pattern.len()).filter(|&i| fixed[k][i].is_none()).collect();
        self.assign(k, &z, &free, 0, &mut pattern, rows, fixed)
    }

    #[allow(clippy::too_many_arguments)]
    fn assign(
        &mut self,
        k: usize,
        z: &Affine,
        free: &[usize],
        at: usize,
        pattern: &mut Vec<bool>,
        rows: Vec<Constraint>,
        fixed: &[Vec<Option<bool>>],
    ) -> std::result::Result<Option<super::Witness>, ()> {
        if at == free.len() {
            let act = Affine {
                rows: z.rows.iter().zip(pattern.iter()).map(|(r, &on)| if on { r.clone() } else { vec![0.0; r.len()] }).collect(),
                consts: z.consts.iter().zip(pattern.iter()).map(|(&c, &on)| if on { c } else { 0.0 }).collect(),
            };
            return self.layer(k + 1, &act, rows, fixed);
        }
        let i = free[at];
        for on in [true, false] {
            let row = if on {
                Constraint::ge(z.rows[i].clone(), -z.consts[i])
            } else {
                Constraint::le(z.rows[i].clone(), -z.consts[i])
            };
            let mut next = rows.clone();
            next.push(row);
            if !self.feasible(&next)? {
                continue;
            }
            pattern[i] = on;
            if let Some(w) = self.assign(k, z, free, at + 1, pattern, next, fixed)? {
                return Ok(Some(w));
            }
        }
        Ok(None)
    }

    /// Maximises the common slack `t` of the strict atoms over the pattern's
    /// polytope; non-strict atoms are kept exact. With `widen` set, a leaf
    /// without an exact witness is also checked with every atom loosened.
    fn leaf(&mut self, out: &Affine, rows: Vec<Constraint>) -> std::result::Result<Option<super::Witness>, ()> {
        self.leaves += 1;
        let n = self.net.input_dim();
        let npre = self.br.pre.len();
        // post atoms pulled back to the input through the pattern's affine map
        let mut post: Vec<LinAtom> = Vec::with_capacity(self.br.post.len());
        for a in &self.br.post {
            let mut coef = vec![0.0; n];
            let mut constant = a.constant;
            for (j, &cj) in a.coef.iter().enumerate() {
                if cj == 0.0 {
                    continue;
                }
                constant += cj * out.consts[j];
                for (v, r) in coef.iter_mut().zip(&out.rows[j]) {
                    *v += cj * r;
                }
            }
            post.push(LinAtom { coef, constant, ..a.clone() });
        }
        let strict = self.br.pre.iter().chain(&post).any(|a| a.cmp.is_strict());
        let slack_coef = |a: &LinAtom| match (a.cmp.is_strict(), a.cmp.is_upper()) {
            (false, _) => 0.0,
            (true, true) => 1.0,
            (true, false) => -1.0,
        };
        let mut lp_rows: Vec<Constraint> = Vec::with_capacity(rows.len() + post.len());
        for (i, c) in rows.iter().enumerate() {
            let mut c = c.clone();
            c.coef.push(if i < npre { slack_coef(&self.br.pre[i]) } else { 0.0 });
            lp_rows.push(c);
        }
        for a in &post {
            let mut c = a.widened(0.0);
            c.coef.push(slack_coef(a));
            lp_rows.push(c);
        }
        let mut bounds: Vec<Interval> = self.input.to_vec();
        bounds.push(if strict { Interval::new(0.0, 1.0) } else { Interval::point(0.0) });
        let mut objective = vec![0.0; n];
        objective.push(1.0);
        self.lp_calls += 1;
        match lp_maximize(&objective, &bounds, &lp_rows, self.tol) {
            Ok(Some((point, slack))) if !strict || slack > self.tol => {
                let x = &point[..n];
                if self.br.pre_holds(x) {
                    if let Some(w) = check_witness(self.net, &self.problem.native, &self.br.input_box, x) {
                        return Ok(Some(w));
                    }
                }
                self.boundary = true;
                return Ok(None);
            }
            // strict atoms only meet on a measure-zero boundary at this tolerance
            Ok(_) => {}
            Err(_) => return Err(()),
        }
        if self.widen > 0.0 {
            let mut loose: Vec<Constraint> = self.br.pre.iter().chain(&post).map(|a| a.widened(self.widen)).collect();
            loose.extend(rows[npre..].iter().cloned());
            if self.feasible(&loose)? {
                self.boundary = true;
            }
        }
        Ok(None)
    }
}
