//! Randomised cross-check of [`verify`] against [`exact_oracle`] on small
//! networks with mostly pinned input boxes.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{exact_oracle_with, verify, Outcome, Result, VerifierConfig, Witness};
use crate::dataset::{INPUT_DIM, OUTPUT_STEPS};
use crate::nn::Network;
use crate::property::{instantiate, required_thresholds, BoxSpec, Channel, Interval, Property, UnitMode, VarRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub cases: usize,
    pub seed: u64,
    pub max_relus: usize,
    pub verifier: VerifierConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            cases: 200,
            seed: 1,
            max_relus: 12,
            verifier: VerifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCase {
    pub index: usize,
    pub template: String,
    pub hidden: Vec<usize>,
    pub free_dims: usize,
    pub verify: String,
    pub oracle: String,
    /// Both decisive and different.
    pub disagree: bool,
    /// Every counterexample in this case re-validated, if there was one.
    pub witnesses_valid: Option<bool>,
    pub subproblems: u64,
    pub verify_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cases: Vec<SuiteCase>,
    pub disagreements: usize,
    pub counterexamples: usize,
    pub invalid_witnesses: usize,
    pub verify_unknown: usize,
    pub oracle_unknown: usize,
    pub wall_time: f64,
}

impl SuiteReport {
    pub fn unknown_rate(&self) -> f64 {
        self.verify_unknown as f64 / self.cases.len().max(1) as f64
    }
}

/// A random network with 36 inputs and 6 outputs whose outputs sit in a
/// glucose-like range, and at most `max_relus` hidden ReLUs.
pub fn random_network(rng: &mut ChaCha8Rng, max_relus: usize) -> Network {
    let max_relus = max_relus.max(2);
    let h1 = rng.gen_range(2..=max_relus.min(8));
    let mut hidden = vec![h1];
    if max_relus - h1 >= 2 && rng.gen_bool(0.5) {
        hidden.push(rng.gen_range(2..=(max_relus - h1).min(6)));
    }
    let mut net = Network::random(INPUT_DIM, &hidden, OUTPUT_STEPS, rng).expect("valid shape");
    let last = net.layers.len() - 1;
    for layer in &mut net.layers[..last] {
        for b in &mut layer.bias {
            *b = rng.gen_range(-0.3..0.3);
        }
    }
    let base = rng.gen_range(110.0..190.0);
    let out = &mut net.layers[last];
    for w in &mut out.weights {
        *w *= 40.0;
    }
    for b in &mut out.bias {
        *b = base + rng.gen_range(-15.0..15.0);
    }
    net
}

fn pre_channel(id: &str) -> Option<Channel> {
    match id {
        "ML-RQ1.1" => Some(Channel::BgIn),
        "ML-RQ1.2" | "ML-RQ1.5" => Some(Channel::MIn),
        "ML-RQ1.4" | "ML-RQ1.6" | "ML-RQ1.7" | "ML-RQ1.8" => Some(Channel::InIn),
        _ => None,
    }
}

/// A random template instance in network units over a box with 1 to 3 free
/// dimensions, thresholds drawn around the network's behaviour at the centre.
pub fn random_property(rng: &mut ChaCha8Rng, net: &Network) -> Property {
    const IDS: [&str; 7] = ["ML-RQ1.1", "ML-RQ1.2", "ML-RQ1.4", "ML-RQ1.5", "ML-RQ1.6", "ML-RQ1.7", "ML-RQ1.8"];
    let id = *IDS.choose(rng).unwrap();
    let mut b = BoxSpec::default();
    for k in 0..INPUT_DIM {
        b.set(VarRef::from_input_position(k), Interval::point(rng.gen_range(0.0..1.0)));
    }
    let free = rng.gen_range(1..=3);
    let ch = pre_channel(id).unwrap();
    for _ in 0..free {
        let v = if rng.gen_bool(0.6) {
            VarRef::new(ch, rng.gen_range(0..ch.len()))
        } else {
            VarRef::from_input_position(rng.gen_range(0..INPUT_DIM))
        };
        let lo = rng.gen_range(0.0..0.8);
        b.set(v, Interval::new(lo, (lo + rng.gen_range(0.05..1.0)).min(1.0)));
    }
    // statistics of the post-side quantities over a sample of the box
    let resolved = b.resolved();
    let (mut step_max, mut dev_min, mut top_min, mut bottom_max) = (0.0f64, f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..256 {
        let x: Vec<f64> = resolved.iter().map(|iv| if iv.hi > iv.lo { rng.gen_range(iv.lo..=iv.hi) } else { iv.lo }).collect();
        let y = net.forward_unchecked(&x);
        step_max = step_max.max(y.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max));
        dev_min = dev_min.min(y.iter().map(|v| (v - y[0]).abs()).fold(0.0, f64::max));
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        top_min = top_min.min(hi);
        bottom_max = bottom_max.max(lo);
        ymin = ymin.min(lo);
        ymax = ymax.max(hi);
    }
    // half the cases put the threshold next to the sampled extreme
    let tight = rng.gen_bool(0.5);
    let mut th = BTreeMap::new();
    for &name in required_thresholds(id).unwrap() {
        let v = match (name, tight) {
            ("Delta", true) => step_max * rng.gen_range(0.98..1.04),
            ("alpha", true) => dev_min * rng.gen_range(0.96..1.02),
            ("rho1", true) => top_min + rng.gen_range(-1.0..1.0),
            ("rho2", true) => bottom_max + rng.gen_range(-1.0..1.0),
            ("Delta", false) => step_max * rng.gen_range(0.6..1.6),
            ("alpha", false) => dev_min * rng.gen_range(0.6..1.6),
            ("rho1", false) | ("rho2", false) => rng.gen_range(ymin - 10.0..ymax + 10.0),
            // input thresholds in network units
            _ => rng.gen_range(0.0..1.0),
        };
        th.insert(name.to_string(), ((v * 1000.0_f64).round() / 1000.0).max(0.001));
    }
    let mut p = instantiate(id, &th, b).unwrap();
    p.unit_mode = UnitMode::NetworkNative;
    p
}

fn witness_ok(net: &Network, prop: &Property, w: &Witness) -> bool {
    match net.forward_scaled(&w.input) {
        Ok(y) => prop.input_box.contains(&w.input) && prop.pre.eval(&w.input, &y) && !prop.evaluate_concrete(&w.input, &y),
        Err(_) => false,
    }
}

pub fn soundness_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cases = Vec::with_capacity(cfg.cases);
    let mut report = SuiteReport {
        cases: Vec::new(),
        disagreements: 0,
        counterexamples: 0,
        invalid_witnesses: 0,
        verify_unknown: 0,
        oracle_unknown: 0,
        wall_time: 0.0,
    };
    for index in 0..cfg.cases {
        let net = random_network(&mut rng, cfg.max_relus);
        let prop = random_property(&mut rng, &net);
        let t = Instant::now();
        let v = verify(&net, &prop, &cfg.verifier)?;
        let verify_seconds = t.elapsed().as_secs_f64();
        let o = exact_oracle_with(&net, &prop, &cfg.verifier)?;
        let mut valid = None;
        for out in [&v.outcome, &o.outcome] {
            if let Outcome::Counterexample(w) = out {
                report.counterexamples += 1;
                let ok = witness_ok(&net, &prop, w);
                report.invalid_witnesses += usize::from(!ok);
                valid = Some(valid.unwrap_or(true) && ok);
            }
        }
        let disagree = v.outcome.is_decisive() && o.outcome.is_decisive() && v.outcome.label() != o.outcome.label();
        report.disagreements += usize::from(disagree);
        report.verify_unknown += usize::from(!v.outcome.is_decisive());
        report.oracle_unknown += usize::from(!o.outcome.is_decisive());
        let describe = |out: &Outcome| match out {
            Outcome::Unknown(r) => format!("Unknown({r})"),
            other => other.label().to_string(),
        };
        cases.push(SuiteCase {
            index,
            template: prop.id.clone(),
            hidden: net.dims()[1..net.dims().len() - 1].to_vec(),
            free_dims: prop.input_box.resolved().iter().filter(|iv| iv.width() > 0.0).count(),
            verify: describe(&v.outcome),
            oracle: describe(&o.outcome),
            disagree,
            witnesses_valid: valid,
            subproblems: v.stats.subproblems,
            verify_seconds,
        });
    }
    report.cases = cases;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}
