//! Sound neuron bounds over an input box: plain interval arithmetic, and a
//! back-substituted linear relaxation of the ReLUs (triangle upper bound,
//! adaptive 0/1 lower slope) intersected with the interval result.

use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Network};
use crate::property::Interval;

/// Outward padding applied whenever a bound is concretised.
pub fn pad_down(v: f64) -> f64 {
    v - 1e-12 * (1.0 + v.abs())
}

pub fn pad_up(v: f64) -> f64 {
    v + 1e-12 * (1.0 + v.abs())
}

/// `coef . x + constant` over network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineForm {
    pub coef: Vec<f64>,
    pub constant: f64,
}

impl AffineForm {
    pub fn constant(dim: usize, c: f64) -> Self {
        Self { coef: vec![0.0; dim], constant: c }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coef.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + self.constant
    }

    pub fn min_over(&self, b: &[Interval]) -> f64 {
        self.coef.iter().zip(b).map(|(&a, iv)| if a >= 0.0 { a * iv.lo } else { a * iv.hi }).sum::<f64>() + self.constant
    }

    pub fn max_over(&self, b: &[Interval]) -> f64 {
        self.coef.iter().zip(b).map(|(&a, iv)| if a >= 0.0 { a * iv.hi } else { a * iv.lo }).sum::<f64>() + self.constant
    }
}

/// Pre-activation bounds of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// `lower * z <= relu(z) <= upper * z + intercept`
#[derive(Debug, Clone, Copy, PartialEq)]
struct ReluRelax {
    lower: f64,
    upper: f64,
    intercept: f64,
}

impl ReluRelax {
    fn new(lo: f64, hi: f64) -> Self {
        if lo >= 0.0 {
            Self { lower: 1.0, upper: 1.0, intercept: 0.0 }
        } else if hi <= 0.0 {
            Self { lower: 0.0, upper: 0.0, intercept: 0.0 }
        } else {
            let s = hi / (hi - lo);
            Self {
                lower: if hi > -lo { 1.0 } else { 0.0 },
                upper: s,
                intercept: -s * lo,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsResult {
    pub input: Vec<Interval>,
    /// One entry per layer; the last holds the network outputs.
    pub layers: Vec<LayerBounds>,
    pub output_lower: Vec<AffineForm>,
    pub output_upper: Vec<AffineForm>,
    relax: Option<Vec<Vec<ReluRelax>>>,
}

impl BoundsResult {
    pub fn output(&self) -> &LayerBounds {
        self.layers.last().expect("network has layers")
    }

    /// Number of hidden ReLUs whose sign is not fixed over the box.
    pub fn unstable_count(&self, net: &Network) -> usize {
        net.layers
            .iter()
            .zip(&self.layers)
            .filter(|(l, _)| l.spec.activation == Activation::Relu)
            .map(|(_, b)| b.lo.iter().zip(&b.hi).filter(|(l, h)| **l < 0.0 && **h > 0.0).count())
            .sum()
    }

    /// Affine lower and upper bounds over inputs for `c . y`, where `y` is the
    /// network output.
    pub fn linear_bounds(&self, net: &Network, c: &[f64]) -> (AffineForm, AffineForm) {
        let dim = self.input.len();
        match &self.relax {
            Some(relax) => {
                let last = net.layers.len() - 1;
                let lo = backsub(net, relax, last, &[c.to_vec()], &[0.0], true).remove(0);
                let hi = backsub(net, relax, last, &[c.to_vec()], &[0.0], false).remove(0);
                (lo, hi)
            }
            None => {
                let out = self.output();
                let (mut lo, mut hi) = (0.0, 0.0);
                for (j, &cj) in c.iter().enumerate() {
                    if cj >= 0.0 {
                        lo += cj * out.lo[j];
                        hi += cj * out.hi[j];
                    } else {
                        lo += cj * out.hi[j];
                        hi += cj * out.lo[j];
                    }
                }
                (AffineForm::constant(dim, lo), AffineForm::constant(dim, hi))
            }
        }
    }

    /// Concrete range of `c . y` over the box.
    pub fn linear_range(&self, net: &Network, c: &[f64]) -> Interval {
        let (lo, hi) = self.linear_bounds(net, c);
        let lo = pad_down(lo.min_over(&self.input));
        let hi = pad_up(hi.max_over(&self.input));
        // the interval result is always sound too
        let out = self.output();
        let (mut ilo, mut ihi) = (0.0, 0.0);
        for (j, &cj) in c.iter().enumerate() {
            ilo += cj * if cj >= 0.0 { out.lo[j] } else { out.hi[j] };
            ihi += cj * if cj >= 0.0 { out.hi[j] } else { out.lo[j] };
        }
        Interval::new(lo.max(pad_down(ilo)), hi.min(pad_up(ihi)))
    }
}

fn interval_layer(layer: &crate::nn::Dense, lo: &[f64], hi: &[f64]) -> LayerBounds {
    let mut out = LayerBounds {
        lo: Vec::with_capacity(layer.out_dim()),
        hi: Vec::with_capacity(layer.out_dim()),
    };
    for r in 0..layer.out_dim() {
        let (mut l, mut h) = (layer.bias[r], layer.bias[r]);
        for (c, &w) in layer.row(r).iter().enumerate() {
            if w >= 0.0 {
                l += w * lo[c];
                h += w * hi[c];
            } else {
                l += w * hi[c];
                h += w * lo[c];
            }
        }
        out.lo.push(pad_down(l));
        out.hi.push(pad_up(h));
    }
    out
}

fn activate(layer: &crate::nn::Dense, b: &LayerBounds) -> (Vec<f64>, Vec<f64>) {
    let f = |v: &[f64]| v.iter().map(|&z| layer.spec.activation.apply(z)).collect::<Vec<_>>();
    (f(&b.lo), f(&b.hi))
}

fn check_dims(net: &Network, b: &[Interval]) {
    assert_eq!(b.len(), net.input_dim(), "box dimension does not match the network input");
}

pub fn interval_bounds(net: &Network, input: &[Interval]) -> BoundsResult {
    check_dims(net, input);
    let mut lo: Vec<f64> = input.iter().map(|i| i.lo).collect();
    let mut hi: Vec<f64> = input.iter().map(|i| i.hi).collect();
    let mut layers = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let b = interval_layer(layer, &lo, &hi);
        (lo, hi) = activate(layer, &b);
        layers.push(b);
    }
    let dim = input.len();
    let out = layers.last().unwrap();
    BoundsResult {
        input: input.to_vec(),
        output_lower: out.lo.iter().map(|&v| AffineForm::constant(dim, v)).collect(),
        output_upper: out.hi.iter().map(|&v| AffineForm::constant(dim, v)).collect(),
        layers,
        relax: None,
    }
}

/// Bounds on `rows . z_k + consts` (z_k the pre-activation of layer `k`) as
/// affine forms over the input, substituting each ReLU by the relaxation side
/// that keeps the bound sound.
fn backsub(net: &Network, relax: &[Vec<ReluRelax>], k: usize, rows: &[Vec<f64>], consts: &[f64], lower: bool) -> Vec<AffineForm> {
    let mut coef: Vec<Vec<f64>> = rows.to_vec();
    let mut constant: Vec<f64> = consts.to_vec();
    let mut idx = k;
    loop {
        let layer = &net.layers[idx];
        let in_dim = layer.in_dim();
        let mut next = vec![vec![0.0; in_dim]; coef.len()];
        for (r, row) in coef.iter().enumerate() {
            for (o, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                constant[r] += a * layer.bias[o];
                for (n, &w) in next[r].iter_mut().zip(layer.row(o)) {
                    *n += a * w;
                }
            }
        }
        if idx == 0 {
            return next
                .into_iter()
                .zip(constant)
                .map(|(coef, constant)| AffineForm { coef, constant })
                .collect();
        }
        idx -= 1;
        // next is over a_idx = act(z_idx)
        match net.layers[idx].spec.activation {
            Activation::Identity => {}
            Activation::Relu => {
                for (r, row) in next.iter_mut().enumerate() {
                    for (a, rl) in row.iter_mut().zip(&relax[idx]) {
                        if *a == 0.0 {
                            continue;
                        }
                        if (*a >= 0.0) == lower {
                            *a *= rl.lower;
                        } else {
                            constant[r] += *a * rl.intercept;
                            *a *= rl.upper;
                        }
                    }
                }
            }
        }
        coef = next;
    }
}

pub fn relaxed_bounds(net: &Network, input: &[Interval]) -> BoundsResult {
    relaxed_bounds_within(net, input, None)
}

/// Relaxed bounds, additionally intersected with `parent` when the box is a
/// sub-box of the parent's.
pub fn relaxed_bounds_within(net: &Network, input: &[Interval], parent: Option<&BoundsResult>) -> BoundsResult {
    check_dims(net, input);
    let mut lo: Vec<f64> = input.iter().map(|i| i.lo).collect();
    let mut hi: Vec<f64> = input.iter().map(|i| i.hi).collect();
    let mut layers: Vec<LayerBounds> = Vec::with_capacity(net.layers.len());
    let mut relax: Vec<Vec<ReluRelax>> = Vec::with_capacity(net.layers.len());
    let mut output_lower = Vec::new();
    let mut output_upper = Vec::new();
    let last = net.layers.len() - 1;
    for (k, layer) in net.layers.iter().enumerate() {
        let mut b = interval_layer(layer, &lo, &hi);
        if k > 0 || k == last {
            let n = layer.out_dim();
            let eye: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let mut r = vec![0.0; n];
                    r[i] = 1.0;
                    r
                })
                .collect();
            let zeros = vec![0.0; n];
            let lower = backsub(net, &relax, k, &eye, &zeros, true);
            let upper = backsub(net, &relax, k, &eye, &zeros, false);
            for i in 0..n {
                b.lo[i] = b.lo[i].max(pad_down(lower[i].min_over(input)));
                b.hi[i] = b.hi[i].min(pad_up(upper[i].max_over(input)));
            }
            if k == last {
                output_lower = lower;
                output_upper = upper;
            }
        }
        if let Some(p) = parent {
            for i in 0..b.lo.len() {
                b.lo[i] = b.lo[i].max(p.layers[k].lo[i]);
                b.hi[i] = b.hi[i].min(p.layers[k].hi[i]);
            }
        }
        // rounding can cross bounds on degenerate boxes
        for i in 0..b.lo.len() {
            if b.lo[i] > b.hi[i] {
                let m = 0.5 * (b.lo[i] + b.hi[i]);
                b.lo[i] = pad_down(m);
                b.hi[i] = pad_up(m);
            }
        }
        relax.push(b.lo.iter().zip(&b.hi).map(|(&l, &h)| ReluRelax::new(l, h)).collect());
        (lo, hi) = activate(layer, &b);
        layers.push(b);
    }
    BoundsResult {
        input: input.to_vec(),
        layers,
        output_lower,
        output_upper,
        relax: Some(relax),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 2-2-1: h = relu([x0 + x1 - 1, x0 - x1]), y = h0 - h1 + 0.5
    fn hand_net() -> Network {
        let l1 = Dense::new(
            LayerSpec { input_dim: 2, output_dim: 2, activation: Activation::Relu },
            vec![1.0, 1.0, 1.0, -1.0],
            vec![-1.0, 0.0],
        )
        .unwrap();
        let l2 = Dense::new(
            LayerSpec { input_dim: 2, output_dim: 1, activation: Activation::Identity },
            vec![1.0, -1.0],
            vec![0.5],
        )
        .unwrap();
        Network::new(vec![l1, l2], None).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * (1.0 + b.abs())
    }

    #[test]
    fn hand_intervals() {
        let b = interval_bounds(&hand_net(), &[Interval::unit(), Interval::unit()]);
        // z0 in [-1, 1], z1 in [-1, 1]; relu both in [0, 1]; y in [-0.5, 1.5]
        let want = [(-1.0, 1.0), (-1.0, 1.0)];
        for (i, (l, h)) in want.iter().enumerate() {
            assert!(close(b.layers[0].lo[i], *l) && close(b.layers[0].hi[i], *h));
        }
        assert!(close(b.output().lo[0], -0.5) && close(b.output().hi[0], 1.5));
        let r = relaxed_bounds(&hand_net(), &[Interval::unit(), Interval::unit()]);
        assert!(r.output().lo[0] >= b.output().lo[0] && r.output().hi[0] <= b.output().hi[0]);
    }

    #[test]
    fn point_box_collapses_to_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::random(5, &[7, 4], 3, &mut rng).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y = net.forward_unchecked(&x);
        let pts: Vec<Interval> = x.iter().map(|&v| Interval::point(v)).collect();
        for b in [interval_bounds(&net, &pts), relaxed_bounds(&net, &pts)] {
            for (j, &v) in y.iter().enumerate() {
                assert!(close(b.output().lo[j], v) && close(b.output().hi[j], v));
            }
        }
    }

    #[test]
    fn stable_region_is_exact() {
        // all first-layer pre-activations positive over the box
        let l1 = Dense::new(
            LayerSpec { input_dim: 2, output_dim: 2, activation: Activation::Relu },
            vec![1.0, 2.0, -1.0, 1.0],
            vec![5.0, 5.0],
        )
        .unwrap();
        let l2 = Dense::new(
            LayerSpec { input_dim: 2, output_dim: 1, activation: Activation::Identity },
            vec![3.0, -2.0],
            vec![1.0],
        )
        .unwrap();
        let net = Network::new(vec![l1, l2], None).unwrap();
        let r = relaxed_bounds(&net, &[Interval::unit(), Interval::unit()]);
        assert_eq!(r.unstable_count(&net), 0);
        assert_eq!(r.output_lower[0], r.output_upper[0]);
        // y = 3(x0 + 2x1 + 5) - 2(-x0 + x1 + 5) + 1 = 5x0 + 4x1 + 6
        let f = &r.output_lower[0];
        assert!(close(f.coef[0], 5.0) && close(f.coef[1], 4.0) && close(f.constant, 6.0));
    }

    #[test]
    fn linear_range_of_output_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Network::random(4, &[6], 3, &mut rng).unwrap();
        let b: Vec<Interval> = (0..4).map(|_| Interval::new(0.2, 0.6)).collect();
        let r = relaxed_bounds(&net, &b);
        let c = [1.0, -1.0, 0.0];
        let range = r.linear_range(&net, &c);
        for _ in 0..2000 {
            let x: Vec<f64> = b.iter().map(|iv| rng.gen_range(iv.lo..=iv.hi)).collect();
            let y = net.forward_unchecked(&x);
            let v = y[0] - y[1];
            assert!(range.lo <= v && v <= range.hi);
        }
    }
}
