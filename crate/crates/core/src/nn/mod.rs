//! Dense feed-forward ReLU networks.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`, so row `r` of a
//! layer's matrix holds the incoming weights of output neuron `r`. The network
//! carries the min-max scaler fitted on its training inputs; [`Network::forward`]
//! takes physical inputs and [`Network::forward_scaled`] takes inputs already in
//! network units (the space the verifier reasons in).

mod model_file;
mod scaler;
mod train;

pub use model_file::{load_model, model_from_str, model_to_string, save_model, MODEL_FORMAT_VERSION};
pub use scaler::MinMaxScaler;
pub use train::{train, EpochLoss, LossHistory, TrainingConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input scaler has not been fitted")]
    UnfittedScaler,
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("degenerate feature {feature}: min == max == {value}")]
    DegenerateFeature { feature: usize, value: f64 },
    #[error("cannot fit on an empty set of rows")]
    EmptyRows,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },
    #[error("model file parse error: {0}")]
    Parse(String),
    #[error("unsupported model file version {found} (supported: {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }
}

/// Shape and activation of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub spec: LayerSpec,
    /// Row-major `(output_dim, input_dim)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(spec: LayerSpec, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if spec.input_dim == 0 || spec.output_dim == 0 {
            return Err(NnError::InvalidNetwork("layer dims must be >= 1".into()));
        }
        if weights.len() != spec.input_dim * spec.output_dim {
            return Err(NnError::InvalidNetwork(format!(
                "weight matrix has {} entries, expected {}x{}",
                weights.len(),
                spec.output_dim,
                spec.input_dim
            )));
        }
        if bias.len() != spec.output_dim {
            return Err(NnError::InvalidNetwork(format!(
                "bias has {} entries, expected {}",
                bias.len(),
                spec.output_dim
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(NnError::InvalidNetwork("non-finite weight or bias".into()));
        }
        Ok(Self { spec, weights, bias })
    }

    pub fn zeros(spec: LayerSpec) -> Self {
        Self {
            spec,
            weights: vec![0.0; spec.input_dim * spec.output_dim],
            bias: vec![0.0; spec.output_dim],
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.spec.input_dim
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.spec.output_dim
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.spec.input_dim;
        &self.weights[r * n..(r + 1) * n]
    }

    #[inline]
    pub fn weight(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.spec.input_dim + c]
    }

    /// Pre-activation `W x + b` written into `out`.
    #[inline]
    pub fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.out_dim() {
            let z: f64 = self.row(r).iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(z + self.bias[r]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Dense>,
    pub input_scaler: Option<MinMaxScaler>,
}

impl Network {
    pub fn new(layers: Vec<Dense>, input_scaler: Option<MinMaxScaler>) -> Result<Self> {
        let net = Self {
            layers,
            input_scaler,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(NnError::InvalidNetwork("network has no layers".into()));
        };
        if last.spec.activation != Activation::Identity {
            return Err(NnError::InvalidNetwork(
                "last layer must use the identity activation".into(),
            ));
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::InvalidNetwork(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        for layer in &self.layers {
            Dense::new(layer.spec, layer.weights.clone(), layer.bias.clone())?;
        }
        if let Some(s) = &self.input_scaler {
            if s.dim() != self.input_dim() {
                return Err(NnError::InvalidNetwork(format!(
                    "scaler has {} features, network expects {}",
                    s.dim(),
                    self.input_dim()
                )));
            }
        }
        Ok(())
    }

    /// Glorot-uniform initialisation: every weight uniform in
    /// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], output_dim: usize, rng: &mut R) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, w) in dims.windows(2).enumerate() {
            let activation = if i + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            let spec = LayerSpec {
                input_dim: w[0],
                output_dim: w[1],
                activation,
            };
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let weights = (0..w[0] * w[1]).map(|_| rng.gen_range(-limit..=limit)).collect();
            layers.push(Dense::new(spec, weights, vec![0.0; w[1]])?);
        }
        Network::new(layers, None)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::out_dim).unwrap_or(0)
    }

    /// `[input, hidden..., output]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Dense::out_dim));
        d
    }

    pub fn hidden_relu_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.spec.activation == Activation::Relu)
            .map(Dense::out_dim)
            .sum()
    }

    pub fn scaler(&self) -> Result<&MinMaxScaler> {
        self.input_scaler.as_ref().ok_or(NnError::UnfittedScaler)
    }

    /// Prediction from physical inputs.
    pub fn forward(&self, raw_input: &[f64]) -> Result<Vec<f64>> {
        let scaler = self.scaler()?;
        self.check_input(raw_input)?;
        Ok(self.forward_unchecked(&scaler.apply(raw_input)))
    }

    /// Prediction from inputs already in network units.
    pub fn forward_scaled(&self, scaled_input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(scaled_input)?;
        Ok(self.forward_unchecked(scaled_input))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Hot path without dimension checks; panics on malformed input.
    pub fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.affine_into(&cur, &mut next);
            for v in next.iter_mut() {
                *v = layer.spec.activation.apply(*v);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Pre-activations of every layer for a scaled input (the last entry holds
    /// the network output).
    pub fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut cur = x.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut z = Vec::new();
            layer.affine_into(&cur, &mut z);
            cur = z.iter().map(|&v| layer.spec.activation.apply(v)).collect();
            out.push(z);
        }
        out
    }

    /// Squared-error loss `mean_k (y_k - t_k)^2` and its gradient with respect to
    /// every weight and bias, by backpropagation.
    pub fn mse_gradient(&self, x: &[f64], target: &[f64]) -> (f64, Gradients) {
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate_gradient(x, target, &mut grads);
        (loss, grads)
    }

    pub(crate) fn accumulate_gradient(&self, x: &[f64], target: &[f64], grads: &mut Gradients) -> f64 {
        let mut scratch = Scratch::for_network(self);
        self.accumulate_gradient_with(x, target, grads, &mut scratch)
    }

    /// Backpropagation reusing caller-owned buffers; adds into `grads` and
    /// returns the sample loss.
    pub(crate) fn accumulate_gradient_with(
        &self,
        x: &[f64],
        target: &[f64],
        grads: &mut Gradients,
        s: &mut Scratch,
    ) -> f64 {
        s.acts[0].clear();
        s.acts[0].extend_from_slice(x);
        for (li, layer) in self.layers.iter().enumerate() {
            let (head, tail) = s.acts.split_at_mut(li + 1);
            layer.affine_into(&head[li], &mut s.pre[li]);
            let a = &mut tail[0];
            a.clear();
            a.extend(s.pre[li].iter().map(|&v| layer.spec.activation.apply(v)));
        }
        let out = s.acts.last().unwrap();
        let n = out.len() as f64;
        s.delta.clear();
        s.delta.extend(out.iter().zip(target).map(|(y, t)| 2.0 * (y - t) / n));
        let loss = out.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum::<f64>() / n;

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            if layer.spec.activation == Activation::Relu {
                for (d, z) in s.delta.iter_mut().zip(&s.pre[li]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &s.acts[li];
            let (gw, gb) = (&mut grads.weights[li], &mut grads.bias[li]);
            let in_dim = layer.in_dim();
            for (r, &d) in s.delta.iter().enumerate() {
                gb[r] += d;
                if d != 0.0 {
                    for (g, &a) in gw[r * in_dim..(r + 1) * in_dim].iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            if li > 0 {
                s.prev.clear();
                s.prev.resize(in_dim, 0.0);
                for (r, &d) in s.delta.iter().enumerate() {
                    if d != 0.0 {
                        for (p, &w) in s.prev.iter_mut().zip(layer.row(r)) {
                            *p += d * w;
                        }
                    }
                }
                std::mem::swap(&mut s.delta, &mut s.prev);
            }
        }
        loss
    }

    /// Total number of trainable parameters.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

/// Reusable forward/backward buffers.
pub(crate) struct Scratch {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    prev: Vec<f64>,
}

impl Scratch {
    pub(crate) fn for_network(net: &Network) -> Self {
        Self {
            acts: vec![Vec::new(); net.layers.len() + 1],
            pre: vec![Vec::new(); net.layers.len()],
            delta: Vec::new(),
            prev: Vec::new(),
        }
    }
}

/// Per-layer gradient buffers mirroring a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|g| *g *= k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hand_net() -> Network {
        let l1 = Dense::new(
            LayerSpec {
                input_dim: 2,
                output_dim: 2,
                activation: Activation::Relu,
            },
            vec![1.0, -1.0, 0.0, 1.0],
            vec![0.0, 0.0],
        )
        .unwrap();
        let l2 = Dense::new(
            LayerSpec {
                input_dim: 2,
                output_dim: 1,
                activation: Activation::Identity,
            },
            vec![1.0, 1.0],
            vec![0.0],
        )
        .unwrap();
        Network::new(vec![l1, l2], Some(MinMaxScaler::identity(2))).unwrap()
    }

    // Reference implementation with explicit index loops and no shared helpers.
    fn naive_forward(net: &Network, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for layer in &net.layers {
            let mut out = vec![0.0; layer.spec.output_dim];
            for r in 0..layer.spec.output_dim {
                let mut s = layer.bias[r];
                for c in 0..layer.spec.input_dim {
                    s += layer.weights[r * layer.spec.input_dim + c] * a[c];
                }
                out[r] = if layer.spec.activation == Activation::Relu && s < 0.0 {
                    0.0
                } else {
                    s
                };
            }
            a = out;
        }
        a
    }

    #[test]
    fn hand_network_matches_hand_arithmetic() {
        // W1 (1,2) = (1-2, 2) = (-1, 2) -> relu (0, 2) -> 0 + 2 = 2
        let net = hand_net();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![2.0]);
        assert_eq!(net.forward_scaled(&[1.0, 2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn zero_weights_give_final_biases() {
        let mut net = Network::random(36, &[8, 8], 6, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let last = net.layers.last_mut().unwrap();
        last.bias = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        net.input_scaler = Some(MinMaxScaler::identity(36));
        let y = net.forward(&[7.5; 36]).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let hidden: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=9)).collect();
            let mut net = Network::random(rng.gen_range(1..=12), &hidden, rng.gen_range(1..=6), &mut rng).unwrap();
            for l in &mut net.layers {
                l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
            }
            let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let got = net.forward_scaled(&x).unwrap();
            let want = naive_forward(&net, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-9, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn forward_is_forward_scaled_after_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::random(4, &[5], 2, &mut rng).unwrap();
        net.input_scaler = Some(MinMaxScaler::from_bounds(vec![0.0, 10.0, -5.0, 40.0], vec![1.0, 20.0, 5.0, 400.0]).unwrap());
        let x = [0.3, 12.0, 1.0, 220.0];
        let scaled = net.scaler().unwrap().apply(&x);
        assert_eq!(net.forward(&x).unwrap(), net.forward_scaled(&scaled).unwrap());
    }

    #[test]
    fn dimension_and_scaler_errors() {
        let mut net = hand_net();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(NnError::DimensionMismatch { expected: 2, got: 1 })
        ));
        net.input_scaler = None;
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(NnError::UnfittedScaler)));
        assert!(net.forward_scaled(&[1.0, 2.0]).is_ok());
    }

    #[test]
    fn rejects_relu_output_layer_and_broken_chains() {
        let relu_out = Dense::zeros(LayerSpec {
            input_dim: 2,
            output_dim: 1,
            activation: Activation::Relu,
        });
        assert!(Network::new(vec![relu_out], None).is_err());
        let a = Dense::zeros(LayerSpec {
            input_dim: 2,
            output_dim: 3,
            activation: Activation::Relu,
        });
        let b = Dense::zeros(LayerSpec {
            input_dim: 2,
            output_dim: 1,
            activation: Activation::Identity,
        });
        assert!(Network::new(vec![a, b], None).is_err());
        assert!(Dense::new(
            LayerSpec {
                input_dim: 1,
                output_dim: 1,
                activation: Activation::Identity
            },
            vec![f64::NAN],
            vec![0.0]
        )
        .is_err());
    }

    #[test]
    fn backprop_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 100 {
            let mut net = Network::random(6, &[4], 3, &mut rng).unwrap();
            for l in &mut net.layers {
                l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
            }
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // Skip points within 1e-2 of a ReLU kink.
            let pre = net.pre_activations(&x);
            if pre[0].iter().any(|z| z.abs() <= 1e-2) {
                continue;
            }
            let (_, g) = net.mse_gradient(&x, &t);
            let h = 1e-4;
            let loss = |n: &Network| {
                let y = n.forward_unchecked(&x);
                y.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 3.0
            };
            for li in 0..net.layers.len() {
                for k in 0..net.layers[li].weights.len() {
                    let mut p = net.clone();
                    p.layers[li].weights[k] += h;
                    let mut m = net.clone();
                    m.layers[li].weights[k] -= h;
                    let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                    let an = g.weights[li][k];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                    assert!(rel <= 1e-3 || (fd - an).abs() < 1e-9, "w[{li}][{k}]: fd {fd} analytic {an}");
                }
                for k in 0..net.layers[li].bias.len() {
                    let mut p = net.clone();
                    p.layers[li].bias[k] += h;
                    let mut m = net.clone();
                    m.layers[li].bias[k] -= h;
                    let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                    let an = g.bias[li][k];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                    assert!(rel <= 1e-3 || (fd - an).abs() < 1e-9, "b[{li}][{k}]: fd {fd} analytic {an}");
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn affine_within_fixed_activation_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tested = 0;
        while tested < 200 {
            let net = Network::random(4, &[6, 5], 3, &mut rng).unwrap();
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
            // Check the sign pattern is constant along the segment by sampling it.
            let pattern = |x: &[f64]| -> Vec<bool> { net.pre_activations(x)[..2].concat().iter().map(|z| *z > 0.0).collect() };
            let pa = pattern(&a);
            let stable = (0..=20).all(|k| {
                let l = k as f64 / 20.0;
                let x: Vec<f64> = a.iter().zip(&b).map(|(u, v)| l * u + (1.0 - l) * v).collect();
                pattern(&x) == pa
            });
            if !stable {
                continue;
            }
            let lam = rng.gen_range(0.0..1.0);
            let mid: Vec<f64> = a.iter().zip(&b).map(|(u, v)| lam * u + (1.0 - lam) * v).collect();
            let (fa, fb, fm) = (net.forward_unchecked(&a), net.forward_unchecked(&b), net.forward_unchecked(&mid));
            for k in 0..3 {
                assert!((fm[k] - (lam * fa[k] + (1.0 - lam) * fb[k])).abs() <= 1e-7);
            }
            tested += 1;
        }
    }
}
