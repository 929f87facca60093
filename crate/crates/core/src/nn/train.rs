use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, MinMaxScaler, Network, NnError, Result, Scratch};
use crate::dataset::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Hidden layer widths, e.g. `[8, 8]`.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Share of the supplied windows held out for the validation curve.
    pub validation_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            hidden: vec![8, 8],
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_epsilon: 1e-8,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.into()));
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be >= 1");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.adam_epsilon > 0.0) {
            return bad("learning_rate and adam_epsilon must be positive");
        }
        let (b1, b2) = self.adam_betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return bad("adam betas must lie in (0, 1)");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return bad("validation_fraction must lie in (0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean squared error over the training windows seen this epoch, (mg/dL)^2.
    pub train: f64,
    /// Mean squared error on the held-out windows after the epoch.
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub epochs: Vec<EpochLoss>,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,validation_mse\n");
        for e in &self.epochs {
            let v = e.validation.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train, v));
        }
        s
    }
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    fn step(&mut self, net: &mut Network, g: &Gradients, cfg: &TrainingConfig) {
        self.t += 1;
        let (b1, b2) = cfg.adam_betas;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let params = layer.weights.iter_mut().zip(&g.weights[li]).zip(self.m.weights[li].iter_mut().zip(self.v.weights[li].iter_mut()));
            let biases = layer.bias.iter_mut().zip(&g.bias[li]).zip(self.m.bias[li].iter_mut().zip(self.v.bias[li].iter_mut()));
            for ((p, &grad), (m, v)) in params.chain(biases) {
                *m = b1 * *m + (1.0 - b1) * grad;
                *v = b2 * *v + (1.0 - b2) * grad * grad;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
            }
        }
    }
}

/// Trains a fresh network with mini-batch Adam on the mean squared error over
/// all output horizons. The input scaler is fitted on every supplied window; a
/// seeded `validation_fraction` of them is held out for the validation curve.
/// Identical data, config and seed reproduce the same weights bit for bit.
pub fn train(data: &Dataset, cfg: &TrainingConfig) -> Result<(Network, LossHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let raw: Vec<Vec<f64>> = data.windows.iter().map(|w| w.features()).collect();
    let targets: Vec<Vec<f64>> = data.windows.iter().map(|w| w.targets.to_vec()).collect();
    let input_dim = raw[0].len();
    let output_dim = targets[0].len();

    let scaler = MinMaxScaler::fit(&raw)?;
    let inputs: Vec<Vec<f64>> = raw.iter().map(|r| scaler.apply(r)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Network::random(input_dim, &cfg.hidden, output_dim, &mut rng)?;
    net.input_scaler = Some(scaler);

    let n = inputs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = if n >= 2 {
        ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let mut adam = Adam {
        m: Gradients::zeros_like(&net),
        v: Gradients::zeros_like(&net),
        t: 0,
    };
    let mut grads = Gradients::zeros_like(&net);
    let mut scratch = Scratch::for_network(&net);
    let mut history = LossHistory::default();

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                total += net.accumulate_gradient_with(&inputs[i], &targets[i], &mut grads, &mut scratch);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut net, &grads, cfg);
        }
        let train_loss = total / train_idx.len() as f64;
        if !train_loss.is_finite() {
            return Err(NnError::Divergence { epoch });
        }
        let validation = if val_idx.is_empty() {
            None
        } else {
            let v = val_idx
                .iter()
                .map(|&i| {
                    let y = net.forward_unchecked(&inputs[i]);
                    y.iter().zip(&targets[i]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / output_dim as f64
                })
                .sum::<f64>()
                / val_idx.len() as f64;
            if !v.is_finite() {
                return Err(NnError::Divergence { epoch });
            }
            Some(v)
        };
        history.epochs.push(EpochLoss {
            epoch,
            train: train_loss,
            validation,
        });
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Provenance, Window, INPUT_STEPS, OUTPUT_STEPS};
    use rand::Rng;

    fn dataset_from(f: impl Fn(usize, &mut ChaCha8Rng) -> Window, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let windows: Vec<Window> = (0..n).map(|i| f(i, &mut rng)).collect();
        let provenance = (0..n)
            .map(|i| Provenance {
                patient_id: "p".into(),
                start_row: i,
            })
            .collect();
        Dataset { windows, provenance }
    }

    fn random_inputs(rng: &mut ChaCha8Rng) -> [[f64; 3]; INPUT_STEPS] {
        let mut x = [[0.0; 3]; INPUT_STEPS];
        for row in &mut x {
            *row = [rng.gen_range(60.0..250.0), rng.gen_range(0.0..2.0), rng.gen_range(0.0..60.0)];
        }
        x
    }

    #[test]
    fn constant_targets_are_learned() {
        let data = dataset_from(
            |_, rng| Window {
                inputs: random_inputs(rng),
                targets: [100.0; OUTPUT_STEPS],
            },
            256,
        );
        let cfg = TrainingConfig {
            epochs: 200,
            learning_rate: 0.05,
            ..TrainingConfig::default()
        };
        let (net, hist) = train(&data, &cfg).unwrap();
        let rmse = hist.epochs.last().unwrap().train.sqrt();
        assert!(rmse < 1.0, "train rmse {rmse}");
        let y = net.forward(&data.windows[0].features()).unwrap();
        assert!(y.iter().all(|v| (v - 100.0).abs() < 2.0));
    }

    fn linear_data() -> Dataset {
        dataset_from(
            |_, rng| {
                let inputs = random_inputs(rng);
                let last = inputs[INPUT_STEPS - 1][0];
                let slope = inputs[INPUT_STEPS - 1][0] - inputs[INPUT_STEPS - 2][0];
                let mut targets = [0.0; OUTPUT_STEPS];
                for (h, t) in targets.iter_mut().enumerate() {
                    *t = last + 0.1 * slope * (h + 1) as f64;
                }
                Window { inputs, targets }
            },
            50,
        )
    }

    #[test]
    fn adam_mostly_decreases_loss_on_linear_data() {
        let cfg = TrainingConfig {
            epochs: 60,
            batch_size: 10,
            learning_rate: 0.01,
            ..TrainingConfig::default()
        };
        let (_, hist) = train(&linear_data(), &cfg).unwrap();
        let losses: Vec<f64> = hist.epochs.iter().map(|e| e.train).collect();
        let after = &losses[5..];
        let decreasing = after.windows(2).filter(|w| w[1] <= w[0]).count();
        let share = decreasing as f64 / (after.len() - 1) as f64;
        assert!(share >= 0.9, "only {share} of epochs decreased: {losses:?}");
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = TrainingConfig {
            epochs: 5,
            ..TrainingConfig::default()
        };
        let data = linear_data();
        let (a, ha) = train(&data, &cfg).unwrap();
        let (b, hb) = train(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        let (c, _) = train(&data, &TrainingConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_dataset_and_bad_config_rejected() {
        let empty = Dataset::default();
        assert!(matches!(train(&empty, &TrainingConfig::default()), Err(NnError::EmptyDataset)));
        let bad = TrainingConfig {
            validation_fraction: 0.5,
            ..TrainingConfig::default()
        };
        assert!(matches!(train(&linear_data(), &bad), Err(NnError::InvalidConfig(_))));
    }

    #[test]
    fn exploding_learning_rate_reports_divergence() {
        let data = dataset_from(
            |_, rng| Window {
                inputs: random_inputs(rng),
                targets: [1e300; OUTPUT_STEPS],
            },
            64,
        );
        let cfg = TrainingConfig {
            epochs: 3,
            ..TrainingConfig::default()
        };
        assert!(matches!(train(&data, &cfg), Err(NnError::Divergence { epoch: 0 })));
    }
}
