//! Training, evaluation and the hidden-size sweep.

use std::path::{Path, PathBuf};

use aps_core::dataset::{check_ml_rq1, rmse, rmse_passes, split, Dataset, RmseEvidence};
use aps_core::nn::{load_model, save_model, train, LossHistory, Network, TrainingConfig};
use aps_core::simulator::SimTrace;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{write_text, CliError, Result};

/// How windows are divided between training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

pub fn split_cohort(traces: &[SimTrace], s: SplitConfig) -> Result<(Dataset, Dataset)> {
    split(&Dataset::from_traces(traces), s.train_fraction, s.seed).map_err(CliError::usage)
}

/// Parses `8,8` into hidden widths.
pub fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    let widths = s
        .split([',', 'x'])
        .map(|w| w.trim().parse::<usize>().map_err(|_| CliError::usage(format!("bad hidden width `{w}` in `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    if widths.is_empty() || widths.contains(&0) {
        return Err(CliError::usage(format!("hidden widths must be positive: `{s}`")));
    }
    Ok(widths)
}

/// Parses `8x8,10x8` into a list of hidden configurations.
pub fn parse_grid(s: &str) -> Result<Vec<Vec<usize>>> {
    s.split(',').filter(|e| !e.trim().is_empty()).map(|e| parse_hidden(e.trim())).collect()
}

pub const DEFAULT_GRID: &str = "8x8,10x8,20x8,64x8,128x8,200x8";

pub fn loss_path(model: &Path) -> PathBuf {
    model.with_extension("loss.csv")
}

pub fn fit(train_set: &Dataset, cfg: &TrainingConfig) -> Result<(Network, LossHistory)> {
    train(train_set, cfg).map_err(CliError::usage)
}

pub fn save(net: &Network, history: &LossHistory, out: &Path) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    save_model(net, out).map_err(|e| CliError::io(out, e))?;
    write_text(&loss_path(out), &history.to_csv())
}

pub fn load(path: &Path) -> Result<Network> {
    if !path.is_file() {
        return Err(CliError::io(path, "model file not found"));
    }
    load_model(path).map_err(|e| CliError::io(path, e))
}

pub fn evaluate(net: &Network, test: &Dataset, threshold: f64) -> Result<RmseEvidence> {
    check_ml_rq1(net, test, threshold).map_err(CliError::usage)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub hidden: Vec<usize>,
    pub rmse: f64,
    pub pass: bool,
}

/// Summary of a hidden-size sweep, bindable as RMSE evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    /// Always `"rmse_ablation"`.
    pub kind: String,
    pub threshold: f64,
    pub epochs: usize,
    pub pass: bool,
    pub rows: Vec<AblationRow>,
}

impl Ablation {
    /// `h1,h2,rmse`, with empty cells for missing layers.
    pub fn to_csv(&self) -> String {
        let depth = self.rows.iter().map(|r| r.hidden.len()).max().unwrap_or(0);
        let mut s: String = (1..=depth).map(|i| format!("h{i},")).collect();
        s.push_str("rmse\n");
        for r in &self.rows {
            for i in 0..depth {
                if let Some(h) = r.hidden.get(i) {
                    s.push_str(&h.to_string());
                }
                s.push(',');
            }
            s.push_str(&format!("{}\n", r.rmse));
        }
        s
    }
}

/// Trains one network per grid entry on the same split and reports pooled
/// test RMSE for each.
pub fn ablate(train_set: &Dataset, test: &Dataset, grid: &[Vec<usize>], base: &TrainingConfig, threshold: f64) -> Result<Ablation> {
    let rows = grid
        .par_iter()
        .map(|hidden| {
            let cfg = TrainingConfig {
                hidden: hidden.clone(),
                ..base.clone()
            };
            let (net, _) = fit(train_set, &cfg)?;
            let value = rmse(&net, test).map_err(CliError::usage)?;
            Ok(AblationRow {
                hidden: hidden.clone(),
                rmse: value,
                pass: rmse_passes(value, threshold),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ablation {
        kind: "rmse_ablation".into(),
        threshold,
        epochs: base.epochs,
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hidden_and_grid_parsing() {
        assert_eq!(parse_hidden("8,8").unwrap(), vec![8, 8]);
        assert_eq!(parse_hidden("64x8").unwrap(), vec![64, 8]);
        assert!(parse_hidden("8,0").is_err());
        assert!(parse_hidden("a").is_err());
        assert_eq!(parse_grid(DEFAULT_GRID).unwrap().len(), 6);
    }

    #[test]
    fn ablation_csv_shape() {
        let a = Ablation {
            kind: "rmse_ablation".into(),
            threshold: 12.0,
            epochs: 1,
            pass: true,
            rows: vec![
                AblationRow {
                    hidden: vec![8, 8],
                    rmse: 3.5,
                    pass: true,
                },
                AblationRow {
                    hidden: vec![10],
                    rmse: 4.0,
                    pass: true,
                },
            ],
        };
        assert_eq!(a.to_csv(), "h1,h2,rmse\n8,8,3.5\n10,,4\n");
    }
}
