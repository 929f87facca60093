//! Supervised windows over simulated traces, splits and RMSE evaluation.
//!
//! A window covers 18 consecutive rows of one trace: 12 input steps (bg,
//! insulin, meal) followed by 6 target BG values. Feature vectors are laid out
//! channel-major, oldest step first:
//!
//! ```text
//! [BG_0 .. BG_11, In_0 .. In_11, M_0 .. M_11]
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evidence::sha256_hex;
use crate::nn::{model_to_string, Network, NnError};
use crate::simulator::SimTrace;

pub const INPUT_STEPS: usize = 12;
pub const OUTPUT_STEPS: usize = 6;
pub const CHANNELS: usize = 3;
pub const INPUT_DIM: usize = INPUT_STEPS * CHANNELS;
pub const WINDOW_ROWS: usize = INPUT_STEPS + OUTPUT_STEPS;

/// Default RMSE pass threshold, mg/dL.
pub const DEFAULT_RMSE_THRESHOLD: f64 = 12.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("split fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("patient `{0}` not present in dataset")]
    UnknownPatient(String),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("dataset cache {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// Per step `[bg mg/dL, insulin U, meal g]`, oldest first.
    pub inputs: [[f64; CHANNELS]; INPUT_STEPS],
    /// BG mg/dL, nearest future step first.
    pub targets: [f64; OUTPUT_STEPS],
}

impl Window {
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(INPUT_DIM);
        self.features_into(&mut f);
        f
    }

    pub fn features_into(&self, out: &mut Vec<f64>) {
        out.clear();
        for c in 0..CHANNELS {
            out.extend(self.inputs.iter().map(|step| step[c]));
        }
    }

    pub fn from_features(features: &[f64], targets: [f64; OUTPUT_STEPS]) -> Self {
        assert_eq!(features.len(), INPUT_DIM);
        let mut inputs = [[0.0; CHANNELS]; INPUT_STEPS];
        for (i, step) in inputs.iter_mut().enumerate() {
            for (c, v) in step.iter_mut().enumerate() {
                *v = features[c * INPUT_STEPS + i];
            }
        }
        Self { inputs, targets }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub patient_id: String,
    /// First trace row of the window; the window spans 18 rows from here.
    pub start_row: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub windows: Vec<Window>,
    pub provenance: Vec<Provenance>,
}

/// Stride-1 windows of one trace; `max(0, rows - 17)` of them.
pub fn make_windows(trace: &SimTrace) -> Vec<Window> {
    let rows = &trace.rows;
    if rows.len() < WINDOW_ROWS {
        return Vec::new();
    }
    (0..=rows.len() - WINDOW_ROWS)
        .map(|s| {
            let mut inputs = [[0.0; CHANNELS]; INPUT_STEPS];
            for (i, step) in inputs.iter_mut().enumerate() {
                let r = &rows[s + i];
                *step = [r.bg, r.insulin, r.meal];
            }
            let mut targets = [0.0; OUTPUT_STEPS];
            for (j, t) in targets.iter_mut().enumerate() {
                *t = rows[s + INPUT_STEPS + j].bg;
            }
            Window { inputs, targets }
        })
        .collect()
}

impl Dataset {
    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a SimTrace>) -> Self {
        let mut ds = Dataset::default();
        for t in traces {
            let w = make_windows(t);
            ds.provenance.extend((0..w.len()).map(|s| Provenance {
                patient_id: t.meta.patient_id.clone(),
                start_row: s,
            }));
            ds.windows.extend(w);
        }
        ds
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn push(&mut self, w: Window, p: Provenance) {
        self.windows.push(w);
        self.provenance.push(p);
    }

    pub fn append(&mut self, other: &Dataset) {
        self.windows.extend_from_slice(&other.windows);
        self.provenance.extend_from_slice(&other.provenance);
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            windows: idx.iter().map(|&i| self.windows[i]).collect(),
            provenance: idx.iter().map(|&i| self.provenance[i].clone()).collect(),
        }
    }

    pub fn patients(&self) -> BTreeSet<&str> {
        self.provenance.iter().map(|p| p.patient_id.as_str()).collect()
    }

    /// SHA-256 over the little-endian bytes of every feature and target, plus
    /// the provenance, in window order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (w, p) in self.windows.iter().zip(&self.provenance) {
            for v in w.features().iter().chain(&w.targets) {
                h.update(v.to_le_bytes());
            }
            h.update(p.patient_id.as_bytes());
            h.update((p.start_row as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Seeded shuffle into `floor(fraction * n)` training windows and the rest.
pub fn split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(DatasetError::Empty);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(fraction));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fraction * ds.len() as f64).floor() as usize;
    let (a, b) = idx.split_at(n_train);
    Ok((ds.subset(a), ds.subset(b)))
}

/// Leave-one-patient-out: every window of `patient_id` goes to the test side.
pub fn split_by_patient(ds: &Dataset, patient_id: &str) -> Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(DatasetError::Empty);
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| ds.provenance[i].patient_id == patient_id);
    if test.is_empty() {
        return Err(DatasetError::UnknownPatient(patient_id.to_string()));
    }
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Sum of squared errors per horizon and the window count.
fn squared_errors(net: &Network, ds: &Dataset) -> Result<([f64; OUTPUT_STEPS], usize)> {
    if ds.is_empty() {
        return Err(DatasetError::Empty);
    }
    let scaler = net.scaler()?;
    if scaler.dim() != INPUT_DIM || net.output_dim() != OUTPUT_STEPS {
        return Err(NnError::DimensionMismatch {
            expected: INPUT_DIM,
            got: scaler.dim(),
        }
        .into());
    }
    let mut sums = [0.0; OUTPUT_STEPS];
    let mut x = Vec::with_capacity(INPUT_DIM);
    for w in &ds.windows {
        w.features_into(&mut x);
        let y = net.forward(&x)?;
        for (j, s) in sums.iter_mut().enumerate() {
            let e = y[j] - w.targets[j];
            *s += e * e;
        }
    }
    Ok((sums, ds.len()))
}

/// Root mean squared error pooled over every window and all six horizons.
pub fn rmse(net: &Network, ds: &Dataset) -> Result<f64> {
    let (sums, n) = squared_errors(net, ds)?;
    Ok((sums.iter().sum::<f64>() / (n * OUTPUT_STEPS) as f64).sqrt())
}

pub fn per_horizon_rmse(net: &Network, ds: &Dataset) -> Result<[f64; OUTPUT_STEPS]> {
    let (sums, n) = squared_errors(net, ds)?;
    Ok(sums.map(|s| (s / n as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseEvidence {
    /// Always `"rmse"`.
    pub kind: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub dataset_hash: String,
    pub model_hash: String,
    pub per_horizon: Vec<f64>,
    pub windows: usize,
}

/// Passes iff the pooled RMSE is strictly below `threshold`.
pub fn check_ml_rq1(net: &Network, test: &Dataset, threshold: f64) -> Result<RmseEvidence> {
    let (sums, n) = squared_errors(net, test)?;
    let value = (sums.iter().sum::<f64>() / (n * OUTPUT_STEPS) as f64).sqrt();
    Ok(RmseEvidence {
        kind: "rmse".into(),
        value,
        threshold,
        pass: rmse_passes(value, threshold),
        dataset_hash: test.content_hash(),
        model_hash: sha256_hex(model_to_string(net)?.as_bytes()),
        per_horizon: sums.iter().map(|s| (s / n as f64).sqrt()).collect(),
        windows: n,
    })
}

pub fn rmse_passes(value: f64, threshold: f64) -> bool {
    value < threshold
}

/// Column names of the windowed cache CSV: 36 features, 6 targets, provenance.
pub fn cache_header() -> Vec<String> {
    let mut h = Vec::with_capacity(INPUT_DIM + OUTPUT_STEPS + 2);
    for ch in ["bg", "in", "m"] {
        h.extend((0..INPUT_STEPS).map(|i| format!("{ch}_{i}")));
    }
    h.extend((0..OUTPUT_STEPS).map(|j| format!("bg_out_{j}")));
    h.push("patient_id".into());
    h.push("start_row".into());
    h
}

pub fn write_cache(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(cache_header()).map_err(err)?;
    for (win, p) in ds.windows.iter().zip(&ds.provenance) {
        let mut rec: Vec<String> = win.features().iter().chain(&win.targets).map(f64::to_string).collect();
        rec.push(p.patient_id.clone());
        rec.push(p.start_row.to_string());
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let err = |m: String| DatasetError::Io {
        path: path.display().to_string(),
        message: m,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| err(e.to_string()))?;
    if header.iter().ne(cache_header().iter().map(String::as_str)) {
        return Err(err("unexpected cache header".into()));
    }
    let mut ds = Dataset::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let nums: Vec<f64> = rec
            .iter()
            .take(INPUT_DIM + OUTPUT_STEPS)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(format!("row {}: {e}", i + 1)))?;
        let mut targets = [0.0; OUTPUT_STEPS];
        targets.copy_from_slice(&nums[INPUT_DIM..]);
        let start_row = rec[INPUT_DIM + OUTPUT_STEPS + 1].parse().map_err(|e| err(format!("row {}: {e}", i + 1)))?;
        ds.push(
            Window::from_features(&nums[..INPUT_DIM], targets),
            Provenance {
                patient_id: rec[INPUT_DIM + OUTPUT_STEPS].to_string(),
                start_row,
            },
        );
    }
    Ok(ds)
}
