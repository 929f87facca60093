//! Versioned JSON model document:
//!
//! ```text
//! {"version": 1, "dims": [36, 8, 8, 6],
//!  "layers": [{"W": [[...], ...], "b": [...], "act": "relu" | "id"}, ...],
//!  "scaler": {"min": [...], "max": [...]}}
//! ```
//!
//! Numbers are written with shortest round-trip formatting, so a save/load
//! cycle reproduces every weight bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Dense, LayerSpec, MinMaxScaler, Network, NnError, Result};

pub const MODEL_FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    version: u64,
    dims: Vec<usize>,
    layers: Vec<LayerDoc>,
    scaler: ScalerDoc,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    act: String,
}

#[derive(Serialize, Deserialize)]
struct ScalerDoc {
    min: Vec<f64>,
    max: Vec<f64>,
}

pub fn model_to_string(net: &Network) -> Result<String> {
    let scaler = net.scaler()?;
    let doc = ModelDoc {
        version: MODEL_FORMAT_VERSION,
        dims: net.dims(),
        layers: net
            .layers
            .iter()
            .map(|l| LayerDoc {
                w: (0..l.out_dim()).map(|r| l.row(r).to_vec()).collect(),
                b: l.bias.clone(),
                act: match l.spec.activation {
                    Activation::Relu => "relu".into(),
                    Activation::Identity => "id".into(),
                },
            })
            .collect(),
        scaler: ScalerDoc {
            min: scaler.min().to_vec(),
            max: scaler.max().to_vec(),
        },
    };
    serde_json::to_string_pretty(&doc).map_err(|e| NnError::Parse(e.to_string()))
}

pub fn model_from_str(text: &str) -> Result<Network> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| NnError::Parse(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| NnError::Parse("missing integer field `version`".into()))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(NnError::UnsupportedVersion {
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let doc: ModelDoc = serde_json::from_value(value).map_err(|e| NnError::Parse(e.to_string()))?;
    if doc.dims.len() != doc.layers.len() + 1 {
        return Err(NnError::InvalidNetwork(format!(
            "dims lists {} sizes for {} layers",
            doc.dims.len(),
            doc.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, l) in doc.layers.into_iter().enumerate() {
        let (input_dim, output_dim) = (doc.dims[i], doc.dims[i + 1]);
        if l.w.len() != output_dim || l.w.iter().any(|row| row.len() != input_dim) {
            return Err(NnError::InvalidNetwork(format!(
                "layer {i}: weight matrix shape does not match dims {output_dim}x{input_dim}"
            )));
        }
        let activation = match l.act.as_str() {
            "relu" => Activation::Relu,
            "id" => Activation::Identity,
            other => return Err(NnError::Parse(format!("layer {i}: unknown activation `{other}`"))),
        };
        let spec = LayerSpec {
            input_dim,
            output_dim,
            activation,
        };
        layers.push(Dense::new(spec, l.w.concat(), l.b)?);
    }
    let scaler = MinMaxScaler::from_bounds(doc.scaler.min, doc.scaler.max)?;
    Network::new(layers, Some(scaler))
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = model_to_string(net)?;
    std::fs::write(path, text).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_net() -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut net = Network::random(36, &[8, 8], 6, &mut rng).unwrap();
        for l in &mut net.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-3.0..3.0) / 7.0);
        }
        let min: Vec<f64> = (0..36).map(|k| k as f64 * 0.1).collect();
        let max: Vec<f64> = min.iter().map(|m| m + 1.0 / 3.0).collect();
        net.input_scaler = Some(MinMaxScaler::from_bounds(min, max).unwrap());
        net
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = sample_net();
        let back = model_from_str(&model_to_string(&net).unwrap()).unwrap();
        assert_eq!(net, back);
        for (a, b) in net.layers.iter().zip(&back.layers) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let net = sample_net();
        save_model(&net, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), net);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let text = model_to_string(&sample_net()).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(model_from_str(cut), Err(NnError::Parse(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let text = model_to_string(&sample_net()).unwrap().replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(
            model_from_str(&text),
            Err(NnError::UnsupportedVersion { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn shape_mismatch_and_unknown_activation() {
        let doc = r#"{"version":1,"dims":[2,1],"layers":[{"W":[[1.0]],"b":[0.0],"act":"id"}],"scaler":{"min":[0,0],"max":[1,1]}}"#;
        assert!(matches!(model_from_str(doc), Err(NnError::InvalidNetwork(_))));
        let doc = r#"{"version":1,"dims":[1,1],"layers":[{"W":[[1.0]],"b":[0.0],"act":"tanh"}],"scaler":{"min":[0],"max":[1]}}"#;
        assert!(matches!(model_from_str(doc), Err(NnError::Parse(_))));
    }

    #[test]
    fn unfitted_network_cannot_be_saved() {
        let mut net = sample_net();
        net.input_scaler = None;
        assert!(matches!(model_to_string(&net), Err(NnError::UnfittedScaler)));
    }
}
