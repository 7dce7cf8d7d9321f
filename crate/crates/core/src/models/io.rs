use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::HvraeConfig;
use super::network::{InputScaling, ModelWeights};
use crate::diffengine::Tensor;
use crate::error::{Error, Result};
use crate::probkit::RandomSource;

pub const WEIGHTS_VERSION: u32 = 1;

const SCALE_MEAN: &str = "input.mean";
const SCALE_STD: &str = "input.scale";

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    shape: [usize; 2],
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightFile {
    version: u32,
    config: HvraeConfig,
    layers: BTreeMap<String, LayerRecord>,
    seed: u64,
    final_loss: Option<f64>,
}

pub fn weights_to_json(weights: &ModelWeights) -> Result<String> {
    let mut layers: BTreeMap<String, LayerRecord> = weights
        .parameter_names()
        .into_iter()
        .zip(weights.parameters())
        .map(|(name, t)| {
            (
                name,
                LayerRecord {
                    shape: t.shape(),
                    values: t.values().to_vec(),
                },
            )
        })
        .collect();
    if let Some(s) = &weights.input_scaling {
        for (name, v) in [(SCALE_MEAN, &s.mean), (SCALE_STD, &s.scale)] {
            layers.insert(
                name.into(),
                LayerRecord {
                    shape: [1, v.len()],
                    values: v.clone(),
                },
            );
        }
    }
    let file = WeightFile {
        version: WEIGHTS_VERSION,
        config: weights.config.clone(),
        layers,
        seed: weights.seed,
        final_loss: weights.final_loss,
    };
    serde_json::to_string(&file).map_err(|e| Error::Format(e.to_string()))
}

pub fn weights_from_json(text: &str) -> Result<ModelWeights> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let found = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Format("weight file has no numeric version".into()))?;
    if found != u64::from(WEIGHTS_VERSION) {
        return Err(Error::Version {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: WEIGHTS_VERSION,
        });
    }
    let mut file: WeightFile = serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?;

    // Start from a correctly shaped model and overwrite every tensor.
    let mut weights = ModelWeights::init(&file.config, &mut RandomSource::new(0))?;
    let names = weights.parameter_names();
    for (name, slot) in names.iter().zip(weights.parameters_mut()) {
        let rec = file
            .layers
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing layer '{name}'")))?;
        *slot = tensor_for(name, rec, slot.shape())?;
    }
    let mean = file.layers.remove(SCALE_MEAN);
    let scale = file.layers.remove(SCALE_STD);
    let k = file.config.point_dim;
    weights.input_scaling = match (mean, scale) {
        (Some(m), Some(s)) => Some(InputScaling {
            mean: tensor_for(SCALE_MEAN, m, [1, k])?.into_values(),
            scale: tensor_for(SCALE_STD, s, [1, k])?.into_values(),
        }),
        (None, None) => None,
        _ => return Err(Error::Format("input scaling needs both mean and scale".into())),
    };
    if let Some(extra) = file.layers.keys().next() {
        return Err(Error::Format(format!("unexpected layer '{extra}'")));
    }
    weights.seed = file.seed;
    weights.final_loss = file.final_loss;
    Ok(weights)
}

fn tensor_for(name: &str, rec: LayerRecord, expected: [usize; 2]) -> Result<Tensor> {
    if rec.shape != expected || rec.values.len() != expected[0] * expected[1] {
        return Err(Error::Format(format!(
            "layer '{name}' has shape {:?} with {} values, expected {expected:?}",
            rec.shape,
            rec.values.len()
        )));
    }
    Tensor::new(expected[0], expected[1], rec.values)
}

pub fn save_weights(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = weights_to_json(weights)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    weights_from_json(&text)
}
