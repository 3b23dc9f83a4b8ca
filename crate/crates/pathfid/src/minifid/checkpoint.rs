//! Versioned JSON checkpoints: model config, vocabulary, every named
//! tensor with its shape, and the run mode and schema the model was
//! trained for, so a later decode knows how to rebuild its inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minifid::model::{Model, ModelConfig};
use crate::minifid::pipeline::Mode;
use crate::minifid::tokenizer::Tokenizer;
use crate::pathcodec::PathSchema;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {found}, expected {CHECKPOINT_VERSION}")]
    Version { found: u32 },
    #[error("unknown mode label {0:?}")]
    UnknownMode(String),
    #[error("unknown schema label {0:?}")]
    UnknownSchema(String),
    #[error("tensor {name} has {len} values for shape {rows}x{cols}")]
    ShapeMismatch {
        name: String,
        len: usize,
        rows: usize,
        cols: usize,
    },
    #[error("checkpoint tensors do not match the model layout: {0}")]
    LayoutMismatch(String),
    #[error(transparent)]
    Model(#[from] crate::minifid::model::ModelError),
}

#[derive(Serialize, Deserialize)]
struct TensorData {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    mode: String,
    schema: String,
    config: ModelConfig,
    vocab: Vec<String>,
    params: BTreeMap<String, TensorData>,
}

pub fn save_model(
    path: impl AsRef<Path>,
    model: &Model,
    mode: Mode,
    schema: PathSchema,
) -> Result<(), CheckpointError> {
    let params = model
        .params
        .iter()
        .map(|(name, t)| {
            let (rows, cols) = t.dim();
            (
                name.clone(),
                TensorData {
                    shape: [rows, cols],
                    data: t.iter().copied().collect(),
                },
            )
        })
        .collect();
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        mode: mode.label().to_string(),
        schema: schema.label().to_string(),
        config: model.config,
        vocab: model.tokenizer.vocab().to_vec(),
        params,
    };
    let json = serde_json::to_string(&file)?;
    fs::write(path.as_ref(), json).map_err(|source| CheckpointError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(Model, Mode, PathSchema), CheckpointError> {
    let json = fs::read_to_string(path.as_ref()).map_err(|source| CheckpointError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })?;
    let file: CheckpointFile = serde_json::from_str(&json)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: file.version,
        });
    }
    let mode = Mode::from_label(&file.mode).ok_or(CheckpointError::UnknownMode(file.mode))?;
    let schema =
        PathSchema::from_label(&file.schema).ok_or(CheckpointError::UnknownSchema(file.schema))?;
    let tokenizer = Tokenizer::from_id_list(file.vocab);
    let mut model = Model::new(file.config, tokenizer)?;

    let expected: Vec<String> = model.params.names().cloned().collect();
    let found: Vec<String> = file.params.keys().cloned().collect();
    if expected != found {
        let missing: Vec<&String> = expected.iter().filter(|n| !file.params.contains_key(*n)).collect();
        let extra: Vec<&String> = found
            .iter()
            .filter(|n| !expected.contains(n))
            .collect();
        return Err(CheckpointError::LayoutMismatch(format!(
            "missing {missing:?}, unexpected {extra:?}"
        )));
    }
    for (name, tensor) in file.params {
        let [rows, cols] = tensor.shape;
        let current = model.params.get(&name).dim();
        if tensor.data.len() != rows * cols || (rows, cols) != current {
            return Err(CheckpointError::ShapeMismatch {
                name,
                len: tensor.data.len(),
                rows,
                cols,
            });
        }
        let arr = Array2::from_shape_vec((rows, cols), tensor.data).expect("length checked");
        model.params.insert(name, arr);
    }
    Ok((model, mode, schema))
}
