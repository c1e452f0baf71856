//! Model persistence: a JSON metadata file next to a flat binary weight
//! file.
//!
//! The JSON side carries everything needed to rebuild the model except the
//! numbers: head, layer widths, feature spec, label map, and a tensor index.
//! The `.bin` side is nothing but little-endian `f64` values, row-major per
//! tensor, in the order w0, b0, w1, b1, ... Offsets in the index count
//! elements, not bytes, so the file length must equal the parameter count
//! times eight.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::features::FeatureSpec;
use crate::nn::{MlpModel, NnVariant};
use nalgebra::{DMatrix, DVector};

const FORMAT_TAG: &str = "mlp-checkpoint";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
    /// Element offset into the weight file.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    version: u32,
    head: String,
    layer_dims: Vec<usize>,
    feature_spec: FeatureSpec,
    label_map: Vec<String>,
    trained: bool,
    weights_file: String,
    tensors: Vec<TensorMeta>,
}

fn push_row_major(buf: &mut Vec<u8>, rows: usize, cols: usize, at: impl Fn(usize, usize) -> f64) {
    for r in 0..rows {
        for c in 0..cols {
            buf.extend_from_slice(&at(r, c).to_le_bytes());
        }
    }
}

/// Writes `model` as `<path>` (JSON metadata) plus a sibling `.bin` weight
/// file with the same stem.
pub fn save_checkpoint(model: &MlpModel, json_path: &Path) -> Result<()> {
    model.validate()?;
    let bin_path = json_path.with_extension("bin");
    let weights_file = bin_path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("bad checkpoint path {}", json_path.display())))?
        .to_string_lossy()
        .into_owned();

    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    for (l, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        tensors.push(TensorMeta {
            name: format!("w{l}"),
            rows: w.nrows(),
            cols: w.ncols(),
            offset: blob.len() / 8,
        });
        push_row_major(&mut blob, w.nrows(), w.ncols(), |r, c| w[(r, c)]);
        tensors.push(TensorMeta {
            name: format!("b{l}"),
            rows: b.len(),
            cols: 1,
            offset: blob.len() / 8,
        });
        push_row_major(&mut blob, b.len(), 1, |r, _| b[r]);
    }

    let meta = CheckpointMeta {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        head: model.variant.head_name().into(),
        layer_dims: model.layer_dims.clone(),
        feature_spec: model.feature_spec.clone(),
        label_map: model.label_map.clone(),
        trained: model.trained,
        weights_file,
        tensors,
    };
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    fs::write(json_path, json)?;
    fs::write(bin_path, blob)?;
    Ok(())
}

/// Loads a checkpoint written by [`save_checkpoint`]. The weight file is
/// resolved relative to the JSON file's directory.
pub fn load_checkpoint(json_path: &Path) -> Result<MlpModel> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(json_path)?)?;
    if meta.format != FORMAT_TAG {
        return Err(Error::Format(format!("not a model checkpoint: format {:?}", meta.format)));
    }
    if meta.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", meta.version)));
    }
    let variant = NnVariant::from_head_name(&meta.head)?;

    let bin_path = match json_path.parent() {
        Some(dir) => dir.join(&meta.weights_file),
        None => Path::new(&meta.weights_file).to_path_buf(),
    };
    let blob = fs::read(&bin_path)?;
    if blob.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "weight file length {} is not a multiple of 8",
            blob.len()
        )));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();

    let layers = meta.layer_dims.len().saturating_sub(1);
    if meta.tensors.len() != layers * 2 {
        return Err(Error::Format(format!(
            "expected {} tensors for {} layers, found {}",
            layers * 2,
            layers,
            meta.tensors.len()
        )));
    }

    let read_tensor = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
        let t = meta
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("tensor {name} missing from index")))?;
        if t.rows != rows || t.cols != cols {
            return Err(Error::Format(format!(
                "tensor {name} is {}x{}, layer dims imply {rows}x{cols}",
                t.rows, t.cols
            )));
        }
        let end = t
            .offset
            .checked_add(rows * cols)
            .filter(|&e| e <= values.len())
            .ok_or_else(|| Error::Format(format!("tensor {name} overruns the weight file")))?;
        Ok(values[t.offset..end].to_vec())
    };

    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    let mut total = 0usize;
    for l in 0..layers {
        let (rows, cols) = (meta.layer_dims[l + 1], meta.layer_dims[l]);
        let w = read_tensor(&format!("w{l}"), rows, cols)?;
        weights.push(DMatrix::from_row_slice(rows, cols, &w));
        let b = read_tensor(&format!("b{l}"), rows, 1)?;
        biases.push(DVector::from_column_slice(&b));
        total += rows * cols + rows;
    }
    if total != values.len() {
        return Err(Error::Format(format!(
            "weight file holds {} values, model needs {total}",
            values.len()
        )));
    }

    let model = MlpModel {
        variant,
        layer_dims: meta.layer_dims,
        weights,
        biases,
        feature_spec: meta.feature_spec,
        label_map: meta.label_map,
        trained: meta.trained,
    };
    model.validate()?;
    Ok(model)
}
