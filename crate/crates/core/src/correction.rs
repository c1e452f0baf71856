//! Classical per-anchor ranging corrections.
//!
//! Two nested models, both fitted on the train split only: a static offset
//! o_i (mean signed residual) and an ordinary least-squares line
//! true ~ a_i * measured + b_i. Because the offset model is the linear model
//! constrained to slope 1, and the raw pipeline is the offset model
//! constrained to offset 0, train-split mean squared error can only improve
//! along raw -> offset -> linear. Tests pin that dominance.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::channel::{Dataset, RangingSample, Split};
use crate::error::{Error, Result};
use crate::ranging::RssiPoly;

/// Static per-anchor offsets (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetModel {
    pub offsets: BTreeMap<u32, f64>,
}

/// Per-anchor slope/intercept pairs mapping measured to corrected range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub params: BTreeMap<u32, LinearParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub a: f64,
    pub b: f64,
}

impl LinearModel {
    /// Anchors whose fitted slope is non-positive. Physically a slope should
    /// be near 1; callers may want to surface these.
    pub fn suspicious_anchors(&self) -> Vec<u32> {
        self.params.iter().filter(|(_, p)| p.a <= 0.0).map(|(&id, _)| id).collect()
    }
}

fn split_samples<'a>(
    dataset: &'a Dataset,
    split: Split,
) -> impl Iterator<Item = &'a RangingSample> {
    dataset.records_in(split).flat_map(|r| r.samples.iter())
}

/// Fits o_i = mean(true - measured) per anchor over the given split.
/// Every layout anchor must contribute at least one sample.
pub fn fit_offset(dataset: &Dataset, split: Split) -> Result<OffsetModel> {
    if !dataset.has_split(split) {
        return Err(Error::EmptySplit(split));
    }
    let mut sums: BTreeMap<u32, (f64, u64)> = BTreeMap::new();
    for s in split_samples(dataset, split) {
        let entry = sums.entry(s.anchor_id).or_insert((0.0, 0));
        entry.0 += s.true_range - s.measured_range;
        entry.1 += 1;
    }
    let mut offsets = BTreeMap::new();
    for anchor in &dataset.layout.anchors {
        let (sum, n) = sums
            .get(&anchor.id)
            .copied()
            .ok_or(Error::NoSamplesForAnchor(anchor.id))?;
        offsets.insert(anchor.id, sum / n as f64);
    }
    Ok(OffsetModel { offsets })
}

/// measured + o_i for the sample's anchor.
pub fn apply_offset(model: &OffsetModel, sample: &RangingSample) -> Result<f64> {
    let o = model.offsets.get(&sample.anchor_id).ok_or(Error::UnknownAnchor(sample.anchor_id))?;
    Ok(sample.measured_range + o)
}

/// Fits true ~ a_i * measured + b_i per anchor by ordinary least squares
/// over the given split. Anchors with fewer than two distinct measured
/// ranges are degenerate.
pub fn fit_lr(dataset: &Dataset, split: Split) -> Result<LinearModel> {
    if !dataset.has_split(split) {
        return Err(Error::EmptySplit(split));
    }
    let mut per_anchor: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    for s in split_samples(dataset, split) {
        per_anchor.entry(s.anchor_id).or_default().push((s.measured_range, s.true_range));
    }
    let mut params = BTreeMap::new();
    for anchor in &dataset.layout.anchors {
        let points = per_anchor
            .get(&anchor.id)
            .ok_or(Error::NoSamplesForAnchor(anchor.id))?;
        if points.len() < 2 {
            return Err(Error::Degenerate(format!(
                "anchor {} has {} sample(s), need >= 2 for a line",
                anchor.id,
                points.len()
            )));
        }
        let n = points.len() as f64;
        let mean_m = points.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_t = points.iter().map(|p| p.1).sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for &(m, t) in points {
            sxx += (m - mean_m) * (m - mean_m);
            sxy += (m - mean_m) * (t - mean_t);
        }
        if sxx <= 0.0 {
            return Err(Error::Degenerate(format!(
                "anchor {} has constant measured range; slope is unidentifiable",
                anchor.id
            )));
        }
        let a = sxy / sxx;
        let b = mean_t - a * mean_m;
        params.insert(anchor.id, LinearParams { a, b });
    }
    Ok(LinearModel { params })
}

/// measured * a_i + b_i for the sample's anchor.
pub fn apply_lr(model: &LinearModel, sample: &RangingSample) -> Result<f64> {
    let p = model.params.get(&sample.anchor_id).ok_or(Error::UnknownAnchor(sample.anchor_id))?;
    Ok(sample.measured_range * p.a + p.b)
}

// ── persistence ─────────────────────────────────────────────────────────

/// Any model the `fit` command can produce, in its wire form.
///
/// Anchor ids are JSON object keys and therefore strings on the wire; the
/// conversions below parse them back. (Numeric keys would also break serde's
/// internally tagged deserialization, which buffers values as generic
/// content.)
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum SavedModel {
    #[serde(rename = "offset")]
    Offset { params: BTreeMap<String, OffsetEntry> },
    #[serde(rename = "lr")]
    Lr { params: BTreeMap<String, LinearParams> },
    #[serde(rename = "rssi")]
    Rssi { coeffs: Vec<f64> },
}

fn parse_anchor_key(key: &str) -> Result<u32> {
    key.parse::<u32>()
        .map_err(|_| Error::Format(format!("anchor id {key:?} in model file is not an integer")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetEntry {
    pub o: f64,
}

impl SavedModel {
    pub fn from_offset(model: &OffsetModel) -> Self {
        SavedModel::Offset {
            params: model
                .offsets
                .iter()
                .map(|(&id, &o)| (id.to_string(), OffsetEntry { o }))
                .collect(),
        }
    }

    pub fn from_lr(model: &LinearModel) -> Self {
        SavedModel::Lr {
            params: model.params.iter().map(|(&id, &p)| (id.to_string(), p)).collect(),
        }
    }

    pub fn from_rssi(poly: &RssiPoly) -> Self {
        SavedModel::Rssi { coeffs: poly.coeffs.clone() }
    }

    pub fn into_offset(self) -> Result<OffsetModel> {
        match self {
            SavedModel::Offset { params } => {
                let mut offsets = BTreeMap::new();
                for (key, e) in params {
                    offsets.insert(parse_anchor_key(&key)?, e.o);
                }
                Ok(OffsetModel { offsets })
            }
            other => Err(Error::Format(format!("expected offset model, found {}", other.kind()))),
        }
    }

    pub fn into_lr(self) -> Result<LinearModel> {
        match self {
            SavedModel::Lr { params } => {
                let mut parsed = BTreeMap::new();
                for (key, p) in params {
                    parsed.insert(parse_anchor_key(&key)?, p);
                }
                Ok(LinearModel { params: parsed })
            }
            other => Err(Error::Format(format!("expected lr model, found {}", other.kind()))),
        }
    }

    pub fn into_rssi(self) -> Result<RssiPoly> {
        match self {
            SavedModel::Rssi { coeffs } => Ok(RssiPoly { coeffs }),
            other => Err(Error::Format(format!("expected rssi model, found {}", other.kind()))),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::Offset { .. } => "offset",
            SavedModel::Lr { .. } => "lr",
            SavedModel::Rssi { .. } => "rssi",
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = match self {
            SavedModel::Offset { params } => params.values().all(|e| e.o.is_finite()),
            SavedModel::Lr { params } => {
                params.values().all(|p| p.a.is_finite() && p.b.is_finite())
            }
            SavedModel::Rssi { coeffs } => {
                !coeffs.is_empty() && coeffs.iter().all(|c| c.is_finite())
            }
        };
        if finite {
            Ok(())
        } else {
            Err(Error::Format("model file contains non-finite parameters".into()))
        }
    }
}

pub fn model_to_json(model: &SavedModel) -> Result<String> {
    model.validate()?;
    Ok(serde_json::to_string_pretty(model)?)
}

pub fn model_from_json(text: &str) -> Result<SavedModel> {
    let model: SavedModel = serde_json::from_str(text)?;
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &SavedModel, path: &Path) -> Result<()> {
    let mut text = model_to_json(model)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    model_from_json(&std::fs::read_to_string(path)?)
}
