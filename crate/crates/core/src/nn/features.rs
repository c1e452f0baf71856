//! Feature assembly and normalization for the network variants.
//!
//! Per-anchor block: [presence flag, measured range, first-path power,
//! CIR window of fixed length scaled by its own max]. All-anchor variants
//! concatenate one block per anchor in ascending id order; the one-anchor
//! variant emits one block per present anchor with the anchor's one-hot id
//! appended. Normalization constants come from the train split only and are
//! frozen in the `FeatureSpec` afterwards.

use serde::{Deserialize, Serialize};

use crate::channel::{Dataset, PositionRecord, RangingSample, Split, CIR_TAPS};
use crate::error::{Error, Result};
use crate::nn::NnVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorScope {
    /// One vector per (record, anchor) pair, anchor id one-hot appended.
    Single,
    /// One vector per record covering every anchor.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub scope: AnchorScope,
    /// Ascending; defines block order, one-hot positions, and output order
    /// of the all-ranges head.
    pub anchor_ids: Vec<u32>,
    pub cir_window: usize,
    /// Raw value standing in for measurements of an absent anchor.
    pub fill_value: f64,
    /// Per-feature normalization, frozen at fit time.
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

pub(crate) const BLOCK_SCALARS: usize = 3; // presence, measured_range, first_path_power

impl FeatureSpec {
    pub fn block_len(&self) -> usize {
        BLOCK_SCALARS + self.cir_window
    }

    pub fn feature_len(&self) -> usize {
        match self.scope {
            AnchorScope::All => self.anchor_ids.len() * self.block_len(),
            AnchorScope::Single => self.block_len() + self.anchor_ids.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchor_ids.is_empty() || self.cir_window == 0 {
            return Err(Error::Format("feature spec needs anchors and a CIR window".into()));
        }
        if self.anchor_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("feature spec anchor ids must be strictly ascending".into()));
        }
        let len = self.feature_len();
        if self.means.len() != len || self.scales.len() != len {
            return Err(Error::Format(format!(
                "normalization constants ({} / {}) do not match feature length {len}",
                self.means.len(),
                self.scales.len()
            )));
        }
        if self.scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Format("feature scales must be positive".into()));
        }
        Ok(())
    }
}

/// CIR taps from the first path onward, each divided by the buffer max,
/// padded with zeros to `window` entries.
fn cir_window_scaled(sample: &RangingSample, window: usize) -> Vec<f64> {
    let taps = &sample.cir.taps;
    let start = sample.cir.first_path_index.min(taps.len());
    let max = taps.iter().cloned().fold(0.0_f64, f64::max);
    let mut out = Vec::with_capacity(window);
    for i in 0..window {
        let tap = taps.get(start + i).copied().unwrap_or(0.0);
        out.push(if max > 0.0 { tap / max } else { 0.0 });
    }
    out
}

fn raw_block(sample: Option<&RangingSample>, spec: &FeatureSpec, out: &mut Vec<f64>) {
    match sample {
        Some(s) => {
            out.push(1.0);
            out.push(s.measured_range);
            out.push(s.first_path_power);
            out.extend(cir_window_scaled(s, spec.cir_window));
        }
        None => {
            out.push(0.0);
            for _ in 0..spec.block_len() - 1 {
                out.push(spec.fill_value);
            }
        }
    }
}

/// Un-normalized feature vectors for one record. Each entry pairs the anchor
/// the vector describes (None for whole-record vectors) with the raw values.
/// Samples are matched by anchor id, so record-internal ordering is
/// irrelevant.
pub(crate) fn raw_features(
    record: &PositionRecord,
    spec: &FeatureSpec,
) -> Vec<(Option<u32>, Vec<f64>)> {
    let sample_of = |id: u32| record.samples.iter().find(|s| s.anchor_id == id);
    match spec.scope {
        AnchorScope::All => {
            let mut v = Vec::with_capacity(spec.feature_len());
            for &id in &spec.anchor_ids {
                raw_block(sample_of(id), spec, &mut v);
            }
            vec![(None, v)]
        }
        AnchorScope::Single => {
            let mut out = Vec::new();
            for (idx, &id) in spec.anchor_ids.iter().enumerate() {
                let Some(sample) = sample_of(id) else { continue };
                let mut v = Vec::with_capacity(spec.feature_len());
                raw_block(Some(sample), spec, &mut v);
                for k in 0..spec.anchor_ids.len() {
                    v.push(if k == idx { 1.0 } else { 0.0 });
                }
                out.push((Some(id), v));
            }
            out
        }
    }
}

/// Normalized feature vectors for one record (see [`raw_features`]).
pub fn build_features(
    record: &PositionRecord,
    spec: &FeatureSpec,
) -> Vec<(Option<u32>, Vec<f64>)> {
    let mut vectors = raw_features(record, spec);
    for (_, v) in &mut vectors {
        for (i, x) in v.iter_mut().enumerate() {
            *x = (*x - spec.means[i]) / spec.scales[i];
        }
    }
    vectors
}

/// Fits a feature spec on the train split: anchor order from the layout,
/// per-feature mean and standard deviation from the raw vectors. Features
/// with (near) zero variance get scale 1, so they normalize to a constant 0.
pub fn fit_feature_spec(dataset: &Dataset, variant: NnVariant) -> Result<FeatureSpec> {
    if !dataset.has_split(Split::Train) {
        return Err(Error::EmptySplit(Split::Train));
    }
    let mut anchor_ids: Vec<u32> = dataset.layout.anchors.iter().map(|a| a.id).collect();
    anchor_ids.sort_unstable();

    let mut spec = FeatureSpec {
        scope: match variant {
            NnVariant::RangeOneAnchor => AnchorScope::Single,
            _ => AnchorScope::All,
        },
        anchor_ids,
        cir_window: CIR_TAPS,
        fill_value: 0.0,
        means: Vec::new(),
        scales: Vec::new(),
    };

    let len = spec.feature_len();
    let mut count = 0.0_f64;
    let mut mean = vec![0.0; len];
    let mut m2 = vec![0.0; len];
    for record in dataset.records_in(Split::Train) {
        for (_, v) in raw_features(record, &spec) {
            count += 1.0;
            // Welford update per feature; single pass, numerically stable.
            for i in 0..len {
                let d = v[i] - mean[i];
                mean[i] += d / count;
                m2[i] += d * (v[i] - mean[i]);
            }
        }
    }
    if count < 1.0 {
        return Err(Error::EmptySplit(Split::Train));
    }
    spec.means = mean;
    spec.scales = m2
        .iter()
        .map(|&s| {
            let std = (s / count).sqrt();
            if std > 1e-9 {
                std
            } else {
                1.0
            }
        })
        .collect();
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_dataset, EnvironmentProfile};
    use crate::geometry::{generate_cabin, CabinParams};

    fn dataset() -> Dataset {
        let params = CabinParams { rows: 2, columns: "AB".into(), anchor_count: 4, ..CabinParams::default() };
        let layout = generate_cabin(&params, 2).unwrap();
        generate_dataset(&layout, &EnvironmentProfile::aircraft_cabin(), 4, 7).unwrap()
    }

    #[test]
    fn all_anchor_vector_length_matches_block_math() {
        let ds = dataset();
        let spec = fit_feature_spec(&ds, NnVariant::RangeAll).unwrap();
        // 4 anchors * (1 presence + 2 scalars + 64 CIR taps)
        assert_eq!(spec.feature_len(), 4 * 67);
        let vs = build_features(&ds.records[0], &spec);
        assert_eq!(vs.len(), 1);
        assert_eq!(vs[0].1.len(), 4 * 67);

        // The documented default geometry: 11 anchors make 737 features.
        let full = FeatureSpec { anchor_ids: (0..11).collect(), ..spec };
        assert_eq!(full.feature_len(), 737);
    }

    #[test]
    fn single_scope_emits_one_vector_per_present_anchor() {
        let ds = dataset();
        let spec = fit_feature_spec(&ds, NnVariant::RangeOneAnchor).unwrap();
        assert_eq!(spec.feature_len(), 67 + 4);
        let vs = build_features(&ds.records[0], &spec);
        assert_eq!(vs.len(), 4);
        let ids: Vec<u32> = vs.iter().map(|(id, _)| id.unwrap()).collect();
        assert_eq!(ids, vec![0, 1, 2, 3], "ascending anchor order");
    }

    #[test]
    fn sample_order_does_not_change_features() {
        let ds = dataset();
        let spec = fit_feature_spec(&ds, NnVariant::RangeAll).unwrap();
        let mut record = ds.records[0].clone();
        let baseline = build_features(&record, &spec);
        record.samples.reverse();
        let permuted = build_features(&record, &spec);
        assert_eq!(baseline, permuted);
    }

    #[test]
    fn missing_anchor_gets_fill_and_presence_zero() {
        let ds = dataset();
        let spec = fit_feature_spec(&ds, NnVariant::RangeAll).unwrap();
        let mut record = ds.records[0].clone();
        record.samples.remove(1); // drop anchor 1
        let (_, v) = build_features(&record, &spec).pop().unwrap();
        let block = spec.block_len();
        // presence feature of anchor 1, normalized: (0 - mean)/scale
        let presence_idx = block;
        let expected = (0.0 - spec.means[presence_idx]) / spec.scales[presence_idx];
        assert_eq!(v[presence_idx], expected);

        // Single-scope skips the absent anchor entirely.
        let spec1 = fit_feature_spec(&ds, NnVariant::RangeOneAnchor).unwrap();
        let vs = build_features(&record, &spec1);
        assert_eq!(vs.len(), 3);
        assert!(vs.iter().all(|(id, _)| *id != Some(1)));
    }

    #[test]
    fn zero_variance_feature_normalizes_to_constant_zero() {
        let ds = dataset();
        let spec = fit_feature_spec(&ds, NnVariant::RangeAll).unwrap();
        // Presence is identically 1 in a complete dataset: scale clamps to 1,
        // mean is 1, so the normalized value is exactly 0.
        let (_, v) = build_features(&ds.records[0], &spec).pop().unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(spec.scales[0], 1.0);
    }

    #[test]
    fn train_split_required() {
        let mut ds = dataset();
        for r in &mut ds.records {
            r.split = Split::Test;
        }
        assert!(matches!(
            fit_feature_spec(&ds, NnVariant::Coord),
            Err(Error::EmptySplit(Split::Train))
        ));
    }
}
