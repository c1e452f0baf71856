//! Monte Carlo what-if studies on top of the linear-regression pipeline.
//!
//! Two questions: how much would extra (virtual) anchors help, and how much
//! would a proportional reduction of ranging error help. Both reuse the
//! exact corrected-range and solver code paths of the evaluator, so a no-op
//! configuration (zero extra anchors, scaling factor 1) reproduces the
//! baseline statistics bit for bit.
//!
//! Virtual anchors carry no training data, so they get identity correction:
//! their simulated range (true range plus a Johnson S_U draw) enters the
//! solver as-is. "Best errors kept" means the per-position minimum across
//! runs.

use rand::Rng;
use rayon::prelude::*;

use crate::channel::{
    sample_johnson_su, tag_point, Dataset, JohnsonSuParams, Placement, PositionRecord, Split,
    PLACEMENTS,
};
use crate::correction::{apply_lr, fit_lr};
use crate::error::{Error, Result};
use crate::geometry::{Anchor, Point3};
use crate::localization::{lr_entries, solve_entries, ErrorStats};
use crate::rng;

const PATH_ANCHORS: u64 = 0x6D63_616E; // virtual anchor placement
const PATH_RANGES: u64 = 0x6D63_726E; // virtual range noise

#[derive(Debug, Clone)]
pub struct AugmentationConfig {
    /// Virtual anchor counts to sweep, e.g. [0, 11, 22].
    pub extra_anchor_counts: Vec<usize>,
    /// Independent placements per count; the best error per position is kept.
    pub runs_per_count: usize,
    /// Ranging noise of the virtual anchors.
    pub noise: JohnsonSuParams,
    pub seed: u64,
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.extra_anchor_counts.is_empty() {
            return Err(Error::InvalidInput("no anchor counts to sweep".into()));
        }
        if self.runs_per_count == 0 {
            return Err(Error::InvalidInput("at least one run per count is required".into()));
        }
        self.noise.validate()
    }
}

#[derive(Debug, Clone)]
pub struct ScalingConfig {
    /// Error scaling factors, each in (0, 1].
    pub alphas: Vec<f64>,
    pub seed: u64,
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::InvalidInput("no scaling factors to sweep".into()));
        }
        for &a in &self.alphas {
            if !a.is_finite() || !(0.0 < a && a <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "scaling factor {a} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// One study configuration evaluated on one placement.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub study: &'static str,
    /// Anchor count or scaling factor.
    pub parameter: f64,
    pub placement: Placement,
    pub stats: ErrorStats,
    pub runs: usize,
}

pub fn results_to_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("study,parameter,placement,mean,median,q90,q95,runs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.study, r.parameter, r.placement, r.stats.mean, r.stats.median, r.stats.q90,
            r.stats.q95, r.runs
        ));
    }
    out
}

fn placement_rows(
    study: &'static str,
    parameter: f64,
    records: &[&PositionRecord],
    errors: &[f64],
    runs: usize,
) -> Result<Vec<StudyRow>> {
    let mut rows = Vec::new();
    for placement in PLACEMENTS {
        let values: Vec<f64> = records
            .iter()
            .zip(errors)
            .filter(|(r, _)| r.placement == placement)
            .map(|(_, &e)| e)
            .collect();
        if values.is_empty() {
            continue;
        }
        rows.push(StudyRow {
            study,
            parameter,
            placement,
            stats: ErrorStats::from_values(&values)?,
            runs,
        });
    }
    Ok(rows)
}

/// Fits the ranging-noise model the augmentation study feeds its virtual
/// anchors: a Johnson S_U distribution over the signed errors that remain
/// after linear-regression correction on the test split.
pub fn fit_base_noise(dataset: &Dataset) -> Result<JohnsonSuParams> {
    if !dataset.has_split(Split::Test) {
        return Err(Error::EmptySplit(Split::Test));
    }
    let lr = fit_lr(dataset, Split::Train)?;
    let mut residuals = Vec::new();
    for record in dataset.records_in(Split::Test) {
        for sample in &record.samples {
            residuals.push(apply_lr(&lr, sample)? - sample.true_range);
        }
    }
    crate::channel::fit_johnson_su(&residuals)
}

/// Sweeps virtual-anchor counts. For each count and run, that many anchors
/// are placed uniformly over the cabin footprint at ceiling height, their
/// ranges simulated as true range plus a noise draw, and every test record
/// re-solved with them; per record the best error across runs is kept.
pub fn simulate_added_anchors(
    dataset: &Dataset,
    config: &AugmentationConfig,
) -> Result<Vec<StudyRow>> {
    config.validate()?;
    dataset.layout.validate()?;
    if !dataset.has_split(Split::Test) {
        return Err(Error::EmptySplit(Split::Test));
    }
    let layout = &dataset.layout;
    let lr = fit_lr(dataset, Split::Train)?;

    let records: Vec<&PositionRecord> = dataset.records_in(Split::Test).collect();
    let base_entries: Vec<Vec<(u32, f64)>> =
        records.iter().map(|r| lr_entries(r, &lr)).collect::<Result<_>>()?;
    let tags: Vec<Point3> = records
        .iter()
        .map(|r| {
            layout
                .seat(&r.seat)
                .map(|s| tag_point(s, r.placement))
                .ok_or_else(|| Error::Format(format!("record references unknown seat {:?}", r.seat)))
        })
        .collect::<Result<_>>()?;

    let ceiling = layout
        .anchors
        .iter()
        .map(|a| a.position.z)
        .fold(f64::NEG_INFINITY, f64::max);
    let next_id = layout.anchors.iter().map(|a| a.id).max().unwrap_or(0) + 1;

    let mut rows = Vec::new();
    for (ci, &count) in config.extra_anchor_counts.iter().enumerate() {
        let mut best = vec![f64::INFINITY; records.len()];
        for run in 0..config.runs_per_count {
            // Placement stream is keyed by (count index, run), never by the
            // total run count, so extending the sweep only adds runs.
            let mut place_rng = rng::stream(config.seed, &[PATH_ANCHORS, ci as u64, run as u64]);
            let mut augmented = layout.clone();
            for k in 0..count {
                let b = &layout.bounds;
                let x = place_rng.random_range(b.min_x..b.max_x);
                let y = place_rng.random_range(b.min_y..b.max_y);
                augmented.anchors.push(Anchor {
                    id: next_id + k as u32,
                    position: Point3::new(x, y, ceiling),
                });
            }
            let run_errors: Vec<f64> = records
                .par_iter()
                .enumerate()
                .map(|(ri, record)| {
                    let mut entries = base_entries[ri].clone();
                    let mut noise_rng =
                        rng::stream(config.seed, &[PATH_RANGES, ci as u64, run as u64, ri as u64]);
                    for k in 0..count {
                        let anchor = &augmented.anchors[layout.anchors.len() + k];
                        let true_d = anchor.position.distance(&tags[ri]);
                        let r = (true_d + sample_johnson_su(&config.noise, &mut noise_rng)).max(0.0);
                        entries.push((anchor.id, r));
                    }
                    solve_entries(&augmented, record, entries).map(|(_, err)| err)
                })
                .collect::<Result<_>>()?;
            for (b, &e) in best.iter_mut().zip(&run_errors) {
                if e < *b {
                    *b = e;
                }
            }
        }
        rows.extend(placement_rows("anchors", count as f64, &records, &best, config.runs_per_count)?);
    }
    Ok(rows)
}

/// Every measured range pulled toward its truth by factor `alpha`.
fn scale_dataset(dataset: &Dataset, alpha: f64) -> Dataset {
    let mut scaled = dataset.clone();
    for record in &mut scaled.records {
        for sample in &mut record.samples {
            sample.measured_range =
                sample.true_range + alpha * (sample.measured_range - sample.true_range);
        }
    }
    scaled
}

/// Sweeps error scaling factors: measured errors are shrunk by `alpha` on
/// both splits, the linear correction is refit on the scaled data, and the
/// test split is re-solved. `alpha = 1` bypasses the transformation so the
/// baseline comes out bit-identical.
pub fn simulate_error_scaling(dataset: &Dataset, config: &ScalingConfig) -> Result<Vec<StudyRow>> {
    config.validate()?;
    dataset.layout.validate()?;
    if !dataset.has_split(Split::Test) {
        return Err(Error::EmptySplit(Split::Test));
    }
    let mut rows = Vec::new();
    for &alpha in &config.alphas {
        let scaled = if alpha == 1.0 { dataset.clone() } else { scale_dataset(dataset, alpha) };
        let lr = fit_lr(&scaled, Split::Train)?;
        let records: Vec<&PositionRecord> = scaled.records_in(Split::Test).collect();
        let errors: Vec<f64> = records
            .par_iter()
            .map(|record| {
                let entries = lr_entries(record, &lr)?;
                solve_entries(&scaled.layout, record, entries).map(|(_, err)| err)
            })
            .collect::<Result<_>>()?;
        rows.extend(placement_rows("scaling", alpha, &records, &errors, 1)?);
    }
    Ok(rows)
}
