//! Two-way-ranging arithmetic and signal diagnostics.
//!
//! Covers the single-sided TWR time-of-flight formula, first-path power from
//! the accumulator amplitude registers, a multipath concentration metric over
//! CIR taps, and a cubic RSSI-to-distance baseline estimator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::CirBuffer;
use crate::error::{Error, Result};

/// Exact vacuum speed of light (m/s); fixed, not configurable.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Timestamps of one single-sided TWR exchange.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwrTimestamps {
    /// Initiator send to receive interval (seconds).
    pub t_round: f64,
    /// Responder receive to send interval (seconds).
    pub t_reply: f64,
    /// Relative clock drift between the two nodes, parts per million.
    pub clock_drift_ppm: f64,
}

impl TwrTimestamps {
    pub fn new(t_round: f64, t_reply: f64) -> Self {
        TwrTimestamps { t_round, t_reply, clock_drift_ppm: 0.0 }
    }
}

/// Radio-configuration constants used by the diagnostics formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioConstants {
    /// The receiver-dependent constant subtracted by the power formula (dB).
    pub power_constant_a: f64,
    /// Fixed at [`SPEED_OF_LIGHT`]; present so serialized configs are explicit.
    pub speed_of_light: f64,
}

impl Default for RadioConstants {
    fn default() -> Self {
        RadioConstants { power_constant_a: 121.74, speed_of_light: SPEED_OF_LIGHT }
    }
}

/// Time of flight from one single-sided exchange:
/// (t_round - t_reply * (1 + drift_ppm * 1e-6)) / 2.
///
/// With drift 0 this is exactly (t_round - t_reply) / 2. A drift large enough
/// to push the result negative is reported as an error, never clamped.
pub fn tof_from_twr(ts: &TwrTimestamps) -> Result<f64> {
    if !(ts.t_round.is_finite() && ts.t_reply.is_finite() && ts.clock_drift_ppm.is_finite()) {
        return Err(Error::InvalidInput("non-finite TWR timestamps".into()));
    }
    if ts.t_reply < 0.0 || ts.t_round < ts.t_reply {
        return Err(Error::InvalidInput(format!(
            "need t_round >= t_reply >= 0, got t_round={} t_reply={}",
            ts.t_round, ts.t_reply
        )));
    }
    let tof = (ts.t_round - ts.t_reply * (1.0 + ts.clock_drift_ppm * 1e-6)) / 2.0;
    if tof < 0.0 {
        return Err(Error::Degenerate(format!(
            "clock drift {} ppm drives time of flight negative ({tof} s)",
            ts.clock_drift_ppm
        )));
    }
    Ok(tof)
}

/// Distance traveled by the signal in `tof` seconds.
pub fn range_from_tof(tof: f64, constants: &RadioConstants) -> Result<f64> {
    if !(tof >= 0.0) {
        return Err(Error::InvalidInput(format!("time of flight must be >= 0, got {tof}")));
    }
    Ok(tof * constants.speed_of_light)
}

/// First-path power estimate from the three amplitude registers:
/// 10 * log10((f1^2 + f2^2 + f3^2) / n^2) - a, in dB.
pub fn first_path_power(f1: f64, f2: f64, f3: f64, n: u32, a: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("preamble count must be > 0".into()));
    }
    if !(f1 >= 0.0 && f2 >= 0.0 && f3 >= 0.0) {
        return Err(Error::InvalidInput("amplitudes must be >= 0".into()));
    }
    let sum = f1 * f1 + f2 * f2 + f3 * f3;
    if sum == 0.0 {
        return Err(Error::Degenerate("all-zero first-path amplitudes".into()));
    }
    let n = n as f64;
    Ok(10.0 * (sum / (n * n)).log10() - a)
}

/// Concentration of CIR energy in its dominant tap:
/// (1/(N-1)) * sum_i (1 - CIR_i / max_k CIR_k), in [0, 1].
///
/// Under this formula a single dominant peak scores near 1 and a flat buffer
/// scores 0. Descriptions of the statistic sometimes state the opposite
/// orientation; the formula is normative here and the tests pin its literal
/// behavior.
pub fn multipath_metric(cir: &CirBuffer) -> Result<f64> {
    cir.validate()?;
    let n = cir.taps.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "multipath metric needs at least 2 taps (N-1 divides)".into(),
        ));
    }
    let max = cir.taps.iter().cloned().fold(f64::MIN, f64::max);
    let sum: f64 = cir.taps.iter().map(|&t| 1.0 - t / max).sum();
    Ok(sum / (n as f64 - 1.0))
}

/// Fitted RSSI-to-distance polynomial, lowest-degree coefficient first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssiPoly {
    pub coeffs: Vec<f64>,
}

impl RssiPoly {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }
}

/// Ordinary least-squares fit of distance as a polynomial in received power.
///
/// Solved in powers of (power - mean) and expanded back to raw coefficients:
/// the plain Vandermonde of dB-scale readings goes numerically singular long
/// before the data stops identifying the polynomial, while the centered one
/// is singular only when the readings genuinely lack diversity. That genuine
/// rank deficiency (for example constant power) is rejected, not regularized.
pub fn fit_rssi_poly(power: &[f64], distance: &[f64], degree: usize) -> Result<RssiPoly> {
    if power.len() != distance.len() {
        return Err(Error::InvalidInput(format!(
            "power ({}) and distance ({}) lengths differ",
            power.len(),
            distance.len()
        )));
    }
    let cols = degree + 1;
    if power.len() < cols {
        return Err(Error::InvalidInput(format!(
            "degree-{degree} fit needs at least {cols} points, got {}",
            power.len()
        )));
    }
    if power.iter().chain(distance.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite fit inputs".into()));
    }

    let center = power.iter().sum::<f64>() / power.len() as f64;
    let design = DMatrix::from_fn(power.len(), cols, |r, c| (power[r] - center).powi(c as i32));
    let rhs = DMatrix::from_column_slice(distance.len(), 1, distance);
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * 1e-10 * (power.len().max(cols) as f64);
    if svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::Degenerate(
            "rank-deficient RSSI design matrix (power values not diverse enough)".into(),
        ));
    }
    let solution = svd
        .solve(&rhs, tol)
        .map_err(|e| Error::Degenerate(format!("RSSI least squares failed: {e}")))?;
    let centered: Vec<f64> = solution.column(0).iter().cloned().collect();
    Ok(RssiPoly { coeffs: expand_centered(&centered, center) })
}

/// Rewrites sum_k b_k (p - c)^k as coefficients of p^j via the binomial
/// theorem, so stored models evaluate on raw power.
fn expand_centered(b: &[f64], c: f64) -> Vec<f64> {
    let mut out = vec![0.0; b.len()];
    for (k, &bk) in b.iter().enumerate() {
        let mut binom = 1.0; // C(k, j), starting at j = 0
        for (j, slot) in out.iter_mut().enumerate().take(k + 1) {
            *slot += bk * binom * (-c).powi((k - j) as i32);
            binom = binom * (k - j) as f64 / (j as f64 + 1.0);
        }
    }
    out
}

/// Evaluates the fitted polynomial at `power`, floored at 0 m.
pub fn rssi_distance_estimate(power: f64, poly: &RssiPoly) -> f64 {
    // Horner evaluation, highest degree first.
    let raw = poly.coeffs.iter().rev().fold(0.0, |acc, &c| acc * power + c);
    raw.max(0.0)
}
