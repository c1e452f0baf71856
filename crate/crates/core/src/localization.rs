//! Position solving, seat assignment, and end-to-end method evaluation.
//!
//! The tag height is treated as known per placement, so only (x, y) is
//! estimated. The solver minimizes the sum of squared circle residuals
//! rho_i = (x - x_i)^2 + (y - y_i)^2 + dz_i^2 - r_i^2 with a damped
//! Gauss-Newton iteration, started from the solution of the linearized
//! system (pairwise differences of the circle equations). Degenerate anchor
//! geometry, where that linear system is rank deficient, falls back to the
//! anchor centroid and is reported as not converged.

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{placement_z, Dataset, Placement, PositionRecord, Split, PLACEMENTS};
use crate::correction::{apply_lr, apply_offset, LinearModel, OffsetModel};
use crate::error::{Error, Result};
use crate::geometry::{split_label, CabinLayout};
use crate::nn::{predict_coords, predict_ranges, predict_seat, MlpModel, NnVariant};
use crate::ranging::{rssi_distance_estimate, RssiPoly};

const GRADIENT_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 100;

/// Ranges to solve from: (anchor id, range) pairs plus the known tag height.
#[derive(Debug, Clone)]
pub struct RangeSet {
    pub entries: Vec<(u32, f64)>,
    pub placement_z: f64,
}

impl RangeSet {
    pub fn new(entries: Vec<(u32, f64)>, placement_z: f64) -> Result<Self> {
        if !placement_z.is_finite() {
            return Err(Error::InvalidInput("placement height must be finite".into()));
        }
        for &(id, r) in &entries {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::InvalidInput(format!("range {r} for anchor {id} is invalid")));
            }
        }
        Ok(RangeSet { entries, placement_z })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationResult {
    pub x: f64,
    pub y: f64,
    /// Objective value (sum of squared circle residuals) at the estimate.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Per-anchor constants of the objective.
struct Term {
    x: f64,
    y: f64,
    dz2: f64,
    r2: f64,
}

fn terms_from(layout: &CabinLayout, ranges: &RangeSet) -> Result<Vec<Term>> {
    if ranges.entries.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "multilateration needs at least 3 ranges, got {}",
            ranges.entries.len()
        )));
    }
    if !ranges.placement_z.is_finite() {
        return Err(Error::InvalidInput("placement height must be finite".into()));
    }
    let mut terms = Vec::with_capacity(ranges.entries.len());
    for &(id, r) in &ranges.entries {
        let anchor = layout.anchor(id).ok_or(Error::UnknownAnchor(id))?;
        if !r.is_finite() || r < 0.0 {
            return Err(Error::InvalidInput(format!("range {r} for anchor {id} is invalid")));
        }
        let dz = anchor.position.z - ranges.placement_z;
        terms.push(Term { x: anchor.position.x, y: anchor.position.y, dz2: dz * dz, r2: r * r });
    }
    Ok(terms)
}

fn objective(terms: &[Term], x: f64, y: f64) -> f64 {
    terms
        .iter()
        .map(|t| {
            let rho = (x - t.x).powi(2) + (y - t.y).powi(2) + t.dz2 - t.r2;
            rho * rho
        })
        .sum()
}

/// Objective, gradient, and Gauss-Newton normal matrix at (x, y).
fn derivatives(terms: &[Term], x: f64, y: f64) -> (f64, [f64; 2], [f64; 3]) {
    let mut obj = 0.0;
    let mut g = [0.0, 0.0];
    // JtJ is symmetric: [0] = xx, [1] = xy, [2] = yy.
    let mut h = [0.0, 0.0, 0.0];
    for t in terms {
        let (dx, dy) = (x - t.x, y - t.y);
        let rho = dx * dx + dy * dy + t.dz2 - t.r2;
        let (jx, jy) = (2.0 * dx, 2.0 * dy);
        obj += rho * rho;
        g[0] += 2.0 * rho * jx;
        g[1] += 2.0 * rho * jy;
        h[0] += jx * jx;
        h[1] += jx * jy;
        h[2] += jy * jy;
    }
    (obj, g, h)
}

/// Linearized initial guess: subtracting the first circle equation from the
/// others leaves a linear system in (x, y). Returns None when the anchors
/// are (near) collinear and the system is rank deficient.
fn linear_init(terms: &[Term]) -> Option<(f64, f64)> {
    let s = |t: &Term| (t.r2 - t.dz2).max(0.0);
    let first = &terms[0];
    let s0 = s(first);
    let mut ata = [0.0_f64; 3];
    let mut atb = [0.0_f64; 2];
    let mut scale = 0.0_f64;
    for t in &terms[1..] {
        let a0 = 2.0 * (t.x - first.x);
        let a1 = 2.0 * (t.y - first.y);
        let b = (t.x * t.x + t.y * t.y) - (first.x * first.x + first.y * first.y) - (s(t) - s0);
        ata[0] += a0 * a0;
        ata[1] += a0 * a1;
        ata[2] += a1 * a1;
        atb[0] += a0 * b;
        atb[1] += a1 * b;
        scale = scale.max(a0 * a0 + a1 * a1);
    }
    let det = ata[0] * ata[2] - ata[1] * ata[1];
    if det <= scale * scale * 1e-12 {
        return None;
    }
    Some(((ata[2] * atb[0] - ata[1] * atb[1]) / det, (ata[0] * atb[1] - ata[1] * atb[0]) / det))
}

fn centroid(terms: &[Term]) -> (f64, f64) {
    let n = terms.len() as f64;
    (terms.iter().map(|t| t.x).sum::<f64>() / n, terms.iter().map(|t| t.y).sum::<f64>() / n)
}

/// Solves for the tag position in the plane of the given placement height.
///
/// `init` overrides the starting point; by default the linearized solution
/// (or the anchor centroid for degenerate geometry) is used. With degenerate
/// geometry the result always reports `converged = false`, because the
/// minimizer is not unique no matter where the iteration stops.
pub fn multilaterate(
    layout: &CabinLayout,
    ranges: &RangeSet,
    init: Option<(f64, f64)>,
) -> Result<LocalizationResult> {
    let terms = terms_from(layout, ranges)?;
    let linear = linear_init(&terms);
    let degenerate = linear.is_none();
    let (mut x, mut y) = init.or(linear).unwrap_or_else(|| centroid(&terms));
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::InvalidInput("initial guess must be finite".into()));
    }

    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let (obj, g, h) = derivatives(&terms, x, y);
        let grad_norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if grad_norm <= GRADIENT_TOL {
            converged = true;
            break;
        }
        iterations += 1;

        // Damped normal equations: (JtJ + mu diag(JtJ)) d = -Jt rho.
        // The gradient is 2 Jt rho, hence the halving.
        let mut accepted = false;
        for _ in 0..30 {
            let d00 = h[0] + mu * (h[0] + 1e-12);
            let d11 = h[2] + mu * (h[2] + 1e-12);
            let det = d00 * d11 - h[1] * h[1];
            if det.abs() > 0.0 {
                let rx = -g[0] / 2.0;
                let ry = -g[1] / 2.0;
                let dx = (d11 * rx - h[1] * ry) / det;
                let dy = (d00 * ry - h[1] * rx) / det;
                let (cx, cy) = (x + dx, y + dy);
                if cx.is_finite() && cy.is_finite() && objective(&terms, cx, cy) < obj {
                    x = cx;
                    y = cy;
                    mu = (mu / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !accepted {
            // No descent direction improves the objective anymore; treat the
            // current point as final and let the gradient decide convergence.
            break;
        }
    }
    let (obj, g, _) = derivatives(&terms, x, y);
    let grad_norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
    converged = (converged || grad_norm <= GRADIENT_TOL) && !degenerate;

    Ok(LocalizationResult { x, y, residual: obj, iterations, converged })
}

/// Brute-force reference minimizer for verification: a coarse scan of the
/// cabin footprint refined down to millimeter resolution. Shares no code
/// with [`multilaterate`]; the objective is recomputed from the raw inputs.
pub fn grid_search_oracle(
    layout: &CabinLayout,
    ranges: &RangeSet,
    extra_start: Option<(f64, f64)>,
) -> Result<(f64, f64)> {
    if ranges.entries.len() < 3 {
        return Err(Error::InvalidInput("grid search needs at least 3 ranges".into()));
    }
    let mut points = Vec::new();
    for &(id, r) in &ranges.entries {
        let a = layout.anchor(id).ok_or(Error::UnknownAnchor(id))?;
        let dz = a.position.z - ranges.placement_z;
        points.push((a.position.x, a.position.y, dz * dz, r * r));
    }
    let cost = |px: f64, py: f64| -> f64 {
        let mut total = 0.0;
        for &(ax, ay, dz2, r2) in &points {
            let rho = (px - ax) * (px - ax) + (py - ay) * (py - ay) + dz2 - r2;
            total += rho * rho;
        }
        total
    };
    let scan = |x0: f64, x1: f64, y0: f64, y1: f64, step: f64| -> (f64, f64, f64) {
        let mut best = (x0, y0, f64::INFINITY);
        let nx = ((x1 - x0) / step).ceil() as usize + 1;
        let ny = ((y1 - y0) / step).ceil() as usize + 1;
        for i in 0..nx {
            let px = x0 + i as f64 * step;
            for j in 0..ny {
                let py = y0 + j as f64 * step;
                let c = cost(px, py);
                if c < best.2 {
                    best = (px, py, c);
                }
            }
        }
        best
    };

    let b = &layout.bounds;
    let coarse = scan(b.min_x, b.max_x, b.min_y, b.max_y, 0.064);
    let mut candidates = vec![(coarse.0, coarse.1)];
    if let Some(s) = extra_start {
        candidates.push(s);
    }
    let mut best = (f64::NAN, f64::NAN, f64::INFINITY);
    for (cx, cy) in candidates {
        let mid = scan(cx - 0.128, cx + 0.128, cy - 0.128, cy + 0.128, 0.008);
        let fine = scan(mid.0 - 0.016, mid.0 + 0.016, mid.1 - 0.016, mid.1 + 0.016, 0.001);
        if fine.2 < best.2 {
            best = fine;
        }
    }
    Ok((best.0, best.1))
}

// ── error metrics ───────────────────────────────────────────────────────

/// Absolute range error of a single measurement.
pub fn ranging_error(estimated: f64, truth: f64) -> f64 {
    (estimated - truth).abs()
}

/// 2D Euclidean distance between estimate and true position.
pub fn localization_error(estimate: (f64, f64), truth: (f64, f64)) -> f64 {
    ((estimate.0 - truth.0).powi(2) + (estimate.1 - truth.1).powi(2)).sqrt()
}

/// Summary statistics of a non-empty error sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub q90: f64,
    pub q95: f64,
}

/// Linear-interpolation quantile (the common "type 7" rule) of an ascending
/// slice; `p` in [0, 1].
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ErrorStats {
    pub fn from_values(values: &[f64]) -> Result<ErrorStats> {
        if values.is_empty() {
            return Err(Error::InvalidInput("no values to summarize".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("error sample".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(ErrorStats {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: quantile_sorted(&sorted, 0.5),
            q90: quantile_sorted(&sorted, 0.9),
            q95: quantile_sorted(&sorted, 0.95),
        })
    }
}

// ── seat assignment ─────────────────────────────────────────────────────

/// Nearest seat in the 2D plane; exact distance ties resolve to the
/// lexicographically smaller label.
pub fn assign_seat<'a>(estimate: (f64, f64), layout: &'a CabinLayout) -> Result<&'a str> {
    let mut best: Option<(&str, f64)> = None;
    for seat in &layout.seats {
        let d = localization_error(estimate, (seat.position.x, seat.position.y));
        let better = match best {
            None => true,
            Some((label, bd)) => d < bd || (d == bd && seat.label.as_str() < label),
        };
        if better {
            best = Some((&seat.label, d));
        }
    }
    best.map(|(label, _)| label)
        .ok_or_else(|| Error::InvalidInput("layout has no seats".into()))
}

/// Largest localization error that still guarantees the correct seat wins:
/// half the smallest 2D distance between any two seats.
pub fn assignment_threshold(layout: &CabinLayout) -> Result<f64> {
    layout
        .min_seat_spacing_2d()
        .map(|d| d / 2.0)
        .ok_or_else(|| Error::InvalidInput("threshold needs at least two seats".into()))
}

/// Row, letter, and exact-seat hit rates of (true label, assigned label)
/// pairs. Rows live on the x axis, letters on the y axis, so the seat rate
/// is the conjunction of the two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxisAccuracy {
    pub x: f64,
    pub y: f64,
    pub seat: f64,
}

pub fn axis_accuracy(pairs: &[(String, String)]) -> Result<AxisAccuracy> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no assignments to score".into()));
    }
    let mut hits = (0usize, 0usize, 0usize);
    for (truth, assigned) in pairs {
        let (t_row, t_letter) = split_label(truth)
            .ok_or_else(|| Error::InvalidInput(format!("bad seat label {truth:?}")))?;
        let (a_row, a_letter) = split_label(assigned)
            .ok_or_else(|| Error::InvalidInput(format!("bad seat label {assigned:?}")))?;
        if t_row == a_row {
            hits.0 += 1;
        }
        if t_letter == a_letter {
            hits.1 += 1;
        }
        if t_row == a_row && t_letter == a_letter {
            hits.2 += 1;
        }
    }
    let n = pairs.len() as f64;
    Ok(AxisAccuracy { x: hits.0 as f64 / n, y: hits.1 as f64 / n, seat: hits.2 as f64 / n })
}

// ── method evaluation ───────────────────────────────────────────────────

/// A range-producing or position-producing method under evaluation.
#[derive(Debug, Clone)]
pub enum Method {
    /// Measured ranges as-is.
    Raw,
    Offset(OffsetModel),
    Linear(LinearModel),
    /// Ranges re-estimated from first-path power alone.
    Rssi(RssiPoly),
    Nn(MlpModel),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Offset(_) => "offset",
            Method::Linear(_) => "lr",
            Method::Rssi(_) => "rssi",
            Method::Nn(m) => match m.variant {
                NnVariant::RangeOneAnchor => "nn-1a",
                NnVariant::RangeAll => "nn-range",
                NnVariant::Coord => "nn-coord",
                NnVariant::SeatLabel => "nn-seat",
            },
        }
    }
}

/// Corrected (anchor, range) entries for a record, clamped to physical
/// (non-negative) values. Shared by evaluation and the simulation studies so
/// both produce bit-identical baselines.
pub(crate) fn lr_entries(record: &PositionRecord, model: &LinearModel) -> Result<Vec<(u32, f64)>> {
    record
        .samples
        .iter()
        .map(|s| Ok((s.anchor_id, apply_lr(model, s)?.max(0.0))))
        .collect()
}

/// Solves a record's position from prepared range entries and returns the
/// estimate with its 2D error against the true tag position.
pub(crate) fn solve_entries(
    layout: &CabinLayout,
    record: &PositionRecord,
    entries: Vec<(u32, f64)>,
) -> Result<(LocalizationResult, f64)> {
    let seat = layout
        .seat(&record.seat)
        .ok_or_else(|| Error::Format(format!("record references unknown seat {:?}", record.seat)))?;
    let ranges = RangeSet::new(entries, placement_z(seat, record.placement))?;
    let solved = multilaterate(layout, &ranges, None)?;
    let err = localization_error((solved.x, solved.y), (seat.position.x, seat.position.y));
    Ok((solved, err))
}

struct RecordOutcome {
    ranging_errors: Vec<f64>,
    localization_error: Option<f64>,
    assigned: String,
}

fn evaluate_record(
    dataset: &Dataset,
    method: &Method,
    record: &PositionRecord,
) -> Result<RecordOutcome> {
    let layout = &dataset.layout;
    // Position-producing heads skip the solver entirely.
    if let Method::Nn(model) = method {
        match model.variant {
            NnVariant::Coord => {
                let est = predict_coords(model, record)?;
                let seat = layout.seat(&record.seat).ok_or_else(|| {
                    Error::Format(format!("record references unknown seat {:?}", record.seat))
                })?;
                let err = localization_error(est, (seat.position.x, seat.position.y));
                return Ok(RecordOutcome {
                    ranging_errors: Vec::new(),
                    localization_error: Some(err),
                    assigned: assign_seat(est, layout)?.to_string(),
                });
            }
            NnVariant::SeatLabel => {
                return Ok(RecordOutcome {
                    ranging_errors: Vec::new(),
                    localization_error: None,
                    assigned: predict_seat(model, record)?.to_string(),
                });
            }
            _ => {}
        }
    }

    let estimated: Vec<(u32, f64)> = match method {
        Method::Raw => record.samples.iter().map(|s| (s.anchor_id, s.measured_range)).collect(),
        Method::Offset(m) => record
            .samples
            .iter()
            .map(|s| Ok((s.anchor_id, apply_offset(m, s)?)))
            .collect::<Result<_>>()?,
        Method::Linear(m) => record
            .samples
            .iter()
            .map(|s| Ok((s.anchor_id, apply_lr(m, s)?)))
            .collect::<Result<_>>()?,
        Method::Rssi(poly) => record
            .samples
            .iter()
            .map(|s| (s.anchor_id, rssi_distance_estimate(s.first_path_power, poly)))
            .collect(),
        Method::Nn(model) => predict_ranges(model, record)?,
    };

    let mut ranging_errors = Vec::with_capacity(estimated.len());
    for &(id, est) in &estimated {
        if let Some(sample) = record.samples.iter().find(|s| s.anchor_id == id) {
            ranging_errors.push(ranging_error(est, sample.true_range));
        }
    }

    let entries: Vec<(u32, f64)> = match method {
        // The shared helper keeps this float-identical with the simulation
        // studies' baseline.
        Method::Linear(m) => lr_entries(record, m)?,
        _ => estimated.iter().map(|&(id, r)| (id, r.max(0.0))).collect(),
    };
    let (solved, loc_err) = solve_entries(layout, record, entries)?;
    Ok(RecordOutcome {
        ranging_errors,
        localization_error: Some(loc_err),
        assigned: assign_seat((solved.x, solved.y), layout)?.to_string(),
    })
}

/// One method evaluated on one placement of the test split.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub placement: Placement,
    pub records: usize,
    pub ranging_error: Option<ErrorStats>,
    pub localization_error: Option<ErrorStats>,
    pub accuracy: AxisAccuracy,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    /// Long-format CSV: method,placement,metric,value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,placement,metric,value\n");
        for row in &self.rows {
            let mut push = |metric: &str, value: String| {
                out.push_str(&format!("{},{},{metric},{value}\n", row.method, row.placement));
            };
            push("records", row.records.to_string());
            for (prefix, stats) in
                [("ranging_error", &row.ranging_error), ("localization_error", &row.localization_error)]
            {
                if let Some(s) = stats {
                    push(&format!("{prefix}_mean"), s.mean.to_string());
                    push(&format!("{prefix}_median"), s.median.to_string());
                    push(&format!("{prefix}_q90"), s.q90.to_string());
                    push(&format!("{prefix}_q95"), s.q95.to_string());
                }
            }
            push("x_axis_accuracy", row.accuracy.x.to_string());
            push("y_axis_accuracy", row.accuracy.y.to_string());
            push("seat_accuracy", row.accuracy.seat.to_string());
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn row(&self, method: &str, placement: Placement) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.placement == placement)
    }
}

/// Runs every method over the test split, split by placement.
pub fn evaluate(dataset: &Dataset, methods: &[Method]) -> Result<EvaluationReport> {
    dataset.layout.validate()?;
    if !dataset.has_split(Split::Test) {
        return Err(Error::EmptySplit(Split::Test));
    }
    for method in methods {
        if let Method::Nn(model) = method {
            if !model.trained {
                return Err(Error::UntrainedModel);
            }
            model.validate()?;
        }
    }

    let mut rows = Vec::new();
    for method in methods {
        for placement in PLACEMENTS {
            let records: Vec<&PositionRecord> = dataset
                .records_in(Split::Test)
                .filter(|r| r.placement == placement)
                .collect();
            if records.is_empty() {
                continue;
            }
            let outcomes: Vec<RecordOutcome> = records
                .par_iter()
                .map(|r| evaluate_record(dataset, method, r))
                .collect::<Result<_>>()?;

            let ranging: Vec<f64> =
                outcomes.iter().flat_map(|o| o.ranging_errors.iter().cloned()).collect();
            let localization: Vec<f64> =
                outcomes.iter().filter_map(|o| o.localization_error).collect();
            let pairs: Vec<(String, String)> = records
                .iter()
                .zip(&outcomes)
                .map(|(r, o)| (r.seat.clone(), o.assigned.clone()))
                .collect();

            rows.push(ReportRow {
                method: method.name().to_string(),
                placement,
                records: records.len(),
                ranging_error: if ranging.is_empty() {
                    None
                } else {
                    Some(ErrorStats::from_values(&ranging)?)
                },
                localization_error: if localization.is_empty() {
                    None
                } else {
                    Some(ErrorStats::from_values(&localization)?)
                },
                accuracy: axis_accuracy(&pairs)?,
            });
        }
    }
    Ok(EvaluationReport { rows })
}
