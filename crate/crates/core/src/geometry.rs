//! Cabin coordinate frame, anchor and seat placement, synthetic layouts.
//!
//! Frame convention: origin at the front-left floor corner, x runs aft along
//! the seat rows, y runs laterally across the seat letters, z is vertical.
//! All coordinates are meters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the cabin frame (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    /// Euclidean 3D distance.
    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Euclidean distance in the horizontal plane, ignoring z.
    pub fn distance_2d(&self, other: &Point3) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        (dx * dx + dy * dy).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// A fixed reference radio at a known position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: u32,
    #[serde(flatten)]
    pub position: Point3,
}

/// One seat with its tag-placement heights.
///
/// `position` is the seat-surface reference point; `seat_z` and `headrest_z`
/// are the z coordinates a tag rests at in the two placement scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seat {
    pub label: String,
    #[serde(flatten)]
    pub position: Point3,
    pub seat_z: f64,
    pub headrest_z: f64,
}

/// Axis-aligned cabin bounding box (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub min_z: f64,
    pub max_x: f64,
    pub max_y: f64,
    pub max_z: f64,
}

impl Bounds {
    pub fn contains(&self, p: &Point3) -> bool {
        const EPS: f64 = 1e-9;
        p.x >= self.min_x - EPS
            && p.x <= self.max_x + EPS
            && p.y >= self.min_y - EPS
            && p.y <= self.max_y + EPS
            && p.z >= self.min_z - EPS
            && p.z <= self.max_z + EPS
    }
}

/// Anchors, seats, and the cabin box they live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CabinLayout {
    pub anchors: Vec<Anchor>,
    pub seats: Vec<Seat>,
    pub bounds: Bounds,
}

impl CabinLayout {
    pub fn anchor(&self, id: u32) -> Option<&Anchor> {
        self.anchors.iter().find(|a| a.id == id)
    }

    pub fn seat(&self, label: &str) -> Option<&Seat> {
        self.seats.iter().find(|s| s.label == label)
    }

    /// Smallest pairwise 2D seat distance, None with fewer than two seats.
    pub fn min_seat_spacing_2d(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, a) in self.seats.iter().enumerate() {
            for b in &self.seats[i + 1..] {
                let d = a.position.distance_2d(&b.position);
                best = Some(best.map_or(d, |m: f64| m.min(d)));
            }
        }
        best
    }

    /// Checks every structural invariant; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.anchors.len() < 3 {
            return Err(Error::Format(format!(
                "layout needs at least 3 anchors for 2D localization, found {}",
                self.anchors.len()
            )));
        }
        let mut ids: Vec<u32> = self.anchors.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.anchors.len() {
            return Err(Error::Format("duplicate anchor ids".into()));
        }
        let mut labels: Vec<&str> = self.seats.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.seats.len() {
            return Err(Error::Format("duplicate seat labels".into()));
        }
        for a in &self.anchors {
            if !a.position.is_finite() || !self.bounds.contains(&a.position) {
                return Err(Error::Format(format!("anchor {} outside bounds", a.id)));
            }
        }
        for s in &self.seats {
            if !s.position.is_finite() || !self.bounds.contains(&s.position) {
                return Err(Error::Format(format!("seat {} outside bounds", s.label)));
            }
            if split_label(&s.label).is_none() {
                return Err(Error::Format(format!("malformed seat label {:?}", s.label)));
            }
        }
        if let Some(d) = self.min_seat_spacing_2d() {
            if d <= 0.0 {
                return Err(Error::Format("coincident seats in layout".into()));
            }
        }
        Ok(())
    }
}

/// Splits a seat label like "12C" into row number and column letters.
pub fn split_label(label: &str) -> Option<(u32, &str)> {
    let digits = label.len() - label.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 || digits == label.len() {
        return None;
    }
    let row: u32 = label[..digits].parse().ok()?;
    if row == 0 {
        return None;
    }
    Some((row, &label[digits..]))
}

/// Euclidean 3D distance between an anchor and a tag position.
pub fn true_range(anchor: &Anchor, tag: &Point3) -> f64 {
    anchor.position.distance(tag)
}

/// Known vertical separation between an anchor and a tag placement plane.
pub fn delta_z(anchor: &Anchor, placement_z: f64) -> f64 {
    (anchor.position.z - placement_z).abs()
}

/// Parameters for [`generate_cabin`]. Defaults approximate a single-aisle
/// narrow-body cabin: 27 rows of ABCDEF at 0.8 m pitch and 0.45 m lateral
/// spacing, 11 ceiling anchors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CabinParams {
    pub rows: u32,
    /// Column letters, e.g. "ABCDEF". The aisle sits after the first half.
    pub columns: String,
    /// Row-to-row spacing along x (meters).
    pub pitch: f64,
    /// Seat-to-seat spacing along y within a block (meters).
    pub width_spacing: f64,
    pub anchor_count: u32,
    pub aisle_width: f64,
    /// Tag height when placed on the seat surface.
    pub seat_z: f64,
    /// Tag height when placed on the headrest.
    pub headrest_z: f64,
    /// Ceiling height anchors are mounted at.
    pub anchor_z: f64,
}

impl Default for CabinParams {
    fn default() -> Self {
        CabinParams {
            rows: 27,
            columns: "ABCDEF".into(),
            pitch: 0.8,
            width_spacing: 0.45,
            anchor_count: 11,
            aisle_width: 0.5,
            seat_z: 0.45,
            headrest_z: 1.10,
            anchor_z: 2.0,
        }
    }
}

const FRONT_MARGIN: f64 = 1.0;
const AFT_MARGIN: f64 = 1.0;
const WALL_MARGIN: f64 = 0.35;
const CEILING_CLEARANCE: f64 = 0.3;

/// Builds a synthetic cabin: seats on a regular grid with an aisle gap,
/// anchors spread along the ceiling near alternating hull sides with a small
/// seeded jitter in x.
pub fn generate_cabin(params: &CabinParams, seed: u64) -> Result<CabinLayout> {
    if params.rows < 1 {
        return Err(Error::InvalidInput("rows must be >= 1".into()));
    }
    if params.columns.is_empty() {
        return Err(Error::InvalidInput("columns must be non-empty".into()));
    }
    if !params.columns.chars().all(|c| c.is_ascii_uppercase()) {
        return Err(Error::InvalidInput(
            "columns must be uppercase ASCII letters".into(),
        ));
    }
    {
        let mut letters: Vec<char> = params.columns.chars().collect();
        letters.sort_unstable();
        letters.dedup();
        if letters.len() != params.columns.chars().count() {
            return Err(Error::InvalidInput("duplicate column letters".into()));
        }
    }
    if params.anchor_count < 3 {
        return Err(Error::InvalidInput(
            "anchor_count must be >= 3 for 2D localization".into(),
        ));
    }
    if params.pitch <= 0.0 || params.width_spacing <= 0.0 || params.aisle_width < 0.0 {
        return Err(Error::InvalidInput("spacings must be positive".into()));
    }
    if params.headrest_z < 0.0 || params.seat_z < 0.0 || params.anchor_z <= 0.0 {
        return Err(Error::InvalidInput("heights must be non-negative".into()));
    }

    let letters: Vec<char> = params.columns.chars().collect();
    let aisle_after = letters.len().div_ceil(2); // aisle goes after this many seats
    let has_aisle = letters.len() > 1;

    // Seat y coordinate per column index, inserting the aisle gap once.
    let y_of = |col: usize| -> f64 {
        let mut y = WALL_MARGIN + col as f64 * params.width_spacing;
        if has_aisle && col >= aisle_after {
            y += params.aisle_width;
        }
        y
    };

    let cabin_width = y_of(letters.len() - 1) + WALL_MARGIN;
    let cabin_length = FRONT_MARGIN + (params.rows - 1) as f64 * params.pitch + AFT_MARGIN;
    let bounds = Bounds {
        min_x: 0.0,
        min_y: 0.0,
        min_z: 0.0,
        max_x: cabin_length,
        max_y: cabin_width,
        max_z: params.anchor_z + CEILING_CLEARANCE,
    };

    let mut seats = Vec::with_capacity(params.rows as usize * letters.len());
    for row in 1..=params.rows {
        let x = FRONT_MARGIN + (row - 1) as f64 * params.pitch;
        for (col, letter) in letters.iter().enumerate() {
            seats.push(Seat {
                label: format!("{row}{letter}"),
                position: Point3::new(x, y_of(col), params.seat_z),
                seat_z: params.seat_z,
                headrest_z: params.headrest_z,
            });
        }
    }

    // Anchors alternate hull sides so no three are collinear, spaced evenly
    // in x with a small seeded jitter. Jitter is bounded well inside the
    // spacing so ordering and side alternation survive any seed.
    let mut rng = crate::rng::stream(seed, &[0x6C61_796F]);
    let n = params.anchor_count as usize;
    let x_lo = 0.3;
    let x_hi = cabin_length - 0.3;
    let step = if n > 1 { (x_hi - x_lo) / (n - 1) as f64 } else { 0.0 };
    let jitter = (0.25 * step).min(0.25);
    let mut anchors = Vec::with_capacity(n);
    for i in 0..n {
        let base_x = if n > 1 { x_lo + i as f64 * step } else { 0.5 * (x_lo + x_hi) };
        let x = (base_x + rng.random_range(-jitter..=jitter)).clamp(x_lo, x_hi);
        let y = if i % 2 == 0 { 0.12 } else { cabin_width - 0.12 };
        anchors.push(Anchor {
            id: i as u32,
            position: Point3::new(x, y, params.anchor_z),
        });
    }

    let layout = CabinLayout { anchors, seats, bounds };
    layout.validate().map(|_| layout)
}

// ── persistence ─────────────────────────────────────────────────────────

/// Serializes a layout to pretty JSON (schema: anchors / seats / bounds).
pub fn layout_to_json(layout: &CabinLayout) -> Result<String> {
    Ok(serde_json::to_string_pretty(layout)?)
}

/// Parses and validates a layout JSON document.
pub fn layout_from_json(text: &str) -> Result<CabinLayout> {
    let layout: CabinLayout = serde_json::from_str(text)?;
    layout.validate()?;
    Ok(layout)
}

pub fn save_layout(layout: &CabinLayout, path: &std::path::Path) -> Result<()> {
    let mut text = layout_to_json(layout)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_layout(path: &std::path::Path) -> Result<CabinLayout> {
    let text = std::fs::read_to_string(path)?;
    layout_from_json(&text)
}
