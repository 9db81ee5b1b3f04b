//! Three-deep ring of multi-scale, multi-bit event-count slices.
//!
//! Ring roles are `t` (accumulating), `t-d` (reference for matching) and
//! `t-2d` (searched). Each slice is a pyramid of `s` grids; scale `m`
//! subsamples addresses by right-shifting them `m` bits. Cells are saturating
//! counters of `g` bits, unsigned by default or signed when polarity is used.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_io::{Event, SensorGeometry};

pub const MAX_SCALES: u8 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Rotate once `d_us` microseconds have elapsed since the slice started.
    ConstantDuration,
    /// Rotate once the `t` slice holds `K` events.
    ConstantEventNumber,
    /// Rotate once any `2^area_shift`-square area holds `k` events.
    AreaEventNumber { area_shift: u8 },
}

/// Which trigger rotates the ring, plus its live (adaptable) parameter.
///
/// The parameter is `d` in microseconds, or the event count `K` / `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationPolicy {
    pub kind: PolicyKind,
    value: f64,
}

impl RotationPolicy {
    pub fn constant_duration(d_us: u64) -> Self {
        RotationPolicy {
            kind: PolicyKind::ConstantDuration,
            value: d_us as f64,
        }
    }

    pub fn constant_event_number(k: u64) -> Self {
        RotationPolicy {
            kind: PolicyKind::ConstantEventNumber,
            value: k as f64,
        }
    }

    pub fn area_event_number(k: u64, area_shift: u8) -> Self {
        RotationPolicy {
            kind: PolicyKind::AreaEventNumber { area_shift },
            value: k as f64,
        }
    }

    /// Live parameter, unrounded.
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn set_value(&mut self, value: f64) {
        self.value = value.max(1.0);
    }

    /// Threshold the trigger compares against.
    pub fn threshold(&self) -> u64 {
        (self.value.round() as u64).max(1)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PolicyKind::ConstantDuration => "duration",
            PolicyKind::ConstantEventNumber => "events",
            PolicyKind::AreaEventNumber { .. } => "area",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    pub geometry: SensorGeometry,
    /// Number of scales, `s`.
    pub scales: u8,
    /// Bits per cell, `g`.
    pub bits: u8,
    pub use_polarity: bool,
    pub policy: RotationPolicy,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            geometry: SensorGeometry::default(),
            scales: 2,
            bits: 3,
            use_polarity: false,
            policy: RotationPolicy::area_event_number(1000, 5),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SliceError {
    #[error("time between slices t-d and t-2d is undefined (empty slice or non-increasing time)")]
    UndefinedDt,
    #[error("invalid slice configuration: {0}")]
    Config(String),
}

impl SliceConfig {
    pub fn validate(&self) -> Result<(), SliceError> {
        if self.scales == 0 || self.scales > MAX_SCALES {
            return Err(SliceError::Config(format!(
                "scales must be in 1..={MAX_SCALES}, got {}",
                self.scales
            )));
        }
        if self.bits == 0 || self.bits > 7 {
            return Err(SliceError::Config(format!("bits must be in 1..=7, got {}", self.bits)));
        }
        if self.use_polarity && self.bits < 2 {
            return Err(SliceError::Config("signed slices need at least 2 bits".into()));
        }
        if self.geometry.width == 0 || self.geometry.height == 0 {
            return Err(SliceError::Config("zero-area geometry".into()));
        }
        Ok(())
    }

    /// Inclusive cell bounds: `[0, 2^g-1]` unsigned, `±(2^(g-1)-1)` signed.
    pub fn cell_bounds(&self) -> (i8, i8) {
        if self.use_polarity {
            let m = (1i16 << (self.bits - 1)) - 1;
            (-m as i8, m as i8)
        } else {
            (0, ((1i16 << self.bits) - 1) as i8)
        }
    }
}

/// One scale of one slice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<i8>,
}

impl Grid {
    fn new(width: usize, height: usize) -> Self {
        Grid {
            width,
            height,
            cells: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> i8 {
        self.cells[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[i8] {
        &self.cells[y * self.width..(y + 1) * self.width]
    }

    pub fn nonzero(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    fn clear(&mut self) {
        self.cells.fill(0);
    }
}

/// Dimensions of scale `m`: each side divided by `2^m`, rounded up.
pub fn scale_dims(geometry: SensorGeometry, m: u8) -> (usize, usize) {
    let div = |n: u16| (n as usize).div_ceil(1usize << m);
    (div(geometry.width), div(geometry.height))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slice {
    pub scales: Vec<Grid>,
    pub first_ts: Option<u64>,
    pub last_ts: Option<u64>,
    pub events: u64,
}

impl Slice {
    fn new(geometry: SensorGeometry, scales: u8) -> Self {
        let scales = (0..scales)
            .map(|m| {
                let (w, h) = scale_dims(geometry, m);
                Grid::new(w, h)
            })
            .collect();
        Slice {
            scales,
            first_ts: None,
            last_ts: None,
            events: 0,
        }
    }

    fn clear(&mut self) {
        for g in &mut self.scales {
            g.clear();
        }
        self.first_ts = None;
        self.last_ts = None;
        self.events = 0;
    }

    pub fn is_empty(&self) -> bool {
        self.events == 0
    }

    /// Midpoint of the first and last timestamps, in microseconds.
    pub fn slice_time(&self) -> Option<f64> {
        match (self.first_ts, self.last_ts) {
            (Some(a), Some(b)) => Some((a as f64 + b as f64) / 2.0),
            _ => None,
        }
    }

    /// Fraction of nonzero cells at scale `m`.
    pub fn occupancy(&self, m: usize) -> f64 {
        let g = &self.scales[m];
        g.nonzero() as f64 / g.cells.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RingPosition {
    /// The accumulating slice.
    Current,
    /// `t-d`, the reference slice.
    Previous,
    /// `t-2d`, the searched slice.
    Oldest,
}

/// Per-area event counters for the area policy.
#[derive(Clone, Debug, PartialEq, Eq)]
struct AreaCounters {
    shift: u8,
    cols: usize,
    counts: Vec<u32>,
    max: u32,
}

impl AreaCounters {
    fn new(geometry: SensorGeometry, shift: u8) -> Self {
        let side = 1usize.checked_shl(shift as u32).unwrap_or(usize::MAX);
        let cols = (geometry.width as usize).div_ceil(side).max(1);
        let rows = (geometry.height as usize).div_ceil(side).max(1);
        AreaCounters {
            shift,
            cols,
            counts: vec![0; cols * rows],
            max: 0,
        }
    }

    fn index(&self, x: u16, y: u16) -> usize {
        let s = (self.shift as u32).min(16);
        (y as usize >> s) * self.cols + (x as usize >> s)
    }

    fn increment(&mut self, x: u16, y: u16) {
        let i = self.index(x, y);
        self.counts[i] += 1;
        self.max = self.max.max(self.counts[i]);
    }

    fn reset(&mut self) {
        self.counts.fill(0);
        self.max = 0;
    }
}

/// The slice ring plus the rotation trigger state.
#[derive(Clone, Debug)]
pub struct SlicePyramid {
    config: SliceConfig,
    ring: [Slice; 3],
    current: usize,
    bounds: (i8, i8),
    area: Option<AreaCounters>,
    /// Start of the current slice on the duration grid.
    anchor: Option<u64>,
    fresh: bool,
    saturations: u64,
}

impl SlicePyramid {
    pub fn new(config: SliceConfig) -> Result<Self, SliceError> {
        config.validate()?;
        let make = || Slice::new(config.geometry, config.scales);
        let area = match config.policy.kind {
            PolicyKind::AreaEventNumber { area_shift } => Some(AreaCounters::new(config.geometry, area_shift)),
            _ => None,
        };
        Ok(SlicePyramid {
            bounds: config.cell_bounds(),
            ring: [make(), make(), make()],
            current: 0,
            area,
            anchor: None,
            fresh: false,
            saturations: 0,
            config,
        })
    }

    pub fn config(&self) -> &SliceConfig {
        &self.config
    }

    pub fn policy(&self) -> &RotationPolicy {
        &self.config.policy
    }

    pub fn policy_mut(&mut self) -> &mut RotationPolicy {
        &mut self.config.policy
    }

    pub fn scales(&self) -> usize {
        self.config.scales as usize
    }

    pub fn cell_bounds(&self) -> (i8, i8) {
        self.bounds
    }

    /// Largest possible absolute difference between two cells.
    pub fn cell_range(&self) -> u32 {
        (self.bounds.1 as i32 - self.bounds.0 as i32) as u32
    }

    /// Number of increments lost to saturation so far.
    pub fn saturations(&self) -> u64 {
        self.saturations
    }

    fn index_of(&self, pos: RingPosition) -> usize {
        match pos {
            RingPosition::Current => self.current,
            RingPosition::Previous => (self.current + 2) % 3,
            RingPosition::Oldest => (self.current + 1) % 3,
        }
    }

    pub fn slice(&self, pos: RingPosition) -> &Slice {
        &self.ring[self.index_of(pos)]
    }

    /// Backing buffer index currently in role `pos` (0..3).
    pub fn buffer_index(&self, pos: RingPosition) -> usize {
        self.index_of(pos)
    }

    /// Largest per-area event count in the current slice (area policy only).
    pub fn max_area_count(&self) -> Option<u32> {
        self.area.as_ref().map(|a| a.max)
    }

    /// Whether `e` must open a new slice. Evaluated before accumulating `e`.
    pub fn should_rotate(&self, e: &Event) -> bool {
        let threshold = self.config.policy.threshold();
        match self.config.policy.kind {
            PolicyKind::ConstantDuration => match self.anchor {
                Some(start) => e.t.saturating_sub(start) >= threshold,
                None => false,
            },
            PolicyKind::ConstantEventNumber => self.current_slice().events >= threshold,
            PolicyKind::AreaEventNumber { .. } => self.area.as_ref().is_some_and(|a| a.max as u64 >= threshold),
        }
    }

    fn current_slice(&self) -> &Slice {
        &self.ring[self.current]
    }

    /// Add `e` to every scale of the `t` slice.
    pub fn accumulate(&mut self, e: &Event) {
        debug_assert!(self.config.geometry.contains(e.x, e.y));
        self.advance_anchor(e.t);
        let delta = if self.config.use_polarity { e.pol.sign() } else { 1 };
        let (lo, hi) = self.bounds;
        let slice = &mut self.ring[self.current];
        for (m, grid) in slice.scales.iter_mut().enumerate() {
            let idx = (e.y as usize >> m) * grid.width + (e.x as usize >> m);
            let cell = &mut grid.cells[idx];
            let next = *cell as i16 + delta as i16;
            if next > hi as i16 || next < lo as i16 {
                self.saturations += 1;
            } else {
                *cell = next as i8;
            }
        }
        slice.first_ts.get_or_insert(e.t);
        slice.last_ts = Some(e.t);
        slice.events += 1;
        if let Some(area) = &mut self.area {
            area.increment(e.x, e.y);
        }
    }

    fn advance_anchor(&mut self, t: u64) {
        match self.anchor {
            None => self.anchor = Some(t),
            Some(start) if self.fresh => {
                if let PolicyKind::ConstantDuration = self.config.policy.kind {
                    let d = self.config.policy.threshold();
                    let elapsed = t.saturating_sub(start);
                    self.anchor = Some(start + (elapsed / d) * d);
                } else {
                    self.anchor = Some(t);
                }
            }
            _ => {}
        }
        self.fresh = false;
    }

    /// Advance the ring: `t` becomes `t-d`, `t-d` becomes `t-2d`, and the old
    /// `t-2d` buffer is cleared and becomes the new `t`.
    pub fn rotate(&mut self) {
        self.current = (self.current + 1) % 3;
        self.ring[self.current].clear();
        if let Some(area) = &mut self.area {
            area.reset();
        }
        self.fresh = true;
    }

    /// Time between the reference and searched slices, in microseconds.
    pub fn slice_dt(&self) -> Result<f64, SliceError> {
        let prev = self.slice(RingPosition::Previous).slice_time();
        let oldest = self.slice(RingPosition::Oldest).slice_time();
        match (prev, oldest) {
            (Some(a), Some(b)) if a > b => Ok(a - b),
            _ => Err(SliceError::UndefinedDt),
        }
    }

    /// Total cell storage in bits: `3 g Σ_m cells(m)`.
    pub fn storage_bits(&self) -> u64 {
        let cells: usize = (0..self.config.scales)
            .map(|m| {
                let (w, h) = scale_dims(self.config.geometry, m);
                w * h
            })
            .sum();
        3 * self.config.bits as u64 * cells as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_io::Polarity;

    fn config(w: u16, h: u16, scales: u8, bits: u8, policy: RotationPolicy) -> SliceConfig {
        SliceConfig {
            geometry: SensorGeometry::new(w, h).unwrap(),
            scales,
            bits,
            use_polarity: false,
            policy,
        }
    }

    fn ev(t: u64, x: u16, y: u16) -> Event {
        Event::new(t, x, y, Polarity::On)
    }

    #[test]
    fn unsigned_cell_saturates_at_seven() {
        let mut p = SlicePyramid::new(config(8, 8, 1, 3, RotationPolicy::constant_event_number(100))).unwrap();
        for i in 0..9 {
            p.accumulate(&ev(i, 2, 2));
        }
        assert_eq!(p.slice(RingPosition::Current).scales[0].get(2, 2), 7);
        assert_eq!(p.saturations(), 2);
    }

    #[test]
    fn event_lands_in_every_scale() {
        let mut p = SlicePyramid::new(config(8, 8, 2, 3, RotationPolicy::constant_event_number(100))).unwrap();
        p.accumulate(&ev(0, 5, 3));
        let s = p.slice(RingPosition::Current);
        assert_eq!(s.scales[0].get(5, 3), 1);
        assert_eq!(s.scales[1].get(2, 1), 1);
        assert_eq!(s.scales[0].nonzero(), 1);
        assert_eq!(s.scales[1].nonzero(), 1);
    }

    #[test]
    fn signed_cell_clamps_at_minus_three() {
        let mut cfg = config(4, 4, 1, 3, RotationPolicy::constant_event_number(100));
        cfg.use_polarity = true;
        let mut p = SlicePyramid::new(cfg).unwrap();
        // reference: sequential clamp to ±(2^(g-1)-1)
        let mut expected: i32 = 0;
        for i in 0..14u64 {
            let pol = if i < 5 { Polarity::On } else { Polarity::Off };
            p.accumulate(&Event::new(i, 1, 1, pol));
            let next = expected + pol.sign() as i32;
            if (-3..=3).contains(&next) {
                expected = next;
            }
        }
        assert_eq!(expected, -3);
        assert_eq!(p.slice(RingPosition::Current).scales[0].get(1, 1), -3);
    }

    #[test]
    fn ragged_edges_use_ceil_dims() {
        let g = SensorGeometry::new(346, 260).unwrap();
        assert_eq!(scale_dims(g, 0), (346, 260));
        assert_eq!(scale_dims(g, 1), (173, 130));
        assert_eq!(scale_dims(g, 2), (87, 65));
        let mut p = SlicePyramid::new(config(5, 3, 3, 3, RotationPolicy::constant_event_number(100))).unwrap();
        p.accumulate(&ev(0, 4, 2));
        assert_eq!(p.slice(RingPosition::Current).scales[2].get(1, 0), 1);
    }

    #[test]
    fn storage_follows_cell_counts() {
        let p = SlicePyramid::new(SliceConfig::default()).unwrap();
        assert_eq!(p.storage_bits(), 3 * 3 * (346 * 260 + 173 * 130));
    }

    #[test]
    fn rotation_clears_new_slice_and_cycles_buffers() {
        let mut p = SlicePyramid::new(config(8, 8, 2, 3, RotationPolicy::constant_event_number(100))).unwrap();
        let first = p.buffer_index(RingPosition::Current);
        for round in 0..3 {
            p.accumulate(&ev(round, 1, 1));
            p.rotate();
            let s = p.slice(RingPosition::Current);
            assert!(s.is_empty());
            assert!(s.scales.iter().all(|g| g.nonzero() == 0));
        }
        assert_eq!(p.buffer_index(RingPosition::Current), first);
    }

    #[test]
    fn pattern_moves_through_ring() {
        let mut p = SlicePyramid::new(config(16, 16, 2, 3, RotationPolicy::constant_event_number(100))).unwrap();
        let pattern = [(1u16, 2u16), (7, 7), (7, 7), (15, 0), (3, 12)];
        for (i, &(x, y)) in pattern.iter().enumerate() {
            p.accumulate(&ev(i as u64, x, y));
        }
        let snapshot = p.slice(RingPosition::Current).clone();
        p.rotate();
        assert_eq!(p.slice(RingPosition::Previous), &snapshot);
        p.accumulate(&ev(10, 0, 0));
        p.rotate();
        assert_eq!(p.slice(RingPosition::Oldest), &snapshot);
        p.rotate();
        assert!(p.slice(RingPosition::Current).is_empty());
    }

    #[test]
    fn slice_dt_uses_midpoints() {
        let mut p = SlicePyramid::new(config(8, 8, 1, 3, RotationPolicy::constant_event_number(100))).unwrap();
        assert_eq!(p.slice_dt(), Err(SliceError::UndefinedDt));
        p.accumulate(&ev(0, 0, 0));
        p.accumulate(&ev(10_000, 0, 0));
        p.rotate();
        p.accumulate(&ev(10_000, 1, 0));
        p.accumulate(&ev(30_000, 1, 0));
        p.rotate();
        assert_eq!(p.slice_dt(), Ok(15_000.0));

        let mut q = SlicePyramid::new(config(8, 8, 1, 3, RotationPolicy::constant_event_number(100))).unwrap();
        q.accumulate(&ev(1_000, 0, 0));
        q.rotate();
        q.accumulate(&ev(2_000, 0, 0));
        q.rotate();
        assert_eq!(q.slice_dt(), Ok(1_000.0));
        q.rotate();
        // t-2d now holds the 2 000 µs event, t-d is empty
        assert_eq!(q.slice_dt(), Err(SliceError::UndefinedDt));
    }

    /// Drive a pyramid over `times`/`coords` and return the indices of the
    /// events that opened a new slice.
    fn rotation_points(policy: RotationPolicy, stream: &[(u64, u16, u16)]) -> Vec<usize> {
        let mut p = SlicePyramid::new(config(8, 8, 1, 3, policy)).unwrap();
        let mut points = Vec::new();
        for (i, &(t, x, y)) in stream.iter().enumerate() {
            let e = ev(t, x, y);
            if p.should_rotate(&e) {
                p.rotate();
                points.push(i);
            }
            p.accumulate(&e);
        }
        points
    }

    // 12 events at the timestamps of the classic three-policy illustration,
    // with our own coordinates on an 8x8 sensor (4x4 areas at area_shift 2).
    const ILLUSTRATION: [(u64, u16, u16); 12] = [
        (0, 0, 0),
        (25, 5, 1),
        (50, 1, 5),
        (75, 5, 5),
        (100, 1, 1),
        (150, 6, 6),
        (180, 6, 1),
        (200, 2, 6),
        (250, 0, 6),
        (300, 2, 2),
        (350, 4, 4),
        (400, 7, 2),
    ];

    #[test]
    fn constant_duration_fires_on_grid_deadlines() {
        let points = rotation_points(RotationPolicy::constant_duration(40), &ILLUSTRATION);
        let times: Vec<u64> = points.iter().map(|&i| ILLUSTRATION[i].0).collect();
        // first event at or beyond 40, 80, 120, 160, 200, 240, 280, 320, 360
        assert_eq!(times, vec![50, 100, 150, 180, 200, 250, 300, 350, 400]);
    }

    #[test]
    fn constant_event_number_groups_of_four() {
        let points = rotation_points(RotationPolicy::constant_event_number(4), &ILLUSTRATION);
        assert_eq!(points, vec![4, 8]);
    }

    #[test]
    fn area_event_number_closes_slice_on_second_hit() {
        let points = rotation_points(RotationPolicy::area_event_number(2, 2), &ILLUSTRATION);
        // areas: (0,0) gets events 0 and 4 -> slice closes after event 4
        // next slice: 5 (1,1), 6 (1,0), 7 (0,1), 8 (0,1) -> closes after 8
        // next slice: 9 (0,0), 10 (1,1), 11 (1,0) -> still open
        assert_eq!(points, vec![5, 9]);
    }

    #[test]
    fn area_counters_reset_on_rotation() {
        let mut p = SlicePyramid::new(config(64, 64, 1, 3, RotationPolicy::area_event_number(3, 5))).unwrap();
        p.accumulate(&ev(0, 0, 0));
        p.accumulate(&ev(1, 40, 40));
        p.accumulate(&ev(2, 1, 1));
        assert_eq!(p.max_area_count(), Some(2));
        p.rotate();
        assert_eq!(p.max_area_count(), Some(0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = SliceConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.scales = 0;
        assert!(cfg.validate().is_err());
        cfg.scales = 2;
        cfg.bits = 8;
        assert!(cfg.validate().is_err());
        cfg.bits = 1;
        cfg.use_polarity = true;
        assert!(cfg.validate().is_err());
    }
}
