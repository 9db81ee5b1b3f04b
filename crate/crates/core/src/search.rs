//! Block matching between the reference slice `t-d` and the searched slice
//! `t-2d`.
//!
//! Cost is the sum of absolute differences over a `b x b` window, counted
//! only on pixel pairs where at least one cell is nonzero. Candidates are
//! ranked by normalized SAD `sad / (valid_count * cell_range)`, then by
//! Chebyshev length of the offset (zero-motion bias), then by row-major scan
//! order. Normalized costs are compared exactly by cross-multiplication.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::event_io::{Event, FlowEvent};
use crate::slices::{Grid, RingPosition, SlicePyramid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchStrategy {
    Full,
    Diamond,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Block side `b` in cells (odd).
    pub block: usize,
    /// Search radius `r` in cells of the searched scale.
    pub radius: i32,
    pub strategy: SearchStrategy,
    /// Minimum nonzero-cell fraction in both windows.
    pub valid_pix_occupancy: f64,
    /// Largest accepted normalized SAD.
    pub max_allowed_sad: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            block: 21,
            radius: 4,
            strategy: SearchStrategy::Diamond,
            valid_pix_occupancy: 0.01,
            max_allowed_sad: 0.5,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.block % 2 == 0 || self.block == 0 {
            return Err(format!("block dimension must be odd, got {}", self.block));
        }
        if self.radius < 1 {
            return Err(format!("search radius must be at least 1, got {}", self.radius));
        }
        if !(0.0..=1.0).contains(&self.valid_pix_occupancy) {
            return Err(format!("occupancy {} outside [0, 1]", self.valid_pix_occupancy));
        }
        if !(0.0..=1.0).contains(&self.max_allowed_sad) {
            return Err(format!("max SAD {} outside [0, 1]", self.max_allowed_sad));
        }
        Ok(())
    }

    fn min_nonzero(&self) -> f64 {
        self.valid_pix_occupancy * (self.block * self.block) as f64
    }
}

/// Raw cost of one candidate block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct BlockCost {
    pub sad: u32,
    /// Pixel pairs where at least one operand is nonzero.
    pub valid_count: u32,
    /// Nonzero cells in the candidate window.
    pub cand_nonzero: u32,
}

/// SAD between the window centered at `center` in `reference` and the window
/// centered at `center + offset` in `candidate`. Both windows must lie inside
/// their grids.
pub fn block_sad(
    reference: &Grid,
    candidate: &Grid,
    center: (usize, usize),
    offset: (i32, i32),
    block: usize,
) -> BlockCost {
    let half = block / 2;
    let (rx0, ry0) = (center.0 - half, center.1 - half);
    let cx0 = (center.0 as i64 + offset.0 as i64 - half as i64) as usize;
    let cy0 = (center.1 as i64 + offset.1 as i64 - half as i64) as usize;
    assert!(rx0 + block <= reference.width && ry0 + block <= reference.height);
    assert!(cx0 + block <= candidate.width && cy0 + block <= candidate.height);
    let mut acc = kernel::Acc::new();
    for row in 0..block {
        let r = &reference.cells[(ry0 + row) * reference.width + rx0..][..block];
        let c = &candidate.cells[(cy0 + row) * candidate.width + cx0..][..block];
        let mut rc = r.chunks_exact(LANES);
        let mut cc = c.chunks_exact(LANES);
        for (a, b) in rc.by_ref().zip(cc.by_ref()) {
            acc.add(a.try_into().unwrap(), b.try_into().unwrap(), 0);
        }
        let rem = rc.remainder().len();
        if rem == 0 {
            continue;
        }
        if block >= LANES {
            // last full-width chunk, counting only the lanes not seen yet
            let tail = block - LANES;
            acc.add(
                r[tail..].try_into().unwrap(),
                c[tail..].try_into().unwrap(),
                LANES - rem,
            );
        } else {
            let (mut a, mut b) = ([0i8; LANES], [0i8; LANES]);
            a[..rem].copy_from_slice(rc.remainder());
            b[..rem].copy_from_slice(cc.remainder());
            acc.add(&a, &b, 0);
        }
    }
    acc.finish()
}

const LANES: usize = 16;

/// Chunked accumulation of [`BlockCost`]. Lanes below `skip` are zeroed in
/// both operands, and zero pairs add nothing to any of the three sums.
#[cfg(target_arch = "x86_64")]
mod kernel {
    use super::{BlockCost, LANES};
    use std::arch::x86_64::*;

    /// Sixteen bytes starting at `LANES - skip` clear the first `skip` lanes.
    static KEEP_MASKS: [i8; 2 * LANES] = {
        let mut m = [0i8; 2 * LANES];
        let mut i = LANES;
        while i < 2 * LANES {
            m[i] = -1;
            i += 1;
        }
        m
    };

    pub struct Acc {
        sad: __m128i,
        valid: __m128i,
        nonzero: __m128i,
    }

    // SSE2 is part of the x86_64 baseline, so these intrinsics are always available.
    impl Acc {
        #[inline(always)]
        pub fn new() -> Self {
            unsafe {
                Acc {
                    sad: _mm_setzero_si128(),
                    valid: _mm_setzero_si128(),
                    nonzero: _mm_setzero_si128(),
                }
            }
        }

        #[inline(always)]
        pub fn add(&mut self, a: &[i8; LANES], b: &[i8; LANES], skip: usize) {
            unsafe {
                let zero = _mm_setzero_si128();
                let one = _mm_set1_epi8(1);
                let bias = _mm_set1_epi8(i8::MIN);
                let mut va = _mm_loadu_si128(a.as_ptr() as *const __m128i);
                let mut vb = _mm_loadu_si128(b.as_ptr() as *const __m128i);
                if skip > 0 {
                    let keep = _mm_loadu_si128(KEEP_MASKS[LANES - skip..].as_ptr() as *const __m128i);
                    va = _mm_and_si128(va, keep);
                    vb = _mm_and_si128(vb, keep);
                }
                // offset-binary so unsigned byte min/max order like the signed cells
                let ua = _mm_xor_si128(va, bias);
                let ub = _mm_xor_si128(vb, bias);
                let diff = _mm_sub_epi8(_mm_max_epu8(ua, ub), _mm_min_epu8(ua, ub));
                self.sad = _mm_add_epi64(self.sad, _mm_sad_epu8(diff, zero));
                let either = _mm_andnot_si128(_mm_cmpeq_epi8(_mm_or_si128(va, vb), zero), one);
                self.valid = _mm_add_epi64(self.valid, _mm_sad_epu8(either, zero));
                let cand = _mm_andnot_si128(_mm_cmpeq_epi8(vb, zero), one);
                self.nonzero = _mm_add_epi64(self.nonzero, _mm_sad_epu8(cand, zero));
            }
        }

        #[inline(always)]
        pub fn finish(self) -> BlockCost {
            fn total(v: __m128i) -> u32 {
                let mut lanes = [0u64; 2];
                unsafe { _mm_storeu_si128(lanes.as_mut_ptr() as *mut __m128i, v) };
                (lanes[0] + lanes[1]) as u32
            }
            BlockCost {
                sad: total(self.sad),
                valid_count: total(self.valid),
                cand_nonzero: total(self.nonzero),
            }
        }
    }
}

#[cfg(not(target_arch = "x86_64"))]
mod kernel {
    use super::{BlockCost, LANES};

    pub struct Acc(BlockCost);

    impl Acc {
        pub fn new() -> Self {
            Acc(BlockCost::default())
        }

        pub fn add(&mut self, a: &[i8; LANES], b: &[i8; LANES], skip: usize) {
            for (&x, &y) in a[skip..].iter().zip(&b[skip..]) {
                self.0.sad += x.abs_diff(y) as u32;
                self.0.valid_count += ((x | y) != 0) as u32;
                self.0.cand_nonzero += (y != 0) as u32;
            }
        }

        pub fn finish(self) -> BlockCost {
            self.0
        }
    }
}

fn window_nonzero(grid: &Grid, center: (usize, usize), block: usize) -> u32 {
    let half = block / 2;
    let (x0, y0) = (center.0 - half, center.1 - half);
    (0..block)
        .map(|row| {
            grid.cells[(y0 + row) * grid.width + x0..][..block]
                .iter()
                .filter(|&&c| c != 0)
                .count() as u32
        })
        .sum()
}

/// Whether the `block` window centered at `(x, y) + offset` fits in `grid`.
pub fn window_fits(grid: &Grid, center: (usize, usize), offset: (i32, i32), block: usize) -> bool {
    let half = (block / 2) as i64;
    let x = center.0 as i64 + offset.0 as i64;
    let y = center.1 as i64 + offset.1 as i64;
    x - half >= 0 && y - half >= 0 && x + half < grid.width as i64 && y + half < grid.height as i64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoMatch {
    /// The reference window overhangs the slice border.
    Border,
    /// No candidate passed the occupancy test.
    Occupancy,
    /// The best candidate exceeded the SAD threshold.
    Sad,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub dx: i32,
    pub dy: i32,
    /// Normalized SAD in [0, 1]; infinite when no candidate was usable.
    pub sad_norm: f64,
    pub scale: u8,
    pub sad_evals: u32,
    pub rejection: Option<NoMatch>,
    sad: u32,
    valid_count: u32,
}

impl MatchResult {
    /// An accepted match with the given raw cost.
    pub fn new(dx: i32, dy: i32, scale: u8, sad: u32, valid_count: u32, cell_range: u32) -> Self {
        MatchResult {
            dx,
            dy,
            sad_norm: sad as f64 / (valid_count as f64 * cell_range as f64),
            scale,
            sad_evals: 0,
            rejection: None,
            sad,
            valid_count,
        }
    }

    fn rejected(reason: NoMatch, scale: u8, sad_evals: u32) -> Self {
        MatchResult {
            dx: 0,
            dy: 0,
            sad_norm: f64::INFINITY,
            scale,
            sad_evals,
            rejection: Some(reason),
            sad: 0,
            valid_count: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.rejection.is_none()
    }

    /// Winning offset in full-resolution pixels.
    pub fn full_res_offset(&self) -> (i32, i32) {
        (self.dx << self.scale, self.dy << self.scale)
    }

    /// Exact ordering of normalized SAD, for results of the same cell range.
    pub fn cmp_sad(&self, other: &MatchResult) -> Ordering {
        match (self.valid_count, other.valid_count) {
            (0, 0) => Ordering::Equal,
            (0, _) => Ordering::Greater,
            (_, 0) => Ordering::Less,
            (a, b) => (self.sad as u64 * b as u64).cmp(&(other.sad as u64 * a as u64)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dx: i32,
    dy: i32,
    cost: BlockCost,
}

impl Candidate {
    /// Total order used by every search: cost, then Chebyshev length, then scan order.
    fn better_than(&self, other: &Candidate) -> bool {
        let lhs = self.cost.sad as u64 * other.cost.valid_count as u64;
        let rhs = other.cost.sad as u64 * self.cost.valid_count as u64;
        lhs.cmp(&rhs)
            .then_with(|| {
                let a = self.dx.abs().max(self.dy.abs());
                let b = other.dx.abs().max(other.dy.abs());
                a.cmp(&b)
            })
            .then_with(|| (self.dy, self.dx).cmp(&(other.dy, other.dx)))
            == Ordering::Less
    }
}

/// Shared state of one search: bounds, occupancy gate and evaluation count.
struct Probe<'a> {
    reference: &'a Grid,
    candidate: &'a Grid,
    center: (usize, usize),
    cfg: &'a SearchConfig,
    min_nonzero: f64,
    evals: u32,
}

impl<'a> Probe<'a> {
    fn new(reference: &'a Grid, candidate: &'a Grid, center: (usize, usize), cfg: &'a SearchConfig) -> Self {
        Probe {
            reference,
            candidate,
            center,
            cfg,
            min_nonzero: cfg.min_nonzero(),
            evals: 0,
        }
    }

    fn reference_ok(&self) -> Result<(), NoMatch> {
        if !window_fits(self.reference, self.center, (0, 0), self.cfg.block) {
            return Err(NoMatch::Border);
        }
        let nz = window_nonzero(self.reference, self.center, self.cfg.block);
        if (nz as f64) < self.min_nonzero {
            return Err(NoMatch::Occupancy);
        }
        Ok(())
    }

    /// Cost at `offset`, or `None` if it is out of bounds or fails occupancy.
    fn eval(&mut self, dx: i32, dy: i32) -> Option<Candidate> {
        if !window_fits(self.candidate, self.center, (dx, dy), self.cfg.block) {
            return None;
        }
        self.evals += 1;
        let cost = block_sad(self.reference, self.candidate, self.center, (dx, dy), self.cfg.block);
        if cost.valid_count == 0 || (cost.cand_nonzero as f64) < self.min_nonzero {
            return None;
        }
        Some(Candidate { dx, dy, cost })
    }

    fn finish(&self, best: Option<Candidate>, range: u32) -> MatchResult {
        let Some(best) = best else {
            return MatchResult::rejected(NoMatch::Occupancy, 0, self.evals);
        };
        let sad_norm = best.cost.sad as f64 / (best.cost.valid_count as f64 * range as f64);
        MatchResult {
            dx: best.dx,
            dy: best.dy,
            sad_norm,
            scale: 0,
            sad_evals: self.evals,
            rejection: (sad_norm > self.cfg.max_allowed_sad).then_some(NoMatch::Sad),
            sad: best.cost.sad,
            valid_count: best.cost.valid_count,
        }
    }
}

fn keep_best(best: &mut Option<Candidate>, cand: Option<Candidate>) {
    if let Some(c) = cand {
        if best.as_ref().is_none_or(|b| c.better_than(b)) {
            *best = Some(c);
        }
    }
}

/// Exhaustive search over every in-bounds offset in `[-r, r]^2`.
pub fn full_search(
    reference: &Grid,
    candidate: &Grid,
    center: (usize, usize),
    cfg: &SearchConfig,
    cell_range: u32,
) -> MatchResult {
    let mut probe = Probe::new(reference, candidate, center, cfg);
    if let Err(reason) = probe.reference_ok() {
        return MatchResult::rejected(reason, 0, 0);
    }
    let r = cfg.radius;
    let mut best = None;
    for dy in -r..=r {
        for dx in -r..=r {
            let cand = probe.eval(dx, dy);
            keep_best(&mut best, cand);
        }
    }
    probe.finish(best, cell_range)
}

const LARGE_DIAMOND: [(i32, i32); 8] = [(0, -2), (-1, -1), (1, -1), (-2, 0), (2, 0), (-1, 1), (1, 1), (0, 2)];
const SMALL_DIAMOND: [(i32, i32); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

/// Two-pattern diamond search: large diamond steps until its center is the
/// best point, then one small-diamond refinement. Points are clipped to the
/// `[-r, r]^2` box and each offset is evaluated at most once.
pub fn diamond_search(
    reference: &Grid,
    candidate: &Grid,
    center: (usize, usize),
    cfg: &SearchConfig,
    cell_range: u32,
) -> MatchResult {
    let mut probe = Probe::new(reference, candidate, center, cfg);
    if let Err(reason) = probe.reference_ok() {
        return MatchResult::rejected(reason, 0, 0);
    }
    let r = cfg.radius;
    let side = (2 * r + 1) as usize;
    let mut visited = vec![false; side * side];
    let mut visit = |dx: i32, dy: i32| -> bool {
        if dx.abs() > r || dy.abs() > r {
            return false;
        }
        let i = (dy + r) as usize * side + (dx + r) as usize;
        !std::mem::replace(&mut visited[i], true)
    };

    let mut best = None;
    let mut pos = (0, 0);
    visit(0, 0);
    keep_best(&mut best, probe.eval(0, 0));
    loop {
        for (px, py) in LARGE_DIAMOND {
            let (dx, dy) = (pos.0 + px, pos.1 + py);
            if visit(dx, dy) {
                let cand = probe.eval(dx, dy);
                keep_best(&mut best, cand);
            }
        }
        match best {
            Some(b) if (b.dx, b.dy) != pos => pos = (b.dx, b.dy),
            _ => break,
        }
    }
    if best.is_some() {
        for (px, py) in SMALL_DIAMOND {
            let (dx, dy) = (pos.0 + px, pos.1 + py);
            if visit(dx, dy) {
                let cand = probe.eval(dx, dy);
                keep_best(&mut best, cand);
            }
        }
    }
    probe.finish(best, cell_range)
}

pub fn search(
    reference: &Grid,
    candidate: &Grid,
    center: (usize, usize),
    cfg: &SearchConfig,
    cell_range: u32,
) -> MatchResult {
    match cfg.strategy {
        SearchStrategy::Full => full_search(reference, candidate, center, cfg, cell_range),
        SearchStrategy::Diamond => diamond_search(reference, candidate, center, cfg, cell_range),
    }
}

/// Search every scale around the event and keep the valid result with the
/// smallest normalized SAD (ties go to the finer scale).
///
/// The returned `sad_evals` is summed over all scales.
pub fn match_multiscale(pyramid: &SlicePyramid, e: &Event, cfg: &SearchConfig) -> Result<MatchResult, NoMatch> {
    let reference = pyramid.slice(RingPosition::Previous);
    let candidate = pyramid.slice(RingPosition::Oldest);
    let range = pyramid.cell_range();
    let mut best: Option<MatchResult> = None;
    let mut evals = 0;
    let mut all_border = true;
    let mut any_sad = false;
    for m in 0..pyramid.scales() {
        let center = ((e.x as usize) >> m, (e.y as usize) >> m);
        let mut result = search(&reference.scales[m], &candidate.scales[m], center, cfg, range);
        result.scale = m as u8;
        evals += result.sad_evals;
        match result.rejection {
            None => {
                if best.as_ref().is_none_or(|b| result.cmp_sad(b) == Ordering::Less) {
                    best = Some(result);
                }
            }
            Some(NoMatch::Border) => continue,
            Some(NoMatch::Sad) => any_sad = true,
            Some(NoMatch::Occupancy) => {}
        }
        all_border = false;
    }
    match best {
        Some(mut b) => {
            b.sad_evals = evals;
            Ok(b)
        }
        None if all_border => Err(NoMatch::Border),
        None if any_sad => Err(NoMatch::Sad),
        None => Err(NoMatch::Occupancy),
    }
}

/// Convert a match to a flow event. The searched offset points at the
/// feature's older position, so velocity is its negation over `dt_us`.
pub fn to_flow(e: &Event, m: &MatchResult, dt_us: f64) -> FlowEvent {
    let (fx, fy) = m.full_res_offset();
    let dt_s = dt_us * 1e-6;
    FlowEvent {
        t: e.t,
        x: e.x,
        y: e.y,
        dx: m.dx,
        dy: m.dy,
        scale: m.scale,
        vx: if fx == 0 { 0.0 } else { -(fx as f64) / dt_s },
        vy: if fy == 0 { 0.0 } else { -(fy as f64) / dt_s },
        sad: m.sad_norm,
    }
}
