//! Full versus diamond search on the same slices.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::event_io::Event;
use crate::search::{diamond_search, full_search, SearchConfig};
use crate::slices::{RingPosition, SliceConfig, SliceError, SlicePyramid};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    /// Blocks where full search found an accepted match.
    pub matches: u64,
    /// Of those, diamond reached the same minimum SAD.
    pub cost_agreements: u64,
    /// Of those, diamond returned the same offset.
    pub offset_agreements: u64,
    pub full_evals: u64,
    pub diamond_evals: u64,
    pub full_time: Duration,
    pub diamond_time: Duration,
}

impl StrategyComparison {
    pub fn agreement(&self) -> f64 {
        ratio(self.cost_agreements, self.matches)
    }

    pub fn offset_agreement(&self) -> f64 {
        ratio(self.offset_agreements, self.matches)
    }

    pub fn mean_full_evals(&self) -> f64 {
        ratio(self.full_evals, self.matches)
    }

    pub fn mean_diamond_evals(&self) -> f64 {
        ratio(self.diamond_evals, self.matches)
    }

    /// Full-search SAD evaluations per diamond evaluation.
    pub fn eval_ratio(&self) -> f64 {
        ratio(self.full_evals, self.diamond_evals)
    }

    pub fn time_ratio(&self) -> f64 {
        let d = self.diamond_time.as_secs_f64();
        if d == 0.0 {
            0.0
        } else {
            self.full_time.as_secs_f64() / d
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Replay `events` through a slice ring under a fixed policy and, for every
/// `sample_every`-th event once two past slices exist, run both strategies on
/// every scale. Stops after the first event that brings the match count to
/// `max_matches` or beyond.
pub fn compare_strategies(
    events: &[Event],
    slice: &SliceConfig,
    search: &SearchConfig,
    sample_every: u64,
    max_matches: Option<u64>,
) -> Result<StrategyComparison, SliceError> {
    search.validate().map_err(SliceError::Config)?;
    let mut pyramid = SlicePyramid::new(slice.clone())?;
    let range = pyramid.cell_range();
    let step = sample_every.max(1);
    let mut out = StrategyComparison::default();
    for (i, e) in events.iter().enumerate() {
        if pyramid.should_rotate(e) {
            pyramid.rotate();
        }
        pyramid.accumulate(e);
        if i as u64 % step != 0 || pyramid.slice_dt().is_err() {
            continue;
        }
        let reference = pyramid.slice(RingPosition::Previous);
        let candidate = pyramid.slice(RingPosition::Oldest);
        for m in 0..pyramid.scales() {
            let center = ((e.x as usize) >> m, (e.y as usize) >> m);
            let (r, c) = (&reference.scales[m], &candidate.scales[m]);
            let start = Instant::now();
            let full = full_search(r, c, center, search, range);
            let full_time = start.elapsed();
            if !full.is_valid() {
                continue;
            }
            let start = Instant::now();
            let diamond = diamond_search(r, c, center, search, range);
            out.diamond_time += start.elapsed();
            out.full_time += full_time;
            out.matches += 1;
            out.full_evals += full.sad_evals as u64;
            out.diamond_evals += diamond.sad_evals as u64;
            if diamond.is_valid() && diamond.cmp_sad(&full) == Ordering::Equal {
                out.cost_agreements += 1;
                if (diamond.dx, diamond.dy) == (full.dx, full.dy) {
                    out.offset_agreements += 1;
                }
            }
        }
        if max_matches.is_some_and(|n| out.matches >= n) {
            break;
        }
    }
    Ok(out)
}
