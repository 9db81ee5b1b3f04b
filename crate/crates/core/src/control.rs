//! Flow-distance histogram, bang-bang adaptation of the rotation parameter,
//! and event skipping.

use serde::{Deserialize, Serialize};

use crate::search::MatchResult;
use crate::slices::{PolicyKind, RotationPolicy};

/// Counts of accepted offsets over `[-r, r]^2`, all scales on their own grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OfHistogram {
    radius: i32,
    counts: Vec<u64>,
    n: u64,
}

impl OfHistogram {
    pub fn new(radius: i32) -> Self {
        let side = (2 * radius + 1) as usize;
        OfHistogram {
            radius,
            counts: vec![0; side * side],
            n: 0,
        }
    }

    fn index(&self, dx: i32, dy: i32) -> usize {
        let side = (2 * self.radius + 1) as usize;
        (dy + self.radius) as usize * side + (dx + self.radius) as usize
    }

    pub fn update(&mut self, m: &MatchResult) {
        debug_assert!(m.is_valid());
        let i = self.index(m.dx, m.dy);
        self.counts[i] += 1;
        self.n += 1;
    }

    pub fn count(&self, dx: i32, dy: i32) -> u64 {
        if dx.abs() > self.radius || dy.abs() > self.radius {
            return 0;
        }
        self.counts[self.index(dx, dy)]
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn reset(&mut self) {
        self.counts.fill(0);
        self.n = 0;
    }

    /// Mean Euclidean length of the accepted offsets, `None` when empty.
    pub fn mean_match_distance(&self) -> Option<f64> {
        if self.n == 0 {
            return None;
        }
        let r = self.radius;
        let mut sum = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let c = self.counts[self.index(dx, dy)];
                if c > 0 {
                    sum += c as f64 * ((dx * dx + dy * dy) as f64).sqrt();
                }
            }
        }
        Some(sum / self.n as f64)
    }
}

/// Bounds and step of the feedback controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub adjust_factor: f64,
    /// Inclusive bounds on the live parameter.
    pub min: f64,
    pub max: f64,
}

impl ControllerConfig {
    /// Default bounds for a policy: `d` 1-100 ms, `K` 1k-50k, `k` 100-1k.
    pub fn for_policy(kind: PolicyKind) -> Self {
        let (min, max) = match kind {
            PolicyKind::ConstantDuration => (1_000.0, 100_000.0),
            PolicyKind::ConstantEventNumber => (1_000.0, 50_000.0),
            PolicyKind::AreaEventNumber { .. } => (100.0, 1_000.0),
        };
        ControllerConfig {
            adjust_factor: 0.05,
            min,
            max,
        }
    }

    pub fn with_bounds(mut self, min: f64, max: f64) -> Self {
        self.min = min;
        self.max = max;
        self
    }
}

/// Bang-bang controller holding the mean match distance at `r / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState {
    pub target: f64,
    pub config: ControllerConfig,
    pub last_distance: Option<f64>,
}

impl ControllerState {
    pub fn new(radius: i32, config: ControllerConfig) -> Self {
        ControllerState {
            target: radius as f64 / 2.0,
            config,
            last_distance: None,
        }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.config.min, self.config.max)
    }

    /// Step the policy parameter by `∓adjust_factor` according to the sign of
    /// `target - D`. An empty histogram leaves it unchanged.
    pub fn adapt(&mut self, histogram: &OfHistogram, policy: &mut RotationPolicy) {
        let Some(distance) = histogram.mean_match_distance() else {
            self.last_distance = None;
            return;
        };
        self.last_distance = Some(distance);
        let value = policy.value();
        let next = if distance > self.target {
            value * (1.0 - self.config.adjust_factor)
        } else if distance < self.target {
            value * (1.0 + self.config.adjust_factor)
        } else {
            value
        };
        policy.set_value(self.clamp(next));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SkipMode {
    /// Keep `p` fixed.
    Fixed,
    /// Double `p` while the smoothed per-event cost exceeds `budget_us`,
    /// otherwise decrement it.
    Adaptive { budget_us: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipState {
    pub p: u32,
    pub p_max: u32,
    pub mode: SkipMode,
    pub ema_cost: Option<f64>,
}

impl SkipState {
    pub const SMOOTHING: f64 = 0.1;

    pub fn fixed(p: u32) -> Self {
        SkipState {
            p: p.max(1),
            p_max: 1000,
            mode: SkipMode::Fixed,
            ema_cost: None,
        }
    }

    pub fn adaptive(budget_us: f64) -> Self {
        SkipState {
            p: 1,
            p_max: 1000,
            mode: SkipMode::Adaptive { budget_us },
            ema_cost: None,
        }
    }

    /// Fold a measured per-event cost (µs) into the average and adjust `p`.
    pub fn update(&mut self, measured_cost_us: f64) {
        let SkipMode::Adaptive { budget_us } = self.mode else {
            return;
        };
        let ema = match self.ema_cost {
            Some(prev) => prev + Self::SMOOTHING * (measured_cost_us - prev),
            None => measured_cost_us,
        };
        self.ema_cost = Some(ema);
        self.p = if ema > budget_us {
            self.p.saturating_mul(2).min(self.p_max)
        } else {
            self.p.saturating_sub(1).max(1)
        };
    }

    /// True unless `event_index` is a multiple of `p`.
    pub fn should_skip(&self, event_index: u64) -> bool {
        event_index % self.p as u64 != 0
    }
}
