//! Per-event pipeline.
//!
//! For every input event, in order:
//! 1. ask the rotation policy whether the event opens a new slice; if so
//!    rotate the ring, adapt the policy parameter from the flow histogram and
//!    reset the histogram,
//! 2. accumulate the event into every scale of the `t` slice,
//! 3. skip flow computation unless the event index is a multiple of `p`,
//! 4. match the event's block between `t-d` and `t-2d` on every scale,
//! 5. drop outliers, update the histogram and emit a [`FlowEvent`].

use std::io::{self, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControllerConfig, ControllerState, OfHistogram, SkipMode, SkipState};
use crate::event_io::{Event, FlowEvent};
use crate::search::{match_multiscale, to_flow, NoMatch, SearchConfig};
use crate::slices::{RingPosition, SliceConfig, SliceError, SlicePyramid};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<SliceError> for EngineError {
    fn from(e: SliceError) -> Self {
        EngineError::Config(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PerturbationTrigger {
    /// Before processing the event with this 0-based index.
    Event(u64),
    /// Right after the rotation with this 1-based index has adapted.
    Rotation(u64),
}

/// Manual override of the rotation parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub trigger: PerturbationTrigger,
    /// Multiplies the live parameter.
    pub factor: f64,
}

/// Where per-event costs for adaptive skipping come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CostSource {
    WallClock,
    /// One value per rotation, the last one repeating.
    Scripted(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub slice: SliceConfig,
    pub search: SearchConfig,
    pub controller: ControllerConfig,
    pub skip: SkipState,
    pub feedback_enabled: bool,
    pub cost_source: CostSource,
    pub perturbations: Vec<Perturbation>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let slice = SliceConfig::default();
        PipelineConfig {
            controller: ControllerConfig::for_policy(slice.policy.kind),
            slice,
            search: SearchConfig::default(),
            skip: SkipState::fixed(1),
            feedback_enabled: true,
            cost_source: CostSource::WallClock,
            perturbations: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.slice.validate()?;
        self.search.validate().map_err(EngineError::Config)?;
        if self.controller.min > self.controller.max || self.controller.min < 1.0 {
            return Err(EngineError::Config(format!(
                "controller bounds [{}, {}] are not a valid range",
                self.controller.min, self.controller.max
            )));
        }
        if !(0.0..1.0).contains(&self.controller.adjust_factor) {
            return Err(EngineError::Config("adjust factor must be in [0, 1)".into()));
        }
        if self.skip.p == 0 || self.skip.p > self.skip.p_max {
            return Err(EngineError::Config(format!(
                "skip count {} outside [1, {}]",
                self.skip.p, self.skip.p_max
            )));
        }
        Ok(())
    }
}

/// Counters for one run. Every input event lands in exactly one of
/// `of_events_out`, `rejected_occupancy`, `rejected_sad`, `skipped`,
/// `border_skipped` or `pre_warmup`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub events_in: u64,
    pub of_events_out: u64,
    pub per_scale: Vec<u64>,
    pub rejected_occupancy: u64,
    pub rejected_sad: u64,
    pub skipped: u64,
    pub border_skipped: u64,
    /// Events seen while the time between past slices was undefined.
    pub pre_warmup: u64,
    pub rotations: u64,
    pub final_parameter: f64,
    pub last_slice_duration_us: u64,
    pub sum_vx: f64,
    pub sum_vy: f64,
}

impl RunStats {
    pub fn accounted(&self) -> u64 {
        self.of_events_out
            + self.rejected_occupancy
            + self.rejected_sad
            + self.skipped
            + self.border_skipped
            + self.pre_warmup
    }

    /// Fraction of input events that produced flow.
    pub fn ed(&self) -> f64 {
        if self.events_in == 0 {
            0.0
        } else {
            self.of_events_out as f64 / self.events_in as f64
        }
    }

    /// Mean emitted velocity, `None` without output.
    pub fn global_flow(&self) -> Option<(f64, f64)> {
        (self.of_events_out > 0).then(|| {
            let n = self.of_events_out as f64;
            (self.sum_vx / n, self.sum_vy / n)
        })
    }

    /// The flat document written as stats JSON.
    pub fn document(&self) -> StatsDocument {
        let gf = self.global_flow();
        StatsDocument {
            events_in: self.events_in,
            of_events_out: self.of_events_out,
            per_scale: self.per_scale.clone(),
            rejected_occupancy: self.rejected_occupancy,
            rejected_sad: self.rejected_sad,
            skipped: self.skipped,
            border_skipped: self.border_skipped,
            pre_warmup: self.pre_warmup,
            rotations: self.rotations,
            final_parameter: self.final_parameter,
            last_slice_duration_us: self.last_slice_duration_us,
            ed: self.ed(),
            gf_vx: gf.map(|g| g.0),
            gf_vy: gf.map(|g| g.1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsDocument {
    pub events_in: u64,
    pub of_events_out: u64,
    pub per_scale: Vec<u64>,
    pub rejected_occupancy: u64,
    pub rejected_sad: u64,
    pub skipped: u64,
    pub border_skipped: u64,
    pub pre_warmup: u64,
    pub rotations: u64,
    pub final_parameter: f64,
    pub last_slice_duration_us: u64,
    pub ed: f64,
    pub gf_vx: Option<f64>,
    pub gf_vy: Option<f64>,
}

/// One controller trace line, written at every rotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub rotation: u64,
    pub t: u64,
    /// Mean match distance of the slice period that just ended.
    pub distance: Option<f64>,
    /// Rotation parameter after adaptation and any perturbation.
    pub parameter: f64,
    pub p: u32,
    pub slice_duration_us: u64,
}

pub const TRACE_HEADER: &str = "rotation,t_us,match_distance,parameter,p,slice_duration_us";

pub fn write_trace_to<W: Write>(writer: W, rows: &[TraceRow]) -> io::Result<()> {
    let mut w = io::BufWriter::new(writer);
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        let d = r.distance.map(|d| format!("{d:.6}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{:.3},{},{}",
            r.rotation, r.t, d, r.parameter, r.p, r.slice_duration_us
        )?;
    }
    w.flush()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowOutput {
    pub flows: Vec<FlowEvent>,
    pub stats: RunStats,
    pub trace: Vec<TraceRow>,
}

/// Streaming engine state for one event stream.
#[derive(Clone, Debug)]
pub struct Pipeline {
    search: SearchConfig,
    feedback_enabled: bool,
    cost_source: CostSource,
    perturbations: Vec<Perturbation>,
    pyramid: SlicePyramid,
    controller: ControllerState,
    histogram: OfHistogram,
    skip: SkipState,
    stats: RunStats,
    trace: Vec<TraceRow>,
    event_index: u64,
    scripted_cursor: usize,
    slice_cost_us: f64,
    slice_cost_events: u64,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let pyramid = SlicePyramid::new(cfg.slice.clone())?;
        let stats = RunStats {
            per_scale: vec![0; cfg.slice.scales as usize],
            final_parameter: cfg.slice.policy.value(),
            ..Default::default()
        };
        Ok(Pipeline {
            controller: ControllerState::new(cfg.search.radius, cfg.controller.clone()),
            histogram: OfHistogram::new(cfg.search.radius),
            search: cfg.search,
            feedback_enabled: cfg.feedback_enabled,
            cost_source: cfg.cost_source,
            perturbations: cfg.perturbations,
            pyramid,
            skip: cfg.skip,
            stats,
            trace: Vec::new(),
            event_index: 0,
            scripted_cursor: 0,
            slice_cost_us: 0.0,
            slice_cost_events: 0,
        })
    }

    pub fn pyramid(&self) -> &SlicePyramid {
        &self.pyramid
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn histogram(&self) -> &OfHistogram {
        &self.histogram
    }

    pub fn skip(&self) -> &SkipState {
        &self.skip
    }

    /// Multiply the live rotation parameter now, clamped to controller bounds.
    pub fn perturb(&mut self, factor: f64) {
        let policy = self.pyramid.policy_mut();
        let next = self.controller.clamp(policy.value() * factor);
        policy.set_value(next);
        self.stats.final_parameter = policy.value();
    }

    fn apply_perturbations(&mut self, trigger: PerturbationTrigger) {
        let factors: Vec<f64> = self
            .perturbations
            .iter()
            .filter(|p| p.trigger == trigger)
            .map(|p| p.factor)
            .collect();
        for f in factors {
            self.perturb(f);
        }
    }

    fn rotate(&mut self, t: u64) {
        let closed = self.pyramid.slice(RingPosition::Current);
        let duration = match (closed.first_ts, closed.last_ts) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        };
        self.pyramid.rotate();
        self.stats.rotations += 1;
        self.stats.last_slice_duration_us = duration;

        let distance = self.histogram.mean_match_distance();
        if self.feedback_enabled {
            self.controller.adapt(&self.histogram, self.pyramid.policy_mut());
        }
        self.apply_perturbations(PerturbationTrigger::Rotation(self.stats.rotations));
        self.update_skip();
        self.histogram.reset();
        self.stats.final_parameter = self.pyramid.policy().value();
        self.trace.push(TraceRow {
            rotation: self.stats.rotations,
            t,
            distance,
            parameter: self.stats.final_parameter,
            p: self.skip.p,
            slice_duration_us: duration,
        });
    }

    fn update_skip(&mut self) {
        if !matches!(self.skip.mode, SkipMode::Adaptive { .. }) {
            return;
        }
        let cost = match &self.cost_source {
            CostSource::WallClock => {
                if self.slice_cost_events == 0 {
                    return;
                }
                self.slice_cost_us / self.slice_cost_events as f64
            }
            CostSource::Scripted(costs) => {
                let Some(&last) = costs.last() else { return };
                let c = costs.get(self.scripted_cursor).copied().unwrap_or(last);
                self.scripted_cursor += 1;
                c
            }
        };
        self.skip.update(cost);
        self.slice_cost_us = 0.0;
        self.slice_cost_events = 0;
    }

    /// Run one event through the pipeline.
    pub fn process_event(&mut self, e: &Event) -> Option<FlowEvent> {
        let timed = matches!(self.skip.mode, SkipMode::Adaptive { .. }) && self.cost_source == CostSource::WallClock;
        let start = timed.then(Instant::now);
        let out = self.step(e);
        if let Some(start) = start {
            self.slice_cost_us += start.elapsed().as_secs_f64() * 1e6;
            self.slice_cost_events += 1;
        }
        out
    }

    fn step(&mut self, e: &Event) -> Option<FlowEvent> {
        if !self.perturbations.is_empty() {
            self.apply_perturbations(PerturbationTrigger::Event(self.event_index));
        }
        if self.pyramid.should_rotate(e) {
            self.rotate(e.t);
        }
        self.pyramid.accumulate(e);
        let index = self.event_index;
        self.event_index += 1;
        self.stats.events_in += 1;

        if self.skip.should_skip(index) {
            self.stats.skipped += 1;
            return None;
        }
        let Ok(dt) = self.pyramid.slice_dt() else {
            self.stats.pre_warmup += 1;
            return None;
        };
        match match_multiscale(&self.pyramid, e, &self.search) {
            Ok(m) => {
                self.histogram.update(&m);
                let flow = to_flow(e, &m, dt);
                self.stats.of_events_out += 1;
                self.stats.per_scale[m.scale as usize] += 1;
                self.stats.sum_vx += flow.vx;
                self.stats.sum_vy += flow.vy;
                Some(flow)
            }
            Err(NoMatch::Border) => {
                self.stats.border_skipped += 1;
                None
            }
            Err(NoMatch::Occupancy) => {
                self.stats.rejected_occupancy += 1;
                None
            }
            Err(NoMatch::Sad) => {
                self.stats.rejected_sad += 1;
                None
            }
        }
    }

    pub fn finish(self) -> (RunStats, Vec<TraceRow>) {
        (self.stats, self.trace)
    }
}

/// Run a whole stream through a fresh pipeline.
pub fn process_stream(events: &[Event], cfg: &PipelineConfig) -> Result<FlowOutput, EngineError> {
    let mut pipeline = Pipeline::new(cfg.clone())?;
    let flows = events.iter().filter_map(|e| pipeline.process_event(e)).collect();
    let (stats, trace) = pipeline.finish();
    Ok(FlowOutput { flows, stats, trace })
}
