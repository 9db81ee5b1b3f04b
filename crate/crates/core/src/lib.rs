//! Event-camera optical flow by adaptive time-slice block matching.
//!
//! Brightness-change events are accumulated into a three-deep ring of
//! multi-scale event-count histograms ("slices"). For every incoming event a
//! block around its location in the previous slice is matched against the
//! slice before that with a sum-of-absolute-differences search; the winning
//! offset divided by the time between the two slices is the flow.
//!
//! Slice rotation is driven by elapsed time, a global event count, or the
//! busiest spatial area, and its parameter can be steered by a bang-bang
//! controller that holds the mean match distance at half the search radius.
//!
//! Module map:
//! - [`event_io`]: event and flow records plus their file formats.
//! - [`synth`]: synthetic event streams with analytic ground truth.
//! - [`slices`]: the slice ring, accumulation and rotation policies.
//! - [`search`]: SAD, full and diamond search, multi-scale selection.
//! - [`control`]: flow histogram, feedback controller, event skipping.
//! - [`engine`]: the per-event pipeline.
//! - [`metrics`]: ED / GF / AEE / AAE evaluation.
//! - [`viz`]: PPM/PGM rendering of flow and slices.
//! - [`bench`]: diamond-versus-full search comparison.

pub mod bench;
pub mod control;
pub mod engine;
pub mod event_io;
pub mod metrics;
pub mod search;
pub mod slices;
pub mod synth;
pub mod viz;

pub use control::{ControllerConfig, ControllerState, OfHistogram, SkipMode, SkipState};
pub use engine::{FlowOutput, Perturbation, PerturbationTrigger, Pipeline, PipelineConfig, RunStats, TraceRow};
pub use event_io::{Event, EventFormat, FlowEvent, Polarity, SensorGeometry};
pub use metrics::{evaluate, EvalReport};
pub use search::{MatchResult, NoMatch, SearchConfig, SearchStrategy};
pub use slices::{PolicyKind, RotationPolicy, SliceConfig, SlicePyramid};
pub use synth::{GroundTruth, Pattern, SceneSpec};
