use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "blockflow",
    version,
    about = "Block-matching optical flow for event cameras",
    args_override_self = true
)]
pub struct Cli {
    /// key=value file of flag defaults; flags on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic event stream and its ground-truth flow
    Gen(GenArgs),
    /// Compute optical flow for an event stream
    Flow(FlowArgs),
    /// Score a flow file against ground truth
    Eval(EvalArgs),
    /// Render flow as color-coded PPM frames
    Render(RenderArgs),
    /// Compare diamond and full search on the same slices
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    #[value(alias = "true", alias = "yes", alias = "1")]
    On,
    #[value(alias = "false", alias = "no", alias = "0")]
    Off,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// Rotate every d microseconds
    #[value(alias = "constant-duration")]
    Duration,
    /// Rotate every K events
    #[value(alias = "constant-event-number")]
    Events,
    /// Rotate when any area collects k events
    #[value(alias = "area-event-number")]
    Area,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Diamond,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Bin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PatternArg {
    Dots,
    Bar,
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SkipArg {
    Fixed,
    Adaptive,
}

#[derive(Clone, Debug, Args)]
pub struct InputArgs {
    /// Sensor width in pixels [default: 346, or the binary header]
    #[arg(long = "w", value_name = "PX")]
    pub w: Option<u16>,
    /// Sensor height in pixels [default: 260, or the binary header]
    #[arg(long = "h", value_name = "PX")]
    pub h: Option<u16>,
    /// Event file format [default: from the extension, .bin/.evt are binary]
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Reject out-of-bounds events and timestamp regressions instead of dropping/keeping them
    #[arg(long, value_enum, default_value = "on")]
    pub strict: Switch,
}

#[derive(Clone, Debug, Args)]
pub struct SliceArgs {
    /// Slice rotation policy
    #[arg(long, value_enum, default_value = "area")]
    pub policy: PolicyArg,
    /// Slice duration d in microseconds (duration policy) [range 1000-100000]
    #[arg(long = "d-us", value_name = "US", default_value_t = 50_000)]
    pub d_us: u64,
    /// Global event number K in events (events policy) [range 1000-50000]
    #[arg(long = "K", value_name = "EVENTS", default_value_t = 10_000)]
    pub big_k: u64,
    /// Area event number k in events (area policy) [range 100-1000]
    #[arg(long = "k", value_name = "EVENTS", default_value_t = 1_000)]
    pub small_k: u64,
    /// Area subsampling a in bits: areas are 2^a x 2^a pixels [range 0-8]
    #[arg(long = "area-shift", value_name = "BITS", default_value_t = 5)]
    pub area_shift: u8,
    /// Number of scales s [range 1-3]
    #[arg(long = "s", value_name = "SCALES", default_value_t = 2)]
    pub s: u8,
    /// Bits per slice cell g [range 1-7]
    #[arg(long = "g", value_name = "BITS", default_value_t = 3)]
    pub g: u8,
    /// Signed accumulation by polarity
    #[arg(long, value_enum, default_value = "off")]
    pub polarity: Switch,
}

#[derive(Clone, Debug, Args)]
pub struct SearchArgs {
    /// Block dimension b in pixels, odd [range 11-21]
    #[arg(long = "b", value_name = "PX", default_value_t = 21)]
    pub b: usize,
    /// Search radius r in pixels of each scale [range 4-12]
    #[arg(long = "r", value_name = "PX", default_value_t = 4)]
    pub r: i32,
    /// Block search strategy
    #[arg(long, value_enum, default_value = "diamond")]
    pub strategy: StrategyArg,
    /// Minimum fraction of nonzero cells in both blocks [range 0-1]
    #[arg(long, value_name = "FRACTION", default_value_t = 0.01)]
    pub occupancy: f64,
    /// Largest accepted normalized SAD [range 0-1]
    #[arg(long = "max-sad", value_name = "FRACTION", default_value_t = 0.5)]
    pub max_sad: f64,
}

#[derive(Clone, Debug, Args)]
pub struct GenArgs {
    /// Output event file
    pub output: PathBuf,
    /// Ground-truth sidecar ("vx vy") [default: OUTPUT.truth]
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Sensor width in pixels
    #[arg(long = "w", value_name = "PX", default_value_t = 346)]
    pub w: u16,
    /// Sensor height in pixels
    #[arg(long = "h", value_name = "PX", default_value_t = 260)]
    pub h: u16,
    /// Output format [default: from the extension]
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, value_enum, default_value = "dots")]
    pub pattern: PatternArg,
    /// Lit-cell fraction of the dots pattern [range (0, 1]]
    #[arg(long, value_name = "FRACTION", default_value_t = 0.05)]
    pub density: f64,
    /// Bar width in pixels
    #[arg(long = "bar-width", value_name = "PX", default_value_t = 2.0)]
    pub bar_width: f64,
    /// Bar orientation in degrees, 90 is vertical
    #[arg(long, value_name = "DEG", default_value_t = 90.0)]
    pub angle: f64,
    /// Grid line pitch in pixels
    #[arg(long, value_name = "PX", default_value_t = 8)]
    pub pitch: u16,
    /// Horizontal velocity in pixels per second
    #[arg(long, value_name = "PPS", default_value_t = 90.0, allow_negative_numbers = true)]
    pub vx: f64,
    /// Vertical velocity in pixels per second
    #[arg(long, value_name = "PPS", default_value_t = 0.0, allow_negative_numbers = true)]
    pub vy: f64,
    /// Stream duration in seconds
    #[arg(long, value_name = "S", default_value_t = 1.0)]
    pub duration: f64,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Background noise rate in events per pixel per second
    #[arg(long, value_name = "HZ", default_value_t = 0.0)]
    pub noise: f64,
    /// Initial pattern shift in pixels, x
    #[arg(
        long = "phase-x",
        value_name = "PX",
        default_value_t = 0.0,
        allow_negative_numbers = true
    )]
    pub phase_x: f64,
    /// Initial pattern shift in pixels, y
    #[arg(
        long = "phase-y",
        value_name = "PX",
        default_value_t = 0.0,
        allow_negative_numbers = true
    )]
    pub phase_y: f64,
}

#[derive(Clone, Debug, Args)]
pub struct FlowArgs {
    /// Input event file
    pub input: PathBuf,
    /// Output flow CSV
    pub output: PathBuf,
    #[command(flatten)]
    pub io: InputArgs,
    #[command(flatten)]
    pub slice: SliceArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Adapt the rotation parameter from the match distance
    #[arg(long, value_enum, default_value = "on")]
    pub feedback: Switch,
    /// Controller step as a fraction of the parameter
    #[arg(long, value_name = "FRACTION", default_value_t = 0.05)]
    pub adjust: f64,
    /// Lower bound of the adapted parameter, in its unit (us or events) [default: policy range]
    #[arg(long = "param-min", value_name = "VALUE")]
    pub param_min: Option<f64>,
    /// Upper bound of the adapted parameter, in its unit (us or events) [default: policy range]
    #[arg(long = "param-max", value_name = "VALUE")]
    pub param_max: Option<f64>,
    /// Compute flow for every p-th event only [range 1-1000]
    #[arg(long = "p", value_name = "EVENTS", default_value_t = 1)]
    pub p: u32,
    /// Keep p fixed or adapt it to a per-event time budget
    #[arg(long, value_enum, default_value = "fixed")]
    pub skip: SkipArg,
    /// Per-event processing budget in microseconds (adaptive skip)
    #[arg(long = "budget-us", value_name = "US", default_value_t = 2.0)]
    pub budget_us: f64,
    /// Multiply the parameter before event INDEX, as INDEX:FACTOR (repeatable)
    #[arg(long, value_name = "INDEX:FACTOR", value_parser = parse_perturbation)]
    pub perturb: Vec<(u64, f64)>,
    /// Multiply the parameter after rotation N, as N:FACTOR (repeatable)
    #[arg(long = "perturb-rotation", value_name = "N:FACTOR", value_parser = parse_perturbation)]
    pub perturb_rotation: Vec<(u64, f64)>,
    /// Stats JSON [default: OUTPUT.stats.json]
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
    /// Controller trace CSV [default: OUTPUT.trace.csv]
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    /// Accept parameters outside the typical ranges
    #[arg(long = "allow-out-of-range")]
    pub allow_out_of_range: bool,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    /// Flow CSV to score
    pub flow: PathBuf,
    /// Ground-truth sidecar ("vx vy")
    #[arg(long, value_name = "FILE", conflicts_with_all = ["vx", "vy"])]
    pub truth: Option<PathBuf>,
    /// Ground-truth horizontal velocity in pixels per second
    #[arg(long, value_name = "PPS", allow_negative_numbers = true, requires = "vy")]
    pub vx: Option<f64>,
    /// Ground-truth vertical velocity in pixels per second
    #[arg(long, value_name = "PPS", allow_negative_numbers = true, requires = "vx")]
    pub vy: Option<f64>,
    /// Number of input events behind the flow file, for event density
    #[arg(long = "events-in", value_name = "EVENTS", conflicts_with = "stats")]
    pub events_in: Option<u64>,
    /// Stats JSON from `flow`, read for the input event count
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
    /// Row label in the table
    #[arg(long, default_value = "blockflow")]
    pub label: String,
    /// Also write the JSON report here
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct RenderArgs {
    /// Flow CSV to render
    pub flow: PathBuf,
    /// Directory for the frames
    #[arg(long = "out-dir", value_name = "DIR", default_value = "frames")]
    pub out_dir: PathBuf,
    /// Sensor width in pixels
    #[arg(long = "w", value_name = "PX", default_value_t = 346)]
    pub w: u16,
    /// Sensor height in pixels
    #[arg(long = "h", value_name = "PX", default_value_t = 260)]
    pub h: u16,
    /// Frame accumulation window in microseconds
    #[arg(long = "window-us", value_name = "US", default_value_t = 10_000)]
    pub window_us: u64,
    /// Speed shown at full brightness, in pixels per second
    #[arg(long = "max-speed", value_name = "PPS", default_value_t = 200.0)]
    pub max_speed: f64,
    /// Digits of zero padding in frame numbers
    #[arg(long, value_name = "DIGITS", default_value_t = 5)]
    pub pad: usize,
    /// Frame file name prefix
    #[arg(long, default_value = "frame")]
    pub prefix: String,
}

#[derive(Clone, Debug, Args)]
pub struct BenchArgs {
    /// Event file to replay [default: a generated random-dots scene]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub io: InputArgs,
    #[command(flatten)]
    pub slice: SliceArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Generated scene: dot density
    #[arg(long, value_name = "FRACTION", default_value_t = 0.1)]
    pub density: f64,
    /// Generated scene: horizontal velocity in pixels per second
    #[arg(long, value_name = "PPS", default_value_t = 300.0, allow_negative_numbers = true)]
    pub vx: f64,
    /// Generated scene: vertical velocity in pixels per second
    #[arg(long, value_name = "PPS", default_value_t = 100.0, allow_negative_numbers = true)]
    pub vy: f64,
    /// Generated scene: duration in seconds
    #[arg(long, value_name = "S", default_value_t = 0.5)]
    pub duration: f64,
    /// Generated scene: random seed
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Compare on every N-th event
    #[arg(long, value_name = "EVENTS", default_value_t = 1)]
    pub sample: u64,
    /// Stop after this many matches
    #[arg(long = "max-matches", value_name = "MATCHES", default_value_t = 10_000)]
    pub max_matches: u64,
    /// Also write the result as JSON
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
    /// Accept parameters outside the typical ranges
    #[arg(long = "allow-out-of-range")]
    pub allow_out_of_range: bool,
}

fn parse_perturbation(s: &str) -> Result<(u64, f64), String> {
    let (at, factor) = s
        .split_once(':')
        .ok_or_else(|| format!("expected N:FACTOR, got '{s}'"))?;
    let at = at.trim().parse::<u64>().map_err(|e| format!("bad index '{at}': {e}"))?;
    let factor = factor
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("bad factor '{factor}': {e}"))?;
    if !(factor.is_finite() && factor > 0.0) {
        return Err(format!("factor must be positive, got {factor}"));
    }
    Ok((at, factor))
}

/// Flags that take no value.
pub const BARE_FLAGS: &[&str] = &["allow-out-of-range"];
