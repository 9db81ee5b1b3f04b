use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use blockflow::bench::compare_strategies;
use blockflow::control::{ControllerConfig, SkipState};
use blockflow::engine::{
    process_stream, write_trace_to, CostSource, Perturbation, PerturbationTrigger, PipelineConfig,
};
use blockflow::event_io::{self, Event, EventFormat, SensorGeometry};
use blockflow::metrics::{evaluate, format_table};
use blockflow::search::{SearchConfig, SearchStrategy};
use blockflow::slices::{RotationPolicy, SliceConfig};
use blockflow::synth::{generate, GroundTruth, Pattern, SceneSpec};
use blockflow::viz::render_flow;
use log::{info, warn};

use crate::args::*;
use crate::error::CliError;

const DEFAULT_GEOMETRY: (u16, u16) = (346, 260);

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => gen(&a),
        Command::Flow(a) => flow(&a),
        Command::Eval(a) => eval(&a),
        Command::Render(a) => render(&a),
        Command::Bench(a) => bench(&a),
    }
}

fn runtime(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("writing {}: {e}", path.display()))
}

fn data(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn geometry(w: u16, h: u16) -> Result<SensorGeometry, CliError> {
    SensorGeometry::new(w, h).map_err(|e| CliError::Usage(e.to_string()))
}

fn format_of(path: &Path, arg: Option<FormatArg>) -> EventFormat {
    match arg {
        Some(FormatArg::Csv) => EventFormat::Csv,
        Some(FormatArg::Bin) => EventFormat::Bin,
        None => EventFormat::from_path(path),
    }
}

fn load_events(path: &Path, io: &InputArgs) -> Result<(Vec<Event>, SensorGeometry), CliError> {
    let format = format_of(path, io.format);
    let header = match format {
        EventFormat::Bin => event_io::read_bin_geometry(path).map_err(|e| data(path, e))?,
        EventFormat::Csv => None,
    };
    let (dw, dh) = header.map(|g| (g.width, g.height)).unwrap_or(DEFAULT_GEOMETRY);
    let geom = geometry(io.w.unwrap_or(dw), io.h.unwrap_or(dh))?;
    let events = event_io::read_events(path, format, geom, io.strict.is_on()).map_err(|e| data(path, e))?;
    info!("read {} events from {} ({geom})", events.len(), path.display());
    Ok((events, geom))
}

fn in_range<T: PartialOrd + std::fmt::Display>(name: &str, v: T, lo: T, hi: T, unit: &str) -> Result<(), CliError> {
    if v < lo || v > hi {
        return Err(CliError::Usage(format!(
            "--{name} {v} is outside the typical range {lo}-{hi}{unit}; pass --allow-out-of-range to use it anyway"
        )));
    }
    Ok(())
}

/// Typical-range checks for the tunables.
fn check_ranges(slice: &SliceArgs, search: &SearchArgs) -> Result<(), CliError> {
    match slice.policy {
        PolicyArg::Duration => in_range("d-us", slice.d_us, 1_000, 100_000, " us")?,
        PolicyArg::Events => in_range("K", slice.big_k, 1_000, 50_000, " events")?,
        PolicyArg::Area => in_range("k", slice.small_k, 100, 1_000, " events")?,
    }
    in_range("b", search.b, 11, 21, " px")?;
    in_range("r", search.r, 4, 12, " px")?;
    in_range("s", slice.s, 1, 3, "")?;
    in_range("g", slice.g, 1, 7, " bits")
}

fn slice_config(slice: &SliceArgs, geometry: SensorGeometry) -> Result<SliceConfig, CliError> {
    if slice.area_shift > 8 {
        return Err(CliError::Usage(format!(
            "--area-shift {} exceeds 8 bits",
            slice.area_shift
        )));
    }
    let policy = match slice.policy {
        PolicyArg::Duration => RotationPolicy::constant_duration(slice.d_us),
        PolicyArg::Events => RotationPolicy::constant_event_number(slice.big_k),
        PolicyArg::Area => RotationPolicy::area_event_number(slice.small_k, slice.area_shift),
    };
    if policy.value() < 1.0 {
        return Err(CliError::Usage(format!(
            "{} parameter must be at least 1",
            policy.name()
        )));
    }
    let cfg = SliceConfig {
        geometry,
        scales: slice.s,
        bits: slice.g,
        use_polarity: slice.polarity.is_on(),
        policy,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn search_config(search: &SearchArgs) -> Result<SearchConfig, CliError> {
    let cfg = SearchConfig {
        block: search.b,
        radius: search.r,
        strategy: match search.strategy {
            StrategyArg::Diamond => SearchStrategy::Diamond,
            StrategyArg::Full => SearchStrategy::Full,
        },
        valid_pix_occupancy: search.occupancy,
        max_allowed_sad: search.max_sad,
    };
    cfg.validate().map_err(CliError::Usage)?;
    Ok(cfg)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn gen(a: &GenArgs) -> Result<(), CliError> {
    let geom = geometry(a.w, a.h)?;
    let pattern = match a.pattern {
        PatternArg::Dots => Pattern::RandomDots { density: a.density },
        PatternArg::Bar => Pattern::Bar {
            width: a.bar_width,
            angle_deg: a.angle,
        },
        PatternArg::Grid => Pattern::Grid { pitch: a.pitch },
    };
    let spec = SceneSpec::new(geom, pattern, (a.vx, a.vy), a.duration)
        .with_seed(a.seed)
        .with_noise(a.noise)
        .with_phase((a.phase_x, a.phase_y));
    let (events, truth) = generate(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let format = format_of(&a.output, a.format);
    event_io::write_events(&a.output, format, geom, &events).map_err(|e| runtime(&a.output, e))?;
    let truth_path = a.truth.clone().unwrap_or_else(|| with_suffix(&a.output, ".truth"));
    fs::write(&truth_path, format!("{} {}\n", truth.vx, truth.vy)).map_err(|e| runtime(&truth_path, e))?;
    println!(
        "wrote {} events to {}, truth to {}",
        events.len(),
        a.output.display(),
        truth_path.display()
    );
    Ok(())
}

fn pipeline_config(a: &FlowArgs, geometry: SensorGeometry) -> Result<PipelineConfig, CliError> {
    if !a.allow_out_of_range {
        check_ranges(&a.slice, &a.search)?;
    }
    if a.p == 0 || a.p > 1000 {
        return Err(CliError::Usage(format!("--p {} outside 1-1000", a.p)));
    }
    let slice = slice_config(&a.slice, geometry)?;
    let search = search_config(&a.search)?;
    let mut controller = ControllerConfig::for_policy(slice.policy.kind);
    controller.adjust_factor = a.adjust;
    if a.allow_out_of_range {
        controller.min = controller.min.min(slice.policy.value());
        controller.max = controller.max.max(slice.policy.value());
    }
    controller.min = a.param_min.unwrap_or(controller.min);
    controller.max = a.param_max.unwrap_or(controller.max);
    let mut skip = match a.skip {
        SkipArg::Fixed => SkipState::fixed(a.p),
        SkipArg::Adaptive => {
            if !(a.budget_us > 0.0) {
                return Err(CliError::Usage("--budget-us must be positive".into()));
            }
            SkipState::adaptive(a.budget_us)
        }
    };
    skip.p = a.p;
    let perturbations = a
        .perturb
        .iter()
        .map(|&(i, f)| (PerturbationTrigger::Event(i), f))
        .chain(
            a.perturb_rotation
                .iter()
                .map(|&(n, f)| (PerturbationTrigger::Rotation(n), f)),
        )
        .map(|(trigger, factor)| Perturbation { trigger, factor })
        .collect();
    let cfg = PipelineConfig {
        slice,
        search,
        controller,
        skip,
        feedback_enabled: a.feedback.is_on(),
        cost_source: CostSource::WallClock,
        perturbations,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn flow(a: &FlowArgs) -> Result<(), CliError> {
    // check flags before touching the input
    let probe = geometry(
        a.io.w.unwrap_or(DEFAULT_GEOMETRY.0),
        a.io.h.unwrap_or(DEFAULT_GEOMETRY.1),
    )?;
    pipeline_config(a, probe)?;
    let (events, geom) = load_events(&a.input, &a.io)?;
    let cfg = pipeline_config(a, geom)?;
    let out = process_stream(&events, &cfg).map_err(|e| CliError::Runtime(e.to_string()))?;

    event_io::write_flow(&a.output, &out.flows).map_err(|e| runtime(&a.output, e))?;
    let stats_path = a.stats.clone().unwrap_or_else(|| with_suffix(&a.output, ".stats.json"));
    let json = serde_json::to_string_pretty(&out.stats.document()).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&stats_path, json + "\n").map_err(|e| runtime(&stats_path, e))?;
    let trace_path = a.trace.clone().unwrap_or_else(|| with_suffix(&a.output, ".trace.csv"));
    let file = fs::File::create(&trace_path).map_err(|e| runtime(&trace_path, e))?;
    write_trace_to(file, &out.trace).map_err(|e| runtime(&trace_path, e))?;

    let s = &out.stats;
    let gf = s
        .global_flow()
        .map(|(x, y)| format!("({x:.2}, {y:.2}) px/s"))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "{} events, {} flow events (ED {:.4}), {} rotations, final {} parameter {:.1}, GF {gf}",
        s.events_in,
        s.of_events_out,
        s.ed(),
        s.rotations,
        cfg.slice.policy.name(),
        s.final_parameter
    );
    Ok(())
}

fn read_truth(path: &Path) -> Result<GroundTruth, CliError> {
    let text = fs::read_to_string(path).map_err(|e| data(path, e))?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| data(path, format!("bad truth value: {e}")))?;
    match values[..] {
        [vx, vy] => Ok(GroundTruth { vx, vy }),
        _ => Err(data(path, format!("expected \"vx vy\", found {} values", values.len()))),
    }
}

fn read_events_in(path: &Path) -> Result<u64, CliError> {
    let text = fs::read_to_string(path).map_err(|e| data(path, e))?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| data(path, e))?;
    doc.get("events_in")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| data(path, "no integer events_in key"))
}

fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let truth = match (&a.truth, a.vx, a.vy) {
        (Some(p), _, _) => read_truth(p)?,
        (None, Some(vx), Some(vy)) => GroundTruth { vx, vy },
        _ => return Err(CliError::Usage("give --truth FILE or --vx and --vy".into())),
    };
    let flows = event_io::read_flow(&a.flow).map_err(|e| data(&a.flow, e))?;
    let events_in = match (a.events_in, &a.stats) {
        (Some(n), _) => n,
        (None, Some(p)) => read_events_in(p)?,
        (None, None) => {
            warn!("input event count unknown, event density reported as 0");
            0
        }
    };
    let report = evaluate(&flows, truth, events_in);
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(p) = &a.json {
        fs::write(p, json.clone() + "\n").map_err(|e| runtime(p, e))?;
    }
    println!("{json}\n");
    print!("{}", format_table(&[(a.label.as_str(), &report)]));
    if report.zero_vector_cases > 0 {
        println!(
            "{} samples compared a zero vector against a nonzero one",
            report.zero_vector_cases
        );
    }
    Ok(())
}

fn render(a: &RenderArgs) -> Result<(), CliError> {
    if a.window_us == 0 {
        return Err(CliError::Usage("--window-us must be positive".into()));
    }
    if !(a.max_speed > 0.0) {
        return Err(CliError::Usage("--max-speed must be positive".into()));
    }
    let geom = geometry(a.w, a.h)?;
    let flows = event_io::read_flow(&a.flow).map_err(|e| data(&a.flow, e))?;
    let frames = render_flow(&flows, geom, a.window_us, a.max_speed);
    fs::create_dir_all(&a.out_dir).map_err(|e| runtime(&a.out_dir, e))?;
    for (i, frame) in frames.iter().enumerate() {
        let path = a.out_dir.join(format!("{}{:0width$}.ppm", a.prefix, i, width = a.pad));
        let file = fs::File::create(&path).map_err(|e| runtime(&path, e))?;
        let mut w = BufWriter::new(file);
        frame
            .write_ppm(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| runtime(&path, e))?;
    }
    println!("wrote {} frames to {}", frames.len(), a.out_dir.display());
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<(), CliError> {
    if !a.allow_out_of_range {
        check_ranges(&a.slice, &a.search)?;
    }
    let (events, geom) = match &a.input {
        Some(path) => load_events(path, &a.io)?,
        None => {
            let geom = geometry(
                a.io.w.unwrap_or(DEFAULT_GEOMETRY.0),
                a.io.h.unwrap_or(DEFAULT_GEOMETRY.1),
            )?;
            let spec = SceneSpec::new(
                geom,
                Pattern::RandomDots { density: a.density },
                (a.vx, a.vy),
                a.duration,
            )
            .with_seed(a.seed);
            let (events, _) = generate(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
            (events, geom)
        }
    };
    let slice = slice_config(&a.slice, geom)?;
    let search = search_config(&a.search)?;
    let c = compare_strategies(&events, &slice, &search, a.sample, Some(a.max_matches))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if c.matches == 0 {
        warn!("no block produced an accepted full-search match");
    }
    let mut out = io::stdout().lock();
    let lines = [
        format!("matches: {}", c.matches),
        format!("agreement: {:.4}", c.agreement()),
        format!("offset agreement: {:.4}", c.offset_agreement()),
        format!(
            "mean SAD evaluations: full {:.2}, diamond {:.2}",
            c.mean_full_evals(),
            c.mean_diamond_evals()
        ),
        format!("evaluation ratio (full/diamond): {:.2}", c.eval_ratio()),
        format!("time ratio (full/diamond): {:.2}", c.time_ratio()),
    ];
    for l in lines {
        writeln!(out, "{l}").map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    if let Some(p) = &a.json {
        let doc = serde_json::json!({
            "matches": c.matches,
            "agreement": c.agreement(),
            "offset_agreement": c.offset_agreement(),
            "mean_full_evals": c.mean_full_evals(),
            "mean_diamond_evals": c.mean_diamond_evals(),
            "eval_ratio": c.eval_ratio(),
            "time_ratio": c.time_ratio(),
        });
        fs::write(p, format!("{doc:#}\n")).map_err(|e| runtime(p, e))?;
    }
    Ok(())
}
