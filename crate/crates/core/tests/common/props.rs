//! Randomized invariants over the library, shared by the property and acceptance targets.

use std::collections::HashMap;

use blockflow::control::{OfHistogram, SkipState};
use blockflow::engine::{process_stream, PipelineConfig};
use blockflow::event_io::{
    read_events_from, read_flow_from, write_events_to, write_flow_to, Event, EventFormat, FlowEvent, Polarity,
    SensorGeometry,
};
use blockflow::metrics::{angular_error, endpoint_error, evaluate};
use blockflow::search::{block_sad, diamond_search, full_search, MatchResult, SearchConfig, SearchStrategy};
use blockflow::slices::{Grid, RingPosition, RotationPolicy, SliceConfig, SlicePyramid};
use blockflow::synth::GroundTruth;
use proptest::prelude::*;
use proptest::test_runner::{TestCaseError, TestRunner};

/// Cases per property.
pub const CASES: u32 = 1000;

/// Every property with its name, for runners that report per suite.
pub const SUITES: &[(&str, fn(u32) -> Result<(), String>)] = &[
    ("cells_saturate_within_bounds", cells_saturate_within_bounds),
    ("scales_sum_to_event_count", scales_sum_to_event_count),
    ("ring_rotation_matches_model", ring_rotation_matches_model),
    ("histogram_counts_every_update", histogram_counts_every_update),
    ("angular_error_ignores_magnitude", angular_error_ignores_magnitude),
    ("event_density_is_consistent", event_density_is_consistent),
    ("event_files_round_trip", event_files_round_trip),
    ("flow_files_round_trip", flow_files_round_trip),
    ("block_sad_matches_scalar_sum", block_sad_matches_scalar_sum),
    ("diamond_never_beats_full", diamond_never_beats_full),
    ("skip_count_stays_in_range", skip_count_stays_in_range),
];

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    };
    TestRunner::new(config).run(&strategy, test).map_err(|e| e.to_string())
}

fn events_strategy(w: u16, h: u16, max_len: usize) -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((0u64..50, 0..w, 0..h, any::<bool>()), 0..max_len).prop_map(|raw| {
        let mut t = 0;
        raw.into_iter()
            .map(|(dt, x, y, on)| {
                t += dt;
                Event::new(t, x, y, if on { Polarity::On } else { Polarity::Off })
            })
            .collect()
    })
}

fn slice_config(w: u16, h: u16, scales: u8, bits: u8, signed: bool) -> SliceConfig {
    SliceConfig {
        geometry: SensorGeometry::new(w, h).unwrap(),
        scales,
        bits,
        use_polarity: signed,
        policy: RotationPolicy::constant_event_number(1_000_000),
    }
}

fn flow_strategy() -> impl Strategy<Value = FlowEvent> {
    (
        any::<u64>(),
        any::<u16>(),
        any::<u16>(),
        -12i32..=12,
        -12i32..=12,
        0u8..3,
        -1e6f64..1e6,
        -1e6f64..1e6,
        0.0f64..=1.0,
    )
        .prop_map(|(t, x, y, dx, dy, scale, vx, vy, sad)| FlowEvent {
            t,
            x,
            y,
            dx,
            dy,
            scale,
            vx,
            vy,
            sad,
        })
}

fn grid_strategy(w: usize, h: usize, lo: i8, hi: i8, fill: f64) -> impl Strategy<Value = Grid> {
    prop::collection::vec((0.0f64..1.0, lo..=hi), w * h).prop_map(move |raw| Grid {
        width: w,
        height: h,
        cells: raw.into_iter().map(|(p, v)| if p < fill { v } else { 0 }).collect(),
    })
}

pub fn cells_saturate_within_bounds(cases: u32) -> Result<(), String> {
    run(
        cases,
        (events_strategy(16, 12, 300), 1u8..=7, any::<bool>(), 1u8..=3),
        |(events, bits, signed, scales)| {
            let bits = if signed { bits.max(2) } else { bits };
            let cfg = slice_config(16, 12, scales, bits, signed);
            let (lo, hi) = cfg.cell_bounds();
            let mut p = SlicePyramid::new(cfg).unwrap();
            // independent model: one saturating counter per cell and scale
            let mut model: HashMap<(usize, u16, u16), i32> = HashMap::new();
            let mut lost = 0u64;
            for e in &events {
                p.accumulate(e);
                let delta = if signed { e.pol.sign() as i32 } else { 1 };
                for m in 0..scales as usize {
                    let v = model.entry((m, e.x >> m, e.y >> m)).or_insert(0);
                    if *v + delta > hi as i32 || *v + delta < lo as i32 {
                        lost += 1;
                    } else {
                        *v += delta;
                    }
                }
            }
            prop_assert_eq!(p.saturations(), lost);
            let cur = p.slice(RingPosition::Current);
            for (m, g) in cur.scales.iter().enumerate() {
                for y in 0..g.height {
                    for x in 0..g.width {
                        let c = g.get(x, y);
                        prop_assert!(c >= lo && c <= hi);
                        let want = model.get(&(m, x as u16, y as u16)).copied().unwrap_or(0);
                        prop_assert_eq!(c as i32, want);
                    }
                }
            }
            Ok(())
        },
    )
}

pub fn scales_sum_to_event_count(cases: u32) -> Result<(), String> {
    run(cases, (events_strategy(20, 14, 120), 1u8..=3), |(events, scales)| {
        // 7 unsigned bits never saturate with at most 120 events per cell
        let mut p = SlicePyramid::new(slice_config(20, 14, scales, 7, false)).unwrap();
        for e in &events {
            p.accumulate(e);
        }
        let cur = p.slice(RingPosition::Current);
        let fine = &cur.scales[0];
        for (m, g) in cur.scales.iter().enumerate() {
            let total: i64 = g.cells.iter().map(|&c| c as i64).sum();
            prop_assert_eq!(total, events.len() as i64);
            for y in 0..g.height {
                for x in 0..g.width {
                    let mut pooled = 0i64;
                    for fy in (y << m)..((y + 1) << m).min(fine.height) {
                        for fx in (x << m)..((x + 1) << m).min(fine.width) {
                            pooled += fine.get(fx, fy) as i64;
                        }
                    }
                    prop_assert_eq!(g.get(x, y) as i64, pooled);
                }
            }
        }
        Ok(())
    })
}

pub fn ring_rotation_matches_model(cases: u32) -> Result<(), String> {
    run(
        cases,
        prop::collection::vec(prop::option::of((0u16..8, 0u16..8)), 0..60),
        |ops| {
            let mut p = SlicePyramid::new(slice_config(8, 8, 1, 7, false)).unwrap();
            // model: slices newest first, each the list of accumulated pixels
            let mut model: Vec<Vec<(u16, u16)>> = vec![Vec::new(), Vec::new(), Vec::new()];
            let mut t = 0;
            for op in ops {
                match op {
                    Some((x, y)) => {
                        t += 1;
                        p.accumulate(&Event::new(t, x, y, Polarity::On));
                        model[0].push((x, y));
                    }
                    None => {
                        p.rotate();
                        model.insert(0, Vec::new());
                        model.truncate(3);
                    }
                }
            }
            let positions = [RingPosition::Current, RingPosition::Previous, RingPosition::Oldest];
            let mut buffers: Vec<usize> = positions.iter().map(|&pos| p.buffer_index(pos)).collect();
            buffers.sort_unstable();
            prop_assert_eq!(buffers, vec![0, 1, 2]);
            for (pos, want) in positions.iter().zip(&model) {
                let s = p.slice(*pos);
                prop_assert_eq!(s.events, want.len() as u64);
                let mut counts = vec![0i8; 64];
                for &(x, y) in want {
                    counts[y as usize * 8 + x as usize] += 1;
                }
                prop_assert_eq!(&s.scales[0].cells, &counts);
            }
            Ok(())
        },
    )
}

pub fn histogram_counts_every_update(cases: u32) -> Result<(), String> {
    run(
        cases,
        prop::collection::vec((-4i32..=4, -4i32..=4), 0..200),
        |offsets| {
            let mut h = OfHistogram::new(4);
            let mut model: HashMap<(i32, i32), u64> = HashMap::new();
            for &(dx, dy) in &offsets {
                h.update(&MatchResult::new(dx, dy, 0, 1, 1, 7));
                *model.entry((dx, dy)).or_default() += 1;
            }
            prop_assert_eq!(h.n(), offsets.len() as u64);
            prop_assert_eq!(h.total(), offsets.len() as u64);
            for dy in -4..=4 {
                for dx in -4..=4 {
                    prop_assert_eq!(h.count(dx, dy), model.get(&(dx, dy)).copied().unwrap_or(0));
                }
            }
            match h.mean_match_distance() {
                None => prop_assert!(offsets.is_empty()),
                Some(d) => {
                    let want = offsets
                        .iter()
                        .map(|&(x, y)| ((x * x + y * y) as f64).sqrt())
                        .sum::<f64>()
                        / offsets.len() as f64;
                    prop_assert!((d - want).abs() < 1e-9);
                }
            }
            Ok(())
        },
    )
}

pub fn angular_error_ignores_magnitude(cases: u32) -> Result<(), String> {
    run(
        cases,
        (
            -500.0f64..500.0,
            -500.0f64..500.0,
            -500.0f64..500.0,
            -500.0f64..500.0,
            0.01f64..100.0,
            0.01f64..100.0,
        ),
        |(vx, vy, tx, ty, a, b)| {
            let base = angular_error((vx, vy), (tx, ty));
            let scaled = angular_error((a * vx, a * vy), (b * tx, b * ty));
            prop_assert!((base - scaled).abs() < 1e-6, "{} vs {}", base, scaled);
            prop_assert!((0.0..=180.0).contains(&base));
            prop_assert!(endpoint_error((vx, vy), (tx, ty)) >= 0.0);
            Ok(())
        },
    )
}

pub fn event_density_is_consistent(cases: u32) -> Result<(), String> {
    run(cases, (events_strategy(24, 24, 400), 1u32..5), |(events, p)| {
        let slice = SliceConfig {
            geometry: SensorGeometry::new(24, 24).unwrap(),
            scales: 2,
            bits: 3,
            use_polarity: false,
            policy: RotationPolicy::constant_event_number(40),
        };
        let cfg = PipelineConfig {
            search: SearchConfig {
                block: 5,
                radius: 2,
                ..Default::default()
            },
            skip: SkipState::fixed(p),
            feedback_enabled: false,
            slice,
            ..Default::default()
        };
        let out = process_stream(&events, &cfg).unwrap();
        let s = &out.stats;
        prop_assert_eq!(s.events_in, events.len() as u64);
        prop_assert_eq!(s.accounted(), s.events_in);
        prop_assert_eq!(s.of_events_out, out.flows.len() as u64);
        prop_assert_eq!(s.per_scale.iter().sum::<u64>(), s.of_events_out);
        let report = evaluate(&out.flows, GroundTruth { vx: 1.0, vy: 0.0 }, s.events_in);
        prop_assert_eq!(report.ed, s.ed());
        Ok(())
    })
}

pub fn event_files_round_trip(cases: u32) -> Result<(), String> {
    run(
        cases,
        (events_strategy(346, 260, 200), any::<bool>()),
        |(events, bin)| {
            let g = SensorGeometry::default();
            let format = if bin { EventFormat::Bin } else { EventFormat::Csv };
            let mut buf = Vec::new();
            write_events_to(&mut buf, format, g, &events).unwrap();
            let back = read_events_from(buf.as_slice(), format, g, true).unwrap();
            prop_assert_eq!(back, events);
            Ok(())
        },
    )
}

pub fn flow_files_round_trip(cases: u32) -> Result<(), String> {
    run(cases, prop::collection::vec(flow_strategy(), 0..50), |flows| {
        let mut buf = Vec::new();
        write_flow_to(&mut buf, &flows).unwrap();
        let back = read_flow_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, flows);
        Ok(())
    })
}

pub fn block_sad_matches_scalar_sum(cases: u32) -> Result<(), String> {
    run(
        cases,
        (
            grid_strategy(40, 40, -127, 127, 0.5),
            grid_strategy(40, 40, -127, 127, 0.5),
            0usize..=15,
            0usize..1000,
            0usize..1000,
            -4i32..=4,
            -4i32..=4,
        ),
        |(a, b, half, fx, fy, dx, dy)| {
            let block = 2 * half + 1;
            // centers whose window and every shifted window stay on the grid
            let span = 40 - 2 * (half + 4);
            let (cx, cy) = (half + 4 + fx % span, half + 4 + fy % span);
            let cost = block_sad(&a, &b, (cx, cy), (dx, dy), block);
            let (mut sad, mut valid, mut nz) = (0u32, 0u32, 0u32);
            for j in 0..block as i64 {
                for i in 0..block as i64 {
                    let ra = a.get(
                        (cx as i64 - half as i64 + i) as usize,
                        (cy as i64 - half as i64 + j) as usize,
                    ) as i32;
                    let rb = b.get(
                        (cx as i64 + dx as i64 - half as i64 + i) as usize,
                        (cy as i64 + dy as i64 - half as i64 + j) as usize,
                    ) as i32;
                    sad += (ra - rb).unsigned_abs();
                    valid += (ra != 0 || rb != 0) as u32;
                    nz += (rb != 0) as u32;
                }
            }
            prop_assert_eq!((cost.sad, cost.valid_count, cost.cand_nonzero), (sad, valid, nz));
            Ok(())
        },
    )
}

pub fn diamond_never_beats_full(cases: u32) -> Result<(), String> {
    run(
        cases,
        (
            grid_strategy(24, 24, 0, 7, 0.3),
            grid_strategy(24, 24, 0, 7, 0.3),
            5usize..19,
            5usize..19,
        ),
        |(a, b, cx, cy)| {
            let cfg = SearchConfig {
                block: 7,
                radius: 3,
                strategy: SearchStrategy::Full,
                valid_pix_occupancy: 0.0,
                max_allowed_sad: 1.0,
            };
            let full = full_search(&a, &b, (cx, cy), &cfg, 7);
            let diamond = diamond_search(&a, &b, (cx, cy), &cfg, 7);
            prop_assert!(!diamond.is_valid() || full.is_valid());
            if full.is_valid() && diamond.is_valid() {
                prop_assert!(diamond.cmp_sad(&full) != std::cmp::Ordering::Less);
                prop_assert!(diamond.dx.abs() <= 3 && diamond.dy.abs() <= 3);
                prop_assert!(diamond.sad_evals <= full.sad_evals);
            }
            Ok(())
        },
    )
}

pub fn skip_count_stays_in_range(cases: u32) -> Result<(), String> {
    run(
        cases,
        (prop::collection::vec(0.0f64..100.0, 0..300), 0.1f64..50.0),
        |(costs, budget)| {
            let mut s = SkipState::adaptive(budget);
            for c in costs {
                s.update(c);
                prop_assert!(s.p >= 1 && s.p <= s.p_max);
            }
            Ok(())
        },
    )
}
