//! Accuracy and density of a flow stream against a constant ground truth.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_io::FlowEvent;
use crate::synth::GroundTruth;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("speedometer marks must be at strictly increasing times ({a} us then {b} us)")]
    ZeroElapsed { a: u64, b: u64 },
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// `None` for an empty sample.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Stat> {
        let mut n = 0u64;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for v in values {
            n += 1;
            let delta = v - mean;
            mean += delta / n as f64;
            m2 += delta * (v - mean);
        }
        (n > 0).then(|| Stat {
            mean,
            std: (m2 / n as f64).max(0.0).sqrt(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub events_in: u64,
    pub of_events: u64,
    /// Output events per input event.
    pub ed: f64,
    pub gf_vx: Option<Stat>,
    pub gf_vy: Option<Stat>,
    /// Endpoint error, px/s.
    pub aee: Option<Stat>,
    /// Angular error, degrees.
    pub aae: Option<Stat>,
    /// Samples where exactly one of estimate and truth was the zero vector.
    pub zero_vector_cases: u64,
}

/// Endpoint error between two velocities.
pub fn endpoint_error(v: (f64, f64), truth: (f64, f64)) -> f64 {
    (v.0 - truth.0).hypot(v.1 - truth.1)
}

/// Angle in degrees between two velocities. Two zero vectors agree (0°),
/// a zero vector against a nonzero one counts as 90°.
pub fn angular_error(v: (f64, f64), truth: (f64, f64)) -> f64 {
    let nv = v.0.hypot(v.1);
    let nt = truth.0.hypot(truth.1);
    match (nv == 0.0, nt == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 90.0,
        _ => {
            let cos = (v.0 * truth.0 + v.1 * truth.1) / (nv * nt);
            cos.clamp(-1.0, 1.0).acos().to_degrees()
        }
    }
}

pub fn evaluate(flows: &[FlowEvent], truth: GroundTruth, events_in: u64) -> EvalReport {
    let gt = (truth.vx, truth.vy);
    let zero_vector_cases = flows
        .iter()
        .filter(|f| (f.vx == 0.0 && f.vy == 0.0) != (gt.0 == 0.0 && gt.1 == 0.0))
        .count() as u64;
    EvalReport {
        events_in,
        of_events: flows.len() as u64,
        ed: if events_in == 0 {
            0.0
        } else {
            flows.len() as f64 / events_in as f64
        },
        gf_vx: Stat::of(flows.iter().map(|f| f.vx)),
        gf_vy: Stat::of(flows.iter().map(|f| f.vy)),
        aee: Stat::of(flows.iter().map(|f| endpoint_error((f.vx, f.vy), gt))),
        aae: Stat::of(flows.iter().map(|f| angular_error((f.vx, f.vy), gt))),
        zero_vector_cases,
    }
}

/// A tracked point at a given time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub t_us: u64,
    pub x: f64,
    pub y: f64,
}

/// Velocity in px/s between two marks.
pub fn speedometer(a: Mark, b: Mark) -> Result<(f64, f64), MetricsError> {
    if b.t_us <= a.t_us {
        return Err(MetricsError::ZeroElapsed { a: a.t_us, b: b.t_us });
    }
    let dt = (b.t_us - a.t_us) as f64 * 1e-6;
    Ok(((b.x - a.x) / dt, (b.y - a.y) / dt))
}

fn fmt_stat(s: Option<Stat>) -> String {
    match s {
        Some(s) => format!("{:.2} ± {:.2}", s.mean, s.std),
        None => "n/a".into(),
    }
}

/// Plain-text comparison table, one row per labelled report.
pub fn format_table(rows: &[(&str, &EvalReport)]) -> String {
    let header = [
        "method",
        "ED",
        "GF vx (px/s)",
        "GF vy (px/s)",
        "AEE (px/s)",
        "AAE (deg)",
    ];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|(name, r)| {
            [
                name.to_string(),
                format!("{:.4}", r.ed),
                fmt_stat(r.gf_vx),
                fmt_stat(r.gf_vy),
                fmt_stat(r.aee),
                fmt_stat(r.aae),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&mut out, &header.map(String::from));
    line(&mut out, &widths.map(|w| "-".repeat(w)));
    for row in &body {
        line(&mut out, row);
    }
    out
}
