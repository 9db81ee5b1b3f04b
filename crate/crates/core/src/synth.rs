//! Synthetic event streams with analytic ground truth.
//!
//! A binary pattern image the size of the sensor is translated at constant
//! velocity over a torus. Each pixel samples the pattern at its center; every
//! time that sample point crosses a pattern cell boundary and the brightness
//! differs across it, one event is emitted at the exact crossing time with
//! the polarity of the step. Background noise is homogeneous Poisson.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_io::{Event, Polarity, SensorGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Pattern {
    /// Single-pixel dots, each cell lit with probability `density`.
    RandomDots { density: f64 },
    /// A bright bar through the sensor center. `angle_deg` is the direction
    /// of the long axis measured from +x, so 90 is a vertical bar.
    Bar { width: f64, angle_deg: f64 },
    /// Lit lines every `pitch` pixels in both directions.
    Grid { pitch: u16 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub geometry: SensorGeometry,
    pub pattern: Pattern,
    /// Pixels per second.
    pub velocity: (f64, f64),
    pub duration_s: f64,
    pub seed: u64,
    /// Noise events per pixel per second.
    pub noise_rate: f64,
    /// Initial pattern offset in pixels, opposite to the motion direction.
    pub phase: (f64, f64),
}

impl SceneSpec {
    pub fn new(geometry: SensorGeometry, pattern: Pattern, velocity: (f64, f64), duration_s: f64) -> Self {
        SceneSpec {
            geometry,
            pattern,
            velocity,
            duration_s,
            seed: 0,
            noise_rate: 0.0,
            phase: (0.0, 0.0),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_noise(mut self, noise_rate: f64) -> Self {
        self.noise_rate = noise_rate;
        self
    }

    pub fn with_phase(mut self, phase: (f64, f64)) -> Self {
        self.phase = phase;
        self
    }
}

/// Constant global translation, pixels per second.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub vx: f64,
    pub vy: f64,
}

impl GroundTruth {
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("sensor geometry has zero area")]
    ZeroArea,
    #[error("dot density {0} outside (0, 1]")]
    BadDensity(f64),
    #[error("bar width {0} must be positive")]
    BadBarWidth(f64),
    #[error("grid pitch must be at least 1")]
    BadPitch,
    #[error("duration {0} s must be positive")]
    BadDuration(f64),
    #[error("noise rate {0} must be non-negative")]
    BadNoiseRate(f64),
    #[error("velocity and phase must be finite")]
    NonFinite,
    #[error("pattern has no lit cells")]
    EmptyPattern,
}

/// Pattern image on the sensor-sized torus, row-major, `true` = bright.
#[derive(Clone, Debug)]
pub struct PatternImage {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl PatternImage {
    #[inline]
    pub fn at(&self, ix: i64, iy: i64) -> bool {
        let x = ix.rem_euclid(self.width as i64) as usize;
        let y = iy.rem_euclid(self.height as i64) as usize;
        self.cells[y * self.width + x]
    }
}

fn validate(spec: &SceneSpec) -> Result<(), SynthError> {
    if spec.geometry.width == 0 || spec.geometry.height == 0 {
        return Err(SynthError::ZeroArea);
    }
    match spec.pattern {
        Pattern::RandomDots { density } if !(density > 0.0 && density <= 1.0) => {
            return Err(SynthError::BadDensity(density))
        }
        Pattern::Bar { width, .. } if !(width > 0.0) => return Err(SynthError::BadBarWidth(width)),
        Pattern::Grid { pitch: 0 } => return Err(SynthError::BadPitch),
        _ => {}
    }
    if !(spec.duration_s > 0.0) || !spec.duration_s.is_finite() {
        return Err(SynthError::BadDuration(spec.duration_s));
    }
    if !(spec.noise_rate >= 0.0) || !spec.noise_rate.is_finite() {
        return Err(SynthError::BadNoiseRate(spec.noise_rate));
    }
    let (vx, vy) = spec.velocity;
    let (px, py) = spec.phase;
    if ![vx, vy, px, py].iter().all(|v| v.is_finite()) {
        return Err(SynthError::NonFinite);
    }
    Ok(())
}

/// Rasterize the pattern. Random dots consume the first draws of `rng`.
pub fn rasterize(pattern: &Pattern, geometry: SensorGeometry, rng: &mut impl Rng) -> PatternImage {
    let (w, h) = (geometry.width as usize, geometry.height as usize);
    let mut cells = vec![false; w * h];
    match *pattern {
        Pattern::RandomDots { density } => {
            for c in cells.iter_mut() {
                *c = rng.random::<f64>() < density;
            }
        }
        Pattern::Bar { width, angle_deg } => {
            let theta = angle_deg.to_radians();
            let (nx, ny) = (theta.sin(), -theta.cos());
            let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
            for y in 0..h {
                for x in 0..w {
                    let mut dx = x as f64 + 0.5 - cx;
                    let mut dy = y as f64 + 0.5 - cy;
                    // wrap to the nearest image of the torus
                    dx -= (dx / w as f64).round() * w as f64;
                    dy -= (dy / h as f64).round() * h as f64;
                    let dist = dx * nx + dy * ny;
                    cells[y * w + x] = dist.abs() < width / 2.0;
                }
            }
        }
        Pattern::Grid { pitch } => {
            let p = pitch as usize;
            for y in 0..h {
                for x in 0..w {
                    cells[y * w + x] = x % p == 0 || y % p == 0;
                }
            }
        }
    }
    PatternImage {
        width: w,
        height: h,
        cells,
    }
}

/// Boundary crossings of one coordinate of a pixel's sample point.
///
/// The coordinate is `u(t) = u0 - v t`; the cell is `floor(u)`. Crossing `k`
/// happens at `times(k)` (seconds) and moves the cell by `step`.
#[derive(Clone, Copy)]
struct Crossings {
    first: f64,
    period: f64,
    step: i64,
}

impl Crossings {
    fn new(u0: f64, v: f64) -> Option<Self> {
        if v > 0.0 {
            Some(Crossings {
                first: (u0 - u0.floor()) / v,
                period: 1.0 / v,
                step: -1,
            })
        } else if v < 0.0 {
            Some(Crossings {
                first: (u0.floor() + 1.0 - u0) / -v,
                period: 1.0 / -v,
                step: 1,
            })
        } else {
            None
        }
    }

    fn time(&self, k: u64) -> f64 {
        self.first + k as f64 * self.period
    }
}

fn pixel_events(
    image: &PatternImage,
    x: u16,
    y: u16,
    u0: (f64, f64),
    velocity: (f64, f64),
    duration_s: f64,
    out: &mut Vec<Event>,
) {
    let cx = Crossings::new(u0.0, velocity.0);
    let cy = Crossings::new(u0.1, velocity.1);
    let mut ix = u0.0.floor() as i64;
    let mut iy = u0.1.floor() as i64;
    let (mut kx, mut ky) = (0u64, 0u64);
    let tie = 1e-12;
    loop {
        let tx = cx.map_or(f64::INFINITY, |c| c.time(kx));
        let ty = cy.map_or(f64::INFINITY, |c| c.time(ky));
        let t = tx.min(ty);
        if t >= duration_s {
            break;
        }
        let before = image.at(ix, iy);
        if tx <= t + tie {
            ix += cx.unwrap().step;
            kx += 1;
        }
        if ty <= t + tie {
            iy += cy.unwrap().step;
            ky += 1;
        }
        let after = image.at(ix, iy);
        if before != after {
            let pol = if after { Polarity::On } else { Polarity::Off };
            out.push(Event::new((t * 1e6).round() as u64, x, y, pol));
        }
    }
}

/// Events emitted by the moving pattern alone, before noise and sorting.
fn signal_events(spec: &SceneSpec, image: &PatternImage) -> Vec<Event> {
    let mut events = Vec::new();
    if spec.velocity == (0.0, 0.0) {
        return events;
    }
    for y in 0..spec.geometry.height {
        for x in 0..spec.geometry.width {
            let u0 = (x as f64 + 0.5 - spec.phase.0, y as f64 + 0.5 - spec.phase.1);
            pixel_events(image, x, y, u0, spec.velocity, spec.duration_s, &mut events);
        }
    }
    events
}

/// Generate a time-sorted event stream and its ground truth.
///
/// Identical specs yield identical streams.
pub fn generate(spec: &SceneSpec) -> Result<(Vec<Event>, GroundTruth), SynthError> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let image = rasterize(&spec.pattern, spec.geometry, &mut rng);
    if !image.cells.iter().any(|&c| c) {
        return Err(SynthError::EmptyPattern);
    }
    let mut events = signal_events(spec, &image);

    let duration_us = (spec.duration_s * 1e6).round() as u64;
    let lambda = spec.noise_rate * spec.geometry.pixels() as f64 * spec.duration_s;
    if lambda > 0.0 && duration_us > 0 {
        let count = Poisson::new(lambda).map(|p| p.sample(&mut rng) as u64).unwrap_or(0);
        events.reserve(count as usize);
        for _ in 0..count {
            let t = rng.random_range(0..duration_us);
            let x = rng.random_range(0..spec.geometry.width);
            let y = rng.random_range(0..spec.geometry.height);
            let pol = if rng.random::<bool>() {
                Polarity::On
            } else {
                Polarity::Off
            };
            events.push(Event::new(t, x, y, pol));
        }
    }
    events.sort_unstable_by_key(|e| (e.t, e.y, e.x, e.pol));
    Ok((
        events,
        GroundTruth {
            vx: spec.velocity.0,
            vy: spec.velocity.1,
        },
    ))
}
