//! Reference implementations written independently of the library code.
#![allow(dead_code)]

pub mod props;

use blockflow::event_io::{Event, Polarity};
use blockflow::search::{full_search, NoMatch, SearchConfig, SearchStrategy};
use blockflow::slices::Grid;
use blockflow::synth::PatternImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleMatch {
    pub dx: i32,
    pub dy: i32,
    pub sad: u64,
    pub valid: u64,
    pub evals: u32,
}

fn cell(g: &Grid, x: i64, y: i64) -> Option<i64> {
    if x < 0 || y < 0 || x >= g.width as i64 || y >= g.height as i64 {
        None
    } else {
        Some(g.cells[y as usize * g.width + x as usize] as i64)
    }
}

/// Exhaustive argmin of normalized SAD with the documented tie-break
/// (smaller Chebyshev length, then smaller dy, then smaller dx).
pub fn brute_force_search(
    reference: &Grid,
    candidate: &Grid,
    center: (usize, usize),
    cfg: &SearchConfig,
    cell_range: u32,
) -> Result<OracleMatch, (NoMatch, u32)> {
    let half = (cfg.block / 2) as i64;
    let (cx, cy) = (center.0 as i64, center.1 as i64);
    let min_nonzero = cfg.valid_pix_occupancy * (cfg.block * cfg.block) as f64;
    let mut ref_nonzero = 0;
    for j in -half..=half {
        for i in -half..=half {
            match cell(reference, cx + i, cy + j) {
                None => return Err((NoMatch::Border, 0)),
                Some(v) => ref_nonzero += (v != 0) as u32,
            }
        }
    }
    if (ref_nonzero as f64) < min_nonzero {
        return Err((NoMatch::Occupancy, 0));
    }
    let mut scored = Vec::new();
    let mut evals = 0;
    for dy in -cfg.radius..=cfg.radius {
        'offset: for dx in -cfg.radius..=cfg.radius {
            let (mut sad, mut valid, mut nz) = (0u64, 0u64, 0u32);
            for j in -half..=half {
                for i in -half..=half {
                    let a = cell(reference, cx + i, cy + j).unwrap();
                    let Some(b) = cell(candidate, cx + dx as i64 + i, cy + dy as i64 + j) else {
                        continue 'offset;
                    };
                    sad += (a - b).unsigned_abs();
                    valid += (a != 0 || b != 0) as u64;
                    nz += (b != 0) as u32;
                }
            }
            evals += 1;
            if valid > 0 && nz as f64 >= min_nonzero {
                scored.push((dx, dy, sad, valid));
            }
        }
    }
    scored.sort_by(|a, b| {
        (a.2 as u128 * b.3 as u128)
            .cmp(&(b.2 as u128 * a.3 as u128))
            .then((a.0.abs().max(a.1.abs())).cmp(&b.0.abs().max(b.1.abs())))
            .then((a.1, a.0).cmp(&(b.1, b.0)))
    });
    let Some(&(dx, dy, sad, valid)) = scored.first() else {
        return Err((NoMatch::Occupancy, evals));
    };
    if sad as f64 / (valid as f64 * cell_range as f64) > cfg.max_allowed_sad {
        return Err((NoMatch::Sad, evals));
    }
    Ok(OracleMatch {
        dx,
        dy,
        sad,
        valid,
        evals,
    })
}

/// Events of one pixel row found by stepping time in 1 µs increments and
/// sampling the translated pattern at every pixel center.
pub fn stepped_row_events(
    image: &PatternImage,
    row: u16,
    width: u16,
    velocity: (f64, f64),
    duration_us: u64,
) -> Vec<Event> {
    let mut out = Vec::new();
    let y0 = row as f64 + 0.5;
    for x in 0..width {
        let x0 = x as f64 + 0.5;
        let sample = |t_us: u64| {
            let t = t_us as f64 * 1e-6;
            image.at(
                (x0 - velocity.0 * t).floor() as i64,
                (y0 - velocity.1 * t).floor() as i64,
            )
        };
        let mut prev = sample(0);
        for t_us in 1..=duration_us {
            let now = sample(t_us);
            if now != prev {
                out.push(Event::new(t_us, x, row, if now { Polarity::On } else { Polarity::Off }));
                prev = now;
            }
        }
    }
    out
}

fn random_grid(rng: &mut impl Rng, w: usize, h: usize, fill: f64, hi: i8) -> Grid {
    Grid {
        width: w,
        height: h,
        cells: (0..w * h)
            .map(|_| {
                if rng.random::<f64>() < fill {
                    rng.random_range(1..=hi)
                } else {
                    0
                }
            })
            .collect(),
    }
}

/// Randomized small instances where `full_search` and the brute-force oracle disagree.
pub fn full_search_mismatches(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for case in 0..cases {
        let (w, h) = (rng.random_range(8..24), rng.random_range(8..24));
        let hi = if case % 3 == 0 { 1 } else { 7 };
        let (fr, fc) = (rng.random_range(0.05..0.6), rng.random_range(0.05..0.6));
        let reference = random_grid(&mut rng, w, h, fr, hi);
        let candidate = random_grid(&mut rng, w, h, fc, hi);
        let cfg = SearchConfig {
            block: 2 * rng.random_range(0..4) + 1,
            radius: rng.random_range(1..4),
            strategy: SearchStrategy::Full,
            valid_pix_occupancy: [0.0, 0.01, 0.2][case % 3],
            max_allowed_sad: [1.0, 0.5, 0.3][case % 3],
        };
        let center = (rng.random_range(0..w), rng.random_range(0..h));
        let got = full_search(&reference, &candidate, center, &cfg, hi as u32);
        let want = brute_force_search(&reference, &candidate, center, &cfg, hi as u32);
        let same = match want {
            Ok(m) => got.is_valid() && (got.dx, got.dy, got.sad_evals) == (m.dx, m.dy, m.evals),
            Err((reason, evals)) => got.rejection == Some(reason) && got.sad_evals == evals,
        };
        if !same {
            mismatches += 1;
            eprintln!("case {case}: library {got:?}, oracle {want:?}");
        }
    }
    mismatches
}
