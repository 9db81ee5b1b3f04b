//! Color-coded flow frames and slice snapshots as binary PPM/PGM.

use std::io::{self, Write};

use crate::event_io::{FlowEvent, SensorGeometry};
use crate::slices::{Grid, RingPosition, SlicePyramid};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn write_pgm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }
}

/// HSV with s = 1 to RGB. `hue_deg` may be any angle.
pub fn hsv_to_rgb(hue_deg: f64, value: f64) -> [u8; 3] {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let v = value.clamp(0.0, 1.0);
    let sector = h.floor() as u32 % 6;
    let f = h - h.floor();
    let p = 0.0;
    let q = v * (1.0 - f);
    let t = v * f;
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let byte = |c: f64| (c * 255.0).round() as u8;
    [byte(r), byte(g), byte(b)]
}

/// Direction as hue, speed relative to `max_speed` as brightness.
pub fn flow_color(vx: f64, vy: f64, max_speed: f64) -> [u8; 3] {
    let speed = vx.hypot(vy);
    if speed == 0.0 || max_speed <= 0.0 {
        return [0, 0, 0];
    }
    hsv_to_rgb(vy.atan2(vx).to_degrees(), (speed / max_speed).min(1.0))
}

/// One frame per `window_us`, from the window holding `start_us` up to the
/// window holding `end_us`. Later samples overwrite earlier ones at a pixel.
pub fn render_flow_range(
    flows: &[FlowEvent],
    geometry: SensorGeometry,
    window_us: u64,
    max_speed: f64,
    start_us: u64,
    end_us: u64,
) -> Vec<RgbImage> {
    assert!(window_us > 0, "window must be positive");
    let (w, h) = (geometry.width as usize, geometry.height as usize);
    let first = start_us / window_us;
    let last = end_us.max(start_us) / window_us;
    let mut frames = vec![RgbImage::new(w, h); (last - first + 1) as usize];
    for f in flows {
        if f.t < start_us || f.t > end_us || !geometry.contains(f.x, f.y) {
            continue;
        }
        let k = (f.t / window_us - first) as usize;
        frames[k].put(f.x as usize, f.y as usize, flow_color(f.vx, f.vy, max_speed));
    }
    frames
}

/// Frames covering the span of the flow stream; none for an empty stream.
pub fn render_flow(flows: &[FlowEvent], geometry: SensorGeometry, window_us: u64, max_speed: f64) -> Vec<RgbImage> {
    let (Some(lo), Some(hi)) = (flows.iter().map(|f| f.t).min(), flows.iter().map(|f| f.t).max()) else {
        return Vec::new();
    };
    render_flow_range(flows, geometry, window_us, max_speed, lo, hi)
}

/// Grid magnitudes scaled so the largest |cell| is white.
pub fn render_grid(grid: &Grid) -> GrayImage {
    let peak = grid.cells.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0);
    let data = grid
        .cells
        .iter()
        .map(|c| {
            if peak == 0 {
                0
            } else {
                ((c.unsigned_abs() as u32 * 255) / peak as u32) as u8
            }
        })
        .collect();
    GrayImage {
        width: grid.width,
        height: grid.height,
        data,
    }
}

pub fn render_slice(pyramid: &SlicePyramid, which: RingPosition, scale: usize) -> GrayImage {
    render_grid(&pyramid.slice(which).scales[scale])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(t: u64, x: u16, y: u16, vx: f64, vy: f64) -> FlowEvent {
        FlowEvent {
            t,
            x,
            y,
            dx: 0,
            dy: 0,
            scale: 0,
            vx,
            vy,
            sad: 0.0,
        }
    }

    #[test]
    fn primary_hues() {
        assert_eq!(flow_color(10.0, 0.0, 10.0), [255, 0, 0]);
        assert_eq!(flow_color(0.0, 10.0, 10.0), [128, 255, 0]);
        assert_eq!(flow_color(-10.0, 0.0, 10.0), [0, 255, 255]);
        assert_eq!(flow_color(0.0, 0.0, 10.0), [0, 0, 0]);
        assert_eq!(flow_color(5.0, 0.0, 10.0), [128, 0, 0]);
        assert_eq!(flow_color(50.0, 0.0, 10.0), [255, 0, 0]);
    }

    #[test]
    fn frames_by_window() {
        let g = SensorGeometry::new(4, 3).unwrap();
        let flows = [
            flow(1_500, 0, 0, 1.0, 0.0),
            flow(4_200, 1, 2, 1.0, 0.0),
            flow(4_900, 1, 2, -1.0, 0.0),
        ];
        let frames = render_flow(&flows, g, 1_000, 1.0);
        assert_eq!(frames.len(), 4);
        assert_eq!(frames[0].pixel(0, 0), [255, 0, 0]);
        assert!(frames[1].data.iter().all(|&b| b == 0));
        assert_eq!(frames[3].pixel(1, 2), [0, 255, 255]);
        assert!(render_flow(&[], g, 1_000, 1.0).is_empty());
    }

    #[test]
    fn ppm_header() {
        let mut buf = Vec::new();
        RgbImage::new(2, 1).write_ppm(&mut buf).unwrap();
        assert_eq!(&buf[..11], b"P6\n2 1\n255\n");
        assert_eq!(buf.len(), 11 + 6);
    }

    #[test]
    fn grid_normalized() {
        let g = Grid {
            width: 3,
            height: 1,
            cells: vec![0, -2, 4],
        };
        let img = render_grid(&g);
        assert_eq!(img.data, vec![0, 127, 255]);
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n3 1\n255\n"));
    }
}
