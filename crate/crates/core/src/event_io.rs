//! Event and flow records and their on-disk formats.
//!
//! Event streams are stored either as text (`t_us,x,y,p` per line, `p` in
//! {0,1}) or as a little-endian binary file: a 16-byte preamble
//! (`EVT0`, u16 width, u16 height, 8 reserved bytes) followed by 13-byte
//! records (u64 t_us, u16 x, u16 y, u8 p).
//!
//! Flow output is a CSV with the header `t,x,y,dx,dy,scale,vx,vy,sad`.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BIN_MAGIC: [u8; 4] = *b"EVT0";
pub const BIN_HEADER_LEN: usize = 16;
pub const BIN_RECORD_LEN: usize = 13;
pub const FLOW_HEADER: &str = "t,x,y,dx,dy,scale,vx,vy,sad";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    /// +1 for ON, -1 for OFF.
    pub fn sign(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => 0,
        }
    }

    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Polarity::Off),
            1 => Some(Polarity::On),
            _ => None,
        }
    }
}

/// One brightness-change event. `t` is in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub pol: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, pol: Polarity) -> Self {
        Event { t, x, y, pol }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
}

impl SensorGeometry {
    pub fn new(width: u16, height: u16) -> Result<Self, EventIoError> {
        if width == 0 || height == 0 {
            return Err(EventIoError::BadGeometry { width, height });
        }
        Ok(SensorGeometry { width, height })
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl Default for SensorGeometry {
    fn default() -> Self {
        SensorGeometry {
            width: 346,
            height: 260,
        }
    }
}

impl fmt::Display for SensorGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// One optical-flow output sample.
///
/// `dx`/`dy` are the winning block offset on the grid of `scale`; `vx`/`vy`
/// are in pixels per second at full resolution and point along the motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowEvent {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub dx: i32,
    pub dy: i32,
    pub scale: u8,
    pub vx: f64,
    pub vy: f64,
    pub sad: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventFormat {
    Csv,
    Bin,
}

impl EventFormat {
    /// Guess from a file extension: `.bin`/`.evt` are binary, anything else text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("bin") || ext.eq_ignore_ascii_case("evt") => EventFormat::Bin,
            _ => EventFormat::Csv,
        }
    }
}

impl FromStr for EventFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" | "txt" => Ok(EventFormat::Csv),
            "bin" => Ok(EventFormat::Bin),
            other => Err(format!("unknown event format '{other}' (expected csv or bin)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum EventIoError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("record {index}: malformed record: {reason}")]
    Malformed { index: usize, reason: String },
    #[error("record {index}: coordinate ({x}, {y}) outside the {width}x{height} sensor")]
    OutOfBounds {
        index: usize,
        x: u64,
        y: u64,
        width: u16,
        height: u16,
    },
    #[error("record {index}: timestamp {t} precedes previous timestamp {prev}")]
    TimestampRegression { index: usize, t: u64, prev: u64 },
    #[error("bad binary preamble: {0}")]
    BadHeader(String),
    #[error("binary stream is {found} but {declared} was declared")]
    GeometryMismatch {
        found: SensorGeometry,
        declared: SensorGeometry,
    },
    #[error("sensor geometry {width}x{height} has zero area")]
    BadGeometry { width: u16, height: u16 },
}

/// Applies bounds and ordering rules to decoded records.
///
/// Record indices are 1-based. In strict mode any violation is an error; in
/// lenient mode out-of-bounds records are dropped and timestamp regressions
/// are passed through.
struct Validator {
    geometry: SensorGeometry,
    strict: bool,
    prev_t: Option<u64>,
    dropped: usize,
}

impl Validator {
    fn new(geometry: SensorGeometry, strict: bool) -> Self {
        Validator {
            geometry,
            strict,
            prev_t: None,
            dropped: 0,
        }
    }

    fn check(&mut self, index: usize, t: u64, x: u64, y: u64, pol: Polarity) -> Result<Option<Event>, EventIoError> {
        if x >= self.geometry.width as u64 || y >= self.geometry.height as u64 {
            if self.strict {
                return Err(EventIoError::OutOfBounds {
                    index,
                    x,
                    y,
                    width: self.geometry.width,
                    height: self.geometry.height,
                });
            }
            self.dropped += 1;
            return Ok(None);
        }
        if let Some(prev) = self.prev_t {
            if t < prev && self.strict {
                return Err(EventIoError::TimestampRegression { index, t, prev });
            }
        }
        self.prev_t = Some(t);
        Ok(Some(Event::new(t, x as u16, y as u16, pol)))
    }

    fn finish(self) {
        if self.dropped > 0 {
            log::warn!("dropped {} out-of-bounds events", self.dropped);
        }
    }
}

fn parse_field<T: FromStr>(field: Option<&str>, name: &str, index: usize) -> Result<T, EventIoError> {
    let raw = field.ok_or_else(|| EventIoError::Malformed {
        index,
        reason: format!("missing field '{name}'"),
    })?;
    raw.trim().parse().map_err(|_| EventIoError::Malformed {
        index,
        reason: format!("field '{name}' has invalid value '{}'", raw.trim()),
    })
}

fn is_skippable(line: &str) -> bool {
    let trimmed = line.trim();
    trimmed.is_empty() || trimmed.starts_with('#')
}

/// Read an event stream from any reader.
pub fn read_events_from<R: Read>(
    reader: R,
    format: EventFormat,
    geometry: SensorGeometry,
    strict: bool,
) -> Result<Vec<Event>, EventIoError> {
    match format {
        EventFormat::Csv => read_csv_events(BufReader::new(reader), geometry, strict),
        EventFormat::Bin => read_bin_events(BufReader::new(reader), geometry, strict),
    }
}

pub fn read_events(
    path: &Path,
    format: EventFormat,
    geometry: SensorGeometry,
    strict: bool,
) -> Result<Vec<Event>, EventIoError> {
    read_events_from(File::open(path)?, format, geometry, strict)
}

fn read_csv_events<R: BufRead>(reader: R, geometry: SensorGeometry, strict: bool) -> Result<Vec<Event>, EventIoError> {
    let mut validator = Validator::new(geometry, strict);
    let mut events = Vec::new();
    let mut index = 0;
    for line in reader.lines() {
        let line = line?;
        if is_skippable(&line) {
            continue;
        }
        index += 1;
        let mut fields = line.split(',');
        let t: u64 = parse_field(fields.next(), "t", index)?;
        let x: u64 = parse_field(fields.next(), "x", index)?;
        let y: u64 = parse_field(fields.next(), "y", index)?;
        let p: u8 = parse_field(fields.next(), "p", index)?;
        if fields.next().is_some() {
            return Err(EventIoError::Malformed {
                index,
                reason: "expected exactly 4 fields".into(),
            });
        }
        let pol = Polarity::from_bit(p).ok_or_else(|| EventIoError::Malformed {
            index,
            reason: format!("polarity must be 0 or 1, got {p}"),
        })?;
        if let Some(e) = validator.check(index, t, x, y, pol)? {
            events.push(e);
        }
    }
    validator.finish();
    Ok(events)
}

fn read_header<R: Read>(reader: &mut R) -> Result<Option<SensorGeometry>, EventIoError> {
    let mut header = [0u8; BIN_HEADER_LEN];
    let mut filled = 0;
    while filled < BIN_HEADER_LEN {
        let n = reader.read(&mut header[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    if filled == 0 {
        return Ok(None);
    }
    if filled < BIN_HEADER_LEN {
        return Err(EventIoError::BadHeader(format!("truncated preamble ({filled} bytes)")));
    }
    if header[..4] != BIN_MAGIC {
        return Err(EventIoError::BadHeader(format!("bad magic {:?}", &header[..4])));
    }
    let width = u16::from_le_bytes([header[4], header[5]]);
    let height = u16::from_le_bytes([header[6], header[7]]);
    SensorGeometry::new(width, height)
        .map(Some)
        .map_err(|_| EventIoError::BadHeader(format!("zero-area geometry {width}x{height}")))
}

/// Geometry stored in a binary event file's preamble, `None` for an empty file.
pub fn read_bin_geometry(path: &Path) -> Result<Option<SensorGeometry>, EventIoError> {
    let mut file = File::open(path)?;
    read_header(&mut file)
}

fn read_bin_events<R: Read>(mut reader: R, geometry: SensorGeometry, strict: bool) -> Result<Vec<Event>, EventIoError> {
    let Some(found) = read_header(&mut reader)? else {
        return Ok(Vec::new());
    };
    if found != geometry {
        return Err(EventIoError::GeometryMismatch {
            found,
            declared: geometry,
        });
    }
    let mut validator = Validator::new(geometry, strict);
    let mut events = Vec::new();
    let mut record = [0u8; BIN_RECORD_LEN];
    let mut index = 0;
    loop {
        let mut filled = 0;
        while filled < BIN_RECORD_LEN {
            let n = reader.read(&mut record[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled == 0 {
            break;
        }
        index += 1;
        if filled < BIN_RECORD_LEN {
            return Err(EventIoError::Malformed {
                index,
                reason: format!("truncated record ({filled} of {BIN_RECORD_LEN} bytes)"),
            });
        }
        let t = u64::from_le_bytes(record[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([record[8], record[9]]);
        let y = u16::from_le_bytes([record[10], record[11]]);
        let pol = Polarity::from_bit(record[12]).ok_or_else(|| EventIoError::Malformed {
            index,
            reason: format!("polarity byte must be 0 or 1, got {}", record[12]),
        })?;
        if let Some(e) = validator.check(index, t, x as u64, y as u64, pol)? {
            events.push(e);
        }
    }
    validator.finish();
    Ok(events)
}

pub fn write_events_to<W: Write>(
    writer: W,
    format: EventFormat,
    geometry: SensorGeometry,
    events: &[Event],
) -> Result<(), EventIoError> {
    let mut w = BufWriter::new(writer);
    match format {
        EventFormat::Csv => {
            for e in events {
                writeln!(w, "{},{},{},{}", e.t, e.x, e.y, e.pol.bit())?;
            }
        }
        EventFormat::Bin => {
            let mut header = [0u8; BIN_HEADER_LEN];
            header[..4].copy_from_slice(&BIN_MAGIC);
            header[4..6].copy_from_slice(&geometry.width.to_le_bytes());
            header[6..8].copy_from_slice(&geometry.height.to_le_bytes());
            w.write_all(&header)?;
            let mut record = [0u8; BIN_RECORD_LEN];
            for e in events {
                record[0..8].copy_from_slice(&e.t.to_le_bytes());
                record[8..10].copy_from_slice(&e.x.to_le_bytes());
                record[10..12].copy_from_slice(&e.y.to_le_bytes());
                record[12] = e.pol.bit();
                w.write_all(&record)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_events(
    path: &Path,
    format: EventFormat,
    geometry: SensorGeometry,
    events: &[Event],
) -> Result<(), EventIoError> {
    write_events_to(File::create(path)?, format, geometry, events)
}

/// Fixed six decimals when that is exact, otherwise the shortest string that
/// parses back to the same value.
pub fn format_velocity(v: f64) -> String {
    let fixed = format!("{v:.6}");
    if fixed.parse::<f64>().ok() == Some(v) {
        fixed
    } else {
        format!("{v}")
    }
}

pub fn write_flow_to<W: Write>(writer: W, flows: &[FlowEvent]) -> Result<(), EventIoError> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{FLOW_HEADER}")?;
    for f in flows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            f.t,
            f.x,
            f.y,
            f.dx,
            f.dy,
            f.scale,
            format_velocity(f.vx),
            format_velocity(f.vy),
            f.sad
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_flow(path: &Path, flows: &[FlowEvent]) -> Result<(), EventIoError> {
    write_flow_to(File::create(path)?, flows)
}

pub fn read_flow_from<R: Read>(reader: R) -> Result<Vec<FlowEvent>, EventIoError> {
    let mut flows = Vec::new();
    let mut index = 0;
    for line in BufReader::new(reader).lines() {
        let line = line?;
        if is_skippable(&line) || line.trim() == FLOW_HEADER {
            continue;
        }
        index += 1;
        let mut fields = line.split(',');
        let flow = FlowEvent {
            t: parse_field(fields.next(), "t", index)?,
            x: parse_field(fields.next(), "x", index)?,
            y: parse_field(fields.next(), "y", index)?,
            dx: parse_field(fields.next(), "dx", index)?,
            dy: parse_field(fields.next(), "dy", index)?,
            scale: parse_field(fields.next(), "scale", index)?,
            vx: parse_field(fields.next(), "vx", index)?,
            vy: parse_field(fields.next(), "vy", index)?,
            sad: parse_field(fields.next(), "sad", index)?,
        };
        if fields.next().is_some() {
            return Err(EventIoError::Malformed {
                index,
                reason: "expected exactly 9 fields".into(),
            });
        }
        flows.push(flow);
    }
    Ok(flows)
}

pub fn read_flow(path: &Path) -> Result<Vec<FlowEvent>, EventIoError> {
    read_flow_from(File::open(path)?)
}
