//! Event-camera data types, stream (de)serialization and voxelization.
//!
//! Two on-disk encodings are supported:
//!
//! * `text_csv`: a header line `# evstereo v1 width=<W> height=<H>` followed
//!   by one `t_us,x,y,p` record per line, `p` in `{-1, 1}`. A polarity of `0`
//!   is accepted on ingest and mapped to `-1`.
//! * `binary_le`: a 16-byte header (`"EVS1"`, `u32` width, `u32` height,
//!   `u32` count) followed by `count` 16-byte records: `u64` t, `u16` x,
//!   `u16` y, `i8` p and three zero pad bytes. All integers little-endian.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign of a brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    /// Decodes a stored polarity. `0` is the `{0,1}` convention for "off".
    pub fn from_i64(p: i64) -> Option<Self> {
        match p {
            1 => Some(Polarity::Positive),
            -1 | 0 => Some(Polarity::Negative),
            _ => None,
        }
    }
}

/// A single event: timestamp in microseconds, pixel column/row, polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Self { t, x, y, polarity }
    }
}

/// A time-ordered event sequence attached to a sensor of known resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: usize,
    height: usize,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates bounds and stably sorts by timestamp.
    pub fn new(width: usize, height: usize, mut events: Vec<Event>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg("sensor dimensions must be positive"));
        }
        if width > u16::MAX as usize + 1 || height > u16::MAX as usize + 1 {
            return Err(Error::arg("sensor dimensions exceed 16-bit coordinates"));
        }
        if let Some(e) = events
            .iter()
            .find(|e| e.x as usize >= width || e.y as usize >= height)
        {
            return Err(Error::InputData(format!(
                "event at ({}, {}) outside {}x{} sensor",
                e.x, e.y, width, height
            )));
        }
        if !events.windows(2).all(|w| w[0].t <= w[1].t) {
            events.sort_by_key(|e| e.t);
        }
        Ok(Self {
            width,
            height,
            events,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, Vec::new())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Signed polarity sum over events with `t0 <= t <= t1`.
    pub fn polarity_sum(&self, t0: u64, t1: u64) -> f64 {
        self.events
            .iter()
            .filter(|e| e.t >= t0 && e.t <= t1)
            .map(|e| e.polarity.sign())
            .sum()
    }
}

/// On-disk event encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventFormat {
    TextCsv,
    BinaryLe,
}

impl FromStr for EventFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text_csv" | "csv" => Ok(EventFormat::TextCsv),
            "binary_le" | "bin" => Ok(EventFormat::BinaryLe),
            other => Err(Error::arg(format!("unknown event format '{other}'"))),
        }
    }
}

const BINARY_MAGIC: &[u8; 4] = b"EVS1";
const BINARY_HEADER_LEN: usize = 16;
const BINARY_RECORD_LEN: usize = 16;

pub fn parse_events(input: &[u8], format: EventFormat) -> Result<EventStream> {
    match format {
        EventFormat::TextCsv => parse_text(input),
        EventFormat::BinaryLe => parse_binary(input),
    }
}

pub fn write_events(stream: &EventStream, format: EventFormat) -> Vec<u8> {
    match format {
        EventFormat::TextCsv => write_text(stream),
        EventFormat::BinaryLe => write_binary(stream),
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::parse_line(1, "missing '#' header line"))?;
    let mut width = None;
    let mut height = None;
    for token in body.split_whitespace() {
        let Some((key, value)) = token.split_once('=') else {
            continue;
        };
        let parsed = value
            .parse::<usize>()
            .map_err(|_| Error::parse_line(1, format!("bad header value '{token}'")))?;
        match key {
            "width" | "W" => width = Some(parsed),
            "height" | "H" => height = Some(parsed),
            _ => {}
        }
    }
    match (width, height) {
        (Some(w), Some(h)) => Ok((w, h)),
        _ => Err(Error::parse_line(1, "header must declare width and height")),
    }
}

fn parse_text(input: &[u8]) -> Result<EventStream> {
    let text = std::str::from_utf8(input)
        .map_err(|e| Error::parse_offset(e.valid_up_to(), "input is not UTF-8"))?;
    let mut lines = text.split('\n');
    let header = lines
        .next()
        .filter(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::parse_line(1, "empty input"))?;
    let (width, height) = parse_header(header.trim_end_matches('\r'))?;

    let mut events = Vec::new();
    for (idx, raw) in lines.enumerate() {
        let lineno = idx + 2;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::parse_line(
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let t = fields[0]
            .parse::<u64>()
            .map_err(|_| Error::parse_line(lineno, format!("bad timestamp '{}'", fields[0])))?;
        let x = parse_coord(fields[1], width, lineno, "x")?;
        let y = parse_coord(fields[2], height, lineno, "y")?;
        let p = fields[3]
            .parse::<i64>()
            .ok()
            .and_then(Polarity::from_i64)
            .ok_or_else(|| {
                Error::parse_line(
                    lineno,
                    format!("polarity '{}' not in {{-1,0,1}}", fields[3]),
                )
            })?;
        events.push(Event::new(t, x, y, p));
    }
    EventStream::new(width, height, events)
}

fn parse_coord(field: &str, limit: usize, lineno: usize, name: &str) -> Result<u16> {
    let v = field
        .parse::<u16>()
        .map_err(|_| Error::parse_line(lineno, format!("bad {name} coordinate '{field}'")))?;
    if v as usize >= limit {
        return Err(Error::parse_line(
            lineno,
            format!("{name}={v} outside sensor extent {limit}"),
        ));
    }
    Ok(v)
}

fn write_text(stream: &EventStream) -> Vec<u8> {
    let mut out = String::with_capacity(48 + stream.len() * 16);
    let _ = writeln!(
        out,
        "# evstereo v1 width={} height={}",
        stream.width, stream.height
    );
    for e in &stream.events {
        let _ = writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.polarity.as_i8());
    }
    out.into_bytes()
}

fn read_u32(input: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(input[at..at + 4].try_into().expect("4-byte slice"))
}

fn parse_binary(input: &[u8]) -> Result<EventStream> {
    if input.len() < BINARY_HEADER_LEN {
        return Err(Error::parse_offset(input.len(), "truncated header"));
    }
    if &input[0..4] != BINARY_MAGIC {
        return Err(Error::parse_offset(0, "bad magic, expected \"EVS1\""));
    }
    let width = read_u32(input, 4) as usize;
    let height = read_u32(input, 8) as usize;
    let count = read_u32(input, 12) as usize;
    let expected = BINARY_HEADER_LEN + count * BINARY_RECORD_LEN;
    if input.len() != expected {
        return Err(Error::parse_offset(
            input.len().min(expected),
            format!(
                "expected {expected} bytes for {count} records, found {}",
                input.len()
            ),
        ));
    }
    let mut events = Vec::with_capacity(count);
    for i in 0..count {
        let off = BINARY_HEADER_LEN + i * BINARY_RECORD_LEN;
        let rec = &input[off..off + BINARY_RECORD_LEN];
        let t = u64::from_le_bytes(rec[0..8].try_into().expect("8-byte slice"));
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let p = Polarity::from_i64(rec[12] as i8 as i64).ok_or_else(|| {
            Error::parse_offset(
                off + 12,
                format!("polarity {} not in {{-1,0,1}}", rec[12] as i8),
            )
        })?;
        if x as usize >= width || y as usize >= height {
            return Err(Error::parse_offset(
                off + 8,
                format!("event at ({x}, {y}) outside {width}x{height} sensor"),
            ));
        }
        events.push(Event::new(t, x, y, p));
    }
    EventStream::new(width, height, events)
}

fn write_binary(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(BINARY_HEADER_LEN + stream.len() * BINARY_RECORD_LEN);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(stream.width as u32).to_le_bytes());
    out.extend_from_slice(&(stream.height as u32).to_le_bytes());
    out.extend_from_slice(&(stream.len() as u32).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity.as_i8() as u8);
        out.extend_from_slice(&[0, 0, 0]);
    }
    out
}

/// Events binned into `bins` temporal slices, stored slice-major (`b, y, x`).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    bins: usize,
    width: usize,
    height: usize,
    t0: u64,
    t1: u64,
    data: Vec<f64>,
}

impl VoxelGrid {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn window(&self) -> (u64, u64) {
        (self.t0, self.t1)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, bin: usize, x: usize, y: usize) -> f64 {
        self.data[(bin * self.height + y) * self.width + x]
    }

    pub fn slice(&self, bin: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[bin * n..(bin + 1) * n]
    }

    pub fn total(&self) -> f64 {
        crate::util::compensated_sum(self.data.iter().copied())
    }
}

/// Linear temporal binning over the closed window `[t0, t1]`.
///
/// The bin coordinate is `(bins - 1) * (t - t0) / (t1 - t0)`; each event's
/// polarity is split between the two nearest bins.
pub fn voxelize(stream: &EventStream, bins: usize, window: (u64, u64)) -> Result<VoxelGrid> {
    let (t0, t1) = window;
    if bins == 0 {
        return Err(Error::arg("voxel grid needs at least one bin"));
    }
    if t0 >= t1 {
        return Err(Error::arg(format!("empty voxel window [{t0}, {t1}]")));
    }
    let (w, h) = (stream.width, stream.height);
    let mut data = vec![0.0; bins * w * h];
    let span = (t1 - t0) as f64;
    let last = (bins - 1) as f64;
    for e in stream.events.iter().filter(|e| e.t >= t0 && e.t <= t1) {
        let b = last * (e.t - t0) as f64 / span;
        let b0 = (b.floor() as usize).min(bins - 1);
        let frac = b - b0 as f64;
        let pix = e.y as usize * w + e.x as usize;
        let p = e.polarity.sign();
        data[b0 * w * h + pix] += p * (1.0 - frac);
        if frac > 0.0 && b0 + 1 < bins {
            data[(b0 + 1) * w * h + pix] += p * frac;
        }
    }
    Ok(VoxelGrid {
        bins,
        width: w,
        height: h,
        t0,
        t1,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(events: Vec<Event>) -> EventStream {
        EventStream::new(8, 8, events).unwrap()
    }

    #[test]
    fn parses_header_only_input() {
        let s = parse_events(b"# evstereo v1 width=8 height=8\n", EventFormat::TextCsv).unwrap();
        assert!(s.is_empty());
        assert_eq!((s.width(), s.height()), (8, 8));

        let short = parse_events(b"# W=8 H=8\n", EventFormat::TextCsv).unwrap();
        assert_eq!((short.width(), short.height()), (8, 8));
    }

    #[test]
    fn parses_single_record() {
        let s = parse_events(
            b"# evstereo v1 width=8 height=8\n100,3,4,1\n",
            EventFormat::TextCsv,
        )
        .unwrap();
        assert_eq!(s.events(), &[Event::new(100, 3, 4, Polarity::Positive)]);
    }

    #[test]
    fn sorts_unsorted_input() {
        let s = parse_events(
            b"# evstereo v1 width=8 height=8\n200,1,1,1\n100,2,2,-1\n",
            EventFormat::TextCsv,
        )
        .unwrap();
        let ts: Vec<u64> = s.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![100, 200]);
    }

    #[test]
    fn zero_polarity_maps_to_negative() {
        let s = parse_events(
            b"# evstereo v1 width=8 height=8\n5,0,0,0\n",
            EventFormat::TextCsv,
        )
        .unwrap();
        assert_eq!(s.events()[0].polarity, Polarity::Negative);
    }

    #[test]
    fn rejects_bad_records_with_line_numbers() {
        let err = parse_events(
            b"# evstereo v1 width=8 height=8\n1,1,1,1\n2,1,1,3\n",
            EventFormat::TextCsv,
        )
        .unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");

        let err = parse_events(
            b"# evstereo v1 width=8 height=8\n1,9,1,1\n",
            EventFormat::TextCsv,
        )
        .unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let err = parse_events(
            b"# evstereo v1 width=8 height=8\n1,1,1\n",
            EventFormat::TextCsv,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));

        assert!(parse_events(b"100,3,4,1\n", EventFormat::TextCsv).is_err());
    }

    #[test]
    fn binary_rejects_bad_magic_and_truncation() {
        let mut bytes = write_events(
            &stream(vec![Event::new(1, 1, 1, Polarity::Positive)]),
            EventFormat::BinaryLe,
        );
        assert_eq!(bytes.len(), 32);
        let err = parse_events(&bytes[..20], EventFormat::BinaryLe).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        bytes[0] = b'X';
        assert!(parse_events(&bytes, EventFormat::BinaryLe).is_err());
    }

    #[test]
    fn writes_header_only_for_empty_stream() {
        let out = write_events(&stream(vec![]), EventFormat::TextCsv);
        assert_eq!(out, b"# evstereo v1 width=8 height=8\n");
        let bin = write_events(&stream(vec![]), EventFormat::BinaryLe);
        assert_eq!(bin.len(), 16);
        assert_eq!(&bin[..4], b"EVS1");
    }

    #[test]
    fn writes_single_record_verbatim() {
        let out = write_events(
            &stream(vec![Event::new(42, 7, 0, Polarity::Negative)]),
            EventFormat::TextCsv,
        );
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "# evstereo v1 width=8 height=8\n42,7,0,-1\n"
        );
    }

    #[test]
    fn voxelize_empty_stream_is_zero() {
        let v = voxelize(&stream(vec![]), 5, (0, 100)).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
        assert_eq!(v.data().len(), 5 * 64);
    }

    #[test]
    fn voxelize_event_on_bin_center() {
        // bins 5 over [0, 100]: bin 2 sits at t = 50
        let v = voxelize(
            &stream(vec![Event::new(50, 3, 4, Polarity::Positive)]),
            5,
            (0, 100),
        )
        .unwrap();
        assert_eq!(v.get(2, 3, 4), 1.0);
        assert_eq!(v.total(), 1.0);
        assert_eq!(v.data().iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn voxelize_event_between_bins() {
        let v = voxelize(
            &stream(vec![Event::new(25, 1, 2, Polarity::Negative)]),
            3,
            (0, 100),
        )
        .unwrap();
        assert_eq!(v.get(0, 1, 2), -0.5);
        assert_eq!(v.get(1, 1, 2), -0.5);
        assert_eq!(v.get(2, 1, 2), 0.0);
    }

    #[test]
    fn voxelize_window_is_closed_and_validated() {
        let s = stream(vec![
            Event::new(10, 0, 0, Polarity::Positive),
            Event::new(20, 0, 0, Polarity::Positive),
            Event::new(21, 0, 0, Polarity::Positive),
        ]);
        let v = voxelize(&s, 4, (10, 20)).unwrap();
        assert_eq!(v.total(), 2.0);
        assert_eq!(v.get(3, 0, 0), 1.0);
        assert!(voxelize(&s, 4, (20, 20)).is_err());
        assert!(voxelize(&s, 0, (0, 20)).is_err());
    }

    fn arb_stream() -> impl Strategy<Value = EventStream> {
        (1usize..64, 1usize..64).prop_flat_map(|(w, h)| {
            prop::collection::vec(
                (0u64..1_000_000, 0..w as u16, 0..h as u16, any::<bool>()),
                0..1000,
            )
            .prop_map(move |raw| {
                let events = raw
                    .into_iter()
                    .map(|(t, x, y, p)| {
                        let pol = if p {
                            Polarity::Positive
                        } else {
                            Polarity::Negative
                        };
                        Event::new(t, x, y, pol)
                    })
                    .collect();
                EventStream::new(w, h, events).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(s in arb_stream()) {
            for format in [EventFormat::TextCsv, EventFormat::BinaryLe] {
                let bytes = write_events(&s, format);
                prop_assert_eq!(&parse_events(&bytes, format).unwrap(), &s);
            }
        }

        #[test]
        fn voxelize_conserves_polarity_and_is_linear(
            a in arb_stream(), split in 0usize..1000, bins in 1usize..8
        ) {
            let events = a.events().to_vec();
            let cut = split.min(events.len());
            let s1 = EventStream::new(a.width(), a.height(), events[..cut].to_vec()).unwrap();
            let s2 = EventStream::new(a.width(), a.height(), events[cut..].to_vec()).unwrap();
            let window = (0, 1_000_000);
            let full = voxelize(&a, bins, window).unwrap();
            let expected = a.polarity_sum(window.0, window.1);
            prop_assert!((full.total() - expected).abs() <= 1e-6 * expected.abs().max(1.0));

            let v1 = voxelize(&s1, bins, window).unwrap();
            let v2 = voxelize(&s2, bins, window).unwrap();
            for ((f, x1), x2) in full.data().iter().zip(v1.data()).zip(v2.data()) {
                prop_assert!((f - (x1 + x2)).abs() < 1e-9);
            }
        }
    }
}
