//! Frame sources for legitimate ECUs: periodic generators and candump replay.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::codec::frame::max_frame_bits;
use crate::codec::FrameSpec;
use crate::error::ConfigError;

#[derive(Debug, Clone, PartialEq)]
pub enum PayloadGen {
    Fixed(Vec<u8>),
    Random { dlc: u8 },
    /// Big-endian counter filling `dlc` bytes, wrapping.
    Counter { dlc: u8, next: u64 },
    /// Two-byte big-endian reading, `base` plus uniform noise in `[-jitter, jitter]`.
    Sensor { base: u16, jitter: u16 },
}

impl PayloadGen {
    pub fn counter(dlc: u8) -> Self {
        PayloadGen::Counter { dlc, next: 0 }
    }

    pub fn dlc(&self) -> u8 {
        match self {
            PayloadGen::Fixed(p) => p.len() as u8,
            PayloadGen::Random { dlc } | PayloadGen::Counter { dlc, .. } => *dlc,
            PayloadGen::Sensor { .. } => 2,
        }
    }

    pub fn next(&mut self, rng: &mut ChaCha8Rng) -> Vec<u8> {
        match self {
            PayloadGen::Fixed(p) => p.clone(),
            PayloadGen::Random { dlc } => (0..*dlc).map(|_| rng.gen()).collect(),
            PayloadGen::Counter { dlc, next } => {
                let v = *next;
                *next = next.wrapping_add(1);
                let bytes = v.to_be_bytes();
                bytes[8 - *dlc as usize..].to_vec()
            }
            PayloadGen::Sensor { base, jitter } => {
                let j = *jitter as i32;
                let noise = if j == 0 { 0 } else { rng.gen_range(-j..=j) };
                let v = (*base as i32 + noise).clamp(0, u16::MAX as i32) as u16;
                v.to_be_bytes().to_vec()
            }
        }
    }
}

/// Decodes a two-byte sensor payload.
pub fn sensor_value(payload: &[u8]) -> Option<u16> {
    match payload {
        [hi, lo, ..] => Some(u16::from_be_bytes([*hi, *lo])),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSource {
    pub id: u16,
    pub period: u64,
    pub offset: u64,
    /// Frames released back to back at each period boundary.
    pub burst: u32,
    pub payload: PayloadGen,
}

impl PeriodicSource {
    pub fn new(id: u16, period: u64, payload: PayloadGen) -> Self {
        PeriodicSource {
            id,
            period,
            offset: 0,
            burst: 1,
            payload,
        }
    }
}

/// Recorded frames with tick offsets relative to the first one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedTrace {
    pub frames: Vec<(u64, FrameSpec)>,
}

impl RecordedTrace {
    /// Ticks from the first frame to one frame past the last.
    pub fn span(&self) -> u64 {
        match self.frames.last() {
            Some((t, f)) => t + max_frame_bits(f.dlc()) as u64,
            None => 0,
        }
    }

    /// Parses candump log lines: `(seconds) iface ID#DATA`, or bare `ID#DATA`
    /// lines spaced one frame apart. Blank lines and `#` comments are skipped.
    pub fn parse_candump(text: &str, bitrate_bps: u64) -> Result<Self, ConfigError> {
        let mut frames = Vec::new();
        let mut first_ts: Option<f64> = None;
        let mut next_bare = 0u64;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| ConfigError::Parse(format!("trace line {}: {msg}", lineno + 1));
            let mut parts = line.split_whitespace();
            let mut token = parts.next().ok_or_else(|| bad("empty"))?;
            let mut ts = None;
            if token.starts_with('(') {
                let secs: f64 = token
                    .trim_matches(|c| c == '(' || c == ')')
                    .parse()
                    .map_err(|_| bad("bad timestamp"))?;
                ts = Some(secs);
                let _iface = parts.next().ok_or_else(|| bad("missing interface"))?;
                token = parts.next().ok_or_else(|| bad("missing frame"))?;
            }
            let frame = parse_frame_token(token).map_err(|m| bad(&m))?;
            let tick = match ts {
                Some(secs) => {
                    let first = *first_ts.get_or_insert(secs);
                    ((secs - first).max(0.0) * bitrate_bps as f64).round() as u64
                }
                None => next_bare,
            };
            next_bare = tick + max_frame_bits(frame.dlc()) as u64;
            frames.push((tick, frame));
        }
        frames.sort_by_key(|(t, _)| *t);
        Ok(RecordedTrace { frames })
    }

    pub fn load(path: &Path, bitrate_bps: u64) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_candump(&text, bitrate_bps)
    }
}

fn parse_frame_token(token: &str) -> Result<FrameSpec, String> {
    let (id, data) = token.split_once('#').ok_or("expected ID#DATA")?;
    let id = u16::from_str_radix(id, 16).map_err(|_| format!("bad id {id:?}"))?;
    let payload = parse_hex(data)?;
    FrameSpec::new(id, payload).map_err(|e| e.to_string())
}

/// Parses an even-length hex string; `-` and the empty string are an empty payload.
pub fn parse_hex(s: &str) -> Result<Vec<u8>, String> {
    let s = s.trim();
    if s.is_empty() || s == "-" {
        return Ok(Vec::new());
    }
    if !s.len().is_multiple_of(2) {
        return Err(format!("odd-length hex {s:?}"));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|_| format!("bad hex {s:?}")))
        .collect()
}

#[derive(Debug, Clone)]
struct TraceCursor {
    trace: RecordedTrace,
    start: u64,
    repeat: u32,
    round: u32,
    index: usize,
}

impl TraceCursor {
    fn poll(&mut self, tick: u64, out: &mut Vec<FrameSpec>) {
        let span = self.trace.span().max(1);
        while self.round < self.repeat && !self.trace.frames.is_empty() {
            let (rel, frame) = &self.trace.frames[self.index];
            if self.start + self.round as u64 * span + rel > tick {
                break;
            }
            out.push(frame.clone());
            self.index += 1;
            if self.index == self.trace.frames.len() {
                self.index = 0;
                self.round += 1;
            }
        }
    }
}

/// A legitimate traffic generator polled once per tick.
#[derive(Debug, Clone)]
pub struct TrafficSource {
    kind: SourceKind,
}

#[derive(Debug, Clone)]
enum SourceKind {
    Periodic { src: PeriodicSource, next_due: u64 },
    Trace(TraceCursor),
}

impl TrafficSource {
    pub fn periodic(src: PeriodicSource) -> Self {
        let next_due = src.offset;
        TrafficSource {
            kind: SourceKind::Periodic { src, next_due },
        }
    }

    /// Replays `trace` starting at `start`, `repeat` times back to back.
    pub fn replay(trace: RecordedTrace, start: u64, repeat: u32) -> Self {
        TrafficSource {
            kind: SourceKind::Trace(TraceCursor {
                trace,
                start,
                repeat,
                round: 0,
                index: 0,
            }),
        }
    }

    /// Ids this source can emit.
    pub fn ids(&self) -> Vec<u16> {
        match &self.kind {
            SourceKind::Periodic { src, .. } => vec![src.id],
            SourceKind::Trace(c) => {
                let mut ids: Vec<u16> = c.trace.frames.iter().map(|(_, f)| f.id()).collect();
                ids.sort_unstable();
                ids.dedup();
                ids
            }
        }
    }

    /// Appends the frames due at `tick` to `out`.
    pub fn poll(&mut self, tick: u64, rng: &mut ChaCha8Rng, out: &mut Vec<FrameSpec>) {
        match &mut self.kind {
            SourceKind::Periodic { src, next_due } => {
                if tick < *next_due {
                    return;
                }
                *next_due = tick + src.period.max(1);
                for _ in 0..src.burst {
                    let payload = src.payload.next(rng);
                    out.push(FrameSpec::new(src.id, payload).expect("validated source"));
                }
            }
            SourceKind::Trace(c) => c.poll(tick, out),
        }
    }
}
