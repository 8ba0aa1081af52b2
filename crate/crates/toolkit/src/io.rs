//! On-disk formats for waterfalls, kernels, trajectories and renders.
//!
//! # DASW waterfall file
//!
//! All numbers are little endian.
//!
//! | offset | size | field                         |
//! |-------:|-----:|-------------------------------|
//! | 0      | 4    | magic `DASW`                  |
//! | 4      | 2    | format version (u16, = 1)     |
//! | 6      | 4    | channels (u32, > 0)           |
//! | 10     | 4    | time samples (u32, > 0)       |
//! | 14     | 8    | channel spacing in m (f64)    |
//! | 22     | 8    | sample rate in Hz (f64)       |
//! | 30     | 1    | normalized flag (0 or 1)      |
//! | 31     | 4·n  | samples, f32, channel-major   |
//!
//! # Kernel text
//!
//! A header line `# kernel channel_spacing=<m> normalized=<bool>` followed by
//! one tap per line, center tap in the middle.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use das_core::{ImpulseKernel, Waterfall};

use crate::error::{Result, ToolkitError};

pub const WATERFALL_MAGIC: [u8; 4] = *b"DASW";
pub const WATERFALL_VERSION: u16 = 1;
pub const WATERFALL_HEADER_LEN: usize = 31;

/// Why a DASW buffer was rejected.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after the payload")]
    TrailingBytes(usize),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| ToolkitError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| ToolkitError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| ToolkitError::io(path, e))?;
    tmp.persist(path).map_err(|e| ToolkitError::io(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| ToolkitError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| ToolkitError::io(path, e))
}

pub fn encode_waterfall(w: &Waterfall) -> Vec<u8> {
    let mut out = Vec::with_capacity(WATERFALL_HEADER_LEN + 4 * w.values().len());
    out.extend_from_slice(&WATERFALL_MAGIC);
    out.extend_from_slice(&WATERFALL_VERSION.to_le_bytes());
    out.extend_from_slice(&(w.n_channels() as u32).to_le_bytes());
    out.extend_from_slice(&(w.n_time() as u32).to_le_bytes());
    out.extend_from_slice(&w.channel_spacing.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.push(u8::from(w.normalized));
    for &v in w.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn take<const N: usize>(bytes: &[u8], at: usize) -> [u8; N] {
    bytes[at..at + N].try_into().expect("length checked by caller")
}

pub fn decode_waterfall(bytes: &[u8]) -> Result<Waterfall, FormatError> {
    if bytes.len() < WATERFALL_HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != WATERFALL_MAGIC {
            return Err(FormatError::BadMagic(take(bytes, 0)));
        }
        return Err(FormatError::Truncated {
            expected: WATERFALL_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = take(bytes, 0);
    if magic != WATERFALL_MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(take(bytes, 4));
    if version != WATERFALL_VERSION {
        return Err(FormatError::VersionMismatch {
            found: version,
            expected: WATERFALL_VERSION,
        });
    }
    let n_channels = u32::from_le_bytes(take(bytes, 6)) as usize;
    let n_time = u32::from_le_bytes(take(bytes, 10)) as usize;
    let spacing = f64::from_le_bytes(take(bytes, 14));
    let rate = f64::from_le_bytes(take(bytes, 22));
    let normalized = match bytes[30] {
        0 => false,
        1 => true,
        b => return Err(FormatError::InvalidHeader(format!("normalized flag {b}"))),
    };
    if n_channels == 0 || n_time == 0 {
        return Err(FormatError::InvalidHeader(format!(
            "dimensions {n_channels} x {n_time}"
        )));
    }
    if !(spacing > 0.0 && spacing.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return Err(FormatError::InvalidHeader(format!(
            "channel spacing {spacing}, sample rate {rate}"
        )));
    }
    let n = n_channels
        .checked_mul(n_time)
        .ok_or_else(|| FormatError::InvalidHeader(format!("dimensions {n_channels} x {n_time}")))?;
    let expected = WATERFALL_HEADER_LEN + 4 * n;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes(bytes.len() - expected));
    }
    let mut values = Vec::with_capacity(n);
    for (i, chunk) in bytes[WATERFALL_HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunks of 4"));
        if !v.is_finite() {
            return Err(FormatError::NonFinite(i));
        }
        values.push(f64::from(v));
    }
    let mut w = Waterfall::from_values(n_channels, n_time, values, spacing, rate)
        .map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
    w.normalized = normalized;
    Ok(w)
}

pub fn write_waterfall(w: &Waterfall, path: &Path) -> Result<()> {
    write_atomic(path, &encode_waterfall(w))
}

pub fn read_waterfall(path: &Path) -> Result<Waterfall> {
    decode_waterfall(&read_bytes(path)?).map_err(|e| ToolkitError::input(path, e.to_string()))
}

/// One line per channel, comma-separated, shortest round-trip decimals.
pub fn waterfall_to_csv(w: &Waterfall) -> String {
    let mut out = String::new();
    for c in 0..w.n_channels() {
        for (t, v) in w.row(c).iter().enumerate() {
            if t > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(w: &Waterfall, path: &Path) -> Result<()> {
    write_atomic(path, waterfall_to_csv(w).as_bytes())
}

/// Grayscale level of a normalized sample, rounded half up.
pub fn pixel_level(value: f64, gamma: f64) -> u8 {
    (255.0 * value.powf(gamma) + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Binary PGM (P5, maxval 255): channels are image rows, time samples are
/// columns.
pub fn encode_pgm(w: &Waterfall, gamma: f64) -> Result<Vec<u8>, String> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(format!("gamma must be > 0, got {gamma}"));
    }
    if let Some(i) = w.values().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(format!("waterfall is not normalized: sample {i} is {}", w.values()[i]));
    }
    let mut out = format!("P5\n{} {}\n255\n", w.n_time(), w.n_channels()).into_bytes();
    out.extend(w.values().iter().map(|&v| pixel_level(v, gamma)));
    Ok(out)
}

pub fn render_pgm(w: &Waterfall, path: &Path, gamma: f64) -> Result<()> {
    let bytes = encode_pgm(w, gamma).map_err(|e| ToolkitError::input(path, e))?;
    write_atomic(path, &bytes)
}

pub fn kernel_to_text(k: &ImpulseKernel) -> String {
    let mut out = format!(
        "# kernel channel_spacing={} normalized={}\n",
        k.channel_spacing, k.normalized
    );
    for t in k.taps() {
        writeln!(out, "{t}").expect("writing to a String");
    }
    out
}

pub fn parse_kernel(text: &str) -> Result<ImpulseKernel, String> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or("empty kernel file")?;
    let fields = header.strip_prefix("# kernel").ok_or("missing `# kernel` header")?;
    let (mut spacing, mut normalized) = (None, None);
    for field in fields.split_whitespace() {
        match field.split_once('=') {
            Some(("channel_spacing", v)) => {
                spacing = Some(v.parse::<f64>().map_err(|_| format!("bad channel_spacing `{v}`"))?)
            }
            Some(("normalized", v)) => {
                normalized = Some(v.parse::<bool>().map_err(|_| format!("bad normalized `{v}`"))?)
            }
            _ => return Err(format!("unknown header field `{field}`")),
        }
    }
    let mut taps = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        taps.push(
            line.parse::<f64>()
                .map_err(|_| format!("line {}: bad tap `{line}`", i + 1))?,
        );
    }
    ImpulseKernel::from_taps(
        taps,
        spacing.ok_or("header lacks channel_spacing")?,
        normalized.ok_or("header lacks normalized")?,
    )
    .map_err(|e| e.to_string())
}

pub fn read_kernel(path: &Path) -> Result<ImpulseKernel> {
    parse_kernel(&read_text(path)?).map_err(|e| ToolkitError::input(path, e))
}

pub fn write_kernel(k: &ImpulseKernel, path: &Path) -> Result<()> {
    write_atomic(path, kernel_to_text(k).as_bytes())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<das_core::tracker::Trajectory>> {
    das_core::tracker::parse_trajectories(&read_text(path)?).map_err(|e| ToolkitError::input(path, e.to_string()))
}

pub fn write_trajectories(ts: &[das_core::tracker::Trajectory], path: &Path) -> Result<()> {
    write_atomic(path, das_core::tracker::format_trajectories(ts).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Waterfall {
        let values = (0..16).map(|i| i as f64 / 15.0).collect();
        Waterfall::from_values(4, 4, values, 0.8, 11.0).unwrap()
    }

    #[test]
    fn header_layout() {
        let b = encode_waterfall(&sample());
        assert_eq!(&b[..4], b"DASW");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u32::from_le_bytes(b[6..10].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(b[14..22].try_into().unwrap()), 0.8);
        assert_eq!(b.len(), 31 + 64);
    }

    #[test]
    fn round_trip_is_bitwise_at_f32() {
        let w = sample();
        let b = encode_waterfall(&w);
        let back = decode_waterfall(&b).unwrap();
        assert_eq!(encode_waterfall(&back), b);
        for (a, r) in w.values().iter().zip(back.values()) {
            assert_eq!(*a as f32, *r as f32);
        }
    }

    #[test]
    fn truncation_is_reported() {
        let b = encode_waterfall(&sample());
        assert_eq!(
            decode_waterfall(&b[..b.len() - 1]),
            Err(FormatError::Truncated {
                expected: b.len(),
                found: b.len() - 1
            })
        );
    }

    #[test]
    fn errors_are_distinct() {
        let mut b = encode_waterfall(&sample());
        b[0] = b'X';
        assert!(matches!(decode_waterfall(&b), Err(FormatError::BadMagic(_))));
        let mut b = encode_waterfall(&sample());
        b[4] = 2;
        assert_eq!(
            decode_waterfall(&b),
            Err(FormatError::VersionMismatch { found: 2, expected: 1 })
        );
        let mut b = encode_waterfall(&sample());
        b[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_waterfall(&b), Err(FormatError::InvalidHeader(_))));
        let mut b = encode_waterfall(&sample());
        b.push(0);
        assert_eq!(decode_waterfall(&b), Err(FormatError::TrailingBytes(1)));
    }

    #[test]
    fn pixel_rounding() {
        assert_eq!(pixel_level(0.0, 1.0), 0);
        assert_eq!(pixel_level(1.0, 1.0), 255);
        assert_eq!(pixel_level(0.5, 1.0), 128);
        assert_eq!(pixel_level(0.25, 0.5), 128);
    }

    #[test]
    fn pgm_layout_and_rejection() {
        let w = Waterfall::from_values(2, 3, vec![0.0, 0.5, 1.0, 1.0, 0.5, 0.0], 0.8, 11.0).unwrap();
        let b = encode_pgm(&w, 1.0).unwrap();
        assert_eq!(b, [b"P5\n3 2\n255\n".as_slice(), &[0, 128, 255, 255, 128, 0]].concat());
        let bad = Waterfall::from_values(1, 2, vec![0.0, 1.5], 0.8, 11.0).unwrap();
        assert!(encode_pgm(&bad, 1.0).is_err());
    }

    #[test]
    fn kernel_text_round_trip() {
        let k = ImpulseKernel::from_taps(vec![0.25, 1.0, 0.25], 0.8, true).unwrap();
        let back = parse_kernel(&kernel_to_text(&k)).unwrap();
        assert_eq!(back, k);
        assert!(parse_kernel("0.1\n").is_err());
    }

    #[test]
    fn csv_rows_are_channels() {
        let w = Waterfall::from_values(2, 2, vec![0.5, 1.0, 0.0, 0.25], 0.8, 11.0).unwrap();
        assert_eq!(waterfall_to_csv(&w), "0.5,1\n0,0.25\n");
    }
}
