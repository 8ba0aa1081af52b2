//! HDLNet checkpoint file.
//!
//! All numbers are little endian.
//!
//! ```text
//! magic            4 bytes  "HDLN"
//! version          u16      1
//! input_channels   u32
//! input_time       u32
//! base_channels    u32
//! depth            u32
//! conv_kernel      u32 u32  (channel, time)
//! pool_kernel      u32 u32  (channel, time)
//! lstm_units       u32
//! dense_width      u32
//! recurrence       u8       0 = channel, 1 = time
//! tensor count     u32
//! per tensor:
//!   name length    u16, then the UTF-8 name
//!   rank           u8, then one u32 per dimension
//!   values         f32 per element, row major
//! ```
//!
//! The model tensors come first, in the network's parameter order, followed
//! by `kernel.taps`, the fixed impulse response the model was trained with.

use std::path::Path;

use das_core::hdlnet::{param_specs, ModelParams, NetConfig, RecurrenceAxis, Tensor};
use das_core::ImpulseKernel;

use crate::error::{Result, ToolkitError};
use crate::io::{read_bytes, write_atomic};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HDLN";
pub const CHECKPOINT_VERSION: u16 = 1;
const KERNEL_TENSOR: &str = "kernel.taps";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    /// Kernel taps at 32-bit precision.
    pub kernel_taps: Vec<f32>,
}

impl Checkpoint {
    pub fn new(params: ModelParams<f32>, kernel: &ImpulseKernel) -> Self {
        Checkpoint {
            params,
            kernel_taps: kernel.taps().iter().map(|&t| t as f32).collect(),
        }
    }

    /// The stored kernel on a grid of the given spacing.
    pub fn kernel(&self, channel_spacing: f64) -> das_core::Result<ImpulseKernel> {
        ImpulseKernel::from_taps(
            self.kernel_taps.iter().map(|&t| f64::from(t)).collect(),
            channel_spacing,
            true,
        )
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        put_u32(out, d);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let cfg = c.params.config();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        cfg.input_channels,
        cfg.input_time,
        cfg.base_channels,
        cfg.depth,
        cfg.conv_kernel.0,
        cfg.conv_kernel.1,
        cfg.pool_kernel.0,
        cfg.pool_kernel.1,
        cfg.lstm_units,
        cfg.dense_width,
    ] {
        put_u32(&mut out, v);
    }
    out.push(match cfg.recurrence {
        RecurrenceAxis::Channel => 0,
        RecurrenceAxis::Time => 1,
    });
    put_u32(&mut out, c.params.entries().len() + 1);
    for (name, t) in c.params.entries() {
        put_tensor(&mut out, name, t.shape(), t.data());
    }
    put_tensor(&mut out, KERNEL_TENSOR, &[c.kernel_taps.len()], &c.kernel_taps);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.at,
                    self.bytes.len()
                )
            })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f32>), String> {
        let len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let rank = self.u8()? as usize;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(4).ok_or("tensor too large")?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, shape, data))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, String> {
    let mut r = Reader { bytes, at: 0 };
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(format!("bad magic {magic:?}"));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        ));
    }
    let mut v = [0usize; 10];
    for slot in &mut v {
        *slot = r.u32()?;
    }
    let recurrence = match r.u8()? {
        0 => RecurrenceAxis::Channel,
        1 => RecurrenceAxis::Time,
        b => return Err(format!("unknown recurrence axis {b}")),
    };
    let cfg = NetConfig {
        input_channels: v[0],
        input_time: v[1],
        base_channels: v[2],
        depth: v[3],
        conv_kernel: (v[4], v[5]),
        pool_kernel: (v[6], v[7]),
        lstm_units: v[8],
        dense_width: v[9],
        recurrence,
    };
    cfg.validate().map_err(|e| format!("stored network config: {e}"))?;
    let specs = param_specs(&cfg);
    let count = r.u32()?;
    if count != specs.len() + 1 {
        return Err(format!("expected {} tensors, found {count}", specs.len() + 1));
    }
    let mut entries = Vec::with_capacity(specs.len());
    for spec in &specs {
        let (name, shape, data) = r.tensor()?;
        if name != spec.name || shape != spec.shape {
            return Err(format!(
                "expected tensor {} {:?}, found {name} {shape:?}",
                spec.name, spec.shape
            ));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(format!("tensor {name}: non-finite value at {i}"));
        }
        entries.push((name, Tensor::from_vec(&shape, data).map_err(|e| e.to_string())?));
    }
    let (name, shape, kernel_taps) = r.tensor()?;
    if name != KERNEL_TENSOR || shape.len() != 1 || kernel_taps.len() % 2 == 0 {
        return Err(format!(
            "expected {KERNEL_TENSOR} with an odd tap count, found {name} {shape:?}"
        ));
    }
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    let params = ModelParams::from_entries(&cfg, entries).map_err(|e| e.to_string())?;
    Ok(Checkpoint { params, kernel_taps })
}

pub fn write_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(c))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_bytes(path)?).map_err(|e| ToolkitError::input(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let p = ModelParams::<f64>::init(&NetConfig::toy(), 4).unwrap().cast();
        Checkpoint::new(p, &ImpulseKernel::from_taps(vec![0.2, 1.0, 0.2], 0.8, true).unwrap())
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let b = encode_checkpoint(&c);
        assert_eq!(&b[..4], b"HDLN");
        let back = decode_checkpoint(&b).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode_checkpoint(&back), b);
    }

    #[test]
    fn corruption_is_rejected() {
        let b = encode_checkpoint(&sample());
        assert!(decode_checkpoint(&b[..b.len() - 1]).unwrap_err().contains("truncated"));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).unwrap_err().contains("magic"));
        let mut bad = b.clone();
        bad.push(0);
        assert!(decode_checkpoint(&bad).unwrap_err().contains("trailing"));
    }
}
