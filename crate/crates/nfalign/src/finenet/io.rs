//! Binary weight files.
//!
//! Layout (all integers little-endian):
//! magic `NFA1`, `u32` tensor count, then per tensor a `u16` name length,
//! the UTF-8 name, a `u8` rank, `rank` x `u32` dimensions, and the row-major
//! `f64` payload; a trailing `u64` CRC-64/ECMA-182 of all preceding bytes.

use std::collections::HashSet;
use std::path::Path;

use super::net::{Architecture, NetworkParams};
use super::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"NFA1";
const CRC64_POLY: u64 = 0x42F0_E1EB_A9EA_3693;

/// Bitwise CRC-64/ECMA-182 (MSB first, zero init, no final xor).
pub fn crc64(data: &[u8]) -> u64 {
    let mut crc = 0u64;
    for &byte in data {
        crc ^= (byte as u64) << 56;
        for _ in 0..8 {
            crc = if crc & (1 << 63) != 0 { (crc << 1) ^ CRC64_POLY } else { crc << 1 };
        }
    }
    crc
}

fn encode(params: &NetworkParams) -> Vec<u8> {
    let tensors = params.all_tensors();
    let mut buf = Vec::with_capacity(64 + 8 * params.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in &tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(tensor.shape.len() as u8);
        for &d in &tensor.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &tensor.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc64(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Serialize all tensors (trainable and buffers) to `path`.
pub fn save_weights(params: &NetworkParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params))
        .map_err(|e| Error::Io(format!("writing {}: {e}", path.display())))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Io("weight file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Load a weight file, verifying the checksum and every tensor shape. The
/// architecture is recovered from the stored shapes.
pub fn load_weights(path: &Path) -> Result<NetworkParams> {
    let buf =
        std::fs::read(path).map_err(|e| Error::Io(format!("reading {}: {e}", path.display())))?;
    if buf.len() < MAGIC.len() + 4 + 8 {
        return Err(Error::Io("weight file too short".into()));
    }
    let (body, crc_bytes) = buf.split_at(buf.len() - 8);
    let stored = u64::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc64(body);
    if stored != computed {
        return Err(Error::Io(format!(
            "weight file checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"
        )));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Io("bad magic; not a weight file".into()));
    }
    let count = r.u32()? as usize;
    let mut tensors: Vec<(String, Tensor)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Io("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        tensors.push((name, Tensor::from_vec(&shape, data)));
    }
    if r.pos != body.len() {
        return Err(Error::Io("trailing bytes after the last tensor".into()));
    }

    // Recover the architecture: output bias length is the input length, the
    // first conv kernel's output channels set the channel scale.
    let find = |n: &str| tensors.iter().find(|(name, _)| name == n).map(|(_, t)| t);
    let out_bias = find("out.bias").ok_or_else(|| Error::Io("missing out.bias".into()))?;
    let k3 = find("conv1.k3").ok_or_else(|| Error::Io("missing conv1.k3".into()))?;
    if k3.shape.len() != 3 || k3.shape[1] != 1 {
        return Err(Error::Io(format!("conv1.k3 has unexpected shape {:?}", k3.shape)));
    }
    let arch = Architecture {
        input_len: out_bias.len(),
        base_channels: k3.shape[0],
    };
    let mut params = NetworkParams::init(arch, 0);
    let expected: HashSet<String> =
        params.all_tensors().into_iter().map(|(n, _)| n).collect();
    let mut seen = HashSet::new();
    for (name, tensor) in tensors {
        params.set_tensor(&name, tensor)?;
        seen.insert(name);
    }
    if seen != expected {
        let missing: Vec<&String> = expected.difference(&seen).collect();
        return Err(Error::Io(format!("weight file is missing tensors: {missing:?}")));
    }
    Ok(params)
}
