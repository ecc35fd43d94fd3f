//! Checkpoint serialization.
//!
//! Sectioned binary layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "DDNCKPT1"
//! version  u32
//! config   u64 length + canonical UTF-8 config text
//! step     u64 training step counter
//! params   u64 count, then per parameter:
//!            u32 name length + name bytes
//!            u8 rank + rank*u64 extents
//!            u8 precision bits (32|64)
//!            raw little-endian scalars
//! moments  u8 flag; when 1, per parameter (same order): first and second
//!          Adam moment blobs, same extent/precision as the parameter
//! crc      u64 CRC-64/XZ of everything above
//! ```
//!
//! Loading validates the checksum before parsing anything, reconstructs the
//! model from the embedded config, and then requires an exact name/shape
//! match for every stored parameter.

use std::path::Path;

use super::config::{parse_config_text, ModelConfig};
use super::model::DedustNet;
use crate::error::{DustError, Result};
use crate::real::Real;

pub const MAGIC: &[u8; 8] = b"DDNCKPT1";
pub const VERSION: u32 = 1;

// CRC-64/XZ (reflected ECMA-182).
const CRC64_POLY: u64 = 0xC96C_5795_D787_0F42;

fn crc64_table() -> [u64; 256] {
    let mut table = [0u64; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u64;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ CRC64_POLY } else { crc >> 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

pub fn crc64(data: &[u8]) -> u64 {
    let table = crc64_table();
    let mut crc = !0u64;
    for &b in data {
        crc = table[((crc ^ b as u64) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

/// Adam moment blobs aligned with the model's parameter order.
#[derive(Clone, Debug, Default)]
pub struct OptimSnapshot<P: Real> {
    pub step: u64,
    pub first: Vec<Vec<P>>,
    pub second: Vec<Vec<P>>,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    fn scalars<P: Real>(&mut self, data: &[P]) {
        self.buf.reserve(data.len() * P::byte_width());
        for &v in data {
            v.write_le(&mut self.buf);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(DustError::Checkpoint { detail: "unexpected end of file".into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn scalars<P: Real>(&mut self, n: usize) -> Result<Vec<P>> {
        let w = P::byte_width();
        let raw = self.take(n * w)?;
        Ok(raw.chunks_exact(w).map(P::read_le).collect())
    }
}

/// Serialize model (and optionally optimizer moments) to bytes.
pub fn encode<P: Real>(model: &DedustNet<P>, optim: Option<&OptimSnapshot<P>>) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let cfg_text = model.cfg.to_canonical_text();
    w.u64(cfg_text.len() as u64);
    w.bytes(cfg_text.as_bytes());
    w.u64(optim.map(|o| o.step).unwrap_or(0));
    w.u64(model.params().len() as u64);
    for p in model.params().iter() {
        let name = p.name();
        w.u32(name.len() as u32);
        w.bytes(name.as_bytes());
        let shape = p.shape();
        w.u8(shape.len() as u8);
        for &d in &shape {
            w.u64(d as u64);
        }
        w.u8(P::BITS);
        w.scalars(p.tensor().data());
    }
    match optim {
        Some(o) => {
            w.u8(1);
            for (m, v) in o.first.iter().zip(&o.second) {
                w.scalars(m);
                w.scalars(v);
            }
        }
        None => w.u8(0),
    }
    let crc = crc64(&w.buf);
    w.u64(crc);
    w.buf
}

pub fn save<P: Real>(model: &DedustNet<P>, optim: Option<&OptimSnapshot<P>>, path: &Path) -> Result<()> {
    let bytes = encode(model, optim);
    std::fs::write(path, bytes).map_err(|e| DustError::io(path.display().to_string(), e.to_string()))
}

/// Read just the embedded config (for precision dispatch).
pub fn peek_config(path: &Path) -> Result<ModelConfig> {
    let bytes = std::fs::read(path).map_err(|e| DustError::io(path.display().to_string(), e.to_string()))?;
    let mut r = validated_reader(&bytes)?;
    read_header(&mut r)
}

fn validated_reader(bytes: &[u8]) -> Result<Reader<'_>> {
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(DustError::Checkpoint { detail: "file too short".into() });
    }
    let body = &bytes[..bytes.len() - 8];
    let mut trailer = [0u8; 8];
    trailer.copy_from_slice(&bytes[bytes.len() - 8..]);
    let stored = u64::from_le_bytes(trailer);
    let computed = crc64(body);
    if stored != computed {
        return Err(DustError::Checkpoint {
            detail: format!("checksum mismatch (stored {stored:#018x}, computed {computed:#018x})"),
        });
    }
    Ok(Reader { buf: body, pos: 0 })
}

fn read_header(r: &mut Reader<'_>) -> Result<ModelConfig> {
    let magic = r.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(DustError::Checkpoint { detail: "bad magic".into() });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DustError::Checkpoint { detail: format!("unsupported version {version}") });
    }
    let cfg_len = r.u64()? as usize;
    let cfg_bytes = r.take(cfg_len)?;
    let cfg_text = std::str::from_utf8(cfg_bytes)
        .map_err(|_| DustError::Checkpoint { detail: "config is not UTF-8".into() })?;
    Ok(parse_config_text(cfg_text)
        .map_err(|e| DustError::Checkpoint { detail: format!("embedded config invalid: {e}") })?
        .model)
}

pub struct Loaded<P: Real> {
    pub model: DedustNet<P>,
    pub optim: Option<OptimSnapshot<P>>,
    pub step: u64,
}

pub fn load<P: Real>(path: &Path) -> Result<Loaded<P>> {
    let bytes = std::fs::read(path).map_err(|e| DustError::io(path.display().to_string(), e.to_string()))?;
    decode(&bytes)
}

pub fn decode<P: Real>(bytes: &[u8]) -> Result<Loaded<P>> {
    let mut r = validated_reader(bytes)?;
    let cfg = read_header(&mut r)?;
    if cfg.precision != P::BITS {
        return Err(DustError::Checkpoint {
            detail: format!("checkpoint precision {} loaded at {}", cfg.precision, P::BITS),
        });
    }
    let step = r.u64()?;
    let model = DedustNet::<P>::new(cfg)?;
    let n_params = r.u64()? as usize;
    if n_params != model.params().len() {
        return Err(DustError::Checkpoint {
            detail: format!("parameter count {} vs model {}", n_params, model.params().len()),
        });
    }
    let mut numels = Vec::with_capacity(n_params);
    for expected in model.params().iter() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| DustError::Checkpoint { detail: "parameter name is not UTF-8".into() })?
            .to_string();
        if name != expected.name() {
            return Err(DustError::Checkpoint {
                detail: format!("unknown or out-of-order parameter '{name}' (expected '{}')", expected.name()),
            });
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        if shape != expected.shape() {
            return Err(DustError::Checkpoint {
                detail: format!("parameter '{name}': stored shape {:?} vs model {:?}", shape, expected.shape()),
            });
        }
        let bits = r.u8()?;
        if bits != P::BITS {
            return Err(DustError::Checkpoint {
                detail: format!("parameter '{name}': stored precision {bits} vs run {}", P::BITS),
            });
        }
        let numel: usize = shape.iter().product();
        let data = r.scalars::<P>(numel)?;
        expected.set_data(data)?;
        numels.push(numel);
    }
    let optim = if r.u8()? == 1 {
        let mut first = Vec::with_capacity(n_params);
        let mut second = Vec::with_capacity(n_params);
        for &n in &numels {
            first.push(r.scalars::<P>(n)?);
            second.push(r.scalars::<P>(n)?);
        }
        Some(OptimSnapshot { step, first, second })
    } else {
        None
    };
    Ok(Loaded { model, optim, step })
}
