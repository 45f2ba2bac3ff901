//! Binary field cache.
//!
//! Layout (little endian): magic `MTF1`, `u16` version, `u16` n, per axis
//! `(f64 min, f64 max, u32 cells)`, then `T`, winner times, winner charts
//! and winner covectors as `f64` in row-major node order, coverage as
//! `u32`, then the two-arrival, gradient-jump, cut and mask bitsets.

use std::io::{Read, Write};
use std::path::Path;

use super::field::{GridSpec, MinimalTimeField};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"MTF1";
pub const CACHE_VERSION: u16 = 1;

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_bits(out: &mut Vec<u8>, v: &[bool]) {
    for chunk in v.chunks(8) {
        let mut b = 0u8;
        for (k, f) in chunk.iter().enumerate() {
            if *f {
                b |= 1 << k;
            }
        }
        out.push(b);
    }
}

pub fn encode_field(f: &MinimalTimeField) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(f.n() as u16).to_le_bytes());
    for k in 0..f.n() {
        out.extend_from_slice(&f.grid.min[k].to_le_bytes());
        out.extend_from_slice(&f.grid.max[k].to_le_bytes());
        out.extend_from_slice(&(f.dims[k] as u32).to_le_bytes());
    }
    put_f64s(&mut out, &f.t);
    put_f64s(&mut out, &f.winner_t);
    put_f64s(&mut out, &f.winner_chart);
    put_f64s(&mut out, &f.winner_p);
    for c in &f.coverage {
        out.extend_from_slice(&c.to_le_bytes());
    }
    put_bits(&mut out, &f.two_arrival_flag);
    put_bits(&mut out, &f.grad_jump_flag);
    put_bits(&mut out, &f.cut_flag);
    put_bits(&mut out, &f.singular_mask);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("truncated field cache".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, k: usize) -> Result<Vec<f64>> {
        (0..k).map(|_| self.f64()).collect()
    }

    fn bits(&mut self, k: usize) -> Result<Vec<bool>> {
        let bytes = self.take(k.div_ceil(8))?;
        Ok((0..k).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
    }
}

pub fn decode_field(buf: &[u8]) -> Result<MinimalTimeField> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != CACHE_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = c.u16()?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let n = c.u16()? as usize;
    let (mut min, mut max, mut dims) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        min.push(c.f64()?);
        max.push(c.f64()?);
        dims.push(c.u32()? as usize);
    }
    if n == 0 || dims.iter().any(|&d| d < 2) {
        return Err(Error::Format("degenerate grid header".into()));
    }
    let h = (max[0] - min[0]) / (dims[0] - 1) as f64;
    let total: usize = dims.iter().product();
    let f = MinimalTimeField {
        grid: GridSpec { min, max, h },
        t: c.f64s(total)?,
        winner_t: c.f64s(total)?,
        winner_chart: c.f64s(total * (n - 1))?,
        winner_p: c.f64s(total * n)?,
        coverage: (0..total).map(|_| c.u32()).collect::<Result<_>>()?,
        two_arrival_flag: c.bits(total)?,
        grad_jump_flag: c.bits(total)?,
        cut_flag: c.bits(total)?,
        singular_mask: c.bits(total)?,
        dims,
        failed_arcs: 0,
        arrivals: None,
    };
    if c.pos != buf.len() {
        return Err(Error::Format("trailing bytes in field cache".into()));
    }
    Ok(f)
}

pub fn write_field(path: &Path, f: &MinimalTimeField) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&encode_field(f))?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<MinimalTimeField> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_field(&buf)
}

/// Sidecar `key = value` metadata, one entry per line in the given order.
pub fn write_metadata(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut s = String::new();
    for (k, v) in entries {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}
