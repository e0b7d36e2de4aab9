//! Field serialization: a 32-byte little-endian header `(n: u64, N: u64,
//! L: f64, s: f64)` followed by `N^n` little-endian `f64` samples in
//! row-major order. A JSON sidecar carries human-readable metadata.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Field, Grid};
use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub name: String,
    pub dim: usize,
    pub size: usize,
    pub half_width: f64,
    pub s: f64,
    pub byte_order: String,
    pub layout: String,
}

impl FieldMeta {
    pub fn for_field(name: &str, field: &Field, s: f64) -> Self {
        let g = field.grid();
        FieldMeta {
            name: name.to_string(),
            dim: g.dim(),
            size: g.size(),
            half_width: g.half_width(),
            s,
            byte_order: "little-endian".into(),
            layout: "row-major f64 after 32-byte header (n u64, N u64, L f64, s f64)".into(),
        }
    }
}

pub fn encode(field: &Field, s: f64) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * g.len());
    out.extend_from_slice(&(g.dim() as u64).to_le_bytes());
    out.extend_from_slice(&(g.size() as u64).to_le_bytes());
    out.extend_from_slice(&g.half_width().to_le_bytes());
    out.extend_from_slice(&s.to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Field, f64)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::InputDomain("field binary shorter than header".into()));
    }
    let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().unwrap() };
    let dim = u64::from_le_bytes(word(0)) as usize;
    let size = u64::from_le_bytes(word(1)) as usize;
    let half_width = f64::from_le_bytes(word(2));
    let s = f64::from_le_bytes(word(3));
    let grid = Grid::new(dim, size, half_width)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * grid.len() {
        return Err(Error::InputDomain(format!(
            "field body has {} bytes, expected {}",
            body.len(),
            8 * grid.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Field::new(&grid, values)?, s))
}

pub fn write_to(mut w: impl Write, field: &Field, s: f64) -> Result<()> {
    w.write_all(&encode(field, s))?;
    Ok(())
}

pub fn read_from(mut r: impl Read) -> Result<(Field, f64)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}
