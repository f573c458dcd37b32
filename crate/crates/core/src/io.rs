//! Field files.
//!
//! Binary layout, little-endian throughout:
//! `"GFLD"`, version `u32`, `N u32`, `n u32` per axis, `L f64` per axis, then `n^N` `f64`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub const MAGIC: &[u8; 4] = b"GFLD";
pub const VERSION: u32 = 1;

pub fn encode_field(field: &Field) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(12 + 12 * g.dim() + 8 * g.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(g.dim() as u32).to_le_bytes());
    for _ in 0..g.dim() {
        out.extend_from_slice(&(g.n() as u32).to_le_bytes());
    }
    for _ in 0..g.dim() {
        out.extend_from_slice(&g.half_width().to_le_bytes());
    }
    for v in &field.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn fail<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::FieldFormat {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        })
    }

    fn take<const K: usize>(&mut self, what: &str) -> Result<[u8; K]> {
        if self.pos + K > self.bytes.len() {
            return self.fail(self.pos, format!("truncated while reading {what}"));
        }
        let mut b = [0u8; K];
        b.copy_from_slice(&self.bytes[self.pos..self.pos + K]);
        self.pos += K;
        Ok(b)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take::<4>(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take::<8>(what)?))
    }
}

/// Parses a field from bytes; `path` only labels errors.
pub fn decode_field(bytes: &[u8], path: &Path) -> Result<Field> {
    let mut c = Cursor { bytes, pos: 0, path };
    let magic = c.take::<4>("magic")?;
    if &magic != MAGIC {
        return c.fail(0, "bad magic");
    }
    let at = c.pos;
    let version = c.u32("version")?;
    if version != VERSION {
        return c.fail(at, format!("unsupported version {version}"));
    }
    let at = c.pos;
    let dim = c.u32("dimension")? as usize;
    if !(1..=8).contains(&dim) {
        return c.fail(at, format!("dimension {dim} out of range"));
    }
    let mut ns = Vec::with_capacity(dim);
    for a in 0..dim {
        ns.push((c.pos, c.u32(&format!("n[{a}]"))? as usize));
    }
    let mut ls = Vec::with_capacity(dim);
    for a in 0..dim {
        ls.push((c.pos, c.f64(&format!("L[{a}]"))?));
    }
    let (n_at, n) = ns[0];
    if let Some(&(at, other)) = ns.iter().find(|(_, m)| *m != n) {
        return c.fail(at, format!("axis sizes differ ({n} vs {other})"));
    }
    let (l_at, l) = ls[0];
    if let Some(&(at, other)) = ls.iter().find(|(_, m)| *m != l) {
        return c.fail(at, format!("axis half-widths differ ({l} vs {other})"));
    }
    let grid = match Grid::new(dim, n, l) {
        Ok(g) => g,
        Err(e) => return c.fail(if n < 9 || n % 2 == 0 { n_at } else { l_at }, e.to_string()),
    };
    let body = c.pos;
    let need = grid.len() * 8;
    if bytes.len() - body != need {
        let off = body + (bytes.len() - body).min(need);
        return c.fail(off, format!("expected {need} payload bytes, found {}", bytes.len() - body));
    }
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        let at = c.pos;
        let v = c.f64("value")?;
        if !v.is_finite() {
            return c.fail(at, "non-finite value");
        }
        values.push(v);
    }
    Field::from_values(&grid, values)
}

pub fn write_field(path: &Path, field: &Field) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&encode_field(field))?;
    f.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<Field> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_field(&bytes, path)
}

/// One row per node: integer indices, coordinates, value.
pub fn write_field_csv(path: &Path, field: &Field) -> Result<()> {
    let g = field.grid();
    let mut f = BufWriter::new(File::create(path)?);
    let idx: Vec<String> = (0..g.dim()).map(|a| format!("i{a}")).collect();
    let crd: Vec<String> = (0..g.dim()).map(|a| format!("x{a}")).collect();
    writeln!(f, "{},{},value", idx.join(","), crd.join(","))?;
    let mut p = vec![0.0; g.dim()];
    for (flat, v) in field.values.iter().enumerate() {
        g.point_into(flat, &mut p);
        for a in 0..g.dim() {
            write!(f, "{},", g.axis_index(flat, a))?;
        }
        for x in &p {
            write!(f, "{x:.17e},")?;
        }
        writeln!(f, "{v:.17e}")?;
    }
    f.flush()?;
    Ok(())
}
