use std::io::{Read, Write};
use std::ops::Range;

use crate::rng::{fnv1a, FNV_OFFSET};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MDRL";
const FORMAT_VERSION: u32 = 1;

/// A named, contiguous block inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat vector of all trainable parameters of a network, with named
/// sub-ranges per layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayoutEntry>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates that `layout` tiles `values` contiguously from offset 0.
    pub fn from_parts(values: Vec<f64>, layout: Vec<LayoutEntry>) -> Result<Self> {
        let mut expected = 0;
        for entry in &layout {
            if entry.offset != expected {
                return Err(Error::Checkpoint(format!(
                    "layout entry `{}` starts at {} but previous block ends at {}",
                    entry.name, entry.offset, expected
                )));
            }
            expected += entry.len();
        }
        if expected != values.len() {
            return Err(Error::dim("parameter layout", expected, values.len()));
        }
        let mut names: Vec<&str> = layout.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Checkpoint("duplicate layout name".into()));
        }
        Ok(Self { values, layout })
    }

    /// Appends a zero-filled block and returns its range.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> Range<usize> {
        let name = name.into();
        assert!(self.entry(&name).is_none(), "duplicate layout name {name}");
        let entry = LayoutEntry {
            name,
            offset: self.values.len(),
            shape: shape.to_vec(),
        };
        let range = entry.range();
        self.values.resize(range.end, 0.0);
        self.layout.push(entry);
        range
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::dim("parameter vector", self.values.len(), values.len()));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    pub fn entry(&self, name: &str) -> Option<&LayoutEntry> {
        self.layout.iter().find(|e| e.name == name)
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.entry(name).map(LayoutEntry::range)
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.range(name).map(|r| &self.values[r])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.range(name)?;
        Some(&mut self.values[r])
    }

    /// FNV-1a checksum over the bit patterns of every block whose name
    /// starts with `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h = FNV_OFFSET;
        for entry in self.layout.iter().filter(|e| e.name.starts_with(prefix)) {
            h = fnv1a(entry.name.as_bytes(), h);
            for v in &self.values[entry.range()] {
                h = fnv1a(&v.to_bits().to_le_bytes(), h);
            }
        }
        h
    }

    /// Concatenates several vectors into one; names must stay unique.
    pub fn concat(parts: &[&ParamVector]) -> Result<Self> {
        let mut out = ParamVector::new();
        for part in parts {
            for entry in &part.layout {
                if out.entry(&entry.name).is_some() {
                    return Err(Error::Checkpoint(format!("duplicate layout name `{}`", entry.name)));
                }
                let r = out.push(entry.name.clone(), &entry.shape);
                out.values[r].copy_from_slice(&part.values[entry.range()]);
            }
        }
        Ok(out)
    }

    /// Extracts the blocks whose names start with `prefix`, re-based at 0.
    pub fn extract(&self, prefix: &str) -> ParamVector {
        let mut out = ParamVector::new();
        for entry in self.layout.iter().filter(|e| e.name.starts_with(prefix)) {
            let r = out.push(entry.name.clone(), &entry.shape);
            out.values[r].copy_from_slice(&self.values[entry.range()]);
        }
        out
    }
}

/// Writes `params` in the binary checkpoint format: magic `MDRL`, a `u32`
/// version, the layout, then raw little-endian `f64` values.
pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamVector) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(params.layout.len() as u32).to_le_bytes())?;
    for entry in &params.layout {
        w.write_all(&(entry.name.len() as u32).to_le_bytes())?;
        w.write_all(entry.name.as_bytes())?;
        w.write_all(&(entry.offset as u64).to_le_bytes())?;
        w.write_all(&(entry.shape.len() as u32).to_le_bytes())?;
        for &d in &entry.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for v in &params.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamVector> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut layout = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let offset = read_u64(&mut r)? as usize;
        let ndims = read_u32(&mut r)? as usize;
        let shape = (0..ndims)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        layout.push(LayoutEntry { name, offset, shape });
    }
    let total: usize = layout.iter().map(LayoutEntry::len).sum();
    let mut values = Vec::with_capacity(total);
    for _ in 0..total {
        values.push(f64::from_bits(read_u64(&mut r)?));
    }
    ParamVector::from_parts(values, layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn push_keeps_layout_contiguous() {
        let mut p = ParamVector::new();
        let a = p.push("a", &[2, 3]);
        let b = p.push("b", &[4]);
        assert_eq!(a, 0..6);
        assert_eq!(b, 6..10);
        assert_eq!(p.len(), 10);
        assert!(ParamVector::from_parts(p.values().to_vec(), p.layout().to_vec()).is_ok());
    }

    #[test]
    fn from_parts_rejects_gaps() {
        let layout = vec![
            LayoutEntry { name: "a".into(), offset: 0, shape: vec![2] },
            LayoutEntry { name: "b".into(), offset: 3, shape: vec![2] },
        ];
        assert!(ParamVector::from_parts(vec![0.0; 5], layout).is_err());
    }

    #[test]
    fn checksum_sees_bit_changes_only_in_prefix() {
        let mut p = ParamVector::new();
        p.push("shared.embed", &[2]);
        p.push("head.bus", &[2]);
        let before = p.checksum("shared.");
        p.slice_mut("head.bus").unwrap()[0] = 1.0;
        assert_eq!(before, p.checksum("shared."));
        p.slice_mut("shared.embed").unwrap()[1] = -0.0;
        assert_ne!(before, p.checksum("shared."));
    }

    #[test]
    fn rejects_bad_magic() {
        let bytes = b"XXXX\x01\x00\x00\x00\x00\x00\x00\x00".to_vec();
        assert!(matches!(read_checkpoint(&bytes[..]), Err(Error::Checkpoint(_))));
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(
            shapes in prop::collection::vec(prop::collection::vec(1usize..4, 1..3), 1..4),
            seed in any::<u64>(),
        ) {
            let mut p = ParamVector::new();
            for (i, s) in shapes.iter().enumerate() {
                p.push(format!("layer.{i}"), s);
            }
            let mut x = seed;
            for v in p.values_mut() {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = f64::from_bits(x >> 2);
            }
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &p).unwrap();
            let q = read_checkpoint(&buf[..]).unwrap();
            prop_assert_eq!(p.layout(), q.layout());
            let pb: Vec<u64> = p.values().iter().map(|v| v.to_bits()).collect();
            let qb: Vec<u64> = q.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(pb, qb);
        }
    }
}
