//! Binary path container shared by ensembles, lifts and solutions.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     4 bytes   b"RHPC"
//! version   u32       1
//! hdr_len   u64       byte length of the JSON header
//! header    hdr_len   UTF-8 JSON object, always carrying a "blocks" array
//! data      ...       the blocks' f64 values, little-endian, row-major,
//!                     concatenated in header order
//! ```
//!
//! Each entry of `"blocks"` is `{"name": str, "shape": [usize, ...]}`; the
//! remaining header keys are free-form metadata (grid, kind, h, seed, ...).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"RHPC";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("not a path container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("block `{name}` declares {expected} values but {actual} were supplied")]
    ShapeMismatch { name: String, expected: usize, actual: usize },
    #[error("missing block `{0}`")]
    MissingBlock(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl BlockSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub spec: BlockSpec,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    /// Metadata keys other than `blocks`.
    pub meta: Map<String, Value>,
    pub blocks: Vec<Block>,
}

impl Container {
    pub fn new(meta: Map<String, Value>) -> Self {
        Self { meta, blocks: Vec::new() }
    }

    pub fn push_block(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<(), ContainerError> {
        let spec = BlockSpec { name: name.to_string(), shape };
        if spec.len() != data.len() {
            return Err(ContainerError::ShapeMismatch { expected: spec.len(), name: spec.name, actual: data.len() });
        }
        self.blocks.push(Block { spec, data });
        Ok(())
    }

    pub fn block(&self, name: &str) -> Result<&Block, ContainerError> {
        self.blocks
            .iter()
            .find(|b| b.spec.name == name)
            .ok_or_else(|| ContainerError::MissingBlock(name.to_string()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ContainerError> {
        let mut header = self.meta.clone();
        let specs: Vec<&BlockSpec> = self.blocks.iter().map(|b| &b.spec).collect();
        header.insert("blocks".into(), serde_json::to_value(specs)?);
        let bytes = serde_json::to_vec(&Value::Object(header))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(&bytes)?;
        for block in &self.blocks {
            for v in &block.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ContainerError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != VERSION {
            return Err(ContainerError::Version(version));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let mut header = vec![0u8; u64::from_le_bytes(u64buf) as usize];
        r.read_exact(&mut header)?;
        let mut meta: Map<String, Value> = serde_json::from_slice(&header)?;
        let specs: Vec<BlockSpec> = match meta.remove("blocks") {
            Some(v) => serde_json::from_value(v)?,
            None => Vec::new(),
        };
        let mut blocks = Vec::with_capacity(specs.len());
        let mut buf = [0u8; 8];
        for spec in specs {
            let mut data = Vec::with_capacity(spec.len());
            for _ in 0..spec.len() {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            blocks.push(Block { spec, data });
        }
        Ok(Self { meta, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Writes rows as CSV with a header line. Values use Rust's shortest
/// round-trip formatting.
pub fn write_csv<W: Write>(mut w: W, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> std::io::Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_preserves_bits(data in prop::collection::vec(any::<f64>(), 0..40), rows in 1usize..5) {
            let n = data.len() / rows * rows;
            let mut meta = Map::new();
            meta.insert("kind".into(), Value::from("fou"));
            let mut c = Container::new(meta);
            c.push_block("values", vec![rows, n / rows], data[..n].to_vec()).unwrap();
            let mut bytes = Vec::new();
            c.write_to(&mut bytes).unwrap();
            let back = Container::read_from(&bytes[..]).unwrap();
            let got = &back.block("values").unwrap().data;
            prop_assert_eq!(got.len(), n);
            for (a, b) in got.iter().zip(&data[..n]) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back.meta.get("kind"), Some(&Value::from("fou")));
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let bytes = b"NOPE\x01\x00\x00\x00".to_vec();
        assert!(matches!(Container::read_from(&bytes[..]), Err(ContainerError::BadMagic)));
    }

    #[test]
    fn shape_is_checked() {
        let mut c = Container::new(Map::new());
        assert!(c.push_block("x", vec![2, 3], vec![0.0; 5]).is_err());
    }
}
