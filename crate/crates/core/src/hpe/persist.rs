//! Ensemble file: `"PULT"`, u32 version, u64 g, u64 subsample_size,
//! u32 max_depth, u64 seed, u64 feature dimension, then each tree in
//! preorder. Every node is written as a tag byte (0 leaf, 1 split), u32 depth,
//! u32 feature, f32 split value and u64 sample count. Leaves write zero for
//! feature and split value. All integers and floats are little-endian.
//!
//! Split values are narrowed to f32, so a reloaded ensemble may route samples
//! lying within f32 rounding of a split differently from the original.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{HpeEnsemble, NodeKind, SeparationNode, SeparationTree};
use crate::data::FORMAT_VERSION;
use crate::error::{Error, Result};

pub const ENSEMBLE_MAGIC: &[u8; 4] = b"PULT";

const TAG_LEAF: u8 = 0;
const TAG_SPLIT: u8 = 1;

pub fn save_ensemble(ensemble: &HpeEnsemble, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(ENSEMBLE_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ensemble.trees.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(ensemble.subsample_size as u64).to_le_bytes());
    buf.extend_from_slice(&(ensemble.max_depth as u32).to_le_bytes());
    buf.extend_from_slice(&ensemble.seed.to_le_bytes());
    buf.extend_from_slice(&(ensemble.dim as u64).to_le_bytes());
    for tree in &ensemble.trees {
        write_node(tree, 0, &mut buf);
    }
    let mut w = BufWriter::new(file);
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_node(tree: &SeparationTree, id: usize, buf: &mut Vec<u8>) {
    let node = &tree.nodes[id];
    let (tag, feature, value) = match node.kind {
        NodeKind::Leaf => (TAG_LEAF, 0u32, 0f32),
        NodeKind::Split { feature, value, .. } => (TAG_SPLIT, feature as u32, value as f32),
    };
    buf.push(tag);
    buf.extend_from_slice(&(node.depth as u32).to_le_bytes());
    buf.extend_from_slice(&feature.to_le_bytes());
    buf.extend_from_slice(&value.to_le_bytes());
    buf.extend_from_slice(&(node.leaf_size as u64).to_le_bytes());
    if let NodeKind::Split { left, right, .. } = node.kind {
        write_node(tree, left, buf);
        write_node(tree, right, buf);
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(Error::MalformedHeader {
                path: self.path.to_path_buf(),
                reason: format!("truncated at byte {}", self.pos),
            });
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::MalformedHeader {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

pub fn load_ensemble(path: &Path) -> Result<HpeEnsemble> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut c = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if &c.take::<4>()? != ENSEMBLE_MAGIC {
        return Err(c.bad("bad magic"));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(c.bad(format!("unsupported version {version}")));
    }
    let g = c.u64()? as usize;
    let subsample_size = c.u64()? as usize;
    let max_depth = c.u32()? as usize;
    let seed = c.u64()?;
    let dim = c.u64()? as usize;
    let mut trees = Vec::with_capacity(g.min(1 << 16));
    for _ in 0..g {
        let mut nodes = Vec::new();
        read_node(&mut c, &mut nodes, dim, max_depth)?;
        trees.push(SeparationTree { nodes });
    }
    if c.pos != bytes.len() {
        return Err(c.bad("trailing bytes after last tree"));
    }
    Ok(HpeEnsemble {
        trees,
        subsample_size,
        max_depth,
        seed,
        dim,
    })
}

fn read_node(
    c: &mut Cursor<'_>,
    nodes: &mut Vec<SeparationNode>,
    dim: usize,
    max_depth: usize,
) -> Result<usize> {
    let tag = c.u8()?;
    let depth = c.u32()? as usize;
    let feature = c.u32()? as usize;
    let value = c.f32()? as f64;
    let leaf_size = c.u64()? as usize;
    if depth > max_depth {
        return Err(c.bad(format!("node depth {depth} exceeds max_depth {max_depth}")));
    }
    let id = nodes.len();
    nodes.push(SeparationNode {
        depth,
        leaf_size,
        kind: NodeKind::Leaf,
    });
    match tag {
        TAG_LEAF => {}
        TAG_SPLIT => {
            if feature >= dim {
                return Err(c.bad(format!("split feature {feature} out of range")));
            }
            let left = read_node(c, nodes, dim, max_depth)?;
            let right = read_node(c, nodes, dim, max_depth)?;
            nodes[id].kind = NodeKind::Split {
                feature,
                value,
                left,
                right,
            };
        }
        other => return Err(c.bad(format!("unknown node tag {other}"))),
    }
    Ok(id)
}
