//! Model checkpoint: `"PULM"`, u32 version, u32 layer count, then per layer
//! u32 rows, u32 cols, `rows * cols` f32 weights (row-major, `out x in`) and
//! `rows` f32 biases; finally u32 d_in, u32 embedding dim, u32 classes and a
//! u8 activation tag. Little-endian throughout. Parameters are narrowed to
//! f32 on save.

use std::io::Write;
use std::path::Path;

use super::{Activation, Dense, NetModel};
use crate::data::{Matrix, FORMAT_VERSION};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PULM";

pub fn save_checkpoint(model: &NetModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        buf.extend_from_slice(&(l.outputs() as u32).to_le_bytes());
        buf.extend_from_slice(&(l.inputs() as u32).to_le_bytes());
        for &w in l.weights.as_slice() {
            buf.extend_from_slice(&(w as f32).to_le_bytes());
        }
        for &b in &l.bias {
            buf.extend_from_slice(&(b as f32).to_le_bytes());
        }
    }
    buf.extend_from_slice(&(model.d_in() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.embed_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.num_classes() as u32).to_le_bytes());
    buf.push(model.activation.tag());
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NetModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(bad(format!("truncated at byte {pos}")));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    fn u32_at(s: &[u8]) -> u32 {
        u32::from_le_bytes([s[0], s[1], s[2], s[3]])
    }
    fn f32s(s: &[u8]) -> Vec<f64> {
        s.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect()
    }

    if take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32_at(take(4)?);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = u32_at(take(4)?) as usize;
    if !(3..=16).contains(&count) {
        return Err(bad(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = u32_at(take(4)?) as usize;
        let cols = u32_at(take(4)?) as usize;
        let w = f32s(take(rows * cols * 4)?);
        let b = f32s(take(rows * 4)?);
        layers.push(Dense {
            weights: Matrix::from_vec(rows, cols, w),
            bias: b,
        });
    }
    let d_in = u32_at(take(4)?) as usize;
    let embed = u32_at(take(4)?) as usize;
    let classes = u32_at(take(4)?) as usize;
    let tag = take(1)?[0];
    if pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    let activation = Activation::from_tag(tag).ok_or_else(|| bad(format!("unknown activation tag {tag}")))?;
    let model = NetModel::from_layers(layers, activation)?;
    if model.d_in() != d_in || model.embed_dim() != embed || model.num_classes() != classes {
        return Err(bad("trailer dimensions disagree with layer shapes".into()));
    }
    if !model.is_finite() {
        return Err(Error::Divergence("checkpoint holds non-finite parameters".into()));
    }
    Ok(model)
}
