//! Flat little-endian model files.
//!
//! Layout: magic, kind, spec fields, feature-layout hash, the feature
//! layout itself (so the architecture can be rebuilt), then one block per
//! parameter: name length, name, rank, extents, raw `f64` values.

use std::path::Path;

use super::{Classifier, FeatureLayout, ModelError, ModelKind, ModelSpec};
use crate::engine::Tensor;

const MAGIC: &[u8; 8] = b"FAIRTAB1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize, ModelError> {
        usize::try_from(self.u64()?).map_err(|_| ModelError::Format("length overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ModelError::Format("name is not utf-8".into()))
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

impl Classifier {
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.spec();
        let layout = self.layout();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_str(&mut out, spec.kind.as_str());
        for v in [spec.embed_dim, spec.n_layers, spec.n_heads, spec.mlp_hidden, spec.n_latents] {
            put_u64(&mut out, v as u64);
        }
        out.extend_from_slice(&spec.dropout.to_le_bytes());
        put_u64(&mut out, spec.seed);
        put_u64(&mut out, layout.hash());
        put_u64(&mut out, layout.n_cat() as u64);
        for (name, card) in layout.cat_names.iter().zip(&layout.cat_cardinalities) {
            put_str(&mut out, name);
            put_u64(&mut out, *card as u64);
        }
        put_u64(&mut out, layout.n_num() as u64);
        for name in &layout.num_names {
            put_str(&mut out, name);
        }
        let params = self.params();
        put_u64(&mut out, params.len() as u64);
        for (name, t) in params.names().iter().zip(params.tensors()) {
            put_str(&mut out, name);
            put_u64(&mut out, t.rank() as u64);
            for &e in t.shape() {
                put_u64(&mut out, e as u64);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(ModelError::Format("not a model file (bad magic)".into()));
        }
        let kind: ModelKind = r.string()?.parse()?;
        let spec = ModelSpec {
            kind,
            embed_dim: r.usize()?,
            n_layers: r.usize()?,
            n_heads: r.usize()?,
            mlp_hidden: r.usize()?,
            n_latents: r.usize()?,
            dropout: r.f64()?,
            seed: r.u64()?,
        };
        let hash = r.u64()?;
        let n_cat = r.usize()?;
        let mut layout = FeatureLayout { cat_names: Vec::new(), cat_cardinalities: Vec::new(), num_names: Vec::new() };
        for _ in 0..n_cat {
            layout.cat_names.push(r.string()?);
            layout.cat_cardinalities.push(r.usize()?);
        }
        for _ in 0..r.usize()? {
            layout.num_names.push(r.string()?);
        }
        if layout.hash() != hash {
            return Err(ModelError::Format("feature layout does not match its recorded hash".into()));
        }
        let mut model = Classifier::new(spec, layout)?;
        let count = r.usize()?;
        if count != model.params().len() {
            return Err(ModelError::Format(format!(
                "expected {} parameter blocks, found {count}",
                model.params().len()
            )));
        }
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.usize()?;
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
            let target = model
                .params_mut()
                .get_mut(&name)
                .ok_or_else(|| ModelError::Format(format!("unknown parameter `{name}`")))?;
            if target.shape() != shape.as_slice() {
                return Err(ModelError::Format(format!(
                    "parameter `{name}` has shape {shape:?}, expected {:?}",
                    target.shape()
                )));
            }
            let data = (0..target.numel()).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            *target = Tensor::new(shape, data).map_err(|e| ModelError::Format(format!("parameter `{name}`: {e}")))?;
        }
        if r.pos != buf.len() {
            return Err(ModelError::Format("trailing bytes after the last parameter".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Fails unless `layout` is the one this model was built for.
    pub fn check_layout(&self, layout: &FeatureLayout) -> Result<(), ModelError> {
        if self.layout().hash() == layout.hash() {
            Ok(())
        } else {
            Err(ModelError::SchemaMismatch(format!(
                "model expects features {:?} + {:?}, data has {:?} + {:?}",
                self.layout().cat_names,
                self.layout().num_names,
                layout.cat_names,
                layout.num_names
            )))
        }
    }
}
