//! The five classifiers. All of them map an encoded [`Batch`] to one
//! favorable-class probability per row.

mod classifier;
mod io;
pub(crate) mod layers;
mod params;

pub use classifier::Classifier;
pub use layers::{ForwardCtx, LN_EPS};
pub use params::ParamStore;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::data::{Dataset, DatasetMeta};
use crate::engine::EngineError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("batch does not match the model's features: {0}")]
    SchemaMismatch(String),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Tab,
    Ft,
    Saint,
    Perceiver,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::Lr, ModelKind::Tab, ModelKind::Ft, ModelKind::Saint, ModelKind::Perceiver];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Tab => "tab",
            ModelKind::Ft => "ft",
            ModelKind::Saint => "saint",
            ModelKind::Perceiver => "perceiver",
        }
    }

    /// Display name used in tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Lr => "LR",
            ModelKind::Tab => "TabTransformer",
            ModelKind::Ft => "FT-Transformer",
            ModelKind::Saint => "SAINT",
            ModelKind::Perceiver => "Perceiver",
        }
    }

    /// Whether a row's prediction can depend on other rows of its batch.
    pub fn couples_rows(self) -> bool {
        self == ModelKind::Saint
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lr" | "logistic" => Ok(ModelKind::Lr),
            "tab" | "tabtransformer" => Ok(ModelKind::Tab),
            "ft" | "ft-transformer" | "fttransformer" => Ok(ModelKind::Ft),
            "saint" => Ok(ModelKind::Saint),
            "perceiver" => Ok(ModelKind::Perceiver),
            other => {
                Err(ModelError::Config(format!("unknown model `{other}` (expected lr, tab, ft, saint or perceiver)")))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_hidden: usize,
    /// Used by the Perceiver only.
    pub n_latents: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        ModelSpec { kind, embed_dim: 32, n_layers: 3, n_heads: 4, mlp_hidden: 64, n_latents: 8, dropout: 0.1, seed }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let extents = [
            ("embed_dim", self.embed_dim),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("mlp_hidden", self.mlp_hidden),
            ("n_latents", self.n_latents),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "n_heads ({}) must divide embed_dim ({})",
                self.n_heads, self.embed_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// The input features a classifier was built for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub cat_names: Vec<String>,
    pub cat_cardinalities: Vec<usize>,
    pub num_names: Vec<String>,
}

impl FeatureLayout {
    pub fn from_meta(meta: &DatasetMeta) -> Self {
        FeatureLayout {
            cat_names: meta.cat_columns.iter().map(|&i| meta.schema[i].name.clone()).collect(),
            cat_cardinalities: meta.cat_cardinalities(),
            num_names: meta.num_columns.iter().map(|&i| meta.schema[i].name.clone()).collect(),
        }
    }

    pub fn n_cat(&self) -> usize {
        self.cat_cardinalities.len()
    }

    pub fn n_num(&self) -> usize {
        self.num_names.len()
    }

    /// Stable digest of names, kinds and cardinalities.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for (name, card) in self.cat_names.iter().zip(&self.cat_cardinalities) {
            h.update(format!("cat:{name}:{card};"));
        }
        for name in &self.num_names {
            h.update(format!("num:{name};"));
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// A block of encoded rows, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rows: usize,
    pub cat: Vec<usize>,
    pub num: Vec<f64>,
}

impl Batch {
    pub fn from_dataset(ds: &Dataset, rows: &[usize]) -> Self {
        let mut cat = Vec::with_capacity(rows.len() * ds.n_cat());
        let mut num = Vec::with_capacity(rows.len() * ds.n_num());
        for &r in rows {
            cat.extend_from_slice(ds.cat_row(r));
            num.extend_from_slice(ds.num_row(r));
        }
        Batch { rows: rows.len(), cat, num }
    }

    pub fn all(ds: &Dataset) -> Self {
        Batch { rows: ds.row_count, cat: ds.categorical_codes.clone(), num: ds.numerical_values.clone() }
    }

    pub fn select(&self, rows: &[usize], n_cat: usize, n_num: usize) -> Batch {
        let mut out = Batch { rows: rows.len(), cat: Vec::new(), num: Vec::new() };
        for &r in rows {
            out.cat.extend_from_slice(&self.cat[r * n_cat..(r + 1) * n_cat]);
            out.num.extend_from_slice(&self.num[r * n_num..(r + 1) * n_num]);
        }
        out
    }
}

/// `1` where `p >= threshold`.
pub fn predict_labels(probabilities: &[f64], threshold: f64) -> Vec<u8> {
    probabilities.iter().map(|&p| u8::from(p >= threshold)).collect()
}
