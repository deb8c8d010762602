use std::path::Path;

use clap::{ArgAction, Args};
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::models::{ModelKind, ModelSpec};
use crate::trainer::TrainConfig;

/// Hyperparameters settable from the command line or a TOML file. Every
/// field is optional so that layers can be stacked: a flag wins over the
/// file, the file wins over the built-in default.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    /// Model kind: lr, tab, ft, saint or perceiver
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    /// Seed for initialization, shuffling, dropout and batch composition
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Weight of the parity penalty (0 disables it)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Feed the sensitive attribute to the model
    #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub include_sensitive: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// Epochs without improvement before early stopping
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    /// Decision threshold; a score equal to it predicts 1
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mlp_hidden: Option<usize>,
    /// Latent array length (Perceiver only)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latents: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

macro_rules! layer {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        Hyper { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Hyper {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))
    }

    /// `self` with every unset field taken from `lower`.
    pub fn over(self, lower: Hyper) -> Hyper {
        layer!(
            self,
            lower,
            model,
            seed,
            lambda,
            include_sensitive,
            epochs,
            batch_size,
            learning_rate,
            patience,
            threshold,
            embed_dim,
            layers,
            heads,
            mlp_hidden,
            latents,
            dropout
        )
    }

    /// Flags layered over the optional config file.
    pub fn with_config(self, config: Option<&Path>) -> Result<Hyper, CliError> {
        Ok(match config {
            Some(p) => self.over(Hyper::from_file(p)?),
            None => self,
        })
    }

    pub fn train_config(&self, defaults: TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(defaults.epochs),
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
            lambda: self.lambda.unwrap_or(defaults.lambda),
            seed: self.seed.unwrap_or(defaults.seed),
            patience: self.patience.unwrap_or(defaults.patience),
            include_sensitive: self.include_sensitive.unwrap_or(defaults.include_sensitive),
            threshold: self.threshold.unwrap_or(defaults.threshold),
            track_penalty: defaults.track_penalty,
        }
    }

    pub fn model_spec(&self, kind: ModelKind, seed: u64) -> ModelSpec {
        let d = ModelSpec::new(kind, seed);
        ModelSpec {
            kind,
            embed_dim: self.embed_dim.unwrap_or(d.embed_dim),
            n_layers: self.layers.unwrap_or(d.n_layers),
            n_heads: self.heads.unwrap_or(d.n_heads),
            mlp_hidden: self.mlp_hidden.unwrap_or(d.mlp_hidden),
            n_latents: self.latents.unwrap_or(d.n_latents),
            dropout: self.dropout.unwrap_or(d.dropout),
            seed,
        }
    }

    /// The fully resolved settings of a run, in config-file form.
    pub fn resolved(spec: &ModelSpec, cfg: &TrainConfig) -> Hyper {
        Hyper {
            model: Some(spec.kind),
            seed: Some(cfg.seed),
            lambda: Some(cfg.lambda),
            include_sensitive: Some(cfg.include_sensitive),
            epochs: Some(cfg.epochs),
            batch_size: Some(cfg.batch_size),
            learning_rate: Some(cfg.learning_rate),
            patience: Some(cfg.patience),
            threshold: Some(cfg.threshold),
            embed_dim: Some(spec.embed_dim),
            layers: Some(spec.n_layers),
            heads: Some(spec.n_heads),
            mlp_hidden: Some(spec.mlp_hidden),
            latents: Some(spec.n_latents),
            dropout: Some(spec.dropout),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat table of scalars")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let flags = Hyper { epochs: Some(7), ..Hyper::default() };
        let file: Hyper = toml::from_str("epochs = 3\nlearning_rate = 0.01\nmodel = \"ft\"").unwrap();
        let h = flags.over(file);
        let cfg = h.train_config(TrainConfig::default());
        assert_eq!((cfg.epochs, cfg.learning_rate, cfg.patience), (7, 0.01, TrainConfig::default().patience));
        assert_eq!(h.model, Some(ModelKind::Ft));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Hyper>("epoch = 3").is_err());
    }

    #[test]
    fn resolved_round_trips_through_toml() {
        let spec = ModelSpec::new(ModelKind::Perceiver, 4);
        let cfg = TrainConfig { lambda: 2.5, seed: 4, ..TrainConfig::default() };
        let h: Hyper = toml::from_str(&Hyper::resolved(&spec, &cfg).to_toml()).unwrap();
        assert_eq!(h.model_spec(ModelKind::Perceiver, 4), spec);
        assert_eq!(h.train_config(TrainConfig::default()), cfg);
    }
}
