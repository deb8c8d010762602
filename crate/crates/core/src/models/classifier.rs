use super::layers::{EncoderBlock, ForwardCtx, IntersampleBlock, LayerNorm, Linear, Tokenizer};
use super::params::ParamStore;
use super::{Batch, FeatureLayout, ModelError, ModelKind, ModelSpec};
use crate::engine::{init, Graph, Tensor, Var, PROB_CLAMP};
use crate::seed::{self, Stream};

#[derive(Debug, Clone)]
enum Arch {
    Lr { w: usize, b: usize, width: usize },
    Tab { tok: Tokenizer, blocks: Vec<EncoderBlock>, num_ln: Option<LayerNorm>, hidden: Linear, out: Linear },
    Ft { tok: Tokenizer, blocks: Vec<EncoderBlock>, head_ln: LayerNorm, out: Linear },
    Saint { tok: Tokenizer, blocks: Vec<(EncoderBlock, IntersampleBlock)>, hidden: Linear, out: Linear },
    Perceiver { tok: Tokenizer, latents: usize, cross: EncoderBlock, blocks: Vec<EncoderBlock>, out: Linear },
}

/// A classifier of any of the five kinds, with its parameters.
#[derive(Debug, Clone)]
pub struct Classifier {
    spec: ModelSpec,
    layout: FeatureLayout,
    params: ParamStore,
    arch: Arch,
}

impl Classifier {
    /// Builds and initializes a classifier. Parameter shapes depend only on
    /// `spec` and `layout`; values depend on `spec.seed`.
    pub fn new(spec: ModelSpec, layout: FeatureLayout) -> Result<Self, ModelError> {
        spec.validate()?;
        if layout.n_cat() + layout.n_num() == 0 {
            return Err(ModelError::Config("the feature layout has no columns".into()));
        }
        let mut rng = seed::rng(spec.seed, Stream::Init);
        let mut store = ParamStore::new();
        let (d, h, hid) = (spec.embed_dim, spec.n_heads, spec.mlp_hidden);
        let cards = &layout.cat_cardinalities;
        let n_num = layout.n_num();
        let stack = |store: &mut ParamStore, rng: &mut _, prefix: &str| -> Vec<EncoderBlock> {
            (0..spec.n_layers).map(|i| EncoderBlock::new(store, rng, &format!("{prefix}{i}"), d, h, hid)).collect()
        };

        let arch = match spec.kind {
            ModelKind::Lr => {
                let width = cards.iter().sum::<usize>() + n_num;
                let w = store.add("linear.w", init::uniform_fan_in(&mut rng, &[width, 1], width));
                let b = store.add("linear.b", Tensor::zeros(&[1]));
                Arch::Lr { w, b, width }
            }
            ModelKind::Tab => {
                if layout.n_cat() == 0 {
                    return Err(ModelError::Config(
                        "TabTransformer embeds categorical columns and needs at least one".into(),
                    ));
                }
                let tok = Tokenizer::new(&mut store, &mut rng, "embed", &layout, d, false, false);
                let blocks = stack(&mut store, &mut rng, "block");
                let num_ln = (n_num > 0).then(|| LayerNorm::new(&mut store, "num_ln", n_num));
                let hidden = Linear::new(&mut store, &mut rng, "mlp.hidden", layout.n_cat() * d + n_num, hid);
                let out = Linear::new(&mut store, &mut rng, "mlp.out", hid, 1);
                Arch::Tab { tok, blocks, num_ln, hidden, out }
            }
            ModelKind::Ft => {
                let tok = Tokenizer::new(&mut store, &mut rng, "embed", &layout, d, true, true);
                let blocks = stack(&mut store, &mut rng, "block");
                let head_ln = LayerNorm::new(&mut store, "head.ln", d);
                let out = Linear::new(&mut store, &mut rng, "head.out", d, 1);
                Arch::Ft { tok, blocks, head_ln, out }
            }
            ModelKind::Saint => {
                let tok = Tokenizer::new(&mut store, &mut rng, "embed", &layout, d, true, true);
                let t = tok.token_count();
                let blocks = (0..spec.n_layers)
                    .map(|i| {
                        let own = EncoderBlock::new(&mut store, &mut rng, &format!("block{i}.self"), d, h, hid);
                        let rows = IntersampleBlock::new(&mut store, &mut rng, &format!("block{i}.rows"), t, d, h, hid);
                        (own, rows)
                    })
                    .collect();
                let hidden = Linear::new(&mut store, &mut rng, "head.hidden", d, hid);
                let out = Linear::new(&mut store, &mut rng, "head.out", hid, 1);
                Arch::Saint { tok, blocks, hidden, out }
            }
            ModelKind::Perceiver => {
                let tok = Tokenizer::new(&mut store, &mut rng, "embed", &layout, d, false, true);
                let latents = store.add("latents", init::normal(&mut rng, &[spec.n_latents, d], init::EMBEDDING_STD));
                let cross = EncoderBlock::new(&mut store, &mut rng, "cross", d, h, hid);
                let blocks = stack(&mut store, &mut rng, "latent");
                let out = Linear::new(&mut store, &mut rng, "head.out", d, 1);
                Arch::Perceiver { tok, latents, cross, blocks, out }
            }
        };
        Ok(Classifier { spec, layout, params: store, arch })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Tokens per row for the tokenizing models.
    pub fn token_count(&self) -> Option<usize> {
        match &self.arch {
            Arch::Lr { .. } => None,
            Arch::Tab { tok, .. } | Arch::Ft { tok, .. } | Arch::Saint { tok, .. } | Arch::Perceiver { tok, .. } => {
                Some(tok.token_count())
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn arch_tokenizer(&self) -> Option<&Tokenizer> {
        match &self.arch {
            Arch::Lr { .. } => None,
            Arch::Tab { tok, .. } | Arch::Ft { tok, .. } | Arch::Saint { tok, .. } | Arch::Perceiver { tok, .. } => {
                Some(tok)
            }
        }
    }

    pub fn check_batch(&self, batch: &Batch) -> Result<(), ModelError> {
        let (nc, nn) = (self.layout.n_cat(), self.layout.n_num());
        if batch.rows == 0 {
            return Err(ModelError::SchemaMismatch("empty batch".into()));
        }
        if batch.cat.len() != batch.rows * nc || batch.num.len() != batch.rows * nn {
            return Err(ModelError::SchemaMismatch(format!(
                "expected {nc} categorical and {nn} numerical values per row, got {} and {} over {} rows",
                batch.cat.len(),
                batch.num.len(),
                batch.rows
            )));
        }
        if nc > 0 {
            for row in batch.cat.chunks(nc) {
                for ((&c, &card), name) in row.iter().zip(&self.layout.cat_cardinalities).zip(&self.layout.cat_names) {
                    if c > card {
                        return Err(ModelError::SchemaMismatch(format!(
                            "code {c} out of range for `{name}` (cardinality {card})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Builds the forward pass on `g` with parameters `p` (as returned by
    /// [`ParamStore::bind`]). Returns probabilities of shape `[rows, 1]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &[Var],
        batch: &Batch,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var, ModelError> {
        self.check_batch(batch)?;
        let b = batch.rows;
        let logits = match &self.arch {
            Arch::Lr { w, b: bias, width } => {
                let x = g.constant(Tensor::new(vec![b, *width], self.one_hot(batch))?);
                let z = g.matmul(x, p[*w])?;
                g.add(z, p[*bias])?
            }
            Arch::Tab { tok, blocks, num_ln, hidden, out } => {
                let mut x = tok.forward(g, p, batch)?;
                for block in blocks {
                    x = block.forward(g, p, x, ctx)?;
                }
                let flat_width = self.layout.n_cat() * self.spec.embed_dim;
                let mut feats = g.reshape(x, &[b, flat_width])?;
                if let Some(ln) = num_ln {
                    let num = g.constant(Tensor::new(vec![b, self.layout.n_num()], batch.num.clone())?);
                    let num = ln.forward(g, p, num)?;
                    feats = g.concat(&[feats, num], 1)?;
                }
                let hdn = hidden.forward(g, p, feats)?;
                let hdn = g.relu(hdn)?;
                let hdn = ctx.dropout(g, hdn)?;
                out.forward(g, p, hdn)?
            }
            Arch::Ft { tok, blocks, head_ln, out } => {
                let mut x = tok.forward(g, p, batch)?;
                for block in blocks {
                    x = block.forward(g, p, x, ctx)?;
                }
                let cls = self.cls_token(g, x)?;
                let cls = head_ln.forward(g, p, cls)?;
                let cls = g.relu(cls)?;
                out.forward(g, p, cls)?
            }
            Arch::Saint { tok, blocks, hidden, out } => {
                let mut x = tok.forward(g, p, batch)?;
                for (own, rows) in blocks {
                    x = own.forward(g, p, x, ctx)?;
                    x = rows.forward(g, p, x, ctx)?;
                }
                let cls = self.cls_token(g, x)?;
                let hdn = hidden.forward(g, p, cls)?;
                let hdn = g.relu(hdn)?;
                out.forward(g, p, hdn)?
            }
            Arch::Perceiver { tok, latents, cross, blocks, out } => {
                let tokens = tok.forward(g, p, batch)?;
                let l = self.spec.n_latents;
                let idx: Vec<usize> = (0..b).flat_map(|_| 0..l).collect();
                let lat = g.gather(p[*latents], &idx)?;
                let lat = g.reshape(lat, &[b, l, self.spec.embed_dim])?;
                let mut x = cross.forward_with_context(g, p, lat, tokens, ctx)?;
                for block in blocks {
                    x = block.forward(g, p, x, ctx)?;
                }
                let pooled = g.mean(x, 1)?;
                out.forward(g, p, pooled)?
            }
        };
        Ok(g.sigmoid(logits)?)
    }

    fn cls_token(&self, g: &mut Graph, x: Var) -> Result<Var, ModelError> {
        let b = g.shape(x)[0];
        let c = g.slice(x, 1, 0, 1)?;
        Ok(g.reshape(c, &[b, self.spec.embed_dim])?)
    }

    /// LR design matrix: one-hot categoricals (the unseen code maps to the
    /// all-zero vector) followed by the numerical values.
    fn one_hot(&self, batch: &Batch) -> Vec<f64> {
        let cards = &self.layout.cat_cardinalities;
        let (nc, nn) = (self.layout.n_cat(), self.layout.n_num());
        let width = cards.iter().sum::<usize>() + nn;
        let mut x = vec![0.0; batch.rows * width];
        for r in 0..batch.rows {
            let row = &mut x[r * width..(r + 1) * width];
            let mut off = 0;
            for (j, &card) in cards.iter().enumerate() {
                let c = batch.cat[r * nc + j];
                if c < card {
                    row[off + c] = 1.0;
                }
                off += card;
            }
            row[off..].copy_from_slice(&batch.num[r * nn..(r + 1) * nn]);
        }
        x
    }

    /// Evaluation-mode probabilities for every row of `batch`, clamped to
    /// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn predict_proba(&self, batch: &Batch) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let p: Vec<Var> = self.params.tensors().iter().map(|t| g.constant(t.clone())).collect();
        let out = self.forward(&mut g, &p, batch, &mut ForwardCtx::eval())?;
        Ok(g.value(out).data().iter().map(|v| v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)).collect())
    }
}
