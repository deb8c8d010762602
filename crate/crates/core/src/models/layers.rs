//! Building blocks shared by the transformer classifiers. Each layer holds
//! indices into a [`ParamStore`]; forwards receive the bound variables.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::{Batch, FeatureLayout, ModelError};
use crate::engine::{init, Graph, Tensor, Var};

/// Epsilon inside every model layer norm.
pub const LN_EPS: f64 = 1e-5;

/// Per-forward state: the dropout source, or `None` for evaluation.
pub struct ForwardCtx<'a> {
    pub dropout: Option<(f64, &'a mut ChaCha8Rng)>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval() -> Self {
        ForwardCtx { dropout: None }
    }

    pub fn train(rate: f64, rng: &'a mut ChaCha8Rng) -> Self {
        ForwardCtx { dropout: Some((rate, rng)) }
    }

    pub(crate) fn dropout(&mut self, g: &mut Graph, x: Var) -> Result<Var, ModelError> {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        if *rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - *rate;
        let shape = g.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 }).collect();
        let mask = g.constant(Tensor::new(shape, mask)?);
        Ok(g.mul(x, mask)?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: usize,
    b: usize,
    out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, inp: usize, out: usize) -> Self {
        let w = store.add(format!("{name}.w"), init::uniform_fan_in(rng, &[inp, out], inp));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out]));
        Linear { w, b, out }
    }

    /// Applies the map to the last axis of `x`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var, ModelError> {
        let shape = g.shape(x).to_vec();
        let inp = *shape.last().expect("rank >= 1");
        let rows = shape.iter().product::<usize>() / inp;
        let flat = g.reshape(x, &[rows, inp])?;
        let y = g.matmul(flat, p[self.w])?;
        let y = g.add(y, p[self.b])?;
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = self.out;
        Ok(g.reshape(y, &out_shape)?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    gamma: usize,
    beta: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        LayerNorm { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var, ModelError> {
        let n = g.layer_norm(x, LN_EPS)?;
        let n = g.mul(n, p[self.gamma])?;
        Ok(g.add(n, p[self.beta])?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    dim: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dim: usize, heads: usize) -> Self {
        Attention {
            q: Linear::new(store, rng, &format!("{name}.q"), dim, dim),
            k: Linear::new(store, rng, &format!("{name}.k"), dim, dim),
            v: Linear::new(store, rng, &format!("{name}.v"), dim, dim),
            o: Linear::new(store, rng, &format!("{name}.o"), dim, dim),
            heads,
            dim,
        }
    }

    fn split_heads(&self, g: &mut Graph, x: Var) -> Result<Var, ModelError> {
        let s = g.shape(x).to_vec();
        let (b, t) = (s[0], s[1]);
        let dh = self.dim / self.heads;
        let x = g.reshape(x, &[b, t, self.heads, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        Ok(g.reshape(x, &[b * self.heads, t, dh])?)
    }

    /// Scaled dot-product attention of `query` `[B, Tq, D]` over `context`
    /// `[B, Tk, D]`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], query: Var, context: Var) -> Result<Var, ModelError> {
        let (b, tq) = (g.shape(query)[0], g.shape(query)[1]);
        let dh = self.dim / self.heads;
        let q = self.q.forward(g, p, query)?;
        let k = self.k.forward(g, p, context)?;
        let v = self.v.forward(g, p, context)?;
        let q = self.split_heads(g, q)?;
        let k = self.split_heads(g, k)?;
        let v = self.split_heads(g, v)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let weights = g.softmax(scores)?;
        let mixed = g.matmul(weights, v)?;
        let mixed = g.reshape(mixed, &[b, self.heads, tq, dh])?;
        let mixed = g.permute(mixed, &[0, 2, 1, 3])?;
        let mixed = g.reshape(mixed, &[b, tq, self.dim])?;
        self.o.forward(g, p, mixed)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dim: usize, hidden: usize) -> Self {
        FeedForward {
            up: Linear::new(store, rng, &format!("{name}.up"), dim, hidden),
            down: Linear::new(store, rng, &format!("{name}.down"), hidden, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var, ModelError> {
        let h = self.up.forward(g, p, x)?;
        let h = g.gelu(h)?;
        self.down.forward(g, p, h)
    }
}

/// Post-norm encoder block: `h = LN(x + MHA(x))`, `out = LN(h + FFN(h))`.
#[derive(Debug, Clone)]
pub(crate) struct EncoderBlock {
    attn: Attention,
    ln1: LayerNorm,
    ff: FeedForward,
    ln2: LayerNorm,
}

impl EncoderBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
    ) -> Self {
        EncoderBlock {
            attn: Attention::new(store, rng, &format!("{name}.attn"), dim, heads),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            ff: FeedForward::new(store, rng, &format!("{name}.ff"), dim, hidden),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var, ctx: &mut ForwardCtx<'_>) -> Result<Var, ModelError> {
        self.forward_with_context(g, p, x, x, ctx)
    }

    /// Like `forward`, but attention keys and values come from `context`.
    pub fn forward_with_context(
        &self,
        g: &mut Graph,
        p: &[Var],
        x: Var,
        context: Var,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var, ModelError> {
        let a = self.attn.forward(g, p, x, context)?;
        let a = ctx.dropout(g, a)?;
        let h = g.add(x, a)?;
        let h = self.ln1.forward(g, p, h)?;
        let f = self.ff.forward(g, p, h)?;
        let f = ctx.dropout(g, f)?;
        let out = g.add(h, f)?;
        self.ln2.forward(g, p, out)
    }
}

/// Turns a batch into `[B, T, d]` tokens: an optional leading
/// classification token, one token per categorical column (lookup in a
/// shared table with per-column offsets) and one per numerical column
/// (`x * w_j + b_j`).
#[derive(Debug, Clone)]
pub(crate) struct Tokenizer {
    table: Option<usize>,
    offsets: Vec<usize>,
    num_w: Option<usize>,
    num_b: Option<usize>,
    cls: Option<usize>,
    dim: usize,
    n_num: usize,
}

impl Tokenizer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        layout: &FeatureLayout,
        dim: usize,
        with_cls: bool,
        with_numerical: bool,
    ) -> Self {
        let cards = &layout.cat_cardinalities;
        let (table, offsets) = if cards.is_empty() {
            (None, Vec::new())
        } else {
            let (t, offs) = categorical_table(rng, cards, dim);
            (Some(store.add(format!("{name}.cat"), t)), offs)
        };
        let n_num = if with_numerical { layout.n_num() } else { 0 };
        let (num_w, num_b) = if n_num == 0 {
            (None, None)
        } else {
            (
                Some(store.add(format!("{name}.num_w"), init::normal(rng, &[n_num, dim], init::EMBEDDING_STD))),
                Some(store.add(format!("{name}.num_b"), init::normal(rng, &[n_num, dim], init::EMBEDDING_STD))),
            )
        };
        let cls = with_cls.then(|| store.add(format!("{name}.cls"), init::normal(rng, &[1, dim], init::EMBEDDING_STD)));
        Tokenizer { table, offsets, num_w, num_b, cls, dim, n_num }
    }

    pub fn token_count(&self) -> usize {
        usize::from(self.cls.is_some()) + self.offsets.len() + self.n_num
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], batch: &Batch) -> Result<Var, ModelError> {
        let b = batch.rows;
        let d = self.dim;
        let mut parts = Vec::with_capacity(3);
        if let Some(cls) = self.cls {
            let t = g.gather(p[cls], &vec![0; b])?;
            parts.push(g.reshape(t, &[b, 1, d])?);
        }
        if let Some(table) = self.table {
            let n_cat = self.offsets.len();
            let idx: Vec<usize> =
                batch.cat.chunks(n_cat).flat_map(|row| row.iter().zip(&self.offsets).map(|(c, o)| c + o)).collect();
            let t = g.gather(p[table], &idx)?;
            parts.push(g.reshape(t, &[b, n_cat, d])?);
        }
        if let (Some(w), Some(bias)) = (self.num_w, self.num_b) {
            let x = g.constant(Tensor::new(vec![b, self.n_num, 1], batch.num.clone())?);
            let t = g.mul(x, p[w])?;
            parts.push(g.add(t, p[bias])?);
        }
        Ok(if parts.len() == 1 { parts[0] } else { g.concat(&parts, 1)? })
    }
}

/// One embedding table for all categorical columns. Column `j` owns rows
/// `offsets[j] ..= offsets[j] + cards[j]`; the last of those is the unseen
/// slot and starts at zero.
pub(crate) fn categorical_table(rng: &mut impl Rng, cards: &[usize], dim: usize) -> (Tensor, Vec<usize>) {
    let mut offsets = Vec::with_capacity(cards.len());
    let mut total = 0;
    for &c in cards {
        offsets.push(total);
        total += c + 1;
    }
    let mut t = init::normal(rng, &[total, dim], init::EMBEDDING_STD);
    for (&o, &c) in offsets.iter().zip(cards) {
        t.data_mut()[(o + c) * dim..(o + c + 1) * dim].fill(0.0);
    }
    (t, offsets)
}

/// Attention across the rows of a batch. Each row's `[T, d]` tokens are
/// flattened to one `T*d` vector, rows attend to each other, and the
/// result is reshaped back before the residual, norm and feed-forward.
#[derive(Debug, Clone)]
pub(crate) struct IntersampleBlock {
    attn: Attention,
    ln1: LayerNorm,
    ff: FeedForward,
    ln2: LayerNorm,
}

impl IntersampleBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        tokens: usize,
        dim: usize,
        heads: usize,
        hidden: usize,
    ) -> Self {
        IntersampleBlock {
            attn: Attention::new(store, rng, &format!("{name}.attn"), tokens * dim, heads),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            ff: FeedForward::new(store, rng, &format!("{name}.ff"), dim, hidden),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var, ctx: &mut ForwardCtx<'_>) -> Result<Var, ModelError> {
        let shape = g.shape(x).to_vec();
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let flat = g.reshape(x, &[b, t * d])?;
        // Keys and values go in a canonical row order, so every reduction
        // over the batch sums in the same order however the rows arrive.
        let order = canonical_row_order(g.value(flat).data(), t * d);
        let keys = g.gather(flat, &order)?;
        let keys = g.reshape(keys, &[1, b, t * d])?;
        let rows = g.reshape(flat, &[1, b, t * d])?;
        let a = self.attn.forward(g, p, rows, keys)?;
        let a = g.reshape(a, &[b, t, d])?;
        let a = ctx.dropout(g, a)?;
        let h = g.add(x, a)?;
        let h = self.ln1.forward(g, p, h)?;
        let f = self.ff.forward(g, p, h)?;
        let f = ctx.dropout(g, f)?;
        let out = g.add(h, f)?;
        self.ln2.forward(g, p, out)
    }
}

/// Row indices sorted by the rows' contents.
fn canonical_row_order(data: &[f64], width: usize) -> Vec<usize> {
    let row = |i: usize| &data[i * width..(i + 1) * width];
    let mut order: Vec<usize> = (0..data.len() / width).collect();
    order.sort_by(|&a, &b| {
        row(a).iter().zip(row(b)).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}
