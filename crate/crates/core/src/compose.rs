//! The composition function: a small position-free transformer over four
//! slots that fuses two child representations into a parent vector and a
//! single-step composition probability. The same stack, fed a `[MASK]`
//! slot instead of `[SUM]`, serves as the cloze prediction head.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ad::{real, Array, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, TAG_INIT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of every representation.
    pub dim: usize,
    /// Transformer layers inside the composition function.
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    /// Pruning window `m`.
    pub window: usize,
    /// Dropout on the attention and feed-forward residual branches.
    pub dropout: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 256,
            vocab_size: 0,
            window: 4,
            dropout: 0.1,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// 768-wide, 3-layer, 12-head encoder with a 3072 feed-forward layer.
    pub fn full_scale(vocab_size: usize) -> Self {
        Self {
            dim: 768,
            layers: 3,
            heads: 12,
            ffn_dim: 3072,
            vocab_size,
            window: 8,
            dropout: 0.1,
            init_std: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.layers == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return Err(Error::Config(format!("degenerate model dims {self:?}")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocabulary size must be positive".into()));
        }
        if self.window < 2 {
            return Err(Error::Config(format!("pruning window m={} must be ≥ 2", self.window)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LayerIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

/// Handles to every tensor of the model.
#[derive(Clone, Debug)]
pub struct ParamIds {
    /// `[V×d]`; also the (tied) output projection.
    pub tok_emb: ParamId,
    pub out_bias: ParamId,
    pub sum: ParamId,
    pub cls: ParamId,
    pub mask: ParamId,
    pub left_role: ParamId,
    pub right_role: ParamId,
    /// Stand-in for a missing cloze context at sentence boundaries.
    pub null_ctx: ParamId,
    pub in_ln_gain: ParamId,
    pub in_ln_bias: ParamId,
    pub layers: Vec<LayerIds>,
    /// Composition-probability head, `[d×1]` and `[1]`.
    pub wp: ParamId,
    pub bp: ParamId,
    /// Left/right mixing head, `[d×2]` and `[2]`.
    pub ww: ParamId,
    pub bw: ParamId,
}

#[derive(Clone, Debug)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    pub ids: ParamIds,
}

/// Registers every tensor with the given initializer. Order defines the
/// checkpoint layout.
fn build<F: Real>(
    config: &ModelConfig,
    mut init: impl FnMut(&str, &[usize]) -> Array<F>,
) -> (ParamStore<F>, ParamIds) {
    let (d, v, f) = (config.dim, config.vocab_size, config.ffn_dim);
    let mut store = ParamStore::new();
    let mut add = |store: &mut ParamStore<F>, name: String, shape: &[usize]| {
        let value = init(&name, shape);
        store.add(name, value)
    };
    let tok_emb = add(&mut store, "tok_emb".into(), &[v, d]);
    let out_bias = add(&mut store, "out_bias".into(), &[v]);
    let sum = add(&mut store, "special.sum".into(), &[d]);
    let cls = add(&mut store, "special.cls".into(), &[d]);
    let mask = add(&mut store, "special.mask".into(), &[d]);
    let left_role = add(&mut store, "role.left".into(), &[d]);
    let right_role = add(&mut store, "role.right".into(), &[d]);
    let null_ctx = add(&mut store, "null_ctx".into(), &[d]);
    let in_ln_gain = add(&mut store, "input_ln.gain".into(), &[d]);
    let in_ln_bias = add(&mut store, "input_ln.bias".into(), &[d]);
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let mut p = |suffix: &str, shape: &[usize]| {
            add(&mut store, format!("layer{l}.{suffix}"), shape)
        };
        layers.push(LayerIds {
            wq: p("attn.wq", &[d, d]),
            bq: p("attn.bq", &[d]),
            wk: p("attn.wk", &[d, d]),
            bk: p("attn.bk", &[d]),
            wv: p("attn.wv", &[d, d]),
            bv: p("attn.bv", &[d]),
            wo: p("attn.wo", &[d, d]),
            bo: p("attn.bo", &[d]),
            ln1_gain: p("ln1.gain", &[d]),
            ln1_bias: p("ln1.bias", &[d]),
            w1: p("ffn.w1", &[d, f]),
            b1: p("ffn.b1", &[f]),
            w2: p("ffn.w2", &[f, d]),
            b2: p("ffn.b2", &[d]),
            ln2_gain: p("ln2.gain", &[d]),
            ln2_bias: p("ln2.bias", &[d]),
        });
    }
    let wp = add(&mut store, "head.wp".into(), &[d, 1]);
    let bp = add(&mut store, "head.bp".into(), &[1]);
    let ww = add(&mut store, "head.ww".into(), &[d, 2]);
    let bw = add(&mut store, "head.bw".into(), &[2]);
    let ids = ParamIds {
        tok_emb,
        out_bias,
        sum,
        cls,
        mask,
        left_role,
        right_role,
        null_ctx,
        in_ln_gain,
        in_ln_bias,
        layers,
        wp,
        bp,
        ww,
        bw,
    };
    (store, ids)
}

impl<F: Real> Model<F> {
    /// Random initialization: normal weights, zero biases, unit norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, &[TAG_INIT]);
        let normal = Normal::new(0.0, config.init_std)
            .map_err(|e| Error::Config(format!("init_std: {e}")))?;
        let (store, ids) = build(&config, |name, shape| {
            if name.ends_with(".gain") {
                Array::filled(shape, F::one())
            } else if name.ends_with("bias") || name.contains(".b") || name == "out_bias" {
                Array::zeros(shape)
            } else {
                let len: usize = shape.iter().product();
                let data = (0..len).map(|_| real::<F>(normal.sample(&mut rng))).collect();
                Array::from_parts(shape.to_vec(), data)
            }
        });
        Ok(Self { config, store, ids })
    }

    /// All tensors zero (gains included); used when loading checkpoints.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (store, ids) = build(&config, |_, shape| Array::zeros(shape));
        Ok(Self { config, store, ids })
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model { config: self.config.clone(), store: self.store.cast(), ids: self.ids.clone() }
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }
}

/// Outputs of one composition.
#[derive(Clone, Copy, Debug)]
pub struct CompositionOutput {
    /// Fused representation, `[d]`.
    pub c: Var,
    /// `ln p`, `[1]`.
    pub log_p: Var,
    /// Left/right mixing weights, `[2]`.
    pub weights: Var,
    /// Final hidden states of the four slots, `[4×d]`.
    pub hidden: Var,
}

impl CompositionOutput {
    pub fn p<F: Real>(&self, tape: &Tape<'_, F>) -> F {
        tape.scalar(self.log_p).exp()
    }
}

/// Dropout setting for one forward pass.
pub enum Dropout<'r, R: Rng> {
    Off,
    On { rate: f64, rng: &'r mut R },
}

impl<R: Rng> Dropout<'_, R> {
    fn apply<F: Real>(&mut self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        match self {
            Dropout::Off => Ok(x),
            Dropout::On { rate, .. } if *rate <= 0.0 => Ok(x),
            Dropout::On { rate, rng } => {
                let keep = 1.0 - *rate;
                let scale = real::<F>(1.0 / keep);
                let shape = tape.value(x).shape().to_vec();
                let len = tape.value(x).len();
                let data =
                    (0..len).map(|_| if rng.gen_bool(keep) { scale } else { F::zero() }).collect();
                let mask = tape.constant(Array::new(shape, data)?);
                tape.mul(x, mask)
            }
        }
    }
}

/// Runs the transformer layers over stacked `[4×d]` slot inputs.
fn encode_slots<F: Real, R: Rng>(
    tape: &mut Tape<'_, F>,
    model: &Model<F>,
    slots: [Var; 4],
    dropout: &mut Dropout<'_, R>,
) -> Result<Var> {
    let ids = &model.ids;
    let x = tape.stack(&slots)?;
    let g = tape.param(ids.in_ln_gain);
    let b = tape.param(ids.in_ln_bias);
    let mut x = tape.layer_norm(x, g, b)?;
    for layer in &ids.layers {
        let p = |tape: &mut Tape<'_, F>, id| tape.param(id);
        let (wq, bq, wk, bk) = (p(tape, layer.wq), p(tape, layer.bq), p(tape, layer.wk), p(tape, layer.bk));
        let (wv, bv, wo, bo) = (p(tape, layer.wv), p(tape, layer.bv), p(tape, layer.wo), p(tape, layer.bo));
        let q = tape.linear(x, wq, Some(bq))?;
        let k = tape.linear(x, wk, Some(bk))?;
        let v = tape.linear(x, wv, Some(bv))?;
        let a = tape.attention(q, k, v, model.config.heads)?;
        let o = tape.linear(a, wo, Some(bo))?;
        let o = dropout.apply(tape, o)?;
        let r = tape.add(x, o)?;
        let (g1, b1) = (p(tape, layer.ln1_gain), p(tape, layer.ln1_bias));
        x = tape.layer_norm(r, g1, b1)?;

        let (w1, fb1, w2, fb2) = (p(tape, layer.w1), p(tape, layer.b1), p(tape, layer.w2), p(tape, layer.b2));
        let h = tape.linear(x, w1, Some(fb1))?;
        let h = tape.gelu(h);
        let f = tape.linear(h, w2, Some(fb2))?;
        let f = dropout.apply(tape, f)?;
        let r = tape.add(x, f)?;
        let (g2, b2) = (p(tape, layer.ln2_gain), p(tape, layer.ln2_bias));
        x = tape.layer_norm(r, g2, b2)?;
    }
    Ok(x)
}

fn check_input<F: Real>(tape: &Tape<'_, F>, v: Var, dim: usize, what: &str) -> Result<()> {
    let value = tape.value(v);
    if value.len() != dim {
        return Err(Error::Dimension(format!("{what} has width {}, expected {dim}", value.len())));
    }
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite {what} input")));
    }
    Ok(())
}

/// `f(left, right)`: fuses two child representations.
///
/// Slots are `[SUM], [CLS], left+[LEFT], right+[RIGHT]`; after the layers,
/// `p = σ(W_p·h_sum + b_p)`, `w = softmax(W_w·h_cls + b_w)` and
/// `c = w₁·h_left + w₂·h_right`.
pub fn compose<F: Real, R: Rng>(
    tape: &mut Tape<'_, F>,
    model: &Model<F>,
    left: Var,
    right: Var,
    dropout: &mut Dropout<'_, R>,
) -> Result<CompositionOutput> {
    let d = model.dim();
    check_input(tape, left, d, "left")?;
    check_input(tape, right, d, "right")?;
    let ids = &model.ids;
    let sum = tape.param(ids.sum);
    let cls = tape.param(ids.cls);
    let lrole = tape.param(ids.left_role);
    let rrole = tape.param(ids.right_role);
    let l = tape.add(left, lrole)?;
    let r = tape.add(right, rrole)?;
    let hidden = encode_slots(tape, model, [sum, cls, l, r], dropout)?;

    let h_sum = tape.row(hidden, 0)?;
    let h_cls = tape.row(hidden, 1)?;
    let h_children = tape.rows(hidden, 2, 2)?;

    let (wp, bp) = (tape.param(ids.wp), tape.param(ids.bp));
    let logit_p = tape.linear(h_sum, wp, Some(bp))?;
    let log_p = tape.log_sigmoid(logit_p);

    let (ww, bw) = (tape.param(ids.ww), tape.param(ids.bw));
    let mix_logits = tape.linear(h_cls, ww, Some(bw))?;
    let weights = tape.softmax(mix_logits)?;
    let c = tape.matmul(weights, h_children)?;

    if !tape.value(c).is_finite() || !tape.value(log_p).is_finite() {
        return Err(Error::Numeric("composition produced non-finite values".into()));
    }
    Ok(CompositionOutput { c, log_p, weights, hidden })
}

/// Cloze head: log-distribution over the vocabulary for a word given the
/// representations of its left and right contexts. A missing side is
/// replaced by the learned null context.
pub fn predict_word<F: Real, R: Rng>(
    tape: &mut Tape<'_, F>,
    model: &Model<F>,
    left_ctx: Option<Var>,
    right_ctx: Option<Var>,
    dropout: &mut Dropout<'_, R>,
) -> Result<Var> {
    if left_ctx.is_none() && right_ctx.is_none() {
        return Err(Error::Contract("cloze prediction needs at least one context".into()));
    }
    let d = model.dim();
    let ids = &model.ids;
    let left = match left_ctx {
        Some(v) => v,
        None => tape.param(ids.null_ctx),
    };
    let right = match right_ctx {
        Some(v) => v,
        None => tape.param(ids.null_ctx),
    };
    check_input(tape, left, d, "left context")?;
    check_input(tape, right, d, "right context")?;
    let mask = tape.param(ids.mask);
    let cls = tape.param(ids.cls);
    let lrole = tape.param(ids.left_role);
    let rrole = tape.param(ids.right_role);
    let l = tape.add(left, lrole)?;
    let r = tape.add(right, rrole)?;
    let hidden = encode_slots(tape, model, [mask, cls, l, r], dropout)?;
    let h_mask = tape.row(hidden, 0)?;
    let emb = tape.param(ids.tok_emb);
    let bias = tape.param(ids.out_bias);
    let logits = tape.linear_t(h_mask, emb, Some(bias))?;
    tape.log_softmax(logits)
}
