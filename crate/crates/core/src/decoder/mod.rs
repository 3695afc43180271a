//! The caption decoder.
//!
//! Each caption token appears twice in the input: as a masked slot
//! (relation-type mask embedding + position) whose output predicts the token,
//! and as a visible slot (word embedding + position) that descendants may
//! attend. Every block runs slot self-attention restricted by an
//! [`AttentionPlan`], cross-attention to the mapped visual features, and an
//! MLP, each as a pre-norm residual sublayer.

mod io;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::category::N_CATEGORIES;
use crate::mask::AttentionPlan;
use crate::seed::rng_for;
use crate::subword::Caption;
use crate::tensor::{Graph, ParamSet, Real, Tensor, TensorError, Var};

pub use io::{
    read_checkpoint, read_visual_features, write_checkpoint, write_visual_features, Checkpoint,
    FormatError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, VISUAL_MAGIC,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid decoder config: {0}")]
    Config(String),
    #[error("caption of {len} tokens exceeds max_positions {max}")]
    CaptionTooLong { len: usize, max: usize },
    #[error("plan covers {plan} tokens but the caption has {caption}")]
    PlanMismatch { plan: usize, caption: usize },
    #[error("visual features have {got_slots}x{got_dim}, decoder expects {slots}x{dim}")]
    VisualMismatch {
        got_slots: usize,
        got_dim: usize,
        slots: usize,
        dim: usize,
    },
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub blocks: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub n_categories: usize,
    pub dropout_p: f64,
    pub visual_dim_in: usize,
    pub visual_slots: usize,
}

impl DecoderConfig {
    /// Desk-scale defaults: 2 blocks, 4 heads, width 64, dropout 0.1.
    pub fn desk(vocab_size: usize, visual_dim_in: usize, visual_slots: usize) -> Self {
        DecoderConfig {
            blocks: 2,
            heads: 4,
            embed_dim: 64,
            vocab_size,
            max_positions: 64,
            n_categories: N_CATEGORIES,
            dropout_p: 0.1,
            visual_dim_in,
            visual_slots,
        }
    }

    pub fn validate(&self) -> Result<(), DecoderError> {
        let bad = |m: String| Err(DecoderError::Config(m));
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0,1)", self.dropout_p));
        }
        if self.n_categories != N_CATEGORIES {
            return bad(format!("n_categories must be {N_CATEGORIES}"));
        }
        if self.visual_slots < 2 || !self.visual_slots.is_multiple_of(2) {
            return bad(format!(
                "visual_slots {} is not of the form 2p+2",
                self.visual_slots
            ));
        }
        if self.vocab_size == 0 || self.max_positions == 0 || self.blocks == 0 {
            return bad("vocab_size, max_positions and blocks must be positive".into());
        }
        Ok(())
    }

    /// Flat `key=value` lines, one per field.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("blocks".into(), self.blocks.to_string());
        m.insert("heads".into(), self.heads.to_string());
        m.insert("embed_dim".into(), self.embed_dim.to_string());
        m.insert("vocab_size".into(), self.vocab_size.to_string());
        m.insert("max_positions".into(), self.max_positions.to_string());
        m.insert("n_categories".into(), self.n_categories.to_string());
        m.insert("dropout_p".into(), self.dropout_p.to_string());
        m.insert("visual_dim_in".into(), self.visual_dim_in.to_string());
        m.insert("visual_slots".into(), self.visual_slots.to_string());
        m
    }

    /// Override fields from `key=value` pairs; unknown keys are ignored so
    /// one config file can carry trainer settings too.
    pub fn apply_kv(&mut self, kv: &BTreeMap<String, String>) -> Result<(), DecoderError> {
        fn num<V: std::str::FromStr>(k: &str, v: &str) -> Result<V, DecoderError> {
            v.parse()
                .map_err(|_| DecoderError::Config(format!("bad value `{v}` for `{k}`")))
        }
        for (k, v) in kv {
            match k.as_str() {
                "blocks" => self.blocks = num(k, v)?,
                "heads" => self.heads = num(k, v)?,
                "embed_dim" => self.embed_dim = num(k, v)?,
                "vocab_size" => self.vocab_size = num(k, v)?,
                "max_positions" => self.max_positions = num(k, v)?,
                "n_categories" => self.n_categories = num(k, v)?,
                "dropout_p" => self.dropout_p = num(k, v)?,
                "visual_dim_in" => self.visual_dim_in = num(k, v)?,
                "visual_slots" => self.visual_slots = num(k, v)?,
                _ => {}
            }
        }
        Ok(())
    }
}

/// Visual feature set: `[CLS_L, patch_L.., CLS_{L-1}, patch_{L-1}..]`, so
/// `m = 2p + 2` rows of `dim` values.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualFeatures {
    vectors: Tensor<f32>,
    source_id: String,
}

impl VisualFeatures {
    pub fn new(vectors: Tensor<f32>, source_id: impl Into<String>) -> Result<Self, DecoderError> {
        let (m, _) = vectors.dims2();
        if vectors.shape().len() != 2 || m < 2 || m % 2 != 0 {
            return Err(DecoderError::Config(format!(
                "visual features need 2p+2 rows, got shape {:?}",
                vectors.shape()
            )));
        }
        if !vectors.all_finite() {
            return Err(DecoderError::Config("visual features must be finite".into()));
        }
        Ok(VisualFeatures {
            vectors,
            source_id: source_id.into(),
        })
    }

    pub fn slots(&self) -> usize {
        self.vectors.dims2().0
    }

    pub fn dim(&self) -> usize {
        self.vectors.dims2().1
    }

    pub fn patches(&self) -> usize {
        (self.slots() - 2) / 2
    }

    pub fn vectors(&self) -> &Tensor<f32> {
        &self.vectors
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }
}

struct LayerNormIdx {
    gamma: usize,
    beta: usize,
}

struct LinearIdx {
    weight: usize,
    bias: Option<usize>,
}

struct AttentionIdx {
    q: LinearIdx,
    k: LinearIdx,
    v: LinearIdx,
    o: LinearIdx,
}

struct BlockIdx {
    ln_self: LayerNormIdx,
    self_attn: AttentionIdx,
    ln_cross: LayerNormIdx,
    cross_attn: AttentionIdx,
    ln_mlp: LayerNormIdx,
    fc1: LinearIdx,
    fc2: LinearIdx,
}

struct Layout {
    word: usize,
    mask_tokens: usize,
    positions: usize,
    map_ln_in: LayerNormIdx,
    map_proj: LinearIdx,
    map_ln_out: LayerNormIdx,
    blocks: Vec<BlockIdx>,
    final_ln: LayerNormIdx,
    head: LinearIdx,
}

type AddFn<'a> = dyn FnMut(String, Vec<usize>, Init) -> usize + 'a;

fn ln_idx(add: &mut AddFn<'_>, name: &str, dim: usize) -> LayerNormIdx {
    LayerNormIdx {
        gamma: add(format!("{name}.gamma"), vec![dim], Init::Ones),
        beta: add(format!("{name}.beta"), vec![dim], Init::Zeros),
    }
}

fn linear_idx(add: &mut AddFn<'_>, name: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
    let bound = 1.0 / (fan_in as f64).sqrt();
    LinearIdx {
        weight: add(format!("{name}.weight"), vec![fan_in, fan_out], Init::Uniform(bound)),
        bias: Some(add(format!("{name}.bias"), vec![fan_out], Init::Zeros)),
    }
}

/// Key projections carry no bias: it would shift every score of a query by
/// the same amount, which the softmax cancels, so its gradient is zero.
fn projection_idx(add: &mut AddFn<'_>, name: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
    let bound = 1.0 / (fan_in as f64).sqrt();
    LinearIdx {
        weight: add(format!("{name}.weight"), vec![fan_in, fan_out], Init::Uniform(bound)),
        bias: None,
    }
}

fn attention_idx(add: &mut AddFn<'_>, name: &str, d: usize) -> AttentionIdx {
    AttentionIdx {
        q: linear_idx(add, &format!("{name}.q"), d, d),
        k: projection_idx(add, &format!("{name}.k"), d, d),
        v: linear_idx(add, &format!("{name}.v"), d, d),
        o: linear_idx(add, &format!("{name}.o"), d, d),
    }
}

/// Walks the parameter list in its fixed order. Used both to initialize and
/// to check that a loaded parameter set has the expected names and shapes.
fn layout(cfg: &DecoderConfig, add: &mut AddFn<'_>) -> Layout {
    let d = cfg.embed_dim;
    let word = add("word_embeddings".into(), vec![cfg.vocab_size, d], Init::Normal(0.02));
    let mask_tokens = add(
        "mask_token_embeddings".into(),
        vec![cfg.n_categories, d],
        Init::Normal(0.02),
    );
    let positions = add(
        "position_embeddings".into(),
        vec![cfg.max_positions, d],
        Init::Normal(0.02),
    );
    let map_ln_in = ln_idx(add, "map.ln_in", cfg.visual_dim_in);
    let map_proj = linear_idx(add, "map.proj", cfg.visual_dim_in, d);
    let map_ln_out = ln_idx(add, "map.ln_out", d);
    let blocks = (0..cfg.blocks)
        .map(|b| {
            let p = format!("blocks.{b}");
            BlockIdx {
                ln_self: ln_idx(add, &format!("{p}.ln_self"), d),
                self_attn: attention_idx(add, &format!("{p}.self_attn"), d),
                ln_cross: ln_idx(add, &format!("{p}.ln_cross"), d),
                cross_attn: attention_idx(add, &format!("{p}.cross_attn"), d),
                ln_mlp: ln_idx(add, &format!("{p}.ln_mlp"), d),
                fc1: linear_idx(add, &format!("{p}.mlp.fc1"), d, 4 * d),
                fc2: linear_idx(add, &format!("{p}.mlp.fc2"), 4 * d, d),
            }
        })
        .collect();
    let final_ln = ln_idx(add, "final_ln", d);
    let head = linear_idx(add, "head", d, cfg.vocab_size);
    Layout {
        word,
        mask_tokens,
        positions,
        map_ln_in,
        map_proj,
        map_ln_out,
        blocks,
        final_ln,
        head,
    }
}

#[derive(Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Normal(f64),
    Uniform(f64),
}

/// Decoder parameters plus the configuration that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    cfg: DecoderConfig,
    params: ParamSet<T>,
}

impl<T: Real> Decoder<T> {
    /// Fresh parameters: embeddings ~ N(0, 0.02), projections ~
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), LayerNorm gains 1, biases 0.
    pub fn init(cfg: DecoderConfig, seed: u64) -> Result<Self, DecoderError> {
        cfg.validate()?;
        let mut rng = rng_for(seed, "decoder/init");
        let mut params = ParamSet::new();
        layout(&cfg, &mut |name, shape, init| {
            let len: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Zeros => vec![T::zero(); len],
                Init::Ones => vec![T::one(); len],
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("valid std");
                    (0..len).map(|_| T::from_f64_lossy(dist.sample(&mut rng))).collect()
                }
                Init::Uniform(a) => (0..len)
                    .map(|_| T::from_f64_lossy(rng.gen_range(-a..a)))
                    .collect(),
            };
            params.push(name, Tensor::new(shape, data).expect("shape"))
        });
        Ok(Decoder { cfg, params })
    }

    /// Wrap an existing parameter set, checking names and shapes.
    pub fn from_params(cfg: DecoderConfig, params: ParamSet<T>) -> Result<Self, DecoderError> {
        cfg.validate()?;
        let mut expected = Vec::new();
        layout(&cfg, &mut |name, shape, _| {
            expected.push((name, shape));
            expected.len() - 1
        });
        if expected.len() != params.len() {
            return Err(DecoderError::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (i, (name, shape)) in expected.iter().enumerate() {
            if params.name(i) != name || params.tensor(i).shape() != shape.as_slice() {
                return Err(DecoderError::Config(format!(
                    "parameter {i}: expected {name} {shape:?}, found {} {:?}",
                    params.name(i),
                    params.tensor(i).shape()
                )));
            }
        }
        if !params.all_finite() {
            return Err(DecoderError::Config("non-finite parameter values".into()));
        }
        Ok(Decoder { cfg, params })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Decoder<U> {
        Decoder {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
        }
    }

    fn layout(&self) -> Layout {
        let mut next = 0;
        layout(&self.cfg, &mut |_, _, _| {
            next += 1;
            next - 1
        })
    }

    /// Record every parameter on `graph`, as gradient-carrying leaves when
    /// `trainable` is set.
    pub fn leaves(&self, graph: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect()
    }

    fn check_inputs(
        &self,
        caption: &Caption,
        plan: &AttentionPlan,
        visual: &VisualFeatures,
    ) -> Result<(), DecoderError> {
        let n = caption.len();
        if plan.n() != n {
            return Err(DecoderError::PlanMismatch {
                plan: plan.n(),
                caption: n,
            });
        }
        if n > self.cfg.max_positions {
            return Err(DecoderError::CaptionTooLong {
                len: n,
                max: self.cfg.max_positions,
            });
        }
        if visual.slots() != self.cfg.visual_slots || visual.dim() != self.cfg.visual_dim_in {
            return Err(DecoderError::VisualMismatch {
                got_slots: visual.slots(),
                got_dim: visual.dim(),
                slots: self.cfg.visual_slots,
                dim: self.cfg.visual_dim_in,
            });
        }
        if let Some(&id) = caption.ids.iter().find(|&&id| id >= self.cfg.vocab_size) {
            return Err(DecoderError::TokenOutOfRange {
                id,
                vocab: self.cfg.vocab_size,
            });
        }
        Ok(())
    }

    /// Record the forward pass on `graph` using parameter leaves `p` (from
    /// [`Decoder::leaves`]). Returns the masked-slot logits, `[n, vocab]`.
    pub fn forward_on(
        &self,
        graph: &mut Graph<T>,
        p: &[Var],
        caption: &Caption,
        plan: &AttentionPlan,
        visual: &VisualFeatures,
        train: bool,
    ) -> Result<Var, DecoderError> {
        self.check_inputs(caption, plan, visual)?;
        let g = graph;
        let l = self.layout();
        let cfg = &self.cfg;
        let n = caption.len();
        let drop = if train { cfg.dropout_p } else { 0.0 };

        let positions: Vec<usize> = (0..n).collect();
        let categories: Vec<usize> = caption.categories.iter().map(|c| c.index()).collect();
        let pos = g.embedding(p[l.positions], &positions)?;
        let masked = g.embedding(p[l.mask_tokens], &categories)?;
        let masked = g.add(masked, pos)?;
        let visible = g.embedding(p[l.word], &caption.ids)?;
        let visible = g.add(visible, pos)?;
        let x = g.concat_rows(&[masked, visible])?;
        let mut x = g.dropout(x, drop, train);

        let z = g.constant(visual.vectors().cast());
        let z = layer_norm(g, p, &l.map_ln_in, z)?;
        let z = linear(g, p, &l.map_proj, z)?;
        let z = layer_norm(g, p, &l.map_ln_out, z)?;

        let cross_mask = vec![true; 2 * n * cfg.visual_slots];
        for block in &l.blocks {
            let h = layer_norm(g, p, &block.ln_self, x)?;
            let h = attention(g, p, &block.self_attn, h, h, plan.self_mask(), cfg.heads, drop, train)?;
            let h = g.dropout(h, drop, train);
            x = g.add(x, h)?;

            let h = layer_norm(g, p, &block.ln_cross, x)?;
            let h = attention(g, p, &block.cross_attn, h, z, &cross_mask, cfg.heads, drop, train)?;
            let h = g.dropout(h, drop, train);
            x = g.add(x, h)?;

            let h = layer_norm(g, p, &block.ln_mlp, x)?;
            let h = linear(g, p, &block.fc1, h)?;
            let h = g.gelu(h);
            let h = linear(g, p, &block.fc2, h)?;
            let h = g.dropout(h, drop, train);
            x = g.add(x, h)?;
        }

        let masked_rows: Vec<usize> = (0..n).collect();
        let out = g.select_rows(x, &masked_rows)?;
        let out = layer_norm(g, p, &l.final_ln, out)?;
        Ok(linear(g, p, &l.head, out)?)
    }

    /// Masked-slot logits, `[n, vocab]`.
    pub fn forward(
        &self,
        caption: &Caption,
        plan: &AttentionPlan,
        visual: &VisualFeatures,
        train: bool,
        dropout_key: u64,
    ) -> Result<Tensor<T>, DecoderError> {
        let mut g = Graph::with_dropout_key(dropout_key);
        let p = self.leaves(&mut g, false);
        let logits = self.forward_on(&mut g, &p, caption, plan, visual, train)?;
        Ok(g.value(logits).clone())
    }

    /// `log P(token_j | allowed context)` for every token, eval mode.
    pub fn conditional_logprob(
        &self,
        caption: &Caption,
        plan: &AttentionPlan,
        visual: &VisualFeatures,
    ) -> Result<Vec<T>, DecoderError> {
        let mut g = Graph::new();
        let p = self.leaves(&mut g, false);
        let logits = self.forward_on(&mut g, &p, caption, plan, visual, false)?;
        let nll = g.cross_entropy(logits, &caption.ids)?;
        Ok(g.value(nll).data().iter().map(|&v| -v).collect())
    }

    /// Summed negative log-likelihood over the plan's prediction slots,
    /// recorded on `graph` so it can be differentiated.
    pub fn loss_on(
        &self,
        graph: &mut Graph<T>,
        p: &[Var],
        caption: &Caption,
        plan: &AttentionPlan,
        visual: &VisualFeatures,
        train: bool,
    ) -> Result<Var, DecoderError> {
        let logits = self.forward_on(graph, p, caption, plan, visual, train)?;
        let slots = plan.predict_slots();
        let (logits, targets) = if slots.len() == caption.len() {
            (logits, caption.ids.clone())
        } else {
            let sel = graph.select_rows(logits, slots)?;
            (sel, slots.iter().map(|&j| caption.ids[j]).collect())
        };
        let nll = graph.cross_entropy(logits, &targets)?;
        Ok(graph.sum(nll))
    }
}

fn layer_norm<T: Real>(g: &mut Graph<T>, p: &[Var], idx: &LayerNormIdx, x: Var) -> Result<Var, TensorError> {
    g.layernorm(x, p[idx.gamma], p[idx.beta])
}

fn linear<T: Real>(g: &mut Graph<T>, p: &[Var], idx: &LinearIdx, x: Var) -> Result<Var, TensorError> {
    let y = g.matmul(x, p[idx.weight])?;
    match idx.bias {
        Some(b) => g.add_bias(y, p[b]),
        None => Ok(y),
    }
}

/// Multi-head attention of `queries` over `keys` with a row-major
/// `[queries × keys]` permission mask.
#[allow(clippy::too_many_arguments)]
fn attention<T: Real>(
    g: &mut Graph<T>,
    p: &[Var],
    idx: &AttentionIdx,
    queries: Var,
    keys: Var,
    mask: &[bool],
    heads: usize,
    drop: f64,
    train: bool,
) -> Result<Var, TensorError> {
    let q = linear(g, p, &idx.q, queries)?;
    let k = linear(g, p, &idx.k, keys)?;
    let v = linear(g, p, &idx.v, keys)?;
    let d = g.value(q).dims2().1;
    let dh = d / heads;
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let probs = g.softmax_masked(scores, mask)?;
        let probs = g.dropout(probs, drop, train);
        outs.push(g.matmul(probs, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    linear(g, p, &idx.o, cat)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::category::SyntacticCategory;
    use crate::cgm::{Cgm, PredictionMode};
    use crate::mask::compile;

    pub(crate) fn tiny_config(vocab: usize) -> DecoderConfig {
        DecoderConfig {
            blocks: 2,
            heads: 2,
            embed_dim: 8,
            vocab_size: vocab,
            max_positions: 16,
            n_categories: N_CATEGORIES,
            dropout_p: 0.1,
            visual_dim_in: 6,
            visual_slots: 4,
        }
    }

    fn visual(seed: u64, slots: usize, dim: usize) -> VisualFeatures {
        let mut rng = rng_for(seed, "test/visual");
        let data = (0..slots * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        VisualFeatures::new(Tensor::matrix(slots, dim, data).unwrap(), "v").unwrap()
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config(5);
        assert!(cfg.validate().is_ok());
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(5);
        cfg.dropout_p = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(5);
        cfg.visual_slots = 5;
        assert!(cfg.validate().is_err());

        let mut back = DecoderConfig::desk(1, 1, 2);
        back.apply_kv(&tiny_config(5).to_kv()).unwrap();
        assert_eq!(back, tiny_config(5));
    }

    #[test]
    fn zeroed_params_give_output_bias() {
        let cfg = tiny_config(5);
        let mut dec = Decoder::<f64>::init(cfg.clone(), 1).unwrap();
        let bias_idx = dec.params().index_of("head.bias").unwrap();
        for i in 0..dec.params().len() {
            let t = dec.params_mut().tensor_mut(i);
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let b = [0.5, -1.0, 2.0, 0.0, 0.25];
        dec.params_mut().tensor_mut(bias_idx).data_mut().copy_from_slice(&b);
        let caption = Caption {
            ids: vec![3],
            categories: vec![SyntacticCategory::Root],
            heads: vec![None],
        };
        let plan = compile(&Cgm::from_caption(&caption), PredictionMode::Cogt).unwrap();
        let logits = dec.forward(&caption, &plan, &visual(0, 4, 6), false, 0).unwrap();
        assert_eq!(logits.data(), &b);
    }

    #[test]
    fn logprobs_are_normalized() {
        let cfg = tiny_config(7);
        let dec = Decoder::<f64>::init(cfg, 2).unwrap();
        let caption = Caption {
            ids: vec![2, 3, 4],
            categories: vec![SyntacticCategory::Det, SyntacticCategory::Root, SyntacticCategory::Amod],
            heads: vec![Some(1), None, Some(1)],
        };
        let plan = compile(&Cgm::from_caption(&caption), PredictionMode::Cogt).unwrap();
        let logits = dec.forward(&caption, &plan, &visual(1, 4, 6), false, 0).unwrap();
        for row in logits.data().chunks(7) {
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let sum: f64 = row.iter().map(|v| (v - max).exp() / z).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        let lp = dec.conditional_logprob(&caption, &plan, &visual(1, 4, 6)).unwrap();
        assert_eq!(lp.len(), 3);
        assert!(lp.iter().all(|v| *v < 0.0));
    }

    #[test]
    fn uniform_logits_give_log_quarter() {
        let cfg = tiny_config(4);
        let mut dec = Decoder::<f64>::init(cfg, 3).unwrap();
        let w = dec.params().index_of("head.weight").unwrap();
        dec.params_mut().tensor_mut(w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let caption = Caption {
            ids: vec![0, 3],
            categories: vec![SyntacticCategory::Root, SyntacticCategory::Amod],
            heads: vec![None, Some(0)],
        };
        let plan = compile(&Cgm::from_caption(&caption), PredictionMode::Cogt).unwrap();
        for v in dec.conditional_logprob(&caption, &plan, &visual(2, 4, 6)).unwrap() {
            assert!((v - 0.25f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn input_validation() {
        let dec = Decoder::<f32>::init(tiny_config(4), 0).unwrap();
        let caption = Caption {
            ids: vec![9],
            categories: vec![SyntacticCategory::Root],
            heads: vec![None],
        };
        let plan = compile(&Cgm::from_caption(&caption), PredictionMode::Cogt).unwrap();
        assert!(matches!(
            dec.forward(&caption, &plan, &visual(0, 4, 6), false, 0),
            Err(DecoderError::TokenOutOfRange { id: 9, .. })
        ));
        let ok = caption.with_ids(vec![1]);
        assert!(matches!(
            dec.forward(&ok, &plan, &visual(0, 6, 6), false, 0),
            Err(DecoderError::VisualMismatch { .. })
        ));
    }

    #[test]
    fn from_params_checks_layout() {
        let dec = Decoder::<f32>::init(tiny_config(4), 0).unwrap();
        assert!(Decoder::from_params(tiny_config(4), dec.params().clone()).is_ok());
        assert!(Decoder::from_params(tiny_config(5), dec.params().clone()).is_err());
    }
}
