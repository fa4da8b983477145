use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{TokenLayout, TokenSequence};
use crate::numerics::{concat_cols, init_normal, Graph, NllItem, NumericsError, ParamSet, Tensor, Var};

use super::GeneratorError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn: usize,
    /// Number of condition labels, including the null label if there is one.
    pub conditions: usize,
    /// Label used for unconditional generation.
    pub null_condition: Option<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            width: 128,
            heads: 4,
            blocks: 4,
            ffn: 256,
            conditions: 5,
            null_condition: Some(4),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(GeneratorError::Config(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.blocks == 0 || self.ffn == 0 || self.conditions == 0 {
            return Err(GeneratorError::Config(
                "blocks, ffn and conditions must be positive".into(),
            ));
        }
        if let Some(null) = self.null_condition {
            if null >= self.conditions {
                return Err(GeneratorError::Config(format!(
                    "null condition {null} outside 0..{}",
                    self.conditions
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub steps: usize,
    pub loss_curve: Vec<f64>,
}

/// Condition prefix length: one label token ahead of the motion tokens.
pub const CONDITION_LEN: usize = 1;

#[derive(Debug)]
pub struct GeneratorCheckpoint {
    pub config: GeneratorConfig,
    pub layout: TokenLayout,
    pub params: ParamSet,
    pub meta: GeneratorTrainingMeta,
    forward_calls: AtomicUsize,
}

impl Clone for GeneratorCheckpoint {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.clone(),
            meta: self.meta.clone(),
            forward_calls: AtomicUsize::new(self.forward_calls()),
        }
    }
}

impl PartialEq for GeneratorCheckpoint {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.layout == other.layout
            && self.params == other.params
            && self.meta == other.meta
    }
}

impl GeneratorCheckpoint {
    pub fn init(config: GeneratorConfig, layout: TokenLayout, seed: u64) -> Result<Self, GeneratorError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.width;
        let vocab_rows = config.conditions + 1 + layout.vocab.iter().sum::<usize>();
        let seq_len = CONDITION_LEN + layout.total();
        let mut p = ParamSet::new();
        let mut normal =
            |p: &mut ParamSet, name: &str, shape: &[usize], std: f64| p.insert(name, init_normal(&mut rng, shape, std));
        normal(&mut p, "emb.tokens", &[vocab_rows, w], 0.02)?;
        normal(&mut p, "emb.pos", &[seq_len, w], 0.02)?;
        normal(&mut p, "emb.scale", &[layout.scale_count() + 1, w], 0.02)?;
        let depth_scale = 0.02 / (2.0 * config.blocks as f64).sqrt();
        for b in 0..config.blocks {
            normal(&mut p, &format!("blk{b}.qkv.w"), &[w, 3 * w], 0.02)?;
            normal(&mut p, &format!("blk{b}.out.w"), &[w, w], depth_scale)?;
            normal(&mut p, &format!("blk{b}.ff1.w"), &[w, config.ffn], 0.02)?;
            normal(&mut p, &format!("blk{b}.ff2.w"), &[config.ffn, w], depth_scale)?;
        }
        for b in 0..config.blocks {
            for (name, len) in [
                ("qkv.b", 3 * w),
                ("out.b", w),
                ("ff1.b", config.ffn),
                ("ff2.b", w),
                ("ln1.b", w),
                ("ln2.b", w),
            ] {
                p.insert(&format!("blk{b}.{name}"), Tensor::zeros(&[len]))?;
            }
            p.insert(&format!("blk{b}.ln1.g"), Tensor::full(&[w], 1.0))?;
            p.insert(&format!("blk{b}.ln2.g"), Tensor::full(&[w], 1.0))?;
        }
        p.insert("ln_f.g", Tensor::full(&[w], 1.0))?;
        p.insert("ln_f.b", Tensor::zeros(&[w]))?;
        for (s, &v) in layout.vocab.iter().enumerate() {
            p.insert(&format!("head.b{s}"), Tensor::zeros(&[v]))?;
        }
        Ok(Self {
            config,
            layout,
            params: p,
            meta: GeneratorTrainingMeta {
                seed,
                ..Default::default()
            },
            forward_calls: AtomicUsize::new(0),
        })
    }

    pub fn mask_id(&self) -> usize {
        self.config.conditions
    }

    /// Embedding row of token `index` at scale `s`.
    pub fn content_id(&self, s: usize, index: u32) -> usize {
        self.config.conditions + 1 + self.layout.vocab[..s].iter().sum::<usize>() + index as usize
    }

    pub fn sequence_len(&self) -> usize {
        CONDITION_LEN + self.layout.total()
    }

    pub fn head_width(&self) -> usize {
        self.layout.max_vocab()
    }

    /// Forward passes run so far on this checkpoint.
    pub fn forward_calls(&self) -> usize {
        self.forward_calls.load(Ordering::Relaxed)
    }

    pub fn is_trained(&self) -> bool {
        self.meta.steps > 0
    }

    pub(crate) fn check_condition(&self, condition: usize) -> Result<(), GeneratorError> {
        if condition >= self.config.conditions {
            return Err(GeneratorError::UnknownCondition {
                condition,
                count: self.config.conditions,
            });
        }
        Ok(())
    }

    pub(crate) fn check_tokens(&self, tokens: &[Option<u32>]) -> Result<(), GeneratorError> {
        if tokens.len() != self.layout.total() {
            return Err(GeneratorError::Layout(format!(
                "{} tokens for a layout of {}",
                tokens.len(),
                self.layout.total()
            )));
        }
        for (i, t) in tokens.iter().enumerate() {
            if let Some(t) = t {
                let (s, _) = self.layout.locate(i).expect("position inside layout");
                if *t as usize >= self.layout.vocab[s] {
                    return Err(GeneratorError::Layout(format!(
                        "token {t} at position {i} exceeds scale {} vocabulary",
                        s + 1
                    )));
                }
            }
        }
        Ok(())
    }

    fn input_ids(&self, condition: usize, tokens: &[Option<u32>]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.sequence_len());
        ids.push(condition);
        for (i, t) in tokens.iter().enumerate() {
            ids.push(match t {
                Some(t) => self.content_id(self.layout.locate(i).expect("inside layout").0, *t),
                None => self.mask_id(),
            });
        }
        ids
    }

    fn scale_ids(&self) -> Vec<usize> {
        let mut ids = vec![self.layout.scale_count()];
        ids.extend(self.layout.scale_ids());
        ids
    }
}

/// Graph outputs of one forward pass.
pub(crate) struct ForwardOutput<'g> {
    /// Logits of the motion positions of each scale, `[n_s, |C_s|]`.
    pub per_scale: Vec<Var<'g>>,
    /// Attention probabilities per block and head, `[L, L]`.
    pub attention: Vec<Tensor>,
}

fn affine<'g>(g: &'g Graph, p: &ParamSet, x: Var<'g>, prefix: &str) -> Result<Var<'g>, NumericsError> {
    x.matmul(g.param(p, &format!("{prefix}.w"))?)?
        .add_row(g.param(p, &format!("{prefix}.b"))?)
}

fn layer_norm<'g>(g: &'g Graph, p: &ParamSet, x: Var<'g>, prefix: &str) -> Result<Var<'g>, NumericsError> {
    x.layer_norm(g.param(p, &format!("{prefix}.g"))?, g.param(p, &format!("{prefix}.b"))?)
}

pub(crate) fn forward_graph<'g>(
    g: &'g Graph,
    ckpt: &GeneratorCheckpoint,
    condition: usize,
    tokens: &[Option<u32>],
    keep_attention: bool,
) -> Result<ForwardOutput<'g>, GeneratorError> {
    ckpt.check_condition(condition)?;
    ckpt.check_tokens(tokens)?;
    ckpt.forward_calls.fetch_add(1, Ordering::Relaxed);
    let p = &ckpt.params;
    let cfg = &ckpt.config;
    let table = g.param(p, "emb.tokens")?;
    let positions: Vec<usize> = (0..ckpt.sequence_len()).collect();
    let mut x = table
        .embedding(&ckpt.input_ids(condition, tokens))?
        .add(g.param(p, "emb.pos")?.embedding(&positions)?)?
        .add(g.param(p, "emb.scale")?.embedding(&ckpt.scale_ids())?)?;
    let head_dim = cfg.width / cfg.heads;
    let inv_sqrt = 1.0 / (head_dim as f64).sqrt();
    let mut attention = Vec::new();
    for b in 0..cfg.blocks {
        let h = layer_norm(g, p, x, &format!("blk{b}.ln1"))?;
        let qkv = affine(g, p, h, &format!("blk{b}.qkv"))?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let at = head * head_dim;
            let q = qkv.slice_cols(at, at + head_dim)?;
            let k = qkv.slice_cols(cfg.width + at, cfg.width + at + head_dim)?;
            let v = qkv.slice_cols(2 * cfg.width + at, 2 * cfg.width + at + head_dim)?;
            let probs = q.matmul_t(k)?.scale(inv_sqrt)?.softmax_rows()?;
            if keep_attention {
                attention.push(probs.value());
            }
            heads.push(probs.matmul(v)?);
        }
        x = x.add(affine(g, p, concat_cols(&heads)?, &format!("blk{b}.out"))?)?;
        let h = layer_norm(g, p, x, &format!("blk{b}.ln2"))?;
        let ff = affine(g, p, h, &format!("blk{b}.ff1"))?.gelu()?;
        x = x.add(affine(g, p, ff, &format!("blk{b}.ff2"))?)?;
    }
    let x = layer_norm(g, p, x, "ln_f")?;
    // The output head shares weights with the content-token embeddings of each scale.
    let mut per_scale = Vec::with_capacity(ckpt.layout.scale_count());
    for (s, (&offset, &n)) in ckpt.layout.offsets().iter().zip(&ckpt.layout.lengths).enumerate() {
        let rows: Vec<usize> = (CONDITION_LEN + offset..CONDITION_LEN + offset + n).collect();
        let first = ckpt.content_id(s, 0);
        let vocab_rows: Vec<usize> = (first..first + ckpt.layout.vocab[s]).collect();
        let logits = x
            .select_rows(&rows)?
            .matmul_t(table.select_rows(&vocab_rows)?)?
            .add_row(g.param(p, &format!("head.b{s}"))?)?;
        per_scale.push(logits);
    }
    Ok(ForwardOutput { per_scale, attention })
}

/// Logits for every position of `[condition; tokens]`, `[1 + total, head width]`.
/// Condition rows and columns beyond a scale's vocabulary hold negative infinity.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    pub values: Tensor,
    /// Attention probabilities per block and head.
    pub attention: Vec<Tensor>,
}

pub fn forward(ckpt: &GeneratorCheckpoint, condition: usize, tokens: &[Option<u32>]) -> Result<Logits, GeneratorError> {
    let g = Graph::new();
    let out = forward_graph(&g, ckpt, condition, tokens, true)?;
    let width = ckpt.head_width();
    let mut values = Tensor::full(&[ckpt.sequence_len(), width], f64::NEG_INFINITY);
    for (s, logits) in out.per_scale.iter().enumerate() {
        let l = logits.value();
        let start = CONDITION_LEN + ckpt.layout.offsets()[s];
        for r in 0..l.rows() {
            values.row_mut(start + r)[..l.cols()].copy_from_slice(l.row(r));
        }
    }
    Ok(Logits {
        values,
        attention: out.attention,
    })
}

/// Mean negative log-likelihood of `targets` over the flat positions in `supervised`.
pub(crate) fn nll_graph<'g>(
    ckpt: &GeneratorCheckpoint,
    per_scale: &[Var<'g>],
    targets: &[u32],
    supervised: &[usize],
) -> Result<Var<'g>, GeneratorError> {
    if supervised.is_empty() {
        return Err(GeneratorError::Numerics(NumericsError::EmptyMask));
    }
    let mut items: Vec<Vec<NllItem>> = vec![Vec::new(); ckpt.layout.scale_count()];
    for &pos in supervised {
        let (s, offset) = ckpt
            .layout
            .locate(pos)
            .ok_or_else(|| GeneratorError::Layout(format!("position {pos} outside layout")))?;
        items[s].push(NllItem {
            row: offset,
            target: targets[pos] as usize,
            valid: ckpt.layout.vocab[s],
        });
    }
    let total = supervised.len() as f64;
    let mut loss: Option<Var<'g>> = None;
    for (s, scale_items) in items.iter().enumerate() {
        if scale_items.is_empty() {
            continue;
        }
        let term = per_scale[s]
            .masked_nll(scale_items)?
            .scale(scale_items.len() as f64 / total)?;
        loss = Some(match loss {
            Some(l) => l.add(term)?,
            None => term,
        });
    }
    Ok(loss.expect("at least one supervised position"))
}

/// Mean negative log-probability of the targets at the masked positions, from
/// logits laid out as [`forward`] returns them.
pub fn nll_loss(
    logits: &Tensor,
    targets: &[u32],
    masked: &[usize],
    layout: &TokenLayout,
) -> Result<f64, GeneratorError> {
    if masked.is_empty() {
        return Err(GeneratorError::Numerics(NumericsError::EmptyMask));
    }
    let mut total = 0.0;
    for &pos in masked {
        let (s, _) = layout
            .locate(pos)
            .ok_or_else(|| GeneratorError::Layout(format!("position {pos} outside layout")))?;
        let row = &logits.row(CONDITION_LEN + pos)[..layout.vocab[s]];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[targets[pos] as usize];
    }
    Ok(total / masked.len() as f64)
}

/// Fraction of `masked` positions whose argmax prediction equals the target.
pub fn masked_accuracy(
    ckpt: &GeneratorCheckpoint,
    condition: usize,
    y: &TokenSequence,
    masked: &[usize],
) -> Result<f64, GeneratorError> {
    let flat = y.flat();
    let mut input: Vec<Option<u32>> = flat.iter().copied().map(Some).collect();
    for &p in masked {
        input[p] = None;
    }
    let logits = forward(ckpt, condition, &input)?.values;
    let hits = masked
        .iter()
        .filter(|&&p| {
            argmax(&logits.row(CONDITION_LEN + p)[..ckpt.layout.vocab[ckpt.layout.locate(p).expect("inside").0]])
                == flat[p] as usize
        })
        .count();
    Ok(hits as f64 / masked.len().max(1) as f64)
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
