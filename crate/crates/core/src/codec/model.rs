use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fsq::{self, quantize_var};
use crate::motiondata::{MotionSequence, Skeleton, FEATURE_DIM};
use crate::numerics::{init_normal, Graph, NumericsError, ParamSet, Tensor, Var};

use super::config::{Projection, Quantizer, ScaleConfig};
use super::tokens::{TokenLayout, TokenSequence};
use super::CodecError;

/// Per-feature affine normalization fitted on the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Column statistics over every frame of `data`. Standard deviations are
    /// floored at `std_floor` so near-constant columns are not amplified.
    pub fn fit(data: &[MotionSequence], std_floor: f64) -> Self {
        let mut sum = vec![0.0; FEATURE_DIM];
        let mut sq = vec![0.0; FEATURE_DIM];
        let mut count = 0.0f64;
        for x in data {
            for t in 0..x.len() {
                for (c, &v) in x.frames().row(t).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
                count += 1.0;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count.max(1.0)).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / count.max(1.0) - m * m).max(0.0).sqrt().max(std_floor))
            .collect();
        Self { mean, std }
    }

    pub fn normalize(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    pub fn denormalize(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CodecTrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub steps: usize,
    /// Mean training loss of every epoch.
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecCheckpoint {
    pub config: ScaleConfig,
    pub params: ParamSet,
    pub normalizer: Normalizer,
    pub meta: CodecTrainingMeta,
}

fn conv_std(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

impl CodecCheckpoint {
    /// Randomly initialised, untrained codec with an identity normalizer.
    pub fn init(config: ScaleConfig, seed: u64) -> Result<Self, CodecError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skeleton = Skeleton::standard();
        let (h, d) = (config.hidden, config.latent_dim);
        let mut p = ParamSet::new();
        let mut add = |p: &mut ParamSet, name: String, shape: &[usize], std: f64| -> Result<(), NumericsError> {
            let t = if std == 0.0 {
                Tensor::zeros(shape)
            } else {
                init_normal(&mut rng, shape, std)
            };
            p.insert(&name, t)
        };
        for (s, spec) in config.scales.iter().enumerate() {
            let ds = skeleton.columns_of(spec.parts).len();
            let e = format!("enc{s}");
            add(&mut p, format!("{e}.in.w"), &[4, ds, h], conv_std(4 * ds))?;
            add(&mut p, format!("{e}.in.b"), &[h], 0.0)?;
            add(&mut p, format!("{e}.res1.w"), &[3, h, h], 0.5 * conv_std(3 * h))?;
            add(&mut p, format!("{e}.res1.b"), &[h], 0.0)?;
            add(&mut p, format!("{e}.down.w"), &[4, h, h], conv_std(4 * h))?;
            add(&mut p, format!("{e}.down.b"), &[h], 0.0)?;
            add(&mut p, format!("{e}.res2.w"), &[3, h, h], 0.5 * conv_std(3 * h))?;
            add(&mut p, format!("{e}.res2.b"), &[h], 0.0)?;
            add(&mut p, format!("{e}.proj.w"), &[h, d], conv_std(h))?;
            add(&mut p, format!("{e}.proj.b"), &[d], 0.0)?;
            if config.quantizer == Quantizer::Fsq && (s == 0 || config.projection == Projection::PerScale) {
                let c = spec.levels.channels();
                let q = config.quantizer_prefix(s);
                add(&mut p, format!("{q}.in.w"), &[d, c], conv_std(d))?;
                add(&mut p, format!("{q}.in.b"), &[c], 0.0)?;
                add(&mut p, format!("{q}.out.w"), &[c, d], 0.2 * conv_std(c))?;
                add(&mut p, format!("{q}.out.b"), &[d], 0.0)?;
            }
        }
        add(&mut p, "dec.in.w".into(), &[3, d, h], conv_std(3 * d))?;
        add(&mut p, "dec.in.b".into(), &[h], 0.0)?;
        for r in ["res1", "res2", "res3"] {
            add(&mut p, format!("dec.{r}.w"), &[3, h, h], 0.5 * conv_std(3 * h))?;
            add(&mut p, format!("dec.{r}.b"), &[h], 0.0)?;
        }
        for u in ["up1", "up2"] {
            add(&mut p, format!("dec.{u}.w"), &[4, h, h], conv_std(2 * h))?;
            add(&mut p, format!("dec.{u}.b"), &[h], 0.0)?;
        }
        add(&mut p, "dec.out.w".into(), &[3, h, FEATURE_DIM], conv_std(3 * h))?;
        add(&mut p, "dec.out.b".into(), &[FEATURE_DIM], 0.0)?;
        Ok(Self {
            config,
            params: p,
            normalizer: Normalizer::identity(FEATURE_DIM),
            meta: CodecTrainingMeta {
                seed,
                ..Default::default()
            },
        })
    }

    pub fn layout(&self) -> TokenLayout {
        TokenLayout {
            lengths: self.config.token_lengths(),
            vocab: self.config.vocab_sizes(),
        }
    }

    pub fn is_trained(&self) -> bool {
        self.meta.steps > 0
    }

    /// Column indices each scale's encoder reads.
    pub fn scale_columns(&self) -> Vec<Vec<usize>> {
        let skeleton = Skeleton::standard();
        self.config
            .scales
            .iter()
            .map(|s| skeleton.columns_of(s.parts))
            .collect()
    }

    fn check_motion(&self, x: &MotionSequence) -> Result<(), CodecError> {
        if x.len() != self.config.frames {
            return Err(CodecError::Mismatch(format!(
                "codec expects {} frames, got {}",
                self.config.frames,
                x.len()
            )));
        }
        Ok(())
    }

    fn check_scale(&self, s: usize) -> Result<(), CodecError> {
        let count = self.config.scale_count();
        if s == 0 || s > count {
            return Err(CodecError::ScaleOutOfRange { scale: s, count });
        }
        Ok(())
    }
}

fn affine<'g>(g: &'g Graph, p: &ParamSet, x: Var<'g>, prefix: &str) -> Result<Var<'g>, NumericsError> {
    x.matmul(g.param(p, &format!("{prefix}.w"))?)?
        .add_row(g.param(p, &format!("{prefix}.b"))?)
}

fn conv<'g>(
    g: &'g Graph,
    p: &ParamSet,
    x: Var<'g>,
    prefix: &str,
    stride: usize,
    padding: usize,
) -> Result<Var<'g>, NumericsError> {
    x.conv1d(g.param(p, &format!("{prefix}.w"))?, stride, padding)?
        .add_row(g.param(p, &format!("{prefix}.b"))?)
}

fn conv_t<'g>(g: &'g Graph, p: &ParamSet, x: Var<'g>, prefix: &str) -> Result<Var<'g>, NumericsError> {
    x.conv_transpose1d(g.param(p, &format!("{prefix}.w"))?, 2, 1)?
        .add_row(g.param(p, &format!("{prefix}.b"))?)
}

fn residual<'g>(g: &'g Graph, p: &ParamSet, x: Var<'g>, prefix: &str) -> Result<Var<'g>, NumericsError> {
    x.add(conv(g, p, x.gelu()?, prefix, 1, 1)?)
}

/// Scale `s` (0-based) encoder: `[N, D_s]` to `[N / 4, d]`.
pub(crate) fn encoder<'g>(g: &'g Graph, p: &ParamSet, s: usize, x: Var<'g>) -> Result<Var<'g>, NumericsError> {
    let e = format!("enc{s}");
    let h = conv(g, p, x, &format!("{e}.in"), 2, 1)?.gelu()?;
    let h = residual(g, p, h, &format!("{e}.res1"))?;
    let h = conv(g, p, h, &format!("{e}.down"), 2, 1)?.gelu()?;
    let h = residual(g, p, h, &format!("{e}.res2"))?;
    affine(g, p, h, &format!("{e}.proj"))
}

/// Shared decoder: `[N / 4, d]` to normalized `[N, D]`.
pub(crate) fn decoder<'g>(g: &'g Graph, p: &ParamSet, f: Var<'g>) -> Result<Var<'g>, NumericsError> {
    let h = conv(g, p, f, "dec.in", 1, 1)?.gelu()?;
    let h = residual(g, p, h, "dec.res1")?;
    let h = conv_t(g, p, h, "dec.up1")?.gelu()?;
    let h = residual(g, p, h, "dec.res2")?;
    let h = conv_t(g, p, h, "dec.up2")?.gelu()?;
    let h = residual(g, p, h, "dec.res3")?;
    conv(g, p, h, "dec.out", 1, 1)
}

/// Quantized latent of scale `s` from its interpolated residual `[n_s, d]`.
fn quantize_scale<'g>(
    g: &'g Graph,
    ckpt: &CodecCheckpoint,
    s: usize,
    residual: Var<'g>,
) -> Result<(Var<'g>, Option<Vec<u32>>), NumericsError> {
    match ckpt.config.quantizer {
        Quantizer::Bypass => Ok((residual, None)),
        Quantizer::Fsq => {
            let spec = &ckpt.config.scales[s];
            let q = ckpt.config.quantizer_prefix(s);
            let step = ckpt.config.step(s);
            let projected = affine(g, &ckpt.params, residual, &format!("{q}.in"))?.scale(1.0 / step)?;
            let (levels, indices) = quantize_var(projected, &spec.levels, ckpt.config.straight_through)?;
            Ok((
                affine(g, &ckpt.params, levels.scale(step)?, &format!("{q}.out"))?,
                Some(indices),
            ))
        }
    }
}

/// Values recorded by one pass through the codec.
pub(crate) struct ForwardPass<'g> {
    pub reconstruction: Var<'g>,
    /// Encoder outputs `z_s`.
    pub latents: Vec<Var<'g>>,
    /// Running aggregates `f_s`.
    pub aggregates: Vec<Var<'g>>,
    pub tokens: Option<Vec<Vec<u32>>>,
}

/// Full encode, quantize and decode pass over a normalized clip.
pub(crate) fn forward<'g>(
    g: &'g Graph,
    ckpt: &CodecCheckpoint,
    x_norm: &Tensor,
) -> Result<ForwardPass<'g>, NumericsError> {
    forward_prefix(g, ckpt, x_norm, ckpt.config.scale_count())
}

/// [`forward`] through the first `scales` scales only, decoding `f_scales`.
pub(crate) fn forward_prefix<'g>(
    g: &'g Graph,
    ckpt: &CodecCheckpoint,
    x_norm: &Tensor,
    scales: usize,
) -> Result<ForwardPass<'g>, NumericsError> {
    let n = ckpt.config.latent_len();
    let columns = ckpt.scale_columns();
    if scales == 0 || scales > columns.len() {
        return Err(NumericsError::Shape(format!(
            "prefix of {scales} scales out of {}",
            columns.len()
        )));
    }
    let mut latents = Vec::with_capacity(scales);
    let mut aggregates: Vec<Var<'g>> = Vec::with_capacity(scales);
    let mut tokens = Vec::with_capacity(scales);
    for (s, cols) in columns.iter().enumerate().take(scales) {
        let xs = g.constant(x_norm.select_cols(cols)?);
        let z = encoder(g, &ckpt.params, s, xs)?;
        let residual = match aggregates.last() {
            Some(prev) => z.sub(*prev)?,
            None => z,
        };
        let (quantized, indices) = quantize_scale(g, ckpt, s, residual.interp(ckpt.config.scales[s].tokens)?)?;
        let contribution = quantized.interp(n)?;
        let f = match aggregates.last() {
            Some(prev) => prev.add(contribution)?,
            None => contribution,
        };
        latents.push(z);
        aggregates.push(f);
        tokens.push(indices);
    }
    let reconstruction = decoder(g, &ckpt.params, *aggregates.last().expect("at least one scale"))?;
    let tokens = tokens.into_iter().collect::<Option<Vec<_>>>();
    Ok(ForwardPass {
        reconstruction,
        latents,
        aggregates,
        tokens,
    })
}

/// Reconstruction error plus the two-sided commitment terms with stop-gradients.
pub fn codec_loss<'g>(
    x: Var<'g>,
    reconstruction: Var<'g>,
    latents: &[Var<'g>],
    aggregates: &[Var<'g>],
    alpha: f64,
) -> Result<Var<'g>, NumericsError> {
    if latents.len() != aggregates.len() {
        return Err(NumericsError::Shape("one aggregate per latent is required".into()));
    }
    let mut loss = x.mse(reconstruction)?;
    if alpha != 0.0 {
        for (z, f) in latents.iter().zip(aggregates) {
            let commit = z.mse(f.stop_gradient())?.add(z.stop_gradient().mse(*f)?)?;
            loss = loss.add(commit.scale(alpha)?)?;
        }
    }
    Ok(loss)
}

/// Latent-space view of an encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentEncoding {
    pub tokens: Option<TokenSequence>,
    /// Encoder outputs `z_s`, `[n, d]`.
    pub latents: Vec<Tensor>,
    /// Running aggregates `f_s`, `[n, d]`.
    pub aggregates: Vec<Tensor>,
    /// Dequantized residuals interpolated back to `n` steps.
    pub contributions: Vec<Tensor>,
}

impl LatentEncoding {
    /// The decoder input `f_S`.
    pub fn aggregate(&self) -> Tensor {
        self.aggregates.last().expect("at least one scale").clone()
    }
}

fn sum_selected(contributions: &[Tensor], include: impl Fn(usize) -> bool) -> Tensor {
    let mut total = Tensor::zeros(contributions[0].shape());
    for (s, c) in contributions.iter().enumerate() {
        if include(s) {
            total.add_scaled(c, 1.0).expect("contributions share a shape");
        }
    }
    total
}

pub fn encode_latent(x: &MotionSequence, ckpt: &CodecCheckpoint) -> Result<LatentEncoding, CodecError> {
    ckpt.check_motion(x)?;
    let g = Graph::new();
    let pass = forward(&g, ckpt, &ckpt.normalizer.normalize(x.frames()))?;
    let aggregates: Vec<Tensor> = pass.aggregates.iter().map(Var::value).collect();
    let mut contributions = Vec::with_capacity(aggregates.len());
    for (s, f) in aggregates.iter().enumerate() {
        contributions.push(match s {
            0 => f.clone(),
            _ => f.zip_map(&aggregates[s - 1], |a, b| a - b)?,
        });
    }
    Ok(LatentEncoding {
        tokens: pass.tokens.map(TokenSequence::new),
        latents: pass.latents.iter().map(Var::value).collect(),
        aggregates,
        contributions,
    })
}

pub fn encode(x: &MotionSequence, ckpt: &CodecCheckpoint) -> Result<TokenSequence, CodecError> {
    if ckpt.config.quantizer == Quantizer::Bypass {
        return Err(CodecError::NoTokens);
    }
    encode_latent(x, ckpt)?.tokens.ok_or(CodecError::NoTokens)
}

/// Decoder applied to an aggregated latent `[n, d]`.
pub fn decode_latent(f: &Tensor, ckpt: &CodecCheckpoint) -> Result<MotionSequence, CodecError> {
    let g = Graph::new();
    let out = decoder(&g, &ckpt.params, g.constant(f.clone()))?.value();
    let fps = crate::motiondata::DEFAULT_FPS;
    Ok(MotionSequence::new(ckpt.normalizer.denormalize(&out), fps)?)
}

/// Per-scale dequantized contributions `interp(lookup(y_s), n)`.
pub fn dequantize(y: &TokenSequence, ckpt: &CodecCheckpoint) -> Result<Vec<Tensor>, CodecError> {
    if ckpt.config.quantizer == Quantizer::Bypass {
        return Err(CodecError::NoTokens);
    }
    y.validate(&ckpt.layout())?;
    let n = ckpt.config.latent_len();
    let g = Graph::new();
    y.scales()
        .iter()
        .enumerate()
        .map(|(s, tokens)| {
            let spec = &ckpt.config.scales[s].levels;
            let mut levels = Vec::with_capacity(tokens.len() * spec.channels());
            for &t in tokens {
                levels.extend(fsq::lookup(t, spec)?);
            }
            let levels = Tensor::new(&[tokens.len(), spec.channels()], levels)?.map(|v| v * ckpt.config.step(s));
            let z = affine(
                &g,
                &ckpt.params,
                g.constant(levels),
                &format!("{}.out", ckpt.config.quantizer_prefix(s)),
            )?;
            Ok(z.interp(n)?.value())
        })
        .collect()
}

/// Decodes the scales for which `include(s)` (0-based) holds.
pub fn decode_selected(
    y: &TokenSequence,
    ckpt: &CodecCheckpoint,
    include: impl Fn(usize) -> bool,
) -> Result<MotionSequence, CodecError> {
    let contributions = dequantize(y, ckpt)?;
    decode_latent(&sum_selected(&contributions, include), ckpt)
}

pub fn decode(y: &TokenSequence, ckpt: &CodecCheckpoint) -> Result<MotionSequence, CodecError> {
    decode_selected(y, ckpt, |_| true)
}

/// Decodes scales `1..=s_max` only.
pub fn partial_decode(y: &TokenSequence, ckpt: &CodecCheckpoint, s_max: usize) -> Result<MotionSequence, CodecError> {
    ckpt.check_scale(s_max)?;
    decode_selected(y, ckpt, |s| s < s_max)
}

/// Decodes every scale except `s_drop` (1-based).
pub fn drop_scale_decode(
    y: &TokenSequence,
    ckpt: &CodecCheckpoint,
    s_drop: usize,
) -> Result<MotionSequence, CodecError> {
    ckpt.check_scale(s_drop)?;
    decode_selected(y, ckpt, |s| s + 1 != s_drop)
}

/// Encode and decode through the latent path (works with the bypass quantizer).
pub fn reconstruct(x: &MotionSequence, ckpt: &CodecCheckpoint) -> Result<MotionSequence, CodecError> {
    decode_latent(&encode_latent(x, ckpt)?.aggregate(), ckpt)
}

/// The finest encoder feeding the decoder directly, skipping every other scale.
pub fn plain_autoencode(x: &MotionSequence, ckpt: &CodecCheckpoint) -> Result<MotionSequence, CodecError> {
    ckpt.check_motion(x)?;
    let s = ckpt.config.scale_count() - 1;
    let g = Graph::new();
    let cols = &ckpt.scale_columns()[s];
    let xs = g.constant(ckpt.normalizer.normalize(x.frames()).select_cols(cols)?);
    let z = encoder(&g, &ckpt.params, s, xs)?.value();
    decode_latent(&z, ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motiondata::{synth_generate, MotionClass};

    fn clip(seed: u64) -> MotionSequence {
        synth_generate(MotionClass::ALL[seed as usize % 4], 64, seed)
            .unwrap()
            .motion
    }

    #[test]
    fn shapes_and_determinism() {
        let ckpt = CodecCheckpoint::init(ScaleConfig::default(), 1).unwrap();
        let x = clip(3);
        let y = encode(&x, &ckpt).unwrap();
        assert_eq!(y.lengths(), vec![6, 8, 11, 14, 16, 16]);
        assert_eq!(y, encode(&x, &ckpt).unwrap());
        let xh = decode(&y, &ckpt).unwrap();
        assert_eq!(xh.frames().shape(), &[64, 67]);
        assert_eq!(partial_decode(&y, &ckpt, 6).unwrap(), xh);
        assert!(partial_decode(&y, &ckpt, 0).is_err());
        assert!(drop_scale_decode(&y, &ckpt, 7).is_err());
    }

    #[test]
    fn zero_tokens_decode_to_finite_motion() {
        let ckpt = CodecCheckpoint::init(ScaleConfig::default(), 2).unwrap();
        let layout = ckpt.layout();
        let y = TokenSequence::from_flat(&layout, &vec![0; layout.total()]).unwrap();
        assert!(decode(&y, &ckpt).unwrap().frames().is_finite());
        let bad = TokenSequence::from_flat(
            &TokenLayout::new(layout.lengths.clone(), vec![600; 6]).unwrap(),
            &vec![599; layout.total()],
        )
        .unwrap();
        assert!(matches!(decode(&bad, &ckpt), Err(CodecError::TokenOutOfRange { .. })));
    }

    #[test]
    fn encoded_aggregate_matches_token_decode() {
        // The quantized path inside `forward` and the lookup path must agree.
        let ckpt = CodecCheckpoint::init(ScaleConfig::default(), 5).unwrap();
        let x = clip(1);
        let enc = encode_latent(&x, &ckpt).unwrap();
        let from_tokens = dequantize(enc.tokens.as_ref().unwrap(), &ckpt).unwrap();
        for (a, b) in enc.contributions.iter().zip(&from_tokens) {
            assert!(a.max_abs_diff(b).unwrap() < 1e-12);
        }
    }

    #[test]
    fn bypass_telescopes() {
        let ckpt = CodecCheckpoint::init(ScaleConfig::default().bypass(), 4).unwrap();
        let x = clip(2);
        let enc = encode_latent(&x, &ckpt).unwrap();
        assert!(enc.aggregate().max_abs_diff(enc.latents.last().unwrap()).unwrap() < 1e-12);
        let a = reconstruct(&x, &ckpt).unwrap();
        let b = plain_autoencode(&x, &ckpt).unwrap();
        assert!(a.frames().max_abs_diff(b.frames()).unwrap() < 1e-9);
        assert!(matches!(encode(&x, &ckpt), Err(CodecError::NoTokens)));
    }

    #[test]
    fn loss_vanishes_on_perfect_match() {
        let g = Graph::new();
        let x = g.constant(Tensor::from_fn(4, 3, |r, c| (r + c) as f64));
        let z = g.constant(Tensor::from_fn(2, 2, |r, c| (r * c) as f64));
        assert_eq!(codec_loss(x, x, &[z], &[z], 0.1).unwrap().item(), 0.0);
        let xh = g.constant(Tensor::zeros(&[4, 3]));
        let f = g.constant(Tensor::zeros(&[2, 2]));
        let recon_only = codec_loss(x, xh, &[z], &[f], 0.0).unwrap().item();
        assert_eq!(recon_only, x.mse(xh).unwrap().item());
    }
}
