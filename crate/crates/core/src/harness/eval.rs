use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{decode, drop_scale_decode, encode, partial_decode, reconstruct, CodecCheckpoint};
use crate::generator::{sample, GeneratorCheckpoint};
use crate::motiondata::{EditLabel, LabeledMotion, MotionClass, MotionSequence};
use crate::tasks::{compose_temporal, control_generate, edit, ControlRequest, EditRequest};

use super::config::ExperimentConfig;
use super::metrics::{
    feature_frechet, mpjpe, mpjpe_window, retrieval, trajectory_error, FeatureScaler, FeatureVector, NearestCentroid,
};
use super::report::EvalReport;
use super::HarnessError;

/// Features of clips after a codec round-trip, so real and generated motion
/// are compared after passing through the same decoder.
fn reconstructed_features<'a>(
    codec: &CodecCheckpoint,
    set: impl IntoIterator<Item = &'a MotionSequence>,
) -> Result<Vec<FeatureVector>, HarnessError> {
    set.into_iter()
        .map(|x| Ok(FeatureVector::of(&reconstruct(x, codec)?)))
        .collect()
}

/// MPJPE of the full reconstruction, of every prefix of scales and of every
/// single-scale removal, on held-out clips.
pub fn scale_ablation(
    codec: &CodecCheckpoint,
    test: &[MotionSequence],
    cfg: &ExperimentConfig,
) -> Result<EvalReport, HarnessError> {
    if test.is_empty() {
        return Err(HarnessError::Shape("no test clips".into()));
    }
    let mut report = EvalReport::new("scale-ablation", cfg.seed, cfg)?;
    let scales = codec.config.scale_count();
    for x in test {
        let y = encode(x, codec)?;
        let mut row = BTreeMap::new();
        row.insert("full".to_string(), mpjpe(x, &decode(&y, codec)?)?);
        for s in 1..=scales {
            row.insert(format!("partial_{s}"), mpjpe(x, &partial_decode(&y, codec, s)?)?);
            row.insert(format!("drop_{s}"), mpjpe(x, &drop_scale_decode(&y, codec, s)?)?);
        }
        report.per_sequence.push(row);
    }
    average_rows(&mut report);
    Ok(report)
}

/// Summary metric = mean of the per-sequence values.
fn average_rows(report: &mut EvalReport) {
    let n = report.per_sequence.len() as f64;
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for row in &report.per_sequence {
        for (k, v) in row {
            *sums.entry(k.clone()).or_default() += v;
        }
    }
    for (k, v) in sums {
        report.metric(k, v / n);
    }
}

/// Classifies conditional samples with a nearest-centroid classifier fitted on
/// reconstructed real clips. Sample `i` is drawn for class `i mod classes`.
pub fn conditional_accuracy(
    codec: &CodecCheckpoint,
    generator: &GeneratorCheckpoint,
    reference: &[LabeledMotion],
    cfg: &ExperimentConfig,
) -> Result<EvalReport, HarnessError> {
    let mut report = EvalReport::new("conditional", cfg.seed, cfg)?;
    let classes = MotionClass::ALL.len();
    let real_features = reconstructed_features(codec, reference.iter().map(|m| &m.motion))?;
    let scaler = FeatureScaler::fit(&real_features)?;
    let scaled: Vec<FeatureVector> = real_features.iter().map(|f| scaler.apply(f)).collect();
    let labels: Vec<usize> = reference.iter().map(|m| m.class.id()).collect();
    let classifier = NearestCentroid::fit(&scaled, &labels, classes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generated = Vec::with_capacity(cfg.eval.conditional_samples);
    let mut correct = 0usize;
    for i in 0..cfg.eval.conditional_samples {
        let class = i % classes;
        let y = sample(generator, class, None, cfg.sample, &mut rng)?;
        let x = decode(&y, codec)?;
        let f = FeatureVector::of(&x);
        let predicted = classifier.predict(&scaler.apply(&f));
        correct += usize::from(predicted == class);
        report.per_sequence.push(BTreeMap::from([
            ("class".to_string(), class as f64),
            ("predicted".to_string(), predicted as f64),
        ]));
        generated.push(f);
    }
    let n = cfg.eval.conditional_samples.max(1) as f64;
    report
        .metric("accuracy", correct as f64 / n)
        .metric("chance", 1.0 / classes as f64);
    if generated.len() > generated.first().map_or(0, FeatureVector::dim) && real_features.len() > generated.len() {
        let g: Vec<FeatureVector> = generated.iter().map(|f| scaler.apply(f)).collect();
        report.metric("frechet", feature_frechet(&g, &scaled[..g.len()])?);
    }
    Ok(report)
}

/// Pelvis trajectory error of trajectory-controlled samples against the same
/// error for unconditioned samples, paired per target.
pub fn control_adherence(
    codec: &CodecCheckpoint,
    generator: &GeneratorCheckpoint,
    targets: &[LabeledMotion],
    cfg: &ExperimentConfig,
) -> Result<EvalReport, HarnessError> {
    if targets.is_empty() {
        return Err(HarnessError::Shape("no control targets".into()));
    }
    let null = generator
        .config
        .null_condition
        .ok_or_else(|| HarnessError::Config("control evaluation needs a generator with a null label".into()))?;
    let mut report = EvalReport::new("control", cfg.seed, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for target in targets {
        let req = ControlRequest::from_motion(&target.motion, None)?;
        let controlled = control_generate(&req, codec, generator, cfg.sample, &mut rng)?;
        let free = decode(&sample(generator, null, None, cfg.sample, &mut rng)?, codec)?;
        report.per_sequence.push(BTreeMap::from([
            (
                "controlled".to_string(),
                trajectory_error(&target.motion, &controlled.motion)?,
            ),
            ("unconditioned".to_string(), trajectory_error(&target.motion, &free)?),
        ]));
    }
    average_rows(&mut report);
    let ratio = report.get("controlled").unwrap_or(f64::NAN) / report.get("unconditioned").unwrap_or(f64::NAN);
    report.metric("ratio", ratio);
    Ok(report)
}

/// Generated-to-target retrieval of edited clips, plus the share of source
/// tokens an identity edit reproduces.
pub fn edit_retrieval(
    codec: &CodecCheckpoint,
    editor: &GeneratorCheckpoint,
    pairs: &[LabeledMotion],
    cfg: &ExperimentConfig,
) -> Result<EvalReport, HarnessError> {
    let mut report = EvalReport::new("edit", cfg.seed, cfg)?;
    let mut queries = Vec::with_capacity(pairs.len());
    let mut gallery = Vec::with_capacity(pairs.len());
    let mut agreement = 0.0;
    for m in pairs {
        let pair = m
            .edit
            .as_ref()
            .ok_or_else(|| HarnessError::Config("edit bundle item without an edit pair".into()))?;
        let source = encode(&pair.source, codec)?;
        let edited = edit(
            &EditRequest {
                source: source.clone(),
                label: pair.label.id(),
                source_mask: None,
            },
            editor,
        )?;
        queries.push(FeatureVector::of(&decode(&edited, codec)?));
        gallery.push(reconstructed_features(codec, [&pair.target])?.remove(0));
        let identity = edit(
            &EditRequest {
                source: source.clone(),
                label: EditLabel::Identity.id(),
                source_mask: None,
            },
            editor,
        )?;
        let same = source
            .flat()
            .iter()
            .zip(identity.flat())
            .filter(|(a, b)| **a == *b)
            .count();
        let share = same as f64 / source.len() as f64;
        agreement += share;
        report
            .per_sequence
            .push(BTreeMap::from([("identity_agreement".to_string(), share)]));
    }
    let scaler = FeatureScaler::fit(&gallery)?;
    let q: Vec<FeatureVector> = queries.iter().map(|f| scaler.apply(f)).collect();
    let g: Vec<FeatureVector> = gallery.iter().map(|f| scaler.apply(f)).collect();
    let r = retrieval(&q, &g, &cfg.eval.retrieval_ranks)?;
    for (row, rank) in report.per_sequence.iter_mut().zip(&r.ranks) {
        row.insert("rank".into(), *rank as f64);
    }
    for (k, v) in &r.recall {
        report.metric(format!("r@{k}"), *v);
    }
    report
        .metric("avg_rank", r.avg_rank)
        .metric("chance", 1.0 / pairs.len() as f64)
        .metric("identity_agreement", agreement / pairs.len() as f64);
    Ok(report)
}

/// Splices consecutive pairs of clips at `fraction` and checks that each
/// decoded window stays closer to the clip it came from.
pub fn composition_locality(
    codec: &CodecCheckpoint,
    clips: &[MotionSequence],
    cfg: &ExperimentConfig,
) -> Result<EvalReport, HarnessError> {
    let count = cfg.eval.compositions;
    if clips.len() < 2 * count || count == 0 {
        return Err(HarnessError::Shape(format!(
            "{count} compositions need {} clips, got {}",
            2 * count,
            clips.len()
        )));
    }
    let fraction = cfg.eval.composition_fraction;
    let mut report = EvalReport::new("compose", cfg.seed, cfg)?;
    let frames = codec.config.frames;
    let cut = ((fraction * frames as f64).round() as usize).clamp(1, frames - 1);
    let mut local = 0usize;
    for i in 0..count {
        let y1 = encode(&clips[2 * i], codec)?;
        let y2 = encode(&clips[2 * i + 1], codec)?;
        let (d1, d2) = (decode(&y1, codec)?, decode(&y2, codec)?);
        let mixed = decode(&compose_temporal(&y1, &y2, fraction)?, codec)?;
        let first = (mpjpe_window(&mixed, &d1, 0, cut)?, mpjpe_window(&mixed, &d2, 0, cut)?);
        let second = (
            mpjpe_window(&mixed, &d1, cut, frames)?,
            mpjpe_window(&mixed, &d2, cut, frames)?,
        );
        let ok = first.0 < first.1 && second.1 < second.0;
        local += usize::from(ok);
        report.per_sequence.push(BTreeMap::from([
            ("first_to_y1".to_string(), first.0),
            ("first_to_y2".to_string(), first.1),
            ("second_to_y1".to_string(), second.0),
            ("second_to_y2".to_string(), second.1),
            ("local".to_string(), f64::from(u8::from(ok))),
        ]));
    }
    report.metric("locality", local as f64 / count as f64);
    Ok(report)
}
