#![allow(dead_code)]

use mstok::codec::{encode_tokens, CodecCheckpoint, TokenLayout, TokenSequence};
use mstok::generator::GeneratorCheckpoint;
use mstok::harness::{
    build_benchmark_sized, train_codec_stage, train_edit_stage, train_generator_stage, Benchmark, BenchmarkSizes,
    ExperimentConfig,
};
use mstok::motiondata::{encode_motion, MotionSequence, DEFAULT_FPS, FEATURE_DIM};
use mstok::numerics::Tensor;
use rand::Rng;

/// Random finite motion with `frames` frames.
pub fn random_motion(rng: &mut impl Rng, frames: usize) -> MotionSequence {
    let t = Tensor::from_fn(frames, FEATURE_DIM, |_, _| rng.gen_range(-2.0..2.0));
    MotionSequence::new(t, DEFAULT_FPS).unwrap()
}

/// Malformed motion and token files, each with the error code it must produce.
pub fn malformed_corpus() -> Vec<(&'static str, Vec<u8>, &'static str)> {
    let motion = encode_motion(&MotionSequence::new(Tensor::zeros(&[4, FEATURE_DIM]), DEFAULT_FPS).unwrap());
    let layout = TokenLayout::new(vec![2, 3], vec![8, 8]).unwrap();
    let tokens = encode_tokens(&layout, &TokenSequence::new(vec![vec![1, 2], vec![3, 4, 5]])).unwrap();
    let patch = |base: &[u8], at: usize, bytes: &[u8]| {
        let mut b = base.to_vec();
        b[at..at + bytes.len()].copy_from_slice(bytes);
        b
    };
    let mut trailing = tokens.clone();
    trailing.extend_from_slice(&[0, 0, 0, 0]);
    vec![
        ("motion: empty file", Vec::new(), "bad-magic"),
        ("motion: wrong magic", patch(&motion, 0, b"MSQX"), "bad-magic"),
        (
            "motion: future version",
            patch(&motion, 4, &2u16.to_le_bytes()),
            "version-mismatch",
        ),
        ("motion: header cut short", motion[..10].to_vec(), "truncated"),
        (
            "motion: wrong joint count",
            patch(&motion, 10, &21u16.to_le_bytes()),
            "invalid-header",
        ),
        (
            "motion: payload short",
            motion[..motion.len() - 4].to_vec(),
            "truncated",
        ),
        ("tokens: wrong magic", patch(&tokens, 0, b"MSQM"), "bad-magic"),
        (
            "tokens: future version",
            patch(&tokens, 4, &7u16.to_le_bytes()),
            "version-mismatch",
        ),
        (
            "tokens: zero scales",
            patch(&tokens, 6, &0u16.to_le_bytes()),
            "invalid-header",
        ),
        ("tokens: trailing bytes", trailing, "length-mismatch"),
    ]
}

pub struct Toy {
    pub config: ExperimentConfig,
    pub bench: Benchmark,
    pub codec: CodecCheckpoint,
    pub generator: GeneratorCheckpoint,
    pub editor: GeneratorCheckpoint,
}

/// Tiny configuration that trains in well under a second.
pub fn toy_config() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed: 11,
        data: BenchmarkSizes {
            codec_train: 16,
            codec_test: 8,
            generator_train: 16,
            edit_train: 16,
            edit_pairs: 8,
            control: 4,
            frames: 32,
        },
        ..Default::default()
    };
    c.codec.hidden = 8;
    c.codec.latent_dim = 6;
    c.codec_train.epochs = 1;
    c.generator.width = 16;
    c.generator.heads = 2;
    c.generator.blocks = 1;
    c.generator.ffn = 16;
    c.generator_train.epochs = 1;
    c.edit_train.epochs = 1;
    c.eval.conditional_samples = 8;
    c.eval.compositions = 4;
    c
}

pub fn toy() -> Toy {
    let config = toy_config();
    let bench = build_benchmark_sized(config.seed, config.data).unwrap();
    let codec = train_codec_stage(&bench.codec_train, &config, |_, _| {}).unwrap();
    let generator = train_generator_stage(&codec, &bench.generator_train, &config, |_, _| {}).unwrap();
    let editor = train_edit_stage(&codec, &bench.edit_train, &config).unwrap();
    Toy {
        config,
        bench,
        codec,
        generator,
        editor,
    }
}
