mod common;

use mstok::codec::{decode, encode};
use mstok::generator::{sample, SampleOptions};
use mstok::harness::{composition_locality, conditional_accuracy, control_adherence, edit_retrieval, scale_ablation};
use mstok::tasks::{
    compose_spatial, compose_temporal, control_generate, edit, inpaint, inpaint_positions, BodyRegion, ControlRequest,
    EditRequest, MaskSpec, TemporalRegion,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn toy_pipeline_tasks_and_reports() {
    let toy = common::toy();
    let (codec, generator, editor, cfg) = (&toy.codec, &toy.generator, &toy.editor, &toy.config);
    let x = &toy.bench.control[0].motion;
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    // Control keeps the trajectory's first-scale tokens.
    let req = ControlRequest::from_motion(x, None).unwrap();
    let out = control_generate(&req, codec, generator, SampleOptions::default(), &mut rng).unwrap();
    let reference = encode(&trajectory_of(&req), codec).unwrap();
    assert_eq!(out.tokens.scale(0), reference.scale(0));
    assert_eq!(out.motion.len(), x.len());

    // Inpainting leaves visible tokens untouched.
    let spec = MaskSpec::Temporal {
        region: TemporalRegion::Suffix,
        fraction: 0.5,
    };
    let visible = encode(&mstok::tasks::blank_region(x, codec, &spec).unwrap(), codec)
        .unwrap()
        .flat();
    let hidden = inpaint_positions(codec, &spec).unwrap();
    let filled = inpaint(x, &spec, codec, generator, Some(1), SampleOptions::default(), &mut rng).unwrap();
    for (p, (a, b)) in visible.iter().zip(filled.tokens.flat()).enumerate() {
        if !hidden.contains(&p) {
            assert_eq!(*a, b, "position {p}");
        }
    }
    let upper = inpaint(
        x,
        &MaskSpec::Spatial(BodyRegion::Upper),
        codec,
        generator,
        None,
        SampleOptions::default(),
        &mut rng,
    )
    .unwrap();
    assert_eq!(upper.tokens.scale(0), encode(x, codec).unwrap().scale(0));

    // Editing is a single forward pass.
    let before = editor.forward_calls();
    let source = encode(x, codec).unwrap();
    let edited = edit(
        &EditRequest {
            source: source.clone(),
            label: 1,
            source_mask: None,
        },
        editor,
    )
    .unwrap();
    assert_eq!(editor.forward_calls(), before + 1);
    assert_eq!(edited.lengths(), source.lengths());

    // Composition needs tokens only.
    let y2 = sample(generator, 0, None, SampleOptions::default(), &mut rng).unwrap();
    assert_eq!(compose_temporal(&source, &y2, 0.5).unwrap().lengths(), source.lengths());
    assert_eq!(compose_spatial(&source, &y2, 2).unwrap().scale(0), source.scale(0));
    decode(&compose_temporal(&source, &y2, 0.25).unwrap(), codec).unwrap();

    // Every evaluation reproduces bit-identically.
    let test: Vec<_> = toy.bench.codec_test.iter().map(|m| m.motion.clone()).collect();
    let runs = || {
        vec![
            scale_ablation(codec, &test, cfg).unwrap(),
            composition_locality(codec, &test, cfg).unwrap(),
            conditional_accuracy(codec, generator, &toy.bench.generator_train, cfg).unwrap(),
            control_adherence(codec, generator, &toy.bench.control, cfg).unwrap(),
            edit_retrieval(codec, editor, &toy.bench.edit_pairs, cfg).unwrap(),
        ]
    };
    let first = runs();
    let second = runs();
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(a.to_lines(), b.to_lines(), "{}", a.task);
    }
    let ablation = &first[0];
    for s in 1..=codec.config.scale_count() {
        assert!(ablation.get(&format!("partial_{s}")).unwrap().is_finite());
    }
    assert_eq!(ablation.get("partial_6"), ablation.get("full"));
}

fn trajectory_of(req: &ControlRequest) -> mstok::motiondata::MotionSequence {
    mstok::tasks::trajectory_motion(&req.trajectory).unwrap()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt().max(1e-12)
}

fn planar_path(x: &mstok::motiondata::MotionSequence) -> Vec<f64> {
    (0..x.len())
        .flat_map(|t| {
            let [px, _, pz] = x.root_translation(t);
            [px, pz]
        })
        .collect()
}

#[test]
fn spatial_split_after_scale_one_follows_first_trajectory() {
    use mstok::codec::{train_codec, CodecTrainConfig};
    use mstok::harness::{build_benchmark_sized, BenchmarkSizes};

    let sizes = BenchmarkSizes {
        codec_train: 800,
        codec_test: 24,
        generator_train: 1,
        edit_train: 1,
        edit_pairs: 1,
        control: 1,
        frames: 32,
    };
    let bench = build_benchmark_sized(21, sizes).unwrap();
    let train: Vec<_> = bench.codec_train.iter().map(|m| m.motion.clone()).collect();
    let mut config = mstok::codec::ScaleConfig::preset(6, 32).unwrap();
    config.hidden = 32;
    config.latent_dim = 16;
    let schedule = CodecTrainConfig {
        epochs: 10,
        max_lr: 3e-3,
        min_lr: 3e-4,
        scale_dropout: 0.5,
        ..Default::default()
    };
    let codec = train_codec(&train, config, &schedule, 21).unwrap();

    let test = &bench.codec_test;
    let mut closer = 0;
    for pair in test.chunks(2) {
        let (y1, y2) = (
            encode(&pair[0].motion, &codec).unwrap(),
            encode(&pair[1].motion, &codec).unwrap(),
        );
        let mixed = planar_path(&decode(&compose_spatial(&y1, &y2, 1).unwrap(), &codec).unwrap());
        let r1 = pearson(&mixed, &planar_path(&decode(&y1, &codec).unwrap()));
        let r2 = pearson(&mixed, &planar_path(&decode(&y2, &codec).unwrap()));
        closer += usize::from(r1 > r2);
    }
    assert!(
        closer * 4 >= test.len() / 2 * 3,
        "{closer} of {} pairs follow the first trajectory",
        test.len() / 2
    );
}
