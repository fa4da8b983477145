//! Acceptance suite. Prints one line per criterion and exits non-zero if any fails.
//!
//! Trained checkpoints are cached under the cargo target directory, keyed by a
//! fingerprint of the configuration that produced them. Set
//! `MSTOK_ACCEPTANCE_CACHE` to use another directory.

mod common;

use std::f64::consts::FRAC_PI_4;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mstok::codec::{
    clip_loss_var, decode_tokens, encode_tokens, load_codec, plain_autoencode, reconstruct, save_codec,
    CodecCheckpoint, ScaleConfig, TokenLayout, TokenSequence,
};
use mstok::fsq::{codebook_size, index_decode, index_encode, LevelSpec};
use mstok::generator::{
    gamma, load_generator, remask_count, sample, save_generator, GeneratorCheckpoint, SampleOptions,
};
use mstok::harness::{
    build_benchmark, composition_locality, conditional_accuracy, control_adherence, edit_retrieval, fingerprint,
    scale_ablation, train_codec_stage, train_edit_stage, train_generator_stage, Benchmark, EvalReport,
    ExperimentConfig,
};
use mstok::motiondata::{decode_motion, encode_motion, MotionSequence, FEATURE_DIM};
use mstok::numerics::{
    finite_diff_check, init_normal, GradCheckOptions, Graph, NllItem, NumericsError, ParamSet, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

fn c1_fsq_bijection() -> Outcome {
    let start = Instant::now();
    let mut failures = 0;
    let mut checked = 0;
    for levels in [vec![3, 3, 2], vec![8, 8, 8]] {
        let spec = LevelSpec::new(&levels).unwrap();
        for index in 0..spec.size() as u32 {
            let tuple = index_decode(index, &spec).unwrap();
            failures += usize::from(index_encode(&tuple, &spec).unwrap() != index);
            checked += 1;
        }
    }
    let t = start.elapsed();
    outcome(
        failures == 0 && checked == 18 + 512 && within(t, Duration::from_secs(1)),
        format!("{checked} codes, {failures} failures, {t:.2?}"),
    )
}

fn c2_codebook_size() -> Outcome {
    let start = Instant::now();
    let size = codebook_size(&[8, 5, 5, 5]).unwrap();
    let t = start.elapsed();
    outcome(
        size == 1000 && within(t, Duration::from_millis(1)),
        format!("|C| = {size}, {t:.2?}"),
    )
}

type LossFn = Box<dyn for<'g> Fn(&'g Graph, &ParamSet) -> Result<Var<'g>, NumericsError>>;
type Model = Box<dyn Fn(u64) -> (ParamSet, LossFn, bool)>;

fn loss<F>(f: F) -> LossFn
where
    F: for<'g> Fn(&'g Graph, &ParamSet) -> Result<Var<'g>, NumericsError> + 'static,
{
    Box::new(f)
}

fn gradient_models() -> Vec<(&'static str, Model)> {
    let conv: Model = Box::new(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.insert("k1", init_normal(&mut rng, &[4, 3, 5], 0.4)).unwrap();
        p.insert("k2", init_normal(&mut rng, &[4, 5, 3], 0.4)).unwrap();
        let x = init_normal(&mut rng, &[12, 3], 1.0);
        let f = loss(move |g, p| {
            let input = g.constant(x.clone());
            let h = input.conv1d(g.param(p, "k1")?, 2, 1)?.gelu()?;
            let y = h.conv_transpose1d(g.param(p, "k2")?, 2, 1)?;
            y.mse(input)
        });
        (p, f, false)
    });
    let interp: Model = Box::new(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.insert("w", init_normal(&mut rng, &[3, 4], 0.5)).unwrap();
        let x = init_normal(&mut rng, &[7, 3], 1.0);
        let target = init_normal(&mut rng, &[11, 4], 1.0);
        let f = loss(move |g, p| {
            let h = g.constant(x.clone()).matmul(g.param(p, "w")?)?.interp(11)?.tanh()?;
            let down = h.interp(5)?;
            h.mse(g.constant(target.clone()))?.add(down.mul(down)?.mean()?)
        });
        (p, f, false)
    });
    let codec: Model = Box::new(|seed| {
        let mut config = ScaleConfig::preset(2, 8).unwrap();
        config.hidden = 3;
        config.latent_dim = 3;
        let ckpt = CodecCheckpoint::init(config, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(8, FEATURE_DIM, |_, _| rng.gen_range(-1.0..1.0));
        let params = ckpt.params.clone();
        let f = loss(move |g, p| {
            let mut local = ckpt.clone();
            local.params = p.clone();
            clip_loss_var(g, &local, &x, 0.1).map_err(|e| NumericsError::Shape(e.to_string()))
        });
        (params, f, true)
    });
    let nll: Model = Box::new(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.insert("w", init_normal(&mut rng, &[4, 6], 0.8)).unwrap();
        let x = init_normal(&mut rng, &[5, 4], 1.0);
        let items: Vec<NllItem> = (0..5)
            .filter(|r| r % 2 == 0 || seed % 2 == 0)
            .map(|row| NllItem {
                row,
                target: rng.gen_range(0..4),
                valid: 4 + row % 3,
            })
            .collect();
        let f = loss(move |g, p| g.constant(x.clone()).matmul(g.param(p, "w")?)?.masked_nll(&items));
        (p, f, false)
    });
    vec![("conv", conv), ("interp", interp), ("codec-loss", codec), ("nll", nll)]
}

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: (f64, &str, u64) = (0.0, "", 0);
    let mut failed = Vec::new();
    for (name, model) in gradient_models() {
        for seed in 0..10 {
            let (params, f, surrogate) = model(seed);
            let options = GradCheckOptions {
                surrogate,
                ..GradCheckOptions::default()
            };
            let report = finite_diff_check(&params, options, |g, p| f(g, p)).unwrap();
            if report.max_rel_error > worst.0 {
                worst = (report.max_rel_error, name, seed);
            }
            if !report.passed || report.max_rel_error >= 1e-4 {
                failed.push(format!("{name}/{seed}"));
            }
        }
    }
    let t = start.elapsed();
    outcome(
        failed.is_empty() && within(t, Duration::from_secs(30)),
        format!(
            "4 models x 10 seeds, worst rel err {:.2e} ({} seed {}), failures {:?}, {t:.2?}",
            worst.0, worst.1, worst.2, failed
        ),
    )
}

fn c4_telescoping() -> Outcome {
    let start = Instant::now();
    let ckpt = CodecCheckpoint::init(ScaleConfig::default().bypass(), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = common::random_motion(&mut rng, 64);
        let a = reconstruct(&x, &ckpt).unwrap();
        let b = plain_autoencode(&x, &ckpt).unwrap();
        for (p, q) in a.frames().data().iter().zip(b.frames().data()) {
            worst = worst.max((p - q).abs());
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-9 && within(t, Duration::from_secs(10)),
        format!("20 sequences, max |diff| {worst:.1e}, {t:.2?}"),
    )
}

fn c5_schedule() -> Outcome {
    let start = Instant::now();
    let g0 = gamma(0.0).unwrap();
    let g_half = gamma(0.5).unwrap();
    let mut ok = g0 == 1.0 && (g_half - FRAC_PI_4.cos()).abs() <= 1e-12;
    for k in [1, 5, 10] {
        for n in 0..=1000 {
            ok &= remask_count(k, k, n).unwrap() == 0;
        }
    }
    let r = remask_count(1, 5, 100).unwrap();
    ok &= r == 96;
    let t = start.elapsed();
    outcome(
        ok && within(t, Duration::from_secs(1)),
        format!("gamma(0) = {g0}, gamma(0.5) = {g_half:.15}, remask_count(1,5,100) = {r}, {t:.2?}"),
    )
}

fn c6_sampler(toy: &common::Toy) -> Outcome {
    let start = Instant::now();
    let gen = &toy.generator;
    let total = gen.layout.total();
    let mut failures = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial: Vec<Option<u32>> = (0..total)
            .map(|p| {
                let (s, _) = gen.layout.locate(p).unwrap();
                rng.gen_bool(0.3).then(|| rng.gen_range(0..gen.layout.vocab[s] as u32))
            })
            .collect();
        match sample(
            gen,
            seed as usize % 4,
            Some(&initial),
            SampleOptions::default(),
            &mut rng,
        ) {
            Ok(y) => {
                let flat = y.flat();
                let kept = initial.iter().zip(&flat).all(|(i, t)| i.is_none_or(|v| v == *t));
                failures += usize::from(!kept || flat.len() != total);
            }
            Err(_) => failures += 1,
        }
    }
    let t = start.elapsed();
    outcome(
        failures == 0 && within(t, Duration::from_secs(60)),
        format!("100 seeds, K = 5, {failures} failures, {t:.2?}"),
    )
}

fn c12_formats() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let frames = rng.gen_range(1..40);
        let x = common::random_motion(&mut rng, frames).to_single_precision();
        let bytes = encode_motion(&x);
        let back = decode_motion(&bytes).unwrap();
        mismatches += usize::from(back != x || encode_motion(&back) != bytes);

        let scales = rng.gen_range(1..8);
        let lengths: Vec<usize> = (0..scales).map(|_| rng.gen_range(1..60)).collect();
        let vocab: Vec<usize> = (0..scales).map(|_| rng.gen_range(1..70_000)).collect();
        let layout = TokenLayout::new(lengths.clone(), vocab.clone()).unwrap();
        let y = TokenSequence::new(
            lengths
                .iter()
                .zip(&vocab)
                .map(|(&n, &v)| (0..n).map(|_| rng.gen_range(0..v as u32)).collect())
                .collect(),
        );
        let bytes = encode_tokens(&layout, &y).unwrap();
        let (l, back) = decode_tokens(&bytes).unwrap();
        mismatches += usize::from(l != layout || back != y || encode_tokens(&l, &back).unwrap() != bytes);
    }
    let mut wrong = Vec::new();
    for (name, bytes, code) in common::malformed_corpus() {
        let got = if name.starts_with("tokens") {
            decode_tokens(&bytes).err().map(|e| e.code())
        } else {
            decode_motion(&bytes).err().map(|e| e.code())
        };
        if got != Some(code) {
            wrong.push(name);
        }
    }
    let t = start.elapsed();
    outcome(
        mismatches == 0 && wrong.is_empty() && within(t, Duration::from_secs(10)),
        format!("1000 motion + 1000 token files, {mismatches} mismatches; 10 malformed headers, wrong codes {wrong:?}; {t:.2?}"),
    )
}

/// Trained checkpoints for the desk-scale criteria.
struct Desk {
    cfg: ExperimentConfig,
    bench: Benchmark,
    codec: CodecCheckpoint,
    generator: GeneratorCheckpoint,
    editor: GeneratorCheckpoint,
}

fn cache_dir() -> PathBuf {
    let dir = std::env::var_os("MSTOK_ACCEPTANCE_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn cached<T>(
    path: PathBuf,
    load: impl Fn(&PathBuf) -> Option<T>,
    train: impl FnOnce() -> T,
    save: impl Fn(&PathBuf, &T),
) -> T {
    if let Some(found) = load(&path) {
        eprintln!("  using cached {}", path.display());
        return found;
    }
    let value = train();
    save(&path, &value);
    value
}

fn desk() -> Desk {
    let cfg = ExperimentConfig::default();
    let bench = build_benchmark(cfg.seed).unwrap();
    let dir = cache_dir();
    let codec_key = fingerprint(&(&cfg.seed, &cfg.data, &cfg.codec, &cfg.codec_train)).unwrap();
    let gen_key = fingerprint(&(&codec_key, &cfg.generator, &cfg.generator_train)).unwrap();
    let edit_key = fingerprint(&(&codec_key, &cfg.generator, &cfg.edit_train)).unwrap();
    let clock = Instant::now();
    let codec = cached(
        dir.join(format!("codec-{}.ckpt", &codec_key[..16])),
        |p| load_codec(p).ok(),
        || {
            eprintln!("  training codec on {} clips", bench.codec_train.len());
            train_codec_stage(&bench.codec_train, &cfg, |e, l| {
                eprintln!("    codec epoch {} loss {l:.5} ({:.0?})", e + 1, clock.elapsed())
            })
            .unwrap()
        },
        |p, c| save_codec(p, c).unwrap(),
    );
    let generator = cached(
        dir.join(format!("generator-{}.ckpt", &gen_key[..16])),
        |p| load_generator(p).ok(),
        || {
            eprintln!("  training generator on {} clips", bench.generator_train.len());
            train_generator_stage(&codec, &bench.generator_train, &cfg, |e, l| {
                eprintln!("    generator epoch {} loss {l:.4} ({:.0?})", e + 1, clock.elapsed())
            })
            .unwrap()
        },
        |p, g| save_generator(p, g).unwrap(),
    );
    let editor = cached(
        dir.join(format!("editor-{}.ckpt", &edit_key[..16])),
        |p| load_generator(p).ok(),
        || {
            eprintln!("  training editor on {} pairs", bench.edit_train.len());
            train_edit_stage(&codec, &bench.edit_train, &cfg).unwrap()
        },
        |p, g| save_generator(p, g).unwrap(),
    );
    Desk {
        cfg,
        bench,
        codec,
        generator,
        editor,
    }
}

fn metric(r: &EvalReport, name: &str) -> f64 {
    r.get(name).unwrap_or(f64::NAN)
}

fn c7_ablation(d: &Desk) -> Outcome {
    let test: Vec<MotionSequence> = d.bench.codec_test.iter().map(|m| m.motion.clone()).collect();
    let r = scale_ablation(&d.codec, &test, &d.cfg).unwrap();
    let partial: Vec<f64> = (1..=6).map(|s| metric(&r, &format!("partial_{s}"))).collect();
    let monotone = partial.windows(2).all(|w| w[1] <= w[0]);
    let (d1, d6) = (metric(&r, "drop_1"), metric(&r, "drop_6"));
    let curve: Vec<String> = partial.iter().map(|v| format!("{v:.1}")).collect();
    outcome(
        monotone && d1 > d6,
        format!(
            "{} held-out clips, MPJPE by s_max [{}] mm, drop(1) {d1:.1} vs drop(6) {d6:.1}",
            test.len(),
            curve.join(", ")
        ),
    )
}

fn c8_conditional(d: &Desk) -> Outcome {
    let r = conditional_accuracy(&d.codec, &d.generator, &d.bench.generator_train, &d.cfg).unwrap();
    let (acc, chance) = (metric(&r, "accuracy"), metric(&r, "chance"));
    outcome(
        acc >= 2.0 * chance,
        format!(
            "{} samples, accuracy {:.1}% vs chance {:.0}%",
            d.cfg.eval.conditional_samples,
            100.0 * acc,
            100.0 * chance
        ),
    )
}

fn c9_control(d: &Desk) -> Outcome {
    let r = control_adherence(&d.codec, &d.generator, &d.bench.control, &d.cfg).unwrap();
    let ratio = metric(&r, "ratio");
    outcome(
        ratio <= 0.5,
        format!(
            "{} trajectories, pelvis error {:.1} mm controlled vs {:.1} mm unconditioned, ratio {ratio:.3}",
            d.bench.control.len(),
            metric(&r, "controlled"),
            metric(&r, "unconditioned")
        ),
    )
}

fn c10_edit(d: &Desk) -> Outcome {
    let r = edit_retrieval(&d.codec, &d.editor, &d.bench.edit_pairs, &d.cfg).unwrap();
    let (r1, chance, agree) = (
        metric(&r, "r@1"),
        metric(&r, "chance"),
        metric(&r, "identity_agreement"),
    );
    outcome(
        r1 >= 3.0 * chance && agree >= 0.9,
        format!(
            "{} pairs, R@1 {:.1}% vs chance {:.2}% ({:.1}x), AvgR {:.1}, identity agreement {:.1}%",
            d.bench.edit_pairs.len(),
            100.0 * r1,
            100.0 * chance,
            r1 / chance,
            metric(&r, "avg_rank"),
            100.0 * agree
        ),
    )
}

fn c11_locality(d: &Desk) -> Outcome {
    let test: Vec<MotionSequence> = d.bench.codec_test.iter().map(|m| m.motion.clone()).collect();
    let r = composition_locality(&d.codec, &test, &d.cfg).unwrap();
    let local = metric(&r, "locality");
    outcome(
        local >= 0.9,
        format!(
            "{} compositions at fraction {}, local in {:.0}%",
            d.cfg.eval.compositions,
            d.cfg.eval.composition_fraction,
            100.0 * local
        ),
    )
}

fn report(number: usize, name: &str, run: impl FnOnce() -> Outcome, failed: &mut usize) {
    let start = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    *failed += usize::from(!result.passed);
    println!(
        "{} {number:>2} {name}: {} [{:.1?}]",
        if result.passed { "PASS" } else { "FAIL" },
        result.detail,
        start.elapsed()
    );
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--quiet`; a name filter limits the run.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |n: usize| filter.as_deref().is_none_or(|f| f == n.to_string() || f == "all");
    let mut failed = 0;
    println!("acceptance criteria");
    if wanted(1) {
        report(1, "fsq bijection", c1_fsq_bijection, &mut failed);
    }
    if wanted(2) {
        report(2, "codebook size", c2_codebook_size, &mut failed);
    }
    if wanted(3) {
        report(3, "gradient checks", c3_gradients, &mut failed);
    }
    if wanted(4) {
        report(4, "residual telescoping", c4_telescoping, &mut failed);
    }
    if wanted(5) {
        report(5, "schedule exactness", c5_schedule, &mut failed);
    }
    if wanted(6) {
        let toy = common::toy();
        report(6, "sampler termination", || c6_sampler(&toy), &mut failed);
    }
    if (7..=11).any(wanted) {
        let d = desk();
        if wanted(7) {
            report(7, "scale ablation ordering", || c7_ablation(&d), &mut failed);
        }
        if wanted(8) {
            report(8, "conditional generation", || c8_conditional(&d), &mut failed);
        }
        if wanted(9) {
            report(9, "control adherence", || c9_control(&d), &mut failed);
        }
        if wanted(10) {
            report(10, "edit retrieval", || c10_edit(&d), &mut failed);
        }
        if wanted(11) {
            report(11, "composition locality", || c11_locality(&d), &mut failed);
        }
    }
    if wanted(12) {
        report(12, "format round-trips", c12_formats, &mut failed);
    }
    if failed == 0 {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
