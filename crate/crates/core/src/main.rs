use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use mstok::codec::{
    decode, encode, load_codec, partial_decode, read_tokens, save_codec, write_tokens, CodecCheckpoint, CodecError,
    TokenFileError, TokenSequence,
};
use mstok::generator::{load_generator, sample, save_generator, GeneratorCheckpoint, GeneratorError};
use mstok::harness::{
    build_benchmark_sized, composition_locality, conditional_accuracy, control_adherence, edit_retrieval, read_bundle,
    scale_ablation, train_codec_stage, train_edit_stage, train_generator_stage, write_dataset, Bundle, EvalReport,
    ExperimentConfig, HarnessError,
};
use mstok::motiondata::{read_motion, write_motion, EditLabel, MotionClass, MotionFileError, MotionSequence};
use mstok::tasks::{
    compose_spatial, compose_temporal, control_generate, edit, inpaint, BodyRegion, ControlRequest, EditRequest,
    MaskSpec, TaskError, TemporalRegion, DEFAULT_INPAINT_FRACTION,
};

#[derive(Parser)]
#[command(
    name = "mstok",
    version,
    about = "Multi-scale motion tokenizer and masked-token generator"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set codec_train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic benchmark into a directory of motion files.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the codec on the codec-train bundle of a dataset.
    TrainCodec {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the masked-token generator on codec tokens of the generator-train bundle.
    TrainGen {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the single-pass editor on the edit-train pairs.
    TrainEdit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Motion file to token file.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Token file to motion file.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode using only the first `scales` scales.
    PartialDecode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scales: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Splice two token files, in time or by scale.
    Compose {
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        second: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum, default_value_t = ComposeMode::Temporal)]
        mode: ComposeMode,
        /// Cut point for temporal composition.
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        /// Scales taken from the first sequence in spatial composition.
        #[arg(long, default_value_t = 1)]
        split: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the composed tokens.
        #[arg(long)]
        tokens_out: Option<PathBuf>,
    },
    /// Generate motion following the pelvis trajectory of a motion file.
    Control {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        generator: PathBuf,
        #[arg(long)]
        class: Option<MotionClass>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply an edit label to a motion file.
    Edit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        editor: PathBuf,
        #[arg(long)]
        label: EditLabel,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate a masked time span or body region of a motion file.
    Inpaint {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        generator: PathBuf,
        #[arg(long, value_enum)]
        mask: MaskKind,
        #[arg(long, default_value_t = DEFAULT_INPAINT_FRACTION)]
        fraction: f64,
        #[arg(long)]
        class: Option<MotionClass>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a clip, conditioned on a class or unconditionally.
    Sample {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        generator: PathBuf,
        #[arg(long)]
        class: Option<MotionClass>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tokens_out: Option<PathBuf>,
    },
    /// Run an evaluation and write its report.
    Eval {
        #[arg(long, value_enum)]
        task: EvalTask,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        editor: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a saved report as a table.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ComposeMode {
    Temporal,
    Spatial,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskKind {
    Prefix,
    Suffix,
    InBetween,
    Upper,
    Lower,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalTask {
    ScaleAblation,
    Conditional,
    Control,
    Edit,
    Compose,
}

/// A failure with its exit code and machine-readable kind.
struct Failure {
    exit: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            exit: 2,
            kind: "usage",
            message: message.into(),
        }
    }

    fn not_found(path: &Path) -> Self {
        Self {
            exit: 2,
            kind: "input-not-found",
            message: format!("input not found: {}", path.display()),
        }
    }

    fn invariant(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            exit: 3,
            kind,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Self {
            exit: 1,
            kind: "io",
            message: message.into(),
        }
    }
}

impl From<MotionFileError> for Failure {
    fn from(e: MotionFileError) -> Self {
        match e {
            MotionFileError::Io(e) => Failure::io(e.to_string()),
            e => Failure::invariant(e.code(), e.to_string()),
        }
    }
}

impl From<TokenFileError> for Failure {
    fn from(e: TokenFileError) -> Self {
        match e {
            TokenFileError::Io(e) => Failure::io(e.to_string()),
            e => Failure::invariant(e.code(), e.to_string()),
        }
    }
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::TokenFile(e) => e.into(),
            e => Failure::invariant("codec", e.to_string()),
        }
    }
}

impl From<GeneratorError> for Failure {
    fn from(e: GeneratorError) -> Self {
        Failure::invariant("generator", e.to_string())
    }
}

impl From<TaskError> for Failure {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::Codec(e) => e.into(),
            e => Failure::invariant("task", e.to_string()),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::NotFound(path) => Failure {
                exit: 2,
                kind: "input-not-found",
                message: format!("input not found: {path}"),
            },
            HarnessError::Config(m) => Failure::usage(m),
            HarnessError::File { code, message, path } => Failure::invariant(code, format!("{path}: {message}")),
            HarnessError::Io(m) => Failure::io(m),
            HarnessError::Codec(e) => e.into(),
            HarnessError::Task(e) => e.into(),
            e => Failure::invariant("harness", e.to_string()),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn existing(path: &Path) -> Outcome<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Failure::not_found(path))
    }
}

fn load_config(common: &Common) -> Outcome<ExperimentConfig> {
    let text = match &common.config {
        Some(path) => fs::read_to_string(existing(path)?).map_err(|e| Failure::io(e.to_string()))?,
        None => String::new(),
    };
    Ok(ExperimentConfig::with_overrides(&text, &common.overrides)?)
}

fn motion_in(path: &Path) -> Outcome<MotionSequence> {
    Ok(read_motion(existing(path)?)?)
}

fn tokens_in(path: &Path, codec: &CodecCheckpoint) -> Outcome<TokenSequence> {
    let (layout, y) = read_tokens(existing(path)?)?;
    if layout != codec.layout() {
        return Err(Failure::invariant(
            "layout-mismatch",
            format!("{} was written for a different codec", path.display()),
        ));
    }
    Ok(y)
}

fn codec_in(path: &Path) -> Outcome<CodecCheckpoint> {
    Ok(load_codec(existing(path)?)?)
}

fn generator_in(path: &Path) -> Outcome<GeneratorCheckpoint> {
    Ok(load_generator(existing(path)?)?)
}

fn motion_out(path: &Path, x: &MotionSequence) -> Outcome {
    write_motion(path, x).map_err(Failure::from)
}

fn data_dir(path: &Path) -> Outcome<&Path> {
    existing(path)
}

fn progress(stage: &'static str) -> impl FnMut(usize, f64) {
    move |epoch, loss| eprintln!("{stage} epoch {} loss {loss:.5}", epoch + 1)
}

fn run(cli: Cli) -> Outcome {
    let cfg = load_config(&cli.common)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cli.command {
        Command::GenData { out } => {
            let bench = build_benchmark_sized(cfg.seed, cfg.data)?;
            write_dataset(&out, &bench)?;
            println!("wrote {} clips to {}", bench.manifest.len(), out.display());
        }
        Command::TrainCodec { data, out } => {
            let clips = read_bundle(data_dir(&data)?, Bundle::CodecTrain)?;
            let codec = train_codec_stage(&clips, &cfg, progress("codec"))?;
            save_codec(&out, &codec)?;
        }
        Command::TrainGen { data, codec, out } => {
            let codec = codec_in(&codec)?;
            let clips = read_bundle(data_dir(&data)?, Bundle::GeneratorTrain)?;
            let generator = train_generator_stage(&codec, &clips, &cfg, progress("generator"))?;
            save_generator(&out, &generator)?;
        }
        Command::TrainEdit { data, codec, out } => {
            let codec = codec_in(&codec)?;
            let pairs = read_bundle(data_dir(&data)?, Bundle::EditTrain)?;
            let editor = train_edit_stage(&codec, &pairs, &cfg)?;
            save_generator(&out, &editor)?;
        }
        Command::Encode { input, ckpt, out } => {
            let x = motion_in(&input)?;
            let codec = codec_in(&ckpt)?;
            write_tokens(&out, &codec.layout(), &encode(&x, &codec)?)?;
        }
        Command::Decode { input, ckpt, out } => {
            let codec = codec_in(&ckpt)?;
            let y = tokens_in(&input, &codec)?;
            motion_out(&out, &decode(&y, &codec)?)?;
        }
        Command::PartialDecode {
            input,
            ckpt,
            scales,
            out,
        } => {
            let codec = codec_in(&ckpt)?;
            let y = tokens_in(&input, &codec)?;
            motion_out(&out, &partial_decode(&y, &codec, scales)?)?;
        }
        Command::Compose {
            first,
            second,
            ckpt,
            mode,
            fraction,
            split,
            out,
            tokens_out,
        } => {
            let codec = codec_in(&ckpt)?;
            let y1 = tokens_in(&first, &codec)?;
            let y2 = tokens_in(&second, &codec)?;
            let y = match mode {
                ComposeMode::Temporal => compose_temporal(&y1, &y2, fraction)?,
                ComposeMode::Spatial => compose_spatial(&y1, &y2, split)?,
            };
            if let Some(path) = tokens_out {
                write_tokens(path, &codec.layout(), &y)?;
            }
            motion_out(&out, &decode(&y, &codec)?)?;
        }
        Command::Control {
            trajectory,
            codec,
            generator,
            class,
            out,
        } => {
            let x = motion_in(&trajectory)?;
            let codec = codec_in(&codec)?;
            let generator = generator_in(&generator)?;
            let req = ControlRequest::from_motion(&x, class.map(MotionClass::id))?;
            let result = control_generate(&req, &codec, &generator, cfg.sample, &mut rng)?;
            motion_out(&out, &result.motion)?;
        }
        Command::Edit {
            input,
            codec,
            editor,
            label,
            out,
        } => {
            let x = motion_in(&input)?;
            let codec = codec_in(&codec)?;
            let editor = generator_in(&editor)?;
            let req = EditRequest {
                source: encode(&x, &codec)?,
                label: label.id(),
                source_mask: None,
            };
            motion_out(&out, &decode(&edit(&req, &editor)?, &codec)?)?;
        }
        Command::Inpaint {
            input,
            codec,
            generator,
            mask,
            fraction,
            class,
            out,
        } => {
            let x = motion_in(&input)?;
            let codec = codec_in(&codec)?;
            let generator = generator_in(&generator)?;
            let temporal = |region| MaskSpec::Temporal { region, fraction };
            let spec = match mask {
                MaskKind::Prefix => temporal(TemporalRegion::Prefix),
                MaskKind::Suffix => temporal(TemporalRegion::Suffix),
                MaskKind::InBetween => temporal(TemporalRegion::InBetween),
                MaskKind::Upper => MaskSpec::Spatial(BodyRegion::Upper),
                MaskKind::Lower => MaskSpec::Spatial(BodyRegion::Lower),
            };
            let result = inpaint(
                &x,
                &spec,
                &codec,
                &generator,
                class.map(MotionClass::id),
                cfg.sample,
                &mut rng,
            )?;
            motion_out(&out, &result.motion)?;
        }
        Command::Sample {
            codec,
            generator,
            class,
            out,
            tokens_out,
        } => {
            let codec = codec_in(&codec)?;
            let generator = generator_in(&generator)?;
            let condition = match class.map(MotionClass::id).or(generator.config.null_condition) {
                Some(c) => c,
                None => return Err(Failure::usage("this generator needs --class")),
            };
            let y = sample(&generator, condition, None, cfg.sample, &mut rng)?;
            if let Some(path) = tokens_out {
                write_tokens(path, &codec.layout(), &y)?;
            }
            motion_out(&out, &decode(&y, &codec)?)?;
        }
        Command::Eval {
            task,
            data,
            codec,
            generator,
            editor,
            out,
        } => {
            let dir = data_dir(&data)?;
            let codec = codec_in(&codec)?;
            let need = |path: Option<PathBuf>, flag: &str| -> Outcome<GeneratorCheckpoint> {
                generator_in(&path.ok_or_else(|| Failure::usage(format!("this task needs --{flag}")))?)
            };
            let motions = |bundle| -> Outcome<Vec<MotionSequence>> {
                Ok(read_bundle(dir, bundle)?.into_iter().map(|m| m.motion).collect())
            };
            let report: EvalReport = match task {
                EvalTask::ScaleAblation => scale_ablation(&codec, &motions(Bundle::CodecTest)?, &cfg)?,
                EvalTask::Compose => composition_locality(&codec, &motions(Bundle::CodecTest)?, &cfg)?,
                EvalTask::Conditional => {
                    let generator = need(generator, "generator")?;
                    conditional_accuracy(&codec, &generator, &read_bundle(dir, Bundle::GeneratorTrain)?, &cfg)?
                }
                EvalTask::Control => {
                    let generator = need(generator, "generator")?;
                    control_adherence(&codec, &generator, &read_bundle(dir, Bundle::Control)?, &cfg)?
                }
                EvalTask::Edit => {
                    let editor = need(editor, "editor")?;
                    edit_retrieval(&codec, &editor, &read_bundle(dir, Bundle::EditPairs)?, &cfg)?
                }
            };
            print!("{}", report.table());
            if let Some(path) = out {
                fs::write(path, report.to_lines()).map_err(|e| Failure::io(e.to_string()))?;
            }
        }
        Command::Report { input } => {
            let text = fs::read_to_string(existing(&input)?).map_err(|e| Failure::io(e.to_string()))?;
            print!("{}", EvalReport::from_lines(&text)?.table());
        }
    }
    Ok(())
}

fn fail(f: &Failure) -> ExitCode {
    eprintln!("{}", json!({"error": f.kind, "exit": f.exit, "message": f.message}));
    ExitCode::from(f.exit)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return fail(&Failure::usage(e.kind().to_string()));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(&f),
    }
}
