use serde::{Deserialize, Serialize};

use crate::motiondata::{synth_edit_pair, synth_generate, EditLabel, LabeledMotion, MotionClass};

use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bundle {
    CodecTrain,
    CodecTest,
    GeneratorTrain,
    EditTrain,
    EditPairs,
    Control,
}

impl Bundle {
    pub const ALL: [Bundle; 6] = [
        Bundle::CodecTrain,
        Bundle::CodecTest,
        Bundle::GeneratorTrain,
        Bundle::EditTrain,
        Bundle::EditPairs,
        Bundle::Control,
    ];

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSizes {
    pub codec_train: usize,
    pub codec_test: usize,
    pub generator_train: usize,
    pub edit_train: usize,
    pub edit_pairs: usize,
    pub control: usize,
    pub frames: usize,
}

impl Default for BenchmarkSizes {
    fn default() -> Self {
        Self {
            codec_train: 2000,
            codec_test: 200,
            generator_train: 2000,
            edit_train: 2000,
            edit_pairs: 500,
            control: 100,
            frames: 64,
        }
    }
}

impl BenchmarkSizes {
    fn of(&self, bundle: Bundle) -> usize {
        match bundle {
            Bundle::CodecTrain => self.codec_train,
            Bundle::CodecTest => self.codec_test,
            Bundle::GeneratorTrain => self.generator_train,
            Bundle::EditTrain => self.edit_train,
            Bundle::EditPairs => self.edit_pairs,
            Bundle::Control => self.control,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub bundle: Bundle,
    pub index: usize,
    pub class: MotionClass,
    pub seed: u64,
    pub edit: Option<EditLabel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub seed: u64,
    pub sizes: BenchmarkSizes,
    pub manifest: Vec<ManifestEntry>,
    pub codec_train: Vec<LabeledMotion>,
    pub codec_test: Vec<LabeledMotion>,
    pub generator_train: Vec<LabeledMotion>,
    pub edit_train: Vec<LabeledMotion>,
    pub edit_pairs: Vec<LabeledMotion>,
    pub control: Vec<LabeledMotion>,
}

impl Benchmark {
    pub fn bundle(&self, bundle: Bundle) -> &[LabeledMotion] {
        match bundle {
            Bundle::CodecTrain => &self.codec_train,
            Bundle::CodecTest => &self.codec_test,
            Bundle::GeneratorTrain => &self.generator_train,
            Bundle::EditTrain => &self.edit_train,
            Bundle::EditPairs => &self.edit_pairs,
            Bundle::Control => &self.control,
        }
    }
}

/// Per-item seed. The bundle tag sits in the high bits, so bundles never share a seed.
pub fn item_seed(seed: u64, bundle: Bundle, index: usize) -> u64 {
    (((seed << 8) ^ bundle.tag()) << 32) ^ index as u64
}

/// Manifest entries without rendering any motion. Classes and edit labels
/// cycle so every bundle is balanced whenever its size is a multiple of four.
pub fn manifest(seed: u64, sizes: &BenchmarkSizes) -> Vec<ManifestEntry> {
    let mut out = Vec::new();
    for bundle in Bundle::ALL {
        for index in 0..sizes.of(bundle) {
            let class = MotionClass::ALL[index % MotionClass::ALL.len()];
            let edit = matches!(bundle, Bundle::EditTrain | Bundle::EditPairs)
                .then(|| EditLabel::ALL[(index / MotionClass::ALL.len()) % EditLabel::ALL.len()]);
            out.push(ManifestEntry {
                bundle,
                index,
                class,
                seed: item_seed(seed, bundle, index),
                edit,
            });
        }
    }
    out
}

pub fn render_entry(entry: &ManifestEntry, frames: usize) -> Result<LabeledMotion, HarnessError> {
    Ok(match entry.edit {
        Some(label) => synth_edit_pair(entry.class, frames, entry.seed, label)?,
        None => synth_generate(entry.class, frames, entry.seed)?,
    })
}

pub fn build_benchmark(seed: u64) -> Result<Benchmark, HarnessError> {
    build_benchmark_sized(seed, BenchmarkSizes::default())
}

pub fn build_benchmark_sized(seed: u64, sizes: BenchmarkSizes) -> Result<Benchmark, HarnessError> {
    let manifest = manifest(seed, &sizes);
    let render = |bundle: Bundle| -> Result<Vec<LabeledMotion>, HarnessError> {
        manifest
            .iter()
            .filter(|e| e.bundle == bundle)
            .map(|e| render_entry(e, sizes.frames))
            .collect()
    };
    Ok(Benchmark {
        seed,
        sizes,
        codec_train: render(Bundle::CodecTrain)?,
        codec_test: render(Bundle::CodecTest)?,
        generator_train: render(Bundle::GeneratorTrain)?,
        edit_train: render(Bundle::EditTrain)?,
        edit_pairs: render(Bundle::EditPairs)?,
        control: render(Bundle::Control)?,
        manifest,
    })
}
