//! Procedural labeled motions.
//!
//! Every part group is rendered from its own parameter block, so an edit that
//! changes one block leaves the other groups' feature columns bit-identical.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

use super::sequence::{MotionSequence, DEFAULT_FPS};
use super::skeleton::{PartGroup, Skeleton, FEATURE_DIM};
use super::MotionError;

pub const MIN_FRAMES: usize = 16;
const PELVIS_HEIGHT: f64 = 0.92;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MotionClass {
    Walk,
    Turn,
    Wave,
    Squat,
}

impl MotionClass {
    pub const ALL: [MotionClass; 4] = [
        MotionClass::Walk,
        MotionClass::Turn,
        MotionClass::Wave,
        MotionClass::Squat,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self, MotionError> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or(MotionError::UnknownClass(id.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionClass::Walk => "walk",
            MotionClass::Turn => "turn",
            MotionClass::Wave => "wave",
            MotionClass::Squat => "squat",
        }
    }
}

impl fmt::Display for MotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionClass {
    type Err = MotionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| MotionError::UnknownClass(s.to_string()))
    }
}

/// Edit instructions. `Identity` leaves the motion unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EditLabel {
    Identity,
    RaiseArms,
    KickHigher,
    LeanForward,
}

impl EditLabel {
    pub const ALL: [EditLabel; 4] = [
        EditLabel::Identity,
        EditLabel::RaiseArms,
        EditLabel::KickHigher,
        EditLabel::LeanForward,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self, MotionError> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or(MotionError::UnknownEdit(id.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            EditLabel::Identity => "identity",
            EditLabel::RaiseArms => "raise-arms",
            EditLabel::KickHigher => "kick-higher",
            EditLabel::LeanForward => "lean-forward",
        }
    }

    /// The only part group whose features the edit changes.
    pub fn target_group(self) -> Option<PartGroup> {
        match self {
            EditLabel::Identity => None,
            EditLabel::RaiseArms => Some(PartGroup::Arms),
            EditLabel::KickHigher => Some(PartGroup::Legs),
            EditLabel::LeanForward => Some(PartGroup::Torso),
        }
    }
}

impl FromStr for EditLabel {
    type Err = MotionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| MotionError::UnknownEdit(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditPair {
    pub source: MotionSequence,
    pub target: MotionSequence,
    pub label: EditLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMotion {
    pub motion: MotionSequence,
    pub class: MotionClass,
    pub edit: Option<EditPair>,
}

#[derive(Clone, Debug)]
enum PelvisPath {
    Straight { speed: f64 },
    Arc { speed: f64, turn_rate: f64 },
    Still { sway: f64, sway_freq: f64 },
    Squat { depth: f64, freq: f64 },
}

#[derive(Clone, Debug)]
struct PelvisParams {
    start: [f64; 2],
    heading: f64,
    path: PelvisPath,
    bob: f64,
    bob_freq: f64,
}

#[derive(Clone, Debug)]
struct LegParams {
    swing: f64,
    knee: f64,
    freq: f64,
    phase: f64,
    /// Static forward thigh flexion paired with the pelvis squat, as a signal in [0, 1].
    squat_depth: f64,
    squat_freq: f64,
}

#[derive(Clone, Debug)]
struct ArmParams {
    swing: f64,
    freq: f64,
    phase: f64,
    raise: [f64; 2],
    wave_arm: Option<usize>,
    wave_amp: f64,
    wave_freq: f64,
    forward: f64,
    forward_freq: f64,
}

#[derive(Clone, Debug)]
struct TorsoParams {
    lean: f64,
    sway: f64,
    freq: f64,
    phase: f64,
}

#[derive(Clone, Debug)]
struct HeadParams {
    nod: f64,
    freq: f64,
    phase: f64,
}

#[derive(Clone, Debug)]
struct BodyParams {
    pelvis: PelvisParams,
    legs: LegParams,
    arms: ArmParams,
    torso: TorsoParams,
    head: HeadParams,
}

fn sample_params(class: MotionClass, rng: &mut ChaCha8Rng) -> BodyParams {
    // Clips are canonicalised: they start at the origin facing +z.
    let start = [0.0, 0.0];
    let heading = 0.0;
    let step_freq = rng.gen_range(0.8..1.1);
    let step_phase = rng.gen_range(0.0..TAU);
    let pelvis_path = match class {
        MotionClass::Walk => PelvisPath::Straight {
            speed: rng.gen_range(1.0..1.4),
        },
        MotionClass::Turn => {
            let rate = rng.gen_range(0.7..1.2);
            PelvisPath::Arc {
                speed: rng.gen_range(0.6..0.9),
                turn_rate: if rng.gen_bool(0.5) { rate } else { -rate },
            }
        }
        MotionClass::Wave => PelvisPath::Still {
            sway: rng.gen_range(0.002..0.006),
            sway_freq: rng.gen_range(0.3..0.6),
        },
        MotionClass::Squat => PelvisPath::Squat {
            depth: rng.gen_range(0.2..0.35),
            freq: rng.gen_range(0.4..0.7),
        },
    };
    let moving = matches!(class, MotionClass::Walk | MotionClass::Turn);
    let (squat_depth, squat_freq) = match pelvis_path {
        PelvisPath::Squat { depth, freq } => (depth, freq),
        _ => (0.0, 0.0),
    };
    let pelvis = PelvisParams {
        start,
        heading,
        path: pelvis_path,
        bob: if moving { rng.gen_range(0.01..0.03) } else { 0.0 },
        bob_freq: 2.0 * step_freq,
    };
    let legs = LegParams {
        swing: if moving {
            rng.gen_range(0.35..0.55)
        } else {
            rng.gen_range(0.0..0.03)
        },
        knee: if moving { rng.gen_range(0.3..0.6) } else { 0.0 },
        freq: step_freq,
        phase: step_phase,
        squat_depth,
        squat_freq,
    };
    let wave_arm = (class == MotionClass::Wave).then(|| rng.gen_range(0..2usize));
    let arms = ArmParams {
        swing: if moving {
            rng.gen_range(0.2..0.4)
        } else {
            rng.gen_range(0.0..0.05)
        },
        freq: step_freq,
        phase: step_phase + PI,
        raise: [rng.gen_range(0.05..0.2), rng.gen_range(0.05..0.2)],
        wave_arm,
        wave_amp: if wave_arm.is_some() {
            rng.gen_range(0.5..0.9)
        } else {
            0.0
        },
        wave_freq: rng.gen_range(1.5..2.5),
        forward: if class == MotionClass::Squat {
            rng.gen_range(0.9..1.4)
        } else {
            0.0
        },
        forward_freq: squat_freq,
    };
    let torso = TorsoParams {
        lean: match class {
            MotionClass::Walk => rng.gen_range(0.03..0.1),
            MotionClass::Squat => rng.gen_range(0.15..0.3),
            _ => rng.gen_range(0.0..0.05),
        },
        sway: rng.gen_range(0.01..0.05),
        freq: if moving {
            2.0 * step_freq
        } else {
            rng.gen_range(0.3..0.6)
        },
        phase: rng.gen_range(0.0..TAU),
    };
    let head = HeadParams {
        nod: rng.gen_range(0.02..0.12),
        freq: rng.gen_range(0.3..0.8),
        phase: rng.gen_range(0.0..TAU),
    };
    BodyParams {
        pelvis,
        legs,
        arms,
        torso,
        head,
    }
}

fn apply_edit(params: &mut BodyParams, label: EditLabel) {
    match label {
        EditLabel::Identity => {}
        EditLabel::RaiseArms => {
            params.arms.raise[0] += 0.9;
            params.arms.raise[1] += 0.9;
        }
        EditLabel::KickHigher => {
            params.legs.swing = params.legs.swing * 1.6 + 0.3;
            params.legs.knee += 0.3;
        }
        EditLabel::LeanForward => {
            params.torso.lean += 0.4;
        }
    }
}

/// Rotation about the local x axis (pitch, positive tilts +y toward +z).
fn pitch(v: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [v[0], v[1] * c - v[2] * s, v[1] * s + v[2] * c]
}

/// Rotation about the local z axis (roll, positive tilts -y toward +x).
fn roll(v: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [v[0] * c - v[1] * s, v[0] * s + v[1] * c, v[2]]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn squat_signal(freq: f64, t: f64) -> f64 {
    0.5 * (1.0 - (TAU * freq * t).cos())
}

fn render_pelvis(p: &PelvisParams, t: f64) -> [f64; 4] {
    let (mut x, mut y, mut z, mut h) = (p.start[0], PELVIS_HEIGHT, p.start[1], p.heading);
    match p.path {
        PelvisPath::Straight { speed } => {
            x += speed * t * p.heading.sin();
            z += speed * t * p.heading.cos();
        }
        PelvisPath::Arc { speed, turn_rate } => {
            h = p.heading + turn_rate * t;
            x += speed / turn_rate * (p.heading.cos() - h.cos());
            z += speed / turn_rate * (h.sin() - p.heading.sin());
        }
        PelvisPath::Still { sway, sway_freq } => {
            x += sway * (TAU * sway_freq * t).sin();
        }
        PelvisPath::Squat { depth, freq } => {
            y -= depth * squat_signal(freq, t);
        }
    }
    y += p.bob * (TAU * p.bob_freq * t).sin();
    [x, y, z, h]
}

fn render_legs(p: &LegParams, sk: &Skeleton, t: f64, out: &mut [[f64; 3]]) {
    let squat = squat_signal(p.squat_freq, t) * p.squat_depth * 3.0;
    for (side, base) in [(0usize, 6usize), (1, 10)] {
        let offset = if side == 0 { 0.0 } else { PI };
        let phase = TAU * p.freq * t + p.phase + offset;
        let hip_angle = p.swing * phase.sin() + squat;
        let knee_bend = p.knee * (0.5 + 0.5 * (phase + PI / 2.0).sin()) + 2.0 * squat;
        let hip = sk.rest_offset(base);
        let thigh = sub(sk.rest_offset(base + 1), hip);
        let shin = sub(sk.rest_offset(base + 2), sk.rest_offset(base + 1));
        let foot = sub(sk.rest_offset(base + 3), sk.rest_offset(base + 2));
        let knee = add(hip, pitch(thigh, -hip_angle));
        let ankle = add(knee, pitch(shin, -hip_angle + knee_bend));
        let toe = add(ankle, pitch(foot, -hip_angle + knee_bend * 0.5));
        out[base] = hip;
        out[base + 1] = knee;
        out[base + 2] = ankle;
        out[base + 3] = toe;
    }
}

fn render_arms(p: &ArmParams, sk: &Skeleton, t: f64, out: &mut [[f64; 3]]) {
    let forward = p.forward * (0.3 + 0.7 * squat_signal(p.forward_freq, t));
    for (side, base) in [(0usize, 14usize), (1, 18)] {
        let sign = if side == 0 { 1.0 } else { -1.0 };
        let offset = if side == 0 { 0.0 } else { PI };
        let swing = p.swing * (TAU * p.freq * t + p.phase + offset).sin() + forward;
        let waving = p.wave_arm == Some(side);
        let raise = p.raise[side] + if waving { 2.4 } else { 0.0 };
        let elbow_bend = if waving {
            0.6 + p.wave_amp * (TAU * p.wave_freq * t).sin()
        } else {
            0.15 + 0.5 * swing.max(0.0)
        };
        let collar = sk.rest_offset(base);
        let shoulder = sk.rest_offset(base + 1);
        let upper = sub(sk.rest_offset(base + 2), shoulder);
        let fore = sub(sk.rest_offset(base + 3), sk.rest_offset(base + 2));
        let orient = |v: [f64; 3], extra: f64| -> [f64; 3] { roll(pitch(v, -swing - extra), sign * raise) };
        let elbow = add(shoulder, orient(upper, 0.0));
        let wrist = add(
            elbow,
            if waving {
                roll(pitch(fore, -swing), sign * (raise + elbow_bend))
            } else {
                orient(fore, elbow_bend)
            },
        );
        out[base] = collar;
        out[base + 1] = shoulder;
        out[base + 2] = elbow;
        out[base + 3] = wrist;
    }
}

fn render_torso(p: &TorsoParams, sk: &Skeleton, t: f64, out: &mut [[f64; 3]]) {
    let lean = p.lean + p.sway * (TAU * p.freq * t + p.phase).sin();
    for (k, j) in (1..=4).enumerate() {
        let share = (k + 1) as f64 / 4.0;
        out[j] = pitch(sk.rest_offset(j), lean * share);
    }
}

fn render_head(p: &HeadParams, sk: &Skeleton, t: f64, out: &mut [[f64; 3]]) {
    let neck = sk.rest_offset(4);
    let offset = sub(sk.rest_offset(5), neck);
    out[5] = add(neck, pitch(offset, p.nod * (TAU * p.freq * t + p.phase).sin()));
}

fn render(params: &BodyParams, frames: usize, fps: f64) -> MotionSequence {
    let sk = Skeleton::standard();
    let mut data = Tensor::zeros(&[frames, FEATURE_DIM]);
    let mut joints = vec![[0.0; 3]; sk.joint_count()];
    for f in 0..frames {
        let t = f as f64 / fps;
        render_legs(&params.legs, &sk, t, &mut joints);
        render_arms(&params.arms, &sk, t, &mut joints);
        render_torso(&params.torso, &sk, t, &mut joints);
        render_head(&params.head, &sk, t, &mut joints);
        let row = data.row_mut(f);
        row[..4].copy_from_slice(&render_pelvis(&params.pelvis, t));
        for (j, p) in joints.iter().enumerate().skip(1) {
            let c = sk.joint_columns(j);
            row[c].copy_from_slice(p);
        }
    }
    MotionSequence::new(data, fps).expect("rendered motion is finite")
}

fn class_rng(class: MotionClass, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class.id() as u64);
    rng
}

/// Deterministic labeled motion of `frames` frames at the default frame rate.
pub fn synth_generate(class: MotionClass, frames: usize, seed: u64) -> Result<LabeledMotion, MotionError> {
    if frames < MIN_FRAMES {
        return Err(MotionError::TooShort {
            frames,
            min: MIN_FRAMES,
        });
    }
    let params = sample_params(class, &mut class_rng(class, seed));
    Ok(LabeledMotion {
        motion: render(&params, frames, DEFAULT_FPS),
        class,
        edit: None,
    })
}

/// Like [`synth_generate`], plus an edit pair whose target re-renders only the
/// edited group. The labeled motion's `motion` is the source.
pub fn synth_edit_pair(
    class: MotionClass,
    frames: usize,
    seed: u64,
    label: EditLabel,
) -> Result<LabeledMotion, MotionError> {
    if frames < MIN_FRAMES {
        return Err(MotionError::TooShort {
            frames,
            min: MIN_FRAMES,
        });
    }
    let params = sample_params(class, &mut class_rng(class, seed));
    let source = render(&params, frames, DEFAULT_FPS);
    let mut edited = params.clone();
    apply_edit(&mut edited, label);
    let target = render(&edited, frames, DEFAULT_FPS);
    Ok(LabeledMotion {
        motion: source.clone(),
        class,
        edit: Some(EditPair { source, target, label }),
    })
}

/// Straight-line pelvis displacement between the first and last frame.
pub fn pelvis_displacement(x: &MotionSequence) -> f64 {
    let a = x.root_translation(0);
    let b = x.root_translation(x.len() - 1);
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt()
}
