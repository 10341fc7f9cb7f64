use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result};
use crate::skeleton::{forward_kinematics, JointRotation, MotionSequence, SkeletonTopology};

const LATERAL: [f64; 3] = [0.0, 1.0, 0.0];
const FORWARD: [f64; 3] = [1.0, 0.0, 0.0];
const VERTICAL: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionStyle {
    Walk,
    WaveArms,
    IdleSway,
}

impl MotionStyle {
    pub fn label(self) -> &'static str {
        match self {
            MotionStyle::Walk => "walk",
            MotionStyle::WaveArms => "wave_arms",
            MotionStyle::IdleSway => "idle_sway",
        }
    }

    /// Base cycle frequency range in Hz.
    fn frequency_range(self) -> (f64, f64) {
        match self {
            MotionStyle::Walk => (0.8, 1.1),
            MotionStyle::WaveArms => (0.4, 0.7),
            MotionStyle::IdleSway => (0.15, 0.3),
        }
    }
}

impl FromStr for MotionStyle {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "walk" => Ok(MotionStyle::Walk),
            "wave_arms" => Ok(MotionStyle::WaveArms),
            "idle_sway" => Ok(MotionStyle::IdleSway),
            other => Err(DataError::Config(format!(
                "unknown style {other:?} (expected walk, wave_arms or idle_sway)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitParams {
    /// Multiplies every joint-angle amplitude. Zero freezes the joints.
    pub amplitude_scale: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        GaitParams { amplitude_scale: 1.0 }
    }
}

/// One sinusoidal component: `amp * sin(2*pi*harmonic*f*t + phase)`.
struct Wave {
    amp: f64,
    harmonic: f64,
    phase: f64,
}

struct Driver {
    joint: &'static str,
    axis: [f64; 3],
    waves: Vec<Wave>,
}

fn wave(amp: f64, harmonic: f64, phase: f64) -> Wave {
    Wave { amp, harmonic, phase }
}

fn drivers(style: MotionStyle, phase: f64) -> Vec<Driver> {
    let d = |joint, axis, waves| Driver { joint, axis, waves };
    match style {
        MotionStyle::Walk => vec![
            d("r_hip", LATERAL, vec![wave(0.45, 1.0, phase), wave(0.05, 2.0, phase)]),
            d("l_hip", LATERAL, vec![wave(0.45, 1.0, phase + PI), wave(0.05, 2.0, phase + PI)]),
            d("r_knee", LATERAL, vec![wave(0.35, 1.0, phase + PI / 2.0), wave(0.12, 2.0, phase)]),
            d("l_knee", LATERAL, vec![wave(0.35, 1.0, phase + 1.5 * PI), wave(0.12, 2.0, phase + PI)]),
            d("l_shoulder", LATERAL, vec![wave(0.3, 1.0, phase)]),
            d("r_shoulder", LATERAL, vec![wave(0.3, 1.0, phase + PI)]),
            d("l_elbow", LATERAL, vec![wave(0.15, 1.0, phase + 0.3)]),
            d("r_elbow", LATERAL, vec![wave(0.15, 1.0, phase + PI + 0.3)]),
            d("spine", VERTICAL, vec![wave(0.08, 1.0, phase)]),
        ],
        MotionStyle::WaveArms => vec![
            d("l_shoulder", FORWARD, vec![wave(-1.0, 1.0, phase), wave(-0.2, 2.0, phase)]),
            d("r_shoulder", FORWARD, vec![wave(1.0, 1.0, phase + 0.4), wave(0.2, 2.0, phase + 0.4)]),
            d("l_elbow", FORWARD, vec![wave(-0.5, 2.0, phase + 0.8)]),
            d("r_elbow", FORWARD, vec![wave(0.5, 2.0, phase + 1.2)]),
            d("spine", FORWARD, vec![wave(0.05, 1.0, phase)]),
        ],
        MotionStyle::IdleSway => vec![
            d("pelvis", VERTICAL, vec![wave(0.05, 1.0, phase)]),
            d("spine", FORWARD, vec![wave(0.06, 1.0, phase + 0.5), wave(0.02, 3.0, phase)]),
            d("l_shoulder", LATERAL, vec![wave(0.05, 1.0, phase + 1.0)]),
            d("r_shoulder", LATERAL, vec![wave(0.05, 1.0, phase + 2.0)]),
        ],
    }
}

/// Synthetic motion from sinusoidal joint angles run through forward
/// kinematics, with the default amplitude.
pub fn generate_gait(
    seed: u64,
    topo: &SkeletonTopology,
    n_frames: usize,
    fps: u32,
    style: MotionStyle,
) -> Result<MotionSequence> {
    generate_gait_with(seed, 0, topo, n_frames, fps, style, &GaitParams::default())
}

/// Like [`generate_gait`], with an extra RNG stream (lets one corpus seed
/// decorrelate every per-sequence seed) and explicit parameters.
///
/// Every random draw comes from a ChaCha8 stream seeded by `(seed, stream)`:
/// a body scale, a base frequency, a phase, per-joint phase jitter, and for
/// walks a forward speed. Joint angles are sums of one to three sinusoids;
/// the root translates at constant velocity for walks and stays put
/// otherwise.
pub fn generate_gait_with(
    seed: u64,
    stream: u64,
    topo: &SkeletonTopology,
    n_frames: usize,
    fps: u32,
    style: MotionStyle,
    params: &GaitParams,
) -> Result<MotionSequence> {
    if n_frames == 0 {
        return Err(DataError::Config("n_frames must be at least 1".into()));
    }
    if fps == 0 {
        return Err(DataError::Config("fps must be positive".into()));
    }
    if !params.amplitude_scale.is_finite() {
        return Err(DataError::Config("amplitude_scale must be finite".into()));
    }
    let rest = topo
        .rest_offsets()
        .ok_or_else(|| DataError::Config("topology has no rest offsets to animate".into()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let body_scale: f64 = rng.gen_range(0.9..1.1);
    let (f_lo, f_hi) = style.frequency_range();
    let freq: f64 = rng.gen_range(f_lo..f_hi);
    let phase: f64 = rng.gen_range(0.0..TAU);
    let speed: f64 = rng.gen_range(1000.0..1500.0);
    let start = [rng.gen_range(-500.0..500.0), rng.gen_range(-200.0..200.0)];

    let offsets: Vec<[f64; 3]> = rest.iter().map(|o| o.map(|v| v * body_scale)).collect();
    let pelvis_height = 900.0 * body_scale;
    let active: Vec<(usize, Driver)> = drivers(style, phase)
        .into_iter()
        .filter_map(|mut d| {
            let jitter: f64 = rng.gen_range(-0.3..0.3);
            d.waves.iter_mut().for_each(|w| w.phase += jitter);
            topo.joint_index(d.joint).map(|j| (j, d))
        })
        .collect();

    let n = topo.joint_count();
    let mut frames = Array3::zeros((n_frames, n, 3));
    let mut rotations = vec![JointRotation::IDENTITY; n];
    for (t, mut frame) in frames.axis_iter_mut(Axis(0)).enumerate() {
        let time = t as f64 / fps as f64;
        for (joint, driver) in &active {
            let angle: f64 = driver
                .waves
                .iter()
                .map(|w| w.amp * (TAU * w.harmonic * freq * time + w.phase).sin())
                .sum();
            rotations[*joint] = JointRotation::new(driver.axis, params.amplitude_scale * angle);
        }
        let advance = if style == MotionStyle::Walk { speed * time } else { 0.0 };
        let root = [start[0] + advance, start[1], pelvis_height];
        let pose = forward_kinematics(root, &offsets, &rotations, topo)?;
        frame.assign(&pose.joints());
    }
    Ok(MotionSequence::new(frames, fps, Some(style.label().to_owned()))?)
}
