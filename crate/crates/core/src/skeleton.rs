//! Skeletal topology, poses, forward kinematics and temporal differences.
//!
//! Coordinates are millimetres in a right-handed frame with `z` up and `x`
//! the walking direction. Joints are stored so that every parent index is
//! smaller than its child's, which lets kinematics run in a single pass.

use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

const DEFAULT_TOPOLOGY: &str = include_str!("../data/topology_17.json");

#[derive(Debug, thiserror::Error)]
pub enum SkeletonError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("joint count mismatch: topology has {expected} joints, got {got}")]
    JointCount { expected: usize, got: usize },
    #[error("need at least {needed} frames, got {got}")]
    InsufficientFrames { needed: usize, got: usize },
    #[error("{0}")]
    InvalidMotion(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("topology json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SkeletonError> = std::result::Result<T, E>;

/// A bone joins a joint to its parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bone {
    pub parent: usize,
    pub child: usize,
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    joint_names: Vec<String>,
    parent: Vec<Option<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rest_offsets_mm: Option<Vec<[f64; 3]>>,
}

/// Kinematic tree over `N` joints. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    bones: Vec<Bone>,
    rest_offsets: Option<Vec<[f64; 3]>>,
}

impl SkeletonTopology {
    /// Builds a topology. Joint 0 must be the only root and every other
    /// joint's parent must precede it.
    pub fn new(names: Vec<String>, parents: Vec<Option<usize>>) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(SkeletonError::InvalidTopology("no joints".into()));
        }
        if names.len() != n {
            return Err(SkeletonError::InvalidTopology(format!(
                "{} names for {n} joints",
                names.len()
            )));
        }
        if parents[0].is_some() {
            return Err(SkeletonError::InvalidTopology("joint 0 must be the root".into()));
        }
        let mut bones = Vec::with_capacity(n - 1);
        for (child, parent) in parents.iter().enumerate().skip(1) {
            match parent {
                None => {
                    return Err(SkeletonError::InvalidTopology(format!(
                        "joint {child} ({}) is a second root",
                        names[child]
                    )))
                }
                Some(p) if *p >= child => {
                    return Err(SkeletonError::InvalidTopology(format!(
                        "joint {child} ({}) has parent {p}; parents must precede children",
                        names[child]
                    )))
                }
                Some(p) => bones.push(Bone { parent: *p, child }),
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|name| !seen.insert(name.as_str())) {
            return Err(SkeletonError::InvalidTopology(format!("duplicate joint name {dup}")));
        }
        Ok(SkeletonTopology {
            names,
            parents,
            bones,
            rest_offsets: None,
        })
    }

    /// Attaches per-bone rest offsets (parent frame, mm), one per bone.
    pub fn with_rest_offsets(mut self, offsets: Vec<[f64; 3]>) -> Result<Self> {
        if offsets.len() != self.bones.len() {
            return Err(SkeletonError::InvalidTopology(format!(
                "{} rest offsets for {} bones",
                offsets.len(),
                self.bones.len()
            )));
        }
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SkeletonError::InvalidTopology("non-finite rest offset".into()));
        }
        self.rest_offsets = Some(offsets);
        Ok(self)
    }

    /// The 17-joint desk skeleton: a five-joint torso/head chain, two
    /// three-joint legs and two three-joint arms.
    pub fn default_17() -> Self {
        Self::from_json_str(DEFAULT_TOPOLOGY).expect("bundled topology is valid")
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: TopologyFile = serde_json::from_str(json)?;
        let topo = Self::new(file.joint_names, file.parent)?;
        match file.rest_offsets_mm {
            Some(offsets) => topo.with_rest_offsets(offsets),
            None => Ok(topo),
        }
    }

    pub fn to_json_string(&self) -> String {
        let file = TopologyFile {
            joint_names: self.names.clone(),
            parent: self.parents.clone(),
            rest_offsets_mm: self.rest_offsets.clone(),
        };
        serde_json::to_string_pretty(&file).expect("topology serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SkeletonError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string() + "\n").map_err(|source| SkeletonError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.names
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn rest_offsets(&self) -> Option<&[[f64; 3]]> {
        self.rest_offsets.as_deref()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Parent and child joint indices of every bone, in bone order.
    pub fn bone_index_lists(&self) -> (Vec<usize>, Vec<usize>) {
        self.bones.iter().map(|b| (b.parent, b.child)).unzip()
    }

    fn check_joints(&self, got: usize) -> Result<()> {
        if got != self.joint_count() {
            return Err(SkeletonError::JointCount {
                expected: self.joint_count(),
                got,
            });
        }
        Ok(())
    }
}

/// One frame of joint positions, `N x 3` millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose(Array2<f64>);

impl Pose {
    pub fn new(joints: Array2<f64>) -> Result<Self> {
        if joints.ncols() != 3 || joints.nrows() == 0 {
            return Err(SkeletonError::InvalidMotion(format!(
                "pose must be N x 3, got {:?}",
                joints.shape()
            )));
        }
        if joints.iter().any(|v| !v.is_finite()) {
            return Err(SkeletonError::InvalidMotion("pose has non-finite coordinates".into()));
        }
        Ok(Pose(joints))
    }

    pub fn joints(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// `F x N x 3` joint positions sampled at `fps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    frames: Array3<f64>,
    fps: u32,
    action: Option<String>,
}

impl MotionSequence {
    pub fn new(frames: Array3<f64>, fps: u32, action: Option<String>) -> Result<Self> {
        let shape = frames.shape();
        if shape[0] == 0 || shape[1] == 0 || shape[2] != 3 {
            return Err(SkeletonError::InvalidMotion(format!(
                "motion must be F x N x 3 with F, N >= 1, got {shape:?}"
            )));
        }
        if fps == 0 {
            return Err(SkeletonError::InvalidMotion("fps must be positive".into()));
        }
        if let Some(idx) = frames.iter().position(|v| !v.is_finite()) {
            return Err(SkeletonError::InvalidMotion(format!(
                "non-finite coordinate at frame {}",
                idx / (shape[1] * 3)
            )));
        }
        Ok(MotionSequence { frames, fps, action })
    }

    pub fn frames(&self) -> ArrayView3<'_, f64> {
        self.frames.view()
    }

    pub fn into_frames(self) -> Array3<f64> {
        self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn joint_count(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn action(&self) -> Option<&str> {
        self.action.as_deref()
    }

    pub fn pose(&self, frame: usize) -> Pose {
        Pose(self.frames.index_axis(Axis(0), frame).to_owned())
    }
}

/// Length of every bone of `pose`, in bone order.
pub fn bone_lengths(pose: ArrayView2<'_, f64>, topo: &SkeletonTopology) -> Result<Vec<f64>> {
    topo.check_joints(pose.nrows())?;
    Ok(topo
        .bones()
        .iter()
        .map(|b| {
            let d = &pose.row(b.child) - &pose.row(b.parent);
            d.dot(&d).sqrt()
        })
        .collect())
}

/// Rotation by `angle` radians about `axis` (normalized internally).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointRotation {
    pub axis: [f64; 3],
    pub angle: f64,
}

impl JointRotation {
    pub const IDENTITY: JointRotation = JointRotation {
        axis: [0.0, 0.0, 1.0],
        angle: 0.0,
    };

    pub fn new(axis: [f64; 3], angle: f64) -> Self {
        JointRotation { axis, angle }
    }

    /// Rodrigues' formula.
    fn matrix(&self) -> [[f64; 3]; 3] {
        let n = (self.axis[0].powi(2) + self.axis[1].powi(2) + self.axis[2].powi(2)).sqrt();
        if n == 0.0 || self.angle == 0.0 {
            return IDENTITY3;
        }
        let [x, y, z] = self.axis.map(|v| v / n);
        let (s, c) = self.angle.sin_cos();
        let t = 1.0 - c;
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    }
}

const IDENTITY3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

/// Composes joint positions from the root outwards.
///
/// `bone_offsets[b]` is bone `b`'s vector expressed in its parent joint's
/// frame; `rotations[j]` rotates joint `j`'s frame relative to its parent.
/// A child sits at `parent_pos + R_parent * offset`.
pub fn forward_kinematics(
    root_pos: [f64; 3],
    bone_offsets: &[[f64; 3]],
    rotations: &[JointRotation],
    topo: &SkeletonTopology,
) -> Result<Pose> {
    let n = topo.joint_count();
    if bone_offsets.len() != topo.bones().len() {
        return Err(SkeletonError::InvalidTopology(format!(
            "{} bone offsets for {} bones",
            bone_offsets.len(),
            topo.bones().len()
        )));
    }
    topo.check_joints(rotations.len())?;

    let mut frames = vec![IDENTITY3; n];
    let mut positions = Array2::zeros((n, 3));
    frames[0] = rotations[0].matrix();
    positions.row_mut(0).assign(&ndarray::arr1(&root_pos));
    for (bone, offset) in topo.bones().iter().zip(bone_offsets) {
        let (p, c) = (bone.parent, bone.child);
        let rotated = mat_vec(&frames[p], offset);
        for k in 0..3 {
            positions[[c, k]] = positions[[p, k]] + rotated[k];
        }
        frames[c] = mat_mul(&frames[p], &rotations[c].matrix());
    }
    Pose::new(positions)
}

/// First-order backward differences `x_t - x_{t-1}` of an `F x N x 3` array.
pub fn frame_differences(frames: ArrayView3<'_, f64>) -> Result<Array3<f64>> {
    let f = frames.shape()[0];
    if f < 2 {
        return Err(SkeletonError::InsufficientFrames { needed: 2, got: f });
    }
    Ok(&frames.slice(s![1.., .., ..]) - &frames.slice(s![..-1, .., ..]))
}

/// Frame-to-frame joint displacements of a sequence, `(F-1) x N x 3`.
pub fn temporal_difference(seq: &MotionSequence) -> Result<Array3<f64>> {
    frame_differences(seq.frames())
}
