//! Motion corpora: synthetic generation, CSV ingestion, decimation and
//! history/future windowing.

mod corpus;
mod csv;
mod generator;

use ndarray::{s, Array3};

use crate::skeleton::{MotionSequence, SkeletonError};

pub use corpus::{Corpus, CorpusConfig, CorpusEntry, CorpusManifest, SeedRange, Split, MANIFEST_FILE, TOPOLOGY_FILE};
pub use csv::{load_csv, parse_csv, save_csv, write_csv};
pub use generator::{generate_gait, generate_gait_with, GaitParams, MotionStyle};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("cannot decimate {fps} fps to {target} fps: rates must divide evenly")]
    Rate { fps: u32, target: u32 },
    #[error("need at least {needed} frames, got {got}")]
    InsufficientFrames { needed: usize, got: usize },
    #[error("row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("header: {0}")]
    Header(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Observed history followed immediately by the frames to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    /// `T x N x 3`
    pub input: Array3<f64>,
    /// `L x N x 3`
    pub target: Array3<f64>,
    /// Index of the source sequence within its split.
    pub source: usize,
    /// First frame of `input` in the source sequence.
    pub start: usize,
    pub action: String,
}

impl WindowedSample {
    pub fn history_len(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn future_len(&self) -> usize {
        self.target.shape()[0]
    }

    pub fn joint_count(&self) -> usize {
        self.input.shape()[1]
    }
}

/// Keeps every `fps / target_fps`-th frame starting at frame 0.
pub fn downsample(seq: &MotionSequence, target_fps: u32) -> Result<MotionSequence> {
    let fps = seq.fps();
    if target_fps == 0 || !fps.is_multiple_of(target_fps) {
        return Err(DataError::Rate { fps, target: target_fps });
    }
    let step = (fps / target_fps) as usize;
    let frames = seq.frames().slice(s![..;step, .., ..]).to_owned();
    Ok(MotionSequence::new(frames, target_fps, seq.action().map(str::to_owned))?)
}

/// Splits a sequence into `history + future` windows starting at
/// `0, stride, 2*stride, ...`.
pub fn window(seq: &MotionSequence, history: usize, future: usize, stride: usize) -> Result<Vec<WindowedSample>> {
    window_indexed(seq, 0, history, future, stride)
}

pub(crate) fn window_indexed(
    seq: &MotionSequence,
    source: usize,
    history: usize,
    future: usize,
    stride: usize,
) -> Result<Vec<WindowedSample>> {
    if history == 0 || future == 0 || stride == 0 {
        return Err(DataError::Config(format!(
            "window lengths and stride must be positive (T={history}, L={future}, stride={stride})"
        )));
    }
    let f = seq.frame_count();
    if history + future > f {
        return Err(DataError::InsufficientFrames {
            needed: history + future,
            got: f,
        });
    }
    let count = (f - history - future) / stride + 1;
    let frames = seq.frames();
    let action = seq.action().unwrap_or("unlabeled").to_owned();
    Ok((0..count)
        .map(|w| {
            let start = w * stride;
            WindowedSample {
                input: frames.slice(s![start..start + history, .., ..]).to_owned(),
                target: frames.slice(s![start + history..start + history + future, .., ..]).to_owned(),
                source,
                start,
                action: action.clone(),
            }
        })
        .collect())
}
