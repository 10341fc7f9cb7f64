//! Plain-text motion files.
//!
//! ```text
//! # fps=25 joints=pelvis,spine,...
//! x0,y0,z0,x1,y1,z1,...
//! ```
//!
//! One line per frame with `3N` values in joint order. A leading frame-index
//! column (`3N + 1` fields) is accepted and ignored on load. Values are
//! written in the shortest form that parses back to the same `f64`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array3;

use super::{io_err, DataError, Result};
use crate::skeleton::{MotionSequence, SkeletonTopology};

/// Renders a sequence in the CSV motion format.
pub fn write_csv(seq: &MotionSequence, topo: &SkeletonTopology) -> Result<String> {
    if seq.joint_count() != topo.joint_count() {
        return Err(DataError::Config(format!(
            "sequence has {} joints, topology {}",
            seq.joint_count(),
            topo.joint_count()
        )));
    }
    let mut out = format!("# fps={} joints={}\n", seq.fps(), topo.joint_names().join(","));
    for frame in seq.frames().outer_iter() {
        for (i, v) in frame.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save_csv(seq: &MotionSequence, topo: &SkeletonTopology, path: &Path) -> Result<()> {
    std::fs::write(path, write_csv(seq, topo)?).map_err(io_err(path))
}

pub fn load_csv(path: &Path, topo: &SkeletonTopology) -> Result<MotionSequence> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_csv(&text, topo)
}

fn parse_header(line: &str, topo: &SkeletonTopology) -> Result<u32> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| DataError::Header("first line must start with '# fps=<int> joints=<names>'".into()))?;
    let mut fps = None;
    let mut joints = None;
    for field in body.split_whitespace() {
        if let Some(v) = field.strip_prefix("fps=") {
            fps = Some(v.parse::<u32>().map_err(|_| DataError::Header(format!("bad fps value {v:?}")))?);
        } else if let Some(v) = field.strip_prefix("joints=") {
            joints = Some(v.split(',').map(str::to_owned).collect::<Vec<_>>());
        }
    }
    let fps = fps
        .filter(|&f| f > 0)
        .ok_or_else(|| DataError::Header("missing or zero fps".into()))?;
    let joints = joints.ok_or_else(|| DataError::Header("missing joints list".into()))?;
    if joints != topo.joint_names() {
        return Err(DataError::Header(format!(
            "joint order {joints:?} does not match topology {:?}",
            topo.joint_names()
        )));
    }
    Ok(fps)
}

/// Parses CSV text. Error coordinates are 1-based: `row` counts data lines
/// after the header, `column` counts fields as written on that line.
pub fn parse_csv(text: &str, topo: &SkeletonTopology) -> Result<MotionSequence> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| DataError::Header("empty file".into()))?;
    let fps = parse_header(header, topo)?;

    let width = 3 * topo.joint_count();
    let mut values = Vec::new();
    let mut frames = 0;
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let skip = match fields.len() {
            n if n == width => 0,
            n if n == width + 1 => 1,
            n => {
                return Err(DataError::Parse {
                    row,
                    column: n,
                    message: format!("expected {width} values (or {} with a frame index), found {n}", width + 1),
                })
            }
        };
        for (col, field) in fields.iter().enumerate().skip(skip) {
            let column = col + 1;
            let v: f64 = field.trim().parse().map_err(|_| DataError::Parse {
                row,
                column,
                message: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse {
                    row,
                    column,
                    message: format!("non-finite value {field:?}"),
                });
            }
            values.push(v);
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(DataError::InsufficientFrames { needed: 1, got: 0 });
    }
    let array = Array3::from_shape_vec((frames, topo.joint_count(), 3), values).expect("row widths checked");
    Ok(MotionSequence::new(array, fps, None)?)
}
