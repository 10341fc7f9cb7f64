//! Per-horizon position error, the zero-velocity baseline, ablation tables
//! and pose strip rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::Path;

use ndarray::{s, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::data::WindowedSample;
use crate::error::{io_error, Error, Result};
use crate::model::EncoderModel;
use crate::skeleton::{MotionSequence, SkeletonTopology};

pub const DEFAULT_HORIZONS_MS: [u32; 6] = [160, 400, 560, 720, 880, 1000];

/// Label of the aggregate over every action.
pub const ALL_ACTIONS: &str = "all";

/// 1-based frame index of a horizon: `ms · fps / 1000`. The frame period
/// must be a whole number of milliseconds and `ms` a multiple of it.
pub fn horizon_frames(ms: u32, fps: u32) -> Result<usize> {
    if fps == 0 || 1000 % fps != 0 {
        return Err(Error::Horizon(format!(
            "{fps} fps does not have a whole-millisecond frame period"
        )));
    }
    let period = 1000 / fps;
    if ms == 0 || !ms.is_multiple_of(period) {
        return Err(Error::Horizon(format!(
            "{ms} ms is not a positive multiple of the {period} ms frame period"
        )));
    }
    Ok((ms / period) as usize)
}

/// Horizons in milliseconds at a fixed frame rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonSet {
    ms: Vec<u32>,
    frames: Vec<usize>,
    fps: u32,
}

impl HorizonSet {
    pub fn new(ms: Vec<u32>, fps: u32) -> Result<Self> {
        if ms.is_empty() {
            return Err(Error::Horizon("no horizons given".into()));
        }
        let frames = ms.iter().map(|&m| horizon_frames(m, fps)).collect::<Result<Vec<_>>>()?;
        if frames.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Horizon("horizons must be strictly increasing".into()));
        }
        Ok(Self { ms, frames, fps })
    }

    pub fn default_at(fps: u32) -> Result<Self> {
        Self::new(DEFAULT_HORIZONS_MS.to_vec(), fps)
    }

    /// Parses `160,400,1000`.
    pub fn parse(list: &str, fps: u32) -> Result<Self> {
        let ms = list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Horizon(format!("not a millisecond value: {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ms, fps)
    }

    pub fn milliseconds(&self) -> &[u32] {
        &self.ms
    }

    pub fn frames(&self) -> &[usize] {
        &self.frames
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    /// Frames that must be predicted to reach the furthest horizon.
    pub fn span(&self) -> usize {
        *self.frames.last().expect("non-empty")
    }

    /// The horizons that fall within `frames` predicted frames.
    pub fn within(&self, frames: usize) -> Option<Self> {
        let ms: Vec<u32> = self
            .ms
            .iter()
            .zip(&self.frames)
            .filter(|(_, &f)| f <= frames)
            .map(|(&m, _)| m)
            .collect();
        Self::new(ms, self.fps).ok()
    }
}

fn check_frames(pred: ArrayView3<f64>, truth: ArrayView3<f64>) -> Result<()> {
    if pred.shape() != truth.shape() || pred.shape()[2] != 3 {
        return Err(Error::Contract(format!(
            "prediction shape {:?} does not match truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    Ok(())
}

fn mean_joint_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let n = a.nrows();
    let total: f64 = a
        .outer_iter()
        .zip(b.outer_iter())
        .map(|(p, t)| p.iter().zip(t.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .sum();
    total / n as f64
}

/// Mean joint distance at the 1-based `frame` of both arrays.
pub fn mpjpe_at_horizon(pred: ArrayView3<f64>, truth: ArrayView3<f64>, frame: usize) -> Result<f64> {
    check_frames(pred, truth)?;
    if frame == 0 || frame > pred.shape()[0] {
        return Err(Error::Horizon(format!(
            "frame {frame} is outside the {} predicted frames",
            pred.shape()[0]
        )));
    }
    Ok(mean_joint_distance(
        pred.index_axis(Axis(0), frame - 1),
        truth.index_axis(Axis(0), frame - 1),
    ))
}

/// Repeats the last observed frame `frames` times.
pub fn zero_velocity_baseline(history: ArrayView3<f64>, frames: usize) -> Result<Array3<f64>> {
    let t = history.shape()[0];
    if t == 0 {
        return Err(Error::Contract("baseline needs at least one observed frame".into()));
    }
    let last = history.index_axis(Axis(0), t - 1);
    let mut out = Array3::zeros((frames, history.shape()[1], 3));
    for mut f in out.outer_iter_mut() {
        f.assign(&last);
    }
    Ok(out)
}

/// A forecaster that can be scored.
pub trait Predictor {
    /// System name used in reports.
    fn name(&self) -> &str;

    /// `frames × N × 3` continuation of a `T × N × 3` history.
    fn predict(&self, history: ArrayView3<f64>, frames: usize) -> Result<Array3<f64>>;
}

pub struct ZeroVelocity;

impl Predictor for ZeroVelocity {
    fn name(&self) -> &str {
        "zero_velocity"
    }

    fn predict(&self, history: ArrayView3<f64>, frames: usize) -> Result<Array3<f64>> {
        zero_velocity_baseline(history, frames)
    }
}

impl Predictor for EncoderModel {
    fn name(&self) -> &str {
        "model"
    }

    fn predict(&self, history: ArrayView3<f64>, frames: usize) -> Result<Array3<f64>> {
        EncoderModel::predict(self, history, frames)
    }
}

/// A predictor reported under a different system name.
pub struct Named<'a> {
    pub name: String,
    pub inner: &'a dyn Predictor,
}

impl Predictor for Named<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, history: ArrayView3<f64>, frames: usize) -> Result<Array3<f64>> {
        self.inner.predict(history, frames)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub action: String,
    pub horizon_ms: u32,
    pub mpjpe_mm: f64,
}

/// Metadata kept as `# key=value` lines ahead of the CSV header.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportMeta {
    pub fps: u32,
    pub windows: usize,
    /// Free-form identity of the evaluated checkpoint, such as a digest.
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub horizons_ms: Vec<u32>,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn systems(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.system.as_str()) {
                out.push(&r.system);
            }
        }
        out
    }

    pub fn get(&self, system: &str, action: &str, horizon_ms: u32) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.action == action && r.horizon_ms == horizon_ms)
            .map(|r| r.mpjpe_mm)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# fps={}\n# windows={}\n", self.meta.fps, self.meta.windows);
        if let Some(c) = &self.meta.checkpoint {
            writeln!(out, "# checkpoint={c}").expect("writing to a String");
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory CSV");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8 CSV"));
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta = ReportMeta::default();
        let mut body = String::new();
        for line in text.lines() {
            match line.strip_prefix("# ") {
                Some(kv) => {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| Error::Report(format!("bad metadata line {line:?}")))?;
                    let bad = |_| Error::Report(format!("bad value in {line:?}"));
                    match k {
                        "fps" => meta.fps = v.parse().map_err(bad)?,
                        "windows" => meta.windows = v.parse().map_err(bad)?,
                        "checkpoint" => meta.checkpoint = Some(v.to_owned()),
                        _ => return Err(Error::Report(format!("unknown metadata key {k:?}"))),
                    }
                }
                None => {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
        let rows = csv::Reader::from_reader(body.as_bytes())
            .deserialize()
            .collect::<std::result::Result<Vec<ReportRow>, _>>()
            .map_err(|e| Error::Report(e.to_string()))?;
        let mut horizons_ms: Vec<u32> = rows.iter().map(|r| r.horizon_ms).collect();
        horizons_ms.sort_unstable();
        horizons_ms.dedup();
        Ok(Self {
            meta,
            horizons_ms,
            rows,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(io_error(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path).map_err(io_error(path))?)
    }
}

fn sorted_windows(windows: &[WindowedSample]) -> Vec<&WindowedSample> {
    let mut sorted: Vec<&WindowedSample> = windows.iter().collect();
    sorted.sort_by(|a, b| (&a.action, a.source, a.start).cmp(&(&b.action, b.source, b.start)));
    sorted
}

/// Scores every system on every window. Rows come out per system, then
/// per action in name order followed by [`ALL_ACTIONS`], then per horizon.
pub fn evaluate_systems(
    systems: &[&dyn Predictor],
    windows: &[WindowedSample],
    horizons: &HorizonSet,
) -> Result<EvalReport> {
    if windows.is_empty() {
        return Err(Error::Config("no test windows to evaluate".into()));
    }
    let span = horizons.span();
    if let Some(w) = windows.iter().find(|w| w.future_len() < span) {
        return Err(Error::Horizon(format!(
            "horizon of {span} frames exceeds the {} target frames of the windows",
            w.future_len()
        )));
    }
    let windows = sorted_windows(windows);
    let h = horizons.frames().len();
    let mut rows = Vec::new();
    for system in systems {
        let mut per_action: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
        let mut all = vec![0.0; h];
        for w in &windows {
            let pred = system.predict(w.input.view(), span)?;
            let truth = w.target.slice(s![..span, .., ..]);
            let entry = per_action.entry(&w.action).or_insert_with(|| (vec![0.0; h], 0));
            entry.1 += 1;
            for (k, &f) in horizons.frames().iter().enumerate() {
                let e = mpjpe_at_horizon(pred.view(), truth, f)?;
                entry.0[k] += e;
                all[k] += e;
            }
        }
        let mut emit = |action: &str, sums: &[f64], count: usize| {
            for (k, &ms) in horizons.milliseconds().iter().enumerate() {
                rows.push(ReportRow {
                    system: system.name().to_owned(),
                    action: action.to_owned(),
                    horizon_ms: ms,
                    mpjpe_mm: sums[k] / count as f64,
                });
            }
        };
        for (action, (sums, count)) in &per_action {
            emit(action, sums, *count);
        }
        emit(ALL_ACTIONS, &all, windows.len());
    }
    Ok(EvalReport {
        meta: ReportMeta {
            fps: horizons.fps(),
            windows: windows.len(),
            checkpoint: None,
        },
        horizons_ms: horizons.milliseconds().to_vec(),
        rows,
    })
}

/// The model alongside the zero-velocity baseline.
pub fn evaluate(model: &dyn Predictor, windows: &[WindowedSample], horizons: &HorizonSet) -> Result<EvalReport> {
    evaluate_systems(&[model, &ZeroVelocity], windows, horizons)
}

/// Variants by horizon, each cell the overall error of the variant's first
/// system.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub horizons_ms: Vec<u32>,
    pub rows: Vec<(String, Vec<f64>)>,
}

pub fn ablation_report(runs: &[(String, EvalReport)]) -> Result<AblationTable> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Report("no runs to tabulate".into()))?;
    let horizons_ms = first.1.horizons_ms.clone();
    let mut rows = Vec::with_capacity(runs.len());
    for (label, report) in runs {
        if report.horizons_ms != horizons_ms {
            return Err(Error::Report(format!(
                "run {label:?} has horizons {:?}, expected {horizons_ms:?}",
                report.horizons_ms
            )));
        }
        let system = *report
            .systems()
            .first()
            .ok_or_else(|| Error::Report(format!("run {label:?} has no rows")))?;
        let cells = horizons_ms
            .iter()
            .map(|&ms| {
                report
                    .get(system, ALL_ACTIONS, ms)
                    .ok_or_else(|| Error::Report(format!("run {label:?} lacks the {ms} ms cell")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((label.clone(), cells));
    }
    Ok(AblationTable { horizons_ms, rows })
}

impl AblationTable {
    /// `variant,horizon_ms,mpjpe_mm`, one line per cell.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["variant", "horizon_ms", "mpjpe_mm"]).expect("in-memory CSV");
        for (label, cells) in &self.rows {
            for (ms, v) in self.horizons_ms.iter().zip(cells) {
                w.write_record([label.clone(), ms.to_string(), v.to_string()])
                    .expect("in-memory CSV");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8 CSV")
    }

    /// Aligned grid with one column per horizon.
    pub fn to_text(&self) -> String {
        let label_w = self.rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("variant".len());
        let mut out = format!("{:<label_w$}", "variant");
        for ms in &self.horizons_ms {
            write!(out, " {:>9}", format!("{ms}ms")).expect("writing to a String");
        }
        out.push('\n');
        for (label, cells) in &self.rows {
            write!(out, "{label:<label_w$}").expect("writing to a String");
            for v in cells {
                write!(out, " {v:>9.1}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }
}

/// Mean per-frame joint speed (mm per frame) over the 1-based `frames` of a
/// continuation, where frame 0 is the last observed pose.
pub fn mean_speed(last_observed: ArrayView2<f64>, continuation: ArrayView3<f64>, frames: RangeInclusive<usize>) -> Result<f64> {
    let (lo, hi) = (*frames.start(), *frames.end());
    if lo == 0 || hi < lo || hi > continuation.shape()[0] {
        return Err(Error::Horizon(format!(
            "frame range {lo}..={hi} is outside the {} predicted frames",
            continuation.shape()[0]
        )));
    }
    let frame = |k: usize| {
        if k == 0 {
            last_observed
        } else {
            continuation.index_axis(Axis(0), k - 1)
        }
    };
    let total: f64 = (lo..=hi).map(|k| mean_joint_distance(frame(k), frame(k - 1))).sum();
    Ok(total / (hi - lo + 1) as f64)
}

/// Mean predicted and ground-truth speed over the windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedComparison {
    pub predicted: f64,
    pub truth: f64,
}

pub fn speed_comparison(
    system: &dyn Predictor,
    windows: &[WindowedSample],
    frames: RangeInclusive<usize>,
) -> Result<SpeedComparison> {
    if windows.is_empty() {
        return Err(Error::Config("no windows to measure".into()));
    }
    let span = *frames.end();
    let (mut predicted, mut truth) = (0.0, 0.0);
    for w in sorted_windows(windows) {
        let last = w.input.index_axis(Axis(0), w.history_len() - 1);
        let pred = system.predict(w.input.view(), span)?;
        predicted += mean_speed(last, pred.view(), frames.clone())?;
        truth += mean_speed(last, w.target.view(), frames.clone())?;
    }
    let n = windows.len() as f64;
    Ok(SpeedComparison {
        predicted: predicted / n,
        truth: truth / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StripRole {
    GroundTruth,
    Prediction,
}

impl StripRole {
    /// Stroke colours for (left side, right side) bones.
    fn colors(self) -> (&'static str, &'static str) {
        match self {
            StripRole::GroundTruth => ("#7b3294", "#1b7837"),
            StripRole::Prediction => ("#2166ac", "#d6604d"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripOptions {
    /// Coordinate axis dropped by the orthographic projection.
    pub drop_axis: usize,
    /// Render every `every`-th frame.
    pub every: usize,
    /// Pixels per millimetre.
    pub scale: f64,
    /// Horizontal distance between rendered frames, in pixels.
    pub spacing: f64,
}

impl Default for StripOptions {
    fn default() -> Self {
        Self {
            drop_axis: 1,
            every: 5,
            scale: 0.1,
            spacing: 80.0,
        }
    }
}

/// Writes stick figures as SVG, one row per sequence, one `<line>` per bone
/// per rendered frame. Each figure is centred on its root joint. Bones
/// whose child joint name starts with `r_` get the right-side colour.
pub fn render_pose_strip(
    sequences: &[(&MotionSequence, StripRole)],
    topo: &SkeletonTopology,
    path: &Path,
    opts: &StripOptions,
) -> Result<()> {
    std::fs::write(path, pose_strip_svg(sequences, topo, opts)?).map_err(io_error(path))
}

pub fn pose_strip_svg(
    sequences: &[(&MotionSequence, StripRole)],
    topo: &SkeletonTopology,
    opts: &StripOptions,
) -> Result<String> {
    if opts.drop_axis > 2 || opts.every == 0 {
        return Err(Error::Config("drop_axis must be 0..=2 and every positive".into()));
    }
    if let Some((s, _)) = sequences.iter().find(|(s, _)| s.joint_count() != topo.joint_count()) {
        return Err(Error::Contract(format!(
            "sequence has {} joints, topology {}",
            s.joint_count(),
            topo.joint_count()
        )));
    }
    let (h_axis, v_axis) = match opts.drop_axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let row_height = 220.0;
    let columns = sequences
        .iter()
        .map(|(s, _)| s.frame_count().div_ceil(opts.every))
        .max()
        .unwrap_or(0);
    let width = (columns as f64 * opts.spacing).max(1.0);
    let height = (sequences.len() as f64 * row_height).max(1.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    );
    for (row, (seq, role)) in sequences.iter().enumerate() {
        let (left, right) = role.colors();
        let frames = seq.frames();
        for (col, f) in (0..seq.frame_count()).step_by(opts.every).enumerate() {
            let pose = frames.index_axis(Axis(0), f);
            let cx = (col as f64 + 0.5) * opts.spacing;
            let base = (row as f64 + 0.9) * row_height;
            let root = pose.row(0);
            let point = |j: usize| {
                let p = pose.row(j);
                (
                    cx + (p[h_axis] - root[h_axis]) * opts.scale,
                    base - p[v_axis] * opts.scale,
                )
            };
            for bone in topo.bones() {
                let (x1, y1) = point(bone.parent);
                let (x2, y2) = point(bone.child);
                let color = if topo.joint_names()[bone.child].starts_with("r_") { right } else { left };
                writeln!(
                    svg,
                    "  <line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>"
                )
                .expect("writing to a String");
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
