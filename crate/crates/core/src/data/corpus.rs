use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generator::{generate_gait_with, GaitParams, MotionStyle};
use super::{downsample, io_err, load_csv, save_csv, window_indexed, DataError, Result, WindowedSample};
use crate::skeleton::{MotionSequence, SkeletonTopology};

pub const MANIFEST_FILE: &str = "corpus.json";
pub const TOPOLOGY_FILE: &str = "topology.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Half-open range of generator seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRange {
    pub start: u64,
    pub end: u64,
}

impl SeedRange {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn overlaps(&self, other: &SeedRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Synthetic corpus recipe. Train and test come from disjoint seed ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Selects the RNG stream shared by every sequence of the corpus.
    pub seed: u64,
    pub train_seeds: SeedRange,
    pub test_seeds: SeedRange,
    /// Assigned round-robin by seed.
    pub styles: Vec<MotionStyle>,
    /// Rate the generator samples at before decimation.
    pub source_fps: u32,
    pub fps: u32,
    /// Frames per sequence after decimation.
    pub frames: usize,
    pub amplitude_scale: f64,
    /// Topology JSON; the bundled 17-joint skeleton when absent.
    pub topology: Option<PathBuf>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            train_seeds: SeedRange { start: 0, end: 100 },
            test_seeds: SeedRange { start: 100, end: 120 },
            styles: vec![MotionStyle::Walk],
            source_fps: 50,
            fps: 25,
            frames: 100,
            amplitude_scale: 1.0,
            topology: None,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(DataError::Config(msg));
        if self.train_seeds.is_empty() {
            return fail("train_seeds is empty".into());
        }
        if self.train_seeds.overlaps(&self.test_seeds) {
            return fail(format!(
                "train seeds {:?} overlap test seeds {:?}",
                self.train_seeds, self.test_seeds
            ));
        }
        if self.styles.is_empty() {
            return fail("styles is empty".into());
        }
        if self.fps == 0 || !self.source_fps.is_multiple_of(self.fps) {
            return Err(DataError::Rate {
                fps: self.source_fps,
                target: self.fps,
            });
        }
        if self.frames == 0 {
            return fail("frames must be positive".into());
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<SkeletonTopology> {
        Ok(match &self.topology {
            Some(path) => SkeletonTopology::load(path)?,
            None => SkeletonTopology::default_17(),
        })
    }

    pub fn style_for(&self, seed: u64) -> MotionStyle {
        self.styles[(seed % self.styles.len() as u64) as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub split: Split,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// `corpus.json`: lists every sequence file with its split and action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub fps: u32,
    pub topology: String,
    pub entries: Vec<CorpusEntry>,
}

impl CorpusManifest {
    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.path.as_str()) {
                return Err(DataError::Config(format!("{} is listed more than once", e.path)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Member {
    sequence: MotionSequence,
    seed: Option<u64>,
}

/// Train and test motion sequences over one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    topology: SkeletonTopology,
    train: Vec<Member>,
    test: Vec<Member>,
}

impl Corpus {
    pub fn new(topology: SkeletonTopology, train: Vec<MotionSequence>, test: Vec<MotionSequence>) -> Result<Self> {
        let wrap = |seqs: Vec<MotionSequence>| -> Result<Vec<Member>> {
            seqs.into_iter()
                .map(|sequence| {
                    if sequence.joint_count() != topology.joint_count() {
                        return Err(DataError::Config(format!(
                            "sequence has {} joints, topology {}",
                            sequence.joint_count(),
                            topology.joint_count()
                        )));
                    }
                    Ok(Member { sequence, seed: None })
                })
                .collect()
        };
        let (train, test) = (wrap(train)?, wrap(test)?);
        Ok(Corpus { topology, train, test })
    }

    /// Runs the generator over both seed ranges.
    pub fn generate(config: &CorpusConfig) -> Result<Self> {
        config.validate()?;
        let topology = config.topology()?;
        let factor = (config.source_fps / config.fps) as usize;
        let params = GaitParams {
            amplitude_scale: config.amplitude_scale,
        };
        let build = |range: SeedRange| -> Result<Vec<Member>> {
            (range.start..range.end)
                .map(|seed| {
                    let raw = generate_gait_with(
                        seed,
                        config.seed,
                        &topology,
                        config.frames * factor,
                        config.source_fps,
                        config.style_for(seed),
                        &params,
                    )?;
                    Ok(Member {
                        sequence: downsample(&raw, config.fps)?,
                        seed: Some(seed),
                    })
                })
                .collect()
        };
        let train = build(config.train_seeds)?;
        let test = build(config.test_seeds)?;
        Ok(Corpus { topology, train, test })
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    fn members(&self, split: Split) -> &[Member] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn sequences(&self, split: Split) -> impl Iterator<Item = &MotionSequence> {
        self.members(split).iter().map(|m| &m.sequence)
    }

    pub fn len(&self, split: Split) -> usize {
        self.members(split).len()
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.members(split).is_empty()
    }

    /// Number of sequences per action label in a split.
    pub fn action_counts(&self, split: Split) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for seq in self.sequences(split) {
            *counts.entry(seq.action().unwrap_or("unlabeled").to_owned()).or_insert(0) += 1;
        }
        counts
    }

    /// All windows of a split, in sequence order then start frame.
    pub fn windows(&self, split: Split, history: usize, future: usize, stride: usize) -> Result<Vec<WindowedSample>> {
        let mut out = Vec::new();
        for (i, seq) in self.sequences(split).enumerate() {
            out.extend(window_indexed(seq, i, history, future, stride)?);
        }
        Ok(out)
    }

    /// Writes `corpus.json`, `topology.json` and one CSV per sequence under
    /// `train/` and `test/`.
    pub fn write(&self, dir: &Path) -> Result<CorpusManifest> {
        let mut entries = Vec::new();
        let fps = self.train.first().or(self.test.first()).map_or(25, |m| m.sequence.fps());
        for split in [Split::Train, Split::Test] {
            let sub = dir.join(split.label());
            std::fs::create_dir_all(&sub).map_err(io_err(&sub))?;
            for (i, member) in self.members(split).iter().enumerate() {
                let name = match member.seed {
                    Some(seed) => format!("seq_{seed:04}.csv"),
                    None => format!("seq_{i:04}.csv"),
                };
                save_csv(&member.sequence, &self.topology, &sub.join(&name))?;
                entries.push(CorpusEntry {
                    path: format!("{}/{name}", split.label()),
                    split,
                    action: member.sequence.action().unwrap_or("unlabeled").to_owned(),
                    seed: member.seed,
                });
            }
        }
        let manifest = CorpusManifest {
            fps,
            topology: TOPOLOGY_FILE.into(),
            entries,
        };
        manifest.validate()?;
        self.topology.save(&dir.join(TOPOLOGY_FILE))?;
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&path, json).map_err(io_err(&path))?;
        Ok(manifest)
    }

    /// Loads a corpus directory written by [`Corpus::write`] (or by hand).
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: CorpusManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        let topology = SkeletonTopology::load(&dir.join(&manifest.topology))?;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for entry in &manifest.entries {
            let seq = load_csv(&dir.join(&entry.path), &topology)?;
            let seq = MotionSequence::new(seq.into_frames(), manifest.fps, Some(entry.action.clone()))?;
            let member = Member {
                sequence: seq,
                seed: entry.seed,
            };
            match entry.split {
                Split::Train => train.push(member),
                Split::Test => test.push(member),
            }
        }
        Ok(Corpus { topology, train, test })
    }
}
