//! Data model for multi-modal sequence collections, dataset and ground-truth
//! file ingestion, and persistence of inference results.
//!
//! Dataset files are JSON Lines, one video per line:
//!
//! ```text
//! {"id": "v01", "description": "how to make scrambled eggs",
//!  "frames": [{"subtitle": "crack the eggs", "proposals": [[0.1, 0.2], [0.3, 0.4]]}]}
//! ```
//!
//! Ground-truth files are JSON Lines as well:
//!
//! ```text
//! {"video_id": "v01", "segments": [[0, 40, "crack"], [40, 90, "whisk"]]}
//! ```
//!
//! Segment ends are exclusive.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{ModelState, SamplerDiagnostics};

/// Small English stop-word list applied before tf-idf.
pub const STOP_WORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "but", "by", "can", "could", "did", "do", "does",
    "doing", "don", "down", "for", "from", "get", "go", "going", "got", "had", "has", "have", "he",
    "her", "here", "him", "his", "how", "if", "in", "into", "is", "it", "its", "just", "like",
    "me", "more", "my", "no", "not", "now", "of", "off", "oh", "ok", "okay", "on", "once", "one",
    "only", "or", "our", "out", "over", "really", "so", "some", "that", "the", "their", "them",
    "then", "there", "these", "they", "this", "those", "through", "to", "too", "um", "uh", "up",
    "very", "want", "was", "we", "well", "were", "what", "when", "where", "which", "while", "who",
    "will", "with", "would", "yeah", "you", "your",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextOptions {
    pub remove_stop_words: bool,
}

impl Default for TextOptions {
    fn default() -> Self {
        TextOptions {
            remove_stop_words: true,
        }
    }
}

/// Whitespace split, lowercase, strip punctuation, drop tokens shorter than
/// two characters and, optionally, stop words.
pub fn tokenize(text: &str, options: TextOptions) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| {
            raw.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|tok| tok.chars().count() >= 2)
        .filter(|tok| !(options.remove_stop_words && STOP_WORDS.contains(&tok.as_str())))
        .collect()
}

/// One object proposal, carried as an opaque precomputed feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalFeature(pub Vec<f64>);

impl ProposalFeature {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    /// Raw subtitle text as stored in the dataset.
    pub subtitle: String,
    pub subtitle_tokens: Vec<String>,
    pub proposals: Vec<ProposalFeature>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub description: String,
    pub description_tokens: Vec<String>,
    pub frames: Vec<Frame>,
}

impl VideoRecord {
    pub fn proposal_count(&self) -> usize {
        self.frames.iter().map(|f| f.proposals.len()).sum()
    }
}

/// A validated set of videos sharing one proposal dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    pub videos: Vec<VideoRecord>,
    /// Proposal dimensionality, `None` when no video carries a proposal.
    pub feature_dim: Option<usize>,
}

impl Collection {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.videos.iter().map(|v| v.id.clone()).collect()
    }

    /// All subtitle tokens of all frames, concatenated in order.
    pub fn subtitle_document(&self) -> Vec<String> {
        self.videos
            .iter()
            .flat_map(|v| v.frames.iter())
            .flat_map(|f| f.subtitle_tokens.iter().cloned())
            .collect()
    }

    /// Keep only the videos whose ids are listed, preserving order.
    pub fn retain_ids(&self, ids: &[String]) -> Collection {
        let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
        Collection {
            videos: self
                .videos
                .iter()
                .filter(|v| keep.contains(v.id.as_str()))
                .cloned()
                .collect(),
            feature_dim: self.feature_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub max_proposals_per_frame: usize,
    pub text: TextOptions,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_proposals_per_frame: 10,
            text: TextOptions::default(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawFrame {
    #[serde(default)]
    subtitle: String,
    #[serde(default)]
    proposals: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawVideo {
    id: String,
    #[serde(default)]
    description: String,
    frames: Vec<RawFrame>,
}

pub fn load_dataset(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Collection> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), options)
}

pub fn read_dataset(reader: impl BufRead, options: &LoadOptions) -> Result<Collection> {
    let mut videos = Vec::new();
    let mut seen = HashSet::new();
    let mut feature_dim: Option<usize> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<dataset>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawVideo = serde_json::from_str(&line)
            .map_err(|e| Error::schema(format!("line {}", lineno + 1), e.to_string()))?;
        if raw.id.is_empty() {
            return Err(Error::schema(
                format!("line {}", lineno + 1),
                "empty video id",
            ));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::schema(&raw.id, "duplicate video id"));
        }
        if raw.frames.is_empty() {
            return Err(Error::schema(&raw.id, "video has no frames"));
        }

        let mut frames = Vec::with_capacity(raw.frames.len());
        for (index, rf) in raw.frames.into_iter().enumerate() {
            if rf.proposals.len() > options.max_proposals_per_frame {
                return Err(Error::schema(
                    &raw.id,
                    format!(
                        "frame {index} has {} proposals, cap is {}",
                        rf.proposals.len(),
                        options.max_proposals_per_frame
                    ),
                ));
            }
            let mut proposals = Vec::with_capacity(rf.proposals.len());
            for p in rf.proposals {
                match feature_dim {
                    None => feature_dim = Some(p.len()),
                    Some(d) if d != p.len() => {
                        return Err(Error::Dimension {
                            record: raw.id.clone(),
                            expected: d,
                            found: p.len(),
                        })
                    }
                    _ => {}
                }
                if p.is_empty() || p.iter().any(|x| !x.is_finite()) {
                    return Err(Error::schema(
                        &raw.id,
                        format!("frame {index} has an empty or non-finite proposal vector"),
                    ));
                }
                proposals.push(ProposalFeature(p));
            }
            frames.push(Frame {
                index,
                subtitle_tokens: tokenize(&rf.subtitle, options.text),
                subtitle: rf.subtitle,
                proposals,
            });
        }
        videos.push(VideoRecord {
            description_tokens: tokenize(&raw.description, options.text),
            id: raw.id,
            description: raw.description,
            frames,
        });
    }

    if videos.is_empty() {
        return Err(Error::Empty("dataset contains no videos".into()));
    }
    Ok(Collection {
        videos,
        feature_dim,
    })
}

/// Write a collection in the dataset format. Raw subtitle and description
/// text is written back, so a reload reproduces the same tokens.
pub fn write_dataset(path: impl AsRef<Path>, collection: &Collection) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for v in &collection.videos {
        let raw = RawVideo {
            id: v.id.clone(),
            description: v.description.clone(),
            frames: v
                .frames
                .iter()
                .map(|f| RawFrame {
                    subtitle: f.subtitle.clone(),
                    proposals: f.proposals.iter().map(|p| p.0.clone()).collect(),
                })
                .collect(),
        };
        let line = serde_json::to_string(&raw).expect("dataset records serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// A labelled frame range `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtSegment {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl GtSegment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Frame-wise step labels per video id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub videos: BTreeMap<String, Vec<GtSegment>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawGt {
    video_id: String,
    segments: Vec<(usize, usize, String)>,
}

impl GroundTruth {
    /// Sorted distinct labels across all videos.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .videos
            .values()
            .flatten()
            .map(|s| s.label.clone())
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }

    pub fn segment_count(&self) -> usize {
        self.videos.values().map(Vec::len).sum()
    }

    /// Per-frame label for one video (`None` where no segment covers it).
    pub fn frame_labels(&self, video_id: &str, frames: usize) -> Vec<Option<&str>> {
        let mut out = vec![None; frames];
        if let Some(segs) = self.videos.get(video_id) {
            for s in segs {
                for slot in out.iter_mut().take(s.end.min(frames)).skip(s.start) {
                    *slot = Some(s.label.as_str());
                }
            }
        }
        out
    }

    /// Checks segment ordering and overlap; with `frame_counts` also checks
    /// that segments fall inside each video's frame range.
    pub fn validate(&self, frame_counts: Option<&BTreeMap<String, usize>>) -> Result<()> {
        for (id, segs) in &self.videos {
            let mut sorted: Vec<&GtSegment> = segs.iter().collect();
            sorted.sort_by_key(|s| s.start);
            for s in &sorted {
                if s.end <= s.start {
                    return Err(Error::schema(
                        id,
                        format!("empty segment [{}, {})", s.start, s.end),
                    ));
                }
            }
            for w in sorted.windows(2) {
                if w[1].start < w[0].end {
                    return Err(Error::schema(id, "overlapping ground-truth segments"));
                }
            }
            if let Some(counts) = frame_counts {
                match counts.get(id) {
                    None => {}
                    Some(&n) => {
                        if sorted.last().is_some_and(|s| s.end > n) {
                            return Err(Error::schema(
                                id,
                                format!("segment beyond frame count {n}"),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Build segments from per-frame integer labels, merging runs.
    pub fn from_label_sequences<'a>(
        sequences: impl IntoIterator<Item = (&'a str, &'a [usize])>,
        name: impl Fn(usize) -> String,
    ) -> GroundTruth {
        let mut videos = BTreeMap::new();
        for (id, labels) in sequences {
            let mut segs = Vec::new();
            let mut start = 0;
            for t in 1..=labels.len() {
                if t == labels.len() || labels[t] != labels[start] {
                    segs.push(GtSegment {
                        start,
                        end: t,
                        label: name(labels[start]),
                    });
                    start = t;
                }
            }
            videos.insert(id.to_string(), segs);
        }
        GroundTruth { videos }
    }
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut gt = GroundTruth::default();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawGt = serde_json::from_str(&line)
            .map_err(|e| Error::schema(format!("line {}", lineno + 1), e.to_string()))?;
        let segs = raw
            .segments
            .into_iter()
            .map(|(start, end, label)| GtSegment { start, end, label })
            .collect();
        if gt.videos.insert(raw.video_id.clone(), segs).is_some() {
            return Err(Error::schema(raw.video_id, "duplicate ground-truth record"));
        }
    }
    gt.validate(None)?;
    Ok(gt)
}

pub fn write_ground_truth(path: impl AsRef<Path>, gt: &GroundTruth) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (id, segs) in &gt.videos {
        let raw = RawGt {
            video_id: id.clone(),
            segments: segs
                .iter()
                .map(|s| (s.start, s.end, s.label.clone()))
                .collect(),
        };
        let line = serde_json::to_string(&raw).expect("ground truth serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

/// Everything the parsing stage produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResults {
    pub schema_version: u32,
    pub sequence_ids: Vec<String>,
    /// 1-based sweep the reported state was taken from.
    pub reported_sweep: usize,
    pub reported: ModelState,
    pub last: ModelState,
    pub diagnostics: SamplerDiagnostics,
}

pub fn save_results(path: impl AsRef<Path>, results: &ParseResults) -> Result<()> {
    save_json(path, results)
}

pub fn load_results(path: impl AsRef<Path>) -> Result<ParseResults> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::schema(path.display().to_string(), "missing schema_version"))?;
    if found != u64::from(RESULTS_SCHEMA_VERSION) {
        return Err(Error::Version {
            expected: RESULTS_SCHEMA_VERSION,
            found: u32::try_from(found).unwrap_or(u32::MAX),
        });
    }
    serde_json::from_value(value)
        .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))
}

/// Pretty-printed JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))
}
