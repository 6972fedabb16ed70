//! Binary multi-modal frame vectors over the atom vocabulary, and the
//! sequence file formats that carry them.
//!
//! Layout of every vector is `[language atoms | visual atoms]`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Collection, Frame};
use crate::error::{Error, Result};
use crate::joint_cluster::ProposalRef;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomVocabulary {
    pub language: Vec<String>,
    pub visual: usize,
}

impl AtomVocabulary {
    pub fn dim(&self) -> usize {
        self.language.len() + self.visual
    }
}

/// Sparse storage of a binary vector: its dimension and sorted set bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FrameVector {
    dim: usize,
    ones: Vec<u32>,
}

impl FrameVector {
    pub fn zeros(dim: usize) -> Self {
        FrameVector {
            dim,
            ones: Vec::new(),
        }
    }

    /// Panics if an index is out of range.
    pub fn from_ones(dim: usize, ones: impl IntoIterator<Item = usize>) -> Self {
        let mut ones: Vec<u32> = ones
            .into_iter()
            .map(|d| {
                assert!(d < dim, "bit {d} out of range for dimension {dim}");
                d as u32
            })
            .collect();
        ones.sort_unstable();
        ones.dedup();
        FrameVector { dim, ones }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        FrameVector::from_ones(
            bits.len(),
            bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.ones.iter().map(|&d| d as usize)
    }

    pub fn count_ones(&self) -> usize {
        self.ones.len()
    }

    pub fn get(&self, d: usize) -> bool {
        self.ones.binary_search(&(d as u32)).is_ok()
    }

    pub fn to_bits(&self) -> Vec<bool> {
        let mut bits = vec![false; self.dim];
        for d in self.ones() {
            bits[d] = true;
        }
        bits
    }

    pub fn to_dense_string(&self) -> String {
        self.to_bits()
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }

    pub fn parse_dense(text: &str) -> Option<Self> {
        let mut ones = Vec::new();
        for (i, c) in text.chars().enumerate() {
            match c {
                '1' => ones.push(i),
                '0' => {}
                _ => return None,
            }
        }
        Some(FrameVector::from_ones(text.chars().count(), ones))
    }
}

pub fn represent_frame(
    frame: &Frame,
    video: usize,
    vocab: &AtomVocabulary,
    membership: &HashMap<ProposalRef, usize>,
) -> FrameVector {
    let words: HashSet<&str> = frame.subtitle_tokens.iter().map(String::as_str).collect();
    let language = vocab
        .language
        .iter()
        .enumerate()
        .filter(|(_, w)| words.contains(w.as_str()))
        .map(|(k, _)| k);
    let offset = vocab.language.len();
    let visual = (0..frame.proposals.len()).filter_map(|p| {
        membership
            .get(&ProposalRef {
                video,
                frame: frame.index,
                proposal: p,
            })
            .filter(|&&atom| atom < vocab.visual)
            .map(|&atom| offset + atom)
    });
    FrameVector::from_ones(vocab.dim(), language.chain(visual))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub id: String,
    pub frames: Vec<FrameVector>,
}

/// Per-video sequences of frame vectors sharing one dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceSet {
    pub dim: usize,
    pub sequences: Vec<Sequence>,
}

impl SequenceSet {
    pub fn validate(&self) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(Error::Empty("sequence set has no sequences".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidArgument(
                "frame vectors have dimension 0".into(),
            ));
        }
        let mut seen = HashSet::new();
        for s in &self.sequences {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::schema(&s.id, "duplicate sequence id"));
            }
            if s.frames.is_empty() {
                return Err(Error::schema(&s.id, "sequence has no frames"));
            }
            if let Some(f) = s.frames.iter().find(|f| f.dim() != self.dim) {
                return Err(Error::Dimension {
                    record: s.id.clone(),
                    expected: self.dim,
                    found: f.dim(),
                });
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        self.sequences.iter().map(|s| s.id.clone()).collect()
    }

    pub fn frame_counts(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.frames.len()).collect()
    }
}

/// Represent every frame of every video, keeping every `stride`-th frame.
pub fn represent_collection(
    collection: &Collection,
    vocab: &AtomVocabulary,
    membership: &HashMap<ProposalRef, usize>,
    stride: usize,
) -> Result<SequenceSet> {
    if stride == 0 {
        return Err(Error::InvalidArgument(
            "frame stride must be at least 1".into(),
        ));
    }
    let sequences = collection
        .videos
        .iter()
        .enumerate()
        .map(|(vi, video)| Sequence {
            id: video.id.clone(),
            frames: video
                .frames
                .iter()
                .step_by(stride)
                .map(|f| represent_frame(f, vi, vocab, membership))
                .collect(),
        })
        .collect();
    Ok(SequenceSet {
        dim: vocab.dim(),
        sequences,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequenceFormat {
    /// JSON Lines, one sequence per line, frames as `"0110…"` strings.
    Dense,
    /// Little-endian binary with bit-packed frames.
    Packed,
}

const PACKED_MAGIC: &[u8; 8] = b"SPBITS01";

#[derive(Serialize, Deserialize)]
struct DenseRecord {
    id: String,
    frames: Vec<String>,
}

pub fn write_sequences(
    path: impl AsRef<Path>,
    set: &SequenceSet,
    format: SequenceFormat,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        SequenceFormat::Dense => {
            for s in &set.sequences {
                let rec = DenseRecord {
                    id: s.id.clone(),
                    frames: s.frames.iter().map(FrameVector::to_dense_string).collect(),
                };
                let line = serde_json::to_string(&rec).expect("sequence records serialize");
                writeln!(out, "{line}").map_err(io)?;
            }
        }
        SequenceFormat::Packed => {
            out.write_all(PACKED_MAGIC).map_err(io)?;
            out.write_all(&(set.dim as u32).to_le_bytes()).map_err(io)?;
            out.write_all(&(set.sequences.len() as u32).to_le_bytes())
                .map_err(io)?;
            let row_bytes = set.dim.div_ceil(8);
            for s in &set.sequences {
                out.write_all(&(s.id.len() as u32).to_le_bytes())
                    .map_err(io)?;
                out.write_all(s.id.as_bytes()).map_err(io)?;
                out.write_all(&(s.frames.len() as u32).to_le_bytes())
                    .map_err(io)?;
                for f in &s.frames {
                    let mut row = vec![0u8; row_bytes];
                    for d in f.ones() {
                        row[d / 8] |= 1 << (d % 8);
                    }
                    out.write_all(&row).map_err(io)?;
                }
            }
        }
    }
    out.flush().map_err(io)
}

/// Read a sequence file, detecting the format from its first bytes.
pub fn read_sequences(path: impl AsRef<Path>) -> Result<SequenceSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let set = if bytes.starts_with(PACKED_MAGIC) {
        read_packed(&bytes[PACKED_MAGIC.len()..])
            .map_err(|m| Error::schema(path.display().to_string(), m))?
    } else {
        read_dense(BufReader::new(bytes.as_slice()))?
    };
    set.validate()?;
    Ok(set)
}

fn read_dense(reader: impl BufRead) -> Result<SequenceSet> {
    let mut sequences = Vec::new();
    let mut dim = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<sequences>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DenseRecord = serde_json::from_str(&line)
            .map_err(|e| Error::schema(format!("line {}", lineno + 1), e.to_string()))?;
        let mut frames = Vec::with_capacity(rec.frames.len());
        for text in &rec.frames {
            let f = FrameVector::parse_dense(text)
                .ok_or_else(|| Error::schema(&rec.id, "frame is not a 0/1 string"))?;
            if *dim.get_or_insert(f.dim()) != f.dim() {
                return Err(Error::Dimension {
                    record: rec.id.clone(),
                    expected: dim.unwrap_or(0),
                    found: f.dim(),
                });
            }
            frames.push(f);
        }
        sequences.push(Sequence { id: rec.id, frames });
    }
    Ok(SequenceSet {
        dim: dim.unwrap_or(0),
        sequences,
    })
}

fn read_packed(mut bytes: &[u8]) -> std::result::Result<SequenceSet, String> {
    fn u32_le(r: &mut &[u8]) -> std::result::Result<usize, String> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)
            .map_err(|_| "truncated packed file".to_string())?;
        Ok(u32::from_le_bytes(buf) as usize)
    }
    let dim = u32_le(&mut bytes)?;
    let n = u32_le(&mut bytes)?;
    let row_bytes = dim.div_ceil(8);
    let mut sequences = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u32_le(&mut bytes)?;
        let mut id = vec![0u8; len];
        bytes
            .read_exact(&mut id)
            .map_err(|_| "truncated id".to_string())?;
        let id = String::from_utf8(id).map_err(|_| "id is not UTF-8".to_string())?;
        let t = u32_le(&mut bytes)?;
        let mut frames = Vec::with_capacity(t);
        for _ in 0..t {
            let mut row = vec![0u8; row_bytes];
            bytes
                .read_exact(&mut row)
                .map_err(|_| "truncated frame".to_string())?;
            frames.push(FrameVector::from_ones(
                dim,
                (0..dim).filter(|d| row[d / 8] & (1 << (d % 8)) != 0),
            ));
        }
        sequences.push(Sequence { id, frames });
    }
    if !bytes.is_empty() {
        return Err("trailing bytes after last sequence".into());
    }
    Ok(SequenceSet { dim, sequences })
}
