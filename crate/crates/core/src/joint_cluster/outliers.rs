use serde::{Deserialize, Serialize};

use super::graph::{description_distances, median};
use super::scgp::scgp_single;
use super::sparse::SparseMatrix;
use crate::corpus::Collection;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierSplit {
    pub kept: Vec<String>,
    pub discarded: Vec<String>,
}

/// Video-level similarities `exp(−χ²/σ)` with σ the median off-diagonal
/// χ² distance and a zero diagonal.
pub fn video_similarity(collection: &Collection) -> Result<SparseMatrix> {
    let d = description_distances(collection)?;
    let n = d.len();
    let mut off = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for (a, row) in d.iter().enumerate() {
        off.extend(row[a + 1..].iter().copied());
    }
    let sigma = median(off);
    let sim: Vec<Vec<f64>> = d
        .iter()
        .enumerate()
        .map(|(a, row)| {
            row.iter()
                .enumerate()
                .map(|(b, &x)| {
                    if a == b {
                        0.0
                    } else if sigma > 0.0 {
                        (-x / sigma).exp()
                    } else if x == 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(SparseMatrix::from_dense(&sim))
}

/// Keep the dominant cluster of videos by description similarity and
/// discard the rest.
pub fn filter_outliers(collection: &Collection) -> Result<OutlierSplit> {
    if collection.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "outlier filtering needs at least 3 videos, got {}",
            collection.len()
        )));
    }
    let sim = video_similarity(collection)?;
    let solution = scgp_single(&sim)?;
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for (i, v) in collection.videos.iter().enumerate() {
        if solution.members.binary_search(&i).is_ok() {
            kept.push(v.id.clone());
        } else {
            discarded.push(v.id.clone());
        }
    }
    Ok(OutlierSplit { kept, discarded })
}
