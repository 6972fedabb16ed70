//! Similarity graphs: proposal kNN graphs inside a video, proposal kNN
//! graphs between neighbouring videos, and the video kNN graph over
//! description bags-of-words.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::sparse::SparseMatrix;
use crate::corpus::Collection;
use crate::error::{Error, Result};

pub const DEFAULT_PROPOSAL_NEIGHBORS: usize = 2;
pub const DEFAULT_VIDEO_NEIGHBORS: usize = 2;

/// Intra-video matrices `A^(i)`, inter-video matrices `A^(i,j)` for each
/// unordered edge of the video graph (stored once with `i < j`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGraph {
    pub intra: Vec<SparseMatrix>,
    pub inter: Vec<InterEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterEdge {
    pub i: usize,
    pub j: usize,
    /// `n_i × n_j` similarities between proposals of video `i` and `j`.
    pub matrix: SparseMatrix,
}

impl SimilarityGraph {
    pub fn video_count(&self) -> usize {
        self.intra.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.intra.iter().map(SparseMatrix::rows).collect()
    }

    pub fn neighbors(&self, video: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .inter
            .iter()
            .filter_map(|e| {
                if e.i == video {
                    Some(e.j)
                } else if e.j == video {
                    Some(e.i)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn is_all_zero(&self) -> bool {
        self.intra.iter().all(|a| a.nnz() == 0) && self.inter.iter().all(|e| e.matrix.nnz() == 0)
    }

    /// Structural checks: square symmetric non-negative intra blocks and
    /// inter blocks whose shapes match the endpoints.
    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.intra.iter().enumerate() {
            if !a.is_symmetric(1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "intra matrix {i} is not symmetric"
                )));
            }
            if a.min_value() < 0.0 || a.values().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "intra matrix {i} has invalid entries"
                )));
            }
        }
        for e in &self.inter {
            if e.i >= e.j || e.j >= self.intra.len() {
                return Err(Error::InvalidArgument(format!(
                    "bad inter edge ({}, {})",
                    e.i, e.j
                )));
            }
            if e.matrix.rows() != self.intra[e.i].rows()
                || e.matrix.cols() != self.intra[e.j].rows()
            {
                return Err(Error::InvalidArgument(format!(
                    "inter matrix ({}, {}) has shape {}x{}",
                    e.i,
                    e.j,
                    e.matrix.rows(),
                    e.matrix.cols()
                )));
            }
            if e.matrix.min_value() < 0.0 || e.matrix.values().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "inter matrix ({}, {}) has invalid entries",
                    e.i, e.j
                )));
            }
        }
        Ok(())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Gaussian kernel `exp(-d² / 2σ²)`; with `σ = 0` only coincident points are similar.
pub fn gaussian_similarity(distance: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        (-distance * distance / (2.0 * sigma * sigma)).exp()
    } else if distance == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median pairwise Euclidean distance among `points`.
pub fn median_pairwise_distance(points: &[&[f64]]) -> f64 {
    let mut d = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for a in 0..points.len() {
        for b in a + 1..points.len() {
            d.push(euclidean(points[a], points[b]));
        }
    }
    median(d)
}

pub fn median_cross_distance(left: &[&[f64]], right: &[&[f64]]) -> f64 {
    let mut d = Vec::with_capacity(left.len() * right.len());
    for a in left {
        for b in right {
            d.push(euclidean(a, b));
        }
    }
    median(d)
}

/// Indices of the `k` smallest distances, ties broken by index.
fn nearest(distances: impl Iterator<Item = (usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = distances.collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// kNN similarity graph over `n` nodes with distances supplied by `dist`.
/// Edges are symmetrized by union; `k` is capped at `n - 1`.
pub fn knn_from_distances(
    n: usize,
    k: usize,
    sigma: f64,
    dist: impl Fn(usize, usize) -> f64,
) -> SparseMatrix {
    let k = k.min(n.saturating_sub(1));
    let mut triplets = Vec::with_capacity(2 * n * k);
    for a in 0..n {
        for (b, d) in nearest((0..n).filter(|&b| b != a).map(|b| (b, dist(a, b))), k) {
            let s = gaussian_similarity(d, sigma);
            triplets.push((a, b, s));
            triplets.push((b, a, s));
        }
    }
    SparseMatrix::from_triplets(n, n, triplets)
}

/// kNN similarity graph of one video's proposals with a given bandwidth.
pub fn proposal_knn_with_sigma(points: &[&[f64]], k: usize, sigma: f64) -> SparseMatrix {
    knn_from_distances(points.len(), k, sigma, |a, b| {
        euclidean(points[a], points[b])
    })
}

/// kNN graph of one video's proposals; bandwidth is the median pairwise distance.
pub fn build_proposal_knn(points: &[&[f64]], k: usize) -> Result<SparseMatrix> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if points.len() < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} proposals are too few for a {k}-NN graph",
            points.len()
        )));
    }
    let sigma = median_pairwise_distance(points);
    Ok(proposal_knn_with_sigma(points, k, sigma))
}

/// Bipartite kNN graph between two node sets: each node links to its `k`
/// nearest nodes on the other side.
pub fn bipartite_knn_from_distances(
    left: usize,
    right: usize,
    k: usize,
    sigma: f64,
    dist: impl Fn(usize, usize) -> f64,
) -> SparseMatrix {
    let mut triplets = Vec::new();
    for a in 0..left {
        for (b, d) in nearest((0..right).map(|b| (b, dist(a, b))), k.min(right)) {
            triplets.push((a, b, gaussian_similarity(d, sigma)));
        }
    }
    for b in 0..right {
        for (a, d) in nearest((0..left).map(|a| (a, dist(a, b))), k.min(left)) {
            triplets.push((a, b, gaussian_similarity(d, sigma)));
        }
    }
    SparseMatrix::from_triplets(left, right, triplets)
}

/// Bipartite kNN graph between two videos' proposals.
pub fn inter_knn_with_sigma(
    left: &[&[f64]],
    right: &[&[f64]],
    k: usize,
    sigma: f64,
) -> SparseMatrix {
    bipartite_knn_from_distances(left.len(), right.len(), k, sigma, |a, b| {
        euclidean(left[a], right[b])
    })
}

/// L1-normalized bag of words.
pub fn bag_of_words(tokens: &[String]) -> BTreeMap<&str, f64> {
    let mut bag: BTreeMap<&str, f64> = BTreeMap::new();
    for t in tokens {
        *bag.entry(t.as_str()).or_default() += 1.0;
    }
    let total = tokens.len() as f64;
    if total > 0.0 {
        bag.values_mut().for_each(|v| *v /= total);
    }
    bag
}

/// `½ Σ_d (u_d − v_d)² / (u_d + v_d)`, skipping terms with zero denominator.
pub fn chi_squared(u: &BTreeMap<&str, f64>, v: &BTreeMap<&str, f64>) -> f64 {
    let mut sum = 0.0;
    for (w, &a) in u {
        let b = v.get(w).copied().unwrap_or(0.0);
        if a + b > 0.0 {
            sum += (a - b) * (a - b) / (a + b);
        }
    }
    for (w, &b) in v {
        if !u.contains_key(w) && b > 0.0 {
            sum += b;
        }
    }
    0.5 * sum
}

/// Pairwise χ² distances between video descriptions.
pub fn description_distances(collection: &Collection) -> Result<Vec<Vec<f64>>> {
    if collection
        .videos
        .iter()
        .all(|v| v.description_tokens.is_empty())
    {
        return Err(Error::Degenerate("all video descriptions are empty".into()));
    }
    let bags: Vec<_> = collection
        .videos
        .iter()
        .map(|v| bag_of_words(&v.description_tokens))
        .collect();
    let n = bags.len();
    let mut d = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let x = chi_squared(&bags[a], &bags[b]);
            d[a][b] = x;
            d[b][a] = x;
        }
    }
    Ok(d)
}

/// Symmetric video adjacency: each video links to its `k` nearest videos by
/// description χ² distance, then edges are made undirected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoGraph {
    pub neighbors: Vec<Vec<usize>>,
}

impl VideoGraph {
    /// Unordered edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Graph with no edges, for single-video collections.
    pub fn isolated(n: usize) -> Self {
        VideoGraph {
            neighbors: vec![Vec::new(); n],
        }
    }
}

pub fn build_video_knn(collection: &Collection, k: usize) -> Result<VideoGraph> {
    if collection.len() < 2 {
        return Err(Error::InvalidArgument(
            "video kNN graph needs at least 2 videos".into(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let d = description_distances(collection)?;
    Ok(video_knn_from_distances(&d, k))
}

pub fn video_knn_from_distances(d: &[Vec<f64>], k: usize) -> VideoGraph {
    let n = d.len();
    let k = k.min(n.saturating_sub(1));
    let mut neighbors = vec![Vec::new(); n];
    for a in 0..n {
        for (b, _) in nearest((0..n).filter(|&b| b != a).map(|b| (b, d[a][b])), k) {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
        nb.dedup();
    }
    VideoGraph { neighbors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{read_dataset, LoadOptions};

    fn as_refs(points: &[Vec<f64>]) -> Vec<&[f64]> {
        points.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn identical_vectors_fully_similar() {
        let pts = vec![vec![1.0, 2.0]; 3];
        let a = build_proposal_knn(&as_refs(&pts), 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(a.get(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn separated_blobs_have_no_cross_edges() {
        // Exhaustive NN check: every point's two nearest neighbours lie in its own blob.
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(vec![0.1 * i as f64, 0.05 * (i % 3) as f64]);
        }
        for i in 0..10 {
            pts.push(vec![50.0 + 0.1 * i as f64, 50.0 - 0.05 * (i % 4) as f64]);
        }
        let refs = as_refs(&pts);
        for a in 0..20 {
            let mut d: Vec<(usize, f64)> = (0..20)
                .filter(|&b| b != a)
                .map(|b| (b, euclidean(refs[a], refs[b])))
                .collect();
            d.sort_by(|x, y| x.1.total_cmp(&y.1));
            assert!(d[..2].iter().all(|(b, _)| (*b < 10) == (a < 10)));
        }
        let g = build_proposal_knn(&refs, 2).unwrap();
        for a in 0..20 {
            for &(b, _) in g.row(a) {
                assert_eq!(a < 10, b < 10, "cross-blob edge {a}-{b}");
            }
        }
        assert!(g.is_symmetric(0.0));
    }

    #[test]
    fn too_few_proposals() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(build_proposal_knn(&as_refs(&pts), 2).is_err());
    }

    #[test]
    fn chi_squared_values() {
        let a = vec!["eggs".to_string(), "pan".to_string()];
        let b = vec!["tire".to_string(), "jack".to_string()];
        let (ba, bb) = (bag_of_words(&a), bag_of_words(&b));
        // ½ (0.25/0.5 · 4) = 1
        assert!((chi_squared(&ba, &bb) - 1.0).abs() < 1e-15);
        assert_eq!(chi_squared(&ba, &ba), 0.0);
    }

    fn collection(descriptions: &[&str]) -> Collection {
        let lines: Vec<String> = descriptions
            .iter()
            .enumerate()
            .map(|(i, d)| format!(r#"{{"id":"v{i}","description":"{d}","frames":[{{}}]}}"#))
            .collect();
        read_dataset(lines.join("\n").as_bytes(), &LoadOptions::default()).unwrap()
    }

    #[test]
    fn video_knn_links_identical_descriptions() {
        let c = collection(&[
            "boil eggs pot",
            "boil eggs pot",
            "change tire car",
            "change tire jack",
        ]);
        let g = build_video_knn(&c, 1).unwrap();
        assert!(g.neighbors[0].contains(&1));
        assert!(g.neighbors[1].contains(&0));
        assert!(g.neighbors[2].contains(&3));
        assert_eq!(g.edges(), vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn video_knn_errors() {
        assert!(build_video_knn(&collection(&["eggs"]), 2).is_err());
        assert!(matches!(
            build_video_knn(&collection(&["", "the"]), 2),
            Err(Error::Degenerate(_))
        ));
    }
}
