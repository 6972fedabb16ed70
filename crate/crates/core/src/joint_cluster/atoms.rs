//! Visual atoms: repeated joint clustering over the remaining proposal pool.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::{
    bipartite_knn_from_distances, build_video_knn, euclidean, gaussian_similarity,
    knn_from_distances, median, InterEdge, SimilarityGraph, VideoGraph, DEFAULT_PROPOSAL_NEIGHBORS,
    DEFAULT_VIDEO_NEIGHBORS,
};
use super::solve::{solve_joint_cluster, SolverConfig};
use crate::corpus::Collection;
use crate::error::{Error, Result};
use crate::rng::derive_index_seed;

pub const DEFAULT_VISUAL_ATOMS: usize = 20;
pub const DEFAULT_QUALITY_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub atoms: usize,
    pub proposal_neighbors: usize,
    pub video_neighbors: usize,
    /// Extraction stops once a cluster's mean pairwise member similarity
    /// falls below this value.
    pub quality_floor: f64,
    /// Minimum number of videos an atom must draw members from (capped at
    /// the collection size).
    pub min_videos: usize,
    pub solver: SolverConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            atoms: DEFAULT_VISUAL_ATOMS,
            proposal_neighbors: DEFAULT_PROPOSAL_NEIGHBORS,
            video_neighbors: DEFAULT_VIDEO_NEIGHBORS,
            quality_floor: DEFAULT_QUALITY_FLOOR,
            min_videos: 2,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProposalRef {
    pub video: usize,
    pub frame: usize,
    pub proposal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualAtom {
    pub id: usize,
    pub members: Vec<ProposalRef>,
    pub centroid: Vec<f64>,
    pub quality: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    AtomCount,
    PoolExhausted,
    QualityFloor,
    SingleVideo,
    NoStructure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSet {
    pub video_ids: Vec<String>,
    pub atoms: Vec<VisualAtom>,
    pub stop_reason: StopReason,
}

impl AtomSet {
    pub fn membership(&self) -> HashMap<ProposalRef, usize> {
        self.atoms
            .iter()
            .enumerate()
            .flat_map(|(a, atom)| atom.members.iter().map(move |m| (*m, a)))
            .collect()
    }
}

struct VideoPool<'a> {
    refs: Vec<ProposalRef>,
    points: Vec<&'a [f64]>,
    dist: Vec<f64>,
    sigma: f64,
}

struct EdgePool {
    i: usize,
    j: usize,
    dist: Vec<f64>,
    sigma: f64,
}

fn mean_pair_similarity(
    members: &[Vec<usize>],
    pools: &[VideoPool<'_>],
    edges: &[EdgePool],
) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for (m, pool) in members.iter().zip(pools) {
        let n = pool.refs.len();
        for (x, &a) in m.iter().enumerate() {
            for &b in &m[x + 1..] {
                sum += gaussian_similarity(pool.dist[a * n + b], pool.sigma);
                count += 1;
            }
        }
    }
    for e in edges {
        let nj = pools[e.j].refs.len();
        for &a in &members[e.i] {
            for &b in &members[e.j] {
                sum += gaussian_similarity(e.dist[a * nj + b], e.sigma);
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Extract up to `config.atoms` visual atoms by repeatedly solving the joint
/// clustering problem and removing the selected proposals.
pub fn extract_visual_atoms(collection: &Collection, config: &ClusterConfig) -> Result<AtomSet> {
    if config.atoms == 0 {
        return Err(Error::InvalidArgument(
            "atom count must be at least 1".into(),
        ));
    }
    if config.proposal_neighbors == 0 || config.video_neighbors == 0 {
        return Err(Error::InvalidArgument(
            "neighbour counts must be at least 1".into(),
        ));
    }
    let n_videos = collection.len();
    let video_graph = if n_videos >= 2 {
        build_video_knn(collection, config.video_neighbors)?
    } else {
        VideoGraph::isolated(n_videos)
    };

    let pools: Vec<VideoPool<'_>> = collection
        .videos
        .par_iter()
        .enumerate()
        .map(|(vi, video)| {
            let mut refs = Vec::new();
            let mut points = Vec::new();
            for (fi, frame) in video.frames.iter().enumerate() {
                for (pi, p) in frame.proposals.iter().enumerate() {
                    refs.push(ProposalRef {
                        video: vi,
                        frame: fi,
                        proposal: pi,
                    });
                    points.push(p.as_slice());
                }
            }
            let n = points.len();
            let mut dist = vec![0.0; n * n];
            let mut upper = Vec::with_capacity(n * n.saturating_sub(1) / 2);
            for a in 0..n {
                for b in a + 1..n {
                    let d = euclidean(points[a], points[b]);
                    dist[a * n + b] = d;
                    dist[b * n + a] = d;
                    upper.push(d);
                }
            }
            VideoPool {
                refs,
                points,
                dist,
                sigma: median(upper),
            }
        })
        .collect();

    let edges: Vec<EdgePool> = video_graph
        .edges()
        .into_par_iter()
        .map(|(i, j)| {
            let (pi, pj) = (&pools[i].points, &pools[j].points);
            let dist: Vec<f64> = pi
                .iter()
                .flat_map(|a| pj.iter().map(move |b| euclidean(a, b)))
                .collect();
            let sigma = median(dist.clone());
            EdgePool { i, j, dist, sigma }
        })
        .collect();

    let min_span = config.min_videos.min(n_videos).max(1);
    let mut active: Vec<Vec<bool>> = pools.iter().map(|p| vec![true; p.refs.len()]).collect();
    let mut atoms = Vec::new();
    let mut stop_reason = StopReason::AtomCount;

    while atoms.len() < config.atoms {
        let local: Vec<Vec<usize>> = active
            .iter()
            .map(|a| {
                a.iter()
                    .enumerate()
                    .filter(|(_, &on)| on)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        if local.iter().map(Vec::len).sum::<usize>() < 2 {
            stop_reason = StopReason::PoolExhausted;
            break;
        }

        let k = config.proposal_neighbors;
        let intra: Vec<_> = pools
            .par_iter()
            .zip(&local)
            .map(|(pool, idx)| {
                let n = pool.refs.len();
                knn_from_distances(idx.len(), k, pool.sigma, |a, b| {
                    pool.dist[idx[a] * n + idx[b]]
                })
            })
            .collect();
        let inter: Vec<_> = edges
            .par_iter()
            .map(|e| {
                let (li, lj) = (&local[e.i], &local[e.j]);
                let nj = pools[e.j].refs.len();
                InterEdge {
                    i: e.i,
                    j: e.j,
                    matrix: bipartite_knn_from_distances(li.len(), lj.len(), k, e.sigma, |a, b| {
                        e.dist[li[a] * nj + lj[b]]
                    }),
                }
            })
            .collect();
        let graph = SimilarityGraph { intra, inter };

        let solver = SolverConfig {
            seed: derive_index_seed(config.solver.seed, atoms.len() as u64),
            ..config.solver.clone()
        };
        let solution = match solve_joint_cluster(&graph, &solver) {
            Ok(s) => s,
            Err(Error::Degenerate(_)) | Err(Error::Empty(_)) => {
                stop_reason = StopReason::NoStructure;
                break;
            }
            Err(e) => return Err(e),
        };

        let members: Vec<Vec<usize>> = solution
            .members
            .iter()
            .zip(&local)
            .map(|(m, idx)| m.iter().map(|&x| idx[x]).collect())
            .collect();
        if solution.video_span() < min_span {
            stop_reason = StopReason::SingleVideo;
            break;
        }
        let quality = mean_pair_similarity(&members, &pools, &edges);
        if quality < config.quality_floor {
            stop_reason = StopReason::QualityFloor;
            break;
        }

        let mut refs = Vec::new();
        let dim = collection.feature_dim.unwrap_or(0);
        let mut centroid = vec![0.0; dim];
        for (vi, m) in members.iter().enumerate() {
            for &x in m {
                refs.push(pools[vi].refs[x]);
                for (c, v) in centroid.iter_mut().zip(pools[vi].points[x]) {
                    *c += v;
                }
                active[vi][x] = false;
            }
        }
        let count = refs.len().max(1) as f64;
        centroid.iter_mut().for_each(|c| *c /= count);
        log::debug!(
            "atom {}: {} proposals from {} videos, quality {:.3}",
            atoms.len(),
            refs.len(),
            solution.video_span(),
            quality
        );
        atoms.push(VisualAtom {
            id: atoms.len(),
            members: refs,
            centroid,
            quality,
            objective: solution.objective,
        });
    }

    Ok(AtomSet {
        video_ids: collection.ids(),
        atoms,
        stop_reason,
    })
}
