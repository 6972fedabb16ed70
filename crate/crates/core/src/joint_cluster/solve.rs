//! Projected gradient ascent on the relaxed joint objective, followed by
//! per-video prefix rounding against the joint objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::SimilarityGraph;
use super::objective::{gradient_unchecked, objective_unchecked, ClusterIndicator};
use super::scgp::{descending_order, dominant_eigenvector, prefix_sweep};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Initial step size η₀; the step at iteration t is η₀ / (1 + t/τ).
    pub step_size: f64,
    /// Decay horizon τ.
    pub decay: f64,
    pub tolerance: f64,
    /// Consecutive sub-tolerance improvements before stopping.
    pub patience: usize,
    pub max_steps: usize,
    /// When set, each step uses a random fraction of the inter-video edges,
    /// reweighted by its inverse.
    pub edge_sample_fraction: Option<f64>,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step_size: 0.1,
            decay: 100.0,
            tolerance: 1e-6,
            patience: 20,
            max_steps: 5000,
            edge_sample_fraction: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSolution {
    /// Selected proposal indices per video, ascending.
    pub members: Vec<Vec<usize>>,
    /// Joint objective of the rounded solution.
    pub objective: f64,
    /// Best relaxed iterate and its objective.
    pub relaxed: ClusterIndicator,
    pub relaxed_objective: f64,
    pub steps: usize,
    pub converged: bool,
}

impl JointSolution {
    /// Number of videos contributing at least one member.
    pub fn video_span(&self) -> usize {
        self.members.iter().filter(|m| !m.is_empty()).count()
    }
}

/// Per-video dominant eigenvectors scaled so that their largest entry is 1.
fn spectral_init(g: &SimilarityGraph) -> ClusterIndicator {
    ClusterIndicator {
        blocks: g
            .intra
            .iter()
            .map(|a| {
                if a.nnz() == 0 {
                    return vec![0.5; a.rows()];
                }
                let v = dominant_eigenvector(a);
                let max = v.iter().cloned().fold(0.0, f64::max);
                if max > 0.0 {
                    v.iter().map(|x| (x / max).clamp(0.0, 1.0)).collect()
                } else {
                    vec![0.5; a.rows()]
                }
            })
            .collect(),
    }
}

pub fn solve_joint_cluster(g: &SimilarityGraph, config: &SolverConfig) -> Result<JointSolution> {
    solve_joint_cluster_observed(g, config, |_, _, _| {})
}

/// As [`solve_joint_cluster`], calling `observe(step, iterate, objective)`
/// after every projected step.
pub fn solve_joint_cluster_observed(
    g: &SimilarityGraph,
    config: &SolverConfig,
    mut observe: impl FnMut(usize, &ClusterIndicator, f64),
) -> Result<JointSolution> {
    g.validate()?;
    if g.sizes().iter().sum::<usize>() == 0 {
        return Err(Error::Empty("similarity graph has no nodes".into()));
    }
    if g.is_all_zero() {
        return Err(Error::Degenerate("all similarities are zero".into()));
    }
    if let Some(p) = config.edge_sample_fraction {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "edge sample fraction {p} outside (0, 1]"
            )));
        }
    }

    let init = spectral_init(g);
    let mut x = init.clone();
    let mut current = objective_unchecked(&x, g);
    let mut best = (x.clone(), current);
    let mut rng = rng_from_seed(config.seed);
    let mut stall = 0;
    let mut steps = 0;
    let mut converged = false;

    while steps < config.max_steps {
        let weights: Option<Vec<f64>> = config.edge_sample_fraction.map(|p| {
            g.inter
                .iter()
                .map(|_| {
                    if rng.random::<f64>() < p {
                        1.0 / p
                    } else {
                        0.0
                    }
                })
                .collect()
        });
        let grad = gradient_unchecked(&x, g, weights.as_deref());
        let eta = config.step_size / (1.0 + steps as f64 / config.decay);
        for (block, gb) in x.blocks.iter_mut().zip(&grad) {
            for (v, d) in block.iter_mut().zip(gb) {
                *v += eta * d;
            }
        }
        x.project_unit_box();
        steps += 1;

        let next = objective_unchecked(&x, g);
        observe(steps, &x, next);
        if next > best.1 {
            best = (x.clone(), next);
        }
        if next - current < config.tolerance {
            stall += 1;
            if stall >= config.patience {
                converged = true;
                break;
            }
        } else {
            stall = 0;
        }
        current = next;
    }
    if !converged {
        log::warn!(
            "joint clustering did not converge in {} steps (objective {:.6})",
            config.max_steps,
            best.1
        );
    }

    let (relaxed, relaxed_objective) = best;
    let candidates = [
        (
            relaxed
                .blocks
                .iter()
                .map(|b| descending_order(b))
                .collect::<Vec<_>>(),
            relaxed
                .blocks
                .iter()
                .map(|b| b.iter().filter(|&&v| v >= 0.5).count())
                .collect::<Vec<_>>(),
        ),
        (
            init.blocks.iter().map(|b| descending_order(b)).collect(),
            g.intra
                .iter()
                .zip(&init.blocks)
                .map(|(a, b)| {
                    if a.nnz() == 0 {
                        0
                    } else {
                        prefix_sweep(a, &descending_order(b)).0
                    }
                })
                .collect(),
        ),
    ];

    let mut rounded: Option<(Vec<Vec<usize>>, f64)> = None;
    for (orders, lengths) in &candidates {
        let (members, value) = round_by_prefix_sweep(g, orders, lengths.clone());
        if rounded.as_ref().is_none_or(|r| value > r.1) {
            rounded = Some((members, value));
        }
    }
    let (members, objective) = rounded.expect("at least one rounding candidate");

    Ok(JointSolution {
        members,
        objective,
        relaxed,
        relaxed_objective,
        steps,
        converged,
    })
}

/// Coordinate-wise rounding: for each video in turn, choose the prefix of
/// its ordering that maximizes the joint objective with the other videos
/// fixed, until no video changes.
pub fn round_by_prefix_sweep(
    g: &SimilarityGraph,
    orders: &[Vec<usize>],
    mut lengths: Vec<usize>,
) -> (Vec<Vec<usize>>, f64) {
    let sizes = g.sizes();
    let to_indicator = |lengths: &[usize]| -> ClusterIndicator {
        let members: Vec<Vec<usize>> = orders
            .iter()
            .zip(lengths)
            .map(|(o, &l)| o[..l].to_vec())
            .collect();
        ClusterIndicator::from_members(&sizes, &members)
    };

    for _pass in 0..50 {
        let mut changed = false;
        for i in 0..sizes.len() {
            let x = to_indicator(&lengths);
            let order = &orders[i];
            // Linear coefficients and partner sizes for each incident edge.
            let mut linear: Vec<(Vec<f64>, f64)> = Vec::new();
            for e in &g.inter {
                if e.i == i {
                    let partner = &x.blocks[e.j];
                    linear.push((e.matrix.matvec(partner), partner.iter().sum()));
                } else if e.j == i {
                    let partner = &x.blocks[e.i];
                    linear.push((e.matrix.transpose_matvec(partner), partner.iter().sum()));
                }
            }
            let a = &g.intra[i];
            let mut in_set = vec![false; sizes[i]];
            let mut quad = 0.0;
            let mut lin_sums = vec![0.0; linear.len()];
            let mut values = vec![0.0];
            for (len, &v) in order.iter().enumerate() {
                for &(u, w) in a.row(v) {
                    if in_set[u] {
                        quad += 2.0 * w;
                    } else if u == v {
                        quad += w;
                    }
                }
                in_set[v] = true;
                let size = (len + 1) as f64;
                let mut value = quad / size;
                for ((coef, partner_size), acc) in linear.iter().zip(lin_sums.iter_mut()) {
                    *acc += coef[v];
                    if *partner_size > 0.0 {
                        value += 2.0 * *acc / (size * partner_size);
                    }
                }
                values.push(value);
            }
            let mut best_len = lengths[i];
            for (len, &value) in values.iter().enumerate() {
                if value > values[best_len] + 1e-12 {
                    best_len = len;
                }
            }
            if best_len != lengths[i] {
                lengths[i] = best_len;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let x = to_indicator(&lengths);
    let objective = objective_unchecked(&x, g);
    let members = orders
        .iter()
        .zip(&lengths)
        .map(|(o, &l)| {
            let mut m = o[..l].to_vec();
            m.sort_unstable();
            m
        })
        .collect();
    (members, objective)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint_cluster::graph::InterEdge;
    use crate::joint_cluster::scgp::scgp_single;
    use crate::joint_cluster::sparse::SparseMatrix;

    #[test]
    fn single_video_matches_scgp() {
        let mut d = vec![vec![0.0; 6]; 6];
        let vals = [
            0.9, 0.1, 0.4, 0.8, 0.05, 0.7, 0.3, 0.6, 0.2, 0.95, 0.15, 0.5, 0.35, 0.65, 0.25,
        ];
        let mut k = 0;
        for i in 0..6 {
            for j in i + 1..6 {
                d[i][j] = vals[k];
                d[j][i] = vals[k];
                k += 1;
            }
        }
        let a = SparseMatrix::from_dense(&d);
        let scgp = scgp_single(&a).unwrap();
        let g = SimilarityGraph {
            intra: vec![a],
            inter: vec![],
        };
        let sol = solve_joint_cluster(&g, &SolverConfig::default()).unwrap();
        assert!(sol.objective >= scgp.objective - 1e-9);
    }

    #[test]
    fn all_zero_graph_is_error() {
        let g = SimilarityGraph {
            intra: vec![SparseMatrix::zeros(3, 3), SparseMatrix::zeros(2, 2)],
            inter: vec![InterEdge {
                i: 0,
                j: 1,
                matrix: SparseMatrix::zeros(3, 2),
            }],
        };
        assert!(matches!(
            solve_joint_cluster(&g, &SolverConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn iterates_stay_in_unit_box_with_edge_sampling() {
        let a = SparseMatrix::from_dense(&[
            vec![0.0, 0.9, 0.1],
            vec![0.9, 0.0, 0.2],
            vec![0.1, 0.2, 0.0],
        ]);
        let b = SparseMatrix::from_dense(&[
            vec![0.8, 0.0, 0.1],
            vec![0.7, 0.1, 0.0],
            vec![0.0, 0.0, 0.3],
        ]);
        let g = SimilarityGraph {
            intra: vec![a.clone(), a],
            inter: vec![InterEdge {
                i: 0,
                j: 1,
                matrix: b,
            }],
        };
        let config = SolverConfig {
            edge_sample_fraction: Some(0.5),
            seed: 3,
            ..Default::default()
        };
        let mut seen = 0;
        let sol = solve_joint_cluster_observed(&g, &config, |_, x, _| {
            seen += 1;
            assert!(x.blocks.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        })
        .unwrap();
        assert_eq!(seen, sol.steps);
        assert!(sol.video_span() >= 1);
    }
}
