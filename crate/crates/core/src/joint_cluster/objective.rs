//! Joint multi-video clustering objective and its analytic gradient.
//!
//! For per-video relaxed indicators `x_i` the objective is
//!
//! ```text
//! Σ_i x_iᵀA_i x_i / x_iᵀx_i  +  Σ_i Σ_{j∈N(i)} x_iᵀA_ij x_j / (1ᵀx_i · 1ᵀx_j)
//! ```
//!
//! where the neighbour sum runs over ordered pairs of the symmetric video
//! graph, so every stored edge counts twice. Terms with a zero denominator
//! are taken as zero.

use serde::{Deserialize, Serialize};

use super::graph::SimilarityGraph;
use crate::error::{Error, Result};

/// Relaxed per-video indicator vectors with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterIndicator {
    pub blocks: Vec<Vec<f64>>,
}

impl ClusterIndicator {
    pub fn filled(sizes: &[usize], value: f64) -> Self {
        ClusterIndicator {
            blocks: sizes.iter().map(|&n| vec![value; n]).collect(),
        }
    }

    pub fn from_members(sizes: &[usize], members: &[Vec<usize>]) -> Self {
        let mut x = ClusterIndicator::filled(sizes, 0.0);
        for (block, m) in x.blocks.iter_mut().zip(members) {
            for &i in m {
                block[i] = 1.0;
            }
        }
        x
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    pub fn project_unit_box(&mut self) {
        for v in self.blocks.iter_mut().flatten() {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

fn check_dims(x: &ClusterIndicator, g: &SimilarityGraph) -> Result<()> {
    if x.blocks.len() != g.intra.len() {
        return Err(Error::InvalidArgument(format!(
            "indicator has {} blocks, graph has {} videos",
            x.blocks.len(),
            g.intra.len()
        )));
    }
    for (i, (b, a)) in x.blocks.iter().zip(&g.intra).enumerate() {
        if b.len() != a.rows() {
            return Err(Error::Dimension {
                record: format!("video block {i}"),
                expected: a.rows(),
                found: b.len(),
            });
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn objective_unchecked(x: &ClusterIndicator, g: &SimilarityGraph) -> f64 {
    let mut total = 0.0;
    for (a, xi) in g.intra.iter().zip(&x.blocks) {
        let norm = dot(xi, xi);
        if norm > 0.0 {
            total += a.bilinear(xi, xi) / norm;
        }
    }
    for e in &g.inter {
        let (xi, xj) = (&x.blocks[e.i], &x.blocks[e.j]);
        let denom = xi.iter().sum::<f64>() * xj.iter().sum::<f64>();
        if denom > 0.0 {
            total += 2.0 * e.matrix.bilinear(xi, xj) / denom;
        }
    }
    total
}

pub fn joint_objective(x: &ClusterIndicator, g: &SimilarityGraph) -> Result<f64> {
    check_dims(x, g)?;
    Ok(objective_unchecked(x, g))
}

/// Gradient with zero-denominator terms dropped; `edge_weights`, when given,
/// rescales each inter edge (used by stochastic edge subsampling).
pub(crate) fn gradient_unchecked(
    x: &ClusterIndicator,
    g: &SimilarityGraph,
    edge_weights: Option<&[f64]>,
) -> Vec<Vec<f64>> {
    let mut grad: Vec<Vec<f64>> = x.blocks.iter().map(|b| vec![0.0; b.len()]).collect();
    for ((a, xi), gi) in g.intra.iter().zip(&x.blocks).zip(grad.iter_mut()) {
        let norm = dot(xi, xi);
        if norm == 0.0 {
            continue;
        }
        let ax = a.matvec(xi);
        let r = dot(xi, &ax) / norm;
        for ((g, axv), xv) in gi.iter_mut().zip(&ax).zip(xi) {
            *g += (2.0 * axv - 2.0 * xv * r) / norm;
        }
    }
    for (idx, e) in g.inter.iter().enumerate() {
        let w = edge_weights.map_or(1.0, |ws| ws[idx]);
        if w == 0.0 {
            continue;
        }
        let (xi, xj) = (&x.blocks[e.i], &x.blocks[e.j]);
        let (si, sj) = (xi.iter().sum::<f64>(), xj.iter().sum::<f64>());
        let denom = si * sj;
        if denom == 0.0 {
            continue;
        }
        let bxj = e.matrix.matvec(xj);
        let btxi = e.matrix.transpose_matvec(xi);
        let r = dot(xi, &bxj) / denom;
        // Both ordered pairs (i, j) and (j, i) carry this term.
        let scale = 2.0 * w / denom;
        for (g, v) in grad[e.i].iter_mut().zip(&bxj) {
            *g += scale * (v - r * sj);
        }
        for (g, v) in grad[e.j].iter_mut().zip(&btxi) {
            *g += scale * (v - r * si);
        }
    }
    grad
}

/// Analytic gradient of [`joint_objective`] with respect to every `x_i`.
pub fn joint_gradient(x: &ClusterIndicator, g: &SimilarityGraph) -> Result<Vec<Vec<f64>>> {
    check_dims(x, g)?;
    if let Some(i) = x.blocks.iter().position(|b| b.iter().all(|&v| v == 0.0)) {
        return Err(Error::Degenerate(format!("indicator block {i} is zero")));
    }
    Ok(gradient_unchecked(x, g, None))
}
