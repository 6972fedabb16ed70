//! Log-space HMM recursions over an explicit (local) state space.

use rand::Rng;

use crate::bphmm::clamp_theta;
use crate::error::{Error, Result};
use crate::representation::FrameVector;
use crate::rng::StepRng;

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Per-step constants for fast Bernoulli log-likelihoods:
/// `ll(y) = base + Σ_{d ∈ y} delta_d`.
#[derive(Debug, Clone)]
pub(crate) struct BernoulliTerms {
    base: f64,
    delta: Vec<f64>,
}

impl BernoulliTerms {
    pub(crate) fn new(theta: &[f64]) -> Self {
        let mut base = 0.0;
        let delta = theta
            .iter()
            .map(|&p| {
                let p = clamp_theta(p);
                let off = (1.0 - p).ln();
                base += off;
                p.ln() - off
            })
            .collect();
        BernoulliTerms { base, delta }
    }

    pub(crate) fn loglik(&self, y: &FrameVector) -> f64 {
        self.base + y.ones().map(|d| self.delta[d]).sum::<f64>()
    }
}

/// `T × K` table of emission log-likelihoods.
pub fn emission_table(frames: &[FrameVector], theta: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    for (t, y) in frames.iter().enumerate() {
        if let Some(p) = theta.iter().find(|p| p.len() != y.dim()) {
            return Err(Error::Dimension {
                record: format!("frame {t}"),
                expected: p.len(),
                found: y.dim(),
            });
        }
    }
    let terms: Vec<BernoulliTerms> = theta.iter().map(|p| BernoulliTerms::new(p)).collect();
    Ok(frames
        .iter()
        .map(|y| terms.iter().map(|b| b.loglik(y)).collect())
        .collect())
}

/// Forward recursion. Returns `log α_t(k) = log p(y_1..t, z_t = k)` and the
/// total log-likelihood. An empty sequence has log-likelihood 0.
pub fn forward_table(
    log_init: &[f64],
    log_trans: &[Vec<f64>],
    emit: &[Vec<f64>],
) -> (Vec<Vec<f64>>, f64) {
    let k = log_init.len();
    let mut alpha: Vec<Vec<f64>> = Vec::with_capacity(emit.len());
    for (t, e) in emit.iter().enumerate() {
        let row: Vec<f64> = if t == 0 {
            (0..k).map(|c| log_init[c] + e[c]).collect()
        } else {
            let prev = &alpha[t - 1];
            (0..k)
                .map(|c| e[c] + log_sum_exp((0..k).map(|j| prev[j] + log_trans[j][c])))
                .collect()
        };
        alpha.push(row);
    }
    let ll = alpha.last().map_or(0.0, |a| log_sum_exp(a.iter().copied()));
    (alpha, ll)
}

fn backward_table(log_trans: &[Vec<f64>], emit: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t_len = emit.len();
    let k = log_trans.len();
    let mut beta = vec![vec![0.0; k]; t_len];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for j in 0..k {
            beta[t][j] =
                log_sum_exp((0..k).map(|c| log_trans[j][c] + emit[t + 1][c] + beta[t + 1][c]));
        }
    }
    beta
}

/// Draw a state path from `p(z | y)` given a completed forward table.
pub(crate) fn backward_sample(
    alpha: &[Vec<f64>],
    log_trans: &[Vec<f64>],
    rng: &mut StepRng,
) -> Vec<usize> {
    let t_len = alpha.len();
    let mut z = vec![0; t_len];
    if t_len == 0 {
        return z;
    }
    z[t_len - 1] = draw_log_categorical(&alpha[t_len - 1], rng);
    for t in (0..t_len - 1).rev() {
        let next = z[t + 1];
        let w: Vec<f64> = alpha[t]
            .iter()
            .zip(log_trans)
            .map(|(a, row)| a + row[next])
            .collect();
        z[t] = draw_log_categorical(&w, rng);
    }
    z
}

pub(crate) fn draw_log_categorical(logw: &[f64], rng: &mut StepRng) -> usize {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        acc += wi;
        if u < acc {
            return i;
        }
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

struct LocalModel {
    log_init: Vec<f64>,
    log_trans: Vec<Vec<f64>>,
    emit: Vec<Vec<f64>>,
}

fn local_model(
    frames: &[FrameVector],
    theta: &[&[f64]],
    pi: &[Vec<f64>],
    init: &[f64],
) -> Result<LocalModel> {
    let k = theta.len();
    if k == 0 {
        return Err(Error::InvalidArgument(
            "HMM needs at least one state".into(),
        ));
    }
    if init.len() != k || pi.len() != k || pi.iter().any(|r| r.len() != k) {
        return Err(Error::Dimension {
            record: "transition matrix".into(),
            expected: k,
            found: if init.len() != k {
                init.len()
            } else {
                pi.len()
            },
        });
    }
    let valid =
        |r: &[f64]| r.iter().all(|&p| p >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() < 1e-9;
    if !valid(init) || !pi.iter().all(|r| valid(r)) {
        return Err(Error::InvalidArgument(
            "initial or transition distribution does not sum to 1".into(),
        ));
    }
    Ok(LocalModel {
        log_init: init.iter().map(|p| p.ln()).collect(),
        log_trans: pi
            .iter()
            .map(|r| r.iter().map(|p| p.ln()).collect())
            .collect(),
        emit: emission_table(frames, theta)?,
    })
}

/// `log p(y_1..T | θ, π, π₀)` with the state path marginalized.
pub fn forward_loglik(
    frames: &[FrameVector],
    theta: &[&[f64]],
    pi: &[Vec<f64>],
    init: &[f64],
) -> Result<f64> {
    let m = local_model(frames, theta, pi, init)?;
    Ok(forward_table(&m.log_init, &m.log_trans, &m.emit).1)
}

/// Exact block draw of the state path from its full conditional.
/// States are indices into `theta`.
pub fn sample_states(
    frames: &[FrameVector],
    theta: &[&[f64]],
    pi: &[Vec<f64>],
    init: &[f64],
    rng: &mut StepRng,
) -> Result<Vec<usize>> {
    let m = local_model(frames, theta, pi, init)?;
    let (alpha, _) = forward_table(&m.log_init, &m.log_trans, &m.emit);
    Ok(backward_sample(&alpha, &m.log_trans, rng))
}

/// `p(z_t = k | y)` for every frame, via forward-backward.
pub fn posterior_marginals(
    frames: &[FrameVector],
    theta: &[&[f64]],
    pi: &[Vec<f64>],
    init: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let m = local_model(frames, theta, pi, init)?;
    Ok(marginals_from_tables(&m.log_init, &m.log_trans, &m.emit))
}

pub(crate) fn marginals_from_tables(
    log_init: &[f64],
    log_trans: &[Vec<f64>],
    emit: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let (alpha, ll) = forward_table(log_init, log_trans, emit);
    let beta = backward_table(log_trans, emit);
    alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x + y - ll).exp()).collect())
        .collect()
}
