//! Individual Gibbs / Metropolis–Hastings moves over a [`ModelState`].

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::bphmm::{active_indices, beta_draw, clamp_theta, gamma_draw, Hyperparams, ModelState};
use crate::error::{Error, Result};
use crate::representation::SequenceSet;
use crate::rng::StepRng;

use super::hmm::{backward_sample, forward_table, log_sum_exp, BernoulliTerms};

/// Proposal and acceptance counts for one move type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl MoveStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub(crate) fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn merge(&mut self, other: MoveStats) {
        self.proposed += other.proposed;
        self.accepted += other.accepted;
    }
}

/// How new step parameters are proposed in a birth move.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BirthProposal {
    /// `θ* ~ ∏ Beta(a₀, b₀)`.
    #[default]
    Prior,
    /// Mixture of the prior (weight `prior_weight`) and Beta posteriors
    /// fitted to a uniformly chosen window of `window` frames of the video.
    DataDriven { prior_weight: f64, window: usize },
}

/// `θ_{k,d} ~ Beta(a₀ + c¹_{k,d}, b₀ + c⁰_{k,d})` with counts over frames
/// assigned to step `k`. Steps without frames draw from the prior.
pub fn sample_theta(
    data: &SequenceSet,
    states: &[Vec<usize>],
    steps: usize,
    a0: f64,
    b0: f64,
    rng: &mut StepRng,
) -> Result<Vec<Vec<f64>>> {
    if states.len() != data.sequences.len() {
        return Err(Error::Dimension {
            record: "state sequences".into(),
            expected: data.sequences.len(),
            found: states.len(),
        });
    }
    let d = data.dim;
    let mut ones = vec![vec![0u32; d]; steps];
    let mut frames = vec![0u32; steps];
    for (seq, z) in data.sequences.iter().zip(states) {
        if z.len() != seq.frames.len() {
            return Err(Error::Dimension {
                record: format!("states of {}", seq.id),
                expected: seq.frames.len(),
                found: z.len(),
            });
        }
        for (y, &k) in seq.frames.iter().zip(z) {
            if k >= steps {
                return Err(Error::InvalidArgument(format!(
                    "state {k} out of range for {steps} steps"
                )));
            }
            frames[k] += 1;
            for b in y.ones() {
                ones[k][b] += 1;
            }
        }
    }
    Ok((0..steps)
        .map(|k| {
            (0..d)
                .map(|b| {
                    let c1 = f64::from(ones[k][b]);
                    let c0 = f64::from(frames[k]) - c1;
                    beta_draw(a0 + c1, b0 + c0, rng)
                })
                .collect()
        })
        .collect())
}

/// Draw the transition weights of one sequence from their conditional
/// given its state path. Each active row is `S · π_j` with
/// `π_j ~ Dir(α + κδ + n_j)` and an independent prior scale
/// `S ~ Gam(Σ_c (α + κδ_{jc}))`; entries outside the mask are zero.
pub fn sample_eta(
    z: &[usize],
    f: &[bool],
    alpha: f64,
    kappa: f64,
    rng: &mut StepRng,
) -> Result<Vec<Vec<f64>>> {
    let k = f.len();
    if let Some(&s) = z.iter().find(|&&s| s >= k || !f[s]) {
        return Err(Error::InvalidArgument(format!(
            "state {s} is not an active step"
        )));
    }
    let mut counts = vec![vec![0u32; k]; k];
    for w in z.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    let active = active_indices(f);
    let mut eta = vec![vec![0.0; k]; k];
    for &j in &active {
        let shape = |c: usize| if c == j { alpha + kappa } else { alpha };
        let g: Vec<f64> = active
            .iter()
            .map(|&c| gamma_draw(shape(c) + f64::from(counts[j][c]), rng))
            .collect();
        let total: f64 = g.iter().sum();
        let scale = gamma_draw(active.iter().map(|&c| shape(c)).sum(), rng);
        for (&c, gc) in active.iter().zip(&g) {
            eta[j][c] = scale * gc / total;
        }
    }
    Ok(eta)
}

/// Emission log-likelihoods of every frame under every step, per sequence.
pub(crate) struct EmissionCache {
    tables: Vec<Vec<Vec<f64>>>,
}

impl EmissionCache {
    pub(crate) fn build(data: &SequenceSet, theta: &[Vec<f64>]) -> Self {
        let terms: Vec<BernoulliTerms> = theta.iter().map(|p| BernoulliTerms::new(p)).collect();
        let tables = data
            .sequences
            .iter()
            .map(|s| {
                s.frames
                    .iter()
                    .map(|y| terms.iter().map(|b| b.loglik(y)).collect())
                    .collect()
            })
            .collect();
        EmissionCache { tables }
    }

    fn push_step(&mut self, data: &SequenceSet, theta: &[f64]) {
        let b = BernoulliTerms::new(theta);
        for (table, seq) in self.tables.iter_mut().zip(&data.sequences) {
            for (row, y) in table.iter_mut().zip(&seq.frames) {
                row.push(b.loglik(y));
            }
        }
    }

    fn pop_step(&mut self) {
        for row in self.tables.iter_mut().flatten() {
            row.pop();
        }
    }

    fn remove_step(&mut self, k: usize) {
        for row in self.tables.iter_mut().flatten() {
            row.remove(k);
        }
    }

    fn local_tables(
        &self,
        i: usize,
        eta: &[Vec<f64>],
        active: &[usize],
    ) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = active.len();
        let log_init = vec![-(n as f64).ln(); n];
        let log_trans = active
            .iter()
            .map(|&j| {
                let total: f64 = active.iter().map(|&c| eta[j][c]).sum();
                active.iter().map(|&c| (eta[j][c] / total).ln()).collect()
            })
            .collect();
        let emit = self.tables[i]
            .iter()
            .map(|row| active.iter().map(|&c| row[c]).collect())
            .collect();
        (log_init, log_trans, emit)
    }

    /// Marginal log-likelihood of sequence `i` under a feature row and η.
    pub(crate) fn loglik(&self, i: usize, eta: &[Vec<f64>], f: &[bool]) -> f64 {
        let active = active_indices(f);
        let (init, trans, emit) = self.local_tables(i, eta, &active);
        forward_table(&init, &trans, &emit).1
    }

    pub(crate) fn sample_path(
        &self,
        i: usize,
        eta: &[Vec<f64>],
        f: &[bool],
        rng: &mut StepRng,
    ) -> Vec<usize> {
        let active = active_indices(f);
        let (init, trans, emit) = self.local_tables(i, eta, &active);
        let (alpha, _) = forward_table(&init, &trans, &emit);
        backward_sample(&alpha, &trans, rng)
            .into_iter()
            .map(|s| active[s])
            .collect()
    }

    pub(crate) fn marginals(&self, i: usize, eta: &[Vec<f64>], f: &[bool]) -> Vec<Vec<f64>> {
        let active = active_indices(f);
        let (init, trans, emit) = self.local_tables(i, eta, &active);
        let local = super::hmm::marginals_from_tables(&init, &trans, &emit);
        let k = f.len();
        local
            .into_iter()
            .map(|p| {
                let mut row = vec![0.0; k];
                for (&c, v) in active.iter().zip(p) {
                    row[c] = v;
                }
                row
            })
            .collect()
    }

    /// `log p(y_i | z_i, θ)` for a given path.
    pub(crate) fn path_loglik(&self, i: usize, z: &[usize]) -> f64 {
        self.tables[i].iter().zip(z).map(|(row, &k)| row[k]).sum()
    }
}

fn accept(log_ratio: f64, rng: &mut StepRng) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Fresh prior weights for every active pair that involves step `k`.
fn activate_step(
    eta: &mut [Vec<f64>],
    f: &[bool],
    k: usize,
    hyper: &Hyperparams,
    rng: &mut StepRng,
) {
    for c in active_indices(f) {
        eta[k][c] = gamma_draw(hyper.transition_shape(k, c), rng);
        if c != k {
            eta[c][k] = gamma_draw(hyper.transition_shape(c, k), rng);
        }
    }
}

fn deactivate_step(eta: &mut [Vec<f64>], k: usize) {
    for row in eta.iter_mut() {
        row[k] = 0.0;
    }
    eta[k].iter_mut().for_each(|v| *v = 0.0);
}

/// MH flips of `f_ik` for every step shared with another sequence.
pub(crate) fn shared_feature_pass(
    state: &mut ModelState,
    cache: &EmissionCache,
    rng: &mut StepRng,
) -> MoveStats {
    let mut stats = MoveStats::default();
    let n = state.num_sequences();
    let hyper = state.hyper;
    for i in 0..n {
        let mut current = cache.loglik(i, &state.eta[i], state.features.row(i));
        for k in 0..state.num_steps() {
            let m = state.features.column_count(k) - usize::from(state.features.get(i, k));
            if m == 0 {
                continue;
            }
            let on_odds = (m as f64).ln() - (hyper.beta + n as f64 - 1.0 - m as f64).ln();
            let mut f = state.features.row(i).to_vec();
            let mut eta = state.eta[i].clone();
            let log_prior = if f[k] {
                if f.iter().filter(|&&b| b).count() == 1 {
                    stats.record(false);
                    continue;
                }
                f[k] = false;
                deactivate_step(&mut eta, k);
                -on_odds
            } else {
                f[k] = true;
                activate_step(&mut eta, &f, k, &hyper, rng);
                on_odds
            };
            let proposed = cache.loglik(i, &eta, &f);
            let ok = accept(log_prior + proposed - current, rng);
            stats.record(ok);
            if ok {
                state.features.set(i, k, f[k]);
                state.eta[i] = eta;
                current = proposed;
            }
        }
    }
    stats
}

fn log_beta_density(theta: &[f64], a: f64, b: f64) -> f64 {
    let norm = ln_beta(a, b);
    theta
        .iter()
        .map(|&p| (a - 1.0) * p.ln() + (b - 1.0) * (1.0 - p).ln() - norm)
        .sum()
}

/// Window-fitted Beta components for data-driven births in one sequence.
struct WindowProposal {
    prior_weight: f64,
    components: Vec<Vec<(f64, f64)>>,
}

impl WindowProposal {
    fn new(
        data: &SequenceSet,
        i: usize,
        hyper: &Hyperparams,
        prior_weight: f64,
        window: usize,
    ) -> Self {
        let frames = &data.sequences[i].frames;
        let w = window.clamp(1, frames.len().max(1));
        let d = data.dim;
        let components = (0..=frames.len().saturating_sub(w))
            .map(|start| {
                let mut ones = vec![0.0; d];
                for y in &frames[start..start + w] {
                    for b in y.ones() {
                        ones[b] += 1.0;
                    }
                }
                ones.iter()
                    .map(|&c1| (hyper.a0 + c1, hyper.b0 + w as f64 - c1))
                    .collect()
            })
            .collect();
        WindowProposal {
            prior_weight,
            components,
        }
    }

    fn draw(&self, hyper: &Hyperparams, d: usize, rng: &mut StepRng) -> Vec<f64> {
        if self.components.is_empty() || rng.random::<f64>() < self.prior_weight {
            return (0..d).map(|_| beta_draw(hyper.a0, hyper.b0, rng)).collect();
        }
        let c = &self.components[rng.random_range(0..self.components.len())];
        c.iter().map(|&(a, b)| beta_draw(a, b, rng)).collect()
    }

    fn log_density(&self, theta: &[f64], hyper: &Hyperparams) -> f64 {
        let prior = log_beta_density(theta, hyper.a0, hyper.b0);
        if self.components.is_empty() {
            return prior;
        }
        let mix = self.components.iter().map(|c| {
            c.iter()
                .zip(theta)
                .map(|(&(a, b), &p)| {
                    (a - 1.0) * p.ln() + (b - 1.0) * (1.0 - p).ln() - ln_beta(a, b)
                })
                .sum::<f64>()
        });
        let log_mix =
            log_sum_exp(mix.collect::<Vec<_>>().into_iter()) - (self.components.len() as f64).ln();
        let pw = self.prior_weight;
        if pw <= 0.0 {
            log_mix
        } else if pw >= 1.0 {
            prior
        } else {
            log_sum_exp([pw.ln() + prior, (1.0 - pw).ln() + log_mix].into_iter())
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct BirthDeathStats {
    pub birth: MoveStats,
    pub death: MoveStats,
}

/// Reversible-jump birth/death of steps unique to each sequence.
pub(crate) fn unique_feature_pass(
    state: &mut ModelState,
    data: &SequenceSet,
    cache: &mut EmissionCache,
    proposal: BirthProposal,
    max_steps: Option<usize>,
    rng: &mut StepRng,
) -> BirthDeathStats {
    let mut stats = BirthDeathStats::default();
    let n = state.num_sequences();
    let hyper = state.hyper;
    let log_rate = hyper.unique_feature_rate(n).ln();
    let d = data.dim;
    for i in 0..n {
        let unique: Vec<usize> = (0..state.num_steps())
            .filter(|&k| state.features.get(i, k) && state.features.column_count(k) == 1)
            .collect();
        let u = unique.len() as f64;
        let window = match proposal {
            BirthProposal::Prior => None,
            BirthProposal::DataDriven {
                prior_weight,
                window,
            } => Some(WindowProposal::new(data, i, &hyper, prior_weight, window)),
        };
        let current = cache.loglik(i, &state.eta[i], state.features.row(i));
        if rng.random::<bool>() {
            if max_steps.is_some_and(|cap| state.num_steps() >= cap) {
                stats.birth.record(false);
                continue;
            }
            let theta: Vec<f64> = match &window {
                None => (0..d).map(|_| beta_draw(hyper.a0, hyper.b0, rng)).collect(),
                Some(w) => w.draw(&hyper, d, rng),
            };
            let q_ratio = match &window {
                None => 0.0,
                Some(w) => {
                    log_beta_density(&theta, hyper.a0, hyper.b0) - w.log_density(&theta, &hyper)
                }
            };
            let k = state.num_steps();
            state.features.push_column(&[i]);
            for eta in &mut state.eta {
                eta.iter_mut().for_each(|r| r.push(0.0));
                eta.push(vec![0.0; k + 1]);
            }
            activate_step(&mut state.eta[i], state.features.row(i), k, &hyper, rng);
            cache.push_step(data, &theta);
            state.theta.push(theta);
            let proposed = cache.loglik(i, &state.eta[i], state.features.row(i));
            let ok = accept(
                log_rate - (u + 1.0).ln() + proposed - current + q_ratio,
                rng,
            );
            stats.birth.record(ok);
            if !ok {
                cache.pop_step();
                state.theta.pop();
                state.features.remove_column(k);
                for eta in &mut state.eta {
                    eta.pop();
                    eta.iter_mut().for_each(|r| {
                        r.pop();
                    });
                }
            }
        } else {
            if unique.is_empty() {
                continue;
            }
            let k = unique[rng.random_range(0..unique.len())];
            let active = state.features.row(i).iter().filter(|&&b| b).count();
            if active == 1 {
                stats.death.record(false);
                continue;
            }
            let mut f = state.features.row(i).to_vec();
            f[k] = false;
            let mut eta = state.eta[i].clone();
            deactivate_step(&mut eta, k);
            let proposed = cache.loglik(i, &eta, &f);
            let q_ratio = match &window {
                None => 0.0,
                Some(w) => {
                    w.log_density(&state.theta[k], &hyper)
                        - log_beta_density(&state.theta[k], hyper.a0, hyper.b0)
                }
            };
            let ok = accept(u.ln() - log_rate + proposed - current + q_ratio, rng);
            stats.death.record(ok);
            if ok {
                state.features.set(i, k, false);
                state.eta[i] = eta;
                // States are stale here and resampled before use; keep them
                // pointing at some active step so indices stay valid.
                let fallback = active_indices(state.features.row(i))[0];
                for z in &mut state.states[i] {
                    if *z == k {
                        *z = fallback;
                    }
                }
                state.remove_step(k);
                cache.remove_step(k);
            }
        }
    }
    stats
}

/// Clamp every emission probability into the valid range.
pub(crate) fn clamp_all(theta: &mut [Vec<f64>]) {
    theta
        .iter_mut()
        .flatten()
        .for_each(|p| *p = clamp_theta(*p));
}
