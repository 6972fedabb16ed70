//! Full sweeps, chains, checkpoints and reported-sample selection.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::bphmm::{beta_draw, FeatureMatrix, Hyperparams, ModelState};
use crate::error::{Error, Result};
use crate::representation::SequenceSet;
use crate::rng::{derive_index_seed, rng_from_seed, RngSnapshot, StepRng};

use super::moves::{
    clamp_all, sample_eta, sample_theta, shared_feature_pass, unique_feature_pass, BirthProposal,
    EmissionCache, MoveStats,
};

/// Which sample of the chain is reported as the segmentation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportedSample {
    /// Highest joint log-likelihood among post-burn-in sweeps.
    #[default]
    MaxLikelihood,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub hyper: Hyperparams,
    pub sweeps: usize,
    /// Defaults to half of `sweeps`.
    pub burn_in: Option<usize>,
    /// Steps owned by every sequence at initialization.
    pub initial_steps: usize,
    /// Hard cap on the number of steps (births beyond it are rejected).
    pub max_steps: Option<usize>,
    pub birth: BirthProposal,
    pub report: ReportedSample,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            hyper: Hyperparams::default(),
            sweeps: 500,
            burn_in: None,
            initial_steps: 1,
            max_steps: None,
            birth: BirthProposal::default(),
            report: ReportedSample::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.sweeps == 0 {
            return Err(Error::InvalidArgument("sweeps must be at least 1".into()));
        }
        if self.burn_in.is_some_and(|b| b >= self.sweeps) {
            return Err(Error::InvalidArgument(
                "burn-in must be shorter than the chain".into(),
            ));
        }
        if self.initial_steps == 0 {
            return Err(Error::InvalidArgument(
                "initial_steps must be at least 1".into(),
            ));
        }
        if self.max_steps.is_some_and(|m| m < self.initial_steps) {
            return Err(Error::InvalidArgument(
                "max_steps is below initial_steps".into(),
            ));
        }
        if let BirthProposal::DataDriven {
            prior_weight,
            window,
        } = self.birth
        {
            if !(0.0..=1.0).contains(&prior_weight) || window == 0 {
                return Err(Error::InvalidArgument(
                    "data-driven births need prior_weight in [0, 1] and window ≥ 1".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.sweeps / 2)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    /// Joint log-likelihood after each completed sweep.
    pub loglik: Vec<f64>,
    /// Number of steps after each completed sweep.
    pub steps: Vec<usize>,
    pub shared: MoveStats,
    pub birth: MoveStats,
    pub death: MoveStats,
}

impl SamplerDiagnostics {
    /// One line per sweep: `sweep,loglik,steps`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("sweep,loglik,steps\n");
        for (s, (ll, k)) in self.loglik.iter().zip(&self.steps).enumerate() {
            out.push_str(&format!("{},{},{}\n", s + 1, ll, k));
        }
        out
    }
}

/// `log p(F) + log p(θ) + log p(z | π) + log p(y | z, θ)`.
pub fn joint_loglik(state: &ModelState, data: &SequenceSet) -> f64 {
    let cache = EmissionCache::build(data, &state.theta);
    joint_loglik_cached(state, &cache)
}

fn joint_loglik_cached(state: &ModelState, cache: &EmissionCache) -> f64 {
    let h = &state.hyper;
    let mut ll = state.features.ibp_log_prob(h.gamma, h.beta);
    let norm = ln_beta(h.a0, h.b0);
    ll += state
        .theta
        .iter()
        .flatten()
        .map(|&p| (h.a0 - 1.0) * p.ln() + (h.b0 - 1.0) * (1.0 - p).ln() - norm)
        .sum::<f64>();
    for (i, z) in state.states.iter().enumerate() {
        let pi = state.transition(i);
        let active = state.features.row(i).iter().filter(|&&b| b).count();
        if !z.is_empty() {
            ll -= (active as f64).ln();
        }
        ll += z.windows(2).map(|w| pi[w[0]][w[1]].ln()).sum::<f64>();
        ll += cache.path_loglik(i, z);
    }
    ll
}

/// Posterior marginals `p(z_t = k | y, θ, π)` for every sequence under a
/// fixed state, as `sequence × frame × step`.
pub fn state_posteriors(state: &ModelState, data: &SequenceSet) -> Vec<Vec<Vec<f64>>> {
    let cache = EmissionCache::build(data, &state.theta);
    (0..state.num_sequences())
        .into_par_iter()
        .map(|i| cache.marginals(i, &state.eta[i], state.features.row(i)))
        .collect()
}

/// Everything needed to continue a chain exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub state: ModelState,
    pub rng: RngSnapshot,
    pub diagnostics: SamplerDiagnostics,
    pub best: Option<BestSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSample {
    pub sweep: usize,
    pub loglik: f64,
    pub state: ModelState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub reported: ModelState,
    /// 1-based sweep of the reported state.
    pub reported_sweep: usize,
    pub last: ModelState,
    pub diagnostics: SamplerDiagnostics,
}

/// A single MCMC chain over one sequence set.
pub struct Sampler<'a> {
    data: &'a SequenceSet,
    config: SamplerConfig,
    state: ModelState,
    rng: StepRng,
    diagnostics: SamplerDiagnostics,
    best: Option<BestSample>,
}

fn validate_data(data: &SequenceSet) -> Result<()> {
    data.validate()?;
    if data.sequences.is_empty() {
        return Err(Error::Empty("no sequences to parse".into()));
    }
    if data.dim == 0 {
        return Err(Error::Empty("frame vectors have dimension 0".into()));
    }
    Ok(())
}

impl<'a> Sampler<'a> {
    /// Initialize with `initial_steps` steps owned by every sequence, θ and
    /// η from the prior and states drawn from their conditional.
    pub fn new(data: &'a SequenceSet, config: SamplerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        validate_data(data)?;
        let mut rng = rng_from_seed(seed);
        let n = data.sequences.len();
        let k = config.initial_steps;
        let h = config.hyper;
        let features = FeatureMatrix::filled(n, k, true);
        let theta: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                (0..data.dim)
                    .map(|_| beta_draw(h.a0, h.b0, &mut rng))
                    .collect()
            })
            .collect();
        let mut eta = Vec::with_capacity(n);
        for _ in 0..n {
            let (e, _) =
                crate::bphmm::sample_transitions(&vec![true; k], h.alpha, h.kappa, &mut rng)?;
            eta.push(e);
        }
        let mut state = ModelState {
            hyper: h,
            features,
            theta,
            eta,
            states: data
                .sequences
                .iter()
                .map(|s| vec![0; s.frames.len()])
                .collect(),
            iteration: 0,
        };
        let cache = EmissionCache::build(data, &state.theta);
        for i in 0..n {
            state.states[i] = cache.sample_path(i, &state.eta[i], state.features.row(i), &mut rng);
        }
        Ok(Sampler {
            data,
            config,
            state,
            rng,
            diagnostics: SamplerDiagnostics::default(),
            best: None,
        })
    }

    pub fn resume(
        data: &'a SequenceSet,
        config: SamplerConfig,
        checkpoint: Checkpoint,
    ) -> Result<Self> {
        config.validate()?;
        validate_data(data)?;
        if checkpoint.state.num_sequences() != data.sequences.len() {
            return Err(Error::InvalidArgument(
                "checkpoint does not match the sequence set".into(),
            ));
        }
        checkpoint.state.check_consistency()?;
        Ok(Sampler {
            data,
            config,
            rng: checkpoint.rng.restore(),
            state: checkpoint.state,
            diagnostics: checkpoint.diagnostics,
            best: checkpoint.best,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            state: self.state.clone(),
            rng: RngSnapshot::capture(&self.rng),
            diagnostics: self.diagnostics.clone(),
            best: self.best.clone(),
        }
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn diagnostics(&self) -> &SamplerDiagnostics {
        &self.diagnostics
    }

    pub fn completed_sweeps(&self) -> usize {
        self.state.iteration
    }

    pub fn is_done(&self) -> bool {
        self.state.iteration >= self.config.sweeps
    }

    /// One sweep: shared flips, births/deaths, states, transitions,
    /// emission parameters, pruning.
    pub fn sweep(&mut self) -> Result<()> {
        let data = self.data;
        let mut cache = EmissionCache::build(data, &self.state.theta);
        let shared = shared_feature_pass(&mut self.state, &cache, &mut self.rng);
        let bd = unique_feature_pass(
            &mut self.state,
            data,
            &mut cache,
            self.config.birth,
            self.config.max_steps,
            &mut self.rng,
        );
        self.diagnostics.shared.merge(shared);
        self.diagnostics.birth.merge(bd.birth);
        self.diagnostics.death.merge(bd.death);

        let h = self.state.hyper;
        let master: u64 = self.rng.random();
        let features = &self.state.features;
        let eta_now = &self.state.eta;
        let cache_ref = &cache;
        let per_video: Vec<Result<(Vec<usize>, Vec<Vec<f64>>)>> = (0..self.state.num_sequences())
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from_seed(derive_index_seed(master, i as u64));
                let f = features.row(i);
                let z = cache_ref.sample_path(i, &eta_now[i], f, &mut rng);
                let eta = sample_eta(&z, f, h.alpha, h.kappa, &mut rng)?;
                Ok((z, eta))
            })
            .collect();
        for (i, r) in per_video.into_iter().enumerate() {
            let (z, eta) = r?;
            self.state.states[i] = z;
            self.state.eta[i] = eta;
        }
        let k = self.state.num_steps();
        self.state.theta = sample_theta(data, &self.state.states, k, h.a0, h.b0, &mut self.rng)?;
        clamp_all(&mut self.state.theta);
        self.state.prune();
        self.state.iteration += 1;
        if cfg!(debug_assertions) {
            self.state.check_consistency()?;
        }

        let ll = joint_loglik(&self.state, data);
        self.diagnostics.loglik.push(ll);
        self.diagnostics.steps.push(self.state.num_steps());
        let sweep = self.state.iteration;
        if sweep > self.config.burn_in() && self.best.as_ref().is_none_or(|b| ll > b.loglik) {
            self.best = Some(BestSample {
                sweep,
                loglik: ll,
                state: self.state.clone(),
            });
        }
        Ok(())
    }

    pub fn finish(self) -> ChainOutput {
        let last = self.state;
        let (reported, reported_sweep) = match (self.config.report, self.best) {
            (ReportedSample::MaxLikelihood, Some(b)) => (b.state, b.sweep),
            _ => (last.clone(), last.iteration),
        };
        ChainOutput {
            reported,
            reported_sweep,
            last,
            diagnostics: self.diagnostics,
        }
    }
}

/// Run a chain for `config.sweeps` sweeps. Deterministic given the seed.
pub fn run_chain(data: &SequenceSet, config: &SamplerConfig, seed: u64) -> Result<ChainOutput> {
    let mut sampler = Sampler::new(data, config.clone(), seed)?;
    while !sampler.is_done() {
        sampler.sweep()?;
    }
    Ok(sampler.finish())
}

/// Independent chains with seeds derived from `seed`; returns all outputs
/// in chain order and the index of the chain whose reported state has the
/// highest joint log-likelihood.
pub fn run_chains(
    data: &SequenceSet,
    config: &SamplerConfig,
    seed: u64,
    chains: usize,
) -> Result<(Vec<ChainOutput>, usize)> {
    if chains == 0 {
        return Err(Error::InvalidArgument("need at least one chain".into()));
    }
    let outputs: Vec<ChainOutput> = (0..chains)
        .into_par_iter()
        .map(|c| run_chain(data, config, derive_index_seed(seed, c as u64)))
        .collect::<Result<_>>()?;
    let score = |o: &ChainOutput| joint_loglik(&o.reported, data);
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (c, o) in outputs.iter().enumerate() {
        let s = score(o);
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    Ok((outputs, best))
}
