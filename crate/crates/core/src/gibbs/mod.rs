//! MCMC inference for the BP-HMM.

mod chain;
pub mod hmm;
mod moves;

pub use crate::bphmm::ModelState;
pub use chain::{
    joint_loglik, run_chain, run_chains, state_posteriors, BestSample, ChainOutput, Checkpoint,
    ReportedSample, Sampler, SamplerConfig, SamplerDiagnostics,
};
pub use hmm::{forward_loglik, posterior_marginals, sample_states};
pub use moves::{sample_eta, sample_theta, BirthProposal, MoveStats};
