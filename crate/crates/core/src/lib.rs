//! Unsupervised discovery of activity steps in collections of instructional
//! videos from paired visual and language evidence.

pub mod bphmm;
pub mod captioner;
pub mod corpus;
pub mod error;
pub mod gibbs;
pub mod joint_cluster;
pub mod lang_atoms;
pub mod metrics;
pub mod pipeline;
pub mod representation;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
