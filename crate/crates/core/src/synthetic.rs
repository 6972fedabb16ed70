//! Synthetic video collections with planted steps: each step has its own
//! subtitle words and its own object appearance, and videos move through
//! their steps as a sticky Markov chain.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bphmm::{generate_synthetic, FeatureSource, Hyperparams, SyntheticConfig};
use crate::corpus::{
    tokenize, Collection, Frame, GroundTruth, ProposalFeature, TextOptions, VideoRecord,
};
use crate::error::{Error, Result};
use crate::rng::{derive_index_seed, derive_seed, rng_from_seed};

const STEP_WORDS: &[&str] = &[
    "crack", "eggs", "whisk", "bowl", "pour", "milk", "heat", "pan", "butter", "flip", "omelette",
    "plate", "chop", "onion", "knife", "board", "salt", "pepper", "stir", "spoon", "cheese",
    "grate", "serve", "fork",
];
const FILLER_WORDS: &[&str] = &[
    "okay", "now", "really", "nice", "just", "going", "right", "today", "little", "good",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoSynthConfig {
    pub videos: usize,
    pub frames: usize,
    pub steps: usize,
    /// Probability that a video contains a given step.
    pub share: f64,
    pub words_per_step: usize,
    pub feature_dim: usize,
    /// Standard deviation of proposals around their step's appearance.
    pub proposal_noise: f64,
    pub clutter_proposals: usize,
    pub kappa: f64,
}

impl Default for VideoSynthConfig {
    fn default() -> Self {
        VideoSynthConfig {
            videos: 6,
            frames: 40,
            steps: 3,
            share: 0.8,
            words_per_step: 3,
            feature_dim: 8,
            proposal_noise: 0.05,
            clutter_proposals: 1,
            kappa: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideos {
    pub collection: Collection,
    pub ground_truth: GroundTruth,
}

pub fn synthetic_videos(config: &VideoSynthConfig, seed: u64) -> Result<SyntheticVideos> {
    if config.videos == 0 || config.frames == 0 || config.steps == 0 || config.feature_dim == 0 {
        return Err(Error::InvalidArgument(
            "synthetic video sizes must be at least 1".into(),
        ));
    }
    if config.steps * config.words_per_step > STEP_WORDS.len() {
        return Err(Error::InvalidArgument(format!(
            "at most {} distinct step words are available",
            STEP_WORDS.len()
        )));
    }
    let latent = generate_synthetic(
        &SyntheticConfig {
            sequences: config.videos,
            frames: config.frames,
            dims: 1,
            hyper: Hyperparams {
                kappa: config.kappa,
                ..Hyperparams::default()
            },
            features: FeatureSource::Fixed {
                steps: config.steps,
                share: config.share,
            },
        },
        &mut rng_from_seed(derive_seed(seed, "latent")),
    )?;

    let mut rng = rng_from_seed(derive_seed(seed, "appearance"));
    let centroids: Vec<Vec<f64>> = (0..config.steps)
        .map(|_| {
            (0..config.feature_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, config.proposal_noise.max(1e-12)).expect("positive noise");
    let text = TextOptions::default();

    let mut videos = Vec::with_capacity(config.videos);
    for (i, z) in latent.truth.states.iter().enumerate() {
        let mut rng = rng_from_seed(derive_index_seed(seed, i as u64));
        let frames = z
            .iter()
            .enumerate()
            .map(|(t, &k)| {
                let words = &STEP_WORDS[k * config.words_per_step..(k + 1) * config.words_per_step];
                let mut spoken: Vec<&str> = words
                    .iter()
                    .copied()
                    .filter(|_| rng.random::<f64>() < 0.7)
                    .collect();
                spoken.push(FILLER_WORDS[rng.random_range(0..FILLER_WORDS.len())]);
                let subtitle = spoken.join(" ");
                let mut proposals: Vec<ProposalFeature> = (0..2)
                    .map(|_| {
                        ProposalFeature(
                            centroids[k]
                                .iter()
                                .map(|c| c + noise.sample(&mut rng))
                                .collect(),
                        )
                    })
                    .collect();
                for _ in 0..config.clutter_proposals {
                    proposals.push(ProposalFeature(
                        (0..config.feature_dim)
                            .map(|_| rng.random_range(-3.0..3.0))
                            .collect(),
                    ));
                }
                Frame {
                    index: t,
                    subtitle_tokens: tokenize(&subtitle, text),
                    subtitle,
                    proposals,
                }
            })
            .collect();
        let description = "how to make a cheese omelette at home".to_string();
        videos.push(VideoRecord {
            id: format!("video{i:03}"),
            description_tokens: tokenize(&description, text),
            description,
            frames,
        });
    }
    let ids: Vec<String> = videos.iter().map(|v| v.id.clone()).collect();
    let ground_truth = GroundTruth::from_label_sequences(
        ids.iter()
            .map(String::as_str)
            .zip(latent.truth.states.iter().map(Vec::as_slice)),
        |k| format!("step{k}"),
    );
    Ok(SyntheticVideos {
        collection: Collection {
            videos,
            feature_dim: Some(config.feature_dim),
        },
        ground_truth,
    })
}
