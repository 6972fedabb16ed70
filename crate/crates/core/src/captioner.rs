//! Step captions: a smoothed 4-gram language model over subtitles, sampled
//! and rescored against a step's language-atom probabilities.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bphmm::clamp_theta;
use crate::error::{Error, Result};
use crate::rng::{derive_index_seed, rng_from_seed};

pub const LM_ORDER: usize = 4;
pub const DEFAULT_SMOOTHING: f64 = 0.01;

const START: &str = "<s>";
const END: &str = "</s>";

/// Counts of `context → next token` for context lengths 0 to 3, with add-λ
/// smoothing and backoff to the longest seen context suffix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramModel {
    smoothing: f64,
    /// Sorted vocabulary; the last entry is the end marker.
    vocab: Vec<String>,
    /// Keyed by context joined with spaces.
    counts: Vec<HashMap<String, (u64, HashMap<u32, u64>)>>,
}

fn context_key(context: &[&str]) -> String {
    context.join(" ")
}

impl NgramModel {
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn token_index(&self, token: &str) -> Option<u32> {
        if token == END {
            return Some((self.vocab.len() - 1) as u32);
        }
        self.vocab[..self.vocab.len() - 1]
            .binary_search_by(|w| w.as_str().cmp(token))
            .ok()
            .map(|i| i as u32)
    }

    /// Longest suffix of `context` (at most three tokens) seen in training.
    fn table(&self, context: &[&str]) -> (u64, Option<&HashMap<u32, u64>>) {
        let max = context.len().min(LM_ORDER - 1);
        for n in (1..=max).rev() {
            let key = context_key(&context[context.len() - n..]);
            if let Some((total, next)) = self.counts[n].get(&key) {
                return (*total, Some(next));
            }
        }
        self.counts[0]
            .get("")
            .map_or((0, None), |(t, m)| (*t, Some(m)))
    }

    /// `p(token | context)`; tokens outside the vocabulary have probability 0.
    pub fn cond_prob(&self, context: &[&str], token: &str) -> f64 {
        let Some(idx) = self.token_index(token) else {
            return 0.0;
        };
        let (total, next) = self.table(context);
        let c = next.and_then(|m| m.get(&idx)).copied().unwrap_or(0);
        (c as f64 + self.smoothing) / (total as f64 + self.smoothing * self.vocab.len() as f64)
    }

    /// Padded context for the start of a sentence.
    fn start_context() -> Vec<&'static str> {
        vec![START; LM_ORDER - 1]
    }

    /// Sample one sentence of at most `max_len` tokens. Returns the tokens
    /// (without the end marker) and the per-token log-probabilities,
    /// including the end marker when it was generated.
    pub fn sample(&self, max_len: usize, rng: &mut impl Rng) -> (Vec<String>, Vec<f64>) {
        let mut context: Vec<&str> = Self::start_context();
        let mut tokens = Vec::new();
        let mut logps = Vec::new();
        let v = self.vocab.len();
        while tokens.len() < max_len {
            let (total, next) = self.table(&context);
            let denom = total as f64 + self.smoothing * v as f64;
            let mut u = rng.random::<f64>() * denom;
            let mut pick = v - 1;
            for idx in 0..v {
                let c = next
                    .and_then(|m| m.get(&(idx as u32)))
                    .copied()
                    .unwrap_or(0);
                let w = c as f64 + self.smoothing;
                if u < w {
                    pick = idx;
                    break;
                }
                u -= w;
            }
            let c = next
                .and_then(|m| m.get(&(pick as u32)))
                .copied()
                .unwrap_or(0);
            logps.push(((c as f64 + self.smoothing) / denom).ln());
            if pick == v - 1 {
                break;
            }
            tokens.push(self.vocab[pick].clone());
            context.push(self.vocab[pick].as_str());
        }
        (tokens, logps)
    }

    /// Log-probabilities of each token of `sentence` followed by the end
    /// marker.
    pub fn sentence_logprobs(&self, sentence: &[String]) -> Vec<f64> {
        let mut context: Vec<&str> = Self::start_context();
        let mut out = Vec::with_capacity(sentence.len() + 1);
        for w in sentence {
            out.push(self.cond_prob(&context, w).ln());
            context.push(w.as_str());
        }
        out.push(self.cond_prob(&context, END).ln());
        out
    }
}

/// Train on tokenized sentences. Empty sentences are skipped.
pub fn train_lm(sentences: &[Vec<String>], smoothing: f64) -> Result<NgramModel> {
    if !(smoothing > 0.0) {
        return Err(Error::InvalidArgument("smoothing must be positive".into()));
    }
    let words: BTreeSet<&str> = sentences.iter().flatten().map(String::as_str).collect();
    if words.is_empty() {
        return Err(Error::Empty(
            "no subtitle tokens to train the language model".into(),
        ));
    }
    if words.contains(START) || words.contains(END) {
        return Err(Error::InvalidArgument(
            "sentences contain reserved boundary markers".into(),
        ));
    }
    let mut vocab: Vec<String> = words.iter().map(|w| w.to_string()).collect();
    vocab.push(END.to_string());
    let index: HashMap<&str, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i as u32))
        .collect();
    let mut counts: Vec<HashMap<String, (u64, HashMap<u32, u64>)>> = vec![HashMap::new(); LM_ORDER];
    for s in sentences.iter().filter(|s| !s.is_empty()) {
        let mut padded: Vec<&str> = NgramModel::start_context();
        padded.extend(s.iter().map(String::as_str));
        padded.push(END);
        for t in LM_ORDER - 1..padded.len() {
            let tok = index[padded[t]];
            for n in 0..LM_ORDER {
                let entry = counts[n].entry(context_key(&padded[t - n..t])).or_default();
                entry.0 += 1;
                *entry.1.entry(tok).or_default() += 1;
            }
        }
    }
    Ok(NgramModel {
        smoothing,
        vocab,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptionConfig {
    pub candidates: usize,
    pub max_len: usize,
    /// Weight of the atom term in the candidate score.
    pub weight: f64,
    pub smoothing: f64,
}

impl Default for CaptionConfig {
    fn default() -> Self {
        CaptionConfig {
            candidates: 200,
            max_len: 15,
            weight: 1.0,
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

impl CaptionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 || self.max_len == 0 {
            return Err(Error::InvalidArgument(
                "caption candidates and max_len must be at least 1".into(),
            ));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) || !(self.smoothing > 0.0) {
            return Err(Error::InvalidArgument(
                "caption weight must be ≥ 0 and smoothing > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub tokens: Vec<String>,
    pub score: f64,
}

impl Caption {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// `w · Σ_a [x_a log θ_a + (1 − x_a) log(1 − θ_a)]` where `x_a` says whether
/// the candidate contains atom `a`.
pub fn atom_score(tokens: &[String], theta: &[f64], atoms: &[String], weight: f64) -> f64 {
    let present: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();
    weight
        * atoms
            .iter()
            .zip(theta)
            .map(|(a, &p)| {
                let p = clamp_theta(p);
                if present.contains(a.as_str()) {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                }
            })
            .sum::<f64>()
}

/// Mean per-token LM log-probability plus the weighted atom term.
pub fn score_candidate(
    logps: &[f64],
    tokens: &[String],
    theta: &[f64],
    atoms: &[String],
    weight: f64,
) -> f64 {
    let lm = if logps.is_empty() {
        0.0
    } else {
        logps.iter().sum::<f64>() / logps.len() as f64
    };
    lm + atom_score(tokens, theta, atoms, weight)
}

/// Sample candidates from the LM, each from its own derived stream, and
/// return the best-scoring one (earliest on ties).
pub fn caption_step(
    lm: &NgramModel,
    theta: &[f64],
    atoms: &[String],
    config: &CaptionConfig,
    seed: u64,
) -> Result<Caption> {
    config.validate()?;
    if theta.len() != atoms.len() {
        return Err(Error::Dimension {
            record: "language atoms".into(),
            expected: atoms.len(),
            found: theta.len(),
        });
    }
    let scored: Vec<Caption> = (0..config.candidates)
        .into_par_iter()
        .map(|m| {
            let mut rng = rng_from_seed(derive_index_seed(seed, m as u64));
            let (tokens, logps) = lm.sample(config.max_len, &mut rng);
            let score = score_candidate(&logps, &tokens, theta, atoms, config.weight);
            Caption { tokens, score }
        })
        .collect();
    let mut best = 0;
    for (i, c) in scored.iter().enumerate() {
        if c.score > scored[best].score {
            best = i;
        }
    }
    Ok(scored
        .into_iter()
        .nth(best)
        .expect("at least one candidate"))
}
