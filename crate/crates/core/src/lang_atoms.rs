//! Language atoms: salient subtitle words ranked by tf-idf across
//! collections.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LANGUAGE_ATOMS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageAtom {
    pub word: String,
    pub score: f64,
}

/// tf-idf of every word in the target document.
///
/// Each entry of `documents` is the concatenated subtitle tokens of one
/// collection. The score of word `w` is `f(w, D) * ln(1 + N / n_w)` where
/// `f` is the raw count in the target document, `N` the number of
/// collections and `n_w` the number of collections containing `w`.
pub fn compute_tfidf<S: AsRef<str>>(
    documents: &[Vec<S>],
    target_index: usize,
) -> Result<BTreeMap<String, f64>> {
    let target = documents.get(target_index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "target index {target_index} out of range for {} collections",
            documents.len()
        ))
    })?;
    if target.is_empty() {
        return Err(Error::Empty("target document has no tokens".into()));
    }

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for tok in target {
        *counts.entry(tok.as_ref().to_string()).or_default() += 1;
    }

    let n = documents.len() as f64;
    let vocabularies: Vec<HashSet<&str>> = documents
        .iter()
        .map(|d| d.iter().map(AsRef::as_ref).collect())
        .collect();

    Ok(counts
        .into_iter()
        .map(|(word, f)| {
            let n_w = vocabularies
                .iter()
                .filter(|v| v.contains(word.as_str()))
                .count() as f64;
            let score = f as f64 * (1.0 + n / n_w).ln();
            (word, score)
        })
        .collect())
}

/// Top-`k` words by score, ties broken lexicographically.
pub fn select_language_atoms(
    scores: &BTreeMap<String, f64>,
    k: usize,
) -> Result<Vec<LanguageAtom>> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "language atom count must be at least 1".into(),
        ));
    }
    if scores.is_empty() {
        return Err(Error::Empty("no scored words".into()));
    }
    let mut ranked: Vec<LanguageAtom> = scores
        .iter()
        .map(|(word, &score)| LanguageAtom {
            word: word.clone(),
            score,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.word.cmp(&b.word))
    });
    ranked.truncate(k);
    Ok(ranked)
}
