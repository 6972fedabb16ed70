#![allow(dead_code)]

use std::collections::BTreeMap;

use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;
use stepparse::bphmm::{FeatureMatrix, Hyperparams};
use stepparse::gibbs::{BirthProposal, Sampler, SamplerConfig};
use stepparse::representation::{FrameVector, Sequence, SequenceSet};

/// Canonical key of the left-ordered class of a feature matrix: its columns
/// as bit strings, sorted.
pub fn class_key(f: &FeatureMatrix) -> Vec<Vec<bool>> {
    let mut cols: Vec<Vec<bool>> = (0..f.columns())
        .map(|k| (0..f.rows()).map(|i| f.get(i, k)).collect())
        .collect();
    cols.sort();
    cols
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log p(y | F)` with θ, η and z integrated out, by enumerating every
/// joint state path.
pub fn log_marginal_likelihood(data: &SequenceSet, f: &FeatureMatrix, h: &Hyperparams) -> f64 {
    let n = data.sequences.len();
    let k = f.columns();
    let d = data.dim;
    let active: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..k).filter(|&c| f.get(i, c)).collect())
        .collect();
    let lens: Vec<usize> = data.sequences.iter().map(|s| s.frames.len()).collect();
    // Mixed-radix enumeration over all videos' paths.
    let radices: Vec<usize> = (0..n)
        .flat_map(|i| std::iter::repeat(active[i].len()).take(lens[i]))
        .collect();
    let total: usize = radices.iter().product();
    let mut terms = Vec::with_capacity(total);
    for code in 0..total {
        let mut c = code;
        let mut paths: Vec<Vec<usize>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut z = Vec::with_capacity(lens[i]);
            for _ in 0..lens[i] {
                let r = active[i].len();
                z.push(active[i][c % r]);
                c /= r;
            }
            paths.push(z);
        }
        let mut lp = 0.0;
        let mut ones = vec![vec![0.0; d]; k];
        let mut counts = vec![0.0; k];
        for (i, z) in paths.iter().enumerate() {
            let a = &active[i];
            lp -= (a.len() as f64).ln();
            for &j in a {
                let shape = |c: usize| if c == j { h.alpha + h.kappa } else { h.alpha };
                let mut n_row = 0.0;
                for &c in a {
                    let n_jc = z.windows(2).filter(|w| w[0] == j && w[1] == c).count() as f64;
                    lp += ln_gamma(shape(c) + n_jc) - ln_gamma(shape(c));
                    n_row += n_jc;
                }
                let sa: f64 = a.iter().map(|&c| shape(c)).sum();
                lp += ln_gamma(sa) - ln_gamma(sa + n_row);
            }
            for (t, &s) in z.iter().enumerate() {
                counts[s] += 1.0;
                for b in data.sequences[i].frames[t].ones() {
                    ones[s][b] += 1.0;
                }
            }
        }
        for s in 0..k {
            for b in 0..d {
                let c1 = ones[s][b];
                let c0 = counts[s] - c1;
                lp += ln_beta(h.a0 + c1, h.b0 + c0) - ln_beta(h.a0, h.b0);
            }
        }
        terms.push(lp);
    }
    log_sum_exp(&terms)
}

/// Exact posterior over feature classes of two sequences with at most two
/// steps and non-empty rows.
pub fn tiny_exact_posterior(data: &SequenceSet, h: &Hyperparams) -> BTreeMap<Vec<Vec<bool>>, f64> {
    let t = true;
    let fl = false;
    let candidates = [
        vec![vec![t], vec![t]],
        vec![vec![t, fl], vec![fl, t]],
        vec![vec![t, t], vec![t, t]],
        vec![vec![t, t], vec![t, fl]],
        vec![vec![t, fl], vec![t, t]],
    ];
    let mut logs = Vec::new();
    let mut keys = Vec::new();
    for rows in candidates {
        let k = rows[0].len();
        let f = FeatureMatrix::new(rows, k).unwrap();
        logs.push(f.ibp_log_prob(h.gamma, h.beta) + log_marginal_likelihood(data, &f, h));
        keys.push(class_key(&f));
    }
    let z = log_sum_exp(&logs);
    keys.into_iter()
        .zip(logs)
        .map(|(k, l)| (k, (l - z).exp()))
        .collect()
}

pub fn tiny_dataset(bits: [[[bool; 2]; 3]; 2]) -> SequenceSet {
    SequenceSet {
        dim: 2,
        sequences: bits
            .iter()
            .enumerate()
            .map(|(i, seq)| Sequence {
                id: format!("s{i}"),
                frames: seq.iter().map(|b| FrameVector::from_bits(b)).collect(),
            })
            .collect(),
    }
}

pub fn total_variation(
    a: &BTreeMap<Vec<Vec<bool>>, f64>,
    b: &BTreeMap<Vec<Vec<bool>>, f64>,
) -> f64 {
    let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Empirical distribution over feature classes from one chain on the tiny
/// dataset (10% extra burn-in), and the exact posterior.
pub fn tiny_chain_classes(
    birth: BirthProposal,
    hyper: Hyperparams,
    sweeps: usize,
    seed: u64,
) -> (BTreeMap<Vec<Vec<bool>>, f64>, BTreeMap<Vec<Vec<bool>>, f64>) {
    let t = true;
    let f = false;
    let data = tiny_dataset([[[t, f], [t, f], [f, t]], [[f, t], [f, t], [t, t]]]);
    let burn = sweeps / 10;
    let config = SamplerConfig {
        hyper,
        sweeps: sweeps + burn,
        initial_steps: 1,
        max_steps: Some(2),
        birth,
        ..SamplerConfig::default()
    };
    let mut sampler = Sampler::new(&data, config, seed).unwrap();
    let mut counts: BTreeMap<Vec<Vec<bool>>, f64> = BTreeMap::new();
    for s in 0..sweeps + burn {
        sampler.sweep().unwrap();
        if s >= burn {
            *counts
                .entry(class_key(&sampler.state().features))
                .or_default() += 1.0;
        }
    }
    counts.values_mut().for_each(|v| *v /= sweeps as f64);
    (counts, tiny_exact_posterior(&data, &hyper))
}
