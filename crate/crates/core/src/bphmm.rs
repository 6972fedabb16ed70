//! Beta-process HMM with Bernoulli emissions: hyperparameters, the latent
//! state tuple, prior sampling and the synthetic-data generator.
//!
//! Each sequence `i` owns a binary feature row `f_i` selecting which of the
//! `K` global steps it may visit. Step `k` emits frame bits independently
//! with probabilities `θ_k`. Transitions among the active steps of a
//! sequence come from normalized Gamma weights `η_i` with extra mass `κ` on
//! the diagonal; the initial step is uniform over active steps.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::representation::{FrameVector, Sequence, SequenceSet};
use crate::rng::{derive_index_seed, derive_seed, rng_from_seed, StepRng};

/// Emission probabilities are kept inside `[ε, 1 − ε]`.
pub const THETA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// IBP mass γ.
    pub gamma: f64,
    /// IBP concentration β.
    pub beta: f64,
    /// Transition concentration α.
    pub alpha: f64,
    /// Self-transition persistence κ.
    pub kappa: f64,
    /// Beta prior on emission probabilities.
    pub a0: f64,
    pub b0: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            gamma: 2.0,
            beta: 1.0,
            alpha: 1.0,
            kappa: 25.0,
            a0: 1.0,
            b0: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("a0", self.a0),
            ("b0", self.b0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kappa must be non-negative, got {}",
                self.kappa
            )));
        }
        Ok(())
    }

    /// Gamma shape of transition weight `j → k`.
    pub fn transition_shape(&self, j: usize, k: usize) -> f64 {
        if j == k {
            self.alpha + self.kappa
        } else {
            self.alpha
        }
    }

    /// Poisson rate of features unique to one sequence among `n` sequences.
    pub fn unique_feature_rate(&self, n: usize) -> f64 {
        self.gamma * self.beta / (self.beta + n as f64 - 1.0)
    }
}

/// Binary `N × K` matrix of step ownership.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: Vec<Vec<bool>>,
    columns: usize,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<bool>>, columns: usize) -> Result<Self> {
        if rows.iter().any(|r| r.len() != columns) {
            return Err(Error::InvalidArgument(
                "feature rows have inconsistent lengths".into(),
            ));
        }
        Ok(FeatureMatrix { rows, columns })
    }

    pub fn filled(n: usize, k: usize, value: bool) -> Self {
        FeatureMatrix {
            rows: vec![vec![value; k]; n],
            columns: k,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, k: usize) -> bool {
        self.rows[i][k]
    }

    pub fn set(&mut self, i: usize, k: usize, value: bool) {
        self.rows[i][k] = value;
    }

    pub fn active(&self, i: usize) -> Vec<usize> {
        active_indices(&self.rows[i])
    }

    /// Number of sequences owning step `k`.
    pub fn column_count(&self, k: usize) -> usize {
        self.rows.iter().filter(|r| r[k]).count()
    }

    pub fn push_column(&mut self, owners: &[usize]) {
        for r in &mut self.rows {
            r.push(false);
        }
        for &i in owners {
            self.rows[i][self.columns] = true;
        }
        self.columns += 1;
    }

    pub fn remove_column(&mut self, k: usize) {
        for r in &mut self.rows {
            r.remove(k);
        }
        self.columns -= 1;
    }

    pub fn has_empty_row(&self) -> bool {
        self.rows.iter().any(|r| !r.contains(&true))
    }

    /// Log probability of the left-ordered equivalence class of this matrix
    /// under the two-parameter IBP.
    pub fn ibp_log_prob(&self, gamma: f64, beta: f64) -> f64 {
        let n = self.rows.len();
        let mut histories: HashMap<Vec<bool>, usize> = HashMap::new();
        let mut lp = 0.0;
        for k in 0..self.columns {
            let history: Vec<bool> = self.rows.iter().map(|r| r[k]).collect();
            let m = history.iter().filter(|&&b| b).count();
            if m == 0 {
                return f64::NEG_INFINITY;
            }
            *histories.entry(history).or_default() += 1;
            lp += ln_gamma(m as f64) + ln_gamma(n as f64 - m as f64 + beta)
                - ln_gamma(n as f64 + beta);
        }
        lp += self.columns as f64 * (gamma * beta).ln();
        lp -= histories
            .values()
            .map(|&c| ln_gamma(c as f64 + 1.0))
            .sum::<f64>();
        lp -= gamma * (1..=n).map(|i| beta / (beta + i as f64 - 1.0)).sum::<f64>();
        lp
    }
}

pub(crate) fn active_indices(row: &[bool]) -> Vec<usize> {
    row.iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(k, _)| k)
        .collect()
}

pub fn clamp_theta(p: f64) -> f64 {
    p.clamp(THETA_EPS, 1.0 - THETA_EPS)
}

/// Indian buffet process with `n` customers. Customer `i` (1-based) takes
/// existing dish `k` with probability `m_k / (β + i − 1)` and
/// `Poisson(γβ / (β + i − 1))` new dishes. Rows may be empty.
pub fn sample_ibp(n: usize, gamma: f64, beta: f64, rng: &mut StepRng) -> Result<FeatureMatrix> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "IBP needs at least one customer".into(),
        ));
    }
    if !(gamma > 0.0 && beta > 0.0) {
        return Err(Error::InvalidArgument(
            "IBP parameters must be positive".into(),
        ));
    }
    let mut counts: Vec<usize> = Vec::new();
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 1..=n {
        let denom = beta + i as f64 - 1.0;
        let mut dishes: Vec<usize> = Vec::new();
        for (k, m) in counts.iter_mut().enumerate() {
            if rng.random::<f64>() < *m as f64 / denom {
                *m += 1;
                dishes.push(k);
            }
        }
        let rate = gamma * beta / denom;
        let new = Poisson::new(rate)
            .map(|p| p.sample(rng) as usize)
            .unwrap_or(0);
        for _ in 0..new {
            dishes.push(counts.len());
            counts.push(1);
        }
        rows.push(dishes);
    }
    let k = counts.len();
    let rows = rows
        .into_iter()
        .map(|dishes| {
            let mut r = vec![false; k];
            for d in dishes {
                r[d] = true;
            }
            r
        })
        .collect();
    FeatureMatrix::new(rows, k)
}

/// Row-normalized restriction of `η ∘ f` (zero outside active steps).
pub fn transition_matrix(eta: &[Vec<f64>], f: &[bool]) -> Vec<Vec<f64>> {
    let k = f.len();
    let mut pi = vec![vec![0.0; k]; k];
    for j in 0..k {
        if !f[j] {
            continue;
        }
        let total: f64 = (0..k).filter(|&c| f[c]).map(|c| eta[j][c]).sum();
        for c in 0..k {
            if f[c] {
                pi[j][c] = eta[j][c] / total;
            }
        }
    }
    pi
}

pub(crate) fn gamma_draw(shape: f64, rng: &mut StepRng) -> f64 {
    let g = Gamma::new(shape, 1.0)
        .expect("gamma shape is positive")
        .sample(rng);
    // Guard against underflow for tiny shapes.
    g.max(f64::MIN_POSITIVE)
}

pub(crate) fn beta_draw(a: f64, b: f64, rng: &mut StepRng) -> f64 {
    clamp_theta(
        Beta::new(a, b)
            .expect("beta parameters are positive")
            .sample(rng),
    )
}

/// Draw `η_{j,k} ~ Gam(α + κδ_{jk}, 1)` for active pairs and normalize.
/// Returns `(η, π)` as full `K × K` matrices, zero outside active pairs.
pub fn sample_transitions(
    f: &[bool],
    alpha: f64,
    kappa: f64,
    rng: &mut StepRng,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if !f.contains(&true) {
        return Err(Error::InvalidArgument(
            "feature row has no active step".into(),
        ));
    }
    let k = f.len();
    let mut eta = vec![vec![0.0; k]; k];
    for j in 0..k {
        if !f[j] {
            continue;
        }
        for c in 0..k {
            if f[c] {
                eta[j][c] = gamma_draw(if j == c { alpha + kappa } else { alpha }, rng);
            }
        }
    }
    let pi = transition_matrix(&eta, f);
    Ok((eta, pi))
}

/// `Σ_d y_d log θ_d + (1 − y_d) log(1 − θ_d)` with θ clamped to `[ε, 1 − ε]`.
pub fn emission_loglik(y: &FrameVector, theta: &[f64]) -> Result<f64> {
    if y.dim() != theta.len() {
        return Err(Error::Dimension {
            record: "emission".into(),
            expected: theta.len(),
            found: y.dim(),
        });
    }
    let mut ll = 0.0;
    let mut ones = y.ones().peekable();
    for (d, &p) in theta.iter().enumerate() {
        let p = clamp_theta(p);
        if ones.peek() == Some(&d) {
            ones.next();
            ll += p.ln();
        } else {
            ll += (1.0 - p).ln();
        }
    }
    Ok(ll)
}

/// All latent variables of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub hyper: Hyperparams,
    pub features: FeatureMatrix,
    /// `K × D` emission probabilities.
    pub theta: Vec<Vec<f64>>,
    /// Per sequence, `K × K` transition weights (zero outside active pairs).
    pub eta: Vec<Vec<Vec<f64>>>,
    /// Per sequence, per frame step index.
    pub states: Vec<Vec<usize>>,
    pub iteration: usize,
}

impl ModelState {
    pub fn num_steps(&self) -> usize {
        self.features.columns()
    }

    pub fn num_sequences(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.theta.first().map_or(0, Vec::len)
    }

    pub fn transition(&self, i: usize) -> Vec<Vec<f64>> {
        transition_matrix(&self.eta[i], self.features.row(i))
    }

    /// Checks that states respect feature rows, η respects the mask, rows
    /// are non-empty and every column is owned and sized consistently.
    pub fn check_consistency(&self) -> Result<()> {
        let k = self.num_steps();
        let fail = |m: String| {
            Err(Error::InvalidArgument(format!(
                "inconsistent model state: {m}"
            )))
        };
        if self.theta.len() != k {
            return fail(format!("{} θ rows for {k} steps", self.theta.len()));
        }
        if self.eta.len() != self.num_sequences() || self.states.len() != self.num_sequences() {
            return fail("per-sequence arrays have wrong length".into());
        }
        for c in 0..k {
            if self.features.column_count(c) == 0 {
                return fail(format!("step {c} has no owner"));
            }
        }
        for i in 0..self.num_sequences() {
            let f = self.features.row(i);
            if !f.contains(&true) {
                return fail(format!("sequence {i} has no active step"));
            }
            if let Some(&z) = self.states[i].iter().find(|&&z| z >= k || !f[z]) {
                return fail(format!("sequence {i} visits inactive step {z}"));
            }
            let eta = &self.eta[i];
            if eta.len() != k || eta.iter().any(|r| r.len() != k) {
                return fail(format!("η of sequence {i} has wrong shape"));
            }
            for j in 0..k {
                for c in 0..k {
                    let on = f[j] && f[c];
                    if on != (eta[j][c] > 0.0) {
                        return fail(format!("η[{i}][{j}][{c}] violates the feature mask"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Remove steps owned by no sequence, remapping state indices.
    pub fn prune(&mut self) -> Vec<usize> {
        let mut removed = Vec::new();
        let mut k = self.num_steps();
        while k > 0 {
            k -= 1;
            if self.features.column_count(k) == 0 {
                self.remove_step(k);
                removed.push(k);
            }
        }
        removed
    }

    /// Drop step `k` from every structure; states above `k` shift down.
    pub(crate) fn remove_step(&mut self, k: usize) {
        self.features.remove_column(k);
        self.theta.remove(k);
        for eta in &mut self.eta {
            eta.remove(k);
            for row in eta.iter_mut() {
                row.remove(k);
            }
        }
        for z in self.states.iter_mut().flatten() {
            if *z > k {
                *z -= 1;
            }
        }
    }
}

/// How the synthetic generator chooses the feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeatureSource {
    /// Two-parameter IBP, conditioned on non-empty rows.
    Ibp,
    /// Fixed number of steps; each sequence owns each step with
    /// probability `share`, conditioned on non-empty rows and columns.
    Fixed { steps: usize, share: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub sequences: usize,
    pub frames: usize,
    pub dims: usize,
    pub hyper: Hyperparams,
    pub features: FeatureSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub sequences: SequenceSet,
    pub truth: ModelState,
}

const REJECTION_ATTEMPTS: usize = 10_000;

fn sample_feature_matrix(config: &SyntheticConfig, rng: &mut StepRng) -> Result<FeatureMatrix> {
    let n = config.sequences;
    for _ in 0..REJECTION_ATTEMPTS {
        let f = match config.features {
            FeatureSource::Ibp => sample_ibp(n, config.hyper.gamma, config.hyper.beta, rng)?,
            FeatureSource::Fixed { steps, share } => {
                let rows = (0..n)
                    .map(|_| (0..steps).map(|_| rng.random::<f64>() < share).collect())
                    .collect();
                FeatureMatrix::new(rows, steps)?
            }
        };
        let columns_used = (0..f.columns()).all(|k| f.column_count(k) > 0);
        if !f.has_empty_row() && columns_used {
            return Ok(f);
        }
    }
    Err(Error::Degenerate(format!(
        "no feature matrix with non-empty rows after {REJECTION_ATTEMPTS} draws"
    )))
}

/// Sample a full dataset and its latent variables from the generative model.
///
/// The feature matrix and emission probabilities come from one derived
/// stream; each sequence's transitions, states and frames come from its own
/// stream, so sequences are independent of generation order.
pub fn generate_synthetic(config: &SyntheticConfig, rng: &mut StepRng) -> Result<SyntheticData> {
    if config.sequences == 0 || config.frames == 0 || config.dims == 0 {
        return Err(Error::InvalidArgument(
            "synthetic sizes must be at least 1".into(),
        ));
    }
    if let FeatureSource::Fixed { steps, share } = config.features {
        if steps == 0 || !(share > 0.0 && share <= 1.0) {
            return Err(Error::InvalidArgument(
                "fixed feature source needs steps ≥ 1 and share in (0, 1]".into(),
            ));
        }
    }
    config.hyper.validate()?;
    let master: u64 = rng.random();
    let hyper = config.hyper;

    let mut global = rng_from_seed(derive_seed(master, "features"));
    let features = sample_feature_matrix(config, &mut global)?;
    let theta: Vec<Vec<f64>> = (0..features.columns())
        .map(|_| {
            (0..config.dims)
                .map(|_| beta_draw(hyper.a0, hyper.b0, &mut global))
                .collect()
        })
        .collect();

    let mut eta = Vec::with_capacity(config.sequences);
    let mut states = Vec::with_capacity(config.sequences);
    let mut sequences = Vec::with_capacity(config.sequences);
    for i in 0..config.sequences {
        let mut local = rng_from_seed(derive_index_seed(master, i as u64));
        let f = features.row(i);
        let (eta_i, pi) = sample_transitions(f, hyper.alpha, hyper.kappa, &mut local)?;
        let active = active_indices(f);
        let mut z = Vec::with_capacity(config.frames);
        z.push(active[local.random_range(0..active.len())]);
        for t in 1..config.frames {
            let row = &pi[z[t - 1]];
            let u: f64 = local.random();
            let mut acc = 0.0;
            let mut next = *active.last().expect("active set is non-empty");
            for &c in &active {
                acc += row[c];
                if u < acc {
                    next = c;
                    break;
                }
            }
            z.push(next);
        }
        let frames = z
            .iter()
            .map(|&k| {
                FrameVector::from_ones(
                    config.dims,
                    (0..config.dims).filter(|&d| local.random::<f64>() < theta[k][d]),
                )
            })
            .collect();
        sequences.push(Sequence {
            id: format!("seq{i:03}"),
            frames,
        });
        eta.push(eta_i);
        states.push(z);
    }

    let truth = ModelState {
        hyper,
        features,
        theta,
        eta,
        states,
        iteration: 0,
    };
    Ok(SyntheticData {
        sequences: SequenceSet {
            dim: config.dims,
            sequences,
        },
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emission_examples() {
        let y = FrameVector::from_ones(2, [0]);
        let ll = emission_loglik(&y, &[0.9, 0.2]).unwrap();
        assert!((ll - (0.9f64.ln() + 0.8f64.ln())).abs() < 1e-15);
        assert!((ll + 0.3285).abs() < 1e-4);

        let y = FrameVector::from_ones(7, [1, 4, 5]);
        assert!((emission_loglik(&y, &[0.5; 7]).unwrap() - 7.0 * 0.5f64.ln()).abs() < 1e-12);

        let ll = emission_loglik(&FrameVector::from_ones(1, [0]), &[0.0]).unwrap();
        assert!((ll - THETA_EPS.ln()).abs() < 1e-12);
        assert!(emission_loglik(&FrameVector::zeros(3), &[0.5; 2]).is_err());
    }

    #[test]
    fn single_active_feature_transitions() {
        let mut rng = rng_from_seed(1);
        let (eta, pi) = sample_transitions(&[false, true, false], 1.0, 25.0, &mut rng).unwrap();
        assert_eq!(pi[1], vec![0.0, 1.0, 0.0]);
        assert!(eta[1][1] > 0.0 && eta[0][1] == 0.0);
        assert!(sample_transitions(&[false, false], 1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn transition_rows_normalize_and_respect_mask() {
        let mut rng = rng_from_seed(5);
        let f = [true, false, true, true];
        for _ in 0..100 {
            let (_, pi) = sample_transitions(&f, 0.5, 3.0, &mut rng).unwrap();
            for (j, row) in pi.iter().enumerate() {
                if f[j] {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
                for (c, &p) in row.iter().enumerate() {
                    if !f[c] || !f[j] {
                        assert_eq!(p, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn ibp_class_probabilities_for_two_customers() {
        let (g, b) = (1.3, 1.0);
        let base = -g * 1.5;
        let f = |rows: Vec<Vec<bool>>| {
            let k = rows[0].len();
            FeatureMatrix::new(rows, k).unwrap().ibp_log_prob(g, b)
        };
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(
            f(vec![vec![true], vec![true]]),
            (g * 0.5).ln() + base
        ));
        assert!(close(
            f(vec![vec![true, false], vec![false, true]]),
            (g * g / 4.0).ln() + base
        ));
        assert!(close(
            f(vec![vec![true, true], vec![true, true]]),
            (g * g / 8.0).ln() + base
        ));
        assert!(close(
            f(vec![vec![true, true], vec![true, false]]),
            (g * g / 4.0).ln() + base
        ));
        assert!(close(f(vec![vec![], vec![]]), base));
    }

    #[test]
    fn single_step_generation() {
        let config = SyntheticConfig {
            sequences: 3,
            frames: 20,
            dims: 5,
            hyper: Hyperparams::default(),
            features: FeatureSource::Fixed {
                steps: 1,
                share: 1.0,
            },
        };
        let data = generate_synthetic(&config, &mut rng_from_seed(2)).unwrap();
        assert!(data.truth.states.iter().flatten().all(|&z| z == 0));
        data.sequences.validate().unwrap();
        data.truth.check_consistency().unwrap();
    }

    #[test]
    fn pruning_removes_unowned_steps() {
        let config = SyntheticConfig {
            sequences: 2,
            frames: 10,
            dims: 3,
            hyper: Hyperparams::default(),
            features: FeatureSource::Fixed {
                steps: 3,
                share: 1.0,
            },
        };
        let mut state = generate_synthetic(&config, &mut rng_from_seed(9))
            .unwrap()
            .truth;
        for i in 0..2 {
            for z in state.states[i].iter_mut() {
                if *z == 1 {
                    *z = 0;
                }
            }
            state.features.set(i, 1, false);
            for r in 0..3 {
                state.eta[i][r][1] = 0.0;
                state.eta[i][1][r] = 0.0;
            }
        }
        let before: Vec<Vec<usize>> = state.states.clone();
        assert_eq!(state.prune(), vec![1]);
        assert_eq!(state.num_steps(), 2);
        for (b, a) in before.iter().zip(&state.states) {
            for (x, y) in b.iter().zip(a) {
                assert_eq!(if *x == 2 { 1 } else { *x }, *y);
            }
        }
        state.check_consistency().unwrap();
    }

    #[test]
    fn ibp_row_sums_have_poisson_mean() {
        // Each customer's dish count is Poisson(γ) marginally.
        let mut rng = crate::rng::rng_from_seed(11);
        let draws = 20_000;
        let (n, gamma) = (4, 3.0);
        let mut total = 0usize;
        for _ in 0..draws {
            let f = sample_ibp(n, gamma, 1.0, &mut rng).unwrap();
            total += (0..n)
                .map(|i| f.row(i).iter().filter(|&&b| b).count())
                .sum::<usize>();
        }
        let mean = total as f64 / (draws * n) as f64;
        assert!(
            (mean - gamma).abs() < 8.0 * (gamma / draws as f64).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn transition_means_follow_dirichlet_weights() {
        let mut rng = crate::rng::rng_from_seed(12);
        let f = [true, false, true, true];
        let (alpha, kappa) = (1.0, 3.0);
        let draws = 20_000;
        let mut sums = vec![vec![0.0; 4]; 4];
        for _ in 0..draws {
            let (_, pi) = sample_transitions(&f, alpha, kappa, &mut rng).unwrap();
            for (s, p) in sums.iter_mut().flatten().zip(pi.iter().flatten()) {
                *s += p;
            }
        }
        let total = 3.0 * alpha + kappa;
        for j in [0, 2, 3] {
            for k in 0..4 {
                let expected = if !f[k] {
                    0.0
                } else if j == k {
                    (alpha + kappa) / total
                } else {
                    alpha / total
                };
                assert!(
                    (sums[j][k] / draws as f64 - expected).abs() < 0.01,
                    "{j} {k}"
                );
            }
        }
    }
}
