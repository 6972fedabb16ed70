//! Acceptance suite. Each test prints one `PASS`/`FAIL` line with its
//! measurements before asserting.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::{tiny_chain_classes, total_variation};
use stepparse::bphmm::{
    generate_synthetic, sample_ibp, FeatureSource, Hyperparams, SyntheticConfig,
};
use stepparse::corpus::{
    read_dataset, write_dataset, write_ground_truth, GroundTruth, GtSegment, LoadOptions,
};
use stepparse::gibbs::{
    forward_loglik, run_chain, sample_eta, sample_theta, BirthProposal, SamplerConfig,
};
use stepparse::joint_cluster::{
    filter_outliers, joint_gradient, joint_objective, scgp_single, ClusterIndicator, InterEdge,
    SimilarityGraph, SparseMatrix,
};
use stepparse::metrics::{iou_cms, map_cms, match_labels, matched_accuracy, IouMode};
use stepparse::pipeline::{run_pipeline, PipelineConfig, PipelineInputs};
use stepparse::representation::{FrameVector, Sequence, SequenceSet};
use stepparse::rng::rng_from_seed;
use stepparse::synthetic::{synthetic_videos, VideoSynthConfig};

fn report(name: &str, ok: bool, start: Instant, detail: String) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!(
        "[{verdict}] {name} ({:.2}s): {detail}",
        start.elapsed().as_secs_f64()
    );
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                let w = rng.random::<f64>();
                a[i][j] = w;
                a[j][i] = w;
            }
        }
    }
    a
}

fn random_graph(rng: &mut ChaCha8Rng) -> SimilarityGraph {
    let videos = rng.random_range(2..=4);
    let sizes: Vec<usize> = (0..videos).map(|_| rng.random_range(1..=20)).collect();
    let intra = sizes
        .iter()
        .map(|&n| SparseMatrix::from_dense(&random_symmetric(rng, n, 0.6)))
        .collect();
    let mut inter = Vec::new();
    for i in 0..videos {
        for j in i + 1..videos {
            if rng.random::<f64>() < 0.8 {
                let m: Vec<Vec<f64>> = (0..sizes[i])
                    .map(|_| {
                        (0..sizes[j])
                            .map(|_| {
                                if rng.random::<f64>() < 0.5 {
                                    rng.random::<f64>()
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect();
                inter.push(InterEdge {
                    i,
                    j,
                    matrix: SparseMatrix::from_dense(&m),
                });
            }
        }
    }
    SimilarityGraph { intra, inter }
}

#[test]
fn criterion_01_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let g = random_graph(&mut rng);
        let x = ClusterIndicator {
            blocks: g
                .sizes()
                .iter()
                .map(|&n| (0..n).map(|_| rng.random_range(0.1..1.0)).collect())
                .collect(),
        };
        let grad = joint_gradient(&x, &g).unwrap();
        for b in 0..x.blocks.len() {
            for i in 0..x.blocks[b].len() {
                let mut plus = x.clone();
                let mut minus = x.clone();
                plus.blocks[b][i] += h;
                minus.blocks[b][i] -= h;
                let fd = (joint_objective(&plus, &g).unwrap()
                    - joint_objective(&minus, &g).unwrap())
                    / (2.0 * h);
                let rel = (grad[b][i] - fd).abs() / fd.abs().max(grad[b][i].abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    let ok = worst < 1e-4;
    report(
        "gradient vs finite differences",
        ok,
        start,
        format!("max relative error {worst:.2e}"),
    );
    assert!(ok);
}

fn rayleigh(a: &[Vec<f64>], members: &[usize]) -> f64 {
    members
        .iter()
        .map(|&i| members.iter().map(|&j| a[i][j]).sum::<f64>())
        .sum::<f64>()
        / members.len() as f64
}

/// Best value over prefixes of the exact dominant eigenvector's order.
fn rounding_family_max(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let eig = DMatrix::from_fn(n, n, |i, j| a[i][j]).symmetric_eigen();
    let top = eig.eigenvalues.iamax();
    let mut v: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    if v.iter().sum::<f64>() < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| v[y].total_cmp(&v[x]));
    (1..=n)
        .map(|len| rayleigh(a, &order[..len]))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn exhaustive_max(a: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = a.len();
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for mask in 1u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let v = rayleigh(a, &members);
        if v > best.1 + 1e-12 {
            best = (members, v);
        }
    }
    best
}

#[test]
fn criterion_02_scgp_matches_exhaustive_search() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_gap: f64 = 0.0;
    let mut global_hits = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..=12);
        let mut a = random_symmetric(&mut rng, n, 0.7);
        a[0][1] = a[0][1].max(0.1);
        a[1][0] = a[0][1];
        let sol = scgp_single(&SparseMatrix::from_dense(&a)).unwrap();
        worst_gap = worst_gap.max((sol.objective - rounding_family_max(&a)).abs());
        worst_gap = worst_gap.max((sol.objective - rayleigh(&a, &sol.members)).abs());
        if (sol.objective - exhaustive_max(&a).1).abs() < 1e-9 {
            global_hits += 1;
        }
    }

    let mut planted_ok = true;
    for _ in 0..20 {
        let n = rng.random_range(6..=12);
        let size = rng.random_range(3..=n / 2 + 1);
        let mut nodes: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            nodes.swap(i, rng.random_range(0..=i));
        }
        let mut clique = nodes[..size].to_vec();
        clique.sort_unstable();
        let mut a = random_symmetric(&mut rng, n, 0.3);
        a.iter_mut().flatten().for_each(|w| *w *= 0.1);
        for &i in &clique {
            for &j in &clique {
                if i != j {
                    a[i][j] = 1.0;
                }
            }
        }
        let sol = scgp_single(&SparseMatrix::from_dense(&a)).unwrap();
        let (bf, _) = exhaustive_max(&a);
        planted_ok &= sol.members == clique && bf == clique;
    }
    let ok = worst_gap < 1e-9 && planted_ok;
    report(
        "scgp vs exhaustive search",
        ok,
        start,
        format!("rounding-family gap {worst_gap:.1e}, planted cliques recovered: {planted_ok}, global optimum on {global_hits}/50"),
    );
    assert!(ok);
}

fn bernoulli_log(frame: &FrameVector, theta: &[f64]) -> f64 {
    theta
        .iter()
        .enumerate()
        .map(|(d, &p)| if frame.get(d) { p.ln() } else { (1.0 - p).ln() })
        .sum()
}

fn enumerated_loglik(
    frames: &[FrameVector],
    theta: &[Vec<f64>],
    pi: &[Vec<f64>],
    init: &[f64],
) -> f64 {
    let k = theta.len();
    let t = frames.len();
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    loop {
        let mut lp = init[path[0]].ln() + bernoulli_log(&frames[0], &theta[path[0]]);
        for s in 1..t {
            lp += pi[path[s - 1]][path[s]].ln() + bernoulli_log(&frames[s], &theta[path[s]]);
        }
        total += lp.exp();
        let mut pos = 0;
        while pos < t && path[pos] == k - 1 {
            path[pos] = 0;
            pos += 1;
        }
        if pos == t {
            break;
        }
        path[pos] += 1;
    }
    total.ln()
}

#[test]
fn criterion_03_forward_matches_path_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(1..=4);
        let max_t = (1..=12)
            .take_while(|&t| (k as f64).powi(t) <= 1e5)
            .last()
            .unwrap() as usize;
        let t = rng.random_range(1..=max_t);
        let d = rng.random_range(1..=4);
        let theta: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(0.05..0.95)).collect())
            .collect();
        let normalize = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let pi: Vec<Vec<f64>> = (0..k)
            .map(|_| normalize((0..k).map(|_| rng.random_range(0.05..1.0)).collect()))
            .collect();
        let init = normalize((0..k).map(|_| rng.random_range(0.05..1.0)).collect());
        let frames: Vec<FrameVector> = (0..t)
            .map(|_| {
                FrameVector::from_bits(&(0..d).map(|_| rng.random::<bool>()).collect::<Vec<_>>())
            })
            .collect();
        let refs: Vec<&[f64]> = theta.iter().map(Vec::as_slice).collect();
        let fast = forward_loglik(&frames, &refs, &pi, &init).unwrap();
        worst = worst.max((fast - enumerated_loglik(&frames, &theta, &pi, &init)).abs());
    }
    let ok = worst < 1e-10;
    report(
        "forward vs path enumeration",
        ok,
        start,
        format!("max absolute error {worst:.2e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_04_conjugate_update_moments() {
    let start = Instant::now();
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (a0, b0) = (1.5, 0.7);
    let d = 3;
    let sequences: Vec<Sequence> = (0..2)
        .map(|i| Sequence {
            id: format!("s{i}"),
            frames: (0..12)
                .map(|_| {
                    FrameVector::from_bits(
                        &(0..d)
                            .map(|_| rng.random::<f64>() < 0.4)
                            .collect::<Vec<_>>(),
                    )
                })
                .collect(),
        })
        .collect();
    let data = SequenceSet { dim: d, sequences };
    let states: Vec<Vec<usize>> = data
        .sequences
        .iter()
        .map(|s| {
            (0..s.frames.len())
                .map(|t| usize::from(t % 3 == 0))
                .collect()
        })
        .collect();

    // Closed-form Beta posterior mean and standard deviation per (k, d).
    let mut ones = vec![vec![0.0; d]; 2];
    let mut counts = [0.0; 2];
    for (seq, z) in data.sequences.iter().zip(&states) {
        for (frame, &k) in seq.frames.iter().zip(z) {
            counts[k] += 1.0;
            for (dd, o) in ones[k].iter_mut().enumerate() {
                *o += f64::from(u8::from(frame.get(dd)));
            }
        }
    }
    let mut sampler = rng_from_seed(4);
    let mut sums = vec![vec![0.0; d]; 2];
    for _ in 0..draws {
        let theta = sample_theta(&data, &states, 2, a0, b0, &mut sampler).unwrap();
        for k in 0..2 {
            for dd in 0..d {
                sums[k][dd] += theta[k][dd];
            }
        }
    }
    let mut theta_z: f64 = 0.0;
    for k in 0..2 {
        for dd in 0..d {
            let a = a0 + ones[k][dd];
            let b = b0 + counts[k] - ones[k][dd];
            let mean = a / (a + b);
            let sd = (a * b / ((a + b).powi(2) * (a + b + 1.0))).sqrt();
            theta_z = theta_z
                .max((sums[k][dd] / draws as f64 - mean).abs() / (sd / (draws as f64).sqrt()));
        }
    }

    // Transition weights: with all three steps active, η_j = S·π_j where
    // π_j ~ Dir(α + κδ + n_j) and S ~ Gamma(Σ(α + κδ), 1).
    let (alpha, kappa) = (1.0, 4.0);
    let z = vec![0, 0, 1, 1, 1, 2, 0, 0, 2, 2, 1, 0];
    let f = vec![true, true, true];
    let k = 3;
    let mut n = vec![vec![0.0; k]; k];
    for w in z.windows(2) {
        n[w[0]][w[1]] += 1.0;
    }
    let mut eta_sum = vec![vec![0.0; k]; k];
    let mut eta_sq = vec![vec![0.0; k]; k];
    for _ in 0..draws {
        let eta = sample_eta(&z, &f, alpha, kappa, &mut sampler).unwrap();
        for j in 0..k {
            for c in 0..k {
                eta_sum[j][c] += eta[j][c];
                eta_sq[j][c] += eta[j][c] * eta[j][c];
            }
        }
    }
    let mut eta_z: f64 = 0.0;
    for j in 0..k {
        let shapes: Vec<f64> = (0..k)
            .map(|c| alpha + if c == j { kappa } else { 0.0 })
            .collect();
        let prior_total: f64 = shapes.iter().sum();
        let post_total: f64 = prior_total + n[j].iter().sum::<f64>();
        for c in 0..k {
            let mean = prior_total * (shapes[c] + n[j][c]) / post_total;
            let emp = eta_sum[j][c] / draws as f64;
            let var = eta_sq[j][c] / draws as f64 - emp * emp;
            eta_z = eta_z.max((emp - mean).abs() / (var / draws as f64).sqrt());
        }
    }
    let ok = theta_z < 3.0 && eta_z < 3.0;
    report(
        "conjugate update moments",
        ok,
        start,
        format!("max |z|: theta {theta_z:.2}, eta {eta_z:.2}"),
    );
    assert!(ok);
}

#[test]
fn criterion_05_ibp_mean_feature_count() {
    let start = Instant::now();
    let draws = 100_000;
    let (gamma, beta, n) = (2.0, 1.0, 10);
    let expected: f64 = gamma * (1..=n).map(|i| 1.0 / i as f64).sum::<f64>();
    let mut rng = rng_from_seed(5);
    let total: usize = (0..draws)
        .map(|_| sample_ibp(n, gamma, beta, &mut rng).unwrap().columns())
        .sum();
    let mean = total as f64 / draws as f64;
    // With β = 1 the total is Poisson, so its variance equals its mean.
    let z = (mean - expected) / (expected / draws as f64).sqrt();
    let ok = z.abs() < 3.0;
    report(
        "IBP mean feature count",
        ok,
        start,
        format!("mean {mean:.4}, expected {expected:.4}, z {z:.2}"),
    );
    assert!(ok);
}

#[test]
fn criterion_06_chain_matches_exact_posterior() {
    let start = Instant::now();
    let hyper = Hyperparams {
        kappa: 2.0,
        ..Hyperparams::default()
    };
    let (emp, exact) = tiny_chain_classes(BirthProposal::default(), hyper, 100_000, 6);
    let tv = total_variation(&emp, &exact);
    let ok = tv <= 0.05;
    report(
        "exact posterior agreement",
        ok,
        start,
        format!("total variation {tv:.4}"),
    );
    assert!(ok);
}

fn gt_from_states(ids: &[String], states: &[Vec<usize>]) -> GroundTruth {
    GroundTruth::from_label_sequences(
        ids.iter()
            .map(String::as_str)
            .zip(states.iter().map(Vec::as_slice)),
        |k| format!("step{k}"),
    )
}

#[test]
fn criterion_07_synthetic_recovery() {
    let start = Instant::now();
    let results: Vec<(f64, usize, f64)> = (0..10u64)
        .into_par_iter()
        .map(|s| {
            let config = SyntheticConfig {
                sequences: 8,
                frames: 100,
                dims: 30,
                hyper: Hyperparams {
                    a0: 0.1,
                    b0: 0.1,
                    ..Hyperparams::default()
                },
                features: FeatureSource::Fixed {
                    steps: 4,
                    share: 0.75,
                },
            };
            let data = generate_synthetic(&config, &mut rng_from_seed(1000 + s)).unwrap();
            let sampler = SamplerConfig {
                sweeps: 500,
                birth: BirthProposal::DataDriven {
                    prior_weight: 0.5,
                    window: 5,
                },
                ..SamplerConfig::default()
            };
            let out = run_chain(&data.sequences, &sampler, s).unwrap();
            let acc = matched_accuracy(&out.reported.states, &data.truth.states).unwrap();
            let ids = data.sequences.ids();
            let pred: BTreeMap<String, Vec<usize>> = ids
                .iter()
                .cloned()
                .zip(out.reported.states.clone())
                .collect();
            let iou = iou_cms(
                &pred,
                &gt_from_states(&ids, &data.truth.states),
                IouMode::Segment,
            )
            .unwrap()
            .value;
            (acc, out.reported.num_steps(), iou)
        })
        .collect();
    let good = results
        .iter()
        .filter(|(acc, k, iou)| *acc >= 0.8 && k.abs_diff(4) <= 1 && *iou >= 0.7)
        .count();
    let ok = good >= 8;
    let detail: Vec<String> = results
        .iter()
        .map(|(a, k, i)| format!("{a:.2}/{k}/{i:.2}"))
        .collect();
    report(
        "synthetic recovery",
        ok,
        start,
        format!(
            "{good}/10 chains pass (accuracy/steps/iou: {})",
            detail.join(" ")
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_08_metric_sanity() {
    let start = Instant::now();
    let gt = GroundTruth {
        videos: BTreeMap::from([
            (
                "a".to_string(),
                vec![
                    GtSegment {
                        start: 0,
                        end: 4,
                        label: "x".into(),
                    },
                    GtSegment {
                        start: 4,
                        end: 10,
                        label: "y".into(),
                    },
                ],
            ),
            (
                "b".to_string(),
                vec![
                    GtSegment {
                        start: 0,
                        end: 3,
                        label: "z".into(),
                    },
                    GtSegment {
                        start: 3,
                        end: 8,
                        label: "x".into(),
                    },
                ],
            ),
        ]),
    };
    let relabel = |l: &str| match l {
        "x" => 5,
        "y" => 2,
        _ => 0,
    };
    let mut pred = BTreeMap::new();
    let mut post = BTreeMap::new();
    for (id, segs) in &gt.videos {
        let z: Vec<usize> = segs
            .iter()
            .flat_map(|s| vec![relabel(&s.label); s.len()])
            .collect();
        post.insert(
            id.clone(),
            z.iter()
                .map(|&k| (0..6).map(|c| if c == k { 1.0 } else { 0.0 }).collect())
                .collect::<Vec<Vec<f64>>>(),
        );
        pred.insert(id.clone(), z);
    }
    let perfect = iou_cms(&pred, &gt, IouMode::Segment).unwrap().value == 1.0
        && iou_cms(&pred, &gt, IouMode::FrameSet).unwrap().value == 1.0
        && map_cms(&post, &gt).unwrap().value == 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut matching_ok = true;
    for p in 1..=7 {
        for g in 1..=7 {
            let scores: Vec<Vec<f64>> = (0..p)
                .map(|_| (0..g).map(|_| rng.random::<f64>()).collect())
                .collect();
            let m = match_labels(&scores).unwrap();
            matching_ok &= (m.score - permutation_max(&scores)).abs() < 1e-9;
        }
    }

    let halves = GroundTruth {
        videos: BTreeMap::from([(
            "v".to_string(),
            vec![
                GtSegment {
                    start: 0,
                    end: 5,
                    label: "a".into(),
                },
                GtSegment {
                    start: 5,
                    end: 10,
                    label: "b".into(),
                },
            ],
        )]),
    };
    let single = BTreeMap::from([("v".to_string(), vec![0; 10])]);
    // One predicted segment over both halves: IoU 1/2 with one label, the
    // other label unmatched, mean over two labels 1/4.
    let quarter = iou_cms(&single, &halves, IouMode::Segment).unwrap().value;

    let ok = perfect && matching_ok && quarter == 0.25;
    report(
        "metric sanity",
        ok,
        start,
        format!("permuted perfect = 1: {perfect}, matching = brute force: {matching_ok}, single-step case {quarter}"),
    );
    assert!(ok);
}

fn permutation_max(scores: &[Vec<f64>]) -> f64 {
    fn rec(scores: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == scores.len() {
            return 0.0;
        }
        // Either leave this row unmatched (only allowed while rows outnumber
        // columns) or assign it a free column.
        let free = used.iter().filter(|u| !**u).count();
        let mut best = if scores.len() - row > free {
            rec(scores, row + 1, used)
        } else {
            f64::NEG_INFINITY
        };
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.max(scores[row][c] + rec(scores, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    rec(scores, 0, &mut vec![false; scores[0].len()])
}

fn directory_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            out.insert(
                path.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&path).unwrap(),
            );
        }
    }
    out
}

#[test]
fn criterion_09_pipeline_is_deterministic() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let synth = synthetic_videos(&VideoSynthConfig::default(), 9).unwrap();
    let data = dir.path().join("collection.jsonl");
    let gt = dir.path().join("gt.jsonl");
    write_dataset(&data, &synth.collection).unwrap();
    write_ground_truth(&gt, &synth.ground_truth).unwrap();
    let config = PipelineConfig {
        seed: 9,
        sweeps: 200,
        ..PipelineConfig::default()
    };
    let run = |name: &str| {
        let inputs = PipelineInputs {
            dataset: data.clone(),
            ground_truth: Some(gt.clone()),
            out_dir: dir.path().join(name),
            until: None,
            require_eval: true,
        };
        run_pipeline(&config, &inputs).unwrap();
        directory_bytes(&inputs.out_dir)
    };
    let first = run("first");
    let second = run("second");
    let differing: Vec<&String> = first
        .keys()
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    let ok = !first.is_empty() && first.len() == second.len() && differing.is_empty();
    report(
        "pipeline determinism",
        ok,
        start,
        format!(
            "{} artifacts compared, differing: {differing:?}",
            first.len()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_10_outlier_filter() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let shared = [
        "whisk", "eggs", "pan", "butter", "salt", "fold", "omelette", "heat", "plate", "pepper",
    ];
    let outlier_words = [
        ["tire", "jack", "wrench", "bolt", "wheel"],
        ["guitar", "string", "tune", "peg", "fret"],
    ];
    let mut descriptions: Vec<String> = (0..8)
        .map(|_| {
            (0..8)
                .map(|_| shared[rng.random_range(0..shared.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    for words in outlier_words {
        descriptions.push(
            (0..6)
                .map(|_| words[rng.random_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" "),
        );
    }
    // Interleave the outliers so position carries no signal.
    descriptions.swap(2, 8);
    descriptions.swap(6, 9);
    let lines: Vec<String> = descriptions
        .iter()
        .enumerate()
        .map(|(i, d)| format!(r#"{{"id":"v{i}","description":"{d}","frames":[{{}}]}}"#))
        .collect();
    let collection = read_dataset(lines.join("\n").as_bytes(), &LoadOptions::default()).unwrap();
    let split = filter_outliers(&collection).unwrap();

    let sim = stepparse::joint_cluster::outliers::video_similarity(&collection)
        .unwrap()
        .to_dense();
    let (best, _) = exhaustive_max(&sim);
    let brute: Vec<String> = best.iter().map(|i| format!("v{i}")).collect();
    let expected_out = vec!["v2".to_string(), "v6".to_string()];
    let ok = split.discarded == expected_out && split.kept == brute;
    report(
        "outlier filter",
        ok,
        start,
        format!(
            "discarded {:?}, brute-force kept {:?}",
            split.discarded, brute
        ),
    );
    assert!(ok);
}
