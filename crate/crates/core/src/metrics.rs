//! Unsupervised segmentation metrics with cluster-similarity label matching:
//! predicted step ids are matched one-to-one to ground-truth labels before
//! scoring, separately for each metric.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::GroundTruth;
use crate::error::{Error, Result};

/// One-to-one assignment between predicted steps (rows) and ground-truth
/// labels (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMatching {
    /// `(predicted, truth)` pairs sorted by predicted index.
    pub pairs: Vec<(usize, usize)>,
    pub score: f64,
    pub unmatched_predicted: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
}

impl LabelMatching {
    pub fn truth_for(&self, predicted: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == predicted).map(|p| p.1)
    }

    pub fn predicted_for(&self, truth: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == truth).map(|p| p.0)
    }
}

/// Minimum-cost assignment of every row for `rows ≤ cols`; returns the
/// column of each row.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Best total score over matchings of size `min(rows, cols)` restricted to
/// the given rows and columns.
fn best_total(scores: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let (r, c, transpose) = if rows.len() <= cols.len() {
        (rows, cols, false)
    } else {
        (cols, rows, true)
    };
    let cost: Vec<Vec<f64>> = r
        .iter()
        .map(|&a| {
            c.iter()
                .map(|&b| {
                    -if transpose {
                        scores[b][a]
                    } else {
                        scores[a][b]
                    }
                })
                .collect()
        })
        .collect();
    let assign = hungarian_min(&cost);
    assign
        .iter()
        .enumerate()
        .map(|(x, &y)| {
            if transpose {
                scores[c[y]][r[x]]
            } else {
                scores[r[x]][c[y]]
            }
        })
        .sum()
}

/// Exact maximum-weight one-to-one matching (every row or every column is
/// matched, whichever is fewer). Among optimal matchings the one with the
/// lexicographically smallest `(predicted, truth)` pairs is returned.
pub fn match_labels(scores: &[Vec<f64>]) -> Result<LabelMatching> {
    let p = scores.len();
    let g = scores.first().map_or(0, Vec::len);
    if p == 0 || g == 0 {
        return Err(Error::Empty("score matrix has no rows or columns".into()));
    }
    if scores.iter().any(|r| r.len() != g) {
        return Err(Error::InvalidArgument(
            "score matrix rows have different lengths".into(),
        ));
    }
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "score matrix has non-finite entries".into(),
        ));
    }
    let mut rows: Vec<usize> = (0..p).collect();
    let mut cols: Vec<usize> = (0..g).collect();
    let optimum = best_total(scores, &rows, &cols);
    let scale = scores.iter().flatten().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-9 * scale * p.max(g) as f64;

    let mut pairs = Vec::new();
    let mut fixed = 0.0;
    for a in 0..p {
        rows.retain(|&r| r != a);
        let mut chosen = None;
        for &b in &cols {
            let rest: Vec<usize> = cols.iter().copied().filter(|&c| c != b).collect();
            let total = fixed + scores[a][b] + best_total(scores, &rows, &rest);
            if total >= optimum - tol {
                chosen = Some(b);
                break;
            }
        }
        // Leaving `a` unmatched is only allowed while rows outnumber columns.
        let can_skip = rows.len() >= cols.len();
        match chosen {
            Some(b)
                if !can_skip
                    || fixed + scores[a][b] + best_total(scores, &rows, &without(&cols, b))
                        >= optimum - tol =>
            {
                fixed += scores[a][b];
                cols.retain(|&c| c != b);
                pairs.push((a, b));
            }
            _ => {}
        }
        if cols.is_empty() {
            break;
        }
    }
    let unmatched_predicted = (0..p)
        .filter(|a| !pairs.iter().any(|x| x.0 == *a))
        .collect();
    let unmatched_truth = (0..g)
        .filter(|b| !pairs.iter().any(|x| x.1 == *b))
        .collect();
    Ok(LabelMatching {
        score: pairs.iter().map(|&(a, b)| scores[a][b]).sum(),
        pairs,
        unmatched_predicted,
        unmatched_truth,
    })
}

fn without(v: &[usize], x: usize) -> Vec<usize> {
    v.iter().copied().filter(|&c| c != x).collect()
}

/// How IoU_cms turns the step/label matching into a score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    /// Mean over ground-truth segments of the IoU with the most-overlapping
    /// contiguous run of the matched step in the same video.
    #[default]
    Segment,
    /// Mean over labels of the pooled frame-set IoU with the matched step.
    FrameSet,
}

/// A metric value with the matching that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub value: f64,
    /// `(step id, ground-truth label)` pairs.
    pub matching: Vec<(usize, String)>,
    pub unmatched_labels: Vec<String>,
}

struct Pooled<'a> {
    videos: Vec<&'a str>,
    labels: Vec<String>,
    /// Per evaluated video, per frame label index.
    truth: Vec<Vec<Option<usize>>>,
}

fn pool<'a, T>(predicted: &'a BTreeMap<String, Vec<T>>, gt: &GroundTruth) -> Result<Pooled<'a>> {
    let videos: Vec<&str> = predicted
        .iter()
        .filter(|(id, frames)| gt.videos.contains_key(*id) && !frames.is_empty())
        .map(|(id, _)| id.as_str())
        .collect();
    if videos.is_empty() {
        return Err(Error::Empty(
            "no video has both predictions and ground truth".into(),
        ));
    }
    let mut labels: Vec<String> = videos
        .iter()
        .flat_map(|v| gt.videos[*v].iter().map(|s| s.label.clone()))
        .collect();
    labels.sort();
    labels.dedup();
    if labels.is_empty() {
        return Err(Error::Empty(
            "ground truth has no labels for the evaluated videos".into(),
        ));
    }
    let truth = videos
        .iter()
        .map(|v| {
            gt.frame_labels(v, predicted[*v].len())
                .into_iter()
                .map(|l| {
                    l.map(|l| {
                        labels
                            .binary_search_by(|x| x.as_str().cmp(l))
                            .expect("label collected")
                    })
                })
                .collect()
        })
        .collect();
    Ok(Pooled {
        videos,
        labels,
        truth,
    })
}

fn named(m: &LabelMatching, labels: &[String]) -> (Vec<(usize, String)>, Vec<String>) {
    (
        m.pairs
            .iter()
            .map(|&(k, g)| (k, labels[g].clone()))
            .collect(),
        m.unmatched_truth
            .iter()
            .map(|&g| labels[g].clone())
            .collect(),
    )
}

/// Pooled frame-set IoU between every predicted step and every label.
fn iou_matrix(
    pred: &[&Vec<usize>],
    truth: &[Vec<Option<usize>>],
    steps: usize,
    labels: usize,
) -> Vec<Vec<f64>> {
    let mut inter = vec![vec![0u64; labels]; steps];
    let mut pred_count = vec![0u64; steps];
    let mut truth_count = vec![0u64; labels];
    for (z, t) in pred.iter().zip(truth) {
        for (&k, &g) in z.iter().zip(t) {
            pred_count[k] += 1;
            if let Some(g) = g {
                truth_count[g] += 1;
                inter[k][g] += 1;
            }
        }
    }
    (0..steps)
        .map(|k| {
            (0..labels)
                .map(|g| {
                    let union = pred_count[k] + truth_count[g] - inter[k][g];
                    if union == 0 {
                        0.0
                    } else {
                        inter[k][g] as f64 / union as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Contiguous runs `[start, end)` of step `k` in a path.
fn runs_of(z: &[usize], k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < z.len() {
        if z[t] == k {
            let s = t;
            while t < z.len() && z[t] == k {
                t += 1;
            }
            out.push((s, t));
        } else {
            t += 1;
        }
    }
    out
}

fn interval_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU_cms over videos present in both the prediction and the ground truth.
pub fn iou_cms(
    predicted: &BTreeMap<String, Vec<usize>>,
    gt: &GroundTruth,
    mode: IouMode,
) -> Result<MetricScore> {
    let pooled = pool(predicted, gt)?;
    let pred: Vec<&Vec<usize>> = pooled.videos.iter().map(|v| &predicted[*v]).collect();
    let steps = pred
        .iter()
        .flat_map(|z| z.iter())
        .max()
        .map_or(0, |m| m + 1);
    let matrix = iou_matrix(&pred, &pooled.truth, steps, pooled.labels.len());
    let m = match_labels(&matrix)?;
    let value = match mode {
        IouMode::FrameSet => m.score / pooled.labels.len() as f64,
        IouMode::Segment => {
            let mut total = 0.0;
            let mut count = 0usize;
            for (v, z) in pooled.videos.iter().zip(&pred) {
                for seg in &gt.videos[*v] {
                    if seg.start >= z.len() {
                        continue;
                    }
                    count += 1;
                    let g = pooled
                        .labels
                        .binary_search(&seg.label)
                        .expect("label collected");
                    let Some(k) = m.predicted_for(g) else {
                        continue;
                    };
                    let span = (seg.start, seg.end.min(z.len()));
                    let best = runs_of(z, k)
                        .into_iter()
                        .map(|r| (span.1.min(r.1).saturating_sub(span.0.max(r.0)), r))
                        .filter(|(o, _)| *o > 0)
                        .max_by(|a, b| a.0.cmp(&b.0).then(b.1 .0.cmp(&a.1 .0)));
                    if let Some((_, run)) = best {
                        total += interval_iou(span, run);
                    }
                }
            }
            if count == 0 {
                return Err(Error::Empty(
                    "no ground-truth segment inside the evaluated frames".into(),
                ));
            }
            total / count as f64
        }
    };
    let (matching, unmatched_labels) = named(&m, &pooled.labels);
    Ok(MetricScore {
        value,
        matching,
        unmatched_labels,
    })
}

/// Area under the interpolated precision-recall curve. Frames with equal
/// scores enter the ranking together.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> f64 {
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / total_pos as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for idx in 0..points.len() {
        let interp = points[idx..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (points[idx].0 - prev_recall) * interp;
        prev_recall = points[idx].0;
    }
    ap
}

/// mAP_cms from per-frame step posteriors (`video → frame → step`).
pub fn map_cms(
    posteriors: &BTreeMap<String, Vec<Vec<f64>>>,
    gt: &GroundTruth,
) -> Result<MetricScore> {
    let pooled = pool(posteriors, gt)?;
    let steps = posteriors
        .values()
        .flatten()
        .map(Vec::len)
        .max()
        .ok_or_else(|| Error::Empty("missing posteriors".into()))?;
    if steps == 0
        || pooled
            .videos
            .iter()
            .flat_map(|v| &posteriors[*v])
            .any(|r| r.len() != steps)
    {
        return Err(Error::InvalidArgument(
            "posterior rows must all have one entry per step".into(),
        ));
    }
    let rows: Vec<&Vec<f64>> = pooled.videos.iter().flat_map(|v| &posteriors[*v]).collect();
    let truth: Vec<Option<usize>> = pooled.truth.iter().flatten().copied().collect();
    let labels = pooled.labels.len();
    let matrix: Vec<Vec<f64>> = (0..steps)
        .map(|k| {
            let scores: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            (0..labels)
                .map(|g| {
                    let pos: Vec<bool> = truth.iter().map(|t| *t == Some(g)).collect();
                    average_precision(&scores, &pos)
                })
                .collect()
        })
        .collect();
    let m = match_labels(&matrix)?;
    let (matching, unmatched_labels) = named(&m, &pooled.labels);
    Ok(MetricScore {
        value: m.score / labels as f64,
        matching,
        unmatched_labels,
    })
}

/// Fraction of frames whose predicted step maps to their true label under
/// the best one-to-one matching of steps to labels by frame counts.
pub fn matched_accuracy(predicted: &[Vec<usize>], truth: &[Vec<usize>]) -> Result<f64> {
    let total: usize = truth.iter().map(Vec::len).sum();
    if total == 0
        || predicted.len() != truth.len()
        || predicted.iter().zip(truth).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::InvalidArgument(
            "predicted and true paths must have the same non-zero shape".into(),
        ));
    }
    let p = predicted.iter().flatten().max().map_or(0, |m| m + 1);
    let g = truth.iter().flatten().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0.0; g]; p];
    for (a, b) in predicted.iter().flatten().zip(truth.iter().flatten()) {
        counts[*a][*b] += 1.0;
    }
    Ok(match_labels(&counts)?.score / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: String,
    pub iou: MetricScore,
    pub map: MetricScore,
}

/// Per-category metrics and unweighted means across categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub categories: Vec<CategoryMetrics>,
    pub mean_iou: f64,
    pub mean_map: f64,
}

impl MetricsReport {
    pub fn new(categories: Vec<CategoryMetrics>) -> Self {
        let n = categories.len().max(1) as f64;
        let mean_iou = categories.iter().map(|c| c.iou.value).sum::<f64>() / n;
        let mean_map = categories.iter().map(|c| c.map.value).sum::<f64>() / n;
        MetricsReport {
            categories,
            mean_iou,
            mean_map,
        }
    }

    /// Plain-text table, one row per category plus the mean.
    pub fn to_table(&self) -> String {
        let width = self
            .categories
            .iter()
            .map(|c| c.category.len())
            .max()
            .unwrap_or(0)
            .max(8);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>8}\n",
            "category", "IOU_cms", "mAP_cms"
        );
        for c in &self.categories {
            out.push_str(&format!(
                "{:<width$}  {:>8.4}  {:>8.4}\n",
                c.category, c.iou.value, c.map.value
            ));
        }
        out.push_str(&format!(
            "{:<width$}  {:>8.4}  {:>8.4}\n",
            "mean", self.mean_iou, self.mean_map
        ));
        out
    }
}

/// Evaluate one category.
pub fn evaluate_category(
    category: &str,
    predicted: &BTreeMap<String, Vec<usize>>,
    posteriors: &BTreeMap<String, Vec<Vec<f64>>>,
    gt: &GroundTruth,
    mode: IouMode,
) -> Result<CategoryMetrics> {
    Ok(CategoryMetrics {
        category: category.to_string(),
        iou: iou_cms(predicted, gt, mode)?,
        map: map_cms(posteriors, gt)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GtSegment;
    use proptest::prelude::*;

    fn brute_force(scores: &[Vec<f64>]) -> f64 {
        let p = scores.len();
        let g = scores[0].len();
        fn rec(
            scores: &[Vec<f64>],
            a: usize,
            used: &mut Vec<bool>,
            left: usize,
            need: usize,
        ) -> f64 {
            if need == 0 {
                return 0.0;
            }
            if a == scores.len() {
                return f64::NEG_INFINITY;
            }
            let mut best = if scores.len() - a > need {
                rec(scores, a + 1, used, left, need)
            } else {
                f64::NEG_INFINITY
            };
            for b in 0..used.len() {
                if !used[b] {
                    used[b] = true;
                    best = best.max(scores[a][b] + rec(scores, a + 1, used, left - 1, need - 1));
                    used[b] = false;
                }
            }
            best
        }
        rec(scores, 0, &mut vec![false; g], g, p.min(g))
    }

    #[test]
    fn identity_and_two_by_two() {
        let eye = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let m = match_labels(&eye).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(m.score, 3.0);
        let m = match_labels(&[vec![0.9, 0.1], vec![0.8, 0.2]]).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        assert!((m.score - 1.1).abs() < 1e-12);
    }

    #[test]
    fn extra_predicted_steps_stay_unmatched() {
        let m = match_labels(&[vec![0.1], vec![0.7], vec![0.3]]).unwrap();
        assert_eq!(m.pairs, vec![(1, 0)]);
        assert_eq!(m.unmatched_predicted, vec![0, 2]);
        assert!(match_labels(&[]).is_err());
    }

    #[test]
    fn ties_prefer_lowest_pairs() {
        let m = match_labels(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        let m = match_labels(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
        let m = match_labels(&[vec![0.5], vec![0.5]]).unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
    }

    proptest! {
        #[test]
        fn hungarian_matches_brute_force(
            p in 1usize..6,
            g in 1usize..6,
            seed in proptest::collection::vec(0u8..10, 36),
        ) {
            let scores: Vec<Vec<f64>> = (0..p).map(|a| (0..g).map(|b| f64::from(seed[a * 6 + b]) / 10.0).collect()).collect();
            let m = match_labels(&scores).unwrap();
            prop_assert!((m.score - brute_force(&scores)).abs() < 1e-9);
            prop_assert_eq!(m.pairs.len(), p.min(g));
        }
    }

    fn halves_gt(t: usize) -> GroundTruth {
        let mut videos = BTreeMap::new();
        videos.insert(
            "v".to_string(),
            vec![
                GtSegment {
                    start: 0,
                    end: t / 2,
                    label: "a".into(),
                },
                GtSegment {
                    start: t / 2,
                    end: t,
                    label: "b".into(),
                },
            ],
        );
        GroundTruth { videos }
    }

    #[test]
    fn single_step_against_two_halves() {
        let gt = halves_gt(10);
        let pred = BTreeMap::from([("v".to_string(), vec![0; 10])]);
        let s = iou_cms(&pred, &gt, IouMode::Segment).unwrap();
        assert_eq!(s.value, 0.25);
        assert_eq!(s.unmatched_labels, vec!["b".to_string()]);
    }

    #[test]
    fn permuted_perfect_prediction_scores_one() {
        let gt = halves_gt(10);
        let z: Vec<usize> = (0..10).map(|t| if t < 5 { 3 } else { 1 }).collect();
        let pred = BTreeMap::from([("v".to_string(), z.clone())]);
        assert_eq!(iou_cms(&pred, &gt, IouMode::Segment).unwrap().value, 1.0);
        assert_eq!(iou_cms(&pred, &gt, IouMode::FrameSet).unwrap().value, 1.0);
        let post: Vec<Vec<f64>> = z
            .iter()
            .map(|&k| (0..4).map(|c| f64::from(u8::from(c == k))).collect())
            .collect();
        let posts = BTreeMap::from([("v".to_string(), post)]);
        assert_eq!(map_cms(&posts, &gt).unwrap().value, 1.0);
    }

    #[test]
    fn uniform_posteriors_score_prevalence() {
        let gt = halves_gt(10);
        let posts = BTreeMap::from([("v".to_string(), vec![vec![0.5, 0.5]; 10])]);
        assert!((map_cms(&posts, &gt).unwrap().value - 0.5).abs() < 1e-12);
        assert_eq!(
            average_precision(&[0.2, 0.2, 0.2, 0.2], &[true, false, false, false]),
            0.25
        );
    }

    #[test]
    fn unmatched_label_scores_zero_ap() {
        let mut videos = BTreeMap::new();
        videos.insert(
            "v".to_string(),
            vec![GtSegment {
                start: 0,
                end: 4,
                label: "a".into(),
            }],
        );
        let gt = GroundTruth { videos };
        let posts = BTreeMap::from([("v".to_string(), vec![vec![0.0]; 4])]);
        let s = map_cms(&posts, &gt).unwrap();
        assert_eq!(s.value, 1.0);
        assert_eq!(average_precision(&[0.3; 4], &[false; 4]), 0.0);
    }

    #[test]
    fn no_common_videos_is_error() {
        let gt = halves_gt(4);
        let pred = BTreeMap::from([("w".to_string(), vec![0; 4])]);
        assert!(iou_cms(&pred, &gt, IouMode::Segment).is_err());
        assert!(iou_cms(&pred, &GroundTruth::default(), IouMode::Segment).is_err());
    }

    #[test]
    fn accuracy_after_matching() {
        let acc = matched_accuracy(&[vec![1, 1, 0, 0]], &[vec![0, 0, 1, 0]]).unwrap();
        assert_eq!(acc, 0.75);
    }
}
