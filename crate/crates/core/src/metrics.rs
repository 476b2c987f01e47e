//! Reconstruction and distribution-level evaluation.
//!
//! Classification metrics look only at the hidden upper-triangle entries of
//! each graph. Rates (AUC, AP, FPR, FNR) are reported as percentages in
//! [`MetricsReport`], and as fractions by the free functions.

use serde::{Deserialize, Serialize};

use crate::error::{PifmError, Result};
use crate::graph::{hidden_entries, AdjacencyState, ObservationMask};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_inputs(op: &'static str, scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(PifmError::dim(
            op,
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.is_empty() {
        return Err(PifmError::UndefinedMetric(format!("{op} of an empty set")));
    }
    if let Some(l) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(PifmError::Range(format!("{op}: label {l} is not binary")));
    }
    Ok(())
}

/// Scores `>= threshold` count as predicted edges.
pub fn confusion_counts(scores: &[f64], labels: &[f64], threshold: f64) -> Result<ConfusionCounts> {
    check_inputs("confusion_counts", scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// False-positive and false-negative rates in percent. A rate whose
/// denominator is empty is NaN and its `*_defined` flag is false.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRates {
    pub fpr: f64,
    pub fnr: f64,
    pub fpr_defined: bool,
    pub fnr_defined: bool,
}

pub fn confusion_rates(scores: &[f64], labels: &[f64]) -> Result<ConfusionRates> {
    confusion_rates_at(scores, labels, DEFAULT_THRESHOLD)
}

pub fn confusion_rates_at(scores: &[f64], labels: &[f64], threshold: f64) -> Result<ConfusionRates> {
    let c = confusion_counts(scores, labels, threshold)?;
    let rate = |num: usize, den: usize| {
        if den == 0 {
            (f64::NAN, false)
        } else {
            (100.0 * num as f64 / den as f64, true)
        }
    };
    let (fpr, fpr_defined) = rate(c.fp, c.fp + c.tn);
    let (fnr, fnr_defined) = rate(c.fn_, c.fn_ + c.tp);
    Ok(ConfusionRates {
        fpr,
        fnr,
        fpr_defined,
        fnr_defined,
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_inputs("auc", scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PifmError::UndefinedMetric(
            "auc needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps every mid-rank an integer.
    let mut twice_rank_sum = 0u128;
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        // ranks k+1..=end share the mid-rank (k + 1 + end) / 2
        let twice_mid = (k + 1 + end) as u128;
        let pos_in_tie = order[k..end].iter().filter(|&&i| labels[i] == 1.0).count() as u128;
        twice_rank_sum += twice_mid * pos_in_tie;
        k = end;
    }
    let p = n_pos as u128;
    // wins + ties/2 = rank_sum - p(p+1)/2, doubled to stay integral
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Step-wise average precision over the ranking by descending score; ties
/// keep index order.
pub fn average_precision(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_inputs("average_precision", scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    if n_pos == 0 {
        return Err(PifmError::UndefinedMetric(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1.0 {
            tp += 1;
            sum += tp as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStatistics {
    pub avg_degree: f64,
    pub triangles: f64,
    pub avg_clustering: f64,
}

/// Per-node triangle counts, `(A³)_vv / 2`.
fn node_triangles(a: &AdjacencyState) -> Vec<usize> {
    let n = a.n();
    let nbrs: Vec<Vec<usize>> = (0..n).map(|i| a.neighbors(i)).collect();
    (0..n)
        .map(|v| {
            let mut t = 0;
            for (x, &u) in nbrs[v].iter().enumerate() {
                for &w in &nbrs[v][x + 1..] {
                    if a.get(u, w) != 0.0 {
                        t += 1;
                    }
                }
            }
            t
        })
        .collect()
}

/// Average degree, triangle count and mean local clustering of a binary graph.
pub fn graph_statistics(a: &AdjacencyState) -> Result<GraphStatistics> {
    if !a.is_binary() {
        return Err(PifmError::Range(
            "graph statistics need a binary graph; threshold first".into(),
        ));
    }
    let n = a.n();
    if n == 0 {
        return Ok(GraphStatistics {
            avg_degree: 0.0,
            triangles: 0.0,
            avg_clustering: 0.0,
        });
    }
    let deg = a.degrees();
    let tri = node_triangles(a);
    let total_tri: usize = tri.iter().sum::<usize>() / 3;
    let clustering: f64 = deg
        .iter()
        .zip(&tri)
        .map(|(&d, &t)| {
            if d < 2.0 {
                0.0
            } else {
                2.0 * t as f64 / (d * (d - 1.0))
            }
        })
        .sum();
    Ok(GraphStatistics {
        avg_degree: deg.iter().sum::<f64>() / n as f64,
        triangles: total_tri as f64,
        avg_clustering: clustering / n as f64,
    })
}

// ---------------------------------------------------------------------------
// MMD
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphStatistic {
    Degree,
    Clustering,
    Triangles,
}

pub const CLUSTERING_BINS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdEstimator {
    Unbiased,
    Biased,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdResult {
    /// Estimate clamped at zero.
    pub value: f64,
    /// Estimate before clamping (the unbiased form can dip below zero).
    pub raw: f64,
    pub bandwidth: f64,
    pub estimator: MmdEstimator,
    pub warning: Option<String>,
}

/// The per-graph descriptor compared by MMD: a normalized degree or
/// clustering histogram, or the triangle count.
pub fn statistic_descriptor(a: &AdjacencyState, stat: GraphStatistic) -> Result<Vec<f64>> {
    if !a.is_binary() {
        return Err(PifmError::Range("MMD statistics need binary graphs".into()));
    }
    let n = a.n();
    match stat {
        GraphStatistic::Degree => {
            let mut h = vec![0.0; n.max(1)];
            for d in a.degrees() {
                h[d as usize] += 1.0;
            }
            normalize(&mut h);
            Ok(h)
        }
        GraphStatistic::Clustering => {
            let deg = a.degrees();
            let tri = node_triangles(a);
            let mut h = vec![0.0; CLUSTERING_BINS];
            for (d, t) in deg.iter().zip(tri) {
                let c = if *d < 2.0 { 0.0 } else { 2.0 * t as f64 / (d * (d - 1.0)) };
                let bin = ((c * CLUSTERING_BINS as f64) as usize).min(CLUSTERING_BINS - 1);
                h[bin] += 1.0;
            }
            normalize(&mut h);
            Ok(h)
        }
        GraphStatistic::Triangles => Ok(vec![graph_statistics(a)?.triangles]),
    }
}

fn normalize(h: &mut [f64]) {
    let s: f64 = h.iter().sum();
    if s > 0.0 {
        h.iter_mut().for_each(|x| *x /= s);
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    (0..len)
        .map(|k| {
            let d = a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0);
            d * d
        })
        .sum()
}

/// Median pairwise distance over the pooled descriptors; falls back to the
/// smallest positive distance, then to 1, when the median is zero.
pub fn median_bandwidth(xs: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..xs.len() {
        for j in (i + 1)..xs.len() {
            d.push(sq_dist(&xs[i], &xs[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    };
    if med > 0.0 {
        med
    } else {
        d.into_iter().find(|&x| x > 0.0).unwrap_or(1.0)
    }
}

/// MMD² between descriptor sets under a Gaussian kernel of the given bandwidth.
pub fn mmd2_descriptors(
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    bandwidth: f64,
    estimator: MmdEstimator,
) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(PifmError::UndefinedMetric("MMD of an empty set".into()));
    }
    let k = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / (2.0 * bandwidth * bandwidth)).exp();
    let within = |s: &[Vec<f64>]| -> f64 {
        let m = s.len() as f64;
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j || estimator == MmdEstimator::Biased {
                    acc += k(&s[i], &s[j]);
                }
            }
        }
        match estimator {
            MmdEstimator::Biased => acc / (m * m),
            MmdEstimator::Unbiased => acc / (m * (m - 1.0)),
        }
    };
    let mut cross = 0.0;
    for a in xs {
        for b in ys {
            cross += k(a, b);
        }
    }
    cross /= (xs.len() * ys.len()) as f64;
    Ok(within(xs) + within(ys) - 2.0 * cross)
}

/// Unbiased MMD² between two graph sets on one statistic, bandwidth from the
/// median heuristic. Singleton sets fall back to the biased estimator.
pub fn mmd2(set_a: &[AdjacencyState], set_b: &[AdjacencyState], stat: GraphStatistic) -> Result<MmdResult> {
    mmd2_with(set_a, set_b, stat, MmdEstimator::Unbiased)
}

pub fn mmd2_with(
    set_a: &[AdjacencyState],
    set_b: &[AdjacencyState],
    stat: GraphStatistic,
    estimator: MmdEstimator,
) -> Result<MmdResult> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(PifmError::UndefinedMetric("MMD of an empty set".into()));
    }
    let xs = set_a
        .iter()
        .map(|g| statistic_descriptor(g, stat))
        .collect::<Result<Vec<_>>>()?;
    let ys = set_b
        .iter()
        .map(|g| statistic_descriptor(g, stat))
        .collect::<Result<Vec<_>>>()?;
    let pooled: Vec<Vec<f64>> = xs.iter().chain(&ys).cloned().collect();
    let bandwidth = median_bandwidth(&pooled);
    let (estimator, warning) = if estimator == MmdEstimator::Unbiased && (xs.len() < 2 || ys.len() < 2) {
        (
            MmdEstimator::Biased,
            Some("singleton set: biased MMD estimator used".to_string()),
        )
    } else {
        (estimator, None)
    };
    let raw = mmd2_descriptors(&xs, &ys, bandwidth, estimator)?;
    Ok(MmdResult {
        value: raw.max(0.0),
        raw,
        bandwidth,
        estimator,
        warning,
    })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> MeanStd {
        if xs.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
        MeanStd { mean: m, std: v.sqrt() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatisticSummary {
    pub avg_degree: MeanStd,
    pub triangles: MeanStd,
    pub avg_clustering: MeanStd,
}

impl StatisticSummary {
    pub fn of(graphs: &[AdjacencyState]) -> Result<Self> {
        let stats = graphs.iter().map(graph_statistics).collect::<Result<Vec<_>>>()?;
        let col = |f: fn(&GraphStatistics) -> f64| MeanStd::of(&stats.iter().map(f).collect::<Vec<_>>());
        Ok(StatisticSummary {
            avg_degree: col(|s| s.avg_degree),
            triangles: col(|s| s.triangles),
            avg_clustering: col(|s| s.avg_clustering),
        })
    }
}

/// One reconstructed graph to be scored.
#[derive(Clone, Debug)]
pub struct Reconstruction<'a> {
    pub prediction: &'a AdjacencyState,
    pub truth: &'a AdjacencyState,
    pub mask: &'a ObservationMask,
}

/// Percent-scale metrics. Macro values average per-graph metrics over the
/// graphs where each is defined; pooled values score all hidden entries at
/// once.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub ap: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub mse: f64,
    pub pooled_auc: f64,
    pub pooled_ap: f64,
    pub pooled_fpr: f64,
    pub pooled_fnr: f64,
    pub graphs: usize,
    pub graphs_with_auc: usize,
    pub threshold: f64,
    pub mmd2: Option<f64>,
    pub mmd2_bandwidth: Option<f64>,
    pub mmd_statistic: Option<GraphStatistic>,
    pub predicted_stats: Option<StatisticSummary>,
    pub truth_stats: Option<StatisticSummary>,
    pub warnings: Vec<String>,
}

fn mean_defined(xs: &[f64]) -> f64 {
    let v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl MetricsReport {
    /// Scores hidden entries of every reconstruction; raw values feed AUC/AP,
    /// `>= threshold` feeds FPR/FNR.
    pub fn from_reconstructions(items: &[Reconstruction<'_>], threshold: f64) -> Result<Self> {
        let mut report = MetricsReport {
            graphs: items.len(),
            threshold,
            ..Default::default()
        };
        let (mut aucs, mut aps, mut fprs, mut fnrs, mut mses) = (vec![], vec![], vec![], vec![], vec![]);
        let (mut all_s, mut all_l) = (vec![], vec![]);
        for (k, r) in items.iter().enumerate() {
            let pred = hidden_entries(r.prediction, r.mask)?;
            let truth = hidden_entries(r.truth, r.mask)?;
            if pred.is_empty() {
                report.warnings.push(format!("graph {k}: empty hidden region"));
                continue;
            }
            let s: Vec<f64> = pred.iter().map(|e| e.2).collect();
            let l: Vec<f64> = truth.iter().map(|e| e.2).collect();
            mses.push(s.iter().zip(&l).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s.len() as f64);
            if let Ok(v) = auc(&s, &l) {
                aucs.push(100.0 * v);
            }
            if let Ok(v) = average_precision(&s, &l) {
                aps.push(100.0 * v);
            }
            let rates = confusion_rates_at(&s, &l, threshold)?;
            fprs.push(rates.fpr);
            fnrs.push(rates.fnr);
            all_s.extend(s);
            all_l.extend(l);
        }
        report.graphs_with_auc = aucs.len();
        report.auc = mean_defined(&aucs);
        report.ap = mean_defined(&aps);
        report.fpr = mean_defined(&fprs);
        report.fnr = mean_defined(&fnrs);
        report.mse = mean_defined(&mses);
        if !all_s.is_empty() {
            report.pooled_auc = auc(&all_s, &all_l).map_or(f64::NAN, |v| 100.0 * v);
            report.pooled_ap = average_precision(&all_s, &all_l).map_or(f64::NAN, |v| 100.0 * v);
            let r = confusion_rates_at(&all_s, &all_l, threshold)?;
            report.pooled_fpr = r.fpr;
            report.pooled_fnr = r.fnr;
        } else {
            report.pooled_auc = f64::NAN;
            report.pooled_ap = f64::NAN;
            report.pooled_fpr = f64::NAN;
            report.pooled_fnr = f64::NAN;
        }
        Ok(report)
    }

    /// Adds MMD² and statistic summaries between thresholded predictions and
    /// ground truth.
    pub fn with_distribution(
        mut self,
        predicted: &[AdjacencyState],
        truth: &[AdjacencyState],
        stat: GraphStatistic,
    ) -> Result<Self> {
        let m = mmd2(predicted, truth, stat)?;
        if let Some(w) = &m.warning {
            self.warnings.push(w.clone());
        }
        self.mmd2 = Some(m.value);
        self.mmd2_bandwidth = Some(m.bandwidth);
        self.mmd_statistic = Some(stat);
        self.predicted_stats = Some(StatisticSummary::of(predicted)?);
        self.truth_stats = Some(StatisticSummary::of(truth)?);
        Ok(self)
    }

    /// Names of headline metrics that are NaN.
    pub fn nan_fields(&self) -> Vec<&'static str> {
        let mut out = vec![];
        for (name, v) in [
            ("auc", self.auc),
            ("ap", self.ap),
            ("fpr", self.fpr),
            ("fnr", self.fnr),
            ("mse", self.mse),
        ] {
            if v.is_nan() {
                out.push(name);
            }
        }
        if self.mmd2.is_some_and(f64::is_nan) {
            out.push("mmd2");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_auc(s: &[f64], l: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] == 1.0 && l[j] == 0.0 {
                    pairs += 1.0;
                    if s[i] > s[j] {
                        wins += 1.0;
                    } else if s[i] == s[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        let l = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(auc(&[0.9, 0.1, 0.8, 0.2], &l).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9, 0.2, 0.8], &l).unwrap(), 0.0);
        assert_eq!(auc(&[0.9, 0.6, 0.4, 0.2], &l).unwrap(), 0.75);
        assert_eq!(brute_auc(&[0.9, 0.6, 0.4, 0.2], &l), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[1.0, 1.0]), Err(PifmError::UndefinedMetric(_))));
        assert!(auc(&[], &[]).is_err());
    }

    #[test]
    fn auc_with_ties_matches_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(2..30);
            let s: Vec<f64> = (0..n).map(|_| (rng.random_range(0..5) as f64) / 4.0).collect();
            let mut l: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
            l[0] = 1.0;
            l[1] = 0.0;
            assert_eq!(auc(&s, &l).unwrap(), brute_auc(&s, &l));
        }
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[1.0, 1.0, 0.0]).unwrap(), 1.0);
        for m in 1..8 {
            let mut s: Vec<f64> = (0..m).map(|k| 1.0 - k as f64 / m as f64).collect();
            let mut l = vec![0.0; m];
            l[m - 1] = 1.0;
            s[m - 1] = -1.0;
            let ap = average_precision(&s, &l).unwrap();
            assert!((ap - 1.0 / m as f64).abs() < 1e-15);
        }
        assert!(average_precision(&[0.3], &[0.0]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let r = confusion_rates(&[0.9, 0.1, 0.7], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!((r.fpr, r.fnr), (0.0, 0.0));
        let r = confusion_rates(&[1.0; 4], &[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!((r.fpr, r.fnr), (100.0, 0.0));
        let r = confusion_rates(&[0.2, 0.9], &[1.0, 1.0]).unwrap();
        assert!(r.fpr.is_nan() && !r.fpr_defined && r.fnr_defined);
        assert!(confusion_rates(&[], &[]).is_err());
        // 0.5 is an edge.
        let c = confusion_counts(&[0.5], &[0.0], 0.5).unwrap();
        assert_eq!(c.fp, 1);
    }

    #[test]
    fn statistics_examples() {
        let k3 = AdjacencyState::complete(3);
        let s = graph_statistics(&k3).unwrap();
        assert_eq!((s.avg_degree, s.triangles, s.avg_clustering), (2.0, 1.0, 1.0));

        // Star with centre 0 and four leaves: degrees (4,1,1,1,1).
        let star = AdjacencyState::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let s = graph_statistics(&star).unwrap();
        assert_eq!((s.avg_degree, s.triangles, s.avg_clustering), (8.0 / 5.0, 0.0, 0.0));

        let e = graph_statistics(&AdjacencyState::empty(6)).unwrap();
        assert_eq!((e.avg_degree, e.triangles, e.avg_clustering), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mmd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set: Vec<AdjacencyState> = (0..6)
            .map(|_| {
                let up: Vec<f64> = (0..28).map(|_| rng.random_range(0..2) as f64).collect();
                AdjacencyState::from_upper(8, &up).unwrap()
            })
            .collect();
        let m = mmd2_with(&set, &set, GraphStatistic::Degree, MmdEstimator::Biased).unwrap();
        assert!(m.raw.abs() < 1e-12);

        let full: Vec<_> = (0..5).map(|_| AdjacencyState::complete(10)).collect();
        let empty: Vec<_> = (0..5).map(|_| AdjacencyState::empty(10)).collect();
        for stat in [GraphStatistic::Degree, GraphStatistic::Clustering, GraphStatistic::Triangles] {
            let m = mmd2(&full, &empty, stat).unwrap();
            assert!(m.value > 0.1, "{stat:?}: {}", m.value);
        }

        let one = mmd2(&full[..1], &empty, GraphStatistic::Degree).unwrap();
        assert_eq!(one.estimator, MmdEstimator::Biased);
        assert!(one.warning.is_some());
        assert!(mmd2(&[], &empty, GraphStatistic::Degree).is_err());
    }

    #[test]
    fn report_percentages() {
        let truth = AdjacencyState::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let pred = truth.clone();
        let xi = ObservationMask::all_hidden(4);
        let r = MetricsReport::from_reconstructions(
            &[Reconstruction {
                prediction: &pred,
                truth: &truth,
                mask: &xi,
            }],
            0.5,
        )
        .unwrap();
        assert_eq!((r.auc, r.ap, r.fpr, r.fnr, r.mse), (100.0, 100.0, 0.0, 0.0, 0.0));
        assert_eq!(r.pooled_auc, 100.0);
        assert!(r.nan_fields().is_empty());
    }
}
