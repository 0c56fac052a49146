//! Fairness and accuracy metrics over score samples: two-sample
//! Kolmogorov-Smirnov distance, pairwise unfairness, AUC, squared risk, hard
//! accuracy, and exact 2-Wasserstein distances between empirical
//! distributions. [`audit`] bundles them into a serializable report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::empirical::Sample;
use crate::projection::ScoreRecord;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metric needs at least two groups, got {0}")]
    FewerThanTwoGroups(usize),
    #[error("metric input is empty")]
    EmptyInput,
    #[error("AUC needs both a positive and a negative example")]
    SingleClass,
}

/// Exact sup-distance between the empirical CDFs of two samples. The supremum
/// is attained immediately after a jump, so it suffices to evaluate both CDFs
/// at every merged sample point.
pub fn ks_two_sample(a: &Sample, b: &Sample) -> f64 {
    let (av, bv) = (a.values(), b.values());
    let (na, nb) = (av.len() as f64, bv.len() as f64);
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut sup: f64 = 0.0;
    while ia < av.len() || ib < bv.len() {
        let x = match (av.get(ia), bv.get(ib)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while ia < av.len() && av[ia] <= x {
            ia += 1;
        }
        while ib < bv.len() && bv[ib] <= x {
            ib += 1;
        }
        sup = sup.max((ia as f64 / na - ib as f64 / nb).abs());
    }
    sup
}

/// KS distance for one unordered group pair; `a < b` lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseKs {
    pub a: String,
    pub b: String,
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnfairnessReport {
    /// Largest pairwise KS distance.
    pub max: f64,
    pub pairs: Vec<PairwiseKs>,
}

/// Group scores by label, preserving nothing but the multiset per group.
pub fn group_samples(records: &[ScoreRecord]) -> BTreeMap<String, Sample> {
    let mut by_group: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_group.entry(r.group.clone()).or_default().push(r.score);
    }
    by_group
        .into_iter()
        .map(|(g, v)| {
            let s = Sample::new(v).expect("grouped scores are non-empty");
            (g, s)
        })
        .collect()
}

/// Worst pairwise KS distance between group score distributions, with the
/// full pairwise table. Zero exactly when every group has the same empirical
/// distribution.
pub fn unfairness(groups: &BTreeMap<String, Sample>) -> Result<UnfairnessReport, MetricsError> {
    if groups.len() < 2 {
        return Err(MetricsError::FewerThanTwoGroups(groups.len()));
    }
    let entries: Vec<(&String, &Sample)> = groups.iter().collect();
    let mut pairs = Vec::new();
    let mut max: f64 = 0.0;
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            let ks = ks_two_sample(entries[i].1, entries[j].1);
            max = max.max(ks);
            pairs.push(PairwiseKs { a: entries[i].0.clone(), b: entries[j].0.clone(), ks });
        }
    }
    Ok(UnfairnessReport { max, pairs })
}

/// Probability that a random positive outranks a random negative, counting
/// ties as one half. Rank-sum formulation with average ranks over tie runs,
/// O(n log n).
pub fn auc(scored: &[(f64, bool)]) -> Result<f64, MetricsError> {
    if scored.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n_pos = scored.iter().filter(|(_, y)| *y).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_unstable_by(|&i, &j| scored[i].0.partial_cmp(&scored[j].0).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scored[order[j]].0 == scored[order[i]].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share the average rank.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            if scored[k].1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Mean squared error of the score against the binary outcome.
pub fn squared_risk(scored: &[(f64, bool)]) -> Result<f64, MetricsError> {
    if scored.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let sum: f64 = scored
        .iter()
        .map(|(f, y)| {
            let d = if *y { 1.0 } else { 0.0 } - f;
            d * d
        })
        .sum();
    Ok(sum / scored.len() as f64)
}

/// Accuracy of the thresholded classifier `1{score >= threshold}`.
pub fn hard_accuracy(scored: &[(f64, bool)], threshold: f64) -> Result<f64, MetricsError> {
    if scored.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hits = scored.iter().filter(|(f, y)| (*f >= threshold) == *y).count();
    Ok(hits as f64 / scored.len() as f64)
}

/// 2-Wasserstein distance between the empirical distributions of two samples.
///
/// Equal sizes reduce to the root mean squared difference of sorted values.
/// Otherwise the quantile coupling is integrated exactly over the merged
/// level grid `{i/m} ∪ {j/n}`; levels are compared by cross-multiplication so
/// no breakpoint is ever merged or split by rounding.
pub fn w2_distance(a: &Sample, b: &Sample) -> f64 {
    let (av, bv) = (a.values(), b.values());
    if av.len() == bv.len() {
        let n = av.len() as f64;
        let ss: f64 = av
            .iter()
            .zip(bv)
            .map(|(x, y)| {
                let d = x - y;
                d * d
            })
            .sum();
        return (ss / n).sqrt();
    }
    let (m, n) = (av.len(), bv.len());
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut v_prev = 0.0f64;
    let mut acc = 0.0f64;
    while ia < m && ib < n {
        let la = (ia as u128 + 1) * n as u128;
        let lb = (ib as u128 + 1) * m as u128;
        let (v_next, adv_a, adv_b) = if la < lb {
            ((ia + 1) as f64 / m as f64, true, false)
        } else if lb < la {
            ((ib + 1) as f64 / n as f64, false, true)
        } else {
            ((ia + 1) as f64 / m as f64, true, true)
        };
        let d = av[ia] - bv[ib];
        acc += (v_next - v_prev) * d * d;
        v_prev = v_next;
        if adv_a {
            ia += 1;
        }
        if adv_b {
            ib += 1;
        }
    }
    acc.max(0.0).sqrt()
}

/// W2 distance from each group to the weighted barycenter of all groups.
///
/// The barycenter quantile is constant between merged level breakpoints of
/// all groups, so each integral is an exact finite sum over one sweep of the
/// merged grid.
pub fn w2_to_barycenter(
    groups: &BTreeMap<String, (Sample, f64)>,
) -> BTreeMap<String, f64> {
    let labels: Vec<&String> = groups.keys().collect();
    let samples: Vec<&Sample> = labels.iter().map(|l| &groups[*l].0).collect();
    let weights: Vec<f64> = labels.iter().map(|l| groups[*l].1).collect();
    let k = samples.len();
    let mut idx = vec![0usize; k];
    let mut acc = vec![0.0f64; k];
    let mut v_prev = 0.0f64;
    loop {
        // Next level at which any group's quantile changes segment, compared
        // exactly as fractions (idx + 1) / n.
        let mut best: Option<(u64, u64, f64)> = None; // (num, den, value)
        for (s, sample) in samples.iter().enumerate() {
            if idx[s] >= sample.n() {
                continue;
            }
            let num = idx[s] as u64 + 1;
            let den = sample.n() as u64;
            let smaller = match best {
                None => true,
                Some((bn, bd, _)) => (num as u128) * (bd as u128) < (bn as u128) * (den as u128),
            };
            if smaller {
                best = Some((num, den, num as f64 / den as f64));
            }
        }
        let (num, den, v_next) = match best {
            Some(t) => t,
            None => break,
        };
        let bary: f64 = (0..k).map(|s| weights[s] * samples[s].values()[idx[s]]).sum();
        let dv = v_next - v_prev;
        for s in 0..k {
            let d = samples[s].values()[idx[s]] - bary;
            acc[s] += dv * d * d;
        }
        for (s, sample) in samples.iter().enumerate() {
            if idx[s] < sample.n() {
                let cur = (idx[s] as u128 + 1) * den as u128;
                if cur == (num as u128) * (sample.n() as u128) {
                    idx[s] += 1;
                }
            }
        }
        v_prev = v_next;
    }
    labels
        .into_iter()
        .zip(acc)
        .map(|(l, a)| (l.clone(), a.max(0.0).sqrt()))
        .collect()
}

/// True when no pair is discordant: a strictly larger pre-score never maps to
/// a strictly smaller post-score, and tied pre-scores stay tied. Post-score
/// ties across distinct pre-scores are allowed; held-out points that fall in
/// the same gap of the calibration sample collapse that way.
pub fn rank_preserved(pre_post: &[(f64, f64)]) -> bool {
    let mut pairs = pre_post.to_vec();
    pairs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pairs.windows(2).all(|w| {
        if w[0].0 == w[1].0 {
            w[0].1 == w[1].1
        } else {
            w[0].1 <= w[1].1
        }
    })
}

/// [`rank_preserved`] plus no new ties: distinct pre-scores map to distinct
/// post-scores, i.e. pairwise Kendall concordance is exactly 1. Holds on a
/// calibration pool with distinct within-group scores.
pub fn strictly_rank_preserved(pre_post: &[(f64, f64)]) -> bool {
    let mut pairs = pre_post.to_vec();
    pairs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pairs.windows(2).all(|w| {
        if w[0].0 == w[1].0 {
            w[0].1 == w[1].1
        } else {
            w[0].1 < w[1].1
        }
    })
}

/// Snapshot of fairness and accuracy metrics over one set of score records.
///
/// `unfairness` is `None` when fewer than two groups are present, `auc` when
/// labels are missing or single-class, `risk`/`hard_accuracy` when labels are
/// missing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub unfairness: Option<f64>,
    pub pairwise_ks: Vec<PairwiseKs>,
    pub auc: Option<f64>,
    pub risk: Option<f64>,
    pub hard_accuracy: Option<f64>,
    /// Per-group W2 distance to the frequency-weighted barycenter.
    pub w2: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
}

/// Compute every applicable metric over the records. Accuracy metrics are
/// computed only when every record carries a label.
pub fn audit(records: &[ScoreRecord], threshold: f64) -> AuditReport {
    let samples = group_samples(records);
    let counts: BTreeMap<String, usize> =
        samples.iter().map(|(g, s)| (g.clone(), s.n())).collect();
    let (unfairness_max, pairwise_ks) = match unfairness(&samples) {
        Ok(r) => (Some(r.max), r.pairs),
        Err(_) => (None, Vec::new()),
    };
    let total = records.len() as f64;
    let weighted: BTreeMap<String, (Sample, f64)> = samples
        .into_iter()
        .map(|(g, s)| {
            let w = s.n() as f64 / total;
            (g, (s, w))
        })
        .collect();
    let w2 = if records.is_empty() { BTreeMap::new() } else { w2_to_barycenter(&weighted) };

    let scored: Option<Vec<(f64, bool)>> = records
        .iter()
        .map(|r| r.label.map(|y| (r.score, y)))
        .collect();
    let (auc_v, risk_v, acc_v) = match &scored {
        Some(s) if !s.is_empty() => (
            auc(s).ok(),
            squared_risk(s).ok(),
            hard_accuracy(s, threshold).ok(),
        ),
        _ => (None, None, None),
    };

    AuditReport {
        unfairness: unfairness_max,
        pairwise_ks,
        auc: auc_v,
        risk: risk_v,
        hard_accuracy: acc_v,
        w2,
        counts,
    }
}
