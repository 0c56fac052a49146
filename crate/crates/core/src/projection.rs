//! Score calibration for demographic parity.
//!
//! A [`FairCalibrator`] is fit on a pool of (score, group) observations. It
//! stores one empirical score distribution per group together with the
//! group's pool frequency. Transforming a score maps it through its own
//! group's CDF and back out through the frequency-weighted average of every
//! group's quantile function (the quantile function of the 1-D Wasserstein
//! barycenter of the group distributions). Within a group the map is
//! monotone, so rankings are preserved, while the transformed distributions
//! of all groups coincide up to the sampling grid.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::empirical::{DistError, Sample, StepCdf, StepQuantile};

/// Version stamp written into persisted calibrator files.
pub const CALIBRATOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("score pool is empty")]
    EmptyPool,
    #[error("group {0:?} has no observations")]
    EmptyGroup(String),
    #[error("record {id:?} has group {group:?} which is not in the declared set")]
    UndeclaredGroup { id: String, group: String },
    #[error("unknown group {0:?}")]
    UnknownGroup(String),
    #[error("record {id:?} has unknown group {group:?}")]
    UnknownGroupInRecord { id: String, group: String },
    #[error("record {id:?} has score {score} outside [0, 1]")]
    InvalidScore { id: String, score: f64 },
    #[error("probability level {0} is outside [0, 1]")]
    LevelOutOfRange(f64),
    #[error("calibrator file has format_version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("calibrator file is invalid: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("calibrator file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One scored observation. `score` must lie in [0, 1]; `label`, when present,
/// is a binary outcome used only by audit metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
    pub group: String,
    pub label: Option<bool>,
}

impl ScoreRecord {
    pub fn new(id: impl Into<String>, score: f64, group: impl Into<String>) -> Self {
        ScoreRecord { id: id.into(), score, group: group.into(), label: None }
    }

    pub fn with_label(mut self, label: bool) -> Self {
        self.label = Some(label);
        self
    }
}

/// Fit-time tie-breaking noise: uniform on `(-epsilon, epsilon)`, clamped to
/// [0, 1]. Group at sorted position `i` uses stream `seed + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterConfig {
    pub epsilon: f64,
    pub seed: u64,
}

/// One group's empirical score distribution plus its pool frequency.
#[derive(Debug, Clone)]
pub struct GroupDistribution {
    sample: Sample,
    weight: f64,
    count: usize,
}

impl GroupDistribution {
    pub fn sample(&self) -> &Sample {
        &self.sample
    }

    pub fn cdf(&self) -> StepCdf {
        self.sample.cdf()
    }

    pub fn quantile(&self) -> StepQuantile {
        self.sample.quantile()
    }

    /// Pool frequency of the group; weights sum to 1 across groups.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Number of pool observations the group contributed.
    pub fn count(&self) -> usize {
        self.count
    }
}

#[derive(Debug, Clone)]
pub struct FairCalibrator {
    groups: BTreeMap<String, GroupDistribution>,
    jitter: Option<JitterConfig>,
}

impl FairCalibrator {
    /// Fit on a non-empty pool. Groups and their weights are taken from the
    /// pool itself.
    pub fn fit(pool: &[ScoreRecord]) -> Result<Self, ProjectionError> {
        Self::fit_with(pool, None)
    }

    /// Fit with optional tie-breaking jitter applied to each group's sample.
    pub fn fit_with(
        pool: &[ScoreRecord],
        jitter: Option<JitterConfig>,
    ) -> Result<Self, ProjectionError> {
        if pool.is_empty() {
            return Err(ProjectionError::EmptyPool);
        }
        let mut by_group: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in pool {
            if !r.score.is_finite() || !(0.0..=1.0).contains(&r.score) {
                return Err(ProjectionError::InvalidScore { id: r.id.clone(), score: r.score });
            }
            by_group.entry(r.group.clone()).or_default().push(r.score);
        }
        let total = pool.len() as f64;
        let mut groups = BTreeMap::new();
        for (rank, (label, scores)) in by_group.into_iter().enumerate() {
            let count = scores.len();
            let mut sample = Sample::new(scores).expect("group scores are non-empty and finite");
            if let Some(cfg) = jitter {
                sample = sample.jitter(cfg.epsilon, cfg.seed.wrapping_add(rank as u64))?;
            }
            let weight = count as f64 / total;
            groups.insert(label, GroupDistribution { sample, weight, count });
        }
        Ok(FairCalibrator { groups, jitter })
    }

    /// Fit against a declared group alphabet: every declared group must be
    /// observed (a zero-observation group has no quantile function) and every
    /// record must belong to a declared group.
    pub fn fit_declared(
        pool: &[ScoreRecord],
        declared: &[String],
        jitter: Option<JitterConfig>,
    ) -> Result<Self, ProjectionError> {
        for r in pool {
            if !declared.contains(&r.group) {
                return Err(ProjectionError::UndeclaredGroup {
                    id: r.id.clone(),
                    group: r.group.clone(),
                });
            }
        }
        for g in declared {
            if !pool.iter().any(|r| &r.group == g) {
                return Err(ProjectionError::EmptyGroup(g.clone()));
            }
        }
        Self::fit_with(pool, jitter)
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Group labels in sorted order.
    pub fn group_labels(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn group(&self, label: &str) -> Option<&GroupDistribution> {
        self.groups.get(label)
    }

    pub fn groups(&self) -> impl Iterator<Item = (&str, &GroupDistribution)> {
        self.groups.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn jitter(&self) -> Option<JitterConfig> {
        self.jitter
    }

    /// Quantile function of the barycenter distribution: the weighted average
    /// of the group quantile functions at level `v`.
    pub fn barycenter_quantile(&self, v: f64) -> Result<f64, ProjectionError> {
        if !(0.0..=1.0).contains(&v) {
            return Err(ProjectionError::LevelOutOfRange(v));
        }
        Ok(self.barycenter_quantile_level(v))
    }

    fn barycenter_quantile_level(&self, v: f64) -> f64 {
        self.groups
            .values()
            .map(|g| g.weight * g.sample.quantile_value(v))
            .sum()
    }

    /// Map one score: evaluate its own group's CDF, then the barycenter
    /// quantile at that level. Pure, and monotone in `score` within a group.
    pub fn transform(&self, score: f64, group: &str) -> Result<f64, ProjectionError> {
        let g = self
            .groups
            .get(group)
            .ok_or_else(|| ProjectionError::UnknownGroup(group.to_string()))?;
        Ok(self.barycenter_quantile_level(g.sample.cdf_value(score)))
    }

    /// Transform records element-wise, preserving order. Fails on the first
    /// record with an unknown group, identifying it.
    pub fn transform_batch(&self, records: &[ScoreRecord]) -> Result<Vec<f64>, ProjectionError> {
        records
            .iter()
            .map(|r| {
                self.transform(r.score, &r.group).map_err(|e| match e {
                    ProjectionError::UnknownGroup(group) => {
                        ProjectionError::UnknownGroupInRecord { id: r.id.clone(), group }
                    }
                    other => other,
                })
            })
            .collect()
    }

    // ── persistence ────────────────────────────────────────────────────

    pub fn to_json(&self) -> String {
        let file = CalibratorFile {
            format_version: CALIBRATOR_FORMAT_VERSION,
            groups: self
                .groups
                .iter()
                .map(|(label, g)| GroupFile {
                    label: label.clone(),
                    weight: g.weight,
                    count: g.count,
                    sorted_scores: g.sample.values().to_vec(),
                })
                .collect(),
            jitter: self.jitter,
        };
        serde_json::to_string(&file).expect("calibrator serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ProjectionError> {
        let file: CalibratorFile = serde_json::from_str(text)?;
        if file.format_version != CALIBRATOR_FORMAT_VERSION {
            return Err(ProjectionError::VersionMismatch {
                found: file.format_version,
                expected: CALIBRATOR_FORMAT_VERSION,
            });
        }
        if file.groups.is_empty() {
            return Err(ProjectionError::Corrupt("no groups".into()));
        }
        let mut groups = BTreeMap::new();
        let mut weight_sum = 0.0;
        for g in file.groups {
            if g.sorted_scores.len() != g.count {
                return Err(ProjectionError::Corrupt(format!(
                    "group {:?} declares count {} but has {} scores",
                    g.label,
                    g.count,
                    g.sorted_scores.len()
                )));
            }
            if g.sorted_scores.is_empty() {
                return Err(ProjectionError::EmptyGroup(g.label));
            }
            if g.sorted_scores.iter().any(|s| !s.is_finite() || !(0.0..=1.0).contains(s)) {
                return Err(ProjectionError::Corrupt(format!(
                    "group {:?} has a score outside [0, 1]",
                    g.label
                )));
            }
            if g.sorted_scores.windows(2).any(|w| w[0] > w[1]) {
                return Err(ProjectionError::Corrupt(format!(
                    "group {:?} scores are not sorted",
                    g.label
                )));
            }
            if !g.weight.is_finite() || g.weight <= 0.0 {
                return Err(ProjectionError::Corrupt(format!(
                    "group {:?} has non-positive weight {}",
                    g.label, g.weight
                )));
            }
            weight_sum += g.weight;
            let sample = Sample::new(g.sorted_scores)?;
            let prev = groups.insert(
                g.label.clone(),
                GroupDistribution { sample, weight: g.weight, count: g.count },
            );
            if prev.is_some() {
                return Err(ProjectionError::Corrupt(format!("duplicate group {:?}", g.label)));
            }
        }
        if (weight_sum - 1.0).abs() > 1e-12 {
            return Err(ProjectionError::Corrupt(format!(
                "group weights sum to {weight_sum}, expected 1"
            )));
        }
        Ok(FairCalibrator { groups, jitter: file.jitter })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProjectionError> {
        let mut text = self.to_json();
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProjectionError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

impl fmt::Display for FairCalibrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "calibrator[")?;
        for (i, (label, g)) in self.groups.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{label}: n={} w={:.4}", g.count, g.weight)?;
        }
        write!(f, "]")
    }
}

// JSON floats are written in shortest form that parses back to the identical
// bit pattern, so save/load round-trips are exact.
#[derive(Serialize, Deserialize)]
struct CalibratorFile {
    format_version: u32,
    groups: Vec<GroupFile>,
    jitter: Option<JitterConfig>,
}

#[derive(Serialize, Deserialize)]
struct GroupFile {
    label: String,
    weight: f64,
    count: usize,
    sorted_scores: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_group_pool() -> Vec<ScoreRecord> {
        vec![
            ScoreRecord::new("a1", 0.1, "A"),
            ScoreRecord::new("a2", 0.3, "A"),
            ScoreRecord::new("a3", 0.5, "A"),
            ScoreRecord::new("b1", 0.5, "B"),
            ScoreRecord::new("b2", 0.7, "B"),
            ScoreRecord::new("b3", 0.9, "B"),
        ]
    }

    /// Independent route to the transformed score: linear-scan CDF, linear-scan
    /// quantiles, explicit weighted sum.
    fn transform_scan(pool: &[ScoreRecord], score: f64, group: &str) -> f64 {
        let groups: std::collections::BTreeSet<&str> =
            pool.iter().map(|r| r.group.as_str()).collect();
        let of = |g: &str| -> Vec<f64> {
            let mut v: Vec<f64> =
                pool.iter().filter(|r| r.group == g).map(|r| r.score).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v
        };
        let own = of(group);
        let v = own.iter().filter(|&&x| x <= score).count() as f64 / own.len() as f64;
        groups
            .iter()
            .map(|&g| {
                let vals = of(g);
                let n = vals.len() as f64;
                let q = vals
                    .iter()
                    .enumerate()
                    .find(|(i, _)| (i + 1) as f64 / n >= v)
                    .map(|(_, &x)| x)
                    .unwrap_or(*vals.last().unwrap());
                (vals.len() as f64 / pool.len() as f64) * q
            })
            .sum()
    }

    #[test]
    fn fit_assigns_pool_frequencies_as_weights() {
        let c = FairCalibrator::fit(&two_group_pool()).unwrap();
        assert_eq!(c.group_count(), 2);
        assert_eq!(c.group("A").unwrap().weight(), 0.5);
        assert_eq!(c.group("B").unwrap().weight(), 0.5);
        assert_eq!(c.group("A").unwrap().count(), 3);
        assert_eq!(c.group("A").unwrap().sample().values(), &[0.1, 0.3, 0.5]);
    }

    #[test]
    fn fit_handles_unbalanced_groups() {
        let pool = vec![
            ScoreRecord::new("1", 0.2, "A"),
            ScoreRecord::new("2", 0.4, "B"),
            ScoreRecord::new("3", 0.6, "B"),
            ScoreRecord::new("4", 0.8, "B"),
        ];
        let c = FairCalibrator::fit(&pool).unwrap();
        assert_eq!(c.group("A").unwrap().weight(), 0.25);
        assert_eq!(c.group("B").unwrap().weight(), 0.75);
    }

    #[test]
    fn fit_rejects_empty_pool_and_bad_scores() {
        assert!(matches!(FairCalibrator::fit(&[]), Err(ProjectionError::EmptyPool)));
        let bad = vec![ScoreRecord::new("x", 1.2, "A")];
        assert!(matches!(
            FairCalibrator::fit(&bad),
            Err(ProjectionError::InvalidScore { .. })
        ));
        let nan = vec![ScoreRecord::new("x", f64::NAN, "A")];
        assert!(FairCalibrator::fit(&nan).is_err());
    }

    #[test]
    fn fit_declared_rejects_unobserved_group() {
        let pool = vec![ScoreRecord::new("1", 0.2, "A")];
        let declared = vec!["A".to_string(), "B".to_string()];
        assert!(matches!(
            FairCalibrator::fit_declared(&pool, &declared, None),
            Err(ProjectionError::EmptyGroup(g)) if g == "B"
        ));
        let undeclared = vec![ScoreRecord::new("1", 0.2, "C")];
        assert!(matches!(
            FairCalibrator::fit_declared(&undeclared, &declared, None),
            Err(ProjectionError::UndeclaredGroup { .. })
        ));
    }

    #[test]
    fn transform_matches_independent_scan() {
        let pool = two_group_pool();
        let c = FairCalibrator::fit(&pool).unwrap();
        let expected = transform_scan(&pool, 0.3, "A");
        assert_eq!(expected, 0.5);
        assert!((c.transform(0.3, "A").unwrap() - 0.5).abs() < 1e-15);
        for probe in [0.0, 0.1, 0.33, 0.5, 0.7, 0.9, 1.0] {
            for g in ["A", "B"] {
                let got = c.transform(probe, g).unwrap();
                assert!((got - transform_scan(&pool, probe, g)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn transform_above_all_scores_maps_to_weighted_maxima() {
        let c = FairCalibrator::fit(&two_group_pool()).unwrap();
        assert!((c.transform(0.95, "A").unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn transform_with_single_group_is_identity_at_sample_points() {
        let pool =
            vec![ScoreRecord::new("1", 0.2, "only"), ScoreRecord::new("2", 0.4, "only")];
        let c = FairCalibrator::fit(&pool).unwrap();
        assert_eq!(c.transform(0.4, "only").unwrap(), 0.4);
        assert_eq!(c.transform(0.2, "only").unwrap(), 0.2);
    }

    #[test]
    fn transform_rejects_unknown_group() {
        let c = FairCalibrator::fit(&two_group_pool()).unwrap();
        assert!(matches!(
            c.transform(0.3, "C"),
            Err(ProjectionError::UnknownGroup(g)) if g == "C"
        ));
    }

    #[test]
    fn barycenter_quantile_averages_group_quantiles() {
        let c = FairCalibrator::fit(&two_group_pool()).unwrap();
        assert!((c.barycenter_quantile(2.0 / 3.0).unwrap() - 0.5).abs() < 1e-15);
        // v = 0 clamps every group to its minimum.
        assert!((c.barycenter_quantile(0.0).unwrap() - 0.3).abs() < 1e-15);
        assert!((c.barycenter_quantile(1.0).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(
            c.barycenter_quantile(1.5),
            Err(ProjectionError::LevelOutOfRange(_))
        ));
    }

    #[test]
    fn transform_batch_preserves_order_and_reports_bad_record() {
        let pool = two_group_pool();
        let c = FairCalibrator::fit(&pool).unwrap();
        let out = c.transform_batch(&pool).unwrap();
        assert_eq!(out.len(), pool.len());
        for (r, &f) in pool.iter().zip(&out) {
            assert_eq!(f, c.transform(r.score, &r.group).unwrap());
        }
        assert!(c.transform_batch(&[]).unwrap().is_empty());

        let mut bad = pool.clone();
        bad[3].group = "Z".into();
        match c.transform_batch(&bad) {
            Err(ProjectionError::UnknownGroupInRecord { id, group }) => {
                assert_eq!(id, "b1");
                assert_eq!(group, "Z");
            }
            other => panic!("expected unknown-group error, got {other:?}"),
        }
    }

    #[test]
    fn transform_stays_within_pool_score_range() {
        let pool = two_group_pool();
        let c = FairCalibrator::fit(&pool).unwrap();
        for probe in [0.0, 0.2, 0.5, 0.8, 1.0] {
            for g in ["A", "B"] {
                let out = c.transform(probe, g).unwrap();
                assert!((0.1..=0.9).contains(&out), "{out} escaped the pool range");
            }
        }
    }

    #[test]
    fn fit_with_jitter_records_config_and_is_deterministic() {
        let pool = two_group_pool();
        let cfg = JitterConfig { epsilon: 1e-9, seed: 11 };
        let a = FairCalibrator::fit_with(&pool, Some(cfg)).unwrap();
        let b = FairCalibrator::fit_with(&pool, Some(cfg)).unwrap();
        assert_eq!(a.jitter(), Some(cfg));
        assert_eq!(
            a.group("A").unwrap().sample().values(),
            b.group("A").unwrap().sample().values()
        );
        // Different groups draw from different streams.
        let ga = a.group("A").unwrap().sample().values().to_vec();
        let gb = a.group("B").unwrap().sample().values().to_vec();
        let shift: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| y - x).collect();
        assert!(shift.windows(2).any(|w| (w[0] - w[1]).abs() > 0.0));
    }

    #[test]
    fn json_round_trip_is_bit_faithful() {
        let pool = two_group_pool();
        let c = FairCalibrator::fit(&pool).unwrap();
        let text = c.to_json();
        let c2 = FairCalibrator::from_json(&text).unwrap();
        assert_eq!(text, c2.to_json());
        for probe in [0.0, 0.123456789, 0.3, 0.5, 0.95, 1.0] {
            for g in ["A", "B"] {
                let x = c.transform(probe, g).unwrap();
                let y = c2.transform(probe, g).unwrap();
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn from_json_rejects_version_mismatch_and_corruption() {
        let c = FairCalibrator::fit(&two_group_pool()).unwrap();
        let v9 = c.to_json().replace("\"format_version\":1", "\"format_version\":9");
        assert!(matches!(
            FairCalibrator::from_json(&v9),
            Err(ProjectionError::VersionMismatch { found: 9, expected: 1 })
        ));

        let unsorted = r#"{"format_version":1,"groups":[{"label":"A","weight":1.0,"count":2,"sorted_scores":[0.5,0.1]}],"jitter":null}"#;
        assert!(matches!(
            FairCalibrator::from_json(unsorted),
            Err(ProjectionError::Corrupt(_))
        ));

        let bad_weights = r#"{"format_version":1,"groups":[{"label":"A","weight":0.7,"count":1,"sorted_scores":[0.5]}],"jitter":null}"#;
        assert!(matches!(
            FairCalibrator::from_json(bad_weights),
            Err(ProjectionError::Corrupt(_))
        ));

        let count_mismatch = r#"{"format_version":1,"groups":[{"label":"A","weight":1.0,"count":3,"sorted_scores":[0.5]}],"jitter":null}"#;
        assert!(matches!(
            FairCalibrator::from_json(count_mismatch),
            Err(ProjectionError::Corrupt(_))
        ));
    }
}
