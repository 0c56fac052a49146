//! Bias-detection label sets built from the gap between fair and unfair
//! scores.
//!
//! For a calibrator `c` and a record with score `x` in group `s`, the gap is
//! `d_b = c.transform(x, s) - x`: positive where the projection raised the
//! score (the group was disadvantaged at that score level), negative where it
//! lowered it. With exactly two groups the same gap factors through the
//! cross-group transport map `T(x) = Q_other(F_own(x))`, which also yields a
//! counterfactual score for the record under the other group membership.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::empirical::Sample;
use crate::projection::{FairCalibrator, ProjectionError, ScoreRecord};

/// Slack added to inequality checks so that exact identities survive
/// floating-point evaluation.
pub const BOUND_SLACK: f64 = 1e-12;

pub const DEFAULT_ALPHA: f64 = 0.75;

#[derive(Debug, Error)]
pub enum BiasError {
    #[error("operation needs exactly two groups, calibrator has {0}")]
    NotBinary(usize),
    #[error("record pool is empty")]
    EmptyPool,
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    InvalidAlpha(f64),
    #[error("{records} records but {labels} labels; label the same pool that was scored")]
    LengthMismatch { records: usize, labels: usize },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("failed to write task dataset: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A record scored both ways. `counterfactual` is the transport of the unfair
/// score into the other group's distribution; it is only defined for
/// two-group calibrators.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasRecord {
    pub id: String,
    pub group: String,
    pub unfair_score: f64,
    pub fair_score: f64,
    pub d_b: f64,
    pub counterfactual: Option<f64>,
}

/// Score every record with `c` and attach the fair-minus-unfair gap.
pub fn compute_db(
    c: &FairCalibrator,
    records: &[ScoreRecord],
) -> Result<Vec<BiasRecord>, BiasError> {
    let binary = c.group_count() == 2;
    records
        .iter()
        .map(|r| {
            let fair = c.transform(r.score, &r.group).map_err(|e| match e {
                ProjectionError::UnknownGroup(group) => {
                    ProjectionError::UnknownGroupInRecord { id: r.id.clone(), group }
                }
                other => other,
            })?;
            let counterfactual = if binary {
                Some(transport_counterfactual(c, r.score, &r.group)?)
            } else {
                None
            };
            Ok(BiasRecord {
                id: r.id.clone(),
                group: r.group.clone(),
                unfair_score: r.score,
                fair_score: fair,
                d_b: fair - r.score,
                counterfactual,
            })
        })
        .collect()
}

fn other_group<'c>(c: &'c FairCalibrator, group: &str) -> Result<&'c str, BiasError> {
    if c.group_count() != 2 {
        return Err(BiasError::NotBinary(c.group_count()));
    }
    if c.group(group).is_none() {
        return Err(ProjectionError::UnknownGroup(group.to_string()).into());
    }
    Ok(c.group_labels().find(|g| *g != group).expect("two distinct groups"))
}

/// Transport a score from its own group's distribution into the other
/// group's: `Q_other(F_own(score))`. Two-group calibrators only.
pub fn transport_counterfactual(
    c: &FairCalibrator,
    score: f64,
    group: &str,
) -> Result<f64, BiasError> {
    let other = other_group(c, group)?;
    let v = c.group(group).unwrap().cdf().eval(score);
    Ok(c.group(other)
        .unwrap()
        .sample()
        .quantile()
        .eval(v)
        .expect("CDF levels lie in [0, 1]"))
}

/// Largest deviation, over the given records, between the two routes to the
/// gap: `d_b` via the barycenter transform versus
/// `weight_other * (counterfactual - score)` via the transport map. The two
/// agree to rounding error at calibration sample points.
pub fn transport_identity_residual(
    c: &FairCalibrator,
    records: &[ScoreRecord],
) -> Result<f64, BiasError> {
    if c.group_count() != 2 {
        return Err(BiasError::NotBinary(c.group_count()));
    }
    let mut worst: f64 = 0.0;
    for r in records {
        let other = other_group(c, &r.group)?;
        let w_other = c.group(other).unwrap().weight();
        let fair = c.transform(r.score, &r.group)?;
        let t = transport_counterfactual(c, r.score, &r.group)?;
        let via_transport = w_other * (t - r.score);
        worst = worst.max(((fair - r.score) - via_transport).abs());
    }
    Ok(worst)
}

/// Which label set to generate from the gaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// `1{d_b >= 0}`: the projection did not lower the score. The complement
    /// marks records whose score the projection strictly lowered.
    Discrimination,
    /// `1{|d_b| >= tau}` with `tau` the alpha-quantile of `|d_b|` over the
    /// pool: records with unusually large gaps in either direction.
    BiasSize,
    /// `1{d_b^2 >= tau}` with `tau` the alpha-quantile of `d_b^2`.
    Outliers,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Quantile level for the threshold tasks.
    pub alpha: f64,
}

impl TaskConfig {
    pub fn new(kind: TaskKind) -> Self {
        TaskConfig { kind, alpha: DEFAULT_ALPHA }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

/// Labels aligned with the record pool they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLabels {
    pub kind: TaskKind,
    pub alpha: f64,
    /// Threshold used by the quantile tasks; `None` for discrimination.
    pub tau: Option<f64>,
    pub labels: Vec<bool>,
}

impl TaskLabels {
    pub fn positive_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&l| l).count() as f64 / self.labels.len() as f64
    }
}

/// Generate the configured label set over the pool. The threshold tasks take
/// `tau` as the empirical alpha-quantile (lower quantile, no interpolation)
/// of the pooled statistic, so raising alpha never adds positives.
pub fn label_tasks(records: &[BiasRecord], cfg: &TaskConfig) -> Result<TaskLabels, BiasError> {
    if records.is_empty() {
        return Err(BiasError::EmptyPool);
    }
    if !cfg.alpha.is_finite() || cfg.alpha <= 0.0 || cfg.alpha >= 1.0 {
        return Err(BiasError::InvalidAlpha(cfg.alpha));
    }
    let (tau, labels) = match cfg.kind {
        TaskKind::Discrimination => {
            (None, records.iter().map(|r| r.d_b >= 0.0).collect())
        }
        TaskKind::BiasSize => {
            let stat: Vec<f64> = records.iter().map(|r| r.d_b.abs()).collect();
            let tau = pool_quantile(&stat, cfg.alpha);
            (Some(tau), stat.iter().map(|&s| s >= tau).collect())
        }
        TaskKind::Outliers => {
            let stat: Vec<f64> = records.iter().map(|r| r.d_b * r.d_b).collect();
            let tau = pool_quantile(&stat, cfg.alpha);
            (Some(tau), stat.iter().map(|&s| s >= tau).collect())
        }
    };
    Ok(TaskLabels { kind: cfg.kind, alpha: cfg.alpha, tau, labels })
}

fn pool_quantile(stat: &[f64], alpha: f64) -> f64 {
    let sample = Sample::new(stat.to_vec()).expect("pool is non-empty and gaps are finite");
    sample.quantile().eval(alpha).expect("alpha validated in (0, 1)")
}

/// Split of the gap for one record under a two-group calibrator, relative to
/// a caller-supplied counterfactual score `score_other` (what the underlying
/// model would output for the same individual in the other group).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasDecomposition {
    /// Transport map output minus `score_other`: bias the model expresses
    /// through the score distributions beyond the explicit output change.
    pub implicit: f64,
    /// `score_other` minus the record's own score: the model's explicit
    /// reaction to changing the group.
    pub explicit: f64,
    /// Whether `|d_b| <= weight_other * (|implicit| + |explicit|)` held
    /// (with [`BOUND_SLACK`]). Guaranteed when the record's score is a
    /// calibration sample point.
    pub bound_ok: bool,
}

pub fn decompose_bias(
    c: &FairCalibrator,
    score: f64,
    score_other: f64,
    group: &str,
) -> Result<BiasDecomposition, BiasError> {
    let other = other_group(c, group)?;
    let w_other = c.group(other).unwrap().weight();
    let t = transport_counterfactual(c, score, group)?;
    let implicit = t - score_other;
    let explicit = score_other - score;
    let d_b = c.transform(score, group)? - score;
    let bound_ok = d_b.abs() <= w_other * (implicit.abs() + explicit.abs()) + BOUND_SLACK;
    Ok(BiasDecomposition { implicit, explicit, bound_ok })
}

/// Write the labeled pool as CSV: `id,group,unfair_score,fair_score,d_b,label`,
/// one row per record in input order. Floats are written in shortest
/// round-trip form.
pub fn export_task_dataset<W: Write>(
    records: &[BiasRecord],
    task: &TaskLabels,
    out: W,
) -> Result<(), BiasError> {
    if records.len() != task.labels.len() {
        return Err(BiasError::LengthMismatch {
            records: records.len(),
            labels: task.labels.len(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "group", "unfair_score", "fair_score", "d_b", "label"])?;
    for (r, &label) in records.iter().zip(&task.labels) {
        w.write_record([
            r.id.as_str(),
            r.group.as_str(),
            &r.unfair_score.to_string(),
            &r.fair_score.to_string(),
            &r.d_b.to_string(),
            if label { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_task_dataset_to_path(
    records: &[BiasRecord],
    task: &TaskLabels,
    path: impl AsRef<Path>,
) -> Result<(), BiasError> {
    let file = std::fs::File::create(path)?;
    export_task_dataset(records, task, file)
}

/// Per-group mean gap, a coarse view of which groups the projection moved up
/// or down.
pub fn mean_gap_by_group(records: &[BiasRecord]) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = sums.entry(r.group.clone()).or_insert((0.0, 0));
        e.0 += r.d_b;
        e.1 += 1;
    }
    sums.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_group_pool() -> Vec<ScoreRecord> {
        vec![
            ScoreRecord::new("a1", 0.1, "A"),
            ScoreRecord::new("a2", 0.3, "A"),
            ScoreRecord::new("a3", 0.5, "A"),
            ScoreRecord::new("b1", 0.5, "B"),
            ScoreRecord::new("b2", 0.7, "B"),
            ScoreRecord::new("b3", 0.9, "B"),
        ]
    }

    fn calibrator() -> FairCalibrator {
        FairCalibrator::fit(&two_group_pool()).unwrap()
    }

    fn record(d_b: f64) -> BiasRecord {
        BiasRecord {
            id: "x".into(),
            group: "A".into(),
            unfair_score: 0.5,
            fair_score: 0.5 + d_b,
            d_b,
            counterfactual: None,
        }
    }

    #[test]
    fn gap_is_fair_minus_unfair() {
        let c = calibrator();
        let out = compute_db(&c, &[ScoreRecord::new("a2", 0.3, "A")]).unwrap();
        assert!((out[0].fair_score - 0.5).abs() < 1e-15);
        assert!((out[0].d_b - 0.2).abs() < 1e-15);
        assert!(out[0].d_b > 0.0, "disadvantaged group's score moves up");
    }

    #[test]
    fn gap_is_zero_for_single_group() {
        let pool = vec![ScoreRecord::new("1", 0.2, "only"), ScoreRecord::new("2", 0.4, "only")];
        let c = FairCalibrator::fit(&pool).unwrap();
        let out = compute_db(&c, &pool).unwrap();
        assert!(out.iter().all(|r| r.d_b == 0.0));
        assert!(out.iter().all(|r| r.counterfactual.is_none()));
    }

    #[test]
    fn gap_is_zero_when_groups_share_a_distribution() {
        let pool = vec![
            ScoreRecord::new("1", 0.2, "A"),
            ScoreRecord::new("2", 0.8, "A"),
            ScoreRecord::new("3", 0.2, "B"),
            ScoreRecord::new("4", 0.8, "B"),
        ];
        let c = FairCalibrator::fit(&pool).unwrap();
        let out = compute_db(&c, &pool).unwrap();
        for r in &out {
            assert!(r.d_b.abs() < 1e-15, "{} moved by {}", r.id, r.d_b);
        }
    }

    #[test]
    fn counterfactual_transports_across_groups() {
        let c = calibrator();
        assert_eq!(transport_counterfactual(&c, 0.3, "A").unwrap(), 0.7);
        assert_eq!(transport_counterfactual(&c, 0.5, "B").unwrap(), 0.1);
        // Transport of a group's own sample hits the other group's sample.
        assert_eq!(transport_counterfactual(&c, 0.5, "A").unwrap(), 0.9);
    }

    #[test]
    fn counterfactual_requires_two_groups() {
        let pool = vec![ScoreRecord::new("1", 0.2, "only")];
        let c = FairCalibrator::fit(&pool).unwrap();
        assert!(matches!(
            transport_counterfactual(&c, 0.2, "only"),
            Err(BiasError::NotBinary(1))
        ));
        let three: Vec<ScoreRecord> = ["A", "B", "C"]
            .iter()
            .enumerate()
            .map(|(i, g)| ScoreRecord::new(format!("{i}"), 0.1 * (i + 1) as f64, *g))
            .collect();
        let c3 = FairCalibrator::fit(&three).unwrap();
        assert!(matches!(
            transport_counterfactual(&c3, 0.1, "A"),
            Err(BiasError::NotBinary(3))
        ));
    }

    #[test]
    fn transport_identity_holds_at_calibration_points() {
        let c = calibrator();
        // By hand at (0.3, A): gap 0.2 equals 0.5 * (T(0.3) - 0.3) = 0.5 * 0.4.
        let one = transport_identity_residual(&c, &[ScoreRecord::new("a2", 0.3, "A")]).unwrap();
        assert!(one <= 1e-12, "residual {one}");
        let all = transport_identity_residual(&c, &two_group_pool()).unwrap();
        assert!(all <= 1e-12, "residual {all}");
    }

    #[test]
    fn discrimination_labels_are_sign_tests() {
        let records = vec![record(-0.1), record(0.0), record(0.2)];
        let t = label_tasks(&records, &TaskConfig::new(TaskKind::Discrimination)).unwrap();
        assert_eq!(t.labels, vec![false, true, true]);
        assert_eq!(t.tau, None);
    }

    #[test]
    fn all_zero_gaps_label_everything_positive() {
        let records = vec![record(0.0), record(0.0)];
        let t = label_tasks(&records, &TaskConfig::new(TaskKind::Discrimination)).unwrap();
        assert_eq!(t.labels, vec![true, true]);
    }

    #[test]
    fn bias_size_thresholds_at_the_alpha_quantile() {
        let records = vec![record(0.1), record(-0.2), record(0.3), record(-0.4)];
        let t = label_tasks(&records, &TaskConfig::new(TaskKind::BiasSize)).unwrap();
        assert_eq!(t.tau, Some(0.3));
        assert_eq!(t.labels, vec![false, false, true, true]);
        assert!((t.positive_fraction() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn outliers_threshold_squared_gaps() {
        let records = vec![record(0.1), record(-0.2), record(0.3), record(-0.4)];
        let t = label_tasks(&records, &TaskConfig::new(TaskKind::Outliers)).unwrap();
        let tau = t.tau.unwrap();
        assert!((tau - 0.09).abs() < 1e-15);
        assert_eq!(t.labels, vec![false, false, true, true]);
    }

    #[test]
    fn quantile_task_positive_fraction_near_one_minus_alpha() {
        let records: Vec<BiasRecord> =
            (0..1000).map(|i| record((i + 1) as f64 * 1e-4)).collect();
        let t = label_tasks(&records, &TaskConfig::new(TaskKind::BiasSize)).unwrap();
        let frac = t.positive_fraction();
        assert!((0.24..=0.26).contains(&frac), "positive fraction {frac}");
    }

    #[test]
    fn raising_alpha_never_adds_positives() {
        let records: Vec<BiasRecord> =
            (0..97).map(|i| record(((i * 37) % 97) as f64 / 97.0 - 0.5)).collect();
        let mut prev: Option<Vec<bool>> = None;
        for alpha in [0.1, 0.25, 0.5, 0.75, 0.9, 0.99] {
            let t = label_tasks(
                &records,
                &TaskConfig::new(TaskKind::BiasSize).with_alpha(alpha),
            )
            .unwrap();
            if let Some(p) = &prev {
                for (was, is) in p.iter().zip(&t.labels) {
                    assert!(!is | was, "a positive appeared as alpha rose");
                }
            }
            prev = Some(t.labels);
        }
    }

    #[test]
    fn label_tasks_validates_inputs() {
        assert!(matches!(
            label_tasks(&[], &TaskConfig::new(TaskKind::Discrimination)),
            Err(BiasError::EmptyPool)
        ));
        let records = vec![record(0.1)];
        for bad in [0.0, 1.0, 1.5, -0.2, f64::NAN] {
            assert!(matches!(
                label_tasks(&records, &TaskConfig::new(TaskKind::BiasSize).with_alpha(bad)),
                Err(BiasError::InvalidAlpha(_))
            ));
        }
    }

    #[test]
    fn decomposition_matches_hand_computation() {
        let c = calibrator();
        let d = decompose_bias(&c, 0.3, 0.6, "A").unwrap();
        assert!((d.explicit - 0.3).abs() < 1e-15);
        assert!((d.implicit - 0.1).abs() < 1e-15);
        assert!(d.bound_ok, "0.2 <= 0.5 * (0.1 + 0.3)");
    }

    #[test]
    fn decomposition_of_identical_groups_is_all_zero() {
        let pool = vec![
            ScoreRecord::new("1", 0.2, "A"),
            ScoreRecord::new("2", 0.8, "A"),
            ScoreRecord::new("3", 0.2, "B"),
            ScoreRecord::new("4", 0.8, "B"),
        ];
        let c = FairCalibrator::fit(&pool).unwrap();
        let d = decompose_bias(&c, 0.2, 0.2, "A").unwrap();
        assert_eq!(d.implicit, 0.0);
        assert_eq!(d.explicit, 0.0);
        assert!(d.bound_ok);
    }

    #[test]
    fn export_writes_header_only_for_empty_pool() {
        let task = TaskLabels {
            kind: TaskKind::Discrimination,
            alpha: DEFAULT_ALPHA,
            tau: None,
            labels: vec![],
        };
        let mut buf = Vec::new();
        export_task_dataset(&[], &task, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "id,group,unfair_score,fair_score,d_b,label\n"
        );
    }

    #[test]
    fn export_round_trips_through_csv() {
        let c = calibrator();
        let records = compute_db(&c, &two_group_pool()).unwrap();
        let task = label_tasks(&records, &TaskConfig::new(TaskKind::Discrimination)).unwrap();
        let mut buf = Vec::new();
        export_task_dataset(&records, &task, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), records.len());
        for (row, rec) in rows.iter().zip(&records) {
            assert_eq!(&row[0], rec.id.as_str());
            assert_eq!(row[2].parse::<f64>().unwrap().to_bits(), rec.unfair_score.to_bits());
            assert_eq!(row[4].parse::<f64>().unwrap().to_bits(), rec.d_b.to_bits());
        }
    }

    #[test]
    fn export_rejects_misaligned_labels() {
        let c = calibrator();
        let records = compute_db(&c, &two_group_pool()).unwrap();
        let task = TaskLabels {
            kind: TaskKind::Discrimination,
            alpha: DEFAULT_ALPHA,
            tau: None,
            labels: vec![true],
        };
        assert!(matches!(
            export_task_dataset(&records, &task, Vec::new()),
            Err(BiasError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn mean_gap_by_group_averages_gaps() {
        let c = calibrator();
        let records = compute_db(&c, &two_group_pool()).unwrap();
        let means = mean_gap_by_group(&records);
        // Mirrored groups move symmetrically.
        assert!((means["A"] + means["B"]).abs() < 1e-15);
        assert!(means["A"] > 0.0);
    }
}
