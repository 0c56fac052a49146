//! Seeded synthetic score pools and a small experiment harness: draw
//! per-group scores, split into calibration and test sets, fit, transform,
//! and audit both sides over repeated runs.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{transport_identity_residual, BiasError};
use crate::metrics::{self, AuditReport};
use crate::projection::{FairCalibrator, ProjectionError, ScoreRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("split leaves group {group:?} without {side} records")]
    DegenerateSplit { group: String, side: &'static str },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Bias(#[from] BiasError),
}

/// Score distribution for one synthetic group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDist {
    Beta { alpha: f64, beta: f64 },
    /// Gaussian draws clamped into [0, 1].
    TruncGaussian { mu: f64, sigma: f64 },
}

impl ScoreDist {
    fn validate(&self) -> Result<(), SynthError> {
        match *self {
            ScoreDist::Beta { alpha, beta } => {
                if !(alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0) {
                    return Err(SynthError::InvalidSpec(format!(
                        "beta parameters must be positive, got ({alpha}, {beta})"
                    )));
                }
            }
            ScoreDist::TruncGaussian { mu, sigma } => {
                if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
                    return Err(SynthError::InvalidSpec(format!(
                        "gaussian needs finite mu and positive sigma, got ({mu}, {sigma})"
                    )));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            ScoreDist::Beta { alpha, beta } => {
                Beta::new(alpha, beta).expect("validated parameters").sample(rng)
            }
            ScoreDist::TruncGaussian { mu, sigma } => {
                Normal::new(mu, sigma).expect("validated parameters").sample(rng).clamp(0.0, 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    pub dist: ScoreDist,
    pub size: usize,
}

/// A full synthetic pool: one block of draws per group, in spec order, from a
/// single seeded stream. `labels` adds Bernoulli(score) outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub labels: bool,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if self.groups.is_empty() {
            return Err(SynthError::InvalidSpec("no groups".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for g in &self.groups {
            if g.size == 0 {
                return Err(SynthError::InvalidSpec(format!(
                    "group {:?} has size 0",
                    g.label
                )));
            }
            if !seen.insert(&g.label) {
                return Err(SynthError::InvalidSpec(format!(
                    "duplicate group label {:?}",
                    g.label
                )));
            }
            g.dist.validate()?;
        }
        Ok(())
    }
}

/// Draw the pool described by `spec`. Identical spec (seed included) gives an
/// identical pool.
pub fn generate(spec: &SynthSpec) -> Result<Vec<ScoreRecord>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total: usize = spec.groups.iter().map(|g| g.size).sum();
    let mut out = Vec::with_capacity(total);
    for g in &spec.groups {
        for i in 0..g.size {
            let score = g.dist.sample(&mut rng);
            let mut r = ScoreRecord::new(format!("{}-{:06}", g.label, i), score, g.label.clone());
            if spec.labels {
                r.label = Some(rng.gen_bool(score.clamp(0.0, 1.0)));
            }
            out.push(r);
        }
    }
    Ok(out)
}

/// Fractions of each group's block used for calibration and held-out test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub calib: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    /// 16% calibration, 20% test: the remainder of the pool is reserved for
    /// whoever trains the underlying model and is not consumed here.
    fn default() -> Self {
        SplitFractions { calib: 0.16, test: 0.20 }
    }
}

impl SplitFractions {
    fn validate(&self) -> Result<(), SynthError> {
        let ok = self.calib.is_finite()
            && self.test.is_finite()
            && self.calib > 0.0
            && self.test > 0.0
            && self.calib + self.test <= 1.0 + 1e-12;
        if !ok {
            return Err(SynthError::InvalidSpec(format!(
                "split fractions must be positive and sum to at most 1, got calib={} test={}",
                self.calib, self.test
            )));
        }
        Ok(())
    }
}

/// One repetition: audits of the held-out test split before and after the
/// transform, plus calibration-split unfairness and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub seed: u64,
    pub pre: AuditReport,
    pub post: AuditReport,
    pub calib_pre_unfairness: Option<f64>,
    pub calib_post_unfairness: Option<f64>,
    /// Per group: did the transform preserve the test-split score ordering?
    pub rank_preserved: BTreeMap<String, bool>,
    /// Worst gap between the barycenter and transport routes over the
    /// calibration points; only defined for two-group runs.
    pub transport_identity_residual: Option<f64>,
    pub fit_transform_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; `None` for a single repetition.
    pub sd: Option<f64>,
}

fn mean_sd(values: &[f64]) -> MeanSd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        None
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        Some(var.sqrt())
    };
    MeanSd { mean, sd }
}

fn summarize(runs: &[ExperimentRun], get: impl Fn(&ExperimentRun) -> Option<f64>) -> Option<MeanSd> {
    let values: Option<Vec<f64>> = runs.iter().map(get).collect();
    values.map(|v| mean_sd(&v))
}

/// Aggregated results over all repetitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub repetitions: usize,
    pub split: SplitFractions,
    pub runs: Vec<ExperimentRun>,
    pub pre_unfairness: Option<MeanSd>,
    pub post_unfairness: Option<MeanSd>,
    pub pre_auc: Option<MeanSd>,
    pub post_auc: Option<MeanSd>,
    pub pre_risk: Option<MeanSd>,
    pub post_risk: Option<MeanSd>,
    pub fit_transform_ms: MeanSd,
}

/// Run `repetitions` independent draws (seeds `spec.seed + r`), each fitting
/// on its calibration split and auditing the held-out test split before and
/// after the transform. Everything except the timing fields is a pure
/// function of the spec, split, and repetition count.
pub fn run_experiment(
    spec: &SynthSpec,
    split: SplitFractions,
    repetitions: usize,
) -> Result<ExperimentSummary, SynthError> {
    spec.validate()?;
    split.validate()?;
    if repetitions == 0 {
        return Err(SynthError::InvalidSpec("repetitions must be at least 1".into()));
    }
    let mut runs = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let seed = spec.seed.wrapping_add(rep as u64);
        let mut rep_spec = spec.clone();
        rep_spec.seed = seed;
        let pool = generate(&rep_spec)?;

        let mut calib = Vec::new();
        let mut test = Vec::new();
        let mut offset = 0;
        for g in &spec.groups {
            let block = &pool[offset..offset + g.size];
            offset += g.size;
            let n_calib = (split.calib * g.size as f64).floor() as usize;
            let n_test = (split.test * g.size as f64).floor() as usize;
            if n_calib == 0 {
                return Err(SynthError::DegenerateSplit {
                    group: g.label.clone(),
                    side: "calibration",
                });
            }
            if n_test == 0 {
                return Err(SynthError::DegenerateSplit { group: g.label.clone(), side: "test" });
            }
            calib.extend_from_slice(&block[..n_calib]);
            test.extend_from_slice(&block[n_calib..n_calib + n_test]);
        }

        let started = Instant::now();
        let calibrator = FairCalibrator::fit(&calib)?;
        let test_fair = calibrator.transform_batch(&test)?;
        let calib_fair = calibrator.transform_batch(&calib)?;
        let fit_transform_ms = started.elapsed().as_secs_f64() * 1e3;

        let with_scores = |records: &[ScoreRecord], scores: &[f64]| -> Vec<ScoreRecord> {
            records
                .iter()
                .zip(scores)
                .map(|(r, &s)| {
                    let mut out = r.clone();
                    out.score = s;
                    out
                })
                .collect()
        };
        let test_post = with_scores(&test, &test_fair);
        let calib_post = with_scores(&calib, &calib_fair);

        let pre = metrics::audit(&test, 0.5);
        let post = metrics::audit(&test_post, 0.5);
        let calib_pre_unfairness =
            metrics::unfairness(&metrics::group_samples(&calib)).ok().map(|r| r.max);
        let calib_post_unfairness =
            metrics::unfairness(&metrics::group_samples(&calib_post)).ok().map(|r| r.max);

        let mut rank_preserved = BTreeMap::new();
        for g in &spec.groups {
            let pairs: Vec<(f64, f64)> = test
                .iter()
                .zip(&test_fair)
                .filter(|(r, _)| r.group == g.label)
                .map(|(r, &f)| (r.score, f))
                .collect();
            rank_preserved.insert(g.label.clone(), metrics::rank_preserved(&pairs));
        }

        let residual = if calibrator.group_count() == 2 {
            Some(transport_identity_residual(&calibrator, &calib)?)
        } else {
            None
        };

        runs.push(ExperimentRun {
            seed,
            pre,
            post,
            calib_pre_unfairness,
            calib_post_unfairness,
            rank_preserved,
            transport_identity_residual: residual,
            fit_transform_ms,
        });
    }

    let fit_transform_ms =
        mean_sd(&runs.iter().map(|r| r.fit_transform_ms).collect::<Vec<_>>());
    Ok(ExperimentSummary {
        repetitions,
        split,
        pre_unfairness: summarize(&runs, |r| r.pre.unfairness),
        post_unfairness: summarize(&runs, |r| r.post.unfairness),
        pre_auc: summarize(&runs, |r| r.pre.auc),
        post_auc: summarize(&runs, |r| r.post.auc),
        pre_risk: summarize(&runs, |r| r.pre.risk),
        post_risk: summarize(&runs, |r| r.post.risk),
        fit_transform_ms,
        runs,
    })
}
