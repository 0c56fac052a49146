//! Empirical distributions over finite samples: exact step CDFs and type-1
//! (lower) quantile functions, both evaluated by binary search in O(log n).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("probability level {0} is outside [0, 1]")]
    LevelOutOfRange(f64),
    #[error("jitter epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
}

/// A non-empty sample of finite reals, sorted ascending at construction.
///
/// Storage is shared, so cloning a `Sample` (or taking [`StepCdf`] /
/// [`StepQuantile`] views of it) is O(1) and concurrent reads are safe.
#[derive(Debug, Clone)]
pub struct Sample {
    values: Arc<[f64]>,
}

impl Sample {
    pub fn new(mut values: Vec<f64>) -> Result<Self, DistError> {
        if values.is_empty() {
            return Err(DistError::EmptySample);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DistError::NonFinite);
        }
        values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Sample { values: values.into() })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// The values, sorted ascending.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn cdf(&self) -> StepCdf {
        StepCdf { sample: self.clone() }
    }

    pub fn quantile(&self) -> StepQuantile {
        StepQuantile { sample: self.clone() }
    }

    /// Fraction of the sample that is <= `u`. Total on the reals: inputs below
    /// the minimum give 0, inputs at or above the maximum give 1.
    pub(crate) fn cdf_value(&self, u: f64) -> f64 {
        let count = self.values.partition_point(|&x| x <= u);
        count as f64 / self.values.len() as f64
    }

    /// Smallest sample value whose CDF level reaches `v`; `v = 0` clamps to
    /// the minimum. Caller guarantees `v` is in [0, 1].
    pub(crate) fn quantile_value(&self, v: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&v));
        let n = self.values.len();
        let nf = n as f64;
        let (mut lo, mut hi) = (0usize, n - 1);
        // The comparison (i + 1)/n >= v uses the same division as cdf_value,
        // so F(u) >= v exactly when u >= Q(v) holds bit-for-bit.
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if (mid + 1) as f64 / nf >= v {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        self.values[lo]
    }

    /// Perturb every value with independent uniform noise on
    /// `(-epsilon, epsilon)`, clamp to [0, 1], and re-sort. Deterministic for
    /// a given `seed`. Breaks ties so that the empirical CDF has no jumps
    /// larger than 1/n.
    pub fn jitter(&self, epsilon: f64, seed: u64) -> Result<Sample, DistError> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(DistError::BadEpsilon(epsilon));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = self
            .values
            .iter()
            .map(|v| (v + rng.gen_range(-epsilon..epsilon)).clamp(0.0, 1.0))
            .collect();
        Sample::new(noisy)
    }
}

/// Empirical CDF of a [`Sample`]: `F(u) = #{x_i <= u} / n`.
#[derive(Debug, Clone)]
pub struct StepCdf {
    sample: Sample,
}

impl StepCdf {
    pub fn eval(&self, u: f64) -> f64 {
        self.sample.cdf_value(u)
    }

    pub fn sample(&self) -> &Sample {
        &self.sample
    }
}

/// Generalized inverse of a [`StepCdf`]: `Q(v) = inf { u : F(u) >= v }`,
/// with `Q(0)` clamped to the sample minimum. Returns sample values exactly;
/// there is no interpolation.
#[derive(Debug, Clone)]
pub struct StepQuantile {
    sample: Sample,
}

impl StepQuantile {
    pub fn eval(&self, v: f64) -> Result<f64, DistError> {
        if !(0.0..=1.0).contains(&v) {
            return Err(DistError::LevelOutOfRange(v));
        }
        Ok(self.sample.quantile_value(v))
    }

    pub fn sample(&self) -> &Sample {
        &self.sample
    }
}
