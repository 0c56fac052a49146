//! Post-processing for demographic parity in scored classification.
//!
//! Given a pool of classifier scores tagged with a sensitive group, a
//! [`FairCalibrator`] learns each group's empirical score distribution and
//! maps every score through its group's CDF into the frequency-weighted
//! average of all group quantile functions. That average is the quantile
//! function of the 1-D Wasserstein barycenter of the group distributions, the
//! closest common target in mean squared score movement, so the transformed
//! score distributions of all groups coincide up to sampling resolution while
//! within-group rankings are preserved.
//!
//! The crate also ships:
//!
//! - [`empirical`]: exact step CDFs and lower quantile functions;
//! - [`metrics`]: KS unfairness, AUC, squared risk, hard accuracy, and exact
//!   2-Wasserstein distances, bundled by [`metrics::audit`];
//! - [`bias`]: per-record fair-minus-unfair gaps, cross-group transport
//!   counterfactuals, and derived bias-detection label sets;
//! - [`synth`]: seeded synthetic pools and a repeated fit/transform/audit
//!   experiment harness.
//!
//! ```
//! use fairport::{FairCalibrator, ScoreRecord};
//!
//! let pool = vec![
//!     ScoreRecord::new("a1", 0.1, "A"),
//!     ScoreRecord::new("a2", 0.3, "A"),
//!     ScoreRecord::new("a3", 0.5, "A"),
//!     ScoreRecord::new("b1", 0.5, "B"),
//!     ScoreRecord::new("b2", 0.7, "B"),
//!     ScoreRecord::new("b3", 0.9, "B"),
//! ];
//! let calibrator = FairCalibrator::fit(&pool)?;
//! let fair = calibrator.transform(0.3, "A")?;
//! assert!((fair - 0.5).abs() < 1e-12);
//! # Ok::<(), fairport::ProjectionError>(())
//! ```

pub mod bias;
pub mod empirical;
pub mod metrics;
pub mod projection;
pub mod synth;

pub use bias::{BiasError, BiasRecord, TaskConfig, TaskKind, TaskLabels};
pub use empirical::{DistError, Sample, StepCdf, StepQuantile};
pub use metrics::{AuditReport, MetricsError};
pub use projection::{
    FairCalibrator, GroupDistribution, JitterConfig, ProjectionError, ScoreRecord,
};
pub use synth::{
    ExperimentRun, ExperimentSummary, GroupSpec, ScoreDist, SplitFractions, SynthError, SynthSpec,
};
