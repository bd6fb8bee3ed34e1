//! Model benchmarking: toy classifiers, synthetic corruption/perturbation
//! suites, and the robustness metric kernels (ce, CE/mCE, relative mCE,
//! FP/mFP).

pub mod metrics;
pub mod model;
pub mod suites;

pub use metrics::{quality_score, ErrorTable, MetricError, QUALITY_FLOOR};
pub use model::{ModelArch, ModelError, ToyModel};
pub use suites::{
    generate_suites, CleanSuite, CorruptionSuite, PerturbationSuite, Sample, Sequence,
    SuiteConfig, Suites, FRAMES_PER_SEQUENCE, SEVERITIES,
};

use serde::{Deserialize, Serialize};

use crate::crypto::Digest;

/// Everything a benchmark run reports for one model. `ce_per_corruption`
/// holds baseline-normalized CE values; `fp_per_perturbation` holds raw
/// flip rates (mFP carries the baseline normalization).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub ce: f64,
    pub corruption_kinds: Vec<String>,
    pub ce_per_corruption: Vec<f64>,
    pub mce: f64,
    pub relative_mce: f64,
    pub perturbation_kinds: Vec<String>,
    pub fp_per_perturbation: Vec<f64>,
    pub mfp: f64,
    /// Hash of the baseline model used for normalization.
    pub baseline_id: Digest,
}

impl BenchmarkResult {
    pub fn nature_accuracy(&self) -> f64 {
        1.0 - self.ce
    }

    /// Quality scores for pricing: `(q_mCE, q_mFP)`, both in (0, 1].
    pub fn quality_scores(&self) -> (f64, f64) {
        (quality_score(self.mce), quality_score(self.mfp))
    }
}
