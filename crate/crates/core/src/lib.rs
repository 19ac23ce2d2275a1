//! Distributional correctness scoring for open-ended QA.
//!
//! Instead of a single score per (question, candidate-answer) pair, every
//! instance is modeled as a Beta distribution over normalized 1–5 ratings:
//! the mean is expected correctness, the variance is predicted annotator
//! disagreement. The crate covers the full pipeline around that idea:
//!
//! - [`corpus`]: instance/annotation records, rating normalization,
//!   feedback-flag filtering, model-input assembly;
//! - [`beta`]: Beta log-likelihoods, moments, gradients, and per-instance
//!   maximum-likelihood fitting;
//! - [`model`]: a hashed n-gram (or plugged-in) text encoder and MLP head
//!   trained by maximum likelihood over individual ratings;
//! - [`metrics`]: rank correlations, error metrics, Krippendorff's alpha;
//! - [`splits`]: stratified, question-coherent train/dev/test manifests and
//!   system-holdout splits;
//! - [`postprocess`]: variance-gated clamping of near-boundary means;
//! - [`fusion`]: calibration and convex weighting of multiple judges;
//! - [`synth`]: a deterministic synthetic corpus with known signal.
//!
//! Numeric routines are generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the `*64` aliases below fix the common choice.

pub mod beta;
pub mod corpus;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod scalar;
pub mod splits;
pub mod special;
pub mod synth;

pub type BetaParams64 = beta::BetaParams<f64>;
pub type BetaMoments64 = beta::BetaMoments<f64>;
pub type SufficientStats64 = beta::SufficientStats<f64>;
pub type ClampRule64 = postprocess::ClampRule<f64>;
pub type MetricReport64 = metrics::MetricReport<f64>;
pub type FusionModel64 = fusion::FusionModel<f64>;
