//! # emofusion
//!
//! Batch toolkit for emotion recognition on video-derived face frames.
//!
//! The pipeline runs in five file-coupled stages, each also exposed as a
//! CLI subcommand:
//!
//! 1. **preprocess**: quality-gated face extraction. Blur filtering,
//!    detection confidence/size gates, padded secondary validation,
//!    224x224 crops and normalized 468-landmark CSVs.
//! 2. **label**: calibrated soft labels from two upstream emotion
//!    scorers. Weighted fusion, neutral penalty, softmax renormalization,
//!    temperature sharpening.
//! 3. **train**: the hybrid CNN+GCN classifier (`fusionnet`) trained
//!    against soft labels with a label-smoothed KL objective, AdamW with
//!    discriminative learning rates, gradient clipping and cosine
//!    warm-restart scheduling.
//! 4. **eval**: per-class precision/recall/F1, accuracy and the
//!    confusion matrix, plus a per-frame prediction CSV.
//! 5. **analyze**: descriptive statistics, label histograms, affect
//!    polarity, ANOVA / Kruskal-Wallis / Tukey HSD, and the report
//!    bundle (CSVs plus quick-look figures).
//!
//! All list-like and batched computations are deterministic for a fixed
//! seed; randomness flows exclusively through seeded ChaCha streams.

pub mod analysis;
pub mod cli;
mod error;
pub mod facegraph;
pub mod fusionnet;
pub mod preprocess;
pub mod softlabel;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
