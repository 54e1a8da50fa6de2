//! Weld-seam quality assurance core.
//!
//! Stages, in pipeline order:
//!
//! 1. [`scan`] / [`pgm`]: 16-bit intensity scans and their PGM carrier.
//! 2. [`synth`]: seeded synthetic scans with defect and interference modes.
//! 3. [`preprocess`]: normalization, gamma, 8-bit conversion, bicubic resize.
//! 4. [`dataset`]: flip augmentation and balanced, scan-exclusive splits.
//! 5. [`nn`]: compact CNN, training and inference.
//! 6. [`metrics`]: confusion matrices, accuracy/TPR/TNR/PPV and run averages.

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pgm;
pub mod preprocess;
pub mod scan;
pub mod synth;

pub use error::{Error, Result};
pub use scan::{
    Augmentation, CommitteeRecord, ConsensusRule, Grid, ProcessedImage, RawScan, ResizeMode, ScanSource, Verdict,
    INPUT_SIDE,
};
