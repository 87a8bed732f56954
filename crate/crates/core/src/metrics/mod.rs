//! Separation quality, intelligibility and cross-modal verification metrics.

mod bss;
mod stoi;
mod verify;

pub use bss::{bss_eval, db_ratio, BssMetrics, DB_CAP};
pub use stoi::{resample, stoi};
pub use verify::{verification_from_scores, verification_scores, VerificationReport};
