//! Manifest ingestion, training-tuple construction, augmentation and
//! synthetic fixtures.

mod corpus;
mod corrupt;
mod fixture;
mod manifest;
mod tuple;

pub use corpus::{image_files, load_noise_pool, ClipMedia, Corpus, MediaConfig};
pub use corrupt::{corrupt_rois, CorruptionSpec, FaceTrackInput};
pub use fixture::{make_synthetic_fixture, make_synthetic_fixture_with, FixtureInfo, FixtureOptions};
pub use manifest::{load_manifest, write_manifest, Manifest, ManifestEntry};
pub use tuple::{add_enhancement_noise, sample_training_tuple, CorruptionLimits, TrainingTuple, TupleOptions, TupleOrigin};
