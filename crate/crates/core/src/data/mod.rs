//! Corpus generation, vocabulary and on-disk formats.

pub mod dgrf;
pub mod sample;
pub mod sidecar;
pub mod synthetic;
pub mod vocab;

pub use dgrf::{read_dgrf, read_dgrf_file, write_dgrf, write_dgrf_file, FeatureRecord, DGRF_MAGIC, DGRF_VERSION};
pub use sample::{assign_splits, select, SceneSample, Split};
pub use sidecar::{load_corpus, load_region_features, read_sidecar, save_corpus, write_sidecar, CaptionEntry};
pub use synthetic::{caption_matches_scene, generate_corpus, generate_corpus_with_objects, parse_caption, SceneObject, SyntheticSpec};
pub use vocab::Vocabulary;
