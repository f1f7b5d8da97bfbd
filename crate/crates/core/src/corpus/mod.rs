//! Synthetic sprite-video corpus: deterministic text-reference-video triplets
//! with ground-truth masks and motion scripts.

pub mod grammar;
pub mod manifest;
pub mod motion;
pub mod sprites;
pub mod triplet;

pub use grammar::{StructuredCaption, SubjectSlot};
pub use manifest::{corpus_hash, load_corpus, load_manifest, load_sample, write_corpus, CorpusManifest, SampleEntry};
pub use motion::{MotionEntry, MotionKind, MotionScript};
pub use sprites::{ColorName, Shape, Texture};
pub use triplet::{generate_triplet, mask_centroid, render_caption, Arity, CorpusSpec, ElementSet, ElementTag, SubjectRef, Triplet};

/// Frame count used by the full-scale system this artifact miniaturizes.
/// Documented for reference; the toy default is [`CorpusSpec::default`]'s 16.
pub const FULL_SCALE_FRAME_COUNT: usize = 81;
