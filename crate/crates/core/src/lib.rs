//! Move-structure annotation of research-article abstracts.
//!
//! The crate covers the whole offline pipeline:
//!
//! * [`corpus`]: labels, spans and the doccano JSON-Lines interchange format,
//! * [`ingest`]: bibliography/tabular import and sentence segmentation,
//! * [`classifier`]: a small transformer encoder with eight one-vs-rest move heads,
//! * [`saliency`]: occlusion saliency and its bucketization into an input channel,
//! * [`stats`] and [`eval`]: corpus tables and precision/recall/F1 reporting,
//! * [`review`]: the human-in-the-loop task store behind the review service, and model
//!   versioning with a promotion gate,
//! * [`palette`]: fixed label colours, [`synthetic`]: seeded toy corpora.

pub mod classifier;
pub mod corpus;
pub mod eval;
pub mod ingest;
pub mod palette;
pub mod review;
pub mod saliency;
pub mod stats;
pub mod synthetic;

pub use corpus::{
    AbstractId, AnnotatedAbstract, Annotation, LabelSet, MoveLabel, Provenance, Sentence, Span,
    Status,
};
