//! No-reference perceptual scoring with antonym prompt pairs.
//!
//! An image embedding is compared against the embeddings of a positive and a
//! negative prompt ("Good photo." / "Bad photo."); a two-way softmax over the
//! cosine similarities yields a score in `(0, 1)`. The same mechanism covers
//! overall quality, fine-grained attributes (brightness, noisiness, ...) and
//! abstract "feel" attributes (happy/sad, ...).
//!
//! Modules:
//! * [`scoring`]: cosine similarity, pair scores, image comparison.
//! * [`backbone`]: checkpoint loading, positional-embedding surgery, encoders.
//! * [`prompts`]: templates, antonym pairs and the attribute registry.
//! * [`metrics`]: SROCC, PLCC, pairwise accuracy.
//! * [`degrade`]: controlled degradations and attribute sweeps.
//! * [`tuner`]: learnable prompt contexts trained against opinion scores.
//! * [`harness`]: manifests, cached batch evaluation, reports and studies.

pub mod backbone;
pub mod degrade;
pub mod error;
pub mod exec;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod prompts;
pub mod scoring;
pub mod tuner;

pub use error::{Error, Result};
pub use exec::Execution;
pub use image::ImageBuffer;
pub use scoring::Embedding;
