//! Training framework for automatic post-editing (APE) at laptop scale.
//!
//! The pipeline mirrors a production APE system end to end, shrunk to sizes
//! where every mechanism can be verified analytically:
//!
//! - [`corpus`]: synthetic (src, mt, pe, mt_ext) quadruples, tokenization,
//!   number-consistency filtering, and staged encoder-input assembly.
//! - [`align`]: deterministic word alignment, Keep/Translate label
//!   generation, POS/NER tagging, and MLM masking.
//! - [`losses`]: cross-entropy, focal, and class-balanced losses with
//!   analytic gradients, plus the per-task loss assignment.
//! - [`dwa`]: Dynamic Weight Average task weighting.
//! - [`model`]: a small encoder-decoder transformer with a task-shared
//!   representation layer, five auxiliary heads, and exact backward passes.
//! - [`metrics`]: TER (no block shifts) and corpus BLEU-4.
//! - [`trainer`]: curriculum stages, the joint multi-task step, AdamW,
//!   checkpointing, and the ablation harness.

pub mod align;
pub mod corpus;
pub mod dwa;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tasks;
pub mod trainer;
