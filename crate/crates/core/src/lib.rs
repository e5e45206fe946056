//! Self-verification and confidence calibration for multimodal question
//! answering.
//!
//! An answer from a multimodal model is decomposed into atomic yes/no
//! questions, each question is paraphrased, the model answers every
//! paraphrase, and the answer ensemble yields a calibrated answer with a
//! confidence score. A text-only model then rewrites the original answer
//! against the calibrated facts. Evaluation metrics and the statistical
//! diagnostics used to study answer variance live alongside the pipeline.

pub mod answer;
pub mod cli;
pub mod confidence;
pub mod fixtures;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod querygen;
pub mod refinement;
pub mod reformulation;
pub mod stats;
pub mod verification;

pub use answer::{Answer, YesNo};
