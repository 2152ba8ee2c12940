//! Comorbidity prediction as implicit-feedback recommendation.
//!
//! Subjects play the role of users and ICD-9 diagnosis codes the role of
//! items. Two models are provided:
//!
//! * [`models::NcfModel`]: neural collaborative filtering. Subject and code
//!   embeddings are concatenated and passed through a dense tower ending in a
//!   sigmoid.
//! * [`models::DhfModel`]: deep hybrid filtering. A third embedding for a
//!   symptom or medication term extracted from the subject's clinical notes
//!   joins the concatenation.
//!
//! The pipeline runs from MIMIC-shaped CSV tables ([`ingest`]) through term
//! extraction ([`notes_nlp`]), negative example generation and splitting
//! ([`sampling`]), training with handwritten backpropagation ([`neuralnet`],
//! [`models`]) and evaluation ([`metrics`]). [`synthetic`] generates planted
//! cluster data for experiments without credentialed data access, and
//! [`pipeline`] wires everything into the runs the CLI exposes.

pub mod data;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod models;
pub mod neuralnet;
pub mod notes_nlp;
pub mod pipeline;
pub mod sampling;
pub mod synthetic;

pub use data::{Encoder, Interaction, InteractionSet};
pub use error::{Error, Result};
