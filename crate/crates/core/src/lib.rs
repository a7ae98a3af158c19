//! Learn per-utterance quality impact scores from conversation-level ratings.
//!
//! A conversation is a sequence of utterance embeddings. Each model variant
//! predicts a rating `r` and an importance weight `w` for every utterance and
//! aggregates them into a conversation quality `q = Σ r w / Σ w`, trained only
//! against conversation ratings. The per-utterance product `s = r·w` is the
//! impact score used to surface problematic turns.
//!
//! * [`autodiff`] – small reverse-mode differentiation engine
//! * [`model`] – the `ara`, `ara-o`, `ara-a` and `nara` variants
//! * [`training`] – Adam, mini-batches, dev-set early stopping
//! * [`evaluation`] – Pearson, C-Index, pair accuracy, Cohen's kappa
//! * [`sampling`] – model-led review pairs for human judges
//! * [`data`] – datasets, preprocessing, embedding files, synthetic data

pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
