//! Attentive next-song recommendation, built from scratch: dense 64-bit
//! numerics with a documented deterministic RNG, manually differentiated
//! layers (embeddings, Bi-GRU, additive attention, dense, dropout), the
//! SABR and STABR architectures, Adagrad training, a listening-log data
//! pipeline, POP/SSCF/RNN baselines, and the HitRatio@k evaluation
//! protocol with versioned binary checkpoints.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod params;

pub use error::{Error, Result};
