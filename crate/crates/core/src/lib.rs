//! Desk-scale training and evaluation engine for dyadic-response ranking.
//!
//! A dyadic log of (user, item, timestamp, engagement type, binary response)
//! events is ranked under three formulations: item-centric (users represented
//! by lists of items they engaged), user-centric (items represented by lists
//! of users who engaged them), and a hybrid carrying both sides. Models hash
//! entity IDs into fixed embedding tables, pool engagement lists by masked
//! mean or targeted attention, and train day by day in a recurrent protocol
//! that always evaluates on the head of the next, unseen day.
//!
//! Everything downstream of the root seed is deterministic: same log, same
//! config, same seed give bit-identical metric frames.

pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod ingest;
pub mod listbuilder;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod runner;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
