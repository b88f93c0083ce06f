//! Data sources: rating-log ingestion and the synthetic dynamic-inventory
//! generator.

pub mod movielens;
pub mod synthetic;
