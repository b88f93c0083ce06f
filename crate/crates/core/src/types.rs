//! Shared value types: events, dataset metadata, engagement lists, and the
//! model configuration. IDs are opaque u64s fixed by a dictionary at
//! ingestion; nothing downstream may read structure out of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type UserId = u64;
pub type ItemId = u64;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// One logged dyadic interaction. `label` is the binary response (1 = the
/// engagement of `engagement_type` happened), so an event is simultaneously
/// a training example and, when positive, a history entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user_id: UserId,
    pub item_id: ItemId,
    /// Epoch seconds.
    pub timestamp: i64,
    /// Channel index in [0, num_tasks).
    pub engagement_type: u16,
    /// 0 or 1.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_tasks: u16,
    /// Strictly increasing edges; day i covers [edge[i], edge[i+1]).
    pub day_boundaries: Vec<i64>,
    pub user_count: u64,
    pub item_count: u64,
}

impl DatasetMeta {
    pub fn num_days(&self) -> usize {
        self.day_boundaries.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 {
            return Err(Error::config("num_tasks must be >= 1"));
        }
        if !self.day_boundaries.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("day boundaries must be strictly increasing"));
        }
        Ok(())
    }
}

/// A pooled-input engagement list. Only valid entries are stored, so masking
/// is structural: position j exists iff j < valid_len() <= capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelList {
    pub entity_ids: Vec<u64>,
    /// target timestamp minus engagement timestamp; strictly positive because
    /// list builders query strictly before the target example.
    pub time_deltas: Vec<i64>,
    pub capacity: usize,
}

impl ChannelList {
    pub fn new(entity_ids: Vec<u64>, time_deltas: Vec<i64>, capacity: usize) -> Result<Self> {
        if entity_ids.len() != time_deltas.len() {
            return Err(Error::config("entity_ids and time_deltas length mismatch"));
        }
        if entity_ids.len() > capacity {
            return Err(Error::config(format!(
                "list length {} exceeds capacity {capacity}",
                entity_ids.len()
            )));
        }
        if time_deltas.iter().any(|&d| d < 0) {
            return Err(Error::config("negative time_delta: entry is not in the past"));
        }
        Ok(ChannelList { entity_ids, time_deltas, capacity })
    }

    pub fn empty(capacity: usize) -> Self {
        ChannelList { entity_ids: Vec::new(), time_deltas: Vec::new(), capacity }
    }

    pub fn valid_len(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    /// Items embedded; a user is the list of items they engaged.
    ItemCentric,
    /// Users embedded; an item is the list of users who engaged it.
    UserCentric,
    /// Both sides present.
    Hybrid,
}

impl Formulation {
    pub fn has_item_side(self) -> bool {
        matches!(self, Formulation::ItemCentric | Formulation::Hybrid)
    }
    pub fn has_user_side(self) -> bool {
        matches!(self, Formulation::UserCentric | Formulation::Hybrid)
    }
}

impl std::fmt::Display for Formulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Formulation::ItemCentric => "ic",
            Formulation::UserCentric => "uc",
            Formulation::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Masked mean over valid entries.
    Sum,
    /// Targeted attention: the target entity embedding is the query.
    Attention,
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Sum => "sum",
            Pooling::Attention => "attention",
        })
    }
}

/// Model hyperparameters. Defaults are desk-scale: small embedding width and
/// table so full runs fit in minutes on one core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub formulation: Formulation,
    pub pooling: Pooling,
    pub embed_dim: usize,
    /// Slots per embedding table; raw IDs are hashed into [0, hash_size).
    pub hash_size: usize,
    pub num_heads: usize,
    pub list_capacity: usize,
    pub num_tasks: usize,
    pub interaction_hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    /// Adds a learned log2-bucketed time-delta encoding to attention keys.
    pub time_encoding: bool,
    pub rng_seed: u64,
    /// Exact distinct-ID sets when true, cardinality sketch otherwise.
    pub exact_id_tracking: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            formulation: Formulation::ItemCentric,
            pooling: Pooling::Attention,
            embed_dim: 32,
            hash_size: 1 << 20,
            num_heads: 1,
            list_capacity: 1024,
            num_tasks: 1,
            interaction_hidden_dims: vec![64, 32],
            learning_rate: 0.05,
            time_encoding: false,
            rng_seed: 42,
            exact_id_tracking: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim must be positive"));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::config(format!(
                "embed_dim {} must be divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.hash_size == 0 {
            return Err(Error::config("hash_size must be positive"));
        }
        if self.list_capacity == 0 {
            return Err(Error::config("list_capacity must be positive"));
        }
        if self.num_tasks == 0 {
            return Err(Error::config("num_tasks must be >= 1"));
        }
        if self.interaction_hidden_dims.is_empty() || self.interaction_hidden_dims.contains(&0) {
            return Err(Error::config("interaction_hidden_dims must be non-empty and positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive and finite"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn head_divisibility_enforced() {
        let cfg = ModelConfig { embed_dim: 30, num_heads: 4, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { embed_dim: 32, num_heads: 4, ..ModelConfig::default() };
        cfg.validate().unwrap();
    }

    #[test]
    fn channel_list_rejects_overflow_and_negative_deltas() {
        assert!(ChannelList::new(vec![1, 2, 3], vec![5, 4, 3], 2).is_err());
        assert!(ChannelList::new(vec![1], vec![-1], 4).is_err());
        let l = ChannelList::new(vec![1, 2], vec![9, 1], 4).unwrap();
        assert_eq!(l.valid_len(), 2);
        assert!(ChannelList::empty(4).is_empty());
    }

    #[test]
    fn meta_rejects_unsorted_boundaries() {
        let meta = DatasetMeta {
            num_tasks: 1,
            day_boundaries: vec![0, 86_400, 86_400],
            user_count: 0,
            item_count: 0,
        };
        assert!(meta.validate().is_err());
    }
}
