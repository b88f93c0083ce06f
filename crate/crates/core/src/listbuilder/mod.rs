//! Engagement-list construction.
//!
//! An [`EngagementIndex`] keeps every positive event twice: items per user
//! (the item-centric view) and users per item (the user-centric view), both
//! in time order per engagement type. List builders query strictly before
//! the target example's timestamp, so a list can never leak the example it
//! feeds or anything later.

pub mod clusters;
pub mod louvain;

use std::collections::HashMap;

use rand::RngExt;

use crate::rng::stream;
use crate::types::{ChannelList, InteractionEvent};

use clusters::ClusterMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Engagement {
    pub timestamp: i64,
    /// The counterpart entity: item in the per-user view, user in the
    /// per-item view.
    pub entity: u64,
}

#[derive(Debug, Clone)]
pub struct EngagementIndex {
    num_tasks: usize,
    by_user: HashMap<u64, Vec<Vec<Engagement>>>,
    by_item: HashMap<u64, Vec<Vec<Engagement>>>,
    user_totals: HashMap<u64, u64>,
}

impl EngagementIndex {
    pub fn new(num_tasks: usize) -> Self {
        assert!(num_tasks >= 1);
        EngagementIndex {
            num_tasks,
            by_user: HashMap::new(),
            by_item: HashMap::new(),
            user_totals: HashMap::new(),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    /// Record a positive event in both views. Negative events are responses,
    /// not engagements, and leave the index untouched. Events must arrive in
    /// log order (non-decreasing timestamps per entity stream).
    pub fn record(&mut self, ev: &InteractionEvent) {
        if ev.label != 1 {
            return;
        }
        let etype = ev.engagement_type as usize;
        assert!(etype < self.num_tasks, "engagement_type out of range");
        let k = self.num_tasks;
        let user_rows =
            self.by_user.entry(ev.user_id).or_insert_with(|| vec![Vec::new(); k]);
        debug_assert!(user_rows[etype].last().is_none_or(|e| e.timestamp <= ev.timestamp));
        user_rows[etype].push(Engagement { timestamp: ev.timestamp, entity: ev.item_id });
        let item_rows =
            self.by_item.entry(ev.item_id).or_insert_with(|| vec![Vec::new(); k]);
        debug_assert!(item_rows[etype].last().is_none_or(|e| e.timestamp <= ev.timestamp));
        item_rows[etype].push(Engagement { timestamp: ev.timestamp, entity: ev.user_id });
        *self.user_totals.entry(ev.user_id).or_insert(0) += 1;
    }

    /// Items the user engaged with strictly before `before`, oldest first.
    pub fn user_history(&self, user: u64, etype: usize, before: i64) -> &[Engagement] {
        history(self.by_user.get(&user), etype, before)
    }

    /// Users who engaged the item strictly before `before`, oldest first.
    pub fn item_history(&self, item: u64, etype: usize, before: i64) -> &[Engagement] {
        history(self.by_item.get(&item), etype, before)
    }

    /// Positive engagements recorded for a user across all types.
    pub fn user_engagement_count(&self, user: u64) -> u64 {
        self.user_totals.get(&user).copied().unwrap_or(0)
    }

    /// (user, count) for every user observed so far.
    pub fn user_counts(&self) -> &HashMap<u64, u64> {
        &self.user_totals
    }
}

fn history(rows: Option<&Vec<Vec<Engagement>>>, etype: usize, before: i64) -> &[Engagement] {
    match rows {
        None => &[],
        Some(rows) => {
            let row = &rows[etype];
            let end = row.partition_point(|e| e.timestamp < before);
            &row[..end]
        }
    }
}

fn to_list(entries: &[Engagement], t: i64, capacity: usize) -> ChannelList {
    let ids = entries.iter().map(|e| e.entity).collect();
    let deltas = entries.iter().map(|e| t - e.timestamp).collect();
    ChannelList::new(ids, deltas, capacity).expect("builder output within capacity")
}

/// Item-centric list: the <= cap most recent items the user engaged before t,
/// in time order (newest last).
pub fn build_ic_list(
    index: &EngagementIndex,
    user: u64,
    etype: usize,
    t: i64,
    cap: usize,
) -> ChannelList {
    let hist = index.user_history(user, etype, t);
    let start = hist.len().saturating_sub(cap);
    to_list(&hist[start..], t, cap)
}

/// User-centric list via uniform sampling. Histories at or under cap pass
/// through whole; longer ones are reservoir-sampled without replacement,
/// resampled per target example from a stream keyed by
/// (seed, item, example ordinal, type) so no single frozen sample biases an
/// item's representation.
pub fn build_uc_sampled_list(
    index: &EngagementIndex,
    item: u64,
    etype: usize,
    t: i64,
    cap: usize,
    seed: u64,
    example_ordinal: u64,
) -> ChannelList {
    let hist = index.item_history(item, etype, t);
    if hist.len() <= cap {
        return to_list(hist, t, cap);
    }
    let mut rng = stream(seed, "uc-reservoir", &[item, example_ordinal, etype as u64]);
    // Algorithm R over history indices.
    let mut picked: Vec<usize> = (0..cap).collect();
    for i in cap..hist.len() {
        let j = rng.random_range(0..=i);
        if j < cap {
            picked[j] = i;
        }
    }
    picked.sort_unstable();
    let entries: Vec<Engagement> = picked.iter().map(|&i| hist[i]).collect();
    to_list(&entries, t, cap)
}

/// User-centric list through a cluster map: engaged users become cluster
/// tokens, consecutive runs of the same token collapse to their earliest
/// occurrence, and the result keeps the cap most recent entries. Unclustered
/// users carry the reserved UNASSIGNED token. Deterministic: no sampling.
pub fn build_uc_clustered_list(
    index: &EngagementIndex,
    map: &ClusterMap,
    item: u64,
    etype: usize,
    t: i64,
    cap: usize,
) -> ChannelList {
    let hist = index.item_history(item, etype, t);
    let mut collapsed: Vec<Engagement> = Vec::new();
    for e in hist {
        let token = map.token_of(e.entity);
        match collapsed.last() {
            Some(last) if last.entity == token => {}
            _ => collapsed.push(Engagement { timestamp: e.timestamp, entity: token }),
        }
    }
    let start = collapsed.len().saturating_sub(cap);
    to_list(&collapsed[start..], t, cap)
}
