//! Incremental user clustering for cluster-token engagement lists.
//!
//! A `CoEngagementAccumulator` folds each day's positive events into a
//! decayed user-user co-engagement graph. A `ClusterMap` then re-partitions
//! that graph while holding two operational caps:
//!
//! * no cluster ever exceeds `max_cluster_size` members, counting users that
//!   did not appear in the current graph but still hold the cluster ID;
//! * at most `floor(max_remap_ratio * previously_assigned)` existing users
//!   change cluster per update. Users over budget keep their old ID and are
//!   reconsidered on the next update. First-time assignments are free.
//!
//! Cluster IDs are stable across updates through greedy overlap matching, so
//! a cluster that keeps most of its members keeps its embedding row.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::listbuilder::louvain::{louvain, UserGraph};
use crate::types::InteractionEvent;

/// Token contributed to an engagement list by a user with no cluster.
pub const UNASSIGNED_CLUSTER: u64 = u64::MAX;

/// Cluster tokens live in a namespace disjoint from raw user IDs, so a
/// cluster embedding can never alias a user embedding in the same table.
const CLUSTER_TOKEN_TAG: u64 = 1 << 62;

/// Weights below this are dropped after decay to bound accumulator size.
const WEIGHT_FLOOR: f64 = 1e-9;

pub fn cluster_token(cluster_id: u64) -> u64 {
    debug_assert!(cluster_id < CLUSTER_TOKEN_TAG);
    CLUSTER_TOKEN_TAG | cluster_id
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub max_cluster_size: usize,
    pub max_remap_ratio: f64,
    /// Multiplier applied to all accumulated co-engagement weights before a
    /// new day is absorbed.
    pub decay: f64,
    /// Edges lighter than this are excluded from the clustering graph.
    pub min_edge_weight: f64,
    /// Per item and day, only the most recent distinct engagers this many
    /// deep generate co-engagement pairs.
    pub per_item_cap: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            max_cluster_size: 256,
            max_remap_ratio: 0.2,
            decay: 0.5,
            min_edge_weight: 2.0,
            per_item_cap: 512,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InfeasibleClusterConfig(msg.to_string()));
        if self.max_cluster_size == 0 {
            return bad("max_cluster_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.max_remap_ratio) {
            return bad("max_remap_ratio must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.decay) || !self.decay.is_finite() {
            return bad("decay must lie in [0, 1]");
        }
        if !self.min_edge_weight.is_finite() || self.min_edge_weight < 0.0 {
            return bad("min_edge_weight must be finite and non-negative");
        }
        if self.per_item_cap < 2 {
            return bad("per_item_cap below 2 can never form a co-engagement pair");
        }
        Ok(())
    }
}

/// Decayed user-user co-engagement weights, keyed by unordered user pair.
#[derive(Debug, Clone, Default)]
pub struct CoEngagementAccumulator {
    decay: f64,
    per_item_cap: usize,
    weights: HashMap<(u64, u64), f64>,
}

impl CoEngagementAccumulator {
    pub fn new(config: &ClusteringConfig) -> Self {
        CoEngagementAccumulator {
            decay: config.decay,
            per_item_cap: config.per_item_cap,
            weights: HashMap::new(),
        }
    }

    /// Decays existing weights, then adds one unit of weight per unordered
    /// pair of distinct users among each item's most recent engagers.
    pub fn absorb_day(&mut self, events: &[InteractionEvent]) {
        self.weights.retain(|_, w| {
            *w *= self.decay;
            *w >= WEIGHT_FLOOR
        });
        let mut by_item: HashMap<u64, Vec<u64>> = HashMap::new();
        for ev in events {
            if ev.label == 1 {
                by_item.entry(ev.item_id).or_default().push(ev.user_id);
            }
        }
        for engagers in by_item.values() {
            // Walk from most recent, keeping the first sighting of each user.
            let mut kept: Vec<u64> = Vec::new();
            let mut seen: HashSet<u64> = HashSet::new();
            for &u in engagers.iter().rev() {
                if seen.insert(u) {
                    kept.push(u);
                    if kept.len() == self.per_item_cap {
                        break;
                    }
                }
            }
            for i in 0..kept.len() {
                for j in i + 1..kept.len() {
                    let key = (kept[i].min(kept[j]), kept[i].max(kept[j]));
                    *self.weights.entry(key).or_insert(0.0) += 1.0;
                }
            }
        }
    }

    pub fn graph(&self, min_edge_weight: f64) -> UserGraph {
        UserGraph::from_edges(
            self.weights
                .iter()
                .filter(|&(_, &w)| w >= min_edge_weight)
                .map(|(&(a, b), &w)| (a, b, w)),
        )
    }

    pub fn num_pairs(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct UpdateStats {
    pub generation: u64,
    pub users_assigned: usize,
    pub clusters: usize,
    /// Existing users whose cluster changed this update.
    pub remapped: usize,
    pub remap_budget: usize,
    /// Desired changes to existing users held back by budget or size caps.
    pub deferred: usize,
    pub newly_assigned: usize,
    pub largest_cluster: usize,
}

/// Persistent user -> cluster assignment, updated in place from a
/// co-engagement graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMap {
    config: ClusteringConfig,
    assign: HashMap<u64, u64>,
    next_id: u64,
    generation: u64,
}

impl ClusterMap {
    pub fn new(config: ClusteringConfig) -> Result<Self> {
        config.validate()?;
        Ok(ClusterMap { config, assign: HashMap::new(), next_id: 0, generation: 0 })
    }

    pub fn config(&self) -> &ClusteringConfig {
        &self.config
    }

    /// Installs assignments directly, bypassing the update pipeline. Intended
    /// for fixtures and persistence; the caller is responsible for sizes.
    pub fn force_assignments<I: IntoIterator<Item = (u64, u64)>>(&mut self, pairs: I) {
        for (user, cid) in pairs {
            assert!(cid < CLUSTER_TOKEN_TAG, "cluster id collides with token namespace");
            self.assign.insert(user, cid);
            self.next_id = self.next_id.max(cid + 1);
        }
    }

    pub fn cluster_of(&self, user: u64) -> Option<u64> {
        self.assign.get(&user).copied()
    }

    /// Namespaced embedding token for the user's cluster, or
    /// `UNASSIGNED_CLUSTER` when the user has none.
    pub fn token_of(&self, user: u64) -> u64 {
        match self.assign.get(&user) {
            Some(&cid) => cluster_token(cid),
            None => UNASSIGNED_CLUSTER,
        }
    }

    pub fn len(&self) -> usize {
        self.assign.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assign.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn cluster_sizes(&self) -> BTreeMap<u64, usize> {
        let mut sizes = BTreeMap::new();
        for &cid in self.assign.values() {
            *sizes.entry(cid).or_insert(0) += 1;
        }
        sizes
    }

    pub fn assignment(&self) -> &HashMap<u64, u64> {
        &self.assign
    }

    /// Re-partitions against `graph` under the size and remap caps.
    pub fn update(&mut self, graph: &UserGraph) -> Result<UpdateStats> {
        let prev_assigned = self.assign.len();
        let remap_budget =
            (self.config.max_remap_ratio * prev_assigned as f64).floor() as usize;

        // Phase 1: partition, then split anything over the size cap.
        let result = louvain(graph);
        let mut communities: Vec<Vec<u64>> = Vec::new();
        for members in result.communities() {
            split_to_cap(graph, members, self.config.max_cluster_size, &mut communities);
        }
        communities.sort_by_key(|m| m[0]);

        // Phase 2: greedy overlap matching of communities to old cluster IDs.
        let graphed: HashSet<u64> = graph.nodes().iter().copied().collect();
        let mut stale: HashMap<u64, usize> = HashMap::new();
        for (&user, &cid) in &self.assign {
            if !graphed.contains(&user) {
                *stale.entry(cid).or_insert(0) += 1;
            }
        }
        let mut candidates: Vec<(usize, usize, u64)> = Vec::new();
        for (ci, members) in communities.iter().enumerate() {
            let mut overlap: BTreeMap<u64, usize> = BTreeMap::new();
            for user in members {
                if let Some(&old) = self.assign.get(user) {
                    *overlap.entry(old).or_insert(0) += 1;
                }
            }
            for (old, n) in overlap {
                candidates.push((n, ci, old));
            }
        }
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut matched: Vec<Option<u64>> = vec![None; communities.len()];
        let mut taken: HashSet<u64> = HashSet::new();
        for (_, ci, old) in candidates {
            if matched[ci].is_none() && taken.insert(old) {
                matched[ci] = Some(old);
            }
        }

        // Phase 3: desired assignment per graphed user. A matched community
        // may exceed its old cluster's remaining capacity once stale holders
        // are counted; the overflow peels off into fresh clusters.
        let mut desired: Vec<(u64, u64)> = Vec::new();
        let mut fresh_chunks: Vec<Vec<u64>> = Vec::new();
        for (ci, members) in communities.iter().enumerate() {
            match matched[ci] {
                Some(old) => {
                    let capacity =
                        self.config.max_cluster_size.saturating_sub(*stale.get(&old).unwrap_or(&0));
                    let mut ordered: Vec<u64> = members
                        .iter()
                        .copied()
                        .filter(|u| self.assign.get(u) == Some(&old))
                        .collect();
                    ordered.extend(
                        members.iter().copied().filter(|u| self.assign.get(u) != Some(&old)),
                    );
                    for (k, user) in ordered.iter().enumerate() {
                        if k < capacity {
                            desired.push((*user, old));
                        }
                    }
                    let overflow: Vec<u64> = ordered.split_off(capacity.min(ordered.len()));
                    for chunk in overflow.chunks(self.config.max_cluster_size) {
                        fresh_chunks.push(chunk.to_vec());
                    }
                }
                None => fresh_chunks.push(members.clone()),
            }
        }
        for chunk in fresh_chunks {
            let cid = self.next_id;
            self.next_id += 1;
            for user in chunk {
                desired.push((user, cid));
            }
        }

        // Phase 4: apply in ascending user order under both caps. Sizes are
        // tracked over the full map so stale holders keep counting.
        let mut sizes: HashMap<u64, usize> = HashMap::new();
        for &cid in self.assign.values() {
            *sizes.entry(cid).or_insert(0) += 1;
        }
        desired.sort_by_key(|&(user, _)| user);
        let mut remapped = 0usize;
        let mut deferred = 0usize;
        let mut newly_assigned = 0usize;
        for (user, to) in desired {
            let from = self.assign.get(&user).copied();
            if from == Some(to) {
                continue;
            }
            let fits = sizes.get(&to).copied().unwrap_or(0) < self.config.max_cluster_size;
            match from {
                Some(from) => {
                    if remapped < remap_budget && fits {
                        remapped += 1;
                        *sizes.get_mut(&from).unwrap() -= 1;
                        *sizes.entry(to).or_insert(0) += 1;
                        self.assign.insert(user, to);
                    } else {
                        deferred += 1;
                    }
                }
                None => {
                    if fits {
                        newly_assigned += 1;
                        *sizes.entry(to).or_insert(0) += 1;
                        self.assign.insert(user, to);
                    } else {
                        deferred += 1;
                    }
                }
            }
        }
        self.generation += 1;
        let sizes = self.cluster_sizes();
        Ok(UpdateStats {
            generation: self.generation,
            users_assigned: self.assign.len(),
            clusters: sizes.len(),
            remapped,
            remap_budget,
            deferred,
            newly_assigned,
            largest_cluster: sizes.values().copied().max().unwrap_or(0),
        })
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "dyadrank-clusters v1")?;
        writeln!(w, "generation {}", self.generation)?;
        writeln!(w, "next_id {}", self.next_id)?;
        let mut rows: Vec<(u64, u64)> = self.assign.iter().map(|(&u, &c)| (u, c)).collect();
        rows.sort_unstable();
        for (user, cid) in rows {
            writeln!(w, "{user} {cid}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_text(path: &Path, config: ClusteringConfig) -> Result<Self> {
        config.validate()?;
        let bad = |msg: String| Error::Checkpoint(msg);
        let r = BufReader::new(std::fs::File::open(path)?);
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header != "dyadrank-clusters v1" {
            return Err(bad(format!("unrecognized cluster map header {header:?}")));
        }
        let mut field = |name: &str| -> Result<u64> {
            let line = lines.next().transpose()?.unwrap_or_default();
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("expected `{name} <n>`, got {line:?}")))?;
            if key != name {
                return Err(bad(format!("expected field {name}, got {key}")));
            }
            value.parse().map_err(|_| bad(format!("bad {name} value {value:?}")))
        };
        let generation = field("generation")?;
        let next_id = field("next_id")?;
        let mut assign = HashMap::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (u, c) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("bad assignment row {line:?}")))?;
            let user: u64 = u.parse().map_err(|_| bad(format!("bad user id {u:?}")))?;
            let cid: u64 = c.parse().map_err(|_| bad(format!("bad cluster id {c:?}")))?;
            if cid >= CLUSTER_TOKEN_TAG {
                return Err(bad(format!("cluster id {cid} collides with token namespace")));
            }
            if cid >= next_id {
                return Err(bad(format!("cluster id {cid} not below next_id {next_id}")));
            }
            assign.insert(user, cid);
        }
        let map = ClusterMap { config, assign, next_id, generation };
        if let Some((cid, size)) =
            map.cluster_sizes().into_iter().find(|&(_, s)| s > map.config.max_cluster_size)
        {
            return Err(bad(format!(
                "cluster {cid} holds {size} users, over the cap of {}",
                map.config.max_cluster_size
            )));
        }
        Ok(map)
    }
}

/// Splits `members` until every piece is within `cap`: re-partition the
/// induced subgraph, and if it refuses to split (one dense block), fall back
/// to fixed-size chunks in user-ID order.
fn split_to_cap(graph: &UserGraph, members: Vec<u64>, cap: usize, out: &mut Vec<Vec<u64>>) {
    if members.len() <= cap {
        out.push(members);
        return;
    }
    let sub = graph.induced(&members);
    let parts = louvain(&sub).communities();
    if parts.len() <= 1 {
        for chunk in members.chunks(cap) {
            out.push(chunk.to_vec());
        }
        return;
    }
    for part in parts {
        split_to_cap(graph, part, cap, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::listbuilder::louvain::adjusted_rand_index;

    fn clique(nodes: &[u64], w: f64) -> Vec<(u64, u64, f64)> {
        let mut edges = Vec::new();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                edges.push((nodes[i], nodes[j], w));
            }
        }
        edges
    }

    fn config(max_size: usize, ratio: f64) -> ClusteringConfig {
        ClusteringConfig {
            max_cluster_size: max_size,
            max_remap_ratio: ratio,
            ..ClusteringConfig::default()
        }
    }

    #[test]
    fn zero_max_cluster_size_is_rejected() {
        let err = ClusterMap::new(config(0, 0.2)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleClusterConfig(_)));
    }

    #[test]
    fn out_of_range_ratio_is_rejected() {
        assert!(ClusterMap::new(config(8, 1.5)).is_err());
        assert!(ClusterMap::new(config(8, -0.1)).is_err());
    }

    #[test]
    fn fresh_map_matches_plain_partition() {
        let mut edges = clique(&[0, 1, 2, 3], 1.0);
        edges.extend(clique(&[10, 11, 12, 13], 1.0));
        edges.push((3, 10, 1.0));
        let g = UserGraph::from_edges(edges);
        let mut map = ClusterMap::new(config(256, 1.0)).unwrap();
        let stats = map.update(&g).unwrap();
        assert_eq!(stats.newly_assigned, 8);
        assert_eq!(stats.remapped, 0);
        assert_eq!(stats.clusters, 2);
        let plain = louvain(&g).assignment;
        assert!((adjusted_rand_index(map.assignment(), &plain) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_graph_causes_no_remaps() {
        let mut edges = clique(&[0, 1, 2], 1.0);
        edges.extend(clique(&[5, 6, 7], 1.0));
        let g = UserGraph::from_edges(edges);
        let mut map = ClusterMap::new(config(256, 0.5)).unwrap();
        map.update(&g).unwrap();
        let before = map.assignment().clone();
        let stats = map.update(&g).unwrap();
        assert_eq!(stats.remapped, 0);
        assert_eq!(stats.deferred, 0);
        assert_eq!(stats.newly_assigned, 0);
        assert_eq!(map.assignment(), &before);
    }

    #[test]
    fn zero_ratio_freezes_existing_assignments() {
        let mut edges = clique(&[0, 1, 2, 3], 1.0);
        edges.extend(clique(&[4, 5, 6, 7], 1.0));
        let g1 = UserGraph::from_edges(edges);
        let mut map = ClusterMap::new(config(256, 0.0)).unwrap();
        map.update(&g1).unwrap();
        let before = map.assignment().clone();
        // Cross-cutting structure wants to regroup everyone.
        let mut edges = clique(&[0, 1, 4, 5], 3.0);
        edges.extend(clique(&[2, 3, 6, 7], 3.0));
        let g2 = UserGraph::from_edges(edges);
        let stats = map.update(&g2).unwrap();
        assert_eq!(stats.remap_budget, 0);
        assert_eq!(stats.remapped, 0);
        assert_eq!(map.assignment(), &before);
        assert!(stats.deferred > 0);
    }

    #[test]
    fn remap_budget_moves_lowest_user_ids_first() {
        let mut edges = clique(&[0, 1, 2, 3], 1.0);
        edges.extend(clique(&[4, 5, 6, 7], 1.0));
        let mut map = ClusterMap::new(config(256, 0.25)).unwrap();
        map.update(&UserGraph::from_edges(edges)).unwrap();
        let before = map.assignment().clone();
        // Users 2 and 3 now co-engage with the second clique.
        let mut edges = clique(&[0, 1], 4.0);
        edges.extend(clique(&[2, 3, 4, 5, 6, 7], 4.0));
        let stats = map.update(&UserGraph::from_edges(edges)).unwrap();
        // floor(0.25 * 8) = 2, and both movers fit in the budget.
        assert_eq!(stats.remap_budget, 2);
        assert_eq!(stats.remapped, 2);
        assert_eq!(map.cluster_of(2), map.cluster_of(4));
        assert_eq!(map.cluster_of(3), map.cluster_of(4));
        assert_eq!(map.cluster_of(0), before.get(&0).copied());
    }

    #[test]
    fn oversized_community_is_split_under_cap() {
        let nodes: Vec<u64> = (0..12).collect();
        let g = UserGraph::from_edges(clique(&nodes, 1.0));
        let mut map = ClusterMap::new(config(5, 1.0)).unwrap();
        let stats = map.update(&g).unwrap();
        assert_eq!(stats.users_assigned, 12);
        assert!(stats.largest_cluster <= 5);
        assert_eq!(stats.clusters, 3);
        for (_, size) in map.cluster_sizes() {
            assert!(size <= 5);
        }
    }

    #[test]
    fn stale_holders_count_against_capacity() {
        let mut map = ClusterMap::new(config(3, 1.0)).unwrap();
        map.update(&UserGraph::from_edges(clique(&[1, 2, 3], 1.0))).unwrap();
        assert_eq!(map.cluster_sizes().values().copied().max(), Some(3));
        // Users 2 and 3 go quiet; a newcomer co-engages with user 1 only.
        let stats = map.update(&UserGraph::from_edges(vec![(1, 9, 5.0)])).unwrap();
        assert!(stats.largest_cluster <= 3);
        // The full cluster cannot take user 9; they get a fresh cluster.
        assert_eq!(map.cluster_of(1), map.cluster_of(2));
        assert_ne!(map.cluster_of(9), map.cluster_of(1));
        assert!(map.cluster_of(9).is_some());
    }

    #[test]
    fn tokens_are_namespaced_and_unassigned_is_sentinel() {
        let mut map = ClusterMap::new(ClusteringConfig::default()).unwrap();
        map.force_assignments([(5, 0), (6, 3)]);
        assert_eq!(map.token_of(5), (1 << 62) | 0);
        assert_eq!(map.token_of(6), (1 << 62) | 3);
        assert_eq!(map.token_of(7), UNASSIGNED_CLUSTER);
        assert_ne!(map.token_of(5), 5);
    }

    #[test]
    fn text_round_trip_preserves_map() {
        let mut edges = clique(&[2, 4, 6], 1.0);
        edges.extend(clique(&[10, 12, 14], 1.0));
        let mut map = ClusterMap::new(config(64, 0.3)).unwrap();
        map.update(&UserGraph::from_edges(edges)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clusters.txt");
        map.write_text(&path).unwrap();
        let loaded = ClusterMap::read_text(&path, config(64, 0.3)).unwrap();
        assert_eq!(map, loaded);
    }

    #[test]
    fn read_rejects_oversized_clusters() {
        let mut map = ClusterMap::new(config(64, 0.3)).unwrap();
        map.force_assignments((0..10).map(|u| (u, 0)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clusters.txt");
        map.write_text(&path).unwrap();
        let err = ClusterMap::read_text(&path, config(5, 0.3)).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn accumulator_decays_and_caps_per_item() {
        let cfg = ClusteringConfig { decay: 0.5, per_item_cap: 2, ..ClusteringConfig::default() };
        let mut acc = CoEngagementAccumulator::new(&cfg);
        let ev = |user, item, ts| InteractionEvent {
            user_id: user,
            item_id: item,
            timestamp: ts,
            engagement_type: 0,
            label: 1,
        };
        // Three engagers on one item, cap 2: only the two most recent pair.
        acc.absorb_day(&[ev(1, 7, 10), ev(2, 7, 11), ev(3, 7, 12)]);
        assert_eq!(acc.num_pairs(), 1);
        let g = acc.graph(0.5);
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(edges, vec![(2, 3, 1.0)]);
        // Next day the same pair recurs: 1.0 * 0.5 + 1.0.
        acc.absorb_day(&[ev(2, 8, 20), ev(3, 8, 21)]);
        let edges: Vec<_> = acc.graph(0.5).edges().collect();
        assert_eq!(edges, vec![(2, 3, 1.5)]);
        // Negative events never pair.
        let mut neg = ev(4, 9, 30);
        neg.label = 0;
        acc.absorb_day(&[neg, ev(5, 9, 31)]);
        assert_eq!(acc.num_pairs(), 1);
    }
}
