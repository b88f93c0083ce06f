//! Community detection on weighted co-engagement graphs.
//!
//! Classic two-phase scheme: greedy local moves to the neighbor community
//! with the highest modularity gain (ties broken toward the lowest community
//! ID), then aggregation of communities into supernodes, repeated until the
//! modularity gain of a whole level is <= 1e-9. Node order is fixed and no
//! randomness is involved, so results are a pure function of the graph.

use std::collections::{BTreeMap, HashMap};

pub const MODULARITY_GAIN_EPS: f64 = 1e-9;

/// Undirected weighted graph over external u64 node IDs. Parallel edges are
/// summed at construction; self-edges are rejected (they only arise
/// internally from aggregation).
#[derive(Debug, Clone)]
pub struct UserGraph {
    nodes: Vec<u64>,
    adj: Vec<Vec<(u32, f64)>>,
}

impl UserGraph {
    pub fn from_edges<I: IntoIterator<Item = (u64, u64, f64)>>(edges: I) -> Self {
        let mut merged: BTreeMap<(u64, u64), f64> = BTreeMap::new();
        for (a, b, w) in edges {
            assert!(a != b, "self-edges are not part of a co-engagement graph");
            assert!(w.is_finite() && w > 0.0, "edge weights must be positive");
            let key = (a.min(b), a.max(b));
            *merged.entry(key).or_insert(0.0) += w;
        }
        let mut nodes: Vec<u64> = merged.keys().flat_map(|&(a, b)| [a, b]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let idx: HashMap<u64, u32> =
            nodes.iter().enumerate().map(|(i, &n)| (n, i as u32)).collect();
        let mut adj = vec![Vec::new(); nodes.len()];
        for (&(a, b), &w) in &merged {
            let (ia, ib) = (idx[&a], idx[&b]);
            adj[ia as usize].push((ib, w));
            adj[ib as usize].push((ia, w));
        }
        UserGraph { nodes, adj }
    }

    /// Adds isolated nodes (no edges) so they appear in partitions.
    pub fn with_isolated_nodes<I: IntoIterator<Item = u64>>(self, extra: I) -> Self {
        let mut nodes = self.nodes.clone();
        nodes.extend(extra);
        nodes.sort_unstable();
        nodes.dedup();
        if nodes.len() == self.nodes.len() {
            return self;
        }
        let edges: Vec<_> = self.edges().collect();
        let mut g = UserGraph { adj: vec![Vec::new(); nodes.len()], nodes };
        for (a, b, w) in edges {
            let ia = g.index_of(a).unwrap();
            let ib = g.index_of(b).unwrap();
            g.adj[ia].push((ib as u32, w));
            g.adj[ib].push((ia as u32, w));
        }
        g
    }

    pub fn nodes(&self) -> &[u64] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn index_of(&self, node: u64) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    /// Each undirected edge once, as (lower node, higher node, weight).
    pub fn edges(&self) -> impl Iterator<Item = (u64, u64, f64)> + '_ {
        self.adj.iter().enumerate().flat_map(move |(i, nbrs)| {
            nbrs.iter().filter_map(move |&(j, w)| {
                ((j as usize) > i).then(|| (self.nodes[i], self.nodes[j as usize], w))
            })
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.edges().map(|(_, _, w)| w).sum()
    }

    /// Induced subgraph over `members`, keeping only internal edges.
    pub fn induced(&self, members: &[u64]) -> UserGraph {
        let set: std::collections::HashSet<u64> = members.iter().copied().collect();
        let edges: Vec<_> = self
            .edges()
            .filter(|(a, b, _)| set.contains(a) && set.contains(b))
            .collect();
        UserGraph::from_edges(edges).with_isolated_nodes(members.iter().copied())
    }
}

/// Aggregatable working graph: dense indices, self-loop weights from folded
/// communities, cached weighted degrees.
struct LocalGraph {
    n: usize,
    adj: Vec<Vec<(u32, f64)>>,
    self_w: Vec<f64>,
    deg: Vec<f64>,
    m: f64,
}

impl LocalGraph {
    fn from_user_graph(g: &UserGraph) -> Self {
        let n = g.num_nodes();
        let adj = g.adj.clone();
        let self_w = vec![0.0; n];
        let deg: Vec<f64> = adj.iter().map(|nbrs| nbrs.iter().map(|&(_, w)| w).sum()).collect();
        let m = deg.iter().sum::<f64>() / 2.0;
        LocalGraph { n, adj, self_w, deg, m }
    }

    /// Q of the partition that puts each node in its own community.
    fn singleton_modularity(&self) -> f64 {
        if self.m == 0.0 {
            return 0.0;
        }
        let m2 = 2.0 * self.m;
        (0..self.n)
            .map(|i| self.self_w[i] / self.m - (self.deg[i] / m2).powi(2))
            .sum()
    }
}

/// One sweep-to-convergence of local moves. Returns the community of each
/// node (community IDs are node indices) and whether anything moved.
fn one_level(g: &LocalGraph) -> (Vec<u32>, bool) {
    let mut node2com: Vec<u32> = (0..g.n as u32).collect();
    if g.m == 0.0 {
        return (node2com, false);
    }
    let mut com_tot: Vec<f64> = g.deg.clone();
    let m2 = 2.0 * g.m;
    let mut any_move = false;
    loop {
        let mut moved = false;
        for i in 0..g.n {
            let cur = node2com[i];
            // Weight from i into each neighbor community, ascending com ID so
            // the first strict maximum is the lowest-ID winner.
            let mut nbw: BTreeMap<u32, f64> = BTreeMap::new();
            for &(j, w) in &g.adj[i] {
                *nbw.entry(node2com[j as usize]).or_insert(0.0) += w;
            }
            com_tot[cur as usize] -= g.deg[i];
            let gain_of = |c: u32, kin: f64| kin - com_tot[c as usize] * g.deg[i] / m2;
            let mut best_c = cur;
            let mut best_gain = gain_of(cur, nbw.get(&cur).copied().unwrap_or(0.0));
            for (&c, &kin) in &nbw {
                if c == cur {
                    continue;
                }
                let gain = gain_of(c, kin);
                if gain > best_gain {
                    best_gain = gain;
                    best_c = c;
                }
            }
            com_tot[best_c as usize] += g.deg[i];
            if best_c != cur {
                node2com[i] = best_c;
                moved = true;
                any_move = true;
            }
        }
        if !moved {
            break;
        }
    }
    (node2com, any_move)
}

/// Fold communities into supernodes. Returns the aggregated graph and the
/// dense renumbering old-community-id -> supernode index (ascending IDs).
fn aggregate(g: &LocalGraph, node2com: &[u32]) -> (LocalGraph, HashMap<u32, u32>) {
    let mut coms: Vec<u32> = node2com.to_vec();
    coms.sort_unstable();
    coms.dedup();
    let renum: HashMap<u32, u32> =
        coms.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();
    let n = coms.len();
    let mut self_w = vec![0.0; n];
    let mut cross: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); n];
    for i in 0..g.n {
        let ci = renum[&node2com[i]];
        self_w[ci as usize] += g.self_w[i];
        for &(j, w) in &g.adj[i] {
            let cj = renum[&node2com[j as usize]];
            if ci == cj {
                // Each undirected edge visits twice; halve into the loop.
                self_w[ci as usize] += w / 2.0;
            } else {
                *cross[ci as usize].entry(cj).or_insert(0.0) += w;
            }
        }
    }
    let adj: Vec<Vec<(u32, f64)>> =
        cross.into_iter().map(|m| m.into_iter().collect()).collect();
    let deg: Vec<f64> = (0..n)
        .map(|i| 2.0 * self_w[i] + adj[i].iter().map(|&(_, w)| w).sum::<f64>())
        .collect();
    let m = g.m;
    (LocalGraph { n, adj, self_w, deg, m }, renum)
}

#[derive(Debug, Clone)]
pub struct LouvainResult {
    /// node -> community, communities densely numbered in first-seen order
    /// over ascending node IDs.
    pub assignment: HashMap<u64, u64>,
    pub modularity: f64,
    /// Modularity after each accepted level, starting from the singleton
    /// partition. Non-decreasing by construction.
    pub level_modularity: Vec<f64>,
}

impl LouvainResult {
    /// Members per community, each list sorted, communities by ID.
    pub fn communities(&self) -> Vec<Vec<u64>> {
        let mut by_com: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for (&node, &com) in &self.assignment {
            by_com.entry(com).or_default().push(node);
        }
        by_com
            .into_values()
            .map(|mut v| {
                v.sort_unstable();
                v
            })
            .collect()
    }
}

pub fn louvain(g: &UserGraph) -> LouvainResult {
    if g.num_nodes() == 0 {
        return LouvainResult {
            assignment: HashMap::new(),
            modularity: 0.0,
            level_modularity: vec![0.0],
        };
    }
    let mut cur = LocalGraph::from_user_graph(g);
    // node_com[i]: current supernode of original node i.
    let mut node_com: Vec<u32> = (0..g.num_nodes() as u32).collect();
    let mut q_prev = cur.singleton_modularity();
    let mut trace = vec![q_prev];
    loop {
        let (level, moved) = one_level(&cur);
        if !moved {
            break;
        }
        let (next, renum) = aggregate(&cur, &level);
        let q_new = next.singleton_modularity();
        if q_new - q_prev <= MODULARITY_GAIN_EPS {
            break;
        }
        for c in node_com.iter_mut() {
            *c = renum[&level[*c as usize]];
        }
        cur = next;
        q_prev = q_new;
        trace.push(q_new);
    }
    // Dense community numbers in first-seen order over ascending node index.
    let mut renumber: HashMap<u32, u64> = HashMap::new();
    let mut assignment = HashMap::new();
    for (i, &c) in node_com.iter().enumerate() {
        let next_id = renumber.len() as u64;
        let id = *renumber.entry(c).or_insert(next_id);
        assignment.insert(g.nodes[i], id);
    }
    LouvainResult { assignment, modularity: q_prev, level_modularity: trace }
}

/// Modularity of an arbitrary assignment on `g`. Every node must be
/// assigned; isolated nodes contribute nothing.
pub fn modularity(g: &UserGraph, assignment: &HashMap<u64, u64>) -> f64 {
    let m = g.total_weight();
    if m == 0.0 {
        return 0.0;
    }
    let mut in_c: HashMap<u64, f64> = HashMap::new();
    let mut tot_c: HashMap<u64, f64> = HashMap::new();
    for (a, b, w) in g.edges() {
        let (ca, cb) = (assignment[&a], assignment[&b]);
        if ca == cb {
            *in_c.entry(ca).or_insert(0.0) += w;
        }
        *tot_c.entry(ca).or_insert(0.0) += w;
        *tot_c.entry(cb).or_insert(0.0) += w;
    }
    let m2 = 2.0 * m;
    let coms: std::collections::HashSet<u64> = tot_c.keys().copied().collect();
    coms.iter()
        .map(|c| {
            in_c.get(c).copied().unwrap_or(0.0) / m
                - (tot_c.get(c).copied().unwrap_or(0.0) / m2).powi(2)
        })
        .sum()
}

/// Adjusted Rand index between two partitions over the same key set.
pub fn adjusted_rand_index(a: &HashMap<u64, u64>, b: &HashMap<u64, u64>) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions cover different key sets");
    let n = a.len() as f64;
    let mut cont: HashMap<(u64, u64), f64> = HashMap::new();
    let mut row: HashMap<u64, f64> = HashMap::new();
    let mut col: HashMap<u64, f64> = HashMap::new();
    for (k, &ca) in a {
        let cb = b[k];
        *cont.entry((ca, cb)).or_insert(0.0) += 1.0;
        *row.entry(ca).or_insert(0.0) += 1.0;
        *col.entry(cb).or_insert(0.0) += 1.0;
    }
    let c2 = |x: f64| x * (x - 1.0) / 2.0;
    let sum_cont: f64 = cont.values().map(|&x| c2(x)).sum();
    let sum_row: f64 = row.values().map(|&x| c2(x)).sum();
    let sum_col: f64 = col.values().map(|&x| c2(x)).sum();
    let expected = sum_row * sum_col / c2(n);
    let max = (sum_row + sum_col) / 2.0;
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_cont - expected) / (max - expected)
}
