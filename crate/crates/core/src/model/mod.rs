//! Hashed-embedding ranking model over engagement lists.
//!
//! A single tower: every active channel (one engagement list per task and
//! side) is pooled to one vector, the pooled vectors are concatenated with
//! the target entity embeddings, and a small ReLU network maps that to one
//! logit per task. Which sides are active follows the formulation:
//!
//! * item-centric: items are embedded. Channels hold the target user's
//!   engaged-item lists; the target item embedding is appended and also
//!   serves as the attention query.
//! * user-centric: users are embedded. Channels hold the target item's
//!   engaging-user lists (raw user IDs or cluster tokens); the target user
//!   embedding is appended and queries.
//! * hybrid: both of the above.
//!
//! Tower input layout, fixed: item-side channels in task order, user-side
//! channels in task order, target item embedding, target user embedding
//! (each block only when its side is active).

pub mod gradcheck;
mod mlp;
mod params;
mod pooling;

pub use params::DenseParam;
pub use pooling::AttentionParams;

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use mlp::{Mlp, MlpCache, MlpGrads};
use pooling::{attention_backward, attention_forward, sum_forward, AttnCache};

use crate::embeddings::{EmbeddingTable, GrowthReport};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::types::{ChannelList, ModelConfig, Pooling};

const MODEL_MAGIC: &[u8; 8] = b"DYRKMDL1";

/// Number of log2 time-gap buckets for the additive key-side encoding.
pub const TIME_BUCKETS: usize = 32;

/// log2 bucket of a non-negative time gap in seconds, saturating at the top.
pub fn time_bucket(delta: i64) -> usize {
    debug_assert!(delta >= 0);
    ((delta as u64 + 1).ilog2() as usize).min(TIME_BUCKETS - 1)
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Numerically stable binary cross entropy on a logit.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

/// One scoring request: a (user, item) pair at some moment, with the
/// engagement lists already built for that moment. Inactive sides carry
/// empty vectors.
#[derive(Debug, Clone)]
pub struct Example {
    pub user_id: u64,
    pub item_id: u64,
    /// Head index this example's label belongs to.
    pub task: usize,
    pub label: u8,
    /// Target user's engaged-item lists, one per task.
    pub item_lists: Vec<ChannelList>,
    /// Target item's engaging-user lists, one per task.
    pub user_lists: Vec<ChannelList>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Lookups record IDs for growth accounting.
    Train,
    /// Lookups leave no trace.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Item,
    User,
}

#[derive(Debug, Clone)]
struct ChannelCache {
    side: Side,
    task: usize,
    slots: Vec<usize>,
    embs: Vec<Vec<f64>>,
    /// Key-side inputs: embedding plus time encoding when enabled.
    keys: Vec<Vec<f64>>,
    buckets: Vec<usize>,
    attn: Option<AttnCache>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub logits: Vec<f64>,
    mlp: MlpCache,
    channels: Vec<ChannelCache>,
    target_item: Option<(usize, Vec<f64>)>,
    target_user: Option<(usize, Vec<f64>)>,
}

/// Mirror of every trainable group, produced by `backward` and consumed by
/// `apply`.
#[derive(Debug, Clone)]
pub struct Gradients {
    item_sparse: HashMap<usize, Vec<f64>>,
    user_sparse: HashMap<usize, Vec<f64>>,
    item_attn: Vec<AttnMats>,
    user_attn: Vec<AttnMats>,
    item_time: Option<Vec<f64>>,
    user_time: Option<Vec<f64>>,
    mlp: MlpGrads,
}

#[derive(Debug, Clone)]
struct AttnMats {
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
}

impl Gradients {
    /// Dense groups in the same order as `RankingModel::dense_groups_mut`.
    fn dense_named(&self) -> Vec<(String, &[f64])> {
        let mut v: Vec<(String, &[f64])> = Vec::new();
        for (li, (w, b)) in self.mlp.layers.iter().enumerate() {
            v.push((format!("mlp.layer{li}.w"), w));
            v.push((format!("mlp.layer{li}.b"), b));
        }
        v.push(("mlp.head.w".into(), &self.mlp.head_w));
        v.push(("mlp.head.b".into(), &self.mlp.head_b));
        for (side, mats) in [("item", &self.item_attn), ("user", &self.user_attn)] {
            for (t, m) in mats.iter().enumerate() {
                v.push((format!("{side}.attn{t}.wq"), &m.wq));
                v.push((format!("{side}.attn{t}.wk"), &m.wk));
                v.push((format!("{side}.attn{t}.wv"), &m.wv));
                v.push((format!("{side}.attn{t}.wo"), &m.wo));
            }
        }
        if let Some(t) = &self.item_time {
            v.push(("item.time".into(), t));
        }
        if let Some(t) = &self.user_time {
            v.push(("user.time".into(), t));
        }
        v
    }

    fn sparse(&self, side: Side) -> &HashMap<usize, Vec<f64>> {
        match side {
            Side::Item => &self.item_sparse,
            Side::User => &self.user_sparse,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainStep {
    pub loss: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone)]
pub struct RankingModel {
    config: ModelConfig,
    item_table: Option<EmbeddingTable>,
    user_table: Option<EmbeddingTable>,
    item_attn: Vec<AttentionParams>,
    user_attn: Vec<AttentionParams>,
    item_time: Option<DenseParam>,
    user_time: Option<DenseParam>,
    mlp: Mlp,
}

impl RankingModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        if config.time_encoding && config.pooling != Pooling::Attention {
            return Err(Error::config(
                "time encoding acts on attention keys and needs attentive pooling",
            ));
        }
        let dim = config.embed_dim;
        let k = config.num_tasks;
        let f = config.formulation;
        let mut seed_rng = stream(config.rng_seed, "hash-seeds", &[]);
        let item_seed: u64 = rand::RngExt::random(&mut seed_rng);
        let user_seed: u64 = rand::RngExt::random(&mut seed_rng);
        let mk_table = |domain: &str, hash_seed: u64| -> Result<EmbeddingTable> {
            let mut rng = stream(config.rng_seed, domain, &[]);
            EmbeddingTable::new(config.hash_size, dim, hash_seed, config.exact_id_tracking, &mut rng)
        };
        let item_table =
            if f.has_item_side() { Some(mk_table("init-item-table", item_seed)?) } else { None };
        let user_table =
            if f.has_user_side() { Some(mk_table("init-user-table", user_seed)?) } else { None };
        let mk_attn = |domain: &str| -> Vec<AttentionParams> {
            (0..k)
                .map(|t| {
                    let mut rng = stream(config.rng_seed, domain, &[t as u64]);
                    AttentionParams::new(dim, config.num_heads, &mut rng)
                })
                .collect()
        };
        let attention = config.pooling == Pooling::Attention;
        let item_attn =
            if attention && f.has_item_side() { mk_attn("init-item-attn") } else { Vec::new() };
        let user_attn =
            if attention && f.has_user_side() { mk_attn("init-user-attn") } else { Vec::new() };
        let mk_time = |active: bool| {
            (config.time_encoding && active).then(|| DenseParam::zeros(TIME_BUCKETS, dim))
        };
        let item_time = mk_time(f.has_item_side());
        let user_time = mk_time(f.has_user_side());
        let sides = f.has_item_side() as usize + f.has_user_side() as usize;
        let input_dim = (sides * k + sides) * dim;
        let mut mlp_rng = stream(config.rng_seed, "init-mlp", &[]);
        let mlp = Mlp::new(input_dim, &config.interaction_hidden_dims, k, &mut mlp_rng);
        Ok(RankingModel {
            config,
            item_table,
            user_table,
            item_attn,
            user_attn,
            item_time,
            user_time,
            mlp,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_tasks(&self) -> usize {
        self.config.num_tasks
    }

    /// (item table, user table) growth, for whichever sides exist.
    pub fn growth_reports(&self) -> (Option<GrowthReport>, Option<GrowthReport>) {
        (
            self.item_table.as_ref().map(|t| t.report_growth()),
            self.user_table.as_ref().map(|t| t.report_growth()),
        )
    }

    fn validate_example(&self, ex: &Example) -> Result<()> {
        let k = self.num_tasks();
        if ex.task >= k {
            return Err(Error::config(format!("task {} out of range 0..{k}", ex.task)));
        }
        if ex.label > 1 {
            return Err(Error::config("label must be 0 or 1"));
        }
        let f = self.config.formulation;
        let want = |active: bool| if active { k } else { 0 };
        if ex.item_lists.len() != want(f.has_item_side()) {
            return Err(Error::config(format!(
                "expected {} item-side lists, got {}",
                want(f.has_item_side()),
                ex.item_lists.len()
            )));
        }
        if ex.user_lists.len() != want(f.has_user_side()) {
            return Err(Error::config(format!(
                "expected {} user-side lists, got {}",
                want(f.has_user_side()),
                ex.user_lists.len()
            )));
        }
        Ok(())
    }

    fn fetch(table: &mut EmbeddingTable, raw: u64, mode: Mode) -> (usize, Vec<f64>) {
        match mode {
            Mode::Train => {
                let (slot, row) = table.lookup(raw);
                (slot, row.to_vec())
            }
            Mode::Eval => {
                let (slot, row) = table.peek(raw);
                (slot, row.to_vec())
            }
        }
    }

    fn attn_params(&self, side: Side) -> &[AttentionParams] {
        match side {
            Side::Item => &self.item_attn,
            Side::User => &self.user_attn,
        }
    }

    fn time_table(&self, side: Side) -> Option<&DenseParam> {
        match side {
            Side::Item => self.item_time.as_ref(),
            Side::User => self.user_time.as_ref(),
        }
    }

    pub fn forward(&mut self, ex: &Example, mode: Mode) -> Result<ForwardCache> {
        self.validate_example(ex)?;
        let dim = self.config.embed_dim;
        let f = self.config.formulation;
        let target_item = f
            .has_item_side()
            .then(|| Self::fetch(self.item_table.as_mut().unwrap(), ex.item_id, mode));
        let target_user = f
            .has_user_side()
            .then(|| Self::fetch(self.user_table.as_mut().unwrap(), ex.user_id, mode));

        let mut channels = Vec::new();
        let mut input = Vec::new();
        let sides: [(Side, &[ChannelList], Option<&(usize, Vec<f64>)>); 2] = [
            (Side::Item, &ex.item_lists, target_item.as_ref()),
            (Side::User, &ex.user_lists, target_user.as_ref()),
        ];
        for (side, lists, target) in sides {
            for (task, list) in lists.iter().enumerate() {
                let table = match side {
                    Side::Item => self.item_table.as_mut().unwrap(),
                    Side::User => self.user_table.as_mut().unwrap(),
                };
                let mut slots = Vec::with_capacity(list.valid_len());
                let mut embs = Vec::with_capacity(list.valid_len());
                for &id in &list.entity_ids {
                    let (slot, emb) = Self::fetch(table, id, mode);
                    slots.push(slot);
                    embs.push(emb);
                }
                let time = self.time_table(side);
                let buckets: Vec<usize> = if time.is_some() {
                    list.time_deltas.iter().map(|&d| time_bucket(d)).collect()
                } else {
                    Vec::new()
                };
                let keys: Vec<Vec<f64>> = match time {
                    Some(tt) => embs
                        .iter()
                        .zip(&buckets)
                        .map(|(e, &b)| {
                            let row = &tt.values[b * dim..(b + 1) * dim];
                            e.iter().zip(row).map(|(x, t)| x + t).collect()
                        })
                        .collect(),
                    None => embs.clone(),
                };
                let refs: Vec<&[f64]> = embs.iter().map(|e| e.as_slice()).collect();
                let (pooled, attn) = match self.config.pooling {
                    Pooling::Sum => (sum_forward(dim, &refs), None),
                    Pooling::Attention => {
                        let query = &target.expect("side implies target").1;
                        let (out, cache) =
                            attention_forward(&self.attn_params(side)[task], query, &refs, &keys);
                        (out, Some(cache))
                    }
                };
                input.extend_from_slice(&pooled);
                channels.push(ChannelCache { side, task, slots, embs, keys, buckets, attn });
            }
        }
        if let Some((_, emb)) = &target_item {
            input.extend_from_slice(emb);
        }
        if let Some((_, emb)) = &target_user {
            input.extend_from_slice(emb);
        }
        let (logits, mlp) = self.mlp.forward(&input);
        Ok(ForwardCache { logits, mlp, channels, target_item, target_user })
    }

    pub fn loss_of(&self, cache: &ForwardCache, ex: &Example) -> f64 {
        bce_with_logit(cache.logits[ex.task], ex.label as f64)
    }

    /// Prediction for the example's own task, without recording lookups.
    pub fn predict(&mut self, ex: &Example) -> Result<f64> {
        let cache = self.forward(ex, Mode::Eval)?;
        Ok(sigmoid(cache.logits[ex.task]))
    }

    pub fn backward(&self, ex: &Example, cache: &ForwardCache) -> (f64, Gradients) {
        let dim = self.config.embed_dim;
        let y = ex.label as f64;
        let z = cache.logits[ex.task];
        let loss = bce_with_logit(z, y);
        let mut d_logits = vec![0.0; self.num_tasks()];
        d_logits[ex.task] = sigmoid(z) - y;
        let (mlp_grads, d_input) = self.mlp.backward(&cache.mlp, &d_logits);

        let zero_mats = |params: &[AttentionParams]| -> Vec<AttnMats> {
            params
                .iter()
                .map(|_| AttnMats {
                    wq: vec![0.0; dim * dim],
                    wk: vec![0.0; dim * dim],
                    wv: vec![0.0; dim * dim],
                    wo: vec![0.0; dim * dim],
                })
                .collect()
        };
        let mut g = Gradients {
            item_sparse: HashMap::new(),
            user_sparse: HashMap::new(),
            item_attn: zero_mats(&self.item_attn),
            user_attn: zero_mats(&self.user_attn),
            item_time: self.item_time.as_ref().map(|t| vec![0.0; t.len()]),
            user_time: self.user_time.as_ref().map(|t| vec![0.0; t.len()]),
            mlp: mlp_grads,
        };
        let mut d_target_item = vec![0.0; dim];
        let mut d_target_user = vec![0.0; dim];
        let mut off = 0;
        for ch in &cache.channels {
            let slice = &d_input[off..off + dim];
            off += dim;
            match self.config.pooling {
                Pooling::Sum => {
                    let sparse = match ch.side {
                        Side::Item => &mut g.item_sparse,
                        Side::User => &mut g.user_sparse,
                    };
                    for &slot in &ch.slots {
                        let acc = sparse.entry(slot).or_insert_with(|| vec![0.0; dim]);
                        for (a, d) in acc.iter_mut().zip(slice) {
                            *a += d;
                        }
                    }
                }
                Pooling::Attention => {
                    let query = match ch.side {
                        Side::Item => &cache.target_item.as_ref().unwrap().1,
                        Side::User => &cache.target_user.as_ref().unwrap().1,
                    };
                    let refs: Vec<&[f64]> = ch.embs.iter().map(|e| e.as_slice()).collect();
                    let ag = attention_backward(
                        &self.attn_params(ch.side)[ch.task],
                        query,
                        &refs,
                        &ch.keys,
                        ch.attn.as_ref().unwrap(),
                        slice,
                    );
                    let (mats, sparse, time, d_target) = match ch.side {
                        Side::Item => (
                            &mut g.item_attn,
                            &mut g.item_sparse,
                            g.item_time.as_mut(),
                            &mut d_target_item,
                        ),
                        Side::User => (
                            &mut g.user_attn,
                            &mut g.user_sparse,
                            g.user_time.as_mut(),
                            &mut d_target_user,
                        ),
                    };
                    let m = &mut mats[ch.task];
                    for (acc, val) in [
                        (&mut m.wq, &ag.wq),
                        (&mut m.wk, &ag.wk),
                        (&mut m.wv, &ag.wv),
                        (&mut m.wo, &ag.wo),
                    ] {
                        for (a, v) in acc.iter_mut().zip(val) {
                            *a += v;
                        }
                    }
                    for (a, v) in d_target.iter_mut().zip(&ag.query) {
                        *a += v;
                    }
                    for (j, &slot) in ch.slots.iter().enumerate() {
                        let acc = sparse.entry(slot).or_insert_with(|| vec![0.0; dim]);
                        for (a, d) in acc.iter_mut().zip(&ag.entries[j]) {
                            *a += d;
                        }
                    }
                    if let Some(time) = time {
                        for (j, &b) in ch.buckets.iter().enumerate() {
                            let row = &mut time[b * dim..(b + 1) * dim];
                            for (a, d) in row.iter_mut().zip(&ag.key_inputs[j]) {
                                *a += d;
                            }
                        }
                    }
                }
            }
        }
        if let Some((slot, _)) = &cache.target_item {
            for (a, d) in d_target_item.iter_mut().zip(&d_input[off..off + dim]) {
                *a += d;
            }
            off += dim;
            let acc = g.item_sparse.entry(*slot).or_insert_with(|| vec![0.0; dim]);
            for (a, d) in acc.iter_mut().zip(&d_target_item) {
                *a += d;
            }
        }
        if let Some((slot, _)) = &cache.target_user {
            for (a, d) in d_target_user.iter_mut().zip(&d_input[off..off + dim]) {
                *a += d;
            }
            off += dim;
            let acc = g.user_sparse.entry(*slot).or_insert_with(|| vec![0.0; dim]);
            for (a, d) in acc.iter_mut().zip(&d_target_user) {
                *a += d;
            }
        }
        debug_assert_eq!(off, d_input.len());
        (loss, g)
    }

    pub fn apply(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        let named = grads.dense_named();
        let mut groups = self.dense_groups_mut();
        if named.len() != groups.len() {
            return Err(Error::config("gradient groups do not match model groups"));
        }
        for ((gname, gvals), (pname, param)) in named.iter().zip(groups.iter_mut()) {
            debug_assert_eq!(gname, pname);
            param.apply_grad(gvals, lr)?;
        }
        if let Some(table) = self.item_table.as_mut() {
            table.apply_sparse_grads(
                grads.item_sparse.iter().map(|(&s, g)| (s, g.as_slice())),
                lr,
            )?;
        }
        if let Some(table) = self.user_table.as_mut() {
            table.apply_sparse_grads(
                grads.user_sparse.iter().map(|(&s, g)| (s, g.as_slice())),
                lr,
            )?;
        }
        Ok(())
    }

    pub fn train_step(&mut self, ex: &Example) -> Result<TrainStep> {
        let cache = self.forward(ex, Mode::Train)?;
        let (loss, grads) = self.backward(ex, &cache);
        let prediction = sigmoid(cache.logits[ex.task]);
        self.apply(&grads, self.config.learning_rate)?;
        Ok(TrainStep { loss, prediction })
    }

    /// Dense groups in a fixed canonical order shared with `Gradients`.
    pub(crate) fn dense_groups_mut(&mut self) -> Vec<(String, &mut DenseParam)> {
        let mut v: Vec<(String, &mut DenseParam)> = Vec::new();
        for (li, l) in self.mlp.layers.iter_mut().enumerate() {
            v.push((format!("mlp.layer{li}.w"), &mut l.w));
            v.push((format!("mlp.layer{li}.b"), &mut l.b));
        }
        v.push(("mlp.head.w".into(), &mut self.mlp.head_w));
        v.push(("mlp.head.b".into(), &mut self.mlp.head_b));
        for (side, attns) in
            [("item", &mut self.item_attn), ("user", &mut self.user_attn)]
        {
            for (t, a) in attns.iter_mut().enumerate() {
                v.push((format!("{side}.attn{t}.wq"), &mut a.wq));
                v.push((format!("{side}.attn{t}.wk"), &mut a.wk));
                v.push((format!("{side}.attn{t}.wv"), &mut a.wv));
                v.push((format!("{side}.attn{t}.wo"), &mut a.wo));
            }
        }
        if let Some(t) = self.item_time.as_mut() {
            v.push(("item.time".into(), t));
        }
        if let Some(t) = self.user_time.as_mut() {
            v.push(("user.time".into(), t));
        }
        v
    }

    fn table_mut(&mut self, side: Side) -> Option<&mut EmbeddingTable> {
        match side {
            Side::Item => self.item_table.as_mut(),
            Side::User => self.user_table.as_mut(),
        }
    }

    /// Zeroes every dense parameter, leaving embeddings untouched. With a
    /// zero interaction network the logits equal the head biases, which is
    /// useful as a diagnostic baseline.
    pub fn zero_dense_params(&mut self) {
        for (_, p) in self.dense_groups_mut() {
            for v in p.values.iter_mut() {
                *v = 0.0;
            }
        }
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        let cfg = serde_json::to_vec(&self.config)
            .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        if let Some(t) = &self.item_table {
            t.write_checkpoint(&mut w, true)?;
        }
        if let Some(t) = &self.user_table {
            t.write_checkpoint(&mut w, true)?;
        }
        for (_, p) in self.dense_groups_ref() {
            p.write_to(&mut w)?;
        }
        Ok(())
    }

    fn dense_groups_ref(&self) -> Vec<(String, &DenseParam)> {
        let mut v: Vec<(String, &DenseParam)> = Vec::new();
        for (li, l) in self.mlp.layers.iter().enumerate() {
            v.push((format!("mlp.layer{li}.w"), &l.w));
            v.push((format!("mlp.layer{li}.b"), &l.b));
        }
        v.push(("mlp.head.w".into(), &self.mlp.head_w));
        v.push(("mlp.head.b".into(), &self.mlp.head_b));
        for (side, attns) in [("item", &self.item_attn), ("user", &self.user_attn)] {
            for (t, a) in attns.iter().enumerate() {
                v.push((format!("{side}.attn{t}.wq"), &a.wq));
                v.push((format!("{side}.attn{t}.wk"), &a.wk));
                v.push((format!("{side}.attn{t}.wv"), &a.wv));
                v.push((format!("{side}.attn{t}.wo"), &a.wo));
            }
        }
        if let Some(t) = &self.item_time {
            v.push(("item.time".into(), t));
        }
        if let Some(t) = &self.user_time {
            v.push(("user.time".into(), t));
        }
        v
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        let mut len4 = [0u8; 4];
        r.read_exact(&mut len4)?;
        let n = u32::from_le_bytes(len4) as usize;
        if n > (1 << 20) {
            return Err(Error::Checkpoint("config block too large".into()));
        }
        let mut cfg = vec![0u8; n];
        r.read_exact(&mut cfg)?;
        let config: ModelConfig = serde_json::from_slice(&cfg)
            .map_err(|e| Error::Checkpoint(format!("config parse: {e}")))?;
        let mut model = RankingModel::new(config)?;
        if model.item_table.is_some() {
            model.item_table = Some(EmbeddingTable::read_checkpoint(&mut r)?);
        }
        if model.user_table.is_some() {
            model.user_table = Some(EmbeddingTable::read_checkpoint(&mut r)?);
        }
        for (name, p) in model.dense_groups_mut() {
            let loaded = DenseParam::read_from(&mut r)?;
            if loaded.rows != p.rows || loaded.cols != p.cols {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: {}x{} vs {}x{}",
                    loaded.rows, loaded.cols, p.rows, p.cols
                )));
            }
            *p = loaded;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_checkpoint(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Formulation;

    fn config(f: Formulation, pooling: Pooling, k: usize) -> ModelConfig {
        ModelConfig {
            formulation: f,
            pooling,
            embed_dim: 4,
            hash_size: 64,
            num_heads: 2,
            list_capacity: 8,
            num_tasks: k,
            interaction_hidden_dims: vec![5],
            learning_rate: 0.05,
            time_encoding: false,
            rng_seed: 7,
            exact_id_tracking: true,
        }
    }

    fn list(ids: &[u64], deltas: &[i64]) -> ChannelList {
        ChannelList::new(ids.to_vec(), deltas.to_vec(), 8).unwrap()
    }

    fn hybrid_example(k: usize) -> Example {
        Example {
            user_id: 900,
            item_id: 501,
            task: 0,
            label: 1,
            item_lists: (0..k).map(|t| list(&[500, 502 + t as u64], &[30, 700])).collect(),
            user_lists: (0..k).map(|t| list(&[901 + t as u64, 903], &[60, 7200])).collect(),
        }
    }

    fn mv(w: &DenseParam, x: &[f64]) -> Vec<f64> {
        (0..w.rows)
            .map(|i| (0..w.cols).map(|j| w.values[i * w.cols + j] * x[j]).sum())
            .collect()
    }

    // Straight-line recomputation of the whole forward pass from raw
    // parameter reads, kept deliberately separate from the module helpers.
    fn manual_forward(model: &RankingModel, ex: &Example) -> Vec<f64> {
        let dim = model.config.embed_dim;
        let heads = model.config.num_heads;
        let hd = dim / heads;
        let item_q = model.item_table.as_ref().map(|t| t.peek(ex.item_id).1.to_vec());
        let user_q = model.user_table.as_ref().map(|t| t.peek(ex.user_id).1.to_vec());
        let mut input: Vec<f64> = Vec::new();
        let sides: [(&[ChannelList], Option<&EmbeddingTable>, &Vec<AttentionParams>, &Option<Vec<f64>>); 2] = [
            (&ex.item_lists, model.item_table.as_ref(), &model.item_attn, &item_q),
            (&ex.user_lists, model.user_table.as_ref(), &model.user_attn, &user_q),
        ];
        for (lists, table, attns, query) in sides {
            for (t, l) in lists.iter().enumerate() {
                let table = table.unwrap();
                let embs: Vec<Vec<f64>> =
                    l.entity_ids.iter().map(|&id| table.peek(id).1.to_vec()).collect();
                match model.config.pooling {
                    Pooling::Sum => {
                        let mut s = vec![0.0; dim];
                        for e in &embs {
                            for d in 0..dim {
                                s[d] += e[d];
                            }
                        }
                        input.extend(s);
                    }
                    Pooling::Attention => {
                        let a = &attns[t];
                        let q = mv(&a.wq, query.as_ref().unwrap());
                        let ks: Vec<Vec<f64>> = embs.iter().map(|e| mv(&a.wk, e)).collect();
                        let vs: Vec<Vec<f64>> = embs.iter().map(|e| mv(&a.wv, e)).collect();
                        let mut concat = vec![0.0; dim];
                        for h in 0..heads {
                            let lo = h * hd;
                            let scores: Vec<f64> = ks
                                .iter()
                                .map(|kk| {
                                    (0..hd).map(|d| q[lo + d] * kk[lo + d]).sum::<f64>()
                                        / (hd as f64).sqrt()
                                })
                                .collect();
                            let mx =
                                scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                            let ws: Vec<f64> =
                                scores.iter().map(|s| (s - mx).exp()).collect();
                            let z: f64 = ws.iter().sum();
                            for (j, v) in vs.iter().enumerate() {
                                for d in 0..hd {
                                    concat[lo + d] += ws[j] / z * v[lo + d];
                                }
                            }
                        }
                        input.extend(mv(&a.wo, &concat));
                    }
                }
            }
        }
        if let Some(q) = item_q {
            input.extend(q);
        }
        if let Some(q) = user_q {
            input.extend(q);
        }
        let mut cur = input;
        for l in &model.mlp.layers {
            cur = mv(&l.w, &cur)
                .iter()
                .zip(&l.b.values)
                .map(|(x, b)| (x + b).max(0.0))
                .collect();
        }
        mv(&model.mlp.head_w, &cur)
            .iter()
            .zip(&model.mlp.head_b.values)
            .map(|(x, b)| x + b)
            .collect()
    }

    #[test]
    fn forward_matches_independent_recomputation() {
        for (f, p) in [
            (Formulation::Hybrid, Pooling::Attention),
            (Formulation::Hybrid, Pooling::Sum),
            (Formulation::ItemCentric, Pooling::Attention),
            (Formulation::UserCentric, Pooling::Sum),
        ] {
            let mut model = RankingModel::new(config(f, p, 2)).unwrap();
            let mut ex = hybrid_example(2);
            if !f.has_item_side() {
                ex.item_lists.clear();
            }
            if !f.has_user_side() {
                ex.user_lists.clear();
            }
            let cache = model.forward(&ex, Mode::Eval).unwrap();
            let manual = manual_forward(&model, &ex);
            for (a, b) in cache.logits.iter().zip(&manual) {
                assert!((a - b).abs() < 1e-12, "{f:?}/{p:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zeroed_dense_params_predict_sigmoid_of_head_bias() {
        let mut model =
            RankingModel::new(config(Formulation::Hybrid, Pooling::Attention, 1)).unwrap();
        model.zero_dense_params();
        model.mlp.head_b.values[0] = -0.4;
        let p = model.predict(&hybrid_example(1)).unwrap();
        assert!((p - sigmoid(-0.4)).abs() < 1e-15);
    }

    #[test]
    fn predictions_are_invariant_to_list_order() {
        let mut model =
            RankingModel::new(config(Formulation::Hybrid, Pooling::Attention, 1)).unwrap();
        let mut ex = hybrid_example(1);
        ex.item_lists = vec![list(&[500, 502, 77], &[30, 700, 5])];
        let p1 = model.predict(&ex).unwrap();
        ex.item_lists = vec![list(&[77, 500, 502], &[5, 30, 700])];
        let p2 = model.predict(&ex).unwrap();
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn hybrid_with_item_columns_zeroed_equals_user_centric() {
        let k = 2usize;
        let dim = 4usize;
        let mut hybrid =
            RankingModel::new(config(Formulation::Hybrid, Pooling::Attention, k)).unwrap();
        let mut uc =
            RankingModel::new(config(Formulation::UserCentric, Pooling::Attention, k))
                .unwrap();
        uc.user_table = hybrid.user_table.clone();
        uc.user_attn = hybrid.user_attn.clone();
        // First layer: copy the user-channel and target-user column blocks.
        let hw = hybrid.mlp.layers[0].w.clone();
        let hcols = hw.cols;
        let ucols = uc.mlp.layers[0].w.cols;
        for r in 0..hw.rows {
            for c in 0..k * dim {
                uc.mlp.layers[0].w.values[r * ucols + c] =
                    hw.values[r * hcols + (k * dim + c)];
            }
            for c in 0..dim {
                uc.mlp.layers[0].w.values[r * ucols + k * dim + c] =
                    hw.values[r * hcols + ((2 * k + 1) * dim + c)];
            }
        }
        uc.mlp.layers[0].b = hybrid.mlp.layers[0].b.clone();
        uc.mlp.head_w = hybrid.mlp.head_w.clone();
        uc.mlp.head_b = hybrid.mlp.head_b.clone();
        // Silence the hybrid's item-side blocks.
        for r in 0..hw.rows {
            for c in 0..k * dim {
                hybrid.mlp.layers[0].w.values[r * hcols + c] = 0.0;
            }
            for c in 0..dim {
                hybrid.mlp.layers[0].w.values[r * hcols + 2 * k * dim + c] = 0.0;
            }
        }
        let hex = hybrid_example(k);
        let mut uex = hex.clone();
        uex.item_lists.clear();
        let ph = hybrid.predict(&hex).unwrap();
        let pu = uc.predict(&uex).unwrap();
        assert!((ph - pu).abs() < 1e-15, "{ph} vs {pu}");
    }

    #[test]
    fn hundred_steps_cut_loss_noticeably() {
        let mut model =
            RankingModel::new(config(Formulation::Hybrid, Pooling::Attention, 1)).unwrap();
        let mut pos = hybrid_example(1);
        pos.label = 1;
        let mut neg = hybrid_example(1);
        neg.user_id = 950;
        neg.user_lists = vec![list(&[960, 961], &[10, 20])];
        neg.label = 0;
        let initial: f64 = [&pos, &neg]
            .iter()
            .map(|ex| {
                let c = model.forward(ex, Mode::Eval).unwrap();
                model.loss_of(&c, ex)
            })
            .sum();
        for _ in 0..100 {
            model.train_step(&pos).unwrap();
            model.train_step(&neg).unwrap();
        }
        let after: f64 = [&pos, &neg]
            .iter()
            .map(|ex| {
                let c = model.forward(ex, Mode::Eval).unwrap();
                model.loss_of(&c, ex)
            })
            .sum();
        assert!(after < initial * 0.95, "loss {initial} -> {after}");
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let mut model =
            RankingModel::new(config(Formulation::Hybrid, Pooling::Attention, 2)).unwrap();
        let ex = hybrid_example(2);
        for _ in 0..5 {
            model.train_step(&ex).unwrap();
        }
        let p_before = model.predict(&ex).unwrap();
        let mut bytes = Vec::new();
        model.write_checkpoint(&mut bytes).unwrap();
        let mut reloaded = RankingModel::read_checkpoint(bytes.as_slice()).unwrap();
        let p_after = reloaded.predict(&ex).unwrap();
        // Values pass through f32 once; reload of the same file is exact.
        assert!((p_before - p_after).abs() < 1e-6);
        let mut bytes2 = Vec::new();
        reloaded.write_checkpoint(&mut bytes2).unwrap();
        let reloaded2 = RankingModel::read_checkpoint(bytes2.as_slice()).unwrap();
        let mut bytes3 = Vec::new();
        reloaded2.write_checkpoint(&mut bytes3).unwrap();
        assert_eq!(bytes2, bytes3);
        let (gi, gu) = reloaded.growth_reports();
        let (mi, mu) = model.growth_reports();
        assert_eq!(gi, mi);
        assert_eq!(gu, mu);
    }

    #[test]
    fn eval_leaves_no_growth_trace_and_train_records() {
        let mut model =
            RankingModel::new(config(Formulation::Hybrid, Pooling::Attention, 1)).unwrap();
        let ex = hybrid_example(1);
        let before = model.growth_reports();
        model.predict(&ex).unwrap();
        assert_eq!(model.growth_reports(), before);
        model.train_step(&ex).unwrap();
        let (item, user) = model.growth_reports();
        // Targets plus list entries: items {501, 500, 502}, users {900, 901, 903}.
        assert_eq!(item.unwrap().distinct_raw_ids, 3);
        assert_eq!(user.unwrap().distinct_raw_ids, 3);
    }

    #[test]
    fn malformed_examples_are_rejected() {
        let mut model =
            RankingModel::new(config(Formulation::UserCentric, Pooling::Sum, 1)).unwrap();
        let mut ex = hybrid_example(1);
        ex.item_lists.clear();
        ex.task = 3;
        assert!(model.forward(&ex, Mode::Eval).is_err());
        ex.task = 0;
        ex.user_lists.clear();
        assert!(model.forward(&ex, Mode::Eval).is_err());
    }

    #[test]
    fn time_encoding_feeds_keys_only_when_enabled() {
        let mut cfg = config(Formulation::UserCentric, Pooling::Attention, 1);
        cfg.time_encoding = true;
        let mut model = RankingModel::new(cfg).unwrap();
        // A fresh time table is zero, so deltas cannot matter yet.
        let mut ex = hybrid_example(1);
        ex.item_lists.clear();
        let p1 = model.predict(&ex).unwrap();
        ex.user_lists = vec![list(&[901, 903], &[59_000, 7_200_000])];
        let p2 = model.predict(&ex).unwrap();
        assert!((p1 - p2).abs() < 1e-15);
        // Distinct rows per bucket separate near from far engagements.
        {
            let tt = model.user_time.as_mut().unwrap();
            for b in 0..TIME_BUCKETS {
                for d in 0..4 {
                    tt.values[b * 4 + d] = 0.1 * (b + 1) as f64;
                }
            }
        }
        // Deltas 60 and 7200 land in buckets 5 and 12.
        ex.user_lists = vec![list(&[901, 903], &[60, 7200])];
        let p3 = model.predict(&ex).unwrap();
        assert!((p3 - p1).abs() > 1e-9, "time rows had no effect: {p3} vs {p1}");
        // Different deltas in the same buckets are indistinguishable.
        assert_eq!(time_bucket(60), time_bucket(40));
        assert_eq!(time_bucket(7200), time_bucket(7000));
        ex.user_lists = vec![list(&[901, 903], &[40, 7000])];
        let p4 = model.predict(&ex).unwrap();
        assert!((p3 - p4).abs() < 1e-15);
        // Sum pooling cannot host a key-side encoding.
        let mut bad = config(Formulation::UserCentric, Pooling::Sum, 1);
        bad.time_encoding = true;
        assert!(RankingModel::new(bad).is_err());
    }
}
