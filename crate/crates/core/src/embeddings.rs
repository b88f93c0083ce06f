//! Hashed embedding tables with Adagrad state and parameter-growth
//! accounting.
//!
//! A table owns n_slots rows of dim values. Raw IDs map to slots by a fixed
//! seeded 64-bit mixing hash reduced modulo n_slots, so collisions are a
//! property of (seed, n_slots) alone and never of insertion order. Growth is
//! reported as distinct raw IDs observed in training, active parameters
//! (touched slots x dim), and the collision rate 1 - slots/raw.

use std::collections::HashSet;
use std::io::{Read, Write};

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::mix64;

pub const ADAGRAD_EPS: f64 = 1e-8;

const TABLE_MAGIC: [u8; 8] = *b"DYRKTBL1";

/// Stable slot assignment; pure in (hash_seed, raw_id, n_slots).
#[inline]
pub fn hash_slot(hash_seed: u64, raw_id: u64, n_slots: usize) -> usize {
    (mix64(raw_id ^ hash_seed) % n_slots as u64) as usize
}

/// Distinct raw-ID tracker: exact set by default, HyperLogLog sketch when
/// memory matters more than exactness.
#[derive(Debug, Clone)]
pub enum IdTracker {
    Exact(HashSet<u64>),
    Sketch(HyperLogLog),
}

impl IdTracker {
    fn observe(&mut self, raw: u64) -> bool {
        match self {
            IdTracker::Exact(set) => set.insert(raw),
            IdTracker::Sketch(h) => {
                h.add(raw);
                false
            }
        }
    }

    pub fn distinct(&self) -> u64 {
        match self {
            IdTracker::Exact(set) => set.len() as u64,
            IdTracker::Sketch(h) => h.estimate(),
        }
    }
}

/// 2^12-register HyperLogLog over the same mixing hash as the tables.
#[derive(Debug, Clone)]
pub struct HyperLogLog {
    registers: Vec<u8>,
}

const HLL_BITS: u32 = 12;
const HLL_M: usize = 1 << HLL_BITS;

impl Default for HyperLogLog {
    fn default() -> Self {
        HyperLogLog { registers: vec![0; HLL_M] }
    }
}

impl HyperLogLog {
    pub fn add(&mut self, raw: u64) {
        let h = mix64(raw ^ 0x5851_f42d_4c95_7f2d);
        let idx = (h >> (64 - HLL_BITS)) as usize;
        let rest = h << HLL_BITS;
        let rank = (rest.leading_zeros() + 1).min(64 - HLL_BITS + 1) as u8;
        if rank > self.registers[idx] {
            self.registers[idx] = rank;
        }
    }

    pub fn estimate(&self) -> u64 {
        let m = HLL_M as f64;
        let sum: f64 = self.registers.iter().map(|&r| 2f64.powi(-(r as i32))).sum();
        let alpha = 0.7213 / (1.0 + 1.079 / m);
        let mut est = alpha * m * m / sum;
        let zeros = self.registers.iter().filter(|&&r| r == 0).count();
        if est <= 2.5 * m && zeros > 0 {
            est = m * (m / zeros as f64).ln();
        }
        est.round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub distinct_raw_ids: u64,
    /// touched slots x dim.
    pub active_params: u64,
    /// 1 - touched_slots / distinct_raw_ids; 0 when nothing observed.
    pub collision_rate: f64,
    /// Total parameters the table owns regardless of use: n_slots x dim.
    pub table_params: u64,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    hash_seed: u64,
    n_slots: usize,
    dim: usize,
    values: Vec<f64>,
    accum: Vec<f64>,
    touched: Vec<u64>,
    touched_count: usize,
    tracker: IdTracker,
    /// Distinct raw IDs that landed on an already-claimed slot (exact mode).
    collisions: u64,
}

impl EmbeddingTable {
    /// Rows start uniform in [-1/sqrt(dim), 1/sqrt(dim)] drawn from `rng`.
    pub fn new(
        n_slots: usize,
        dim: usize,
        hash_seed: u64,
        exact_tracking: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_slots == 0 || dim == 0 {
            return Err(Error::config("embedding table needs n_slots > 0 and dim > 0"));
        }
        let scale = 1.0 / (dim as f64).sqrt();
        let values = (0..n_slots * dim).map(|_| rng.random_range(-scale..scale)).collect();
        Ok(EmbeddingTable {
            hash_seed,
            n_slots,
            dim,
            values,
            accum: vec![0.0; n_slots * dim],
            touched: vec![0u64; n_slots.div_ceil(64)],
            touched_count: 0,
            tracker: if exact_tracking {
                IdTracker::Exact(HashSet::new())
            } else {
                IdTracker::Sketch(HyperLogLog::default())
            },
            collisions: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_slots(&self) -> usize {
        self.n_slots
    }
    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn slot_of(&self, raw: u64) -> usize {
        hash_slot(self.hash_seed, raw, self.n_slots)
    }

    fn mark_touched(&mut self, slot: usize) -> bool {
        let (w, b) = (slot / 64, slot % 64);
        let newly = self.touched[w] & (1 << b) == 0;
        if newly {
            self.touched[w] |= 1 << b;
            self.touched_count += 1;
        }
        newly
    }

    fn is_touched(&self, slot: usize) -> bool {
        self.touched[slot / 64] & (1 << (slot % 64)) != 0
    }

    /// Training-path lookup: records the raw ID for growth accounting and
    /// returns its slot.
    pub fn observe(&mut self, raw: u64) -> usize {
        let slot = self.slot_of(raw);
        let new_raw = self.tracker.observe(raw);
        if new_raw && self.is_touched(slot) {
            self.collisions += 1;
        }
        self.mark_touched(slot);
        slot
    }

    pub fn lookup(&mut self, raw: u64) -> (usize, &[f64]) {
        let slot = self.observe(raw);
        (slot, self.row(slot))
    }

    /// Read-only lookup for frozen evaluation; does not count toward growth.
    pub fn peek(&self, raw: u64) -> (usize, &[f64]) {
        let slot = self.slot_of(raw);
        (slot, self.row(slot))
    }

    pub fn row(&self, slot: usize) -> &[f64] {
        &self.values[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn row_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.values[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Adagrad step over (slot, gradient) pairs. Duplicate slots are
    /// pre-summed before the single per-slot update, so two identical pairs
    /// behave exactly like one pair with twice the gradient.
    pub fn apply_sparse_grads<'a, I>(&mut self, pairs: I, lr: f64) -> Result<()>
    where
        I: IntoIterator<Item = (usize, &'a [f64])>,
    {
        let mut summed: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        for (slot, g) in pairs {
            if slot >= self.n_slots {
                return Err(Error::config(format!("slot {slot} out of range")));
            }
            if g.len() != self.dim {
                return Err(Error::config("gradient dim mismatch"));
            }
            match summed.entry(slot) {
                std::collections::btree_map::Entry::Occupied(mut e) => {
                    for (a, b) in e.get_mut().iter_mut().zip(g) {
                        *a += b;
                    }
                }
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(g.to_vec());
                }
            }
        }
        for (slot, g) in &summed {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { slot: *slot });
            }
            let base = slot * self.dim;
            for (i, &gi) in g.iter().enumerate() {
                self.accum[base + i] += gi * gi;
                self.values[base + i] -= lr * gi / (self.accum[base + i] + ADAGRAD_EPS).sqrt();
            }
        }
        Ok(())
    }

    pub fn report_growth(&self) -> GrowthReport {
        let distinct = self.tracker.distinct();
        let rate = if distinct == 0 {
            0.0
        } else {
            (1.0 - self.touched_count as f64 / distinct as f64).max(0.0)
        };
        GrowthReport {
            distinct_raw_ids: distinct,
            active_params: (self.touched_count * self.dim) as u64,
            collision_rate: rate,
            table_params: (self.n_slots * self.dim) as u64,
        }
    }

    pub fn touched_slots(&self) -> usize {
        self.touched_count
    }

    pub fn first_observed_collisions(&self) -> u64 {
        self.collisions
    }

    /// Header (magic, hash seed, n_slots, dim, flags) then little-endian f32
    /// rows; optimizer state and the exact ID set follow when flagged.
    pub fn write_checkpoint<W: Write>(&self, mut w: W, include_optimizer: bool) -> Result<()> {
        w.write_all(&TABLE_MAGIC)?;
        w.write_all(&self.hash_seed.to_le_bytes())?;
        w.write_all(&(self.n_slots as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        let exact = matches!(self.tracker, IdTracker::Exact(_));
        let flags: u32 = u32::from(include_optimizer) | (u32::from(exact) << 1);
        w.write_all(&flags.to_le_bytes())?;
        let write_f32 = |w: &mut W, xs: &[f64]| -> Result<()> {
            let mut buf = Vec::with_capacity(xs.len() * 4);
            for &x in xs {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
            Ok(())
        };
        write_f32(&mut w, &self.values)?;
        if include_optimizer {
            write_f32(&mut w, &self.accum)?;
        }
        match &self.tracker {
            IdTracker::Exact(set) => {
                let mut ids: Vec<u64> = set.iter().copied().collect();
                ids.sort_unstable();
                w.write_all(&(ids.len() as u64).to_le_bytes())?;
                for id in ids {
                    w.write_all(&id.to_le_bytes())?;
                }
            }
            IdTracker::Sketch(h) => {
                w.write_all(&(h.registers.len() as u64).to_le_bytes())?;
                w.write_all(&h.registers)?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("short table header".into()))?;
        if magic != TABLE_MAGIC {
            return Err(Error::Checkpoint("bad table magic".into()));
        }
        let mut u64buf = [0u8; 8];
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u64buf)?;
        let hash_seed = u64::from_le_bytes(u64buf);
        r.read_exact(&mut u64buf)?;
        let n_slots = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let flags = u32::from_le_bytes(u32buf);
        if n_slots == 0 || dim == 0 || n_slots.checked_mul(dim).is_none() {
            return Err(Error::Checkpoint("bad table shape".into()));
        }
        let read_f32 = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf).map_err(|_| Error::Checkpoint("short table body".into()))?;
            Ok(buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect())
        };
        let values = read_f32(&mut r, n_slots * dim)?;
        let accum = if flags & 1 != 0 {
            read_f32(&mut r, n_slots * dim)?
        } else {
            vec![0.0; n_slots * dim]
        };
        let mut table = EmbeddingTable {
            hash_seed,
            n_slots,
            dim,
            values,
            accum,
            touched: vec![0u64; n_slots.div_ceil(64)],
            touched_count: 0,
            tracker: IdTracker::Exact(HashSet::new()),
            collisions: 0,
        };
        r.read_exact(&mut u64buf)?;
        let n = u64::from_le_bytes(u64buf) as usize;
        if flags & 2 != 0 {
            let mut ids = vec![0u8; n * 8];
            r.read_exact(&mut ids).map_err(|_| Error::Checkpoint("short id set".into()))?;
            for c in ids.chunks_exact(8) {
                table.observe(u64::from_le_bytes(c.try_into().unwrap()));
            }
        } else {
            if n != HLL_M {
                return Err(Error::Checkpoint("bad sketch size".into()));
            }
            let mut regs = vec![0u8; n];
            r.read_exact(&mut regs)?;
            // Sketch mode cannot recover touched slots from IDs; growth
            // continues from the sketch alone.
            table.tracker = IdTracker::Sketch(HyperLogLog { registers: regs });
        }
        Ok(table)
    }
}
