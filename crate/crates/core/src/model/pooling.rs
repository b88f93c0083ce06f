//! Channel pooling: order-invariant reduction of a variable-length list of
//! embeddings to one fixed vector.
//!
//! Sum pooling ignores the target. Attentive pooling scores every list entry
//! against the target entity's embedding, so the same history pools
//! differently for different candidates. One projection set per channel,
//! heads formed by splitting the embedding dimension.

use rand::Rng;

use super::params::{add_outer, DenseParam};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: DenseParam,
    pub wk: DenseParam,
    pub wv: DenseParam,
    pub wo: DenseParam,
    pub num_heads: usize,
}

impl AttentionParams {
    pub fn new(dim: usize, num_heads: usize, rng: &mut impl Rng) -> Self {
        assert!(num_heads > 0 && dim % num_heads == 0);
        AttentionParams {
            wq: DenseParam::glorot(dim, dim, rng),
            wk: DenseParam::glorot(dim, dim, rng),
            wv: DenseParam::glorot(dim, dim, rng),
            wo: DenseParam::glorot(dim, dim, rng),
            num_heads,
        }
    }

    fn dim(&self) -> usize {
        self.wq.rows
    }
}

/// Everything backward needs that forward already computed.
#[derive(Debug, Clone, Default)]
pub struct AttnCache {
    q_proj: Vec<f64>,
    k_proj: Vec<Vec<f64>>,
    v_proj: Vec<Vec<f64>>,
    /// alphas[h][j]: softmax weight of entry j under head h.
    alphas: Vec<Vec<f64>>,
    concat: Vec<f64>,
}

impl AttnCache {
    /// Softmax weights per head, for inspection in tests.
    #[cfg(test)]
    pub fn weights(&self) -> &[Vec<f64>] {
        &self.alphas
    }
}

#[derive(Debug, Clone)]
pub struct AttnGrads {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub query: Vec<f64>,
    /// Full gradient per entry embedding (key path + value path).
    pub entries: Vec<Vec<f64>>,
    /// Key-path component alone, for additive key-side encodings.
    pub key_inputs: Vec<Vec<f64>>,
}

/// `keys_in[j]` is the key-side input for entry j (the entry embedding, plus
/// any additive encoding); `entries[j]` always feeds the value projection.
pub fn attention_forward(
    params: &AttentionParams,
    query: &[f64],
    entries: &[&[f64]],
    keys_in: &[Vec<f64>],
) -> (Vec<f64>, AttnCache) {
    let d = params.dim();
    debug_assert_eq!(query.len(), d);
    debug_assert_eq!(entries.len(), keys_in.len());
    let n = entries.len();
    if n == 0 {
        return (vec![0.0; d], AttnCache::default());
    }
    let heads = params.num_heads;
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();

    let mut q_proj = vec![0.0; d];
    params.wq.matvec(query, &mut q_proj);
    let mut k_proj = vec![vec![0.0; d]; n];
    let mut v_proj = vec![vec![0.0; d]; n];
    for j in 0..n {
        params.wk.matvec(&keys_in[j], &mut k_proj[j]);
        params.wv.matvec(entries[j], &mut v_proj[j]);
    }

    let mut alphas = vec![vec![0.0; n]; heads];
    let mut concat = vec![0.0; d];
    for h in 0..heads {
        let lo = h * hd;
        let hi = lo + hd;
        let scores: Vec<f64> = (0..n)
            .map(|j| {
                scale
                    * q_proj[lo..hi]
                        .iter()
                        .zip(&k_proj[j][lo..hi])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..n {
            alphas[h][j] = exps[j] / z;
            for (c, v) in concat[lo..hi].iter_mut().zip(&v_proj[j][lo..hi]) {
                *c += alphas[h][j] * v;
            }
        }
    }
    let mut out = vec![0.0; d];
    params.wo.matvec(&concat, &mut out);
    (out, AttnCache { q_proj, k_proj, v_proj, alphas, concat })
}

pub fn attention_backward(
    params: &AttentionParams,
    query: &[f64],
    entries: &[&[f64]],
    keys_in: &[Vec<f64>],
    cache: &AttnCache,
    d_out: &[f64],
) -> AttnGrads {
    let d = params.dim();
    let n = entries.len();
    let mut g = AttnGrads {
        wq: vec![0.0; d * d],
        wk: vec![0.0; d * d],
        wv: vec![0.0; d * d],
        wo: vec![0.0; d * d],
        query: vec![0.0; d],
        entries: vec![vec![0.0; d]; n],
        key_inputs: vec![vec![0.0; d]; n],
    };
    if n == 0 {
        return g;
    }
    let heads = params.num_heads;
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();

    add_outer(&mut g.wo, d_out, &cache.concat);
    let mut d_concat = vec![0.0; d];
    params.wo.add_matvec_transpose(d_out, &mut d_concat);

    let mut d_qproj = vec![0.0; d];
    let mut d_kproj = vec![vec![0.0; d]; n];
    let mut d_vproj = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let lo = h * hd;
        let hi = lo + hd;
        let alpha = &cache.alphas[h];
        // Value path and the raw weight gradients.
        let mut d_alpha = vec![0.0; n];
        for j in 0..n {
            for k in lo..hi {
                d_vproj[j][k] += alpha[j] * d_concat[k];
                d_alpha[j] += d_concat[k] * cache.v_proj[j][k];
            }
        }
        // Softmax Jacobian: ds_j = a_j (da_j - sum_k a_k da_k).
        let dot: f64 = alpha.iter().zip(&d_alpha).map(|(a, da)| a * da).sum();
        for j in 0..n {
            let d_score = alpha[j] * (d_alpha[j] - dot) * scale;
            for k in lo..hi {
                d_qproj[k] += d_score * cache.k_proj[j][k];
                d_kproj[j][k] += d_score * cache.q_proj[k];
            }
        }
    }

    add_outer(&mut g.wq, &d_qproj, query);
    params.wq.add_matvec_transpose(&d_qproj, &mut g.query);
    for j in 0..n {
        add_outer(&mut g.wk, &d_kproj[j], &keys_in[j]);
        params.wk.add_matvec_transpose(&d_kproj[j], &mut g.key_inputs[j]);
        add_outer(&mut g.wv, &d_vproj[j], entries[j]);
        let mut value_path = vec![0.0; d];
        params.wv.add_matvec_transpose(&d_vproj[j], &mut value_path);
        for (e, (kp, vp)) in g.entries[j].iter_mut().zip(g.key_inputs[j].iter().zip(&value_path)) {
            *e = kp + vp;
        }
    }
    g
}

/// Sum pooling: out = sum of entries, zero for an empty list.
pub fn sum_forward(dim: usize, entries: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for e in entries {
        for (o, v) in out.iter_mut().zip(*e) {
            *o += v;
        }
    }
    out
}
