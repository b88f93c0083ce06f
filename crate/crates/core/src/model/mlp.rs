//! Interaction network: ReLU stack over the concatenated tower input, then
//! one linear head per task producing a logit.

use rand::Rng;

use super::params::{add_outer, DenseParam};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: DenseParam,
    pub b: DenseParam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub head_w: DenseParam,
    pub head_b: DenseParam,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// Input to each hidden layer, then the input to the head.
    inputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl Mlp {
    pub fn new(input_dim: usize, hidden: &[usize], num_tasks: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::new();
        let mut cur = input_dim;
        for &h in hidden {
            layers.push(Layer { w: DenseParam::glorot(h, cur, rng), b: DenseParam::zeros(h, 1) });
            cur = h;
        }
        Mlp {
            layers,
            head_w: DenseParam::glorot(num_tasks, cur, rng),
            head_b: DenseParam::zeros(num_tasks, 1),
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut cache = MlpCache { inputs: Vec::with_capacity(self.layers.len() + 1) };
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut next = vec![0.0; layer.w.rows];
            layer.w.matvec(&cur, &mut next);
            for (n, b) in next.iter_mut().zip(&layer.b.values) {
                *n = (*n + b).max(0.0);
            }
            cache.inputs.push(cur);
            cur = next;
        }
        let mut logits = vec![0.0; self.head_w.rows];
        self.head_w.matvec(&cur, &mut logits);
        for (l, b) in logits.iter_mut().zip(&self.head_b.values) {
            *l += b;
        }
        cache.inputs.push(cur);
        (logits, cache)
    }

    /// Returns gradients and the gradient with respect to the input vector.
    pub fn backward(&self, cache: &MlpCache, d_logits: &[f64]) -> (MlpGrads, Vec<f64>) {
        let head_in = cache.inputs.last().expect("forward ran");
        let mut grads = MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
            head_w: vec![0.0; self.head_w.len()],
            head_b: d_logits.to_vec(),
        };
        add_outer(&mut grads.head_w, d_logits, head_in);
        let mut d_cur = vec![0.0; head_in.len()];
        self.head_w.add_matvec_transpose(d_logits, &mut d_cur);
        for (li, layer) in self.layers.iter().enumerate().rev() {
            // ReLU mask from the layer's output, which is the next input.
            let out = &cache.inputs[li + 1];
            for (d, o) in d_cur.iter_mut().zip(out) {
                if *o <= 0.0 {
                    *d = 0.0;
                }
            }
            let (dw, db) = &mut grads.layers[li];
            add_outer(dw, &d_cur, &cache.inputs[li]);
            db.copy_from_slice(&d_cur);
            let mut d_prev = vec![0.0; layer.w.cols];
            layer.w.add_matvec_transpose(&d_cur, &mut d_prev);
            d_cur = d_prev;
        }
        (grads, d_cur)
    }
}
