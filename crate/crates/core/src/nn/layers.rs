//! Parameter store and the layer zoo: linear, two-layer MLP, layer norm,
//! multi-head attention, and pre-norm transformer blocks.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Arr, Tape, Tx};

/// Named, ordered parameter set. Registration order is the optimizer-state
/// order, so construction must be deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Arr>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Arr) -> usize {
        assert!(uniq(&mut self.index, name, self.names.len()), "duplicate param {name}");
        self.names.push(name.to_string());
        self.values.push(Arc::new(value));
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: usize) -> &Arc<Arr> {
        &self.values[id]
    }

    pub fn set(&mut self, id: usize, value: Arr) {
        self.values[id] = Arc::new(value);
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arc<Arr>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    /// Total scalar count.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Load values by name; every target parameter must be present when
    /// `strict`, and shapes must always match.
    pub fn load_named(
        &mut self,
        named: &[(String, Arr)],
        prefix: &str,
        strict: bool,
    ) -> crate::error::Result<usize> {
        let by_name: HashMap<&str, &Arr> =
            named.iter().map(|(n, v)| (n.as_str(), v)).collect();
        let mut loaded = 0;
        for id in 0..self.values.len() {
            let name = self.names[id].clone();
            if !name.starts_with(prefix) {
                continue;
            }
            match by_name.get(name.as_str()) {
                Some(v) => {
                    if v.dim() != self.values[id].dim() {
                        return Err(crate::error::Error::Checkpoint(format!(
                            "shape mismatch for {name}: {:?} vs {:?}",
                            v.dim(),
                            self.values[id].dim()
                        )));
                    }
                    self.values[id] = Arc::new((*v).clone());
                    loaded += 1;
                }
                None if strict => {
                    return Err(crate::error::Error::Checkpoint(format!(
                        "missing parameter {name}"
                    )))
                }
                None => {}
            }
        }
        Ok(loaded)
    }
}

fn uniq(index: &mut HashMap<String, usize>, name: &str, id: usize) -> bool {
    index.insert(name.to_string(), id).is_none()
}

pub fn xavier_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Arr {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

pub fn normal_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Arr {
    use rand_distr::{Distribution, Normal};
    let n = Normal::new(0.0, std).unwrap();
    Array2::from_shape_fn((rows, cols), |_| n.sample(rng))
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = store.add(&format!("{name}.w"), xavier_uniform(rng, d_in, d_out));
        let b = store.add(&format!("{name}.b"), Array2::zeros((1, d_out)));
        Linear { w, b, d_in, d_out }
    }

    /// Final layers of residual refinement heads start at zero.
    pub fn new_zeroed(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = store.add(&format!("{name}.w"), Array2::zeros((d_in, d_out)));
        let b = store.add(&format!("{name}.b"), Array2::zeros((1, d_out)));
        Linear { w, b, d_in, d_out }
    }

    pub fn fwd(&self, t: &mut Tape, store: &ParamStore, x: Tx) -> Tx {
        let w = t.param(self.w, store.value(self.w).clone());
        let b = t.param(self.b, store.value(self.b).clone());
        let xw = t.matmul(x, w);
        t.add_bias(xw, b)
    }
}

/// Two linear layers with a ReLU in between.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp2 {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
    ) -> Self {
        Mlp2 {
            l1: Linear::new(store, rng, &format!("{name}.l1"), d_in, d_hidden),
            l2: Linear::new(store, rng, &format!("{name}.l2"), d_hidden, d_out),
        }
    }

    /// Same shape but with the output layer zero-initialized.
    pub fn new_zero_out(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
    ) -> Self {
        Mlp2 {
            l1: Linear::new(store, rng, &format!("{name}.l1"), d_in, d_hidden),
            l2: Linear::new_zeroed(store, &format!("{name}.l2"), d_hidden, d_out),
        }
    }

    pub fn fwd(&self, t: &mut Tape, store: &ParamStore, x: Tx) -> Tx {
        let h = self.l1.fwd(t, store, x);
        let h = t.relu(h);
        self.l2.fwd(t, store, h)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(&format!("{name}.gamma"), Array2::ones((1, dim))),
            beta: store.add(&format!("{name}.beta"), Array2::zeros((1, dim))),
        }
    }

    pub fn fwd(&self, t: &mut Tape, store: &ParamStore, x: Tx) -> Tx {
        let g = t.param(self.gamma, store.value(self.gamma).clone());
        let b = t.param(self.beta, store.value(self.beta).clone());
        t.layer_norm_rows(x, g, b, 1e-5)
    }
}

/// Additive attention bias masking invalid keys.
pub fn key_mask_bias(n_queries: usize, key_valid: &[bool]) -> Arc<Arr> {
    let mut m = Arr::zeros((n_queries, key_valid.len()));
    for (j, &v) in key_valid.iter().enumerate() {
        if !v {
            for i in 0..n_queries {
                m[[i, j]] = -1e30;
            }
        }
    }
    Arc::new(m)
}

#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        n_heads: usize,
    ) -> Self {
        assert_eq!(d_model % n_heads, 0, "d_model must divide n_heads");
        MultiHeadAttention {
            wq: Linear::new(store, rng, &format!("{name}.wq"), d_model, d_model),
            wk: Linear::new(store, rng, &format!("{name}.wk"), d_model, d_model),
            wv: Linear::new(store, rng, &format!("{name}.wv"), d_model, d_model),
            wo: Linear::new(store, rng, &format!("{name}.wo"), d_model, d_model),
            n_heads,
            d_model,
        }
    }

    /// Attend from `q_in` rows to `kv_in` rows; invalid keys are excluded via
    /// a -1e30 additive bias, which underflows to exactly zero weight.
    pub fn fwd(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        q_in: Tx,
        kv_in: Tx,
        mask_bias: &Arc<Arr>,
    ) -> Tx {
        let q = self.wq.fwd(t, store, q_in);
        let k = self.wk.fwd(t, store, kv_in);
        let v = self.wv.fwd(t, store, kv_in);
        let dh = self.d_model / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let qh = t.slice_cols(q, c0, c1);
            let kh = t.slice_cols(k, c0, c1);
            let vh = t.slice_cols(v, c0, c1);
            let scores = t.matmul_t(qh, kh, false, true);
            let scaled = t.scale(scores, scale);
            let masked = t.add_const(scaled, mask_bias);
            let attn = t.softmax_rows(masked);
            heads.push(t.matmul(attn, vh));
        }
        let cat = t.concat_cols(&heads);
        self.wo.fwd(t, store, cat)
    }
}

/// Pre-norm self-attention block with a ReLU MLP.
#[derive(Debug, Clone, Copy)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: Mlp2,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        n_heads: usize,
        ffn_mult: usize,
    ) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d_model),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), d_model, n_heads),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d_model),
            ffn: Mlp2::new(
                store,
                rng,
                &format!("{name}.ffn"),
                d_model,
                d_model * ffn_mult,
                d_model,
            ),
        }
    }

    pub fn fwd(&self, t: &mut Tape, store: &ParamStore, x: Tx, mask_bias: &Arc<Arr>) -> Tx {
        let n = self.ln1.fwd(t, store, x);
        let a = self.attn.fwd(t, store, n, n, mask_bias);
        let x = t.add(x, a);
        let n = self.ln2.fwd(t, store, x);
        let f = self.ffn.fwd(t, store, n);
        t.add(x, f)
    }
}

/// Pre-norm cross-attention block: queries attend into a fixed context.
#[derive(Debug, Clone, Copy)]
pub struct CrossBlock {
    pub ln_q: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_f: LayerNorm,
    pub ffn: Mlp2,
}

impl CrossBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        n_heads: usize,
        ffn_mult: usize,
    ) -> Self {
        CrossBlock {
            ln_q: LayerNorm::new(store, &format!("{name}.ln_q"), d_model),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), d_model, n_heads),
            ln_f: LayerNorm::new(store, &format!("{name}.ln_f"), d_model),
            ffn: Mlp2::new(
                store,
                rng,
                &format!("{name}.ffn"),
                d_model,
                d_model * ffn_mult,
                d_model,
            ),
        }
    }

    pub fn fwd(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        x: Tx,
        context: Tx,
        mask_bias: &Arc<Arr>,
    ) -> Tx {
        let n = self.ln_q.fwd(t, store, x);
        let a = self.attn.fwd(t, store, n, context, mask_bias);
        let x = t.add(x, a);
        let n = self.ln_f.fwd(t, store, x);
        let f = self.ffn.fwd(t, store, n);
        t.add(x, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn attention_masks_invalid_keys_exactly() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let attn = MultiHeadAttention::new(&mut store, &mut rng, "a", 16, 4);

        let run = |poison: f64, store: &ParamStore| {
            let mut t = Tape::new();
            let mut kv = Arr::zeros((3, 16));
            kv[[0, 0]] = 1.0;
            kv[[1, 3]] = -0.5;
            // Row 2 is the padded token; its contents must not matter.
            for j in 0..16 {
                kv[[2, j]] = poison;
            }
            let q = t.constant(Arr::ones((2, 16)));
            let kv = t.constant(kv);
            let bias = key_mask_bias(2, &[true, true, false]);
            let out = attn.fwd(&mut t, store, q, kv, &bias);
            t.value(out).clone()
        };
        let a = run(0.0, &store);
        let b = run(1e6, &store);
        assert_eq!(a, b);
    }

    #[test]
    fn transformer_block_grad_check() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = TransformerBlock::new(&mut store, &mut rng, "blk", 8, 2, 2);
        let x0 = xavier_uniform(&mut rng, 3, 8);
        let bias = key_mask_bias(3, &[true, true, true]);

        let loss_of = |store: &ParamStore| {
            let mut t = Tape::new();
            let x = t.constant(x0.clone());
            let y = block.fwd(&mut t, store, x, &bias);
            let sq = t.mul(y, y);
            let l = t.sum_all(sq);
            t.value(l)[[0, 0]]
        };

        let mut t = Tape::new();
        let x = t.constant(x0.clone());
        let y = block.fwd(&mut t, &store, x, &bias);
        let sq = t.mul(y, y);
        let root = t.sum_all(sq);
        let mut grads: Vec<Option<Arr>> = vec![None; store.len()];
        t.backward(root, &mut grads);

        // Spot-check a handful of scalars in each parameter.
        let mut check_rng = ChaCha8Rng::seed_from_u64(2);
        for pid in 0..store.len() {
            let p = store.value(pid).as_ref().clone();
            let g = grads[pid].clone().unwrap_or_else(|| Arr::zeros(p.dim()));
            for _ in 0..3 {
                let r = check_rng.gen_range(0..p.nrows());
                let c = check_rng.gen_range(0..p.ncols());
                let h = 1e-5;
                let mut s2 = store.clone();
                let mut plus = p.clone();
                plus[[r, c]] += h;
                s2.set(pid, plus);
                let fp = loss_of(&s2);
                let mut minus = p.clone();
                minus[[r, c]] -= h;
                s2.set(pid, minus);
                let fm = loss_of(&s2);
                let num = (fp - fm) / (2.0 * h);
                let ana = g[[r, c]];
                // The 1e-3 floor keeps fd noise from dominating gradients
                // that are analytically zero (e.g. key biases under softmax).
                let denom = ana.abs().max(num.abs()).max(1e-3);
                assert!(
                    (ana - num).abs() / denom < 1e-4,
                    "{} [{r},{c}]: {ana} vs {num}",
                    store.name(pid)
                );
            }
        }
    }

    #[test]
    fn load_named_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = ParamStore::new();
        let lin = Linear::new(&mut a, &mut rng, "enc.lin", 4, 4);
        let _ = lin;
        let named: Vec<(String, Arr)> = a.iter().map(|(n, v)| (n.to_string(), v.as_ref().clone())).collect();

        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        let mut b = ParamStore::new();
        let _ = Linear::new(&mut b, &mut rng2, "enc.lin", 4, 4);
        let loaded = b.load_named(&named, "enc.", true).unwrap();
        assert_eq!(loaded, 2);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.1.as_ref(), y.1.as_ref());
        }
    }
}
