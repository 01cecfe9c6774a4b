//! Reverse-mode autodiff over `f64` matrices.
//!
//! A [`Tape`] records a forward computation as a flat list of nodes; calling
//! [`Tape::backward`] sweeps it in reverse and accumulates gradients for
//! every parameter node. Values are `Arc`-shared so parameter activation is
//! free and op outputs are allocated once.

use std::sync::Arc;

use ndarray::{Array2, Axis};

pub type Arr = Array2<f64>;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tx(usize);

enum Op {
    /// Constant or input; no gradient.
    Leaf,
    /// Parameter leaf; gradient routed to the parameter store slot.
    Param(usize),
    MatMul {
        a: Tx,
        b: Tx,
        ta: bool,
        tb: bool,
    },
    Add(Tx, Tx),
    Sub(Tx, Tx),
    Mul(Tx, Tx),
    /// Row-broadcast bias add: x `[R,C]` + b `[1,C]`.
    AddBias {
        x: Tx,
        b: Tx,
    },
    Scale(Tx, f64),
    AddConst {
        x: Tx,
    },
    MulConst {
        x: Tx,
        c: Arc<Arr>,
    },
    Relu(Tx),
    Tanh(Tx),
    /// sqrt(x + eps), elementwise; eps only matters at forward time.
    Sqrt {
        x: Tx,
    },
    SoftmaxRows(Tx),
    LayerNormRows {
        x: Tx,
        gamma: Tx,
        beta: Tx,
        eps: f64,
    },
    ConcatRows(Vec<Tx>),
    ConcatCols(Vec<Tx>),
    SliceRows {
        x: Tx,
        r0: usize,
    },
    SliceCols {
        x: Tx,
        c0: usize,
    },
    GatherRows {
        x: Tx,
        idx: Vec<usize>,
    },
    Transpose(Tx),
    SumAll(Tx),
    SumCols(Tx),
    /// Column-wise max over the valid rows; argmax cached at forward time.
    MaxRowsMasked {
        x: Tx,
        argmax: Vec<usize>,
    },
    /// Cross entropy of row-softmax(logits `[1,m]`) against a one-hot index.
    CeWithIndex {
        logits: Tx,
        index: usize,
    },
    /// sum(x * w) as a `[1,1]` scalar.
    WeightedSum {
        x: Tx,
        w: Arc<Arr>,
    },
}

pub struct Tape {
    values: Vec<Arc<Arr>>,
    ops: Vec<Op>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn softmax_rows(x: &Arr) -> Arr {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s: f64 = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::with_capacity(256),
            ops: Vec::with_capacity(256),
        }
    }

    fn push(&mut self, value: Arr, op: Op) -> Tx {
        self.values.push(Arc::new(value));
        self.ops.push(op);
        Tx(self.values.len() - 1)
    }

    pub fn value(&self, t: Tx) -> &Arr {
        &self.values[t.0]
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn constant(&mut self, v: Arr) -> Tx {
        self.push(v, Op::Leaf)
    }

    pub fn constant_shared(&mut self, v: Arc<Arr>) -> Tx {
        self.values.push(v);
        self.ops.push(Op::Leaf);
        Tx(self.values.len() - 1)
    }

    pub fn param(&mut self, id: usize, value: Arc<Arr>) -> Tx {
        self.values.push(value);
        self.ops.push(Op::Param(id));
        Tx(self.values.len() - 1)
    }

    pub fn matmul(&mut self, a: Tx, b: Tx) -> Tx {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: Tx, b: Tx, ta: bool, tb: bool) -> Tx {
        let av = &self.values[a.0];
        let bv = &self.values[b.0];
        let v = match (ta, tb) {
            (false, false) => av.dot(&**bv),
            (true, false) => av.t().dot(&**bv),
            (false, true) => av.dot(&bv.t()),
            (true, true) => av.t().dot(&bv.t()),
        };
        self.push(v, Op::MatMul { a, b, ta, tb })
    }

    pub fn add(&mut self, a: Tx, b: Tx) -> Tx {
        let v = &*self.values[a.0] + &*self.values[b.0];
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Tx, b: Tx) -> Tx {
        let v = &*self.values[a.0] - &*self.values[b.0];
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Tx, b: Tx) -> Tx {
        let v = &*self.values[a.0] * &*self.values[b.0];
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_bias(&mut self, x: Tx, b: Tx) -> Tx {
        let v = &*self.values[x.0] + &self.values[b.0].row(0);
        self.push(v, Op::AddBias { x, b })
    }

    pub fn scale(&mut self, x: Tx, k: f64) -> Tx {
        let v = self.values[x.0].mapv(|v| v * k);
        self.push(v, Op::Scale(x, k))
    }

    pub fn add_const(&mut self, x: Tx, c: &Arr) -> Tx {
        let v = &*self.values[x.0] + c;
        self.push(v, Op::AddConst { x })
    }

    pub fn mul_const(&mut self, x: Tx, c: Arc<Arr>) -> Tx {
        let v = &*self.values[x.0] * &*c;
        self.push(v, Op::MulConst { x, c })
    }

    pub fn relu(&mut self, x: Tx) -> Tx {
        let v = self.values[x.0].mapv(|v| v.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Tx) -> Tx {
        let v = self.values[x.0].mapv(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn sqrt_eps(&mut self, x: Tx, eps: f64) -> Tx {
        let v = self.values[x.0].mapv(|v| (v + eps).sqrt());
        self.push(v, Op::Sqrt { x })
    }

    pub fn softmax_rows(&mut self, x: Tx) -> Tx {
        let v = softmax_rows(&self.values[x.0]);
        self.push(v, Op::SoftmaxRows(x))
    }

    pub fn layer_norm_rows(&mut self, x: Tx, gamma: Tx, beta: Tx, eps: f64) -> Tx {
        let xv = &self.values[x.0];
        let g = self.values[gamma.0].row(0).to_owned();
        let b = self.values[beta.0].row(0).to_owned();
        let mut out = Arr::zeros(xv.dim());
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            let rstd = 1.0 / (var + eps).sqrt();
            for j in 0..row.len() {
                out[[i, j]] = (row[j] - mean) * rstd * g[j] + b[j];
            }
        }
        self.push(out, Op::LayerNormRows { x, gamma, beta, eps })
    }

    pub fn concat_rows(&mut self, parts: &[Tx]) -> Tx {
        let views: Vec<_> = parts.iter().map(|t| self.values[t.0].view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows shape");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Tx]) -> Tx {
        let views: Vec<_> = parts.iter().map(|t| self.values[t.0].view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shape");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Tx, r0: usize, r1: usize) -> Tx {
        let v = self.values[x.0].slice(ndarray::s![r0..r1, ..]).to_owned();
        self.push(v, Op::SliceRows { x, r0 })
    }

    pub fn slice_cols(&mut self, x: Tx, c0: usize, c1: usize) -> Tx {
        let v = self.values[x.0].slice(ndarray::s![.., c0..c1]).to_owned();
        self.push(v, Op::SliceCols { x, c0 })
    }

    pub fn gather_rows(&mut self, x: Tx, idx: &[usize]) -> Tx {
        let xv = &self.values[x.0];
        let mut v = Arr::zeros((idx.len(), xv.ncols()));
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).assign(&xv.row(i));
        }
        self.push(
            v,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn transpose(&mut self, x: Tx) -> Tx {
        let v = self.values[x.0].t().to_owned();
        self.push(v, Op::Transpose(x))
    }

    pub fn sum_all(&mut self, x: Tx) -> Tx {
        let v = Arr::from_elem((1, 1), self.values[x.0].sum());
        self.push(v, Op::SumAll(x))
    }

    pub fn sum_cols(&mut self, x: Tx) -> Tx {
        let xv = &self.values[x.0];
        let mut v = Arr::zeros((xv.nrows(), 1));
        for (i, row) in xv.rows().into_iter().enumerate() {
            v[[i, 0]] = row.sum();
        }
        self.push(v, Op::SumCols(x))
    }

    /// Column-wise max over the rows where `valid` is true; at least one row
    /// must be valid. Ties resolve to the lowest row index.
    pub fn max_rows_masked(&mut self, x: Tx, valid: &[bool]) -> Tx {
        let xv = &self.values[x.0];
        assert_eq!(valid.len(), xv.nrows());
        assert!(valid.iter().any(|v| *v), "max over zero valid rows");
        let mut out = Arr::from_elem((1, xv.ncols()), f64::NEG_INFINITY);
        let mut argmax = vec![usize::MAX; xv.ncols()];
        for (i, row) in xv.rows().into_iter().enumerate() {
            if !valid[i] {
                continue;
            }
            for (j, &v) in row.iter().enumerate() {
                if v > out[[0, j]] {
                    out[[0, j]] = v;
                    argmax[j] = i;
                }
            }
        }
        self.push(out, Op::MaxRowsMasked { x, argmax })
    }

    /// Categorical cross entropy `-log softmax(logits)[index]` for `[1, m]`
    /// logits, computed stably.
    pub fn cross_entropy_index(&mut self, logits: Tx, index: usize) -> Tx {
        let lv = self.values[logits.0].row(0).to_owned();
        let m = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + lv.mapv(|v| (v - m).exp()).sum().ln();
        let loss = lse - lv[index];
        self.push(Arr::from_elem((1, 1), loss), Op::CeWithIndex { logits, index })
    }

    /// `sum(x * w)` as a scalar node.
    pub fn weighted_sum(&mut self, x: Tx, w: Arc<Arr>) -> Tx {
        let v = (&*self.values[x.0] * &*w).sum();
        self.push(Arr::from_elem((1, 1), v), Op::WeightedSum { x, w })
    }

    pub fn zeros_const(&mut self, rows: usize, cols: usize) -> Tx {
        self.constant(Arr::zeros((rows, cols)))
    }

    /// Reverse sweep from a `[1,1]` scalar node. Returns gradients for every
    /// parameter id encountered, accumulated into `param_grads`.
    pub fn backward(&self, root: Tx, param_grads: &mut [Option<Arr>]) {
        assert_eq!(self.values[root.0].dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Arr>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Arr::from_elem((1, 1), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Param(pid) => match &mut param_grads[*pid] {
                    Some(acc) => *acc += &g,
                    slot => *slot = Some(g),
                },
                Op::MatMul { a, b, ta, tb } => {
                    let av = &self.values[a.0];
                    let bv = &self.values[b.0];
                    let (ga, gb) = match (ta, tb) {
                        (false, false) => (g.dot(&bv.t()), av.t().dot(&g)),
                        (true, false) => (bv.dot(&g.t()), av.dot(&g)),
                        (false, true) => (g.dot(&**bv), g.t().dot(&**av)),
                        (true, true) => (bv.t().dot(&g.t()), g.t().dot(&av.t())),
                    };
                    acc_grad(&mut grads, a.0, ga);
                    acc_grad(&mut grads, b.0, gb);
                }
                Op::Add(a, b) => {
                    acc_grad(&mut grads, a.0, g.clone());
                    acc_grad(&mut grads, b.0, g);
                }
                Op::Sub(a, b) => {
                    acc_grad(&mut grads, b.0, g.mapv(|v| -v));
                    acc_grad(&mut grads, a.0, g);
                }
                Op::Mul(a, b) => {
                    acc_grad(&mut grads, a.0, &g * &*self.values[b.0]);
                    acc_grad(&mut grads, b.0, &g * &*self.values[a.0]);
                }
                Op::AddBias { x, b } => {
                    let col_sum = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc_grad(&mut grads, x.0, g);
                    acc_grad(&mut grads, b.0, col_sum);
                }
                Op::Scale(x, k) => acc_grad(&mut grads, x.0, g.mapv(|v| v * k)),
                Op::AddConst { x } => acc_grad(&mut grads, x.0, g),
                Op::MulConst { x, c } => acc_grad(&mut grads, x.0, &g * &**c),
                Op::Relu(x) => {
                    let mask = self.values[x.0].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    acc_grad(&mut grads, x.0, &g * &mask);
                }
                Op::Tanh(x) => {
                    let y = &self.values[i];
                    acc_grad(&mut grads, x.0, &g * &y.mapv(|v| 1.0 - v * v));
                }
                Op::Sqrt { x } => {
                    let y = &self.values[i];
                    acc_grad(&mut grads, x.0, &g * &y.mapv(|v| 0.5 / v));
                }
                Op::SoftmaxRows(x) => {
                    let s = &self.values[i];
                    let mut gx = Arr::zeros(s.dim());
                    for r in 0..s.nrows() {
                        let dot: f64 = (0..s.ncols()).map(|c| g[[r, c]] * s[[r, c]]).sum();
                        for c in 0..s.ncols() {
                            gx[[r, c]] = s[[r, c]] * (g[[r, c]] - dot);
                        }
                    }
                    acc_grad(&mut grads, x.0, gx);
                }
                Op::LayerNormRows { x, gamma, beta, eps } => {
                    let xv = &self.values[x.0];
                    let gam = self.values[gamma.0].row(0).to_owned();
                    let n = xv.ncols() as f64;
                    let mut gx = Arr::zeros(xv.dim());
                    let mut ggamma = Arr::zeros((1, xv.ncols()));
                    let mut gbeta = Arr::zeros((1, xv.ncols()));
                    for r in 0..xv.nrows() {
                        let row = xv.row(r);
                        let mean = row.mean().unwrap();
                        let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
                        let rstd = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * rstd).collect();
                        let h: Vec<f64> = (0..xv.ncols()).map(|c| g[[r, c]] * gam[c]).collect();
                        let mean_h: f64 = h.iter().sum::<f64>() / n;
                        let mean_hx: f64 =
                            h.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..xv.ncols() {
                            gx[[r, c]] = rstd * (h[c] - mean_h - xhat[c] * mean_hx);
                            ggamma[[0, c]] += g[[r, c]] * xhat[c];
                            gbeta[[0, c]] += g[[r, c]];
                        }
                    }
                    acc_grad(&mut grads, x.0, gx);
                    acc_grad(&mut grads, gamma.0, ggamma);
                    acc_grad(&mut grads, beta.0, gbeta);
                }
                Op::ConcatRows(parts) => {
                    let mut r = 0;
                    for p in parts {
                        let rows = self.values[p.0].nrows();
                        let gp = g.slice(ndarray::s![r..r + rows, ..]).to_owned();
                        acc_grad(&mut grads, p.0, gp);
                        r += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for p in parts {
                        let cols = self.values[p.0].ncols();
                        let gp = g.slice(ndarray::s![.., c..c + cols]).to_owned();
                        acc_grad(&mut grads, p.0, gp);
                        c += cols;
                    }
                }
                Op::SliceRows { x, r0 } => {
                    let mut gx = Arr::zeros(self.values[x.0].dim());
                    gx.slice_mut(ndarray::s![*r0..r0 + g.nrows(), ..]).assign(&g);
                    acc_grad(&mut grads, x.0, gx);
                }
                Op::SliceCols { x, c0 } => {
                    let mut gx = Arr::zeros(self.values[x.0].dim());
                    gx.slice_mut(ndarray::s![.., *c0..c0 + g.ncols()]).assign(&g);
                    acc_grad(&mut grads, x.0, gx);
                }
                Op::GatherRows { x, idx } => {
                    let mut gx = Arr::zeros(self.values[x.0].dim());
                    for (k, &r) in idx.iter().enumerate() {
                        let mut row = gx.row_mut(r);
                        row += &g.row(k);
                    }
                    acc_grad(&mut grads, x.0, gx);
                }
                Op::Transpose(x) => acc_grad(&mut grads, x.0, g.t().to_owned()),
                Op::SumAll(x) => {
                    let gx = Arr::from_elem(self.values[x.0].dim(), g[[0, 0]]);
                    acc_grad(&mut grads, x.0, gx);
                }
                Op::SumCols(x) => {
                    let xv = &self.values[x.0];
                    let mut gx = Arr::zeros(xv.dim());
                    for r in 0..xv.nrows() {
                        for c in 0..xv.ncols() {
                            gx[[r, c]] = g[[r, 0]];
                        }
                    }
                    acc_grad(&mut grads, x.0, gx);
                }
                Op::MaxRowsMasked { x, argmax } => {
                    let mut gx = Arr::zeros(self.values[x.0].dim());
                    for (j, &r) in argmax.iter().enumerate() {
                        gx[[r, j]] += g[[0, j]];
                    }
                    acc_grad(&mut grads, x.0, gx);
                }
                Op::CeWithIndex { logits, index } => {
                    let mut s = softmax_rows(&self.values[logits.0]);
                    s[[0, *index]] -= 1.0;
                    acc_grad(&mut grads, logits.0, s.mapv(|v| v * g[[0, 0]]));
                }
                Op::WeightedSum { x, w } => {
                    acc_grad(&mut grads, x.0, w.mapv(|v| v * g[[0, 0]]));
                }
            }
        }
    }
}

fn acc_grad(grads: &mut [Option<Arr>], idx: usize, delta: Arr) {
    match &mut grads[idx] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}
