//! Minimal reverse-mode differentiation over 2-d tensors.
//!
//! Nodes are appended to an arena in forward order; `backward` walks the
//! arena once in reverse. Ops are tensor-level (matmul, layer norm, fused
//! causal attention, fused masked NLL) so the tape stays short and the
//! arithmetic runs through gemm kernels. Everything is f64: the gradient
//! checks this engine exists to back are far below f32 noise.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    /// Elementwise sum of two same-shape nodes.
    Add(NodeId, NodeId),
    /// `(n, m) + (1, m)` broadcast over rows.
    AddBias(NodeId, NodeId),
    /// `(reps*t, m) + (t, m)`: the second operand tiled `reps` times.
    AddTiled { a: NodeId, b: NodeId, reps: usize },
    MatMul(NodeId, NodeId),
    /// Row gather from a table: out[i] = table[ids[i]].
    Gather { table: NodeId, ids: Vec<usize> },
    /// Row-wise layer norm with gain/bias `(1, m)`. Caches (mean, rstd).
    LayerNorm { a: NodeId, gain: NodeId, bias: NodeId, cache: Vec<(f64, f64)> },
    Gelu(NodeId),
    /// Multi-head causal self-attention over `batch` sequences of `tlen`
    /// rows each. Caches the softmax probabilities.
    CausalAttention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        batch: usize,
        tlen: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    /// Weighted negative log-likelihood over rows:
    /// `L = -sum_r w_r * log softmax(logits_r)[target_r]`.
    /// Rows with zero weight are skipped entirely. Caches softmax rows.
    MaskedNll { logits: NodeId, targets: Vec<usize>, weights: Vec<f64>, probs: Array2<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
}

/// Matmul with a rayon row split; worthwhile because training batches give
/// tall left operands.
pub fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let m = a.nrows();
    if m >= 512 && rayon::current_num_threads() > 1 {
        let half = m / 2;
        let (top, bottom) = a.view().split_at(Axis(0), half);
        let (ct, cb) = rayon::join(|| top.dot(b), || bottom.dot(b));
        let mut out = Array2::zeros((m, b.ncols()));
        out.slice_mut(ndarray::s![..half, ..]).assign(&ct);
        out.slice_mut(ndarray::s![half.., ..]).assign(&cb);
        out
    } else {
        a.dot(b)
    }
}

pub fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(value, Op::Add(a, b))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        debug_assert_eq!(self.nodes[bias.0].value.nrows(), 1);
        let value = &self.nodes[a.0].value + &self.nodes[bias.0].value;
        self.push(value, Op::AddBias(a, bias))
    }

    pub fn add_tiled(&mut self, a: NodeId, b: NodeId, reps: usize) -> NodeId {
        let t = self.nodes[b.0].value.nrows();
        let m = self.nodes[b.0].value.ncols();
        debug_assert_eq!(self.nodes[a.0].value.nrows(), reps * t);
        let mut value = self.nodes[a.0].value.clone();
        for r in 0..reps {
            let mut chunk = value.slice_mut(ndarray::s![r * t..(r + 1) * t, ..]);
            chunk += &self.nodes[b.0].value;
        }
        let _ = m;
        self.push(value, Op::AddTiled { a, b, reps })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = matmul(&self.nodes[a.0].value, &self.nodes[b.0].value);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn gather(&mut self, table: NodeId, ids: Vec<usize>) -> NodeId {
        let tab = &self.nodes[table.0].value;
        let m = tab.ncols();
        let mut value = Array2::zeros((ids.len(), m));
        for (i, &id) in ids.iter().enumerate() {
            value.row_mut(i).assign(&tab.row(id));
        }
        self.push(value, Op::Gather { table, ids })
    }

    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let x = &self.nodes[a.0].value;
        let g = &self.nodes[gain.0].value;
        let b = &self.nodes[bias.0].value;
        let m = x.ncols() as f64;
        let mut value = Array2::zeros(x.raw_dim());
        let mut cache = Vec::with_capacity(x.nrows());
        for (i, row) in x.rows().into_iter().enumerate() {
            let mean = row.sum() / m;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            cache.push((mean, rstd));
            for (j, &v) in row.iter().enumerate() {
                value[[i, j]] = (v - mean) * rstd * g[[0, j]] + b[[0, j]];
            }
        }
        self.push(value, Op::LayerNorm { a, gain, bias, cache })
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(gelu_scalar);
        self.push(value, Op::Gelu(a))
    }

    pub fn causal_attention(&mut self, q: NodeId, k: NodeId, v: NodeId, batch: usize, tlen: usize, heads: usize) -> NodeId {
        let qv = &self.nodes[q.0].value;
        let kv = &self.nodes[k.0].value;
        let vv = &self.nodes[v.0].value;
        let width = qv.ncols();
        debug_assert_eq!(width % heads, 0);
        debug_assert_eq!(qv.nrows(), batch * tlen);
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut probs = vec![0.0f64; batch * heads * tlen * tlen];
        let mut value = Array2::zeros((batch * tlen, width));

        let qs = qv.as_slice().expect("contiguous");
        let ks = kv.as_slice().expect("contiguous");
        let vs = vv.as_slice().expect("contiguous");
        value
            .as_slice_mut()
            .expect("contiguous")
            .par_chunks_mut(tlen * width)
            .zip(probs.par_chunks_mut(heads * tlen * tlen))
            .enumerate()
            .for_each(|(b, (out_b, probs_b))| {
                let base = b * tlen * width;
                for h in 0..heads {
                    let col = h * dh;
                    let p_h = &mut probs_b[h * tlen * tlen..(h + 1) * tlen * tlen];
                    for t in 0..tlen {
                        let qrow = &qs[base + t * width + col..base + t * width + col + dh];
                        // scores for s <= t, with running max for stability
                        let mut maxv = f64::NEG_INFINITY;
                        for s in 0..=t {
                            let krow = &ks[base + s * width + col..base + s * width + col + dh];
                            let mut dot = 0.0;
                            for j in 0..dh {
                                dot += qrow[j] * krow[j];
                            }
                            let sc = dot * scale;
                            p_h[t * tlen + s] = sc;
                            if sc > maxv {
                                maxv = sc;
                            }
                        }
                        let mut denom = 0.0;
                        for s in 0..=t {
                            let e = (p_h[t * tlen + s] - maxv).exp();
                            p_h[t * tlen + s] = e;
                            denom += e;
                        }
                        for s in 0..=t {
                            p_h[t * tlen + s] /= denom;
                        }
                        let orow = &mut out_b[t * width + col..t * width + col + dh];
                        for s in 0..=t {
                            let p = p_h[t * tlen + s];
                            let vrow = &vs[base + s * width + col..base + s * width + col + dh];
                            for j in 0..dh {
                                orow[j] += p * vrow[j];
                            }
                        }
                    }
                }
            });
        self.push(value, Op::CausalAttention { q, k, v, batch, tlen, heads, probs })
    }

    /// Fused weighted NLL; returns the loss node and leaves the softmax rows
    /// cached for the backward pass. `targets`/`weights` are per row;
    /// rows with weight 0 contribute nothing and are never softmaxed.
    pub fn masked_nll(&mut self, logits: NodeId, targets: Vec<usize>, weights: Vec<f64>) -> NodeId {
        let lg = &self.nodes[logits.0].value;
        let n = lg.nrows();
        debug_assert_eq!(targets.len(), n);
        debug_assert_eq!(weights.len(), n);
        let mut probs = Array2::zeros(lg.raw_dim());
        let mut loss = 0.0;
        for i in 0..n {
            if weights[i] == 0.0 {
                continue;
            }
            let row = lg.row(i);
            let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row.iter() {
                denom += (v - maxv).exp();
            }
            let log_denom = denom.ln() + maxv;
            let logp = lg[[i, targets[i]]] - log_denom;
            loss -= weights[i] * logp;
            let mut prow = probs.row_mut(i);
            for (j, &v) in row.iter().enumerate() {
                prow[j] = (v - log_denom).exp();
            }
        }
        let value = Array2::from_elem((1, 1), loss);
        self.push(value, Op::MaskedNll { logits, targets, weights, probs })
    }

    /// Log-probability of `target` under the softmax of row `row` of a
    /// logits node; forward-only helper.
    pub fn log_prob_row(&self, logits: NodeId, row: usize, target: usize) -> f64 {
        let lg = &self.nodes[logits.0].value;
        let r = lg.row(row);
        let maxv = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = r.iter().map(|&v| (v - maxv).exp()).sum();
        lg[[row, target]] - (denom.ln() + maxv)
    }

    /// Reverse pass from a scalar root. Returns per-node gradients; callers
    /// read off the leaf entries they care about.
    pub fn backward(&self, root: NodeId) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        debug_assert_eq!(self.nodes[root.0].value.dim(), (1, 1));
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(dy); // keep for the caller
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy);
                }
                Op::AddBias(a, bias) => {
                    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *a, dy);
                }
                Op::AddTiled { a, b, reps } => {
                    let t = self.nodes[b.0].value.nrows();
                    let mut db = Array2::zeros(self.nodes[b.0].value.raw_dim());
                    for r in 0..*reps {
                        db += &dy.slice(ndarray::s![r * t..(r + 1) * t, ..]);
                    }
                    accumulate(&mut grads, *b, db);
                    accumulate(&mut grads, *a, dy);
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let da = dy.dot(&bv.t());
                    let db = av.t().dot(&dy);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Gather { table, ids } => {
                    let mut dt = Array2::zeros(self.nodes[table.0].value.raw_dim());
                    for (i, &id) in ids.iter().enumerate() {
                        let mut row = dt.row_mut(id);
                        row += &dy.row(i);
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::LayerNorm { a, gain, bias, cache } => {
                    let x = &self.nodes[a.0].value;
                    let g = &self.nodes[gain.0].value;
                    let m = x.ncols();
                    let mf = m as f64;
                    let mut dx = Array2::zeros(x.raw_dim());
                    let mut dg = Array2::zeros((1, m));
                    let mut db = Array2::zeros((1, m));
                    for (i, (mean, rstd)) in cache.iter().enumerate() {
                        let xrow = x.row(i);
                        let dyrow = dy.row(i);
                        let mut sum_dyg = 0.0;
                        let mut sum_dyg_xhat = 0.0;
                        for j in 0..m {
                            let xhat = (xrow[j] - mean) * rstd;
                            let dyg = dyrow[j] * g[[0, j]];
                            sum_dyg += dyg;
                            sum_dyg_xhat += dyg * xhat;
                            dg[[0, j]] += dyrow[j] * xhat;
                            db[[0, j]] += dyrow[j];
                        }
                        let inv_m = 1.0 / mf;
                        for j in 0..m {
                            let xhat = (xrow[j] - mean) * rstd;
                            let dyg = dyrow[j] * g[[0, j]];
                            dx[[i, j]] = rstd * (dyg - inv_m * sum_dyg - xhat * inv_m * sum_dyg_xhat);
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                    accumulate(&mut grads, *gain, dg);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Gelu(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut dx = dy;
                    dx.zip_mut_with(x, |d, &v| *d *= gelu_grad_scalar(v));
                    accumulate(&mut grads, *a, dx);
                }
                Op::CausalAttention { q, k, v, batch, tlen, heads, probs } => {
                    let qv = &self.nodes[q.0].value;
                    let kv = &self.nodes[k.0].value;
                    let vv = &self.nodes[v.0].value;
                    let width = qv.ncols();
                    let dh = width / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let (tlen, heads) = (*tlen, *heads);
                    let _ = batch;

                    let mut dq = Array2::zeros(qv.raw_dim());
                    let mut dk = Array2::zeros(kv.raw_dim());
                    let mut dv = Array2::zeros(vv.raw_dim());
                    let qs = qv.as_slice().expect("contiguous");
                    let ks = kv.as_slice().expect("contiguous");
                    let vs = vv.as_slice().expect("contiguous");
                    let dys = dy.as_slice().expect("contiguous");

                    dq.as_slice_mut()
                        .expect("contiguous")
                        .par_chunks_mut(tlen * width)
                        .zip(dk.as_slice_mut().expect("contiguous").par_chunks_mut(tlen * width))
                        .zip(dv.as_slice_mut().expect("contiguous").par_chunks_mut(tlen * width))
                        .enumerate()
                        .for_each(|(b, ((dq_b, dk_b), dv_b))| {
                            let base = b * tlen * width;
                            let mut dscore = vec![0.0f64; tlen];
                            for h in 0..heads {
                                let col = h * dh;
                                let p_h = &probs[(b * heads + h) * tlen * tlen..(b * heads + h + 1) * tlen * tlen];
                                for t in 0..tlen {
                                    let dyrow = &dys[base + t * width + col..base + t * width + col + dh];
                                    // dp and the softmax jacobian contraction
                                    let mut dot_sum = 0.0;
                                    for s in 0..=t {
                                        let vrow = &vs[base + s * width + col..base + s * width + col + dh];
                                        let mut dp = 0.0;
                                        for j in 0..dh {
                                            dp += dyrow[j] * vrow[j];
                                        }
                                        dscore[s] = dp;
                                        dot_sum += p_h[t * tlen + s] * dp;
                                        // dV[s] += p * dy[t]
                                        let p = p_h[t * tlen + s];
                                        let dvrow = &mut dv_b[s * width + col..s * width + col + dh];
                                        for j in 0..dh {
                                            dvrow[j] += p * dyrow[j];
                                        }
                                    }
                                    let qrow = &qs[base + t * width + col..base + t * width + col + dh];
                                    for s in 0..=t {
                                        let p = p_h[t * tlen + s];
                                        let ds = p * (dscore[s] - dot_sum) * scale;
                                        let krow = &ks[base + s * width + col..base + s * width + col + dh];
                                        let dqrow = &mut dq_b[t * width + col..t * width + col + dh];
                                        let dkrow = &mut dk_b[s * width + col..s * width + col + dh];
                                        for j in 0..dh {
                                            dqrow[j] += ds * krow[j];
                                            dkrow[j] += ds * qrow[j];
                                        }
                                    }
                                }
                            }
                        });
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::MaskedNll { logits, targets, weights, probs } => {
                    let scalar = dy[[0, 0]];
                    let mut dl = Array2::zeros(probs.raw_dim());
                    for i in 0..targets.len() {
                        let w = weights[i];
                        if w == 0.0 {
                            continue;
                        }
                        let mut drow = dl.row_mut(i);
                        let prow = probs.row(i);
                        for j in 0..prow.len() {
                            drow[j] = scalar * w * prow[j];
                        }
                        drow[targets[i]] -= scalar * w;
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }
        grads
    }
}

/// Read a node's accumulated gradient out of a `backward` result.
pub fn node_grad<'a>(grads: &'a [Option<Array2<f64>>], id: NodeId) -> Option<&'a Array2<f64>> {
    grads[id.0].as_ref()
}

fn accumulate(grads: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>) {
    match &mut grads[id.0] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}
