use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm, View};
use super::tensor::Tensor;
use crate::Real;

const LN_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Gelu(Var),
    Silu(Var),
    LayerNorm { x: Var, rstd: Vec<S> },
    Modulate { x: Var, shift: Var, scale: Var },
    ConcatCols(Var, Var),
    SliceCols { x: Var, start: usize },
    Attention { qkv: Var, heads: usize, probs: Vec<S> },
    MaskedMse { pred: Var, target: Vec<S>, row_mask: Vec<bool>, count: usize },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    param: Option<usize>,
    needs_grad: bool,
}

/// Record of one forward pass.
pub struct Tape<S: Real> {
    nodes: Vec<Node<S>>,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable input that is not a parameter.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Parameter number `index` of some parameter store.
    pub fn param(&mut self, index: usize, t: &Tensor<S>) -> Var {
        let v = self.push(t.clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(index);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols, tb.rows, "matmul: inner dimensions differ");
        let (m, k, n) = (ta.rows, ta.cols, tb.cols);
        let mut out = Tensor::zeros(m, n);
        gemm(
            m,
            k,
            n,
            S::one(),
            &ta.data,
            View::row_major(k),
            &tb.data,
            View::row_major(n),
            S::zero(),
            &mut out.data,
            View::row_major(n),
        );
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `x + b` with `b` a single row broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(b));
        assert!(tb.rows == 1 && tb.cols == tx.cols, "add_row: bias shape");
        let mut out = tx.clone();
        for row in out.data.chunks_exact_mut(tx.cols) {
            for (o, bv) in row.iter_mut().zip(&tb.data) {
                *o += *bv;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        self.push(out, Op::AddRow(x, b), ng)
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "add: shape mismatch");
        let mut out = ta.clone();
        out.add_assign(tb);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = S::from_f64(GELU_C);
        let k = S::from_f64(GELU_K);
        let half = S::from_f64(0.5);
        let tx = self.value(x);
        let data = tx
            .data
            .iter()
            .map(|&v| half * v * (S::one() + (c * (v + k * v * v * v)).tanh()))
            .collect();
        let out = Tensor::from_vec(tx.rows, tx.cols, data);
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data.iter().map(|&v| v / (S::one() + (-v).exp())).collect();
        let out = Tensor::from_vec(tx.rows, tx.cols, data);
        let ng = self.ng(x);
        self.push(out, Op::Silu(x), ng)
    }

    /// Per-row normalization to zero mean and unit variance, no affine part.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = S::from_f64(tx.cols as f64);
        let eps = S::from_f64(LN_EPS);
        let mut out = tx.clone();
        let mut rstd = Vec::with_capacity(tx.rows);
        for row in out.data.chunks_exact_mut(tx.cols) {
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let r = S::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            rstd.push(r);
        }
        let ng = self.ng(x);
        self.push(out, Op::LayerNorm { x, rstd }, ng)
    }

    /// `x * (1 + scale) + shift`, with `shift` and `scale` single rows.
    pub fn modulate(&mut self, x: Var, shift: Var, scale: Var) -> Var {
        let (tx, tsh, tsc) = (self.value(x), self.value(shift), self.value(scale));
        assert!(tsh.rows == 1 && tsh.cols == tx.cols, "modulate: shift shape");
        assert!(tsc.rows == 1 && tsc.cols == tx.cols, "modulate: scale shape");
        let mut out = tx.clone();
        for row in out.data.chunks_exact_mut(tx.cols) {
            for ((o, sh), sc) in row.iter_mut().zip(&tsh.data).zip(&tsc.data) {
                *o = *o * (S::one() + *sc) + *sh;
            }
        }
        let ng = self.ng(x) || self.ng(shift) || self.ng(scale);
        self.push(out, Op::Modulate { x, shift, scale }, ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows, tb.rows, "concat_cols: row mismatch");
        let cols = ta.cols + tb.cols;
        let mut data = Vec::with_capacity(ta.rows * cols);
        for r in 0..ta.rows {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let out = Tensor::from_vec(ta.rows, cols, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::ConcatCols(a, b), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let tx = self.value(x);
        assert!(start + len <= tx.cols, "slice_cols: out of range");
        let mut data = Vec::with_capacity(tx.rows * len);
        for r in 0..tx.rows {
            data.extend_from_slice(&tx.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(tx.rows, len, data);
        let ng = self.ng(x);
        self.push(out, Op::SliceCols { x, start }, ng)
    }

    /// Multi-head softmax attention over all rows. `qkv` holds the query,
    /// key and value projections side by side (`rows x 3d`); the output is
    /// `rows x d`.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Var {
        let t = self.value(qkv);
        assert!(t.cols % 3 == 0, "attention: qkv width must be 3d");
        let d = t.cols / 3;
        assert!(heads > 0 && d % heads == 0, "attention: heads must divide d");
        let dh = d / heads;
        let n = t.rows;
        let scale = S::one() / S::from_f64(dh as f64).sqrt();
        let mut probs = vec![S::zero(); heads * n * n];
        let mut out = Tensor::zeros(n, d);
        let qkv_rs = 3 * d;
        for h in 0..heads {
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            // scores = q kᵀ
            gemm(
                n,
                dh,
                n,
                scale,
                &t.data,
                View { offset: h * dh, rs: qkv_rs, cs: 1 },
                &t.data,
                View { offset: d + h * dh, rs: 1, cs: qkv_rs },
                S::zero(),
                p,
                View::row_major(n),
            );
            for row in p.chunks_exact_mut(n) {
                let max = row.iter().copied().fold(S::neg_infinity(), S::max);
                let mut sum = S::zero();
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                let inv = S::one() / sum;
                for v in row.iter_mut() {
                    *v *= inv;
                }
            }
            gemm(
                n,
                n,
                dh,
                S::one(),
                p,
                View::row_major(n),
                &t.data,
                View { offset: 2 * d + h * dh, rs: qkv_rs, cs: 1 },
                S::zero(),
                &mut out.data,
                View { offset: h * dh, rs: d, cs: 1 },
            );
        }
        let ng = self.ng(qkv);
        self.push(out, Op::Attention { qkv, heads, probs }, ng)
    }

    /// Mean squared error over all columns of the rows where `row_mask` is
    /// set. Returns a `1 x 1` tensor; zero when no row is selected.
    pub fn masked_mse(&mut self, pred: Var, target: &Tensor<S>, row_mask: &[bool]) -> Var {
        let tp = self.value(pred);
        assert_eq!(tp.shape(), target.shape(), "masked_mse: shape mismatch");
        assert_eq!(row_mask.len(), tp.rows, "masked_mse: mask length");
        let rows = row_mask.iter().filter(|m| **m).count();
        let count = rows * tp.cols;
        let mut sum = S::zero();
        for r in (0..tp.rows).filter(|&r| row_mask[r]) {
            for (a, b) in tp.row(r).iter().zip(target.row(r)) {
                sum += (*a - *b) * (*a - *b);
            }
        }
        let loss = if count == 0 {
            S::zero()
        } else {
            sum / S::from_f64(count as f64)
        };
        let ng = self.ng(pred);
        self.push(
            Tensor::from_vec(1, 1, vec![loss]),
            Op::MaskedMse {
                pred,
                target: target.data.clone(),
                row_mask: row_mask.to_vec(),
                count,
            },
            ng,
        )
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Gradients<S> {
        let out = self.value(output);
        assert_eq!(out.shape(), (1, 1), "backward: output must be a scalar");
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::from_vec(1, 1, vec![S::one()]));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accum<'g>(&self, grads: &'g mut [Option<Tensor<S>>], v: Var) -> Option<&'g mut Tensor<S>> {
        if !self.ng(v) {
            return None;
        }
        let t = &self.nodes[v.0].value;
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols)))
    }

    fn propagate(&self, node: &Node<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows, ta.cols, tb.cols);
                if let Some(ga) = self.accum(grads, *a) {
                    // dA = dC Bᵀ
                    gemm(
                        m,
                        n,
                        k,
                        S::one(),
                        &g.data,
                        View::row_major(n),
                        &tb.data,
                        View::transposed(n),
                        S::one(),
                        &mut ga.data,
                        View::row_major(k),
                    );
                }
                if let Some(gb) = self.accum(grads, *b) {
                    // dB = Aᵀ dC
                    gemm(
                        k,
                        m,
                        n,
                        S::one(),
                        &ta.data,
                        View::transposed(k),
                        &g.data,
                        View::row_major(n),
                        S::one(),
                        &mut gb.data,
                        View::row_major(n),
                    );
                }
            }
            Op::AddRow(x, b) => {
                if let Some(gx) = self.accum(grads, *x) {
                    gx.add_assign(g);
                }
                if let Some(gb) = self.accum(grads, *b) {
                    for row in g.data.chunks_exact(g.cols) {
                        for (o, v) in gb.data.iter_mut().zip(row) {
                            *o += *v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.accum(grads, v) {
                        gv.add_assign(g);
                    }
                }
            }
            Op::Gelu(x) => {
                let c = S::from_f64(GELU_C);
                let k = S::from_f64(GELU_K);
                let half = S::from_f64(0.5);
                let three_k = S::from_f64(3.0 * GELU_K);
                let xs = &self.value(*x).data;
                if let Some(gx) = self.accum(grads, *x) {
                    for ((o, &v), &gv) in gx.data.iter_mut().zip(xs).zip(&g.data) {
                        let th = (c * (v + k * v * v * v)).tanh();
                        let d = half * (S::one() + th)
                            + half * v * (S::one() - th * th) * c * (S::one() + three_k * v * v);
                        *o += gv * d;
                    }
                }
            }
            Op::Silu(x) => {
                let xs = &self.value(*x).data;
                if let Some(gx) = self.accum(grads, *x) {
                    for ((o, &v), &gv) in gx.data.iter_mut().zip(xs).zip(&g.data) {
                        let s = S::one() / (S::one() + (-v).exp());
                        *o += gv * s * (S::one() + v * (S::one() - s));
                    }
                }
            }
            Op::LayerNorm { x, rstd } => {
                let y = &node.value;
                let n = S::from_f64(y.cols as f64);
                if let Some(gx) = self.accum(grads, *x) {
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let mean_g = gr.iter().copied().sum::<S>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| *a * *b).sum::<S>() / n;
                        let out = &mut gx.data[r * y.cols..(r + 1) * y.cols];
                        for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                            *o += rstd[r] * (gv - mean_g - yv * mean_gy);
                        }
                    }
                }
            }
            Op::Modulate { x, shift, scale } => {
                let tx = self.value(*x);
                let tsc = self.value(*scale);
                let cols = tx.cols;
                if let Some(gx) = self.accum(grads, *x) {
                    for (orow, grow) in gx.data.chunks_exact_mut(cols).zip(g.data.chunks_exact(cols)) {
                        for ((o, gv), sc) in orow.iter_mut().zip(grow).zip(&tsc.data) {
                            *o += *gv * (S::one() + *sc);
                        }
                    }
                }
                if let Some(gsh) = self.accum(grads, *shift) {
                    for grow in g.data.chunks_exact(cols) {
                        for (o, gv) in gsh.data.iter_mut().zip(grow) {
                            *o += *gv;
                        }
                    }
                }
                if let Some(gsc) = self.accum(grads, *scale) {
                    for (grow, xrow) in g.data.chunks_exact(cols).zip(tx.data.chunks_exact(cols)) {
                        for ((o, gv), xv) in gsc.data.iter_mut().zip(grow).zip(xrow) {
                            *o += *gv * *xv;
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols;
                let cb = self.value(*b).cols;
                if let Some(ga) = self.accum(grads, *a) {
                    for r in 0..g.rows {
                        for (o, v) in ga.data[r * ca..(r + 1) * ca].iter_mut().zip(&g.row(r)[..ca]) {
                            *o += *v;
                        }
                    }
                }
                if let Some(gb) = self.accum(grads, *b) {
                    for r in 0..g.rows {
                        for (o, v) in gb.data[r * cb..(r + 1) * cb].iter_mut().zip(&g.row(r)[ca..]) {
                            *o += *v;
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let cols = self.value(*x).cols;
                let len = g.cols;
                if let Some(gx) = self.accum(grads, *x) {
                    for r in 0..g.rows {
                        let dst = &mut gx.data[r * cols + start..r * cols + start + len];
                        for (o, v) in dst.iter_mut().zip(g.row(r)) {
                            *o += *v;
                        }
                    }
                }
            }
            Op::Attention { qkv, heads, probs } => {
                let t = self.value(*qkv);
                let d = t.cols / 3;
                let dh = d / heads;
                let n = t.rows;
                let scale = S::one() / S::from_f64(dh as f64).sqrt();
                let qkv_rs = 3 * d;
                let Some(gq) = self.accum(grads, *qkv) else { return };
                let mut dp = vec![S::zero(); n * n];
                for h in 0..*heads {
                    let p = &probs[h * n * n..(h + 1) * n * n];
                    // dV = Pᵀ dO
                    gemm(
                        n,
                        n,
                        dh,
                        S::one(),
                        p,
                        View::transposed(n),
                        &g.data,
                        View { offset: h * dh, rs: d, cs: 1 },
                        S::one(),
                        &mut gq.data,
                        View { offset: 2 * d + h * dh, rs: qkv_rs, cs: 1 },
                    );
                    // dP = dO Vᵀ
                    gemm(
                        n,
                        dh,
                        n,
                        S::one(),
                        &g.data,
                        View { offset: h * dh, rs: d, cs: 1 },
                        &t.data,
                        View { offset: 2 * d + h * dh, rs: 1, cs: qkv_rs },
                        S::zero(),
                        &mut dp,
                        View::row_major(n),
                    );
                    // dS = P ⊙ (dP - rowsum(dP ⊙ P)), with the score scale folded in
                    for (dprow, prow) in dp.chunks_exact_mut(n).zip(p.chunks_exact(n)) {
                        let dot = dprow.iter().zip(prow).map(|(a, b)| *a * *b).sum::<S>();
                        for (dv, pv) in dprow.iter_mut().zip(prow) {
                            *dv = *pv * (*dv - dot) * scale;
                        }
                    }
                    // dQ = dS K
                    gemm(
                        n,
                        n,
                        dh,
                        S::one(),
                        &dp,
                        View::row_major(n),
                        &t.data,
                        View { offset: d + h * dh, rs: qkv_rs, cs: 1 },
                        S::one(),
                        &mut gq.data,
                        View { offset: h * dh, rs: qkv_rs, cs: 1 },
                    );
                    // dK = dSᵀ Q
                    gemm(
                        n,
                        n,
                        dh,
                        S::one(),
                        &dp,
                        View::transposed(n),
                        &t.data,
                        View { offset: h * dh, rs: qkv_rs, cs: 1 },
                        S::one(),
                        &mut gq.data,
                        View { offset: d + h * dh, rs: qkv_rs, cs: 1 },
                    );
                }
            }
            Op::MaskedMse {
                pred,
                target,
                row_mask,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let tp = self.value(*pred);
                let cols = tp.cols;
                let coef = S::from_f64(2.0) * g.data[0] / S::from_f64(*count as f64);
                if let Some(gp) = self.accum(grads, *pred) {
                    for r in (0..tp.rows).filter(|&r| row_mask[r]) {
                        for c in r * cols..(r + 1) * cols {
                            gp.data[c] += coef * (tp.data[c] - target[c]);
                        }
                    }
                }
            }
        }
    }

    /// Indices of the parameter leaves, in recording order.
    pub fn param_nodes(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, Var(i))))
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Sums the gradients of every parameter leaf into `out[param index]`.
    pub fn accumulate_params(&self, tape: &Tape<S>, out: &mut [Tensor<S>]) {
        for (p, v) in tape.param_nodes() {
            if let Some(g) = self.get(v) {
                out[p].add_assign(g);
            }
        }
    }
}
