//! Dense f64 arrays with reverse-mode automatic differentiation on a tape,
//! plus the Adam optimizer and the warmup+cosine learning-rate schedule.
//!
//! The operator set is exactly what the transformer needs: matrix products
//! (2-D and batched 3-D), bias/residual adds, GELU, layer norm, softmax with
//! additive masking, a fused masked-attention-probabilities op, head
//! split/merge reshapes, and mean cross-entropy from logits.
//!
//! Masking rule: masked positions receive -1e30 before softmax and come out
//! with exactly zero probability; a fully masked row (row max below -1e29)
//! yields an all-zero row rather than a uniform one, so downstream values
//! see no phantom attention and the backward pass through such rows is zero.

use std::rc::Rc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} wants {n} elements, data has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    fn add_in_place(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// c = alpha * A * B + beta * c, with optional transposition of the stored
/// operands. `a` stores [m,k] row-major (or [k,m] when `a_t`), likewise `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub const MASK_OFF: f64 = -1e30;
const MASKED_ROW_MAX: f64 = -1e29;

/// In-place row softmax with the all-masked-row rule.
pub(crate) fn softmax_rows(data: &mut [f64], ncols: usize) {
    for row in data.chunks_mut(ncols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m < MASKED_ROW_MAX {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

pub type NodeId = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Bmm { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddBias { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Gelu { a: NodeId, tanh_aux: Vec<f64> },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, stats: Vec<f64> },
    Softmax { a: NodeId },
    AttnProbs { q: NodeId, k: NodeId, scale: f64 },
    SplitHeads { a: NodeId, nheads: usize },
    MergeHeads { a: NodeId },
    WeightedSum { a: NodeId, weights: Vec<f64> },
    CrossEntropyMean { logits: NodeId, targets: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// A single-use computation tape. Build the graph through the op methods,
/// then call [`Tape::backward`] on a scalar node.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    fn shape2(&self, id: NodeId) -> Result<(usize, usize)> {
        let s = &self.nodes[id].value.shape;
        if s.len() == 2 {
            Ok((s[0], s[1]))
        } else {
            Err(Error::invalid(format!("expected a matrix, got shape {s:?}")))
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape2(a)?;
        let (k2, n) = self.shape2(b)?;
        if k != k2 {
            return Err(Error::invalid(format!(
                "matmul mismatch: {:?} x {:?}",
                self.nodes[a].value.shape, self.nodes[b].value.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &self.nodes[a].value.data, false, &self.nodes[b].value.data, false, 0.0, &mut out);
        Ok(self.push(Op::MatMul { a, b }, Tensor { shape: vec![m, n], data: out }))
    }

    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a].value.shape.clone();
        let sb = self.nodes[b].value.shape.clone();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::invalid(format!("bmm mismatch: {sa:?} x {sb:?}")));
        }
        let (bsz, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bsz * m * n];
        for i in 0..bsz {
            gemm(
                m,
                k,
                n,
                1.0,
                &self.nodes[a].value.data[i * m * k..(i + 1) * m * k],
                false,
                &self.nodes[b].value.data[i * k * n..(i + 1) * k * n],
                false,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        Ok(self.push(Op::Bmm { a, b }, Tensor { shape: vec![bsz, m, n], data: out }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].value.shape != self.nodes[b].value.shape {
            return Err(Error::invalid(format!(
                "add mismatch: {:?} vs {:?}",
                self.nodes[a].value.shape, self.nodes[b].value.shape
            )));
        }
        let mut out = self.nodes[a].value.clone();
        out.add_in_place(&self.nodes[b].value);
        Ok(self.push(Op::Add { a, b }, out))
    }

    /// a has shape [..., n], bias has shape [n].
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let n = *self.nodes[a].value.shape.last().unwrap_or(&0);
        if self.nodes[bias].value.shape != vec![n] {
            return Err(Error::invalid(format!(
                "bias shape {:?} does not match last axis of {:?}",
                self.nodes[bias].value.shape, self.nodes[a].value.shape
            )));
        }
        let mut out = self.nodes[a].value.clone();
        for row in out.data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(&self.nodes[bias].value.data) {
                *v += b;
            }
        }
        Ok(self.push(Op::AddBias { a, b: bias }, out))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let mut out = self.nodes[a].value.clone();
        for v in &mut out.data {
            *v *= c;
        }
        self.push(Op::Scale { a, c }, out)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let x = &self.nodes[a].value;
        let mut tanh_aux = Vec::with_capacity(x.numel());
        let mut out = x.clone();
        for v in &mut out.data {
            let x = *v;
            let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
            tanh_aux.push(t);
            *v = 0.5 * x * (1.0 + t);
        }
        self.push(Op::Gelu { a, tanh_aux }, out)
    }

    /// Layer normalization over the last axis with learned gain and bias
    /// (both shaped [n]).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let n = *self.nodes[x].value.shape.last().unwrap_or(&0);
        if n == 0 || self.nodes[gain].value.shape != vec![n] || self.nodes[bias].value.shape != vec![n] {
            return Err(Error::invalid(format!(
                "layer_norm wants gain/bias [{n}]; got {:?} and {:?}",
                self.nodes[gain].value.shape, self.nodes[bias].value.shape
            )));
        }
        let mut out = self.nodes[x].value.clone();
        let g = &self.nodes[gain].value.data;
        let b = &self.nodes[bias].value.data;
        let mut stats = Vec::with_capacity(2 * out.numel() / n);
        for row in out.data.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            stats.push(mean);
            stats.push(rstd);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * rstd * g[j] + b[j];
            }
        }
        Ok(self.push(Op::LayerNorm { x, gain, bias, stats }, out))
    }

    /// Softmax over the last axis, honoring the masked-row rule.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let n = *self.nodes[a].value.shape.last().unwrap_or(&1);
        let mut out = self.nodes[a].value.clone();
        softmax_rows(&mut out.data, n);
        self.push(Op::Softmax { a }, out)
    }

    /// Fused masked attention probabilities: softmax over
    /// scale * q k^T + mask, per head. q is [H, Tq, D], k is [H, Tk, D],
    /// mask is an additive [Tq * Tk] table (0 or MASK_OFF) shared by heads.
    pub fn attn_probs(
        &mut self,
        q: NodeId,
        k: NodeId,
        scale: f64,
        mask: Rc<Vec<f64>>,
    ) -> Result<NodeId> {
        let sq = self.nodes[q].value.shape.clone();
        let sk = self.nodes[k].value.shape.clone();
        if sq.len() != 3 || sk.len() != 3 || sq[0] != sk[0] || sq[2] != sk[2] {
            return Err(Error::invalid(format!("attention mismatch: q {sq:?}, k {sk:?}")));
        }
        let (h, tq, d) = (sq[0], sq[1], sq[2]);
        let tk = sk[1];
        if mask.len() != tq * tk {
            return Err(Error::invalid(format!(
                "mask of {} entries does not cover {tq}x{tk} scores",
                mask.len()
            )));
        }
        let mut out = vec![0.0; h * tq * tk];
        for i in 0..h {
            let qd = &self.nodes[q].value.data[i * tq * d..(i + 1) * tq * d];
            let kd = &self.nodes[k].value.data[i * tk * d..(i + 1) * tk * d];
            let scores = &mut out[i * tq * tk..(i + 1) * tq * tk];
            // q [Tq,D] times k^T [D,Tk]: k stored [Tk,D], so transpose it.
            gemm(tq, d, tk, scale, qd, false, kd, true, 0.0, scores);
            for (s, m) in scores.iter_mut().zip(mask.iter().cycle()) {
                *s += m;
            }
            softmax_rows(scores, tk);
        }
        Ok(self.push(
            Op::AttnProbs { q, k, scale },
            Tensor { shape: vec![h, tq, tk], data: out },
        ))
    }

    /// [T, H*D] -> [H, T, D].
    pub fn split_heads(&mut self, a: NodeId, nheads: usize) -> Result<NodeId> {
        let (t, d_model) = self.shape2(a)?;
        if d_model % nheads != 0 {
            return Err(Error::invalid(format!(
                "width {d_model} not divisible by {nheads} heads"
            )));
        }
        let dh = d_model / nheads;
        let src = &self.nodes[a].value.data;
        let mut out = vec![0.0; t * d_model];
        for h in 0..nheads {
            for i in 0..t {
                let dst = &mut out[(h * t + i) * dh..(h * t + i + 1) * dh];
                dst.copy_from_slice(&src[i * d_model + h * dh..i * d_model + (h + 1) * dh]);
            }
        }
        Ok(self.push(Op::SplitHeads { a, nheads }, Tensor { shape: vec![nheads, t, dh], data: out }))
    }

    /// [H, T, D] -> [T, H*D].
    pub fn merge_heads(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.nodes[a].value.shape.clone();
        if s.len() != 3 {
            return Err(Error::invalid(format!("merge_heads wants [H,T,D], got {s:?}")));
        }
        let (h, t, dh) = (s[0], s[1], s[2]);
        let src = &self.nodes[a].value.data;
        let mut out = vec![0.0; t * h * dh];
        for hh in 0..h {
            for i in 0..t {
                out[i * h * dh + hh * dh..i * h * dh + (hh + 1) * dh]
                    .copy_from_slice(&src[(hh * t + i) * dh..(hh * t + i + 1) * dh]);
            }
        }
        Ok(self.push(Op::MergeHeads { a }, Tensor { shape: vec![t, h * dh], data: out }))
    }

    /// Scalar dot product with fixed weights (no gradient into the weights).
    pub fn weighted_sum(&mut self, a: NodeId, weights: Vec<f64>) -> Result<NodeId> {
        if weights.len() != self.nodes[a].value.numel() {
            return Err(Error::invalid(format!(
                "{} weights for {} elements",
                weights.len(),
                self.nodes[a].value.numel()
            )));
        }
        let v = self.nodes[a].value.data.iter().zip(&weights).map(|(x, w)| x * w).sum();
        Ok(self.push(Op::WeightedSum { a, weights }, Tensor::scalar(v)))
    }

    /// Mean cross-entropy of logit rows [N, C] against target bin indices.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (n, c) = self.shape2(logits)?;
        if targets.len() != n {
            return Err(Error::invalid(format!("{} targets for {n} logit rows", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::invalid(format!("target bin {t} out of {c}")));
        }
        let mut probs = self.nodes[logits].value.data.clone();
        softmax_rows(&mut probs, c);
        let mut loss = 0.0;
        for (i, row) in self.nodes[logits].value.data.chunks(c).enumerate() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[targets[i]];
        }
        loss /= n as f64;
        Ok(self.push(
            Op::CrossEntropyMean { logits, targets: targets.to_vec(), probs },
            Tensor::scalar(loss),
        ))
    }

    /// Reverse-mode sweep from a scalar loss. Returns one gradient slot per
    /// node (None where no gradient flowed).
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Tensor>>> {
        if self.nodes[loss].value.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar, got shape {:?}",
                self.nodes[loss].value.shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], f: impl FnOnce(&mut Tensor)) {
            let slot = grads[id].get_or_insert_with(|| Tensor::zeros(shape.to_vec()));
            f(slot);
        }

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = (self.nodes[*a].value.shape[0], self.nodes[*a].value.shape[1]);
                    let n = self.nodes[*b].value.shape[1];
                    let (ad, bd) = (&self.nodes[*a].value.data, &self.nodes[*b].value.data);
                    acc(&mut grads, *a, &[m, k], |da| {
                        gemm(m, n, k, 1.0, &g.data, false, bd, true, 1.0, &mut da.data);
                    });
                    acc(&mut grads, *b, &[k, n], |db| {
                        gemm(k, m, n, 1.0, ad, true, &g.data, false, 1.0, &mut db.data);
                    });
                }
                Op::Bmm { a, b } => {
                    let sa = &self.nodes[*a].value.shape;
                    let sb = &self.nodes[*b].value.shape;
                    let (bsz, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                    let (ad, bd) = (&self.nodes[*a].value.data, &self.nodes[*b].value.data);
                    acc(&mut grads, *a, &[bsz, m, k], |da| {
                        for i in 0..bsz {
                            gemm(
                                m, n, k, 1.0,
                                &g.data[i * m * n..(i + 1) * m * n], false,
                                &bd[i * k * n..(i + 1) * k * n], true,
                                1.0,
                                &mut da.data[i * m * k..(i + 1) * m * k],
                            );
                        }
                    });
                    acc(&mut grads, *b, &[bsz, k, n], |db| {
                        for i in 0..bsz {
                            gemm(
                                k, m, n, 1.0,
                                &ad[i * m * k..(i + 1) * m * k], true,
                                &g.data[i * m * n..(i + 1) * m * n], false,
                                1.0,
                                &mut db.data[i * k * n..(i + 1) * k * n],
                            );
                        }
                    });
                }
                Op::Add { a, b } => {
                    let shape = self.nodes[*a].value.shape.clone();
                    acc(&mut grads, *a, &shape, |da| da.add_in_place(&g));
                    acc(&mut grads, *b, &shape, |db| db.add_in_place(&g));
                }
                Op::AddBias { a, b } => {
                    let shape = self.nodes[*a].value.shape.clone();
                    let n = *shape.last().unwrap();
                    acc(&mut grads, *a, &shape, |da| da.add_in_place(&g));
                    acc(&mut grads, *b, &[n], |db| {
                        for row in g.data.chunks(n) {
                            for (d, v) in db.data.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    });
                }
                Op::Scale { a, c } => {
                    let shape = self.nodes[*a].value.shape.clone();
                    acc(&mut grads, *a, &shape, |da| {
                        for (d, v) in da.data.iter_mut().zip(&g.data) {
                            *d += c * v;
                        }
                    });
                }
                Op::Gelu { a, tanh_aux } => {
                    let x = &self.nodes[*a].value;
                    let shape = x.shape.clone();
                    acc(&mut grads, *a, &shape, |da| {
                        for i in 0..x.numel() {
                            let xi = x.data[i];
                            let t = tanh_aux[i];
                            let d_inner = GELU_C * (1.0 + 3.0 * GELU_A * xi * xi);
                            let deriv = 0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * d_inner;
                            da.data[i] += g.data[i] * deriv;
                        }
                    });
                }
                Op::LayerNorm { x, gain, bias, stats } => {
                    let xv = &self.nodes[*x].value;
                    let n = *xv.shape.last().unwrap();
                    let gd = &self.nodes[*gain].value.data;
                    let shape = xv.shape.clone();
                    acc(&mut grads, *x, &shape, |dx| {
                        for (r, (xrow, grow)) in xv.data.chunks(n).zip(g.data.chunks(n)).enumerate() {
                            let (mean, rstd) = (stats[2 * r], stats[2 * r + 1]);
                            let mut sum_dxhat = 0.0;
                            let mut sum_dxhat_xhat = 0.0;
                            for j in 0..n {
                                let xhat = (xrow[j] - mean) * rstd;
                                let dxhat = grow[j] * gd[j];
                                sum_dxhat += dxhat;
                                sum_dxhat_xhat += dxhat * xhat;
                            }
                            let inv_n = 1.0 / n as f64;
                            for j in 0..n {
                                let xhat = (xrow[j] - mean) * rstd;
                                let dxhat = grow[j] * gd[j];
                                dx.data[r * n + j] += rstd
                                    * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                            }
                        }
                    });
                    acc(&mut grads, *gain, &[n], |dg| {
                        for (r, (xrow, grow)) in xv.data.chunks(n).zip(g.data.chunks(n)).enumerate() {
                            let (mean, rstd) = (stats[2 * r], stats[2 * r + 1]);
                            for j in 0..n {
                                dg.data[j] += grow[j] * (xrow[j] - mean) * rstd;
                            }
                        }
                    });
                    acc(&mut grads, *bias, &[n], |db| {
                        for grow in g.data.chunks(n) {
                            for (d, v) in db.data.iter_mut().zip(grow) {
                                *d += v;
                            }
                        }
                    });
                }
                Op::Softmax { a } => {
                    let p = &self.nodes[id].value;
                    let n = *p.shape.last().unwrap();
                    let shape = p.shape.clone();
                    acc(&mut grads, *a, &shape, |da| {
                        for ((prow, grow), drow) in
                            p.data.chunks(n).zip(g.data.chunks(n)).zip(da.data.chunks_mut(n))
                        {
                            let dot: f64 = prow.iter().zip(grow).map(|(p, g)| p * g).sum();
                            for j in 0..n {
                                drow[j] += prow[j] * (grow[j] - dot);
                            }
                        }
                    });
                }
                Op::AttnProbs { q, k, scale } => {
                    let p = &self.nodes[id].value;
                    let (h, tq, tk) = (p.shape[0], p.shape[1], p.shape[2]);
                    let d = self.nodes[*q].value.shape[2];
                    let (qd, kd) = (&self.nodes[*q].value.data, &self.nodes[*k].value.data);
                    // dscores = p * (dp - rowdot(dp, p)); dq = scale*dscores*k;
                    // dk = scale*dscores^T*q. Masked entries have p=0 so their
                    // score gradient vanishes without consulting the mask.
                    let mut dscores = vec![0.0; h * tq * tk];
                    for i in 0..h {
                        for r in 0..tq {
                            let off = (i * tq + r) * tk;
                            let prow = &p.data[off..off + tk];
                            let grow = &g.data[off..off + tk];
                            let dot: f64 = prow.iter().zip(grow).map(|(p, g)| p * g).sum();
                            for j in 0..tk {
                                dscores[off + j] = prow[j] * (grow[j] - dot);
                            }
                        }
                    }
                    acc(&mut grads, *q, &[h, tq, d], |dq| {
                        for i in 0..h {
                            gemm(
                                tq, tk, d, *scale,
                                &dscores[i * tq * tk..(i + 1) * tq * tk], false,
                                &kd[i * tk * d..(i + 1) * tk * d], false,
                                1.0,
                                &mut dq.data[i * tq * d..(i + 1) * tq * d],
                            );
                        }
                    });
                    acc(&mut grads, *k, &[h, tk, d], |dk| {
                        for i in 0..h {
                            gemm(
                                tk, tq, d, *scale,
                                &dscores[i * tq * tk..(i + 1) * tq * tk], true,
                                &qd[i * tq * d..(i + 1) * tq * d], false,
                                1.0,
                                &mut dk.data[i * tk * d..(i + 1) * tk * d],
                            );
                        }
                    });
                }
                Op::SplitHeads { a, nheads } => {
                    let (t, d_model) = (self.nodes[*a].value.shape[0], self.nodes[*a].value.shape[1]);
                    let dh = d_model / nheads;
                    let nheads = *nheads;
                    acc(&mut grads, *a, &[t, d_model], |da| {
                        for h in 0..nheads {
                            for i in 0..t {
                                let src = &g.data[(h * t + i) * dh..(h * t + i + 1) * dh];
                                for (j, v) in src.iter().enumerate() {
                                    da.data[i * d_model + h * dh + j] += v;
                                }
                            }
                        }
                    });
                }
                Op::MergeHeads { a } => {
                    let s = self.nodes[*a].value.shape.clone();
                    let (h, t, dh) = (s[0], s[1], s[2]);
                    acc(&mut grads, *a, &s, |da| {
                        for hh in 0..h {
                            for i in 0..t {
                                let src = &g.data[i * h * dh + hh * dh..i * h * dh + (hh + 1) * dh];
                                for (j, v) in src.iter().enumerate() {
                                    da.data[(hh * t + i) * dh + j] += v;
                                }
                            }
                        }
                    });
                }
                Op::WeightedSum { a, weights } => {
                    let shape = self.nodes[*a].value.shape.clone();
                    let gs = g.data[0];
                    acc(&mut grads, *a, &shape, |da| {
                        for (d, w) in da.data.iter_mut().zip(weights) {
                            *d += gs * w;
                        }
                    });
                }
                Op::CrossEntropyMean { logits, targets, probs } => {
                    let (n, c) = (self.nodes[*logits].value.shape[0], self.nodes[*logits].value.shape[1]);
                    let gs = g.data[0] / n as f64;
                    acc(&mut grads, *logits, &[n, c], |dl| {
                        for i in 0..n {
                            for j in 0..c {
                                let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                                dl.data[i * c + j] += gs * (probs[i * c + j] - onehot);
                            }
                        }
                    });
                }
            }
            grads[id] = Some(g);
        }
        Ok(grads)
    }
}

/// Standard bias-corrected Adam.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[&Tensor], lr: f64) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(p.numel(), g.numel());
            for i in 0..p.numel() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Learning-rate schedule: linear 0 -> peak over the warmup, then cosine
/// peak -> 0 over the remainder.
pub fn lr_at(step: usize, peak_lr: f64, warmup_steps: usize, total_steps: usize) -> f64 {
    debug_assert!(warmup_steps < total_steps);
    if step < warmup_steps {
        peak_lr * step as f64 / warmup_steps as f64
    } else {
        let t = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
        peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}
