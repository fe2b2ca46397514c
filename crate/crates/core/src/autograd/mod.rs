//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node holding its forward value and whatever it needs
//! to run its backward rule. Node creation order is a topological order, so
//! [`Tape::backward`] simply walks the nodes in reverse.

mod dropout;
mod gradcheck;
mod params;

pub use dropout::{dropout_backward, dropout_forward, DropoutMask, DropoutMode};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use params::{ParamId, ParamStore, Parameter};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm_acc, Real, Tensor};

/// Score written into attention slots that point at padding keys.
const MASKED_SCORE: f64 = -1.0e9;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward-rule corruption used as a negative control for the
/// gradient checker.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    GeluGrad,
}

enum Op<T: Real> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddBias { x: Var, bias: Var },
    Mul(Var, Var),
    Scale { x: Var, c: T },
    Sum(Var),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Softmax(Var),
    Dropout { x: Var, mask: DropoutMask, mode: DropoutMode },
    GatherRows { x: Var, rows: Vec<usize> },
    MaskKeys { x: Var, masked: Vec<bool> },
    SplitHeads { x: Var, batch: usize, seq: usize, heads: usize },
    MergeHeads { x: Var, batch: usize, seq: usize, heads: usize },
    CrossEntropy { logits: Var, targets: Vec<i64>, ignore: i64, probs: Vec<T>, counted: usize },
    Reshape(Var),
    SelectCol { x: Var, col: usize },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Per-node gradients produced by one backward pass.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the root with respect to `v`, or `None` when `v` does not
    /// influence the root.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Output of [`Tape::cross_entropy`].
#[derive(Debug, Clone, Copy)]
pub struct LossVar {
    pub var: Var,
    /// Rows that contributed (targets not equal to the ignore index).
    pub counted: usize,
}

#[derive(Default)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    fault: Option<Fault>,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, name: &str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::non_finite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("leaf", value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        let p = store.get(id);
        let name = p.name.clone();
        self.push(&name, p.value.clone(), Op::Param(id))
    }

    /// `[m,k]·[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `[m,k]·[n,k]ᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = vec![T::ZERO; m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n, false, trans_b);
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::MatMul { a, b, trans_b })
    }

    /// Batched product `[n,m,k]·[n,k,p]`, or `[n,m,k]·[n,p,k]ᵀ` with `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(shape_err("bmm", sa, sb));
        }
        let mut out = vec![T::ZERO; batch * m * n];
        for i in 0..batch {
            gemm_acc(
                &av.data()[i * m * k..(i + 1) * m * k],
                &bv.data()[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
                false,
                trans_b,
            );
        }
        let value = Tensor::new(vec![batch, m, n], out)?;
        self.push("bmm", value, Op::BatchMatMul { a, b, trans_b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push("add", value, Op::Add(a, b))
    }

    /// Adds a `[c]` bias to every row of `x[..., c]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = xv.cols();
        if bv.numel() != c {
            return Err(shape_err("add_bias", xv.shape(), bv.shape()));
        }
        let b = bv.data();
        let mut data = xv.data().to_vec();
        if c > 0 {
            for row in data.chunks_mut(c) {
                for (o, &bb) in row.iter_mut().zip(b) {
                    *o += bb;
                }
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("add_bias", value, Op::AddBias { x, bias })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push("mul", value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let value = self.value(x).map(|v| v * c);
        self.push("scale", value, Op::Scale { x, c })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", value, Op::Sum(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(gelu_value);
        self.push("gelu", value, Op::Gelu(x))
    }

    /// Row-wise layer normalization over the last dimension.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Config(format!("layer norm eps must be > 0, got {eps}")));
        }
        let xv = self.value(x);
        let c = xv.cols();
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.numel() != c || bv.numel() != c {
            return Err(shape_err("layer_norm", xv.shape(), gv.shape()));
        }
        let r = xv.rows();
        let eps = T::from_f64(eps);
        let inv_c = T::ONE / T::from_f64(c as f64);
        let mut xhat = vec![T::ZERO; r * c];
        let mut rstd = vec![T::ZERO; r];
        let mut out = vec![T::ZERO; r * c];
        for i in 0..r {
            let row = &xv.data()[i * c..(i + 1) * c];
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_c;
            let mut var = T::ZERO;
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_c;
            let rs = T::ONE / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Softmax over the last dimension with row-max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = softmax_rows(self.value(x))?;
        self.push("softmax", value, Op::Softmax(x))
    }

    /// Inverted dropout. The sampled mask is kept on the tape and `mode`
    /// selects the backward rule.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        rng: &mut R,
        training: bool,
        mode: DropoutMode,
    ) -> Result<Var> {
        dropout::check_rate(p)?;
        if !training || p == 0.0 {
            return Ok(x);
        }
        let (value, mask) = dropout_forward(self.value(x), p, rng, training)?;
        self.push("dropout", value, Op::Dropout { x, mask, mode })
    }

    /// Dropout with a caller-supplied mask (used to freeze stochasticity).
    pub fn dropout_with_mask(&mut self, x: Var, mask: DropoutMask, mode: DropoutMode) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != mask.shape.as_slice() {
            return Err(shape_err("dropout", xv.shape(), &mask.shape));
        }
        let scale = T::ONE / (T::ONE - T::from_f64(mask.p));
        let data = xv
            .data()
            .iter()
            .zip(&mask.keep)
            .map(|(&v, &k)| if k { v * scale } else { T::ZERO })
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("dropout", value, Op::Dropout { x, mask, mode })
    }

    /// Selects rows of `x` viewed as `[rows, cols]`. Serves both embedding
    /// lookup and the packing of masked slots.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(Error::Index(format!("row {i} out of range for {r} rows")));
            }
            data.extend_from_slice(&xv.data()[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(vec![rows.len(), c], data)?;
        self.push(
            "gather_rows",
            value,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// Blanks attention scores `[batch*heads, seq, seq]` whose key index is at
    /// or beyond the valid length of its sequence.
    pub fn mask_keys(&mut self, x: Var, valid_lens: &[usize], heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 || s[1] != s[2] || s[0] != valid_lens.len() * heads {
            return Err(Error::Shape(format!(
                "mask_keys: scores {s:?} vs {} sequences × {heads} heads",
                valid_lens.len()
            )));
        }
        let seq = s[1];
        let mut masked = vec![false; xv.numel()];
        let mut data = xv.data().to_vec();
        let fill = T::from_f64(MASKED_SCORE);
        for (n, slab) in data.chunks_mut(seq * seq).enumerate() {
            let len = valid_lens[n / heads];
            for i in 0..seq {
                for j in len..seq {
                    slab[i * seq + j] = fill;
                    masked[n * seq * seq + i * seq + j] = true;
                }
            }
        }
        let value = Tensor::new(s.to_vec(), data)?;
        self.push("mask_keys", value, Op::MaskKeys { x, masked })
    }

    /// `[batch*seq, heads*d]` → `[batch*heads, seq, d]`.
    pub fn split_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let h = xv.cols();
        if xv.rows() != batch * seq || heads == 0 || !h.is_multiple_of(heads) {
            return Err(Error::Shape(format!(
                "split_heads: {:?} into batch {batch}, seq {seq}, heads {heads}",
                xv.shape()
            )));
        }
        let d = h / heads;
        let mut out = vec![T::ZERO; xv.numel()];
        let src = xv.data();
        for b in 0..batch {
            for s in 0..seq {
                for a in 0..heads {
                    let from = (b * seq + s) * h + a * d;
                    let to = ((b * heads + a) * seq + s) * d;
                    out[to..to + d].copy_from_slice(&src[from..from + d]);
                }
            }
        }
        let value = Tensor::new(vec![batch * heads, seq, d], out)?;
        self.push(
            "split_heads",
            value,
            Op::SplitHeads {
                x,
                batch,
                seq,
                heads,
            },
        )
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 || s[0] != batch * heads || s[1] != seq {
            return Err(Error::Shape(format!(
                "merge_heads: {s:?} from batch {batch}, seq {seq}, heads {heads}"
            )));
        }
        let d = s[2];
        let h = d * heads;
        let mut out = vec![T::ZERO; xv.numel()];
        let src = xv.data();
        for b in 0..batch {
            for s in 0..seq {
                for a in 0..heads {
                    let to = (b * seq + s) * h + a * d;
                    let from = ((b * heads + a) * seq + s) * d;
                    out[to..to + d].copy_from_slice(&src[from..from + d]);
                }
            }
        }
        let value = Tensor::new(vec![batch * seq, h], out)?;
        self.push(
            "merge_heads",
            value,
            Op::MergeHeads {
                x,
                batch,
                seq,
                heads,
            },
        )
    }

    /// Mean negative log-likelihood over rows whose target is not `ignore`.
    /// With no counted rows the loss is 0 and no gradient flows.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[i64], ignore: i64) -> Result<LossVar> {
        let lv = self.value(logits);
        let (r, c) = (lv.rows(), lv.cols());
        if targets.len() != r {
            return Err(Error::Shape(format!(
                "cross_entropy: {r} logit rows but {} targets",
                targets.len()
            )));
        }
        let mut probs = vec![T::ZERO; r * c];
        let mut total = T::ZERO;
        let mut counted = 0usize;
        for (i, &t) in targets.iter().enumerate() {
            if t == ignore {
                continue;
            }
            if t < 0 || t as usize >= c {
                return Err(Error::Index(format!(
                    "cross_entropy: target {t} outside [0, {c})"
                )));
            }
            let row = &lv.data()[i * c..(i + 1) * c];
            let mx = row.iter().fold(row[0], |m, &v| m.max(v));
            let mut z = T::ZERO;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                probs[i * c + j] = e;
                z += e;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p = *p / z;
            }
            total += z.ln() + mx - row[t as usize];
            counted += 1;
        }
        let mean = if counted == 0 {
            T::ZERO
        } else {
            total / T::from_f64(counted as f64)
        };
        let var = self.push(
            "cross_entropy",
            Tensor::scalar(mean),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                counted,
            },
        )?;
        Ok(LossVar { var, counted })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x))
    }

    /// Column `col` of `x[r, c]` as an `[r]` vector.
    pub fn select_col(&mut self, x: Var, col: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if col >= c {
            return Err(Error::Index(format!("column {col} out of range for {c}")));
        }
        let data = (0..r).map(|i| xv.data()[i * c + col]).collect();
        let value = Tensor::new(vec![r], data)?;
        self.push("select_col", value, Op::SelectCol { x, col })
    }

    /// Reverse pass from the scalar `root`. Parameter gradients are added into
    /// `params`; per-node gradients are returned for inspection.
    pub fn backward(&self, root: Var, params: &mut ParamStore<T>) -> Result<Gradients<T>> {
        if self.value(root).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::ONE]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backward_node(node, &g, &mut grads, params)?;
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::new(n.value.shape().to_vec(), d).expect("grad shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(
        &self,
        node: &Node<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        params: &mut ParamStore<T>,
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let p = params.get_mut(*id);
                if p.grad.numel() != g.len() {
                    return Err(Error::TapeCorruption(format!(
                        "gradient for {} has {} elements, parameter has {}",
                        p.name,
                        g.len(),
                        p.grad.numel()
                    )));
                }
                for (acc, &v) in p.grad.data_mut().iter_mut().zip(g) {
                    *acc += v;
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = node.value.shape()[1];
                let mut da = vec![T::ZERO; m * k];
                let mut db = vec![T::ZERO; k * n];
                if *trans_b {
                    gemm_acc(g, bv.data(), &mut da, m, n, k, false, false);
                    gemm_acc(g, av.data(), &mut db, n, m, k, true, false);
                } else {
                    gemm_acc(g, bv.data(), &mut da, m, n, k, false, true);
                    gemm_acc(av.data(), g, &mut db, k, m, n, true, false);
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = node.value.shape()[2];
                let mut da = vec![T::ZERO; batch * m * k];
                let mut db = vec![T::ZERO; batch * k * n];
                for i in 0..batch {
                    let gs = &g[i * m * n..(i + 1) * m * n];
                    let a_s = &av.data()[i * m * k..(i + 1) * m * k];
                    let b_s = &bv.data()[i * k * n..(i + 1) * k * n];
                    let da_s = &mut da[i * m * k..(i + 1) * m * k];
                    let db_s = &mut db[i * k * n..(i + 1) * k * n];
                    if *trans_b {
                        gemm_acc(gs, b_s, da_s, m, n, k, false, false);
                        gemm_acc(gs, a_s, db_s, n, m, k, true, false);
                    } else {
                        gemm_acc(gs, b_s, da_s, m, n, k, false, true);
                        gemm_acc(a_s, gs, db_s, k, m, n, true, false);
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.to_vec());
            }
            Op::AddBias { x, bias } => {
                let c = node.value.cols();
                let mut db = vec![T::ZERO; c];
                if c > 0 {
                    for row in g.chunks(c) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
                accumulate(grads, *x, g.to_vec());
                accumulate(grads, *bias, db);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.iter().zip(bv.data()).map(|(&d, &y)| d * y).collect();
                let db = g.iter().zip(av.data()).map(|(&d, &x)| d * x).collect();
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Scale { x, c } => {
                accumulate(grads, *x, g.iter().map(|&d| d * *c).collect());
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Gelu(x) => {
                let skew = match self.fault {
                    Some(Fault::GeluGrad) => T::from_f64(1.5),
                    None => T::ONE,
                };
                let dx = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&d, &v)| d * gelu_grad(v) * skew)
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let c = node.value.cols();
                let r = node.value.rows();
                let gv = self.value(*gain).data();
                let inv_c = T::ONE / T::from_f64(c as f64);
                let mut dgain = vec![T::ZERO; c];
                let mut dbias = vec![T::ZERO; c];
                let mut dx = vec![T::ZERO; r * c];
                let mut dxhat = vec![T::ZERO; c];
                for i in 0..r {
                    let gr = &g[i * c..(i + 1) * c];
                    let hr = &xhat[i * c..(i + 1) * c];
                    let mut mean_d = T::ZERO;
                    let mut mean_dh = T::ZERO;
                    for j in 0..c {
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                        dxhat[j] = gr[j] * gv[j];
                        mean_d += dxhat[j];
                        mean_dh += dxhat[j] * hr[j];
                    }
                    mean_d *= inv_c;
                    mean_dh *= inv_c;
                    for j in 0..c {
                        dx[i * c + j] = rstd[i] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gain, dgain);
                accumulate(grads, *bias, dbias);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let c = node.value.cols();
                let mut dx = vec![T::ZERO; y.len()];
                if c > 0 {
                    for ((dr, yr), gr) in dx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let mut dot = T::ZERO;
                        for (&gy, &yy) in gr.iter().zip(yr) {
                            dot += gy * yy;
                        }
                        for ((d, &gy), &yy) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = yy * (gy - dot);
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Dropout { x, mask, mode } => {
                let up = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
                let dx = dropout_backward(&up, mask, *mode)?;
                accumulate(grads, *x, dx.into_data());
            }
            Op::GatherRows { x, rows } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = vec![T::ZERO; xv.numel()];
                for (k, &i) in rows.iter().enumerate() {
                    for j in 0..c {
                        dx[i * c + j] += g[k * c + j];
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::MaskKeys { x, masked } => {
                let dx = g
                    .iter()
                    .zip(masked)
                    .map(|(&d, &m)| if m { T::ZERO } else { d })
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::SplitHeads {
                x,
                batch,
                seq,
                heads,
            } => {
                let h = self.value(*x).cols();
                let d = h / heads;
                let mut dx = vec![T::ZERO; g.len()];
                for b in 0..*batch {
                    for s in 0..*seq {
                        for a in 0..*heads {
                            let to = (b * seq + s) * h + a * d;
                            let from = ((b * heads + a) * seq + s) * d;
                            dx[to..to + d].copy_from_slice(&g[from..from + d]);
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::MergeHeads {
                x,
                batch,
                seq,
                heads,
            } => {
                let d = self.value(*x).shape()[2];
                let h = d * heads;
                let mut dx = vec![T::ZERO; g.len()];
                for b in 0..*batch {
                    for s in 0..*seq {
                        for a in 0..*heads {
                            let from = (b * seq + s) * h + a * d;
                            let to = ((b * heads + a) * seq + s) * d;
                            dx[to..to + d].copy_from_slice(&g[from..from + d]);
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                counted,
            } => {
                let c = self.value(*logits).cols();
                let mut dx = vec![T::ZERO; probs.len()];
                if *counted > 0 {
                    let w = g[0] / T::from_f64(*counted as f64);
                    for (i, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        for j in 0..c {
                            let onehot = if j == t as usize { T::ONE } else { T::ZERO };
                            dx[i * c + j] = (probs[i * c + j] - onehot) * w;
                        }
                    }
                }
                accumulate(grads, *logits, dx);
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, g.to_vec());
            }
            Op::SelectCol { x, col } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = vec![T::ZERO; xv.numel()];
                for (i, &d) in g.iter().enumerate() {
                    dx[i * c + col] = d;
                }
                accumulate(grads, *x, dx);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_value<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    let du = c * (T::ONE + T::from_f64(3.0) * a * x * x);
    half * (T::ONE + t) + half * x * (T::ONE - t * t) * du
}

/// Softmax over the last dimension, outside of any tape.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.cols();
    if c == 0 && x.numel() > 0 {
        return Err(Error::Shape("softmax over an empty last dimension".into()));
    }
    let mut out = x.data().to_vec();
    if c > 0 {
        for row in out.chunks_mut(c) {
            let mx = row.iter().fold(row[0], |m, &v| m.max(v));
            let mut z = T::ZERO;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v = *v / z;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}
