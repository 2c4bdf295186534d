//! Tape-based reverse-mode differentiation.
//!
//! Every operation on a [`Graph`] computes its value eagerly and appends a
//! node to the tape. [`Graph::backward`] walks the tape in exact reverse
//! recording order, so gradient accumulation order is fixed by the forward
//! pass and results are bitwise reproducible.

use std::collections::HashMap;

use super::kernels::{gemm, softmax_row};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::{Error, Result};

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    ScatterRows {
        src: Var,
        idx: Vec<usize>,
    },
    ConcatCols(Var, Var),
    SwapAxes12 {
        x: Var,
        dims: [usize; 4],
    },
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: usize,
        probs: Vec<f64>,
        count: usize,
    },
    MeanSquaredRows {
        x: Var,
        target: Vec<f64>,
    },
    StraightThrough(Var),
    MulConst {
        x: Var,
        factor: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Result of a masked cross-entropy: the scalar loss and how many rows counted.
#[derive(Clone, Copy, Debug)]
pub struct CrossEntropyLoss {
    pub loss: Var,
    /// Rows that were not `ignore_index`. Zero means the loss is defined as 0.
    pub counted: usize,
}

impl CrossEntropyLoss {
    pub fn all_ignored(&self) -> bool {
        self.counted == 0
    }
}

/// The gradient tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    macs: u64,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates performed by the matrix products recorded so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient buffer on `backward`.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter as a trainable leaf. Binding the same id twice
    /// returns the same node, so each parameter gets exactly one gradient buffer.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.variable(store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    /// `[M×K]·[K×N]`, or `[M×K]·[N×K]ᵀ` when `trans_b`.
    pub fn matmul_ext(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 {
            return Err(shape_err("matmul", av, bv));
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let (bk, n) = if trans_b {
            (bv.shape()[1], bv.shape()[0])
        } else {
            (bv.shape()[0], bv.shape()[1])
        };
        if k != bk {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            av.data(),
            false,
            bv.data(),
            trans_b,
            &mut out,
            false,
        );
        self.macs += (m * k * n) as u64;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, trans_b },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ext(a, b, false)
    }

    /// Batched product over the leading axis: `[B×M×K]·[B×K×N]` (or `[B×N×K]ᵀ`).
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 3 || bv.shape().len() != 3 || av.shape()[0] != bv.shape()[0] {
            return Err(shape_err("batch_matmul", av, bv));
        }
        let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let (bk, n) = if trans_b {
            (bv.shape()[2], bv.shape()[1])
        } else {
            (bv.shape()[1], bv.shape()[2])
        };
        if k != bk {
            return Err(shape_err("batch_matmul", av, bv));
        }
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &av.data()[i * m * k..(i + 1) * m * k],
                false,
                &bv.data()[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        self.macs += (batch * m * k * n) as u64;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![batch, m, n], out)?,
            Op::BatchMatMul { a, b, trans_b },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds a length-`C` vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.len() != xv.cols() {
            return Err(shape_err("add_bias", xv, bv));
        }
        let c = xv.cols();
        let mut value = xv.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % c];
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddBias { x, bias }, rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v *= s);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, s), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Normalizes each last-axis row to zero mean and unit variance, then applies
    /// the affine `gain` and `bias` (both of length `d`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.len() != d || bv.len() != d || d == 0 {
            return Err(shape_err("layer_norm", xv, gv));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let c = value.cols();
        for row in value.data_mut().chunks_mut(c.max(1)) {
            softmax_row(row, None);
        }
        let rg = self.rg(x);
        self.push(value, Op::Softmax(x), rg)
    }

    /// Softmax over the last axis of `x: [G·heads × R × C]` where `mask: [G × R × C]`
    /// marks allowed entries and is shared across the `heads` consecutive groups.
    /// Masked entries get probability exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool], heads: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 3 {
            return Err(shape_err("masked_softmax", xv, xv));
        }
        let (g, r, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if heads == 0 || g % heads != 0 || mask.len() != (g / heads) * r * c {
            return Err(Error::Shape {
                op: "masked_softmax",
                lhs: xv.shape().to_vec(),
                rhs: vec![mask.len(), heads],
            });
        }
        let mut value = xv.clone();
        for (row_idx, row) in value.data_mut().chunks_mut(c).enumerate() {
            let group = row_idx / r;
            let within = row_idx % r;
            let m0 = ((group / heads) * r + within) * c;
            softmax_row(row, Some(&mask[m0..m0 + c]));
        }
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Row lookup: `out[i] = table[idx[i]]`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, c) = (tv.rows(), tv.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: tv.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(tv.row(i));
        }
        let value = Tensor::new(vec![idx.len(), c], out)?;
        let rg = self.rg(table);
        Ok(self.push(
            value,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Scatter-add: `out: [n_rows × C]` with `out[idx[i]] += src[i]`.
    pub fn scatter_rows(&mut self, src: Var, idx: &[usize], n_rows: usize) -> Result<Var> {
        let sv = self.value(src);
        let c = sv.cols();
        if sv.rows() != idx.len() || idx.iter().any(|&i| i >= n_rows) {
            return Err(Error::Shape {
                op: "scatter_rows",
                lhs: sv.shape().to_vec(),
                rhs: vec![idx.len(), n_rows],
            });
        }
        let mut out = vec![0.0; n_rows * c];
        for (i, &dst) in idx.iter().enumerate() {
            for (o, s) in out[dst * c..(dst + 1) * c].iter_mut().zip(sv.row(i)) {
                *o += s;
            }
        }
        let value = Tensor::new(vec![n_rows, c], out)?;
        let rg = self.rg(src);
        Ok(self.push(
            value,
            Op::ScatterRows {
                src,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// `[M×C1] ++ [M×C2] -> [M×(C1+C2)]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(shape_err("concat_cols", av, bv));
        }
        let (m, c1, c2) = (av.rows(), av.cols(), bv.cols());
        let mut out = Vec::with_capacity(m * (c1 + c2));
        for r in 0..m {
            out.extend_from_slice(av.row(r));
            out.extend_from_slice(bv.row(r));
        }
        let value = Tensor::new(vec![m, c1 + c2], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatCols(a, b), rg))
    }

    /// `[A×B×C×D] -> [A×C×B×D]`; used to move attention heads next to the batch axis.
    pub fn swap_axes_12(&mut self, x: Var, dims: [usize; 4]) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape {
                op: "swap_axes_12",
                lhs: xv.shape().to_vec(),
                rhs: dims.to_vec(),
            });
        }
        let out = swap12(xv.data(), dims);
        let [a, b, c, d] = dims;
        let value = Tensor::new(vec![a, c, b, d], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SwapAxes12 { x, dims }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Mean negative log-softmax of `targets` over rows of `logits: [B×V]`,
    /// skipping rows whose target is `ignore_index`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore_index: usize,
    ) -> Result<CrossEntropyLoss> {
        let lv = self.value(logits);
        let (b, v) = (lv.rows(), lv.cols());
        if targets.len() != b {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != ignore_index && t >= v) {
            return Err(Error::Shape {
                op: "softmax_cross_entropy target",
                lhs: vec![v],
                rhs: vec![bad],
            });
        }
        let mut probs = lv.data().to_vec();
        let mut total = 0.0;
        let mut count = 0;
        for (r, row) in probs.chunks_mut(v).enumerate() {
            let t = targets[r];
            if t == ignore_index {
                row.fill(0.0);
                continue;
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            total -= row[t] - log_z;
            for x in row.iter_mut() {
                *x = (*x - log_z).exp();
            }
            count += 1;
        }
        let loss = if count == 0 {
            tracing::warn!("softmax_cross_entropy: every row is ignore_index; loss defined as 0");
            0.0
        } else {
            total / count as f64
        };
        let rg = self.rg(logits);
        let var = self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore: ignore_index,
                probs,
                count,
            },
            rg,
        );
        Ok(CrossEntropyLoss {
            loss: var,
            counted: count,
        })
    }

    /// `(1/rows) · Σ ‖x_i − target_i‖²` against a constant target.
    pub fn mean_squared_rows(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != target.shape() {
            return Err(shape_err("mean_squared_rows", xv, target));
        }
        let rows = xv.rows().max(1) as f64;
        let loss = xv
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / rows;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MeanSquaredRows {
                x,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    /// Forward value is `replacement`; the gradient passes to `x` unchanged.
    pub fn straight_through(&mut self, x: Var, replacement: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != replacement.shape() {
            return Err(shape_err("straight_through", xv, &replacement));
        }
        let rg = self.rg(x);
        Ok(self.push(replacement, Op::StraightThrough(x), rg))
    }

    /// Elementwise product with a constant (dropout masks, fixed scalings).
    pub fn mul_const(&mut self, x: Var, factor: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != factor.len() {
            return Err(Error::Shape {
                op: "mul_const",
                lhs: xv.shape().to_vec(),
                rhs: vec![factor.len()],
            });
        }
        let data = xv.data().iter().zip(&factor).map(|(a, f)| a * f).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MulConst { x, factor }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let ov = self.value(out);
        if ov.len() != 1 {
            return Err(Error::Shape {
                op: "backward (scalar output required)",
                lhs: ov.shape().to_vec(),
                rhs: vec![1],
            });
        }
        self.backward_with_seed(out, Tensor::new(ov.shape().to_vec(), vec![1.0])?)
    }

    /// Reverse pass seeded with an arbitrary output adjoint.
    pub fn backward_with_seed(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(out).shape() {
            return Err(shape_err("backward seed", self.value(out), &seed));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed.into_data());
        let mut leaves: Vec<Option<Tensor>> = vec![None; self.nodes.len()];

        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                leaves[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
            }
        }
        Ok(Gradients {
            leaves,
            params: self.params.clone(),
        })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = node.value.shape()[1];
                if let Some(ga) = self.acc(grads, a) {
                    // da = g·bᵀ (or g·b when b is stored transposed)
                    gemm(m, n, k, g, false, bv.data(), !trans_b, ga, true);
                }
                if let Some(gb) = self.acc(grads, b) {
                    if trans_b {
                        gemm(n, m, k, g, true, av.data(), false, gb, true);
                    } else {
                        gemm(k, m, n, av.data(), true, g, false, gb, true);
                    }
                }
            }
            &Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = node.value.shape()[2];
                if let Some(ga) = self.acc(grads, a) {
                    for i in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &bv.data()[i * k * n..(i + 1) * k * n],
                            !trans_b,
                            &mut ga[i * m * k..(i + 1) * m * k],
                            true,
                        );
                    }
                }
                if let Some(gb) = self.acc(grads, b) {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &av.data()[i * m * k..(i + 1) * m * k];
                        let out = &mut gb[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            gemm(n, m, k, gi, true, ai, false, out, true);
                        } else {
                            gemm(k, m, n, ai, true, gi, false, out, true);
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            &Op::AddBias { x, bias } => {
                if let Some(gx) = self.acc(grads, x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                let c = node.value.cols();
                if let Some(gb) = self.acc(grads, bias) {
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
            }
            &Op::Scale(x, s) => {
                if let Some(gx) = self.acc(grads, x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += s * b);
                }
            }
            &Op::Relu(x) => {
                let xv = self.value(x).data();
                if let Some(gx) = self.acc(grads, x) {
                    for ((a, b), v) in gx.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *a += b;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let gainv = self.value(*gain).data();
                if let Some(gg) = self.acc(grads, *gain) {
                    for (r, row) in g.chunks(d).enumerate() {
                        for j in 0..d {
                            gg[j] += row[j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for row in g.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let mut dxhat = vec![0.0; d];
                    for (r, row) in g.chunks(d).enumerate() {
                        let xh = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = row[j] * gainv[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx =
                            dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gx[r * d + j] += inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
            }
            &Op::Softmax(x) => {
                let c = node.value.cols();
                let y = node.value.data();
                if let Some(gx) = self.acc(grads, x) {
                    for ((gr, yr), out) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            out[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::GatherRows { table, idx } => {
                let c = node.value.cols();
                if let Some(gt) = self.acc(grads, *table) {
                    for (i, &r) in idx.iter().enumerate() {
                        for j in 0..c {
                            gt[r * c + j] += g[i * c + j];
                        }
                    }
                }
            }
            Op::ScatterRows { src, idx } => {
                let c = node.value.cols();
                if let Some(gs) = self.acc(grads, *src) {
                    for (i, &r) in idx.iter().enumerate() {
                        for j in 0..c {
                            gs[i * c + j] += g[r * c + j];
                        }
                    }
                }
            }
            &Op::ConcatCols(a, b) => {
                let c1 = self.value(a).cols();
                let c2 = self.value(b).cols();
                let c = c1 + c2;
                if let Some(ga) = self.acc(grads, a) {
                    for (r, row) in g.chunks(c).enumerate() {
                        ga[r * c1..(r + 1) * c1]
                            .iter_mut()
                            .zip(&row[..c1])
                            .for_each(|(x, y)| *x += y);
                    }
                }
                if let Some(gb) = self.acc(grads, b) {
                    for (r, row) in g.chunks(c).enumerate() {
                        gb[r * c2..(r + 1) * c2]
                            .iter_mut()
                            .zip(&row[c1..])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            &Op::SwapAxes12 { x, dims } => {
                if let Some(gx) = self.acc(grads, x) {
                    let [a, b, c, d] = dims;
                    let back = swap12(g, [a, c, b, d]);
                    gx.iter_mut().zip(&back).for_each(|(p, q)| *p += q);
                }
            }
            &Op::Reshape(x) | &Op::StraightThrough(x) => {
                if let Some(gx) = self.acc(grads, x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let v = self.value(*logits).cols();
                let scale = g[0] / *count as f64;
                if let Some(gl) = self.acc(grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        for j in 0..v {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[r * v + j] += scale * (probs[r * v + j] - onehot);
                        }
                    }
                }
            }
            Op::MeanSquaredRows { x, target } => {
                let xv = self.value(*x);
                let scale = 2.0 * g[0] / xv.rows().max(1) as f64;
                if let Some(gx) = self.acc(grads, *x) {
                    for ((o, a), b) in gx.iter_mut().zip(xv.data()).zip(target) {
                        *o += scale * (a - b);
                    }
                }
            }
            Op::MulConst { x, factor } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for ((o, a), f) in gx.iter_mut().zip(g).zip(factor) {
                        *o += a * f;
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
        }
    }
}

fn swap12(src: &[f64], [a, b, c, d]: [usize; 4]) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let s = ((i * b + j) * c + k) * d;
                let t = ((i * c + k) * b + j) * d;
                out[t..t + d].copy_from_slice(&src[s..s + d]);
            }
        }
    }
    out
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient of a leaf; `None` when no path reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|&v| self.get(v))
    }

    /// Gradients for every parameter of `store`, indexed by [`ParamId`].
    pub fn for_params(&self, store: &ParamStore) -> ParamGrads {
        ParamGrads(
            (0..store.len())
                .map(|i| self.param(ParamId(i)).cloned())
                .collect(),
        )
    }
}

/// Per-parameter gradients (absent entries mean zero gradient).
#[derive(Clone, Debug, Default)]
pub struct ParamGrads(pub Vec<Option<Tensor>>);

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(id.0).and_then(Option::as_ref)
    }

    /// Elementwise sum, used to accumulate micro-batches in a fixed order.
    pub fn accumulate(&mut self, other: ParamGrads) {
        if self.0.is_empty() {
            *self = other;
            return;
        }
        for (dst, src) in self.0.iter_mut().zip(other.0) {
            match (dst.as_mut(), src) {
                (Some(d), Some(s)) => d
                    .data_mut()
                    .iter_mut()
                    .zip(s.data())
                    .for_each(|(a, b)| *a += b),
                (None, Some(s)) => *dst = Some(s),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.0.iter_mut().flatten() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
