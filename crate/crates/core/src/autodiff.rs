//! Dense row-major matrices and a tape for reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of a forward pass. [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar node with respect
//! to every recorded node. Parameter tensors enter the tape by reference, so
//! recording a forward pass does not copy model weights.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn scale_assign(&mut self, s: f64) {
        self.data.iter_mut().for_each(|a| *a *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `a · b`
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for p in 0..a.cols {
            let aip = a.data[i * a.cols + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * b.cols..(p + 1) * b.cols];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a · bᵀ`
pub fn matmul_t(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols, "matmul_t shape mismatch");
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · b`
pub fn t_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "t_matmul shape mismatch");
    let mut out = Tensor::zeros(a.cols, b.cols);
    for p in 0..a.rows {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Softmax of `x` over the positions where `mask` is true; masked entries get 0.
pub fn masked_softmax(x: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let valid = |i: usize| mask.is_none_or(|m| m[i]);
    let max = x
        .iter()
        .enumerate()
        .filter(|(i, _)| valid(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| if valid(i) { (v - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// `log Σ exp(x_i)` over valid positions.
pub fn masked_logsumexp(x: &[f64], mask: Option<&[bool]>) -> f64 {
    let valid = |i: usize| mask.is_none_or(|m| m[i]);
    let max = x
        .iter()
        .enumerate()
        .filter(|(i, _)| valid(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = x
        .iter()
        .enumerate()
        .filter(|(i, _)| valid(*i))
        .map(|(_, v)| (v - max).exp())
        .sum();
    max + s.ln()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Pick {
        x: Var,
        index: usize,
    },
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Gelu(..) => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax { .. } => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Gather { .. } => "gather",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::Pick { .. } => "pick",
            Op::Sum(..) => "sum",
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradient of one scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the differentiated scalar.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a leaf that owns its value.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Record a leaf that borrows its value (model parameters).
    pub fn input(&mut self, value: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = matmul_t(self.value(a), self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shape mismatch");
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Add a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((1, self.value(a).cols), r.shape(), "add_row shape mismatch");
        let mut out = self.value(a).clone();
        let cols = out.cols;
        for chunk in out.data.chunks_mut(cols) {
            chunk.iter_mut().zip(&r.data).for_each(|(o, b)| *o += b);
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let out = Tensor::from_vec(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect());
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|v| gelu(*v)).collect());
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise layer normalization with learned `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.cols;
        let mut normed = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; xv.rows];
        let mut out = Tensor::zeros(xv.rows, d);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let n = (row[c] - mean) * is;
                normed[r * d + c] = n;
                out.data[r * d + c] = n * g.data[c] + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        )
    }

    /// Row-wise softmax. `mask` (one flag per column) excludes columns.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Var {
        let xv = self.value(x);
        if let Some(m) = mask {
            assert_eq!(m.len(), xv.cols, "softmax mask length");
        }
        let mut out = Tensor::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let p = masked_softmax(xv.row(r), mask);
            out.data[r * xv.cols..(r + 1) * xv.cols].copy_from_slice(&p);
        }
        self.push(out, Op::Softmax { x })
    }

    /// `-log softmax(logits)[target]` with the logits read as one flat vector.
    pub fn cross_entropy(&mut self, logits: Var, mask: Option<&[bool]>, target: usize) -> Var {
        let x = &self.value(logits).data;
        assert!(target < x.len(), "cross-entropy target out of range");
        let probs = masked_softmax(x, mask);
        let loss = masked_logsumexp(x, mask) - x[target];
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        )
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols);
        for (i, &id) in ids.iter().enumerate() {
            out.data[i * t.cols..(i + 1) * t.cols].copy_from_slice(t.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.rows, width);
        for r in 0..xv.rows {
            out.data[r * width..(r + 1) * width].copy_from_slice(&xv.row(r)[start..start + width]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_vec(count, xv.cols, xv.data[start * xv.cols..(start + count) * xv.cols].to_vec());
        self.push(out, Op::SliceRows { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows, rows, "concat row mismatch");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + pv.cols].copy_from_slice(pv.row(r));
            }
            off += pv.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// One element (flat index) as a `1 × 1` node.
    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        let v = self.value(x).data[index];
        self.push(Tensor::scalar(v), Op::Pick { x, index })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(x))
    }

    /// Fail on the first recorded node holding a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(v) = n.value.data.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    node: i,
                    op: n.op.name(),
                    detail: format!("value {v} in {}x{} output", n.value.rows, n.value.cols),
                });
            }
        }
        Ok(())
    }

    /// Gradients of the `1 × 1` node `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        self.check_finite()?;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !g.is_finite() {
                return Err(Error::Numeric {
                    node: i,
                    op: self.nodes[i].op.name(),
                    detail: "non-finite gradient".into(),
                });
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = matmul_t(&g, self.value(*b));
                    let gb = t_matmul(self.value(*a), &g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = matmul(&g, self.value(*b));
                    let gb = t_matmul(&g, self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        gr.data.iter_mut().zip(g.row(r)).for_each(|(o, v)| *o += v);
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let ga = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&y.data).map(|(p, q)| p * q).collect());
                    let gb = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&x.data).map(|(p, q)| p * q).collect());
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => {
                    let mut ga = g.clone();
                    ga.scale_assign(*s);
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&x.data).map(|(gv, xv)| gv * gelu_grad(*xv)).collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let (rows, d) = (g.rows, g.cols);
                    let mut gx = Tensor::zeros(rows, d);
                    let mut ggain = Tensor::zeros(1, d);
                    let mut gbias = Tensor::zeros(1, d);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let nr = &normed[r * d..(r + 1) * d];
                        let mut sum_gn = 0.0;
                        let mut sum_gn_n = 0.0;
                        for c in 0..d {
                            ggain.data[c] += gr[c] * nr[c];
                            gbias.data[c] += gr[c];
                            let gn = gr[c] * gv.data[c];
                            sum_gn += gn;
                            sum_gn_n += gn * nr[c];
                        }
                        let k = inv_std[r] / d as f64;
                        for c in 0..d {
                            let gn = gr[c] * gv.data[c];
                            gx.data[r * d + c] = k * (d as f64 * gn - sum_gn - nr[c] * sum_gn_n);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gain, ggain);
                    acc(&mut grads, *bias, gbias);
                }
                Op::Softmax { x, .. } => {
                    let y = &node.value;
                    let mut gx = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols {
                            gx.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                    ..
                } => {
                    let s = g.item();
                    let lv = self.value(*logits);
                    let mut gl = Tensor::from_vec(lv.rows, lv.cols, probs.iter().map(|p| p * s).collect());
                    gl.data[*target] -= s;
                    acc(&mut grads, *logits, gl);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut gt = Tensor::zeros(t.rows, t.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        gt.data[id * t.cols..(id + 1) * t.cols]
                            .iter_mut()
                            .zip(g.row(r))
                            .for_each(|(o, v)| *o += v);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Tensor::zeros(xv.rows, xv.cols);
                    for r in 0..g.rows {
                        gx.data[r * xv.cols + start..r * xv.cols + start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SliceRows { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Tensor::zeros(xv.rows, xv.cols);
                    gx.data[start * xv.cols..start * xv.cols + g.len()].copy_from_slice(&g.data);
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).cols;
                        let mut gp = Tensor::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.data[r * w..(r + 1) * w].copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::Pick { x, index } => {
                    let xv = self.value(*x);
                    let mut gx = Tensor::zeros(xv.rows, xv.cols);
                    gx.data[*index] = g.item();
                    acc(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    acc(&mut grads, *x, Tensor::filled(xv.rows, xv.cols, g.item()));
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of `f` with respect to `inputs[which]`.
    fn numeric_grad(inputs: &[Tensor], which: usize, f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> Vec<f64> {
        let h = 1e-5;
        let eval = |ins: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ins.iter().map(|x| t.constant(x.clone())).collect();
            let out = f(&mut t, &vs);
            t.value(out).item()
        };
        (0..inputs[which].len())
            .map(|k| {
                let mut plus = inputs.to_vec();
                plus[which].data[k] += h;
                let mut minus = inputs.to_vec();
                minus[which].data[k] -= h;
                (eval(&plus) - eval(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn check(inputs: Vec<Tensor>, f: &dyn Fn(&mut Tape, &[Var]) -> Var) {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vs);
        let g = t.backward(out).unwrap();
        for (w, v) in vs.iter().enumerate() {
            let num = numeric_grad(&inputs, w, f);
            let zero = Tensor::zeros(inputs[w].rows, inputs[w].cols);
            let ana = g.get(*v).unwrap_or(&zero);
            for (a, n) in ana.data.iter().zip(&num) {
                assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "input {w}: analytic {a} vs numeric {n}");
            }
        }
    }

    fn t(rows: usize, cols: usize, seed: u64) -> Tensor {
        // small deterministic pseudo-random fill
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Tensor::from_vec(rows, cols, data)
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let p = Tensor::from_vec(1, 3, vec![1.5, -2.0, 0.25]);
        let mut tape = Tape::new();
        let v = tape.constant(p.clone());
        let sq = tape.mul(v, v);
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(v).unwrap().data, vec![3.0, -4.0, 0.5]);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = t(3, 4, 1);
        let b = t(4, 2, 2);
        let bt = Tensor::from_vec(2, 4, (0..8).map(|k| b.get(k % 4, k / 4)).collect());
        assert_eq!(matmul(&a, &b), matmul_t(&a, &bt));
        let at = Tensor::from_vec(4, 3, (0..12).map(|k| a.get(k % 3, k / 3)).collect());
        assert_eq!(matmul(&a, &b), t_matmul(&at, &b));
    }

    #[test]
    fn op_gradients_match_finite_differences() {
        check(vec![t(3, 4, 1), t(4, 2, 2)], &|tp, v| {
            let m = tp.matmul(v[0], v[1]);
            let g = tp.gelu(m);
            tp.sum(g)
        });
        check(vec![t(3, 4, 3), t(2, 4, 4)], &|tp, v| {
            let m = tp.matmul_t(v[0], v[1]);
            let s = tp.softmax_rows(m, Some(&[true, false]));
            let w = tp.constant(t(3, 2, 9));
            let p = tp.mul(s, w);
            tp.sum(p)
        });
        check(vec![t(3, 5, 5), t(1, 5, 6), t(1, 5, 7)], &|tp, v| {
            let n = tp.layer_norm(v[0], v[1], v[2]);
            let w = tp.constant(t(3, 5, 8));
            let p = tp.mul(n, w);
            tp.sum(p)
        });
        check(vec![t(6, 1, 10)], &|tp, v| {
            tp.cross_entropy(v[0], Some(&[true, true, false, true, true, false]), 3)
        });
        check(vec![t(5, 3, 11), t(1, 3, 12)], &|tp, v| {
            let g = tp.gather(v[0], &[4, 0, 4]);
            let a = tp.add_row(g, v[1]);
            let l = tp.slice_cols(a, 1, 2);
            let r = tp.slice_cols(a, 0, 1);
            let c = tp.concat_cols(&[l, r]);
            let row = tp.slice_rows(c, 1, 2);
            let sq = tp.mul(row, row);
            let k = tp.pick(sq, 3);
            let s = tp.sum(sq);
            let ks = tp.scale(k, 0.5);
            tp.add(s, ks)
        });
    }

    #[test]
    fn masked_softmax_gradient_is_zero_on_masked_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 4, 3));
        let s = tape.softmax_rows(x, Some(&[true, false, true, false]));
        let w = tape.constant(t(1, 4, 4));
        let p = tape.mul(s, w);
        let out = tape.sum(p);
        let g = tape.backward(out).unwrap();
        let gx = g.get(x).unwrap();
        assert_eq!(gx.data[1], 0.0);
        assert_eq!(gx.data[3], 0.0);
    }

    #[test]
    fn non_finite_values_are_reported_with_node() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(1, 2, vec![1.0, f64::INFINITY]));
        let s = tape.sum(x);
        match tape.backward(s) {
            Err(Error::Numeric { node, op, .. }) => assert_eq!((node, op), (0, "leaf")),
            other => panic!("expected numeric error, got {:?}", other.map(|_| ())),
        }
    }
}
