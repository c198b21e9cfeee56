//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Tape`] records every operation of one forward computation. Values are
//! computed eagerly; [`Tape::backward`] then walks the tape in reverse and
//! accumulates gradients. Accumulation order is fixed by the tape order, so
//! repeated runs produce bit-identical gradients.

use std::sync::Arc;

use super::{ShapeError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TapeError {
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("no valid targets")]
    NoValidTargets,
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    ConcatCols(NodeId, NodeId),
    ConcatRows(Vec<NodeId>),
    GatherRows(NodeId, Arc<[usize]>),
    ScatterAddRows(NodeId, Arc<[usize]>),
    ReplaceRows {
        base: NodeId,
        rows: NodeId,
        index: Arc<[usize]>,
    },
    SumAll(NodeId),
    Mape {
        pred: NodeId,
        /// `1 / (count * target)` for unmasked cells, zero elsewhere.
        inv_weight: Vec<f64>,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `node`; zeros if the loss does not depend on it.
    pub fn get(&self, node: NodeId) -> Tensor {
        match &self.grads[node.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[node.0];
                Tensor::zeros(&[r, c])
            }
        }
    }

    pub fn take(&mut self, node: NodeId) -> Tensor {
        match self.grads[node.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[node.0];
                Tensor::zeros(&[r, c])
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf (inputs, fixed states).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// Adds a `1 x m` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, ShapeError> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.len() != xv.cols() {
            return Err(ShapeError::new(format!(
                "bias of {} values for {} columns",
                bv.len(),
                xv.cols()
            )));
        }
        let m = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(m) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let v = Tensor::matrix(xv.rows(), m, data);
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(v, Op::AddBias(x, bias), rg))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, ShapeError> {
        let av = self.value(a);
        let bv = self.value(b);
        if !av.same_shape(bv) {
            return Err(ShapeError::new(format!(
                "{name} of {}x{} and {}x{}",
                av.rows(),
                av.cols(),
                bv.rows(),
                bv.cols()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::matrix(av.rows(), av.cols(), data))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, factor), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(v, Op::Softplus(a), rg)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.rows() != bv.rows() {
            return Err(ShapeError::new(format!(
                "concat of {} and {} rows",
                av.rows(),
                bv.rows()
            )));
        }
        let (n, p, q) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let v = Tensor::matrix(n, p + q, data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::ConcatCols(a, b), rg))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, ShapeError> {
        let cols = parts.first().map(|&p| self.value(p).cols()).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(ShapeError::new(format!(
                    "row concat of {} and {} columns",
                    cols,
                    pv.cols()
                )));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let v = Tensor::matrix(rows, cols, data);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Output row `k` is input row `index[k]`.
    pub fn gather_rows(&mut self, a: NodeId, index: Arc<[usize]>) -> Result<NodeId, ShapeError> {
        let av = self.value(a);
        let m = av.cols();
        let mut data = Vec::with_capacity(index.len() * m);
        for &i in index.iter() {
            if i >= av.rows() {
                return Err(ShapeError::new(format!("gather row {i} of {}", av.rows())));
            }
            data.extend_from_slice(av.row(i));
        }
        let v = Tensor::matrix(index.len(), m, data);
        let rg = self.rg(a);
        Ok(self.push(v, Op::GatherRows(a, index), rg))
    }

    /// Segment sum: output row `r` is the sum of input rows `k` with
    /// `index[k] == r`, added in ascending `k`.
    pub fn scatter_add_rows(&mut self, a: NodeId, index: Arc<[usize]>, out_rows: usize) -> Result<NodeId, ShapeError> {
        let av = self.value(a);
        if index.len() != av.rows() {
            return Err(ShapeError::new(format!(
                "scatter index of {} for {} rows",
                index.len(),
                av.rows()
            )));
        }
        let m = av.cols();
        let mut data = vec![0.0; out_rows * m];
        for (k, &r) in index.iter().enumerate() {
            if r >= out_rows {
                return Err(ShapeError::new(format!("scatter row {r} of {out_rows}")));
            }
            for (o, x) in data[r * m..(r + 1) * m].iter_mut().zip(av.row(k)) {
                *o += x;
            }
        }
        let v = Tensor::matrix(out_rows, m, data);
        let rg = self.rg(a);
        Ok(self.push(v, Op::ScatterAddRows(a, index), rg))
    }

    /// Copy of `base` with row `index[k]` replaced by row `k` of `rows`.
    /// `index` must not repeat.
    pub fn replace_rows(&mut self, base: NodeId, rows: NodeId, index: Arc<[usize]>) -> Result<NodeId, ShapeError> {
        let bv = self.value(base);
        let rv = self.value(rows);
        if rv.rows() != index.len() || rv.cols() != bv.cols() {
            return Err(ShapeError::new("replace_rows shape".to_string()));
        }
        let m = bv.cols();
        let mut data = bv.data().to_vec();
        for (k, &r) in index.iter().enumerate() {
            if r >= bv.rows() {
                return Err(ShapeError::new(format!("replace row {r} of {}", bv.rows())));
            }
            data[r * m..(r + 1) * m].copy_from_slice(rv.row(k));
        }
        let v = Tensor::matrix(bv.rows(), m, data);
        let rg = self.rg(base) || self.rg(rows);
        Ok(self.push(v, Op::ReplaceRows { base, rows, index }, rg))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    /// Mean absolute percentage error (as a fraction) over cells where
    /// `mask` is set and the target is positive.
    pub fn mape(&mut self, pred: NodeId, target: &[f64], mask: &[bool]) -> Result<NodeId, TapeError> {
        let pv = self.value(pred);
        if pv.len() != target.len() || target.len() != mask.len() {
            return Err(ShapeError::new(format!(
                "mape over {} predictions, {} targets, {} mask entries",
                pv.len(),
                target.len(),
                mask.len()
            ))
            .into());
        }
        let count = target.iter().zip(mask).filter(|(&y, &m)| m && y > 0.0).count();
        if count == 0 {
            return Err(TapeError::NoValidTargets);
        }
        let inv_weight: Vec<f64> = target
            .iter()
            .zip(mask)
            .map(|(&y, &m)| if m && y > 0.0 { 1.0 / (count as f64 * y) } else { 0.0 })
            .collect();
        let loss = pv
            .data()
            .iter()
            .zip(target)
            .zip(&inv_weight)
            .filter(|(_, &w)| w > 0.0)
            .map(|((&p, &y), &w)| (p - y).abs() * w)
            .sum();
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mape {
                pred,
                inv_weight,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TapeError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TapeError::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| (n.value.rows(), n.value.cols())).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.rg(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let ga = g.matmul_t(self.value(*b));
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = self.value(*a).t_matmul(g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddBias(x, bias) => {
                if self.rg(*bias) {
                    let m = g.cols();
                    let mut col = vec![0.0; m];
                    for row in g.data().chunks(m) {
                        for (c, v) in col.iter_mut().zip(row) {
                            *c += v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::new(shape, col).expect("bias shape"));
                }
                self.accumulate(grads, *x, g.clone());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let ga = zip_map(g, self.value(*b), |gv, bv| gv * bv);
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = zip_map(g, self.value(*a), |gv, av| gv * av);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|v| v * f)),
            Op::Sigmoid(a) => {
                let ga = zip_map(g, y, |gv, s| gv * s * (1.0 - s));
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = zip_map(g, y, |gv, t| gv * (1.0 - t * t));
                self.accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = zip_map(g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Softplus(a) => {
                let ga = zip_map(g, self.value(*a), |gv, x| gv * sigmoid(x));
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(a, b) => {
                let p = self.value(*a).cols();
                let q = self.value(*b).cols();
                let n = g.rows();
                let mut ga = Vec::with_capacity(n * p);
                let mut gb = Vec::with_capacity(n * q);
                for r in 0..n {
                    let row = g.row(r);
                    ga.extend_from_slice(&row[..p]);
                    gb.extend_from_slice(&row[p..]);
                }
                self.accumulate(grads, *a, Tensor::matrix(n, p, ga));
                self.accumulate(grads, *b, Tensor::matrix(n, q, gb));
            }
            Op::ConcatRows(parts) => {
                let m = g.cols();
                let mut offset = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    if self.rg(*p) {
                        let slice = g.data()[offset * m..(offset + rows) * m].to_vec();
                        self.accumulate(grads, *p, Tensor::matrix(rows, m, slice));
                    }
                    offset += rows;
                }
            }
            Op::GatherRows(a, index) => {
                let av = self.value(*a);
                let m = av.cols();
                let mut ga = vec![0.0; av.rows() * m];
                for (k, &r) in index.iter().enumerate() {
                    for (o, v) in ga[r * m..(r + 1) * m].iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(av.rows(), m, ga));
            }
            Op::ScatterAddRows(a, index) => {
                let m = g.cols();
                let mut ga = Vec::with_capacity(index.len() * m);
                for &r in index.iter() {
                    ga.extend_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, Tensor::matrix(index.len(), m, ga));
            }
            Op::ReplaceRows { base, rows, index } => {
                let m = g.cols();
                if self.rg(*rows) {
                    let mut gr = Vec::with_capacity(index.len() * m);
                    for &r in index.iter() {
                        gr.extend_from_slice(g.row(r));
                    }
                    self.accumulate(grads, *rows, Tensor::matrix(index.len(), m, gr));
                }
                if self.rg(*base) {
                    let mut gb = g.data().to_vec();
                    for &r in index.iter() {
                        gb[r * m..(r + 1) * m].iter_mut().for_each(|v| *v = 0.0);
                    }
                    self.accumulate(grads, *base, Tensor::matrix(g.rows(), m, gb));
                }
            }
            Op::SumAll(a) => {
                let s = g.data()[0];
                let av = self.value(*a);
                self.accumulate(grads, *a, Tensor::filled(&[av.rows(), av.cols()], s));
            }
            Op::Mape {
                pred,
                inv_weight,
                target,
            } => {
                let s = g.data()[0];
                let pv = self.value(*pred);
                let data = pv
                    .data()
                    .iter()
                    .zip(target)
                    .zip(inv_weight)
                    .map(|((&p, &t), &w)| {
                        if w == 0.0 || p == t {
                            0.0
                        } else {
                            s * w * (p - t).signum()
                        }
                    })
                    .collect();
                self.accumulate(grads, *pred, Tensor::matrix(pv.rows(), pv.cols(), data));
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::matrix(a.rows(), a.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(v: &[usize]) -> Arc<[usize]> {
        Arc::from(v)
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 3, vec![1.5, -2.0, 4.0]));
        let w = tape.param(Tensor::matrix(3, 1, vec![0.3, 0.1, -0.7]));
        let y = tape.matmul(x, w).unwrap();
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).data(), &[1.5, -2.0, 4.0]);
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        let unused = tape.param(Tensor::matrix(2, 2, vec![1.0; 4]));
        let loss = tape.sum_all(a);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(unused).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        assert!(matches!(tape.backward(a), Err(TapeError::NonScalarLoss(_))));
    }

    #[test]
    fn scatter_and_gather_are_adjoint() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]));
        let s = tape.scatter_add_rows(a, idx(&[1, 0, 1]), 2).unwrap();
        assert_eq!(tape.value(s).data(), &[2.0, 4.0]);
        let w = tape.constant(Tensor::matrix(2, 1, vec![10.0, 100.0]));
        let prod = tape.mul(s, w).unwrap();
        let loss = tape.sum_all(prod);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).data(), &[100.0, 10.0, 100.0]);
    }

    #[test]
    fn replace_rows_routes_gradient() {
        let mut tape = Tape::new();
        let base = tape.param(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]));
        let rows = tape.param(Tensor::matrix(1, 1, vec![9.0]));
        let out = tape.replace_rows(base, rows, idx(&[1])).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 9.0, 3.0]);
        let w = tape.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]));
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum_all(prod);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(base).data(), &[1.0, 0.0, 3.0]);
        assert_eq!(grads.get(rows).data(), &[2.0]);
    }

    #[test]
    fn mape_masks_and_errors_when_empty() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::matrix(1, 3, vec![110.0, 180.0, 5.0]));
        let loss = tape.mape(p, &[100.0, 200.0, 0.0], &[true, true, true]).unwrap();
        assert!((tape.value(loss).data()[0] - 0.10).abs() < 1e-15);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(p);
        assert!((g.data()[0] - 1.0 / 200.0).abs() < 1e-15);
        assert!((g.data()[1] + 1.0 / 400.0).abs() < 1e-15);
        assert_eq!(g.data()[2], 0.0);

        assert!(matches!(
            tape.mape(p, &[1.0, 2.0, 3.0], &[false, false, false]),
            Err(TapeError::NoValidTargets)
        ));
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
