use std::collections::HashMap;
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{invalid, shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Gather(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    RowDot(Var, Var),
    ScaleRows(Var, Var),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    MaskedMse {
        pred: Var,
        target: Rc<Tensor>,
        rows: Rc<[bool]>,
        count: usize,
    },
    /// Scalar whose local gradient with respect to its input was computed
    /// outside the tape.
    Custom(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Records a forward computation for reverse-mode replay.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "input")
    }

    /// Records a parameter; repeated requests for the same id share one node
    /// so that gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let value = store.get(id).value.clone();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (m, k, n) = (xv.rows(), xv.cols(), wv.cols());
        if wv.rows() != k {
            return shape_err(format!(
                "matmul {}x{} by {}x{}",
                m,
                k,
                wv.rows(),
                n
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, xv.data(), false, wv.data(), false, &mut out, false);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(x, w), "matmul")
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.cols();
        if bv.len() != c {
            return shape_err(format!("bias of length {} for {} columns", bv.len(), c));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let t = Tensor::matrix(xv.rows(), c, out)?;
        self.push(t, Op::AddBias(x, b), "add_bias")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() || av.cols() != bv.cols() {
            return shape_err(format!(
                "{what}: {}x{} vs {}x{}",
                av.rows(),
                av.cols(),
                bv.rows(),
                bv.cols()
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &str, f: fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::matrix(av.rows(), av.cols(), data)?;
        self.push(t, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * c).collect();
        let t = Tensor::matrix(xv.rows(), xv.cols(), data)?;
        self.push(t, Op::Scale(x, c), "scale")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::matrix(xv.rows(), xv.cols(), data)?;
        self.push(t, Op::Relu(x), "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::matrix(xv.rows(), xv.cols(), data)?;
        self.push(t, Op::Sigmoid(x), "sigmoid")
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return invalid("concat of nothing");
        }
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return shape_err("concat with unequal row counts");
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::matrix(rows, total, out)?;
        self.push(t, Op::Concat(parts.to_vec()), "concat")
    }

    /// `out[e] = x[index[e]]`.
    pub fn gather(&mut self, x: Var, index: Rc<[usize]>) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            if i >= n {
                return shape_err(format!("gather index {i} out of {n} rows"));
            }
            out.extend_from_slice(xv.row(i));
        }
        let t = Tensor::matrix(index.len(), c, out)?;
        self.push(t, Op::Gather(x, index), "gather")
    }

    /// `out[s] = Σ_{e : segment[e] = s} x[e]` over `num_segments` outputs.
    pub fn segment_sum(&mut self, x: Var, segment: Rc<[usize]>, num_segments: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if segment.len() != xv.rows() {
            return shape_err(format!(
                "segment_sum: {} segment ids for {} rows",
                segment.len(),
                xv.rows()
            ));
        }
        let mut out = vec![0.0; num_segments * c];
        for (e, &s) in segment.iter().enumerate() {
            if s >= num_segments {
                return shape_err(format!("segment id {s} out of {num_segments}"));
            }
            let dst = &mut out[s * c..(s + 1) * c];
            for (o, v) in dst.iter_mut().zip(xv.row(e)) {
                *o += v;
            }
        }
        let t = Tensor::matrix(num_segments, c, out)?;
        self.push(t, Op::SegmentSum(x, segment), "segment_sum")
    }

    /// Row-wise inner product: `out[r] = <a[r], b[r]>`, shape `rows×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_dot")?;
        let (av, bv) = (self.value(a), self.value(b));
        let out = (0..av.rows())
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let t = Tensor::column(out);
        self.push(t, Op::RowDot(a, b), "row_dot")
    }

    /// `out[r] = s[r] * x[r]` with `s` of shape `rows×1`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.len() != xv.rows() {
            return shape_err(format!(
                "scale_rows: {} scales for {} rows",
                sv.len(),
                xv.rows()
            ));
        }
        let c = xv.cols();
        let mut out = xv.data().to_vec();
        for (row, &k) in out.chunks_mut(c).zip(sv.data()) {
            row.iter_mut().for_each(|v| *v *= k);
        }
        let t = Tensor::matrix(xv.rows(), c, out)?;
        self.push(t, Op::ScaleRows(x, s), "scale_rows")
    }

    /// Column means, shape `1×cols`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if n == 0 {
            return invalid("mean over zero rows");
        }
        let mut out = vec![0.0; c];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let t = Tensor::matrix(1, c, out)?;
        self.push(t, Op::MeanRows(x), "mean_rows")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return invalid("mean of empty tensor");
        }
        let s = xv.data().iter().sum::<f64>() / xv.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), "mean")
    }

    /// Mean squared error over the rows flagged in `rows`, all columns.
    pub fn masked_mse(&mut self, pred: Var, target: Rc<Tensor>, rows: Rc<[bool]>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.rows() != target.rows() || pv.cols() != target.cols() || rows.len() != pv.rows() {
            return shape_err("masked_mse operand shapes disagree");
        }
        let count = rows.iter().filter(|&&r| r).count();
        if count == 0 {
            return invalid("masked_mse over an empty row set");
        }
        let mut acc = 0.0;
        for r in (0..pv.rows()).filter(|&r| rows[r]) {
            for (p, t) in pv.row(r).iter().zip(target.row(r)) {
                acc += (p - t) * (p - t);
            }
        }
        let mse = acc / (count * pv.cols()) as f64;
        self.push(
            Tensor::scalar(mse),
            Op::MaskedMse {
                pred,
                target,
                rows,
                count,
            },
            "masked_mse",
        )
    }

    /// Injects a scalar `f(x)` with a precomputed gradient `df/dx`.
    pub fn custom_scalar(&mut self, x: Var, value: f64, grad: Tensor) -> Result<Var> {
        if grad.len() != self.value(x).len() {
            return shape_err("custom_scalar gradient does not match its input");
        }
        if !grad.all_finite() {
            return Err(Error::NonFinite("custom_scalar gradient".into()));
        }
        self.push(Tensor::scalar(value), Op::Custom(x, grad), "custom_scalar")
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added into
    /// `store`; every recorded gradient is returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return shape_err(format!("backward from non-scalar of shape {:?}", lv.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads, store)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        store: &mut ParamStore,
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.get_mut(*id).grad.add_assign(g),
            Op::MatMul(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, k, n) = (xv.rows(), xv.cols(), wv.cols());
                let gx = acc_slot(grads, *x, xv);
                gemm(m, n, k, g.data(), false, wv.data(), true, gx.data_mut(), true);
                let gw = acc_slot(grads, *w, wv);
                gemm(k, m, n, xv.data(), true, g.data(), false, gw.data_mut(), true);
            }
            Op::AddBias(x, b) => {
                acc_slot(grads, *x, self.value(*x)).add_assign(g);
                let c = g.cols();
                let gb = acc_slot(grads, *b, self.value(*b));
                for row in g.data().chunks(c) {
                    for (o, v) in gb.data_mut().iter_mut().zip(row) {
                        *o += v;
                    }
                }
            }
            Op::Add(a, b) => {
                acc_slot(grads, *a, self.value(*a)).add_assign(g);
                acc_slot(grads, *b, self.value(*b)).add_assign(g);
            }
            Op::Sub(a, b) => {
                acc_slot(grads, *a, self.value(*a)).add_assign(g);
                let gb = acc_slot(grads, *b, self.value(*b));
                for (o, v) in gb.data_mut().iter_mut().zip(g.data()) {
                    *o -= v;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = acc_slot(grads, *a, av);
                for ((o, gg), y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                    *o += gg * y;
                }
                let gb = acc_slot(grads, *b, bv);
                for ((o, gg), x) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                    *o += gg * x;
                }
            }
            Op::Scale(x, c) => {
                let gx = acc_slot(grads, *x, self.value(*x));
                for (o, gg) in gx.data_mut().iter_mut().zip(g.data()) {
                    *o += gg * c;
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = acc_slot(grads, *x, xv);
                for ((o, gg), v) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    if *v > 0.0 {
                        *o += gg;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let gx = acc_slot(grads, *x, self.value(*x));
                for ((o, gg), s) in gx.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    *o += gg * s * (1.0 - s);
                }
            }
            Op::Concat(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    let gp = acc_slot(grads, p, pv);
                    for (r, dst) in gp.data_mut().chunks_mut(w).enumerate() {
                        let src = &g.data()[r * total + offset..r * total + offset + w];
                        for (o, v) in dst.iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                    offset += w;
                }
            }
            Op::Gather(x, index) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let gx = acc_slot(grads, *x, xv);
                for (e, &i) in index.iter().enumerate() {
                    let dst = &mut gx.data_mut()[i * c..(i + 1) * c];
                    for (o, v) in dst.iter_mut().zip(g.row(e)) {
                        *o += v;
                    }
                }
            }
            Op::SegmentSum(x, segment) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let gx = acc_slot(grads, *x, xv);
                for (e, &s) in segment.iter().enumerate() {
                    let dst = &mut gx.data_mut()[e * c..(e + 1) * c];
                    for (o, v) in dst.iter_mut().zip(g.row(s)) {
                        *o += v;
                    }
                }
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let c = av.cols();
                let ga = acc_slot(grads, *a, av);
                for (r, dst) in ga.data_mut().chunks_mut(c).enumerate() {
                    let k = g.data()[r];
                    for (o, y) in dst.iter_mut().zip(bv.row(r)) {
                        *o += k * y;
                    }
                }
                let gb = acc_slot(grads, *b, bv);
                for (r, dst) in gb.data_mut().chunks_mut(c).enumerate() {
                    let k = g.data()[r];
                    for (o, x) in dst.iter_mut().zip(av.row(r)) {
                        *o += k * x;
                    }
                }
            }
            Op::ScaleRows(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let c = xv.cols();
                let gx = acc_slot(grads, *x, xv);
                for (r, dst) in gx.data_mut().chunks_mut(c).enumerate() {
                    let k = sv.data()[r];
                    for (o, gg) in dst.iter_mut().zip(g.row(r)) {
                        *o += k * gg;
                    }
                }
                let gs = acc_slot(grads, *s, sv);
                for r in 0..xv.rows() {
                    let dot: f64 = g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                    gs.data_mut()[r] += dot;
                }
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let (n, c) = (xv.rows(), xv.cols());
                let gx = acc_slot(grads, *x, xv);
                for dst in gx.data_mut().chunks_mut(c) {
                    for (o, gg) in dst.iter_mut().zip(g.data()) {
                        *o += gg / n as f64;
                    }
                }
            }
            Op::Sum(x) => {
                let k = g.item();
                let gx = acc_slot(grads, *x, self.value(*x));
                gx.data_mut().iter_mut().for_each(|o| *o += k);
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let k = g.item() / xv.len() as f64;
                let gx = acc_slot(grads, *x, xv);
                gx.data_mut().iter_mut().for_each(|o| *o += k);
            }
            Op::MaskedMse {
                pred,
                target,
                rows,
                count,
            } => {
                let pv = self.value(*pred);
                let c = pv.cols();
                let k = 2.0 * g.item() / (*count * c) as f64;
                let gp = acc_slot(grads, *pred, pv);
                for r in (0..pv.rows()).filter(|&r| rows[r]) {
                    let dst = &mut gp.data_mut()[r * c..(r + 1) * c];
                    for ((o, p), t) in dst.iter_mut().zip(pv.row(r)).zip(target.row(r)) {
                        *o += k * (p - t);
                    }
                }
            }
            Op::Custom(x, local) => {
                let k = g.item();
                let gx = acc_slot(grads, *x, self.value(*x));
                for (o, l) in gx.data_mut().iter_mut().zip(local.data()) {
                    *o += k * l;
                }
            }
        }
        Ok(())
    }
}

fn acc_slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert(name, t).unwrap();
        (s, id)
    }

    #[test]
    fn sum_of_parameter_has_unit_gradient() {
        let (mut store, id) = store_with("p", Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let loss = tape.sum(p).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!(store.get(id).grad.data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn zero_times_parameter_has_zero_gradient() {
        let (mut store, id) = store_with("p", Tensor::filled(&[3, 2], 4.0));
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let z = tape.scale(p, 0.0).unwrap();
        let loss = tape.sum(z).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!(store.get(id).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let (mut store, id) = store_with("p", Tensor::filled(&[2, 2], 1.0));
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        assert!(tape.backward(p, &mut store).is_err());
    }

    #[test]
    fn fan_out_accumulates_both_paths() {
        // loss = sum(p * p) + sum(3 p) -> grad = 2p + 3
        let vals = vec![1.0, -2.0, 0.5, 4.0];
        let (mut store, id) = store_with("p", Tensor::matrix(2, 2, vals.clone()).unwrap());
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let p_again = tape.param(&store, id);
        assert_eq!(p, p_again);
        let sq = tape.mul(p, p_again).unwrap();
        let lin = tape.scale(p, 3.0).unwrap();
        let a = tape.sum(sq).unwrap();
        let b = tape.sum(lin).unwrap();
        let loss = tape.add(a, b).unwrap();
        tape.backward(loss, &mut store).unwrap();
        let expected: Vec<f64> = vals.iter().map(|v| 2.0 * v + 3.0).collect();
        assert_eq!(store.get(id).grad.data(), expected.as_slice());
    }

    #[test]
    fn non_finite_forward_trips_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1e300)).unwrap();
        let err = tape.mul(x, x).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn masked_mse_requires_a_target_row() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(&[2, 2], 1.0)).unwrap();
        let target = Rc::new(Tensor::zeros(&[2, 2]));
        let rows: Rc<[bool]> = Rc::from(vec![false, false]);
        assert!(tape.masked_mse(x, target, rows).is_err());
    }
}
