//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every forward operation appends a node holding its computed value and the
//! indices of its inputs. `backward` walks the tape once in reverse and
//! accumulates gradients for every named leaf. Values are dense `f64`
//! tensors; graphs are built per example and thrown away after the backward
//! pass, so nodes own their values outright.

use std::collections::BTreeMap;

use super::loss::Distribution;
use super::tensor::log_sum_exp;
use super::{NumericsError, ParamSet, Tensor};

/// Handle to a node on a [`Tape`]. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Input tensor; `name` is set for trainable parameters.
    Leaf { name: Option<String> },
    /// Matrix [r, c] times vector [c].
    MatVec { m: Var, v: Var },
    /// Row `idx` of a matrix, as a vector.
    Row { m: Var, idx: usize },
    /// Elementwise sum of two same-shaped tensors.
    Add { a: Var, b: Var },
    /// Sum of same-shaped tensors scaled by fixed coefficients.
    WeightedSum { terms: Vec<(f64, Var)> },
    /// Fixed scalar times a tensor.
    ScaleConst { x: Var, c: f64 },
    /// Rank-0 variable times a tensor.
    MulScalar { x: Var, s: Var },
    /// Elementwise product of two same-shaped tensors.
    Mul { a: Var, b: Var },
    Sigmoid { x: Var },
    Tanh { x: Var },
    /// Contiguous sub-vector `[start, start + len)`.
    Slice { x: Var, start: usize },
    /// One element of a vector, as a rank-0 tensor.
    Index { x: Var, i: usize },
    /// Vectors joined end to end.
    Concat { parts: Vec<Var> },
    /// Softmax over a full vector.
    SoftmaxVec { x: Var },
    /// Elementwise maximum over same-shaped vectors; ties go to the earliest.
    MaxPool { parts: Vec<Var> },
    /// Dot product of two same-length vectors, a rank-0 result.
    Dot { a: Var, b: Var },
    /// Sum of all elements, a rank-0 result.
    Sum { x: Var },
    /// KL(target || softmax(logits)), a rank-0 result.
    KlFromLogits { logits: Var, target: Distribution },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Records a forward computation so gradients can be replayed backwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The computed value of `v`.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Loads a parameter's current value onto the tape as a named leaf.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var, NumericsError> {
        let value = params.get(name)?.clone();
        Ok(self.push(Op::Leaf { name: Some(name.to_string()) }, value))
    }

    /// Loads a fixed tensor; no gradient is collected for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { name: None }, value)
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var, NumericsError> {
        let (mt, vt) = (self.value(m), self.value(v));
        let [rows, cols] = *mt.shape() else {
            return Err(NumericsError::ShapeMismatch {
                context: "matvec matrix",
                expected: vec![0, 0],
                got: mt.shape().to_vec(),
            });
        };
        if vt.shape() != [cols] {
            return Err(NumericsError::ShapeMismatch {
                context: "matvec vector",
                expected: vec![cols],
                got: vt.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; rows];
        let (md, vd) = (mt.data(), vt.data());
        for (r, slot) in out.iter_mut().enumerate() {
            let row = &md[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(vd) {
                acc += w * x;
            }
            *slot = acc;
        }
        Ok(self.push(Op::MatVec { m, v }, Tensor::vector(out)))
    }

    pub fn row(&mut self, m: Var, idx: usize) -> Result<Var, NumericsError> {
        let mt = self.value(m);
        let [rows, cols] = *mt.shape() else {
            return Err(NumericsError::ShapeMismatch {
                context: "row of non-matrix",
                expected: vec![0, 0],
                got: mt.shape().to_vec(),
            });
        };
        if idx >= rows {
            return Err(NumericsError::ShapeMismatch {
                context: "row index out of range",
                expected: vec![rows],
                got: vec![idx],
            });
        }
        let value = Tensor::vector(mt.data()[idx * cols..(idx + 1) * cols].to_vec());
        Ok(self.push(Op::Row { m, idx }, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(NumericsError::ShapeMismatch {
                context: "add",
                expected: at.shape().to_vec(),
                got: bt.shape().to_vec(),
            });
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(at.shape(), data)?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    /// `sum_i coeff_i * x_i` with fixed coefficients; all terms same shape.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var, NumericsError> {
        let Some(&(_, first)) = terms.first() else {
            return Err(NumericsError::ShapeMismatch {
                context: "weighted_sum of nothing",
                expected: vec![1],
                got: vec![0],
            });
        };
        let shape = self.value(first).shape().to_vec();
        let mut data = vec![0.0; self.value(first).len()];
        for &(coeff, term) in terms {
            if !coeff.is_finite() {
                return Err(NumericsError::NonFinite { context: "weighted_sum coefficient" });
            }
            let tt = self.value(term);
            if tt.shape() != shape {
                return Err(NumericsError::ShapeMismatch {
                    context: "weighted_sum",
                    expected: shape,
                    got: tt.shape().to_vec(),
                });
            }
            for (slot, x) in data.iter_mut().zip(tt.data()) {
                *slot += coeff * x;
            }
        }
        let value = Tensor::from_vec(&shape, data)?;
        Ok(self.push(Op::WeightedSum { terms: terms.to_vec() }, value))
    }

    pub fn scale_const(&mut self, x: Var, c: f64) -> Result<Var, NumericsError> {
        if !c.is_finite() {
            return Err(NumericsError::NonFinite { context: "scale_const factor" });
        }
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| c * v).collect();
        let value = Tensor::from_vec(xt.shape(), data)?;
        Ok(self.push(Op::ScaleConst { x, c }, value))
    }

    /// Tensor `x` scaled by the rank-0 variable `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var, NumericsError> {
        let st = self.value(s);
        if !st.shape().is_empty() {
            return Err(NumericsError::NotScalar { shape: st.shape().to_vec() });
        }
        let sv = st.item();
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| sv * v).collect();
        let value = Tensor::from_vec(xt.shape(), data)?;
        Ok(self.push(Op::MulScalar { x, s }, value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(NumericsError::ShapeMismatch {
                context: "mul",
                expected: at.shape().to_vec(),
                got: bt.shape().to_vec(),
            });
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(at.shape(), data)?;
        Ok(self.push(Op::Mul { a, b }, value))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let value = Tensor::from_vec(xt.shape(), data).expect("same shape");
        self.push(Op::Sigmoid { x }, value)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::from_vec(xt.shape(), data).expect("same shape");
        self.push(Op::Tanh { x }, value)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        if xt.shape().len() != 1 || start + len > xt.len() {
            return Err(NumericsError::ShapeMismatch {
                context: "slice",
                expected: vec![start + len],
                got: xt.shape().to_vec(),
            });
        }
        let value = Tensor::vector(xt.data()[start..start + len].to_vec());
        Ok(self.push(Op::Slice { x, start }, value))
    }

    pub fn index(&mut self, x: Var, i: usize) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        if xt.shape().len() != 1 || i >= xt.len() {
            return Err(NumericsError::ShapeMismatch {
                context: "index",
                expected: vec![xt.len()],
                got: vec![i],
            });
        }
        let value = Tensor::scalar(xt.data()[i]);
        Ok(self.push(Op::Index { x, i }, value))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let mut data = Vec::new();
        for &part in parts {
            let pt = self.value(part);
            if pt.shape().len() != 1 {
                return Err(NumericsError::ShapeMismatch {
                    context: "concat of non-vector",
                    expected: vec![pt.len()],
                    got: pt.shape().to_vec(),
                });
            }
            data.extend_from_slice(pt.data());
        }
        Ok(self.push(Op::Concat { parts: parts.to_vec() }, Tensor::vector(data)))
    }

    pub fn softmax_vec(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        if xt.shape().len() != 1 || xt.is_empty() {
            return Err(NumericsError::ShapeMismatch {
                context: "softmax_vec",
                expected: vec![1],
                got: xt.shape().to_vec(),
            });
        }
        let value = Tensor::vector(super::tensor::softmax_slice(xt.data()));
        Ok(self.push(Op::SoftmaxVec { x }, value))
    }

    /// Elementwise max across same-shaped vectors.
    pub fn max_pool(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let Some(&first) = parts.first() else {
            return Err(NumericsError::ShapeMismatch {
                context: "max_pool of nothing",
                expected: vec![1],
                got: vec![0],
            });
        };
        let shape = self.value(first).shape().to_vec();
        let mut data = self.value(first).data().to_vec();
        for &part in &parts[1..] {
            let pt = self.value(part);
            if pt.shape() != shape {
                return Err(NumericsError::ShapeMismatch {
                    context: "max_pool",
                    expected: shape,
                    got: pt.shape().to_vec(),
                });
            }
            for (slot, x) in data.iter_mut().zip(pt.data()) {
                if *x > *slot {
                    *slot = *x;
                }
            }
        }
        let value = Tensor::from_vec(&shape, data)?;
        Ok(self.push(Op::MaxPool { parts: parts.to_vec() }, value))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() || at.shape().len() != 1 {
            return Err(NumericsError::ShapeMismatch {
                context: "dot",
                expected: at.shape().to_vec(),
                got: bt.shape().to_vec(),
            });
        }
        let mut acc = 0.0;
        for (x, y) in at.data().iter().zip(bt.data()) {
            acc += x * y;
        }
        Ok(self.push(Op::Dot { a, b }, Tensor::scalar(acc)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum { x }, Tensor::scalar(total))
    }

    /// KL(target || softmax(logits)); the graph node the LM objective hangs on.
    pub fn kl_from_logits(&mut self, logits: Var, target: Distribution) -> Result<Var, NumericsError> {
        let lt = self.value(logits);
        if lt.shape().len() != 1 {
            return Err(NumericsError::ShapeMismatch {
                context: "kl_from_logits",
                expected: vec![lt.len()],
                got: lt.shape().to_vec(),
            });
        }
        if !lt.is_finite() {
            return Err(NumericsError::NonFinite { context: "kl_from_logits logits" });
        }
        let z = lt.data();
        let lse = log_sum_exp(z);
        let mut kl = 0.0;
        for &(id, p) in target.entries() {
            if id >= z.len() {
                return Err(NumericsError::ShapeMismatch {
                    context: "kl_from_logits target id",
                    expected: vec![z.len()],
                    got: vec![id],
                });
            }
            kl += p * (p.ln() - (z[id] - lse));
        }
        Ok(self.push(Op::KlFromLogits { logits, target }, Tensor::scalar(kl)))
    }

    /// Mean of rank-0 variables.
    pub fn mean_scalars(&mut self, terms: &[Var]) -> Result<Var, NumericsError> {
        let coeff = 1.0 / terms.len() as f64;
        let weighted: Vec<(f64, Var)> = terms.iter().map(|&t| (coeff, t)).collect();
        self.weighted_sum(&weighted)
    }

    /// Propagates d`loss`/d(leaf) to every named leaf. `loss` must be rank-0.
    pub fn backward(&self, loss: Var) -> Result<BTreeMap<String, Tensor>, NumericsError> {
        let loss_value = self.value(loss);
        if !loss_value.shape().is_empty() {
            return Err(NumericsError::NotScalar { shape: loss_value.shape().to_vec() });
        }
        if !loss_value.is_finite() {
            return Err(NumericsError::NonFinite { context: "loss" });
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf { .. } => {
                    grads[idx] = Some(g); // keep for collection below
                    continue;
                }
                Op::MatVec { m, v } => {
                    let cols = self.value(*v).len();
                    let vd = self.value(*v).data().to_vec();
                    let md = self.value(*m).data().to_vec();
                    {
                        let gm = self.grad_slot(&mut grads, *m);
                        for (r, gr) in g.data().iter().enumerate() {
                            let row = &mut gm.data_mut()[r * cols..(r + 1) * cols];
                            for (slot, x) in row.iter_mut().zip(&vd) {
                                *slot += gr * x;
                            }
                        }
                    }
                    let gv = self.grad_slot(&mut grads, *v);
                    for (r, gr) in g.data().iter().enumerate() {
                        let row = &md[r * cols..(r + 1) * cols];
                        for (slot, w) in gv.data_mut().iter_mut().zip(row) {
                            *slot += gr * w;
                        }
                    }
                }
                Op::Row { m, idx: row_idx } => {
                    let cols = g.len();
                    let gm = self.grad_slot(&mut grads, *m);
                    let row = &mut gm.data_mut()[row_idx * cols..(row_idx + 1) * cols];
                    for (slot, x) in row.iter_mut().zip(g.data()) {
                        *slot += x;
                    }
                }
                Op::Add { a, b } => {
                    self.add_grad(&mut grads, *a, g.data(), 1.0);
                    self.add_grad(&mut grads, *b, g.data(), 1.0);
                }
                Op::WeightedSum { terms } => {
                    for &(coeff, term) in terms {
                        self.add_grad(&mut grads, term, g.data(), coeff);
                    }
                }
                Op::ScaleConst { x, c } => {
                    self.add_grad(&mut grads, *x, g.data(), *c);
                }
                Op::MulScalar { x, s } => {
                    let sv = self.value(*s).item();
                    self.add_grad(&mut grads, *x, g.data(), sv);
                    let mut ds = 0.0;
                    for (gx, xv) in g.data().iter().zip(self.value(*x).data()) {
                        ds += gx * xv;
                    }
                    let gs = self.grad_slot(&mut grads, *s);
                    gs.data_mut()[0] += ds;
                }
                Op::Mul { a, b } => {
                    let bd = self.value(*b).data().to_vec();
                    {
                        let ga = self.grad_slot(&mut grads, *a);
                        for ((slot, gv), x) in ga.data_mut().iter_mut().zip(g.data()).zip(&bd) {
                            *slot += gv * x;
                        }
                    }
                    let ad = self.value(*a).data().to_vec();
                    let gb = self.grad_slot(&mut grads, *b);
                    for ((slot, gv), x) in gb.data_mut().iter_mut().zip(g.data()).zip(&ad) {
                        *slot += gv * x;
                    }
                }
                Op::Sigmoid { x } => {
                    let yd = self.nodes[idx].value.data().to_vec();
                    let gx = self.grad_slot(&mut grads, *x);
                    for ((slot, gv), y) in gx.data_mut().iter_mut().zip(g.data()).zip(&yd) {
                        *slot += gv * y * (1.0 - y);
                    }
                }
                Op::Tanh { x } => {
                    let yd = self.nodes[idx].value.data().to_vec();
                    let gx = self.grad_slot(&mut grads, *x);
                    for ((slot, gv), y) in gx.data_mut().iter_mut().zip(g.data()).zip(&yd) {
                        *slot += gv * (1.0 - y * y);
                    }
                }
                Op::Slice { x, start } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    let window = &mut gx.data_mut()[*start..start + g.len()];
                    for (slot, gv) in window.iter_mut().zip(g.data()) {
                        *slot += gv;
                    }
                }
                Op::Index { x, i } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    gx.data_mut()[*i] += g.item();
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &part in parts {
                        let len = self.value(part).len();
                        let gp = self.grad_slot(&mut grads, part);
                        for (slot, gv) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + len]) {
                            *slot += gv;
                        }
                        offset += len;
                    }
                }
                Op::SoftmaxVec { x } => {
                    let yd = self.nodes[idx].value.data().to_vec();
                    let mut gy_dot_y = 0.0;
                    for (gv, y) in g.data().iter().zip(&yd) {
                        gy_dot_y += gv * y;
                    }
                    let gx = self.grad_slot(&mut grads, *x);
                    for ((slot, gv), y) in gx.data_mut().iter_mut().zip(g.data()).zip(&yd) {
                        *slot += y * (gv - gy_dot_y);
                    }
                }
                Op::MaxPool { parts } => {
                    // Route each element's gradient to the earliest input
                    // that attained the maximum, matching the forward pass.
                    let pooled = self.nodes[idx].value.data().to_vec();
                    for (pos, (&top, &gv)) in pooled.iter().zip(g.data()).enumerate() {
                        for &part in parts {
                            if self.value(part).data()[pos] == top {
                                let gp = self.grad_slot(&mut grads, part);
                                gp.data_mut()[pos] += gv;
                                break;
                            }
                        }
                    }
                }
                Op::Dot { a, b } => {
                    let gv = g.item();
                    let bd = self.value(*b).data().to_vec();
                    {
                        let ga = self.grad_slot(&mut grads, *a);
                        for (slot, x) in ga.data_mut().iter_mut().zip(&bd) {
                            *slot += gv * x;
                        }
                    }
                    let ad = self.value(*a).data().to_vec();
                    let gb = self.grad_slot(&mut grads, *b);
                    for (slot, x) in gb.data_mut().iter_mut().zip(&ad) {
                        *slot += gv * x;
                    }
                }
                Op::Sum { x } => {
                    let gv = g.item();
                    let gx = self.grad_slot(&mut grads, *x);
                    for slot in gx.data_mut() {
                        *slot += gv;
                    }
                }
                Op::KlFromLogits { logits, target } => {
                    // d/dz KL(t || softmax(z)) = softmax(z) * sum(t) - t.
                    let gv = g.item();
                    let q = super::tensor::softmax_slice(self.value(*logits).data());
                    let total: f64 = target.entries().iter().map(|&(_, p)| p).sum();
                    let gl = self.grad_slot(&mut grads, *logits);
                    for (slot, qi) in gl.data_mut().iter_mut().zip(&q) {
                        *slot += gv * total * qi;
                    }
                    for &(id, p) in target.entries() {
                        gl.data_mut()[id] -= gv * p;
                    }
                }
            }
        }

        let mut by_name: BTreeMap<String, Tensor> = BTreeMap::new();
        for (node, grad) in self.nodes.iter().zip(grads) {
            let (Op::Leaf { name: Some(name) }, Some(grad)) = (&node.op, grad) else { continue };
            if !grad.is_finite() {
                return Err(NumericsError::NonFiniteGradient { param: name.clone() });
            }
            match by_name.get_mut(name) {
                Some(existing) => {
                    for (slot, x) in existing.data_mut().iter_mut().zip(grad.data()) {
                        *slot += x;
                    }
                }
                None => {
                    by_name.insert(name.clone(), grad);
                }
            }
        }
        Ok(by_name)
    }

    /// Sums the named gradients from `backward` into the parameter set.
    pub fn accumulate_into(
        &self,
        grads: BTreeMap<String, Tensor>,
        params: &mut ParamSet,
    ) -> Result<(), NumericsError> {
        for (name, grad) in grads {
            params.accumulate_grad(&name, &grad)?;
        }
        Ok(())
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape()))
    }

    fn add_grad(&self, grads: &mut [Option<Tensor>], v: Var, g: &[f64], coeff: f64) {
        let slot = self.grad_slot(grads, v);
        for (dst, x) in slot.data_mut().iter_mut().zip(g) {
            *dst += coeff * x;
        }
    }
}
