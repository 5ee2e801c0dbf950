//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. One tape is
//! built per training step and dropped afterwards; parameters live outside it
//! and are re-registered as leaves each step. Leaves registered with
//! [`Tape::constant`] never receive gradients, which is how frozen layers and
//! data inputs stay out of the backward pass.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{axis_split, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    /// Unbiased variance (divisor `N - 1`) along the axis; rows by default.
    VarPerDim,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Relu(usize),
    Sqrt(usize),
    Exp(usize),
    SumAll(usize),
    MeanAll(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    VarAxis(usize, usize),
    Transpose(usize),
    PairwiseSqDist(usize, usize),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Whether any node reachable backwards from `root` is `target`.
    pub fn depends_on(&self, root: Var<'_, T>, target: Var<'_, T>) -> bool {
        let nodes = self.nodes.borrow();
        let mut stack = vec![root.id];
        let mut seen = vec![false; nodes.len()];
        while let Some(id) = stack.pop() {
            if id == target.id {
                return true;
            }
            if std::mem::replace(&mut seen[id], true) {
                continue;
            }
            stack.extend(inputs(&nodes[id].op));
        }
        false
    }

    /// Backpropagates from a single-element `root`.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::full(nodes[root.id].value.shape(), T::one()));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let contributions = backprop_node(&nodes, id, &g);
            grads[id] = Some(g);
            for (input, contrib) in contributions {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn inputs<T>(op: &Op<T>) -> Vec<usize> {
    match *op {
        Op::Leaf => vec![],
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddRow(a, b)
        | Op::PairwiseSqDist(a, b) => vec![a, b],
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Relu(a)
        | Op::Sqrt(a)
        | Op::Exp(a)
        | Op::SumAll(a)
        | Op::MeanAll(a)
        | Op::SumAxis(a, _)
        | Op::MeanAxis(a, _)
        | Op::VarAxis(a, _)
        | Op::Transpose(a) => vec![a],
    }
}

/// Gradient of the loss w.r.t. each input of node `id`, given the node's own gradient `g`.
fn backprop_node<T: Scalar>(
    nodes: &[Node<T>],
    id: usize,
    g: &Tensor<T>,
) -> Vec<(usize, Tensor<T>)> {
    let val = |i: usize| -> &Tensor<T> { &nodes[i].value };
    let wants = |i: usize| nodes[i].requires_grad;
    let out = &nodes[id].value;
    match nodes[id].op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let mut v = Vec::with_capacity(2);
            if wants(a) {
                v.push((a, g.matmul_nt(val(b)).expect("shapes checked in forward")));
            }
            if wants(b) {
                v.push((b, val(a).matmul_tn(g).expect("shapes checked in forward")));
            }
            v
        }
        Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
        Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|x| -x))],
        Op::Mul(a, b) => {
            let mut v = Vec::with_capacity(2);
            if wants(a) {
                v.push((a, g.zip_map(val(b), "mul", |x, y| x * y).unwrap()));
            }
            if wants(b) {
                v.push((b, g.zip_map(val(a), "mul", |x, y| x * y).unwrap()));
            }
            v
        }
        Op::AddRow(x, row) => {
            let w = val(row).len();
            let mut rg = vec![T::zero(); w];
            for chunk in g.data().chunks_exact(w) {
                for (acc, &gv) in rg.iter_mut().zip(chunk) {
                    *acc = *acc + gv;
                }
            }
            vec![
                (x, g.clone()),
                (row, Tensor::from_parts(val(row).shape().to_vec(), rg)),
            ]
        }
        Op::Scale(a, k) => vec![(a, g.map(|x| x * k))],
        Op::AddScalar(a) => vec![(a, g.clone())],
        Op::Relu(a) => vec![(
            a,
            g.zip_map(
                val(a),
                "relu",
                |gv, x| if x > T::zero() { gv } else { T::zero() },
            )
            .unwrap(),
        )],
        Op::Sqrt(a) => {
            let two = T::lit(2.0);
            vec![(a, g.zip_map(out, "sqrt", |gv, y| gv / (two * y)).unwrap())]
        }
        Op::Exp(a) => vec![(a, g.zip_map(out, "exp", |gv, y| gv * y).unwrap())],
        Op::SumAll(a) => {
            let gv = g.data()[0];
            vec![(a, Tensor::full(val(a).shape(), gv))]
        }
        Op::MeanAll(a) => {
            let gv = g.data()[0] / T::lit(val(a).len() as f64);
            vec![(a, Tensor::full(val(a).shape(), gv))]
        }
        Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
            let shape = val(a).shape();
            let (outer, len, inner) = axis_split(shape, axis);
            let scale = match nodes[id].op {
                Op::MeanAxis(..) => T::one() / T::lit(len as f64),
                _ => T::one(),
            };
            let mut data = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        data[(o * len + l) * inner + i] = g.data()[o * inner + i] * scale;
                    }
                }
            }
            vec![(a, Tensor::from_parts(shape.to_vec(), data))]
        }
        Op::VarAxis(a, axis) => {
            let x = val(a);
            let (outer, len, inner) = axis_split(x.shape(), axis);
            let means = axis_means(x, axis);
            let k = T::lit(2.0) / T::lit((len - 1) as f64);
            let mut data = vec![T::zero(); x.len()];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        let at = (o * len + l) * inner + i;
                        let r = o * inner + i;
                        data[at] = g.data()[r] * k * (x.data()[at] - means[r]);
                    }
                }
            }
            vec![(a, Tensor::from_parts(x.shape().to_vec(), data))]
        }
        Op::Transpose(a) => vec![(a, g.transpose().unwrap())],
        Op::PairwiseSqDist(a, b) => {
            let (x, y) = (val(a), val(b));
            let (n, d) = (x.shape()[0], x.shape()[1]);
            let m = y.shape()[0];
            let two = T::lit(2.0);
            let mut gx = vec![T::zero(); n * d];
            let mut gy = vec![T::zero(); m * d];
            for i in 0..n {
                let xi = x.row(i);
                for j in 0..m {
                    let gij = g.data()[i * m + j];
                    if gij == T::zero() {
                        continue;
                    }
                    let yj = y.row(j);
                    for k in 0..d {
                        let t = two * gij * (xi[k] - yj[k]);
                        gx[i * d + k] = gx[i * d + k] + t;
                        gy[j * d + k] = gy[j * d + k] - t;
                    }
                }
            }
            vec![
                (a, Tensor::from_parts(vec![n, d], gx)),
                (b, Tensor::from_parts(vec![m, d], gy)),
            ]
        }
    }
}

fn axis_means<T: Scalar>(x: &Tensor<T>, axis: usize) -> Vec<T> {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut sums = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for l in 0..len {
            for i in 0..inner {
                sums[o * inner + i] = sums[o * inner + i] + x.data()[(o * len + l) * inner + i];
            }
        }
    }
    let n = T::lit(len as f64);
    sums.into_iter().map(|s| s / n).collect()
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.grad_of(self.id)
    }

    /// Scalar value of a single-element node.
    pub fn item(&self) -> Result<T> {
        self.value().item()
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: Var<'t, T>, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn matmul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.value().zip_map(&other.value(), "add", |a, b| a + b)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.value().zip_map(&other.value(), "sub", |a, b| a - b)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.value().zip_map(&other.value(), "mul", |a, b| a * b)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    /// Adds a length-`d` row vector to every row of an `[n × d]` matrix.
    pub fn add_row(&self, row: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = self.value();
        let r = row.value();
        let (_, d) = x.dims2("add_row")?;
        if r.rank() != 1 || r.len() != d {
            return Err(Error::dim("add_row", x.shape(), r.shape()));
        }
        let mut data = x.data().to_vec();
        for chunk in data.chunks_exact_mut(d) {
            for (a, &b) in chunk.iter_mut().zip(r.data()) {
                *a = *a + b;
            }
        }
        let v = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.binary(row, v, Op::AddRow(self.id, row.id)))
    }

    pub fn scale(&self, k: T) -> Var<'t, T> {
        let v = self.value().map(|x| x * k);
        self.unary(v, Op::Scale(self.id, k))
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn add_scalar(&self, k: T) -> Var<'t, T> {
        let v = self.value().map(|x| x + k);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn relu(&self) -> Var<'t, T> {
        let v = self
            .value()
            .map(|x| if x > T::zero() { x } else { T::zero() });
        self.unary(v, Op::Relu(self.id))
    }

    pub fn sqrt(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.data().iter().any(|&v| v <= T::zero()) {
            return Err(Error::Parameter("sqrt of a non-positive value".into()));
        }
        Ok(self.unary(x.map(|v| v.sqrt()), Op::Sqrt(self.id)))
    }

    pub fn exp(&self) -> Var<'t, T> {
        let v = self.value().map(|x| x.exp());
        self.unary(v, Op::Exp(self.id))
    }

    pub fn square(&self) -> Var<'t, T> {
        self.mul(*self).expect("identical shapes")
    }

    pub fn transpose(&self) -> Result<Var<'t, T>> {
        let v = self.value().transpose()?;
        Ok(self.unary(v, Op::Transpose(self.id)))
    }

    pub fn sum(&self) -> Var<'t, T> {
        let v = Tensor::scalar(self.value().sum_all());
        self.unary(v, Op::SumAll(self.id))
    }

    pub fn mean(&self) -> Var<'t, T> {
        let x = self.value();
        let v = Tensor::scalar(x.sum_all() / T::lit(x.len() as f64));
        self.unary(v, Op::MeanAll(self.id))
    }

    /// Mean with the elements summed in ascending order, so the value does
    /// not depend on how they are arranged.
    pub fn mean_sorted(&self) -> Var<'t, T> {
        let x = self.value();
        let mut vals = x.data().to_vec();
        vals.sort_by(|a, b| a.as_f64().total_cmp(&b.as_f64()));
        let sum = vals.into_iter().fold(T::zero(), |acc, v| acc + v);
        let v = Tensor::scalar(sum / T::lit(x.len() as f64));
        self.unary(v, Op::MeanAll(self.id))
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Parameter(format!(
                "axis {axis} out of range for rank {}",
                shape.len()
            )));
        }
        Ok(())
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        self.check_axis(axis)?;
        let x = self.value();
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let means = axis_means(&x, axis);
        let k = T::lit(len as f64);
        let v = Tensor::from_parts(
            reduced_shape(x.shape(), axis),
            means.into_iter().map(|m| m * k).collect(),
        );
        debug_assert_eq!(v.len(), outer * inner);
        Ok(self.unary(v, Op::SumAxis(self.id, axis)))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        self.check_axis(axis)?;
        let x = self.value();
        let v = Tensor::from_parts(reduced_shape(x.shape(), axis), axis_means(&x, axis));
        Ok(self.unary(v, Op::MeanAxis(self.id, axis)))
    }

    /// Unbiased variance along `axis`.
    pub fn var_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        self.check_axis(axis)?;
        let x = self.value();
        let (outer, len, inner) = axis_split(x.shape(), axis);
        if len < 2 {
            return Err(Error::InsufficientSamples {
                op: "var_per_dim",
                needed: 2,
                got: len,
            });
        }
        let means = axis_means(&x, axis);
        let mut acc = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    let d = x.data()[(o * len + l) * inner + i] - means[o * inner + i];
                    acc[o * inner + i] = acc[o * inner + i] + d * d;
                }
            }
        }
        let div = T::lit((len - 1) as f64);
        let v = Tensor::from_parts(
            reduced_shape(x.shape(), axis),
            acc.into_iter().map(|s| s / div).collect(),
        );
        Ok(self.unary(v, Op::VarAxis(self.id, axis)))
    }

    /// `D[i,j] = ‖x_i − y_j‖²` for `x: [n × d]`, `y: [m × d]`.
    pub fn pairwise_sq_dist(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = self.value();
        let y = other.value();
        let (n, d) = x.dims2("pairwise_sq_dist")?;
        let (m, d2) = y.dims2("pairwise_sq_dist")?;
        if d != d2 {
            return Err(Error::dim("pairwise_sq_dist", x.shape(), y.shape()));
        }
        let v = Tensor::from_parts(vec![n, m], sq_dist_matrix(&x, &y));
        Ok(self.binary(other, v, Op::PairwiseSqDist(self.id, other.id)))
    }
}

pub(crate) fn sq_dist_matrix<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Vec<T> {
    let n = x.shape()[0];
    let m = y.shape()[0];
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let xi = x.row(i);
        for j in 0..m {
            out.push(
                xi.iter()
                    .zip(y.row(j))
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum(),
            );
        }
    }
    out
}

pub fn matmul<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    a.matmul(b)
}

pub fn elementwise<'t, T: Scalar>(
    a: Var<'t, T>,
    b: Var<'t, T>,
    op: ElementwiseOp,
) -> Result<Var<'t, T>> {
    match op {
        ElementwiseOp::Add => a.add(b),
        ElementwiseOp::Sub => a.sub(b),
        ElementwiseOp::Mul => a.mul(b),
    }
}

/// Reduction over all elements (`axis = None`) or along one axis.
/// `VarPerDim` without an axis reduces over rows.
pub fn reduce<'t, T: Scalar>(
    t: Var<'t, T>,
    op: ReduceOp,
    axis: Option<usize>,
) -> Result<Var<'t, T>> {
    match (op, axis) {
        (ReduceOp::Sum, None) => Ok(t.sum()),
        (ReduceOp::Sum, Some(a)) => t.sum_axis(a),
        (ReduceOp::Mean, None) => Ok(t.mean()),
        (ReduceOp::Mean, Some(a)) => t.mean_axis(a),
        (ReduceOp::VarPerDim, a) => t.var_axis(a.unwrap_or(0)),
    }
}

/// Uniform multi-bandwidth Gaussian kernel,
/// `K[i,j] = mean_σ exp(−‖x_i − y_j‖² / 2σ²)`.
pub fn rbf_kernel<'t, T: Scalar>(
    x: Var<'t, T>,
    y: Var<'t, T>,
    bandwidths: &[T],
) -> Result<Var<'t, T>> {
    if bandwidths.is_empty() {
        return Err(Error::Parameter(
            "rbf_kernel needs at least one bandwidth".into(),
        ));
    }
    if let Some(bad) = bandwidths
        .iter()
        .find(|&&s| !(s > T::zero()) || !s.is_finite())
    {
        return Err(Error::Parameter(format!(
            "bandwidth must be positive and finite, got {bad:?}"
        )));
    }
    let d = x.pairwise_sq_dist(y)?;
    let mut acc: Option<Var<'t, T>> = None;
    for &sigma in bandwidths {
        let k = d.scale(-T::one() / (T::lit(2.0) * sigma * sigma)).exp();
        acc = Some(match acc {
            None => k,
            Some(a) => a.add(k)?,
        });
    }
    let sum = acc.expect("non-empty bandwidths");
    Ok(if bandwidths.len() == 1 {
        sum
    } else {
        sum.scale(T::one() / T::lit(bandwidths.len() as f64))
    })
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the root w.r.t. `v`; `None` if no gradient path reached it.
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient w.r.t. `v`, zeros when it is off the gradient path.
    pub fn wrt(&self, v: Var<'_, T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(vec![1.0, 2.0]).unwrap());
        let y = x.square().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::<f64>::new();
        let w = tape.constant(Tensor::ones(&[2, 2]));
        let x = tape.param(Tensor::ones(&[1, 2]));
        let y = x.matmul(w).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.wrt(w).data(), &[0.0; 4]);
        assert_eq!(g.wrt(x).data(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn elementwise_identities() {
        let tape = Tape::<f64>::new();
        let s = tape.constant(Tensor::from_rows(&[&[0.5, -2.0, 3.0]]).unwrap());
        let ones = tape.constant(Tensor::ones(&[1, 3]));
        let m = elementwise(ones, s, ElementwiseOp::Mul).unwrap();
        assert_eq!(*m.value(), *s.value());
        let z = elementwise(s, s, ElementwiseOp::Sub).unwrap();
        assert_eq!(z.value().data(), &[0.0; 3]);
        let bad = tape.constant(Tensor::ones(&[3, 1]));
        assert!(matches!(
            elementwise(s, bad, ElementwiseOp::Add),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn reductions() {
        let tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]).unwrap());
        assert_eq!(reduce(v, ReduceOp::Sum, None).unwrap().item().unwrap(), 6.0);
        let two = tape.constant(Tensor::from_rows(&[&[0.0], &[2.0]]).unwrap());
        let var = reduce(two, ReduceOp::VarPerDim, None).unwrap();
        assert_eq!(var.value().data(), &[2.0]);
        let one = tape.constant(Tensor::from_rows(&[&[1.0, 2.0]]).unwrap());
        assert!(matches!(
            reduce(one, ReduceOp::VarPerDim, None),
            Err(Error::InsufficientSamples { got: 1, .. })
        ));
        assert!(reduce(one, ReduceOp::Mean, Some(2)).is_err());
    }

    #[test]
    fn rbf_closed_forms() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_rows(&[&[0.0]]).unwrap());
        let y = tape.constant(Tensor::from_rows(&[&[2.0]]).unwrap());
        let k = rbf_kernel(x, y, &[2f64.sqrt()]).unwrap();
        assert!((k.item().unwrap() - (-1f64).exp()).abs() < 1e-15);

        let pts =
            tape.constant(Tensor::from_rows(&[&[0.3, -1.0], &[2.0, 0.1], &[5.0, 5.0]]).unwrap());
        let kk = rbf_kernel(pts, pts, &[0.1, 1.0, 7.0]).unwrap().value();
        for i in 0..3 {
            assert_eq!(kk.data()[i * 3 + i], 1.0);
        }
        assert!(rbf_kernel(x, y, &[]).is_err());
        assert!(rbf_kernel(x, y, &[0.0]).is_err());
        assert!(rbf_kernel(x, y, &[-1.0]).is_err());
    }

    #[test]
    fn depends_on_tracks_paths() {
        let tape = Tape::<f64>::new();
        let a = tape.param(Tensor::ones(&[2]));
        let b = tape.param(Tensor::ones(&[2]));
        let c = a.square().sum();
        assert!(tape.depends_on(c, a));
        assert!(!tape.depends_on(c, b));
    }
}
