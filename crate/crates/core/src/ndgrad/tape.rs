use std::cell::{Cell, RefCell};

use crate::{Error, Result};

use super::tensor::{axis_split, shape_without_axis};
use super::{Tensor, NORM_EPSILON};

type BackFn = Box<dyn Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Tensor>>;

struct Op {
    parents: Vec<usize>,
    /// (parent values, node value, upstream grad) -> one grad per parent.
    back: BackFn,
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
    op: Option<Op>,
}

/// Eager record of executed ops; execution order is the topological order.
///
/// A tape is consumed by a single [`Tape::backward`] call and is not
/// shareable across threads.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// Records a differentiable leaf; its gradient is populated by backward.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value,
            requires_grad: true,
            grad: None,
            op: None,
        })
    }

    /// Records a non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value,
            requires_grad: false,
            grad: None,
            op: None,
        })
    }

    fn record(&self, value: Tensor, parents: Vec<usize>, back: BackFn) -> Var<'_> {
        self.push(Node {
            value,
            requires_grad: false,
            grad: None,
            op: Some(Op { parents, back }),
        })
    }

    /// Propagates `loss` gradients to every differentiable leaf.
    ///
    /// The loss must be a scalar produced by recorded ops; a tape can only
    /// be traversed once.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if self.consumed.get() {
            return Err(Error::GraphConsumed);
        }
        let mut nodes = self.nodes.borrow_mut();
        {
            let ln = &nodes[loss.idx];
            if !ln.value.is_scalar() {
                return Err(Error::NonScalarLoss(ln.value.shape().to_vec()));
            }
            if ln.op.is_none() {
                return Err(Error::DetachedTensor);
            }
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            if nodes[i].op.is_some() {
                let op = nodes[i].op.as_ref().expect("checked above");
                let pvals: Vec<&Tensor> =
                    op.parents.iter().map(|&p| &nodes[p].value).collect();
                let pgrads = (op.back)(&pvals, &nodes[i].value, &g);
                debug_assert_eq!(pgrads.len(), op.parents.len());
                let parents = op.parents.clone();
                for (p, pg) in parents.into_iter().zip(pgrads) {
                    match &mut grads[p] {
                        Some(acc) => acc.accumulate(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            } else if nodes[i].requires_grad {
                nodes[i].grad = Some(g);
            }
        }
        self.consumed.set(true);
        Ok(())
    }
}

fn unary<'t>(
    v: Var<'t>,
    f: impl Fn(f64) -> f64,
    // derivative as a function of (input, output)
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Var<'t> {
    let value = {
        let nodes = v.tape.nodes.borrow();
        let x = &nodes[v.idx].value;
        Tensor::new(
            x.shape(),
            x.iter().map(|&a| f(a)).collect(),
        )
        .expect("unary preserves shape")
    };
    v.tape.record(
        value,
        vec![v.idx],
        Box::new(move |p, y, g| {
            let data = p[0]
                .iter()
                .zip(y.iter())
                .zip(g.iter())
                .map(|((&x, &yv), &gv)| gv * df(x, yv))
                .collect();
            vec![Tensor::new(p[0].shape(), data).expect("same shape")]
        }),
    )
}

fn check_same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.idx].value.shape().to_vec()
    }

    /// Gradient populated by backward; `None` for non-leaves or before
    /// backward has run.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.nodes.borrow()[self.idx].grad.clone()
    }

    fn binary(
        &self,
        other: &Var<'t>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        // grads as functions of (a, b, upstream)
        da: impl Fn(f64, f64, f64) -> f64 + 'static,
        db: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.idx].value;
            let b = &nodes[other.idx].value;
            check_same_shape(op, a.shape(), b.shape())?;
            Tensor::new(
                a.shape(),
                a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect(),
            )?
        };
        Ok(self.tape.record(
            value,
            vec![self.idx, other.idx],
            Box::new(move |p, _, g| {
                let (a, b) = (p[0], p[1]);
                let ga = a
                    .iter()
                    .zip(b.iter())
                    .zip(g.iter())
                    .map(|((&x, &y), &gv)| da(x, y, gv))
                    .collect();
                let gb = a
                    .iter()
                    .zip(b.iter())
                    .zip(g.iter())
                    .map(|((&x, &y), &gv)| db(x, y, gv))
                    .collect();
                vec![
                    Tensor::new(a.shape(), ga).expect("same shape"),
                    Tensor::new(b.shape(), gb).expect("same shape"),
                ]
            }),
        ))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "mul",
            |a, b| a * b,
            |_, b, g| g * b,
            |a, _, g| g * a,
        )
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "div",
            |a, b| a / b,
            |_, b, g| g / b,
            |a, b, g| -g * a / (b * b),
        )
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        unary(*self, move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        unary(*self, move |x| x + c, |_, _| 1.0)
    }

    pub fn relu(&self) -> Var<'t> {
        unary(
            *self,
            |x| x.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&self) -> Var<'t> {
        const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044_715;
        unary(
            *self,
            |x| 0.5 * x * (1.0 + (K * (x + A * x * x * x)).tanh()),
            |x, _| {
                let u = K * (x + A * x * x * x);
                let t = u.tanh();
                let sech2 = 1.0 - t * t;
                0.5 * (1.0 + t) + 0.5 * x * sech2 * K * (1.0 + 3.0 * A * x * x)
            },
        )
    }

    pub fn sigmoid(&self) -> Var<'t> {
        unary(
            *self,
            |x| 1.0 / (1.0 + (-x).exp()),
            |_, y| y * (1.0 - y),
        )
    }

    pub fn log(&self) -> Var<'t> {
        unary(*self, |x| x.ln(), |x, _| 1.0 / x)
    }

    pub fn square(&self) -> Var<'t> {
        unary(*self, |x| x * x, |x, _| 2.0 * x)
    }

    /// Elementwise power with a constant exponent (inputs assumed >= 0).
    pub fn powf(&self, c: f64) -> Var<'t> {
        unary(
            *self,
            move |x| x.powf(c),
            move |x, _| {
                if c == 0.0 {
                    0.0
                } else {
                    c * x.powf(c - 1.0)
                }
            },
        )
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let (value, in_shape) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.idx].value;
            if axis >= x.shape().len() {
                return Err(Error::InvalidArgument(format!(
                    "axis {axis} out of range for shape {:?}",
                    x.shape()
                )));
            }
            let (outer, n, inner) = axis_split(x.shape(), axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for k in 0..n {
                    for i in 0..inner {
                        out[o * inner + i] += x.data()[(o * n + k) * inner + i];
                    }
                }
            }
            (
                Tensor::new(&shape_without_axis(x.shape(), axis), out)?,
                x.shape().to_vec(),
            )
        };
        Ok(self.tape.record(
            value,
            vec![self.idx],
            Box::new(move |_, _, g| {
                let (outer, n, inner) = axis_split(&in_shape, axis);
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            gx[(o * n + k) * inner + i] = g.data()[o * inner + i];
                        }
                    }
                }
                vec![Tensor::new(&in_shape, gx).expect("same count")]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        let n = {
            let nodes = self.tape.nodes.borrow();
            let shape = nodes[self.idx].value.shape();
            if axis >= shape.len() {
                return Err(Error::InvalidArgument(format!(
                    "axis {axis} out of range for shape {shape:?}"
                )));
            }
            shape[axis]
        };
        Ok(self.sum_axis(axis)?.scale(1.0 / n as f64))
    }

    /// Sums every element down to a scalar.
    pub fn sum_all(&self) -> Result<Var<'t>> {
        let mut v = *self;
        while v.shape().len() > 1 || v.shape()[0] > 1 {
            v = v.sum_axis(0)?;
        }
        Ok(v)
    }

    /// Max over `axis`, returning the reduced tensor and per-slot argmax
    /// indices (lowest index wins on ties). The gradient routes entirely
    /// to the recorded argmax element.
    pub fn max_axis(&self, axis: usize) -> Result<(Var<'t>, Vec<usize>)> {
        let (value, argmax, in_shape) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.idx].value;
            if axis >= x.shape().len() {
                return Err(Error::InvalidArgument(format!(
                    "axis {axis} out of range for shape {:?}",
                    x.shape()
                )));
            }
            let (outer, n, inner) = axis_split(x.shape(), axis);
            if n == 0 {
                return Err(Error::InvalidArgument(
                    "max over an empty axis".to_string(),
                ));
            }
            let mut out = vec![f64::NEG_INFINITY; outer * inner];
            let mut arg = vec![0usize; outer * inner];
            for o in 0..outer {
                for k in 0..n {
                    for i in 0..inner {
                        let v = x.data()[(o * n + k) * inner + i];
                        let slot = o * inner + i;
                        if v > out[slot] {
                            out[slot] = v;
                            arg[slot] = k;
                        }
                    }
                }
            }
            (
                Tensor::new(&shape_without_axis(x.shape(), axis), out)?,
                arg,
                x.shape().to_vec(),
            )
        };
        let arg_back = argmax.clone();
        let var = self.tape.record(
            value,
            vec![self.idx],
            Box::new(move |_, _, g| {
                let (outer, n, inner) = axis_split(&in_shape, axis);
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        gx[(o * n + arg_back[slot]) * inner + i] = g.data()[slot];
                    }
                }
                vec![Tensor::new(&in_shape, gx).expect("same count")]
            }),
        );
        Ok((var, argmax))
    }

    /// L2 norm over the last axis with an epsilon guard under the root.
    pub fn l2_norm_last(&self) -> Result<Var<'t>> {
        let (value, in_shape) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.idx].value;
            let rank = x.shape().len();
            let axis = rank - 1;
            let (outer, n, _) = axis_split(x.shape(), axis);
            let mut out = vec![0.0; outer];
            for o in 0..outer {
                let mut s = NORM_EPSILON;
                for k in 0..n {
                    let v = x.data()[o * n + k];
                    s += v * v;
                }
                out[o] = s.sqrt();
            }
            (
                Tensor::new(&shape_without_axis(x.shape(), axis), out)?,
                x.shape().to_vec(),
            )
        };
        Ok(self.tape.record(
            value,
            vec![self.idx],
            Box::new(move |p, y, g| {
                let axis = in_shape.len() - 1;
                let (outer, n, _) = axis_split(&in_shape, axis);
                let mut gx = vec![0.0; outer * n];
                for o in 0..outer {
                    let coeff = g.data()[o] / y.data()[o];
                    for k in 0..n {
                        gx[o * n + k] = coeff * p[0].data()[o * n + k];
                    }
                }
                vec![Tensor::new(&in_shape, gx).expect("same count")]
            }),
        ))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let (value, in_shape) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.idx].value;
            if axis >= x.shape().len() {
                return Err(Error::InvalidArgument(format!(
                    "axis {axis} out of range for shape {:?}",
                    x.shape()
                )));
            }
            let (outer, n, inner) = axis_split(x.shape(), axis);
            let mut out = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| x.data()[(o * n + k) * inner + i];
                    let m = (0..n).map(at).fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = (0..n).map(|k| (at(k) - m).exp()).sum();
                    for k in 0..n {
                        out[(o * n + k) * inner + i] = (at(k) - m).exp() / z;
                    }
                }
            }
            (Tensor::new(x.shape(), out)?, x.shape().to_vec())
        };
        Ok(self.tape.record(
            value,
            vec![self.idx],
            Box::new(move |_, y, g| {
                let (outer, n, inner) = axis_split(&in_shape, axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + i;
                        let dot: f64 = (0..n)
                            .map(|k| g.data()[idx(k)] * y.data()[idx(k)])
                            .sum();
                        for k in 0..n {
                            gx[idx(k)] = y.data()[idx(k)] * (g.data()[idx(k)] - dot);
                        }
                    }
                }
                vec![Tensor::new(&in_shape, gx).expect("same count")]
            }),
        ))
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (value, m, k, n) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.idx].value;
            let b = &nodes[other.idx].value;
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0]
            {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let av = a.data()[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        out[i * n + j] += av * b.data()[p * n + j];
                    }
                }
            }
            (Tensor::new(&[m, n], out)?, m, k, n)
        };
        Ok(self.tape.record(
            value,
            vec![self.idx, other.idx],
            Box::new(move |p, _, g| {
                let (a, b) = (p[0], p[1]);
                // dA = G * B^T
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gv = g.data()[i * n + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for q in 0..k {
                            ga[i * k + q] += gv * b.data()[q * n + j];
                        }
                    }
                }
                // dB = A^T * G
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for q in 0..k {
                        let av = a.data()[i * k + q];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[q * n + j] += av * g.data()[i * n + j];
                        }
                    }
                }
                vec![
                    Tensor::new(&[m, k], ga).expect("count"),
                    Tensor::new(&[k, n], gb).expect("count"),
                ]
            }),
        ))
    }

    /// 2-D transpose; the gradient transposes back.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let (value, m, n) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.idx].value;
            if x.shape().len() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "transpose needs a 2-D tensor, got shape {:?}",
                    x.shape()
                )));
            }
            let (m, n) = (x.shape()[0], x.shape()[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = x.data()[i * n + j];
                }
            }
            (Tensor::new(&[n, m], out)?, m, n)
        };
        Ok(self.tape.record(
            value,
            vec![self.idx],
            Box::new(move |_, _, g| {
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] = g.data()[j * m + i];
                    }
                }
                vec![Tensor::new(&[m, n], gx).expect("count")]
            }),
        ))
    }

    /// Row-major reshape to a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let (value, in_shape) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.idx].value;
            let expected: usize = shape.iter().product();
            if expected != x.len() {
                return Err(Error::InvalidTensor {
                    shape: shape.to_vec(),
                    expected,
                    actual: x.len(),
                });
            }
            (
                Tensor::new(shape, x.data().to_vec())?,
                x.shape().to_vec(),
            )
        };
        Ok(self.tape.record(
            value,
            vec![self.idx],
            Box::new(move |_, _, g| {
                vec![Tensor::new(&in_shape, g.data().to_vec()).expect("count")]
            }),
        ))
    }

    /// Broadcasts a 1-D vector along `axis` of `shape`; the gradient sums
    /// over every other axis.
    pub fn broadcast(&self, shape: &[usize], axis: usize) -> Result<Var<'t>> {
        let (value, n) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.idx].value;
            if x.shape().len() != 1 || axis >= shape.len() || shape[axis] != x.shape()[0] {
                return Err(Error::ShapeMismatch {
                    op: "broadcast",
                    lhs: x.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            let (outer, n, inner) = axis_split(shape, axis);
            let mut out = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for k in 0..n {
                    for i in 0..inner {
                        out[(o * n + k) * inner + i] = x.data()[k];
                    }
                }
            }
            (Tensor::new(shape, out)?, x.shape()[0])
        };
        let shape = shape.to_vec();
        Ok(self.tape.record(
            value,
            vec![self.idx],
            Box::new(move |_, _, g| {
                let (outer, nn, inner) = axis_split(&shape, axis);
                let mut gx = vec![0.0; n];
                for o in 0..outer {
                    for k in 0..nn {
                        for i in 0..inner {
                            gx[k] += g.data()[(o * nn + k) * inner + i];
                        }
                    }
                }
                vec![Tensor::vector(gx)]
            }),
        ))
    }
}

/// Concatenates along `axis`; extents must agree on every other axis.
pub fn concat<'t>(axis: usize, parts: &[Var<'t>]) -> Result<Var<'t>> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("concat of zero tensors".to_string()));
    }
    let tape = parts[0].tape;
    let (value, part_shapes) = {
        let nodes = tape.nodes.borrow();
        let first = nodes[parts[0].idx].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidArgument(format!(
                "axis {axis} out of range for shape {first:?}"
            )));
        }
        let mut part_shapes = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for v in parts {
            let s = nodes[v.idx].value.shape().to_vec();
            let mut a = s.clone();
            let mut b = first.clone();
            a[axis] = 0;
            b[axis] = 0;
            check_same_shape("concat", &a, &b)?;
            total += s[axis];
            part_shapes.push(s);
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, n, inner) = axis_split(&out_shape, axis);
        let mut out = vec![0.0; outer * n * inner];
        let mut offset = 0usize;
        for (v, s) in parts.iter().zip(&part_shapes) {
            let pn = s[axis];
            let data = nodes[v.idx].value.data();
            for o in 0..outer {
                for k in 0..pn {
                    for i in 0..inner {
                        out[(o * n + offset + k) * inner + i] =
                            data[(o * pn + k) * inner + i];
                    }
                }
            }
            offset += pn;
        }
        (Tensor::new(&out_shape, out)?, part_shapes)
    };
    let out_shape = value.shape().to_vec();
    Ok(tape.record(
        value,
        parts.iter().map(|v| v.idx).collect(),
        Box::new(move |_, _, g| {
            let (outer, n, inner) = axis_split(&out_shape, axis);
            let mut grads = Vec::with_capacity(part_shapes.len());
            let mut offset = 0usize;
            for s in &part_shapes {
                let pn = s[axis];
                let mut gx = vec![0.0; outer * pn * inner];
                for o in 0..outer {
                    for k in 0..pn {
                        for i in 0..inner {
                            gx[(o * pn + k) * inner + i] =
                                g.data()[(o * n + offset + k) * inner + i];
                        }
                    }
                }
                grads.push(Tensor::new(s, gx).expect("count"));
                offset += pn;
            }
            grads
        }),
    ))
}
