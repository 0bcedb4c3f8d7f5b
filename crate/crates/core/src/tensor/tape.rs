use super::kernels::{self, ConvGeometry};
use super::{numel, Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Stored<'a, S> {
    Owned(Tensor<S>),
    Borrowed(&'a Tensor<S>),
}

impl<S> Stored<'_, S> {
    fn get(&self) -> &Tensor<S> {
        match self {
            Stored::Owned(t) => t,
            Stored::Borrowed(t) => t,
        }
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv1d {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeometry,
    },
    Relu {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: S,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Sum {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<S>,
    },
}

struct Node<'a, S> {
    value: Stored<'a, S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is already a topological order;
/// [`backward`](Tape::backward) walks them once in reverse.
pub struct Tape<'a, S: Scalar> {
    nodes: Vec<Node<'a, S>>,
    relu_masks: Option<Vec<Vec<bool>>>,
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, S: Scalar> Tape<'a, S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            relu_masks: None,
        }
    }

    /// A tape that also records the sign pattern of every relu input, used by
    /// [`grad_check`](super::grad_check) to detect kink crossings.
    pub fn with_kink_log() -> Self {
        Tape {
            nodes: Vec::new(),
            relu_masks: Some(Vec::new()),
        }
    }

    pub(crate) fn relu_masks(&self) -> Option<&[Vec<bool>]> {
        self.relu_masks.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a borrowed leaf. Its gradient is collected iff the tensor
    /// `requires_grad`.
    pub fn leaf(&mut self, t: &'a Tensor<S>) -> Var {
        let needs_grad = t.requires_grad();
        self.push(Stored::Borrowed(t), Op::Leaf, needs_grad)
    }

    /// Records an owned leaf (inputs, constants).
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        let needs_grad = t.requires_grad();
        self.push(Stored::Owned(t), Op::Leaf, needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        self.nodes[v.0].value.get()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Stored<'a, S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_result(
        &mut self,
        shape: Vec<usize>,
        values: Vec<S>,
        op: Op<S>,
        parents: &[Var],
    ) -> Result<Var> {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let t = Tensor::new(shape, values)?;
        Ok(self.push(Stored::Owned(t), op, needs_grad))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// `y[..., j] = Σ_i w[j, i]·x[..., i] + b[j]`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let d_in = *xs.last().unwrap_or(&0);
        if ws.len() != 2 || ws[1] != d_in || xs.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                left: xs.to_vec(),
                right: ws.to_vec(),
            });
        }
        let d_out = ws[0];
        if bs != [d_out] {
            return Err(TensorError::ShapeMismatch {
                op: "linear bias",
                left: ws.to_vec(),
                right: bs.to_vec(),
            });
        }
        let rows = numel(xs) / d_in;
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = d_out;
        let y = kernels::linear_forward(
            self.value(x).values(),
            self.value(w).values(),
            self.value(b).values(),
            rows,
            d_in,
            d_out,
        );
        self.push_result(shape, y, Op::Linear { x, w, b }, &[x, w, b])
    }

    /// Cross-correlation over the last axis of `x: [batch, c_in, T]` (or
    /// `[c_in, T]`) with `k: [c_out, c_in, width]` and zero padding.
    pub fn conv1d(&mut self, x: Var, k: Var, b: Var, padding: usize) -> Result<Var> {
        let (xs, ks, bs) = (
            self.shape(x).to_vec(),
            self.shape(k).to_vec(),
            self.shape(b).to_vec(),
        );
        let (batch, c_in, len, unbatched) = match xs.as_slice() {
            [c, t] => (1, *c, *t, true),
            [n, c, t] => (*n, *c, *t, false),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "conv1d",
                    left: xs,
                    right: ks,
                })
            }
        };
        if ks.len() != 3 || ks[1] != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                left: xs,
                right: ks,
            });
        }
        if bs != [ks[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d bias",
                left: ks,
                right: bs,
            });
        }
        if ks[2] == 0 || ks[2] > len + 2 * padding {
            return Err(TensorError::InvalidWindow {
                kernel: ks[2],
                padded: len + 2 * padding,
            });
        }
        let geom = ConvGeometry {
            batch,
            c_in,
            c_out: ks[0],
            len,
            kernel: ks[2],
            padding,
        };
        let y = kernels::conv1d_forward(
            self.value(x).values(),
            self.value(k).values(),
            self.value(b).values(),
            &geom,
        );
        let shape = if unbatched {
            vec![geom.c_out, geom.out_len()]
        } else {
            vec![batch, geom.c_out, geom.out_len()]
        };
        self.push_result(shape, y, Op::Conv1d { x, k, b, geom }, &[x, k, b])
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let y: Vec<S> = xv
            .values()
            .iter()
            .map(|&v| if v > S::zero() { v } else { S::zero() })
            .collect();
        let shape = xv.shape().to_vec();
        if let Some(masks) = &mut self.relu_masks {
            masks.push(y.iter().map(|&v| v > S::zero()).collect());
        }
        self.push_result(shape, y, Op::Relu { x }, &[x])
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.check_axis("softmax", x, axis)?;
        let (outer, len, inner) = kernels::split_axis(&shape, axis);
        let y = kernels::softmax_forward(self.value(x).values(), outer, len, inner);
        self.push_result(shape, y, Op::Softmax { x, axis }, &[x])
    }

    /// Elementwise product; axes of size 1 broadcast against the other operand.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let shape = kernels::broadcast_shape(sa, sb).ok_or_else(|| TensorError::ShapeMismatch {
            op: "mul",
            left: sa.to_vec(),
            right: sb.to_vec(),
        })?;
        let ia = kernels::broadcast_index(sa, &shape);
        let ib = kernels::broadcast_index(sb, &shape);
        let (va, vb) = (self.value(a).values(), self.value(b).values());
        let y = ia.iter().zip(&ib).map(|(&i, &j)| va[i] * vb[j]).collect();
        self.push_result(shape, y, Op::Mul { a, b }, &[a, b])
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let shape = sa.to_vec();
        let y = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&p, &q)| p + q)
            .collect();
        self.push_result(shape, y, Op::Add { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: S) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let y = self.value(x).values().iter().map(|&v| v * factor).collect();
        self.push_result(shape, y, Op::Scale { x, factor }, &[x])
    }

    /// Arithmetic mean along `axis`; the axis is removed.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.check_axis("mean_axis", x, axis)?;
        let (outer, len, inner) = kernels::split_axis(&shape, axis);
        let xv = self.value(x).values();
        let n = S::from_usize(len).expect("axis length fits");
        let mut y = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for t in 0..len {
                let row = &xv[(o * len + t) * inner..][..inner];
                for (acc, &v) in y[o * inner..][..inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        y.iter_mut().for_each(|v| *v /= n);
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.push_result(out_shape, y, Op::MeanAxis { x, axis }, &[x])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).values().iter().copied().sum();
        self.push_result(Vec::new(), vec![total], Op::Sum { x }, &[x])
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = S::from_usize(self.value(x).len()).expect("length fits");
        let s = self.sum(x)?;
        self.scale(s, S::one() / n)
    }

    /// Joins tensors along `axis`; every other axis must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let base = self.check_axis("concat", *first, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base;
        shape[axis] = total;
        let (outer, _, inner) = kernels::split_axis(&shape, axis);
        let mut y = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                y.extend_from_slice(&self.value(p).values()[o * chunk..][..chunk]);
            }
        }
        self.push_result(
            shape,
            y,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape.to_vec(),
            });
        }
        let y = self.value(x).values().to_vec();
        self.push_result(shape.to_vec(), y, Op::Reshape { x }, &[x])
    }

    /// Per-row `−log softmax(logits)[target]` over the last axis. The result
    /// drops the class axis, so `[classes]` logits give a scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let classes = *shape
            .last()
            .ok_or_else(|| TensorError::Contract("cross_entropy on a scalar".into()))?;
        let rows = numel(&shape) / classes;
        if targets.len() != rows {
            return Err(TensorError::Contract(format!(
                "cross_entropy: {} targets for {rows} rows",
                targets.len()
            )));
        }
        if let Some(&label) = targets.iter().find(|&&t| t >= classes) {
            return Err(TensorError::LabelOutOfRange {
                op: "cross_entropy",
                label,
                classes,
            });
        }
        let (losses, probs) =
            kernels::cross_entropy_forward(self.value(logits).values(), classes, targets);
        let out_shape = shape[..shape.len() - 1].to_vec();
        self.push_result(
            out_shape,
            losses,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op,
                axis,
                shape: shape.to_vec(),
            });
        }
        Ok(shape.to_vec())
    }

    /// Reverse sweep from a scalar `root`. Consumes the tape; the returned
    /// gradients cover every leaf that required one.
    pub fn backward(self, root: Var) -> Result<Gradients<S>> {
        let root_shape = self.shape(root);
        if numel(root_shape) != 1 || !root_shape.iter().all(|&d| d == 1) {
            return Err(TensorError::NonScalarRoot(root_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.needs(root) {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(vec![S::one()]);
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            self.propagate(&node.op, node.value.get(), &dy, &mut grads);
        }
        // keep only leaf gradients
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op<S>, out: &Tensor<S>, dy: &[S], grads: &mut [Option<Vec<S>>]) {
        let mut send = |v: Var, g: Vec<S>| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        };
        match op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (d_out, d_in) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.len() / d_in;
                if self.needs(*x) {
                    send(
                        *x,
                        kernels::linear_backward_input(dy, wv.values(), rows, d_in, d_out),
                    );
                }
                if self.needs(*w) {
                    send(
                        *w,
                        kernels::linear_backward_weight(dy, xv.values(), rows, d_in, d_out),
                    );
                }
                if self.needs(*b) {
                    send(*b, kernels::column_sums(dy, d_out));
                }
            }
            Op::Conv1d { x, k, b, geom } => {
                let (dx, dk, db) = kernels::conv1d_backward(
                    dy,
                    self.value(*x).values(),
                    self.value(*k).values(),
                    geom,
                    self.needs(*x),
                    self.needs(*k),
                );
                if let Some(dx) = dx {
                    send(*x, dx);
                }
                if let Some(dk) = dk {
                    send(*k, dk);
                }
                send(*b, db);
            }
            Op::Relu { x } => {
                let g = out
                    .values()
                    .iter()
                    .zip(dy)
                    .map(|(&y, &d)| if y > S::zero() { d } else { S::zero() })
                    .collect();
                send(*x, g);
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = kernels::split_axis(out.shape(), *axis);
                send(
                    *x,
                    kernels::softmax_backward(out.values(), dy, outer, len, inner),
                );
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ia = kernels::broadcast_index(ta.shape(), out.shape());
                let ib = kernels::broadcast_index(tb.shape(), out.shape());
                if self.needs(*a) {
                    let mut ga = vec![S::zero(); ta.len()];
                    for ((&i, &j), &d) in ia.iter().zip(&ib).zip(dy) {
                        ga[i] += d * tb.values()[j];
                    }
                    send(*a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![S::zero(); tb.len()];
                    for ((&i, &j), &d) in ia.iter().zip(&ib).zip(dy) {
                        gb[j] += d * ta.values()[i];
                    }
                    send(*b, gb);
                }
            }
            Op::Add { a, b } => {
                send(*a, dy.to_vec());
                send(*b, dy.to_vec());
            }
            Op::Scale { x, factor } => send(*x, dy.iter().map(|&d| d * *factor).collect()),
            Op::MeanAxis { x, axis } => {
                let shape = self.shape(*x);
                let (outer, len, inner) = kernels::split_axis(shape, *axis);
                let n = S::from_usize(len).expect("axis length fits");
                let mut g = vec![S::zero(); outer * len * inner];
                for o in 0..outer {
                    for t in 0..len {
                        for i in 0..inner {
                            g[(o * len + t) * inner + i] = dy[o * inner + i] / n;
                        }
                    }
                }
                send(*x, g);
            }
            Op::Sum { x } => send(*x, vec![dy[0]; self.value(*x).len()]),
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = kernels::split_axis(out.shape(), *axis);
                let total = out.shape()[*axis] * inner;
                let mut start = 0;
                for &p in parts {
                    let chunk = self.shape(p)[*axis] * inner;
                    if self.needs(p) {
                        let mut g = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            g.extend_from_slice(&dy[o * total + start..][..chunk]);
                        }
                        send(p, g);
                    }
                    start += chunk;
                }
            }
            Op::Reshape { x } => send(*x, dy.to_vec()),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let classes = *self
                    .shape(*logits)
                    .last()
                    .expect("logits have a class axis");
                let mut g = probs.clone();
                for (r, (&t, &d)) in targets.iter().zip(dy).enumerate() {
                    let row = &mut g[r * classes..][..classes];
                    row[t] -= S::one();
                    row.iter_mut().for_each(|v| *v *= d);
                }
                send(*logits, g);
            }
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<S>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn linear_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[1.0, 0.0]));
        let w = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(t(&[2], &[0.0, 0.0]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[1.0, 0.0]);

        let x = tape.constant(t(&[2], &[2.0, 3.0]));
        let w = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        let b = tape.constant(t(&[1], &[0.5]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[5.5]);

        let x = tape.constant(t(&[3, 2], &[1.0, -2.0, 3.0, 4.0, -5.0, 6.0]));
        let w = tape.constant(Tensor::zeros([4, 2]));
        let b = tape.constant(Tensor::full([4], 0.25));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.shape(y), &[3, 4]);
        assert!(tape.value(y).values().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn linear_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros([2, 3]));
        let w = tape.constant(Tensor::zeros([4, 2]));
        let b = tape.constant(Tensor::zeros([4]));
        let err = tape.linear(x, w, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn conv1d_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let k = tape.constant(t(&[1, 1, 3], &[1.0, 1.0, 1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv1d(x, k, b, 1).unwrap();
        assert_eq!(tape.value(y).values(), &[3.0, 6.0, 5.0]);

        // identity kernel
        let k1 = tape.constant(t(&[1, 1, 1], &[1.0]));
        let y = tape.conv1d(x, k1, b, 0).unwrap();
        assert_eq!(tape.value(y).values(), &[1.0, 2.0, 3.0]);

        // zero input gives the bias everywhere
        let z = tape.constant(Tensor::zeros([2, 2, 5]));
        let k = tape.constant(Tensor::full([3, 2, 3], 0.7));
        let b = tape.constant(t(&[3], &[1.0, -2.0, 0.5]));
        let y = tape.conv1d(z, k, b, 1).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 5]);
        for (i, &v) in tape.value(y).values().iter().enumerate() {
            assert_eq!(v, [1.0, -2.0, 0.5][(i / 5) % 3]);
        }
    }

    #[test]
    fn conv1d_rejects_oversized_window() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros([1, 2]));
        let k = tape.constant(Tensor::zeros([1, 1, 5]));
        let b = tape.constant(Tensor::zeros([1]));
        assert!(matches!(
            tape.conv1d(x, k, b, 1),
            Err(TensorError::InvalidWindow {
                kernel: 5,
                padded: 4
            })
        ));
    }

    #[test]
    fn relu_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]).requiring_grad());
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).values(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::<f64>::full([5], 0.3));
        let y = tape.softmax(u, 0).unwrap();
        assert!(tape
            .value(y)
            .values()
            .iter()
            .all(|&v| (v - 0.2).abs() < 1e-15));

        let big = tape.constant(t(&[3], &[1000.0, 0.0, 0.0]));
        let y = tape.softmax(big, 0).unwrap();
        let v = tape.value(y).values();
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1] >= 0.0 && v[1] < 1e-300);

        let x = tape.constant(t(&[2], &[0.0, 2f64.ln()]));
        let y = tape.softmax(x, 0).unwrap();
        assert!(close(
            tape.value(y).values(),
            &[1.0 / 3.0, 2.0 / 3.0],
            1e-15
        ));
    }

    #[test]
    fn mul_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[3], &[1.0, 2.0, 3.0]).requiring_grad());
        let two = tape.constant(t(&[1], &[2.0]));
        let y = tape.mul(a, two).unwrap();
        assert_eq!(tape.value(y).values(), &[2.0, 4.0, 6.0]);

        let b = tape.constant(t(&[3], &[-1.0, 0.5, 4.0]));
        let p = tape.mul(a, b).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[-1.0, 0.5, 4.0]);
    }

    #[test]
    fn mul_rejects_incompatible_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f32>::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([3, 2]));
        assert!(matches!(
            tape.mul(a, b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn mean_examples() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::full([2, 4], 1.5));
        let m = tape.mean_axis(c, 1).unwrap();
        assert_eq!(tape.value(m).values(), &[1.5, 1.5]);

        let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0]).requiring_grad());
        let m = tape.mean_axis(x, 0).unwrap();
        assert!(tape.shape(m).is_empty());
        assert_eq!(tape.value(m).item(), 2.0);
        let g = tape.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn concat_examples() {
        let mut tape = Tape::new();
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let va = tape.constant(a.clone());
        let y = tape.concat(&[va], 0).unwrap();
        assert_eq!(tape.value(y), &a);

        let p = tape.constant(Tensor::full([2, 32], 1.0));
        let q = tape.constant(Tensor::full([2, 32], 2.0));
        let y = tape.concat(&[p, q], 1).unwrap();
        assert_eq!(tape.shape(y), &[2, 64]);

        let bad = tape.constant(Tensor::full([3, 32], 2.0));
        assert!(tape.concat(&[p, bad], 1).is_err());
    }

    #[test]
    fn concat_gradient_slices_back() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 1], &[1.0, 2.0]).requiring_grad());
        let b = tape.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]).requiring_grad());
        let y = tape.concat(&[a, b], 1).unwrap();
        let w = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let p = tape.mul(y, w).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[1.0, 4.0]);
        assert_eq!(g.get(b).unwrap(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::<f64>::zeros([8]));
        let l = tape.cross_entropy(u, &[3]).unwrap();
        assert!((tape.value(l).item() - 8f64.ln()).abs() < 1e-12);

        let peaked = tape.constant(t(&[3], &[50.0, 0.0, 0.0]));
        let l = tape.cross_entropy(peaked, &[0]).unwrap();
        assert!(tape.value(l).item() < 1e-20);

        let x = tape.constant(t(&[2], &[1.0, 0.0]).requiring_grad());
        let l = tape.cross_entropy(x, &[0]).unwrap();
        let expected = (1.0 + (-1f64).exp()).ln();
        assert!((tape.value(l).item() - expected).abs() < 1e-15);
        assert!((expected - 0.3133).abs() < 1e-4);
        let g = tape.backward(l).unwrap();
        let p0 = 1.0 / (1.0 + (-1f64).exp());
        assert!(close(g.get(x).unwrap(), &[p0 - 1.0, 1.0 - p0], 1e-15));
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f32>::zeros([4]));
        assert!(matches!(
            tape.cross_entropy(x, &[4]),
            Err(TensorError::LabelOutOfRange {
                label: 4,
                classes: 4,
                ..
            })
        ));
    }

    #[test]
    fn backward_examples() {
        let x0 = t(&[4], &[0.5, -1.0, 2.0, 3.0]).requiring_grad();
        let mut tape = Tape::new();
        let x = tape.leaf(&x0);
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 4]);

        let mut tape = Tape::new();
        let x = tape.leaf(&x0);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, -2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_needs_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros([2]).requiring_grad());
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarRoot(_))
        ));
    }

    #[test]
    fn repeated_backward_accumulates_into_tensor() {
        let mut x0 = t(&[2], &[1.0, 2.0]).requiring_grad();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let x = tape.leaf(&x0);
            let s = tape.sum(x).unwrap();
            let mut g = tape.backward(s).unwrap();
            let gx = g.take(x).unwrap();
            x0.accumulate_grad(&gx).unwrap();
        }
        assert_eq!(x0.grad().unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(t(&[2], &[1.0, 2.0]));
        let x = tape.constant(t(&[2], &[1.0, 2.0]).requiring_grad());
        let p = tape.mul(c, x).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap(), &[1.0, 2.0]);
    }
}
