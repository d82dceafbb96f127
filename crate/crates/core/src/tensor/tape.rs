use super::kernels::{self, ConvGeometry};
use super::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
    },
    Relu(Var),
    Add(Var, Var),
    Concat(Vec<Var>),
    SliceChannels {
        x: Var,
        start: usize,
    },
    ScaleAdd {
        x: Var,
        y: Var,
        gamma: Var,
    },
    Matmul(Var, Var),
    Transpose(Var),
    Softmax(Var),
    Reshape(Var),
    Scale {
        x: Var,
        factor: f64,
    },
    Offset(Var),
    Upsample {
        x: Var,
        factor: usize,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

/// Ordered record of executed ops. Backward replays it in reverse.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients indexed by [`Var`], produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let y = kernels::conv2d(self.value(x), self.value(w), self.value(b), geom)?;
        self.push(y, Op::Conv2d { x, w, b, geom }, "conv2d")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(y, Op::Relu(x), "relu")
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        let (a, b) = (self.value(x), self.value(y));
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = a.clone();
        out.add_assign(b);
        self.push(out, Op::Add(x, y), "add")
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<_> = xs.iter().map(|&v| self.value(v)).collect();
        let y = kernels::concat_channels(&vals)?;
        self.push(y, Op::Concat(xs.to_vec()), "concat_channels")
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = kernels::slice_channels(self.value(x), start, len)?;
        self.push(y, Op::SliceChannels { x, start }, "slice_channels")
    }

    /// `x + gamma * y` with a scalar `gamma`. Where `gamma` is exactly zero
    /// the output is `x` bit for bit.
    pub fn scale_add(&mut self, x: Var, y: Var, gamma: Var) -> Result<Var> {
        let (a, b, g) = (self.value(x), self.value(y), self.value(gamma));
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_add",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        if g.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "scale_add gamma",
                lhs: vec![1],
                rhs: g.shape().to_vec(),
            });
        }
        let gv = g.data()[0];
        let out = if gv == T::zero() {
            a.clone()
        } else {
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&p, &q)| p + gv * q)
                .collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        self.push(out, Op::ScaleAdd { x, y, gamma }, "scale_add")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = kernels::matmul(self.value(a), self.value(b))?;
        self.push(y, Op::Matmul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let y = kernels::transpose_last(self.value(a))?;
        self.push(y, Op::Transpose(a), "transpose")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let y = kernels::softmax_rows(self.value(a))?;
        self.push(y, Op::Softmax(a), "softmax_rows")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(a).reshape(shape)?;
        self.push(y, Op::Reshape(a), "reshape")
    }

    /// `factor * x` for a constant `factor`.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f = T::from_f64_lossy(factor);
        let y = self.value(x).map(|v| v * f);
        self.push(y, Op::Scale { x, factor }, "scale")
    }

    /// `x + c` for a constant `c`.
    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::from_f64_lossy(c);
        let y = self.value(x).map(|v| v + c);
        self.push(y, Op::Offset(x), "offset")
    }

    pub fn bilinear_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = kernels::bilinear_upsample(self.value(x), factor)?;
        self.push(y, Op::Upsample { x, factor }, "bilinear_upsample")
    }

    /// Mean squared error, reduced to a one-element tensor.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                lhs: p.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        let n = T::from_usize(p.len().max(1)).unwrap_or_else(T::one);
        let total: T = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        self.push(Tensor::scalar(total / n), Op::Mse { pred, target }, "mse")
    }

    /// Reverse pass from `root`, seeded with `seed` (same shape as the root).
    pub fn backward_with(&self, root: Var, seed: Tensor<T>) -> Result<Grads<T>> {
        if seed.shape() != self.value(root).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "backward seed",
                lhs: self.value(root).shape().to_vec(),
                rhs: seed.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut send = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => {}
                &Op::Conv2d { x, w, b, geom } => {
                    let (dx, dw, db) =
                        kernels::conv2d_backward(self.value(x), self.value(w), &g, geom)?;
                    send(x, dx);
                    send(w, dw);
                    send(b, db);
                }
                &Op::Relu(x) => {
                    let xv = self.value(x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&a, &gv)| if a > T::zero() { gv } else { T::zero() })
                        .collect();
                    send(x, Tensor::new(xv.shape().to_vec(), data)?);
                }
                &Op::Add(x, y) => {
                    send(x, g.clone());
                    send(y, g.clone());
                }
                Op::Concat(xs) => {
                    let mut start = 0;
                    for &x in xs {
                        let c = self.value(x).shape()[1];
                        send(x, kernels::slice_channels(&g, start, c)?);
                        start += c;
                    }
                }
                &Op::SliceChannels { x, start } => {
                    let xs = self.value(x).shape();
                    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let len = g.shape()[1];
                    let mut dx = Tensor::zeros(xs);
                    for ni in 0..n {
                        dx.data_mut()[(ni * c + start) * h * w..][..len * h * w]
                            .copy_from_slice(&g.data()[ni * len * h * w..][..len * h * w]);
                    }
                    send(x, dx);
                }
                &Op::ScaleAdd { x, y, gamma } => {
                    let gv = self.value(gamma).data()[0];
                    let yv = self.value(y);
                    let dgamma: T = yv.data().iter().zip(g.data()).map(|(&a, &b)| a * b).sum();
                    send(y, g.map(|v| v * gv));
                    send(gamma, Tensor::new(self.value(gamma).shape().to_vec(), vec![dgamma])?);
                    send(x, g.clone());
                }
                &Op::Matmul(a, b) => {
                    let (av, bv) = (self.value(a), self.value(b));
                    let da = kernels::matmul(&g, &kernels::transpose_last(bv)?)?;
                    let db = kernels::matmul(&kernels::transpose_last(av)?, &g)?;
                    send(a, da);
                    send(b, db);
                }
                &Op::Transpose(a) => send(a, kernels::transpose_last(&g)?),
                &Op::Softmax(a) => send(a, kernels::softmax_rows_backward(&node.value, &g)),
                &Op::Reshape(a) => send(a, g.reshape(self.value(a).shape())?),
                &Op::Scale { x, factor } => {
                    let f = T::from_f64_lossy(factor);
                    send(x, g.map(|v| v * f));
                }
                &Op::Offset(x) => send(x, g.clone()),
                &Op::Upsample { x, factor } => send(
                    x,
                    kernels::bilinear_upsample_backward(self.value(x).shape(), &g, factor),
                ),
                &Op::Mse { pred, target } => {
                    let (p, t) = (self.value(pred), self.value(target));
                    let n = T::from_usize(p.len().max(1)).unwrap_or_else(T::one);
                    let scale = g.data()[0] * T::from_f64_lossy(2.0) / n;
                    let dp: Vec<T> = p
                        .data()
                        .iter()
                        .zip(t.data())
                        .map(|(&a, &b)| (a - b) * scale)
                        .collect();
                    let dt = dp.iter().map(|&v| -v).collect();
                    send(pred, Tensor::new(p.shape().to_vec(), dp)?);
                    send(target, Tensor::new(t.shape().to_vec(), dt)?);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    /// Reverse pass from a one-element root seeded with 1.
    pub fn backward(&self, root: Var) -> Result<Grads<T>> {
        let shape = self.value(root).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::InvalidArgument(format!(
                "backward: root must have one element, got {shape:?}"
            )));
        }
        self.backward_with(root, Tensor::full(&shape, T::one()))
    }
}
