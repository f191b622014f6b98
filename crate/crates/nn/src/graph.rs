//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its value; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients for the nodes that
//! depend on a leaf created with `requires_grad`.

use facemap_core::maskloss::{loss_and_grad_flat, LossConfig};
use facemap_core::{Error, Result};

use crate::conv::{self, Conv2dSpec};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Scale(Var, f64),
    /// `sum(x * c)` for a constant `c`.
    Dot(Var, Tensor),
    /// Scalar loss whose gradient with respect to `x` was computed eagerly.
    Loss { x: Var, grad: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that needs them.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0.get_mut(v.0).and_then(|g| g.take())
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let y = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(y, Op::Conv { x, w, b, spec }, needs))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let y = conv::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(y, Op::ConvTranspose { x, w, b, spec }, needs))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(x);
        let y = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())
            .expect("same shape");
        let needs = self.needs(x);
        self.push(y, op, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch(format!("add {:?} and {:?}", ta.shape(), tb.shape())));
        }
        let y = Tensor::new(ta.shape().to_vec(), ta.data().iter().zip(tb.data()).map(|(p, q)| p + q).collect())?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add(a, b), needs))
    }

    /// Scalar `sum(x * c)`.
    pub fn dot(&mut self, x: Var, c: Tensor) -> Result<Var> {
        if self.value(x).shape() != c.shape() {
            return Err(Error::ShapeMismatch(format!("dot {:?} with {:?}", self.value(x).shape(), c.shape())));
        }
        let y = Tensor::scalar(self.value(x).dot(&c));
        let needs = self.needs(x);
        Ok(self.push(y, Op::Dot(x, c), needs))
    }

    /// Weighted position-map loss averaged over the batch.
    ///
    /// `x` is `(N, 3, S, S)`; `targets` holds `N` maps as interleaved
    /// `x, y, z` per pixel (row-major), `weights` one value per pixel.
    pub fn map_loss(&mut self, x: Var, targets: &[f64], weights: &[f64], cfg: &LossConfig) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let p = h * w;
        if c != 3 || h != w || weights.len() != p || targets.len() != n * 3 * p {
            return Err(Error::ShapeMismatch(format!(
                "loss on {:?} with {} target values and {} weights",
                self.value(x).shape(),
                targets.len(),
                weights.len()
            )));
        }
        let xs = self.value(x).data();
        let mut grad = vec![0.0; xs.len()];
        let mut pred = vec![0.0; 3 * p];
        let mut g = vec![0.0; 3 * p];
        let mut total = 0.0;
        for i in 0..n {
            for k in 0..3 {
                for (j, &v) in xs[(i * 3 + k) * p..][..p].iter().enumerate() {
                    pred[3 * j + k] = v;
                }
            }
            total += loss_and_grad_flat(&pred, &targets[i * 3 * p..][..3 * p], weights, cfg, Some(&mut g));
            for k in 0..3 {
                for (j, dst) in grad[(i * 3 + k) * p..][..p].iter_mut().enumerate() {
                    *dst = g[3 * j + k] / n as f64;
                }
            }
        }
        let grad = Tensor::new(self.value(x).shape().to_vec(), grad)?;
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(total / n as f64), Op::Loss { x, grad }, needs))
    }

    /// Gradients of the scalar `root` with respect to all nodes that need them.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(self.value(root).shape().to_vec(), vec![1.0])?);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let mut send = |v: Var, g: Tensor| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(gy);
                    continue;
                }
                Op::Conv { x, w, b, spec } => {
                    let (gx, gw, gb) = conv::conv2d_backward(self.value(*x), self.value(*w), spec, &gy)?;
                    send(*x, gx);
                    send(*w, gw);
                    if let Some(b) = b {
                        send(*b, gb);
                    }
                }
                Op::ConvTranspose { x, w, b, spec } => {
                    let (gx, gw, gb) = conv::conv_transpose2d_backward(self.value(*x), self.value(*w), spec, &gy)?;
                    send(*x, gx);
                    send(*w, gw);
                    if let Some(b) = b {
                        send(*b, gb);
                    }
                }
                Op::Relu(x) => {
                    let g = zip_map(&gy, self.value(*x), |g, v| if v > 0.0 { g } else { 0.0 });
                    send(*x, g);
                }
                Op::Sigmoid(x) => {
                    let g = zip_map(&gy, &node.value, |g, s| g * s * (1.0 - s));
                    send(*x, g);
                }
                Op::Add(a, b) => {
                    send(*a, gy.clone());
                    send(*b, gy);
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    send(*x, zip_map(&gy, &gy, |g, _| g * c));
                }
                Op::Dot(x, c) => {
                    let s = gy.item();
                    send(*x, zip_map(c, c, |v, _| v * s));
                }
                Op::Loss { x, grad } => {
                    let s = gy.item();
                    send(*x, zip_map(grad, grad, |v, _| v * s));
                }
            }
        }
        Ok(Gradients(grads))
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
