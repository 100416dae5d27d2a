//! Reverse-mode differentiation over a linear tape of recorded operations.
//!
//! A [`Graph`] records every operation applied to [`Var`]s created from it.
//! Nodes are appended in execution order, so the tape is topologically sorted
//! by construction and [`Graph::backward`] is a single reverse sweep.
//!
//! A graph built with [`Graph::no_grad`] records nothing; intermediate values
//! are freed as soon as the last `Var` referencing them is dropped.

use std::cell::RefCell;
use std::rc::Rc;

use super::conv::{conv2d, conv2d_backward, ConvSpec};
use super::dft::{dft2, dft2_real_adjoint};
use super::kernels::{self, BN_EPS};
use super::{Element, Shape4, Tensor4};
use crate::error::{ensure_dim, Error, Result};

const UNTRACKED: usize = usize::MAX;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        spec: ConvSpec,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        invstd: Vec<T>,
        batch_stats: bool,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    Bilinear {
        x: usize,
    },
    PixelShuffle {
        x: usize,
        r: usize,
    },
    ChannelSlice {
        x: usize,
        start: usize,
    },
    Concat {
        xs: Vec<usize>,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    ScaleVar {
        x: usize,
        s: usize,
    },
    ScaleConst {
        x: usize,
        c: T,
    },
    Gelu {
        x: usize,
    },
    Abs {
        x: usize,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    Dft2 {
        x: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Rc<Tensor4<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation tape. Single-threaded for its whole lifetime.
#[derive(Debug)]
pub struct Graph<T: Element = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value in a [`Graph`].
#[derive(Clone, Debug)]
pub struct Var<'g, T: Element = f32> {
    graph: &'g Graph<T>,
    id: usize,
    value: Rc<Tensor4<T>>,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A graph that evaluates operations without recording them.
    pub fn no_grad() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes held by recorded values.
    pub fn retained_bytes(&self) -> usize {
        self.nodes
            .borrow()
            .iter()
            .map(|n| n.value.numel() * std::mem::size_of::<T>())
            .sum()
    }

    /// A learnable leaf: gradients are reported for it.
    pub fn param(&self, t: Tensor4<T>) -> Var<'_, T> {
        self.leaf(t, true)
    }

    /// A constant leaf.
    pub fn constant(&self, t: Tensor4<T>) -> Var<'_, T> {
        self.leaf(t, false)
    }

    pub fn leaf(&self, t: Tensor4<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(t, Op::Leaf, requires_grad)
    }

    fn push(&self, value: Tensor4<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let value = Rc::new(value);
        if !self.recording {
            return Var {
                graph: self,
                id: UNTRACKED,
                value,
            };
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::clone(&value),
            op,
            needs_grad,
        });
        Var {
            graph: self,
            id,
            value,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        if !self.recording {
            return false;
        }
        let nodes = self.nodes.borrow();
        ids.iter()
            .any(|&i| i != UNTRACKED && nodes.get(i).is_some_and(|n| n.needs_grad))
    }

    /// Gradients of a scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(Error::Shape {
                op: "backward",
                dim: "loss element count",
                expected: 1,
                actual: loss.value.numel(),
            });
        }
        self.backward_with_seed(loss, Tensor4::ones(loss.value.shape()))
    }

    /// Vector-Jacobian product seeded with an arbitrary cotangent on `out`.
    pub fn backward_with_seed(&self, out: &Var<'_, T>, seed: Tensor4<T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(out.graph, self) || out.id == UNTRACKED {
            return Err(Error::Internal(
                "backward called on a value this graph did not record".into(),
            ));
        }
        seed.ensure_same_shape(&out.value, "backward seed")?;
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor4<T>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[out.id] = Some(seed);

        for id in (0..=out.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let contributions = backprop_node(&nodes, node, &g)?;
            grads[id] = Some(g);
            for (input, contrib) in contributions {
                if input >= id {
                    return Err(Error::Internal(format!(
                        "node {id} depends on later node {input}"
                    )));
                }
                if !nodes[input].needs_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn value<T: Element>(nodes: &[Node<T>], id: usize) -> &Tensor4<T> {
    &nodes[id].value
}

fn wants<T: Element>(nodes: &[Node<T>], id: usize) -> bool {
    nodes[id].needs_grad
}

fn channel_vec<T: Element>(v: &[T]) -> Tensor4<T> {
    Tensor4::from_vec(Shape4::new(1, v.len(), 1, 1), v.to_vec()).expect("length matches shape")
}

fn backprop_node<T: Element>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor4<T>,
) -> Result<Vec<(usize, Tensor4<T>)>> {
    let mut out = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::Conv { x, w, b, spec } => {
            let grads = conv2d_backward(
                value(nodes, *x),
                value(nodes, *w),
                g,
                spec,
                (
                    wants(nodes, *x),
                    wants(nodes, *w),
                    b.is_some_and(|b| wants(nodes, b)),
                ),
            )?;
            if let Some(gx) = grads.input {
                out.push((*x, gx));
            }
            if let Some(gw) = grads.weight {
                out.push((*w, gw));
            }
            if let (Some(b), Some(gb)) = (b, grads.bias) {
                out.push((*b, channel_vec(&gb)));
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            invstd,
            batch_stats,
        } => {
            let gm = value(nodes, *gamma).data();
            let r = kernels::batch_norm_backward(value(nodes, *x), mean, invstd, gm, g, *batch_stats);
            out.push((*x, r.input));
            out.push((*gamma, channel_vec(&r.gamma)));
            out.push((*beta, channel_vec(&r.beta)));
        }
        Op::MaxPool { x, argmax } => {
            out.push((
                *x,
                kernels::max_pool_backward(value(nodes, *x).shape(), argmax, g),
            ));
        }
        Op::Bilinear { x } => {
            out.push((*x, kernels::bilinear_backward(value(nodes, *x).shape(), g)));
        }
        Op::PixelShuffle { x, r } => {
            out.push((*x, kernels::pixel_unshuffle(g, *r)?));
        }
        Op::ChannelSlice { x, start } => {
            let xs = value(nodes, *x).shape();
            let gs = g.shape();
            let mut gx = Tensor4::zeros(xs);
            for n in 0..xs.n {
                for c in 0..gs.c {
                    gx.plane_mut(n, start + c).copy_from_slice(g.plane(n, c));
                }
            }
            out.push((*x, gx));
        }
        Op::Concat { xs } => {
            let mut start = 0;
            for &id in xs {
                let c = value(nodes, id).shape().c;
                out.push((id, g.channel_slice(start, c)?));
                start += c;
            }
        }
        Op::Add(a, b) => {
            out.push((*a, g.clone()));
            out.push((*b, g.clone()));
        }
        Op::Sub(a, b) => {
            out.push((*a, g.clone()));
            out.push((*b, g.map(|v| -v)));
        }
        Op::Mul(a, b) => {
            if wants(nodes, *a) {
                out.push((*a, g.zip_map(value(nodes, *b), "mul backward", |g, v| g * v)?));
            }
            if wants(nodes, *b) {
                out.push((*b, g.zip_map(value(nodes, *a), "mul backward", |g, v| g * v)?));
            }
        }
        Op::ScaleVar { x, s } => {
            let sv = value(nodes, *s).data()[0];
            out.push((*x, g.map(|v| v * sv)));
            if wants(nodes, *s) {
                let dot: T = g
                    .data()
                    .iter()
                    .zip(value(nodes, *x).data())
                    .map(|(&a, &b)| a * b)
                    .sum();
                out.push((*s, Tensor4::scalar(dot)));
            }
        }
        Op::ScaleConst { x, c } => {
            out.push((*x, g.map(|v| v * *c)));
        }
        Op::Gelu { x } => {
            out.push((
                *x,
                g.zip_map(value(nodes, *x), "gelu backward", |g, v| {
                    g * kernels::gelu_grad(v)
                })?,
            ));
        }
        Op::Abs { x } => {
            out.push((
                *x,
                g.zip_map(value(nodes, *x), "abs backward", |g, v| {
                    if v > T::zero() {
                        g
                    } else if v < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })?,
            ));
        }
        Op::Sum { x } => {
            out.push((*x, Tensor4::full(value(nodes, *x).shape(), g.data()[0])));
        }
        Op::Mean { x } => {
            let xs = value(nodes, *x).shape();
            let k = g.data()[0] / T::from_usize(xs.numel()).unwrap_or_else(T::one);
            out.push((*x, Tensor4::full(xs, k)));
        }
        Op::Dft2 { x } => {
            let c = value(nodes, *x).shape().c;
            let g_re = g.channel_slice(0, c)?;
            let g_im = g.channel_slice(c, c)?;
            out.push((*x, dft2_real_adjoint(&g_re, &g_im)));
        }
    }
    Ok(out)
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients<T: Element = f32> {
    grads: Vec<Option<Tensor4<T>>>,
    shapes: Vec<Shape4>,
}

impl<T: Element> Gradients<T> {
    /// Gradient for `v`, or `None` when no gradient reached it.
    pub fn get(&self, v: &Var<'_, T>) -> Option<&Tensor4<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`; zeros when it did not influence the output.
    pub fn wrt(&self, v: &Var<'_, T>) -> Tensor4<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor4::zeros(
                self.shapes
                    .get(v.id)
                    .copied()
                    .unwrap_or_else(|| v.value.shape()),
            ),
        }
    }
}

impl<'g, T: Element> Var<'g, T> {
    pub fn value(&self) -> &Tensor4<T> {
        &self.value
    }

    pub fn shape(&self) -> Shape4 {
        self.value.shape()
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    fn unary(&self, value: Tensor4<T>, op: Op<T>) -> Var<'g, T> {
        let needs = self.graph.needs(&[self.id]);
        self.graph.push(value, op, needs)
    }

    fn same_graph(&self, other: &Var<'g, T>) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(Error::Internal("operands belong to different graphs".into()))
        }
    }

    pub fn conv2d(&self, w: &Var<'g, T>, b: Option<&Var<'g, T>>, spec: &ConvSpec) -> Result<Var<'g, T>> {
        self.same_graph(w)?;
        let bias = b.map(|b| b.value.data());
        let y = conv2d(&self.value, &w.value, bias, spec)?;
        let mut ids = vec![self.id, w.id];
        if let Some(b) = b {
            self.same_graph(b)?;
            ids.push(b.id);
        }
        let needs = self.graph.needs(&ids);
        Ok(self.graph.push(
            y,
            Op::Conv {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                spec: *spec,
            },
            needs,
        ))
    }

    /// Batch normalization. In training mode the batch statistics are used and
    /// returned as `(mean, biased variance)`; in eval mode `stats` must hold the
    /// running `(mean, variance)`.
    pub fn batch_norm(
        &self,
        gamma: &Var<'g, T>,
        beta: &Var<'g, T>,
        stats: Option<(&[T], &[T])>,
    ) -> Result<(Var<'g, T>, Vec<T>, Vec<T>)> {
        let c = self.shape().c;
        ensure_dim("batch_norm", "gamma length", c, gamma.value.numel())?;
        ensure_dim("batch_norm", "beta length", c, beta.value.numel())?;
        let eps = T::from_f64_lossy(BN_EPS);
        let batch_stats = stats.is_none();
        let (mean, var) = match stats {
            Some((m, v)) => {
                ensure_dim("batch_norm", "running mean length", c, m.len())?;
                ensure_dim("batch_norm", "running var length", c, v.len())?;
                (m.to_vec(), v.to_vec())
            }
            None => kernels::channel_moments(&self.value),
        };
        let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let y = kernels::affine_normalize(
            &self.value,
            &mean,
            &invstd,
            gamma.value.data(),
            beta.value.data(),
        )?;
        let needs = self.graph.needs(&[self.id, gamma.id, beta.id]);
        let out = self.graph.push(
            y,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                mean: mean.clone(),
                invstd,
                batch_stats,
            },
            needs,
        );
        Ok((out, mean, var))
    }

    pub fn max_pool(&self, kernel: usize, stride: usize) -> Result<Var<'g, T>> {
        let (y, argmax) = kernels::max_pool(&self.value, kernel, stride)?;
        Ok(self.unary(y, Op::MaxPool { x: self.id, argmax }))
    }

    pub fn bilinear(&self, out_h: usize, out_w: usize) -> Result<Var<'g, T>> {
        let y = kernels::bilinear(&self.value, out_h, out_w)?;
        Ok(self.unary(y, Op::Bilinear { x: self.id }))
    }

    pub fn pixel_shuffle(&self, r: usize) -> Result<Var<'g, T>> {
        let y = kernels::pixel_shuffle(&self.value, r)?;
        Ok(self.unary(y, Op::PixelShuffle { x: self.id, r }))
    }

    pub fn channel_slice(&self, start: usize, len: usize) -> Result<Var<'g, T>> {
        let y = self.value.channel_slice(start, len)?;
        Ok(self.unary(y, Op::ChannelSlice { x: self.id, start }))
    }

    pub fn split_channels(&self, parts: usize) -> Result<Vec<Var<'g, T>>> {
        let c = self.shape().c;
        if parts == 0 || !c.is_multiple_of(parts) {
            return Err(Error::Config(format!(
                "cannot split {c} channels into {parts} equal parts"
            )));
        }
        let len = c / parts;
        (0..parts).map(|i| self.channel_slice(i * len, len)).collect()
    }

    pub fn concat_channels(parts: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat of zero tensors".into()))?;
        for p in parts {
            first.same_graph(p)?;
        }
        let values: Vec<&Tensor4<T>> = parts.iter().map(|p| p.value.as_ref()).collect();
        let y = Tensor4::concat_channels(&values)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let needs = first.graph.needs(&ids);
        Ok(first.graph.push(y, Op::Concat { xs: ids }, needs))
    }

    fn binary(
        &self,
        other: &Var<'g, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'g, T>> {
        self.same_graph(other)?;
        let y = self.value.zip_map(&other.value, name, f)?;
        let needs = self.graph.needs(&[self.id, other.id]);
        Ok(self.graph.push(y, op, needs))
    }

    pub fn add(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    /// Multiply by a learnable scalar held in a `(1, 1, 1, 1)` value.
    pub fn scale_by(&self, s: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(s)?;
        ensure_dim("scale_by", "scalar element count", 1, s.value.numel())?;
        let sv = s.value.data()[0];
        let y = self.value.map(|v| v * sv);
        let needs = self.graph.needs(&[self.id, s.id]);
        Ok(self.graph.push(y, Op::ScaleVar { x: self.id, s: s.id }, needs))
    }

    pub fn scale(&self, c: T) -> Var<'g, T> {
        self.unary(self.value.map(|v| v * c), Op::ScaleConst { x: self.id, c })
    }

    pub fn gelu(&self) -> Var<'g, T> {
        self.unary(self.value.map(kernels::gelu), Op::Gelu { x: self.id })
    }

    pub fn abs(&self) -> Var<'g, T> {
        self.unary(self.value.map(|v| v.abs()), Op::Abs { x: self.id })
    }

    pub fn sum(&self) -> Var<'g, T> {
        self.unary(Tensor4::scalar(self.value.sum()), Op::Sum { x: self.id })
    }

    pub fn mean(&self) -> Var<'g, T> {
        let n = T::from_usize(self.value.numel().max(1)).unwrap_or_else(T::one);
        self.unary(
            Tensor4::scalar(self.value.sum() / n),
            Op::Mean { x: self.id },
        )
    }

    /// Forward 2-D DFT of every plane, packed as `(n, 2c, h, w)`: real parts in
    /// channels `[0, c)`, imaginary parts in `[c, 2c)`.
    pub fn dft2_packed(&self) -> Result<Var<'g, T>> {
        let (re, im) = dft2(&self.value);
        let y = Tensor4::concat_channels(&[&re, &im])?;
        Ok(self.unary(y, Op::Dft2 { x: self.id }))
    }

    /// Forward 2-D DFT as `(re, im)`.
    pub fn dft2(&self) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let c = self.shape().c;
        let packed = self.dft2_packed()?;
        Ok((packed.channel_slice(0, c)?, packed.channel_slice(c, c)?))
    }
}
