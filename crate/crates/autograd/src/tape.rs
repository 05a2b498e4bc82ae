//! Reverse-mode tape.
//!
//! A [`Tape`] records every op applied to [`Var`]s together with a closure
//! that maps the output gradient to gradients of the op's inputs.
//! [`Tape::backward`] replays the closures in reverse order.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use crate::kernels;
use crate::{Result, Tensor, TensorError};

type BackwardFn = Box<dyn Fn(&Tensor) -> Result<Vec<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Records a computation graph. Not `Sync`; build one tape per thread.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape that never records backward closures. Forward values are
    /// identical; [`Tape::backward`] yields no gradients.
    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, self.grad_enabled)
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, backward: BackwardFn) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.grad_enabled && parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Back-propagates from a scalar `output`, seeding its gradient with 1.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let seed = Tensor::full(output.value().shape(), 1.0);
        self.backward_with(output, seed)
    }

    /// Back-propagates an explicit output gradient.
    pub fn backward_with(&self, output: Var<'_>, seed: Tensor) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        seed.expect_shape(nodes[output.id].value.shape(), "backward seed")?;
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if !nodes[output.id].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[output.id] = Some(seed);
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let parent_grads = backward(&g)?;
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if !nodes[p].requires_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.axpy(1.0, &pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of leaves after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value().shape())
            .finish()
    }
}

fn same_tape(a: &Var<'_>, b: &Var<'_>) {
    assert!(std::ptr::eq(a.tape, b.tape), "vars from different tapes");
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn unary(&self, value: Tensor, backward: impl Fn(&Tensor) -> Result<Tensor> + 'static) -> Var<'t> {
        self.tape
            .push(value, vec![self.id], Box::new(move |g| Ok(vec![backward(g)?])))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(self, &other);
        let v = self.value().add(&other.value())?;
        Ok(self
            .tape
            .push(v, vec![self.id, other.id], Box::new(|g| Ok(vec![g.clone(), g.clone()]))))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(self, &other);
        let v = self.value().sub(&other.value())?;
        Ok(self.tape.push(
            v,
            vec![self.id, other.id],
            Box::new(|g| Ok(vec![g.clone(), g.scale(-1.0)])),
        ))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(self, &other);
        let (a, b) = (self.value(), other.value());
        let v = a.mul(&b)?;
        Ok(self.tape.push(
            v,
            vec![self.id, other.id],
            Box::new(move |g| Ok(vec![g.mul(&b)?, g.mul(&a)?])),
        ))
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(self.value().scale(s), move |g| Ok(g.scale(s)))
    }

    pub fn add_scalar(&self, s: f64) -> Var<'t> {
        self.unary(self.value().map(|v| v + s), |g| Ok(g.clone()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let old = self.shape();
        let v = (*self.value()).clone().reshape(shape)?;
        Ok(self.unary(v, move |g| g.clone().reshape(&old)))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let y = Rc::new(self.value().map(kernels::sigmoid));
        let yc = y.clone();
        self.unary((*y).clone(), move |g| {
            g.zip_map(&yc, "sigmoid", |g, s| g * s * (1.0 - s))
        })
    }

    pub fn gelu(&self) -> Var<'t> {
        let x = self.value();
        self.unary(x.map(kernels::gelu), move |g| {
            g.zip_map(&x, "gelu", |g, v| g * kernels::gelu_grad(v))
        })
    }

    /// Adds `bias (C)` to every row of `self (L, C)`.
    pub fn add_row(&self, bias: Var<'t>) -> Result<Var<'t>> {
        same_tape(self, &bias);
        let x = self.value();
        let (_, c) = x.dims2()?;
        let b = bias.value();
        b.expect_shape(&[c], "add_row")?;
        let mut v = (*x).clone();
        for row in v.data_mut().chunks_mut(c) {
            for (r, &bb) in row.iter_mut().zip(b.data()) {
                *r += bb;
            }
        }
        Ok(self.tape.push(
            v,
            vec![self.id, bias.id],
            Box::new(move |g| {
                let mut gb = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (s, &r) in gb.iter_mut().zip(row) {
                        *s += r;
                    }
                }
                Ok(vec![g.clone(), Tensor::from_vec(&[c], gb)?])
            }),
        ))
    }

    /// Adds `bias (C)` to every position of `self (C, ...)`.
    pub fn add_channel(&self, bias: Var<'t>) -> Result<Var<'t>> {
        same_tape(self, &bias);
        let x = self.value();
        let c = x.shape()[0];
        let b = bias.value();
        b.expect_shape(&[c], "add_channel")?;
        let plane = x.len() / c.max(1);
        let mut v = (*x).clone();
        for (p, &bb) in v.data_mut().chunks_mut(plane).zip(b.data()) {
            p.iter_mut().for_each(|e| *e += bb);
        }
        Ok(self.tape.push(
            v,
            vec![self.id, bias.id],
            Box::new(move |g| {
                let gb = g.data().chunks(plane).map(|p| p.iter().sum()).collect();
                Ok(vec![g.clone(), Tensor::from_vec(&[c], gb)?])
            }),
        ))
    }

    /// Matrix product of rank-2 operands.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, false)
    }

    /// `self * other^T`.
    pub fn matmul_nt(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: Var<'t>, trans_b: bool) -> Result<Var<'t>> {
        same_tape(self, &other);
        let (a, b) = (self.value(), other.value());
        let (m, k) = a.dims2()?;
        let (br, bc) = b.dims2()?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, a.data(), false, b.data(), trans_b, &mut out, 0.0);
        let bshape = b.shape().to_vec();
        Ok(self.tape.push(
            Tensor::from_vec(&[m, n], out)?,
            vec![self.id, other.id],
            Box::new(move |g| {
                let mut ga = vec![0.0; m * k];
                kernels::gemm(m, n, k, g.data(), false, b.data(), !trans_b, &mut ga, 0.0);
                let mut gb = vec![0.0; k * n];
                if trans_b {
                    // gB (n x k) = g^T A
                    kernels::gemm(n, m, k, g.data(), true, a.data(), false, &mut gb, 0.0);
                } else {
                    kernels::gemm(k, m, n, a.data(), true, g.data(), false, &mut gb, 0.0);
                }
                Ok(vec![Tensor::from_vec(&[m, k], ga)?, Tensor::from_vec(&bshape, gb)?])
            }),
        ))
    }

    /// `self (L, in) * w (in, out) + b (out)`.
    pub fn linear(&self, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        self.matmul(w)?.add_row(b)
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2()?;
        Ok(self.unary(transpose2(x.data(), r, c)?, move |g| transpose2(g.data(), c, r)))
    }

    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let y = Rc::new(kernels::softmax_rows(&self.value())?);
        let yc = y.clone();
        let cols = y.shape()[1];
        Ok(self.unary((*y).clone(), move |g| {
            let mut gx = g.clone();
            kernels::softmax_rows_backward_inplace(yc.data(), gx.data_mut(), cols);
            Ok(gx)
        }))
    }

    /// Row-wise layer normalisation of `self (L, C)`.
    pub fn layer_norm_rows(&self, gamma: Var<'t>, beta: Var<'t>) -> Result<Var<'t>> {
        same_tape(self, &gamma);
        same_tape(self, &beta);
        let (x, gm) = (self.value(), gamma.value());
        let (y, stats) = kernels::layer_norm_rows(&x, &gm, &beta.value())?;
        Ok(self.tape.push(
            y,
            vec![self.id, gamma.id, beta.id],
            Box::new(move |g| {
                let (gx, gg, gb) = kernels::layer_norm_rows_backward(&x, &gm, &stats, g)?;
                Ok(vec![gx, gg, gb])
            }),
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::Invalid(format!(
                "concat axis {axis} for rank {}",
                base.len()
            )));
        }
        for (p, v) in parts.iter().zip(&values) {
            same_tape(first, p);
            let s = v.shape();
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &n) in values.iter().zip(&sizes) {
                data.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(first.tape.push(
            Tensor::from_vec(&shape, data)?,
            parts.iter().map(|p| p.id).collect(),
            Box::new(move |g| {
                let mut out: Vec<Vec<f64>> = sizes.iter().map(|n| Vec::with_capacity(outer * n * inner)).collect();
                for o in 0..outer {
                    let mut off = o * total * inner;
                    for (dst, &n) in out.iter_mut().zip(&sizes) {
                        dst.extend_from_slice(&g.data()[off..off + n * inner]);
                        off += n * inner;
                    }
                }
                out.into_iter()
                    .zip(&shapes)
                    .map(|(d, s)| Tensor::from_vec(s, d))
                    .collect()
            }),
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::Invalid(format!(
                "slice [{start}, {}) of axis {axis} in {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = (o * n + start) * inner;
            data.extend_from_slice(&x.data()[off..off + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(self.unary(Tensor::from_vec(&out_shape, data)?, move |g| {
            let mut gx = Tensor::zeros(&shape);
            for o in 0..outer {
                let off = (o * n + start) * inner;
                gx.data_mut()[off..off + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            Ok(gx)
        }))
    }

    /// Dense convolution of `self (C,H,W)` with `w (O,C,k,k)` and `b (O)`.
    pub fn conv2d(&self, w: Var<'t>, b: Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        same_tape(self, &w);
        same_tape(self, &b);
        let (x, wv) = (self.value(), w.value());
        let y = kernels::conv2d(&x, &wv, &b.value(), stride, pad)?;
        Ok(self.tape.push(
            y,
            vec![self.id, w.id, b.id],
            Box::new(move |g| {
                let (gx, gw, gb) = kernels::conv2d_backward(&x, &wv, g, stride, pad)?;
                Ok(vec![gx, gw, gb])
            }),
        ))
    }

    /// Per-channel "same" convolution with `w (C,1,k,k)` and `b (C)`.
    pub fn depthwise_conv2d(&self, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        same_tape(self, &w);
        same_tape(self, &b);
        let (x, wv) = (self.value(), w.value());
        let y = kernels::depthwise_conv2d(&x, &wv, &b.value())?;
        Ok(self.tape.push(
            y,
            vec![self.id, w.id, b.id],
            Box::new(move |g| {
                let (gx, gw, gb) = kernels::depthwise_conv2d_backward(&x, &wv, g)?;
                Ok(vec![gx, gw, gb])
            }),
        ))
    }

    /// Mean over channels: `(C,H,W) -> (1,H,W)`.
    pub fn channel_mean(&self) -> Result<Var<'t>> {
        let (c, h, w) = self.value().dims3()?;
        let y = kernels::channel_mean(&self.value())?;
        Ok(self.unary(y, move |g| {
            let inv = 1.0 / c as f64;
            let mut gx = Vec::with_capacity(c * h * w);
            for _ in 0..c {
                gx.extend(g.data().iter().map(|v| v * inv));
            }
            Tensor::from_vec(&[c, h, w], gx)
        }))
    }

    /// Max over channels: `(C,H,W) -> (1,H,W)`.
    pub fn channel_max(&self) -> Result<Var<'t>> {
        let (c, h, w) = self.value().dims3()?;
        let (y, arg) = kernels::channel_max(&self.value())?;
        Ok(self.unary(y, move |g| {
            let hw = h * w;
            let mut gx = Tensor::zeros(&[c, h, w]);
            for (i, &ch) in arg.iter().enumerate() {
                gx.data_mut()[ch * hw + i] = g.data()[i];
            }
            Ok(gx)
        }))
    }

    /// Mean over the spatial axes: `(C,H,W) -> (C)`.
    pub fn spatial_mean(&self) -> Result<Var<'t>> {
        let x = self.value();
        let (c, h, w) = x.dims3()?;
        let hw = h * w;
        let y: Vec<f64> = x.data().chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
        Ok(self.unary(Tensor::from_vec(&[c], y)?, move |g| {
            let mut gx = Vec::with_capacity(c * hw);
            for &gv in g.data() {
                gx.extend(std::iter::repeat(gv / hw as f64).take(hw));
            }
            Tensor::from_vec(&[c, h, w], gx)
        }))
    }

    pub fn avg_pool(&self, factor: usize) -> Result<Var<'t>> {
        let y = kernels::avg_pool(&self.value(), factor)?;
        Ok(self.unary(y, move |g| kernels::avg_pool_backward(g, factor)))
    }

    pub fn upsample_nearest(&self, factor: usize) -> Result<Var<'t>> {
        let y = kernels::upsample_nearest(&self.value(), factor)?;
        Ok(self.unary(y, move |g| kernels::upsample_nearest_backward(g, factor)))
    }

    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Var<'t>> {
        let (_, h, w) = self.value().dims3()?;
        let y = kernels::resize_bilinear(&self.value(), out_h, out_w)?;
        Ok(self.unary(y, move |g| kernels::resize_bilinear_backward(g, h, w)))
    }

    /// Gated linear recurrence over the rows of `u (L, D)` in `order`;
    /// see [`kernels::gated_scan`].
    pub fn gated_scan(a: Var<'t>, b: Var<'t>, c: Var<'t>, u: Var<'t>, order: Arc<Vec<usize>>) -> Result<Var<'t>> {
        for v in [&b, &c, &u] {
            same_tape(&a, v);
        }
        let (av, bv, cv, uv) = (a.value(), b.value(), c.value(), u.value());
        let (y, states) = kernels::gated_scan(&av, &bv, &cv, &uv, &order)?;
        Ok(a.tape.push(
            y,
            vec![a.id, b.id, c.id, u.id],
            Box::new(move |g| {
                let grads = kernels::gated_scan_backward(&av, &bv, &cv, &uv, &order, &states, g)?;
                Ok(grads.into())
            }),
        ))
    }

    /// Single-head scaled dot-product attention over token rows:
    /// `softmax(q k^T * scale) v`, with `q, k, v` all `(L, d)`.
    pub fn attention(q: Var<'t>, k: Var<'t>, v: Var<'t>, scale: f64) -> Result<Var<'t>> {
        same_tape(&q, &k);
        same_tape(&q, &v);
        let (qv, kv, vv) = (q.value(), k.value(), v.value());
        let (l, d) = qv.dims2()?;
        kv.expect_shape(&[l, d], "attention k")?;
        let dv = vv.dims2()?.1;
        vv.expect_shape(&[l, dv], "attention v")?;
        let mut p = vec![0.0; l * l];
        kernels::gemm(l, d, l, qv.data(), false, kv.data(), true, &mut p, 0.0);
        p.iter_mut().for_each(|s| *s *= scale);
        let p = kernels::softmax_rows(&Tensor::from_vec(&[l, l], p)?)?;
        let mut out = vec![0.0; l * dv];
        kernels::gemm(l, l, dv, p.data(), false, vv.data(), false, &mut out, 0.0);
        Ok(q.tape.push(
            Tensor::from_vec(&[l, dv], out)?,
            vec![q.id, k.id, v.id],
            Box::new(move |g| {
                let mut gv = vec![0.0; l * dv];
                kernels::gemm(l, l, dv, p.data(), true, g.data(), false, &mut gv, 0.0);
                let mut gs = vec![0.0; l * l];
                kernels::gemm(l, dv, l, g.data(), false, vv.data(), true, &mut gs, 0.0);
                kernels::softmax_rows_backward_inplace(p.data(), &mut gs, l);
                gs.iter_mut().for_each(|s| *s *= scale);
                let mut gq = vec![0.0; l * d];
                kernels::gemm(l, l, d, &gs, false, kv.data(), false, &mut gq, 0.0);
                let mut gk = vec![0.0; l * d];
                kernels::gemm(l, l, d, &gs, true, qv.data(), false, &mut gk, 0.0);
                Ok(vec![
                    Tensor::from_vec(&[l, d], gq)?,
                    Tensor::from_vec(&[l, d], gk)?,
                    Tensor::from_vec(&[l, dv], gv)?,
                ])
            }),
        ))
    }

    /// Mean absolute difference to `target`, as a scalar.
    pub fn l1_loss(&self, target: &Tensor) -> Result<Var<'t>> {
        let x = self.value();
        let diff = x.sub(target)?;
        let n = diff.len() as f64;
        let loss = diff.data().iter().map(|v| v.abs()).sum::<f64>() / n;
        Ok(self.unary(Tensor::scalar(loss), move |g| {
            let s = g.data()[0] / n;
            Ok(diff.map(|d| s * d.signum()))
        }))
    }

    pub fn sum_all(&self) -> Var<'t> {
        let shape = self.shape();
        let s = self.value().sum();
        self.unary(Tensor::scalar(s), move |g| Ok(Tensor::full(&shape, g.data()[0])))
    }

    pub fn mean_all(&self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }
}

fn transpose2(data: &[f64], r: usize, c: usize) -> Result<Tensor> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = data[i * c + j];
        }
    }
    Tensor::from_vec(&[c, r], out)
}
