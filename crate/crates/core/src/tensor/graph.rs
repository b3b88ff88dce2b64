//! Tape of executed operations and its reverse sweep.

use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvDims, Window};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    graph: u64,
    index: usize,
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Variable,
    Param(ParamId),
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
    },
    TConv1d {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        x: usize,
        slope: T,
    },
    InstanceNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Concat {
        xs: Vec<usize>,
    },
    SliceChannels {
        x: usize,
        lo: usize,
    },
    PadTime {
        x: usize,
    },
    CropTime {
        x: usize,
    },
    Add {
        x: usize,
        y: usize,
    },
    Scale {
        x: usize,
        factor: T,
    },
    MseLoss {
        pred: usize,
        target: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward pass. A fresh graph is built for every pass.
#[derive(Debug)]
pub struct Graph<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

/// Gradients of leaf variables produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    graph: u64,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, node: NodeId) -> Option<&[T]> {
        if node.graph != self.graph {
            return None;
        }
        self.grads.get(node.index)?.as_deref()
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn resolve(&self, id: NodeId) -> Result<usize> {
        if id.graph != self.id || id.index >= self.nodes.len() {
            return Err(Error::Graph("node does not belong to this graph".into()));
        }
        Ok(id.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, what: &str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{what} forward")));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId {
            graph: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn node(&self, i: usize) -> &Node<T> {
        &self.nodes[i]
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.resolve(id)?].value)
    }

    /// `input >= 0` for every element fed to a `leaky_relu`, in tape order.
    /// Two passes with equal patterns lie on the same linear piece of every
    /// activation, which finite-difference checks use to avoid kinks.
    pub fn kink_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu { x, .. } => Some(self.nodes[x].value.data().iter().map(|&v| v >= T::zero())),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Input that takes no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Constant, false, "constant")
            .expect("tensors are finite by construction")
    }

    /// Input whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Variable, true, "variable")
            .expect("tensors are finite by construction")
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        let value = store.get(id).value().clone();
        self.push(value, Op::Param(id), true, "param")
            .expect("parameters are finite")
    }

    fn rg(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (xi, wi, bi) = (self.resolve(x)?, self.resolve(w)?, self.resolve(b)?);
        let (batch, cin, len) = self.node(xi).value.dims3()?;
        let (cout, wcin, kernel) = self.node(wi).value.dims3()?;
        if wcin != cin {
            return Err(Error::shape(format!(
                "conv1d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if self.node(bi).value.shape() != [cout] {
            return Err(Error::shape(format!(
                "conv1d: bias shape {:?}, expected [{cout}]",
                self.node(bi).value.shape()
            )));
        }
        let short = kernels::conv1d_out_len(len, kernel, stride, pad)?;
        let dims = ConvDims {
            batch,
            cin,
            cout,
            win: Window {
                kernel,
                stride,
                pad,
                long: len,
                short,
            },
        };
        let y = kernels::conv1d_forward(
            self.node(xi).value.data(),
            self.node(wi).value.data(),
            self.node(bi).value.data(),
            &dims,
        );
        let rg = self.rg(&[xi, wi, bi]);
        self.push(
            Tensor::from_parts(vec![batch, cout, short], y),
            Op::Conv1d {
                x: xi,
                w: wi,
                b: bi,
                stride,
                pad,
            },
            rg,
            "conv1d",
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn tconv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<NodeId> {
        let (xi, wi, bi) = (self.resolve(x)?, self.resolve(w)?, self.resolve(b)?);
        let (batch, cin, len) = self.node(xi).value.dims3()?;
        let (wcin, cout, kernel) = self.node(wi).value.dims3()?;
        if wcin != cin {
            return Err(Error::shape(format!(
                "tconv1d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if self.node(bi).value.shape() != [cout] {
            return Err(Error::shape(format!(
                "tconv1d: bias shape {:?}, expected [{cout}]",
                self.node(bi).value.shape()
            )));
        }
        let out_len = kernels::tconv1d_out_len(len, kernel, stride, pad, out_pad)?;
        let dims = ConvDims {
            batch,
            cin,
            cout,
            win: Window {
                kernel,
                stride,
                pad,
                long: out_len,
                short: len,
            },
        };
        let y = kernels::tconv1d_forward(
            self.node(xi).value.data(),
            self.node(wi).value.data(),
            self.node(bi).value.data(),
            &dims,
        );
        let rg = self.rg(&[xi, wi, bi]);
        self.push(
            Tensor::from_parts(vec![batch, cout, out_len], y),
            Op::TConv1d {
                x: xi,
                w: wi,
                b: bi,
                stride,
                pad,
            },
            rg,
            "tconv1d",
        )
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::invalid(format!("leaky_relu slope {slope} outside [0, 1)")));
        }
        let xi = self.resolve(x)?;
        let s = T::from_f64_lossy(slope);
        let y = self.node(xi).value.map(|v| if v >= T::zero() { v } else { s * v });
        let rg = self.rg(&[xi]);
        self.push(y, Op::LeakyRelu { x: xi, slope: s }, rg, "leaky_relu")
    }

    /// Per (batch, channel) normalization over time with population variance.
    pub fn instance_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let (xi, gi, bi) = (self.resolve(x)?, self.resolve(gamma)?, self.resolve(beta)?);
        let (batch, ch, len) = self.node(xi).value.dims3()?;
        if len < 2 {
            return Err(Error::shape("instance_norm needs at least 2 time steps"));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("instance_norm eps must be > 0"));
        }
        for (name, i) in [("gamma", gi), ("beta", bi)] {
            if self.node(i).value.shape() != [ch] {
                return Err(Error::shape(format!(
                    "instance_norm: {name} shape {:?}, expected [{ch}]",
                    self.node(i).value.shape()
                )));
            }
        }
        let eps = T::from_f64_lossy(eps);
        let n = T::from_usize(len).unwrap();
        let xs = self.node(xi).value.data();
        let g = self.node(gi).value.data();
        let be = self.node(bi).value.data();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut inv_std = vec![T::zero(); batch * ch];
        let mut y = vec![T::zero(); xs.len()];
        for row in 0..batch * ch {
            let c = row % ch;
            let xr = &xs[row * len..(row + 1) * len];
            let mean = xr.iter().copied().sum::<T>() / n;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[row] = inv;
            for t in 0..len {
                let h = (xr[t] - mean) * inv;
                xhat[row * len + t] = h;
                y[row * len + t] = g[c] * h + be[c];
            }
        }
        let rg = self.rg(&[xi, gi, bi]);
        self.push(
            Tensor::from_parts(vec![batch, ch, len], y),
            Op::InstanceNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                xhat,
                inv_std,
            },
            rg,
            "instance_norm",
        )
    }

    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::invalid("concat_channels of an empty list"));
        }
        let idx = xs.iter().map(|&x| self.resolve(x)).collect::<Result<Vec<_>>>()?;
        let (batch, _, len) = self.node(idx[0]).value.dims3()?;
        let mut total = 0;
        for &i in &idx {
            let (b, c, t) = self.node(i).value.dims3()?;
            if b != batch || t != len {
                return Err(Error::shape(format!(
                    "concat_channels: [{b}, {c}, {t}] does not match batch {batch} / time {len}"
                )));
            }
            total += c;
        }
        let mut y = Vec::with_capacity(batch * total * len);
        for b in 0..batch {
            for &i in &idx {
                let v = &self.node(i).value;
                let c = v.shape()[1];
                y.extend_from_slice(&v.data()[b * c * len..(b + 1) * c * len]);
            }
        }
        let rg = self.rg(&idx);
        self.push(
            Tensor::from_parts(vec![batch, total, len], y),
            Op::Concat { xs: idx },
            rg,
            "concat_channels",
        )
    }

    pub fn slice_channels(&mut self, x: NodeId, lo: usize, hi: usize) -> Result<NodeId> {
        let xi = self.resolve(x)?;
        let (batch, ch, len) = self.node(xi).value.dims3()?;
        if !(lo < hi && hi <= ch) {
            return Err(Error::invalid(format!(
                "slice_channels: range {lo}..{hi} invalid for {ch} channels"
            )));
        }
        let src = self.node(xi).value.data();
        let mut y = Vec::with_capacity(batch * (hi - lo) * len);
        for b in 0..batch {
            y.extend_from_slice(&src[(b * ch + lo) * len..(b * ch + hi) * len]);
        }
        let rg = self.rg(&[xi]);
        self.push(
            Tensor::from_parts(vec![batch, hi - lo, len], y),
            Op::SliceChannels { x: xi, lo },
            rg,
            "slice_channels",
        )
    }

    /// Appends zeros on the right of the time axis up to `len`.
    pub fn pad_time(&mut self, x: NodeId, len: usize) -> Result<NodeId> {
        let xi = self.resolve(x)?;
        let (batch, ch, t) = self.node(xi).value.dims3()?;
        if len < t {
            return Err(Error::invalid(format!("pad_time: {len} < current length {t}")));
        }
        let src = self.node(xi).value.data();
        let mut y = vec![T::zero(); batch * ch * len];
        for r in 0..batch * ch {
            y[r * len..r * len + t].copy_from_slice(&src[r * t..(r + 1) * t]);
        }
        let rg = self.rg(&[xi]);
        self.push(
            Tensor::from_parts(vec![batch, ch, len], y),
            Op::PadTime { x: xi },
            rg,
            "pad_time",
        )
    }

    /// Keeps the first `len` time steps.
    pub fn crop_time(&mut self, x: NodeId, len: usize) -> Result<NodeId> {
        let xi = self.resolve(x)?;
        let (batch, ch, t) = self.node(xi).value.dims3()?;
        if len == 0 || len > t {
            return Err(Error::invalid(format!("crop_time: {len} not in 1..={t}")));
        }
        let src = self.node(xi).value.data();
        let mut y = Vec::with_capacity(batch * ch * len);
        for r in 0..batch * ch {
            y.extend_from_slice(&src[r * t..r * t + len]);
        }
        let rg = self.rg(&[xi]);
        self.push(
            Tensor::from_parts(vec![batch, ch, len], y),
            Op::CropTime { x: xi },
            rg,
            "crop_time",
        )
    }

    pub fn add(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        let (xi, yi) = (self.resolve(x)?, self.resolve(y)?);
        let (a, b) = (&self.node(xi).value, &self.node(yi).value);
        if a.shape() != b.shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let out: Vec<T> = a.data().iter().zip(b.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), out);
        let rg = self.rg(&[xi, yi]);
        self.push(out, Op::Add { x: xi, y: yi }, rg, "add")
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let xi = self.resolve(x)?;
        let f = T::from_f64_lossy(factor);
        let out = self.node(xi).value.map(|v| v * f);
        let rg = self.rg(&[xi]);
        self.push(out, Op::Scale { x: xi, factor: f }, rg, "scale")
    }

    /// Mean of squared differences, as a single-element tensor.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let (pi, ti) = (self.resolve(pred)?, self.resolve(target)?);
        let (p, t) = (&self.node(pi).value, &self.node(ti).value);
        if p.shape() != t.shape() {
            return Err(Error::shape(format!(
                "mse_loss: {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        let n = T::from_usize(p.numel()).unwrap();
        let sum: T = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let rg = self.rg(&[pi, ti]);
        self.push(
            Tensor::scalar(sum / n),
            Op::MseLoss {
                pred: pi,
                target: ti,
            },
            rg,
            "mse_loss",
        )
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Parameter gradients are added onto those already held by `params`, so
    /// repeated calls accumulate. Gradients of [`Graph::variable`] inputs are
    /// returned.
    pub fn backward(&self, loss: NodeId, params: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let li = self.resolve(loss)?;
        if self.nodes[li].value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(vec![T::one()]);

        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            if gy.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("backward at node {i}")));
            }
            match &node.op {
                Op::Constant => {}
                Op::Variable => {
                    grads[i] = Some(gy);
                }
                Op::Param(pid) => {
                    let p = params.get_mut(*pid);
                    if p.grad().len() != gy.len() {
                        return Err(Error::shape(format!(
                            "gradient for {} has {} values, parameter has {}",
                            p.name(),
                            gy.len(),
                            p.grad().len()
                        )));
                    }
                    for (g, d) in p.grad_mut().iter_mut().zip(&gy) {
                        *g += *d;
                    }
                }
                Op::Conv1d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let (batch, cin, len) = self.nodes[*x].value.dims3()?;
                    let (cout, _, kernel) = self.nodes[*w].value.dims3()?;
                    let short = node.value.shape()[2];
                    let dims = ConvDims {
                        batch,
                        cin,
                        cout,
                        win: Window {
                            kernel,
                            stride: *stride,
                            pad: *pad,
                            long: len,
                            short,
                        },
                    };
                    let mut dx = self.grad_buf(&mut grads, *x);
                    let mut dw = self.grad_buf(&mut grads, *w);
                    let mut db = self.grad_buf(&mut grads, *b);
                    kernels::conv1d_backward(
                        self.nodes[*x].value.data(),
                        self.nodes[*w].value.data(),
                        &gy,
                        &dims,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    restore(&mut grads, *x, dx);
                    restore(&mut grads, *w, dw);
                    restore(&mut grads, *b, db);
                }
                Op::TConv1d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let (batch, cin, len) = self.nodes[*x].value.dims3()?;
                    let (_, cout, kernel) = self.nodes[*w].value.dims3()?;
                    let long = node.value.shape()[2];
                    let dims = ConvDims {
                        batch,
                        cin,
                        cout,
                        win: Window {
                            kernel,
                            stride: *stride,
                            pad: *pad,
                            long,
                            short: len,
                        },
                    };
                    let mut dx = self.grad_buf(&mut grads, *x);
                    let mut dw = self.grad_buf(&mut grads, *w);
                    let mut db = self.grad_buf(&mut grads, *b);
                    kernels::tconv1d_backward(
                        self.nodes[*x].value.data(),
                        self.nodes[*w].value.data(),
                        &gy,
                        &dims,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    restore(&mut grads, *x, dx);
                    restore(&mut grads, *w, dw);
                    restore(&mut grads, *b, db);
                }
                Op::LeakyRelu { x, slope } => {
                    if let Some(mut dx) = self.grad_buf(&mut grads, *x) {
                        let xs = self.nodes[*x].value.data();
                        for ((d, &g), &v) in dx.iter_mut().zip(&gy).zip(xs) {
                            *d += if v >= T::zero() { g } else { *slope * g };
                        }
                        grads[*x] = Some(dx);
                    }
                }
                Op::InstanceNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (batch, ch, len) = self.nodes[*x].value.dims3()?;
                    let g = self.nodes[*gamma].value.data();
                    let n = T::from_usize(len).unwrap();
                    let mut dx = self.grad_buf(&mut grads, *x);
                    let mut dg = self.grad_buf(&mut grads, *gamma);
                    let mut dbeta = self.grad_buf(&mut grads, *beta);
                    for row in 0..batch * ch {
                        let c = row % ch;
                        let gr = &gy[row * len..(row + 1) * len];
                        let hr = &xhat[row * len..(row + 1) * len];
                        let sum_g: T = gr.iter().copied().sum();
                        let sum_gh: T = gr.iter().zip(hr).map(|(&a, &b)| a * b).sum();
                        if let Some(dg) = dg.as_deref_mut() {
                            dg[c] += sum_gh;
                        }
                        if let Some(db) = dbeta.as_deref_mut() {
                            db[c] += sum_g;
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            // dxhat = gamma * dy; dx = inv/N (N dxhat - sum dxhat - xhat sum(dxhat xhat))
                            let k = g[c] * inv_std[row] / n;
                            let dxr = &mut dx[row * len..(row + 1) * len];
                            for t in 0..len {
                                dxr[t] += k * (n * gr[t] - sum_g - hr[t] * sum_gh);
                            }
                        }
                    }
                    restore(&mut grads, *x, dx);
                    restore(&mut grads, *gamma, dg);
                    restore(&mut grads, *beta, dbeta);
                }
                Op::Concat { xs } => {
                    let (batch, total, len) = node.value.dims3()?;
                    let mut offset = 0;
                    for &xi in xs {
                        let c = self.nodes[xi].value.shape()[1];
                        if let Some(mut dx) = self.grad_buf(&mut grads, xi) {
                            for b in 0..batch {
                                let src = &gy[(b * total + offset) * len..][..c * len];
                                for (d, &s) in dx[b * c * len..][..c * len].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                            grads[xi] = Some(dx);
                        }
                        offset += c;
                    }
                }
                Op::SliceChannels { x, lo } => {
                    if let Some(mut dx) = self.grad_buf(&mut grads, *x) {
                        let (batch, ch, len) = self.nodes[*x].value.dims3()?;
                        let width = node.value.shape()[1];
                        for b in 0..batch {
                            let dst = &mut dx[(b * ch + lo) * len..][..width * len];
                            for (d, &s) in dst.iter_mut().zip(&gy[b * width * len..][..width * len]) {
                                *d += s;
                            }
                        }
                        grads[*x] = Some(dx);
                    }
                }
                Op::PadTime { x } => {
                    if let Some(mut dx) = self.grad_buf(&mut grads, *x) {
                        let (batch, ch, t) = self.nodes[*x].value.dims3()?;
                        let len = node.value.shape()[2];
                        for r in 0..batch * ch {
                            for (d, &s) in dx[r * t..(r + 1) * t].iter_mut().zip(&gy[r * len..]) {
                                *d += s;
                            }
                        }
                        grads[*x] = Some(dx);
                    }
                }
                Op::CropTime { x } => {
                    if let Some(mut dx) = self.grad_buf(&mut grads, *x) {
                        let (batch, ch, t) = self.nodes[*x].value.dims3()?;
                        let len = node.value.shape()[2];
                        for r in 0..batch * ch {
                            for (d, &s) in dx[r * t..r * t + len].iter_mut().zip(&gy[r * len..(r + 1) * len]) {
                                *d += s;
                            }
                        }
                        grads[*x] = Some(dx);
                    }
                }
                Op::Add { x, y } => {
                    for src in [*x, *y] {
                        if let Some(mut d) = self.grad_buf(&mut grads, src) {
                            d.iter_mut().zip(&gy).for_each(|(d, &g)| *d += g);
                            grads[src] = Some(d);
                        }
                    }
                }
                Op::Scale { x, factor } => {
                    if let Some(mut d) = self.grad_buf(&mut grads, *x) {
                        d.iter_mut().zip(&gy).for_each(|(d, &g)| *d += *factor * g);
                        grads[*x] = Some(d);
                    }
                }
                Op::MseLoss { pred, target } => {
                    let p = self.nodes[*pred].value.data();
                    let t = self.nodes[*target].value.data();
                    let k = T::from_f64_lossy(2.0) * gy[0] / T::from_usize(p.len()).unwrap();
                    if let Some(mut d) = self.grad_buf(&mut grads, *pred) {
                        for ((d, &a), &b) in d.iter_mut().zip(p).zip(t) {
                            *d += k * (a - b);
                        }
                        grads[*pred] = Some(d);
                    }
                    if let Some(mut d) = self.grad_buf(&mut grads, *target) {
                        for ((d, &a), &b) in d.iter_mut().zip(p).zip(t) {
                            *d -= k * (a - b);
                        }
                        grads[*target] = Some(d);
                    }
                }
            }
        }

        for (i, g) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[i].op, Op::Variable) {
                *g = None;
            }
        }
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }

    /// Takes (or allocates) the gradient buffer of `i` if it needs one.
    fn grad_buf(&self, grads: &mut [Option<Vec<T>>], i: usize) -> Option<Vec<T>> {
        if !self.nodes[i].requires_grad {
            return None;
        }
        Some(
            grads[i]
                .take()
                .unwrap_or_else(|| vec![T::zero(); self.nodes[i].value.numel()]),
        )
    }
}

fn restore<T>(grads: &mut [Option<Vec<T>>], i: usize, buf: Option<Vec<T>>) {
    if buf.is_some() {
        grads[i] = buf;
    }
}
