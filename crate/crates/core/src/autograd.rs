//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation on a [`Tape`] evaluates its kernel eagerly, stores the
//! result, and records enough context to replay the adjoint. `backward`
//! walks the tape in reverse once and returns gradients for the leaves,
//! including every parameter bound during the forward pass.

use crate::error::{Error, Result};
use crate::ops::{self, Activation, BinaryOp, ConvGeom, PaddingMode, PaddingSpec, PoolAxis, PoolKind};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{numel, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Param,
    Binary { op: BinaryOp, a: Var, b: Var },
    Affine { x: Var, scale: T },
    Act { x: Var, kind: Activation },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ReflectPad { x: Var, pad: usize },
    DirPool { x: Var, axis: PoolAxis, argmax: Option<Vec<u32>> },
    Reshape { x: Var },
    Concat { xs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Shuffle { x: Var, groups: usize },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    Upsample { x: Var, factor: usize },
    Softmax { x: Var, axis: usize },
    Unfold { x: Var, k: usize },
    SumAxis { x: Var, axis: usize },
    Mean { x: Var },
    Charbonnier { x: Var, y: Var, eps: T },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "input",
            Op::Param => "param",
            Op::Binary { op: BinaryOp::Add, .. } => "add",
            Op::Binary { op: BinaryOp::Sub, .. } => "sub",
            Op::Binary { op: BinaryOp::Mul, .. } => "mul",
            Op::Affine { .. } => "affine",
            Op::Act { kind, .. } => kind.name(),
            Op::Conv { .. } => "conv2d",
            Op::ReflectPad { .. } => "reflect_pad",
            Op::DirPool { .. } => "directional_pool",
            Op::Reshape { .. } => "reshape",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Shuffle { .. } => "channel_shuffle",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::Upsample { .. } => "upsample_nearest",
            Op::Softmax { .. } => "softmax",
            Op::Unfold { .. } => "unfold",
            Op::SumAxis { .. } => "sum_axis",
            Op::Mean { .. } => "mean",
            Op::Charbonnier { .. } => "charbonnier",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records a forward pass. Parameters are bound lazily from the attached store.
pub struct Tape<'p, T: Real> {
    nodes: Vec<Node<T>>,
    store: Option<&'p ParamStore<T>>,
    bound: Vec<Option<Var>>,
    flops: u64,
    first_nonfinite: Option<(usize, &'static str)>,
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to a leaf (input or parameter).
    pub fn wrt(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.get(var.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter bound during the forward pass.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor<T>>)> + '_ {
        self.params.iter().map(|&(id, node)| (id, self.leaves[node].as_ref()))
    }
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::detached()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            nodes: Vec::new(),
            store: Some(store),
            bound: vec![None; store.len()],
            flops: 0,
            first_nonfinite: None,
        }
    }

    /// A tape with no parameter store; only explicit inputs can be leaves.
    pub fn detached() -> Self {
        Self {
            nodes: Vec::new(),
            store: None,
            bound: Vec::new(),
            flops: 0,
            first_nonfinite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Floating point operations executed so far (a multiply-accumulate counts as 2).
    pub fn flops(&self) -> u64 {
        self.flops
    }

    /// The first operation that produced a NaN or infinity, if any.
    pub fn first_nonfinite(&self) -> Option<(usize, &'static str)> {
        self.first_nonfinite
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn check(&self, v: Var) -> Result<&Tensor<T>> {
        self.nodes.get(v.0).map(|n| &n.value).ok_or(Error::UnknownVar(v.0))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, flops: u64) -> Var {
        self.flops += flops;
        if self.first_nonfinite.is_none() && !value.is_finite() {
            self.first_nonfinite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, 0)
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let store = self
            .store
            .ok_or_else(|| Error::InvalidArgument("tape has no parameter store".into()))?;
        let slot = self
            .bound
            .get(id.index())
            .copied()
            .ok_or_else(|| Error::UnknownParameter(format!("#{}", id.index())))?;
        if let Some(v) = slot {
            return Ok(v);
        }
        let v = self.push(store.tensor(id).clone(), Op::Param, 0);
        self.bound[id.index()] = Some(v);
        Ok(v)
    }

    fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let out = ops::broadcast_binary(op, self.check(a)?, self.check(b)?)?;
        let n = out.len() as u64;
        Ok(self.push(out, Op::Binary { op, a, b }, n))
    }

    /// Elementwise sum with same-rank broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    /// Elementwise product with same-rank broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// `scale·x + shift` with constant scalars.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let (s, b) = (T::from_f64(scale), T::from_f64(shift));
        let out = self.check(x)?.map(|v| v * s + b);
        let n = out.len() as u64;
        Ok(self.push(out, Op::Affine { x, scale: s }, n))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out = ops::apply_activation(self.check(x)?, kind);
        let n = out.len() as u64;
        Ok(self.push(out, Op::Act { x, kind }, n))
    }

    /// Convolution with implicit zero padding and possibly rectangular kernels.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let bias = match b {
            Some(b) => Some(self.check(b)?),
            None => None,
        };
        let weight = self.check(w)?;
        let out = ops::conv_forward(self.check(x)?, weight, bias, geom)?;
        let wsh = weight.shape();
        let osh = out.shape();
        let flops = 2 * (wsh[1] * wsh[2] * wsh[3]) as u64 * numel(osh) as u64;
        Ok(self.push(out, Op::Conv { x, w, b, geom }, flops))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: PaddingSpec,
        groups: usize,
    ) -> Result<Var> {
        match padding.mode {
            PaddingMode::Zero => self.conv(x, w, b, ConvGeom::new(stride, padding.width, groups)),
            PaddingMode::Reflect => {
                let padded = self.reflect_pad(x, padding.width)?;
                self.conv(padded, w, b, ConvGeom::new(stride, 0, groups))
            }
        }
    }

    pub fn reflect_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        let out = ops::reflect_pad(self.check(x)?, pad)?;
        Ok(self.push(out, Op::ReflectPad { x, pad }, 0))
    }

    pub fn directional_pool(&mut self, x: Var, axis: PoolAxis, kind: PoolKind) -> Result<Var> {
        let input = self.check(x)?;
        let flops = input.len() as u64;
        let (out, argmax) = ops::directional_pool_forward(input, axis, kind)?;
        Ok(self.push(out, Op::DirPool { x, axis, argmax }, flops))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.check(x)?.clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape { x }, 0))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let values = xs.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let out = ops::concat(&values, axis)?;
        Ok(self.push(out, Op::Concat { xs: xs.to_vec(), axis }, 0))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = ops::narrow(self.check(x)?, axis, start, len)?;
        Ok(self.push(out, Op::Narrow { x, axis, start }, 0))
    }

    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let out = ops::channel_shuffle(self.check(x)?, groups)?;
        Ok(self.push(out, Op::Shuffle { x, groups }, 0))
    }

    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (out, inv_std) = ops::instance_norm_forward(self.check(x)?, eps)?;
        let flops = 5 * out.len() as u64;
        Ok(self.push(out, Op::InstanceNorm { x, inv_std }, flops))
    }

    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = ops::upsample_nearest(self.check(x)?, factor)?;
        Ok(self.push(out, Op::Upsample { x, factor }, 0))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = ops::softmax(self.check(x)?, axis)?;
        let flops = 3 * out.len() as u64;
        Ok(self.push(out, Op::Softmax { x, axis }, flops))
    }

    pub fn unfold(&mut self, x: Var, k: usize) -> Result<Var> {
        let out = ops::unfold(self.check(x)?, k)?;
        Ok(self.push(out, Op::Unfold { x, k }, 0))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let input = self.check(x)?;
        let flops = input.len() as u64;
        let out = ops::sum_axis(input, axis)?;
        Ok(self.push(out, Op::SumAxis { x, axis }, flops))
    }

    /// Mean over all elements, as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let input = self.check(x)?;
        let flops = input.len() as u64;
        let out = Tensor::scalar(input.mean());
        Ok(self.push(out, Op::Mean { x }, flops))
    }

    /// Global average over the spatial axes of an `N×C×H×W` map, giving `N×C×1×1`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.check(x)?.dims4("spatial_mean")?;
        let flat = self.reshape(x, &[n, c, h * w])?;
        let sum = self.sum_axis(flat, 2)?;
        let sum = self.reshape(sum, &[n, c, 1, 1])?;
        self.affine(sum, 1.0 / (h * w) as f64, 0.0)
    }

    /// Mean of `sqrt((x − y)² + eps²)` over all elements.
    pub fn charbonnier(&mut self, x: Var, y: Var, eps: f64) -> Result<Var> {
        let (xv, yv) = (self.check(x)?, self.check(y)?);
        if xv.shape() != yv.shape() {
            return Err(Error::shape("charbonnier", "operand shape", xv.shape(), yv.shape()));
        }
        if eps <= 0.0 {
            return Err(Error::InvalidArgument(format!("charbonnier eps must be > 0, got {eps}")));
        }
        let e2 = T::from_f64(eps * eps);
        let total: T = xv
            .data()
            .iter()
            .zip(yv.data())
            .map(|(&a, &b)| ((a - b) * (a - b) + e2).sqrt())
            .sum();
        let flops = 4 * xv.len() as u64;
        let out = Tensor::scalar(total / T::from_f64(xv.len() as f64));
        Ok(self.push(out, Op::Charbonnier { x, y, eps: T::from_f64(eps) }, flops))
    }

    /// Propagates adjoints from a single-element `loss` and clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let loss_shape = self.check(loss)?.shape().to_vec();
        if numel(&loss_shape) != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        let nodes = std::mem::take(&mut self.nodes);
        let bound = std::mem::take(&mut self.bound);
        self.bound = vec![None; bound.len()];
        self.flops = 0;
        self.first_nonfinite = None;

        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(loss_shape, vec![T::one()]));

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, dx) in adjoint(&nodes, node, &g)? {
                accumulate(&mut grads[input.0], dx);
            }
        }

        let params = bound
            .iter()
            .enumerate()
            .filter_map(|(id, v)| v.map(|v| (ParamId::new(id), v.0)))
            .collect();
        Ok(Gradients { leaves: grads, params })
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, dx: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, d) in acc.data_mut().iter_mut().zip(dx.data()) {
                *a = *a + *d;
            }
        }
        None => *slot = Some(dx),
    }
}

fn adjoint<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
    let val = |v: Var| &nodes[v.0].value;
    Ok(match &node.op {
        Op::Leaf | Op::Param => Vec::new(),
        Op::Binary { op, a, b } => {
            let (ga, gb) = ops::broadcast_binary_backward(*op, val(*a), val(*b), g);
            vec![(*a, ga), (*b, gb)]
        }
        Op::Affine { x, scale } => vec![(*x, g.map(|v| v * *scale))],
        Op::Act { x, kind } => vec![(*x, ops::activation_backward(*kind, val(*x), &node.value, g))],
        Op::Conv { x, w, b, geom } => {
            let (dx, dw, db) = ops::conv_backward(val(*x), val(*w), b.is_some(), *geom, g)?;
            let mut out = vec![(*x, dx), (*w, dw)];
            if let (Some(b), Some(db)) = (b, db) {
                out.push((*b, db));
            }
            out
        }
        Op::ReflectPad { x, pad } => vec![(*x, ops::reflect_pad_backward(val(*x).shape(), *pad, g))],
        Op::DirPool { x, axis, argmax } => vec![(
            *x,
            ops::directional_pool_backward(val(*x).shape(), *axis, argmax.as_deref(), g),
        )],
        Op::Reshape { x } => vec![(*x, g.clone().reshape(val(*x).shape())?)],
        Op::Concat { xs, axis } => {
            let shapes: Vec<Vec<usize>> = xs.iter().map(|v| val(*v).shape().to_vec()).collect();
            xs.iter().copied().zip(ops::concat_backward(&shapes, *axis, g)).collect()
        }
        Op::Narrow { x, axis, start } => vec![(*x, ops::narrow_backward(val(*x).shape(), *axis, *start, g))],
        Op::Shuffle { x, groups } => vec![(*x, ops::shuffle_backward(g, *groups))],
        Op::InstanceNorm { x, inv_std } => vec![(*x, ops::instance_norm_backward(&node.value, inv_std, g))],
        Op::Upsample { x, factor } => vec![(*x, ops::upsample_backward(val(*x).shape(), *factor, g))],
        Op::Softmax { x, axis } => vec![(*x, ops::softmax_backward(&node.value, *axis, g))],
        Op::Unfold { x, k } => vec![(*x, ops::unfold_backward(val(*x).shape(), *k, g))],
        Op::SumAxis { x, axis } => vec![(*x, ops::sum_axis_backward(val(*x).shape(), *axis, g))],
        Op::Mean { x } => {
            let input = val(*x);
            let share = g.data()[0] / T::from_f64(input.len() as f64);
            vec![(*x, Tensor::from_parts(input.shape().to_vec(), vec![share; input.len()]))]
        }
        Op::Charbonnier { x, y, eps } => {
            let (xv, yv) = (val(*x), val(*y));
            let scale = g.data()[0] / T::from_f64(xv.len() as f64);
            let e2 = *eps * *eps;
            let dx: Vec<T> = xv
                .data()
                .iter()
                .zip(yv.data())
                .map(|(&a, &b)| {
                    let d = a - b;
                    scale * d / (d * d + e2).sqrt()
                })
                .collect();
            let dy = dx.iter().map(|&v| -v).collect();
            vec![
                (*x, Tensor::from_parts(xv.shape().to_vec(), dx)),
                (*y, Tensor::from_parts(yv.shape().to_vec(), dy)),
            ]
        }
    })
}
