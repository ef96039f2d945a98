//! Reverse-mode automatic differentiation over a dynamically recorded tape.
//!
//! Every operation appends a node holding its output value and the
//! information its backward rule needs. Nodes only reference earlier nodes,
//! so the tape is always in topological order and a single reverse sweep
//! computes all adjoints. Gradients land in the `grad` buffer of leaf
//! tensors created with `requires_grad`; repeated `backward` calls add up
//! until [`Tape::zero_grad`].

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::nn::kernels::{self, ConvDims};
use crate::nn::ConvGeometry;
use crate::tensor::{Real, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// Leaky relu; the derivative at exactly zero is `slope`.
    LeakyRelu { slope: f64 },
    Sigmoid,
    Tanh,
}

impl Activation {
    fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => Err(
                Error::InvalidArgument(format!("leaky relu slope must be in (0, 1), got {slope}")),
            ),
            _ => Ok(()),
        }
    }

    #[inline]
    fn apply<T: Real>(&self, x: T) -> T {
        match *self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu { slope } => {
                if x >= T::zero() {
                    x
                } else {
                    x * T::of(slope)
                }
            }
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            // Rounding would return exactly ±1 for |x| beyond ~9 (f32); the
            // nearest values inside the open interval keep 1 - y² positive.
            Activation::Tanh => {
                let lim = T::one() - T::epsilon() / T::of(2.0);
                x.tanh().max(-lim).min(lim)
            }
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    fn derivative<T: Real>(&self, x: T, y: T) -> T {
        match *self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::of(slope)
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    /// Elementwise maximum; ties route the gradient to the left operand.
    Max,
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Max => "max",
        }
    }
}

/// Backward rule for an operation defined outside this module.
pub trait CustomBackward<T>: Send {
    /// Returns one gradient buffer per input, each the size of that input.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &[T]) -> Vec<Vec<T>>;
}

enum Op<T> {
    Leaf,
    Binary(BinaryOp, Var, Var),
    Scale(Var, T),
    Offset(Var),
    Act(Var, Activation),
    Ln(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    GlobalAvgPool(Var),
    ConcatChannels(Var, Var),
    Conv {
        x: Var,
        weight: Var,
        bias: Var,
        dims: ConvDims,
    },
    Deconv {
        x: Var,
        weight: Var,
        bias: Var,
        dims: ConvDims,
    },
    Custom(Vec<Var>, Box<dyn CustomBackward<T>>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recorded computation graph. Confined to one thread.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

fn accumulate<T: Real>(adjoints: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut adjoints[v.0] {
        Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its `requires_grad` flag decides whether `backward`
    /// fills its gradient buffer.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Records a leaf that receives a gradient.
    pub fn variable(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Moves the value (with its gradient buffer) out of a leaf node,
    /// leaving an empty tensor behind.
    pub fn take_leaf(&mut self, v: Var) -> Tensor<T> {
        let node = &mut self.nodes[v.0];
        let shape = node.value.shape();
        std::mem::replace(&mut node.value, Tensor::zeros(Shape::new(0, shape.c(), 0, 0)))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(sa)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(op.name(), a, b)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = match op {
            BinaryOp::Add => da.iter().zip(db).map(|(&x, &y)| x + y).collect(),
            BinaryOp::Sub => da.iter().zip(db).map(|(&x, &y)| x - y).collect(),
            BinaryOp::Mul => da.iter().zip(db).map(|(&x, &y)| x * y).collect(),
            BinaryOp::Max => da
                .iter()
                .zip(db)
                .map(|(&x, &y)| if x >= y { x } else { y })
                .collect(),
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_vec(shape, data)?, Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Max, a, b)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        let value = self.value(x).map(|v| v * c);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        let value = self.value(x).map(|v| v + c);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Offset(x), rg)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        kind.validate()?;
        let input = self.value(x);
        if !input.is_finite() {
            return Err(Error::NonFinite("activation"));
        }
        let value = input.map(|v| kind.apply(v));
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Act(x, kind), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn lrelu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.activation(x, Activation::LeakyRelu { slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    /// Natural logarithm; inputs must be strictly positive.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let input = self.value(x);
        if input.data().iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "ln requires strictly positive finite inputs".into(),
            ));
        }
        let value = input.map(|v| v.ln());
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Ln(x), rg))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let value = self.value(x).map(|v| v.max(lo).min(hi));
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Clamp(x, lo, hi), rg)
    }

    /// Sum of all elements as a 1x1x1x1 scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean of all elements as a 1x1x1x1 scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.sum() / T::of(t.numel().max(1) as f64);
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    pub(crate) fn push_global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape();
        let plane = shape.plane();
        if plane == 0 {
            return Err(Error::InvalidShape {
                op: "global_avg_pool",
                msg: format!("empty spatial extent in {shape}"),
            });
        }
        let inv = T::of(1.0 / plane as f64);
        let data = t
            .data()
            .chunks(plane)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::from_vec(Shape::new(shape.n(), shape.c(), 1, 1), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    /// Concatenates two tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if (sa.n(), sa.h(), sa.w()) != (sb.n(), sb.h(), sb.w()) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: sa,
                right: sb,
            });
        }
        let (ca, cb) = (sa.c() * sa.plane(), sb.c() * sb.plane());
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(da.len() + db.len());
        for n in 0..sa.n() {
            data.extend_from_slice(&da[n * ca..(n + 1) * ca]);
            data.extend_from_slice(&db[n * cb..(n + 1) * cb]);
        }
        let out = Tensor::from_vec(Shape::new(sa.n(), sa.c() + sb.c(), sa.h(), sa.w()), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::ConcatChannels(a, b), rg))
    }

    pub(crate) fn push_conv(
        &mut self,
        x: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
    ) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        let [out_c, in_c, kh, kw] = ws.0;
        if xs.c() != in_c {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("input has {} channels but weight {ws} expects {in_c}", xs.c()),
            });
        }
        if kh != geometry.kernel || kw != geometry.kernel {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("weight {ws} does not match kernel size {}", geometry.kernel),
            });
        }
        check_bias("conv2d", bs, out_c)?;
        let (out_h, out_w) = geometry.conv_output(xs.h(), xs.w())?;
        let dims = ConvDims {
            batch: xs.n(),
            in_c,
            in_h: xs.h(),
            in_w: xs.w(),
            out_c,
            out_h,
            out_w,
            kernel: geometry.kernel,
            stride: geometry.stride,
            padding: geometry.padding,
        };
        let mut out = vec![T::zero(); xs.n() * out_c * out_h * out_w];
        kernels::correlate(self.value(x).data(), self.value(weight).data(), &mut out, &dims);
        kernels::add_bias(&mut out, self.value(bias).data(), xs.n(), out_h * out_w);
        let value = Tensor::from_vec(Shape::new(xs.n(), out_c, out_h, out_w), out)?;
        let rg = self.any_grad(&[x, weight, bias]);
        Ok(self.push(
            value,
            Op::Conv {
                x,
                weight,
                bias,
                dims,
            },
            rg,
        ))
    }

    pub(crate) fn push_deconv(
        &mut self,
        x: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
    ) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        let [in_c, out_c, kh, kw] = ws.0;
        if xs.c() != in_c {
            return Err(Error::InvalidShape {
                op: "deconv2d",
                msg: format!("input has {} channels but weight {ws} expects {in_c}", xs.c()),
            });
        }
        if kh != geometry.kernel || kw != geometry.kernel {
            return Err(Error::InvalidShape {
                op: "deconv2d",
                msg: format!("weight {ws} does not match kernel size {}", geometry.kernel),
            });
        }
        check_bias("deconv2d", bs, out_c)?;
        let (out_h, out_w) = geometry.deconv_output(xs.h(), xs.w())?;
        // Correlation geometry seen from the conv side: deconv output is the
        // high-resolution "in" side, deconv input the "out" side.
        let dims = ConvDims {
            batch: xs.n(),
            in_c: out_c,
            in_h: out_h,
            in_w: out_w,
            out_c: in_c,
            out_h: xs.h(),
            out_w: xs.w(),
            kernel: geometry.kernel,
            stride: geometry.stride,
            padding: geometry.padding,
        };
        let mut out = vec![T::zero(); xs.n() * out_c * out_h * out_w];
        kernels::correlate_adjoint(self.value(x).data(), self.value(weight).data(), &mut out, &dims);
        kernels::add_bias(&mut out, self.value(bias).data(), xs.n(), out_h * out_w);
        let value = Tensor::from_vec(Shape::new(xs.n(), out_c, out_h, out_w), out)?;
        let rg = self.any_grad(&[x, weight, bias]);
        Ok(self.push(
            value,
            Op::Deconv {
                x,
                weight,
                bias,
                dims,
            },
            rg,
        ))
    }

    /// Records an operation computed outside the tape together with its
    /// backward rule.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor<T>,
        rule: Box<dyn CustomBackward<T>>,
    ) -> Var {
        let rg = self.any_grad(inputs);
        self.push(output, Op::Custom(inputs.to_vec(), rule), rg)
    }

    /// Hash of the branch taken by every piecewise operation (relu, leaky
    /// relu, max, clamp). Two forward passes with equal signatures lie on the
    /// same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Act(x, Activation::Relu | Activation::LeakyRelu { .. }) => {
                    for &v in self.value(*x).data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::Binary(BinaryOp::Max, a, b) => {
                    for (&x, &y) in self.value(*a).data().iter().zip(self.value(*b).data()) {
                        (x >= y).hash(&mut h);
                    }
                }
                Op::Clamp(x, lo, hi) => {
                    for &v in self.value(*x).data() {
                        (v < *lo, v > *hi).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Propagates d`loss`/d(node) back to every reachable leaf with
    /// `requires_grad`, adding into its gradient buffer.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if !shape.is_scalar() {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut adjoints: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        adjoints[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads: Vec<(usize, Vec<T>)> = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = adjoints[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let wants = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::Binary(op, a, b) => {
                    let (da, db) = (self.value(*a).data(), self.value(*b).data());
                    match op {
                        BinaryOp::Add => {
                            if wants(b) {
                                accumulate(&mut adjoints, *b, g.clone());
                            }
                            if wants(a) {
                                accumulate(&mut adjoints, *a, g);
                            }
                        }
                        BinaryOp::Sub => {
                            if wants(b) {
                                accumulate(&mut adjoints, *b, g.iter().map(|&v| -v).collect());
                            }
                            if wants(a) {
                                accumulate(&mut adjoints, *a, g);
                            }
                        }
                        BinaryOp::Mul => {
                            if wants(a) {
                                let ga = g.iter().zip(db).map(|(&g, &y)| g * y).collect();
                                accumulate(&mut adjoints, *a, ga);
                            }
                            if wants(b) {
                                let gb = g.iter().zip(da).map(|(&g, &x)| g * x).collect();
                                accumulate(&mut adjoints, *b, gb);
                            }
                        }
                        BinaryOp::Max => {
                            if wants(a) {
                                let ga = g
                                    .iter()
                                    .zip(da.iter().zip(db))
                                    .map(|(&g, (&x, &y))| if x >= y { g } else { T::zero() })
                                    .collect();
                                accumulate(&mut adjoints, *a, ga);
                            }
                            if wants(b) {
                                let gb = g
                                    .iter()
                                    .zip(da.iter().zip(db))
                                    .map(|(&g, (&x, &y))| if x >= y { T::zero() } else { g })
                                    .collect();
                                accumulate(&mut adjoints, *b, gb);
                            }
                        }
                    }
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut adjoints, *x, g.iter().map(|&v| v * c).collect());
                }
                Op::Offset(x) => accumulate(&mut adjoints, *x, g),
                Op::Act(x, kind) => {
                    let (xs, ys) = (self.value(*x).data(), node.value.data());
                    let gx = g
                        .iter()
                        .zip(xs.iter().zip(ys))
                        .map(|(&g, (&x, &y))| g * kind.derivative(x, y))
                        .collect();
                    accumulate(&mut adjoints, *x, gx);
                }
                Op::Ln(x) => {
                    let xs = self.value(*x).data();
                    let gx = g.iter().zip(xs).map(|(&g, &x)| g / x).collect();
                    accumulate(&mut adjoints, *x, gx);
                }
                Op::Clamp(x, lo, hi) => {
                    let xs = self.value(*x).data();
                    let gx = g
                        .iter()
                        .zip(xs)
                        .map(|(&g, &x)| if x >= *lo && x <= *hi { g } else { T::zero() })
                        .collect();
                    accumulate(&mut adjoints, *x, gx);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).numel();
                    accumulate(&mut adjoints, *x, vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).numel();
                    let v = g[0] / T::of(n.max(1) as f64);
                    accumulate(&mut adjoints, *x, vec![v; n]);
                }
                Op::GlobalAvgPool(x) => {
                    let shape = self.shape(*x);
                    let plane = shape.plane();
                    let inv = T::of(1.0 / plane as f64);
                    let mut gx = Vec::with_capacity(shape.numel());
                    for &gv in &g {
                        gx.extend(std::iter::repeat_n(gv * inv, plane));
                    }
                    accumulate(&mut adjoints, *x, gx);
                }
                Op::ConcatChannels(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (ca, cb) = (sa.c() * sa.plane(), sb.c() * sb.plane());
                    let mut ga = Vec::with_capacity(sa.numel());
                    let mut gb = Vec::with_capacity(sb.numel());
                    for n in 0..sa.n() {
                        let chunk = &g[n * (ca + cb)..(n + 1) * (ca + cb)];
                        ga.extend_from_slice(&chunk[..ca]);
                        gb.extend_from_slice(&chunk[ca..]);
                    }
                    if wants(a) {
                        accumulate(&mut adjoints, *a, ga);
                    }
                    if wants(b) {
                        accumulate(&mut adjoints, *b, gb);
                    }
                }
                Op::Conv {
                    x,
                    weight,
                    bias,
                    dims,
                } => {
                    let plane = dims.out_h * dims.out_w;
                    if wants(bias) {
                        let mut gb = vec![T::zero(); dims.out_c];
                        kernels::bias_grad(&g, &mut gb, dims.batch, plane);
                        accumulate(&mut adjoints, *bias, gb);
                    }
                    if wants(weight) {
                        let mut gw = vec![T::zero(); self.value(*weight).numel()];
                        kernels::correlate_weight_grad(self.value(*x).data(), &g, &mut gw, dims);
                        accumulate(&mut adjoints, *weight, gw);
                    }
                    if wants(x) {
                        let mut gx = vec![T::zero(); self.value(*x).numel()];
                        kernels::correlate_adjoint(&g, self.value(*weight).data(), &mut gx, dims);
                        accumulate(&mut adjoints, *x, gx);
                    }
                }
                Op::Deconv {
                    x,
                    weight,
                    bias,
                    dims,
                } => {
                    let plane = dims.in_h * dims.in_w;
                    if wants(bias) {
                        let mut gb = vec![T::zero(); dims.in_c];
                        kernels::bias_grad(&g, &mut gb, dims.batch, plane);
                        accumulate(&mut adjoints, *bias, gb);
                    }
                    if wants(weight) {
                        let mut gw = vec![T::zero(); self.value(*weight).numel()];
                        kernels::correlate_weight_grad(&g, self.value(*x).data(), &mut gw, dims);
                        accumulate(&mut adjoints, *weight, gw);
                    }
                    if wants(x) {
                        let mut gx = vec![T::zero(); self.value(*x).numel()];
                        kernels::correlate(&g, self.value(*weight).data(), &mut gx, dims);
                        accumulate(&mut adjoints, *x, gx);
                    }
                }
                Op::Custom(inputs, rule) => {
                    let values: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                    let grads = rule.backward(&values, &node.value, &g);
                    if grads.len() != inputs.len() {
                        return Err(Error::InvalidArgument(format!(
                            "custom backward returned {} gradients for {} inputs",
                            grads.len(),
                            inputs.len()
                        )));
                    }
                    for (v, gv) in inputs.iter().zip(grads) {
                        if gv.len() != self.value(*v).numel() {
                            return Err(Error::DataLength {
                                shape: self.shape(*v),
                                len: gv.len(),
                            });
                        }
                        if wants(v) {
                            accumulate(&mut adjoints, *v, gv);
                        }
                    }
                }
            }
        }

        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g)?;
        }
        Ok(())
    }
}

fn check_bias(op: &'static str, bias: Shape, channels: usize) -> Result<()> {
    if bias.numel() != channels {
        return Err(Error::InvalidShape {
            op,
            msg: format!("bias {bias} does not hold {channels} channels"),
        });
    }
    Ok(())
}
