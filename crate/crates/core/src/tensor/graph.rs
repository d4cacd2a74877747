use std::rc::Rc;

use super::kernels::{self, AxisMap, ConvGeom, DepthwiseGeom, DynamicGeom};
use super::{ConvSpec, PadMode, Scalar, Shape, Tensor};
use crate::error::{config_err, dim_err, Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Box<ConvGeom>,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Box<DepthwiseGeom>,
    },
    Dynamic {
        kernels: Var,
        x: Var,
        geom: Box<DynamicGeom>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        offset: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    /// `gelu(first half of channels) * second half`, `half` = elements per half-item.
    GatedGelu {
        x: Var,
        half: usize,
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Reshape(Var),
    Gather {
        x: Var,
        index: Rc<Vec<usize>>,
    },
    Narrow {
        x: Var,
        start: usize,
    },
    Softmax(Var),
    NormalizeRows {
        x: Var,
        norms: Vec<T>,
        eps: T,
    },
    HeadScale {
        x: Var,
        log_alpha: Var,
        heads: usize,
    },
    L1Loss {
        pred: Var,
        target: Var,
    },
    Sum(Var),
    Mean(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Depthwise { .. } => "depthwise_conv2d",
            Op::Dynamic { .. } => "dynamic_local_aggregate",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::GatedGelu { .. } => "gated_gelu",
            Op::MatMul { .. } => "batched_matmul",
            Op::Reshape(_) => "reshape",
            Op::Gather { .. } => "gather",
            Op::Narrow { .. } => "narrow_channels",
            Op::Softmax(_) => "softmax",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::HeadScale { .. } => "head_scale",
            Op::L1Loss { .. } => "l1_loss",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } | Op::Depthwise { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Dynamic { kernels, x, .. } => vec![*kernels, *x],
            Op::LayerNorm { x, gain, offset, .. } => vec![*x, *gain, *offset],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::HeadScale { x, log_alpha, .. } => vec![*x, *log_alpha],
            Op::L1Loss { pred, target } => vec![*pred, *target],
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Gelu(x)
            | Op::GatedGelu { x, .. }
            | Op::Reshape(x)
            | Op::Gather { x, .. }
            | Op::Narrow { x, .. }
            | Op::Softmax(x)
            | Op::NormalizeRows { x, .. }
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    /// Accumulated gradient; populated for leaves only.
    grad: Option<Tensor<T>>,
    name: Option<String>,
}

/// Append-only record of executed operations.
///
/// Nodes are stored in execution order, so a reverse sweep over the node list
/// is a valid reverse topological order. Gradients of leaves accumulate across
/// [`Graph::backward`] calls until [`Graph::zero_grad`].
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return dim_err(format!("{op}: shape {a} vs {b}"));
    }
    Ok(())
}

/// Shapes of `a` and `b` agree, allowing `b` to broadcast along the batch axis.
fn batch_broadcast(op: &str, a: Shape, b: Shape) -> Result<()> {
    if a == b || (b.n == 1 && (a.c, a.h, a.w) == (b.c, b.h, b.w)) {
        return Ok(());
    }
    dim_err(format!("{op}: shape {a} does not broadcast with {b}"))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool, name: Option<String>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
            name,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; gradients are not tracked.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false, None)
    }

    /// Trainable leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true, None)
    }

    pub fn named_param(&mut self, name: &str, value: Tensor<T>) -> Var {
        self.leaf(value, true, Some(name.to_string()))
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

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// First recorded node holding a NaN or infinity, described by its op and
    /// the named parameters it consumes directly.
    pub fn first_non_finite(&self) -> Option<String> {
        let (i, node) = self
            .nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.all_finite())?;
        if let Some(name) = &node.name {
            return Some(format!("parameter {name} (node {i})"));
        }
        let params: Vec<&str> = node
            .op
            .inputs()
            .iter()
            .filter_map(|v| self.nodes[v.0].name.as_deref())
            .collect();
        Some(format!(
            "{} at node {i} (parameters: {})",
            node.op.name(),
            if params.is_empty() { "-".to_string() } else { params.join(", ") }
        ))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws.h % 2 == 0 || ws.w % 2 == 0 {
            return config_err(format!("conv2d kernel {}x{} is not odd", ws.h, ws.w));
        }
        if spec.stride == 0 || spec.groups == 0 {
            return config_err("conv2d stride and groups must be positive");
        }
        let g = spec.groups;
        if xs.c % g != 0 || ws.n % g != 0 || ws.c * g != xs.c {
            return dim_err(format!(
                "conv2d: input {xs} incompatible with weight {ws} at {g} groups"
            ));
        }
        if let Some(b) = b {
            if self.shape(b).numel() != ws.n {
                return dim_err(format!("conv2d: bias {} for {} outputs", self.shape(b), ws.n));
            }
        }
        if xs.h + 2 * spec.pad_h < ws.h || xs.w + 2 * spec.pad_w < ws.w {
            return dim_err(format!("conv2d: kernel {ws} larger than padded input {xs}"));
        }
        if spec.mode == PadMode::Reflect && (spec.pad_h >= xs.h || spec.pad_w >= xs.w) {
            return dim_err("conv2d: reflect padding must be smaller than the input");
        }
        let oh = (xs.h + 2 * spec.pad_h - ws.h) / spec.stride + 1;
        let ow = (xs.w + 2 * spec.pad_w - ws.w) / spec.stride + 1;
        let geom = ConvGeom {
            n: xs.n,
            cin: xs.c,
            h: xs.h,
            w: xs.w,
            cout: ws.n,
            kh: ws.h,
            kw: ws.w,
            oh,
            ow,
            groups: g,
            ymap: AxisMap::new(xs.h, oh, ws.h, spec.pad_h, spec.stride, spec.mode),
            xmap: AxisMap::new(xs.w, ow, ws.w, spec.pad_w, spec.stride, spec.mode),
            pointwise: ws.h == 1
                && ws.w == 1
                && spec.stride == 1
                && spec.pad_h == 0
                && spec.pad_w == 0,
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_vec(Shape::new(xs.n, ws.n, oh, ow), out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom: Box::new(geom),
            },
        ))
    }

    /// Per-channel filtering with a `[c, 1, kh, kw]` weight; spatial size is
    /// preserved.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, mode: PadMode) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws.h % 2 == 0 || ws.w % 2 == 0 {
            return config_err(format!("depthwise kernel {}x{} is not odd", ws.h, ws.w));
        }
        if ws.n != xs.c || ws.c != 1 {
            return dim_err(format!("depthwise: weight {ws} for input {xs}"));
        }
        if let Some(b) = b {
            if self.shape(b).numel() != xs.c {
                return dim_err(format!("depthwise: bias {} for {} channels", self.shape(b), xs.c));
            }
        }
        if mode == PadMode::Reflect && (ws.h / 2 >= xs.h || ws.w / 2 >= xs.w) {
            return dim_err("depthwise: reflect padding must be smaller than the input");
        }
        let geom = DepthwiseGeom::new(xs.n, xs.c, xs.h, xs.w, ws.h, ws.w, mode);
        let out = kernels::depthwise_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_vec(xs, out)?;
        Ok(self.push(
            value,
            Op::Depthwise {
                x,
                w,
                b,
                geom: Box::new(geom),
            },
        ))
    }

    /// Apply per-pixel `k x k` kernels `[n, groups*k*k, h, w]` to `x`, every
    /// channel of a contiguous group sharing its group's kernel.
    pub fn dynamic_local_aggregate(
        &mut self,
        kernels: Var,
        x: Var,
        groups: usize,
        k: usize,
        mode: PadMode,
    ) -> Result<Var> {
        let ks = self.shape(kernels);
        let xs = self.shape(x);
        if k % 2 == 0 {
            return config_err(format!("dynamic kernel size {k} is not odd"));
        }
        if groups == 0 || xs.c % groups != 0 {
            return dim_err(format!("dynamic aggregate: {} channels in {groups} groups", xs.c));
        }
        if ks != Shape::new(xs.n, groups * k * k, xs.h, xs.w) {
            return dim_err(format!(
                "dynamic aggregate: kernel field {ks} for input {xs}, {groups} groups of {k}x{k}"
            ));
        }
        if mode == PadMode::Reflect && (k / 2 >= xs.h || k / 2 >= xs.w) {
            return dim_err("dynamic aggregate: reflect padding must be smaller than the input");
        }
        let geom = DynamicGeom {
            n: xs.n,
            c: xs.c,
            h: xs.h,
            w: xs.w,
            groups,
            k,
            ymap: AxisMap::new(xs.h, xs.h, k, k / 2, 1, mode),
            xmap: AxisMap::new(xs.w, xs.w, k, k / 2, 1, mode),
        };
        let out = kernels::dynamic_forward(&geom, self.value(kernels).data(), self.value(x).data());
        let value = Tensor::from_vec(xs, out)?;
        Ok(self.push(
            value,
            Op::Dynamic {
                kernels,
                x,
                geom: Box::new(geom),
            },
        ))
    }

    /// Normalize over the channel axis independently at every `(n, y, x)`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 || !eps.is_finite() {
            return config_err(format!("layer_norm eps must be positive, got {eps}"));
        }
        let xs = self.shape(x);
        if self.shape(gain).numel() != xs.c || self.shape(offset).numel() != xs.c {
            return dim_err(format!(
                "layer_norm: affine {}/{} for {} channels",
                self.shape(gain),
                self.shape(offset),
                xs.c
            ));
        }
        let (out, mean, rstd) = kernels::layer_norm_forward(
            self.value(x).data(),
            xs.n,
            xs.c,
            xs.plane(),
            self.value(gain).data(),
            self.value(offset).data(),
            T::lit(eps),
        );
        let value = Tensor::from_vec(xs, out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                offset,
                mean,
                rstd,
            },
        ))
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let bv = self.value(b).data();
        let mut data = Vec::with_capacity(av.len());
        for chunk in av.data().chunks_exact(bv.len()) {
            data.extend(chunk.iter().zip(bv).map(|(&x, &y)| f(x, y)));
        }
        Tensor::from_vec(av.shape(), data).expect("shape preserved")
    }

    /// `a + b`; `b` may broadcast along the batch axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        batch_broadcast("add", self.shape(a), self.shape(b))?;
        let v = self.zip_broadcast(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Elementwise `a * b`; `b` may broadcast along the batch axis.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        batch_broadcast("mul", self.shape(a), self.shape(b))?;
        let v = self.zip_broadcast(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::lit(s);
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a))
    }

    /// tanh-approximated GELU with constants `sqrt(2/pi)` and `0.044715`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(kernels::gelu);
        self.push(v, Op::Gelu(a))
    }

    /// Split channels into halves `[a, b]` and return `gelu(a) * b`; equal
    /// to `narrow`, `gelu`, and `mul` composed, in one pass.
    pub fn gated_gelu(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.c % 2 != 0 {
            return dim_err(format!("gated_gelu needs an even channel count, got {s}"));
        }
        let half = s.c / 2 * s.plane();
        let mut out = Vec::with_capacity(s.numel() / 2);
        for item in self.value(x).data().chunks_exact(2 * half) {
            let (a, b) = item.split_at(half);
            out.extend(a.iter().zip(b).map(|(a, b)| kernels::gelu(*a) * *b));
        }
        let value = Tensor::from_vec(Shape::new(s.n, s.c / 2, s.h, s.w), out)?;
        Ok(self.push(value, Op::GatedGelu { x, half }))
    }

    /// Batched matrix product over `[b, 1, rows, cols]` operands.
    pub fn batched_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Batched product `op(a) * op(b)` where `ta`/`tb` transpose the stored
    /// matrices without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.c != 1 || sb.c != 1 || sa.n != sb.n {
            return dim_err(format!("batched_matmul expects [b,1,p,q] operands, got {sa} and {sb}"));
        }
        let (m, k) = if ta { (sa.w, sa.h) } else { (sa.h, sa.w) };
        let (k2, n) = if tb { (sb.w, sb.h) } else { (sb.h, sb.w) };
        if k != k2 {
            return dim_err(format!("batched_matmul inner dimensions {k} vs {k2}"));
        }
        let batch = sa.n;
        let mut out = vec![T::zero(); batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            kernels::gemm(
                m,
                k,
                n,
                &ad[i * m * k..],
                ta,
                &bd[i * k * n..],
                tb,
                &mut out[i * m * n..],
                false,
            );
        }
        let value = Tensor::from_vec(Shape::new(batch, 1, m, n), out)?;
        Ok(self.push(value, Op::MatMul { a, b, ta, tb, m, k, n }))
    }

    pub fn reshape(&mut self, a: Var, shape: Shape) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// `out[i] = a[index[i]]`. With a permutation index this expresses every
    /// lossless rearrangement (transposes, pixel shuffles, window partitions).
    pub fn gather(&mut self, a: Var, shape: Shape, index: Rc<Vec<usize>>) -> Result<Var> {
        let src = self.value(a).data();
        if index.len() != shape.numel() {
            return dim_err(format!("gather: {} indices for shape {shape}", index.len()));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= src.len()) {
            return dim_err(format!("gather: index {bad} out of {}", src.len()));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.push(value, Op::Gather { x: a, index }))
    }

    /// Swap the last two axes of a `[b, c, p, q]` tensor.
    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let mut index = Vec::with_capacity(s.numel());
        for plane in 0..s.n * s.c {
            for q in 0..s.w {
                for p in 0..s.h {
                    index.push(plane * s.plane() + p * s.w + q);
                }
            }
        }
        self.gather(a, Shape::new(s.n, s.c, s.w, s.h), Rc::new(index))
    }

    /// `[n, c*r*r, h, w] -> [n, c, h*r, w*r]`:
    /// `out[n, c, y*r+i, x*r+j] = in[n, c*r*r + i*r + j, y, x]`.
    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let s = self.shape(a);
        if r == 0 || s.c % (r * r) != 0 {
            return dim_err(format!("pixel_shuffle: {} channels not divisible by {r}^2", s.c));
        }
        let c = s.c / (r * r);
        let out = Shape::new(s.n, c, s.h * r, s.w * r);
        let mut index = Vec::with_capacity(out.numel());
        for n in 0..s.n {
            for ch in 0..c {
                for oy in 0..out.h {
                    for ox in 0..out.w {
                        let (y, i) = (oy / r, oy % r);
                        let (x, j) = (ox / r, ox % r);
                        index.push(s.offset(n, ch * r * r + i * r + j, y, x));
                    }
                }
            }
        }
        self.gather(a, out, Rc::new(index))
    }

    /// Inverse of [`Graph::pixel_shuffle`].
    pub fn pixel_unshuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let s = self.shape(a);
        if r == 0 || s.h % r != 0 || s.w % r != 0 {
            return dim_err(format!("pixel_unshuffle: {}x{} not divisible by {r}", s.h, s.w));
        }
        let out = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
        let mut index = Vec::with_capacity(out.numel());
        for n in 0..out.n {
            for oc in 0..out.c {
                let (ch, i, j) = (oc / (r * r), (oc % (r * r)) / r, oc % r);
                for y in 0..out.h {
                    for x in 0..out.w {
                        index.push(s.offset(n, ch, y * r + i, x * r + j));
                    }
                }
            }
        }
        self.gather(a, out, Rc::new(index))
    }

    /// Channels `[start, start+len)`.
    pub fn narrow_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.c || len == 0 {
            return dim_err(format!("narrow_channels {start}+{len} of {}", s.c));
        }
        let plane = s.plane();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(s.n * len * plane);
        for n in 0..s.n {
            data.extend_from_slice(&src[(n * s.c + start) * plane..][..len * plane]);
        }
        let value = Tensor::from_vec(Shape::new(s.n, len, s.h, s.w), data)?;
        Ok(self.push(value, Op::Narrow { x: a, start }))
    }

    /// Softmax along the last axis.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        let mut v = self.value(a).clone();
        for row in v.data_mut().chunks_exact_mut(s.w) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x = *x / total);
        }
        self.push(v, Op::Softmax(a))
    }

    /// Scale every row (last axis) to unit L2 norm; rows with norm below
    /// `eps` are divided by `eps` instead.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let s = self.shape(a);
        let eps = T::lit(eps);
        let mut v = self.value(a).clone();
        let mut norms = Vec::with_capacity(s.numel() / s.w.max(1));
        for row in v.data_mut().chunks_exact_mut(s.w) {
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            let d = norm.max(eps);
            row.iter_mut().for_each(|x| *x = *x / d);
            norms.push(norm);
        }
        self.push(v, Op::NormalizeRows { x: a, norms, eps })
    }

    /// Multiply batch item `b` of `x` by `exp(-log_alpha[b % heads])`, i.e.
    /// divide by a positive per-head temperature.
    pub fn head_scale(&mut self, x: Var, log_alpha: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x);
        if heads == 0 || s.n % heads != 0 || self.shape(log_alpha).numel() != heads {
            return dim_err(format!(
                "head_scale: batch {} with {} temperatures for {heads} heads",
                s.n,
                self.shape(log_alpha).numel()
            ));
        }
        let la = self.value(log_alpha).data().to_vec();
        let per = s.numel() / s.n;
        let mut v = self.value(x).clone();
        for (b, chunk) in v.data_mut().chunks_exact_mut(per).enumerate() {
            let f = (-la[b % heads]).exp();
            chunk.iter_mut().for_each(|z| *z *= f);
        }
        Ok(self.push(v, Op::HeadScale { x, log_alpha, heads }))
    }

    /// Mean absolute error, as a scalar.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape("l1_loss", self.shape(pred), self.shape(target))?;
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let total: f64 = p.iter().zip(t).map(|(a, b)| (*a - *b).abs().as_f64()).sum();
        let v = Tensor::scalar(T::lit(total / p.len() as f64));
        Ok(self.push(v, Op::L1Loss { pred, target }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / T::from_usize(t.len()).unwrap());
        self.push(v, Op::Mean(a))
    }

    /// Reverse-mode sweep from a scalar `loss`, accumulating into the
    /// gradient of every reachable leaf that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(format!("unknown variable {}", loss.0)));
        }
        if self.shape(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Some(bad) = node.op.inputs().iter().find(|v| v.0 >= i) {
                return Err(Error::Internal(format!(
                    "node {i} consumes later node {}; graph is not topologically ordered",
                    bad.0
                )));
            }
            if let Op::Leaf = node.op {
                let shape = node.value.shape();
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => node.grad = Some(Tensor::from_vec(shape, g)?),
                }
                continue;
            }
            self.backward_op(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backward_op(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let val = |v: Var| nodes[v.0].value.data();
        let mut with = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if nodes[v.0].requires_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (xd, wd) = (val(*x), val(*w));
                with(*w, &mut |dw| kernels::conv2d_backward(geom, xd, wd, g, None, Some(dw), None));
                with(*x, &mut |dx| kernels::conv2d_backward(geom, xd, wd, g, Some(dx), None, None));
                if let Some(b) = b {
                    with(*b, &mut |db| kernels::conv2d_backward(geom, xd, wd, g, None, None, Some(db)));
                }
            }
            Op::Depthwise { x, w, b, geom } => {
                let (xd, wd) = (val(*x), val(*w));
                with(*w, &mut |dw| kernels::depthwise_backward(geom, xd, wd, g, None, Some(dw), None));
                with(*x, &mut |dx| kernels::depthwise_backward(geom, xd, wd, g, Some(dx), None, None));
                if let Some(b) = b {
                    with(*b, &mut |db| {
                        kernels::depthwise_backward(geom, xd, wd, g, None, None, Some(db))
                    });
                }
            }
            Op::Dynamic { kernels: kf, x, geom } => {
                let (kd, xd) = (val(*kf), val(*x));
                with(*kf, &mut |dk| kernels::dynamic_backward(geom, kd, xd, g, Some(dk), None));
                with(*x, &mut |dx| kernels::dynamic_backward(geom, kd, xd, g, None, Some(dx)));
            }
            Op::LayerNorm { x, gain, offset, mean, rstd } => {
                let s = nodes[x.0].value.shape();
                let (xd, gd) = (val(*x), val(*gain));
                let run = |dx: Option<&mut [T]>, dg: Option<&mut [T]>, dof: Option<&mut [T]>| {
                    kernels::layer_norm_backward(xd, s.n, s.c, s.plane(), gd, mean, rstd, g, dx, dg, dof)
                };
                with(*x, &mut |dx| run(Some(dx), None, None));
                with(*gain, &mut |dg| run(None, Some(dg), None));
                with(*offset, &mut |dof| run(None, None, Some(dof)));
            }
            Op::Add(a, b) => {
                with(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, gv)| *d += *gv));
                with(*b, &mut |db| {
                    for gc in g.chunks_exact(db.len()) {
                        db.iter_mut().zip(gc).for_each(|(d, gv)| *d += *gv);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                let per = bd.len();
                with(*a, &mut |da| {
                    for (dc, gc) in da.chunks_exact_mut(per).zip(g.chunks_exact(per)) {
                        for ((d, gv), bv) in dc.iter_mut().zip(gc).zip(bd) {
                            *d += *gv * *bv;
                        }
                    }
                });
                with(*b, &mut |db| {
                    for (gc, ac) in g.chunks_exact(per).zip(ad.chunks_exact(per)) {
                        for ((d, gv), av) in db.iter_mut().zip(gc).zip(ac) {
                            *d += *gv * *av;
                        }
                    }
                });
            }
            Op::GatedGelu { x, half } => {
                let xd = val(*x);
                let half = *half;
                with(*x, &mut |dx| {
                    for ((dc, xc), gc) in dx
                        .chunks_exact_mut(2 * half)
                        .zip(xd.chunks_exact(2 * half))
                        .zip(g.chunks_exact(half))
                    {
                        let (da, db) = dc.split_at_mut(half);
                        let (a, b) = xc.split_at(half);
                        let it = da.iter_mut().zip(db.iter_mut()).zip(a.iter().zip(b)).zip(gc);
                        for (((da, db), (a, b)), gv) in it {
                            let (y, dy) = kernels::gelu_with_grad(*a);
                            *da += *gv * *b * dy;
                            *db += *gv * y;
                        }
                    }
                });
            }
            Op::Scale(a, s) => {
                with(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, gv)| *d += *gv * *s));
            }
            Op::Relu(a) => {
                let ad = val(*a);
                with(*a, &mut |da| {
                    for ((d, gv), x) in da.iter_mut().zip(g).zip(ad) {
                        if *x > T::zero() {
                            *d += *gv;
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let ad = val(*a);
                with(*a, &mut |da| {
                    for ((d, gv), x) in da.iter_mut().zip(g).zip(ad) {
                        *d += *gv * kernels::gelu_grad(*x);
                    }
                });
            }
            Op::MatMul { a, b, ta, tb, m, k, n } => {
                let (ad, bd) = (val(*a), val(*b));
                let (m, k, n, ta, tb) = (*m, *k, *n, *ta, *tb);
                let batch = ad.len() / (m * k);
                with(*a, &mut |da| {
                    for bi in 0..batch {
                        let gc = &g[bi * m * n..];
                        let bb = &bd[bi * k * n..];
                        let dst = &mut da[bi * m * k..];
                        if ta {
                            kernels::gemm(k, n, m, bb, tb, gc, true, dst, true);
                        } else {
                            kernels::gemm(m, n, k, gc, false, bb, !tb, dst, true);
                        }
                    }
                });
                with(*b, &mut |db| {
                    for bi in 0..batch {
                        let gc = &g[bi * m * n..];
                        let aa = &ad[bi * m * k..];
                        let dst = &mut db[bi * k * n..];
                        if tb {
                            kernels::gemm(n, m, k, gc, true, aa, ta, dst, true);
                        } else {
                            kernels::gemm(k, m, n, aa, !ta, gc, false, dst, true);
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                with(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, gv)| *d += *gv));
            }
            Op::Gather { x, index } => {
                with(*x, &mut |dx| {
                    for (gv, &j) in g.iter().zip(index.iter()) {
                        dx[j] += *gv;
                    }
                });
            }
            Op::Narrow { x, start } => {
                let s = nodes[x.0].value.shape();
                let len = node.value.shape().c;
                let plane = s.plane();
                with(*x, &mut |dx| {
                    for n in 0..s.n {
                        let dst = &mut dx[(n * s.c + start) * plane..][..len * plane];
                        let src = &g[n * len * plane..][..len * plane];
                        dst.iter_mut().zip(src).for_each(|(d, gv)| *d += *gv);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let w = node.value.shape().w;
                with(*a, &mut |da| {
                    for ((drow, yrow), grow) in da
                        .chunks_exact_mut(w)
                        .zip(y.chunks_exact(w))
                        .zip(g.chunks_exact(w))
                    {
                        let dot: T = yrow.iter().zip(grow).map(|(a, b)| *a * *b).sum();
                        for ((d, yv), gv) in drow.iter_mut().zip(yrow).zip(grow) {
                            *d += *yv * (*gv - dot);
                        }
                    }
                });
            }
            Op::NormalizeRows { x, norms, eps } => {
                let y = node.value.data();
                let w = node.value.shape().w;
                with(*x, &mut |dx| {
                    for (((drow, yrow), grow), norm) in dx
                        .chunks_exact_mut(w)
                        .zip(y.chunks_exact(w))
                        .zip(g.chunks_exact(w))
                        .zip(norms)
                    {
                        if *norm > *eps {
                            let dot: T = yrow.iter().zip(grow).map(|(a, b)| *a * *b).sum();
                            for ((d, yv), gv) in drow.iter_mut().zip(yrow).zip(grow) {
                                *d += (*gv - *yv * dot) / *norm;
                            }
                        } else {
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += *gv / *eps;
                            }
                        }
                    }
                });
            }
            Op::HeadScale { x, log_alpha, heads } => {
                let la = val(*log_alpha);
                let y = node.value.data();
                let per = y.len() / node.value.shape().n;
                with(*x, &mut |dx| {
                    for (b, (dchunk, gchunk)) in dx.chunks_exact_mut(per).zip(g.chunks_exact(per)).enumerate() {
                        let f = (-la[b % heads]).exp();
                        dchunk.iter_mut().zip(gchunk).for_each(|(d, gv)| *d += *gv * f);
                    }
                });
                with(*log_alpha, &mut |dla| {
                    for (b, (ychunk, gchunk)) in y.chunks_exact(per).zip(g.chunks_exact(per)).enumerate() {
                        let s: T = ychunk.iter().zip(gchunk).map(|(a, b)| *a * *b).sum();
                        dla[b % heads] -= s;
                    }
                });
            }
            Op::L1Loss { pred, target } => {
                let (p, t) = (val(*pred), val(*target));
                let scale = g[0] / T::from_usize(p.len()).unwrap();
                let sign = |d: T| {
                    if d > T::zero() {
                        T::one()
                    } else if d < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                };
                with(*pred, &mut |dp| {
                    for ((d, a), b) in dp.iter_mut().zip(p).zip(t) {
                        *d += sign(*a - *b) * scale;
                    }
                });
                with(*target, &mut |dt| {
                    for ((d, a), b) in dt.iter_mut().zip(p).zip(t) {
                        *d -= sign(*a - *b) * scale;
                    }
                });
            }
            Op::Sum(a) => {
                with(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Mean(a) => {
                let len = T::from_usize(nodes[a.0].value.len()).unwrap();
                with(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0] / len));
            }
        }
    }
}
