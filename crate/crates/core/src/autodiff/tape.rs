use crate::error::{invalid, Error, Result};

use super::tensor::{numel, Element, Parameter, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    BatchMatMul {
        a: NodeId,
        b: NodeId,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        a: NodeId,
        c: T,
    },
    Permute {
        a: NodeId,
        axes: Vec<usize>,
    },
    Reshape {
        a: NodeId,
    },
    Slice {
        a: NodeId,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Sum {
        a: NodeId,
    },
    Mean {
        a: NodeId,
    },
    MeanAxis {
        a: NodeId,
        axis: usize,
    },
    Softmax {
        a: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu {
        a: NodeId,
    },
    Ln {
        a: NodeId,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records primitive operations for reverse-mode differentiation.
///
/// Every op checks operand shapes and the finiteness of its result.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    corrupt_backward: bool,
}

/// Gradients of a backward sweep, indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the root with respect to `id`; zeros when `id` does not
    /// reach the root.
    pub fn wrt(&self, id: NodeId) -> Tensor<T> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn reached(&self, id: NodeId) -> bool {
        self.grads[id.0].is_some()
    }
}

// Kernels. All accumulate into `out`.

/// out[m×n] += a[m×k] · b[k×n]
fn gemm_nn<T: Element>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// out[m×k] += g[m×n] · b[k×n]ᵀ
fn gemm_nt<T: Element>(m: usize, n: usize, k: usize, g: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: T = grow.iter().zip(brow).map(|(x, y)| *x * *y).sum();
            out[i * k + p] += dot;
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · g[m×n]
fn gemm_tn<T: Element>(m: usize, k: usize, n: usize, a: &[T], g: &[T], out: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data<T: Copy>(shape: &[usize], data: &[T], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn gelu_grad<T: Element>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            corrupt_backward: false,
        }
    }

    /// A tape whose `linear` backward (input and weight gradients) is deliberately wrong, for exercising
    /// gradient-check failure paths.
    #[doc(hidden)]
    pub fn with_corrupted_backward() -> Self {
        Self {
            nodes: Vec::new(),
            corrupt_backward: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { value, op: Op::Leaf });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, p: &Parameter<T>) -> NodeId {
        self.leaf(p.value.clone())
    }

    /// `(m, k) · (k, n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, "matmul")
    }

    /// `(B, m, k) · (B, k, n)`.
    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch("batch_matmul", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bs * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm_nn(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        self.push(
            Tensor::new(vec![bs, m, n], out)?,
            Op::BatchMatMul { a, b },
            "batch_matmul",
        )
    }

    /// `x · W + b` over the last axis of `x`; `W` is `(in, out)`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sw.len() != 2 || sx.last() != Some(&sw[0]) {
            return Err(mismatch("linear", sx, sw));
        }
        if sb != [sw[1]] {
            return Err(mismatch("linear bias", sb, &sw[1..]));
        }
        let (i_dim, o_dim) = (sw[0], sw[1]);
        let rows = numel(sx) / i_dim;
        let mut out_shape = sx.to_vec();
        *out_shape.last_mut().expect("non-scalar") = o_dim;
        let bias = self.value(b).data();
        let mut out: Vec<T> = (0..rows).flat_map(|_| bias.iter().copied()).collect();
        gemm_nn(rows, i_dim, o_dim, self.value(x).data(), self.value(w).data(), &mut out);
        self.push(Tensor::new(out_shape, out)?, Op::Linear { x, w, b }, "linear")
    }

    fn elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = va.shape().to_vec();
        self.push(Tensor::new(shape, data)?, op, name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale { a, c }, "scale")
    }

    pub fn permute(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true))
        {
            return Err(mismatch("permute", &shape, axes));
        }
        let (out_shape, data) = permute_data(&shape, self.value(a).data(), axes);
        self.push(
            Tensor::new(out_shape, data)?,
            Op::Permute { a, axes: axes.to_vec() },
            "permute",
        )
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        if self.shape(a).len() != 2 {
            return Err(mismatch("transpose", self.shape(a), &[2]));
        }
        self.permute(a, &[1, 0])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).clone().reshaped(shape)?;
        self.push(v, Op::Reshape { a }, "reshape")
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(invalid(format!(
                "slice {start}..{end} on axis {axis} of shape {shape:?}"
            )));
        }
        let (outer, len, inner) = split_at_axis(&shape, axis);
        let width = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = width;
        self.push(Tensor::new(out_shape, data)?, Op::Slice { a, axis, start }, "slice")
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| invalid("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(invalid(format!("concat axis {axis} on shape {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let w = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        self.push(
            Tensor::new(out_shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            "concat",
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, "sum")
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let m = v.sum() / T::of(v.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean { a }, "mean")
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(invalid(format!("mean axis {axis} on shape {shape:?}")));
        }
        let (outer, len, inner) = split_at_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let inv = T::of(1.0 / len as f64);
        data.iter_mut().for_each(|d| *d *= inv);
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.push(Tensor::new(out_shape, data)?, Op::MeanAxis { a, axis }, "mean_axis")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let d = *v.shape().last().ok_or_else(|| invalid("softmax of a scalar"))?;
        let mut data = v.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x = *x / z;
            }
        }
        let shape = v.shape().to_vec();
        self.push(Tensor::new(shape, data)?, Op::Softmax { a }, "softmax")
    }

    /// Normalises the last axis to zero mean and unit variance (epsilon inside
    /// the square root), then applies `gamma · x̂ + beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let v = self.value(x);
        let d = *v.shape().last().ok_or_else(|| invalid("layer_norm of a scalar"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(mismatch("layer_norm affine", self.shape(gamma), &[d]));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let n = T::of(d as f64);
        let eps = T::of(eps);
        let mut xhat = Vec::with_capacity(v.numel());
        let mut inv_std = Vec::with_capacity(v.numel() / d);
        let mut out = Vec::with_capacity(v.numel());
        for row in v.data().chunks_exact(d) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&r| (r - mean) * (r - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &r) in row.iter().enumerate() {
                let h = (r - mean) * inv;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let shape = v.shape().to_vec();
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            "layer_norm",
        )
    }

    /// Exact GELU, `x · Φ(x)` with the erf-based normal CDF.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let half = T::of(0.5);
        let r = T::of(std::f64::consts::FRAC_1_SQRT_2);
        let v = self.value(a).map(|x| half * x * (T::one() + (x * r).erf()));
        self.push(v, Op::Gelu { a }, "gelu")
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.ln());
        self.push(v, Op::Ln { a }, "ln")
    }

    /// Gradients of a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        let v = self.value(root);
        if v.numel() != 1 {
            return Err(invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                v.shape()
            )));
        }
        self.backward_with_seed(root, Tensor::ones(v.shape()))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `root`).
    pub fn backward_with_seed(&self, root: NodeId, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.shape(root) {
            return Err(mismatch("backward seed", seed.shape(), self.shape(root)));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let mut acc = |id: NodeId, t: Tensor<T>| match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let mut da = vec![T::zero(); m * k];
                gemm_nt(m, n, k, gd, vb.data(), &mut da);
                let mut db = vec![T::zero(); k * n];
                gemm_tn(m, k, n, va.data(), gd, &mut db);
                acc(*a, Tensor::new(vec![m, k], da).expect("shape"));
                acc(*b, Tensor::new(vec![k, n], db).expect("shape"));
            }
            Op::BatchMatMul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (bs, m, k, n) = (va.shape()[0], va.shape()[1], va.shape()[2], vb.shape()[2]);
                let mut da = vec![T::zero(); bs * m * k];
                let mut db = vec![T::zero(); bs * k * n];
                for s in 0..bs {
                    let gs = &gd[s * m * n..(s + 1) * m * n];
                    gemm_nt(
                        m,
                        n,
                        k,
                        gs,
                        &vb.data()[s * k * n..(s + 1) * k * n],
                        &mut da[s * m * k..(s + 1) * m * k],
                    );
                    gemm_tn(
                        m,
                        k,
                        n,
                        &va.data()[s * m * k..(s + 1) * m * k],
                        gs,
                        &mut db[s * k * n..(s + 1) * k * n],
                    );
                }
                acc(*a, Tensor::new(vec![bs, m, k], da).expect("shape"));
                acc(*b, Tensor::new(vec![bs, k, n], db).expect("shape"));
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (i_dim, o_dim) = (vw.shape()[0], vw.shape()[1]);
                let rows = vx.numel() / i_dim;
                let mut dx = vec![T::zero(); rows * i_dim];
                gemm_nt(rows, o_dim, i_dim, gd, vw.data(), &mut dx);
                let mut dw = vec![T::zero(); i_dim * o_dim];
                gemm_tn(rows, i_dim, o_dim, vx.data(), gd, &mut dw);
                if self.corrupt_backward {
                    dx.iter_mut().chain(dw.iter_mut()).for_each(|v| *v *= T::of(1.05));
                }
                let mut db = vec![T::zero(); o_dim];
                for row in gd.chunks_exact(o_dim) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                acc(*x, Tensor::new(vx.shape().to_vec(), dx).expect("shape"));
                acc(*w, Tensor::new(vec![i_dim, o_dim], dw).expect("shape"));
                acc(*b, Tensor::new(vec![o_dim], db).expect("shape"));
            }
            Op::Add { a, b } => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub { a, b } => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = gd.iter().zip(vb.data()).map(|(x, y)| *x * *y).collect();
                let gb = gd.iter().zip(va.data()).map(|(x, y)| *x * *y).collect();
                acc(*a, Tensor::new(g.shape().to_vec(), ga).expect("shape"));
                acc(*b, Tensor::new(g.shape().to_vec(), gb).expect("shape"));
            }
            Op::Scale { a, c } => acc(*a, g.map(|v| v * *c)),
            Op::Permute { a, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let (shape, data) = permute_data(g.shape(), gd, &inverse);
                acc(*a, Tensor::new(shape, data).expect("shape"));
            }
            Op::Reshape { a } => {
                let shape = self.shape(*a);
                acc(*a, g.clone().reshaped(shape).expect("shape"));
            }
            Op::Slice { a, axis, start } => {
                let shape = self.shape(*a).to_vec();
                let (outer, len, inner) = split_at_axis(&shape, *axis);
                let width = g.shape()[*axis];
                let mut data = vec![T::zero(); numel(&shape)];
                for o in 0..outer {
                    let dst = o * len * inner + start * inner;
                    data[dst..dst + width * inner].copy_from_slice(&gd[o * width * inner..(o + 1) * width * inner]);
                }
                acc(*a, Tensor::new(shape, data).expect("shape"));
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_at_axis(g.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let shape = self.shape(*p).to_vec();
                    let w = shape[*axis];
                    let mut data = Vec::with_capacity(numel(&shape));
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&gd[base..base + w * inner]);
                    }
                    offset += w;
                    acc(*p, Tensor::new(shape, data).expect("shape"));
                }
            }
            Op::Sum { a } => {
                let shape = self.shape(*a);
                acc(*a, Tensor::full(shape, gd[0]));
            }
            Op::Mean { a } => {
                let shape = self.shape(*a);
                acc(*a, Tensor::full(shape, gd[0] / T::of(numel(shape) as f64)));
            }
            Op::MeanAxis { a, axis } => {
                let shape = self.shape(*a).to_vec();
                let (outer, len, inner) = split_at_axis(&shape, *axis);
                let inv = T::of(1.0 / len as f64);
                let mut data = Vec::with_capacity(numel(&shape));
                for o in 0..outer {
                    let row = &gd[o * inner..(o + 1) * inner];
                    for _ in 0..len {
                        data.extend(row.iter().map(|&v| v * inv));
                    }
                }
                acc(*a, Tensor::new(shape, data).expect("shape"));
            }
            Op::Softmax { a } => {
                let y = node.value.data();
                let d = *g.shape().last().expect("non-scalar");
                let mut data = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks_exact(d).zip(gd.chunks_exact(d)) {
                    let dot: T = yr.iter().zip(gr).map(|(p, q)| *p * *q).sum();
                    data.extend(yr.iter().zip(gr).map(|(p, q)| *p * (*q - dot)));
                }
                acc(*a, Tensor::new(g.shape().to_vec(), data).expect("shape"));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = *g.shape().last().expect("non-scalar");
                let gam = self.value(*gamma).data();
                let n = T::of(d as f64);
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let mut dx = Vec::with_capacity(xhat.len());
                for ((hr, gr), &inv) in xhat.chunks_exact(d).zip(gd.chunks_exact(d)).zip(inv_std) {
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..d {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        let dh = gr[j] * gam[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    for j in 0..d {
                        let dh = gr[j] * gam[j];
                        dx.push(inv / n * (n * dh - sum_dh - hr[j] * sum_dh_h));
                    }
                }
                acc(*x, Tensor::new(g.shape().to_vec(), dx).expect("shape"));
                acc(*gamma, Tensor::new(vec![d], dgamma).expect("shape"));
                acc(*beta, Tensor::new(vec![d], dbeta).expect("shape"));
            }
            Op::Gelu { a } => {
                let va = self.value(*a).data();
                let data = gd.iter().zip(va).map(|(q, &x)| *q * gelu_grad(x)).collect();
                acc(*a, Tensor::new(g.shape().to_vec(), data).expect("shape"));
            }
            Op::Ln { a } => {
                let va = self.value(*a).data();
                let data = gd.iter().zip(va).map(|(q, &x)| *q / x).collect();
                acc(*a, Tensor::new(g.shape().to_vec(), data).expect("shape"));
            }
        }
    }
}
