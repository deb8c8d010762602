use super::{EngineError, Tensor};

/// Lower clamp applied to probabilities before taking logs in the
/// cross-entropy loss; the upper clamp is `1 - PROB_CLAMP`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Maps an output element index onto the element of a broadcast operand.
#[derive(Debug)]
enum Bmap {
    Same,
    Modulo(usize),
    Table(Vec<usize>),
}

impl Bmap {
    fn new(out: &[usize], inp: &[usize]) -> Self {
        if out == inp {
            return Bmap::Same;
        }
        let numel_in: usize = inp.iter().product();
        let first = inp.iter().position(|&d| d != 1).unwrap_or(inp.len());
        if out.ends_with(&inp[first..]) {
            return Bmap::Modulo(numel_in);
        }
        let rank = out.len();
        let offset = rank - inp.len();
        let mut in_strides = vec![0usize; rank];
        let mut stride = 1;
        for axis in (0..inp.len()).rev() {
            if inp[axis] != 1 {
                in_strides[axis + offset] = stride;
            }
            stride *= inp[axis];
        }
        let numel_out: usize = out.iter().product();
        let mut table = Vec::with_capacity(numel_out);
        let mut counter = vec![0usize; rank];
        let mut pos = 0usize;
        for _ in 0..numel_out {
            table.push(pos);
            for axis in (0..rank).rev() {
                counter[axis] += 1;
                pos += in_strides[axis];
                if counter[axis] < out[axis] {
                    break;
                }
                pos -= in_strides[axis] * counter[axis];
                counter[axis] = 0;
            }
        }
        Bmap::Table(table)
    }

    #[cfg(test)]
    fn at(&self, i: usize) -> usize {
        match self {
            Bmap::Same => i,
            Bmap::Modulo(n) => i % n,
            Bmap::Table(t) => t[i],
        }
    }
}

/// Calls `f(i, ia, ib)` for every output index `i` in increasing order,
/// with the input indices the two maps send it to.
#[inline]
fn walk(ma: &Bmap, mb: &Bmap, numel: usize, mut f: impl FnMut(usize, usize, usize)) {
    if let (Bmap::Same, Bmap::Same) = (ma, mb) {
        (0..numel).for_each(|i| f(i, i, i));
        return;
    }
    let (mut wa, mut wb) = (0usize, 0usize);
    let index = |m: &Bmap, i: usize, w: &mut usize| match m {
        Bmap::Same => i,
        Bmap::Modulo(n) => {
            let at = *w;
            *w = if at + 1 == *n { 0 } else { at + 1 };
            at
        }
        Bmap::Table(t) => t[i],
    };
    for i in 0..numel {
        let ia = index(ma, i, &mut wa);
        let ib = index(mb, i, &mut wb);
        f(i, ia, ib);
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var, ma: Bmap, mb: Bmap },
    Mul { a: Var, b: Var, ma: Bmap, mb: Bmap },
    Scale { a: Var, factor: f64 },
    Concat { inputs: Vec<Var>, outer: usize, chunks: Vec<usize> },
    Slice { a: Var, outer: usize, in_chunk: usize, start: usize, len: usize },
    Reshape { a: Var },
    Permute { a: Var, map: Vec<usize> },
    Sum { a: Var, outer: usize, len: usize, inner: usize, scale: f64 },
    Softmax { a: Var, width: usize },
    LayerNorm { a: Var, width: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Relu { a: Var },
    Gelu { a: Var },
    Sigmoid { a: Var },
    Gather { table: Var, width: usize, indices: Vec<usize> },
    Bce { p: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode automatic differentiation over an append-only record of
/// primitive operations.
///
/// Nodes are stored in creation order, which is a topological order by
/// construction. A graph is meant to live for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<(), EngineError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EngineError::NonFinite { op })
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>, EngineError> {
    let rank = a.len().max(b.len());
    let dim = |s: &[usize], i: usize| {
        let off = rank - s.len();
        if i < off {
            1
        } else {
            s[i - off]
        }
    };
    (0..rank)
        .map(|i| match (dim(a, i), dim(b, i)) {
            (x, y) if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(EngineError::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() }),
        })
        .collect()
}

/// `c = a * b + beta * c` for row-major views described by strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access within the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[inline]
fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let value = 0.5 * x * (1.0 + t);
    let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (value, deriv)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Registers a tensor that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Registers a tensor that is held fixed.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss with respect to `v`, if `v`
    /// requires a gradient and is reachable from the loss.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Matrix product. Accepts `[m,k] x [k,n]` and the batched form
    /// `[b,m,k] x [b,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || EngineError::ShapeMismatch { op: "matmul", lhs: sa.clone(), rhs: sb.clone() };
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => (1, m, k, n),
            (&[b, m, k], &[b2, k2, n]) if b == b2 && k == k2 => (b, m, k, n),
            _ => return Err(mismatch()),
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &av[i * m * k..(i + 1) * m * k],
                (k, 1),
                &bv[i * k * n..(i + 1) * k * n],
                (n, 1),
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        check_finite("matmul", &out)?;
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul { a, b, batch, m, k, n }, rg))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>, Bmap, Bmap), EngineError> {
        let shape = broadcast_shape(op, self.shape(a), self.shape(b))?;
        let ma = Bmap::new(&shape, self.shape(a));
        let mb = Bmap::new(&shape, self.shape(b));
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let numel: usize = shape.iter().product();
        let mut out = Vec::with_capacity(numel);
        match (&ma, &mb) {
            (Bmap::Same, Bmap::Same) => out.extend(av.iter().zip(bv).map(|(&x, &y)| f(x, y))),
            (Bmap::Same, Bmap::Modulo(n)) => {
                av.chunks(*n).for_each(|c| out.extend(c.iter().zip(bv).map(|(&x, &y)| f(x, y))))
            }
            (Bmap::Modulo(n), Bmap::Same) => {
                bv.chunks(*n).for_each(|c| out.extend(av.iter().zip(c).map(|(&x, &y)| f(x, y))))
            }
            _ => walk(&ma, &mb, numel, |_, ia, ib| out.push(f(av[ia], bv[ib]))),
        }
        check_finite(op, &out)?;
        Ok((shape, out, ma, mb))
    }

    /// Elementwise sum with trailing-axis broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let (shape, out, ma, mb) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add { a, b, ma, mb }, rg))
    }

    /// Elementwise product with trailing-axis broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let (shape, out, ma, mb) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul { a, b, ma, mb }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, EngineError> {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * factor).collect();
        check_finite("scale", &out)?;
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Scale { a, factor }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, EngineError> {
        let first = inputs
            .first()
            .map(|v| self.shape(*v).to_vec())
            .ok_or_else(|| EngineError::InvalidArgument { op: "concat", reason: "no inputs".into() })?;
        if axis >= first.len() {
            return Err(EngineError::InvalidArgument {
                op: "concat",
                reason: format!("axis {axis} out of range for shape {first:?}"),
            });
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(EngineError::ShapeMismatch { op: "concat", lhs: first, rhs: s.to_vec() });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let chunks: Vec<usize> = inputs.iter().map(|v| self.shape(*v)[axis] * inner).collect();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &c) in inputs.iter().zip(&chunks) {
                out.extend_from_slice(&self.value(*v).data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.needs(inputs);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat { inputs: inputs.to_vec(), outer, chunks }, rg))
    }

    /// Keeps indices `start..end` of `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var, EngineError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(EngineError::InvalidArgument {
                op: "slice",
                reason: format!("range {start}..{end} on axis {axis} invalid for shape {shape:?}"),
            });
        }
        let (outer, len_axis, inner) = split_axis(&shape, axis);
        let in_chunk = len_axis * inner;
        let len = (end - start) * inner;
        let av = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len);
        for o in 0..outer {
            let base = o * in_chunk + start * inner;
            out.extend_from_slice(&av[base..base + len]);
        }
        let mut new_shape = shape;
        new_shape[axis] = end - start;
        let rg = self.needs(&[a]);
        Ok(self.push(
            Tensor::from_parts(new_shape, out),
            Op::Slice { a, outer, in_chunk, start: start * inner, len },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, EngineError> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() || shape.contains(&0) {
            return Err(EngineError::ShapeMismatch { op: "reshape", lhs: self.shape(a).to_vec(), rhs: shape.to_vec() });
        }
        let data = self.value(a).data().to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), data), Op::Reshape { a }, rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var, EngineError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes.iter().all(|&ax| ax < shape.len() && !std::mem::replace(&mut seen[ax], true));
        if !valid {
            return Err(EngineError::InvalidArgument {
                op: "permute",
                reason: format!("axes {axes:?} are not a permutation for shape {shape:?}"),
            });
        }
        let rank = shape.len();
        let mut in_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let strides: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
        let numel = self.value(a).numel();
        let mut map = Vec::with_capacity(numel);
        let mut counter = vec![0usize; rank];
        let mut pos = 0usize;
        for _ in 0..numel {
            map.push(pos);
            for axis in (0..rank).rev() {
                counter[axis] += 1;
                pos += strides[axis];
                if counter[axis] < out_shape[axis] {
                    break;
                }
                pos -= strides[axis] * counter[axis];
                counter[axis] = 0;
            }
        }
        let av = self.value(a).data();
        let out: Vec<f64> = map.iter().map(|&p| av[p]).collect();
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Permute { a, map }, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, EngineError> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(EngineError::InvalidArgument { op: "transpose", reason: "needs rank >= 2".into() });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(a, &axes)
    }

    fn reduce(&mut self, op: &'static str, a: Var, axis: usize, mean: bool) -> Result<Var, EngineError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(EngineError::InvalidArgument {
                op,
                reason: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let scale = if mean { 1.0 / len as f64 } else { 1.0 };
        let av = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &av[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        check_finite(op, &out)?;
        let mut new_shape = shape;
        new_shape.remove(axis);
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(new_shape, out), Op::Sum { a, outer, len, inner, scale }, rg))
    }

    /// Sums over `axis`, removing it.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var, EngineError> {
        self.reduce("sum", a, axis, false)
    }

    /// Averages over `axis`, removing it.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var, EngineError> {
        self.reduce("mean", a, axis, true)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, EngineError> {
        let n = self.value(a).numel();
        let flat = self.reshape(a, &[n])?;
        self.sum(flat, 0)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, EngineError> {
        let n = self.value(a).numel();
        let flat = self.reshape(a, &[n])?;
        self.mean(flat, 0)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, EngineError> {
        let shape = self.shape(a).to_vec();
        let width = *shape
            .last()
            .ok_or_else(|| EngineError::InvalidArgument { op: "softmax", reason: "needs rank >= 1".into() })?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(width) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        check_finite("softmax", &out)?;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { a, width }, rg))
    }

    /// Normalizes each row of the last axis to zero mean and unit
    /// (population) variance. No affine scale or shift.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var, EngineError> {
        let shape = self.shape(a).to_vec();
        let width = *shape
            .last()
            .ok_or_else(|| EngineError::InvalidArgument { op: "layer_norm", reason: "needs rank >= 1".into() })?;
        let av = self.value(a).data();
        let rows = av.len() / width;
        let mut xhat = Vec::with_capacity(av.len());
        let mut inv_std = Vec::with_capacity(rows);
        for row in av.chunks(width) {
            let mu = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / width as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(row.iter().map(|x| (x - mu) * is));
        }
        check_finite("layer_norm", &xhat)?;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, xhat.clone()), Op::LayerNorm { a, width, xhat, inv_std }, rg))
    }

    fn unary(
        &mut self,
        op: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>), EngineError> {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| f(x)).collect();
        check_finite(op, &out)?;
        Ok((self.shape(a).to_vec(), out))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, EngineError> {
        let (shape, out) = self.unary("relu", a, |x| x.max(0.0))?;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Relu { a }, rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var, EngineError> {
        let (shape, out) = self.unary("gelu", a, |x| gelu_parts(x).0)?;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Gelu { a }, rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, EngineError> {
        let (shape, out) = self.unary("sigmoid", a, |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })?;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Sigmoid { a }, rg))
    }

    /// Row lookup: `table` is `[rows, width]`, the result is
    /// `[indices.len(), width]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var, EngineError> {
        let shape = self.shape(table).to_vec();
        let &[rows, width] = shape.as_slice() else {
            return Err(EngineError::InvalidArgument {
                op: "gather",
                reason: format!("table must be rank 2, got {shape:?}"),
            });
        };
        if let Some(bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(EngineError::InvalidArgument {
                op: "gather",
                reason: format!("index {bad} out of range for {rows} rows"),
            });
        }
        if indices.is_empty() {
            return Err(EngineError::InvalidArgument { op: "gather", reason: "no indices".into() });
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            out.extend_from_slice(&tv[i * width..(i + 1) * width]);
        }
        let rg = self.needs(&[table]);
        Ok(self.push(
            Tensor::from_parts(vec![indices.len(), width], out),
            Op::Gather { table, width, indices: indices.to_vec() },
            rg,
        ))
    }

    /// Mean binary cross-entropy between probabilities `p` and fixed
    /// targets of the same shape. Probabilities are clamped to
    /// `[PROB_CLAMP, 1 - PROB_CLAMP]` before the logarithm.
    pub fn binary_cross_entropy(&mut self, p: Var, targets: &Tensor) -> Result<Var, EngineError> {
        if self.shape(p) != targets.shape() {
            return Err(EngineError::ShapeMismatch {
                op: "binary_cross_entropy",
                lhs: self.shape(p).to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        let pv = self.value(p).data();
        let n = pv.len() as f64;
        let total: f64 = pv
            .iter()
            .zip(targets.data())
            .map(|(&p, &y)| {
                let q = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
            })
            .sum();
        let loss = total / n;
        check_finite("binary_cross_entropy", &[loss])?;
        let rg = self.needs(&[p]);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p, targets: targets.data().to_vec() }, rg))
    }

    /// Populates gradients of the scalar `loss` with respect to every
    /// reachable node that requires one. Fan-out contributions accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<(), EngineError> {
        if self.value(loss).numel() != 1 {
            return Err(EngineError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        grads.iter_mut().for_each(|g| *g = None);
        if !nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);

        fn acc<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let n = nodes[v.0].value.numel();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul { a, b, batch, m, k, n } => {
                    let (batch, m, k, n) = (*batch, *m, *k, *n);
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    if let Some(ga) = acc(nodes, grads, *a) {
                        for i in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g[i * m * n..(i + 1) * m * n],
                                (n, 1),
                                &bv[i * k * n..(i + 1) * k * n],
                                (1, n),
                                1.0,
                                &mut ga[i * m * k..(i + 1) * m * k],
                            );
                        }
                    }
                    if let Some(gb) = acc(nodes, grads, *b) {
                        for i in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &av[i * m * k..(i + 1) * m * k],
                                (1, k),
                                &g[i * m * n..(i + 1) * m * n],
                                (n, 1),
                                1.0,
                                &mut gb[i * k * n..(i + 1) * k * n],
                            );
                        }
                    }
                }
                Op::Add { a, b, ma, mb } => {
                    for (v, m) in [(a, ma), (b, mb)] {
                        let Some(gv) = acc(nodes, grads, *v) else { continue };
                        match m {
                            Bmap::Same => gv.iter_mut().zip(&g).for_each(|(x, gi)| *x += gi),
                            Bmap::Modulo(n) => {
                                g.chunks(*n).for_each(|c| gv.iter_mut().zip(c).for_each(|(x, gi)| *x += gi))
                            }
                            Bmap::Table(t) => t.iter().zip(&g).for_each(|(&j, gi)| gv[j] += gi),
                        }
                    }
                }
                Op::Mul { a, b, ma, mb } => {
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    // gradient of one factor: upstream times the other factor
                    for (v, m, other, mo) in [(a, ma, bv, mb), (b, mb, av, ma)] {
                        let Some(gv) = acc(nodes, grads, *v) else { continue };
                        match (m, mo) {
                            (Bmap::Same, Bmap::Same) => {
                                gv.iter_mut().zip(&g).zip(other).for_each(|((x, gi), o)| *x += gi * o)
                            }
                            (Bmap::Modulo(n), Bmap::Same) => g.chunks(*n).zip(other.chunks(*n)).for_each(|(gc, oc)| {
                                gv.iter_mut().zip(gc).zip(oc).for_each(|((x, gi), o)| *x += gi * o)
                            }),
                            (Bmap::Same, Bmap::Modulo(n)) => {
                                gv.chunks_mut(*n).zip(g.chunks(*n)).for_each(|(xc, gc)| {
                                    xc.iter_mut().zip(gc).zip(other).for_each(|((x, gi), o)| *x += gi * o)
                                })
                            }
                            _ => walk(m, mo, g.len(), |i, iv, io| gv[iv] += g[i] * other[io]),
                        }
                    }
                }
                Op::Scale { a, factor } => {
                    if let Some(ga) = acc(nodes, grads, *a) {
                        ga.iter_mut().zip(&g).for_each(|(x, gi)| *x += gi * factor);
                    }
                }
                Op::Concat { inputs, outer, chunks } => {
                    let row: usize = chunks.iter().sum();
                    let mut offset = 0;
                    for (v, &c) in inputs.iter().zip(chunks) {
                        if let Some(gv) = acc(nodes, grads, *v) {
                            for o in 0..*outer {
                                let src = &g[o * row + offset..o * row + offset + c];
                                gv[o * c..(o + 1) * c].iter_mut().zip(src).for_each(|(x, s)| *x += s);
                            }
                        }
                        offset += c;
                    }
                }
                Op::Slice { a, outer, in_chunk, start, len } => {
                    if let Some(ga) = acc(nodes, grads, *a) {
                        for o in 0..*outer {
                            let dst = &mut ga[o * in_chunk + start..o * in_chunk + start + len];
                            dst.iter_mut().zip(&g[o * len..(o + 1) * len]).for_each(|(x, s)| *x += s);
                        }
                    }
                }
                Op::Reshape { a } => {
                    if let Some(ga) = acc(nodes, grads, *a) {
                        ga.iter_mut().zip(&g).for_each(|(x, s)| *x += s);
                    }
                }
                Op::Permute { a, map } => {
                    if let Some(ga) = acc(nodes, grads, *a) {
                        for (gi, &p) in g.iter().zip(map) {
                            ga[p] += gi;
                        }
                    }
                }
                Op::Sum { a, outer, len, inner, scale } => {
                    if let Some(ga) = acc(nodes, grads, *a) {
                        for o in 0..*outer {
                            let src = &g[o * inner..(o + 1) * inner];
                            for l in 0..*len {
                                let dst = &mut ga[(o * len + l) * inner..(o * len + l + 1) * inner];
                                dst.iter_mut().zip(src).for_each(|(x, s)| *x += s * scale);
                            }
                        }
                    }
                }
                Op::Softmax { a, width } => {
                    let y = node.value.data();
                    if let Some(ga) = acc(nodes, grads, *a) {
                        for ((gr, yr), dst) in g.chunks(*width).zip(y.chunks(*width)).zip(ga.chunks_mut(*width)) {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for ((d, gi), yi) in dst.iter_mut().zip(gr).zip(yr) {
                                *d += yi * (gi - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm { a, width, xhat, inv_std } => {
                    let w = *width as f64;
                    if let Some(ga) = acc(nodes, grads, *a) {
                        for (r, ((gr, xr), dst)) in
                            g.chunks(*width).zip(xhat.chunks(*width)).zip(ga.chunks_mut(*width)).enumerate()
                        {
                            let sum_g: f64 = gr.iter().sum();
                            let sum_gx: f64 = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                            for ((d, gi), xi) in dst.iter_mut().zip(gr).zip(xr) {
                                *d += inv_std[r] / w * (w * gi - sum_g - xi * sum_gx);
                            }
                        }
                    }
                }
                Op::Relu { a } => {
                    let x = nodes[a.0].value.data();
                    if let Some(ga) = acc(nodes, grads, *a) {
                        for ((d, gi), xi) in ga.iter_mut().zip(&g).zip(x) {
                            if *xi > 0.0 {
                                *d += gi;
                            }
                        }
                    }
                }
                Op::Gelu { a } => {
                    let x = nodes[a.0].value.data();
                    if let Some(ga) = acc(nodes, grads, *a) {
                        for ((d, gi), xi) in ga.iter_mut().zip(&g).zip(x) {
                            *d += gi * gelu_parts(*xi).1;
                        }
                    }
                }
                Op::Sigmoid { a } => {
                    let y = node.value.data();
                    if let Some(ga) = acc(nodes, grads, *a) {
                        for ((d, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                            *d += gi * yi * (1.0 - yi);
                        }
                    }
                }
                Op::Gather { table, width, indices } => {
                    if let Some(gt) = acc(nodes, grads, *table) {
                        for (row, &i) in indices.iter().enumerate() {
                            let src = &g[row * width..(row + 1) * width];
                            gt[i * width..(i + 1) * width].iter_mut().zip(src).for_each(|(x, s)| *x += s);
                        }
                    }
                }
                Op::Bce { p, targets } => {
                    let pv = nodes[p.0].value.data();
                    let n = pv.len() as f64;
                    let upstream = g[0];
                    if let Some(gp) = acc(nodes, grads, *p) {
                        for ((d, &pi), &y) in gp.iter_mut().zip(pv).zip(targets) {
                            if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pi) {
                                *d += upstream * (pi - y) / (pi * (1.0 - pi)) / n;
                            }
                        }
                    }
                }
            }
            grads[idx] = Some(g);
        }
        if grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite())) {
            Ok(())
        } else {
            Err(EngineError::NonFinite { op: "backward" })
        }
    }
}
