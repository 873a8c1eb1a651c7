use std::sync::Arc;

use super::{Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Transpose(Var),
    MatMul(Var, Var),
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Dot(Var, Var),
    Softmax(Var),
    Sigmoid(Var),
    Log(Var),
    LogSigmoid(Var),
    Sqrt(Var),
    Sum(Var),
    L2NormSq(Var),
    Gather(Var, Arc<[usize]>),
    Concat(Vec<Var>),
    RowDot(Var, Var),
    RowNormSq(Var),
    ScaleRows(Var, Var),
    SegmentSoftmax(Var, Arc<[usize]>),
    SegmentWeightedSum(Var, Var, Arc<[usize]>),
    GatherDot(Var, Arc<[usize]>, Var, Arc<[usize]>),
    GatherWeightedSum(Var, Var, Arc<[usize]>, Arc<[usize]>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive operations. Inputs always precede outputs.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar output with respect to every recorded value that
/// requires them.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// log σ(x) without overflow for large |x|.
#[inline]
fn log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
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

    /// Registers a differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(mismatch(op, s, &[0, 0])),
        }
    }

    fn vector_len(&self, op: &'static str, v: Var) -> Result<usize, TensorError> {
        match self.shape(v) {
            [n] => Ok(*n),
            s => Err(mismatch(op, s, &[0])),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).map(f);
        self.derived(value, op, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims("transpose", a)?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        Ok(self.derived(value, Op::Transpose(a), &[a]))
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `[m, k] x [k] -> [m]`
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix_dims("matvec", a)?;
        let n = self.vector_len("matvec", x)?;
        if k != n {
            return Err(mismatch("matvec", self.shape(a), self.shape(x)));
        }
        let out = matmul_raw(self.value(a).data(), self.value(x).data(), m, k, 1);
        Ok(self.derived(Tensor::vector(out), Op::MatVec(a, x), &[a, x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.derived(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.derived(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.derived(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.vector_len("dot", a)?;
        self.same_shape("dot", a, b)?;
        let s: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .sum();
        Ok(self.derived(Tensor::scalar(s), Op::Dot(a, b), &[a, b]))
    }

    /// Softmax over a vector, computed with max-subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        self.vector_len("softmax", a)?;
        let out = softmax_raw(self.value(a).data());
        Ok(self.derived(Tensor::vector(out), Op::Softmax(a), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), T::ln)
    }

    /// Elementwise `log σ(x)`, stable for large magnitudes.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::LogSigmoid(a), log_sigmoid)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), T::sqrt)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.derived(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    pub fn l2_norm_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_squares();
        self.derived(Tensor::scalar(s), Op::L2NormSq(a), &[a])
    }

    /// Selects rows (or elements of a vector) by index; indices may repeat.
    pub fn gather(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, TensorError> {
        let src = self.value(a);
        let rows = src.rows();
        let width = src.cols();
        if src.shape().is_empty() {
            return Err(mismatch("gather", src.shape(), &[0]));
        }
        let mut out = Vec::with_capacity(index.len() * width);
        for &i in index.iter() {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather",
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(&src.data()[i * width..(i + 1) * width]);
        }
        let mut shape = src.shape().to_vec();
        shape[0] = index.len();
        let value = Tensor::new(shape, out)?;
        Ok(self.derived(value, Op::Gather(a, index), &[a]))
    }

    /// Stacks along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or_else(|| mismatch("concat", &[], &[]))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(mismatch("concat", self.shape(first), s));
            }
            rows += s[0];
            out.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let value = Tensor::new(shape, out)?;
        Ok(self.derived(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Row-wise inner products of two `[n, d]` matrices -> `[n]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (n, d) = self.matrix_dims("row_dot", a)?;
        self.same_shape("row_dot", a, b)?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let out = if d == 0 {
            vec![T::zero(); n]
        } else {
            x.chunks_exact(d).zip(y.chunks_exact(d)).map(|(p, q)| dot_slices(p, q)).collect()
        };
        Ok(self.derived(Tensor::vector(out), Op::RowDot(a, b), &[a, b]))
    }

    /// Row-wise squared norms of an `[n, d]` matrix -> `[n]`.
    pub fn row_norm_sq(&mut self, a: Var) -> Result<Var, TensorError> {
        let (n, d) = self.matrix_dims("row_norm_sq", a)?;
        let x = self.value(a).data();
        let out = (0..n)
            .map(|r| x[r * d..(r + 1) * d].iter().map(|&p| p * p).sum())
            .collect();
        Ok(self.derived(Tensor::vector(out), Op::RowNormSq(a), &[a]))
    }

    /// Multiplies row `r` of `[n, d]` by `w[r]`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var, TensorError> {
        let (n, d) = self.matrix_dims("scale_rows", a)?;
        if self.vector_len("scale_rows", w)? != n {
            return Err(mismatch("scale_rows", self.shape(a), self.shape(w)));
        }
        let (x, s) = (self.value(a).data(), self.value(w).data());
        let out = (0..n * d).map(|k| x[k] * s[k / d]).collect();
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.derived(value, Op::ScaleRows(a, w), &[a, w]))
    }

    /// Softmax of `x[k]` within each group of entries sharing `segment[k]`.
    pub fn segment_softmax(&mut self, x: Var, segment: Arc<[usize]>) -> Result<Var, TensorError> {
        let m = self.vector_len("segment_softmax", x)?;
        if segment.len() != m {
            return Err(mismatch("segment_softmax", &[m], &[segment.len()]));
        }
        let out = segment_softmax_raw(self.value(x).data(), &segment);
        Ok(self.derived(Tensor::vector(out), Op::SegmentSoftmax(x, segment), &[x]))
    }

    /// `out[s] = Σ_{k: segment[k] = s} w[k] · values[k]`, shape `[count, d]`.
    /// Segments without entries are zero rows.
    pub fn segment_weighted_sum(
        &mut self,
        w: Var,
        values: Var,
        segment: Arc<[usize]>,
        count: usize,
    ) -> Result<Var, TensorError> {
        let m = self.vector_len("segment_weighted_sum", w)?;
        let (m2, d) = self.matrix_dims("segment_weighted_sum", values)?;
        if m != m2 || segment.len() != m {
            return Err(mismatch(
                "segment_weighted_sum",
                self.shape(w),
                self.shape(values),
            ));
        }
        let (ws, vs) = (self.value(w).data(), self.value(values).data());
        let mut out = vec![T::zero(); count * d];
        for (k, &s) in segment.iter().enumerate() {
            if s >= count {
                return Err(TensorError::IndexOutOfRange {
                    op: "segment_weighted_sum",
                    index: s,
                    len: count,
                });
            }
            axpy(&mut out[s * d..(s + 1) * d], ws[k], &vs[k * d..(k + 1) * d]);
        }
        let value = Tensor::new(vec![count, d], out)?;
        Ok(self.derived(
            value,
            Op::SegmentWeightedSum(w, values, segment),
            &[w, values],
        ))
    }

    /// `out[k] = a[ia[k]] · b[ib[k]]`, i.e. `row_dot(gather(a, ia), gather(b, ib))`
    /// without materializing the gathered rows.
    pub fn gather_dot(
        &mut self,
        a: Var,
        ia: Arc<[usize]>,
        b: Var,
        ib: Arc<[usize]>,
    ) -> Result<Var, TensorError> {
        let (na, d) = self.matrix_dims("gather_dot", a)?;
        let (nb, d2) = self.matrix_dims("gather_dot", b)?;
        if d != d2 || ia.len() != ib.len() {
            return Err(mismatch("gather_dot", self.shape(a), self.shape(b)));
        }
        check_indices("gather_dot", &ia, na)?;
        check_indices("gather_dot", &ib, nb)?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let out = ia
            .iter()
            .zip(ib.iter())
            .map(|(&i, &j)| dot_slices(&x[i * d..(i + 1) * d], &y[j * d..(j + 1) * d]))
            .collect();
        Ok(self.derived(Tensor::vector(out), Op::GatherDot(a, ia, b, ib), &[a, b]))
    }

    /// `out[segment[k]] += w[k] · table[source[k]]`, i.e.
    /// `segment_weighted_sum(w, gather(table, source), segment, count)`.
    pub fn gather_weighted_sum(
        &mut self,
        w: Var,
        table: Var,
        source: Arc<[usize]>,
        segment: Arc<[usize]>,
        count: usize,
    ) -> Result<Var, TensorError> {
        let m = self.vector_len("gather_weighted_sum", w)?;
        let (n, d) = self.matrix_dims("gather_weighted_sum", table)?;
        if source.len() != m || segment.len() != m {
            return Err(mismatch("gather_weighted_sum", self.shape(w), &[source.len(), segment.len()]));
        }
        check_indices("gather_weighted_sum", &source, n)?;
        check_indices("gather_weighted_sum", &segment, count)?;
        let (ws, vs) = (self.value(w).data(), self.value(table).data());
        let mut out = vec![T::zero(); count * d];
        for ((&s, &j), &wk) in segment.iter().zip(source.iter()).zip(ws) {
            axpy(&mut out[s * d..(s + 1) * d], wk, &vs[j * d..(j + 1) * d]);
        }
        let value = Tensor::new(vec![count, d], out)?;
        Ok(self.derived(
            value,
            Op::GatherWeightedSum(w, table, source, segment),
            &[w, table],
        ))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, TensorError> {
        let root = &self.nodes[output.0];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![T::one()]);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                match g {
                    Some(data) if node.requires_grad => {
                        Some(Tensor::new(node.value.shape().to_vec(), data).expect("grad shape"))
                    }
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Transpose(a) => {
                if self.wants(*a) {
                    let (r, c) = (out.shape()[1], out.shape()[0]);
                    let ga = accumulate(&mut grads[a.0], r * c);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = ga[i * c + j] + g[j * r + i];
                        }
                    }
                }
            }
            Op::MatMul(a, b) | Op::MatVec(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = if bv.shape().len() == 2 { bv.shape()[1] } else { 1 };
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    let ga = accumulate(&mut grads[a.0], m * k);
                    let bd = bv.data();
                    for (ga_row, g_row) in ga.chunks_exact_mut(k).zip(g.chunks_exact(n)) {
                        for (slot, b_row) in ga_row.iter_mut().zip(bd.chunks_exact(n)) {
                            *slot = *slot + dot_slices(g_row, b_row);
                        }
                    }
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    let gb = accumulate(&mut grads[b.0], k * n);
                    let ad = av.data();
                    for (a_row, g_row) in ad.chunks_exact(k).zip(g.chunks_exact(n)) {
                        for (&aip, gb_row) in a_row.iter().zip(gb.chunks_exact_mut(n)) {
                            if aip != T::zero() {
                                axpy(gb_row, aip, g_row);
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, T::one()), (*b, T::one())] {
                    self.acc_scaled(v, g, sign, grads);
                }
            }
            Op::Sub(a, b) => {
                self.acc_scaled(*a, g, T::one(), grads);
                self.acc_scaled(*b, g, -T::one(), grads);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for k in 0..g.len() {
                        ga[k] = ga[k] + g[k] * bv[k];
                    }
                }
                if self.wants(*b) {
                    let gb = accumulate(&mut grads[b.0], g.len());
                    for k in 0..g.len() {
                        gb[k] = gb[k] + g[k] * av[k];
                    }
                }
            }
            Op::Scale(a, c) => self.acc_scaled(*a, g, *c, grads),
            Op::AddScalar(a) => self.acc_scaled(*a, g, T::one(), grads),
            Op::Dot(a, b) => {
                let s = g[0];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let ga = accumulate(&mut grads[a.0], av.len());
                    for k in 0..av.len() {
                        ga[k] = ga[k] + s * bv[k];
                    }
                }
                if self.wants(*b) {
                    let gb = accumulate(&mut grads[b.0], bv.len());
                    for k in 0..bv.len() {
                        gb[k] = gb[k] + s * av[k];
                    }
                }
            }
            Op::Softmax(a) => {
                if self.wants(*a) {
                    let y = out.data();
                    let inner: T = y.iter().zip(g).map(|(&p, &q)| p * q).sum();
                    let ga = accumulate(&mut grads[a.0], y.len());
                    for k in 0..y.len() {
                        ga[k] = ga[k] + y[k] * (g[k] - inner);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                self.acc_map(*a, g, grads, |k| y[k] * (T::one() - y[k]));
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                self.acc_map(*a, g, grads, |k| T::one() / x[k]);
            }
            Op::LogSigmoid(a) => {
                // d/dx log σ(x) = σ(-x)
                let x = self.value(*a).data();
                self.acc_map(*a, g, grads, |k| sigmoid(-x[k]));
            }
            Op::Sqrt(a) => {
                let y = out.data();
                let half = T::of(0.5);
                self.acc_map(*a, g, grads, |k| half / y[k]);
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let n = self.value(*a).len();
                    let ga = accumulate(&mut grads[a.0], n);
                    for x in ga.iter_mut() {
                        *x = *x + g[0];
                    }
                }
            }
            Op::L2NormSq(a) => {
                let x = self.value(*a).data();
                let two = T::of(2.0);
                self.acc_map(*a, &vec![g[0]; x.len()], grads, |k| two * x[k]);
            }
            Op::Gather(a, index) => {
                if self.wants(*a) {
                    let src = self.value(*a);
                    let width = src.cols();
                    let ga = accumulate(&mut grads[a.0], src.len());
                    for (&i, g_row) in index.iter().zip(g.chunks_exact(width.max(1))) {
                        axpy(&mut ga[i * width..(i + 1) * width], T::one(), g_row);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if self.wants(*p) {
                        let gp = accumulate(&mut grads[p.0], n);
                        for k in 0..n {
                            gp[k] = gp[k] + g[offset + k];
                        }
                    }
                    offset += n;
                }
            }
            Op::RowDot(a, b) => {
                let d = self.value(*a).cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let ga = accumulate(&mut grads[a.0], av.len());
                    for ((ga_row, b_row), &gr) in ga.chunks_exact_mut(d).zip(bv.chunks_exact(d)).zip(g) {
                        axpy(ga_row, gr, b_row);
                    }
                }
                if self.wants(*b) {
                    let gb = accumulate(&mut grads[b.0], bv.len());
                    for ((gb_row, a_row), &gr) in gb.chunks_exact_mut(d).zip(av.chunks_exact(d)).zip(g) {
                        axpy(gb_row, gr, a_row);
                    }
                }
            }
            Op::RowNormSq(a) => {
                let d = self.value(*a).cols();
                let x = self.value(*a).data();
                let two = T::of(2.0);
                if self.wants(*a) {
                    let ga = accumulate(&mut grads[a.0], x.len());
                    for k in 0..x.len() {
                        ga[k] = ga[k] + two * x[k] * g[k / d];
                    }
                }
            }
            Op::ScaleRows(a, w) => {
                let d = self.value(*a).cols();
                let (x, s) = (self.value(*a).data(), self.value(*w).data());
                if self.wants(*a) {
                    let ga = accumulate(&mut grads[a.0], x.len());
                    for k in 0..x.len() {
                        ga[k] = ga[k] + g[k] * s[k / d];
                    }
                }
                if self.wants(*w) {
                    let gw = accumulate(&mut grads[w.0], s.len());
                    for k in 0..x.len() {
                        gw[k / d] = gw[k / d] + g[k] * x[k];
                    }
                }
            }
            Op::SegmentSoftmax(a, segment) => {
                if self.wants(*a) {
                    let y = out.data();
                    let count = segment.iter().copied().max().map_or(0, |m| m + 1);
                    let mut inner = vec![T::zero(); count];
                    for (k, &s) in segment.iter().enumerate() {
                        inner[s] = inner[s] + y[k] * g[k];
                    }
                    let ga = accumulate(&mut grads[a.0], y.len());
                    for (k, &s) in segment.iter().enumerate() {
                        ga[k] = ga[k] + y[k] * (g[k] - inner[s]);
                    }
                }
            }
            Op::SegmentWeightedSum(w, values, segment) => {
                let d = self.value(*values).cols();
                let (ws, vs) = (self.value(*w).data(), self.value(*values).data());
                if self.wants(*w) {
                    let gw = accumulate(&mut grads[w.0], ws.len());
                    for ((slot, &s), v_row) in gw.iter_mut().zip(segment.iter()).zip(vs.chunks_exact(d)) {
                        *slot = *slot + dot_slices(&g[s * d..(s + 1) * d], v_row);
                    }
                }
                if self.wants(*values) {
                    let gv = accumulate(&mut grads[values.0], vs.len());
                    for ((gv_row, &s), &wk) in gv.chunks_exact_mut(d).zip(segment.iter()).zip(ws) {
                        axpy(gv_row, wk, &g[s * d..(s + 1) * d]);
                    }
                }
            }
            Op::GatherDot(a, ia, b, ib) => {
                let d = self.value(*a).cols();
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let ga = accumulate(&mut grads[a.0], x.len());
                    for ((&i, &j), &gk) in ia.iter().zip(ib.iter()).zip(g) {
                        axpy(&mut ga[i * d..(i + 1) * d], gk, &y[j * d..(j + 1) * d]);
                    }
                }
                if self.wants(*b) {
                    let gb = accumulate(&mut grads[b.0], y.len());
                    for ((&i, &j), &gk) in ia.iter().zip(ib.iter()).zip(g) {
                        axpy(&mut gb[j * d..(j + 1) * d], gk, &x[i * d..(i + 1) * d]);
                    }
                }
            }
            Op::GatherWeightedSum(w, table, source, segment) => {
                let d = self.value(*table).cols();
                let (ws, vs) = (self.value(*w).data(), self.value(*table).data());
                if self.wants(*w) {
                    let gw = accumulate(&mut grads[w.0], ws.len());
                    for ((slot, &s), &j) in gw.iter_mut().zip(segment.iter()).zip(source.iter()) {
                        *slot = *slot + dot_slices(&g[s * d..(s + 1) * d], &vs[j * d..(j + 1) * d]);
                    }
                }
                if self.wants(*table) {
                    let gt = accumulate(&mut grads[table.0], vs.len());
                    for ((&s, &j), &wk) in segment.iter().zip(source.iter()).zip(ws) {
                        axpy(&mut gt[j * d..(j + 1) * d], wk, &g[s * d..(s + 1) * d]);
                    }
                }
            }
        }
    }

    fn acc_scaled(&self, v: Var, g: &[T], c: T, grads: &mut [Option<Vec<T>>]) {
        if self.wants(v) {
            let gv = accumulate(&mut grads[v.0], g.len());
            for k in 0..g.len() {
                gv[k] = gv[k] + c * g[k];
            }
        }
    }

    fn acc_map(&self, v: Var, g: &[T], grads: &mut [Option<Vec<T>>], local: impl Fn(usize) -> T) {
        if self.wants(v) {
            let gv = accumulate(&mut grads[v.0], g.len());
            for k in 0..g.len() {
                gv[k] = gv[k] + g[k] * local(k);
            }
        }
    }
}

fn check_indices(op: &'static str, index: &[usize], len: usize) -> Result<(), TensorError> {
    match index.iter().find(|&&i| i >= len) {
        Some(&i) => Err(TensorError::IndexOutOfRange { op, index: i, len }),
        None => Ok(()),
    }
}

/// `dst += a · src`
fn axpy<T: Scalar>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &x) in dst.iter_mut().zip(src) {
        *d = *d + a * x;
    }
}

fn dot_slices<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    if n == 0 || k == 0 {
        return out;
    }
    for (row, a_row) in out.chunks_exact_mut(n).zip(a.chunks_exact(k)) {
        for (&aip, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            if aip != T::zero() {
                axpy(row, aip, b_row);
            }
        }
    }
    out
}

pub(crate) fn softmax_raw<T: Scalar>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn segment_softmax_raw<T: Scalar>(x: &[T], segment: &[usize]) -> Vec<T> {
    let count = segment.iter().copied().max().map_or(0, |m| m + 1);
    let mut max = vec![T::neg_infinity(); count];
    for (&v, &s) in x.iter().zip(segment) {
        max[s] = max[s].max(v);
    }
    let exps: Vec<T> = x
        .iter()
        .zip(segment)
        .map(|(&v, &s)| (v - max[s]).exp())
        .collect();
    let mut total = vec![T::zero(); count];
    for (&e, &s) in exps.iter().zip(segment) {
        total[s] = total[s] + e;
    }
    exps.iter()
        .zip(segment)
        .map(|(&e, &s)| e / total[s])
        .collect()
}
