use crate::kernels::{self, ConvDims};
use crate::{ParamSet, Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf { param: Option<usize> },
    Linear { x: Var, w: Var, b: Var },
    MatMul { a: Var, b: Var },
    Transpose { x: Var },
    Conv1d { x: Var, w: Var, b: Var, dims: ConvDims, cols: Vec<S> },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Relu { x: Var },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: S },
    Square { x: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Reshape { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Dot { a: Var, b: Var },
    Softmax { x: Var },
    RowNormalize { x: Var, fallback: Vec<bool> },
    WrapAngle { x: Var },
    Se2Accumulate { x: Var, segment: usize },
    SelectRows { x: Var, rows: Vec<usize> },
}

#[derive(Debug)]
struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Tape of recorded operations. Nodes are appended in evaluation order, so
/// the tape order is already a topological order of the graph.
#[derive(Debug)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    param_count: Option<usize>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), param_count: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<S>, op: Op<S>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<S> {
        &self.nodes[v.0]
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.node(v).value
    }

    pub fn tensor(&self, v: Var) -> Tensor<S> {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.clone()).expect("graph node holds a consistent tensor")
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- leaves -------------------------------------------------------

    /// A value that never receives gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf { param: None }, false)
    }

    /// A free leaf whose gradient can be read back with [`Graph::grad`].
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf { param: None }, true)
    }

    /// Binds a trainable parameter. Gradients flow back into `params` on
    /// [`Graph::backward`]; a graph binds to a single parameter set.
    pub fn param(&mut self, params: &ParamSet<S>, name: &str) -> Result<Var> {
        match self.param_count {
            Some(n) if n != params.len() => {
                return Err(TensorError::invalid("param", "graph already bound to a different parameter set"))
            }
            _ => self.param_count = Some(params.len()),
        }
        let idx = params.index_of(name)?;
        let t = params.by_index(idx).1;
        Ok(self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf { param: Some(idx) }, true))
    }

    /// Binds a parameter as a constant (frozen weights).
    pub fn frozen(&mut self, params: &ParamSet<S>, name: &str) -> Result<Var> {
        let t = params.get(name)?;
        Ok(self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf { param: None }, false))
    }

    // ---- dense ----------------------------------------------------------

    /// `x[N, Din] · w[Din, Dout] + b[Dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || bs[0] != ws[1] {
            return Err(TensorError::shape("linear", format!("x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[1]);
        let mut out = Vec::with_capacity(n * dout);
        for _ in 0..n {
            out.extend_from_slice(self.value(b));
        }
        S::gemm(
            n,
            din,
            dout,
            S::one(),
            self.value(x),
            (din as isize, 1),
            self.value(w),
            (dout as isize, 1),
            S::one(),
            &mut out,
        );
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(vec![n, dout], out, Op::Linear { x, w, b }, ng))
    }

    /// `a[M, K] · b[K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(TensorError::shape("matmul", format!("{as_:?} · {bs:?}")));
        }
        let (m, k, n) = (as_[0], as_[1], bs[1]);
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, S::one(), self.value(a), (k as isize, 1), self.value(b), (n as isize, 1), S::zero(), &mut out);
        let ng = self.ng(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b }, ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(TensorError::shape("transpose", format!("expected rank 2, got {xs:?}")));
        }
        let (r, c) = (xs[0], xs[1]);
        let v = self.value(x);
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let ng = self.ng(&[x]);
        Ok(self.push(vec![c, r], out, Op::Transpose { x }, ng))
    }

    // ---- temporal -------------------------------------------------------

    /// Cross-correlation with zero padding. `x` is `[C_in, T]` or
    /// `[N, C_in, T]`, `w` is `[C_out, C_in, K]`, `b` is `[C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let (batch, c_in, t_in, batched) = match xs.len() {
            2 => (1, xs[0], xs[1], false),
            3 => (xs[0], xs[1], xs[2], true),
            _ => return Err(TensorError::shape("conv1d", format!("input {xs:?}"))),
        };
        if ws.len() != 3 || ws[1] != c_in || bs.len() != 1 || bs[0] != ws[0] {
            return Err(TensorError::shape("conv1d", format!("x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        if stride == 0 {
            return Err(TensorError::invalid("conv1d", "stride must be positive"));
        }
        let (c_out, k) = (ws[0], ws[2]);
        if t_in + 2 * pad < k {
            return Err(TensorError::invalid(
                "conv1d",
                format!("kernel {k} longer than padded input {}", t_in + 2 * pad),
            ));
        }
        let t_out = (t_in + 2 * pad - k) / stride + 1;
        let dims = ConvDims { batch, c_in, t_in, c_out, k, stride, pad, t_out };
        let (out, cols) = kernels::conv1d_forward(self.value(x), self.value(w), self.value(b), &dims);
        let shape = if batched { vec![batch, c_out, t_out] } else { vec![c_out, t_out] };
        let ng = self.ng(&[x, w, b]);
        let cols = if ng { cols } else { Vec::new() };
        Ok(self.push(shape, out, Op::Conv1d { x, w, b, dims, cols }, ng))
    }

    /// Max pooling with window 2, stride 2 over the last axis.
    pub fn maxpool1d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let t = *xs.last().ok_or_else(|| TensorError::shape("maxpool1d", "rank 0 input"))?;
        if t % 2 != 0 {
            return Err(TensorError::invalid("maxpool1d", format!("odd length {t}")));
        }
        let rows = self.value(x).len() / t;
        let (out, argmax) = kernels::maxpool2_forward(self.value(x), rows, t);
        let mut shape = xs;
        *shape.last_mut().unwrap() = t / 2;
        let ng = self.ng(&[x]);
        Ok(self.push(shape, out, Op::MaxPool2 { x, argmax }, ng))
    }

    // ---- elementwise ----------------------------------------------------

    fn unary(&mut self, x: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(&[x]);
        self.push(shape, out, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > S::zero() { v } else { S::zero() }, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| S::one() / (S::one() + (-v).exp()), Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh { x })
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        self.unary(x, |v| v * c, Op::Scale { x, c })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square { x })
    }

    /// Wraps every value into (−π, π]. The gradient passes through unchanged.
    pub fn wrap_angle(&mut self, x: Var) -> Var {
        self.unary(x, kernels::wrap, Op::WrapAngle { x })
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(S, S) -> S,
    ) -> Result<(Vec<usize>, Vec<S>, bool)> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(name, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| f(p, q)).collect();
        Ok((self.shape(a).to_vec(), out, self.ng(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, v, ng) = self.binary(a, b, "add", |p, q| p + q)?;
        Ok(self.push(s, v, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, v, ng) = self.binary(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(s, v, Op::Sub { a, b }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, v, ng) = self.binary(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(s, v, Op::Mul { a, b }, ng))
    }

    // ---- structural -----------------------------------------------------

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .map(|&v| self.shape(v).to_vec())
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        if axis >= first.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} for rank {}", first.len())));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let agrees =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(TensorError::shape("concat", format!("{first:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ng = self.ng(inputs);
        Ok(self.push(shape, out, Op::Concat { inputs: inputs.to_vec(), axis }, ng))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || len == 0 || start + len > xs[axis] {
            return Err(TensorError::shape("narrow", format!("axis {axis} [{start}, {}) of {xs:?}", start + len)));
        }
        let (outer, extent, inner) = split_axis(&xs, axis);
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let ng = self.ng(&[x]);
        Ok(self.push(shape, out, Op::Narrow { x, axis, start }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(TensorError::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        let ng = self.ng(&[x]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape { x }, ng))
    }

    /// Picks rows of a rank-2 tensor.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 || rows.is_empty() || rows.iter().any(|&r| r >= xs[0]) {
            return Err(TensorError::shape("select_rows", format!("rows {rows:?} of {xs:?}")));
        }
        let c = xs[1];
        let v = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            out.extend_from_slice(&v[r * c..(r + 1) * c]);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(vec![rows.len(), c], out, Op::SelectRows { x, rows: rows.to_vec() }, ng))
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let ng = self.ng(&[x]);
        self.push(vec![1], vec![s], Op::Sum { x }, ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().copied().sum::<S>() / S::from_f64(v.len() as f64);
        let ng = self.ng(&[x]);
        self.push(vec![1], vec![s], Op::Mean { x }, ng)
    }

    /// Inner product of two same-shape tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape("dot", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let s = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| p * q).sum();
        let ng = self.ng(&[a, b]);
        Ok(self.push(vec![1], vec![s], Op::Dot { a, b }, ng))
    }

    // ---- normalization ------------------------------------------------------

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let n = *xs.last().ok_or_else(|| TensorError::shape("softmax", "rank 0 input"))?;
        let v = self.value(x);
        if v.iter().any(|a| !a.is_finite()) {
            return Err(TensorError::invalid("softmax", "non-finite input"));
        }
        let mut out = Vec::with_capacity(v.len());
        for row in v.chunks(n) {
            let m = row.iter().copied().fold(S::neg_infinity(), S::max);
            let start = out.len();
            out.extend(row.iter().map(|&a| (a - m).exp()));
            let z: S = out[start..].iter().copied().sum();
            out[start..].iter_mut().for_each(|e| *e /= z);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(xs, out, Op::Softmax { x }, ng))
    }

    /// Divides each row (last axis) by its sum. Rows whose sum has magnitude
    /// below `eps` become uniform and pass no gradient.
    pub fn row_normalize(&mut self, x: Var, eps: S) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let n = *xs.last().ok_or_else(|| TensorError::shape("row_normalize", "rank 0 input"))?;
        let v = self.value(x);
        let mut out = Vec::with_capacity(v.len());
        let mut fallback = Vec::with_capacity(v.len() / n);
        let uniform = S::one() / S::from_f64(n as f64);
        for row in v.chunks(n) {
            let z: S = row.iter().copied().sum();
            if z.abs() < eps {
                fallback.push(true);
                out.extend(std::iter::repeat_n(uniform, n));
            } else {
                fallback.push(false);
                out.extend(row.iter().map(|&a| a / z));
            }
        }
        let ng = self.ng(&[x]);
        Ok(self.push(xs, out, Op::RowNormalize { x, fallback }, ng))
    }

    /// Running composition of planar relative poses stored as rows
    /// `(dx, dy, dθ)` of a `[T, 3]` tensor. The chain restarts from the
    /// identity every `segment` rows; `segment >= T` gives one chain.
    pub fn se2_accumulate(&mut self, x: Var, segment: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || xs[1] != 3 {
            return Err(TensorError::shape("se2_accumulate", format!("expected [T, 3], got {xs:?}")));
        }
        if segment == 0 {
            return Err(TensorError::invalid("se2_accumulate", "segment must be positive"));
        }
        let out = kernels::se2_accumulate_forward(self.value(x), xs[0], segment);
        let ng = self.ng(&[x]);
        Ok(self.push(xs, out, Op::Se2Accumulate { x, segment }, ng))
    }

    // ---- reverse pass -------------------------------------------------------

    /// Back-propagates from the scalar `loss` and adds parameter gradients
    /// into `params`. Gradients accumulate: call [`ParamSet::zero_grad`]
    /// between steps.
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet<S>) -> Result<()> {
        self.backward_only(loss)?;
        if let Some(n) = self.param_count {
            if n != params.len() {
                return Err(TensorError::invalid("backward", "parameter set does not match graph"));
            }
        }
        for i in 0..params.len() {
            let t = params.by_index_mut(i).1;
            if t.grad().is_none() {
                t.zero_grad();
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(p) } = node.op {
                if let Some(g) = &self.grads[i] {
                    params.by_index_mut(p).1.accumulate_grad(g);
                }
            }
        }
        Ok(())
    }

    /// Reverse pass that only fills the per-node gradients.
    pub fn backward_only(&mut self, loss: Var) -> Result<()> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(ls.to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<S>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![S::zero(); len]))
    }

    fn acc_slice(&mut self, v: Var, g: &[S]) {
        if let Some(buf) = self.acc(v) {
            buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
    }

    fn backprop_node(&mut self, i: usize, g: &[S]) {
        // The op is moved out temporarily so node values can be borrowed
        // while gradient buffers of earlier nodes are written.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf { param: None });
        match &op {
            Op::Leaf { .. } => {}
            Op::Linear { x, w, b } => {
                let (n, din) = (self.shape(*x)[0], self.shape(*x)[1]);
                let dout = self.shape(*w)[1];
                if self.nodes[x.0].needs_grad {
                    let mut dx = vec![S::zero(); n * din];
                    S::gemm(
                        n,
                        dout,
                        din,
                        S::one(),
                        g,
                        (dout as isize, 1),
                        self.value(*w),
                        (1, dout as isize),
                        S::zero(),
                        &mut dx,
                    );
                    self.acc_slice(*x, &dx);
                }
                if self.nodes[w.0].needs_grad {
                    let mut dw = vec![S::zero(); din * dout];
                    S::gemm(
                        din,
                        n,
                        dout,
                        S::one(),
                        self.value(*x),
                        (1, din as isize),
                        g,
                        (dout as isize, 1),
                        S::zero(),
                        &mut dw,
                    );
                    self.acc_slice(*w, &dw);
                }
                if let Some(db) = self.acc(*b) {
                    for row in g.chunks(dout) {
                        db.iter_mut().zip(row).for_each(|(a, &r)| *a += r);
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![S::zero(); m * k];
                    S::gemm(m, n, k, S::one(), g, (n as isize, 1), self.value(*b), (1, n as isize), S::zero(), &mut da);
                    self.acc_slice(*a, &da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![S::zero(); k * n];
                    S::gemm(k, m, n, S::one(), self.value(*a), (1, k as isize), g, (n as isize, 1), S::zero(), &mut db);
                    self.acc_slice(*b, &db);
                }
            }
            Op::Transpose { x } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                if let Some(dx) = self.acc(*x) {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b, dims, cols } => {
                let want_dx = self.nodes[x.0].needs_grad;
                let grads = kernels::conv1d_backward(g, self.value(*w), cols, dims, want_dx);
                if let Some(dx) = grads.dx {
                    self.acc_slice(*x, &dx);
                }
                self.acc_slice(*w, &grads.dw);
                self.acc_slice(*b, &grads.db);
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(dx) = self.acc(*x) {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        dx[src as usize] += gv;
                    }
                }
            }
            Op::Relu { x } => {
                let dx: Vec<S> =
                    self.value(*x).iter().zip(g).map(|(&v, &gv)| if v > S::zero() { gv } else { S::zero() }).collect();
                self.acc_slice(*x, &dx);
            }
            Op::Sigmoid { x } => {
                let dx: Vec<S> = self.nodes[i].value.iter().zip(g).map(|(&y, &gv)| gv * y * (S::one() - y)).collect();
                self.acc_slice(*x, &dx);
            }
            Op::Tanh { x } => {
                let dx: Vec<S> = self.nodes[i].value.iter().zip(g).map(|(&y, &gv)| gv * (S::one() - y * y)).collect();
                self.acc_slice(*x, &dx);
            }
            Op::Add { a, b } => {
                self.acc_slice(*a, g);
                self.acc_slice(*b, g);
            }
            Op::Sub { a, b } => {
                self.acc_slice(*a, g);
                let neg: Vec<S> = g.iter().map(|&v| -v).collect();
                self.acc_slice(*b, &neg);
            }
            Op::Mul { a, b } => {
                let da: Vec<S> = self.value(*b).iter().zip(g).map(|(&q, &gv)| q * gv).collect();
                let db: Vec<S> = self.value(*a).iter().zip(g).map(|(&p, &gv)| p * gv).collect();
                self.acc_slice(*a, &da);
                self.acc_slice(*b, &db);
            }
            Op::Scale { x, c } => {
                let dx: Vec<S> = g.iter().map(|&v| v * *c).collect();
                self.acc_slice(*x, &dx);
            }
            Op::Square { x } => {
                let two = S::from_f64(2.0);
                let dx: Vec<S> = self.value(*x).iter().zip(g).map(|(&v, &gv)| two * v * gv).collect();
                self.acc_slice(*x, &dx);
            }
            Op::WrapAngle { x } | Op::Reshape { x } => self.acc_slice(*x, g),
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(&self.nodes[i].shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis] * inner;
                    if let Some(dv) = self.acc(v) {
                        for o in 0..outer {
                            let src = &g[o * total * inner + offset..o * total * inner + offset + len];
                            dv[o * len..(o + 1) * len].iter_mut().zip(src).for_each(|(a, &s)| *a += s);
                        }
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let (outer, extent, inner) = split_axis(&self.nodes[x.0].shape, *axis);
                let len = self.nodes[i].shape[*axis];
                if let Some(dx) = self.acc(*x) {
                    for o in 0..outer {
                        let base = (o * extent + start) * inner;
                        dx[base..base + len * inner]
                            .iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                            .for_each(|(a, &s)| *a += s);
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                let c = self.shape(*x)[1];
                if let Some(dx) = self.acc(*x) {
                    for (j, &r) in rows.iter().enumerate() {
                        dx[r * c..(r + 1) * c].iter_mut().zip(&g[j * c..(j + 1) * c]).for_each(|(a, &s)| *a += s);
                    }
                }
            }
            Op::Sum { x } => {
                let gv = g[0];
                if let Some(dx) = self.acc(*x) {
                    dx.iter_mut().for_each(|a| *a += gv);
                }
            }
            Op::Mean { x } => {
                let gv = g[0] / S::from_f64(self.value(*x).len() as f64);
                if let Some(dx) = self.acc(*x) {
                    dx.iter_mut().for_each(|a| *a += gv);
                }
            }
            Op::Dot { a, b } => {
                let gv = g[0];
                let da: Vec<S> = self.value(*b).iter().map(|&q| q * gv).collect();
                let db: Vec<S> = self.value(*a).iter().map(|&p| p * gv).collect();
                self.acc_slice(*a, &da);
                self.acc_slice(*b, &db);
            }
            Op::Softmax { x } => {
                let n = *self.nodes[i].shape.last().unwrap();
                let y = &self.nodes[i].value;
                let mut dx = vec![S::zero(); y.len()];
                for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                    let inner: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - inner);
                    }
                }
                self.acc_slice(*x, &dx);
            }
            Op::RowNormalize { x, fallback } => {
                let n = *self.nodes[i].shape.last().unwrap();
                let xv = self.value(*x);
                let mut dx = vec![S::zero(); xv.len()];
                for (r, ((xr, gr), dr)) in xv.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)).enumerate() {
                    if fallback[r] {
                        continue;
                    }
                    // y_j = x_j / z  =>  dx_k = (g_k − Σ_j g_j y_j) / z
                    let z: S = xr.iter().copied().sum();
                    let gy: S = xr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<S>() / z;
                    for (d, &gv) in dr.iter_mut().zip(gr) {
                        *d = (gv - gy) / z;
                    }
                }
                self.acc_slice(*x, &dx);
            }
            Op::Se2Accumulate { x, segment } => {
                let t = self.shape(*x)[0];
                let dx = kernels::se2_accumulate_backward(self.value(*x), &self.nodes[i].value, g, t, *segment);
                self.acc_slice(*x, &dx);
            }
        }
        self.nodes[i].op = op;
    }
}
