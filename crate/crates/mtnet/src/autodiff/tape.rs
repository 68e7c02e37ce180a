//! Operation record and backward rules.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::scalar::Scalar;

use super::tensor::Tensor;
use super::AdError;

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op<T> {
    Leaf,
    Matmul { a: Var, b: Var, ta: bool, tb: bool },
    /// `broadcast` means `b` is a vector added to every row of `a`.
    Add { a: Var, b: Var, broadcast: bool },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: T },
    ConcatLast { parts: Vec<Var> },
    ConcatRows { parts: Vec<Var> },
    SoftmaxRows { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, eps: T },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Relu { x: Var },
    Exp { x: Var },
    Log { x: Var },
    Gather { table: Var, rows: Arc<Vec<usize>> },
    MaskedFill { x: Var, mask: Arc<Vec<bool>> },
    Dropout { x: Var, mask: Arc<Vec<bool>>, inv_keep: T },
    Sum { x: Var },
    Mean { x: Var },
    CrossEntropyLogits { logits: Var, target: usize },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::ConcatLast { .. } => "concat_last",
            Op::ConcatRows { .. } => "concat_rows",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Tanh { .. } => "tanh",
            Op::Relu { .. } => "relu",
            Op::Exp { .. } => "exp",
            Op::Log { .. } => "log",
            Op::Gather { .. } => "gather",
            Op::MaskedFill { .. } => "masked_fill",
            Op::Dropout { .. } => "dropout",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::CrossEntropyLogits { .. } => "cross_entropy_logits",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward pass as a topologically ordered list of primitives.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
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

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Count of recorded applications per primitive, for the op report.
    pub fn op_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut counts = BTreeMap::new();
        for node in &self.nodes {
            *counts.entry(node.op.name()).or_insert(0) += 1;
        }
        counts
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Insert a tensor; gradients are produced for it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    // ---- primitives ----------------------------------------------------

    /// General matrix product `op_a(A) · op_b(B)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, AdError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (ar, ac) = va.rows_cols();
        let (br, bc) = vb.rows_cols();
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let out = gemm(va.data(), (ar, ac), ta, vb.data(), (br, bc), tb);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out).expect("gemm output shape"),
            Op::Matmul { a, b, ta, tb },
            needs,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.matmul_t(a, b, false, false)
    }

    /// `A · Bᵀ` (attention scores).
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.matmul_t(a, b, false, true)
    }

    /// Elementwise add; alternatively broadcasts a vector `b` over the rows
    /// of matrix `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (va, vb) = (self.value(a), self.value(b));
        let needs = self.needs(a) || self.needs(b);
        if va.same_shape(vb) {
            let data = va.data().iter().zip(vb.data()).map(|(x, y)| *x + *y).collect();
            let shape = va.shape().to_vec();
            return Ok(self.push(
                Tensor::new(shape, data).expect("add shape"),
                Op::Add { a, b, broadcast: false },
                needs,
            ));
        }
        let (rows, cols) = va.rows_cols();
        if va.rank() == 2 && vb.rank() == 1 && vb.len() == cols {
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    data.push(va.data()[r * cols + c] + vb.data()[c]);
                }
            }
            return Ok(self.push(
                Tensor::new(vec![rows, cols], data).expect("add shape"),
                Op::Add { a, b, broadcast: true },
                needs,
            ));
        }
        Err(AdError::ShapeMismatch {
            op: "add",
            lhs: va.shape().to_vec(),
            rhs: vb.shape().to_vec(),
        })
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(AdError::ShapeMismatch {
                op: "mul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| *x * *y).collect();
        let shape = va.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data).expect("mul shape"), Op::Mul { a, b }, needs))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|v| v * c);
        let needs = self.needs(a);
        self.push(value, Op::Scale { a, c }, needs)
    }

    /// Concatenate along the last axis (vectors end to end, matrices by
    /// columns). All parts must share the leading dimension.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        if parts.is_empty() {
            return Err(AdError::BadShape { op: "concat_last", detail: "no inputs".into() });
        }
        let rank = self.value(parts[0]).rank();
        let rows = self.value(parts[0]).rows_cols().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rank() != rank || v.rows_cols().0 != rows {
                return Err(AdError::ShapeMismatch {
                    op: "concat_last",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            widths.push(v.rows_cols().1);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                let w = v.rows_cols().1;
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let shape = if rank <= 1 { vec![total] } else { vec![rows, total] };
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(shape, data).expect("concat shape"),
            Op::ConcatLast { parts: parts.to_vec() },
            needs,
        ))
    }

    /// Stack matrices on top of each other (concat along the first axis).
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        if parts.is_empty() {
            return Err(AdError::BadShape { op: "concat_rows", detail: "no inputs".into() });
        }
        let cols = self.value(parts[0]).rows_cols().1;
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.rows_cols().1 != cols {
                return Err(AdError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            rows += v.rows_cols().0;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], data).expect("concat_rows shape"),
            Op::ConcatRows { parts: parts.to_vec() },
            needs,
        ))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (rows, cols) = v.rows_cols();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = &v.data()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
            let sum: T = exps.iter().cloned().sum();
            data.extend(exps.into_iter().map(|e| e / sum));
        }
        let shape = v.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, data).expect("softmax shape"), Op::SoftmaxRows { x }, needs)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var, AdError> {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let (rows, cols) = vx.rows_cols();
        if vg.len() != cols || vb.len() != cols {
            return Err(AdError::ShapeMismatch {
                op: "layer_norm",
                lhs: vx.shape().to_vec(),
                rhs: vg.shape().to_vec(),
            });
        }
        let n = T::of(cols as f64);
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = &vx.data()[r * cols..(r + 1) * cols];
            let mu = row.iter().cloned().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
            let inv = (var + eps).sqrt().recip();
            for c in 0..cols {
                let xhat = (row[c] - mu) * inv;
                data.push(vg.data()[c] * xhat + vb.data()[c]);
            }
        }
        let shape = vx.shape().to_vec();
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::new(shape, data).expect("layer_norm shape"),
            Op::LayerNorm { x, gain, bias, eps },
            needs,
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| (T::one() + (-v).exp()).recip());
        let needs = self.needs(x);
        self.push(value, Op::Sigmoid { x }, needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        let needs = self.needs(x);
        self.push(value, Op::Tanh { x }, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let needs = self.needs(x);
        self.push(value, Op::Relu { x }, needs)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.exp());
        let needs = self.needs(x);
        self.push(value, Op::Exp { x }, needs)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.ln());
        let needs = self.needs(x);
        self.push(value, Op::Log { x }, needs)
    }

    /// Gather rows of a rank-2 table (embedding lookup, row slicing).
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Result<Var, AdError> {
        let v = self.value(table);
        if v.rank() != 2 {
            return Err(AdError::BadShape {
                op: "gather",
                detail: format!("table must be rank 2, got {:?}", v.shape()),
            });
        }
        let (trows, cols) = v.rows_cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= trows {
                return Err(AdError::IndexOutOfRange { op: "gather", index: r, bound: trows });
            }
            data.extend_from_slice(&v.data()[r * cols..(r + 1) * cols]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor::new(vec![rows.len(), cols], data).expect("gather shape"),
            Op::Gather { table, rows: Arc::new(rows.to_vec()) },
            needs,
        ))
    }

    /// Replace the entries where `mask` is true by `fill`.
    pub fn masked_fill(&mut self, x: Var, mask: Arc<Vec<bool>>, fill: T) -> Result<Var, AdError> {
        let v = self.value(x);
        if mask.len() != v.len() {
            return Err(AdError::BadShape {
                op: "masked_fill",
                detail: format!("mask len {} vs tensor len {}", mask.len(), v.len()),
            });
        }
        let data = v
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&val, &m)| if m { fill } else { val })
            .collect();
        let shape = v.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(shape, data).expect("masked_fill shape"),
            Op::MaskedFill { x, mask },
            needs,
        ))
    }

    /// Inverted-scaling dropout; record only in train mode (eval is identity
    /// by not recording anything).
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut impl rand::Rng) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let v = self.value(x);
        let mask: Vec<bool> = (0..v.len()).map(|_| rng.gen::<f64>() < keep).collect();
        let inv_keep = T::of(1.0 / keep);
        let data = v
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&val, &m)| if m { val * inv_keep } else { T::zero() })
            .collect();
        let shape = v.shape().to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::new(shape, data).expect("dropout shape"),
            Op::Dropout { x, mask: Arc::new(mask), inv_keep },
            needs,
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: T = self.value(x).data().iter().cloned().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum { x }, needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = T::of(v.len() as f64);
        let total: T = v.data().iter().cloned().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(total / n), Op::Mean { x }, needs)
    }

    /// Cross entropy of a single logit row against a class index, fused with
    /// log-sum-exp for stability.
    pub fn cross_entropy_logits(&mut self, logits: Var, target: usize) -> Result<Var, AdError> {
        let v = self.value(logits);
        let (rows, cols) = v.rows_cols();
        if rows != 1 {
            return Err(AdError::BadShape {
                op: "cross_entropy_logits",
                detail: format!("expected a single logit row, got shape {:?}", v.shape()),
            });
        }
        if target >= cols {
            return Err(AdError::IndexOutOfRange {
                op: "cross_entropy_logits",
                index: target,
                bound: cols,
            });
        }
        let row = v.data();
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
        let loss = lse - row[target];
        let needs = self.needs(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropyLogits { logits, target }, needs))
    }

    // ---- backward ------------------------------------------------------

    /// Populate gradients of `loss` w.r.t. every `requires_grad` leaf (and
    /// intermediate nodes on the paths to them).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AdError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AdError::NonScalarLoss { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { grads: vec![None; self.nodes.len()] });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.dispatch(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), data)
                        .expect("gradient shape matches value shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], target: Var, contribution: &[T]) {
        if !self.needs(target) {
            return;
        }
        let slot = &mut grads[target.0];
        match slot {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += *c;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    fn dispatch(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b, ta, tb } => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (ar, ac) = va.rows_cols();
                let (br, bc) = vb.rows_cols();
                let (m, _) = node.value.rows_cols();
                let n = node.value.rows_cols().1;
                if self.needs(*a) {
                    // d(op_a(A)) = dC · op_b(B)ᵀ
                    let dm1 = gemm(g, (m, n), false, vb.data(), (br, bc), !*tb);
                    let k = if *ta { ar } else { ac };
                    let da = if *ta { transpose(&dm1, m, k) } else { dm1 };
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    // d(op_b(B)) = op_a(A)ᵀ · dC
                    let dm2 = gemm(va.data(), (ar, ac), !*ta, g, (m, n), false);
                    let k = if *ta { ar } else { ac };
                    let db = if *tb { transpose(&dm2, k, n) } else { dm2 };
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Add { a, b, broadcast } => {
                self.accumulate(grads, *a, g);
                if *broadcast {
                    let cols = self.value(*b).len();
                    let rows = g.len() / cols;
                    let mut db = vec![T::zero(); cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            db[c] += g[r * cols + c];
                        }
                    }
                    self.accumulate(grads, *b, &db);
                } else {
                    self.accumulate(grads, *b, g);
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let da: Vec<T> =
                        g.iter().zip(self.value(*b).data()).map(|(&g, &b)| g * b).collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<T> =
                        g.iter().zip(self.value(*a).data()).map(|(&g, &a)| g * a).collect();
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Scale { a, c } => {
                let da: Vec<T> = g.iter().map(|&g| g * *c).collect();
                self.accumulate(grads, *a, &da);
            }
            Op::ConcatLast { parts } => {
                let rows = node.value.rows_cols().0;
                let total = node.value.rows_cols().1;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).rows_cols().1;
                    if self.needs(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, &dp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows { parts } => {
                let cols = node.value.rows_cols().1;
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).rows_cols().0;
                    if self.needs(p) {
                        self.accumulate(grads, p, &g[offset * cols..(offset + r) * cols]);
                    }
                    offset += r;
                }
            }
            Op::SoftmaxRows { x } => {
                let y = &node.value;
                let (rows, cols) = y.rows_cols();
                let mut dx = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&y, &g)| y * (g - dot)));
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let vx = self.value(*x);
                let vg = self.value(*gain);
                let (rows, cols) = vx.rows_cols();
                let n = T::of(cols as f64);
                let mut dx = vec![T::zero(); rows * cols];
                let mut dgain = vec![T::zero(); cols];
                let mut dbias = vec![T::zero(); cols];
                for r in 0..rows {
                    let row = &vx.data()[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mu = row.iter().cloned().sum::<T>() / n;
                    let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
                    let inv = (var + *eps).sqrt().recip();
                    let xhat: Vec<T> = row.iter().map(|&v| (v - mu) * inv).collect();
                    // da = dy ⊙ gain
                    let da: Vec<T> =
                        gr.iter().zip(vg.data()).map(|(&gy, &gn)| gy * gn).collect();
                    let m1 = da.iter().cloned().sum::<T>() / n;
                    let m2 = da.iter().zip(&xhat).map(|(&d, &xh)| d * xh).sum::<T>() / n;
                    for c in 0..cols {
                        dx[r * cols + c] = inv * (da[c] - m1 - xhat[c] * m2);
                        dgain[c] += gr[c] * xhat[c];
                        dbias[c] += gr[c];
                    }
                }
                self.accumulate(grads, *x, &dx);
                self.accumulate(grads, *gain, &dgain);
                self.accumulate(grads, *bias, &dbias);
            }
            Op::Sigmoid { x } => {
                let dx: Vec<T> = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &g)| g * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Tanh { x } => {
                let dx: Vec<T> = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &g)| g * (T::one() - y * y))
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Relu { x } => {
                let dx: Vec<T> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Exp { x } => {
                let dx: Vec<T> = node.value.data().iter().zip(g).map(|(&y, &g)| g * y).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Log { x } => {
                let dx: Vec<T> =
                    self.value(*x).data().iter().zip(g).map(|(&v, &g)| g / v).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Gather { table, rows } => {
                if self.needs(*table) {
                    let vt = self.value(*table);
                    let cols = vt.rows_cols().1;
                    let mut dt = vec![T::zero(); vt.len()];
                    for (k, &r) in rows.iter().enumerate() {
                        for c in 0..cols {
                            dt[r * cols + c] += g[k * cols + c];
                        }
                    }
                    self.accumulate(grads, *table, &dt);
                }
            }
            Op::MaskedFill { x, mask } => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(mask.iter())
                    .map(|(&g, &m)| if m { T::zero() } else { g })
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Dropout { x, mask, inv_keep } => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(mask.iter())
                    .map(|(&g, &m)| if m { g * *inv_keep } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Sum { x } => {
                let dx = vec![g[0]; self.value(*x).len()];
                self.accumulate(grads, *x, &dx);
            }
            Op::Mean { x } => {
                let n = T::of(self.value(*x).len() as f64);
                let dx = vec![g[0] / n; self.value(*x).len()];
                self.accumulate(grads, *x, &dx);
            }
            Op::CrossEntropyLogits { logits, target } => {
                let v = self.value(*logits);
                let row = v.data();
                let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
                let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
                let sum: T = exps.iter().cloned().sum();
                let mut dx: Vec<T> = exps.into_iter().map(|e| g[0] * e / sum).collect();
                dx[*target] -= g[0];
                self.accumulate(grads, *logits, &dx);
            }
        }
    }
}

/// `op_a(A) · op_b(B)` on raw row-major buffers.
fn gemm<T: Scalar>(
    a: &[T],
    (ar, ac): (usize, usize),
    ta: bool,
    b: &[T],
    (br, bc): (usize, usize),
    tb: bool,
) -> Vec<T> {
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for l in 0..k {
            let av = if ta { a[l * ac + i] } else { a[i * ac + l] };
            if av == T::zero() {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            if tb {
                for (j, o) in row.iter_mut().enumerate() {
                    *o += av * b[j * bc + l];
                }
            } else {
                let brow = &b[l * bc..(l + 1) * bc];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

fn transpose<T: Scalar>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}
