use crate::autodiff::{AutodiffError, Result, Tensor};
use crate::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var },
    /// `a @ b^T` — `a: [m,k]`, `b: [n,k]`, out `[m,n]`.
    MatMulT { a: Var, b: Var },
    Add { a: Var, b: Var },
    /// `[m,n] + [n]`, the only broadcast supported.
    AddBias { a: Var, b: Var },
    Scale { a: Var, c: F },
    Gelu { a: Var },
    LayerNorm { a: Var, gamma: Var, beta: Var, xhat: Vec<F>, inv: Vec<F> },
    Embedding { table: Var, ids: Vec<usize> },
    MaskedMeanPool { a: Var, mask: Vec<u8>, count: usize },
    SoftmaxRows { a: Var },
    Log { a: Var },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SliceCols { a: Var, start: usize },
    Dot { a: Var, b: Var },
    CrossEntropySoft { logits: Var, target: Tensor<F>, probs: Vec<F> },
}

struct Entry<F> {
    op: Op<F>,
    value: Tensor<F>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], addressed by [`Var`].
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the loss w.r.t. `v`, if any was accumulated.
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient as a tensor shaped like the forward value.
    pub fn tensor(&self, v: Var) -> Option<Tensor<F>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_vec(&self.shapes[v.0], g.clone()).expect("grad shape"))
    }
}

/// Eager reverse-mode tape. Records each op's output; [`Tape::backward`]
/// walks the record once in reverse, accumulating gradients.
pub struct Tape<F> {
    entries: Vec<Entry<F>>,
    consumed: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { entries: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records a differentiable input (gradient tracked iff `t.requires_grad`).
    pub fn input(&mut self, t: &Tensor<F>) -> Var {
        let rg = t.requires_grad;
        self.push(Op::Leaf, t.clone(), rg)
    }

    /// Records a constant; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<F>) -> Result<Var> {
        Ok(self.constant(Tensor::from_vec(shape, data)?))
    }

    /// Forward value of a recorded var.
    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.entries[v.0].value
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>, requires_grad: bool) -> Var {
        self.entries.push(Entry { op, value, requires_grad });
        Var(self.entries.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.entries[v.0].requires_grad
    }

    fn shape_err(op: &'static str, detail: String) -> AutodiffError {
        AutodiffError::ShapeMismatch { op, detail }
    }

    // ----- ops ------------------------------------------------------------

    /// `a @ b` for `a: [m,k]`, `b: [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows() {
            return Err(Self::shape_err(
                "matmul",
                format!("{:?} @ {:?}", va.shape(), vb.shape()),
            ));
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = vec![F::zero(); m * n];
        mm_nn(m, k, n, va.data(), vb.data(), &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul { a, b }, Tensor::from_vec(&[m, n], out)?, rg))
    }

    /// `a @ b^T` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.cols() {
            return Err(Self::shape_err(
                "matmul_t",
                format!("{:?} @ {:?}^T", va.shape(), vb.shape()),
            ));
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.rows());
        let mut out = vec![F::zero(); m * n];
        mm_nt(m, k, n, va.data(), vb.data(), &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMulT { a, b }, Tensor::from_vec(&[m, n], out)?, rg))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Self::shape_err(
                "add",
                format!("{:?} + {:?}", va.shape(), vb.shape()),
            ));
        }
        let data: Vec<F> = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::from_vec(va.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add { a, b }, t, rg))
    }

    /// Row-broadcast add: `a: [m,n]` plus `b: [n]`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 1 || va.cols() != vb.numel() {
            return Err(Self::shape_err(
                "add_bias",
                format!("{:?} + {:?}", va.shape(), vb.shape()),
            ));
        }
        let (m, n) = (va.rows(), va.cols());
        let mut data = va.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += vb.data()[j];
            }
        }
        let t = Tensor::from_vec(&[m, n], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::AddBias { a, b }, t, rg))
    }

    /// Multiplication by a compile-time constant factor.
    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let va = self.value(a);
        let data: Vec<F> = va.data().iter().map(|&x| x * c).collect();
        let t = Tensor::from_vec(va.shape(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(Op::Scale { a, c }, t, rg)
    }

    /// GELU, tanh approximation: `0.5 x (1 + tanh(c0 (x + c1 x^3)))`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let c0 = F::lit(GELU_C0);
        let c1 = F::lit(GELU_C1);
        let half = F::lit(0.5);
        let data: Vec<F> = va
            .data()
            .iter()
            .map(|&x| half * x * (F::one() + (c0 * (x + c1 * x * x * x)).tanh()))
            .collect();
        let t = Tensor::from_vec(va.shape(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(Op::Gelu { a }, t, rg)
    }

    /// Per-row layer normalization with learned `gamma`, `beta` (`eps = 1e-5`).
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (va, vg, vb) = (self.value(a), self.value(gamma), self.value(beta));
        if va.rank() != 2 || vg.rank() != 1 || vb.rank() != 1 {
            return Err(Self::shape_err(
                "layer_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", va.shape(), vg.shape(), vb.shape()),
            ));
        }
        let (m, n) = (va.rows(), va.cols());
        if vg.numel() != n || vb.numel() != n {
            return Err(Self::shape_err(
                "layer_norm",
                format!("width {} vs gamma {} / beta {}", n, vg.numel(), vb.numel()),
            ));
        }
        let eps = F::lit(LN_EPS);
        let nf = F::lit(n as f64);
        let mut out = vec![F::zero(); m * n];
        let mut xhat = vec![F::zero(); m * n];
        let mut inv = vec![F::zero(); m];
        for i in 0..m {
            let row = &va.data()[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<F>() / nf;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / nf;
            let iv = (var + eps).sqrt().recip();
            inv[i] = iv;
            for j in 0..n {
                let xh = (row[j] - mean) * iv;
                xhat[i * n + j] = xh;
                out[i * n + j] = vg.data()[j] * xh + vb.data()[j];
            }
        }
        let rg = self.rg(a) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Op::LayerNorm { a, gamma, beta, xhat, inv },
            Tensor::from_vec(&[m, n], out)?,
            rg,
        ))
    }

    /// Gathers rows of `table: [v,d]` at `ids`, producing `[ids.len(), d]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        if vt.rank() != 2 {
            return Err(Self::shape_err("embedding_lookup", format!("table {:?}", vt.shape())));
        }
        if ids.is_empty() {
            return Err(AutodiffError::EmptyInput { op: "embedding_lookup" });
        }
        let (v, d) = (vt.rows(), vt.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(AutodiffError::BadIndex { op: "embedding_lookup", index: id, limit: v });
            }
            out.extend_from_slice(&vt.data()[id * d..(id + 1) * d]);
        }
        let t = Tensor::from_vec(&[ids.len(), d], out)?;
        let rg = self.rg(table);
        Ok(self.push(Op::Embedding { table, ids: ids.to_vec() }, t, rg))
    }

    /// Mean over the rows of `a: [m,n]` where `mask` is nonzero, giving `[n]`.
    pub fn masked_mean_pool(&mut self, a: Var, mask: &[u8]) -> Result<Var> {
        let va = self.value(a);
        if va.rank() != 2 || mask.len() != va.rows() {
            return Err(Self::shape_err(
                "masked_mean_pool",
                format!("x {:?}, mask len {}", va.shape(), mask.len()),
            ));
        }
        let (m, n) = (va.rows(), va.cols());
        let count = mask.iter().filter(|&&b| b != 0).count();
        if count == 0 {
            return Err(AutodiffError::DegenerateMask);
        }
        let cf = F::lit(count as f64);
        let mut out = vec![F::zero(); n];
        for i in 0..m {
            if mask[i] != 0 {
                for j in 0..n {
                    out[j] += va.data()[i * n + j];
                }
            }
        }
        for o in &mut out {
            *o = *o / cf;
        }
        let t = Tensor::from_vec(&[n], out)?;
        let rg = self.rg(a);
        Ok(self.push(Op::MaskedMeanPool { a, mask: mask.to_vec(), count }, t, rg))
    }

    /// Row-wise softmax with max-shift; rank-1 input is one row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.rank() == 0 || va.numel() == 0 {
            return Err(Self::shape_err("softmax_rows", format!("{:?}", va.shape())));
        }
        let (m, n) = (va.rows(), va.cols());
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let row = &va.data()[i * n..(i + 1) * n];
            softmax_into(row, &mut out[i * n..(i + 1) * n]);
        }
        let t = Tensor::from_vec(va.shape(), out)?;
        let rg = self.rg(a);
        Ok(self.push(Op::SoftmaxRows { a }, t, rg))
    }

    /// Elementwise natural log.
    pub fn log(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data: Vec<F> = va.data().iter().map(|&x| x.ln()).collect();
        let t = Tensor::from_vec(va.shape(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(Op::Log { a }, t, rg)
    }

    /// Stacks inputs along rows: scalars concat to `[k]`; `[n]`/`[r,n]`
    /// inputs stack to `[R,n]`.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutodiffError::EmptyInput { op: "concat_rows" });
        }
        let all_scalar = parts.iter().all(|&p| self.value(p).rank() == 0);
        let mut data = Vec::new();
        let shape: Vec<usize>;
        if all_scalar {
            for &p in parts {
                data.push(self.value(p).item());
            }
            shape = vec![parts.len()];
        } else {
            let n = self.value(parts[0]).cols();
            let mut rows = 0;
            for &p in parts {
                let v = self.value(p);
                if v.rank() == 0 || v.cols() != n {
                    return Err(Self::shape_err(
                        "concat_rows",
                        format!("part {:?} vs width {}", v.shape(), n),
                    ));
                }
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            shape = vec![rows, n];
        }
        let t = Tensor::from_vec(&shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatRows { parts: parts.to_vec() }, t, rg))
    }

    /// Concatenates rank-2 inputs with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutodiffError::EmptyInput { op: "concat_cols" });
        }
        let m = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.rows() != m {
                return Err(Self::shape_err(
                    "concat_cols",
                    format!("part {:?} vs rows {}", v.shape(), m),
                ));
            }
            total += v.cols();
        }
        let mut data = vec![F::zero(); m * total];
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            let n = v.cols();
            for i in 0..m {
                data[i * total + at..i * total + at + n]
                    .copy_from_slice(&v.data()[i * n..(i + 1) * n]);
            }
            at += n;
        }
        let t = Tensor::from_vec(&[m, total], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatCols { parts: parts.to_vec() }, t, rg))
    }

    /// Column slice `a[:, start..start+len]` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if va.rank() != 2 || start + len > va.cols() {
            return Err(Self::shape_err(
                "slice_cols",
                format!("{:?} cols {}..{}", va.shape(), start, start + len),
            ));
        }
        let (m, n) = (va.rows(), va.cols());
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&va.data()[i * n + start..i * n + start + len]);
        }
        let t = Tensor::from_vec(&[m, len], data)?;
        let rg = self.rg(a);
        Ok(self.push(Op::SliceCols { a, start }, t, rg))
    }

    /// Full inner product of two same-shape tensors, yielding a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Self::shape_err(
                "dot",
                format!("{:?} . {:?}", va.shape(), vb.shape()),
            ));
        }
        let s = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .sum::<F>();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Dot { a, b }, Tensor::scalar(s), rg))
    }

    /// Mean over rows of `-sum_j target[i,j] * log softmax(logits[i,:])_j`.
    ///
    /// `target` is a constant distribution per row (sums to 1 within 1e-9,
    /// entries nonnegative); gradients flow to `logits` only.
    pub fn cross_entropy_soft(&mut self, logits: Var, target: &Tensor<F>) -> Result<Var> {
        let vl = self.value(logits);
        if vl.shape() != target.shape() || vl.rank() == 0 {
            return Err(Self::shape_err(
                "cross_entropy_soft",
                format!("logits {:?} vs target {:?}", vl.shape(), target.shape()),
            ));
        }
        let (m, n) = (vl.rows(), vl.cols());
        for i in 0..m {
            let row = &target.data()[i * n..(i + 1) * n];
            let sum: f64 = row.iter().map(|x| x.as_f64()).sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|x| x.as_f64() < -1e-12) {
                return Err(AutodiffError::NonDistributionTarget { row: i, sum });
            }
        }
        let mut probs = vec![F::zero(); m * n];
        let mut total = F::zero();
        for i in 0..m {
            let row = &vl.data()[i * n..(i + 1) * n];
            let trow = &target.data()[i * n..(i + 1) * n];
            let prow = &mut probs[i * n..(i + 1) * n];
            softmax_into(row, prow);
            // log softmax recomputed with the same max-shift for stability.
            let mx = max_of(row);
            let lse = row.iter().map(|&x| (x - mx).exp()).sum::<F>().ln();
            for j in 0..n {
                total -= trow[j] * (row[j] - mx - lse);
            }
        }
        let mean = total / F::lit(m as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Op::CrossEntropySoft { logits, target: target.clone(), probs },
            Tensor::scalar(mean),
            rg,
        ))
    }

    // ----- backward --------------------------------------------------------

    /// Reverse pass from a scalar loss. Consumes the tape's single backward
    /// budget; a second call returns [`AutodiffError::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        self.consumed = true;
        let lv = &self.entries[loss.0].value;
        if lv.rank() != 0 {
            return Err(AutodiffError::NotScalar { shape: lv.shape().to_vec() });
        }

        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.entries.len()];
        grads[loss.0] = Some(vec![F::one()]);

        for idx in (0..=loss.0).rev() {
            if !self.entries[idx].requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.pull(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.entries.iter().map(|e| e.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn pull(&self, idx: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let add_to = |grads: &mut [Option<Vec<F>>], v: Var, this: &Tape<F>, f: &mut dyn FnMut(&mut [F])| {
            if !this.entries[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0]
                .get_or_insert_with(|| vec![F::zero(); this.entries[v.0].value.numel()]);
            f(buf);
        };
        match &self.entries[idx].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (va, vb) = (&self.entries[a.0].value, &self.entries[b.0].value);
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                add_to(grads, *a, self, &mut |buf| mm_nt(m, n, k, g, vb.data(), buf));
                add_to(grads, *b, self, &mut |buf| mm_tn(m, k, n, va.data(), g, buf));
            }
            Op::MatMulT { a, b } => {
                let (va, vb) = (&self.entries[a.0].value, &self.entries[b.0].value);
                let (m, k, n) = (va.rows(), va.cols(), vb.rows());
                add_to(grads, *a, self, &mut |buf| mm_nn(m, n, k, g, vb.data(), buf));
                add_to(grads, *b, self, &mut |buf| mm_tn(m, n, k, g, va.data(), buf));
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    add_to(grads, *v, self, &mut |buf| {
                        for (o, &x) in buf.iter_mut().zip(g) {
                            *o += x;
                        }
                    });
                }
            }
            Op::AddBias { a, b } => {
                let n = self.entries[b.0].value.numel();
                add_to(grads, *a, self, &mut |buf| {
                    for (o, &x) in buf.iter_mut().zip(g) {
                        *o += x;
                    }
                });
                add_to(grads, *b, self, &mut |buf| {
                    for (i, &x) in g.iter().enumerate() {
                        buf[i % n] += x;
                    }
                });
            }
            Op::Scale { a, c } => {
                let c = *c;
                add_to(grads, *a, self, &mut |buf| {
                    for (o, &x) in buf.iter_mut().zip(g) {
                        *o += c * x;
                    }
                });
            }
            Op::Gelu { a } => {
                let va = &self.entries[a.0].value;
                let c0 = F::lit(GELU_C0);
                let c1 = F::lit(GELU_C1);
                let half = F::lit(0.5);
                let three = F::lit(3.0);
                add_to(grads, *a, self, &mut |buf| {
                    for (i, &x) in va.data().iter().enumerate() {
                        let u = c0 * (x + c1 * x * x * x);
                        let th = u.tanh();
                        let du = c0 * (F::one() + three * c1 * x * x);
                        let dy = half * (F::one() + th) + half * x * (F::one() - th * th) * du;
                        buf[i] += g[i] * dy;
                    }
                });
            }
            Op::LayerNorm { a, gamma, beta, xhat, inv } => {
                let n = self.entries[gamma.0].value.numel();
                let m = inv.len();
                let vg = &self.entries[gamma.0].value;
                add_to(grads, *gamma, self, &mut |buf| {
                    for i in 0..m {
                        for j in 0..n {
                            buf[j] += g[i * n + j] * xhat[i * n + j];
                        }
                    }
                });
                add_to(grads, *beta, self, &mut |buf| {
                    for i in 0..m {
                        for j in 0..n {
                            buf[j] += g[i * n + j];
                        }
                    }
                });
                add_to(grads, *a, self, &mut |buf| {
                    let nf = F::lit(n as f64);
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        let xh = &xhat[i * n..(i + 1) * n];
                        let mut sum_dxh = F::zero();
                        let mut sum_dxh_xh = F::zero();
                        // d xhat = g * gamma
                        for j in 0..n {
                            let dxh = gr[j] * vg.data()[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[j];
                        }
                        let mean_dxh = sum_dxh / nf;
                        let mean_dxh_xh = sum_dxh_xh / nf;
                        for j in 0..n {
                            let dxh = gr[j] * vg.data()[j];
                            buf[i * n + j] += inv[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.entries[table.0].value.cols();
                add_to(grads, *table, self, &mut |buf| {
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            buf[id * d + j] += g[row * d + j];
                        }
                    }
                });
            }
            Op::MaskedMeanPool { a, mask, count } => {
                let n = g.len();
                let cf = F::lit(*count as f64);
                add_to(grads, *a, self, &mut |buf| {
                    for (i, &mi) in mask.iter().enumerate() {
                        if mi != 0 {
                            for j in 0..n {
                                buf[i * n + j] += g[j] / cf;
                            }
                        }
                    }
                });
            }
            Op::SoftmaxRows { a } => {
                let y = &self.entries[idx].value;
                let (m, n) = (y.rows(), y.cols());
                add_to(grads, *a, self, &mut |buf| {
                    for i in 0..m {
                        let yr = &y.data()[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let dot = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum::<F>();
                        for j in 0..n {
                            buf[i * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Log { a } => {
                let va = &self.entries[a.0].value;
                add_to(grads, *a, self, &mut |buf| {
                    for (i, &x) in va.data().iter().enumerate() {
                        buf[i] += g[i] / x;
                    }
                });
            }
            Op::ConcatRows { parts } => {
                let mut at = 0;
                for &p in parts {
                    let len = self.entries[p.0].value.numel();
                    let seg = &g[at..at + len];
                    add_to(grads, p, self, &mut |buf| {
                        for (o, &x) in buf.iter_mut().zip(seg) {
                            *o += x;
                        }
                    });
                    at += len;
                }
            }
            Op::ConcatCols { parts } => {
                let m = self.entries[parts[0].0].value.rows();
                let total: usize = parts.iter().map(|&p| self.entries[p.0].value.cols()).sum();
                let mut at = 0;
                for &p in parts {
                    let n = self.entries[p.0].value.cols();
                    add_to(grads, p, self, &mut |buf| {
                        for i in 0..m {
                            for j in 0..n {
                                buf[i * n + j] += g[i * total + at + j];
                            }
                        }
                    });
                    at += n;
                }
            }
            Op::SliceCols { a, start } => {
                let va = &self.entries[a.0].value;
                let (m, n) = (va.rows(), va.cols());
                let len = g.len() / m;
                let start = *start;
                add_to(grads, *a, self, &mut |buf| {
                    for i in 0..m {
                        for j in 0..len {
                            buf[i * n + start + j] += g[i * len + j];
                        }
                    }
                });
            }
            Op::Dot { a, b } => {
                let g0 = g[0];
                let (va, vb) = (&self.entries[a.0].value, &self.entries[b.0].value);
                add_to(grads, *a, self, &mut |buf| {
                    for (o, &x) in buf.iter_mut().zip(vb.data()) {
                        *o += g0 * x;
                    }
                });
                add_to(grads, *b, self, &mut |buf| {
                    for (o, &x) in buf.iter_mut().zip(va.data()) {
                        *o += g0 * x;
                    }
                });
            }
            Op::CrossEntropySoft { logits, target, probs } => {
                let g0 = g[0];
                let m = self.entries[logits.0].value.rows();
                let mf = F::lit(m as f64);
                add_to(grads, *logits, self, &mut |buf| {
                    for (i, o) in buf.iter_mut().enumerate() {
                        *o += g0 * (probs[i] - target.data()[i]) / mf;
                    }
                });
            }
        }
    }
}

// ----- kernels --------------------------------------------------------------

fn max_of<F: Scalar>(row: &[F]) -> F {
    row.iter().copied().fold(F::neg_infinity(), F::max)
}

/// Max-shift softmax of `row` into `out`.
fn softmax_into<F: Scalar>(row: &[F], out: &mut [F]) {
    let mx = max_of(row);
    let mut sum = F::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - mx).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

/// `out += a @ b` with `a: [m,k]`, `b: [k,n]`.
fn mm_nn<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a @ b^T` with `a: [m,k]`, `b: [n,k]`.
fn mm_nt<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = F::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

/// `out += a^T @ b` with `a: [m,k]`, `b: [m,n]`, out `[k,n]`.
fn mm_tn<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap().with_grad()
    }

    /// Central differences over every element of `x`, via a closure that
    /// recomputes the loss from scratch.
    fn numeric_grad(x: &[f64], f: &dyn Fn(&[f64]) -> f64, h: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        let mut buf = x.to_vec();
        for i in 0..x.len() {
            buf[i] = x[i] + h;
            let up = f(&buf);
            buf[i] = x[i] - h;
            let dn = f(&buf);
            buf[i] = x[i];
            out.push((up - dn) / (2.0 * h));
        }
        out
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
        assert_eq!(a.len(), b.len(), "{what}: length");
        for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
            let denom = x.abs().max(y.abs()).max(1e-4);
            assert!(
                (x - y).abs() / denom < tol,
                "{what}[{i}]: {x} vs {y}"
            );
        }
    }

    #[test]
    fn matmul_identity_roundtrip() {
        let mut tape = Tape::new();
        let a = tape.input(&t2(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let eye = tape.constant(t2(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = tape.matmul(a, eye).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let mut tape = Tape::new();
        let a = tape.input(&t2(&[2, 3], &[0.0; 6]));
        let b = tape.input(&t2(&[2, 3], &[0.0; 6]));
        assert!(matches!(
            tape.matmul(a, b),
            Err(AutodiffError::ShapeMismatch { op: "matmul", .. })
        ));
        assert!(tape.matmul_t(a, b).is_ok());
    }

    #[test]
    fn softmax_uniform_rows() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(&t2(&[2], &[0.0, 0.0]));
        let y = tape.softmax_rows(a).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_is_shift_stable() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(&t2(&[3], &[1000.0, 1000.0, 999.0]));
        let y = tape.softmax_rows(a).unwrap();
        let s: f64 = tape.value(y).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(tape.value(y).all_finite());
    }

    #[test]
    fn log_softmax_composition_stable_in_range() {
        // Stated operating range for log(softmax(x)): logits within [-50, 50].
        let mut tape = Tape::<f64>::new();
        let a = tape.input(&t2(&[3], &[50.0, -50.0, 0.0]));
        let s = tape.softmax_rows(a).unwrap();
        let l = tape.log(s);
        assert!(tape.value(l).all_finite());
    }

    #[test]
    fn masked_pool_ignores_masked_rows() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(&t2(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 100.0, 100.0]));
        let y = tape.masked_mean_pool(a, &[1, 1, 0]).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 3.0]);
        let all_zero = tape.masked_mean_pool(a, &[0, 0, 0]);
        assert!(matches!(all_zero, Err(AutodiffError::DegenerateMask)));
    }

    #[test]
    fn cross_entropy_uniform_is_ln_n() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.input(&t2(&[8], &[0.3; 8]));
        let target = Tensor::from_vec(&[8], vec![0.125; 8]).unwrap();
        let l = tape.cross_entropy_soft(logits, &target).unwrap();
        assert!((tape.value(l).item() - (8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_non_distribution() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.input(&t2(&[2], &[0.0, 0.0]));
        let target = Tensor::from_vec(&[2], vec![0.7, 0.7]).unwrap();
        assert!(matches!(
            tape.cross_entropy_soft(logits, &target),
            Err(AutodiffError::NonDistributionTarget { .. })
        ));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(&Tensor::scalar(2.0).with_grad());
        let l = tape.dot(a, a).unwrap();
        assert!(tape.backward(l).is_ok());
        assert!(matches!(tape.backward(l), Err(AutodiffError::TapeConsumed)));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(&t2(&[2], &[1.0, 2.0]));
        assert!(matches!(
            tape.backward(a),
            Err(AutodiffError::NotScalar { .. })
        ));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(&Tensor::scalar(3.0).with_grad());
        let c = tape.constant(Tensor::scalar(4.0));
        let y = tape.dot(a, c).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(a), Some(&[4.0][..]));
        assert_eq!(grads.get(c), None);
    }

    #[test]
    fn embedding_grad_scatters_rows() {
        let mut tape = Tape::<f64>::new();
        let table = tape.input(&t2(&[3, 2], &[0.0; 6]));
        let e = tape.embedding_lookup(table, &[2, 0, 2]).unwrap();
        let ones = tape.constant(t2(&[3, 2], &[1.0; 6]));
        let l = tape.dot(e, ones).unwrap();
        let grads = tape.backward(l).unwrap();
        assert_eq!(
            grads.get(table).unwrap(),
            &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]
        );
    }

    /// One finite-difference check per op, wired through a composite graph so
    /// pullbacks are exercised in combination.
    #[test]
    fn finite_differences_agree_per_op() {
        let x0 = vec![0.3, -1.2, 0.7, 0.05, 1.4, -0.6];
        let eval_loss = |x: &[f64]| -> f64 {
            let mut tape = Tape::<f64>::new();
            let a = tape.input(&t2(&[2, 3], x));
            let w = tape.constant(t2(&[3, 2], &[0.2, -0.4, 0.5, 0.1, -0.3, 0.6]));
            let g = tape.constant(t2(&[3], &[1.1, 0.9, 1.0]));
            let b = tape.constant(t2(&[3], &[0.01, -0.02, 0.0]));
            let ln = tape.layer_norm(a, g, b).unwrap();
            let h = tape.matmul(ln, w).unwrap();
            let bias = tape.constant(t2(&[2], &[0.1, -0.1]));
            let h = tape.add_bias(h, bias).unwrap();
            let h = tape.gelu(h);
            let att = tape.matmul_t(h, h).unwrap();
            let att = tape.scale(att, 0.5);
            let p = tape.softmax_rows(att).unwrap();
            let lp = tape.log(p);
            let mix = tape.matmul(lp, h).unwrap();
            let left = tape.slice_cols(mix, 0, 1).unwrap();
            let right = tape.slice_cols(mix, 1, 1).unwrap();
            let joined = tape.concat_cols(&[left, right]).unwrap();
            let pooled = tape.masked_mean_pool(joined, &[1, 1]).unwrap();
            let pooled2 = tape.masked_mean_pool(h, &[1, 0]).unwrap();
            let stack = tape.concat_rows(&[pooled, pooled2]).unwrap();
            let target = Tensor::from_vec(&[2, 2], vec![0.75, 0.25, 0.5, 0.5]).unwrap();
            let ce = tape.cross_entropy_soft(stack, &target).unwrap();
            let d = tape.dot(pooled, pooled2).unwrap();
            let d = tape.scale(d, 0.3);
            let loss = tape.add(ce, d).unwrap();
            tape.value(loss).item()
        };

        // analytic
        let mut tape = Tape::<f64>::new();
        let a = tape.input(&t2(&[2, 3], &x0));
        let w = tape.constant(t2(&[3, 2], &[0.2, -0.4, 0.5, 0.1, -0.3, 0.6]));
        let g = tape.constant(t2(&[3], &[1.1, 0.9, 1.0]));
        let b = tape.constant(t2(&[3], &[0.01, -0.02, 0.0]));
        let ln = tape.layer_norm(a, g, b).unwrap();
        let h = tape.matmul(ln, w).unwrap();
        let bias = tape.constant(t2(&[2], &[0.1, -0.1]));
        let h = tape.add_bias(h, bias).unwrap();
        let h = tape.gelu(h);
        let att = tape.matmul_t(h, h).unwrap();
        let att = tape.scale(att, 0.5);
        let p = tape.softmax_rows(att).unwrap();
        let lp = tape.log(p);
        let mix = tape.matmul(lp, h).unwrap();
        let left = tape.slice_cols(mix, 0, 1).unwrap();
        let right = tape.slice_cols(mix, 1, 1).unwrap();
        let joined = tape.concat_cols(&[left, right]).unwrap();
        let pooled = tape.masked_mean_pool(joined, &[1, 1]).unwrap();
        let pooled2 = tape.masked_mean_pool(h, &[1, 0]).unwrap();
        let stack = tape.concat_rows(&[pooled, pooled2]).unwrap();
        let target = Tensor::from_vec(&[2, 2], vec![0.75, 0.25, 0.5, 0.5]).unwrap();
        let ce = tape.cross_entropy_soft(stack, &target).unwrap();
        let d = tape.dot(pooled, pooled2).unwrap();
        let d = tape.scale(d, 0.3);
        let loss = tape.add(ce, d).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get(a).unwrap().to_vec();

        let numeric = numeric_grad(&x0, &eval_loss, 1e-5);
        assert_close(&analytic, &numeric, 1e-6, "composite grad");
    }

    #[test]
    fn embedding_and_bias_gradcheck() {
        let x0 = vec![0.5, -0.2, 0.1, 0.9, -0.7, 0.3, 0.0, 0.25];
        let eval_loss = |x: &[f64]| -> f64 {
            let mut tape = Tape::<f64>::new();
            let table = tape.input(&t2(&[4, 2], x));
            let e = tape.embedding_lookup(table, &[1, 3, 1]).unwrap();
            let pooled = tape.masked_mean_pool(e, &[1, 1, 1]).unwrap();
            let l = tape.dot(pooled, pooled).unwrap();
            tape.value(l).item()
        };
        let mut tape = Tape::<f64>::new();
        let table = tape.input(&t2(&[4, 2], &x0));
        let e = tape.embedding_lookup(table, &[1, 3, 1]).unwrap();
        let pooled = tape.masked_mean_pool(e, &[1, 1, 1]).unwrap();
        let l = tape.dot(pooled, pooled).unwrap();
        let grads = tape.backward(l).unwrap();
        let analytic = grads.get(table).unwrap().to_vec();
        let numeric = numeric_grad(&x0, &eval_loss, 1e-5);
        assert_close(&analytic, &numeric, 1e-7, "embedding grad");
    }

    #[test]
    fn f32_instantiation_works_end_to_end() {
        let mut tape = Tape::<f32>::new();
        let a = tape.input(
            &Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0])
                .unwrap()
                .with_grad(),
        );
        let l = tape.dot(a, a).unwrap();
        let grads = tape.backward(l).unwrap();
        assert_eq!(grads.get(a), Some(&[2.0f32, 4.0][..]));
    }
}
