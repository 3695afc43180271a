use super::kernels::{mm_nn, mm_nt, mm_tn};
use super::{shape_err, Real, Tensor, TensorError};

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SoftmaxMasked(Var),
    Gelu(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        scale: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A tape of recorded operations. Backward walks it in exact reverse
/// creation order, accumulating into each input's gradient.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    dropout_key: u64,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            dropout_key: 0,
        }
    }

    /// A graph whose dropout masks are keyed by `key` (derive it from the
    /// global seed, the step and the sample).
    pub fn with_dropout_key(key: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            dropout_key: key,
        }
    }

    pub fn set_dropout_key(&mut self, key: u64) {
        self.dropout_key = key;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf without a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}x{k}] x [{k2}x{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        mm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = self.value(a).dims2();
        let src = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(c, r, out)?, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Add a length-`cols` vector to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let c = self.value(a).dims2().1;
        if self.value(bias).len() != c {
            return Err(shape_err(
                "add_bias",
                format!("bias of {} for {c} columns", self.value(bias).len()),
            ));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, &y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddBias(a, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x * factor).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let (r, c) = self.value(x).dims2();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err("layernorm", format!("gain/bias must have {c} entries")));
        }
        let eps = T::from_f64_lossy(LAYERNORM_EPS);
        let n = T::from_usize(c).expect("usize");
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Row-wise softmax over the allowed entries of `mask` (row-major, same
    /// shape as `x`). Disallowed entries are exactly zero; allowed entries
    /// are renormalized among themselves.
    pub fn softmax_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var, TensorError> {
        let (r, c) = self.value(x).dims2();
        if mask.len() != r * c {
            return Err(shape_err(
                "softmax_masked",
                format!("mask of {} entries for [{r}x{c}]", mask.len()),
            ));
        }
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let m = &mask[i * c..(i + 1) * c];
            let mut max = None::<T>;
            for (&v, &allowed) in row.iter().zip(m) {
                if allowed {
                    max = Some(match max {
                        Some(cur) if cur >= v => cur,
                        _ => v,
                    });
                }
            }
            let max = max.ok_or(TensorError::EmptyMaskRow { row: i })?;
            let mut total = T::zero();
            for j in 0..c {
                if m[j] {
                    let e = (row[j] - max).exp();
                    out[i * c + j] = e;
                    total += e;
                }
            }
            for j in 0..c {
                if m[j] {
                    out[i * c + j] = out[i * c + j] / total;
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::SoftmaxMasked(x), rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| gelu_fwd(v)).collect();
        let value = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Gelu(x), rg)
    }

    /// Gather rows of `table` (`[vocab, dim]`) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (rows, dim) = self.value(table).dims2();
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(shape_err("embedding", format!("id {id} outside table of {rows}")));
            }
            out.extend_from_slice(&src[id * dim..(id + 1) * dim]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::matrix(ids.len(), dim, out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity when `train` is false or `p` is zero. The
    /// mask is a pure function of the graph's dropout key, this node's
    /// position on the tape and the element index.
    pub fn dropout(&mut self, x: Var, p: f64, train: bool) -> Var {
        if !train || p <= 0.0 {
            return x;
        }
        let op_id = self.nodes.len() as u64;
        let key = splitmix64(self.dropout_key ^ splitmix64(op_id));
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let vx = self.value(x);
        let mut scale = Vec::with_capacity(vx.len());
        let mut data = Vec::with_capacity(vx.len());
        for (i, &v) in vx.data().iter().enumerate() {
            let u = (splitmix64(key.wrapping_add(i as u64)) >> 11) as f64 / (1u64 << 53) as f64;
            let s = if u < p { T::zero() } else { keep };
            scale.push(s);
            data.push(v * s);
        }
        let value = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Dropout { x, scale }, rg)
    }

    /// Per-row negative log-likelihood of `targets` under softmax(`logits`).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = self.value(logits).dims2();
        if targets.len() != r {
            return Err(shape_err(
                "cross_entropy",
                format!("{} targets for {r} rows", targets.len()),
            ));
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); r * c];
        let mut nll = Vec::with_capacity(r);
        for i in 0..r {
            let t = targets[i];
            if t >= c {
                return Err(shape_err("cross_entropy", format!("target {t} >= {c}")));
            }
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + total.ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
            nll.push(lse - row[t]);
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::vector(nll),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = self.value(x).dims2();
        if start + len > c {
            return Err(shape_err("slice_cols", format!("{start}+{len} > {c}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(r, len, out)?, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let r = self.value(parts[0]).dims2().0;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.value(p).dims2();
            if pr != r {
                return Err(shape_err("concat_cols", format!("{pr} rows vs {r}")));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(r, total, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let c = self.value(parts[0]).dims2().1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.value(p).dims2();
            if pc != c {
                return Err(shape_err("concat_rows", format!("{pc} cols vs {c}")));
            }
            rows += pr;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, c, out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = self.value(x).dims2();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(shape_err("select_rows", format!("row {i} >= {r}")));
            }
            out.extend_from_slice(self.value(x).row(i));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::matrix(rows.len(), c, out)?,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Reverse pass from a scalar. Returns gradients for every node that
    /// depends on a `param` leaf.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let acc = |v: Var, grads: &mut [Option<Vec<T>>]| -> Option<usize> {
            if self.rg(v) {
                let len = self.value(v).len();
                grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
                Some(v.0)
            } else {
                None
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).dims2().1;
                if let Some(ia) = acc(*a, grads) {
                    let out = grads[ia].as_mut().unwrap();
                    mm_nt(g, self.value(*b).data(), out, m, n, k);
                }
                if let Some(ib) = acc(*b, grads) {
                    let out = grads[ib].as_mut().unwrap();
                    mm_tn(self.value(*a).data(), g, out, k, m, n);
                }
            }
            Op::Transpose(a) => {
                if let Some(ia) = acc(*a, grads) {
                    let (r, c) = self.value(*a).dims2();
                    let out = grads[ia].as_mut().unwrap();
                    for i in 0..r {
                        for j in 0..c {
                            out[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(iv) = acc(v, grads) {
                        add_into(grads[iv].as_mut().unwrap(), g);
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if let Some(ia) = acc(*a, grads) {
                    add_into(grads[ia].as_mut().unwrap(), g);
                }
                if let Some(ib) = acc(*bias, grads) {
                    let c = self.value(*bias).len();
                    let out = grads[ib].as_mut().unwrap();
                    for row in g.chunks(c) {
                        add_into(out, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ia) = acc(*a, grads) {
                    let out = grads[ia].as_mut().unwrap();
                    for i in 0..g.len() {
                        out[i] += g[i] * vb[i];
                    }
                }
                if let Some(ib) = acc(*b, grads) {
                    let out = grads[ib].as_mut().unwrap();
                    for i in 0..g.len() {
                        out[i] += g[i] * va[i];
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ia) = acc(*a, grads) {
                    let out = grads[ia].as_mut().unwrap();
                    for i in 0..g.len() {
                        out[i] += g[i] * *f;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = self.value(*x).dims2();
                let gam = self.value(*gamma).data();
                if let Some(ig) = acc(*gamma, grads) {
                    let out = grads[ig].as_mut().unwrap();
                    for i in 0..r {
                        for j in 0..c {
                            out[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                }
                if let Some(ib) = acc(*beta, grads) {
                    let out = grads[ib].as_mut().unwrap();
                    for row in g.chunks(c) {
                        add_into(out, row);
                    }
                }
                if let Some(ix) = acc(*x, grads) {
                    let n = T::from_usize(c).unwrap();
                    let out = grads[ix].as_mut().unwrap();
                    for i in 0..r {
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for j in 0..c {
                            let d = g[i * c + j] * gam[j];
                            sum_d += d;
                            sum_dh += d * xhat[i * c + j];
                        }
                        let k = inv_std[i] / n;
                        for j in 0..c {
                            let d = g[i * c + j] * gam[j];
                            out[i * c + j] += k * (n * d - sum_d - xhat[i * c + j] * sum_dh);
                        }
                    }
                }
            }
            Op::SoftmaxMasked(x) => {
                if let Some(ix) = acc(*x, grads) {
                    let y = node.value.data();
                    let (r, c) = node.value.dims2();
                    let out = grads[ix].as_mut().unwrap();
                    for i in 0..r {
                        let mut dot = T::zero();
                        for j in 0..c {
                            dot += g[i * c + j] * y[i * c + j];
                        }
                        for j in 0..c {
                            let yj = y[i * c + j];
                            if yj != T::zero() {
                                out[i * c + j] += yj * (g[i * c + j] - dot);
                            }
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if let Some(ix) = acc(*x, grads) {
                    let vx = self.value(*x).data();
                    let out = grads[ix].as_mut().unwrap();
                    for i in 0..g.len() {
                        out[i] += g[i] * gelu_grad(vx[i]);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(it) = acc(*table, grads) {
                    let dim = self.value(*table).dims2().1;
                    let out = grads[it].as_mut().unwrap();
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut out[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim]);
                    }
                }
            }
            Op::Dropout { x, scale } => {
                if let Some(ix) = acc(*x, grads) {
                    let out = grads[ix].as_mut().unwrap();
                    for i in 0..g.len() {
                        out[i] += g[i] * scale[i];
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if let Some(il) = acc(*logits, grads) {
                    let c = self.value(*logits).dims2().1;
                    let out = grads[il].as_mut().unwrap();
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            out[i * c + j] += g[i] * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if let Some(ix) = acc(*x, grads) {
                    let c = self.value(*x).dims2().1;
                    let (r, len) = node.value.dims2();
                    let out = grads[ix].as_mut().unwrap();
                    for i in 0..r {
                        add_into(
                            &mut out[i * c + start..i * c + start + len],
                            &g[i * len..(i + 1) * len],
                        );
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).dims2().1;
                    if let Some(ip) = acc(p, grads) {
                        let out = grads[ip].as_mut().unwrap();
                        for i in 0..r {
                            add_into(
                                &mut out[i * pc..(i + 1) * pc],
                                &g[i * total + offset..i * total + offset + pc],
                            );
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(ip) = acc(p, grads) {
                        add_into(grads[ip].as_mut().unwrap(), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SelectRows { x, rows } => {
                if let Some(ix) = acc(*x, grads) {
                    let c = self.value(*x).dims2().1;
                    let out = grads[ix].as_mut().unwrap();
                    for (r, &i) in rows.iter().enumerate() {
                        add_into(&mut out[i * c..(i + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(ix) = acc(*x, grads) {
                    let out = grads[ix].as_mut().unwrap();
                    for o in out.iter_mut() {
                        *o += g[0];
                    }
                }
            }
        }
    }
}

fn add_into<T: Real>(out: &mut [T], g: &[T]) {
    for (o, &v) in out.iter_mut().zip(g) {
        *o += v;
    }
}

fn gelu_consts<T: Real>() -> (T, T) {
    (
        T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt()),
        T::from_f64_lossy(0.044715),
    )
}

fn gelu_fwd<T: Real>(x: T) -> T {
    let (c, a) = gelu_consts::<T>();
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let (c, a) = gelu_consts::<T>();
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
