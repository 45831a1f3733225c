//! Recording tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value and the ids of its
//! parents. Recording order is a topological order, so [`Tape::backward`]
//! walks the node list once in reverse.

use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    MatMul(Var, Var),
    Dense { x: Var, w: Var, b: Var },
    Conv1d { x: Var, k: Var, b: Var, stride: usize, pad: usize },
    AvgPool1d { x: Var, width: usize, stride: usize },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Softmax { x: Var, axis: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    MeanAxis { x: Var, axis: usize },
    ScaleRows { x: Var, s: Var },
    Sum(Var),
    Mean(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    CrossEntropy { probs: Var, labels: Vec<usize> },
    GaussianKl { mean: Var, log_var: Var },
    Mse { x: Var, x_hat: Var },
    Reparameterize { mean: Var, log_var: Var, noise: Vec<f64>, scale: f64 },
    /// Per row: `r, u, n, (h Un + bn)`, each `hidden` wide.
    GruCell { proj: Var, row: usize, h: Var, wh: Var, bh: Var, cache: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// d loss / d var; zeros when `var` did not participate in the loss.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn get_data(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

/// Operation recorder. One tape per worker; tapes are not shared.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// `(outer, axis_len, inner)` strides for reducing or splitting along `axis`.
fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

/// `out[m,n] += a[m,k] * b[k,n]`.
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`.
fn gemm_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`.
fn gemm_at_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var, AutodiffError> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(AutodiffError::NonFinite {
                op: op_name(&op),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("zip shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("map shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, AutodiffError> {
        let v = self.map(x, |a| scale * a + shift);
        let rg = self.rg(x);
        self.push(v, Op::Affine { x, scale }, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg)
    }

    /// `x W + b` over the last axis of `x`; `w` is `[in, out]`, `b` is `[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        let fan_in = sx.last().copied().unwrap_or(0);
        if sw.len() != 2 || sw[0] != fan_in || sb != [sw[1]] {
            return Err(mismatch("dense", sx, sw));
        }
        let (rows, _) = self.value(x).rows_cols();
        let out_dim = sw[1];
        let mut out = Vec::with_capacity(rows * out_dim);
        for _ in 0..rows {
            out.extend_from_slice(self.data(b));
        }
        gemm_acc(self.data(x), self.data(w), &mut out, rows, fan_in, out_dim);
        let mut shape = sx.to_vec();
        *shape.last_mut().expect("rank >= 1") = out_dim;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Tensor::new(shape, out)?, Op::Dense { x, w, b }, rg)
    }

    /// Cross-correlation of `x: [N, C_in, L]` with `k: [C_out, C_in, K]`,
    /// zero padding `pad` on both ends, plus per-channel bias `b: [C_out]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, AutodiffError> {
        let (sx, sk, sb) = (self.shape(x), self.shape(k), self.shape(b));
        if sx.len() != 3 || sk.len() != 3 || sx[1] != sk[1] || sb != [sk[0]] || stride == 0 {
            return Err(mismatch("conv1d", sx, sk));
        }
        let (n, cin, len) = (sx[0], sx[1], sx[2]);
        let (cout, kw) = (sk[0], sk[2]);
        if len + 2 * pad < kw {
            return Err(mismatch("conv1d", sx, sk));
        }
        let lout = (len + 2 * pad - kw) / stride + 1;
        let (xd, kd, bd) = (self.data(x), self.data(k), self.data(b));
        let mut out = vec![0.0; n * cout * lout];
        for s in 0..n {
            for o in 0..cout {
                let orow = &mut out[(s * cout + o) * lout..(s * cout + o + 1) * lout];
                orow.iter_mut().for_each(|v| *v = bd[o]);
                for c in 0..cin {
                    let xrow = &xd[(s * cin + c) * len..(s * cin + c + 1) * len];
                    let krow = &kd[(o * cin + c) * kw..(o * cin + c + 1) * kw];
                    for (t, ov) in orow.iter_mut().enumerate() {
                        let base = (t * stride) as isize - pad as isize;
                        let mut acc = 0.0;
                        for (j, &kv) in krow.iter().enumerate() {
                            let i = base + j as isize;
                            if i >= 0 && (i as usize) < len {
                                acc += kv * xrow[i as usize];
                            }
                        }
                        *ov += acc;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(k) || self.rg(b);
        let v = Tensor::new(vec![n, cout, lout], out)?;
        self.push(v, Op::Conv1d { x, k, b, stride, pad }, rg)
    }

    /// Average pooling over the last axis.
    pub fn avg_pool1d(&mut self, x: Var, width: usize, stride: usize) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        let len = sx.last().copied().unwrap_or(0);
        if width == 0 || stride == 0 || len < width {
            return Err(mismatch("avg_pool1d", &sx, &[width, stride]));
        }
        let lout = (len - width) / stride + 1;
        let rows = self.value(x).len() / len;
        let xd = self.data(x);
        let mut out = Vec::with_capacity(rows * lout);
        for r in 0..rows {
            let row = &xd[r * len..(r + 1) * len];
            for t in 0..lout {
                out.push(row[t * stride..t * stride + width].iter().sum::<f64>() / width as f64);
            }
        }
        let mut shape = sx;
        *shape.last_mut().expect("rank >= 1") = lout;
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::AvgPool1d { x, width, stride }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.map(x, |a| a.max(0.0));
        let rg = self.rg(x);
        self.push(v, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.map(x, f64::tanh);
        let rg = self.rg(x);
        self.push(v, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.map(x, |a| {
            if a >= 0.0 {
                1.0 / (1.0 + (-a).exp())
            } else {
                let e = a.exp();
                e / (1.0 + e)
            }
        });
        let rg = self.rg(x);
        self.push(v, Op::Sigmoid(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.map(x, f64::exp);
        let rg = self.rg(x);
        self.push(v, Op::Exp(x), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(mismatch("softmax", &sx, &[axis]));
        }
        let (outer, alen, inner) = axis_strides(&sx, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * alen + a) * inner + i;
                let max = (0..alen).map(|a| xd[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for a in 0..alen {
                    let e = (xd[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    total += e;
                }
                for a in 0..alen {
                    out[idx(a)] /= total;
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(sx, out)?, Op::Softmax { x, axis }, rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .map(|&p| self.shape(p).to_vec())
            .ok_or_else(|| mismatch("concat", &[], &[]))?;
        if axis >= first.len() {
            return Err(mismatch("concat", &first, &[axis]));
        }
        let mut total_axis = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &first, s));
            }
            total_axis += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.data(p)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total_axis;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || start + len > sx[axis] {
            return Err(mismatch("slice", &sx, &[axis, start, len]));
        }
        let (outer, alen, inner) = axis_strides(&sx, axis);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * alen + start) * inner;
            out.extend_from_slice(&xd[from..from + len * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::Slice { x, axis, start }, rg)
    }

    /// Mean along `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || sx[axis] == 0 {
            return Err(mismatch("mean_axis", &sx, &[axis]));
        }
        let (outer, alen, inner) = axis_strides(&sx, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..alen {
                let src = &xd[(o * alen + a) * inner..(o * alen + a + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= alen as f64);
        let mut shape = sx;
        shape.remove(axis);
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::MeanAxis { x, axis }, rg)
    }

    /// Scales row `r` of `x: [B, F]` by `s[r]`, with `s: [B, 1]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var, AutodiffError> {
        let (sx, ss) = (self.shape(x), self.shape(s));
        if sx.len() != 2 || ss != [sx[0], 1] {
            return Err(mismatch("scale_rows", sx, ss));
        }
        let f = sx[1];
        let sd = self.data(s);
        let out = self
            .data(x)
            .chunks(f.max(1))
            .zip(sd)
            .flat_map(|(row, &k)| row.iter().map(move |v| v * k))
            .collect();
        let shape = sx.to_vec();
        let rg = self.rg(x) || self.rg(s);
        self.push(Tensor::new(shape, out)?, Op::ScaleRows { x, s }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = Tensor::scalar(self.data(x).iter().sum());
        let rg = self.rg(x);
        self.push(v, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(mismatch("mean", self.shape(x), &[]));
        }
        let v = Tensor::scalar(self.data(x).iter().sum::<f64>() / n as f64);
        let rg = self.rg(x);
        self.push(v, Op::Mean(x), rg)
    }

    fn check_labels(&self, op: &'static str, x: Var, labels: &[usize]) -> Result<(usize, usize), AutodiffError> {
        let sx = self.shape(x);
        if sx.len() != 2 || sx[0] != labels.len() || sx[0] == 0 {
            return Err(mismatch(op, sx, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= sx[1]) {
            return Err(AutodiffError::DomainError(format!(
                "{op}: label {bad} outside 0..{}",
                sx[1]
            )));
        }
        Ok((sx[0], sx[1]))
    }

    /// Mean over the batch of `-ln p[label]` for probability rows `probs: [B, M]`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var, AutodiffError> {
        let (b, m) = self.check_labels("cross_entropy", probs, labels)?;
        let pd = self.data(probs);
        let mut total = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let p = pd[r * m + l];
            if p <= 0.0 {
                return Err(AutodiffError::DomainError(format!(
                    "cross_entropy: p[{r}][{l}] = {p} is not positive"
                )));
            }
            total -= p.ln();
        }
        let v = Tensor::scalar(total / b as f64);
        let rg = self.rg(probs);
        self.push(
            v,
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            rg,
        )
    }

    /// Fused softmax + cross-entropy on raw logits `[B, M]`; the gradient
    /// with respect to the logits is `(softmax - onehot) / B`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, AutodiffError> {
        let (b, m) = self.check_labels("softmax_cross_entropy", logits, labels)?;
        let ld = self.data(logits);
        let mut probs = vec![0.0; b * m];
        let mut total = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let row = &ld[r * m..(r + 1) * m];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for (p, &v) in probs[r * m..(r + 1) * m].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
            total += lse - row[l];
        }
        let v = Tensor::scalar(total / b as f64);
        let rg = self.rg(logits);
        self.push(
            v,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// KL(N(mean, exp(log_var)) || N(0, I)) summed over the last axis and
    /// averaged over the remaining rows.
    pub fn gaussian_kl(&mut self, mean: Var, log_var: Var) -> Result<Var, AutodiffError> {
        self.same_shape("gaussian_kl", mean, log_var)?;
        let (rows, _) = self.value(mean).rows_cols();
        let total: f64 = self
            .data(mean)
            .iter()
            .zip(self.data(log_var))
            .map(|(&m, &lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
            .sum();
        let v = Tensor::scalar(total / rows.max(1) as f64);
        let rg = self.rg(mean) || self.rg(log_var);
        self.push(v, Op::GaussianKl { mean, log_var }, rg)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, x: Var, x_hat: Var) -> Result<Var, AutodiffError> {
        self.same_shape("reconstruction_loss", x, x_hat)?;
        let n = self.value(x).len().max(1);
        let total: f64 = self
            .data(x)
            .iter()
            .zip(self.data(x_hat))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let rg = self.rg(x) || self.rg(x_hat);
        self.push(Tensor::scalar(total / n as f64), Op::Mse { x, x_hat }, rg)
    }

    /// `mean + scale * exp(0.5 * log_var) * noise`, with `noise` standard
    /// normal draws of the same length (pathwise estimator).
    pub fn reparameterize_with(
        &mut self,
        mean: Var,
        log_var: Var,
        scale: f64,
        noise: Vec<f64>,
    ) -> Result<Var, AutodiffError> {
        self.same_shape("reparameterize", mean, log_var)?;
        if noise.len() != self.value(mean).len() {
            return Err(mismatch("reparameterize", self.shape(mean), &[noise.len()]));
        }
        let data = self
            .data(mean)
            .iter()
            .zip(self.data(log_var))
            .zip(&noise)
            .map(|((&m, &lv), &e)| m + scale * (0.5 * lv).exp() * e)
            .collect();
        let v = Tensor::new(self.shape(mean).to_vec(), data)?;
        let rg = self.rg(mean) || self.rg(log_var);
        self.push(
            v,
            Op::Reparameterize {
                mean,
                log_var,
                noise,
                scale,
            },
            rg,
        )
    }

    /// One GRU step. `proj` holds the input projections `x Wx + bx` for
    /// all steps as `[T * B, 3H]`; rows `row..row + B` belong to this step.
    /// Gate order within the `3H` columns is reset, update, candidate:
    /// `r = σ(px_r + h Ur + br)`, `u = σ(px_u + h Uu + bu)`,
    /// `n = tanh(px_n + r ⊙ (h Un + bn))`, `h' = (1 - u) ⊙ n + u ⊙ h`.
    pub fn gru_cell(&mut self, proj: Var, row: usize, h: Var, wh: Var, bh: Var) -> Result<Var, AutodiffError> {
        let (sp, sh, sw) = (self.shape(proj), self.shape(h), self.shape(wh));
        if sh.len() != 2 || sw.len() != 2 || sp.len() != 2 {
            return Err(mismatch("gru_cell", sh, sw));
        }
        let (batch, hidden) = (sh[0], sh[1]);
        if sw != [hidden, 3 * hidden] || self.shape(bh) != [3 * hidden] || sp[1] != 3 * hidden || row + batch > sp[0] {
            return Err(mismatch("gru_cell", sp, sw));
        }
        let mut hp = Vec::with_capacity(batch * 3 * hidden);
        for _ in 0..batch {
            hp.extend_from_slice(self.data(bh));
        }
        gemm_acc(self.data(h), self.data(wh), &mut hp, batch, hidden, 3 * hidden);
        let px = &self.data(proj)[row * 3 * hidden..(row + batch) * 3 * hidden];
        let hd = self.data(h);
        let mut out = vec![0.0; batch * hidden];
        let mut cache = vec![0.0; batch * 4 * hidden];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for b in 0..batch {
            let (p, q) = (&px[b * 3 * hidden..], &hp[b * 3 * hidden..]);
            let c = &mut cache[b * 4 * hidden..(b + 1) * 4 * hidden];
            for j in 0..hidden {
                let r = sig(p[j] + q[j]);
                let u = sig(p[hidden + j] + q[hidden + j]);
                let hn = q[2 * hidden + j];
                let n = (p[2 * hidden + j] + r * hn).tanh();
                out[b * hidden + j] = n + u * (hd[b * hidden + j] - n);
                c[j] = r;
                c[hidden + j] = u;
                c[2 * hidden + j] = n;
                c[3 * hidden + j] = hn;
            }
        }
        let rg = self.rg(proj) || self.rg(h) || self.rg(wh) || self.rg(bh);
        self.push(
            Tensor::matrix(batch, hidden, out),
            Op::GruCell {
                proj,
                row,
                h,
                wh,
                bh,
                cache,
            },
            rg,
        )
    }

    /// Populates gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let loss_shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NotScalar(loss_shape.to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((d, s), o) in ga.iter_mut().zip(g).zip(bd) {
                        *d += s * o;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for ((d, s), o) in gb.iter_mut().zip(g).zip(ad) {
                        *d += s * o;
                    }
                }
            }
            Op::Affine { x, scale } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, s)| *d += scale * s);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(ga) = slot(nodes, grads, *a) {
                    gemm_bt_acc(g, bd, ga, m, k, n);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    gemm_at_acc(ad, g, gb, m, k, n);
                }
            }
            Op::Dense { x, w, b } => {
                let sw = self.shape(*w);
                let (k, n) = (sw[0], sw[1]);
                let (rows, _) = self.value(*x).rows_cols();
                let (xd, wd) = (self.data(*x), self.data(*w));
                if let Some(gx) = slot(nodes, grads, *x) {
                    gemm_bt_acc(g, wd, gx, rows, k, n);
                }
                if let Some(gw) = slot(nodes, grads, *w) {
                    gemm_at_acc(xd, g, gw, rows, k, n);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Conv1d { x, k, b, stride, pad } => {
                let (sx, sk) = (self.shape(*x), self.shape(*k));
                let (n, cin, len) = (sx[0], sx[1], sx[2]);
                let (cout, kw) = (sk[0], sk[2]);
                let lout = node.value.shape()[2];
                let (xd, kd) = (self.data(*x), self.data(*k));
                let taps = |t: usize| {
                    let base = (t * stride) as isize - *pad as isize;
                    (0..kw).filter_map(move |j| {
                        let i = base + j as isize;
                        (i >= 0 && (i as usize) < len).then_some((j, i as usize))
                    })
                };
                if let Some(gx) = slot(nodes, grads, *x) {
                    for s in 0..n {
                        for o in 0..cout {
                            let grow = &g[(s * cout + o) * lout..(s * cout + o + 1) * lout];
                            for c in 0..cin {
                                let krow = &kd[(o * cin + c) * kw..(o * cin + c + 1) * kw];
                                let gxrow = &mut gx[(s * cin + c) * len..(s * cin + c + 1) * len];
                                for (t, &gv) in grow.iter().enumerate() {
                                    for (j, i) in taps(t) {
                                        gxrow[i] += gv * krow[j];
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(gk) = slot(nodes, grads, *k) {
                    for s in 0..n {
                        for o in 0..cout {
                            let grow = &g[(s * cout + o) * lout..(s * cout + o + 1) * lout];
                            for c in 0..cin {
                                let xrow = &xd[(s * cin + c) * len..(s * cin + c + 1) * len];
                                let gkrow = &mut gk[(o * cin + c) * kw..(o * cin + c + 1) * kw];
                                for (t, &gv) in grow.iter().enumerate() {
                                    for (j, i) in taps(t) {
                                        gkrow[j] += gv * xrow[i];
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for s in 0..n {
                        for (o, d) in gb.iter_mut().enumerate() {
                            *d += g[(s * cout + o) * lout..(s * cout + o + 1) * lout].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::AvgPool1d { x, width, stride } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let len = *self.shape(*x).last().expect("rank");
                    let lout = *node.value.shape().last().expect("rank");
                    let w = *width as f64;
                    for (r, grow) in g.chunks(lout).enumerate() {
                        for (t, &gv) in grow.iter().enumerate() {
                            let start = r * len + t * stride;
                            gx[start..start + width].iter_mut().for_each(|d| *d += gv / w);
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xd = self.data(*x);
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((d, s), &v) in gx.iter_mut().zip(g).zip(xd) {
                        if v > 0.0 {
                            *d += s;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((d, s), &t) in gx.iter_mut().zip(g).zip(y) {
                        *d += s * (1.0 - t * t);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((d, s), &t) in gx.iter_mut().zip(g).zip(y) {
                        *d += s * t * (1.0 - t);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((d, s), &t) in gx.iter_mut().zip(g).zip(y) {
                        *d += s * t;
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, alen, inner) = axis_strides(node.value.shape(), *axis);
                if let Some(gx) = slot(nodes, grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |a: usize| (o * alen + a) * inner + i;
                            let dot: f64 = (0..alen).map(|a| g[idx(a)] * y[idx(a)]).sum();
                            for a in 0..alen {
                                gx[idx(a)] += y[idx(a)] * (g[idx(a)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let block = self.shape(p)[*axis] * inner;
                    if let Some(gp) = slot(nodes, grads, p) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + block];
                            gp[o * block..(o + 1) * block]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += block;
                }
            }
            Op::Slice { x, axis, start } => {
                let sx = self.shape(*x);
                let (outer, alen, inner) = axis_strides(sx, *axis);
                let len = node.value.shape()[*axis];
                if let Some(gx) = slot(nodes, grads, *x) {
                    for o in 0..outer {
                        let to = (o * alen + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        gx[to..to + len * inner].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::MeanAxis { x, axis } => {
                let (outer, alen, inner) = axis_strides(self.shape(*x), *axis);
                if let Some(gx) = slot(nodes, grads, *x) {
                    let k = 1.0 / alen as f64;
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for a in 0..alen {
                            gx[(o * alen + a) * inner..(o * alen + a + 1) * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, s)| *d += s * k);
                        }
                    }
                }
            }
            Op::ScaleRows { x, s } => {
                let f = self.shape(*x)[1].max(1);
                let (xd, sd) = (self.data(*x), self.data(*s));
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((grow, gr), &k) in gx.chunks_mut(f).zip(g.chunks(f)).zip(sd) {
                        grow.iter_mut().zip(gr).for_each(|(d, v)| *d += v * k);
                    }
                }
                if let Some(gs) = slot(nodes, grads, *s) {
                    for ((d, gr), xr) in gs.iter_mut().zip(g.chunks(f)).zip(xd.chunks(f)) {
                        *d += gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let k = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|d| *d += k);
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                if let Some(gl) = slot(nodes, grads, *logits) {
                    let m = probs.len() / labels.len();
                    let k = g[0] / labels.len() as f64;
                    for (r, &l) in labels.iter().enumerate() {
                        for c in 0..m {
                            let onehot = if c == l { 1.0 } else { 0.0 };
                            gl[r * m + c] += k * (probs[r * m + c] - onehot);
                        }
                    }
                }
            }
            Op::CrossEntropy { probs, labels } => {
                let pd = self.data(*probs);
                if let Some(gp) = slot(nodes, grads, *probs) {
                    let m = pd.len() / labels.len();
                    let k = g[0] / labels.len() as f64;
                    for (r, &l) in labels.iter().enumerate() {
                        gp[r * m + l] -= k / pd[r * m + l];
                    }
                }
            }
            Op::GaussianKl { mean, log_var } => {
                let (rows, _) = self.value(*mean).rows_cols();
                let k = g[0] / rows.max(1) as f64;
                let (md, lvd) = (self.data(*mean), self.data(*log_var));
                if let Some(gm) = slot(nodes, grads, *mean) {
                    gm.iter_mut().zip(md).for_each(|(d, &m)| *d += k * m);
                }
                if let Some(glv) = slot(nodes, grads, *log_var) {
                    glv.iter_mut()
                        .zip(lvd)
                        .for_each(|(d, &lv)| *d += k * 0.5 * (lv.exp() - 1.0));
                }
            }
            Op::Mse { x, x_hat } => {
                let (xd, hd) = (self.data(*x), self.data(*x_hat));
                let k = 2.0 * g[0] / xd.len().max(1) as f64;
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((d, a), b) in gx.iter_mut().zip(xd).zip(hd) {
                        *d += k * (a - b);
                    }
                }
                if let Some(gh) = slot(nodes, grads, *x_hat) {
                    for ((d, a), b) in gh.iter_mut().zip(xd).zip(hd) {
                        *d -= k * (a - b);
                    }
                }
            }
            Op::GruCell {
                proj,
                row,
                h,
                wh,
                bh,
                cache,
            } => {
                let (batch, hidden) = (self.shape(*h)[0], self.shape(*h)[1]);
                let hd = self.data(*h);
                // gradients of the x-side and h-side pre-activations
                let mut dpx = vec![0.0; batch * 3 * hidden];
                let mut dhp = vec![0.0; batch * 3 * hidden];
                let mut dh_direct = vec![0.0; batch * hidden];
                for b in 0..batch {
                    let c = &cache[b * 4 * hidden..(b + 1) * 4 * hidden];
                    let o = b * 3 * hidden;
                    for j in 0..hidden {
                        let (r, u, n, hn) = (c[j], c[hidden + j], c[2 * hidden + j], c[3 * hidden + j]);
                        let gv = g[b * hidden + j];
                        let dn = gv * (1.0 - u) * (1.0 - n * n);
                        let du = gv * (hd[b * hidden + j] - n) * u * (1.0 - u);
                        let dr = dn * hn * r * (1.0 - r);
                        dpx[o + j] = dr;
                        dpx[o + hidden + j] = du;
                        dpx[o + 2 * hidden + j] = dn;
                        dhp[o + j] = dr;
                        dhp[o + hidden + j] = du;
                        dhp[o + 2 * hidden + j] = dn * r;
                        dh_direct[b * hidden + j] = gv * u;
                    }
                }
                if let Some(gp) = slot(nodes, grads, *proj) {
                    let start = row * 3 * hidden;
                    gp[start..start + dpx.len()].iter_mut().zip(&dpx).for_each(|(d, s)| *d += s);
                }
                if let Some(gh) = slot(nodes, grads, *h) {
                    gh.iter_mut().zip(&dh_direct).for_each(|(d, s)| *d += s);
                    gemm_bt_acc(&dhp, self.data(*wh), gh, batch, hidden, 3 * hidden);
                }
                if let Some(gw) = slot(nodes, grads, *wh) {
                    gemm_at_acc(hd, &dhp, gw, batch, hidden, 3 * hidden);
                }
                if let Some(gb) = slot(nodes, grads, *bh) {
                    for rowv in dhp.chunks(3 * hidden) {
                        gb.iter_mut().zip(rowv).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Reparameterize {
                mean,
                log_var,
                noise,
                scale,
            } => {
                let lvd = self.data(*log_var);
                if let Some(gm) = slot(nodes, grads, *mean) {
                    gm.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if let Some(glv) = slot(nodes, grads, *log_var) {
                    for (((d, s), &lv), &e) in glv.iter_mut().zip(g).zip(lvd).zip(noise) {
                        *d += s * scale * 0.5 * (0.5 * lv).exp() * e;
                    }
                }
            }
        }
    }
}

/// Accumulator for parent `v`, or `None` when it needs no gradient.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Affine { .. } => "affine",
        Op::MatMul(..) => "matmul",
        Op::Dense { .. } => "dense",
        Op::Conv1d { .. } => "conv1d",
        Op::AvgPool1d { .. } => "avg_pool1d",
        Op::Relu(_) => "relu",
        Op::Tanh(_) => "tanh",
        Op::Sigmoid(_) => "sigmoid",
        Op::Exp(_) => "exp",
        Op::Softmax { .. } => "softmax",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::MeanAxis { .. } => "mean_axis",
        Op::ScaleRows { .. } => "scale_rows",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::GaussianKl { .. } => "gaussian_kl",
        Op::Mse { .. } => "reconstruction_loss",
        Op::Reparameterize { .. } => "reparameterize",
        Op::GruCell { .. } => "gru_cell",
    }
}
