use alloc::vec;
use alloc::vec::Vec;

use super::tape::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Adds `delta` into the gradient slot of `var`, allocating it on first use.
fn accumulate<T: Scalar>(tape: &Tape<T>, grads: &mut [Option<Tensor<T>>], var: Var, delta: impl FnOnce(&mut [T])) {
    if !tape.nodes[var.0].needs_grad {
        return;
    }
    let slot = &mut grads[var.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(tape.nodes[var.0].value.shape()));
    }
    if let Some(g) = slot.as_mut() {
        delta(g.data_mut());
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

/// Lays out the receptive fields of a 1D convolution as rows:
/// `cols[(b, o), k * cin + c] = x[b, o * stride + k - pad, c]`.
fn im2col<T: Scalar>(
    x: &[T],
    batch: usize,
    len: usize,
    cin: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_len: usize,
) -> Vec<T> {
    let width = kernel * cin;
    let mut cols = vec![T::zero(); batch * out_len * width];
    for b in 0..batch {
        for o in 0..out_len {
            let row = &mut cols[(b * out_len + o) * width..][..width];
            for k in 0..kernel {
                let pos = (o * stride + k) as isize - pad as isize;
                if pos < 0 || pos as usize >= len {
                    continue;
                }
                let src = &x[(b * len + pos as usize) * cin..][..cin];
                row[k * cin..(k + 1) * cin].copy_from_slice(src);
            }
        }
    }
    cols
}

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape(), data).expect("same shape");
        self.push(out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    fn check_vector_over_last(&self, op: &'static str, x: Var, v: Var) -> Result<usize> {
        let c = self.value(x).last_dim();
        if self.shape(v) != [c] {
            return Err(Error::shape(op, self.shape(x), self.shape(v)));
        }
        Ok(c)
    }

    /// `x[..., c] + bias[c]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.check_vector_over_last("add_bias", x, bias)?;
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(c) {
            add_into(row, b);
        }
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    /// `x[..., c] * gain[c]`.
    pub fn mul_cols(&mut self, x: Var, gain: Var) -> Result<Var> {
        let c = self.check_vector_over_last("mul_cols", x, gain)?;
        let mut out = self.value(x).clone();
        let g = self.value(gain).data();
        for row in out.data_mut().chunks_mut(c) {
            for (v, &s) in row.iter_mut().zip(g) {
                *v *= s;
            }
        }
        Ok(self.push(out, Op::MulCols(x, gain), &[x, gain]))
    }

    /// `x[b, l, c] + per_batch[b, c]`.
    pub fn add_per_batch(&mut self, x: Var, per_batch: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ps = self.shape(per_batch);
        if xs.len() != 3 || ps != [xs[0], xs[2]] {
            return Err(Error::shape("add_per_batch", xs, ps));
        }
        let (batch, len, c) = (xs[0], xs[1], xs[2]);
        let mut out = self.value(x).clone();
        let p = self.value(per_batch).data();
        for b in 0..batch {
            let row_bias = &p[b * c..(b + 1) * c];
            for row in out.data_mut()[b * len * c..(b + 1) * len * c].chunks_mut(c) {
                add_into(row, row_bias);
            }
        }
        Ok(self.push(out, Op::AddPerBatch(x, per_batch), &[x, per_batch]))
    }

    /// `x[..., k] @ w[k, n]`; the leading dimensions of `x` are flattened into rows.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[0] {
            return Err(Error::shape("matmul", xs, ws));
        }
        let (k, n) = (ws[0], ws[1]);
        let rows = self.value(x).numel() / k.max(1);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = vec![T::zero(); rows * n];
        T::gemm(
            rows,
            k,
            n,
            self.value(x).data(),
            (k, 1),
            self.value(w).data(),
            (n, 1),
            &mut out,
            false,
        );
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::MatMul(x, w), &[x, w]))
    }

    /// Batched product over a leading group dimension. With `ta` the stored
    /// `a` is `[g, k, m]` and is used transposed; likewise `tb` for `b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape("batch_matmul", sa, sb));
        }
        let g = sa[0];
        let (m, ka) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (kb, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if ka != kb {
            return Err(Error::shape("batch_matmul", sa, sb));
        }
        let k = ka;
        let a_strides = if ta { (1, m) } else { (k, 1) };
        let b_strides = if tb { (1, k) } else { (n, 1) };
        let mut out = vec![T::zero(); g * m * n];
        {
            let va = self.value(a).data();
            let vb = self.value(b).data();
            for i in 0..g {
                T::gemm(
                    m,
                    k,
                    n,
                    &va[i * m * k..(i + 1) * m * k],
                    a_strides,
                    &vb[i * k * n..(i + 1) * k * n],
                    b_strides,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let out = Tensor::new(&[g, m, n], out)?;
        Ok(self.push(out, Op::BatchMatMul { a, b, ta, tb }, &[a, b]))
    }

    /// 1D convolution of `x[b, l, cin]` with `w[kernel * cin, cout]`, where
    /// weight row `k * cin + c` multiplies input channel `c` at tap `k`.
    pub fn conv1d(&mut self, x: Var, w: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 3 || ws.len() != 2 || kernel == 0 || stride == 0 || ws[0] != kernel * xs[2] {
            return Err(Error::shape("conv1d", xs, ws));
        }
        let (batch, len, cin) = (xs[0], xs[1], xs[2]);
        let cout = ws[1];
        if len + 2 * pad < kernel {
            return Err(Error::shape("conv1d", xs, ws));
        }
        let out_len = (len + 2 * pad - kernel) / stride + 1;
        let cols = im2col(self.value(x).data(), batch, len, cin, kernel, stride, pad, out_len);
        let mut out = vec![T::zero(); batch * out_len * cout];
        T::gemm(
            batch * out_len,
            kernel * cin,
            cout,
            &cols,
            (kernel * cin, 1),
            self.value(w).data(),
            (cout, 1),
            &mut out,
            false,
        );
        let out = Tensor::new(&[batch, out_len, cout], out)?;
        Ok(self.push(
            out,
            Op::Conv1d {
                x,
                w,
                kernel,
                stride,
                pad,
            },
            &[x, w],
        ))
    }

    /// Nearest-neighbour upsampling along the sequence axis.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 || factor == 0 {
            return Err(Error::shape("upsample", xs, &[factor]));
        }
        let (batch, len, c) = (xs[0], xs[1], xs[2]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(batch * len * factor * c);
        for b in 0..batch {
            for l in 0..len {
                let row = &src[(b * len + l) * c..][..c];
                for _ in 0..factor {
                    out.extend_from_slice(row);
                }
            }
        }
        let out = Tensor::new(&[batch, len * factor, c], out)?;
        Ok(self.push(out, Op::Upsample { x, factor }, &[x]))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let value = self.value(x);
        let c = value.last_dim();
        let mut out = value.clone();
        for row in out.data_mut().chunks_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push(out, Op::Softmax(x), &[x])
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(out, Op::Silu(x), &[x])
    }

    /// Normalizes each row of the last dimension to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let value = self.value(x);
        let c = value.last_dim();
        let n = T::from_usize(c).unwrap();
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let mut out = value.clone();
        let mut inv_std = Vec::with_capacity(value.numel() / c.max(1));
        for row in out.data_mut().chunks_mut(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNorm { x, inv_std }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = self.value(x);
        let n = T::from_usize(value.numel().max(1)).unwrap();
        let total = value.data().iter().copied().sum::<T>() / n;
        self.push(Tensor::scalar(total), Op::Mean(x), &[x])
    }

    /// Rows of `table[n, d]` picked by `index`, giving `[index.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let ts = self.shape(table);
        if ts.len() != 2 {
            return Err(Error::shape("gather_rows", ts, &[index.len()]));
        }
        let (rows, d) = (ts[0], ts[1]);
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather_rows", ts, &[bad]));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(&[index.len(), d], out)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                index: index.to_vec(),
            },
            &[table],
        ))
    }

    /// Concatenates along the last dimension; leading dimensions must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape("concat_last", sa, sb));
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let rows = va.len() / ca.max(1);
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for r in 0..rows {
            out.extend_from_slice(&va[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&vb[r * cb..(r + 1) * cb]);
        }
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::ConcatLast(a, b), &[a, b]))
    }

    /// Concatenates `[b, l1, c]` and `[b, l2, c]` along the sequence axis.
    pub fn concat_seq(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(Error::shape("concat_seq", sa, sb));
        }
        let (batch, la, lb, c) = (sa[0], sa[1], sb[1], sa[2]);
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for i in 0..batch {
            out.extend_from_slice(&va[i * la * c..(i + 1) * la * c]);
            out.extend_from_slice(&vb[i * lb * c..(i + 1) * lb * c]);
        }
        let out = Tensor::new(&[batch, la + lb, c], out)?;
        Ok(self.push(out, Op::ConcatSeq(a, b), &[a, b]))
    }

    /// Positions `start..start + len` of the sequence axis of `[b, l, c]`.
    pub fn slice_seq(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 || start + len > xs[1] {
            return Err(Error::shape("slice_seq", xs, &[start, len]));
        }
        let (batch, l, c) = (xs[0], xs[1], xs[2]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(batch * len * c);
        for b in 0..batch {
            out.extend_from_slice(&src[(b * l + start) * c..(b * l + start + len) * c]);
        }
        let out = Tensor::new(&[batch, len, c], out)?;
        Ok(self.push(out, Op::SliceSeq { x, start }, &[x]))
    }

    /// `[b, l, h * d]` to `[b * h, l, d]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 || heads == 0 || !xs[2].is_multiple_of(heads) {
            return Err(Error::shape("split_heads", xs, &[heads]));
        }
        let (batch, len, c) = (xs[0], xs[1], xs[2]);
        let d = c / heads;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..batch {
            for l in 0..len {
                for h in 0..heads {
                    let from = (b * len + l) * c + h * d;
                    let to = ((b * heads + h) * len + l) * d;
                    out[to..to + d].copy_from_slice(&src[from..from + d]);
                }
            }
        }
        let out = Tensor::new(&[batch * heads, len, d], out)?;
        Ok(self.push(out, Op::SplitHeads { x, heads }, &[x]))
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 || heads == 0 || !xs[0].is_multiple_of(heads) {
            return Err(Error::shape("merge_heads", xs, &[heads]));
        }
        let (bh, len, d) = (xs[0], xs[1], xs[2]);
        let batch = bh / heads;
        let c = heads * d;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..batch {
            for h in 0..heads {
                for l in 0..len {
                    let from = ((b * heads + h) * len + l) * d;
                    let to = (b * len + l) * c + h * d;
                    out[to..to + d].copy_from_slice(&src[from..from + d]);
                }
            }
        }
        let out = Tensor::new(&[batch, len, c], out)?;
        Ok(self.push(out, Op::MergeHeads { x, heads }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Applies the vector-Jacobian product of node `index` to `g`.
    pub(crate) fn backward_op(&self, index: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[index];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(self, grads, *a, |d| add_into(d, gd));
                accumulate(self, grads, *b, |d| add_into(d, gd));
            }
            Op::Sub(a, b) => {
                accumulate(self, grads, *a, |d| add_into(d, gd));
                accumulate(self, grads, *b, |d| {
                    for (d, &v) in d.iter_mut().zip(gd) {
                        *d -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                accumulate(self, grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * vb[i];
                    }
                });
                accumulate(self, grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * va[i];
                    }
                });
            }
            Op::Scale(x, factor) => {
                accumulate(self, grads, *x, |d| {
                    for (d, &v) in d.iter_mut().zip(gd) {
                        *d += v * *factor;
                    }
                });
            }
            Op::AddBias(x, bias) => {
                accumulate(self, grads, *x, |d| add_into(d, gd));
                let c = self.value(*bias).numel();
                accumulate(self, grads, *bias, |d| {
                    for row in gd.chunks(c) {
                        add_into(d, row);
                    }
                });
            }
            Op::MulCols(x, gain) => {
                let c = self.value(*gain).numel();
                let vg = self.value(*gain).data();
                let vx = self.value(*x).data();
                accumulate(self, grads, *x, |d| {
                    for (drow, grow) in d.chunks_mut(c).zip(gd.chunks(c)) {
                        for j in 0..c {
                            drow[j] += grow[j] * vg[j];
                        }
                    }
                });
                accumulate(self, grads, *gain, |d| {
                    for (xrow, grow) in vx.chunks(c).zip(gd.chunks(c)) {
                        for j in 0..c {
                            d[j] += grow[j] * xrow[j];
                        }
                    }
                });
            }
            Op::AddPerBatch(x, per_batch) => {
                accumulate(self, grads, *x, |d| add_into(d, gd));
                let xs = self.shape(*x);
                let (len, c) = (xs[1], xs[2]);
                accumulate(self, grads, *per_batch, |d| {
                    for (b, drow) in d.chunks_mut(c).enumerate() {
                        for row in gd[b * len * c..(b + 1) * len * c].chunks(c) {
                            add_into(drow, row);
                        }
                    }
                });
            }
            Op::MatMul(x, w) => {
                let ws = self.shape(*w);
                let (k, n) = (ws[0], ws[1]);
                let rows = gd.len() / n.max(1);
                let vx = self.value(*x).data();
                let vw = self.value(*w).data();
                accumulate(self, grads, *x, |d| {
                    T::gemm(rows, n, k, gd, (n, 1), vw, (1, n), d, true);
                });
                accumulate(self, grads, *w, |d| {
                    T::gemm(k, rows, n, vx, (1, k), gd, (n, 1), d, true);
                });
            }
            Op::BatchMatMul { a, b, ta, tb } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let groups = sa[0];
                let (m, k) = if *ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
                let n = if *tb { sb[1] } else { sb[2] };
                let a_strides = if *ta { (1, m) } else { (k, 1) };
                let b_strides = if *tb { (1, k) } else { (n, 1) };
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                accumulate(self, grads, *a, |d| {
                    for i in 0..groups {
                        let gi = &gd[i * m * n..(i + 1) * m * n];
                        let bi = &vb[i * k * n..(i + 1) * k * n];
                        let di = &mut d[i * m * k..(i + 1) * m * k];
                        if *ta {
                            // stored [k, m] = B · dCᵀ
                            T::gemm(k, n, m, bi, b_strides, gi, (1, n), di, true);
                        } else {
                            T::gemm(m, n, k, gi, (n, 1), bi, (b_strides.1, b_strides.0), di, true);
                        }
                    }
                });
                accumulate(self, grads, *b, |d| {
                    for i in 0..groups {
                        let gi = &gd[i * m * n..(i + 1) * m * n];
                        let ai = &va[i * m * k..(i + 1) * m * k];
                        let di = &mut d[i * k * n..(i + 1) * k * n];
                        if *tb {
                            // stored [n, k] = dCᵀ · A
                            T::gemm(n, m, k, gi, (1, n), ai, a_strides, di, true);
                        } else {
                            T::gemm(k, m, n, ai, (a_strides.1, a_strides.0), gi, (n, 1), di, true);
                        }
                    }
                });
            }
            Op::Conv1d {
                x,
                w,
                kernel,
                stride,
                pad,
            } => {
                let xs = self.shape(*x);
                let (batch, len, cin) = (xs[0], xs[1], xs[2]);
                let cout = self.shape(*w)[1];
                let out_len = node.value.shape()[1];
                let width = kernel * cin;
                let rows = batch * out_len;
                if self.requires_grad(*w) {
                    let cols = im2col(self.value(*x).data(), batch, len, cin, *kernel, *stride, *pad, out_len);
                    accumulate(self, grads, *w, |d| {
                        T::gemm(width, rows, cout, &cols, (1, width), gd, (cout, 1), d, true);
                    });
                }
                if self.requires_grad(*x) {
                    let mut dcols = vec![T::zero(); rows * width];
                    T::gemm(
                        rows,
                        cout,
                        width,
                        gd,
                        (cout, 1),
                        self.value(*w).data(),
                        (1, cout),
                        &mut dcols,
                        false,
                    );
                    accumulate(self, grads, *x, |d| {
                        for b in 0..batch {
                            for o in 0..out_len {
                                let row = &dcols[(b * out_len + o) * width..][..width];
                                for k in 0..*kernel {
                                    let pos = (o * stride + k) as isize - *pad as isize;
                                    if pos < 0 || pos as usize >= len {
                                        continue;
                                    }
                                    let dst = &mut d[(b * len + pos as usize) * cin..][..cin];
                                    add_into(dst, &row[k * cin..(k + 1) * cin]);
                                }
                            }
                        }
                    });
                }
            }
            Op::Upsample { x, factor } => {
                let xs = self.shape(*x);
                let (batch, len, c) = (xs[0], xs[1], xs[2]);
                accumulate(self, grads, *x, |d| {
                    for b in 0..batch {
                        for l in 0..len {
                            let dst = &mut d[(b * len + l) * c..][..c];
                            for j in 0..*factor {
                                let src = &gd[((b * len + l) * factor + j) * c..][..c];
                                add_into(dst, src);
                            }
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let c = node.value.last_dim();
                accumulate(self, grads, *x, |d| {
                    for ((drow, yrow), grow) in d.chunks_mut(c).zip(y.chunks(c)).zip(gd.chunks(c)) {
                        let dot: T = yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Silu(x) => {
                let vx = self.value(*x).data();
                accumulate(self, grads, *x, |d| {
                    for i in 0..d.len() {
                        let s = sigmoid(vx[i]);
                        d[i] += gd[i] * s * (T::one() + vx[i] * (T::one() - s));
                    }
                });
            }
            Op::LayerNorm { x, inv_std } => {
                let y = node.value.data();
                let c = node.value.last_dim();
                let n = T::from_usize(c).unwrap();
                accumulate(self, grads, *x, |d| {
                    for (r, (drow, (yrow, grow))) in d.chunks_mut(c).zip(y.chunks(c).zip(gd.chunks(c))).enumerate() {
                        let mean_g = grow.iter().copied().sum::<T>() / n;
                        let mean_gy = yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum::<T>() / n;
                        for j in 0..c {
                            drow[j] += inv_std[r] * (grow[j] - mean_g - yrow[j] * mean_gy);
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let v = gd[0];
                accumulate(self, grads, *x, |d| {
                    for d in d.iter_mut() {
                        *d += v;
                    }
                });
            }
            Op::Mean(x) => {
                let n = T::from_usize(self.value(*x).numel().max(1)).unwrap();
                let v = gd[0] / n;
                accumulate(self, grads, *x, |d| {
                    for d in d.iter_mut() {
                        *d += v;
                    }
                });
            }
            Op::GatherRows { table, index } => {
                let dim = self.shape(*table)[1];
                accumulate(self, grads, *table, |d| {
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut d[i * dim..(i + 1) * dim], &gd[r * dim..(r + 1) * dim]);
                    }
                });
            }
            Op::ConcatLast(a, b) => {
                let ca = self.value(*a).last_dim();
                let cb = self.value(*b).last_dim();
                let c = ca + cb;
                accumulate(self, grads, *a, |d| {
                    for (drow, grow) in d.chunks_mut(ca).zip(gd.chunks(c)) {
                        add_into(drow, &grow[..ca]);
                    }
                });
                accumulate(self, grads, *b, |d| {
                    for (drow, grow) in d.chunks_mut(cb).zip(gd.chunks(c)) {
                        add_into(drow, &grow[ca..]);
                    }
                });
            }
            Op::ConcatSeq(a, b) => {
                let sa = self.shape(*a);
                let (la, c) = (sa[1], sa[2]);
                let lb = self.shape(*b)[1];
                let l = la + lb;
                accumulate(self, grads, *a, |d| {
                    for (bi, drow) in d.chunks_mut(la * c).enumerate() {
                        add_into(drow, &gd[bi * l * c..bi * l * c + la * c]);
                    }
                });
                accumulate(self, grads, *b, |d| {
                    for (bi, drow) in d.chunks_mut(lb * c).enumerate() {
                        add_into(drow, &gd[bi * l * c + la * c..(bi + 1) * l * c]);
                    }
                });
            }
            Op::SliceSeq { x, start } => {
                let xs = self.shape(*x);
                let (l, c) = (xs[1], xs[2]);
                let len = node.value.shape()[1];
                accumulate(self, grads, *x, |d| {
                    for (bi, grow) in gd.chunks(len * c).enumerate() {
                        let from = (bi * l + start) * c;
                        add_into(&mut d[from..from + len * c], grow);
                    }
                });
            }
            Op::SplitHeads { x, heads } => {
                let xs = self.shape(*x);
                let (batch, len, c) = (xs[0], xs[1], xs[2]);
                let dh = c / heads;
                accumulate(self, grads, *x, |d| {
                    for b in 0..batch {
                        for l in 0..len {
                            for h in 0..*heads {
                                let to = (b * len + l) * c + h * dh;
                                let from = ((b * heads + h) * len + l) * dh;
                                add_into(&mut d[to..to + dh], &gd[from..from + dh]);
                            }
                        }
                    }
                });
            }
            Op::MergeHeads { x, heads } => {
                let xs = self.shape(*x);
                let (bh, len, dh) = (xs[0], xs[1], xs[2]);
                let c = heads * dh;
                accumulate(self, grads, *x, |d| {
                    for b in 0..bh / heads {
                        for h in 0..*heads {
                            for l in 0..len {
                                let to = ((b * heads + h) * len + l) * dh;
                                let from = (b * len + l) * c + h * dh;
                                add_into(&mut d[to..to + dh], &gd[from..from + dh]);
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                accumulate(self, grads, *x, |d| add_into(d, gd));
            }
        }
        Ok(())
    }
}
