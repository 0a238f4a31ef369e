use std::sync::Arc;

use super::{Graph, Op, SampleMap, Value};
use crate::error::{Error, Result};
use crate::tensor::{permute_data, split_axis, Scalar, Tensor};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Axis {
            op,
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// im2col for a `[cin, h, w]` input; columns are `[cin*k*k, ho*wo]`.
pub(crate) fn im2col<T: Scalar>(
    x: &[T],
    (cin, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
) -> Vec<T> {
    let mut cols = vec![T::zero(); cin * k * k * ho * wo];
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dst[oy * wo + ox] = x[(c * h + iy as usize) * w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

impl<T: Scalar> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Value, b: Value) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn elementwise2(
        &mut self,
        op_name: &'static str,
        a: Value,
        b: Value,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<Value> {
        self.same_shape(op_name, a, b)?;
        let (da, db) = (self.data(a), self.data(b));
        let data = da.data().iter().zip(db.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(da.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg, Vec::new()))
    }

    fn unary(&mut self, x: Value, f: impl Fn(T) -> T, op: Op) -> Value {
        let t = self.data(x).map(f);
        let rg = self.rg(x);
        self.push(t, op, rg, Vec::new())
    }

    /// `a @ b` over the last two axes. `b` is either a shared `[k, n]` matrix or
    /// carries the same leading batch axes as `a`.
    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.matmul_impl(a, b, false)
    }

    /// `a @ bᵀ` over the last two axes.
    pub fn matmul_t(&mut self, a: Value, b: Value) -> Result<Value> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Value, b: Value, trans_b: bool) -> Result<Value> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let err = || Error::shape(if trans_b { "matmul_t" } else { "matmul" }, &sa, &sb);
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if k != kb {
            return Err(err());
        }
        let lead = &sa[..sa.len() - 2];
        let batch: usize = lead.iter().product();
        let shared_b = sb.len() == 2;
        if !shared_b && &sb[..sb.len() - 2] != lead {
            return Err(err());
        }
        let b_strides = if trans_b { (1, k) } else { (n, 1) };
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (da, db) = (self.data(a).data(), self.data(b).data());
            if shared_b {
                T::gemm(batch * m, k, n, da, (k, 1), db, b_strides, &mut out, false);
            } else {
                for i in 0..batch {
                    T::gemm(
                        m,
                        k,
                        n,
                        &da[i * m * k..(i + 1) * m * k],
                        (k, 1),
                        &db[i * k * n..(i + 1) * k * n],
                        b_strides,
                        &mut out[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
                trans_b,
            },
            rg,
            Vec::new(),
        ))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.elementwise2("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.elementwise2("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.elementwise2("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Value, b: Value) -> Result<Value> {
        self.elementwise2("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Value, scale: f64, shift: f64) -> Value {
        let (s, o) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
        self.unary(x, |v| s * v + o, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Value, s: f64) -> Value {
        self.affine(x, s, 0.0)
    }

    fn bcast_check(&self, op: &'static str, x: Value, y: Value) -> Result<(usize, usize)> {
        let (sx, sy) = (self.shape(x), self.shape(y));
        if sy.len() > sx.len() || sx[sx.len() - sy.len()..] != *sy {
            return Err(Error::shape(op, sx, sy));
        }
        let inner: usize = sy.iter().product();
        Ok((self.data(x).numel() / inner.max(1), inner))
    }

    /// `x + y` where `y`'s shape is a suffix of `x`'s (repeated over the leading axes).
    pub fn add_bcast(&mut self, x: Value, y: Value) -> Result<Value> {
        let (_, inner) = self.bcast_check("add_bcast", x, y)?;
        let dy = self.data(y).data().to_vec();
        let mut t = self.data(x).clone();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = *v + dy[i % inner];
        }
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(t, Op::AddBcast(x, y), rg, Vec::new()))
    }

    /// `x * y` with the same suffix broadcasting as [`Graph::add_bcast`].
    pub fn mul_bcast(&mut self, x: Value, y: Value) -> Result<Value> {
        let (_, inner) = self.bcast_check("mul_bcast", x, y)?;
        let dy = self.data(y).data().to_vec();
        let mut t = self.data(x).clone();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = *v * dy[i % inner];
        }
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(t, Op::MulBcast(x, y), rg, Vec::new()))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Value, axis: usize) -> Result<Value> {
        check_axis("softmax", self.shape(x), axis)?;
        let (outer, n, inner) = split_axis(self.shape(x), axis);
        let mut t = self.data(x).clone();
        let d = t.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..n {
                    mx = mx.max(d[base + j * inner]);
                }
                let mut s = T::zero();
                for j in 0..n {
                    let e = (d[base + j * inner] - mx).exp();
                    d[base + j * inner] = e;
                    s = s + e;
                }
                for j in 0..n {
                    d[base + j * inner] = d[base + j * inner] / s;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax { x, axis }, rg, Vec::new()))
    }

    /// Normalize to zero mean and unit variance along `axis` (no affine terms).
    pub fn layer_norm(&mut self, x: Value, axis: usize) -> Result<Value> {
        check_axis("layer_norm", self.shape(x), axis)?;
        let (outer, n, inner) = split_axis(self.shape(x), axis);
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let nf = T::from_usize(n).expect("axis length");
        let mut t = self.data(x).clone();
        let mut inv_std = Vec::with_capacity(outer * inner);
        let d = t.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mean = (0..n).map(|j| d[base + j * inner]).sum::<T>() / nf;
                let var = (0..n)
                    .map(|j| {
                        let c = d[base + j * inner] - mean;
                        c * c
                    })
                    .sum::<T>()
                    / nf;
                let is = T::one() / (var + eps).sqrt();
                for j in 0..n {
                    d[base + j * inner] = (d[base + j * inner] - mean) * is;
                }
                inv_std.push(is);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(t, Op::LayerNorm { x, axis }, rg, inv_std))
    }

    pub fn relu(&mut self, x: Value) -> Value {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Value) -> Value {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn ln(&mut self, x: Value) -> Value {
        self.unary(x, |v| v.ln(), Op::Ln(x))
    }

    pub fn clamp(&mut self, x: Value, lo: f64, hi: f64) -> Value {
        let (l, h) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        self.unary(x, |v| v.max(l).min(h), Op::Clamp { x, lo, hi })
    }

    pub fn concat(&mut self, parts: &[Value], axis: usize) -> Result<Value> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", &[], &[]))?;
        let s0 = self.shape(*first).to_vec();
        check_axis("concat", &s0, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != s0.len()
                || s.iter()
                    .zip(&s0)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape("concat", &s0, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&s0, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis];
                let d = self.data(p).data();
                out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
            Vec::new(),
        ))
    }

    pub fn reshape(&mut self, x: Value, shape: &[usize]) -> Result<Value> {
        let t = self.data(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg, Vec::new()))
    }

    /// Reorder axes; output axis `k` is input axis `axes[k]`.
    pub fn permute(&mut self, x: Value, axes: &[usize]) -> Result<Value> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len() || axes.iter().any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", &s, axes));
        }
        let data = permute_data(self.data(x).data(), &s, axes);
        let shape = axes.iter().map(|&a| s[a]).collect();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
            Vec::new(),
        ))
    }

    /// Swap two axes.
    pub fn transpose(&mut self, x: Value, a: usize, b: usize) -> Result<Value> {
        let rank = self.shape(x).len();
        check_axis("transpose", self.shape(x), a.max(b))?;
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(a, b);
        self.permute(x, &axes)
    }

    /// Entries `start..end` along `axis`.
    pub fn slice(&mut self, x: Value, axis: usize, start: usize, end: usize) -> Result<Value> {
        let s = self.shape(x).to_vec();
        check_axis("slice", &s, axis)?;
        if start > end || end > s[axis] {
            return Err(Error::shape("slice", &s, &[start, end]));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let d = self.data(x).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&d[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { x, axis, start }, rg, Vec::new()))
    }

    fn reduce(&mut self, x: Value, axis: usize, mean: bool) -> Result<Value> {
        let s = self.shape(x).to_vec();
        check_axis(if mean { "mean" } else { "sum" }, &s, axis)?;
        let (outer, n, inner) = split_axis(&s, axis);
        let d = self.data(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc = *acc + v;
                }
            }
        }
        if mean {
            let nf = T::from_usize(n).expect("axis length");
            out.iter_mut().for_each(|v| *v = *v / nf);
        }
        let mut shape = s;
        shape.remove(axis);
        let rg = self.rg(x);
        let op = if mean {
            Op::Mean { x, axis }
        } else {
            Op::Sum { x, axis }
        };
        Ok(self.push(Tensor::new(shape, out)?, op, rg, Vec::new()))
    }

    pub fn sum(&mut self, x: Value, axis: usize) -> Result<Value> {
        self.reduce(x, axis, false)
    }

    pub fn mean(&mut self, x: Value, axis: usize) -> Result<Value> {
        self.reduce(x, axis, true)
    }

    pub fn sum_all(&mut self, x: Value) -> Value {
        let s = self.data(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg, Vec::new())
    }

    pub fn mean_all(&mut self, x: Value) -> Value {
        let t = self.data(x);
        let s = t.sum() / T::from_usize(t.numel().max(1)).expect("numel");
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg, Vec::new())
    }

    /// Pointwise convolution of a `[cin, h, w]` grid with `[cout, cin]` weights.
    pub fn conv1x1(&mut self, x: Value, w: Value, b: Option<Value>) -> Result<Value> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 2 || sw[1] != sx[0] {
            return Err(Error::shape("conv1x1", &sx, &sw));
        }
        let (cout, cin, hw) = (sw[0], sx[0], sx[1] * sx[2]);
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::shape("conv1x1 bias", self.shape(b), &[cout]));
            }
        }
        let mut out = vec![T::zero(); cout * hw];
        if let Some(b) = b {
            let db = self.data(b).data();
            for (o, &bv) in db.iter().enumerate() {
                out[o * hw..(o + 1) * hw].fill(bv);
            }
        }
        T::gemm(
            cout,
            cin,
            hw,
            self.data(w).data(),
            (cin, 1),
            self.data(x).data(),
            (hw, 1),
            &mut out,
            b.is_some(),
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(vec![cout, sx[1], sx[2]], out)?,
            Op::Conv1x1 { x, w, b },
            rg,
            Vec::new(),
        ))
    }

    /// Square-kernel convolution of a `[cin, h, w]` grid with `[cout, cin, k, k]` weights.
    pub fn conv2d(
        &mut self,
        x: Value,
        w: Value,
        b: Option<Value>,
        stride: usize,
        pad: usize,
    ) -> Result<Value> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] || stride == 0 {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        let (cout, cin, k) = (sw[0], sx[0], sw[2]);
        let (h, wd) = (sx[1], sx[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::shape("conv2d bias", self.shape(b), &[cout]));
            }
        }
        let cols = im2col(self.data(x).data(), (cin, h, wd), k, stride, pad, (ho, wo));
        let ckk = cin * k * k;
        let mut out = vec![T::zero(); cout * ho * wo];
        if let Some(b) = b {
            let db = self.data(b).data();
            for (o, &bv) in db.iter().enumerate() {
                out[o * ho * wo..(o + 1) * ho * wo].fill(bv);
            }
        }
        T::gemm(
            cout,
            ckk,
            ho * wo,
            self.data(w).data(),
            (ckk, 1),
            &cols,
            (ho * wo, 1),
            &mut out,
            b.is_some(),
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(vec![cout, ho, wo], out)?,
            Op::Conv2d {
                x,
                w,
                b,
                kernel: k,
                stride,
                pad,
            },
            rg,
            cols,
        ))
    }

    /// Nearest-neighbour upsampling of a `[c, h, w]` grid by an integer factor.
    pub fn upsample(&mut self, x: Value, factor: usize) -> Result<Value> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || factor == 0 {
            return Err(Error::shape("upsample", &s, &[factor]));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h * factor, w * factor);
        let d = self.data(x).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                let row = &d[(ch * h + y / factor) * w..(ch * h + y / factor + 1) * w];
                for xx in 0..ow {
                    out.push(row[xx / factor]);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![c, oh, ow], out)?,
            Op::Upsample { x, factor },
            rg,
            Vec::new(),
        ))
    }

    /// Bilinear resampling of every channel of a `[c, h, w]` grid. The sample
    /// positions are constants; gradients reach the grid values only.
    pub fn bilinear_sample(&mut self, grid: Value, map: Arc<SampleMap>) -> Result<Value> {
        let s = self.shape(grid).to_vec();
        if s.len() != 3 || (s[1], s[2]) != map.input_dims() {
            return Err(Error::shape(
                "bilinear_sample",
                &s,
                &[map.in_h, map.in_w],
            ));
        }
        let c = s[0];
        let (ih, iw) = map.input_dims();
        let (oh, ow) = map.output_dims();
        let d = self.data(grid).data();
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            let plane = &d[ch * ih * iw..(ch + 1) * ih * iw];
            for (o, taps) in map.taps.iter().enumerate() {
                out[ch * oh * ow + o] = if map.interior[o] {
                    // weights sum to one: blend away from the first tap, so a
                    // constant field comes back bit for bit
                    let v0 = plane[taps[0].index];
                    taps[1..].iter().fold(v0, |acc, t| {
                        acc + (plane[t.index] - v0) * T::from_f64_lossy(t.weight)
                    })
                } else {
                    taps.iter().fold(T::zero(), |acc, t| acc + plane[t.index] * T::from_f64_lossy(t.weight))
                };
            }
        }
        let rg = self.rg(grid);
        Ok(self.push(
            Tensor::new(vec![c, oh, ow], out)?,
            Op::Sample { grid, map },
            rg,
            Vec::new(),
        ))
    }

    /// Rows of a `[n, d]` table gathered by index into `[indices.len(), d]`.
    pub fn embedding_lookup(&mut self, table: Value, indices: &[usize]) -> Result<Value> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 || indices.iter().any(|&i| i >= s[0]) {
            return Err(Error::shape("embedding_lookup", &s, indices));
        }
        let d = s[1];
        let src = self.data(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![indices.len(), d], out)?,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            rg,
            Vec::new(),
        ))
    }
}
