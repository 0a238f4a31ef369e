use super::{Graph, Op, Value};
use crate::tensor::{invert_axes, permute_data, split_axis, Scalar};

/// Gradient buffer of `v`, zero-initialised on first touch.
fn slot<'a, T: Scalar>(
    g: &Graph<T>,
    grads: &'a mut [Option<Vec<T>>],
    v: Value,
) -> &'a mut Vec<T> {
    let len = g.nodes[v.0].value.numel();
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(g: &Graph<T>, grads: &mut [Option<Vec<T>>], v: Value, f: impl Fn(usize) -> T) {
    if !g.rg(v) {
        return;
    }
    let s = slot(g, grads, v);
    for (i, a) in s.iter_mut().enumerate() {
        *a = *a + f(i);
    }
}

/// Push the output gradient `dy` of node `i` to its inputs.
pub(super) fn propagate<T: Scalar>(g: &Graph<T>, i: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
    let node = &g.nodes[i];
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            shared_b,
            trans_b,
        } => {
            let (a, b) = (*a, *b);
            let (batch, m, k, n) = (*batch, *m, *k, *n);
            let da_ = g.data(a).data();
            let db_ = g.data(b).data();
            // op(B)ᵀ as read from B's storage
            let bt_strides = if *trans_b { (k, 1) } else { (1, n) };
            if g.rg(a) {
                let s = slot(g, grads, a);
                if *shared_b {
                    T::gemm(batch * m, n, k, dy, (n, 1), db_, bt_strides, s, true);
                } else {
                    for bi in 0..batch {
                        T::gemm(
                            m,
                            n,
                            k,
                            &dy[bi * m * n..(bi + 1) * m * n],
                            (n, 1),
                            &db_[bi * k * n..(bi + 1) * k * n],
                            bt_strides,
                            &mut s[bi * m * k..(bi + 1) * m * k],
                            true,
                        );
                    }
                }
            }
            if g.rg(b) {
                let s = slot(g, grads, b);
                let (rows, count) = if *shared_b { (batch * m, 1) } else { (m, batch) };
                for bi in 0..count {
                    let a_blk = &da_[bi * rows * k..(bi + 1) * rows * k];
                    let dy_blk = &dy[bi * rows * n..(bi + 1) * rows * n];
                    let s_blk = &mut s[bi * k * n..(bi + 1) * k * n];
                    if *trans_b {
                        // dB[n,k] = dYᵀ A
                        T::gemm(n, rows, k, dy_blk, (1, n), a_blk, (k, 1), s_blk, true);
                    } else {
                        // dB[k,n] = Aᵀ dY
                        T::gemm(k, rows, n, a_blk, (1, k), dy_blk, (n, 1), s_blk, true);
                    }
                }
            }
        }
        Op::Add(a, b) => {
            add_into(g, grads, *a, |j| dy[j]);
            add_into(g, grads, *b, |j| dy[j]);
        }
        Op::Sub(a, b) => {
            add_into(g, grads, *a, |j| dy[j]);
            add_into(g, grads, *b, |j| -dy[j]);
        }
        Op::Mul(a, b) => {
            let (va, vb) = (g.data(*a).data(), g.data(*b).data());
            add_into(g, grads, *a, |j| dy[j] * vb[j]);
            add_into(g, grads, *b, |j| dy[j] * va[j]);
        }
        Op::Div(a, b) => {
            let vb = g.data(*b).data();
            add_into(g, grads, *a, |j| dy[j] / vb[j]);
            add_into(g, grads, *b, |j| -dy[j] * y[j] / vb[j]);
        }
        Op::Affine { x, scale } => {
            let s = T::from_f64_lossy(*scale);
            add_into(g, grads, *x, |j| dy[j] * s);
        }
        Op::AddBcast(x, b) => {
            add_into(g, grads, *x, |j| dy[j]);
            if g.rg(*b) {
                let s = slot(g, grads, *b);
                let inner = s.len();
                for (j, &d) in dy.iter().enumerate() {
                    s[j % inner] = s[j % inner] + d;
                }
            }
        }
        Op::MulBcast(x, b) => {
            let vx = g.data(*x).data();
            let vb = g.data(*b).data();
            let inner = vb.len();
            add_into(g, grads, *x, |j| dy[j] * vb[j % inner]);
            if g.rg(*b) {
                let s = slot(g, grads, *b);
                for (j, &d) in dy.iter().enumerate() {
                    s[j % inner] = s[j % inner] + d * vx[j];
                }
            }
        }
        Op::Softmax { x, axis } => {
            if !g.rg(*x) {
                return;
            }
            let (outer, n, inner) = split_axis(g.shape(*x), *axis);
            let s = slot(g, grads, *x);
            for o in 0..outer {
                for ii in 0..inner {
                    let base = o * n * inner + ii;
                    let dot: T = (0..n).map(|j| dy[base + j * inner] * y[base + j * inner]).sum();
                    for j in 0..n {
                        let p = base + j * inner;
                        s[p] = s[p] + y[p] * (dy[p] - dot);
                    }
                }
            }
        }
        Op::LayerNorm { x, axis } => {
            if !g.rg(*x) {
                return;
            }
            let (outer, n, inner) = split_axis(g.shape(*x), *axis);
            let inv_std = &node.aux;
            let nf = T::from_usize(n).expect("axis length");
            let s = slot(g, grads, *x);
            for o in 0..outer {
                for ii in 0..inner {
                    let base = o * n * inner + ii;
                    let is = inv_std[o * inner + ii];
                    let mut mean_dy = T::zero();
                    let mut mean_dy_y = T::zero();
                    for j in 0..n {
                        let p = base + j * inner;
                        mean_dy = mean_dy + dy[p];
                        mean_dy_y = mean_dy_y + dy[p] * y[p];
                    }
                    mean_dy = mean_dy / nf;
                    mean_dy_y = mean_dy_y / nf;
                    for j in 0..n {
                        let p = base + j * inner;
                        s[p] = s[p] + is * (dy[p] - mean_dy - y[p] * mean_dy_y);
                    }
                }
            }
        }
        Op::Relu(x) => {
            add_into(g, grads, *x, |j| if y[j] > T::zero() { dy[j] } else { T::zero() });
        }
        Op::Sigmoid(x) => {
            add_into(g, grads, *x, |j| dy[j] * y[j] * (T::one() - y[j]));
        }
        Op::Ln(x) => {
            let vx = g.data(*x).data();
            add_into(g, grads, *x, |j| dy[j] / vx[j]);
        }
        Op::Clamp { x, lo, hi } => {
            let vx = g.data(*x).data();
            let (l, h) = (T::from_f64_lossy(*lo), T::from_f64_lossy(*hi));
            add_into(g, grads, *x, |j| {
                if vx[j] > l && vx[j] < h {
                    dy[j]
                } else {
                    T::zero()
                }
            });
        }
        Op::Concat { parts, axis } => {
            let out_shape = node.value.shape();
            let (outer, total, inner) = split_axis(out_shape, *axis);
            let mut offset = 0;
            for &p in parts {
                let n = g.shape(p)[*axis];
                if g.rg(p) {
                    let s = slot(g, grads, p);
                    for o in 0..outer {
                        let src = &dy[(o * total + offset) * inner..(o * total + offset + n) * inner];
                        for (a, &b) in s[o * n * inner..(o + 1) * n * inner].iter_mut().zip(src) {
                            *a = *a + b;
                        }
                    }
                }
                offset += n;
            }
        }
        Op::Reshape(x) => add_into(g, grads, *x, |j| dy[j]),
        Op::Permute { x, axes } => {
            if !g.rg(*x) {
                return;
            }
            let back = permute_data(dy, node.value.shape(), &invert_axes(axes));
            add_into(g, grads, *x, |j| back[j]);
        }
        Op::Slice { x, axis, start } => {
            if !g.rg(*x) {
                return;
            }
            let (outer, n, inner) = split_axis(g.shape(*x), *axis);
            let len = node.value.shape()[*axis];
            let s = slot(g, grads, *x);
            for o in 0..outer {
                let dst = &mut s[(o * n + start) * inner..(o * n + start + len) * inner];
                for (a, &b) in dst.iter_mut().zip(&dy[o * len * inner..(o + 1) * len * inner]) {
                    *a = *a + b;
                }
            }
        }
        Op::Sum { x, axis } | Op::Mean { x, axis } => {
            let (_, n, inner) = split_axis(g.shape(*x), *axis);
            let scale = if matches!(node.op, Op::Mean { .. }) {
                T::one() / T::from_usize(n).expect("axis length")
            } else {
                T::one()
            };
            add_into(g, grads, *x, |j| {
                let o = j / (n * inner);
                let ii = j % inner;
                dy[o * inner + ii] * scale
            });
        }
        Op::SumAll(x) => add_into(g, grads, *x, |_| dy[0]),
        Op::MeanAll(x) => {
            let n = T::from_usize(g.data(*x).numel().max(1)).expect("numel");
            add_into(g, grads, *x, |_| dy[0] / n);
        }
        Op::Conv1x1 { x, w, b } => {
            let sx = g.shape(*x);
            let (cin, hw) = (sx[0], sx[1] * sx[2]);
            let cout = g.shape(*w)[0];
            if g.rg(*w) {
                let xd = g.data(*x).data();
                let s = slot(g, grads, *w);
                T::gemm(cout, hw, cin, dy, (hw, 1), xd, (1, hw), s, true);
            }
            if g.rg(*x) {
                let wd = g.data(*w).data();
                let s = slot(g, grads, *x);
                T::gemm(cin, cout, hw, wd, (1, cin), dy, (hw, 1), s, true);
            }
            if let Some(b) = b {
                add_into(g, grads, *b, |o| dy[o * hw..(o + 1) * hw].iter().copied().sum());
            }
        }
        Op::Conv2d {
            x,
            w,
            b,
            kernel,
            stride,
            pad,
        } => {
            let sx = g.shape(*x).to_vec();
            let (cin, h, wd) = (sx[0], sx[1], sx[2]);
            let so = node.value.shape();
            let (cout, ho, wo) = (so[0], so[1], so[2]);
            let k = *kernel;
            let ckk = cin * k * k;
            let hw = ho * wo;
            if g.rg(*w) {
                let s = slot(g, grads, *w);
                T::gemm(cout, hw, ckk, dy, (hw, 1), &node.aux, (1, hw), s, true);
            }
            if g.rg(*x) {
                let mut dcols = vec![T::zero(); ckk * hw];
                T::gemm(ckk, cout, hw, g.data(*w).data(), (1, ckk), dy, (hw, 1), &mut dcols, false);
                let s = slot(g, grads, *x);
                for c in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let row = (c * k + ky) * k + kx;
                            for oy in 0..ho {
                                let iy = (oy * stride + ky) as isize - *pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for ox in 0..wo {
                                    let ix = (ox * stride + kx) as isize - *pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    let p = (c * h + iy as usize) * wd + ix as usize;
                                    s[p] = s[p] + dcols[row * hw + oy * wo + ox];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(b) = b {
                add_into(g, grads, *b, |o| dy[o * hw..(o + 1) * hw].iter().copied().sum());
            }
        }
        Op::Upsample { x, factor } => {
            if !g.rg(*x) {
                return;
            }
            let sx = g.shape(*x).to_vec();
            let (c, h, w) = (sx[0], sx[1], sx[2]);
            let (oh, ow) = (h * factor, w * factor);
            let s = slot(g, grads, *x);
            for ch in 0..c {
                for yy in 0..oh {
                    for xx in 0..ow {
                        let p = (ch * h + yy / factor) * w + xx / factor;
                        s[p] = s[p] + dy[(ch * oh + yy) * ow + xx];
                    }
                }
            }
        }
        Op::Sample { grid, map } => {
            if !g.rg(*grid) {
                return;
            }
            let c = g.shape(*grid)[0];
            let (ih, iw) = map.input_dims();
            let (oh, ow) = map.output_dims();
            let s = slot(g, grads, *grid);
            for ch in 0..c {
                for (o, taps) in map.taps.iter().enumerate() {
                    let d = dy[ch * oh * ow + o];
                    for t in taps {
                        let p = ch * ih * iw + t.index;
                        s[p] = s[p] + d * T::from_f64_lossy(t.weight);
                    }
                }
            }
        }
        Op::Embedding { table, indices } => {
            if !g.rg(*table) {
                return;
            }
            let d = g.shape(*table)[1];
            let s = slot(g, grads, *table);
            for (r, &idx) in indices.iter().enumerate() {
                for j in 0..d {
                    s[idx * d + j] = s[idx * d + j] + dy[r * d + j];
                }
            }
        }
    }
}
