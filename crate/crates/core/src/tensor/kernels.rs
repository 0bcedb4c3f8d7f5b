//! Slice-level forward/backward kernels behind the tape ops.

use crate::scalar::Scalar;

/// `y[m, j] = Σ_i x[m, i]·w[j, i] + b[j]`
pub fn linear_forward<S: Scalar>(
    x: &[S],
    w: &[S],
    b: &[S],
    rows: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<S> {
    let mut y = Vec::with_capacity(rows * d_out);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    S::gemm(
        rows,
        d_in,
        d_out,
        S::one(),
        (x, d_in as isize, 1),
        (w, 1, d_in as isize),
        S::one(),
        (&mut y, d_out as isize, 1),
    );
    y
}

/// dx = dy·w
pub fn linear_backward_input<S: Scalar>(
    dy: &[S],
    w: &[S],
    rows: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<S> {
    let mut dx = vec![S::zero(); rows * d_in];
    S::gemm(
        rows,
        d_out,
        d_in,
        S::one(),
        (dy, d_out as isize, 1),
        (w, d_in as isize, 1),
        S::zero(),
        (&mut dx, d_in as isize, 1),
    );
    dx
}

/// dw = dyᵀ·x
pub fn linear_backward_weight<S: Scalar>(
    dy: &[S],
    x: &[S],
    rows: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<S> {
    let mut dw = vec![S::zero(); d_out * d_in];
    S::gemm(
        d_out,
        rows,
        d_in,
        S::one(),
        (dy, 1, d_out as isize),
        (x, d_in as isize, 1),
        S::zero(),
        (&mut dw, d_in as isize, 1),
    );
    dw
}

/// Sum over rows: `db[j] = Σ_m dy[m, j]`.
pub fn column_sums<S: Scalar>(dy: &[S], cols: usize) -> Vec<S> {
    let mut db = vec![S::zero(); cols];
    for row in dy.chunks_exact(cols) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    db
}

/// Geometry of a batched 1D convolution over `[batch, c_in, len]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_len(&self) -> usize {
        self.len + 2 * self.padding + 1 - self.kernel
    }

    fn patch(&self) -> usize {
        self.c_in * self.kernel
    }
}

/// Unfolds `x[b, c, t]` into `cols[(c·k + j), b·out_len + t] = x[b, c, t + j − pad]`.
pub fn im2col<S: Scalar>(x: &[S], g: &ConvGeometry) -> Vec<S> {
    let out_len = g.out_len();
    let width = g.batch * out_len;
    let mut cols = vec![S::zero(); g.patch() * width];
    for c in 0..g.c_in {
        for j in 0..g.kernel {
            let row = &mut cols[(c * g.kernel + j) * width..][..width];
            for b in 0..g.batch {
                let src = &x[(b * g.c_in + c) * g.len..][..g.len];
                let dst = &mut row[b * out_len..][..out_len];
                // source index t + j − pad must land inside [0, len)
                let lo = g.padding.saturating_sub(j);
                let hi = (g.len + g.padding).saturating_sub(j).min(out_len);
                if lo < hi {
                    let s0 = lo + j - g.padding;
                    dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im<S: Scalar>(cols: &[S], g: &ConvGeometry) -> Vec<S> {
    let out_len = g.out_len();
    let width = g.batch * out_len;
    let mut dx = vec![S::zero(); g.batch * g.c_in * g.len];
    for c in 0..g.c_in {
        for j in 0..g.kernel {
            let row = &cols[(c * g.kernel + j) * width..][..width];
            for b in 0..g.batch {
                let dst = &mut dx[(b * g.c_in + c) * g.len..][..g.len];
                let src = &row[b * out_len..][..out_len];
                let lo = g.padding.saturating_sub(j);
                let hi = (g.len + g.padding).saturating_sub(j).min(out_len);
                for t in lo..hi {
                    dst[t + j - g.padding] += src[t];
                }
            }
        }
    }
    dx
}

pub fn conv1d_forward<S: Scalar>(x: &[S], kernel: &[S], bias: &[S], g: &ConvGeometry) -> Vec<S> {
    let out_len = g.out_len();
    let width = g.batch * out_len;
    let cols = im2col(x, g);
    let mut flat = vec![S::zero(); g.c_out * width];
    S::gemm(
        g.c_out,
        g.patch(),
        width,
        S::one(),
        (kernel, g.patch() as isize, 1),
        (&cols, width as isize, 1),
        S::zero(),
        (&mut flat, width as isize, 1),
    );
    // [c_out, batch·out_len] → [batch, c_out, out_len]
    let mut y = vec![S::zero(); g.batch * g.c_out * out_len];
    for o in 0..g.c_out {
        let bo = bias[o];
        for b in 0..g.batch {
            let src = &flat[o * width + b * out_len..][..out_len];
            let dst = &mut y[(b * g.c_out + o) * out_len..][..out_len];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bo;
            }
        }
    }
    y
}

/// Returns `(dx, dkernel, dbias)`; `dx` is skipped when the input needs no gradient.
pub fn conv1d_backward<S: Scalar>(
    dy: &[S],
    x: &[S],
    kernel: &[S],
    g: &ConvGeometry,
    want_dx: bool,
    want_dk: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>, Vec<S>) {
    let out_len = g.out_len();
    let width = g.batch * out_len;
    let mut flat = vec![S::zero(); g.c_out * width];
    let mut db = vec![S::zero(); g.c_out];
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let src = &dy[(b * g.c_out + o) * out_len..][..out_len];
            flat[o * width + b * out_len..][..out_len].copy_from_slice(src);
            db[o] += src.iter().copied().sum::<S>();
        }
    }
    let dk = want_dk.then(|| {
        let cols = im2col(x, g);
        let mut dk = vec![S::zero(); g.c_out * g.patch()];
        S::gemm(
            g.c_out,
            width,
            g.patch(),
            S::one(),
            (&flat, width as isize, 1),
            (&cols, 1, width as isize),
            S::zero(),
            (&mut dk, g.patch() as isize, 1),
        );
        dk
    });
    let dx = want_dx.then(|| {
        let mut dcols = vec![S::zero(); g.patch() * width];
        S::gemm(
            g.patch(),
            g.c_out,
            width,
            S::one(),
            (kernel, 1, g.patch() as isize),
            (&flat, width as isize, 1),
            S::zero(),
            (&mut dcols, width as isize, 1),
        );
        col2im(&dcols, g)
    });
    (dx, dk, db)
}

/// Splits a shape around `axis` into `(outer, len, inner)`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_forward<S: Scalar>(x: &[S], outer: usize, len: usize, inner: usize) -> Vec<S> {
    let mut y = vec![S::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |t: usize| (o * len + t) * inner + i;
            let max = (0..len).map(|t| x[at(t)]).fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for t in 0..len {
                let e = (x[at(t)] - max).exp();
                y[at(t)] = e;
                total += e;
            }
            for t in 0..len {
                y[at(t)] /= total;
            }
        }
    }
    y
}

/// `dx = y ⊙ (dy − Σ_axis dy·y)`
pub fn softmax_backward<S: Scalar>(
    y: &[S],
    dy: &[S],
    outer: usize,
    len: usize,
    inner: usize,
) -> Vec<S> {
    let mut dx = vec![S::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |t: usize| (o * len + t) * inner + i;
            let dot: S = (0..len).map(|t| dy[at(t)] * y[at(t)]).sum();
            for t in 0..len {
                dx[at(t)] = y[at(t)] * (dy[at(t)] - dot);
            }
        }
    }
    dx
}

/// Output shape for elementwise broadcasting restricted to size-1 axes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, _) => Some(y),
            (_, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// For each flat output index, the flat index into an operand of shape
/// `src` broadcast to `out`.
pub fn broadcast_index(src: &[usize], out: &[usize]) -> Vec<usize> {
    let total: usize = out.iter().product();
    if src == out {
        return (0..total).collect();
    }
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for ax in (0..rank).rev() {
        strides[ax] = if src[ax] == 1 { 0 } else { s };
        s *= src[ax];
    }
    let mut idx = vec![0usize; rank];
    let mut map = Vec::with_capacity(total);
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            offset -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

/// Row-wise `logsumexp(x) − x[target]` plus the softmax rows for the backward pass.
pub fn cross_entropy_forward<S: Scalar>(
    logits: &[S],
    classes: usize,
    targets: &[usize],
) -> (Vec<S>, Vec<S>) {
    let mut losses = Vec::with_capacity(targets.len());
    let mut probs = Vec::with_capacity(logits.len());
    for (row, &t) in logits.chunks_exact(classes).zip(targets) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let total: S = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + total.ln();
        losses.push(lse - row[t]);
        probs.extend(row.iter().map(|&v| (v - lse).exp()));
    }
    (losses, probs)
}
