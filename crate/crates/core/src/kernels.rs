//! Forward and backward numerics for each primitive, on raw buffers.
//!
//! The tape in [`crate::tape`] owns bookkeeping and shape validation; the
//! functions here assume validated shapes.

use crate::tensor::{matmul, Mat, Scalar, Shape};

/// Spatial rows processed per im2col block; bounds the scratch buffer.
const IM2COL_BUDGET: usize = 1 << 22;

/// SAME padding for stride 1: `(before, after)` with the extra row after.
pub fn same_padding(k: usize) -> (usize, usize) {
    let before = (k - 1) / 2;
    (before, k - 1 - before)
}

fn rows_per_block(c: usize, k: usize, h: usize, w: usize) -> usize {
    let per_row = c * k * k * w;
    (IM2COL_BUDGET / per_row.max(1)).clamp(1, h)
}

/// Unrolls rows `r0..r1` of one sample into a `(c·k·k) × ((r1-r0)·w)` matrix.
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    r0: usize,
    r1: usize,
    cols: &mut [T],
) {
    let (pad, _) = same_padding(k);
    let len = (r1 - r0) * w;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for u in 0..k {
            for v in 0..k {
                let row = &mut cols[((ch * k + u) * k + v) * len..][..len];
                for (bi, i) in (r0..r1).enumerate() {
                    let dst = &mut row[bi * w..(bi + 1) * w];
                    let si = i as isize + u as isize - pad as isize;
                    if si < 0 || si >= h as isize {
                        dst.iter_mut().for_each(|d| *d = T::zero());
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    let shift = v as isize - pad as isize;
                    for (j, d) in dst.iter_mut().enumerate() {
                        let sj = j as isize + shift;
                        *d = if sj < 0 || sj >= w as isize {
                            T::zero()
                        } else {
                            src[sj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a column matrix back into `dx`.
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    r0: usize,
    r1: usize,
    dx: &mut [T],
) {
    let (pad, _) = same_padding(k);
    let len = (r1 - r0) * w;
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for u in 0..k {
            for v in 0..k {
                let row = &cols[((ch * k + u) * k + v) * len..][..len];
                for (bi, i) in (r0..r1).enumerate() {
                    let si = i as isize + u as isize - pad as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src = &row[bi * w..(bi + 1) * w];
                    let dst = &mut plane[si as usize * w..(si as usize + 1) * w];
                    let shift = v as isize - pad as isize;
                    for (j, &g) in src.iter().enumerate() {
                        let sj = j as isize + shift;
                        if sj >= 0 && sj < w as isize {
                            dst[sj as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 SAME convolution. `weights` is `(o, c, k, k)`.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    xs: Shape,
    weights: &[T],
    bias: &[T],
    o: usize,
    k: usize,
) -> Vec<T> {
    let [n, c, h, w] = xs.0;
    let hw = h * w;
    let ckk = c * k * k;
    let mut out = vec![T::zero(); n * o * hw];
    let block = rows_per_block(c, k, h, w);
    let mut cols = if k == 1 {
        Vec::new()
    } else {
        vec![T::zero(); ckk * block * w]
    };
    for s in 0..n {
        let xn = &x[s * c * hw..(s + 1) * c * hw];
        let yn = &mut out[s * o * hw..(s + 1) * o * hw];
        if k == 1 {
            matmul(
                Mat::new(weights, o, c),
                Mat::new(xn, c, hw),
                T::zero(),
                yn,
                hw,
            );
        } else {
            let mut r0 = 0;
            while r0 < h {
                let r1 = (r0 + block).min(h);
                let len = (r1 - r0) * w;
                im2col(xn, c, h, w, k, r0, r1, &mut cols[..ckk * len]);
                matmul(
                    Mat::new(weights, o, ckk),
                    Mat::new(&cols[..ckk * len], ckk, len),
                    T::zero(),
                    &mut yn[r0 * w..],
                    hw,
                );
                r0 = r1;
            }
        }
        for (oc, &b) in bias.iter().enumerate() {
            yn[oc * hw..(oc + 1) * hw].iter_mut().for_each(|v| *v += b);
        }
    }
    out
}

/// Accumulates weight/bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    xs: Shape,
    weights: &[T],
    o: usize,
    k: usize,
    dy: &[T],
    dweights: &mut [T],
    dbias: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let [n, c, h, w] = xs.0;
    let hw = h * w;
    let ckk = c * k * k;
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let block = rows_per_block(c, k, h, w);
    let mut cols = if k == 1 {
        Vec::new()
    } else {
        vec![T::zero(); ckk * block * w]
    };
    let mut dcols = if k == 1 || !need_dx {
        Vec::new()
    } else {
        vec![T::zero(); ckk * block * w]
    };
    for s in 0..n {
        let xn = &x[s * c * hw..(s + 1) * c * hw];
        let dyn_ = &dy[s * o * hw..(s + 1) * o * hw];
        for (oc, db) in dbias.iter_mut().enumerate() {
            *db += dyn_[oc * hw..(oc + 1) * hw].iter().copied().sum::<T>();
        }
        if k == 1 {
            matmul(
                Mat::new(dyn_, o, hw),
                Mat::new(xn, c, hw).t(),
                T::one(),
                dweights,
                c,
            );
            if let Some(dx) = dx.as_mut() {
                let dxn = &mut dx[s * c * hw..(s + 1) * c * hw];
                matmul(
                    Mat::new(weights, o, c).t(),
                    Mat::new(dyn_, o, hw),
                    T::zero(),
                    dxn,
                    hw,
                );
            }
            continue;
        }
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + block).min(h);
            let len = (r1 - r0) * w;
            im2col(xn, c, h, w, k, r0, r1, &mut cols[..ckk * len]);
            let dy_block = Mat::strided(&dyn_[r0 * w..], o, len, hw);
            matmul(
                dy_block,
                Mat::new(&cols[..ckk * len], ckk, len).t(),
                T::one(),
                dweights,
                ckk,
            );
            if let Some(dx) = dx.as_mut() {
                let dc = &mut dcols[..ckk * len];
                matmul(Mat::new(weights, o, ckk).t(), dy_block, T::zero(), dc, len);
                col2im(
                    dc,
                    c,
                    h,
                    w,
                    k,
                    r0,
                    r1,
                    &mut dx[s * c * hw..(s + 1) * c * hw],
                );
            }
            r0 = r1;
        }
    }
    dx
}

/// Non-overlapping max pooling. Returns outputs and the plane-local argmax of each window.
///
/// Ties resolve to the first position in row-major window order.
pub fn max_pool_forward<T: Scalar>(x: &[T], xs: Shape, p: usize) -> (Vec<T>, Vec<u32>) {
    let [n, c, h, w] = xs.0;
    let (oh, ow) = (h / p, w / p);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in x.chunks_exact(h * w) {
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best = oi * p * w + oj * p;
                let mut best_v = plane[best];
                for u in 0..p {
                    for v in 0..p {
                        let idx = (oi * p + u) * w + oj * p + v;
                        if plane[idx] > best_v {
                            best_v = plane[idx];
                            best = idx;
                        }
                    }
                }
                out.push(best_v);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward<T: Scalar>(xs: Shape, p: usize, argmax: &[u32], dy: &[T]) -> Vec<T> {
    let plane = xs.plane();
    let out_plane = (xs.h() / p) * (xs.w() / p);
    let mut dx = vec![T::zero(); xs.numel()];
    for (pi, (args, grads)) in argmax
        .chunks_exact(out_plane)
        .zip(dy.chunks_exact(out_plane))
        .enumerate()
    {
        let base = pi * plane;
        for (&a, &g) in args.iter().zip(grads) {
            dx[base + a as usize] += g;
        }
    }
    dx
}

/// Per-axis bilinear taps `(i0, i1, frac)` under the pixel-centre (align-corners=false) rule.
pub fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i0 == i1 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

/// Bilinear resampling of every plane to `oh × ow`.
pub fn resize_bilinear_forward<T: Scalar>(x: &[T], xs: Shape, oh: usize, ow: usize) -> Vec<T> {
    let (h, w) = (xs.h(), xs.w());
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = Vec::with_capacity(xs.n() * xs.c() * oh * ow);
    for plane in x.chunks_exact(h * w) {
        for &(y0, y1, fy) in &ty {
            let fy = T::from_f64(fy);
            let gy = T::one() - fy;
            for &(x0, x1, fx) in &tx {
                let fx = T::from_f64(fx);
                let gx = T::one() - fx;
                let top = gx * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
                let bot = gx * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
                out.push(gy * top + fy * bot);
            }
        }
    }
    out
}

/// Transpose of [`resize_bilinear_forward`].
pub fn resize_bilinear_backward<T: Scalar>(xs: Shape, oh: usize, ow: usize, dy: &[T]) -> Vec<T> {
    let (h, w) = (xs.h(), xs.w());
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut dx = vec![T::zero(); xs.numel()];
    for (plane, grads) in dx.chunks_exact_mut(h * w).zip(dy.chunks_exact(oh * ow)) {
        let mut gi = grads.iter();
        for &(y0, y1, fy) in &ty {
            let fy = T::from_f64(fy);
            let gy = T::one() - fy;
            for &(x0, x1, fx) in &tx {
                let fx = T::from_f64(fx);
                let gx = T::one() - fx;
                let g = *gi.next().expect("grad length");
                plane[y0 * w + x0] += gy * gx * g;
                plane[y0 * w + x1] += gy * fx * g;
                plane[y1 * w + x0] += fy * gx * g;
                plane[y1 * w + x1] += fy * fx * g;
            }
        }
    }
    dx
}

/// Per-channel statistics over the (n, h, w) axes: `(mean, population variance)`.
pub fn channel_stats<T: Scalar>(x: &[T], xs: Shape) -> (Vec<f64>, Vec<f64>) {
    let [n, c, _, _] = xs.0;
    let plane = xs.plane();
    let m = (n * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            let base = (b * c + ch) * plane;
            s += x[base..base + plane]
                .iter()
                .map(|v| v.as_f64())
                .sum::<f64>();
        }
        let mu = s / m;
        let mut sq = 0.0;
        for b in 0..n {
            let base = (b * c + ch) * plane;
            sq += x[base..base + plane]
                .iter()
                .map(|v| (v.as_f64() - mu).powi(2))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = sq / m;
    }
    (mean, var)
}

/// `(x - mean) * inv_std` per channel.
pub fn normalize<T: Scalar>(x: &[T], xs: Shape, mean: &[T], inv_std: &[T]) -> Vec<T> {
    let c = xs.c();
    let plane = xs.plane();
    let mut out = Vec::with_capacity(x.len());
    for (pi, chunk) in x.chunks_exact(plane).enumerate() {
        let ch = pi % c;
        let (mu, is) = (mean[ch], inv_std[ch]);
        out.extend(chunk.iter().map(|&v| (v - mu) * is));
    }
    out
}

/// Batch-statistics normalisation backward, given the normalised output `xhat`.
pub fn batch_norm_backward<T: Scalar>(xhat: &[T], xs: Shape, inv_std: &[T], dy: &[T]) -> Vec<T> {
    let [n, c, _, _] = xs.0;
    let plane = xs.plane();
    let m = T::from_f64((n * plane) as f64);
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for (pi, (xh, g)) in xhat
        .chunks_exact(plane)
        .zip(dy.chunks_exact(plane))
        .enumerate()
    {
        let ch = pi % c;
        for (&a, &b) in xh.iter().zip(g) {
            sum_dy[ch] += b;
            sum_dy_xhat[ch] += a * b;
        }
    }
    let mut dx = Vec::with_capacity(dy.len());
    for (pi, (xh, g)) in xhat
        .chunks_exact(plane)
        .zip(dy.chunks_exact(plane))
        .enumerate()
    {
        let ch = pi % c;
        let scale = inv_std[ch] / m;
        dx.extend(
            xh.iter()
                .zip(g)
                .map(|(&a, &b)| scale * (m * b - sum_dy[ch] - a * sum_dy_xhat[ch])),
        );
    }
    dx
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Softmax across the channel axis at every pixel.
pub fn softmax_channels_forward<T: Scalar>(x: &[T], xs: Shape) -> Vec<T> {
    let [n, c, _, _] = xs.0;
    let plane = xs.plane();
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let at = |ch: usize| base + ch * plane + p;
            let max = (0..c).map(|ch| x[at(ch)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for ch in 0..c {
                let e = (x[at(ch)] - max).exp();
                out[at(ch)] = e;
                z += e;
            }
            for ch in 0..c {
                out[at(ch)] = out[at(ch)] / z;
            }
        }
    }
    out
}

pub fn softmax_channels_backward<T: Scalar>(y: &[T], xs: Shape, dy: &[T]) -> Vec<T> {
    let [n, c, _, _] = xs.0;
    let plane = xs.plane();
    let mut dx = vec![T::zero(); y.len()];
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let at = |ch: usize| base + ch * plane + p;
            let dot: T = (0..c).map(|ch| y[at(ch)] * dy[at(ch)]).sum();
            for ch in 0..c {
                dx[at(ch)] = y[at(ch)] * (dy[at(ch)] - dot);
            }
        }
    }
    dx
}

/// Mean binary cross-entropy and its gradient with respect to `pred`.
pub fn bce<T: Scalar>(pred: &[T], truth: &[T], eps: f64) -> (T, Vec<T>) {
    let m = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p.as_f64(), t.as_f64());
        let pc = p.clamp(eps, 1.0 - eps);
        loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        let g = if p <= eps || p >= 1.0 - eps {
            0.0
        } else {
            (pc - t) / (pc * (1.0 - pc))
        };
        grad.push(T::from_f64(g / m));
    }
    (T::from_f64(loss / m), grad)
}

/// Categorical cross-entropy averaged over pixels (not channels).
pub fn cce<T: Scalar>(pred: &[T], truth: &[T], xs: Shape, eps: f64) -> (T, Vec<T>) {
    let pixels = (xs.n() * xs.plane()) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p.as_f64(), t.as_f64());
        let pc = p.clamp(eps, 1.0 - eps);
        loss -= t * pc.ln();
        let g = if p <= eps || p >= 1.0 - eps {
            0.0
        } else {
            -t / pc
        };
        grad.push(T::from_f64(g / pixels));
    }
    (T::from_f64(loss / pixels), grad)
}
