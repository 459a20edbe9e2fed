//! Forward and backward numeric kernels on raw row-major slices.
//!
//! Layout is always `(channels, height, width)`. Every kernel writes disjoint
//! output ranges per work item, so the rayon and sequential paths agree bit
//! for bit.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::par;

/// `c = alpha * a(m×k) * b(k×n) + beta * c`, with optional transposes given by
/// passing the stored shape and a flag.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    alpha: f64,
    a: &[f64],
    a_shape: (usize, usize),
    a_t: bool,
    b: &[f64],
    b_shape: (usize, usize),
    b_t: bool,
    beta: f64,
    c: &mut [f64],
    c_shape: (usize, usize),
) {
    let av = ArrayView2::from_shape(a_shape, a).expect("gemm a shape");
    let bv = ArrayView2::from_shape(b_shape, b).expect("gemm b shape");
    let mut cv = ArrayViewMut2::from_shape(c_shape, c).expect("gemm c shape");
    let av = if a_t { av.reversed_axes() } else { av };
    let bv = if b_t { bv.reversed_axes() } else { bv };
    general_mat_mul(alpha, &av, &bv, beta, &mut cv);
}

/// Geometry of a stride-1 "same" convolution with odd square kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvShape {
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }
    fn pixels(&self) -> usize {
        self.h * self.w
    }
}

pub fn im2col(input: &[f64], s: ConvShape) -> Vec<f64> {
    let hw = s.pixels();
    let mut cols = vec![0.0; s.rows() * hw];
    let pad = s.pad();
    par::for_each_chunk_mut(&mut cols, hw, |row, out| {
        let ci = row / (s.k * s.k);
        let ky = (row / s.k) % s.k;
        let kx = row % s.k;
        let plane = &input[ci * hw..(ci + 1) * hw];
        let dy = ky as isize - pad;
        let dx = kx as isize - pad;
        for y in 0..s.h {
            let sy = y as isize + dy;
            if sy < 0 || sy >= s.h as isize {
                continue;
            }
            let src = &plane[sy as usize * s.w..(sy as usize + 1) * s.w];
            let dst = &mut out[y * s.w..(y + 1) * s.w];
            let x0 = (-dx).max(0) as usize;
            let x1 = ((s.w as isize) - dx).min(s.w as isize).max(0) as usize;
            for x in x0..x1 {
                dst[x] = src[(x as isize + dx) as usize];
            }
        }
    });
    cols
}

fn col2im(cols: &[f64], s: ConvShape) -> Vec<f64> {
    let hw = s.pixels();
    let mut out = vec![0.0; s.c_in * hw];
    let pad = s.pad();
    let kk = s.k * s.k;
    par::for_each_chunk_mut(&mut out, hw, |ci, plane| {
        for kidx in 0..kk {
            let ky = kidx / s.k;
            let kx = kidx % s.k;
            let row = &cols[(ci * kk + kidx) * hw..(ci * kk + kidx + 1) * hw];
            let dy = ky as isize - pad;
            let dx = kx as isize - pad;
            for y in 0..s.h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= s.h as isize {
                    continue;
                }
                let src = &row[y * s.w..(y + 1) * s.w];
                let dst = &mut plane[sy as usize * s.w..(sy as usize + 1) * s.w];
                let x0 = (-dx).max(0) as usize;
                let x1 = ((s.w as isize) - dx).min(s.w as isize).max(0) as usize;
                for x in x0..x1 {
                    dst[(x as isize + dx) as usize] += src[x];
                }
            }
        }
    });
    out
}

/// Same-size convolution. Returns `(output, im2col buffer)`; the buffer is
/// kept by the caller for the backward pass.
pub fn conv2d_forward(input: &[f64], weight: &[f64], bias: &[f64], s: ConvShape) -> (Vec<f64>, Vec<f64>) {
    let cols = im2col(input, s);
    let hw = s.pixels();
    let mut out = vec![0.0; s.c_out * hw];
    for (co, chunk) in out.chunks_mut(hw).enumerate() {
        chunk.fill(bias[co]);
    }
    gemm(
        1.0,
        weight,
        (s.c_out, s.rows()),
        false,
        &cols,
        (s.rows(), hw),
        false,
        1.0,
        &mut out,
        (s.c_out, hw),
    );
    (out, cols)
}

/// Gradients of a same-size convolution: `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(
    grad_out: &[f64],
    weight: &[f64],
    cols: &[f64],
    s: ConvShape,
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let hw = s.pixels();
    let mut d_w = vec![0.0; s.c_out * s.rows()];
    gemm(
        1.0,
        grad_out,
        (s.c_out, hw),
        false,
        cols,
        (s.rows(), hw),
        true,
        0.0,
        &mut d_w,
        (s.c_out, s.rows()),
    );
    let d_b = grad_out.chunks(hw).map(|c| c.iter().sum()).collect();
    let d_in = need_input.then(|| {
        let mut d_cols = vec![0.0; s.rows() * hw];
        gemm(
            1.0,
            weight,
            (s.c_out, s.rows()),
            true,
            grad_out,
            (s.c_out, hw),
            false,
            0.0,
            &mut d_cols,
            (s.rows(), hw),
        );
        col2im(&d_cols, s)
    });
    (d_in, d_w, d_b)
}

/// 2×2 stride-2 max pooling; returns outputs and the flat argmax per output.
pub fn maxpool2_forward(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ho * wo];
    let mut arg = vec![0usize; c * ho * wo];
    for ci in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut bi = 0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let idx = (ci * h + 2 * y + dy) * w + 2 * x + dx;
                    if input[idx] > best {
                        best = input[idx];
                        bi = idx;
                    }
                }
                let o = (ci * ho + y) * wo + x;
                out[o] = best;
                arg[o] = bi;
            }
        }
    }
    (out, arg)
}

/// Non-overlapping `k×k` average pooling.
pub fn avgpool_forward(input: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (ho, wo) = (h / k, w / k);
    let norm = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; c * ho * wo];
    for ci in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let mut acc = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        acc += input[(ci * h + y * k + dy) * w + x * k + dx];
                    }
                }
                out[(ci * ho + y) * wo + x] = acc * norm;
            }
        }
    }
    out
}

pub fn avgpool_backward(grad_out: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (ho, wo) = (h / k, w / k);
    let norm = 1.0 / (k * k) as f64;
    let mut d = vec![0.0; c * h * w];
    for ci in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let g = grad_out[(ci * ho + y) * wo + x] * norm;
                for dy in 0..k {
                    for dx in 0..k {
                        d[(ci * h + y * k + dy) * w + x * k + dx] = g;
                    }
                }
            }
        }
    }
    d
}

/// The four bilinear taps of a continuous sample position. Taps outside the
/// `w×h` plane carry weight but no index; they read as zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct Taps {
    pub idx: [Option<u32>; 4],
    pub wt: [f64; 4],
    /// d(weight)/d(sx), d(weight)/d(sy) per tap.
    pub dwx: [f64; 4],
    pub dwy: [f64; 4],
}

impl Taps {
    pub fn new(sx: f64, sy: f64, w: usize, h: usize) -> Taps {
        let x0f = sx.floor();
        let y0f = sy.floor();
        let fx = sx - x0f;
        let fy = sy - y0f;
        let x0 = x0f as i64;
        let y0 = y0f as i64;
        let corners = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)];
        let wt = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
        let dwx = [-(1.0 - fy), 1.0 - fy, -fy, fy];
        let dwy = [-(1.0 - fx), -fx, 1.0 - fx, fx];
        let mut idx = [None; 4];
        for (i, &(cx, cy)) in corners.iter().enumerate() {
            if cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h {
                idx[i] = Some((cy as usize * w + cx as usize) as u32);
            }
        }
        Taps { idx, wt, dwx, dwy }
    }

    #[inline]
    pub fn sample(&self, plane: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..4 {
            if let Some(j) = self.idx[i] {
                v += self.wt[i] * plane[j as usize];
            }
        }
        v
    }

    #[inline]
    fn grad_xy(&self, plane: &[f64]) -> (f64, f64) {
        let (mut gx, mut gy) = (0.0, 0.0);
        for i in 0..4 {
            if let Some(j) = self.idx[i] {
                gx += self.dwx[i] * plane[j as usize];
                gy += self.dwy[i] * plane[j as usize];
            }
        }
        (gx, gy)
    }

    #[inline]
    fn scatter(&self, plane: &mut [f64], g: f64) {
        for i in 0..4 {
            if let Some(j) = self.idx[i] {
                plane[j as usize] += self.wt[i] * g;
            }
        }
    }
}

/// Sample every channel of `input (c, h, w)` at fixed taps (one per output
/// location); `None` taps produce zeros.
pub fn sample_forward(input: &[f64], c: usize, in_hw: usize, taps: &[Option<Taps>]) -> Vec<f64> {
    let n = taps.len();
    let mut out = vec![0.0; c * n];
    par::for_each_chunk_mut(&mut out, n, |ci, o| {
        let plane = &input[ci * in_hw..(ci + 1) * in_hw];
        for (v, t) in o.iter_mut().zip(taps) {
            if let Some(t) = t {
                *v = t.sample(plane);
            }
        }
    });
    out
}

pub fn sample_backward(grad_out: &[f64], c: usize, in_hw: usize, taps: &[Option<Taps>]) -> Vec<f64> {
    let n = taps.len();
    let mut d = vec![0.0; c * in_hw];
    par::for_each_chunk_mut(&mut d, in_hw, |ci, plane| {
        let g = &grad_out[ci * n..(ci + 1) * n];
        for (gv, t) in g.iter().zip(taps) {
            if let Some(t) = t {
                t.scatter(plane, *gv);
            }
        }
    });
    d
}

fn warp_taps(flow: &[f64], h: usize, w: usize) -> Vec<Taps> {
    let hw = h * w;
    (0..hw)
        .map(|p| {
            let (y, x) = (p / w, p % w);
            Taps::new(x as f64 + flow[p], y as f64 + flow[hw + p], w, h)
        })
        .collect()
}

/// Backward warping with zero padding:
/// `out(c, y, x) = input(c, y + dy(y, x), x + dx(y, x))`.
pub fn warp_forward(input: &[f64], flow: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let taps = warp_taps(flow, h, w);
    let mut out = vec![0.0; c * hw];
    par::for_each_chunk_mut(&mut out, hw, |ci, o| {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for (v, t) in o.iter_mut().zip(&taps) {
            *v = t.sample(plane);
        }
    });
    out
}

/// Gradients of [`warp_forward`] with respect to the input and the flow.
pub fn warp_backward(
    grad_out: &[f64],
    input: &[f64],
    flow: &[f64],
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let taps = warp_taps(flow, h, w);
    let mut d_in = vec![0.0; c * hw];
    par::for_each_chunk_mut(&mut d_in, hw, |ci, plane| {
        let g = &grad_out[ci * hw..(ci + 1) * hw];
        for (gv, t) in g.iter().zip(&taps) {
            t.scatter(plane, *gv);
        }
    });
    let mut d_flow = vec![0.0; 2 * hw];
    let (dfx, dfy) = d_flow.split_at_mut(hw);
    for p in 0..hw {
        let (mut gx, mut gy) = (0.0, 0.0);
        for ci in 0..c {
            let (sx, sy) = taps[p].grad_xy(&input[ci * hw..(ci + 1) * hw]);
            let g = grad_out[ci * hw + p];
            gx += g * sx;
            gy += g * sy;
        }
        dfx[p] = gx;
        dfy[p] = gy;
    }
    (d_in, d_flow)
}

/// All-pairs correlation. `a` is `(c, p)`, `b` is `(c, q)`; the result is the
/// `(q, p)` matrix `scale * bᵀ a`, i.e. a `q`-channel map over `a`'s grid.
pub fn correlation_forward(a: &[f64], b: &[f64], c: usize, p: usize, q: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; q * p];
    gemm(scale, b, (c, q), true, a, (c, p), false, 0.0, &mut out, (q, p));
    out
}

pub fn correlation_backward(
    grad_out: &[f64],
    a: &[f64],
    b: &[f64],
    c: usize,
    p: usize,
    q: usize,
    scale: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut d_a = vec![0.0; c * p];
    gemm(scale, b, (c, q), false, grad_out, (q, p), false, 0.0, &mut d_a, (c, p));
    let mut d_b = vec![0.0; c * q];
    gemm(scale, a, (c, p), false, grad_out, (q, p), true, 0.0, &mut d_b, (c, q));
    (d_a, d_b)
}

/// Transpose a `rows × cols` matrix.
pub fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}

/// 1-D linear interpolation weights for resizing `n_in` samples to `n_out`
/// with half-pixel centres and edge clamping.
pub fn resize_weights(n_in: usize, n_out: usize) -> Vec<[(usize, f64); 2]> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            let f = src - i0 as f64;
            [(i0, 1.0 - f), (i1, f)]
        })
        .collect()
}

/// Bilinear resize of every channel, multiplying values by `gain`.
pub fn resize_forward(input: &[f64], c: usize, h: usize, w: usize, ho: usize, wo: usize, gain: f64) -> Vec<f64> {
    let wy = resize_weights(h, ho);
    let wx = resize_weights(w, wo);
    let mut out = vec![0.0; c * ho * wo];
    par::for_each_chunk_mut(&mut out, ho * wo, |ci, o| {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for (y, ty) in wy.iter().enumerate() {
            for (x, tx) in wx.iter().enumerate() {
                let mut v = 0.0;
                for &(iy, fy) in ty {
                    for &(ix, fx) in tx {
                        v += fy * fx * plane[iy * w + ix];
                    }
                }
                o[y * wo + x] = gain * v;
            }
        }
    });
    out
}

pub fn resize_backward(grad_out: &[f64], c: usize, h: usize, w: usize, ho: usize, wo: usize, gain: f64) -> Vec<f64> {
    let wy = resize_weights(h, ho);
    let wx = resize_weights(w, wo);
    let mut d = vec![0.0; c * h * w];
    par::for_each_chunk_mut(&mut d, h * w, |ci, plane| {
        let g = &grad_out[ci * ho * wo..(ci + 1) * ho * wo];
        for (y, ty) in wy.iter().enumerate() {
            for (x, tx) in wx.iter().enumerate() {
                let gv = gain * g[y * wo + x];
                for &(iy, fy) in ty {
                    for &(ix, fx) in tx {
                        plane[iy * w + ix] += fy * fx * gv;
                    }
                }
            }
        }
    });
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &[f64], weight: &[f64], bias: &[f64], s: ConvShape) -> Vec<f64> {
        let p = (s.k / 2) as isize;
        let mut out = vec![0.0; s.c_out * s.h * s.w];
        for co in 0..s.c_out {
            for y in 0..s.h as isize {
                for x in 0..s.w as isize {
                    let mut acc = bias[co];
                    for ci in 0..s.c_in {
                        for ky in 0..s.k as isize {
                            for kx in 0..s.k as isize {
                                let (sy, sx) = (y + ky - p, x + kx - p);
                                if sy < 0 || sx < 0 || sy >= s.h as isize || sx >= s.w as isize {
                                    continue;
                                }
                                let wv = weight[((co * s.c_in + ci) * s.k + ky as usize) * s.k + kx as usize];
                                acc += wv * input[(ci * s.h + sy as usize) * s.w + sx as usize];
                            }
                        }
                    }
                    out[(co * s.h + y as usize) * s.w + x as usize] = acc;
                }
            }
        }
        out
    }

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn conv_matches_direct_loops() {
        let s = ConvShape { c_in: 3, c_out: 4, h: 7, w: 6, k: 5 };
        let input = lcg(3 * 42, 1);
        let weight = lcg(4 * 3 * 25, 2);
        let bias = lcg(4, 3);
        let (out, _) = conv2d_forward(&input, &weight, &bias, s);
        let reference = naive_conv(&input, &weight, &bias, s);
        for (a, b) in out.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let s = ConvShape { c_in: 2, c_out: 1, h: 5, w: 4, k: 3 };
        let x = lcg(2 * 20, 5);
        let y = lcg(2 * 9 * 20, 6);
        let ax: f64 = im2col(&x, s).iter().zip(&y).map(|(a, b)| a * b).sum();
        let aty: f64 = col2im(&y, s).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((ax - aty).abs() < 1e-10);
    }

    #[test]
    fn resize_preserves_constants() {
        let input = vec![3.0; 2 * 3 * 4];
        let out = resize_forward(&input, 2, 3, 4, 6, 8, 1.0);
        assert!(out.iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn maxpool_picks_largest() {
        let input = vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 7.0];
        let (out, arg) = maxpool2_forward(&input, 1, 2, 4);
        assert_eq!(out, vec![5.0, 7.0]);
        assert_eq!(arg, vec![1, 7]);
    }
}
