//! Per-sample layer kernels on channel-major `(C, H, W)` buffers.

/// Epsilon added to the variance in instance normalization.
pub const IN_EPS: f64 = 1e-5;

/// `c = op(a) · op(b) + beta · c` with `op(a)` of shape `m×k` and
/// `op(b)` of shape `k×n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe in-bounds row-major views of the checked slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds 3×3 zero-padded patches into a `(C·9, H·W)` matrix.
pub fn im2col(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; c * 9 * hw];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
pub fn col2im(cols: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut x = vec![0.0; c * hw];
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
    x
}

/// 3×3 same-padding convolution from precomputed columns. `weight` is
/// `(out, in·9)`; returns `(out, H·W)`.
pub fn conv_forward(cols: &[f64], weight: &[f64], bias: &[f64], hw: usize) -> Vec<f64> {
    let out = bias.len();
    let k = cols.len() / hw;
    let mut y = Vec::with_capacity(out * hw);
    for &b in bias {
        y.extend(std::iter::repeat_n(b, hw));
    }
    gemm(out, k, hw, weight, false, cols, false, 1.0, &mut y);
    y
}

/// Accumulates weight and bias gradients and returns the column gradient
/// (when `need_input` is set).
pub fn conv_backward(
    cols: &[f64],
    weight: &[f64],
    dy: &[f64],
    hw: usize,
    grads: Option<(&mut [f64], &mut [f64])>,
    need_input: bool,
) -> Option<Vec<f64>> {
    let out = dy.len() / hw;
    let k = cols.len() / hw;
    if let Some((dw, db)) = grads {
        gemm(out, hw, k, dy, false, cols, true, 1.0, dw);
        for (o, g) in db.iter_mut().enumerate() {
            *g += dy[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
    }
    need_input.then(|| {
        let mut dcols = vec![0.0; k * hw];
        gemm(k, out, hw, weight, true, dy, false, 0.0, &mut dcols);
        dcols
    })
}

pub fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes `dy` where the activation was clipped.
pub fn relu_backward(activation: &[f64], dy: &mut [f64]) {
    for (g, &a) in dy.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 stride-2 max pooling (odd trailing rows/columns dropped). Returns the
/// pooled map and the flat source index of each maximum (first on ties).
pub fn maxpool_forward(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..oh {
            for x0 in 0..ow {
                let cands = [
                    base + 2 * y * w + 2 * x0,
                    base + 2 * y * w + 2 * x0 + 1,
                    base + (2 * y + 1) * w + 2 * x0,
                    base + (2 * y + 1) * w + 2 * x0 + 1,
                ];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

pub fn maxpool_backward(dy: &[f64], idx: &[usize], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&g, &i) in dy.iter().zip(idx) {
        dx[i] += g;
    }
    dx
}

/// Per-channel standardisation over the spatial extent (biased variance,
/// no affine). Returns the output and per-channel `1/sqrt(var + eps)`.
pub fn instance_norm_forward(x: &[f64], c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let mut y = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(c);
    for ch in x.chunks(hw).take(c) {
        let mean = ch.iter().sum::<f64>() / hw as f64;
        let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
        let s = 1.0 / (var + IN_EPS).sqrt();
        y.extend(ch.iter().map(|v| (v - mean) * s));
        inv_std.push(s);
    }
    (y, inv_std)
}

/// `dx = s · (dy − mean(dy) − y · mean(dy·y))` per channel.
pub fn instance_norm_backward(y: &[f64], inv_std: &[f64], dy: &[f64], hw: usize) -> Vec<f64> {
    let mut dx = Vec::with_capacity(dy.len());
    for ((yc, gc), &s) in y.chunks(hw).zip(dy.chunks(hw)).zip(inv_std) {
        let mean_g = gc.iter().sum::<f64>() / hw as f64;
        let mean_gy = gc.iter().zip(yc).map(|(g, y)| g * y).sum::<f64>() / hw as f64;
        dx.extend(gc.iter().zip(yc).map(|(g, y)| s * (g - mean_g - y * mean_gy)));
    }
    dx
}

/// `y = W x + b` with `W` of shape `(out, in)`.
pub fn dense_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut y = bias.to_vec();
    gemm(bias.len(), x.len(), 1, weight, false, x, false, 1.0, &mut y);
    y
}

/// Accumulates `dW += dy·xᵀ`, `db += dy` and returns `Wᵀ·dy` when requested.
pub fn dense_backward(
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    grads: Option<(&mut [f64], &mut [f64])>,
    need_input: bool,
) -> Option<Vec<f64>> {
    if let Some((dw, db)) = grads {
        gemm(dy.len(), 1, x.len(), dy, false, x, false, 1.0, dw);
        db.iter_mut().zip(dy).for_each(|(b, g)| *b += g);
    }
    need_input.then(|| {
        let mut dx = vec![0.0; x.len()];
        gemm(x.len(), dy.len(), 1, weight, true, dy, false, 0.0, &mut dx);
        dx
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()
    }

    fn naive_conv(x: &[f64], c: usize, h: usize, w: usize, wt: &[f64], b: &[f64]) -> Vec<f64> {
        let out = b.len();
        let mut y = vec![0.0; out * h * w];
        for o in 0..out {
            for yy in 0..h {
                for xx in 0..w {
                    let mut s = b[o];
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = yy as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                                    s += wt[o * c * 9 + ci * 9 + ky * 3 + kx]
                                        * x[ci * h * w + sy as usize * w + sx as usize];
                                }
                            }
                        }
                    }
                    y[o * h * w + yy * w + xx] = s;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let (c, h, w, out) = (3, 5, 4, 2);
        let x = random(c * h * w, 1);
        let wt = random(out * c * 9, 2);
        let b = random(out, 3);
        let y = conv_forward(&im2col(&x, c, h, w), &wt, &b, h * w);
        let expect = naive_conv(&x, c, h, w, &wt, &b);
        for (a, e) in y.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w) = (2, 4, 6);
        let x = random(c * h * w, 4);
        let g = random(c * 9 * h * w, 5);
        let lhs: f64 = im2col(&x, c, h, w).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&g, c, h, w)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn single_column_images() {
        let x = random(3, 6);
        let cols = im2col(&x, 1, 3, 1);
        // Centre tap reproduces the input.
        assert_eq!(&cols[4 * 3..5 * 3], &x[..]);
    }

    #[test]
    fn maxpool_picks_maximum_and_routes_gradient() {
        let x = vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 1.0, 9.0];
        let (y, idx) = maxpool_forward(&x, 1, 3, 3);
        assert_eq!(y, vec![5.0]);
        assert_eq!(idx, vec![1]);
        let dx = maxpool_backward(&[2.0], &idx, 9);
        assert_eq!(dx.iter().sum::<f64>(), 2.0);
        assert_eq!(dx[1], 2.0);
    }

    #[test]
    fn instance_norm_standardises() {
        let x = random(3 * 16, 7);
        let (y, _) = instance_norm_forward(&x, 3, 16);
        for ch in y.chunks(16) {
            let mean = ch.iter().sum::<f64>() / 16.0;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn instance_norm_backward_matches_finite_differences() {
        let x = random(2 * 9, 8);
        let upstream = random(2 * 9, 9);
        let loss = |x: &[f64]| -> f64 {
            let (y, _) = instance_norm_forward(x, 2, 9);
            y.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let (y, s) = instance_norm_forward(&x, 2, 9);
        let dx = instance_norm_backward(&y, &s, &upstream, 9);
        for i in 0..x.len() {
            let mut up = x.clone();
            up[i] += 1e-6;
            let mut dn = x.clone();
            dn[i] -= 1e-6;
            let fd = (loss(&up) - loss(&dn)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-6, "{i}: {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn dense_round_trip() {
        let x = random(4, 10);
        let w = random(12, 11);
        let b = random(3, 12);
        let y = dense_forward(&x, &w, &b);
        for o in 0..3 {
            let e: f64 = b[o] + (0..4).map(|i| w[o * 4 + i] * x[i]).sum::<f64>();
            assert!((y[o] - e).abs() < 1e-14);
        }
        let dy = random(3, 13);
        let mut dw = vec![0.0; 12];
        let mut db = vec![0.0; 3];
        let dx = dense_backward(&x, &w, &dy, Some((&mut dw, &mut db)), true).unwrap();
        assert!((dw[5] - dy[1] * x[1]).abs() < 1e-15);
        let e: f64 = (0..3).map(|o| w[o * 4 + 2] * dy[o]).sum();
        assert!((dx[2] - e).abs() < 1e-14);
    }

    #[test]
    fn conv_backward_matches_naive_adjoint() {
        let (c, h, w, out) = (2, 4, 3, 3);
        let x = random(c * h * w, 14);
        let wt = random(out * c * 9, 15);
        let dy = random(out * h * w, 16);
        let cols = im2col(&x, c, h, w);
        let mut dw = vec![0.0; wt.len()];
        let mut db = vec![0.0; out];
        let dcols = conv_backward(&cols, &wt, &dy, h * w, Some((&mut dw, &mut db)), true).unwrap();
        let dx = col2im(&dcols, c, h, w);
        let loss = |x: &[f64], wt: &[f64]| -> f64 {
            naive_conv(x, c, h, w, wt, &[0.0; 3])
                .iter()
                .zip(&dy)
                .map(|(a, b)| a * b)
                .sum()
        };
        // The map is bilinear, so central differences are exact up to rounding.
        for i in 0..x.len() {
            let mut up = x.clone();
            up[i] += 1e-3;
            let mut dn = x.clone();
            dn[i] -= 1e-3;
            assert!(((loss(&up, &wt) - loss(&dn, &wt)) / 2e-3 - dx[i]).abs() < 1e-9);
        }
        for i in 0..wt.len() {
            let mut up = wt.clone();
            up[i] += 1e-3;
            let mut dn = wt.clone();
            dn[i] -= 1e-3;
            assert!(((loss(&x, &up) - loss(&x, &dn)) / 2e-3 - dw[i]).abs() < 1e-9);
        }
        assert!((db[1] - dy[12..24].iter().sum::<f64>()).abs() < 1e-12);
    }
}
