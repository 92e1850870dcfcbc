//! Forward and adjoint kernels on plain tensors.
//!
//! The graph in [`crate::graph`] records these and calls the matching
//! `*_backward` on the reverse pass. All of them are usable on their own.

use crate::error::{ensure, Result};
use crate::tensor::{ConvSpec, Real, Shape, Tensor};

fn check_conv<T: Real>(x: &Tensor<T>, spec: &ConvSpec, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<()> {
    let s = x.shape();
    ensure!(s.c == spec.in_channels, "conv2d: input has {} channels, spec expects {}", s.c, spec.in_channels);
    let k = spec.kernel_size;
    ensure!(
        w.len() == spec.out_channels * spec.in_channels * k * k,
        "conv2d: weight length {} does not match {:?}",
        w.len(),
        spec.weight_shape()
    );
    ensure!(s.h + 2 * spec.padding >= k && s.w + 2 * spec.padding >= k, "conv2d: input {s} smaller than kernel {k}");
    match (spec.has_bias, b) {
        (true, Some(b)) => {
            ensure!(b.len() == spec.out_channels, "conv2d: bias length {} != {}", b.len(), spec.out_channels)
        }
        (false, None) => {}
        (true, None) => ensure!(false, "conv2d: spec has bias but none given"),
        (false, Some(_)) => ensure!(false, "conv2d: bias given to a bias-free spec"),
    }
    Ok(())
}

/// Valid output index range `[lo, hi)` for a kernel tap at offset `k`.
#[inline]
fn tap_range(k: usize, pad: usize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    // input index = o*stride + k - pad must lie in [0, n_in)
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if n_in + pad > k { (n_in + pad - k - 1) / stride + 1 } else { 0 };
    (lo.min(n_out), hi.min(n_out))
}

/// Weights are laid out `(out, in, k, k)`.
pub fn conv2d<T: Real>(x: &Tensor<T>, spec: &ConvSpec, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    check_conv(x, spec, w, b)?;
    let s = x.shape();
    let (oh, ow) = spec.output_dims(s.h, s.w);
    let (k, st, pad) = (spec.kernel_size, spec.stride, spec.padding);
    let mut out = Tensor::zeros(Shape::new(spec.out_channels, oh, ow));
    let xd = x.data();
    let wd = w.data();
    let od = out.data_mut();
    for co in 0..spec.out_channels {
        let oplane = &mut od[co * oh * ow..(co + 1) * oh * ow];
        if let Some(b) = b {
            let bv = b.data()[co];
            oplane.iter_mut().for_each(|v| *v = bv);
        }
        for ci in 0..spec.in_channels {
            let xplane = &xd[ci * s.h * s.w..(ci + 1) * s.h * s.w];
            for ky in 0..k {
                let (ylo, yhi) = tap_range(ky, pad, st, s.h, oh);
                for kx in 0..k {
                    let wv = wd[((co * spec.in_channels + ci) * k + ky) * k + kx];
                    let (xlo, xhi) = tap_range(kx, pad, st, s.w, ow);
                    if xlo >= xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = oy * st + ky - pad;
                        let orow = &mut oplane[oy * ow..(oy + 1) * ow];
                        let xrow = &xplane[iy * s.w..(iy + 1) * s.w];
                        if st == 1 {
                            let off = xlo + kx - pad;
                            for (o, &xv) in orow[xlo..xhi].iter_mut().zip(&xrow[off..off + (xhi - xlo)]) {
                                *o += wv * xv;
                            }
                        } else {
                            for ox in xlo..xhi {
                                orow[ox] += wv * xrow[ox * st + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] w.r.t. input, weights and bias.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Option<Tensor<T>>) {
    let s = x.shape();
    let ds = dy.shape();
    let (oh, ow) = (ds.h, ds.w);
    let (k, st, pad) = (spec.kernel_size, spec.stride, spec.padding);
    let mut dx = Tensor::zeros(s);
    let mut dw = Tensor::zeros(Shape::new(spec.out_channels, spec.in_channels, k * k));
    let xd = x.data();
    let wd = w.data();
    let dyd = dy.data();
    for co in 0..spec.out_channels {
        let gplane = &dyd[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..spec.in_channels {
            let xplane = &xd[ci * s.h * s.w..(ci + 1) * s.h * s.w];
            let dxplane = &mut dx.data_mut()[ci * s.h * s.w..(ci + 1) * s.h * s.w];
            for ky in 0..k {
                let (ylo, yhi) = tap_range(ky, pad, st, s.h, oh);
                for kx in 0..k {
                    let widx = ((co * spec.in_channels + ci) * k + ky) * k + kx;
                    let wv = wd[widx];
                    let (xlo, xhi) = tap_range(kx, pad, st, s.w, ow);
                    if xlo >= xhi {
                        continue;
                    }
                    let mut acc = T::zero();
                    for oy in ylo..yhi {
                        let iy = oy * st + ky - pad;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        let xrow = &xplane[iy * s.w..(iy + 1) * s.w];
                        let dxrow = &mut dxplane[iy * s.w..(iy + 1) * s.w];
                        if st == 1 {
                            let off = xlo + kx - pad;
                            let n = xhi - xlo;
                            for ((&g, &xv), dxv) in
                                grow[xlo..xhi].iter().zip(&xrow[off..off + n]).zip(dxrow[off..off + n].iter_mut())
                            {
                                acc += g * xv;
                                *dxv += g * wv;
                            }
                        } else {
                            for ox in xlo..xhi {
                                let ix = ox * st + kx - pad;
                                acc += grow[ox] * xrow[ix];
                                dxrow[ix] += grow[ox] * wv;
                            }
                        }
                    }
                    dw.data_mut()[widx] += acc;
                }
            }
        }
    }
    let db = spec.has_bias.then(|| {
        Tensor::from_fn(Shape::new(spec.out_channels, 1, 1), |co, _, _| {
            dyd[co * oh * ow..(co + 1) * oh * ow].iter().copied().sum()
        })
    });
    (dx, dw, db)
}

/// Space-to-depth. Output channel `c*r*r + dy*r + dx` holds
/// `x[c][y*r + dy][x*r + dx]`.
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    ensure!(r > 0, "pixel_unshuffle: factor must be positive");
    ensure!(s.h % r == 0 && s.w % r == 0, "pixel_unshuffle: {}x{} not divisible by {r}", s.h, s.w);
    let (oh, ow) = (s.h / r, s.w / r);
    let mut out = Tensor::zeros(Shape::new(s.c * r * r, oh, ow));
    let od = out.data_mut();
    for c in 0..s.c {
        for dy in 0..r {
            for dx in 0..r {
                let oc = c * r * r + dy * r + dx;
                for y in 0..oh {
                    for xx in 0..ow {
                        od[(oc * oh + y) * ow + xx] = x.at(c, y * r + dy, xx * r + dx);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Depth-to-space; exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    ensure!(r > 0, "pixel_shuffle: factor must be positive");
    ensure!(s.c % (r * r) == 0, "pixel_shuffle: {} channels not divisible by {}", s.c, r * r);
    let oc = s.c / (r * r);
    let mut out = Tensor::zeros(Shape::new(oc, s.h * r, s.w * r));
    for c in 0..oc {
        for dy in 0..r {
            for dx in 0..r {
                let ic = c * r * r + dy * r + dx;
                for y in 0..s.h {
                    for xx in 0..s.w {
                        out.set(c, y * r + dy, xx * r + dx, x.at(ic, y, xx));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-channel matrix product `a[c] (p x q) * b[c] (q x s)`.
pub fn channel_matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    ensure!(sa.c == sb.c, "channel_matmul: channel counts {} and {} differ", sa.c, sb.c);
    ensure!(sa.w == sb.h, "channel_matmul: inner dims {} and {} differ", sa.w, sb.h);
    let (p, q, s) = (sa.h, sa.w, sb.w);
    let mut out = Tensor::zeros(Shape::new(sa.c, p, s));
    for c in 0..sa.c {
        let am = a.channel(c);
        let bm = b.channel(c);
        let om = out.channel_mut(c);
        for i in 0..p {
            let orow = &mut om[i * s..(i + 1) * s];
            for kk in 0..q {
                let av = am[i * q + kk];
                for (o, &bv) in orow.iter_mut().zip(&bm[kk * s..(kk + 1) * s]) {
                    *o += av * bv;
                }
            }
        }
    }
    Ok(out)
}

/// Per-channel matrix transpose.
pub fn transpose<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.c, s.w, s.h), |c, y, xx| x.at(c, xx, y))
}

/// Softmax over each row of each channel, with max subtraction.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(s.w) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    out
}

pub fn softmax_rows_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let w = y.shape().w;
    let mut dx = Tensor::zeros(y.shape());
    for ((yr, gr), dr) in y.data().chunks(w).zip(dy.data().chunks(w)).zip(dx.data_mut().chunks_mut(w)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &g) in dr.iter_mut().zip(yr).zip(gr) {
            *d = yv * (g - dot);
        }
    }
    dx
}

/// Scales every row to unit L2 norm: `x / sqrt(|x|^2 + eps)`.
pub fn normalize_rows<T: Real>(x: &Tensor<T>, eps: T) -> Tensor<T> {
    let w = x.shape().w;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(w) {
        let n = (row.iter().map(|&v| v * v).sum::<T>() + eps).sqrt();
        row.iter_mut().for_each(|v| *v = *v / n);
    }
    out
}

pub fn normalize_rows_backward<T: Real>(x: &Tensor<T>, eps: T, dy: &Tensor<T>) -> Tensor<T> {
    let w = x.shape().w;
    let mut dx = Tensor::zeros(x.shape());
    for ((xr, gr), dr) in x.data().chunks(w).zip(dy.data().chunks(w)).zip(dx.data_mut().chunks_mut(w)) {
        let n = (xr.iter().map(|&v| v * v).sum::<T>() + eps).sqrt();
        let dot: T = xr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        let n3 = n * n * n;
        for ((d, &xv), &g) in dr.iter_mut().zip(xr).zip(gr) {
            *d = g / n - xv * dot / n3;
        }
    }
    dx
}

/// Per-axis linear interpolation taps under the half-pixel convention.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearTap<T> {
    pub i0: usize,
    pub i1: usize,
    pub f: T,
}

pub(crate) fn linear_taps<T: Real>(n_in: usize, n_out: usize) -> Vec<LinearTap<T>> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            LinearTap { i0, i1, f: T::of(src - i0 as f64) }
        })
        .collect()
}

/// Bilinear resize, align-corners false: source coordinate
/// `(dst + 0.5) * in / out - 0.5`, clamped to the image.
pub fn bilinear_resize<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    ensure!(out_h > 0 && out_w > 0, "bilinear_resize: target dims must be positive");
    let s = x.shape();
    let ty = linear_taps::<T>(s.h, out_h);
    let tx = linear_taps::<T>(s.w, out_w);
    let one = T::one();
    Ok(Tensor::from_fn(Shape::new(s.c, out_h, out_w), |c, y, xx| {
        let (a, b) = (ty[y], tx[xx]);
        let top = x.at(c, a.i0, b.i0) * (one - b.f) + x.at(c, a.i0, b.i1) * b.f;
        let bot = x.at(c, a.i1, b.i0) * (one - b.f) + x.at(c, a.i1, b.i1) * b.f;
        top * (one - a.f) + bot * a.f
    }))
}

pub fn bilinear_resize_backward<T: Real>(in_shape: Shape, dy: &Tensor<T>) -> Tensor<T> {
    let ds = dy.shape();
    let ty = linear_taps::<T>(in_shape.h, ds.h);
    let tx = linear_taps::<T>(in_shape.w, ds.w);
    let one = T::one();
    let mut dx = Tensor::zeros(in_shape);
    let w = in_shape.w;
    for c in 0..ds.c {
        let plane = dx.channel_mut(c);
        for (y, a) in ty.iter().enumerate() {
            for (xx, b) in tx.iter().enumerate() {
                let g = dy.at(c, y, xx);
                plane[a.i0 * w + b.i0] += g * (one - a.f) * (one - b.f);
                plane[a.i0 * w + b.i1] += g * (one - a.f) * b.f;
                plane[a.i1 * w + b.i0] += g * a.f * (one - b.f);
                plane[a.i1 * w + b.i1] += g * a.f * b.f;
            }
        }
    }
    dx
}

/// Axis along which [`select_top`] keeps entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Keep `keep` rows out of each column.
    Vertical,
    /// Keep `keep` columns out of each row.
    Horizontal,
}

/// Indices of the `keep` largest-magnitude entries of a line, in original
/// order. Ties go to the lower index.
pub(crate) fn top_indices<T: Real>(line: &[T], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..line.len()).collect();
    order.sort_by(|&i, &j| {
        line[j].abs().partial_cmp(&line[i].abs()).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
    });
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    kept
}

/// Flat source index for every output element of [`select_top`].
pub(crate) fn select_top_indices<T: Real>(x: &Tensor<T>, keep: usize, axis: Axis) -> Result<(Shape, Vec<usize>)> {
    let s = x.shape();
    let extent = match axis {
        Axis::Vertical => s.h,
        Axis::Horizontal => s.w,
    };
    ensure!(keep >= 1 && keep <= extent, "select_top: keep {keep} out of range 1..={extent}");
    match axis {
        Axis::Vertical => {
            let shape = Shape::new(s.c, keep, s.w);
            let mut idx = vec![0usize; shape.len()];
            let mut col = vec![T::zero(); s.h];
            for c in 0..s.c {
                for xx in 0..s.w {
                    for y in 0..s.h {
                        col[y] = x.at(c, y, xx);
                    }
                    for (r, y) in top_indices(&col, keep).into_iter().enumerate() {
                        idx[(c * keep + r) * s.w + xx] = (c * s.h + y) * s.w + xx;
                    }
                }
            }
            Ok((shape, idx))
        }
        Axis::Horizontal => {
            let shape = Shape::new(s.c, s.h, keep);
            let mut idx = vec![0usize; shape.len()];
            for c in 0..s.c {
                for y in 0..s.h {
                    let base = (c * s.h + y) * s.w;
                    let row = &x.data()[base..base + s.w];
                    for (r, xx) in top_indices(row, keep).into_iter().enumerate() {
                        idx[(c * s.h + y) * keep + r] = base + xx;
                    }
                }
            }
            Ok((shape, idx))
        }
    }
}

/// Keeps the `keep` entries of largest absolute value along `axis`,
/// preserving their order.
pub fn select_top<T: Real>(x: &Tensor<T>, keep: usize, axis: Axis) -> Result<Tensor<T>> {
    let (shape, idx) = select_top_indices(x, keep, axis)?;
    Tensor::new(shape, idx.iter().map(|&i| x.data()[i]).collect())
}

pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    ensure!(!parts.is_empty(), "concat: no inputs");
    let s0 = parts[0].shape();
    ensure!(parts.iter().all(|p| p.shape().h == s0.h && p.shape().w == s0.w), "concat: spatial dims differ");
    let c = parts.iter().map(|p| p.shape().c).sum();
    let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::new(Shape::new(c, s0.h, s0.w), data)
}

pub fn slice_channels<T: Real>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    ensure!(len > 0 && start + len <= s.c, "slice_channels: {start}+{len} out of {}", s.c);
    let p = s.plane();
    Tensor::new(Shape::new(len, s.h, s.w), x.data()[start * p..(start + len) * p].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: Shape) -> Tensor<f64> {
        Tensor::from_fn(shape, |c, y, x| ((c * shape.h + y) * shape.w + x) as f64)
    }

    #[test]
    fn identity_kernel_conv() {
        let x = seq(Shape::new(1, 3, 4));
        let spec = ConvSpec::new(1, 1, 1, 1).unwrap().without_bias();
        let w = Tensor::full(Shape::new(1, 1, 1), 1.0);
        assert_eq!(conv2d(&x, &spec, &w, None).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_taps() {
        let x = Tensor::full(Shape::new(1, 3, 3), 1.0f64);
        let spec = ConvSpec::new(1, 1, 3, 1).unwrap().without_bias();
        let w = Tensor::full(Shape::new(1, 1, 9), 1.0);
        let y = conv2d(&x, &spec, &w, None).unwrap();
        assert_eq!(y.at(0, 1, 1), 9.0);
        for (yy, xx) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, yy, xx), 4.0);
        }
        assert_eq!(y.at(0, 0, 1), 6.0);
    }

    #[test]
    fn strided_conv_shape() {
        let x = Tensor::full(Shape::new(1, 8, 8), 0.5f32);
        let spec = ConvSpec::new(1, 8, 3, 2).unwrap();
        let w = Tensor::full(Shape::new(8, 1, 9), 0.1);
        let b = Tensor::zeros(Shape::new(8, 1, 1));
        let y = conv2d(&x, &spec, &w, Some(&b)).unwrap();
        assert_eq!(y.shape(), Shape::new(8, 4, 4));
    }

    #[test]
    fn conv_rejects_mismatch() {
        let x = Tensor::full(Shape::new(2, 4, 4), 0.0f32);
        let spec = ConvSpec::new(3, 1, 3, 1).unwrap().without_bias();
        let w = Tensor::full(Shape::new(1, 3, 9), 0.0);
        assert!(conv2d(&x, &spec, &w, None).is_err());
    }

    #[test]
    fn unshuffle_layout() {
        let x = seq(Shape::new(1, 4, 4));
        let y = pixel_unshuffle(&x, 2).unwrap();
        let expect = [[0., 2., 8., 10.], [1., 3., 9., 11.], [4., 6., 12., 14.], [5., 7., 13., 15.]];
        for (c, e) in expect.iter().enumerate() {
            assert_eq!(y.channel(c), e);
        }
        assert_eq!(pixel_shuffle(&y, 2).unwrap(), x);
        assert_eq!(pixel_unshuffle(&x, 1).unwrap(), x);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn shuffle_shapes_and_errors() {
        let x = Tensor::<f32>::zeros(Shape::new(9, 2, 2));
        assert_eq!(pixel_shuffle(&x, 3).unwrap().shape(), Shape::new(1, 6, 6));
        assert!(pixel_shuffle(&x, 2).is_err());
        let x = Tensor::<f32>::zeros(Shape::new(1, 5, 4));
        assert!(pixel_unshuffle(&x, 2).is_err());
    }

    #[test]
    fn matmul_cases() {
        let a = Tensor::<f64>::from_rows(&[&[1.0, 2.0]]).unwrap();
        let b = Tensor::<f64>::from_rows(&[&[3.0], &[4.0]]).unwrap();
        assert_eq!(channel_matmul(&a, &b).unwrap().data(), &[11.0]);
        let a = seq(Shape::new(2, 3, 3));
        let eye = Tensor::from_fn(Shape::new(2, 3, 3), |_, y, x| if y == x { 1.0 } else { 0.0 });
        assert_eq!(channel_matmul(&a, &eye).unwrap(), a);
        assert!(channel_matmul(&a, &seq(Shape::new(2, 2, 3))).is_err());
        assert!(channel_matmul(&a, &seq(Shape::new(1, 3, 3))).is_err());
    }

    #[test]
    fn softmax_cases() {
        let x = Tensor::<f64>::from_rows(&[&[0.0, 0.0], &[1.0, 0.0], &[1000.0, 0.0]]).unwrap();
        let y = softmax_rows(&x);
        assert_eq!(&y.data()[0..2], &[0.5, 0.5]);
        let e = std::f64::consts::E;
        assert!((y.data()[2] - e / (e + 1.0)).abs() < 1e-15);
        assert!((y.data()[3] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert_eq!(&y.data()[4..6], &[1.0, 0.0]);
    }

    #[test]
    fn bilinear_cases() {
        let x = Tensor::<f64>::from_rows(&[&[0.0, 1.0]]).unwrap();
        let y = bilinear_resize(&x, 1, 4).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
        let c = Tensor::full(Shape::new(2, 5, 7), 0.3f64);
        let y = bilinear_resize(&c, 3, 11).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let x = seq(Shape::new(2, 5, 6));
        assert_eq!(bilinear_resize(&x, 5, 6).unwrap(), x);
    }

    #[test]
    fn select_top_cases() {
        let col = Tensor::<f64>::from_rows(&[&[0.1], &[-0.9], &[0.5], &[0.2]]).unwrap();
        assert_eq!(select_top(&col, 2, Axis::Vertical).unwrap().data(), &[-0.9, 0.5]);
        assert_eq!(select_top(&col, 4, Axis::Vertical).unwrap(), col);
        let ties = Tensor::<f64>::from_rows(&[&[1.0, 1.0, 1.0, 1.0]]).unwrap();
        let (_, idx) = select_top_indices(&ties, 2, Axis::Horizontal).unwrap();
        assert_eq!(idx, vec![0, 1]);
        assert!(select_top(&col, 5, Axis::Vertical).is_err());
        assert!(select_top(&col, 0, Axis::Vertical).is_err());
    }

    #[test]
    fn concat_shape() {
        let a = Tensor::<f32>::zeros(Shape::new(2, 4, 4));
        let b = Tensor::<f32>::zeros(Shape::new(3, 4, 4));
        assert_eq!(concat_channels(&[&a, &b]).unwrap().shape(), Shape::new(5, 4, 4));
        let c = Tensor::<f32>::zeros(Shape::new(3, 4, 5));
        assert!(concat_channels(&[&a, &c]).is_err());
    }
}
