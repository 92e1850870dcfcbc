//! Classical separable resamplers used as baselines.
//!
//! All kernels share the half-pixel convention: destination sample `d`
//! sits at source coordinate `(d + 0.5) * m / n - 0.5`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::scale::RationalScale;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleKernel {
    Nearest,
    Bilinear,
    Bicubic,
    Area,
    Lanczos3,
}

impl ResampleKernel {
    pub const BASELINES: [ResampleKernel; 4] =
        [ResampleKernel::Nearest, ResampleKernel::Bilinear, ResampleKernel::Bicubic, ResampleKernel::Area];

    pub fn name(&self) -> &'static str {
        match self {
            ResampleKernel::Nearest => "nearest",
            ResampleKernel::Bilinear => "bilinear",
            ResampleKernel::Bicubic => "bicubic",
            ResampleKernel::Area => "area",
            ResampleKernel::Lanczos3 => "lanczos3",
        }
    }
}

impl FromStr for ResampleKernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nearest" => Ok(ResampleKernel::Nearest),
            "bilinear" => Ok(ResampleKernel::Bilinear),
            "bicubic" => Ok(ResampleKernel::Bicubic),
            "area" => Ok(ResampleKernel::Area),
            "lanczos3" => Ok(ResampleKernel::Lanczos3),
            other => Err(Error::Contract(format!("unknown kernel {other:?}"))),
        }
    }
}

const BICUBIC_A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    let a = BICUBIC_A;
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn lanczos3(x: f64) -> f64 {
    if x.abs() < 3.0 {
        sinc(x) * sinc(x / 3.0)
    } else {
        0.0
    }
}

type Taps = Vec<Vec<(usize, f64)>>;

/// Weights per output index for a resampling of `n_in` samples by `n/m`.
fn axis_taps(kernel: ResampleKernel, n_in: usize, scale: RationalScale) -> Result<Taps> {
    let n_out = scale.apply(n_in)?;
    let (n, m) = (scale.n(), scale.m());
    let ratio = scale.factor();
    let last = n_in as isize - 1;
    let clampi = |i: isize| i.clamp(0, last) as usize;
    let taps = (0..n_out)
        .map(|d| match kernel {
            ResampleKernel::Nearest => vec![(d * m / n, 1.0)],
            ResampleKernel::Bilinear => {
                let src = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, last as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                let f = src - i0 as f64;
                vec![(i0, 1.0 - f), (i1, f)]
            }
            ResampleKernel::Bicubic => {
                let src = (d as f64 + 0.5) * ratio - 0.5;
                let i = src.floor();
                let t = src - i;
                let i = i as isize;
                vec![
                    (clampi(i - 1), cubic(t + 1.0)),
                    (clampi(i), cubic(t)),
                    (clampi(i + 1), cubic(1.0 - t)),
                    (clampi(i + 2), cubic(2.0 - t)),
                ]
            }
            ResampleKernel::Lanczos3 => {
                let src = (d as f64 + 0.5) * ratio - 0.5;
                let i = src.floor() as isize;
                let raw: Vec<(usize, f64)> = (i - 2..=i + 3).map(|j| (clampi(j), lanczos3(src - j as f64))).collect();
                let total: f64 = raw.iter().map(|t| t.1).sum();
                raw.into_iter().map(|(j, w)| (j, w / total)).collect()
            }
            ResampleKernel::Area => {
                // Footprint [d*m, (d+1)*m) and pixel [i*n, (i+1)*n), in units of 1/n.
                let (lo, hi) = (d * m, (d + 1) * m);
                (lo / n..hi.div_ceil(n))
                    .filter_map(|i| {
                        let ov = hi.min((i + 1) * n).saturating_sub(lo.max(i * n));
                        (ov > 0).then_some((i, ov as f64 / m as f64))
                    })
                    .collect()
            }
        })
        .collect();
    Ok(taps)
}

/// Separable resample of every channel by `scale`, accumulating in `f64`.
pub fn interpolate_resample<T: Real>(x: &Tensor<T>, scale: RationalScale, kernel: ResampleKernel) -> Result<Tensor<T>> {
    let s = x.shape();
    let ty = axis_taps(kernel, s.h, scale)?;
    let tx = axis_taps(kernel, s.w, scale)?;
    Ok(separable(x, &ty, &tx))
}

fn separable<T: Real>(x: &Tensor<T>, ty: &Taps, tx: &Taps) -> Tensor<T> {
    let s = x.shape();
    let (oh, ow) = (ty.len(), tx.len());
    let mut out = Tensor::zeros(Shape::new(s.c, oh, ow));
    let mut rows = vec![0.0f64; s.h * ow];
    for c in 0..s.c {
        let plane = x.channel(c);
        for y in 0..s.h {
            let src = &plane[y * s.w..(y + 1) * s.w];
            for (xx, taps) in tx.iter().enumerate() {
                rows[y * ow + xx] = taps.iter().map(|&(i, w)| src[i].as_f64() * w).sum();
            }
        }
        let dst = out.channel_mut(c);
        for (y, taps) in ty.iter().enumerate() {
            for xx in 0..ow {
                let v: f64 = taps.iter().map(|&(i, w)| rows[i * ow + xx] * w).sum();
                dst[y * ow + xx] = T::of(v);
            }
        }
    }
    out
}

/// Separable Gaussian blur with replicated borders, radius `ceil(3 sigma)`.
pub fn gaussian_blur<T: Real>(x: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    ensure!(sigma > 0.0 && sigma.is_finite(), "gaussian_blur: sigma must be positive");
    let s = x.shape();
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    let taps_for = |n: usize| -> Taps {
        (0..n as isize)
            .map(|d| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| ((d + k as isize - radius).clamp(0, n as isize - 1) as usize, w / total))
                    .collect()
            })
            .collect()
    };
    Ok(separable(x, &taps_for(s.h), &taps_for(s.w)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half() -> RationalScale {
        RationalScale::new(1, 2).unwrap()
    }

    #[test]
    fn area_and_nearest_on_block() {
        let x = Tensor::<f32>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(interpolate_resample(&x, half(), ResampleKernel::Area).unwrap().item(), 2.5);
        assert_eq!(interpolate_resample(&x, half(), ResampleKernel::Nearest).unwrap().item(), 1.0);
    }

    #[test]
    fn area_weights_partition() {
        let s = RationalScale::new(10, 13).unwrap();
        let taps = axis_taps(ResampleKernel::Area, 26, s).unwrap();
        assert_eq!(taps.len(), 20);
        for t in &taps {
            assert!((t.iter().map(|w| w.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // every source pixel contributes total weight n/m
        let mut mass = [0.0; 26];
        for t in &taps {
            for &(i, w) in t {
                mass[i] += w;
            }
        }
        assert!(mass.iter().all(|&v| (v - 10.0 / 13.0).abs() < 1e-12));
    }

    #[test]
    fn non_integral_target_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 5, 4));
        assert!(interpolate_resample(&x, half(), ResampleKernel::Bilinear).is_err());
    }

    #[test]
    fn blur_preserves_constant() {
        let x = Tensor::full(Shape::new(2, 9, 7), 0.25f32);
        let y = gaussian_blur(&x, 1.3).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }
}
