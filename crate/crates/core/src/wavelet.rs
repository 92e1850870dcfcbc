//! Single- and multi-level 2D Haar transform.
//!
//! Per 2x2 block `[[a, b], [c, d]]` the orthonormal analysis is
//!
//! ```text
//! A = (a + b + c + d) / 2    V = (a - b + c - d) / 2
//! H = (a + b - c - d) / 2    D = (a - b - c + d) / 2
//! ```
//!
//! `V` responds to change across columns, `H` to change across rows.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Shape, Tensor};

/// Scaling of the Haar filters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaarConvention {
    /// Filters scaled by 1/2; preserves energy.
    #[default]
    Orthonormal,
    /// Analysis scaled by 1/4 so `A` is the block mean; synthesis unscaled.
    Average,
}

impl HaarConvention {
    pub fn analysis_scale(self) -> f64 {
        match self {
            HaarConvention::Orthonormal => 0.5,
            HaarConvention::Average => 0.25,
        }
    }

    pub fn synthesis_scale(self) -> f64 {
        match self {
            HaarConvention::Orthonormal => 0.5,
            HaarConvention::Average => 1.0,
        }
    }
}

/// One level of sub-bands, all of equal shape.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletBands<B> {
    pub a: B,
    pub v: B,
    pub h: B,
    pub d: B,
}

impl<B> WaveletBands<B> {
    pub fn details(&self) -> [&B; 3] {
        [&self.v, &self.h, &self.d]
    }

    pub fn all(&self) -> [&B; 4] {
        [&self.a, &self.v, &self.h, &self.d]
    }
}

impl<T: Real> WaveletBands<Tensor<T>> {
    pub fn energy(&self) -> T {
        self.all().iter().map(|b| b.sum_sq()).sum()
    }
}

/// Analysis of `x (c, h, w)` into stacked `[A, V, H, D]` of shape `(4c, h/2, w/2)`.
pub(crate) fn analyze_stacked<T: Real>(x: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    let s = x.shape();
    ensure!(s.h % 2 == 0 && s.w % 2 == 0, "dwt2d: dims {}x{} must be even", s.h, s.w);
    let (oh, ow) = (s.h / 2, s.w / 2);
    let k = T::of(scale);
    let mut out = Tensor::zeros(Shape::new(4 * s.c, oh, ow));
    let op = oh * ow;
    let od = out.data_mut();
    for c in 0..s.c {
        let plane = x.channel(c);
        for y in 0..oh {
            let r0 = &plane[2 * y * s.w..(2 * y + 1) * s.w];
            let r1 = &plane[(2 * y + 1) * s.w..(2 * y + 2) * s.w];
            for xx in 0..ow {
                let (a, b) = (r0[2 * xx], r0[2 * xx + 1]);
                let (cc, d) = (r1[2 * xx], r1[2 * xx + 1]);
                let i = y * ow + xx;
                od[c * op + i] = (a + b + cc + d) * k;
                od[(s.c + c) * op + i] = (a - b + cc - d) * k;
                od[(2 * s.c + c) * op + i] = (a + b - cc - d) * k;
                od[(3 * s.c + c) * op + i] = (a - b - cc + d) * k;
            }
        }
    }
    Ok(out)
}

/// Synthesis from stacked `[A, V, H, D]` of shape `(4c, h, w)` to `(c, 2h, 2w)`.
pub(crate) fn synthesize_stacked<T: Real>(x: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    let s = x.shape();
    ensure!(s.c % 4 == 0, "idwt2d: stacked input needs 4k channels, got {}", s.c);
    let c_out = s.c / 4;
    let (oh, ow) = (s.h * 2, s.w * 2);
    let k = T::of(scale);
    let ip = s.plane();
    let xd = x.data();
    let mut out = Tensor::zeros(Shape::new(c_out, oh, ow));
    for c in 0..c_out {
        let plane = out.channel_mut(c);
        for y in 0..s.h {
            for xx in 0..s.w {
                let i = y * s.w + xx;
                let a = xd[c * ip + i];
                let v = xd[(c_out + c) * ip + i];
                let h = xd[(2 * c_out + c) * ip + i];
                let d = xd[(3 * c_out + c) * ip + i];
                plane[2 * y * ow + 2 * xx] = (a + v + h + d) * k;
                plane[2 * y * ow + 2 * xx + 1] = (a - v + h - d) * k;
                plane[(2 * y + 1) * ow + 2 * xx] = (a + v - h - d) * k;
                plane[(2 * y + 1) * ow + 2 * xx + 1] = (a - v - h + d) * k;
            }
        }
    }
    Ok(out)
}

fn split<T: Real>(stacked: Tensor<T>) -> WaveletBands<Tensor<T>> {
    let s = stacked.shape();
    let c = s.c / 4;
    let p = c * s.plane();
    let shape = Shape::new(c, s.h, s.w);
    let data = stacked.into_data();
    let part = |i: usize| Tensor::new(shape, data[i * p..(i + 1) * p].to_vec()).expect("band shape");
    WaveletBands { a: part(0), v: part(1), h: part(2), d: part(3) }
}

fn stack<T: Real>(bands: &WaveletBands<Tensor<T>>) -> Result<Tensor<T>> {
    let s = bands.a.shape();
    ensure!(
        bands.all().iter().all(|b| b.shape() == s),
        "idwt2d: band shapes differ ({}, {}, {}, {})",
        bands.a.shape(),
        bands.v.shape(),
        bands.h.shape(),
        bands.d.shape()
    );
    let data = bands.all().iter().flat_map(|b| b.data().iter().copied()).collect();
    Tensor::new(Shape::new(4 * s.c, s.h, s.w), data)
}

pub fn dwt2d<T: Real>(x: &Tensor<T>, conv: HaarConvention) -> Result<WaveletBands<Tensor<T>>> {
    Ok(split(analyze_stacked(x, conv.analysis_scale())?))
}

pub fn idwt2d<T: Real>(bands: &WaveletBands<Tensor<T>>, conv: HaarConvention) -> Result<Tensor<T>> {
    synthesize_stacked(&stack(bands)?, conv.synthesis_scale())
}

/// Levels `1..=K` of a recursive decomposition; level `k+1` decomposes the
/// `A` band of level `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid<T> {
    pub levels: Vec<WaveletBands<Tensor<T>>>,
}

impl<T: Real> WaveletPyramid<T> {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Bands at level `k` (1-based).
    pub fn level(&self, k: usize) -> &WaveletBands<Tensor<T>> {
        &self.levels[k - 1]
    }

    pub fn deepest_average(&self) -> &Tensor<T> {
        &self.levels.last().expect("non-empty pyramid").a
    }

    /// Recursive synthesis back to the input.
    pub fn reconstruct(&self, conv: HaarConvention) -> Result<Tensor<T>> {
        let mut a = self.deepest_average().clone();
        for bands in self.levels.iter().rev() {
            let level = WaveletBands { a, v: bands.v.clone(), h: bands.h.clone(), d: bands.d.clone() };
            a = idwt2d(&level, conv)?;
        }
        Ok(a)
    }
}

pub fn dwt_pyramid<T: Real>(x: &Tensor<T>, levels: usize, conv: HaarConvention) -> Result<WaveletPyramid<T>> {
    ensure!(levels >= 1, "dwt_pyramid: need at least one level");
    let s = x.shape();
    let m = 1usize << levels;
    ensure!(s.h % m == 0 && s.w % m == 0, "dwt_pyramid: {}x{} not divisible by 2^{levels} = {m}", s.h, s.w);
    let mut out = Vec::with_capacity(levels);
    let mut cur = dwt2d(x, conv)?;
    for _ in 1..levels {
        let next = dwt2d(&cur.a, conv)?;
        out.push(cur);
        cur = next;
    }
    out.push(cur);
    Ok(WaveletPyramid { levels: out })
}

/// Differentiable single-level analysis on a graph.
pub fn dwt2d_graph<T: Real>(g: &mut Graph<T>, x: Var, conv: HaarConvention) -> Result<WaveletBands<Var>> {
    let stacked = g.haar_analysis(x, conv)?;
    let c = g.shape(x).c;
    Ok(WaveletBands {
        a: g.slice_channels(stacked, 0, c)?,
        v: g.slice_channels(stacked, c, c)?,
        h: g.slice_channels(stacked, 2 * c, c)?,
        d: g.slice_channels(stacked, 3 * c, c)?,
    })
}

/// Differentiable single-level synthesis on a graph.
pub fn idwt2d_graph<T: Real>(g: &mut Graph<T>, bands: &WaveletBands<Var>, conv: HaarConvention) -> Result<Var> {
    let s = g.shape(bands.a);
    for b in bands.details() {
        let sb = g.shape(*b);
        ensure!(sb == s, "idwt2d: band shapes {s} and {sb} differ");
    }
    let stacked = g.concat(&[bands.a, bands.v, bands.h, bands.d])?;
    g.haar_synthesis(stacked, conv)
}
