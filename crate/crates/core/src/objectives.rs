//! Training losses.
//!
//! `l_con` is the per-element L1 between the predicted and reference LR
//! images. `l_hwc` sums per-element L1 over every level and every LR wavelet
//! component. `l_em` sums, over levels and detail directions, the gap between
//! predicted and HR band Frobenius norms divided by the band area.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};
use crate::wavelet::{dwt_pyramid, HaarConvention, WaveletBands, WaveletPyramid};
use crate::wrrd::LevelVars;

/// Which band area divides the energy gap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyNorm {
    /// Level-`k` HR band dims.
    #[default]
    HrBand,
    /// Level-`k` LR band dims.
    LrBand,
}

/// `l_con + l_hwc + lambda l_em`, evaluated left to right.
pub fn total_loss(l_con: f64, l_hwc: f64, l_em: f64, lambda: f64) -> f64 {
    l_con + l_hwc + lambda * l_em
}

/// Differentiable mean absolute error.
pub fn l1_mean<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let a = g.abs(d)?;
    g.mean(a)
}

pub fn content_loss_graph<T: Real>(g: &mut Graph<T>, pred: Var, reference: Var) -> Result<Var> {
    l1_mean(g, pred, reference)
}

/// `pred[k - 1]` holds level `k`'s `(A, V, H, D)` handles.
pub fn hwc_loss_graph<T: Real>(g: &mut Graph<T>, pred: &[WaveletBands<Var>], gt: &WaveletPyramid<T>) -> Result<Var> {
    ensure!(
        pred.len() == gt.depth() && !pred.is_empty(),
        "hwc_loss: {} predicted levels vs {} ground-truth levels",
        pred.len(),
        gt.depth()
    );
    let mut total: Option<Var> = None;
    for (p, t) in pred.iter().zip(&gt.levels) {
        for (&pv, tv) in p.all().into_iter().zip(t.all()) {
            let tv = g.constant(tv.clone())?;
            let term = l1_mean(g, pv, tv)?;
            total = Some(match total {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
    }
    Ok(total.expect("non-empty"))
}

/// Returns the loss and its per-level `[V, H, D]` terms.
pub fn energy_max_loss_graph<T: Real>(
    g: &mut Graph<T>,
    pred: &[[Var; 3]],
    hr: &WaveletPyramid<T>,
    norm: EnergyNorm,
) -> Result<(Var, Vec<[Var; 3]>)> {
    ensure!(
        pred.len() == hr.depth() && !pred.is_empty(),
        "energy_max_loss: {} predicted levels vs {} HR levels",
        pred.len(),
        hr.depth()
    );
    let mut total: Option<Var> = None;
    let mut terms = Vec::with_capacity(pred.len());
    for (p, bands) in pred.iter().zip(&hr.levels) {
        let mut level = Vec::with_capacity(3);
        for (&pv, hv) in p.iter().zip(bands.details()) {
            let s = match norm {
                EnergyNorm::HrBand => hv.shape(),
                EnergyNorm::LrBand => g.shape(pv),
            };
            let area = (s.h * s.w) as f64;
            let pn = g.l2_norm(pv)?;
            let hn = g.constant(Tensor::scalar(T::of(hv.sum_sq().as_f64().sqrt())))?;
            let gap = g.sub(pn, hn)?;
            let gap = g.abs(gap)?;
            let term = g.scale(gap, T::of(1.0 / area))?;
            total = Some(match total {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
            level.push(term);
        }
        terms.push([level[0], level[1], level[2]]);
    }
    Ok((total.expect("non-empty"), terms))
}

/// Tensor-level `l_con`.
pub fn content_loss<T: Real>(pred: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone())?;
    let r = g.constant(reference.clone())?;
    let l = content_loss_graph(&mut g, p, r)?;
    Ok(g.value(l).item().as_f64())
}

/// Tensor-level `l_hwc`.
pub fn hwc_loss<T: Real>(pred: &[WaveletBands<Tensor<T>>], gt: &WaveletPyramid<T>) -> Result<f64> {
    let mut g = Graph::new();
    let vars = pred
        .iter()
        .map(|b| {
            Ok(WaveletBands {
                a: g.constant(b.a.clone())?,
                v: g.constant(b.v.clone())?,
                h: g.constant(b.h.clone())?,
                d: g.constant(b.d.clone())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let l = hwc_loss_graph(&mut g, &vars, gt)?;
    Ok(g.value(l).item().as_f64())
}

/// Tensor-level `l_em`; `pred[k - 1]` holds level `k`'s `[V, H, D]`.
pub fn energy_max_loss<T: Real>(pred: &[[Tensor<T>; 3]], hr: &WaveletPyramid<T>, norm: EnergyNorm) -> Result<f64> {
    let mut g = Graph::new();
    let vars = pred
        .iter()
        .map(|b| Ok([g.constant(b[0].clone())?, g.constant(b[1].clone())?, g.constant(b[2].clone())?]))
        .collect::<Result<Vec<_>>>()?;
    let (l, _) = energy_max_loss_graph(&mut g, &vars, hr, norm)?;
    Ok(g.value(l).item().as_f64())
}

/// Fixed targets for one training pair.
#[derive(Clone, Debug)]
pub struct LossTargets<T> {
    pub reference: Tensor<T>,
    /// Pyramid of the reference LR image (`l_hwc`).
    pub lr_pyramid: WaveletPyramid<T>,
    /// Pyramid of the HR input (`l_em`).
    pub hr_pyramid: WaveletPyramid<T>,
}

impl<T: Real> LossTargets<T> {
    pub fn new(hr: &Tensor<T>, lr: &Tensor<T>, levels: usize, conv: HaarConvention) -> Result<Self> {
        Ok(LossTargets {
            reference: lr.clone(),
            lr_pyramid: dwt_pyramid(lr, levels, conv)?,
            hr_pyramid: dwt_pyramid(hr, levels, conv)?,
        })
    }
}

/// Weights of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub energy_norm: EnergyNorm,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: 0.1, energy_norm: EnergyNorm::HrBand }
    }
}

#[derive(Clone, Debug)]
pub struct LossVars {
    pub con: Var,
    pub hwc: Var,
    pub em: Var,
    pub total: Var,
    pub em_terms: Vec<[Var; 3]>,
}

/// Builds all three losses over a model forward pass.
pub fn loss_graph<T: Real>(
    g: &mut Graph<T>,
    output: Var,
    levels: &[LevelVars],
    targets: &LossTargets<T>,
    weights: LossWeights,
) -> Result<LossVars> {
    let reference = g.constant(targets.reference.clone())?;
    let con = content_loss_graph(g, output, reference)?;
    let coeffs: Vec<WaveletBands<Var>> =
        levels.iter().map(|l| WaveletBands { a: l.a4, v: l.bands.v, h: l.bands.h, d: l.bands.d }).collect();
    let hwc = hwc_loss_graph(g, &coeffs, &targets.lr_pyramid)?;
    let details: Vec<[Var; 3]> = levels.iter().map(|l| [l.bands.v, l.bands.h, l.bands.d]).collect();
    let (em, em_terms) = energy_max_loss_graph(g, &details, &targets.hr_pyramid, weights.energy_norm)?;
    let sum = g.add(con, hwc)?;
    let weighted = g.scale(em, T::of(weights.lambda))?;
    let total = g.add(sum, weighted)?;
    Ok(LossVars { con, hwc, em, total, em_terms })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_con: f64,
    pub l_hwc: f64,
    pub l_em: f64,
    /// Equals `total_loss(l_con, l_hwc, l_em, lambda)` exactly.
    pub l_total: f64,
    /// Per level, `[V, H, D]` energy terms.
    pub energy_terms: Vec<[f64; 3]>,
}

impl LossReport {
    pub fn from_graph<T: Real>(g: &Graph<T>, vars: &LossVars, lambda: f64) -> Self {
        let f = |v: Var| g.value(v).item().as_f64();
        let (l_con, l_hwc, l_em) = (f(vars.con), f(vars.hwc), f(vars.em));
        LossReport {
            l_con,
            l_hwc,
            l_em,
            l_total: total_loss(l_con, l_hwc, l_em, lambda),
            energy_terms: vars.em_terms.iter().map(|t| [f(t[0]), f(t[1]), f(t[2])]).collect(),
        }
    }

    /// Element-wise mean of several reports.
    pub fn mean(reports: &[LossReport], lambda: f64) -> LossReport {
        let n = reports.len().max(1) as f64;
        let avg = |f: &dyn Fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let (l_con, l_hwc, l_em) = (avg(&|r| r.l_con), avg(&|r| r.l_hwc), avg(&|r| r.l_em));
        let levels = reports.first().map_or(0, |r| r.energy_terms.len());
        let energy_terms = (0..levels).map(|k| std::array::from_fn(|d| avg(&|r| r.energy_terms[k][d]))).collect();
        LossReport { l_con, l_hwc, l_em, l_total: total_loss(l_con, l_hwc, l_em, lambda), energy_terms }
    }
}
