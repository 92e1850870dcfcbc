//! Adam, the staircase learning-rate schedule and the training loop.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::load_nraw;
use crate::error::{ensure, Error, Result};
use crate::format::sig6;
use crate::graph::Graph;
use crate::objectives::{loss_graph, EnergyNorm, LossReport, LossTargets, LossWeights};
use crate::params::ModelParams;
use crate::raw::{mix_seed, PairedSample};
use crate::scale::RationalScale;
use crate::tensor::{Real, Tensor};
use crate::wrrd::Model;

const STREAM_BATCH: u64 = 0xba7c;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Multiplier applied every `decay_every` iterations.
    pub decay: f64,
    pub decay_every: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub energy_norm: EnergyNorm,
    pub seed: u64,
    pub scales: Vec<RationalScale>,
    /// Draw the scale of each iteration uniformly from `scales`.
    pub mixed_scale: bool,
    /// Side of the square packed HR crop taken from each sample; whole
    /// samples when absent.
    pub crop: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            decay: 0.8,
            decay_every: 40_000,
            iterations: 2_000,
            batch_size: 2,
            lambda: 0.1,
            energy_norm: EnergyNorm::HrBand,
            seed: 0,
            scales: vec![RationalScale::new(1, 2).expect("valid scale")],
            mixed_scale: false,
            crop: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr0 > 0.0 && self.lr0.is_finite(), "lr0 must be positive");
        ensure!(self.decay > 0.0 && self.decay <= 1.0, "decay must be in (0, 1]");
        ensure!(self.decay_every > 0, "decay_every must be positive");
        ensure!(self.batch_size > 0, "batch_size must be positive");
        ensure!(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be >= 0");
        ensure!(!self.scales.is_empty(), "at least one scale is required");
        ensure!(
            self.mixed_scale || self.scales.len() == 1,
            "per-scale training takes exactly one scale; set mixed_scale for several"
        );
        ensure!((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), "betas must be in [0, 1)");
        ensure!(self.eps > 0.0, "eps must be positive");
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda: self.lambda, energy_norm: self.energy_norm }
    }
}

/// `lr0 decay^floor(iter / decay_every)`, rounded to 15 significant digits
/// so decimal schedules land on the nearest double of the decimal value.
pub fn lr_schedule(iter: usize, cfg: &TrainConfig) -> f64 {
    let steps = (iter / cfg.decay_every) as i32;
    let raw = cfg.lr0 * cfg.decay.powi(steps);
    format!("{raw:.14e}").parse().expect("formatted float parses")
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState { step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.step == other.step
            && self.m.len() == other.m.len()
            && self.m.iter().zip(&other.m).all(|(a, b)| a.bit_eq(b))
            && self.v.iter().zip(&other.v).all(|(a, b)| a.bit_eq(b))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    ensure!(
        grads.len() == params.len() && state.m.len() == params.len(),
        "adam: {} params, {} grads, {} moments",
        params.len(),
        grads.len(),
        state.m.len()
    );
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::of(1.0 - hyper.beta1.powi(t));
    let bc2 = T::of(1.0 - hyper.beta2.powi(t));
    let (b1, b2) = (T::of(hyper.beta1), T::of(hyper.beta2));
    let (one, lr, eps) = (T::one(), T::of(lr), T::of(hyper.eps));
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = &grads[i];
        ensure!(g.shape() == p.shape(), "adam: grad {} vs param {}", g.shape(), p.shape());
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            *w = *w - lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Options for [`evaluate_loss`].
#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    pub gradients: bool,
    pub track_kinks: bool,
}

#[derive(Clone, Debug)]
pub struct LossEval<T> {
    pub report: LossReport,
    /// Graph value of the total loss (in `T`).
    pub total: T,
    pub gradients: Option<Vec<Tensor<T>>>,
    pub kink_signature: Option<u64>,
}

/// Forward pass, losses and optionally parameter gradients for one pair.
pub fn evaluate_loss<T: Real>(
    model: &Model,
    params: &ModelParams<T>,
    hr: &Tensor<T>,
    targets: &LossTargets<T>,
    scale: RationalScale,
    weights: LossWeights,
    opts: EvalOptions,
) -> Result<LossEval<T>> {
    model.layout().check(params)?;
    let mut g = if opts.track_kinks { Graph::with_kink_tracking() } else { Graph::new() };
    let p = params.bind(&mut g)?;
    let x = g.constant(hr.clone())?;
    let fwd = model.forward(&mut g, &p, x, scale, None)?;
    let vars = loss_graph(&mut g, fwd.output, &fwd.levels, targets, weights)?;
    let report = LossReport::from_graph(&g, &vars, weights.lambda);
    let gradients = if opts.gradients {
        let grads = g.backward(vars.total)?;
        Some(p.vars().iter().zip(params.tensors()).map(|(&v, t)| grads.get_or_zeros(v, t.shape())).collect())
    } else {
        None
    };
    Ok(LossEval { report, total: g.value(vars.total).item(), gradients, kink_signature: g.kink_signature() })
}

/// Parameters plus optimizer state after `iteration` completed steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub iteration: usize,
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
}

impl TrainState {
    pub fn fresh(model: &Model, seed: u64) -> Self {
        let params = model.init_params(seed);
        let adam = AdamState::new(&params);
        TrainState { iteration: 0, params, adam }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.iteration == other.iteration && self.params.bit_eq(&other.params) && self.adam.bit_eq(&other.adam)
    }
}

/// One loss-curve row; `iter` is 1-based and losses are batch means measured
/// before that iteration's update.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub iter: usize,
    pub lr: f64,
    pub loss: LossReport,
}

pub const CURVE_HEADER: &str = "iter,lr,l_con,l_hwc,l_em,l_total";

impl CurveRow {
    pub fn csv(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{}",
            self.iter,
            sig6(self.lr),
            sig6(l.l_con),
            sig6(l.l_hwc),
            sig6(l.l_em),
            sig6(l.l_total)
        )
    }
}

pub fn write_curve(mut w: impl Write, rows: &[CurveRow]) -> Result<()> {
    writeln!(w, "{CURVE_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    Ok(())
}

/// Training over an in-memory dataset.
#[derive(Debug)]
pub struct Trainer<'a> {
    model: &'a Model,
    cfg: &'a TrainConfig,
    by_scale: Vec<Vec<&'a PairedSample>>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a Model, cfg: &'a TrainConfig, data: &'a [PairedSample]) -> Result<Self> {
        cfg.validate()?;
        ensure!(!data.is_empty(), "training dataset is empty");
        let mut by_scale = Vec::with_capacity(cfg.scales.len());
        for &s in &cfg.scales {
            ensure!(model.scales().contains(&s), "model was not built for scale {s}");
            let subset: Vec<&PairedSample> = data.iter().filter(|d| d.scale == s).collect();
            ensure!(!subset.is_empty(), "no training pairs at scale {s}");
            for d in &subset {
                d.validate()?;
                let (h, w) = match cfg.crop {
                    Some(c) => {
                        ensure!(
                            c <= d.hr.height() && c <= d.hr.width(),
                            "crop {c} exceeds sample {}x{}",
                            d.hr.height(),
                            d.hr.width()
                        );
                        (c, c)
                    }
                    None => (d.hr.height(), d.hr.width()),
                };
                model.config().check_dims(h, w, s)?;
            }
            by_scale.push(subset);
        }
        if !cfg.mixed_scale {
            ensure!(
                data.iter().all(|d| d.scale == cfg.scales[0]),
                "per-scale training found pairs at other scales than {}",
                cfg.scales[0]
            );
        }
        Ok(Trainer { model, cfg, by_scale })
    }

    /// Batch of `(hr, lr, scale)` for 0-based iteration `iter`; depends only
    /// on `(seed, iter)`.
    pub fn batch(&self, iter: usize) -> Result<Vec<(Tensor<f32>, Tensor<f32>, RationalScale)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(self.cfg.seed, STREAM_BATCH), iter as u64));
        let si = if self.cfg.mixed_scale { rng.random_range(0..self.by_scale.len()) } else { 0 };
        let scale = self.cfg.scales[si];
        let pool = &self.by_scale[si];
        (0..self.cfg.batch_size)
            .map(|_| {
                let d = pool[rng.random_range(0..pool.len())];
                match self.cfg.crop {
                    None => Ok((d.hr.tensor().clone(), d.lr.tensor().clone(), scale)),
                    Some(c) => {
                        let (n, m) = (scale.n(), scale.m());
                        let oy = rng.random_range(0..=(d.hr.height() - c) / m) * m;
                        let ox = rng.random_range(0..=(d.hr.width() - c) / m) * m;
                        let hr = d.hr.crop(c, c, oy, ox)?;
                        let lr = d.lr.crop(c * n / m, c * n / m, oy * n / m, ox * n / m)?;
                        Ok((hr.into_tensor(), lr.into_tensor(), scale))
                    }
                }
            })
            .collect()
    }

    /// Runs iteration `state.iteration + 1`.
    pub fn step(&self, state: &mut TrainState) -> Result<CurveRow> {
        let iter = state.iteration;
        let lr = lr_schedule(iter, self.cfg);
        let weights = self.cfg.weights();
        let batch = self.batch(iter)?;
        let inv = 1.0 / batch.len() as f32;
        let mut acc: Vec<Tensor<f32>> = state.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let mut reports = Vec::with_capacity(batch.len());
        for (hr, lr_ref, scale) in &batch {
            let targets = LossTargets::new(hr, lr_ref, self.model.config().levels, self.model.config().wavelet)?;
            let eval = evaluate_loss(
                self.model,
                &state.params,
                hr,
                &targets,
                *scale,
                weights,
                EvalOptions { gradients: true, track_kinks: false },
            )?;
            for (a, g) in acc.iter_mut().zip(eval.gradients.expect("requested")) {
                a.add_assign(&g.scaled(inv));
            }
            reports.push(eval.report);
        }
        let hyper = AdamHyper { beta1: self.cfg.beta1, beta2: self.cfg.beta2, eps: self.cfg.eps };
        adam_step(&mut state.params, &acc, &mut state.adam, lr, hyper)?;
        state.iteration += 1;
        Ok(CurveRow { iter: state.iteration, lr, loss: LossReport::mean(&reports, self.cfg.lambda) })
    }

    /// Steps until `state.iteration == until`, calling `on_row` after each.
    pub fn run(
        &self,
        state: &mut TrainState,
        until: usize,
        mut on_row: impl FnMut(&CurveRow),
    ) -> Result<Vec<CurveRow>> {
        let mut rows = Vec::with_capacity(until.saturating_sub(state.iteration));
        while state.iteration < until {
            let row = self.step(state)?;
            on_row(&row);
            rows.push(row);
        }
        Ok(rows)
    }
}

/// Loads every `.nraw` pair in `dir`, sorted by file name.
pub fn load_pair_dir(dir: impl AsRef<Path>) -> Result<Vec<PairedSample>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "nraw"))
        .collect();
    paths.sort();
    paths.into_iter().map(|p| load_nraw(&p)?.into_pair()).collect::<Result<Vec<_>>>().and_then(|v| {
        if v.is_empty() {
            Err(Error::contract(format!("no .nraw pairs in {}", dir.as_ref().display())))
        } else {
            Ok(v)
        }
    })
}
