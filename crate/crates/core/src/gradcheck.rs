//! Central finite-difference verification of analytic gradients.
//!
//! Coordinates whose `x +- h` evaluations change a kink signature (a
//! `leaky_relu` or `abs` sign, or a top-k selection) are skipped and, when
//! sampling, replaced by a fresh coordinate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::objectives::{LossTargets, LossWeights};
use crate::ops::Axis;
use crate::params::ModelParams;
use crate::raw::{generate_synthetic_pair, SynthOptions};
use crate::scale::RationalScale;
use crate::tensor::{ConvSpec, Shape, Tensor};
use crate::trainer::{evaluate_loss, EvalOptions};
use crate::wavelet::HaarConvention;
use crate::wrrd::{Model, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates compared in the full-model check.
    pub samples: usize,
    pub tolerance: f64,
    pub min_pass_fraction: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// Tolerance of the per-primitive checks.
    pub primitive_tolerance: f64,
    pub seed: u64,
    pub model: ModelConfig,
    /// Packed HR side of the test input.
    pub size: usize,
    pub scale: RationalScale,
    pub lambda: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-5,
            samples: 500,
            tolerance: 1e-4,
            min_pass_fraction: 0.99,
            floor: 1e-6,
            primitive_tolerance: 1e-6,
            seed: 7,
            model: ModelConfig::tiny(2, 2),
            size: 16,
            scale: RationalScale::new(1, 2).expect("valid scale"),
            lambda: 0.1,
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoordResult {
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub name: String,
    pub results: Vec<CoordResult>,
    /// Coordinates skipped because a kink lay within `+-h`.
    pub skipped_kinks: usize,
    pub tolerance: f64,
    pub min_pass_fraction: f64,
}

impl GradcheckReport {
    pub fn checked(&self) -> usize {
        self.results.len()
    }

    pub fn passed(&self) -> usize {
        self.results.iter().filter(|r| r.rel_error <= self.tolerance).count()
    }

    pub fn pass_fraction(&self) -> f64 {
        if self.results.is_empty() {
            0.0
        } else {
            self.passed() as f64 / self.checked() as f64
        }
    }

    pub fn max_rel_error(&self) -> f64 {
        self.results.iter().map(|r| r.rel_error).fold(0.0, f64::max)
    }

    pub fn mean_rel_error(&self) -> f64 {
        if self.results.is_empty() {
            return 0.0;
        }
        self.results.iter().map(|r| r.rel_error).sum::<f64>() / self.checked() as f64
    }

    pub fn ok(&self) -> bool {
        !self.results.is_empty() && self.pass_fraction() >= self.min_pass_fraction
    }

    pub fn worst(&self) -> Option<&CoordResult> {
        self.results.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// A scalar function of a flat coordinate vector.
pub trait Objective {
    fn len(&self) -> usize;
    fn get(&self, i: usize) -> f64;
    fn set(&mut self, i: usize, v: f64);
    /// Value and kink signature at the current point.
    fn eval(&self) -> Result<(f64, Option<u64>)>;
    fn label(&self, i: usize) -> String;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which coordinates to compare.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// Distinct random coordinates drawn from `seed`.
    Sample {
        count: usize,
        seed: u64,
    },
}

/// Compares `analytic[i]` with `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_difference_check<O: Objective>(
    name: &str,
    obj: &mut O,
    analytic: &[f64],
    coords: Coords,
    step: f64,
    floor: f64,
    tolerance: f64,
    min_pass_fraction: f64,
) -> Result<GradcheckReport> {
    ensure!(analytic.len() == obj.len(), "gradcheck: {} analytic values for {} coords", analytic.len(), obj.len());
    let (_, base) = obj.eval()?;
    let mut report =
        GradcheckReport { name: name.to_string(), results: Vec::new(), skipped_kinks: 0, tolerance, min_pass_fraction };
    let mut probe = |i: usize, report: &mut GradcheckReport| -> Result<bool> {
        let x0 = obj.get(i);
        obj.set(i, x0 + step);
        let (fp, sp) = obj.eval()?;
        obj.set(i, x0 - step);
        let (fm, sm) = obj.eval()?;
        obj.set(i, x0);
        if sp != base || sm != base {
            report.skipped_kinks += 1;
            return Ok(false);
        }
        let numeric = (fp - fm) / (2.0 * step);
        report.results.push(CoordResult {
            label: obj.label(i),
            analytic: analytic[i],
            numeric,
            rel_error: rel_error(analytic[i], numeric, floor),
        });
        Ok(true)
    };
    match coords {
        Coords::All => {
            for i in 0..analytic.len() {
                probe(i, &mut report)?;
            }
        }
        Coords::Sample { count, seed } => {
            let n = analytic.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..n).collect();
            // Fisher-Yates prefix: coordinates are drawn without replacement.
            let mut next = 0;
            while report.checked() < count && next < n {
                let j = rng.random_range(next..n);
                order.swap(next, j);
                probe(order[next], &mut report)?;
                next += 1;
            }
        }
    }
    Ok(report)
}

/// Full-model objective over all parameters in 64-bit.
struct ModelObjective<'a> {
    model: &'a Model,
    params: ModelParams<f64>,
    hr: Tensor<f64>,
    targets: LossTargets<f64>,
    scale: RationalScale,
    weights: LossWeights,
    offsets: Vec<usize>,
}

impl Objective for ModelObjective<'_> {
    fn len(&self) -> usize {
        self.params.num_elements()
    }

    fn get(&self, i: usize) -> f64 {
        self.params.flat_get(i)
    }

    fn set(&mut self, i: usize, v: f64) {
        self.params.flat_set(i, v);
    }

    fn eval(&self) -> Result<(f64, Option<u64>)> {
        let e = evaluate_loss(
            self.model,
            &self.params,
            &self.hr,
            &self.targets,
            self.scale,
            self.weights,
            EvalOptions { gradients: false, track_kinks: true },
        )?;
        Ok((e.total, e.kink_signature))
    }

    fn label(&self, i: usize) -> String {
        let p = self.offsets.partition_point(|&o| o <= i) - 1;
        format!("{}[{}]", self.params.names()[p], i - self.offsets[p])
    }
}

/// Gradient of `l_total` for a synthetic pair against finite differences.
pub fn model_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    model_gradcheck_with(cfg, |g| g)
}

/// As [`model_gradcheck`], with `corrupt` applied to the analytic gradient
/// before comparison.
pub fn model_gradcheck_with(
    cfg: &GradcheckConfig,
    corrupt: impl FnOnce(Vec<f64>) -> Vec<f64>,
) -> Result<GradcheckReport> {
    let model = Model::new(cfg.model.clone(), &[cfg.scale])?;
    let params: ModelParams<f64> = model.init_params(cfg.seed);
    let opts = SynthOptions { noise_sigma: 0.01, ..SynthOptions::default() };
    let pair = generate_synthetic_pair(cfg.seed, (cfg.size, cfg.size), cfg.scale, &opts)?;
    let hr = pair.hr.tensor().cast::<f64>();
    let lr = pair.lr.tensor().cast::<f64>();
    let targets = LossTargets::new(&hr, &lr, cfg.model.levels, cfg.model.wavelet)?;
    let weights = LossWeights { lambda: cfg.lambda, ..LossWeights::default() };
    let eval = evaluate_loss(
        &model,
        &params,
        &hr,
        &targets,
        cfg.scale,
        weights,
        EvalOptions { gradients: true, track_kinks: false },
    )?;
    let analytic: Vec<f64> = eval.gradients.expect("requested").iter().flat_map(|t| t.data().iter().copied()).collect();
    let analytic = corrupt(analytic);
    let mut offsets = Vec::with_capacity(params.len());
    let mut acc = 0;
    for t in params.tensors() {
        offsets.push(acc);
        acc += t.len();
    }
    let mut obj = ModelObjective { model: &model, params, hr, targets, scale: cfg.scale, weights, offsets };
    finite_difference_check(
        "model",
        &mut obj,
        &analytic,
        Coords::Sample { count: cfg.samples, seed: cfg.seed ^ 0x9c },
        cfg.step,
        cfg.floor,
        cfg.tolerance,
        cfg.min_pass_fraction,
    )
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// `sum(w * op(inputs))` with fixed random weights `w`.
struct OpObjective {
    inputs: Vec<Tensor<f64>>,
    build: Build,
    seed: u64,
}

impl OpObjective {
    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (k, t) in self.inputs.iter().enumerate() {
            if i < t.len() {
                return (k, i);
            }
            i -= t.len();
        }
        panic!("coordinate out of range")
    }

    /// Loss value, kink signature and (optionally) input gradients.
    fn run(&self, grads: bool) -> Result<(f64, Option<u64>, Vec<f64>)> {
        let mut g = Graph::with_kink_tracking();
        let vars = self.inputs.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>>>()?;
        let y = (self.build)(&mut g, &vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let w = Tensor::from_fn(g.shape(y), |_, _, _| rng.random_range(-1.0..1.0));
        let w = g.constant(w)?;
        let prod = g.mul(y, w)?;
        let loss = g.sum(prod)?;
        let value = g.value(loss).item();
        let mut flat = Vec::new();
        if grads {
            let gr = g.backward(loss)?;
            for (v, t) in vars.iter().zip(&self.inputs) {
                flat.extend(gr.get_or_zeros(*v, t.shape()).into_data());
            }
        }
        Ok((value, g.kink_signature(), flat))
    }
}

impl Objective for OpObjective {
    fn len(&self) -> usize {
        self.inputs.iter().map(Tensor::len).sum()
    }

    fn get(&self, i: usize) -> f64 {
        let (k, j) = self.locate(i);
        self.inputs[k].data()[j]
    }

    fn set(&mut self, i: usize, v: f64) {
        let (k, j) = self.locate(i);
        self.inputs[k].data_mut()[j] = v;
    }

    fn eval(&self) -> Result<(f64, Option<u64>)> {
        let (v, s, _) = self.run(false)?;
        Ok((v, s))
    }

    fn label(&self, i: usize) -> String {
        let (k, j) = self.locate(i);
        format!("input{k}[{j}]")
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero and pairwise separated in magnitude.
fn separated_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    let n = shape.len();
    let mut mags: Vec<f64> = (0..n).map(|i| 0.1 + 0.9 * (i as f64 + 0.5) / n as f64).collect();
    for i in (1..n).rev() {
        mags.swap(i, rng.random_range(0..=i));
    }
    let data = mags.into_iter().map(|m| if rng.random_bool(0.5) { m } else { -m }).collect();
    Tensor::new(shape, data).expect("length matches")
}

fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor<f64>>, Build)> {
    let s = Shape::new;
    let mut cases: Vec<(&'static str, Vec<Tensor<f64>>, Build)> = Vec::new();
    let conv = ConvSpec::new(2, 3, 3, 1).expect("valid spec");
    cases.push((
        "conv2d",
        vec![random_tensor(rng, s(2, 5, 5)), random_tensor(rng, s(3, 2, 9)), random_tensor(rng, s(3, 1, 1))],
        Box::new(move |g, v| g.conv2d(v[0], conv, v[1], Some(v[2]))),
    ));
    let strided = ConvSpec::new(2, 2, 3, 2).expect("valid spec").without_bias();
    cases.push((
        "conv2d_stride2",
        vec![random_tensor(rng, s(2, 6, 6)), random_tensor(rng, s(2, 2, 9))],
        Box::new(move |g, v| g.conv2d(v[0], strided, v[1], None)),
    ));
    let pointwise = ConvSpec::new(3, 2, 1, 1).expect("valid spec");
    cases.push((
        "conv2d_1x1",
        vec![random_tensor(rng, s(3, 3, 4)), random_tensor(rng, s(2, 3, 1)), random_tensor(rng, s(2, 1, 1))],
        Box::new(move |g, v| g.conv2d(v[0], pointwise, v[1], Some(v[2]))),
    ));
    cases.push(("pixel_unshuffle", vec![random_tensor(rng, s(2, 4, 6))], Box::new(|g, v| g.pixel_unshuffle(v[0], 2))));
    cases.push(("pixel_shuffle", vec![random_tensor(rng, s(8, 3, 2))], Box::new(|g, v| g.pixel_shuffle(v[0], 2))));
    cases.push((
        "channel_matmul",
        vec![random_tensor(rng, s(2, 3, 4)), random_tensor(rng, s(2, 4, 5))],
        Box::new(|g, v| g.channel_matmul(v[0], v[1])),
    ));
    cases.push(("transpose", vec![random_tensor(rng, s(2, 3, 4))], Box::new(|g, v| g.transpose(v[0]))));
    cases.push(("softmax_rows", vec![random_tensor(rng, s(2, 3, 5))], Box::new(|g, v| g.softmax_rows(v[0]))));
    cases.push((
        "normalize_rows",
        vec![random_tensor(rng, s(2, 3, 5))],
        Box::new(|g, v| g.normalize_rows(v[0], 1e-12)),
    ));
    cases.push((
        "add",
        vec![random_tensor(rng, s(2, 3, 3)), random_tensor(rng, s(2, 3, 3))],
        Box::new(|g, v| g.add(v[0], v[1])),
    ));
    cases.push((
        "sub",
        vec![random_tensor(rng, s(2, 3, 3)), random_tensor(rng, s(2, 3, 3))],
        Box::new(|g, v| g.sub(v[0], v[1])),
    ));
    cases.push((
        "mul",
        vec![random_tensor(rng, s(2, 3, 3)), random_tensor(rng, s(2, 3, 3))],
        Box::new(|g, v| g.mul(v[0], v[1])),
    ));
    cases.push(("scale", vec![random_tensor(rng, s(2, 3, 3))], Box::new(|g, v| g.scale(v[0], -1.7))));
    cases.push(("leaky_relu", vec![separated_tensor(rng, s(2, 4, 4))], Box::new(|g, v| g.leaky_relu(v[0], 0.2))));
    cases.push((
        "concat",
        vec![random_tensor(rng, s(2, 3, 3)), random_tensor(rng, s(1, 3, 3))],
        Box::new(|g, v| g.concat(&[v[0], v[1]])),
    ));
    cases.push(("slice_channels", vec![random_tensor(rng, s(4, 3, 3))], Box::new(|g, v| g.slice_channels(v[0], 1, 2))));
    cases.push(("mean", vec![random_tensor(rng, s(2, 3, 3))], Box::new(|g, v| g.mean(v[0]))));
    cases.push(("sum", vec![random_tensor(rng, s(2, 3, 3))], Box::new(|g, v| g.sum(v[0]))));
    cases.push(("abs", vec![separated_tensor(rng, s(2, 3, 3))], Box::new(|g, v| g.abs(v[0]))));
    cases.push(("l2_norm", vec![random_tensor(rng, s(2, 3, 3))], Box::new(|g, v| g.l2_norm(v[0]))));
    cases.push((
        "bilinear_resize",
        vec![random_tensor(rng, s(2, 5, 7))],
        Box::new(|g, v| g.bilinear_resize(v[0], 3, 4)),
    ));
    cases.push((
        "select_top_vertical",
        vec![separated_tensor(rng, s(2, 6, 4))],
        Box::new(|g, v| g.select_top(v[0], 3, Axis::Vertical)),
    ));
    cases.push((
        "select_top_horizontal",
        vec![separated_tensor(rng, s(2, 4, 6))],
        Box::new(|g, v| g.select_top(v[0], 2, Axis::Horizontal)),
    ));
    for (name, conv) in [("haar", HaarConvention::Orthonormal), ("haar_average", HaarConvention::Average)] {
        let (an, syn): (&'static str, &'static str) = if name == "haar" {
            ("haar_analysis", "haar_synthesis")
        } else {
            ("haar_analysis_average", "haar_synthesis_average")
        };
        cases.push((an, vec![random_tensor(rng, s(2, 4, 6))], Box::new(move |g, v| g.haar_analysis(v[0], conv))));
        cases.push((syn, vec![random_tensor(rng, s(8, 2, 3))], Box::new(move |g, v| g.haar_synthesis(v[0], conv))));
    }
    cases
}

/// Every differentiable graph primitive, each checked on all coordinates.
pub fn primitive_gradchecks(cfg: &GradcheckConfig) -> Result<Vec<GradcheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    primitive_cases(&mut rng)
        .into_iter()
        .enumerate()
        .map(|(i, (name, inputs, build))| {
            let mut obj = OpObjective { inputs, build, seed: cfg.seed.wrapping_add(i as u64) };
            let (_, _, analytic) = obj.run(true)?;
            finite_difference_check(
                name,
                &mut obj,
                &analytic,
                Coords::All,
                cfg.step,
                cfg.floor,
                cfg.primitive_tolerance,
                1.0,
            )
        })
        .collect()
}
