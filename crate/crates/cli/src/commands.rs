//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, ensure, Context, Result};
use rawscale_core::format::sig6;
use rawscale_core::gradcheck::{model_gradcheck, primitive_gradchecks, GradcheckReport};
use rawscale_core::raw::{sample_seed, GroundTruthMode};
use rawscale_core::trainer::{load_pair_dir, write_curve};
use rawscale_core::wrrd::{crop_valid, crop_valid_pair};
use rawscale_core::{
    dwt_pyramid, generate_synthetic_pair, interpolate_resample, isp_render, model_downscale, psnr_capped, save_nraw,
    ssim, Checkpoint, Model, NrawFile, PackedRaw, RationalScale, ResampleKernel, SynthOptions, Tensor, TrainState,
    Trainer,
};
use rayon::prelude::*;

use crate::config::FileConfig;
use crate::io::{ensure_parent, list_inputs, load_for_eval, read_nraw, write_packed, write_rgb};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Domain {
    Raw,
    Srgb,
}

impl Domain {
    fn name(self) -> &'static str {
        match self {
            Domain::Raw => "raw",
            Domain::Srgb => "srgb",
        }
    }
}

pub struct GenData {
    pub seed: u64,
    pub count: usize,
    pub hr_size: (usize, usize),
    pub scale: RationalScale,
    pub noise: f64,
    pub period_margin: f64,
    pub resampled_gt: bool,
    pub out: PathBuf,
}

/// File `i` holds the pair of `sample_seed(seed, i)`, whatever the thread count.
pub fn gen_data(a: &GenData) -> Result<()> {
    ensure!(a.count > 0, "--count must be positive");
    let opts = SynthOptions {
        noise_sigma: a.noise,
        period_margin: a.period_margin,
        gt_mode: if a.resampled_gt { GroundTruthMode::Resampled } else { GroundTruthMode::Analytic },
    };
    fs::create_dir_all(&a.out).map_err(rawscale_core::Error::from)?;
    (0..a.count).into_par_iter().try_for_each(|i| -> Result<()> {
        let pair = generate_synthetic_pair(sample_seed(a.seed, i as u64), a.hr_size, a.scale, &opts)?;
        let path = a.out.join(format!("pair_{i:05}.nraw"));
        save_nraw(&path, &NrawFile::Pair(pair)).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    })?;
    println!(
        "wrote {} pairs of {}x{} at scale {} to {}",
        a.count,
        a.hr_size.0,
        a.hr_size.1,
        sig6(a.scale.factor()),
        a.out.display()
    );
    Ok(())
}

pub struct Train {
    pub data: PathBuf,
    pub scales: Vec<RationalScale>,
    pub config: Option<PathBuf>,
    pub iterations: Option<usize>,
    pub resume: Option<PathBuf>,
    pub out: PathBuf,
    pub curve: Option<PathBuf>,
}

pub fn train(a: &Train) -> Result<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let mut tc = cfg.train;
    if !a.scales.is_empty() {
        tc.mixed_scale = a.scales.len() > 1;
        tc.scales = a.scales.clone();
    }
    if let Some(n) = a.iterations {
        tc.iterations = n;
    }
    let data = load_pair_dir(&a.data).with_context(|| format!("loading pairs from {}", a.data.display()))?;
    let (model, mut state) = match &a.resume {
        Some(dir) => {
            let ckpt = Checkpoint::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
            ensure!(
                ckpt.model == cfg.model || a.config.is_none(),
                "checkpoint model config differs from the one in the config file"
            );
            let model = ckpt.build_model()?;
            (model, ckpt.into_state())
        }
        None => {
            let model = Model::new(cfg.model, &tc.scales)?;
            let state = TrainState::fresh(&model, tc.seed);
            (model, state)
        }
    };
    ensure!(
        state.iteration <= tc.iterations,
        "checkpoint is at iteration {} beyond the requested {}",
        state.iteration,
        tc.iterations
    );
    let trainer = Trainer::new(&model, &tc, &data)?;
    let rows = trainer.run(&mut state, tc.iterations, |_| {})?;
    if let Some(path) = &a.curve {
        ensure_parent(path)?;
        let mut buf = Vec::new();
        write_curve(&mut buf, &rows)?;
        fs::write(path, buf).map_err(rawscale_core::Error::from)?;
    }
    Checkpoint::from_state(&model, Some(tc.clone()), &state)
        .save(&a.out)
        .with_context(|| format!("writing checkpoint {}", a.out.display()))?;
    match rows.last() {
        Some(r) => println!("iteration {} l_total {} lr {}", r.iter, sig6(r.loss.l_total), sig6(r.lr)),
        None => println!("iteration {} (nothing to do)", state.iteration),
    }
    Ok(())
}

pub struct Init {
    pub scales: Vec<RationalScale>,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
}

/// Untrained checkpoint; useful for shape checks and as a training start.
pub fn init(a: &Init) -> Result<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let model = Model::new(cfg.model, &a.scales)?;
    let state = TrainState::fresh(&model, a.seed);
    let mut ckpt = Checkpoint::from_state(&model, None, &state);
    ckpt.adam = None;
    ckpt.save(&a.out).with_context(|| format!("writing checkpoint {}", a.out.display()))?;
    println!("initialized {} parameters in {}", ckpt.params.num_elements(), a.out.display());
    Ok(())
}

pub struct Downscale {
    pub ckpt: PathBuf,
    pub input: PathBuf,
    pub scale: RationalScale,
    pub out: PathBuf,
    pub srgb: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

pub fn downscale(a: &Downscale) -> Result<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let ckpt = Checkpoint::load(&a.ckpt).with_context(|| format!("loading checkpoint {}", a.ckpt.display()))?;
    let model = ckpt.build_model()?;
    ensure!(
        model.scales().contains(&a.scale),
        "checkpoint supports scales [{}], not {}",
        model.scales().iter().map(|s| sig6(s.factor())).collect::<Vec<_>>().join(", "),
        sig6(a.scale.factor())
    );
    let file = read_nraw(&a.input)?;
    let x = file.primary();
    model.config().check_dims(x.height(), x.width(), a.scale)?;
    let (y, _) = model_downscale(&model, &ckpt.params, x.tensor(), a.scale)?;
    let y = PackedRaw::new(y)?.clamped();
    write_packed(&a.out, &y)?;
    if let Some(path) = &a.srgb {
        write_rgb(path, &isp_render(y.tensor(), &cfg.isp)?)?;
    }
    println!("{}x{} -> {}x{}", x.height(), x.width(), y.height(), y.width());
    Ok(())
}

pub struct Baseline {
    pub kernel: ResampleKernel,
    pub domain: Domain,
    pub input: PathBuf,
    pub scale: RationalScale,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
}

/// Raw: resample the packed image. sRGB: render, then resample the RGB image.
pub fn baseline(a: &Baseline) -> Result<()> {
    let file = read_nraw(&a.input)?;
    let x = file.primary().tensor();
    match a.domain {
        Domain::Raw => {
            let y = PackedRaw::new(interpolate_resample(x, a.scale, a.kernel)?)?;
            write_packed(&a.out, &y)?;
        }
        Domain::Srgb => {
            let cfg = FileConfig::load(a.config.as_deref())?;
            let rgb = isp_render(x, &cfg.isp)?;
            write_rgb(&a.out, &interpolate_resample(&rgb, a.scale, a.kernel)?)?;
        }
    }
    Ok(())
}

pub struct Eval {
    pub pred: PathBuf,
    pub reference: PathBuf,
    pub domain: Domain,
    pub report: PathBuf,
    pub method: String,
    pub scale: Option<RationalScale>,
    pub config: Option<PathBuf>,
}

pub const REPORT_HEADER: &str = "sample_id,scale,domain,method,psnr_db,ssim";

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Pairs predictions with references by file stem; rows follow reference order.
pub fn eval(a: &Eval) -> Result<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let exts: &[&str] = match a.domain {
        Domain::Raw => &["nraw"],
        Domain::Srgb => &["nraw", "ppm", "png"],
    };
    let refs = list_inputs(&a.reference, &["nraw"])?;
    ensure!(!refs.is_empty(), "no reference files in {}", a.reference.display());
    let preds = list_inputs(&a.pred, exts)?;
    let jobs: Vec<(PathBuf, PathBuf)> = if refs.len() == 1 && preds.len() == 1 {
        vec![(preds[0].clone(), refs[0].clone())]
    } else {
        refs.iter()
            .map(|r| {
                let s = stem(r);
                preds
                    .iter()
                    .find(|p| stem(p) == s)
                    .map(|p| (p.clone(), r.clone()))
                    .ok_or_else(|| anyhow!("no prediction for reference {}", r.display()))
            })
            .collect::<Result<_>>()?
    };
    let srgb = a.domain == Domain::Srgb;
    let rows = jobs
        .par_iter()
        .map(|(pred, reference)| -> Result<String> {
            let scale = match read_nraw(reference)? {
                NrawFile::Pair(s) => Some(s.scale),
                NrawFile::Packed(_) => a.scale,
            };
            let y = load_for_eval(pred, srgb, &cfg.isp)?;
            let r = load_for_eval(reference, srgb, &cfg.isp)?;
            ensure!(
                y.shape() == r.shape(),
                "{}: prediction {} does not match reference {}",
                stem(reference),
                y.shape(),
                r.shape()
            );
            let y = clamp01(&y);
            let p = psnr_capped(&y, &r)?;
            let s = ssim(&y, &r)?;
            Ok(format!(
                "{},{},{},{},{},{}",
                stem(reference),
                scale.map(|s| sig6(s.factor())).unwrap_or_default(),
                a.domain.name(),
                a.method,
                sig6(p),
                sig6(s)
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::new();
    writeln!(csv, "{REPORT_HEADER}").expect("string write");
    for r in &rows {
        writeln!(csv, "{r}").expect("string write");
    }
    ensure_parent(&a.report)?;
    fs::write(&a.report, csv).map_err(rawscale_core::Error::from)?;
    println!("evaluated {} samples into {}", rows.len(), a.report.display());
    Ok(())
}

fn clamp01(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| v.clamp(0.0, 1.0))
}

fn report_line(label: &str, r: &GradcheckReport) -> String {
    format!(
        "{} {label}: {}/{} within tolerance, max rel err {}",
        if r.ok() { "PASS" } else { "FAIL" },
        r.passed(),
        r.checked(),
        sig6(r.max_rel_error())
    )
}

/// Report-only unless `strict`, in which case any failing check is an error.
pub fn gradcheck(config: Option<&Path>, strict: bool) -> Result<()> {
    let cfg = FileConfig::load(config)?.gradcheck;
    let mut all_ok = true;
    for r in primitive_gradchecks(&cfg)? {
        all_ok &= r.ok();
        println!("{}", report_line(&r.name, &r));
    }
    let r = model_gradcheck(&cfg)?;
    all_ok &= r.ok();
    println!("{}", report_line("model", &r));
    ensure!(all_ok || !strict, "gradient check failed");
    Ok(())
}

/// Writes every band of every level as `.nraw` plus a rendered `.ppm`.
pub fn dwt(input: &Path, levels: usize, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = FileConfig::load(config)?;
    let conv = cfg.model.wavelet;
    let x = read_nraw(input)?.primary().tensor().clone();
    let pyr = dwt_pyramid(&x, levels, conv)?;
    fs::create_dir_all(out).map_err(rawscale_core::Error::from)?;
    // The average band of level k carries a gain of (2 s)^k over the input.
    let a_gain = (2.0 * conv.analysis_scale()) as f32;
    for (i, bands) in pyr.levels.iter().enumerate() {
        let k = i + 1;
        let gain = a_gain.powi(k as i32);
        for (name, band) in ["a", "v", "h", "d"].iter().zip(bands.all()) {
            let base = out.join(format!("level{k}_{name}"));
            save_nraw(base.with_extension("nraw"), &NrawFile::Packed(PackedRaw::new(band.clone())?))?;
            let view =
                if *name == "a" { band.map(|v| v / gain) } else { band.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)) };
            write_rgb(&base.with_extension("ppm"), &isp_render(&view, &cfg.isp)?)?;
        }
        let s = bands.a.shape();
        println!("level {k}: {}x{}", s.h, s.w);
    }
    Ok(())
}

/// Center-crops packed images and pairs so the model accepts them.
pub fn crop_valid_cmd(input: &Path, scale: RationalScale, levels: usize, out: &Path) -> Result<()> {
    let model = rawscale_core::ModelConfig { levels, ..Default::default() };
    model.validate()?;
    let file = read_nraw(input)?;
    let cropped = match file {
        NrawFile::Packed(p) => NrawFile::Packed(crop_valid(&p, &model, scale)?),
        NrawFile::Pair(mut s) => {
            ensure!(
                s.scale == scale,
                "pair was generated at scale {}, not {}",
                sig6(s.scale.factor()),
                sig6(scale.factor())
            );
            let (hr, lr) = crop_valid_pair(&s.hr, &s.lr, &model, scale)?;
            s.hr = hr;
            s.lr = lr;
            NrawFile::Pair(s)
        }
    };
    ensure_parent(out)?;
    save_nraw(out, &cropped).with_context(|| format!("writing {}", out.display()))?;
    let p = cropped.primary();
    println!("{}x{} (multiple of {})", p.height(), p.width(), model.required_multiple(scale));
    Ok(())
}
