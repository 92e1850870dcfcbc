//! Wavelet-based recurrent reconstruction decoder and the end-to-end model.
//!
//! Level `k` runs from `K` down to `1`. Each level predicts the LR wavelet
//! coefficients of its LR low-frequency band, and its inverse transform
//! feeds the next finer level.

use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{ensure, Error, Result};
use crate::graph::{Graph, Var};
use crate::hfpm::{Hfpm, HfpmMode, HfpmOutput};
use crate::lasdm::{Lasdm, LasdmMode};
use crate::nn::Conv;
use crate::params::{BoundParams, ModelParams, ParamLayout};
use crate::raw::PackedRaw;
use crate::scale::RationalScale;
use crate::tensor::{Real, Tensor};
use crate::wavelet::{dwt2d_graph, idwt2d_graph, HaarConvention, WaveletBands, WaveletPyramid};

pub const MAX_LEVELS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of wavelet levels `K`.
    pub levels: usize,
    /// Feature channels `c` at every level.
    pub channels: usize,
    pub encoder_blocks: usize,
    pub lasdm_pre_blocks: usize,
    /// Blocks at `c m^2` channels, before the merge projection.
    pub lasdm_wide_blocks: usize,
    /// Blocks at `c n^2` channels, after the merge projection.
    pub lasdm_narrow_blocks: usize,
    /// Kernel size of the merge-path ResBlocks.
    pub lasdm_merge_kernel: usize,
    pub hfpm_blocks: usize,
    pub lasdm: LasdmMode,
    pub hfpm: HfpmMode,
    pub wavelet: HaarConvention,
    pub leaky_slope: f64,
    /// Added under the square root of cosine-similarity norms.
    pub cosine_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            levels: 4,
            channels: 16,
            encoder_blocks: 2,
            lasdm_pre_blocks: 2,
            lasdm_wide_blocks: 1,
            lasdm_narrow_blocks: 1,
            lasdm_merge_kernel: 1,
            hfpm_blocks: 1,
            lasdm: LasdmMode::Learned,
            hfpm: HfpmMode::Learned,
            wavelet: HaarConvention::Orthonormal,
            leaky_slope: 0.2,
            cosine_eps: 1e-12,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by tests: `levels` levels, `channels` channels.
    pub fn tiny(levels: usize, channels: usize) -> Self {
        ModelConfig { levels, channels, ..ModelConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!((1..=MAX_LEVELS).contains(&self.levels), "levels must be in 1..={MAX_LEVELS}, got {}", self.levels);
        ensure!(self.channels >= 1, "channels must be positive");
        ensure!(self.lasdm_merge_kernel % 2 == 1, "lasdm_merge_kernel must be odd, got {}", self.lasdm_merge_kernel);
        ensure!(
            self.leaky_slope.is_finite() && (0.0..1.0).contains(&self.leaky_slope),
            "leaky_slope must be in [0, 1), got {}",
            self.leaky_slope
        );
        ensure!(
            self.cosine_eps.is_finite() && self.cosine_eps > 0.0,
            "cosine_eps must be positive, got {}",
            self.cosine_eps
        );
        Ok(())
    }

    /// Packed HR dims must be multiples of `2^K m`.
    pub fn required_multiple(&self, scale: RationalScale) -> usize {
        (1usize << self.levels) * scale.m()
    }

    pub fn check_dims(&self, h: usize, w: usize, scale: RationalScale) -> Result<()> {
        let q = self.required_multiple(scale);
        if h % q == 0 && w % q == 0 && h > 0 && w > 0 {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "packed dims {h}x{w} must be multiples of 2^{} * {} = {q} for scale {scale}; \
                 use `crop-valid` to center-crop",
                self.levels,
                scale.m()
            )))
        }
    }
}

#[derive(Clone, Debug)]
struct Level {
    lasdm: Vec<Lasdm>,
    hfpm: Hfpm,
    fuse: Option<Conv>,
    proj: Conv,
}

/// Architecture plus parameter layout for a fixed set of scales.
///
/// HFPM, fuse and projection weights are shared by all scales; each scale has
/// its own LASDM per level.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    scales: Vec<RationalScale>,
    layout: ParamLayout,
    encoder: Encoder,
    levels: Vec<Level>,
}

/// Graph handles for one decoder level.
#[derive(Clone, Copy, Debug)]
pub struct LevelVars {
    /// Fused low-frequency features `z_k` (`c` channels).
    pub z: Var,
    /// Predicted LR average band (4 channels).
    pub a4: Var,
    pub bands: HfpmOutput,
    /// Inverse transform of the predicted coefficients.
    pub out: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub output: Var,
    /// Index `k - 1` holds level `k`.
    pub levels: Vec<LevelVars>,
}

/// Evaluated per-level decoder state.
#[derive(Clone, Debug)]
pub struct LevelState<T> {
    pub level: usize,
    pub z: Tensor<T>,
    pub coeffs: WaveletBands<Tensor<T>>,
    pub out: Tensor<T>,
}

impl Model {
    pub fn new(config: ModelConfig, scales: &[RationalScale]) -> Result<Self> {
        config.validate()?;
        ensure!(!scales.is_empty(), "model needs at least one scale");
        let mut uniq: Vec<RationalScale> = Vec::new();
        for &s in scales {
            if !uniq.contains(&s) {
                uniq.push(s);
            }
        }
        let mut layout = ParamLayout::default();
        let encoder = Encoder::new(&mut layout, &config)?;
        let c = config.channels;
        let levels = (1..=config.levels)
            .map(|k| {
                let name = format!("wrrd.level{k}");
                let lasdm = uniq
                    .iter()
                    .map(|s| Lasdm::new(&mut layout, &format!("{name}.lasdm.{}", s.tag()), &config, *s))
                    .collect::<Result<_>>()?;
                let hfpm = Hfpm::new(&mut layout, &format!("{name}.hfpm"), &config)?;
                let fuse = if k < config.levels {
                    Some(Conv::same(&mut layout, &format!("{name}.fuse"), c + 4, c, 1)?)
                } else {
                    None
                };
                let proj = Conv::same(&mut layout, &format!("{name}.proj"), c, 4, 1)?;
                Ok(Level { lasdm, hfpm, fuse, proj })
            })
            .collect::<Result<_>>()?;
        Ok(Model { config, scales: uniq, layout, encoder, levels })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn scales(&self) -> &[RationalScale] {
        &self.scales
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ModelParams<T> {
        self.layout.init(seed, self.config.leaky_slope)
    }

    fn scale_index(&self, scale: RationalScale) -> Result<usize> {
        self.scales.iter().position(|&s| s == scale).ok_or_else(|| {
            let known: Vec<String> = self.scales.iter().map(|s| s.to_string()).collect();
            Error::contract(format!("model has no LASDM for scale {scale} (built for {})", known.join(", ")))
        })
    }

    /// Encoder plus decoder on a `(4, H, W)` input.
    ///
    /// With `oracle`, the predicted LR coefficients at every level are
    /// replaced by the given pyramid, which makes the output its exact
    /// reconstruction.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x: Var,
        scale: RationalScale,
        oracle: Option<&WaveletPyramid<T>>,
    ) -> Result<ForwardVars> {
        let s = g.shape(x);
        ensure!(s.c == 4, "model input must have 4 channels, got {}", s.c);
        self.config.check_dims(s.h, s.w, scale)?;
        let feats = self.encoder.forward(g, p, x, T::of(self.config.leaky_slope))?;
        self.decode(g, p, &feats, scale, oracle)
    }

    /// Decoder on encoder features `f_1..f_K`.
    pub fn decode<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        feats: &[Var],
        scale: RationalScale,
        oracle: Option<&WaveletPyramid<T>>,
    ) -> Result<ForwardVars> {
        let k_max = self.config.levels;
        ensure!(feats.len() == k_max, "decoder expects {k_max} feature levels, got {}", feats.len());
        if let Some(o) = oracle {
            ensure!(o.depth() == k_max, "oracle pyramid has {} levels, model {k_max}", o.depth());
        }
        let si = self.scale_index(scale)?;
        let slope = T::of(self.config.leaky_slope);
        let conv = self.config.wavelet;
        let mut states: Vec<LevelVars> = Vec::with_capacity(k_max);
        let mut prev: Option<Var> = None;
        for k in (1..=k_max).rev() {
            let level = &self.levels[k - 1];
            let f = feats[k - 1];
            let fs = g.shape(f);
            let m = scale.m();
            ensure!(fs.h % (2 * m) == 0 && fs.w % (2 * m) == 0, "level {k}: feature {fs} not divisible by 2 * {m}");
            let hr = dwt2d_graph(g, f, conv)?;
            let low = level.lasdm[si].forward(g, p, hr.a, slope)?;
            let z = match (prev, &level.fuse) {
                (Some(up), Some(fuse)) => {
                    let cat = g.concat(&[low, up])?;
                    fuse.forward(g, p, cat)?
                }
                (None, _) => low,
                (Some(_), None) => unreachable!("only the coarsest level lacks a fuse conv"),
            };
            let bands = level.hfpm.forward(g, p, z, [hr.v, hr.h, hr.d], slope)?;
            let a4 = level.proj.forward(g, p, z)?;
            let coeffs = match oracle {
                Some(o) => {
                    let t = o.level(k);
                    let expect = t.a.shape();
                    ensure!(g.shape(a4) == expect, "level {k}: predicted {} vs oracle {expect}", g.shape(a4));
                    WaveletBands {
                        a: if k == k_max { g.constant(t.a.clone())? } else { prev.expect("finer level") },
                        v: g.constant(t.v.clone())?,
                        h: g.constant(t.h.clone())?,
                        d: g.constant(t.d.clone())?,
                    }
                }
                None => WaveletBands { a: a4, v: bands.v, h: bands.h, d: bands.d },
            };
            let out = idwt2d_graph(g, &coeffs, conv)?;
            states.push(LevelVars {
                z,
                a4: coeffs.a,
                bands: HfpmOutput { v: coeffs.v, h: coeffs.h, d: coeffs.d },
                out,
            });
            prev = Some(out);
        }
        states.reverse();
        Ok(ForwardVars { output: prev.expect("at least one level"), levels: states })
    }
}

fn collect_states<T: Real>(g: &Graph<T>, vars: &ForwardVars) -> Vec<LevelState<T>> {
    vars.levels
        .iter()
        .enumerate()
        .map(|(i, l)| LevelState {
            level: i + 1,
            z: g.value(l.z).clone(),
            coeffs: WaveletBands {
                a: g.value(l.a4).clone(),
                v: g.value(l.bands.v).clone(),
                h: g.value(l.bands.h).clone(),
                d: g.value(l.bands.d).clone(),
            },
            out: g.value(l.out).clone(),
        })
        .collect()
}

/// Decoder over precomputed encoder features.
pub fn wrrd_forward<T: Real>(
    model: &Model,
    params: &ModelParams<T>,
    features: &[Tensor<T>],
    scale: RationalScale,
) -> Result<(Tensor<T>, Vec<LevelState<T>>)> {
    model.layout().check(params)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g)?;
    let feats = features.iter().map(|f| g.constant(f.clone())).collect::<Result<Vec<_>>>()?;
    let vars = model.decode(&mut g, &p, &feats, scale, None)?;
    Ok((g.value(vars.output).clone(), collect_states(&g, &vars)))
}

/// Full model on a packed `(4, H, W)` input; the output is not clamped.
pub fn model_downscale<T: Real>(
    model: &Model,
    params: &ModelParams<T>,
    x: &Tensor<T>,
    scale: RationalScale,
) -> Result<(Tensor<T>, Vec<LevelState<T>>)> {
    model.layout().check(params)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g)?;
    let xv = g.constant(x.clone())?;
    let vars = model.forward(&mut g, &p, xv, scale, None)?;
    Ok((g.value(vars.output).clone(), collect_states(&g, &vars)))
}

/// Largest centered window with both dims multiples of `multiple`; returns
/// `(h, w, oy, ox)` with offsets rounded down to multiples of `align`.
pub fn valid_crop(h: usize, w: usize, multiple: usize, align: usize) -> Result<(usize, usize, usize, usize)> {
    ensure!(multiple > 0 && align > 0, "valid_crop: zero multiple");
    let (ch, cw) = (h / multiple * multiple, w / multiple * multiple);
    ensure!(ch > 0 && cw > 0, "{h}x{w} is smaller than the required multiple {multiple}");
    let oy = (h - ch) / 2 / align * align;
    let ox = (w - cw) / 2 / align * align;
    Ok((ch, cw, oy, ox))
}

/// Center-crops a packed HR image so the model accepts it at `scale`.
pub fn crop_valid(p: &PackedRaw, config: &ModelConfig, scale: RationalScale) -> Result<PackedRaw> {
    let (h, w, oy, ox) = valid_crop(p.height(), p.width(), config.required_multiple(scale), 1)?;
    p.crop(h, w, oy, ox)
}

/// Center-crops an HR/LR pair consistently: the HR offset is a multiple of
/// `m` so the LR window starts at an exact LR pixel.
pub fn crop_valid_pair(
    hr: &PackedRaw,
    lr: &PackedRaw,
    config: &ModelConfig,
    scale: RationalScale,
) -> Result<(PackedRaw, PackedRaw)> {
    ensure!(
        scale.apply(hr.height())? == lr.height() && scale.apply(hr.width())? == lr.width(),
        "pair dims {}x{} / {}x{} do not match scale {scale}",
        hr.height(),
        hr.width(),
        lr.height(),
        lr.width()
    );
    let (h, w, oy, ox) = valid_crop(hr.height(), hr.width(), config.required_multiple(scale), scale.m())?;
    let (n, m) = (scale.n(), scale.m());
    Ok((hr.crop(h, w, oy, ox)?, lr.crop(h * n / m, w * n / m, oy * n / m, ox * n / m)?))
}
