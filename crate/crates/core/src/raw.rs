//! Bayer frames, packed RAW tensors and synthetic paired scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::{gaussian_blur, interpolate_resample, ResampleKernel};
use crate::error::{ensure, Result};
use crate::scale::RationalScale;
use crate::tensor::{Shape, Tensor};

/// Color filter layout. Only RGGB is supported:
/// `(0,0)=R, (0,1)=G1, (1,0)=G2, (1,1)=B`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cfa {
    #[default]
    #[serde(rename = "RGGB")]
    Rggb,
}

impl Cfa {
    /// Packed channel index for Bayer site `(row, col)`.
    #[inline]
    pub fn channel_at(self, row: usize, col: usize) -> usize {
        (row % 2) * 2 + (col % 2)
    }

    /// RGB component observed by a packed channel.
    #[inline]
    pub fn color_of_channel(self, ch: usize) -> usize {
        match ch {
            0 => 0,
            1 | 2 => 1,
            _ => 2,
        }
    }
}

/// Mosaic in sensor units.
#[derive(Clone, Debug, PartialEq)]
pub struct BayerFrame {
    pub width: usize,
    pub height: usize,
    pub cfa: Cfa,
    pub samples: Vec<f32>,
    pub black_level: f32,
    pub white_level: f32,
}

impl BayerFrame {
    pub fn new(width: usize, height: usize, samples: Vec<f32>, black_level: f32, white_level: f32) -> Result<Self> {
        let f = BayerFrame { width, height, cfa: Cfa::Rggb, samples, black_level, white_level };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.width > 0 && self.height > 0 && self.width % 2 == 0 && self.height % 2 == 0,
            "bayer dims {}x{} must be positive and even",
            self.width,
            self.height
        );
        ensure!(
            self.white_level > self.black_level,
            "white level {} must exceed black level {}",
            self.white_level,
            self.black_level
        );
        ensure!(
            self.samples.len() == self.width * self.height,
            "bayer sample count {} != {}x{}",
            self.samples.len(),
            self.width,
            self.height
        );
        Ok(())
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.samples[row * self.width + col]
    }
}

/// Four-channel `(R, G1, G2, B)` image at half the Bayer resolution.
///
/// Values are normalized to `[0, 1]` when produced by packing; model
/// outputs may leave that range and are clamped only on export.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedRaw {
    tensor: Tensor<f32>,
}

impl PackedRaw {
    pub fn new(tensor: Tensor<f32>) -> Result<Self> {
        ensure!(tensor.shape().c == 4, "packed RAW needs 4 channels, got {}", tensor.shape().c);
        Ok(PackedRaw { tensor })
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.tensor
    }

    pub fn height(&self) -> usize {
        self.tensor.shape().h
    }

    pub fn width(&self) -> usize {
        self.tensor.shape().w
    }

    pub fn clamped(&self) -> PackedRaw {
        PackedRaw { tensor: self.tensor.map(|v| v.clamp(0.0, 1.0)) }
    }

    /// Crop of size `h x w` at offset `(oy, ox)`.
    pub fn crop(&self, h: usize, w: usize, oy: usize, ox: usize) -> Result<PackedRaw> {
        let s = self.tensor.shape();
        ensure!(oy + h <= s.h && ox + w <= s.w, "crop {h}x{w}+{oy}+{ox} exceeds {s}");
        let t = Tensor::from_fn(Shape::new(4, h, w), |c, y, x| self.tensor.at(c, oy + y, ox + x));
        PackedRaw::new(t)
    }
}

pub fn pack_bayer(frame: &BayerFrame) -> Result<PackedRaw> {
    frame.validate()?;
    let (h, w) = (frame.height / 2, frame.width / 2);
    let range = frame.white_level - frame.black_level;
    let t = Tensor::from_fn(Shape::new(4, h, w), |c, y, x| {
        let s = frame.at(2 * y + c / 2, 2 * x + c % 2);
        ((s - frame.black_level) / range).clamp(0.0, 1.0)
    });
    PackedRaw::new(t)
}

/// Inverse site mapping of [`pack_bayer`]; samples stay normalized
/// (black 0, white 1).
pub fn unpack_bayer(p: &PackedRaw) -> Result<BayerFrame> {
    let (h, w) = (p.height(), p.width());
    let mut samples = vec![0.0f32; 4 * h * w];
    for row in 0..2 * h {
        for col in 0..2 * w {
            let c = Cfa::Rggb.channel_at(row, col);
            samples[row * 2 * w + col] = p.tensor.at(c, row / 2, col / 2);
        }
    }
    BayerFrame::new(2 * w, 2 * h, samples, 0.0, 1.0)
}

/// How the LR half of a synthetic pair is produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthMode {
    /// Point samples of the band-limited scene on the LR Bayer grid.
    #[default]
    Analytic,
    /// Gaussian prefilter then Lanczos-3 resampling of the clean HR packed
    /// image. For aliased-content experiments only.
    Resampled,
}

/// One additive term of a synthetic scene. Coordinates are in HR Bayer
/// pixel units over the field of view.
#[derive(Clone, Debug, PartialEq)]
pub enum SceneComponent {
    /// `amp * sin(2 pi (fx u + fy v) + phase)`
    Sinusoid { amp: [f64; 3], fx: f64, fy: f64, phase: f64 },
    /// `amp * (coord / extent - 0.5)` along one axis.
    Gradient { amp: [f64; 3], horizontal: bool, extent: f64 },
    /// `amp * exp(-r^2 / (2 sigma^2))`
    Blob { amp: [f64; 3], cx: f64, cy: f64, sigma: f64 },
}

fn rand_amp<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)]
}

/// Smooth linear-RGB scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub base: [f64; 3],
    pub components: Vec<SceneComponent>,
}

pub const MAX_SCENE_COMPONENTS: usize = 8;

impl Scene {
    pub fn constant(rgb: [f64; 3]) -> Self {
        Scene { base: rgb, components: Vec::new() }
    }

    pub fn eval(&self, u: f64, v: f64) -> [f64; 3] {
        let mut out = self.base;
        for comp in &self.components {
            let (amp, k) = match comp {
                SceneComponent::Sinusoid { amp, fx, fy, phase } => {
                    (amp, (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin())
                }
                SceneComponent::Gradient { amp, horizontal, extent } => {
                    let t = if *horizontal { u } else { v };
                    (amp, t / extent - 0.5)
                }
                SceneComponent::Blob { amp, cx, cy, sigma } => {
                    let r2 = (u - cx).powi(2) + (v - cy).powi(2);
                    (amp, (-r2 / (2.0 * sigma * sigma)).exp())
                }
            };
            for (o, a) in out.iter_mut().zip(amp) {
                *o += a * k;
            }
        }
        out
    }

    /// Highest sinusoid frequency in cycles per HR Bayer pixel.
    pub fn max_frequency(&self) -> f64 {
        self.components
            .iter()
            .filter_map(|c| match c {
                SceneComponent::Sinusoid { fx, fy, .. } => Some(fx.hypot(*fy)),
                _ => None,
            })
            .fold(0.0, f64::max)
    }

    /// Random scene over a `width x height` field of view (HR Bayer pixels)
    /// whose sinusoid periods all lie in `[min_period, max_period]`.
    pub fn random(rng: &mut impl Rng, width: f64, height: f64, min_period: f64) -> Result<Self> {
        let max_period = width.min(height);
        ensure!(
            min_period < max_period,
            "frequency constraint impossible: minimum period {min_period:.3} px does not fit a {width}x{height} field of view"
        );
        let base = [rng.random_range(0.3..0.6), rng.random_range(0.3..0.6), rng.random_range(0.3..0.6)];
        let count = rng.random_range(3..=MAX_SCENE_COMPONENTS);
        let mut components = Vec::with_capacity(count);
        for _ in 0..count {
            let kind = rng.random_range(0..10);
            let comp = if kind < 6 {
                let f = rng.random_range(1.0 / max_period..1.0 / min_period);
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                SceneComponent::Sinusoid {
                    amp: rand_amp(rng),
                    fx: f * theta.cos(),
                    fy: f * theta.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                }
            } else if kind < 8 {
                let horizontal = rng.random_bool(0.5);
                SceneComponent::Gradient {
                    amp: rand_amp(rng),
                    horizontal,
                    extent: if horizontal { width } else { height },
                }
            } else {
                SceneComponent::Blob {
                    amp: rand_amp(rng),
                    cx: rng.random_range(0.0..width),
                    cy: rng.random_range(0.0..height),
                    sigma: rng.random_range(min_period..max_period.max(min_period * 1.01)),
                }
            };
            components.push(comp);
        }
        let mut scene = Scene { base, components };
        scene.fit_range(0.02, 0.98);
        Ok(scene)
    }

    /// Scales component amplitudes so the scene provably stays in `[lo, hi]`.
    fn fit_range(&mut self, lo: f64, hi: f64) {
        for ch in 0..3 {
            let bound: f64 = self
                .components
                .iter()
                .map(|c| match c {
                    SceneComponent::Sinusoid { amp, .. } | SceneComponent::Blob { amp, .. } => amp[ch].abs(),
                    SceneComponent::Gradient { amp, .. } => amp[ch].abs() * 0.5,
                })
                .sum();
            let room = (self.base[ch] - lo).min(hi - self.base[ch]);
            if bound > room {
                let k = room / bound;
                for c in &mut self.components {
                    match c {
                        SceneComponent::Sinusoid { amp, .. }
                        | SceneComponent::Blob { amp, .. }
                        | SceneComponent::Gradient { amp, .. } => amp[ch] *= k,
                    }
                }
            }
        }
    }
}

/// Generator settings beyond seed, size and scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    pub noise_sigma: f64,
    /// Minimum sinusoid period as a multiple of the LR packed-grid Nyquist
    /// period `2 m / n` packed HR pixels (`4 m / n` Bayer pixels), so that each
    /// CFA channel of the LR frame is sampled without aliasing.
    /// Must exceed 1.
    pub period_margin: f64,
    pub gt_mode: GroundTruthMode,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { noise_sigma: 0.0, period_margin: 1.5, gt_mode: GroundTruthMode::Analytic }
    }
}

/// Exactly co-registered HR/LR packed pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub hr: PackedRaw,
    pub lr: PackedRaw,
    pub scale: RationalScale,
    pub scene_seed: u64,
    pub noise_sigma: f64,
    pub gt_mode: GroundTruthMode,
}

impl PairedSample {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.scale.apply(self.hr.height())? == self.lr.height()
                && self.scale.apply(self.hr.width())? == self.lr.width(),
            "pair dims {}x{} -> {}x{} do not match scale {}",
            self.hr.height(),
            self.hr.width(),
            self.lr.height(),
            self.lr.width(),
            self.scale
        );
        Ok(())
    }
}

/// SplitMix64 step; used to derive independent stream seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sample `index` in a dataset generated from `master`.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    mix_seed(master, index.wrapping_add(1))
}

const STREAM_SCENE: u64 = 0x5ce7e;
const STREAM_NOISE_HR: u64 = 0x4e01;
const STREAM_NOISE_LR: u64 = 0x4e02;

/// Point-samples `scene` on a Bayer grid of `bh x bw` sites with pixel pitch
/// `pitch` (HR Bayer pixels) and returns normalized samples.
pub fn sample_bayer(scene: &Scene, bh: usize, bw: usize, pitch: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(bh * bw);
    for row in 0..bh {
        for col in 0..bw {
            let u = (col as f64 + 0.5) * pitch;
            let v = (row as f64 + 0.5) * pitch;
            let rgb = scene.eval(u, v);
            out.push(rgb[Cfa::Rggb.color_of_channel(Cfa::Rggb.channel_at(row, col))]);
        }
    }
    out
}

fn mosaic_to_packed(samples: &[f64], bh: usize, bw: usize, noise: f64, seed: u64) -> Result<PackedRaw> {
    let mut data: Vec<f32> = samples.iter().map(|&v| v as f32).collect();
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, noise).map_err(|e| crate::Error::Contract(e.to_string()))?;
        for v in &mut data {
            *v = (*v as f64 + dist.sample(&mut rng)) as f32;
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    pack_bayer(&BayerFrame::new(bw, bh, data, 0.0, 1.0)?)
}

/// Renders a pair for an explicit scene. `hr_dims` are packed HR dims.
pub fn render_pair(
    scene: &Scene,
    hr_dims: (usize, usize),
    scale: RationalScale,
    opts: &SynthOptions,
    seed: u64,
) -> Result<PairedSample> {
    let (h, w) = hr_dims;
    ensure!(h > 0 && w > 0, "packed dims must be positive");
    let (lh, lw) = (scale.apply(h)?, scale.apply(w)?);
    ensure!(opts.noise_sigma >= 0.0 && opts.noise_sigma.is_finite(), "noise sigma must be >= 0");
    let hr_clean = sample_bayer(scene, 2 * h, 2 * w, 1.0);
    let hr = mosaic_to_packed(&hr_clean, 2 * h, 2 * w, opts.noise_sigma, mix_seed(seed, STREAM_NOISE_HR))?;
    let lr = match opts.gt_mode {
        GroundTruthMode::Analytic => {
            let lr_clean = sample_bayer(scene, 2 * lh, 2 * lw, scale.factor());
            mosaic_to_packed(&lr_clean, 2 * lh, 2 * lw, opts.noise_sigma, mix_seed(seed, STREAM_NOISE_LR))?
        }
        GroundTruthMode::Resampled => {
            let clean =
                pack_bayer(&BayerFrame::new(2 * w, 2 * h, hr_clean.iter().map(|&v| v as f32).collect(), 0.0, 1.0)?)?;
            let blurred = gaussian_blur(clean.tensor(), 0.5 * scale.factor())?;
            let small = interpolate_resample(&blurred, scale, ResampleKernel::Lanczos3)?;
            let lr_bayer = unpack_bayer(&PackedRaw::new(small)?)?;
            let vals: Vec<f64> = lr_bayer.samples.iter().map(|&v| v as f64).collect();
            mosaic_to_packed(&vals, 2 * lh, 2 * lw, opts.noise_sigma, mix_seed(seed, STREAM_NOISE_LR))?
        }
    };
    let sample = PairedSample { hr, lr, scale, scene_seed: seed, noise_sigma: opts.noise_sigma, gt_mode: opts.gt_mode };
    sample.validate()?;
    Ok(sample)
}

/// Scene used for a given seed and geometry.
pub fn scene_for_seed(seed: u64, hr_dims: (usize, usize), scale: RationalScale, opts: &SynthOptions) -> Result<Scene> {
    ensure!(opts.period_margin > 1.0, "period margin must exceed 1, got {}", opts.period_margin);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, STREAM_SCENE));
    // Scene coordinates are Bayer pixels; one packed pixel spans two.
    let min_period = opts.period_margin * 4.0 * scale.factor();
    Scene::random(&mut rng, 2.0 * hr_dims.1 as f64, 2.0 * hr_dims.0 as f64, min_period)
}

/// Seeded band-limited pair. Packed dims must be divisible by `m`.
pub fn generate_synthetic_pair(
    seed: u64,
    hr_dims: (usize, usize),
    scale: RationalScale,
    opts: &SynthOptions,
) -> Result<PairedSample> {
    scale.apply(hr_dims.0)?;
    scale.apply(hr_dims.1)?;
    let scene = scene_for_seed(seed, hr_dims, scale, opts)?;
    render_pair(&scene, hr_dims, scale, opts, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame4() -> BayerFrame {
        let samples = (0..16).map(|i| 64.0 + i as f32 * 60.0).collect();
        BayerFrame::new(4, 4, samples, 64.0, 1023.0).unwrap()
    }

    #[test]
    fn pack_normalizes_and_maps_sites() {
        let f = frame4();
        let p = pack_bayer(&f).unwrap();
        assert_eq!(p.tensor().at(0, 0, 0), 0.0);
        // (1,1) -> B channel at (0,0)
        let b = p.tensor().at(3, 0, 0);
        assert!((b - (f.at(1, 1) - 64.0) / 959.0).abs() < 1e-7);
        let mut f2 = f.clone();
        f2.samples[0] = 1023.0;
        assert_eq!(pack_bayer(&f2).unwrap().tensor().at(0, 0, 0), 1.0);
    }

    #[test]
    fn unpack_inverts_pack() {
        let f = frame4();
        let p = pack_bayer(&f).unwrap();
        let u = unpack_bayer(&p).unwrap();
        assert_eq!(u.samples.len(), 16);
        for i in 0..16 {
            let norm = ((f.samples[i] - 64.0) / 959.0).clamp(0.0, 1.0);
            assert_eq!(u.samples[i], norm);
        }
    }

    #[test]
    fn constant_unpack() {
        let p = PackedRaw::new(Tensor::full(Shape::new(4, 2, 2), 0.4)).unwrap();
        let u = unpack_bayer(&p).unwrap();
        assert_eq!((u.width, u.height), (4, 4));
        assert!(u.samples.iter().all(|&v| v == 0.4));
    }

    #[test]
    fn frame_errors() {
        assert!(BayerFrame::new(3, 4, vec![0.0; 12], 0.0, 1.0).is_err());
        assert!(BayerFrame::new(4, 4, vec![0.0; 16], 1.0, 1.0).is_err());
        assert!(PackedRaw::new(Tensor::zeros(Shape::new(3, 2, 2))).is_err());
    }

    #[test]
    fn constant_scene_pair() {
        let scale = RationalScale::new(10, 13).unwrap();
        let scene = Scene::constant([0.3, 0.5, 0.7]);
        let s = render_pair(&scene, (26, 26), scale, &SynthOptions::default(), 1).unwrap();
        assert_eq!((s.lr.height(), s.lr.width()), (20, 20));
        for (ch, v) in [0.3f32, 0.5, 0.5, 0.7].iter().enumerate() {
            assert!(s.hr.tensor().channel(ch).iter().all(|x| x == v));
            assert!(s.lr.tensor().channel(ch).iter().all(|x| x == v));
        }
    }

    #[test]
    fn generator_respects_nyquist() {
        let scale = RationalScale::new(1, 3).unwrap();
        for seed in 0..20 {
            let scene = scene_for_seed(seed, (48, 48), scale, &SynthOptions::default()).unwrap();
            assert!(scene.components.len() <= MAX_SCENE_COMPONENTS);
            assert!(scene.max_frequency() < 1.0 / (2.0 * 3.0));
        }
    }

    #[test]
    fn impossible_frequency_constraint() {
        let scale = RationalScale::new(1, 4).unwrap();
        assert!(generate_synthetic_pair(0, (4, 4), scale, &SynthOptions::default()).is_err());
        assert!(generate_synthetic_pair(0, (6, 8), scale, &SynthOptions::default()).is_err());
    }

    #[test]
    fn resampled_mode_shapes() {
        let scale = RationalScale::new(1, 2).unwrap();
        let opts = SynthOptions { gt_mode: GroundTruthMode::Resampled, ..Default::default() };
        let s = generate_synthetic_pair(3, (16, 16), scale, &opts).unwrap();
        assert_eq!(s.gt_mode, GroundTruthMode::Resampled);
        assert_eq!((s.lr.height(), s.lr.width()), (8, 8));
    }
}
