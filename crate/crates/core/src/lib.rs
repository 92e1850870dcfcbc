//! RAW image downscaling by arbitrary rational factors.
//!
//! A packed RGGB image is encoded into a feature pyramid, split into Haar
//! wavelet bands per level, and decoded coarse-to-fine: the low-frequency
//! band is rescaled by `n/m` through pixel (un)shuffling and a channel merge,
//! and the detail bands are re-positioned by cosine-attention location maps.
//! The crate also carries the autodiff engine, training loop, classical
//! baselines, a fixed ISP and the file formats used by the command line.

pub mod baselines;
pub mod checkpoint;
pub mod codec;
pub mod encoder;
pub mod error;
pub mod format;
pub mod gradcheck;
pub mod graph;
pub mod hfpm;
pub mod isp;
pub mod lasdm;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod ops;
pub mod params;
pub mod raw;
pub mod scale;
pub mod tensor;
pub mod trainer;
pub mod wavelet;
pub mod wrrd;

pub use baselines::{gaussian_blur, interpolate_resample, ResampleKernel};
pub use checkpoint::Checkpoint;
pub use codec::{load_nraw, save_nraw, NrawFile};
pub use encoder::{encode_pyramid, FeaturePyramid};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use hfpm::{location_map, HfpmMode};
pub use isp::{isp_render, srgb_oetf, IspConfig, Transfer};
pub use lasdm::{parse_scale, LasdmMode};
pub use metrics::{psnr, psnr_capped, ssim};
pub use objectives::{content_loss, energy_max_loss, hwc_loss, total_loss, LossReport};
pub use params::ModelParams;
pub use raw::{generate_synthetic_pair, pack_bayer, unpack_bayer, BayerFrame, PackedRaw, PairedSample, SynthOptions};
pub use scale::RationalScale;
pub use tensor::{Real, Shape, Tensor};
pub use trainer::{adam_step, lr_schedule, TrainConfig, TrainState, Trainer};
pub use wavelet::{dwt2d, dwt_pyramid, idwt2d, HaarConvention, WaveletBands, WaveletPyramid};
pub use wrrd::{model_downscale, wrrd_forward, LevelState, Model, ModelConfig};
