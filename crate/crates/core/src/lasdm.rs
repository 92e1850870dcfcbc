//! Low-frequency arbitrary-scale downscaling.
//!
//! A rational scale `n/m` is realized as ResBlocks, `pixel_unshuffle(m)`,
//! a channel merge from `c m^2` to `c n^2`, then `pixel_shuffle(n)`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv, ResStack};
use crate::params::{BoundParams, ParamLayout};
use crate::scale::RationalScale;
use crate::tensor::Real;
use crate::wrrd::ModelConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LasdmMode {
    #[default]
    Learned,
    /// Ablation: bilinear resize between two ResBlock stacks.
    Bilinear,
}

#[derive(Clone, Debug)]
pub struct Lasdm {
    scale: RationalScale,
    mode: LasdmMode,
    pre: ResStack,
    wide: ResStack,
    merge_proj: Option<Conv>,
    narrow: ResStack,
}

impl Lasdm {
    pub fn new(layout: &mut ParamLayout, name: &str, cfg: &ModelConfig, scale: RationalScale) -> Result<Self> {
        let c = cfg.channels;
        let (n, m) = (scale.n(), scale.m());
        let pre = ResStack::new(layout, &format!("{name}.pre"), c, cfg.lasdm_pre_blocks)?;
        match cfg.lasdm {
            LasdmMode::Learned => {
                let k = cfg.lasdm_merge_kernel;
                let wide =
                    ResStack::with_kernel(layout, &format!("{name}.merge_wide"), c * m * m, cfg.lasdm_wide_blocks, k)?;
                let proj = Conv::same(layout, &format!("{name}.merge_proj"), c * m * m, c * n * n, 1)?;
                let narrow = ResStack::with_kernel(
                    layout,
                    &format!("{name}.merge_narrow"),
                    c * n * n,
                    cfg.lasdm_narrow_blocks,
                    k,
                )?;
                Ok(Lasdm { scale, mode: LasdmMode::Learned, pre, wide, merge_proj: Some(proj), narrow })
            }
            LasdmMode::Bilinear => {
                let post =
                    ResStack::new(layout, &format!("{name}.post"), c, cfg.lasdm_wide_blocks + cfg.lasdm_narrow_blocks)?;
                Ok(Lasdm {
                    scale,
                    mode: LasdmMode::Bilinear,
                    pre,
                    wide: ResStack::default(),
                    merge_proj: None,
                    narrow: post,
                })
            }
        }
    }

    pub fn scale(&self) -> RationalScale {
        self.scale
    }

    pub fn merge_proj(&self) -> Option<&Conv> {
        self.merge_proj.as_ref()
    }

    /// `(c, h, w) -> (c, n h / m, n w / m)`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &BoundParams, a_hr: Var, slope: T) -> Result<Var> {
        let s = g.shape(a_hr);
        let (lh, lw) = (self.scale.apply(s.h)?, self.scale.apply(s.w)?);
        let x = self.pre.forward(g, p, a_hr, slope)?;
        match self.mode {
            LasdmMode::Learned => {
                let proj = self.merge_proj.as_ref().expect("learned mode has a projection");
                ensure!(
                    s.c * self.scale.m() * self.scale.m() == proj.spec.in_channels,
                    "lasdm: input has {} channels, module built for {}",
                    s.c,
                    proj.spec.in_channels / (self.scale.m() * self.scale.m())
                );
                let x = g.pixel_unshuffle(x, self.scale.m())?;
                let x = self.wide.forward(g, p, x, slope)?;
                let x = proj.forward(g, p, x)?;
                let x = self.narrow.forward(g, p, x, slope)?;
                g.pixel_shuffle(x, self.scale.n())
            }
            LasdmMode::Bilinear => {
                let x = g.bilinear_resize(x, lh, lw)?;
                self.narrow.forward(g, p, x, slope)
            }
        }
    }
}

/// Parses a downscale factor such as `"1.3"`, `"2"` or `"4/3"`.
pub fn parse_scale(text: &str) -> Result<RationalScale> {
    RationalScale::parse_factor(text)
}
