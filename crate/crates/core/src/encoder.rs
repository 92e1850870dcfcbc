//! Convolutional pyramid encoder.

use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv, ResStack};
use crate::params::{BoundParams, ModelParams, ParamLayout};
use crate::tensor::{ConvSpec, Real, Tensor};
use crate::wrrd::{Model, ModelConfig};

/// `f_1 = ResBlocks(stem(x))`, `f_{k+1} = ResBlocks(down_k(f_k))` where each
/// `down_k` is a stride-2 3x3 conv.
#[derive(Clone, Debug)]
pub struct Encoder {
    stem: Conv,
    stem_blocks: ResStack,
    downs: Vec<(Conv, ResStack)>,
}

impl Encoder {
    pub fn new(layout: &mut ParamLayout, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.channels;
        let stem = Conv::same(layout, "encoder.stem", 4, c, 3)?;
        let stem_blocks = ResStack::new(layout, "encoder.level1", c, cfg.encoder_blocks)?;
        let downs = (2..=cfg.levels)
            .map(|k| {
                let down = Conv::new(layout, &format!("encoder.down{k}"), ConvSpec::new(c, c, 3, 2)?);
                let blocks = ResStack::new(layout, &format!("encoder.level{k}"), c, cfg.encoder_blocks)?;
                Ok((down, blocks))
            })
            .collect::<Result<_>>()?;
        Ok(Encoder { stem, stem_blocks, downs })
    }

    pub fn levels(&self) -> usize {
        self.downs.len() + 1
    }

    /// Features `f_1..f_K`, finest first.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var, slope: T) -> Result<Vec<Var>> {
        let s = g.shape(x);
        let need = 1usize << (self.levels() - 1);
        ensure!(
            s.c == 4 && s.h % need == 0 && s.w % need == 0,
            "encoder: input {s} must have 4 channels and dims divisible by {need}"
        );
        let stem = self.stem.forward(g, p, x)?;
        let mut feats = vec![self.stem_blocks.forward(g, p, stem, slope)?];
        for (down, blocks) in &self.downs {
            let prev = *feats.last().expect("non-empty");
            let h = down.forward(g, p, prev)?;
            feats.push(blocks.forward(g, p, h, slope)?);
        }
        Ok(feats)
    }
}

/// Evaluated encoder features, finest first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid<T> {
    pub features: Vec<Tensor<T>>,
}

/// Runs only the encoder of `model` on a packed input.
pub fn encode_pyramid<T: Real>(model: &Model, params: &ModelParams<T>, x: &Tensor<T>) -> Result<FeaturePyramid<T>> {
    model.layout().check(params)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g)?;
    let xv = g.constant(x.clone())?;
    let feats = model.encoder().forward(&mut g, &bound, xv, T::of(model.config().leaky_slope))?;
    Ok(FeaturePyramid { features: feats.into_iter().map(|v| g.value(v).clone()).collect() })
}
