//! High-frequency prediction.
//!
//! HR detail bands are shrunk to the LR grid by keeping their
//! largest-magnitude rows/columns and then re-positioned by per-channel
//! cosine-attention location maps computed against the predicted LR
//! low-frequency map. The diagonal band reuses both maps.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv, ResStack};
use crate::ops::Axis;
use crate::params::{BoundParams, ParamLayout};
use crate::tensor::Real;
use crate::wrrd::ModelConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HfpmMode {
    #[default]
    Learned,
    /// Ablation: ResBlocks, bilinear resize and an output conv per band.
    CnnBilinear,
}

/// Direction in which a location map relates HR and LR positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapDirection {
    /// Rows are tokens (`M_H`, LR rows x HR rows).
    Horizontal,
    /// Columns are tokens (`M_V`, LR columns x HR columns).
    Vertical,
}

/// Row-stochastic map `softmax(cos(q_i, k_j))` per channel.
///
/// For [`MapDirection::Horizontal`] `queries` is `(c, a, b)` and `keys`
/// `(c, h, b)`, giving `(c, a, h)`. The vertical case uses columns instead.
pub fn location_map<T: Real>(g: &mut Graph<T>, queries: Var, keys: Var, dir: MapDirection, eps: T) -> Result<Var> {
    let (q, k) = match dir {
        MapDirection::Horizontal => (queries, keys),
        MapDirection::Vertical => (g.transpose(queries)?, g.transpose(keys)?),
    };
    let (sq, sk) = (g.shape(q), g.shape(k));
    ensure!(sq.c == sk.c && sq.w == sk.w, "location_map: token dims differ ({sq} vs {sk}, {dir:?})");
    g.note_location_map();
    let qn = g.normalize_rows(q, eps)?;
    let kn = g.normalize_rows(k, eps)?;
    let kt = g.transpose(kn)?;
    let sim = g.channel_matmul(qn, kt)?;
    g.softmax_rows(sim)
}

fn attention(c: &Option<Conv>) -> &Conv {
    c.as_ref().expect("learned mode has attention convs")
}

#[derive(Clone, Debug)]
struct Head {
    blocks: ResStack,
    out: Conv,
    residual: Option<Conv>,
}

impl Head {
    fn new(layout: &mut ParamLayout, name: &str, c: usize, blocks: usize, residual: bool) -> Result<Self> {
        Ok(Head {
            blocks: ResStack::new(layout, &format!("{name}.head"), c, blocks)?,
            out: Conv::same(layout, &format!("{name}.out"), c, 4, 3)?,
            residual: if residual { Some(Conv::same(layout, &format!("{name}.residual"), c, 4, 1)?) } else { None },
        })
    }

    /// `out(blocks(x)) + residual(resize(band))`.
    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var, band: Var, slope: T) -> Result<Var> {
        let h = self.blocks.forward(g, p, x, slope)?;
        let y = self.out.forward(g, p, h)?;
        match &self.residual {
            Some(res) => {
                let s = g.shape(y);
                let r = g.bilinear_resize(band, s.h, s.w)?;
                let r = res.forward(g, p, r)?;
                g.add(y, r)
            }
            None => Ok(y),
        }
    }
}

/// Predicted LR detail bands, 4 channels each.
#[derive(Clone, Copy, Debug)]
pub struct HfpmOutput {
    pub v: Var,
    pub h: Var,
    pub d: Var,
}

#[derive(Clone, Debug)]
pub struct Hfpm {
    mode: HfpmMode,
    eps: f64,
    detail: [ResStack; 3],
    query_h: Option<Conv>,
    key_h: Option<Conv>,
    query_v: Option<Conv>,
    key_v: Option<Conv>,
    heads: [Head; 3],
}

impl Hfpm {
    pub fn new(layout: &mut ParamLayout, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.channels;
        let b = cfg.hfpm_blocks;
        let detail = [
            ResStack::new(layout, &format!("{name}.v.detail"), c, b)?,
            ResStack::new(layout, &format!("{name}.h.detail"), c, b)?,
            ResStack::new(layout, &format!("{name}.d.detail"), c, b)?,
        ];
        let learned = cfg.hfpm == HfpmMode::Learned;
        let attn = |layout: &mut ParamLayout, tag: &str| -> Result<Option<Conv>> {
            if learned {
                Ok(Some(Conv::same(layout, &format!("{name}.{tag}"), c, c, 1)?))
            } else {
                Ok(None)
            }
        };
        let query_h = attn(layout, "query_h")?;
        let key_h = attn(layout, "key_h")?;
        let query_v = attn(layout, "query_v")?;
        let key_v = attn(layout, "key_v")?;
        let heads = [
            Head::new(layout, &format!("{name}.v"), c, b, learned)?,
            Head::new(layout, &format!("{name}.h"), c, b, learned)?,
            Head::new(layout, &format!("{name}.d"), c, b, learned)?,
        ];
        Ok(Hfpm { mode: cfg.hfpm, eps: cfg.cosine_eps, detail, query_h, key_h, query_v, key_v, heads })
    }

    /// `a_lr` is `(c, LH, LW)`; the HR bands are `(c, h, w)` with
    /// `LH <= h`, `LW <= w`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        a_lr: Var,
        bands: [Var; 3],
        slope: T,
    ) -> Result<HfpmOutput> {
        let sl = g.shape(a_lr);
        let sh = g.shape(bands[0]);
        ensure!(bands.iter().all(|&b| g.shape(b) == sh), "hfpm: HR detail bands differ in shape");
        ensure!(sl.c == sh.c && sl.h <= sh.h && sl.w <= sh.w, "hfpm: LR map {sl} incompatible with HR bands {sh}");
        let [v, h, d] = bands;
        let rv = self.detail[0].forward(g, p, v, slope)?;
        let rh = self.detail[1].forward(g, p, h, slope)?;
        let rd = self.detail[2].forward(g, p, d, slope)?;

        if self.mode == HfpmMode::CnnBilinear {
            let mut out = [rv, rh, rd];
            for (o, head) in out.iter_mut().zip(&self.heads) {
                let r = g.bilinear_resize(*o, sl.h, sl.w)?;
                *o = head.forward(g, p, r, r, slope)?;
            }
            return Ok(HfpmOutput { v: out[0], h: out[1], d: out[2] });
        }

        let eps = T::of(self.eps);
        let v_top = g.select_top(rv, sl.h, Axis::Vertical)?; // (c, LH, w)
        let h_top = g.select_top(rh, sl.w, Axis::Horizontal)?; // (c, h, LW)

        let q = attention(&self.query_h).forward(g, p, a_lr)?;
        let k = attention(&self.key_h).forward(g, p, h_top)?;
        let map_h = location_map(g, q, k, MapDirection::Horizontal, eps)?; // (c, LH, h)

        let q = attention(&self.query_v).forward(g, p, a_lr)?;
        let k = attention(&self.key_v).forward(g, p, v_top)?;
        let map_v = location_map(g, q, k, MapDirection::Vertical, eps)?; // (c, LW, w)
        let map_vt = g.transpose(map_v)?; // (c, w, LW)

        let h_lr = g.channel_matmul(map_h, h_top)?;
        let v_lr = g.channel_matmul(v_top, map_vt)?;
        let d_rows = g.channel_matmul(map_h, rd)?;
        let d_lr = g.channel_matmul(d_rows, map_vt)?;

        Ok(HfpmOutput {
            v: self.heads[0].forward(g, p, v_lr, v, slope)?,
            h: self.heads[1].forward(g, p, h_lr, h, slope)?,
            d: self.heads[2].forward(g, p, d_lr, d, slope)?,
        })
    }
}
