//! Fixed rendering from packed RAW to display sRGB.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Transfer {
    SrgbOetf,
    Gamma { gamma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IspConfig {
    pub wb_gains: [f64; 3],
    pub ccm: [[f64; 3]; 3],
    pub transfer: Transfer,
    /// Require CCM rows to sum to one.
    pub color_preserving: bool,
}

impl Default for IspConfig {
    fn default() -> Self {
        IspConfig {
            wb_gains: [1.0; 3],
            ccm: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            transfer: Transfer::SrgbOetf,
            color_preserving: true,
        }
    }
}

impl IspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.color_preserving {
            for row in &self.ccm {
                let s: f64 = row.iter().sum();
                ensure!((s - 1.0).abs() < 1e-9, "ccm row {row:?} does not sum to 1");
            }
        }
        if let Transfer::Gamma { gamma } = self.transfer {
            ensure!(gamma > 0.0, "gamma must be positive");
        }
        Ok(())
    }
}

pub fn srgb_oetf(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Half-size demosaic, white balance, CCM and transfer curve. Input is a
/// 4-channel `(R, G1, G2, B)` packed tensor; output is `(3, h, w)`.
pub fn isp_render(packed: &Tensor<f32>, cfg: &IspConfig) -> Result<Tensor<f32>> {
    let s = packed.shape();
    ensure!(s.c == 4, "isp_render: expected 4 channels, got {}", s.c);
    cfg.validate()?;
    let p = s.plane();
    let d = packed.data();
    let mut out = Tensor::zeros(Shape::new(3, s.h, s.w));
    let od = out.data_mut();
    let encode = |v: f64| match cfg.transfer {
        Transfer::SrgbOetf => srgb_oetf(v),
        Transfer::Gamma { gamma } => v.powf(1.0 / gamma),
    };
    for i in 0..p {
        let r = d[i] as f64 * cfg.wb_gains[0];
        let g = (d[p + i] as f64 + d[2 * p + i] as f64) / 2.0 * cfg.wb_gains[1];
        let b = d[3 * p + i] as f64 * cfg.wb_gains[2];
        let lin = [r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0)];
        for (ch, row) in cfg.ccm.iter().enumerate() {
            let v = (row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]).clamp(0.0, 1.0);
            od[ch * p + i] = encode(v) as f32;
        }
    }
    Ok(out)
}

/// 8-bit quantization with round-half-up.
pub fn quantize_u8(v: f32) -> u8 {
    ((v.clamp(0.0, 1.0) as f64) * 255.0 + 0.5).floor() as u8
}

/// Binary PPM (P6, maxval 255) of a `(3, h, w)` image in `[0, 1]`.
pub fn write_ppm(mut w: impl Write, rgb: &Tensor<f32>) -> Result<()> {
    let s = rgb.shape();
    ensure!(s.c == 3, "write_ppm: expected 3 channels, got {}", s.c);
    write!(w, "P6\n{} {}\n255\n", s.w, s.h)?;
    let p = s.plane();
    let d = rgb.data();
    let mut bytes = Vec::with_capacity(3 * p);
    for i in 0..p {
        for c in 0..3 {
            bytes.push(quantize_u8(d[c * p + i]));
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// Reads a P6 PPM with maxval 255 into `(3, h, w)` floats in `[0, 1]`.
pub fn read_ppm(mut r: impl Read) -> Result<Tensor<f32>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("ppm: truncated header"));
        }
        fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" {
        return Err(Error::format(format!("ppm: bad magic {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(format!("ppm: bad number {s:?}")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::format("ppm: only maxval 255 is supported"));
    }
    let p = w * h;
    if buf.len() < pos || buf.len() - pos != 3 * p {
        return Err(Error::format("ppm: payload length does not match header"));
    }
    let px = &buf[pos..];
    let mut out = Tensor::zeros(Shape::new(3, h, w));
    let od = out.data_mut();
    for i in 0..p {
        for c in 0..3 {
            od[c * p + i] = px[3 * i + c] as f32 / 255.0;
        }
    }
    Ok(out)
}
