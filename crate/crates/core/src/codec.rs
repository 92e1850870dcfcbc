//! `.nraw` container.
//!
//! One ASCII header line `NRAW1 {json}\n` followed by little-endian `f32`
//! samples, planar, channel-major and row-major within a channel. Pair
//! files store the HR payload then the LR payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raw::{Cfa, GroundTruthMode, PackedRaw, PairedSample};
use crate::scale::RationalScale;
use crate::tensor::{Shape, Tensor};

pub const NRAW_MAGIC: &str = "NRAW1";
const DTYPE: &str = "f32le";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NrawKind {
    Packed,
    Pair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NrawHeader {
    pub kind: NrawKind,
    pub dims: Vec<[usize; 3]>,
    pub scale: Option<RationalScale>,
    pub cfa: Cfa,
    pub noise_sigma: Option<f64>,
    pub seed: Option<u64>,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mode: Option<GroundTruthMode>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NrawFile {
    Packed(PackedRaw),
    Pair(PairedSample),
}

impl NrawFile {
    /// The HR side of a pair, or the packed image itself.
    pub fn primary(&self) -> &PackedRaw {
        match self {
            NrawFile::Packed(p) => p,
            NrawFile::Pair(s) => &s.hr,
        }
    }

    /// The LR side of a pair, or the packed image itself.
    pub fn reference(&self) -> &PackedRaw {
        match self {
            NrawFile::Packed(p) => p,
            NrawFile::Pair(s) => &s.lr,
        }
    }

    pub fn into_pair(self) -> Result<PairedSample> {
        match self {
            NrawFile::Pair(s) => Ok(s),
            NrawFile::Packed(_) => Err(Error::format("expected a pair file, found a packed image")),
        }
    }
}

fn header_for(file: &NrawFile) -> NrawHeader {
    match file {
        NrawFile::Packed(p) => NrawHeader {
            kind: NrawKind::Packed,
            dims: vec![p.tensor().shape().as_array()],
            scale: None,
            cfa: Cfa::Rggb,
            noise_sigma: None,
            seed: None,
            dtype: DTYPE.into(),
            gt_mode: None,
        },
        NrawFile::Pair(s) => NrawHeader {
            kind: NrawKind::Pair,
            dims: vec![s.hr.tensor().shape().as_array(), s.lr.tensor().shape().as_array()],
            scale: Some(s.scale),
            cfa: Cfa::Rggb,
            noise_sigma: Some(s.noise_sigma),
            seed: Some(s.scene_seed),
            dtype: DTYPE.into(),
            gt_mode: Some(s.gt_mode),
        },
    }
}

pub fn write_nraw(mut w: impl Write, file: &NrawFile) -> Result<()> {
    let header = header_for(file);
    let json = serde_json::to_string(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(NRAW_MAGIC.as_bytes());
    buf.push(b' ');
    buf.extend_from_slice(json.as_bytes());
    buf.push(b'\n');
    let tensors: Vec<&Tensor<f32>> = match file {
        NrawFile::Packed(p) => vec![p.tensor()],
        NrawFile::Pair(s) => vec![s.hr.tensor(), s.lr.tensor()],
    };
    for t in tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_nraw(mut r: impl Read) -> Result<NrawFile> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode_nraw(&buf)
}

pub fn decode_nraw(buf: &[u8]) -> Result<NrawFile> {
    let magic = format!("{NRAW_MAGIC} ");
    if !buf.starts_with(magic.as_bytes()) {
        return Err(Error::format("not an .nraw file (bad magic)"));
    }
    let nl = buf.iter().position(|&b| b == b'\n').ok_or_else(|| Error::format("truncated header (no newline)"))?;
    let header: NrawHeader =
        serde_json::from_slice(&buf[magic.len()..nl]).map_err(|e| Error::format(format!("bad header json: {e}")))?;
    if header.dtype != DTYPE {
        return Err(Error::format(format!("unsupported dtype {:?}", header.dtype)));
    }
    let expected_count = match header.kind {
        NrawKind::Packed => 1,
        NrawKind::Pair => 2,
    };
    if header.dims.len() != expected_count {
        return Err(Error::format(format!(
            "{:?} file must list {expected_count} tensor dims, found {}",
            header.kind,
            header.dims.len()
        )));
    }
    let payload = &buf[nl + 1..];
    let total: usize = header.dims.iter().map(|d| d[0] * d[1] * d[2] * 4).sum();
    if payload.len() != total {
        return Err(Error::format(format!("payload is {} bytes but header dims require {total}", payload.len())));
    }
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(expected_count);
    for d in &header.dims {
        let shape = Shape::new(d[0], d[1], d[2]);
        let n = shape.len();
        let data = payload[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        offset += 4 * n;
        let t = Tensor::new(shape, data).map_err(|e| Error::format(e.to_string()))?;
        tensors.push(PackedRaw::new(t).map_err(|e| Error::format(e.to_string()))?);
    }
    match header.kind {
        NrawKind::Packed => Ok(NrawFile::Packed(tensors.remove(0))),
        NrawKind::Pair => {
            let lr = tensors.pop().expect("two tensors");
            let hr = tensors.pop().expect("two tensors");
            let sample = PairedSample {
                hr,
                lr,
                scale: header.scale.ok_or_else(|| Error::format("pair file without scale"))?,
                scene_seed: header.seed.unwrap_or(0),
                noise_sigma: header.noise_sigma.unwrap_or(0.0),
                gt_mode: header.gt_mode.unwrap_or_default(),
            };
            sample.validate().map_err(|e| Error::format(e.to_string()))?;
            Ok(NrawFile::Pair(sample))
        }
    }
}

pub fn save_nraw(path: impl AsRef<Path>, file: &NrawFile) -> Result<()> {
    let mut buf = Vec::new();
    write_nraw(&mut buf, file)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_nraw(path: impl AsRef<Path>) -> Result<NrawFile> {
    decode_nraw(&fs::read(path)?)
}
