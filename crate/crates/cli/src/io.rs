//! File helpers: `.nraw` inputs, sRGB image outputs and CSV reports.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rawscale_core::isp::{read_ppm, write_ppm};
use rawscale_core::{isp_render, load_nraw, save_nraw, IspConfig, NrawFile, PackedRaw, Shape, Tensor};

pub fn read_nraw(path: &Path) -> Result<NrawFile> {
    load_nraw(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_packed(path: &Path, p: &PackedRaw) -> Result<()> {
    ensure_parent(path)?;
    save_nraw(path, &NrawFile::Packed(p.clamped())).with_context(|| format!("writing {}", path.display()))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(rawscale_core::Error::from)?;
    }
    Ok(())
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Writes a `(3, h, w)` image as PNG when the extension says so, else PPM.
pub fn write_rgb(path: &Path, rgb: &Tensor<f32>) -> Result<()> {
    ensure_parent(path)?;
    if is_png(path) {
        let s = rgb.shape();
        let p = s.plane();
        let d = rgb.data();
        let mut bytes = Vec::with_capacity(3 * p);
        for i in 0..p {
            for c in 0..3 {
                bytes.push(rawscale_core::isp::quantize_u8(d[c * p + i]));
            }
        }
        let img = image::RgbImage::from_raw(s.w as u32, s.h as u32, bytes).expect("buffer matches dims");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| rawscale_core::Error::Format(e.to_string()))
            .with_context(|| format!("writing {}", path.display()))?;
        return Ok(());
    }
    let mut buf = Vec::new();
    write_ppm(&mut buf, rgb)?;
    fs::write(path, buf).map_err(rawscale_core::Error::from).with_context(|| format!("writing {}", path.display()))
}

fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    if is_png(path) {
        let img = image::open(path)
            .map_err(|e| rawscale_core::Error::Format(e.to_string()))
            .with_context(|| format!("reading {}", path.display()))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        return Ok(Tensor::from_fn(Shape::new(3, h, w), |c, y, x| img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0));
    }
    let bytes =
        fs::read(path).map_err(rawscale_core::Error::from).with_context(|| format!("reading {}", path.display()))?;
    read_ppm(&bytes[..]).with_context(|| format!("reading {}", path.display()))
}

/// Image compared by `eval`; pair files contribute their LR side.
pub fn load_for_eval(path: &Path, srgb: bool, isp: &IspConfig) -> Result<Tensor<f32>> {
    let is_nraw = path.extension().is_some_and(|e| e == "nraw");
    if !is_nraw {
        anyhow::ensure!(srgb, "{}: raw-domain evaluation needs .nraw files", path.display());
        return read_rgb(path);
    }
    let file = read_nraw(path)?;
    let packed = file.reference();
    if srgb {
        Ok(isp_render(packed.tensor(), isp)?)
    } else {
        Ok(packed.tensor().clone())
    }
}

/// Files of `dir` with extension `ext`, sorted by name; a file is returned as is.
pub fn list_inputs(path: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(path).map_err(rawscale_core::Error::from)? {
        let p = entry.map_err(rawscale_core::Error::from)?.path();
        if p.extension().and_then(|e| e.to_str()).is_some_and(|e| exts.contains(&e)) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
