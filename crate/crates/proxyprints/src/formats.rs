//! On-disk formats: PNG images, templates (JSON and the `PPT1` binary
//! record) and embeddings.
//!
//! `PPT1` layout, little-endian: magic `PPT1`, `u16` version (1), `u32`
//! width, `u32` height, `u16` dpi, `u32` count, then per minutia `f64` x,
//! `f64` y, `f64` angle, `u8` kind (0 termination, 1 bifurcation) and `f64`
//! quality.
//!
//! Embeddings are a `u32` length followed by that many `f64` values.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use proxyprints_core::encoder::Embedding;
use proxyprints_core::imaging::{contour_crop, GrayImage};
use proxyprints_core::minutiae::{Minutia, MinutiaKind, RgbImage, Template};
use serde::{Deserialize, Serialize};

pub const TEMPLATE_FORMAT: &str = "proxyprints-template/1";
pub const TEMPLATE_MAGIC: &[u8; 4] = b"PPT1";
const TEMPLATE_VERSION: u16 = 1;
const MINUTIA_BYTES: usize = 8 * 3 + 1 + 8;

/// Loads a PNG as 8-bit gray; colour input is converted to luma.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).with_context(|| format!("reading image {}", path.display()))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(GrayImage::new(w, h, img.into_raw())?)
}

/// Loads a capture, optionally cropping it to the finger contour first.
pub fn load_capture(path: &Path, contour: bool) -> Result<GrayImage> {
    let img = load_gray(path)?;
    Ok(if contour { contour_crop(&img)? } else { img })
}

pub fn png_gray_bytes(img: &GrayImage) -> Result<Vec<u8>> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.pixels().to_vec())
        .context("pixel buffer does not match image size")?;
    encode_png(buf.as_raw(), buf.width(), buf.height(), image::ExtendedColorType::L8)
}

pub fn png_rgb_bytes(img: &RgbImage) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img.data.iter().flatten().copied().collect();
    encode_png(&raw, img.width as u32, img.height as u32, image::ExtendedColorType::Rgb8)
}

fn encode_png(raw: &[u8], w: u32, h: u32, color: image::ExtendedColorType) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(raw, w, h, color)?;
    Ok(out)
}

pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    write_file(path, &png_gray_bytes(img)?)
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    write_file(path, &png_rgb_bytes(img)?)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct TemplateOut<'a> {
    format: &'a str,
    #[serde(flatten)]
    template: &'a Template,
}

#[derive(Deserialize)]
struct TemplateIn {
    format: String,
    #[serde(flatten)]
    template: Template,
}

pub fn template_to_json(t: &Template) -> Result<String> {
    Ok(serde_json::to_string_pretty(&TemplateOut { format: TEMPLATE_FORMAT, template: t })?)
}

pub fn template_from_json(s: &str) -> Result<Template> {
    let doc: TemplateIn = serde_json::from_str(s).context("parsing template JSON")?;
    ensure!(doc.format == TEMPLATE_FORMAT, "unsupported template format {:?}", doc.format);
    Ok(doc.template)
}

pub fn template_to_binary(t: &Template) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + t.len() * MINUTIA_BYTES);
    out.extend_from_slice(TEMPLATE_MAGIC);
    out.extend_from_slice(&TEMPLATE_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.width as u32).to_le_bytes());
    out.extend_from_slice(&(t.height as u32).to_le_bytes());
    out.extend_from_slice(&t.dpi.to_le_bytes());
    out.extend_from_slice(&(t.len() as u32).to_le_bytes());
    for m in t.minutiae() {
        for v in [m.x, m.y, m.angle] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(match m.kind {
            MinutiaKind::Termination => 0,
            MinutiaKind::Bifurcation => 1,
        });
        out.extend_from_slice(&m.quality.to_le_bytes());
    }
    out
}

/// Little-endian field reader over a byte slice.
struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        ensure!(self.0.len() >= N, "record truncated");
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().expect("split at N"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn template_from_binary(bytes: &[u8]) -> Result<Template> {
    let mut r = Reader(bytes);
    ensure!(&r.take::<4>()? == TEMPLATE_MAGIC, "not a PPT1 template record");
    let version = r.u16()?;
    ensure!(version == TEMPLATE_VERSION, "unsupported PPT1 version {version}");
    let (width, height, dpi) = (r.u32()? as usize, r.u32()? as usize, r.u16()?);
    let count = r.u32()? as usize;
    ensure!(r.0.len() == count * MINUTIA_BYTES, "record length does not match {count} minutiae");
    let mut minutiae = Vec::with_capacity(count);
    for _ in 0..count {
        let (x, y, angle) = (r.f64()?, r.f64()?, r.f64()?);
        let kind = match r.take::<1>()?[0] {
            0 => MinutiaKind::Termination,
            1 => MinutiaKind::Bifurcation,
            k => bail!("unknown minutia kind {k}"),
        };
        minutiae.push(Minutia { x, y, angle, kind, quality: r.f64()? });
    }
    Ok(Template::new(width, height, dpi, minutiae)?)
}

/// Reads either template encoding, told apart by the magic bytes.
pub fn load_template(path: &Path) -> Result<Template> {
    let bytes = fs::read(path).with_context(|| format!("reading template {}", path.display()))?;
    if bytes.starts_with(TEMPLATE_MAGIC) {
        template_from_binary(&bytes)
    } else {
        template_from_json(std::str::from_utf8(&bytes).context("template is neither PPT1 nor UTF-8 JSON")?)
    }
    .with_context(|| format!("loading template {}", path.display()))
}

/// Writes `PPT1` for a `.ppt` extension and JSON otherwise.
pub fn save_template(path: &Path, t: &Template) -> Result<()> {
    if path.extension().is_some_and(|e| e == "ppt") {
        write_file(path, &template_to_binary(t))
    } else {
        write_file(path, template_to_json(t)?.as_bytes())
    }
}

pub fn embedding_to_bytes(e: &Embedding) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 * e.dim());
    out.extend_from_slice(&(e.dim() as u32).to_le_bytes());
    for v in e.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn embedding_from_bytes(bytes: &[u8]) -> Result<Embedding> {
    let mut r = Reader(bytes);
    let n = r.u32()? as usize;
    ensure!(r.0.len() == 8 * n, "embedding length prefix {n} does not match the payload");
    let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    Ok(Embedding::from_raw(values))
}
