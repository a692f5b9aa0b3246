//! Linear UV texture space, texture binding and image metrics.

use std::fs;
use std::path::Path;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::mesh::Mesh;
use crate::pca::{self, PcaBasis};
use crate::shape::{read_f64s, write_f64s};
use crate::{Error, Result};

pub const DEFAULT_TEXTURE_SIZE: usize = 256;

/// Row-major RGB image with real-valued channels; row 0 is `v = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureImage {
    pub width: usize,
    pub height: usize,
    /// `width * height * 3` channel values.
    pub pixels: Vec<f64>,
}

impl TextureImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid("texture must be non-empty".into()));
        }
        crate::error::check_len("texture channels", width * height * 3, pixels.len())?;
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self {
            width,
            height,
            pixels: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn texel(&self, x: usize, y: usize) -> [f64; 3] {
        let o = 3 * (y * self.width + x);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn clamped(mut self) -> Self {
        self.pixels.iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
        self
    }

    /// Bilinear sample with texel centers at `((x + 0.5) / W, (y + 0.5) / H)`
    /// and clamp-to-edge addressing.
    pub fn sample(&self, uv: [f64; 2]) -> [f64; 3] {
        let fx = (uv[0] * self.width as f64 - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (uv[1] * self.height as f64 - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let (a, b, c, d) = (self.texel(x0, y0), self.texel(x1, y0), self.texel(x0, y1), self.texel(x1, y1));
        std::array::from_fn(|ch| {
            let top = a[ch] + (b[ch] - a[ch]) * tx;
            let bottom = c[ch] + (d[ch] - c[ch]) * tx;
            top + (bottom - top) * ty
        })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn to_rgb8_base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(self.to_rgb8())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        Self::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        image::save_buffer(
            path.as_ref(),
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureModel {
    pub width: usize,
    pub height: usize,
    pub basis: PcaBasis,
}

pub fn fit_texture_pca(images: &[TextureImage], n_tex: usize) -> Result<TextureModel> {
    let first = images
        .first()
        .ok_or_else(|| Error::Invalid("texture PCA needs at least 2 images".into()))?;
    for img in images {
        if (img.width, img.height) != (first.width, first.height) {
            return Err(Error::Invalid(format!(
                "texture size {}x{} differs from {}x{}",
                img.width, img.height, first.width, first.height
            )));
        }
    }
    let rows: Vec<&[f64]> = images.iter().map(|i| i.pixels.as_slice()).collect();
    Ok(TextureModel {
        width: first.width,
        height: first.height,
        basis: pca::fit(&rows, n_tex)?,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TextureHeader {
    width: usize,
    height: usize,
    n_tex: usize,
    singular_values: Vec<f64>,
    n_samples: usize,
}

impl TextureModel {
    pub fn n_tex(&self) -> usize {
        self.basis.n_components()
    }

    pub fn mean_image(&self) -> TextureImage {
        TextureImage {
            width: self.width,
            height: self.height,
            pixels: self.basis.mean.clone(),
        }
    }

    /// `mean + sum_i c_i * component_i` without clamping.
    pub fn eval_unclamped(&self, coeffs: &[f64]) -> Result<TextureImage> {
        Ok(TextureImage {
            width: self.width,
            height: self.height,
            pixels: self.basis.reconstruct(coeffs)?,
        })
    }

    pub fn eval_texture(&self, coeffs: &[f64]) -> Result<TextureImage> {
        Ok(self.eval_unclamped(coeffs)?.clamped())
    }

    pub fn project(&self, image: &TextureImage) -> Result<Vec<f64>> {
        self.basis.project(&image.pixels)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_f64s(&dir.join("mean.bin"), &self.basis.mean)?;
        write_f64s(&dir.join("components.bin"), &self.basis.components)?;
        let header = TextureHeader {
            width: self.width,
            height: self.height,
            n_tex: self.n_tex(),
            singular_values: self.basis.singular_values.clone(),
            n_samples: self.basis.n_samples,
        };
        let p = dir.join("texture.json");
        fs::write(&p, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&p, e))?;
        self.mean_image().save_png(dir.join("mean.png"))
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join("texture.json");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let h: TextureHeader = serde_json::from_str(&text)?;
        let dim = h.width * h.height * 3;
        let mean = read_f64s(&dir.join("mean.bin"))?;
        crate::error::check_len("texture mean", dim, mean.len())?;
        let components = read_f64s(&dir.join("components.bin"))?;
        crate::error::check_len("texture components", h.n_tex * dim, components.len())?;
        Ok(Self {
            width: h.width,
            height: h.height,
            basis: PcaBasis {
                mean,
                components,
                singular_values: h.singular_values,
                dim,
                n_samples: h.n_samples,
                clamped: false,
            },
        })
    }
}

/// A mesh bound to a texture image.
#[derive(Debug, Clone, Copy)]
pub struct TexturedMesh<'a> {
    pub mesh: &'a Mesh,
    pub texture: &'a TextureImage,
}

impl TexturedMesh<'_> {
    pub fn sample_at_vertex(&self, i: usize) -> [f64; 3] {
        self.texture.sample(self.mesh.uvs[i])
    }
}

pub fn apply_texture<'a>(mesh: &'a Mesh, texture: &'a TextureImage) -> Result<TexturedMesh<'a>> {
    if !mesh.has_uvs {
        return Err(Error::Invalid("mesh has no texture coordinates".into()));
    }
    if texture.pixels.is_empty() {
        return Err(Error::Invalid("texture is empty".into()));
    }
    Ok(TexturedMesh { mesh, texture })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureMetrics {
    pub mse: f64,
    /// `10 log10(1 / mse)`; `+inf` for identical images.
    pub psnr: f64,
}

pub fn texture_metrics(a: &TextureImage, b: &TextureImage) -> Result<TextureMetrics> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Invalid(format!(
            "texture sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let sum: f64 = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum();
    let mse = sum / a.pixels.len() as f64;
    let psnr = if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() };
    Ok(TextureMetrics { mse, psnr })
}
