//! Per-pixel grids: RGB images, depth maps and foreground masks. All grids
//! are row-major with the top row first; pixel `(u, v)` is column `u`, row `v`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<[f32; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<[f32; 3]>) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        if let Some(p) = pixels
            .iter()
            .flatten()
            .find(|c| !(0.0..=1.0).contains(*c))
        {
            return Err(Error::Invalid(format!("image channel {p} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.pixels
    }

    pub fn get(&self, u: usize, v: usize) -> [f32; 3] {
        self.pixels[v * self.width + u]
    }

    pub(crate) fn set(&mut self, u: usize, v: usize, rgb: [f32; 3]) {
        self.pixels[v * self.width + u] = rgb;
    }

    /// Box-filter downsampling by an integer factor in both directions.
    pub fn downsample(&self, factor: usize) -> Result<Image> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(Error::Dimension(format!(
                "cannot downsample {}x{} by {factor}",
                self.width, self.height
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = (factor * factor) as f64;
        let mut pixels = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                let mut acc = [0.0f64; 3];
                for dv in 0..factor {
                    for du in 0..factor {
                        let p = self.get(u * factor + du, v * factor + dv);
                        for c in 0..3 {
                            acc[c] += p[c] as f64;
                        }
                    }
                }
                pixels.push(acc.map(|a| (a / norm) as f32));
            }
        }
        Ok(Image {
            width: w,
            height: h,
            pixels,
        })
    }

    /// Channel-major (`[3, H, W]`) copy for the image encoder.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; 3 * plane];
        for (i, p) in self.pixels.iter().enumerate() {
            for c in 0..3 {
                out[c * plane + i] = p[c] as f64;
            }
        }
        out
    }
}

/// Per-pixel depth along the optical axis. A value of 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DepthMap {
    pub const INVALID: f32 = 0.0;

    /// Validates finiteness only; negative entries are rejected later, when
    /// they fall under a mask.
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some(d) = values.iter().find(|d| !d.is_finite()) {
            return Err(Error::Invalid(format!("non-finite depth {d}")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.values[v * self.width + u]
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.get(u, v) > 0.0
    }

    /// Foreground mask of pixels carrying a valid depth.
    pub fn support(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&d| d > 0.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    values: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.values[v * self.width + u]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&m| m).count()
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!(
            "grid dimensions must be positive, got {width}x{height}"
        )));
    }
    if width * height != len {
        return Err(Error::Dimension(format!(
            "{width}x{height} grid needs {} values, got {len}",
            width * height
        )));
    }
    Ok(())
}

pub(crate) fn ensure_same_dims(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Blacks out every pixel outside the mask.
pub fn apply_mask(image: &Image, mask: &Mask) -> Result<Image> {
    ensure_same_dims(
        (image.width, image.height),
        (mask.width, mask.height),
        "image vs mask",
    )?;
    let pixels = image
        .pixels
        .iter()
        .zip(&mask.values)
        .map(|(&p, &m)| if m { p } else { [0.0; 3] })
        .collect();
    Ok(Image {
        width: image.width,
        height: image.height,
        pixels,
    })
}
