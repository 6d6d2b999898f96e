//! Grayscale canvases, RGB overlays and their PPM/PNG encodings.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Minimum canvas side in pixels.
pub const MIN_SIDE: usize = 8;

/// Row-major intensities in `[0, 1]`; 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayscaleImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayscaleImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::Input(format!("image {height}x{width} is smaller than {MIN_SIDE}x{MIN_SIDE}")));
        }
        if pixels.len() != height * width {
            return Err(Error::shape("image", &[height, width], &[pixels.len()]));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(GrayscaleImage { height, width, pixels })
    }

    pub fn blank(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    /// 8-bit quantization used by every export path.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize(v)).collect()
    }

    /// Binary PPM (P6), gray replicated to RGB.
    pub fn to_ppm(&self) -> Vec<u8> {
        let rgb: Vec<u8> = self.to_u8().iter().flat_map(|&g| [g, g, g]).collect();
        encode_ppm(self.width, self.height, &rgb)
    }

    pub fn to_rgb(&self) -> RgbImage {
        RgbImage {
            height: self.height,
            width: self.width,
            data: self.to_u8().iter().flat_map(|&g| [g, g, g]).collect(),
        }
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape("rgb image", &[height, width, 3], &[data.len()]));
        }
        Ok(RgbImage { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        encode_ppm(self.width, self.height, &self.data)
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
            writer
                .write_image_data(&self.data)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(out)
    }
}

/// Output encodings for images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

pub fn write_rgb(image: &RgbImage, path: &Path, format: ImageFormat) -> Result<()> {
    let bytes = match format {
        ImageFormat::Ppm => image.to_ppm(),
        ImageFormat::Png => image.to_png()?,
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a binary P6 PPM with maxval 255.
pub fn read_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(Error::Format("expected P6 with maxval 255".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PPM size {s}")));
    let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = bytes.get(pos..).unwrap_or_default().to_vec();
    RgbImage::new(height, width, data)
}
