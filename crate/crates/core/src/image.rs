//! Image containers and their on-disk formats.
//!
//! HDR data is stored as little-endian PFM (`PF` for three channels, `Pf` for
//! one), scale `-1.0`, rows bottom-to-top as the format requires. LDR data is
//! written as 8-bit RGB PNG.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel floating point image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "plane of {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn write_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_pfm(path.as_ref(), self.width, self.height, 1, &self.data)
    }

    pub fn read_pfm(path: impl AsRef<Path>) -> Result<Plane> {
        let (w, h, ch, data) = read_pfm(path.as_ref())?;
        if ch != 1 {
            return Err(Error::format(path.as_ref(), "expected single-channel PFM"));
        }
        Plane::from_vec(w, h, data)
    }
}

/// Which linear RGB basis a three-channel image lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorSpace {
    /// Sensor RGB, before white balance and color correction.
    CameraRGB,
    /// Standard linear RGB (sRGB primaries, no gamma).
    LinearRGB,
    /// Gamma-encoded display sRGB in [0, 1].
    Srgb,
}

/// Three-channel floating point image, row-major, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
    pub color_space: ColorSpace,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, color_space: ColorSpace) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
            color_space,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3], color_space: ColorSpace) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![rgb; width * height],
            color_space,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        color_space: ColorSpace,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        RgbImage {
            width,
            height,
            pixels,
            color_space,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn expect_space(&self, expected: ColorSpace) -> Result<()> {
        if self.color_space != expected {
            return Err(Error::ColorSpace {
                expected,
                found: self.color_space,
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().flatten().all(|v| v.is_finite())
    }

    pub fn channel(&self, c: usize) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.pixels.iter().map(|p| p[c]).collect(),
        }
    }

    pub fn from_channels(planes: [&Plane; 3], color_space: ColorSpace) -> Result<Self> {
        if !planes[0].same_shape(planes[1]) || !planes[0].same_shape(planes[2]) {
            return Err(Error::Shape("channel planes differ in size".into()));
        }
        let pixels = (0..planes[0].data.len())
            .map(|i| [planes[0].data[i], planes[1].data[i], planes[2].data[i]])
            .collect();
        Ok(RgbImage {
            width: planes[0].width,
            height: planes[0].height,
            pixels,
            color_space,
        })
    }

    pub fn map(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
            color_space: self.color_space,
        }
    }

    pub fn write_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        let flat: Vec<f64> = self.pixels.iter().flatten().copied().collect();
        write_pfm(path.as_ref(), self.width, self.height, 3, &flat)
    }

    /// PFM carries no color space, so the caller states it.
    pub fn read_pfm(path: impl AsRef<Path>, color_space: ColorSpace) -> Result<RgbImage> {
        let (w, h, ch, data) = read_pfm(path.as_ref())?;
        if ch != 3 {
            return Err(Error::format(path.as_ref(), "expected three-channel PFM"));
        }
        let pixels = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(RgbImage {
            width: w,
            height: h,
            pixels,
            color_space,
        })
    }

    /// Quantizes to 8 bits. Values are clamped to [0, 1] first.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flatten()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::format(path, e.to_string()))?;
        writer
            .write_image_data(&self.to_rgb8())
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(())
    }

    /// Reads an 8-bit RGB PNG as display sRGB in [0, 1].
    pub fn read_png(path: impl AsRef<Path>) -> Result<RgbImage> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::format(path, e.to_string()))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::format(path, "only 8-bit RGB PNG is supported"));
        }
        let pixels = buf[..info.buffer_size()]
            .chunks_exact(3)
            .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
            .collect();
        Ok(RgbImage {
            width: info.width as usize,
            height: info.height as usize,
            pixels,
            color_space: ColorSpace::Srgb,
        })
    }
}

/// Channel count declared in a PFM header, without reading the pixels.
pub fn pfm_channels(path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let mut tag = [0u8; 2];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut tag))
        .map_err(|e| Error::io(path, e))?;
    match &tag {
        b"PF" => Ok(3),
        b"Pf" => Ok(1),
        _ => Err(Error::format(path, "not a PFM file")),
    }
}

fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let tag = if channels == 3 { "PF" } else { "Pf" };
    let mut bytes = format!("{tag}\n{width} {height}\n-1.0\n").into_bytes();
    bytes.reserve(width * height * channels * 4);
    let row_len = width * channels;
    for row in (0..height).rev() {
        for v in &data[row * row_len..(row + 1) * row_len] {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let next_line = |reader: &mut BufReader<File>| -> Result<String> {
        let mut line = String::new();
        reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        Ok(line.trim().to_string())
    };
    let channels = match next_line(&mut reader)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::format(path, format!("bad PFM magic {other:?}"))),
    };
    let dims = next_line(&mut reader)?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (width, height) = match (it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h))) => (w, h),
        _ => return Err(Error::format(path, format!("bad PFM dimensions {dims:?}"))),
    };
    let scale: f64 = next_line(&mut reader)?
        .parse()
        .map_err(|_| Error::format(path, "bad PFM scale"))?;
    let little_endian = scale < 0.0;

    let row_len = width * channels;
    let mut raw = vec![0u8; row_len * height * 4];
    reader
        .read_exact(&mut raw)
        .map_err(|e| Error::io(path, e))?;
    let mut data = vec![0.0; row_len * height];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let file_row = i / row_len;
        let col = i % row_len;
        data[(height - 1 - file_row) * row_len + col] = v as f64;
    }
    Ok((width, height, channels, data))
}
