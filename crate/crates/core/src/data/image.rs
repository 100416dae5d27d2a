use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape4, Tensor4};

/// 8-bit RGB raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!("empty image {width}x{height}")));
        }
        crate::error::ensure_dim("ImageBuffer::new", "pixel bytes", width * height * 3, pixels.len())?;
        Ok(ImageBuffer {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// `(1, 3, h, w)` tensor in unit range (`v / 255`).
    pub fn to_tensor<T: Element>(&self) -> Tensor4<T> {
        let p = self.width * self.height;
        let mut data = vec![T::zero(); 3 * p];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * p + i] = T::from_f64_lossy(px[c] as f64 / 255.0);
            }
        }
        Tensor4::from_vec(Shape4::new(1, 3, self.height, self.width), data)
            .expect("length matches by construction")
    }

    /// Image `n` of a 3-channel tensor, values rounded from `v * 255` and clamped.
    pub fn from_tensor<T: Element>(t: &Tensor4<T>, n: usize) -> Result<Self> {
        let s = t.shape();
        crate::error::ensure_dim("ImageBuffer::from_tensor", "channels", 3, s.c)?;
        if n >= s.n {
            return Err(Error::Shape {
                op: "ImageBuffer::from_tensor",
                dim: "batch index",
                expected: s.n,
                actual: n,
            });
        }
        let p = s.plane();
        let mut pixels = vec![0u8; 3 * p];
        for c in 0..3 {
            for (i, &v) in t.plane(n, c).iter().enumerate() {
                pixels[i * 3 + c] = to_u8(v.to_f64_lossy());
            }
        }
        Self::new(s.w, s.h, pixels)
    }
}

pub fn to_u8(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Reads an 8- or 16-bit PNG; gray, gray+alpha, palette and RGBA inputs are
/// converted to RGB (alpha dropped).
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bad = |msg: String| Error::Image {
        path: path.to_path_buf(),
        msg,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(bad("palette was not expanded".into())),
    };
    if info.bit_depth != png::BitDepth::Eight {
        return Err(bad(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let mut pixels = Vec::with_capacity(w * h * 3);
    for px in bytes.chunks_exact(channels) {
        match channels {
            1 | 2 => pixels.extend_from_slice(&[px[0]; 3]),
            _ => pixels.extend_from_slice(&px[..3]),
        }
    }
    ImageBuffer::new(w, h, pixels).map_err(|e| bad(e.to_string()))
}

pub fn save_png(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let bad = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut writer = encoder.write_header().map_err(bad)?;
    writer.write_image_data(&img.pixels).map_err(bad)?;
    writer.finish().map_err(bad)
}

/// Writes a single-channel 8-bit PNG.
pub fn save_gray_png(values: &[u8], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    crate::error::ensure_dim("save_gray_png", "pixel bytes", width * height, values.len())?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let bad = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut writer = encoder.write_header().map_err(bad)?;
    writer.write_image_data(values).map_err(bad)?;
    writer.finish().map_err(bad)
}
