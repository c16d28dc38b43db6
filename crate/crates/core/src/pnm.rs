//! Binary PPM (P6) images and 16-bit PGM (P5) anomaly previews.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, EncodableLayout, ExtendedColorType, ImageEncoder, ImageError, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::tensor::AnomalyMap;
use crate::Scalar;

/// H x W x 3 interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!("rgb image {height}x{width} needs {} bytes", height * width * 3)));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = std::iter::repeat_n(rgb, height * width).flatten().collect();
        Self { height, width, data }
    }

    #[inline]
    pub fn pixel(&self, r: usize, c: usize) -> [u8; 3] {
        let o = (r * self.width + c) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, r: usize, c: usize, rgb: [u8; 3]) {
        let o = (r * self.width + c) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }
}

fn image_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(source) => Error::io(path, source),
        e => Error::Image { path: path.into(), message: e.to_string() },
    }
}

fn encode(
    path: &Path,
    bytes: &[u8],
    (width, height): (u32, u32),
    color: ExtendedColorType,
    subtype: PnmSubtype,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    PnmEncoder::new(&mut w)
        .with_subtype(subtype)
        .write_image(bytes, width, height, color)
        .map_err(|e| image_error(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let mut reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    reader.set_format(ImageFormat::Pnm);
    reader.decode().map_err(|e| image_error(path, e))
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .ok_or_else(|| Error::shape("rgb buffer does not match its size"))?;
    encode(path, buf.as_bytes(), buf.dimensions(), ExtendedColorType::Rgb8, PnmSubtype::Pixmap(SampleEncoding::Binary))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = decode(path)?.into_rgb8();
    RgbImage::new(img.height() as usize, img.width() as usize, img.into_raw())
}

/// Affinely rescales a map to [0, 65535]; a constant map becomes all zeros.
pub fn to_u16_levels<T: Scalar>(map: &AnomalyMap<T>) -> Vec<u16> {
    let Some((lo, hi)) = map.range() else { return Vec::new() };
    let (lo, hi) = (lo.as_f64(), hi.as_f64());
    let span = hi - lo;
    map.data.iter().map(|v| if span > 0.0 { ((v.as_f64() - lo) / span * 65535.0).round() as u16 } else { 0 }).collect()
}

/// Writes an anomaly map as a 16-bit big-endian PGM. The `image` encoder
/// only emits 8-bit PNM, so the header is written here.
pub fn write_pgm16<T: Scalar>(path: impl AsRef<Path>, map: &AnomalyMap<T>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!("P5\n{} {}\n65535\n", map.width, map.height).into_bytes();
    for v in to_u16_levels(map) {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm16(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>)> {
    let img = decode(path.as_ref())?.into_luma16();
    Ok((img.height() as usize, img.width() as usize, img.into_raw()))
}
