//! 8-bit grayscale rasters and binary masks, plus PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit grayscale image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl GrayImage {
    /// Image filled with a constant intensity.
    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    /// Build from raw row-major bytes. `data.len()` must equal `width * height`.
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::RasterSizeMismatch(format!(
                "{} bytes for a {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.width as usize)
    }

    /// Copy of the axis-aligned subrectangle. The rectangle must lie within bounds.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<GrayImage> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::RasterSizeMismatch(format!(
                "crop ({x},{y},{w},{h}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w as usize * h as usize);
        for row in y..y + h {
            let start = row as usize * self.width as usize + x as usize;
            data.extend_from_slice(&self.data[start..start + w as usize]);
        }
        GrayImage::from_raw(w, h, data)
    }
}

/// A binary mask with one bit per pixel, stored as bytes (0 or 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    width: u32,
    height: u32,
    bits: Vec<u8>,
}

impl BitMask {
    pub fn zeroed(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width as usize * height as usize],
        }
    }

    pub fn filled(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![1; width as usize * height as usize],
        }
    }

    pub fn from_raw(width: u32, height: u32, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::RasterSizeMismatch(format!(
                "{} bits for a {}x{} mask",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            bits: bits.into_iter().map(|b| u8::from(b != 0)).collect(),
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = u8::from(v);
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn same_dims(&self, other: &BitMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<BitMask> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::RasterSizeMismatch(format!(
                "crop ({x},{y},{w},{h}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut bits = Vec::with_capacity(w as usize * h as usize);
        for row in y..y + h {
            let start = row as usize * self.width as usize + x as usize;
            bits.extend_from_slice(&self.bits[start..start + w as usize]);
        }
        BitMask::from_raw(w, h, bits)
    }
}

/// Load an 8-bit grayscale PNG, converting other PNG layouts to luma.
pub fn load_png(path: &Path) -> Result<GrayImage> {
    let dynimg = image::open(path).map_err(|source| Error::ImageCodec {
        path: path.display().to_string(),
        source,
    })?;
    let luma = dynimg.into_luma8();
    GrayImage::from_raw(luma.width(), luma.height(), luma.into_raw())
}

/// Write an image as an 8-bit grayscale PNG.
pub fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    let buf: image::GrayImage =
        image::ImageBuffer::from_raw(img.width(), img.height(), img.data().to_vec())
            .expect("raster length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::ImageCodec {
            path: path.display().to_string(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_extracts_subrectangle() {
        let mut img = GrayImage::filled(4, 3, 0);
        img.set(2, 1, 7);
        let c = img.crop(1, 1, 3, 2).unwrap();
        assert_eq!((c.width(), c.height()), (3, 2));
        assert_eq!(c.get(1, 0), 7);
    }

    #[test]
    fn crop_out_of_bounds_rejected() {
        let img = GrayImage::filled(4, 3, 0);
        assert!(img.crop(2, 0, 3, 3).is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let mut img = GrayImage::filled(5, 4, 10);
        img.set(3, 2, 200);
        save_png(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(img, back);
    }
}
