//! RGB image records plus the small amount of pixel plumbing the pipeline
//! needs (loading, hashing, paletted label-map PNGs, overlays).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Smallest edge accepted for an input image.
pub const MIN_EDGE: usize = 8;

/// An 8-bit RGB image with interleaved, row-major pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < MIN_EDGE || height < MIN_EDGE {
            return Err(Error::InvalidArgument(format!(
                "image must be at least {MIN_EDGE}x{MIN_EDGE}, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} RGB bytes for {width}x{height}, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(ImageRecord {
            id: id.into(),
            width,
            height,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        id: impl Into<String>,
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(id, width, height, pixels)
    }

    pub fn open(path: &Path) -> Result<Self> {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("bad image path {}", path.display())))?
            .to_string();
        let dynamic = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()?;
        let rgb = dynamic.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(id, w as usize, h as usize, rgb.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("pixel buffer length checked at construction");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
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

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Hex SHA-256 over dimensions and pixels; the image id does not take part.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        h.update(&self.pixels);
        hex::encode(h.finalize())
    }

    /// Copy of the sub-rectangle `[x0, x1) × [y0, y1)`, keeping the id.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0) * 3);
        for y in y0..y1 {
            let row = (y * self.width + x0) * 3;
            pixels.extend_from_slice(&self.pixels[row..row + (x1 - x0) * 3]);
        }
        Self::new(self.id.clone(), x1 - x0, y1 - y0, pixels)
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Standard VOC colour map, extended procedurally past 21 entries.
pub fn voc_palette(n: usize) -> Vec<[u8; 3]> {
    (0..n)
        .map(|i| {
            let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
            let mut c = i;
            for j in 0..8 {
                r |= (((c >> 0) & 1) as u8) << (7 - j);
                g |= (((c >> 1) & 1) as u8) << (7 - j);
                b |= (((c >> 2) & 1) as u8) << (7 - j);
                c >>= 3;
            }
            [r, g, b]
        })
        .collect()
}

/// Writes an 8-bit paletted PNG whose pixel values are the given indices.
pub fn write_indexed_png(path: &Path, width: usize, height: usize, indices: &[u8]) -> Result<()> {
    assert_eq!(indices.len(), width * height);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    let palette: Vec<u8> = voc_palette(256).into_iter().flatten().collect();
    enc.set_palette(palette);
    let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    writer
        .write_image_data(indices)
        .map_err(|e| Error::Png(e.to_string()))?;
    writer.finish().map_err(|e| Error::Png(e.to_string()))?;
    Ok(())
}

/// Reads the raw palette indices of an 8-bit paletted (or grayscale) PNG.
pub fn read_indexed_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight
        || !matches!(color, png::ColorType::Indexed | png::ColorType::Grayscale)
    {
        return Err(Error::Png(format!(
            "{}: expected 8-bit indexed or grayscale PNG, got {color:?}/{depth:?}",
            path.display()
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let mut out = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        out.extend_from_slice(&row[..w]);
    }
    Ok((w, h, out))
}

/// Blends a palette colour per label over the image (`alpha` is the label weight).
pub fn overlay(image: &ImageRecord, labels: &[u16], alpha: f32) -> ImageRecord {
    let palette = voc_palette(256);
    let mut out = image.clone();
    for (i, px) in out.pixels_mut().chunks_mut(3).enumerate() {
        let c = palette[(labels[i] as usize).min(255)];
        for k in 0..3 {
            px[k] = (px[k] as f32 * (1.0 - alpha) + c[k] as f32 * alpha).round() as u8;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_images() {
        assert!(ImageRecord::new("x", 4, 8, vec![0; 4 * 8 * 3]).is_err());
        assert!(ImageRecord::new("x", 8, 8, vec![0; 10]).is_err());
    }

    #[test]
    fn voc_palette_head() {
        let p = voc_palette(21);
        assert_eq!(p[0], [0, 0, 0]);
        assert_eq!(p[1], [128, 0, 0]);
        assert_eq!(p[15], [192, 128, 128]);
    }

    #[test]
    fn indexed_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.png");
        let idx: Vec<u8> = (0..9 * 10).map(|i| (i % 22) as u8).collect();
        write_indexed_png(&path, 9, 10, &idx).unwrap();
        let (w, h, back) = read_indexed_png(&path).unwrap();
        assert_eq!((w, h), (9, 10));
        assert_eq!(back, idx);
    }

    #[test]
    fn content_hash_ignores_id() {
        let a = ImageRecord::from_fn("a", 8, 8, |x, y| [x as u8, y as u8, 0]).unwrap();
        let mut b = a.clone();
        b.id = "b".into();
        assert_eq!(a.content_hash(), b.content_hash());
        b.pixels_mut()[0] = 9;
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
