//! Minimal RGB raster with PNG I/O and the primitives the mock renderer uses.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::{Result, SynthError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

pub type Rgb = [u8; 3];

impl RgbImage {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(3 * n);
        for _ in 0..n {
            data.extend_from_slice(&color);
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        3 * (y as usize * self.width as usize + x as usize)
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, c: Rgb) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&c);
    }

    /// Alpha-blends `c` over the pixel with coverage `a` in `[0, 1]`.
    pub fn blend(&mut self, x: u32, y: u32, c: Rgb, a: f64) {
        let o = self.offset(x, y);
        for (dst, &src) in self.data[o..o + 3].iter_mut().zip(&c) {
            let v = *dst as f64 * (1.0 - a) + src as f64 * a;
            *dst = v.round().clamp(0.0, 255.0) as u8;
        }
    }

    /// Nearest-neighbour resample to `width x height`.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = RgbImage::filled(width, height, [0; 3]);
        for y in 0..height {
            let sy = (y as u64 * self.height as u64 / height as u64) as u32;
            for x in 0..width {
                let sx = (x as u64 * self.width as u64 / width as u64) as u32;
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }

    /// Anti-aliased segment of the given width; coverage falls off over one
    /// pixel at the edge.
    pub fn draw_segment(&mut self, a: [f64; 2], b: [f64; 2], width: f64, c: Rgb) {
        let half = width / 2.0;
        let pad = half + 1.0;
        let x0 = (a[0].min(b[0]) - pad).floor().max(0.0);
        let x1 = (a[0].max(b[0]) + pad).ceil().min(self.width as f64 - 1.0);
        let y0 = (a[1].min(b[1]) - pad).floor().max(0.0);
        let y1 = (a[1].max(b[1]) + pad).ceil().min(self.height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            return;
        }
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        for y in y0 as u32..=y1 as u32 {
            for x in x0 as u32..=x1 as u32 {
                let p = [x as f64 + 0.5 - a[0], y as f64 + 0.5 - a[1]];
                let t = if len2 > 0.0 {
                    ((p[0] * d[0] + p[1] * d[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let dist = ((p[0] - t * d[0]).powi(2) + (p[1] - t * d[1]).powi(2)).sqrt();
                let cov = (half + 0.5 - dist).clamp(0.0, 1.0);
                if cov > 0.0 {
                    self.blend(x, y, c, cov);
                }
            }
        }
    }

    /// Hard-edged disc: every pixel whose centre lies within `radius`.
    pub fn fill_disc(&mut self, center: [f64; 2], radius: f64, c: Rgb) {
        let x0 = (center[0] - radius).floor().max(0.0);
        let x1 = (center[0] + radius).ceil().min(self.width as f64 - 1.0);
        let y0 = (center[1] - radius).floor().max(0.0);
        let y1 = (center[1] + radius).ceil().min(self.height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            return;
        }
        for y in y0 as u32..=y1 as u32 {
            for x in x0 as u32..=x1 as u32 {
                let dx = x as f64 + 0.5 - center[0];
                let dy = y as f64 + 0.5 - center[1];
                if dx * dx + dy * dy <= radius * radius {
                    self.set(x, y, c);
                }
            }
        }
    }
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> SynthError {
    SynthError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Decodes any 8/16-bit PNG into RGB8.
pub fn read_png(path: &Path) -> Result<RgbImage> {
    let file = File::open(path).map_err(|e| png_err(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND | Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    buf.truncate(info.buffer_size());
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(png_err(path, "unexpanded palette")),
    };
    let data = if channels == 3 {
        buf
    } else {
        buf.chunks_exact(channels)
            .flat_map(|px| {
                if channels <= 2 {
                    [px[0]; 3]
                } else {
                    [px[0], px[1], px[2]]
                }
            })
            .collect()
    };
    Ok(RgbImage {
        width: info.width,
        height: info.height,
        data,
    })
}

/// Reads only the PNG header and returns `(width, height)`.
pub fn png_dimensions(path: &Path) -> Result<(u32, u32)> {
    let file = File::open(path).map_err(|e| png_err(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    let info = decoder.read_header_info().map_err(|e| png_err(path, e))?;
    Ok((info.width, info.height))
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let file = File::create(path).map_err(|e| png_err(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width, img.height);
    enc.set_color(ColorType::Rgb);
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer
        .write_image_data(&img.data)
        .map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = RgbImage::filled(7, 5, [10, 20, 30]);
        img.set(6, 4, [255, 0, 1]);
        let p = dir.path().join("a.png");
        write_png(&p, &img).unwrap();
        assert_eq!(read_png(&p).unwrap(), img);
        assert_eq!(png_dimensions(&p).unwrap(), (7, 5));
    }

    #[test]
    fn disc_centroid_is_subpixel() {
        let mut img = RgbImage::filled(40, 40, [0; 3]);
        let c = [17.3, 21.8];
        img.fill_disc(c, 4.0, [9, 9, 9]);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..40 {
            for x in 0..40 {
                if img.get(x, y) == [9, 9, 9] {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1.0;
                }
            }
        }
        assert!((sx / n - c[0]).abs() < 0.5 && (sy / n - c[1]).abs() < 0.5);
    }

    #[test]
    fn segment_clips_to_image() {
        let mut img = RgbImage::filled(10, 10, [0; 3]);
        img.draw_segment([-50.0, 5.0], [50.0, 5.0], 2.0, [200; 3]);
        assert_eq!(img.get(3, 5), [200; 3]);
        img.draw_segment([-50.0, -50.0], [-40.0, -40.0], 2.0, [1; 3]);
    }
}
