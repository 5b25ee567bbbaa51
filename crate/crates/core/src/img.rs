//! Small raster toolkit: RGB buffers, PNG I/O, bilinear resize, and the
//! drawing primitives used by the synthetic renderer and overlay dumps.

use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error("image i/o failed for {path}: {source}")]
    Io {
        path: String,
        source: image::ImageError,
    },
    #[error("empty image ({w}x{h})")]
    Empty { w: usize, h: usize },
    #[error("resize target must be positive")]
    BadTarget,
}

/// Interleaved 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbBuf {
    pub w: usize,
    pub h: usize,
    pub data: Vec<u8>, // len = w * h * 3
}

impl RgbBuf {
    pub fn filled(w: usize, h: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(w * h * 3);
        for _ in 0..w * h {
            data.extend_from_slice(&rgb);
        }
        RgbBuf { w, h, data }
    }

    #[inline]
    pub fn put(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
            return;
        }
        let i = (y as usize * self.w + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Filled axis-aligned rectangle, clipped to the image.
    pub fn fill_rect(&mut self, x: f64, y: f64, w: f64, h: f64, rgb: [u8; 3]) {
        let x0 = x.floor().max(0.0) as i64;
        let y0 = y.floor().max(0.0) as i64;
        let x1 = ((x + w).ceil() as i64).min(self.w as i64);
        let y1 = ((y + h).ceil() as i64).min(self.h as i64);
        for yy in y0..y1 {
            for xx in x0..x1 {
                self.put(xx, yy, rgb);
            }
        }
    }

    /// Rectangle outline, one pixel thick.
    pub fn stroke_rect(&mut self, x: f64, y: f64, w: f64, h: f64, rgb: [u8; 3]) {
        let x0 = x.round() as i64;
        let y0 = y.round() as i64;
        let x1 = (x + w).round() as i64;
        let y1 = (y + h).round() as i64;
        for xx in x0..=x1 {
            self.put(xx, y0, rgb);
            self.put(xx, y1, rgb);
        }
        for yy in y0..=y1 {
            self.put(x0, yy, rgb);
            self.put(x1, yy, rgb);
        }
    }

    /// Filled disc.
    pub fn fill_disc(&mut self, cx: f64, cy: f64, r: f64, rgb: [u8; 3]) {
        let x0 = (cx - r).floor() as i64;
        let x1 = (cx + r).ceil() as i64;
        let y0 = (cy - r).floor() as i64;
        let y1 = (cy + r).ceil() as i64;
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                let dx = xx as f64 + 0.5 - cx;
                let dy = yy as f64 + 0.5 - cy;
                if dx * dx + dy * dy <= r * r {
                    self.put(xx, yy, rgb);
                }
            }
        }
    }

    /// Line segment via integer DDA.
    pub fn draw_line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, rgb: [u8; 3]) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let x = x0 + (x1 - x0) * t;
            let y = y0 + (y1 - y0) * t;
            self.put(x.round() as i64, y.round() as i64, rgb);
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImgError> {
        let img = image::RgbImage::from_raw(self.w as u32, self.h as u32, self.data.clone())
            .expect("buffer length matches dimensions");
        img.save(path).map_err(|source| ImgError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self, ImgError> {
        let img = image::open(path)
            .map_err(|source| ImgError::Io {
                path: path.display().to_string(),
                source,
            })?
            .to_rgb8();
        Ok(RgbBuf {
            w: img.width() as usize,
            h: img.height() as usize,
            data: img.into_raw(),
        })
    }

    /// Converts to planar float CHW with values in [0, 1].
    pub fn to_planes(&self) -> Planes {
        let n = self.w * self.h;
        let mut data = vec![0f32; 3 * n];
        for i in 0..n {
            data[i] = self.data[3 * i] as f32 / 255.0;
            data[n + i] = self.data[3 * i + 1] as f32 / 255.0;
            data[2 * n + i] = self.data[3 * i + 2] as f32 / 255.0;
        }
        Planes {
            w: self.w,
            h: self.h,
            data,
        }
    }
}

/// Planar (CHW) float RGB image with values in [0, 1]; the feature-side format.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>, // len = 3 * w * h, channel-major
}

impl Planes {
    pub fn zeros(w: usize, h: usize) -> Self {
        Planes {
            w,
            h,
            data: vec![0f32; 3 * w * h],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[c * self.w * self.h + y * self.w + x]
    }

    /// Converts back to interleaved u8 (rounding).
    pub fn to_rgb(&self) -> RgbBuf {
        let n = self.w * self.h;
        let mut data = vec![0u8; 3 * n];
        for i in 0..n {
            data[3 * i] = (self.data[i] * 255.0).round().clamp(0.0, 255.0) as u8;
            data[3 * i + 1] = (self.data[n + i] * 255.0).round().clamp(0.0, 255.0) as u8;
            data[3 * i + 2] = (self.data[2 * n + i] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
        RgbBuf {
            w: self.w,
            h: self.h,
            data,
        }
    }

    /// Bilinear resize to `tw` x `th`. Aspect ratio is not preserved.
    ///
    /// Uses pixel-center sampling, so resizing to the source size reproduces
    /// the input bit for bit.
    pub fn resize(&self, tw: usize, th: usize) -> Result<Planes, ImgError> {
        if self.w == 0 || self.h == 0 {
            return Err(ImgError::Empty {
                w: self.w,
                h: self.h,
            });
        }
        if tw == 0 || th == 0 {
            return Err(ImgError::BadTarget);
        }
        if tw == self.w && th == self.h {
            return Ok(self.clone());
        }
        let mut out = Planes::zeros(tw, th);
        let sx = self.w as f64 / tw as f64;
        let sy = self.h as f64 / th as f64;
        for c in 0..3 {
            let src = &self.data[c * self.w * self.h..(c + 1) * self.w * self.h];
            let dst = &mut out.data[c * tw * th..(c + 1) * tw * th];
            for ty in 0..th {
                let fy = ((ty as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.h - 1) as f64);
                let y0 = fy.floor() as usize;
                let y1 = (y0 + 1).min(self.h - 1);
                let wy = (fy - y0 as f64) as f32;
                for tx in 0..tw {
                    let fx = ((tx as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.w - 1) as f64);
                    let x0 = fx.floor() as usize;
                    let x1 = (x0 + 1).min(self.w - 1);
                    let wx = (fx - x0 as f64) as f32;
                    let p00 = src[y0 * self.w + x0];
                    let p01 = src[y0 * self.w + x1];
                    let p10 = src[y1 * self.w + x0];
                    let p11 = src[y1 * self.w + x1];
                    let top = p00 + (p01 - p00) * wx;
                    let bot = p10 + (p11 - p10) * wx;
                    dst[ty * tw + tx] = top + (bot - top) * wy;
                }
            }
        }
        Ok(out)
    }

    /// Extracts the pixel region `[x0, x1) x [y0, y1)`.
    pub fn region(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Planes {
        let rw = x1 - x0;
        let rh = y1 - y0;
        let mut out = Planes::zeros(rw, rh);
        for c in 0..3 {
            for y in 0..rh {
                for x in 0..rw {
                    out.data[c * rw * rh + y * rw + x] = self.at(c, x0 + x, y0 + y);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_bitwise_identical() {
        let mut img = Planes::zeros(16, 16);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 * 0.37).fract();
        }
        let out = img.resize(16, 16).unwrap();
        assert_eq!(out.data, img.data);
    }

    #[test]
    fn constant_image_resizes_to_same_constant() {
        let img = Planes {
            w: 9,
            h: 7,
            data: vec![0.25f32; 3 * 9 * 7],
        };
        let out = img.resize(5, 13).unwrap();
        assert!(out.data.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn resize_shape_contract() {
        let img = Planes::zeros(128, 72);
        let out = img.resize(64, 64).unwrap();
        assert_eq!((out.w, out.h), (64, 64));
        assert_eq!(out.data.len(), 3 * 64 * 64);
    }

    #[test]
    fn resize_rejects_empty_and_zero_target() {
        let img = Planes::zeros(0, 4);
        assert!(img.resize(4, 4).is_err());
        let img = Planes::zeros(4, 4);
        assert!(img.resize(0, 4).is_err());
    }

    #[test]
    fn rgb_plane_round_trip() {
        let mut buf = RgbBuf::filled(4, 3, [0, 0, 0]);
        buf.put(1, 2, [10, 128, 255]);
        let back = buf.to_planes().to_rgb();
        assert_eq!(back, buf);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let mut buf = RgbBuf::filled(8, 5, [34, 139, 34]);
        buf.fill_rect(2.0, 1.0, 3.0, 2.0, [200, 30, 30]);
        buf.save_png(&path).unwrap();
        let back = RgbBuf::load_png(&path).unwrap();
        assert_eq!(back, buf);
    }

    #[test]
    fn drawing_clips_to_bounds() {
        let mut buf = RgbBuf::filled(4, 4, [0, 0, 0]);
        buf.fill_rect(-5.0, -5.0, 100.0, 100.0, [1, 1, 1]);
        buf.fill_disc(-10.0, -10.0, 3.0, [2, 2, 2]);
        buf.draw_line(-5.0, 2.0, 10.0, 2.0, [3, 3, 3]);
        assert_eq!(buf.data.len(), 48);
    }
}
