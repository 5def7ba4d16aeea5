//! Image resampling helpers and deterministic PNG I/O.

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, Rgb, RgbImage};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

/// Bilinear sample with clamp-to-edge, pixel centers on integer coordinates.
pub fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = img.dimensions();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p00 = img.get_pixel(x0, y0).0;
    let p10 = img.get_pixel(x1, y0).0;
    let p01 = img.get_pixel(x0, y1).0;
    let p11 = img.get_pixel(x1, y1).0;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Rounds half away from zero and clamps to the 8-bit range.
pub fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Resamples `src` into a `width x height` image where `h` maps source
/// pixels to output pixels. Output pixels whose preimage falls outside the
/// source are black.
pub fn warp_perspective(src: &RgbImage, h: &Mat3, width: u32, height: u32) -> Result<RgbImage> {
    let inv = h
        .try_inverse()
        .ok_or_else(|| Error::InvalidIntrinsics("warp homography is singular".into()))?;
    let (sw, sh) = src.dimensions();
    let (max_x, max_y) = ((sw - 1) as f64, (sh - 1) as f64);
    const EDGE: f64 = 1e-9;
    let mut out = RgbImage::new(width, height);
    out.par_chunks_mut(width as usize * 3)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..width as usize {
                let q = inv * Vec3::new(x as f64, y as f64, 1.0);
                if q.z <= 0.0 {
                    continue;
                }
                let (sx, sy) = (q.x / q.z, q.y / q.z);
                if sx < -EDGE || sy < -EDGE || sx > max_x + EDGE || sy > max_y + EDGE {
                    continue;
                }
                let px = sample_bilinear(src, sx, sy);
                for c in 0..3 {
                    row[x * 3 + c] = to_u8(px[c]);
                }
            }
        });
    Ok(out)
}

/// Separable Gaussian blur with clamp-to-edge borders; kernel radius `ceil(3 sigma)`.
pub fn gaussian_blur(img: &RgbImage, sigma: f64) -> RgbImage {
    if !(sigma > 0.0) {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    let (w, h) = img.dimensions();
    let (wi, hi) = (w as i64, h as i64);
    let src: Vec<f64> = img.as_raw().iter().map(|&v| v as f64).collect();
    let mut tmp = vec![0.0; src.len()];
    tmp.par_chunks_mut(w as usize * 3).enumerate().for_each(|(y, row)| {
        for x in 0..wi {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let sx = (x + k as i64 - radius).clamp(0, wi - 1);
                    acc += wgt * src[(y * w as usize + sx as usize) * 3 + c];
                }
                row[x as usize * 3 + c] = acc;
            }
        }
    });
    let mut out = RgbImage::new(w, h);
    out.par_chunks_mut(w as usize * 3).enumerate().for_each(|(y, row)| {
        for x in 0..w as usize {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let sy = (y as i64 + k as i64 - radius).clamp(0, hi - 1);
                    acc += wgt * tmp[(sy as usize * w as usize + x) * 3 + c];
                }
                row[x * 3 + c] = to_u8(acc);
            }
        }
    });
    out
}

pub fn center_crop_square(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let s = w.min(h);
    image::imageops::crop_imm(img, (w - s) / 2, (h - s) / 2, s, s).to_image()
}

/// Area-averaging resize: each output pixel is the coverage-weighted mean of
/// the source pixels under its footprint.
pub fn resize_area(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (sw, sh) = img.dimensions();
    if (sw, sh) == (width, height) {
        return img.clone();
    }
    let spans = |src: u32, dst: u32| -> Vec<Vec<(u32, f64)>> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|o| {
                let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
                let mut v = Vec::new();
                let mut i = a.floor() as u32;
                while (i as f64) < b && i < src {
                    let lo = (i as f64).max(a);
                    let hi = ((i + 1) as f64).min(b);
                    if hi > lo {
                        v.push((i, hi - lo));
                    }
                    i += 1;
                }
                v
            })
            .collect()
    };
    let xs = spans(sw, width);
    let ys = spans(sh, height);
    let mut out = RgbImage::new(width, height);
    out.par_chunks_mut(width as usize * 3).enumerate().for_each(|(oy, row)| {
        for (ox, xspan) in xs.iter().enumerate() {
            let mut acc = [0.0; 3];
            let mut total = 0.0;
            for &(sy, wy) in &ys[oy] {
                for &(sx, wx) in xspan {
                    let p = img.get_pixel(sx, sy).0;
                    let wgt = wx * wy;
                    total += wgt;
                    for c in 0..3 {
                        acc[c] += wgt * p[c] as f64;
                    }
                }
            }
            for c in 0..3 {
                row[ox * 3 + c] = to_u8(acc[c] / total);
            }
        }
    });
    out
}

/// PNG bytes with fixed encoder settings so identical images give identical files.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    PngEncoder::new_with_quality(Cursor::new(&mut buf), CompressionType::Fast, FilterType::Sub)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::image("<memory>", e))?;
    Ok(buf)
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes = encode_png(img)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::image(path, e))?;
    Ok(img.to_rgb8())
}

pub fn solid(width: u32, height: u32, color: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(width, height, Rgb(color))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn bilinear_interpolates_and_clamps() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(0, 0, Rgb([0, 100, 200]));
        img.put_pixel(1, 0, Rgb([100, 100, 0]));
        assert_eq!(sample_bilinear(&img, 0.5, 0.0), [50.0, 100.0, 100.0]);
        assert_eq!(sample_bilinear(&img, -3.0, 5.0), [0.0, 100.0, 200.0]);
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = gradient(37, 23);
        let out = warp_perspective(&img, &Mat3::identity(), 37, 23).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn translation_warp_blackens_outside() {
        let img = gradient(10, 10);
        let shift = Mat3::new(1.0, 0.0, 3.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let out = warp_perspective(&img, &shift, 10, 10).unwrap();
        assert_eq!(out.get_pixel(1, 4).0, [0, 0, 0]);
        assert_eq!(out.get_pixel(5, 4), img.get_pixel(2, 4));
    }

    #[test]
    fn blur_keeps_constant_images() {
        let img = solid(20, 12, [9, 120, 250]);
        assert_eq!(gaussian_blur(&img, 3.0), img);
    }

    #[test]
    fn area_resize_halves_by_block_mean() {
        let mut img = RgbImage::new(4, 2);
        img.put_pixel(0, 0, Rgb([255, 255, 255]));
        let out = resize_area(&img, 2, 1);
        // (255 + 0 + 0 + 0) / 4 = 63.75
        assert_eq!(out.get_pixel(0, 0).0, [64, 64, 64]);
        assert_eq!(out.get_pixel(1, 0).0, [0, 0, 0]);
        let c = solid(30, 30, [7, 7, 7]);
        assert_eq!(resize_area(&c, 11, 11), solid(11, 11, [7, 7, 7]));
    }

    #[test]
    fn png_round_trip_and_stable_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient(64, 48);
        let path = dir.path().join("a/b.png");
        write_png(&path, &img).unwrap();
        assert_eq!(read_rgb(&path).unwrap(), img);
        assert_eq!(encode_png(&img).unwrap(), encode_png(&img).unwrap());
    }
}
