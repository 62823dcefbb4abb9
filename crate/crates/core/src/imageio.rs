//! PNG/JPEG decoding, PNG encoding, and resampling helpers.

use std::io::Cursor;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageFormat};

use crate::colorspace::RgbImage;
use crate::error::{Error, Result};

fn from_image(img: image::RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage {
        width: w as usize,
        height: h as usize,
        data: img.into_raw(),
    }
}

fn to_image(img: &RgbImage) -> image::RgbImage {
    image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .expect("RgbImage buffer length is an invariant")
}

/// Decodes PNG or JPEG bytes; grayscale input is promoted to R=G=B.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory(bytes)?;
    Ok(from_image(img.to_rgb8()))
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(to_image(img)).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn write_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Bilinear (triangle-filter) resize; the filter widens when shrinking, so
/// downscaling is antialiased.
pub fn resize_rgb(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    if img.width == width && img.height == height {
        return img.clone();
    }
    from_image(imageops::resize(&to_image(img), width as u32, height as u32, FilterType::Triangle))
}

/// Largest centered crop with the target aspect ratio, then resize.
pub fn center_crop_resize(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    let (sw, sh) = (img.width as u64, img.height as u64);
    let (tw, th) = (width as u64, height as u64);
    // crop to sw' x sh' with sw'/sh' = tw/th
    let (cw, ch) = if sw * th > sh * tw {
        ((sh * tw / th).max(1), sh)
    } else {
        (sw, (sw * th / tw).max(1))
    };
    let x0 = ((sw - cw) / 2) as u32;
    let y0 = ((sh - ch) / 2) as u32;
    let cropped = imageops::crop_imm(&to_image(img), x0, y0, cw as u32, ch as u32).to_image();
    resize_rgb(&from_image(cropped), width, height)
}

/// Bilinear resampling of a single real-valued plane with pixel-center
/// alignment and edge clamping.
pub fn resize_plane(plane: &[f32], src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Vec<f32> {
    if src_w == dst_w && src_h == dst_h {
        return plane.to_vec();
    }
    let sx = src_w as f64 / dst_w as f64;
    let sy = src_h as f64 / dst_h as f64;
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for y in 0..dst_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (src_h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let ty = fy - y0 as f64;
        for x in 0..dst_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (src_w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let tx = fx - x0 as f64;
            let at = |yy: usize, xx: usize| plane[yy * src_w + xx] as f64;
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
            let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
            out.push((top * (1.0 - ty) + bottom * ty) as f32);
        }
    }
    out
}
