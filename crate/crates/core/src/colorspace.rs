//! 8-bit sRGB <-> CIELab conversion (D65, 2° observer) and L/ab plane handling.
//!
//! All arithmetic is carried out in `f64` per pixel and stored as `f32`
//! planes. The reference white is taken as the row sums of the sRGB→XYZ
//! matrix, so neutral inputs (R=G=B) land on a=b=0 up to rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::dim(format!(
                "rgb buffer has {} bytes, expected {}x{}x3",
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

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Planar CIELab image. `l` in [0, 100], `a`/`b` nominally in [-128, 127].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f32>,
    pub a: Vec<f32>,
    pub b: Vec<f32>,
}

impl LabImage {
    pub fn new(width: usize, height: usize, l: Vec<f32>, a: Vec<f32>, b: Vec<f32>) -> Result<Self> {
        let n = width * height;
        if l.len() != n || a.len() != n || b.len() != n {
            return Err(Error::dim(format!(
                "lab planes ({}, {}, {}) do not match {}x{}",
                l.len(),
                a.len(),
                b.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            l,
            a,
            b,
        })
    }

    /// Constant-color image.
    pub fn filled(width: usize, height: usize, lab: [f32; 3]) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            l: vec![lab[0]; n],
            a: vec![lab[1]; n],
            b: vec![lab[2]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize) -> usize {
        y * self.width + x
    }

    pub fn ab_at(&self, y: usize, x: usize) -> (f32, f32) {
        let i = self.index(y, x);
        (self.a[i], self.b[i])
    }

    pub fn same_size(&self, other: &LabImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Replace the chroma planes, keeping luminance.
    pub fn with_ab(&self, a: Vec<f32>, b: Vec<f32>) -> Result<Self> {
        LabImage::new(self.width, self.height, self.l.clone(), a, b)
    }
}

// sRGB primaries, D65.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

const WHITE: [f64; 3] = [
    RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
    RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
    RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
];

const DELTA: f64 = 6.0 / 29.0;

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn mat3(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Single-pixel sRGB → Lab.
pub fn rgb_pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_to_linear(c as f64 / 255.0));
    let xyz = mat3(&RGB_TO_XYZ, lin);
    let fx = lab_f(xyz[0] / WHITE[0]);
    let fy = lab_f(xyz[1] / WHITE[1]);
    let fz = lab_f(xyz[2] / WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Lab → linear sRGB, unclamped.
fn lab_to_linear(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        WHITE[0] * lab_f_inv(fx),
        WHITE[1] * lab_f_inv(fy),
        WHITE[2] * lab_f_inv(fz),
    ];
    mat3(&XYZ_TO_RGB, xyz)
}

fn quantize(linear: f64) -> u8 {
    let v = (linear_to_srgb(linear.max(0.0)) * 255.0).round();
    v.clamp(0.0, 255.0) as u8
}

/// Single-pixel Lab → sRGB, rounding then clamping out-of-gamut channels.
pub fn lab_pixel_to_rgb(lab: [f64; 3]) -> [u8; 3] {
    lab_to_linear(lab).map(quantize)
}

/// Lab → sRGB that pulls out-of-gamut colors toward the neutral axis at
/// fixed L instead of clipping channels independently, so the output keeps
/// the requested luminance up to 8-bit rounding.
pub fn lab_pixel_to_rgb_keep_l(lab: [f64; 3]) -> [u8; 3] {
    const SLACK: f64 = 1e-9;
    let in_gamut = |rgb: &[f64; 3]| rgb.iter().all(|&c| (-SLACK..=1.0 + SLACK).contains(&c));
    let l = lab[0].clamp(0.0, 100.0);
    let full = lab_to_linear([l, lab[1], lab[2]]);
    if in_gamut(&full) {
        return full.map(quantize);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if in_gamut(&lab_to_linear([l, lab[1] * mid, lab[2] * mid])) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lab_to_linear([l, lab[1] * lo, lab[2] * lo]).map(quantize)
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let n = img.width * img.height;
    let (mut l, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.data.chunks_exact(3) {
        let lab = rgb_pixel_to_lab([px[0], px[1], px[2]]);
        l.push(lab[0] as f32);
        a.push(lab[1] as f32);
        b.push(lab[2] as f32);
    }
    LabImage {
        width: img.width,
        height: img.height,
        l,
        a,
        b,
    }
}

fn lab_to_rgb_with(img: &LabImage, convert: fn([f64; 3]) -> [u8; 3]) -> RgbImage {
    let mut data = Vec::with_capacity(img.len() * 3);
    for i in 0..img.len() {
        data.extend_from_slice(&convert([img.l[i] as f64, img.a[i] as f64, img.b[i] as f64]));
    }
    RgbImage {
        width: img.width,
        height: img.height,
        data,
    }
}

pub fn lab_to_rgb(img: &LabImage) -> RgbImage {
    lab_to_rgb_with(img, lab_pixel_to_rgb)
}

/// Like [`lab_to_rgb`] but with chroma reduction for out-of-gamut pixels.
pub fn lab_to_rgb_keep_l(img: &LabImage) -> RgbImage {
    lab_to_rgb_with(img, lab_pixel_to_rgb_keep_l)
}

/// Grayscale view: same L plane, zero chroma.
pub fn split_gray(img: &LabImage) -> LabImage {
    let n = img.len();
    LabImage {
        width: img.width,
        height: img.height,
        l: img.l.clone(),
        a: vec![0.0; n],
        b: vec![0.0; n],
    }
}

/// Merge a predicted chroma pair with a luminance plane.
pub fn merge_ab(gray: &LabImage, a: Vec<f32>, b: Vec<f32>) -> Result<LabImage> {
    gray.with_ab(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_and_black() {
        let w = rgb_pixel_to_lab([255, 255, 255]);
        assert!((w[0] - 100.0).abs() < 1e-6, "{w:?}");
        assert!(w[1].abs() <= 0.01 && w[2].abs() <= 0.01);
        let k = rgb_pixel_to_lab([0, 0, 0]);
        assert!(k.iter().all(|v| v.abs() < 1e-9), "{k:?}");
        assert_eq!(lab_pixel_to_rgb([100.0, 0.0, 0.0]), [255, 255, 255]);
        assert_eq!(lab_pixel_to_rgb([0.0, 0.0, 0.0]), [0, 0, 0]);
    }

    #[test]
    fn mid_gray_matches_hand_evaluation() {
        // 119/255 -> linear 0.184475 = Y for a neutral pixel,
        // L = 116 * Y^(1/3) - 16 = 50.03444 (evaluated offline in double precision).
        let g = rgb_pixel_to_lab([119, 119, 119]);
        assert!((g[0] - 50.03444).abs() < 1e-3, "{g:?}");
        assert!(g[1].abs() <= 0.01 && g[2].abs() <= 0.01);
    }

    #[test]
    fn out_of_gamut_is_clamped() {
        let rgb = lab_pixel_to_rgb([50.0, 127.0, -128.0]);
        let back = lab_pixel_to_rgb([100.0, 127.0, 127.0]);
        assert_eq!(rgb[1], 0);
        assert_eq!(back[0], 255);
    }

    #[test]
    fn keep_l_reduces_chroma_not_luminance() {
        let rgb = lab_pixel_to_rgb_keep_l([90.0, 100.0, -100.0]);
        let lab = rgb_pixel_to_lab(rgb);
        assert!((lab[0] - 90.0).abs() < 1.0, "{lab:?}");
    }

    #[test]
    fn split_gray_is_idempotent() {
        let img = LabImage::new(2, 1, vec![10.0, 20.0], vec![5.0, -3.0], vec![1.0, 2.0]).unwrap();
        let g = split_gray(&img);
        assert_eq!(g.l, img.l);
        assert!(g.a.iter().chain(&g.b).all(|&v| v == 0.0));
        assert_eq!(split_gray(&g), g);
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(RgbImage::new(2, 2, vec![0; 11]).is_err());
        assert!(LabImage::new(2, 2, vec![0.0; 4], vec![0.0; 3], vec![0.0; 4]).is_err());
    }
}
