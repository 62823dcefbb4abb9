//! Color hints, lassos, and the training-time simulation of both.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::LabImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A user color point: pixel location plus the ab chroma to propagate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorHint {
    pub y: usize,
    pub x: usize,
    pub a: f32,
    pub b: f32,
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RectLasso {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl RectLasso {
    pub fn height(&self) -> usize {
        self.y1 + 1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 + 1 - self.x0
    }
}

/// Free-form region as a full-image binary plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskLasso {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

/// Region of influence of one hint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Lasso {
    Rect(RectLasso),
    Mask(MaskLasso),
}

impl Lasso {
    pub fn whole_image(width: usize, height: usize) -> Self {
        Lasso::Rect(RectLasso {
            y0: 0,
            x0: 0,
            y1: height - 1,
            x1: width - 1,
        })
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        match self {
            Lasso::Rect(r) => (r.y0..=r.y1).contains(&y) && (r.x0..=r.x1).contains(&x),
            Lasso::Mask(m) => y < m.height && x < m.width && m.bits[y * m.width + x],
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        match self {
            Lasso::Rect(r) => {
                if r.y0 > r.y1 || r.x0 > r.x1 || r.y1 >= height || r.x1 >= width {
                    return Err(Error::dim(format!("rect lasso {r:?} outside {width}x{height} image")));
                }
            }
            Lasso::Mask(m) => {
                if m.width != width || m.height != height || m.bits.len() != width * height {
                    return Err(Error::dim(format!(
                        "mask lasso {}x{} does not match {width}x{height} image",
                        m.width, m.height
                    )));
                }
            }
        }
        Ok(())
    }

    /// Row-major pixel membership plane.
    pub fn pixel_mask(&self, width: usize, height: usize) -> Vec<bool> {
        match self {
            Lasso::Mask(m) => m.bits.clone(),
            Lasso::Rect(_) => (0..height * width).map(|i| self.contains(i / width, i % width)).collect(),
        }
    }
}

/// Hints with their (optional) lassos, kept as parallel lists.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HintSet {
    pub hints: Vec<ColorHint>,
    pub lassos: Vec<Option<Lasso>>,
}

impl HintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.hints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hints.is_empty()
    }

    pub fn push(&mut self, hint: ColorHint, lasso: Option<Lasso>) {
        self.hints.push(hint);
        self.lassos.push(lasso);
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.hints.len() != self.lassos.len() {
            return Err(Error::contract("hint and lasso lists differ in length"));
        }
        for (i, (h, l)) in self.hints.iter().zip(&self.lassos).enumerate() {
            if h.y >= height || h.x >= width {
                return Err(Error::input(
                    format!("hints[{i}]"),
                    format!("({}, {}) outside {width}x{height} image", h.x, h.y),
                ));
            }
            if let Some(l) = l {
                l.validate(width, height)
                    .map_err(|e| Error::input(format!("hints[{i}].lasso"), e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Fills every missing lasso with the fixed-size square of
    /// [`predefined_lasso`].
    pub fn with_predefined_lassos(&self, patch: usize, r: f32, width: usize, height: usize) -> HintSet {
        let lassos = self
            .hints
            .iter()
            .zip(&self.lassos)
            .map(|(h, l)| l.clone().or_else(|| Some(predefined_lasso(h, patch, r, width, height))))
            .collect();
        HintSet {
            hints: self.hints.clone(),
            lassos,
        }
    }

    /// All lassos, failing if any hint lacks one.
    pub fn resolved_lassos(&self) -> Result<Vec<Lasso>> {
        self.lassos
            .iter()
            .enumerate()
            .map(|(i, l)| l.clone().ok_or_else(|| Error::contract(format!("hint {i} has no lasso"))))
            .collect()
    }
}

/// Hint count uniform on `[0, max_hints]`, locations i.i.d. uniform over
/// pixels, colors read from the ground truth.
pub fn simulate_hints<R: Rng + ?Sized>(gt: &LabImage, rng: &mut R, max_hints: usize) -> HintSet {
    let count = rng.random_range(0..=max_hints);
    let mut set = HintSet::new();
    if gt.is_empty() {
        return set;
    }
    for _ in 0..count {
        let y = rng.random_range(0..gt.height);
        let x = rng.random_range(0..gt.width);
        let (a, b) = gt.ab_at(y, x);
        set.push(ColorHint { y, x, a, b }, None);
    }
    set
}

/// Rectangle with the given extents centered on `(y, x)` and clipped to the
/// image. Even extents extend one pixel further toward larger indices.
pub fn centered_rect(y: usize, x: usize, extent_y: usize, extent_x: usize, width: usize, height: usize) -> RectLasso {
    let span = |c: usize, e: usize, limit: usize| {
        let e = e.max(1);
        let lo = c as i64 - ((e as i64 - 1) / 2);
        let hi = lo + e as i64 - 1;
        (lo.max(0) as usize, (hi.min(limit as i64 - 1)) as usize)
    };
    let (y0, y1) = span(y, extent_y, height);
    let (x0, x1) = span(x, extent_x, width);
    RectLasso { y0, x0, y1, x1 }
}

/// Attaches a rectangle lasso to every hint with height and width drawn
/// independently and uniformly from `[lo, hi]`. Also returns the drawn
/// (pre-clipping) extents.
pub fn simulate_lassos_with_extents<R: Rng + ?Sized>(
    hints: &HintSet,
    width: usize,
    height: usize,
    rng: &mut R,
    lo: usize,
    hi: usize,
) -> (HintSet, Vec<(usize, usize)>) {
    let mut out = HintSet::new();
    let mut extents = Vec::with_capacity(hints.len());
    for h in &hints.hints {
        let ey = rng.random_range(lo..=hi);
        let ex = rng.random_range(lo..=hi);
        extents.push((ey, ex));
        out.push(*h, Some(Lasso::Rect(centered_rect(h.y, h.x, ey, ex, width, height))));
    }
    (out, extents)
}

pub fn simulate_lassos<R: Rng + ?Sized>(
    hints: &HintSet,
    width: usize,
    height: usize,
    rng: &mut R,
    lo: usize,
    hi: usize,
) -> HintSet {
    simulate_lassos_with_extents(hints, width, height, rng, lo, hi).0
}

/// Square of side `round(patch * r)` centered on the hint, clipped.
pub fn predefined_lasso(hint: &ColorHint, patch: usize, r: f32, width: usize, height: usize) -> Lasso {
    let side = ((patch as f64) * r as f64).round().max(1.0);
    let side = side.min((width.max(height) * 2) as f64) as usize;
    Lasso::Rect(centered_rect(hint.y, hint.x, side, side, width, height))
}

/// One `P×P×3` patch per hint, flattened as `(row, col, channel)` with
/// channels `(L, a, b)`. L comes from `img` over the whole patch (zero
/// beyond the image border); a/b are zero except at the hint pixel, which
/// sits at patch index `(P/2, P/2)` and carries the hint's color.
pub fn crop_hint_patches(img: &LabImage, hints: &HintSet, patch: usize) -> Result<Tensor> {
    if patch == 0 {
        return Err(Error::config("patch size must be at least 1"));
    }
    let stride = patch * patch * 3;
    let half = patch / 2;
    let mut data = vec![0.0f32; hints.len() * stride];
    for (k, h) in hints.hints.iter().enumerate() {
        let out = &mut data[k * stride..(k + 1) * stride];
        for py in 0..patch {
            let y = h.y as i64 - half as i64 + py as i64;
            if y < 0 || y >= img.height as i64 {
                continue;
            }
            for px in 0..patch {
                let x = h.x as i64 - half as i64 + px as i64;
                if x < 0 || x >= img.width as i64 {
                    continue;
                }
                out[(py * patch + px) * 3] = img.l[img.index(y as usize, x as usize)];
            }
        }
        let c = (half * patch + half) * 3;
        out[c + 1] = h.a;
        out[c + 2] = h.b;
    }
    Tensor::new([hints.len(), stride], data)
}

// ---- JSON wire format ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LassoJson {
    Rect { x0: i64, y0: i64, x1: i64, y1: i64 },
    Mask { rle: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HintJson {
    pub x: i64,
    pub y: i64,
    pub a: f32,
    pub b: f32,
    #[serde(default)]
    pub lasso: Option<LassoJson>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HintSetJson {
    pub hints: Vec<HintJson>,
}

/// Row-major run lengths of a binary plane; the first run counts zeros
/// (and may be empty).
pub fn rle_encode(bits: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut count = 0u32;
    for &b in bits {
        if b == current {
            count += 1;
        } else {
            runs.push(count);
            current = b;
            count = 1;
        }
    }
    runs.push(count);
    runs
}

pub fn rle_decode(runs: &[u32], len: usize) -> Result<Vec<bool>> {
    let total: u64 = runs.iter().map(|&r| r as u64).sum();
    if total != len as u64 {
        return Err(Error::dim(format!("run lengths sum to {total}, image has {len} pixels")));
    }
    let mut bits = Vec::with_capacity(len);
    for (i, &r) in runs.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
    }
    Ok(bits)
}

impl HintSetJson {
    /// Validates against the image size; errors name the offending field.
    pub fn into_hint_set(&self, width: usize, height: usize) -> Result<HintSet> {
        let mut set = HintSet::new();
        let coord = |v: i64, limit: usize, field: String| {
            if v < 0 || v >= limit as i64 {
                Err(Error::input(field, format!("{v} outside [0, {limit})")))
            } else {
                Ok(v as usize)
            }
        };
        for (i, h) in self.hints.iter().enumerate() {
            let x = coord(h.x, width, format!("hints[{i}].x"))?;
            let y = coord(h.y, height, format!("hints[{i}].y"))?;
            if !h.a.is_finite() || !h.b.is_finite() {
                return Err(Error::input(format!("hints[{i}]"), "non-finite ab value"));
            }
            let lasso = match &h.lasso {
                None => None,
                Some(LassoJson::Rect { x0, y0, x1, y1 }) => {
                    let f = |n: &str| format!("hints[{i}].lasso.{n}");
                    let r = RectLasso {
                        x0: coord(*x0, width, f("x0"))?,
                        y0: coord(*y0, height, f("y0"))?,
                        x1: coord(*x1, width, f("x1"))?,
                        y1: coord(*y1, height, f("y1"))?,
                    };
                    if r.x0 > r.x1 || r.y0 > r.y1 {
                        return Err(Error::input(format!("hints[{i}].lasso"), "empty rectangle"));
                    }
                    Some(Lasso::Rect(r))
                }
                Some(LassoJson::Mask { rle }) => {
                    let bits = rle_decode(rle, width * height)
                        .map_err(|e| Error::input(format!("hints[{i}].lasso.rle"), e.to_string()))?;
                    Some(Lasso::Mask(MaskLasso { width, height, bits }))
                }
            };
            set.push(ColorHint { y, x, a: h.a, b: h.b }, lasso);
        }
        Ok(set)
    }
}

impl From<&HintSet> for HintSetJson {
    fn from(set: &HintSet) -> Self {
        let hints = set
            .hints
            .iter()
            .zip(&set.lassos)
            .map(|(h, l)| HintJson {
                x: h.x as i64,
                y: h.y as i64,
                a: h.a,
                b: h.b,
                lasso: l.as_ref().map(|l| match l {
                    Lasso::Rect(r) => LassoJson::Rect {
                        x0: r.x0 as i64,
                        y0: r.y0 as i64,
                        x1: r.x1 as i64,
                        y1: r.y1 as i64,
                    },
                    Lasso::Mask(m) => LassoJson::Mask { rle: rle_encode(&m.bits) },
                }),
            })
            .collect();
        HintSetJson { hints }
    }
}
