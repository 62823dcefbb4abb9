//! End-to-end inference on an image of any size.
//!
//! The image is stretched to the model resolution, hints and lassos are
//! mapped into that frame, and the predicted ab planes are upsampled and
//! merged with the original full-resolution L plane.

use crate::colorspace::{lab_to_rgb_keep_l, rgb_to_lab, split_gray, LabImage, RgbImage};
use crate::error::{Error, Result};
use crate::imageio::{resize_plane, resize_rgb};
use crate::interaction::{ColorHint, HintSet, Lasso, MaskLasso, RectLasso};
use crate::masking::{build_localization_mask, LocalizationMask};
use crate::model::Model;

/// Default scale of the pre-defined lasso given to hints without one.
pub const DEFAULT_R: f32 = 1.0;

#[derive(Clone, Debug)]
pub struct Colorized {
    pub image: RgbImage,
    /// Full-resolution Lab before gamut mapping.
    pub lab: LabImage,
    /// Mask used for the forward pass (model frame, canonical hint order
    /// not applied).
    pub mask: LocalizationMask,
    /// Hints as they were fed to the model.
    pub model_hints: HintSet,
}

/// Pixel coordinate `v` in a dimension of size `from` mapped to size `to`.
fn map_coord(v: usize, from: usize, to: usize) -> usize {
    (v * to / from).min(to - 1)
}

/// Any-overlap image of a lasso in a `w×h` frame: a target pixel is
/// covered when some covered source pixel maps onto it.
fn scale_lasso(lasso: &Lasso, sw: usize, sh: usize, w: usize, h: usize) -> Lasso {
    match lasso {
        Lasso::Rect(r) => Lasso::Rect(RectLasso {
            y0: map_coord(r.y0, sh, h),
            x0: map_coord(r.x0, sw, w),
            y1: map_coord(r.y1, sh, h),
            x1: map_coord(r.x1, sw, w),
        }),
        Lasso::Mask(m) => {
            let mut bits = vec![false; w * h];
            for y in 0..sh {
                for x in 0..sw {
                    if m.bits[y * sw + x] {
                        bits[map_coord(y, sh, h) * w + map_coord(x, sw, w)] = true;
                    }
                }
            }
            Lasso::Mask(MaskLasso {
                width: w,
                height: h,
                bits,
            })
        }
    }
}

/// Maps `hints` (in an `sw×sh` frame) into the model frame, giving hints
/// without a lasso the pre-defined square of scale `r`.
pub fn scale_hints(hints: &HintSet, sw: usize, sh: usize, model: &Model, r: f32) -> Result<HintSet> {
    hints.validate(sw, sh)?;
    let cfg = &model.config;
    let mut out = HintSet::new();
    for (hint, lasso) in hints.hints.iter().zip(&hints.lassos) {
        let mapped = ColorHint {
            y: map_coord(hint.y, sh, cfg.height),
            x: map_coord(hint.x, sw, cfg.width),
            ..*hint
        };
        out.push(mapped, lasso.as_ref().map(|l| scale_lasso(l, sw, sh, cfg.width, cfg.height)));
    }
    Ok(out.with_predefined_lassos(cfg.patch, r, cfg.width, cfg.height))
}

pub fn colorize(model: &Model, image: &RgbImage, hints: &HintSet, r: f32) -> Result<Colorized> {
    if image.width == 0 || image.height == 0 {
        return Err(Error::input("image", "empty image"));
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::input("r", format!("must be a positive number, got {r}")));
    }
    let cfg = &model.config;
    let (sw, sh) = (image.width, image.height);
    let model_hints = scale_hints(hints, sw, sh, model, r)?;
    let small = split_gray(&rgb_to_lab(&resize_rgb(image, cfg.width, cfg.height)));
    let mask = build_localization_mask(&model_hints.resolved_lassos()?, cfg.height, cfg.width, cfg.patch)?;
    let pred = model.forward(&small, &model_hints, &mask)?;

    let full = rgb_to_lab(image);
    let a = resize_plane(&pred.a, cfg.width, cfg.height, sw, sh);
    let b = resize_plane(&pred.b, cfg.width, cfg.height, sw, sh);
    let lab = full.with_ab(a, b)?;
    Ok(Colorized {
        image: lab_to_rgb_keep_l(&lab),
        lab,
        mask,
        model_hints,
    })
}
