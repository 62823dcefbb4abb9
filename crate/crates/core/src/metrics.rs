//! PSNR, hint propagation range, lasso leakage, and the evaluation sweeps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorspace::{lab_to_rgb, split_gray, LabImage, RgbImage};
use crate::datasets::{sample_point_pairs, ColorCollapseGrid};
use crate::error::{Error, Result};
use crate::interaction::{ColorHint, HintSet, Lasso};
use crate::masking::build_localization_mask;
use crate::model::{Model, ModelConfig};

/// Reported in place of +∞ for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const DEFAULT_HPR_TAU: f32 = 5.0;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    pub exact_match: bool,
}

/// `10·log10(255² / MSE)` over all RGB channels.
pub fn psnr(pred: &RgbImage, gt: &RgbImage) -> Result<Psnr> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::dim(format!(
            "psnr: {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let sse: u64 = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&p, &g)| {
            let d = p as i64 - g as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(Psnr {
            db: PSNR_CAP_DB,
            exact_match: true,
        });
    }
    let mse = sse as f64 / pred.data.len() as f64;
    Ok(Psnr {
        db: (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB),
        exact_match: false,
    })
}

/// Hint propagation range of a newly added hint: the mean distance from
/// the hint to every pixel whose chroma moved by more than `tau` between
/// two renders, divided by the image diagonal. Zero when nothing moved.
pub fn hpr(prev: &LabImage, next: &LabImage, new_hint: &ColorHint, tau: f32) -> Result<f64> {
    if !prev.same_size(next) {
        return Err(Error::dim("hpr: renders differ in size"));
    }
    let diag = ((prev.width * prev.width + prev.height * prev.height) as f64).sqrt();
    let tau2 = (tau as f64) * (tau as f64);
    let (mut total, mut count) = (0.0f64, 0usize);
    for y in 0..prev.height {
        for x in 0..prev.width {
            let i = prev.index(y, x);
            let da = (next.a[i] - prev.a[i]) as f64;
            let db = (next.b[i] - prev.b[i]) as f64;
            if da * da + db * db > tau2 {
                let dy = y as f64 - new_hint.y as f64;
                let dx = x as f64 - new_hint.x as f64;
                total += (dy * dy + dx * dx).sqrt();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 / diag })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leakage {
    /// Mean ‖ab_pred − ab_gt‖₂ inside the union of lassos.
    pub inside: f64,
    /// Same, outside the union; 0 when `outside_empty`.
    pub outside: f64,
    pub inside_pixels: usize,
    pub outside_pixels: usize,
    pub outside_empty: bool,
}

pub fn leakage(pred: &LabImage, gt: &LabImage, lassos: &[Lasso]) -> Result<Leakage> {
    if !pred.same_size(gt) {
        return Err(Error::dim("leakage: images differ in size"));
    }
    if lassos.is_empty() {
        return Err(Error::contract("leakage needs at least one lasso"));
    }
    let (w, h) = (gt.width, gt.height);
    let mut union = vec![false; w * h];
    for l in lassos {
        l.validate(w, h)?;
        for (u, m) in union.iter_mut().zip(l.pixel_mask(w, h)) {
            *u |= m;
        }
    }
    let (mut sum_in, mut n_in, mut sum_out, mut n_out) = (0.0f64, 0usize, 0.0f64, 0usize);
    for (i, &inside) in union.iter().enumerate() {
        let da = (pred.a[i] - gt.a[i]) as f64;
        let db = (pred.b[i] - gt.b[i]) as f64;
        let e = (da * da + db * db).sqrt();
        if inside {
            sum_in += e;
            n_in += 1;
        } else {
            sum_out += e;
            n_out += 1;
        }
    }
    Ok(Leakage {
        inside: if n_in > 0 { sum_in / n_in as f64 } else { 0.0 },
        outside: if n_out > 0 { sum_out / n_out as f64 } else { 0.0 },
        inside_pixels: n_in,
        outside_pixels: n_out,
        outside_empty: n_out == 0,
    })
}

/// Prediction for a ground-truth image from its luminance and `hints`
/// (every hint must carry a lasso).
pub fn predict(model: &Model, gt: &LabImage, hints: &HintSet) -> Result<LabImage> {
    let cfg = &model.config;
    let mask = build_localization_mask(&hints.resolved_lassos()?, cfg.height, cfg.width, cfg.patch)?;
    model.forward(&split_gray(gt), hints, &mask)
}

/// Which lassos the collapse benchmark attaches to its point pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CollapseLassos {
    /// Each hint's lasso is its own quadrant.
    Quadrant,
    /// Every hint's lasso is the whole image (no localization).
    WholeImage,
    /// Fixed-size square of side `P·r`.
    Predefined(f32),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CollapseEval {
    /// Mean over hints of how far the chroma outside that hint's own
    /// quadrant moves when the hint is removed (leave-one-out).
    pub leakage: f64,
    /// Mean over hints of the ab error against ground truth outside that
    /// hint's own quadrant.
    pub error_outside: f64,
    pub psnr: f64,
    pub grids: usize,
}

fn attach_collapse_lassos(grid: &ColorCollapseGrid, hints: &HintSet, mode: CollapseLassos, patch: usize) -> HintSet {
    let (w, h) = (grid.image.width, grid.image.height);
    let mut set = HintSet::new();
    for hint in &hints.hints {
        let lasso = match mode {
            CollapseLassos::Quadrant => grid.quadrant_lasso(grid.quadrant_of(hint.y, hint.x)),
            CollapseLassos::WholeImage => Lasso::whole_image(w, h),
            CollapseLassos::Predefined(r) => crate::interaction::predefined_lasso(hint, patch, r, w, h),
        };
        set.push(*hint, Some(lasso));
    }
    set
}

/// Mean ‖Δab‖ between two renders over pixels outside `region`.
pub fn chroma_shift_outside(a: &LabImage, b: &LabImage, region: &Lasso) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::dim("chroma_shift_outside: renders differ in size"));
    }
    let inside = region.pixel_mask(a.width, a.height);
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (i, &m) in inside.iter().enumerate() {
        if !m {
            let da = (a.a[i] - b.a[i]) as f64;
            let db = (a.b[i] - b.b[i]) as f64;
            sum += (da * da + db * db).sqrt();
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

fn without(set: &HintSet, skip: usize) -> HintSet {
    let mut out = HintSet::new();
    for (i, (h, l)) in set.hints.iter().zip(&set.lassos).enumerate() {
        if i != skip {
            out.push(*h, l.clone());
        }
    }
    out
}

/// Colorizes every grid from its point-pair hints under `mode` and scores
/// color leakage across quadrants plus RGB PSNR. The quadrant of each hint
/// is the region its color is meant to stay in, whatever lasso `mode`
/// actually feeds the model.
pub fn evaluate_collapse(
    model: &Model,
    cases: &[(ColorCollapseGrid, HintSet)],
    mode: CollapseLassos,
) -> Result<CollapseEval> {
    let per: Vec<[f64; 3]> = cases
        .par_iter()
        .map(|(grid, hints)| -> Result<[f64; 3]> {
            let set = attach_collapse_lassos(grid, hints, mode, model.config.patch);
            let pred = predict(model, &grid.image, &set)?;
            let (mut shift, mut err) = (0.0, 0.0);
            for (i, hint) in hints.hints.iter().enumerate() {
                let own = grid.quadrant_lasso(grid.quadrant_of(hint.y, hint.x));
                let rest = predict(model, &grid.image, &without(&set, i))?;
                shift += chroma_shift_outside(&pred, &rest, &own)?;
                err += leakage(&pred, &grid.image, &[own])?.outside;
            }
            let n = hints.len().max(1) as f64;
            let p = psnr(&lab_to_rgb(&pred), &lab_to_rgb(&grid.image))?;
            Ok([shift / n, err / n, p.db])
        })
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    let mean = |k: usize| per.iter().map(|p| p[k]).sum::<f64>() / n;
    Ok(CollapseEval {
        leakage: mean(0),
        error_outside: mean(1),
        psnr: mean(2),
        grids: per.len(),
    })
}

/// Evaluation inputs: plain images with uniformly sampled hints, or
/// collapse grids with point-pair hints.
#[derive(Clone, Debug)]
pub enum EvalDataset {
    Images(Vec<LabImage>),
    Grids(Vec<ColorCollapseGrid>),
}

impl EvalDataset {
    pub fn len(&self) -> usize {
        match self {
            EvalDataset::Images(v) => v.len(),
            EvalDataset::Grids(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn image(&self, i: usize) -> &LabImage {
        match self {
            EvalDataset::Images(v) => &v[i],
            EvalDataset::Grids(v) => &v[i].image,
        }
    }

    fn sampling(&self) -> &'static str {
        match self {
            EvalDataset::Images(_) => "uniform",
            EvalDataset::Grids(_) => "point_pairs",
        }
    }

    /// Hints for item `i` at count `k` (point pairs for grids), without lassos.
    fn sample(&self, i: usize, k: usize, rng: &mut ChaCha8Rng) -> HintSet {
        match self {
            EvalDataset::Images(v) => {
                let img = &v[i];
                let mut set = HintSet::new();
                for _ in 0..k {
                    use rand::Rng;
                    let y = rng.random_range(0..img.height);
                    let x = rng.random_range(0..img.width);
                    let (a, b) = img.ab_at(y, x);
                    set.push(ColorHint { y, x, a, b }, None);
                }
                set
            }
            EvalDataset::Grids(v) => sample_point_pairs(&v[i], k, rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub r: f32,
    pub hints: usize,
    pub psnr_db: f64,
    pub leakage_inside: f64,
    pub leakage_outside: f64,
    pub images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HprRow {
    pub r: f32,
    pub hpr: f64,
    pub images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub sampling: String,
    pub seed: u64,
    pub tau: f32,
    /// HPR here is a reconstruction from a one-line description, not a
    /// reference implementation.
    pub hpr_definition: String,
    pub checkpoint_hash: Option<String>,
    pub model_config: ModelConfig,
    pub rows: Vec<EvalRow>,
    pub hpr: Vec<HprRow>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,hints,psnr_db,leakage_inside,leakage_outside,images\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{}\n",
                r.r, r.hints, r.psnr_db, r.leakage_inside, r.leakage_outside, r.images
            ));
        }
        s
    }

    /// PSNR at each recorded hint count for one lasso scale.
    pub fn curve(&self, r: f32) -> Vec<(usize, f64)> {
        self.rows.iter().filter(|row| row.r == r).map(|row| (row.hints, row.psnr_db)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub r_values: Vec<f32>,
    pub hint_counts: Vec<usize>,
    pub seed: u64,
    pub tau: f32,
    pub checkpoint_hash: Option<String>,
}

fn item_seed(seed: u64, item: usize, k: usize) -> u64 {
    seed ^ (item as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (k as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// PSNR@K for every pre-defined lasso scale `r`. Hint locations depend only
/// on `(seed, image, K)`, so every `r` is scored on the same points.
pub fn sweep_predefined_lasso(model: &Model, data: &EvalDataset, opts: &SweepOptions) -> Result<EvalReport> {
    let cfg = &model.config;
    let mut counts = opts.hint_counts.clone();
    counts.sort_unstable();
    counts.dedup();
    let mut rows = Vec::new();
    let mut hpr_rows = Vec::new();
    for &r in &opts.r_values {
        for &k in &counts {
            let per: Vec<(f64, Leakage)> = (0..data.len())
                .into_par_iter()
                .map(|i| -> Result<(f64, Leakage)> {
                    let gt = data.image(i);
                    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(opts.seed, i, k));
                    let hints = data.sample(i, k, &mut rng).with_predefined_lassos(cfg.patch, r, gt.width, gt.height);
                    let pred = predict(model, gt, &hints)?;
                    let p = psnr(&lab_to_rgb(&pred), &lab_to_rgb(gt))?.db;
                    let leak = if hints.is_empty() {
                        leakage(&pred, gt, &[Lasso::whole_image(gt.width, gt.height)])?
                    } else {
                        leakage(&pred, gt, &hints.resolved_lassos()?)?
                    };
                    Ok((p, leak))
                })
                .collect::<Result<_>>()?;
            let n = per.len().max(1) as f64;
            let with_outside: Vec<f64> =
                per.iter().filter(|p| !p.1.outside_empty).map(|p| p.1.outside).collect();
            rows.push(EvalRow {
                r,
                hints: k,
                psnr_db: per.iter().map(|p| p.0).sum::<f64>() / n,
                leakage_inside: per.iter().map(|p| p.1.inside).sum::<f64>() / n,
                leakage_outside: with_outside.iter().sum::<f64>() / with_outside.len().max(1) as f64,
                images: per.len(),
            });
        }

        // Range of a single hint added to an unconditional render.
        let ranges: Vec<f64> = (0..data.len())
            .into_par_iter()
            .map(|i| -> Result<f64> {
                let gt = data.image(i);
                let mut rng = ChaCha8Rng::seed_from_u64(item_seed(opts.seed, i, usize::MAX));
                let one = EvalDataset::Images(vec![gt.clone()]).sample(0, 1, &mut rng);
                let one = one.with_predefined_lassos(cfg.patch, r, gt.width, gt.height);
                let prev = predict(model, gt, &HintSet::new())?;
                let next = predict(model, gt, &one)?;
                hpr(&prev, &next, &one.hints[0], opts.tau)
            })
            .collect::<Result<_>>()?;
        hpr_rows.push(HprRow {
            r,
            hpr: ranges.iter().sum::<f64>() / ranges.len().max(1) as f64,
            images: ranges.len(),
        });
    }
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        sampling: data.sampling().into(),
        seed: opts.seed,
        tau: opts.tau,
        hpr_definition: "reconstructed: mean hint distance of pixels with ab change > tau, / image diagonal".into(),
        checkpoint_hash: opts.checkpoint_hash.clone(),
        model_config: cfg.clone(),
        rows,
        hpr: hpr_rows,
    })
}
