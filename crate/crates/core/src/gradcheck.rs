//! Central finite-difference verification of analytic gradients.
//!
//! The analytic side runs the ordinary `f32` forward/backward. The numeric
//! side re-evaluates the same objective in `f64` with one parameter element
//! nudged by ±step, so rounding in the shadow evaluation stays far below
//! the truncation error of the difference quotient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autograd::{Graph, Var};
use crate::colorspace::split_gray;
use crate::datasets::{default_palette, toy_image};
use crate::error::{Error, Result};
use crate::interaction::{simulate_lassos, ColorHint, HintSet};
use crate::masking::{build_localization_mask, LocalizationMask};
use crate::model::{forward_graph, gray_patches, hint_patches, BoundParams, Model, ModelConfig, ParamLayout};
use crate::tensor::{Scalar, Tensor};
use crate::training::TrainItem;

/// A scalar-valued computation over a list of parameter tensors that can be
/// evaluated at any [`Scalar`] precision.
pub trait Objective {
    fn eval<T: Scalar>(&self, graph: &Graph<T>, params: &[Var]) -> Result<Var>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Magnitudes below this are compared absolutely: the denominator of the
    /// relative error never drops under it.
    pub floor: f64,
    /// Precision of the analytic backward pass. `F32` checks what training
    /// actually computes; `F64` isolates the derivative formulas.
    pub analytic: Precision,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-4,
            analytic: Precision::F32,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamError {
    pub index: usize,
    pub numel: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_element: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub loss: f64,
    pub params: Vec<ParamError>,
    pub max_rel_err: f64,
    pub evaluations: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_f64(f: &impl Objective, params: &[Tensor<f64>]) -> Result<f64> {
    let g = Graph::<f64>::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
    let out = f.eval(&g, &vars)?;
    let v = g.item(out);
    if !v.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Analytic (`f32`) gradients of `f` at `params`.
pub fn analytic_gradients(f: &impl Objective, params: &[Tensor<f32>]) -> Result<(f64, Vec<Vec<f32>>)> {
    analytic_in(f, params)
}

fn analytic_in<T: Scalar>(f: &impl Objective, params: &[Tensor<f32>]) -> Result<(f64, Vec<Vec<T>>)> {
    let g = Graph::<T>::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.cast())).collect();
    let out = f.eval(&g, &vars)?;
    let grads = g.backward(out)?;
    let per = vars.iter().zip(params).map(|(&v, p)| grads.get_or_zeros(v, p.numel())).collect();
    Ok((g.item(out).to_f64(), per))
}

/// Compares analytic gradients against central differences for every
/// element of every parameter. Elements are perturbed in parallel.
pub fn gradient_check(
    f: &(impl Objective + Sync),
    params: &[Tensor<f32>],
    opts: GradCheckOptions,
) -> Result<GradReport> {
    let (loss, analytic): (f64, Vec<Vec<f64>>) = match opts.analytic {
        Precision::F32 => {
            let (loss, g) = analytic_in::<f32>(f, params)?;
            (loss, g.into_iter().map(|v| v.into_iter().map(f64::from).collect()).collect())
        }
        Precision::F64 => analytic_in::<f64>(f, params)?,
    };
    let shadow: Vec<Tensor<f64>> = params.iter().map(|p| p.cast::<f64>()).collect();
    let mut report = GradReport {
        loss,
        params: Vec::with_capacity(params.len()),
        max_rel_err: 0.0,
        evaluations: 0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        let numeric: Vec<f64> = (0..grad.len())
            .into_par_iter()
            .map_init(
                || shadow.clone(),
                |sh, ei| -> Result<f64> {
                    let orig = sh[pi].data()[ei];
                    sh[pi].data_mut()[ei] = orig + opts.step;
                    let plus = eval_f64(f, sh);
                    sh[pi].data_mut()[ei] = orig - opts.step;
                    let minus = eval_f64(f, sh);
                    sh[pi].data_mut()[ei] = orig;
                    Ok((plus? - minus?) / (2.0 * opts.step))
                },
            )
            .collect::<Result<_>>()?;
        report.evaluations += 2 * grad.len();

        let mut pe = ParamError {
            index: pi,
            numel: grad.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst_element: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        for (ei, (&a, &n)) in grad.iter().zip(&numeric).enumerate() {
            let rel = relative_error(a, n, opts.floor);
            pe.max_abs_err = pe.max_abs_err.max((a - n).abs());
            if rel > pe.max_rel_err {
                pe.max_rel_err = rel;
                pe.worst_element = ei;
                pe.analytic_at_worst = a;
                pe.numeric_at_worst = n;
            }
        }
        report.max_rel_err = report.max_rel_err.max(pe.max_rel_err);
        report.params.push(pe);
    }
    Ok(report)
}

/// Huber loss of the full model on one training example, as a function of
/// every model parameter (in layout order).
pub struct ModelObjective {
    config: ModelConfig,
    layout: ParamLayout,
    gray: Tensor,
    hints: Tensor,
    mask: LocalizationMask,
    target: Tensor,
    ab_scale: f32,
}

impl ModelObjective {
    pub fn new(model: &Model, item: &TrainItem, ab_scale: f32) -> Result<Self> {
        let cfg = &model.config;
        let gray = split_gray(&item.gt);
        let mask = build_localization_mask(&item.hints.resolved_lassos()?, cfg.height, cfg.width, cfg.patch)?;
        let mut target = item.gt.a.clone();
        target.extend_from_slice(&item.gt.b);
        Ok(Self {
            config: cfg.clone(),
            layout: ParamLayout::new(cfg),
            gray: gray_patches(&gray, cfg)?,
            hints: hint_patches(&gray, &item.hints, cfg, None)?,
            mask,
            target: Tensor::new([2, cfg.height * cfg.width], target)?,
            ab_scale,
        })
    }
}

impl Objective for ModelObjective {
    fn eval<T: Scalar>(&self, g: &Graph<T>, params: &[Var]) -> Result<Var> {
        let p = BoundParams::from_vars(&self.layout, params.to_vec())?;
        let gp = g.constant(self.gray.cast());
        let hp = g.constant(self.hints.cast());
        let pred = forward_graph(g, &self.config, &p, gp, hp, &self.mask)?;
        let target = g.constant(self.target.cast());
        g.huber(pred, target, T::from_f64(self.ab_scale as f64))
    }
}

/// Freshly initialized toy model plus one procedural example with exactly
/// `hints` hints (each with a simulated rectangle lasso), all from `seed`.
pub fn toy_case(seed: u64, hints: usize) -> Result<(Model, TrainItem)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig::toy();
    let model = Model::init(cfg.clone(), &mut rng)?;
    let gt = toy_image(&mut rng, cfg.width, cfg.height, 4, &default_palette());
    let mut set = HintSet::new();
    for _ in 0..hints {
        let (y, x) = (rng.random_range(0..cfg.height), rng.random_range(0..cfg.width));
        let (a, b) = gt.ab_at(y, x);
        set.push(ColorHint { y, x, a, b }, None);
    }
    let set = simulate_lassos(&set, cfg.width, cfg.height, &mut rng, 4, 64);
    Ok((model, TrainItem { gt, hints: set }))
}
