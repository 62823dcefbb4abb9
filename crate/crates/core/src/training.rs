//! Huber-loss training with simulated interactions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::colorspace::{split_gray, LabImage};
use crate::error::{Error, Result};
use crate::interaction::{simulate_hints, simulate_lassos, HintSet};
use crate::masking::build_localization_mask;
use crate::model::{forward_graph, gray_patches, hint_patches, Model};
use crate::tensor::{huber_scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: usize,
    pub lr: f32,
    pub max_hints: usize,
    pub lasso_lo: usize,
    pub lasso_hi: usize,
    pub seed: u64,
    pub ab_scale: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 8,
            steps: 2000,
            lr: 3e-4,
            max_hints: 150,
            lasso_lo: 4,
            lasso_hi: 64,
            seed: 0,
            ab_scale: 1.0 / 110.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.steps == 0 {
            return Err(Error::config("batch and steps must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.lasso_lo == 0 || self.lasso_lo > self.lasso_hi {
            return Err(Error::config(format!(
                "lasso extent range [{}, {}] is empty",
                self.lasso_lo, self.lasso_hi
            )));
        }
        if !(self.ab_scale > 0.0 && self.ab_scale.is_finite()) {
            return Err(Error::config("ab_scale must be positive"));
        }
        Ok(())
    }
}

/// Mean Huber loss over both chroma planes of `scale * (pred - gt)`.
pub fn huber_loss(pred: &LabImage, gt: &LabImage, scale: f32) -> Result<f64> {
    if !pred.same_size(gt) {
        return Err(Error::dim(format!(
            "huber: {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let scale = scale as f64;
    let total: f64 = pred
        .a
        .iter()
        .zip(&gt.a)
        .chain(pred.b.iter().zip(&gt.b))
        .map(|(&p, &g)| huber_scalar(scale * (p as f64 - g as f64)))
        .sum();
    Ok(total / (2 * pred.len()).max(1) as f64)
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Vec<f32>], lr: f32) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Ground truth plus the hints (all with lassos) simulated for it.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub gt: LabImage,
    pub hints: HintSet,
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    pub loss: f64,
    pub item_losses: Vec<f64>,
    pub grads: Vec<Vec<f32>>,
}

/// Forward and backward over a batch. Hint stacks are zero-padded to the
/// largest hint count in the batch (or `pad_to`, if larger), with all-zero
/// mask rows for the padding so it can never be attended to.
pub fn batch_gradients(model: &Model, items: &[TrainItem], ab_scale: f32, pad_to: Option<usize>) -> Result<BatchResult> {
    if items.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let cfg = &model.config;
    let width = items.iter().map(|i| i.hints.len()).max().unwrap_or(0).max(pad_to.unwrap_or(0));
    let g = Graph::<f32>::new();
    let bound = model.params.bind(&g, true);
    let mut losses = Vec::with_capacity(items.len());
    for item in items {
        let gray = split_gray(&item.gt);
        let lassos = item.hints.resolved_lassos()?;
        let mask = build_localization_mask(&lassos, cfg.height, cfg.width, cfg.patch)?.padded(width);
        let gp = g.constant(gray_patches(&gray, cfg)?);
        let hp = g.constant(hint_patches(&gray, &item.hints, cfg, Some(width))?);
        let pred = forward_graph(&g, cfg, &bound, gp, hp, &mask)?;
        let mut target = item.gt.a.clone();
        target.extend_from_slice(&item.gt.b);
        let target = g.constant(Tensor::new([2, cfg.height * cfg.width], target)?);
        losses.push(g.huber(pred, target, ab_scale)?);
    }
    let total = if losses.len() == 1 {
        losses[0]
    } else {
        let stacked = g.concat_rows(
            &losses
                .iter()
                .map(|&l| g.reshape(l, &[1, 1]))
                .collect::<Result<Vec<_>>>()?,
        )?;
        g.mean(stacked)
    };
    let item_losses: Vec<f64> = losses.iter().map(|&l| g.item(l) as f64).collect();
    let loss = g.item(total) as f64;
    if !loss.is_finite() {
        let counts: Vec<usize> = items.iter().map(|i| i.hints.len()).collect();
        return Err(Error::Numeric(format!(
            "non-finite loss {loss}; per-item losses {item_losses:?}, hint counts {counts:?}"
        )));
    }
    let grads = g.backward(total)?;
    let grads = bound
        .vars()
        .iter()
        .zip(model.params.tensors())
        .map(|(&v, t)| grads.get_or_zeros(v, t.numel()))
        .collect();
    Ok(BatchResult {
        loss,
        item_losses,
        grads,
    })
}

/// Owns the model, optimizer state and the simulation RNG.
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(model.params.tensors().iter().map(Tensor::numel));
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_1A55);
        Ok(Self {
            model,
            config,
            adam,
            rng,
        })
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Simulated hints with a rectangle lasso on every hint.
    pub fn simulate(&mut self, gt: LabImage) -> TrainItem {
        let hints = simulate_hints(&gt, &mut self.rng, self.config.max_hints);
        let hints = simulate_lassos(
            &hints,
            gt.width,
            gt.height,
            &mut self.rng,
            self.config.lasso_lo,
            self.config.lasso_hi,
        );
        TrainItem { gt, hints }
    }

    pub fn train_step(&mut self, items: &[TrainItem]) -> Result<f64> {
        let r = batch_gradients(&self.model, items, self.config.ab_scale, None)?;
        self.adam.update(self.model.params.tensors_mut(), &r.grads, self.config.lr);
        if !self.model.params.all_finite() {
            return Err(Error::Numeric(format!(
                "parameters became non-finite after step {}",
                self.adam.steps_taken()
            )));
        }
        Ok(r.loss)
    }

    /// Runs `config.steps` steps, drawing each ground-truth image from
    /// `source` and reporting `(step, loss)` to `on_step`.
    pub fn run(
        &mut self,
        mut source: impl FnMut(&mut ChaCha8Rng) -> LabImage,
        mut on_step: impl FnMut(usize, f64),
    ) -> Result<Vec<f64>> {
        let mut data_rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut losses = Vec::with_capacity(self.config.steps);
        for step in 0..self.config.steps {
            let items: Vec<TrainItem> = (0..self.config.batch)
                .map(|_| {
                    let gt = source(&mut data_rng);
                    self.simulate(gt)
                })
                .collect();
            let loss = self.train_step(&items)?;
            on_step(step, loss);
            losses.push(loss);
        }
        Ok(losses)
    }
}
