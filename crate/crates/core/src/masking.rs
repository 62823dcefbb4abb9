//! Localization attention masks: which hint tokens each image token may
//! attend to.
//!
//! Row 0 is the unconditional row (token cells covered by no lasso), rows
//! `1..=h` are the per-hint conditional rows. A lasso is rasterized to the
//! token grid by any-overlap: a cell is on iff the lasso covers at least one
//! pixel of its `P×P` patch.

use std::io::Write;

use crate::error::{Error, Result};
use crate::interaction::Lasso;
use crate::tensor::{self, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalizationMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl LocalizationMask {
    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::dim(format!("mask bits {} != {}x{}", bits.len(), rows, cols)));
        }
        Ok(Self { rows, cols, bits })
    }

    /// Hint tokens, including the unconditional one.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Image tokens.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn hint_count(&self) -> usize {
        self.rows - 1
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.bits[row * self.cols..(row + 1) * self.cols]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Every image token can attend to at least one hint token.
    pub fn is_covering(&self) -> bool {
        (0..self.cols).all(|c| (0..self.rows).any(|r| self.get(r, c)))
    }

    /// Appends all-zero rows until there are `hints` conditional rows.
    /// Padded hint tokens can never be attended to.
    pub fn padded(&self, hints: usize) -> LocalizationMask {
        let mut bits = self.bits.clone();
        let rows = self.rows.max(hints + 1);
        bits.resize(rows * self.cols, false);
        LocalizationMask {
            rows,
            cols: self.cols,
            bits,
        }
    }

    /// The mask laid out like the attention logits: `N × (h+1)`.
    pub fn transposed_bits(&self) -> Vec<bool> {
        let mut out = vec![false; self.bits.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.bits[r * self.cols + c];
            }
        }
        out
    }

    /// Writes one row as a binary PGM on the token grid.
    pub fn write_row_pgm(&self, row: usize, grid_w: usize, mut out: impl Write) -> std::io::Result<()> {
        let grid_h = self.cols / grid_w.max(1);
        write!(out, "P5\n{grid_w} {grid_h}\n255\n")?;
        let bytes: Vec<u8> = self.row(row).iter().map(|&b| if b { 255 } else { 0 }).collect();
        out.write_all(&bytes)
    }
}

pub fn check_grid(height: usize, width: usize, patch: usize) -> Result<(usize, usize)> {
    if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
        return Err(Error::config(format!(
            "patch size {patch} must divide image size {width}x{height}"
        )));
    }
    Ok((height / patch, width / patch))
}

/// Token-grid rasterization of a lasso, row-major `(H/P) × (W/P)`.
pub fn lasso_to_token_mask(lasso: &Lasso, height: usize, width: usize, patch: usize) -> Result<Vec<bool>> {
    let (gh, gw) = check_grid(height, width, patch)?;
    lasso.validate(width, height)?;
    let mut grid = vec![false; gh * gw];
    match lasso {
        Lasso::Rect(r) => {
            for gy in r.y0 / patch..=r.y1 / patch {
                for gx in r.x0 / patch..=r.x1 / patch {
                    grid[gy * gw + gx] = true;
                }
            }
        }
        Lasso::Mask(m) => {
            for (i, _) in m.bits.iter().enumerate().filter(|(_, &b)| b) {
                let (y, x) = (i / width, i % width);
                grid[(y / patch) * gw + x / patch] = true;
            }
        }
    }
    Ok(grid)
}

pub fn build_localization_mask(
    lassos: &[Lasso],
    height: usize,
    width: usize,
    patch: usize,
) -> Result<LocalizationMask> {
    let (gh, gw) = check_grid(height, width, patch)?;
    let n = gh * gw;
    let mut bits = vec![false; (lassos.len() + 1) * n];
    let mut covered = vec![false; n];
    for (i, lasso) in lassos.iter().enumerate() {
        let grid = lasso_to_token_mask(lasso, height, width, patch)?;
        for (j, &on) in grid.iter().enumerate() {
            bits[(i + 1) * n + j] = on;
            covered[j] |= on;
        }
    }
    for (j, &c) in covered.iter().enumerate() {
        bits[j] = !c;
    }
    LocalizationMask::from_bits(lassos.len() + 1, n, bits)
}

/// Softmax of `N × (h+1)` attention logits restricted to the mask.
pub fn apply_mask(attn_logits: &Tensor, mask: &LocalizationMask) -> Result<Tensor> {
    let (n, k) = attn_logits.dims2()?;
    if n != mask.cols() || k != mask.rows() {
        return Err(Error::dim(format!(
            "logits {n}x{k} vs mask {}x{}",
            mask.rows(),
            mask.cols()
        )));
    }
    tensor::masked_softmax(attn_logits, &mask.transposed_bits())
}
