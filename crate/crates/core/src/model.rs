//! The colorization network.
//!
//! Grayscale patches become image tokens (linear projection plus a learned
//! positional table). Hint patches go through an MLP to become conditional
//! tokens, with a learned unconditional token prepended as row 0. The
//! trunk alternates localized cross-attention (image tokens attend to hint
//! tokens under the localization mask) and self-attention, starting with
//! cross-attention. Each block is pre-norm attention plus a pre-norm GELU
//! MLP, both residual. A linear head maps every image token to `P²·2`
//! values that pixel-shuffle into the ab planes.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::colorspace::LabImage;
use crate::error::{Error, Result};
use crate::interaction::{crop_hint_patches, HintSet};
use crate::masking::LocalizationMask;
use crate::tensor::{Scalar, Tensor};

/// Model outputs are multiplied by this to reach natural ab units.
pub const AB_RANGE: f32 = 110.0;
/// Luminance is divided by this before entering the network.
pub const L_RANGE: f32 = 100.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub hint_mlp_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Desk-scale configuration used by tests and the acceptance suite.
    pub fn toy() -> Self {
        Self {
            height: 32,
            width: 32,
            patch: 8,
            dim: 32,
            depth: 4,
            heads: 4,
            mlp_hidden: 128,
            hint_mlp_layers: 2,
        }
    }

    /// 224×224 input, 16-pixel patches, 768-wide 12-block trunk, 12-layer hint MLP.
    pub fn full_scale() -> Self {
        Self {
            height: 224,
            width: 224,
            patch: 16,
            dim: 768,
            depth: 12,
            heads: 12,
            mlp_hidden: 3072,
            hint_mlp_layers: 12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.height == 0 || self.width == 0 || self.dim == 0 {
            return fail("height, width and dim must be positive".into());
        }
        if self.patch == 0 || !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return fail(format!("patch {} must divide {}x{}", self.patch, self.width, self.height));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.depth == 0 || self.hint_mlp_layers == 0 || self.mlp_hidden == 0 {
            return fail("depth, hint_mlp_layers and mlp_hidden must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn tokens(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Block `i` (0-based) is cross-attention when even.
    pub fn is_cross_block(&self, i: usize) -> bool {
        i.is_multiple_of(2)
    }

    fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.dim;
        let p2 = self.patch * self.patch;
        let mut s: Vec<(String, Vec<usize>)> = Vec::new();
        let linear = |s: &mut Vec<(String, Vec<usize>)>, name: &str, i: usize, o: usize| {
            s.push((format!("{name}.weight"), vec![i, o]));
            s.push((format!("{name}.bias"), vec![o]));
        };
        let norm = |s: &mut Vec<(String, Vec<usize>)>, name: &str| {
            s.push((format!("{name}.gain"), vec![d]));
            s.push((format!("{name}.bias"), vec![d]));
        };
        linear(&mut s, "patch_embed", p2, d);
        s.push(("pos_embed".into(), vec![self.tokens(), d]));
        for i in 0..self.hint_mlp_layers {
            let fan_in = if i == 0 { p2 * 3 } else { d };
            linear(&mut s, &format!("hint_mlp.{i}"), fan_in, d);
        }
        s.push(("uncond_token".into(), vec![1, d]));
        for b in 0..self.depth {
            let pre = format!("blocks.{b}");
            norm(&mut s, &format!("{pre}.norm1"));
            if self.is_cross_block(b) {
                norm(&mut s, &format!("{pre}.norm_kv"));
            }
            for w in ["q", "k", "v", "o"] {
                linear(&mut s, &format!("{pre}.attn.{w}"), d, d);
            }
            norm(&mut s, &format!("{pre}.norm2"));
            linear(&mut s, &format!("{pre}.mlp.fc1"), d, self.mlp_hidden);
            linear(&mut s, &format!("{pre}.mlp.fc2"), self.mlp_hidden, d);
        }
        norm(&mut s, "norm_out");
        linear(&mut s, "head", d, p2 * 2);
        s
    }
}

/// Names and shapes of every parameter tensor, in canonical order.
#[derive(Debug)]
pub struct ParamLayout {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (names, shapes): (Vec<_>, Vec<_>) = cfg.param_specs().into_iter().unzip();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, shapes, index }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    layout: Arc<ParamLayout>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let layout = Arc::new(ParamLayout::new(cfg));
        let tensors = layout
            .names
            .iter()
            .zip(&layout.shapes)
            .map(|(name, shape)| {
                if name.ends_with(".gain") {
                    Tensor::full(shape.clone(), 1.0)
                } else if name.ends_with(".bias") {
                    Tensor::zeros(shape.clone())
                } else {
                    let bound = if shape.len() == 2 && name.ends_with(".weight") {
                        1.0 / (shape[0] as f32).sqrt()
                    } else {
                        0.05
                    };
                    Tensor::from_fn(shape.clone(), |_| rng.random_range(-bound..bound))
                }
            })
            .collect();
        Ok(Self { layout, tensors })
    }

    /// Assembles parameters from `(name, tensor)` pairs; every layout entry
    /// must be present exactly once with the right shape.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        cfg.validate()?;
        let layout = Arc::new(ParamLayout::new(cfg));
        let mut slots: Vec<Option<Tensor>> = vec![None; layout.len()];
        for (name, t) in named {
            let i = layout
                .position(&name)
                .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))?;
            if t.shape() != layout.shapes[i].as_slice() {
                return Err(Error::dim(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    layout.shapes[i]
                )));
            }
            if slots[i].replace(t).is_some() {
                return Err(Error::contract(format!("duplicate parameter {name}")));
            }
        }
        let tensors = slots
            .into_iter()
            .zip(&layout.names)
            .map(|(t, n)| t.ok_or_else(|| Error::contract(format!("missing parameter {n}"))))
            .collect::<Result<_>>()?;
        Ok(Self { layout, tensors })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.layout.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.layout.position(name).map(move |i| &mut self.tensors[i])
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.layout.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Puts every tensor on `g`, trainable or not.
    pub fn bind<'a, T: Scalar>(&'a self, g: &Graph<T>, trainable: bool) -> BoundParams<'a> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                let t = t.cast::<T>();
                if trainable {
                    g.param(t)
                } else {
                    g.constant(t)
                }
            })
            .collect();
        BoundParams {
            layout: &self.layout,
            vars,
        }
    }
}

/// Parameter tensors placed on a graph, addressable by name.
pub struct BoundParams<'a> {
    layout: &'a ParamLayout,
    vars: Vec<Var>,
}

impl<'a> BoundParams<'a> {
    pub fn from_vars(layout: &'a ParamLayout, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != layout.len() {
            return Err(Error::dim(format!("{} vars for {} parameters", vars.len(), layout.len())));
        }
        Ok(Self { layout, vars })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.layout
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::contract(format!("no parameter named {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Row-major `P×P` patches of the L plane, scaled to [0, 1]: `[N, P²]`.
pub fn gray_patches(gray: &LabImage, cfg: &ModelConfig) -> Result<Tensor> {
    if gray.width != cfg.width || gray.height != cfg.height {
        return Err(Error::config(format!(
            "image is {}x{}, model expects {}x{}",
            gray.width, gray.height, cfg.width, cfg.height
        )));
    }
    let p = cfg.patch;
    let (gh, gw) = cfg.grid();
    let mut data = Vec::with_capacity(gh * gw * p * p);
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..p {
                for px in 0..p {
                    data.push(gray.l[gray.index(gy * p + py, gx * p + px)] / L_RANGE);
                }
            }
        }
    }
    Tensor::new([gh * gw, p * p], data)
}

/// Hint patch stack scaled for the network (L / 100, ab / 110),
/// zero-padded to `pad_to` rows when given.
pub fn hint_patches(gray: &LabImage, hints: &HintSet, cfg: &ModelConfig, pad_to: Option<usize>) -> Result<Tensor> {
    let raw = crop_hint_patches(gray, hints, cfg.patch)?;
    let stride = cfg.patch * cfg.patch * 3;
    let rows = pad_to.unwrap_or(hints.len()).max(hints.len());
    let mut data = raw.into_data();
    for (i, v) in data.iter_mut().enumerate() {
        *v /= if i % 3 == 0 { L_RANGE } else { AB_RANGE };
    }
    data.resize(rows * stride, 0.0);
    Tensor::new([rows, stride], data)
}

/// Gather map for pixel shuffling: entry `c·H·W + y·W + x` of the output
/// ab planes reads element `((y mod P)·P + x mod P)·2 + c` of token
/// `(y/P)·(W/P) + x/P`.
pub fn pixel_shuffle_index(cfg: &ModelConfig) -> Vec<usize> {
    let (p, h, w) = (cfg.patch, cfg.height, cfg.width);
    let gw = w / p;
    let row = p * p * 2;
    let mut idx = Vec::with_capacity(2 * h * w);
    for c in 0..2 {
        for y in 0..h {
            for x in 0..w {
                let token = (y / p) * gw + x / p;
                idx.push(token * row + ((y % p) * p + x % p) * 2 + c);
            }
        }
    }
    idx
}

/// `[N, P²·2]` token outputs → `[2, H, W]` ab planes.
pub fn pixel_shuffle(tokens: &Tensor, cfg: &ModelConfig) -> Result<Tensor> {
    let expected = [cfg.tokens(), cfg.patch * cfg.patch * 2];
    if tokens.shape() != expected {
        return Err(Error::dim(format!("pixel_shuffle: {:?}, expected {:?}", tokens.shape(), expected)));
    }
    let data = pixel_shuffle_index(cfg).into_iter().map(|i| tokens.data()[i]).collect();
    Tensor::new([2, cfg.height, cfg.width], data)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(planes: &Tensor, cfg: &ModelConfig) -> Result<Tensor> {
    if planes.numel() != 2 * cfg.height * cfg.width {
        return Err(Error::dim("pixel_unshuffle: plane size mismatch"));
    }
    let mut out = vec![0.0; planes.numel()];
    for (dst, src) in pixel_shuffle_index(cfg).into_iter().enumerate() {
        out[src] = planes.data()[dst];
    }
    Tensor::new([cfg.tokens(), cfg.patch * cfg.patch * 2], out)
}

fn linear<T: Scalar>(g: &Graph<T>, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let y = g.matmul(x, p.get(&format!("{name}.weight"))?)?;
    g.add_row(y, p.get(&format!("{name}.bias"))?)
}

fn norm<T: Scalar>(g: &Graph<T>, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    g.layer_norm(x, p.get(&format!("{name}.gain"))?, p.get(&format!("{name}.bias"))?)
}

/// Multi-head attention of `queries` over `keys_values`; the same
/// `N × K` mask (when given) is shared by every head.
fn attention<T: Scalar>(
    g: &Graph<T>,
    cfg: &ModelConfig,
    p: &BoundParams,
    prefix: &str,
    queries: Var,
    keys_values: Var,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let q = linear(g, p, &format!("{prefix}.q"), queries)?;
    let k = linear(g, p, &format!("{prefix}.k"), keys_values)?;
    let v = linear(g, p, &format!("{prefix}.v"), keys_values)?;
    let dh = cfg.head_dim();
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let logits = g.scale(g.matmul(qh, g.transpose(kh)?)?, scale);
        let weights = g.softmax(logits, mask.map(<[bool]>::to_vec))?;
        heads.push(g.matmul(weights, vh)?);
    }
    let merged = g.concat_cols(&heads)?;
    linear(g, p, &format!("{prefix}.o"), merged)
}

/// Image tokens `[N, d]` from gray patches `[N, P²]`.
pub fn tokenize_gray<T: Scalar>(g: &Graph<T>, p: &BoundParams, gray_patches: Var) -> Result<Var> {
    let t = linear(g, p, "patch_embed", gray_patches)?;
    g.add(t, p.get("pos_embed")?)
}

/// Hint tokens `[(h+1), d]`: the unconditional token followed by one MLP
/// embedding per hint patch. No positional term is added.
pub fn encode_hints<T: Scalar>(g: &Graph<T>, cfg: &ModelConfig, p: &BoundParams, hint_patches: Var) -> Result<Var> {
    let uncond = p.get("uncond_token")?;
    let rows = g.shape(hint_patches)[0];
    if rows == 0 {
        return Ok(uncond);
    }
    let mut x = hint_patches;
    for i in 0..cfg.hint_mlp_layers {
        x = linear(g, p, &format!("hint_mlp.{i}"), x)?;
        if i + 1 < cfg.hint_mlp_layers {
            x = g.gelu(x);
        }
    }
    g.concat_rows(&[uncond, x])
}

/// Full forward pass on a graph. `gray` is `[N, P²]`, `hints` is the
/// (possibly padded) `[h, P²·3]` patch stack and `mask` must have `h+1`
/// rows. Returns the ab planes `[2, H·W]` in natural units.
pub fn forward_graph<T: Scalar>(
    g: &Graph<T>,
    cfg: &ModelConfig,
    p: &BoundParams,
    gray: Var,
    hints: Var,
    mask: &LocalizationMask,
) -> Result<Var> {
    let hint_rows = g.shape(hints)[0];
    if mask.hint_count() != hint_rows {
        return Err(Error::contract(format!(
            "mask built for {} hints, got {hint_rows}",
            mask.hint_count()
        )));
    }
    if mask.cols() != cfg.tokens() {
        return Err(Error::contract(format!(
            "mask has {} image tokens, model has {}",
            mask.cols(),
            cfg.tokens()
        )));
    }
    let attn_mask = mask.transposed_bits();
    let mut x = tokenize_gray(g, p, gray)?;
    let hint_tokens = encode_hints(g, cfg, p, hints)?;
    for b in 0..cfg.depth {
        let pre = format!("blocks.{b}");
        let h = norm(g, p, &format!("{pre}.norm1"), x)?;
        let a = if cfg.is_cross_block(b) {
            let kv = norm(g, p, &format!("{pre}.norm_kv"), hint_tokens)?;
            attention(g, cfg, p, &format!("{pre}.attn"), h, kv, Some(&attn_mask))?
        } else {
            attention(g, cfg, p, &format!("{pre}.attn"), h, h, None)?
        };
        x = g.add(x, a)?;
        let h = norm(g, p, &format!("{pre}.norm2"), x)?;
        let h = g.gelu(linear(g, p, &format!("{pre}.mlp.fc1"), h)?);
        let h = linear(g, p, &format!("{pre}.mlp.fc2"), h)?;
        x = g.add(x, h)?;
    }
    let x = norm(g, p, "norm_out", x)?;
    let tokens = linear(g, p, "head", x)?;
    let planes = g.gather(tokens, pixel_shuffle_index(cfg), &[2, cfg.height * cfg.width])?;
    Ok(g.scale(planes, T::from_f64(AB_RANGE as f64)))
}

/// A configuration with its weights.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        if params.layout().len() != ParamLayout::new(&config).len() {
            return Err(Error::contract("parameters do not match configuration"));
        }
        Ok(Self { config, params })
    }

    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let params = ModelParams::init(&config, rng)?;
        Ok(Self { config, params })
    }

    /// Predicted ab planes `[2, H·W]` for a grayscale image and hints.
    pub fn predict_ab(&self, gray: &LabImage, hints: &HintSet, mask: &LocalizationMask) -> Result<Tensor> {
        let g = Graph::<f32>::new();
        let p = self.params.bind(&g, false);
        let gp = g.constant(gray_patches(gray, &self.config)?);
        let hp = g.constant(hint_patches(gray, hints, &self.config, Some(mask.hint_count()))?);
        if mask.hint_count() != hints.len() {
            return Err(Error::contract(format!(
                "mask built for {} hints, hint set has {}",
                mask.hint_count(),
                hints.len()
            )));
        }
        let out = forward_graph(&g, &self.config, &p, gp, hp, mask)?;
        let t = g.value(out);
        if !t.all_finite() {
            return Err(Error::Numeric("model produced non-finite ab values".into()));
        }
        Ok(t)
    }

    /// Colorized Lab image: input luminance with predicted chroma.
    ///
    /// Hints (with their mask rows) are put in a canonical order first, so
    /// any permutation of the same hints gives bit-identical output.
    pub fn forward(&self, gray: &LabImage, hints: &HintSet, mask: &LocalizationMask) -> Result<LabImage> {
        if mask.hint_count() != hints.len() {
            return Err(Error::contract(format!(
                "mask built for {} hints, hint set has {}",
                mask.hint_count(),
                hints.len()
            )));
        }
        let (hints, mask) = canonical_order(hints, mask)?;
        let ab = self.predict_ab(gray, &hints, &mask)?.into_data();
        let n = gray.len();
        gray.with_ab(ab[..n].to_vec(), ab[n..].to_vec())
    }
}

fn canonical_order(hints: &HintSet, mask: &LocalizationMask) -> Result<(HintSet, LocalizationMask)> {
    let mut order: Vec<usize> = (0..hints.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&hints.hints[i], &hints.hints[j]);
        (a.y, a.x, a.a.to_bits(), a.b.to_bits())
            .cmp(&(b.y, b.x, b.a.to_bits(), b.b.to_bits()))
            .then_with(|| mask.row(i + 1).cmp(mask.row(j + 1)))
    });
    let mut set = HintSet::new();
    let mut bits = mask.row(0).to_vec();
    for &i in &order {
        set.push(hints.hints[i], hints.lassos[i].clone());
        bits.extend_from_slice(mask.row(i + 1));
    }
    Ok((set, LocalizationMask::from_bits(mask.rows(), mask.cols(), bits)?))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::interaction::{ColorHint, Lasso, RectLasso};
    use crate::masking::build_localization_mask;

    fn toy(depth: usize) -> Model {
        let cfg = ModelConfig {
            dim: 16,
            heads: 2,
            mlp_hidden: 32,
            depth,
            ..ModelConfig::toy()
        };
        Model::init(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn gray(cfg: &ModelConfig) -> LabImage {
        let n = cfg.width * cfg.height;
        let l = (0..n).map(|i| (i % 97) as f32).collect();
        LabImage::new(cfg.width, cfg.height, l, vec![0.0; n], vec![0.0; n]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::toy().validate().is_ok());
        assert_eq!(ModelConfig::full_scale().tokens(), 196);
        assert!(ModelConfig { patch: 7, ..ModelConfig::toy() }.validate().is_err());
        assert!(ModelConfig { heads: 3, ..ModelConfig::toy() }.validate().is_err());
    }

    #[test]
    fn tokenizer_shape_and_positional_identity() {
        let cfg = ModelConfig { dim: 16, ..ModelConfig::toy() };
        let mut params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        params.get_mut("patch_embed.bias").unwrap().data_mut().fill(0.0);
        let g = Graph::<f32>::new();
        let bound = params.bind(&g, false);
        let zero = LabImage::filled(32, 32, [0.0, 0.0, 0.0]);
        let gp = g.constant(gray_patches(&zero, &cfg).unwrap());
        let t = tokenize_gray(&g, &bound, gp).unwrap();
        assert_eq!(g.shape(t), vec![16, 16]);
        assert_eq!(&g.value(t), params.get("pos_embed").unwrap());
        assert!(gray_patches(&LabImage::filled(16, 32, [0.0; 3]), &cfg).is_err());
    }

    #[test]
    fn hint_encoder_shapes() {
        let m = toy(2);
        let g = Graph::<f32>::new();
        let p = m.params.bind(&g, false);
        let none = g.constant(Tensor::zeros([0, 192]));
        assert_eq!(g.shape(encode_hints(&g, &m.config, &p, none).unwrap()), vec![1, 16]);
        let row: Vec<f32> = (0..192).map(|i| (i as f32).sin()).collect();
        let three = g.constant(Tensor::new([3, 192], row.repeat(3)).unwrap());
        let enc = g.value(encode_hints(&g, &m.config, &p, three).unwrap());
        assert_eq!(enc.shape(), &[4, 16]);
        assert_eq!(enc.data()[16..32], enc.data()[48..64]);
    }

    #[test]
    fn pixel_shuffle_layout() {
        let cfg = ModelConfig::toy();
        let row = cfg.patch * cfg.patch * 2;
        let tokens = Tensor::full([cfg.tokens(), row], 2.5);
        assert!(pixel_shuffle(&tokens, &cfg).unwrap().data().iter().all(|&v| v == 2.5));
        let mut one_hot = Tensor::zeros([cfg.tokens(), row]);
        // token 5 = grid (1, 1); element 2*(3*8+6)+1 = pixel (3, 6) of that patch, channel b
        one_hot.data_mut()[5 * row + 61] = 1.0;
        let planes = pixel_shuffle(&one_hot, &cfg).unwrap();
        let nz: Vec<usize> = planes.data().iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
        assert_eq!(nz, vec![32 * 32 + (8 + 3) * 32 + (8 + 6)]);
        let round = pixel_unshuffle(&planes, &cfg).unwrap();
        assert_eq!(round, one_hot);
    }

    #[test]
    fn forward_keeps_luminance() {
        let m = toy(4);
        let gray = gray(&m.config);
        let mask = build_localization_mask(&[], 32, 32, 8).unwrap();
        let out = m.forward(&gray, &HintSet::new(), &mask).unwrap();
        assert_eq!(out.l, gray.l);
        assert!(out.a.iter().chain(&out.b).all(|v| v.is_finite()));
        assert_eq!(out, m.forward(&gray, &HintSet::new(), &mask).unwrap());
    }

    #[test]
    fn mask_hint_count_mismatch_is_contract_error() {
        let m = toy(2);
        let gray = gray(&m.config);
        let mask = build_localization_mask(&[Lasso::whole_image(32, 32)], 32, 32, 8).unwrap();
        assert!(matches!(m.forward(&gray, &HintSet::new(), &mask), Err(Error::Contract(_))));
    }

    #[test]
    fn hint_permutation_equivariance() {
        let m = toy(4);
        let gray = gray(&m.config);
        let mut set = HintSet::new();
        let lassos = [(0, 0, 9, 9), (12, 3, 30, 20), (5, 17, 8, 31)];
        for (i, &(y0, x0, y1, x1)) in lassos.iter().enumerate() {
            let hint = ColorHint { y: y0, x: x0, a: 10.0 * i as f32 - 8.0, b: 3.0 - 4.0 * i as f32 };
            set.push(hint, Some(Lasso::Rect(RectLasso { y0, x0, y1, x1 })));
        }
        let mask = build_localization_mask(&set.resolved_lassos().unwrap(), 32, 32, 8).unwrap();
        let out = m.forward(&gray, &set, &mask).unwrap();
        let perm = [2, 0, 1];
        let mut shuffled = HintSet::new();
        for &i in &perm {
            shuffled.push(set.hints[i], set.lassos[i].clone());
        }
        let mask2 = build_localization_mask(&shuffled.resolved_lassos().unwrap(), 32, 32, 8).unwrap();
        assert_eq!(out, m.forward(&gray, &shuffled, &mask2).unwrap());
    }
}
