//! Training and benchmark data: procedural toy shapes, image folders, and
//! the 2×2 color-collapse grid.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::{rgb_to_lab, LabImage, RgbImage};
use crate::error::{Error, Result};
use crate::imageio::{center_crop_resize, decode_image};
use crate::interaction::{ColorHint, HintSet, Lasso, RectLasso};

/// Per-channel bound of the random ab offset applied to each grid quadrant.
pub const GRID_SHIFT: f32 = 40.0;

/// A 2×2 tiling of one source: shared L plane, per-quadrant chroma shift.
/// Quadrants are numbered row-major: 0 top-left, 1 top-right, 2 bottom-left,
/// 3 bottom-right.
#[derive(Clone, Debug)]
pub struct ColorCollapseGrid {
    pub image: LabImage,
    pub shifts: [[f32; 2]; 4],
}

impl ColorCollapseGrid {
    pub fn source_size(&self) -> (usize, usize) {
        (self.image.width / 2, self.image.height / 2)
    }

    pub fn quadrant_of(&self, y: usize, x: usize) -> usize {
        let (sw, sh) = self.source_size();
        (y / sh) * 2 + x / sw
    }

    /// The full quadrant as a rectangle lasso.
    pub fn quadrant_lasso(&self, q: usize) -> Lasso {
        let (sw, sh) = self.source_size();
        let (qy, qx) = (q / 2, q % 2);
        Lasso::Rect(RectLasso {
            y0: qy * sh,
            x0: qx * sw,
            y1: qy * sh + sh - 1,
            x1: qx * sw + sw - 1,
        })
    }
}

#[derive(Serialize)]
struct ShiftsJson<'a> {
    quadrant_order: &'a str,
    shifts: &'a [[f32; 2]; 4],
}

impl ColorCollapseGrid {
    pub fn shifts_json(&self) -> String {
        serde_json::to_string_pretty(&ShiftsJson {
            quadrant_order: "top-left, top-right, bottom-left, bottom-right",
            shifts: &self.shifts,
        })
        .expect("plain data serializes")
    }
}

/// Tiles `L` unchanged into a 2H×2W image and shifts each quadrant's ab by
/// an independent offset uniform in `[-GRID_SHIFT, GRID_SHIFT]` per channel,
/// clamped to [-128, 127].
pub fn make_color_collapse_grid<R: Rng + ?Sized>(src: &RgbImage, rng: &mut R) -> ColorCollapseGrid {
    let mut shifts = [[0.0f32; 2]; 4];
    for s in shifts.iter_mut() {
        *s = [
            rng.random_range(-GRID_SHIFT..=GRID_SHIFT),
            rng.random_range(-GRID_SHIFT..=GRID_SHIFT),
        ];
    }
    grid_with_shifts(&rgb_to_lab(src), shifts)
}

pub fn grid_with_shifts(src: &LabImage, shifts: [[f32; 2]; 4]) -> ColorCollapseGrid {
    let (w, h) = (src.width, src.height);
    let n = 4 * w * h;
    let (mut l, mut a, mut b) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for y in 0..2 * h {
        for x in 0..2 * w {
            let q = (y / h) * 2 + x / w;
            let s = src.index(y % h, x % w);
            let o = y * 2 * w + x;
            l[o] = src.l[s];
            a[o] = (src.a[s] + shifts[q][0]).clamp(-128.0, 127.0);
            b[o] = (src.b[s] + shifts[q][1]).clamp(-128.0, 127.0);
        }
    }
    ColorCollapseGrid {
        image: LabImage {
            width: 2 * w,
            height: 2 * h,
            l,
            a,
            b,
        },
        shifts,
    }
}

/// `k` locations drawn in the source frame, each replicated into all four
/// quadrants with that quadrant's ground-truth color. Hints come in groups
/// of four in quadrant order and carry no lasso.
pub fn sample_point_pairs<R: Rng + ?Sized>(grid: &ColorCollapseGrid, k: usize, rng: &mut R) -> HintSet {
    let (sw, sh) = grid.source_size();
    let mut set = HintSet::new();
    for _ in 0..k {
        let y = rng.random_range(0..sh);
        let x = rng.random_range(0..sw);
        for q in 0..4 {
            let (gy, gx) = (y + (q / 2) * sh, x + (q % 2) * sw);
            let (a, b) = grid.image.ab_at(gy, gx);
            set.push(ColorHint { y: gy, x: gx, a, b }, None);
        }
    }
    set
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyShapeSpec {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub shapes: usize,
    pub palette: Vec<[f32; 2]>,
    pub seed: u64,
}

impl Default for ToyShapeSpec {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            count: 16,
            shapes: 4,
            palette: default_palette(),
            seed: 0,
        }
    }
}

/// Six chroma pairs spread around the hue circle.
pub fn default_palette() -> Vec<[f32; 2]> {
    vec![
        [45.0, 30.0],
        [-40.0, 35.0],
        [10.0, -45.0],
        [-30.0, -25.0],
        [40.0, -20.0],
        [0.0, 50.0],
    ]
}

/// One procedural image: solid rectangles and disks, each with a random
/// luminance and a palette chroma, over a neutral background.
pub fn toy_image<R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize, shapes: usize, palette: &[[f32; 2]]) -> LabImage {
    let bg = rng.random_range(35.0f32..75.0);
    let mut img = LabImage::filled(width, height, [bg, 0.0, 0.0]);
    if palette.is_empty() {
        return img;
    }
    for _ in 0..shapes {
        let [a, b] = palette[rng.random_range(0..palette.len())];
        let l = rng.random_range(25.0f32..90.0);
        let disk = rng.random_bool(0.5);
        let cy = rng.random_range(0..height) as f32;
        let cx = rng.random_range(0..width) as f32;
        let ry = rng.random_range(2.0..=(height as f32 / 3.0).max(2.0));
        let rx = if disk { ry } else { rng.random_range(2.0..=(width as f32 / 3.0).max(2.0)) };
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = (y as f32 - cy, x as f32 - cx);
                let inside = if disk {
                    dy * dy + dx * dx <= ry * ry
                } else {
                    dy.abs() <= ry && dx.abs() <= rx
                };
                if inside {
                    let i = img.index(y, x);
                    img.l[i] = l;
                    img.a[i] = a;
                    img.b[i] = b;
                }
            }
        }
    }
    img
}

pub fn gen_toy_shapes(spec: &ToyShapeSpec) -> Vec<LabImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.count)
        .map(|_| toy_image(&mut rng, spec.width, spec.height, spec.shapes, &spec.palette))
        .collect()
}

/// Deterministic (lexicographic) walk over the files of a directory,
/// yielding each decodable image center-cropped and resized to the target
/// size. Undecodable files are skipped with a warning and remembered.
pub struct ImageFolder {
    files: std::vec::IntoIter<PathBuf>,
    width: usize,
    height: usize,
    skipped: Vec<(PathBuf, String)>,
}

impl ImageFolder {
    pub fn open(dir: impl AsRef<Path>, width: usize, height: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let mut files = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            if path.is_file() {
                files.push(path);
            }
        }
        files.sort();
        Ok(Self {
            files: files.into_iter(),
            width,
            height,
            skipped: Vec::new(),
        })
    }

    pub fn skipped(&self) -> &[(PathBuf, String)] {
        &self.skipped
    }
}

impl Iterator for ImageFolder {
    type Item = RgbImage;

    fn next(&mut self) -> Option<RgbImage> {
        for path in self.files.by_ref() {
            let decoded = std::fs::read(&path)
                .map_err(|e| Error::io(&path, e))
                .and_then(|bytes| decode_image(&bytes));
            match decoded {
                Ok(img) => return Some(center_crop_resize(&img, self.width, self.height)),
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    self.skipped.push((path, e.to_string()));
                }
            }
        }
        None
    }
}

pub fn load_image_folder(dir: impl AsRef<Path>, width: usize, height: usize) -> Result<ImageFolder> {
    ImageFolder::open(dir, width, height)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::colorspace::lab_to_rgb;
    use crate::imageio::write_png;

    fn src() -> RgbImage {
        let mut img = RgbImage::filled(6, 4, [120, 130, 110]);
        img.set_pixel(1, 1, [200, 40, 60]);
        img
    }

    #[test]
    fn zero_shift_grid_has_identical_quadrants() {
        let lab = rgb_to_lab(&src());
        let g = grid_with_shifts(&lab, [[0.0; 2]; 4]);
        assert_eq!((g.image.width, g.image.height), (12, 8));
        for y in 0..4 {
            for x in 0..6 {
                let v = g.image.ab_at(y, x);
                assert_eq!(v, g.image.ab_at(y + 4, x + 6));
                assert_eq!(v, g.image.ab_at(y, x + 6));
            }
        }
    }

    #[test]
    fn grid_luminance_is_shared_and_shift_recovered() {
        let lab = rgb_to_lab(&src());
        let g = make_color_collapse_grid(&src(), &mut ChaCha8Rng::seed_from_u64(4));
        for q in 0..4 {
            let (oy, ox) = ((q / 2) * 4, (q % 2) * 6);
            let mut da = 0.0;
            for y in 0..4 {
                for x in 0..6 {
                    let i = g.image.index(oy + y, ox + x);
                    assert_eq!(g.image.l[i], lab.l[lab.index(y, x)]);
                    da += g.image.a[i] - lab.a[lab.index(y, x)];
                }
            }
            assert!((da / 24.0 - g.shifts[q][0]).abs() < 0.5);
        }
    }

    #[test]
    fn point_pairs_are_congruent() {
        let g = make_color_collapse_grid(&src(), &mut ChaCha8Rng::seed_from_u64(9));
        let set = sample_point_pairs(&g, 3, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(set.len(), 12);
        for pair in set.hints.chunks(4) {
            for (q, h) in pair.iter().enumerate() {
                assert_eq!(g.quadrant_of(h.y, h.x), q);
                assert_eq!((h.y % 4, h.x % 6), (pair[0].y, pair[0].x));
                let da = h.a - pair[0].a;
                let expect = g.shifts[q][0] - g.shifts[0][0];
                assert!((da - expect).abs() < 1e-3, "{da} vs {expect}");
            }
        }
        let flat = grid_with_shifts(&rgb_to_lab(&src()), [[0.0; 2]; 4]);
        let set = sample_point_pairs(&flat, 1, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(set.hints.iter().all(|h| (h.a, h.b) == (set.hints[0].a, set.hints[0].b)));
    }

    #[test]
    fn toy_shapes() {
        let blank = gen_toy_shapes(&ToyShapeSpec { shapes: 0, count: 2, ..Default::default() });
        for img in &blank {
            assert!(img.a.iter().chain(&img.b).all(|&v| v == 0.0));
            assert!(img.l.iter().all(|&v| v == img.l[0]));
        }
        let spec = ToyShapeSpec { count: 8, shapes: 6, seed: 3, ..Default::default() };
        assert_eq!(gen_toy_shapes(&spec), gen_toy_shapes(&spec));

        let modes: BTreeSet<(i32, i32)> = gen_toy_shapes(&spec)
            .iter()
            .flat_map(|img| img.a.iter().zip(&img.b).map(|(&a, &b)| (a as i32, b as i32)).collect::<Vec<_>>())
            .filter(|&m| m != (0, 0))
            .collect();
        assert!(modes.len() >= spec.palette.len(), "{modes:?}");
    }

    #[test]
    fn folder_loading() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(load_image_folder(dir.path(), 8, 8).unwrap().count(), 0);

        let img = lab_to_rgb(&toy_image(&mut ChaCha8Rng::seed_from_u64(0), 30, 12, 3, &default_palette()));
        write_png(dir.path().join("b.png"), &img).unwrap();
        write_png(dir.path().join("a.png"), &RgbImage::filled(5, 9, [1, 2, 3])).unwrap();
        std::fs::write(dir.path().join("c.png"), b"not a png").unwrap();
        let mut folder = load_image_folder(dir.path(), 16, 16).unwrap();
        let first = folder.next().unwrap();
        assert_eq!(first.pixel(0, 0), [1, 2, 3]);
        assert!(folder.next().is_some_and(|i| (i.width, i.height) == (16, 16)));
        assert!(folder.next().is_none());
        assert_eq!(folder.skipped().len(), 1);
        assert!(folder.skipped()[0].0.ends_with("c.png"));
    }
}
