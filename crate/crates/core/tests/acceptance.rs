//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p lassocolor --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tower::ServiceExt;

use lassocolor::checkpoint;
use lassocolor::colorspace::{lab_pixel_to_rgb, lab_to_rgb, rgb_pixel_to_lab, LabImage, RgbImage};
use lassocolor::datasets::{gen_toy_shapes, make_color_collapse_grid, sample_point_pairs, ToyShapeSpec};
use lassocolor::gradcheck::{gradient_check, toy_case, GradCheckOptions, ModelObjective};
use lassocolor::imageio::{decode_image, encode_png};
use lassocolor::interaction::{
    simulate_hints, simulate_lassos_with_extents, ColorHint, HintSet, Lasso, MaskLasso, RectLasso,
};
use lassocolor::masking::{apply_mask, build_localization_mask, lasso_to_token_mask};
use lassocolor::metrics::{evaluate_collapse, CollapseLassos};
use lassocolor::model::{Model, ModelConfig};
use lassocolor::service;
use lassocolor::tensor::{huber_scalar, Tensor};
use lassocolor::training::{huber_loss, TrainConfig, Trainer};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_rect(rng: &mut impl Rng, w: usize, h: usize) -> RectLasso {
    let (ya, yb) = (rng.random_range(0..h), rng.random_range(0..h));
    let (xa, xb) = (rng.random_range(0..w), rng.random_range(0..w));
    RectLasso {
        y0: ya.min(yb),
        x0: xa.min(xb),
        y1: ya.max(yb),
        x1: xa.max(xb),
    }
}

fn random_mask(rng: &mut impl Rng, w: usize, h: usize, density: f64) -> MaskLasso {
    let mut bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
    let i = rng.random_range(0..w * h);
    bits[i] = true;
    MaskLasso { width: w, height: h, bits }
}

/// Per-cell, per-pixel reference rasterization.
fn brute_force_mask(lassos: &[Lasso], h: usize, w: usize, p: usize) -> Vec<bool> {
    let (gh, gw) = (h / p, w / p);
    let n = gh * gw;
    let mut bits = vec![false; (lassos.len() + 1) * n];
    for (li, lasso) in lassos.iter().enumerate() {
        for gy in 0..gh {
            for gx in 0..gw {
                let mut any = false;
                for y in gy * p..(gy + 1) * p {
                    for x in gx * p..(gx + 1) * p {
                        any |= lasso.contains(y, x);
                    }
                }
                bits[(li + 1) * n + gy * gw + gx] = any;
            }
        }
    }
    for t in 0..n {
        bits[t] = (1..=lassos.len()).all(|r| !bits[r * n + t]);
    }
    bits
}

fn a1_mask_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..1000 {
        let h = [16, 32, 64][rng.random_range(0..3)];
        let w = [16, 32, 64][rng.random_range(0..3)];
        let p = [4, 8][rng.random_range(0..2)];
        let k = rng.random_range(0..=8);
        let lassos: Vec<Lasso> = (0..k).map(|_| Lasso::Rect(random_rect(&mut rng, w, h))).collect();
        let got = build_localization_mask(&lassos, h, w, p).map_err(|e| e.to_string())?;
        let want = brute_force_mask(&lassos, h, w, p);
        check(got.bits() == want.as_slice(), || format!("case {case}: {w}x{h} P={p} k={k} differs"))?;
    }
    Ok("1000 cases bit-exact".into())
}

fn a2_attention_locality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_sum = 0.0f64;
    for case in 0..1000 {
        let (h, w, p) = (32, 32, [4, 8][rng.random_range(0..2)]);
        let k = rng.random_range(0..=6);
        let lassos: Vec<Lasso> = (0..k)
            .map(|_| {
                if rng.random_bool(0.5) {
                    Lasso::Rect(random_rect(&mut rng, w, h))
                } else {
                    Lasso::Mask(random_mask(&mut rng, w, h, 0.05))
                }
            })
            .collect();
        let mask = build_localization_mask(&lassos, h, w, p).map_err(|e| e.to_string())?;
        let (n, rows) = (mask.cols(), mask.rows());
        let logits: Vec<f32> = (0..n * rows).map(|_| rng.random_range(-20.0..20.0)).collect();
        let weights = apply_mask(&Tensor::new([n, rows], logits.clone()).unwrap(), &mask).map_err(|e| e.to_string())?;

        let mut perturbed = logits.clone();
        for t in 0..n {
            for r in 0..rows {
                let v = weights.data()[t * rows + r];
                if mask.get(r, t) {
                    continue;
                }
                check(v == 0.0, || format!("case {case}: masked weight {v} at token {t}, row {r}"))?;
                perturbed[t * rows + r] = rng.random_range(-1e4..1e4);
            }
            let sum: f64 = weights.data()[t * rows..(t + 1) * rows].iter().map(|&v| v as f64).sum();
            worst_sum = worst_sum.max((sum - 1.0).abs());
            check((sum - 1.0).abs() <= 1e-5, || format!("case {case}: token {t} row sum {sum}"))?;
        }
        let again = apply_mask(&Tensor::new([n, rows], perturbed).unwrap(), &mask).map_err(|e| e.to_string())?;
        check(again.data() == weights.data(), || format!("case {case}: output moved with masked logits"))?;
    }
    Ok(format!("1000 cases, max |row sum - 1| = {worst_sum:.2e}"))
}

fn a3_gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    let mut params = 0;
    for seed in 0..3 {
        let (model, item) = toy_case(seed, 3).map_err(|e| e.to_string())?;
        params = model.params.numel();
        let obj = ModelObjective::new(&model, &item, TrainConfig::default().ab_scale).map_err(|e| e.to_string())?;
        let r = gradient_check(&obj, model.params.tensors(), GradCheckOptions::default()).map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_err);
        check(r.max_rel_err < 1e-3, || format!("seed {seed}: max relative error {:.3e}", r.max_rel_err))?;
    }
    Ok(format!("3 seeds x {params} parameters, max relative error {worst:.2e}"))
}

fn a4_one_block_confinement() -> Outcome {
    let cfg = ModelConfig {
        depth: 1,
        ..ModelConfig::toy()
    };
    let (gh, gw) = cfg.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut changed_inside = 0;
    for case in 0..100 {
        let model = Model::init(cfg.clone(), &mut rng).map_err(|e| e.to_string())?;
        let gray = LabImage::new(
            cfg.width,
            cfg.height,
            (0..cfg.width * cfg.height).map(|_| rng.random_range(0.0..100.0)).collect(),
            vec![0.0; cfg.width * cfg.height],
            vec![0.0; cfg.width * cfg.height],
        )
        .unwrap();
        let count = rng.random_range(1..=4);
        let mut hints = HintSet::new();
        let mut used = std::collections::HashSet::new();
        while hints.len() < count {
            let (y, x) = (rng.random_range(0..cfg.height), rng.random_range(0..cfg.width));
            if used.insert((y, x)) {
                let hint = ColorHint { y, x, a: rng.random_range(-80.0..80.0), b: rng.random_range(-80.0..80.0) };
                let mut r = random_rect(&mut rng, cfg.width, cfg.height);
                r.y0 = r.y0.min(y);
                r.y1 = r.y1.max(y);
                r.x0 = r.x0.min(x);
                r.x1 = r.x1.max(x);
                hints.push(hint, Some(Lasso::Rect(r)));
            }
        }
        let j = rng.random_range(0..count);
        let mask = build_localization_mask(&hints.resolved_lassos().unwrap(), cfg.height, cfg.width, cfg.patch)
            .map_err(|e| e.to_string())?;
        let base = model.forward(&gray, &hints, &mask).map_err(|e| e.to_string())?;
        let mut moved = hints.clone();
        moved.hints[j].a += rng.random_range(5.0..60.0);
        moved.hints[j].b -= rng.random_range(5.0..60.0);
        let out = model.forward(&gray, &moved, &mask).map_err(|e| e.to_string())?;

        let cells = mask.row(j + 1);
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let i = base.index(y, x);
                let inside = cells[(y / cfg.patch) * gw + x / cfg.patch];
                let same = base.a[i].to_bits() == out.a[i].to_bits() && base.b[i].to_bits() == out.b[i].to_bits();
                if inside {
                    changed_inside += usize::from(!same);
                } else {
                    check(same, || format!("case {case}: pixel ({y},{x}) outside hint {j}'s cells changed"))?;
                }
            }
        }
        let _ = gh;
    }
    check(changed_inside > 0, || "perturbations never changed any pixel".into())?;
    Ok(format!("100 cases exact outside the lasso cells ({changed_inside} inside pixels moved)"))
}

fn a5_collapse_mitigation() -> Outcome {
    let seed = 1;
    let cfg = ModelConfig::toy();
    let model = Model::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    let train = TrainConfig {
        steps: 2000,
        lr: 1e-3,
        seed,
        ..Default::default()
    };
    let data = gen_toy_shapes(&ToyShapeSpec {
        count: 1024,
        seed,
        ..Default::default()
    });
    let mut trainer = Trainer::new(model, train).map_err(|e| e.to_string())?;
    let losses = trainer
        .run(|r| data[r.random_range(0..data.len())].clone(), |_, _| {})
        .map_err(|e| e.to_string())?;
    let head = losses[..100].iter().sum::<f64>() / 100.0;
    let tail = losses[losses.len() - 100..].iter().sum::<f64>() / 100.0;

    let sources = gen_toy_shapes(&ToyShapeSpec {
        width: cfg.width / 2,
        height: cfg.height / 2,
        count: 20,
        shapes: 2,
        seed: 777,
        ..Default::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(778);
    let cases: Vec<_> = sources
        .iter()
        .map(|src| {
            let grid = make_color_collapse_grid(&lab_to_rgb(src), &mut rng);
            let pairs = sample_point_pairs(&grid, 1, &mut rng);
            (grid, pairs)
        })
        .collect();
    let with = evaluate_collapse(&trainer.model, &cases, CollapseLassos::Quadrant).map_err(|e| e.to_string())?;
    let without = evaluate_collapse(&trainer.model, &cases, CollapseLassos::WholeImage).map_err(|e| e.to_string())?;
    let ratio = with.leakage / without.leakage;
    let detail = format!(
        "loss {head:.4} -> {tail:.4}; leakage {:.3} vs {:.3} (ratio {ratio:.3}); PSNR {:.3} vs {:.3} dB; error outside own quadrant {:.2} vs {:.2}",
        with.leakage, without.leakage, with.psnr, without.psnr, with.error_outside, without.error_outside
    );
    check(ratio <= 0.5, || format!("leakage ratio above 0.5: {detail}"))?;
    check(with.psnr >= without.psnr, || format!("PSNR with lassos is lower: {detail}"))?;
    Ok(detail)
}

/// Pearson chi-square statistic of `counts` against a uniform expectation.
fn chi_square(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

fn critical(bins: usize) -> f64 {
    ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.99)
}

fn a6_simulation_distributions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let gt = LabImage::filled(32, 32, [50.0, 10.0, -10.0]);
    let mut counts = vec![0u64; 151];
    for _ in 0..10_000 {
        counts[simulate_hints(&gt, &mut rng, 150).len()] += 1;
    }
    let stat_h = chi_square(&counts);
    check(stat_h < critical(151), || format!("hint counts: chi2 {stat_h:.1} >= {:.1}", critical(151)))?;

    let (w, h) = (48, 40);
    let mut hints = HintSet::new();
    for _ in 0..10_000 {
        hints.push(
            ColorHint { y: rng.random_range(0..h), x: rng.random_range(0..w), a: 0.0, b: 0.0 },
            None,
        );
    }
    let (with_lassos, extents) = simulate_lassos_with_extents(&hints, w, h, &mut rng, 4, 64);
    let (mut ey, mut ex) = (vec![0u64; 61], vec![0u64; 61]);
    for &(a, b) in &extents {
        ey[a - 4] += 1;
        ex[b - 4] += 1;
    }
    let (sy, sx) = (chi_square(&ey), chi_square(&ex));
    check(sy < critical(61) && sx < critical(61), || {
        format!("lasso extents: chi2 {sy:.1}/{sx:.1} >= {:.1}", critical(61))
    })?;
    for (hint, lasso) in with_lassos.hints.iter().zip(&with_lassos.lassos) {
        let lasso = lasso.as_ref().ok_or("hint without lasso")?;
        check(lasso.contains(hint.y, hint.x), || format!("lasso {lasso:?} misses hint {hint:?}"))?;
    }
    Ok(format!(
        "chi2 hints {stat_h:.1} (crit {:.1}), extents {sy:.1}/{sx:.1} (crit {:.1}), 10000/10000 lassos contain their hint",
        critical(151),
        critical(61)
    ))
}

fn a7_color_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for _ in 0..10_000 {
        let px: [u8; 3] = [rng.random(), rng.random(), rng.random()];
        let back = lab_pixel_to_rgb(rgb_pixel_to_lab(px));
        for c in 0..3 {
            check((back[c] as i16 - px[c] as i16).abs() <= 1, || format!("{px:?} -> {back:?}"))?;
        }
    }
    let mut worst = 0.0f64;
    for v in 0..=255u8 {
        let lab = rgb_pixel_to_lab([v, v, v]);
        worst = worst.max(lab[1].abs()).max(lab[2].abs());
    }
    check(worst <= 0.01, || format!("gray chroma {worst}"))?;
    Ok(format!("10000 pixels within 1; max gray |a|,|b| = {worst:.1e}"))
}

fn a8_mask_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for case in 0..1000 {
        let (w, h, p) = (32, 32, [4, 8][rng.random_range(0..2)]);
        let (a, b) = if case % 2 == 0 {
            let a = random_rect(&mut rng, w, h);
            let b = RectLasso {
                y0: a.y0.saturating_sub(rng.random_range(0..8)),
                x0: a.x0.saturating_sub(rng.random_range(0..8)),
                y1: (a.y1 + rng.random_range(0..8)).min(h - 1),
                x1: (a.x1 + rng.random_range(0..8)).min(w - 1),
            };
            (Lasso::Rect(a), Lasso::Rect(b))
        } else {
            let a = random_mask(&mut rng, w, h, 0.02);
            let extra = random_mask(&mut rng, w, h, 0.02);
            let bits = a.bits.iter().zip(&extra.bits).map(|(x, y)| *x || *y).collect();
            (Lasso::Mask(a), Lasso::Mask(MaskLasso { width: w, height: h, bits }))
        };
        let ta = lasso_to_token_mask(&a, h, w, p).map_err(|e| e.to_string())?;
        let tb = lasso_to_token_mask(&b, h, w, p).map_err(|e| e.to_string())?;
        check(ta.iter().zip(&tb).all(|(x, y)| !x || *y), || format!("case {case}: A not within B"))?;
    }
    Ok("1000 nested pairs".into())
}

fn srgb_l(px: [u8; 3]) -> f64 {
    rgb_pixel_to_lab(px)[0]
}

/// L change from moving each channel by half a code value, to first order.
fn l_rounding_bound(px: [u8; 3]) -> f64 {
    let mut total = 0.0;
    for c in 0..3 {
        let (mut lo, mut hi) = (px, px);
        lo[c] = lo[c].saturating_sub(1);
        hi[c] = hi[c].saturating_add(1);
        let span = (hi[c] - lo[c]) as f64;
        total += 0.5 * (srgb_l(hi) - srgb_l(lo)).abs() / span;
    }
    total
}

fn a9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        dim: 16,
        heads: 2,
        mlp_hidden: 32,
        depth: 2,
        ..ModelConfig::toy()
    };
    let model = Model::init(cfg, &mut ChaCha8Rng::seed_from_u64(909)).map_err(|e| e.to_string())?;
    let path = dir.path().join("toy.lcc");
    checkpoint::save(&model, &path).map_err(|e| e.to_string())?;
    let loaded = checkpoint::load(&path).map_err(|e| e.to_string())?;
    for ((name, a), (_, b)) in model.params.named().zip(loaded.params.named()) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        check(bits(a) == bits(b), || format!("{name} changed on reload"))?;
    }
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    check(checkpoint::to_bytes(&loaded).map_err(|e| e.to_string())? == bytes, || "re-serialized bytes differ".into())?;

    let state = service::new_state();
    service::load_checkpoint(&state, &path).map_err(|e| e.to_string())?;
    let app = service::router(state);

    let mut rng = ChaCha8Rng::seed_from_u64(910);
    let (w, h) = (45, 30);
    let mut img = RgbImage::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let v = ((y * 255) / h) as u8 / 2 + rng.random_range(0..100);
            img.set_pixel(y, x, [v, v, v]);
        }
    }
    let request = serde_json::json!({
        "image": B64.encode(encode_png(&img).map_err(|e| e.to_string())?),
        "hints": {"hints": [
            {"x": 5, "y": 4, "a": 60.0, "b": 30.0, "lasso": {"kind": "rect", "x0": 0, "y0": 0, "x1": 20, "y1": 14}},
            {"x": 40, "y": 25, "a": -50.0, "b": 45.0},
        ]},
    })
    .to_string();

    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let mut images = Vec::new();
    for _ in 0..2 {
        let req = Request::builder()
            .method("POST")
            .uri("/v1/colorize")
            .header("content-type", "application/json")
            .body(Body::from(request.clone()))
            .unwrap();
        let (status, body) = rt.block_on(async {
            let resp = app.clone().oneshot(req).await.unwrap();
            let status = resp.status();
            (status, resp.into_body().collect().await.unwrap().to_bytes())
        });
        check(status == StatusCode::OK, || format!("status {status}: {}", String::from_utf8_lossy(&body)))?;
        let json: serde_json::Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        images.push(json["image"].as_str().unwrap_or_default().to_string());
    }
    check(images[0] == images[1], || "two identical requests gave different PNGs".into())?;

    let out = decode_image(&B64.decode(&images[0]).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    check((out.width, out.height) == (w, h), || format!("response is {}x{}", out.width, out.height))?;
    let mut worst = 0.0f64;
    let mut colored = 0;
    for y in 0..h {
        for x in 0..w {
            let (pi, po) = (img.pixel(y, x), out.pixel(y, x));
            let err = (srgb_l(pi) - srgb_l(po)).abs();
            worst = worst.max(err);
            colored += usize::from(po[0] != po[1] || po[1] != po[2]);
            check(err <= l_rounding_bound(po) + 1e-6, || {
                format!("L at ({y},{x}): {:.3} vs {:.3}", srgb_l(pi), srgb_l(po))
            })?;
        }
    }
    Ok(format!(
        "reload bit-exact, PNGs identical, max L deviation {worst:.3} (within 8-bit rounding), {colored} colored pixels"
    ))
}

fn a10_huber_values() -> Outcome {
    for (z, want) in [(0.0f32, 0.0f32), (0.5, 0.125), (2.0, 1.5), (-0.5, 0.125), (-2.0, 1.5)] {
        let got = huber_scalar(z);
        check(got == want, || format!("huber({z}) = {got}, want {want}"))?;
    }
    let gt = LabImage::filled(1, 1, [50.0, 0.0, 0.0]);
    for (d, want) in [(0.0f32, 0.0f64), (0.5, 0.125), (2.0, 1.5)] {
        let pred = gt.with_ab(vec![d], vec![d]).unwrap();
        let got = huber_loss(&pred, &gt, 1.0).map_err(|e| e.to_string())?;
        check(got == want, || format!("huber_loss at z={d}: {got}, want {want}"))?;
    }
    Ok("0 -> 0, 0.5 -> 0.125, 2 -> 1.5 exactly".into())
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("A1", "mask oracle equivalence", a1_mask_oracle),
        ("A2", "attention locality", a2_attention_locality),
        ("A3", "gradient check", a3_gradient_check),
        ("A4", "one-block confinement", a4_one_block_confinement),
        ("A5", "collapse mitigation", a5_collapse_mitigation),
        ("A6", "simulation distributions", a6_simulation_distributions),
        ("A7", "color round trip", a7_color_round_trip),
        ("A8", "mask monotonicity", a8_mask_monotonicity),
        ("A9", "checkpoint and service determinism", a9_determinism),
        ("A10", "huber values", a10_huber_values),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id} {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name} ({secs:.1}s): {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
