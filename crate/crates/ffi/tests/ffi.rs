use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use lassocolor::checkpoint;
use lassocolor::model::{Model, ModelConfig};
use lassocolor_ffi::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn saved_model(dir: &Path) -> CString {
    let cfg = ModelConfig {
        dim: 8,
        heads: 2,
        mlp_hidden: 16,
        depth: 2,
        ..ModelConfig::toy()
    };
    let model = Model::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let path = dir.join("m.lcc");
    checkpoint::save(&model, &path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = lcc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn load_colorize_free() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved_model(dir.path());
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(lcc_model_load(path.as_ptr(), &mut handle), LccStatus::Ok);
        assert!(lcc_last_error().is_null());
        let (mut w, mut h) = (0, 0);
        assert_eq!(lcc_model_input_size(handle, &mut w, &mut h), LccStatus::Ok);
        assert_eq!((w, h), (32, 32));

        let rgb = vec![128u8; 40 * 20 * 3];
        let hints = [LccHint {
            y: 3,
            x: 30,
            a: 50.0,
            b: 20.0,
            has_lasso: 1,
            y0: 0,
            x0: 20,
            y1: 19,
            x1: 39,
        }];
        let mut out = vec![0u8; rgb.len()];
        let s = lcc_colorize(handle, rgb.as_ptr(), 40, 20, hints.as_ptr(), 1, 1.0, out.as_mut_ptr(), out.len());
        assert_eq!(s, LccStatus::Ok);
        let mut again = vec![0u8; rgb.len()];
        lcc_colorize(handle, rgb.as_ptr(), 40, 20, hints.as_ptr(), 1, 1.0, again.as_mut_ptr(), again.len());
        assert_eq!(out, again);

        let json = CString::new(r#"{"hints":[{"x":30,"y":3,"a":50,"b":20,"lasso":{"kind":"rect","x0":20,"y0":0,"x1":39,"y1":19}}]}"#).unwrap();
        let mut via_json = vec![0u8; rgb.len()];
        let s = lcc_colorize_json(handle, rgb.as_ptr(), 40, 20, json.as_ptr(), 1.0, via_json.as_mut_ptr(), via_json.len());
        assert_eq!(s, LccStatus::Ok);
        assert_eq!(via_json, out);

        let s = lcc_colorize(handle, rgb.as_ptr(), 40, 20, ptr::null(), 0, 1.0, out.as_mut_ptr(), 10);
        assert_eq!(s, LccStatus::BufferTooSmall);
        assert!(last_error().contains("2400"));

        let bad = [LccHint { y: 25, ..hints[0] }];
        let s = lcc_colorize(handle, rgb.as_ptr(), 40, 20, bad.as_ptr(), 1, 1.0, out.as_mut_ptr(), out.len());
        assert_eq!(s, LccStatus::InvalidArgument);

        lcc_model_free(handle);
        lcc_model_free(ptr::null_mut());
    }
}

#[test]
fn load_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("none.lcc").to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(lcc_model_load(missing.as_ptr(), &mut handle), LccStatus::Io);
        assert!(handle.is_null());
        let junk = dir.path().join("junk.lcc");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(lcc_model_load(junk.as_ptr(), &mut handle), LccStatus::Checkpoint);
        assert!(last_error().contains("magic"));
        assert_eq!(lcc_model_load(ptr::null(), &mut handle), LccStatus::NullPointer);
    }
}

#[test]
fn color_conversions_and_psnr() {
    let rgb = [255u8, 255, 255, 0, 0, 0, 200, 30, 90];
    let mut lab = [0f32; 9];
    let mut back = [0u8; 9];
    unsafe {
        assert_eq!(lcc_rgb_to_lab(rgb.as_ptr(), 3, lab.as_mut_ptr()), LccStatus::Ok);
        assert!((lab[0] - 100.0).abs() < 1e-3 && lab[1].abs() < 1e-3);
        assert_eq!(lab[3], 0.0);
        assert_eq!(lcc_lab_to_rgb(lab.as_ptr(), 3, back.as_mut_ptr()), LccStatus::Ok);
        assert_eq!(back, rgb);

        let (mut db, mut exact) = (0.0, 0);
        assert_eq!(lcc_psnr(rgb.as_ptr(), back.as_ptr(), 3, 1, &mut db, &mut exact), LccStatus::Ok);
        assert_eq!((db, exact), (99.0, 1));
        let other = [254u8, 255, 255, 0, 0, 0, 200, 30, 90];
        lcc_psnr(rgb.as_ptr(), other.as_ptr(), 3, 1, &mut db, &mut exact);
        assert_eq!(exact, 0);
        assert!((db - 10.0 * (255.0f64 * 255.0 * 9.0).log10()).abs() < 1e-9);
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(lcc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/lassocolor.h")).unwrap();
    for name in [
        "lcc_model_load",
        "lcc_model_free",
        "lcc_model_input_size",
        "lcc_colorize",
        "lcc_colorize_json",
        "lcc_rgb_to_lab",
        "lcc_lab_to_rgb",
        "lcc_psnr",
        "lcc_last_error",
        "lcc_version",
        "typedef struct LccModel LccModel",
        "LCC_STATUS_OK = 0",
        "LCC_STATUS_PANIC = 7",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/lassocolor.h");
    let Ok(out) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler on PATH; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
