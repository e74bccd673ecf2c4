use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use lora_curve::checkpoint::Checkpoint;
use lora_curve::curve::{ControlPointSet, CurveConfig, CurveMode};
use lora_curve::network::{BaseWeights, LoraNetwork, NetworkSpec};
use lora_curve_ffi::*;
use ndarray::Array1;

fn write_checkpoint(dir: &Path, spec: NetworkSpec) -> (PathBuf, LoraNetwork, ControlPointSet) {
    let net = LoraNetwork::new(spec.clone(), BaseWeights::random(&spec, 1).unwrap()).unwrap();
    let cfg = CurveConfig::new(3, 1).unwrap();
    let d = net.adapter_dim();
    let pts = (0..cfg.num_control_points())
        .map(|i| Array1::from_shape_fn(d, |j| ((i * 7 + j) as f64 * 0.37).sin() * 0.2))
        .collect();
    let points = ControlPointSet::new(cfg, pts, CurveMode::Free).unwrap();
    let path = dir.join("c.lcrv");
    Checkpoint::new(&net, points.clone(), None).save(&path).unwrap();
    (path, net, points)
}

fn load(path: &Path) -> *mut LcCurve {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { lc_curve_load(c.as_ptr(), &mut h) }, LcStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    let p = lc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn handle_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, net, points) = write_checkpoint(dir.path(), NetworkSpec::mlp(3, &[8], 4));
    let h = load(&path);
    unsafe {
        assert_eq!(lc_curve_dim(h), net.adapter_dim());
        assert_eq!(lc_curve_num_segments(h), 2);
        assert_eq!(lc_curve_input_dim(h), 3);
        assert_eq!(lc_curve_num_classes(h), 4);

        let mut theta = vec![0.0; net.adapter_dim()];
        assert_eq!(lc_curve_eval(h, 1.3, theta.as_mut_ptr(), theta.len()), LcStatus::Ok);
        assert_eq!(theta, points.eval(1.3).unwrap().to_vec());

        let x = [0.1, -0.4, 2.0, 1.0, 0.0, -1.0];
        let mut probs = [0.0; 8];
        assert_eq!(lc_curve_predict(h, 0.7, x.as_ptr(), 2, 3, probs.as_mut_ptr(), 8), LcStatus::Ok);
        let feats = lora_curve::data::Features::Dense(ndarray::Array2::from_shape_vec((2, 3), x.to_vec()).unwrap());
        let want = net.predict(&points.eval(0.7).unwrap(), &feats).unwrap();
        assert_eq!(probs.to_vec(), want.iter().copied().collect::<Vec<_>>());

        let mut mix = [0.0; 8];
        let mut mi = [0.0; 2];
        assert_eq!(
            lc_curve_bma_predict(h, 0, x.as_ptr(), 2, 3, mix.as_mut_ptr(), 8, mi.as_mut_ptr()),
            LcStatus::Ok
        );
        let gp = lora_curve::bma::bma_predict(&net, &points, &feats, None, lora_curve::bma::Temperature::Infinite, None)
            .unwrap();
        assert_eq!(mix.to_vec(), gp.mixture().iter().copied().collect::<Vec<_>>());
        assert!(mi.iter().all(|&v| v >= 0.0));

        // wrong output size
        assert_eq!(
            lc_curve_predict(h, 0.7, x.as_ptr(), 2, 3, probs.as_mut_ptr(), 7),
            LcStatus::DimensionMismatch
        );
        assert!(last_error().contains("8"));
        assert_eq!(lc_curve_eval(h, 5.0, theta.as_mut_ptr(), theta.len()), LcStatus::InvalidArgument);
        lc_curve_free(h);
    }
}

#[test]
fn token_networks_take_integer_ids() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _, _) = write_checkpoint(dir.path(), NetworkSpec::attention(3, 4, 6, &[8], 2));
    let h = load(&path);
    unsafe {
        assert_eq!(lc_curve_input_dim(h), 4);
        let x = [0.0, 1.0, 2.0, 1.0];
        let mut probs = [0.0; 2];
        assert_eq!(lc_curve_predict(h, 0.5, x.as_ptr(), 1, 4, probs.as_mut_ptr(), 2), LcStatus::Ok);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let bad = [0.0, 1.5, 2.0, 1.0];
        assert_eq!(
            lc_curve_predict(h, 0.5, bad.as_ptr(), 1, 4, probs.as_mut_ptr(), 2),
            LcStatus::InvalidArgument
        );
        let out_of_vocab = [0.0, 1.0, 7.0, 1.0];
        assert_eq!(
            lc_curve_predict(h, 0.5, out_of_vocab.as_ptr(), 1, 4, probs.as_mut_ptr(), 2),
            LcStatus::InvalidArgument
        );
        lc_curve_free(h);
    }
}

#[test]
fn load_errors() {
    let mut h = ptr::null_mut();
    let missing = CString::new("/no/such/file.lcrv").unwrap();
    assert_eq!(unsafe { lc_curve_load(missing.as_ptr(), &mut h) }, LcStatus::MissingFile);
    assert!(h.is_null());
    assert!(last_error().contains("/no/such/file.lcrv"));
    assert_eq!(unsafe { lc_curve_load(ptr::null(), &mut h) }, LcStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.lcrv");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    std::fs::write(dir.path().join("junk.json"), b"{}").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { lc_curve_load(junk.as_ptr(), &mut h) }, LcStatus::Format);

    unsafe {
        lc_curve_free(ptr::null_mut());
        assert_eq!(lc_curve_dim(ptr::null()), 0);
        let mut out = [0.0];
        assert_eq!(lc_curve_eval(ptr::null(), 0.0, out.as_mut_ptr(), 1), LcStatus::NullPointer);
    }
}

#[test]
fn numeric_helpers() {
    unsafe {
        let mut b = 0.0;
        assert_eq!(lc_bernstein(1, 2, 0.5, &mut b), LcStatus::Ok);
        assert_eq!(b, 0.5);
        assert_eq!(lc_bernstein(3, 2, 0.5, &mut b), LcStatus::InvalidArgument);

        let ll = [-10.0, -11.0, -12.0];
        let mut w = [0.0; 3];
        assert_eq!(lc_temperature_weights(ll.as_ptr(), 3, f64::INFINITY, w.as_mut_ptr()), LcStatus::Ok);
        assert_eq!(w, [1.0 / 3.0; 3]);
        assert_eq!(lc_temperature_weights(ll.as_ptr(), 3, 1.0, w.as_mut_ptr()), LcStatus::Ok);
        let z: f64 = [0.0f64, -1.0, -2.0].iter().map(|v| v.exp()).sum();
        assert!((w[0] - 1.0 / z).abs() < 1e-15);
        assert_eq!(lc_temperature_weights(ll.as_ptr(), 3, 0.0, w.as_mut_ptr()), LcStatus::InvalidArgument);
        assert_eq!(lc_temperature_weights(ll.as_ptr(), 3, -1.0, w.as_mut_ptr()), LcStatus::InvalidArgument);

        // two grid points, one example, two classes, full disagreement
        let probs = [1.0, 0.0, 0.0, 1.0];
        let weights = [0.5, 0.5];
        let mut mean = 0.0;
        let mut per = [0.0];
        assert_eq!(
            lc_mutual_information(probs.as_ptr(), 2, 1, 2, weights.as_ptr(), &mut mean, per.as_mut_ptr()),
            LcStatus::Ok
        );
        assert!((mean - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(per[0], mean);
        let bad_weights = [0.7, 0.7];
        assert_eq!(
            lc_mutual_information(probs.as_ptr(), 2, 1, 2, bad_weights.as_ptr(), &mut mean, ptr::null_mut()),
            LcStatus::InvalidArgument
        );

        // confidence 0.8 and 0.6, one of them right
        let p = [0.8, 0.2, 0.4, 0.6];
        let labels = [0u32, 0];
        let mut ece = 0.0;
        assert_eq!(
            lc_expected_calibration_error(p.as_ptr(), 2, 2, labels.as_ptr(), 10, &mut ece),
            LcStatus::Ok
        );
        assert!((ece - 0.5 * (0.2 + 0.6)).abs() < 1e-12);
        let labels = [0u32, 2];
        assert_eq!(
            lc_expected_calibration_error(p.as_ptr(), 2, 2, labels.as_ptr(), 10, &mut ece),
            LcStatus::InvalidArgument
        );
    }
}

/// Builds a C program against the generated header and the static library.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let target = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target.join("liblora_curve_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let (ck, _, _) = write_checkpoint(dir.path(), NetworkSpec::mlp(2, &[4], 3));
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <math.h>
#include <stdio.h>
#include "lora_curve.h"
int main(int argc, char **argv) {
    LcCurve *c = NULL;
    if (lc_curve_load(argv[1], &c) != LC_STATUS_OK) { fprintf(stderr, "%s\n", lc_last_error()); return 1; }
    double x[2] = {0.5, -0.5}, p[3];
    if (lc_curve_predict(c, 1.5, x, 1, 2, p, 3) != LC_STATUS_OK) return 2;
    if (fabs(p[0] + p[1] + p[2] - 1.0) > 1e-12) return 3;
    if (lc_curve_load("/missing.lcrv", &c) != LC_STATUS_MISSING_FILE) return 4;
    lc_curve_free(c);
    printf("%zu\n", lc_curve_num_segments(NULL));
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = std::process::Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&exe).arg(&ck).output().unwrap();
    assert!(out.status.success(), "exit {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0");
}

fn which_cc() -> Result<String, ()> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match std::process::Command::new(&cc).arg("--version").output() {
        Ok(o) if o.status.success() => Ok(cc),
        _ => Err(()),
    }
}
