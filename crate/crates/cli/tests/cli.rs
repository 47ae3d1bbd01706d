use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mvtv(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvtv"))
        .args(args)
        .current_dir(dir)
        .env("MVTV_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mvtv(dir, args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn tmp() -> (TempDir, PathBuf) {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().to_path_buf();
    (d, p)
}

#[test]
fn help_exits_zero_for_every_command() {
    let (_d, dir) = tmp();
    ok(&dir, &["--help"]);
    for cmd in [
        "space-info", "phantom", "noise", "denoise", "eval", "w1", "tv", "check-norms", "export-plot",
    ] {
        ok(&dir, &[cmd, "--help"]);
    }
}

#[test]
fn space_info_reports_cells() {
    let (_d, dir) = tmp();
    let v = json(&ok(&dir, &["space-info", "--space", "circle:8"]));
    assert_eq!(v["cells"], 8);
    let v = json(&ok(&dir, &["space-info", "--space", "icosphere:1"]));
    assert_eq!(v["cells"], 42);
    assert_eq!(code(&mvtv(&dir, &["space-info", "--space", "torus:2"])), 2);
}

#[test]
fn phantoms_are_deterministic() {
    let (_d, dir) = tmp();
    ok(&dir, &["phantom", "--kind", "crossing", "--snr", "10", "--seed", "3", "--out", "a.mvi"]);
    ok(&dir, &["phantom", "--kind", "crossing", "--snr", "10", "--seed", "3", "--out", "b.mvi"]);
    assert_eq!(std::fs::read(dir.join("a.mvi")).unwrap(), std::fs::read(dir.join("b.mvi")).unwrap());
    let gt: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("a.gt.json")).unwrap()).unwrap();
    assert_eq!(gt["shape"], serde_json::json!([15, 15]));
    assert_eq!(gt["directions"].as_array().unwrap().len(), 225);
}

#[test]
fn twopoint_phantom_and_tv() {
    let (_d, dir) = tmp();
    ok(&dir, &["phantom", "--kind", "twopoint", "--out", "tp.mvi"]);
    let v = json(&ok(&dir, &["tv", "tp.mvi"]));
    // two jumps of W1 distance 1
    assert!((v["value"].as_f64().unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn denoise_constant_image_is_fixed_point() {
    let (_d, dir) = tmp();
    ok(&dir, &[
        "phantom", "--kind", "rotating", "--level", "1", "--n", "6", "--angle-range", "0", "--kappa", "4",
        "--out", "c.mvi",
    ]);
    for model in ["w1tv", "l2tv"] {
        let out = format!("{model}.mvi");
        ok(&dir, &["denoise", "c.mvi", "--model", model, "--lambda", "2", "--out", &out, "-q"]);
        let v = json(&ok(&dir, &["w1", "c.mvi", &out]));
        assert!(v["max"].as_f64().unwrap() < 1e-6, "{model}: {v}");
        let report: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.join(format!("{model}.report.json"))).unwrap()).unwrap();
        assert_eq!(report["termination"], "Converged");
    }
}

#[test]
fn denoise_exit_codes() {
    let (_d, dir) = tmp();
    ok(&dir, &["phantom", "--kind", "rotating", "--level", "1", "--out", "r.mvi"]);
    let lambda0 = mvtv(&dir, &["denoise", "r.mvi", "--model", "w1tv", "--lambda", "0", "--out", "o.mvi"]);
    assert_eq!(code(&lambda0), 2);
    assert!(!dir.join("o.mvi").exists());
    let missing = mvtv(&dir, &["denoise", "nope.mvi", "--model", "w1tv", "--lambda", "1", "--out", "o.mvi"]);
    assert_eq!(code(&missing), 4);
    let short = mvtv(&dir, &[
        "denoise", "r.mvi", "--model", "w1tv", "--lambda", "1", "--max-iter", "20", "--check-every", "10",
        "--out", "o.mvi", "-q",
    ]);
    assert_eq!(code(&short), 3);
    assert!(dir.join("o.mvi").exists() && dir.join("o.report.json").exists());
    let bad_model = mvtv(&dir, &["denoise", "r.mvi", "--model", "l1tv", "--lambda", "1", "--out", "o.mvi"]);
    assert_eq!(code(&bad_model), 2);
    let threads = mvtv(&dir, &["--threads", "0", "space-info"]);
    assert_eq!(code(&threads), 2);
}

#[test]
fn corrupted_input_is_rejected() {
    let (_d, dir) = tmp();
    ok(&dir, &["phantom", "--kind", "rotating", "--level", "1", "--out", "r.mvi"]);
    let mut bytes = std::fs::read(dir.join("r.mvi")).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(dir.join("bad.mvi"), bytes).unwrap();
    let out = mvtv(&dir, &["tv", "bad.mvi"]);
    assert_ne!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("payload length"));
}

#[test]
fn noise_then_eval() {
    let (_d, dir) = tmp();
    ok(&dir, &["phantom", "--kind", "rotating", "--n", "8", "--out", "r.mvi"]);
    ok(&dir, &["noise", "r.mvi", "--snr", "10", "--seed", "1", "--out", "n.mvi"]);
    let clean = json(&ok(&dir, &["eval", "r.mvi", "--gt", "r.gt.json"]));
    let noisy = json(&ok(&dir, &["eval", "n.mvi", "--gt", "r.gt.json", "--reference", "r.mvi"]));
    let mean = |v: &serde_json::Value| v["angular_error"]["mean"].as_f64().unwrap();
    assert!(mean(&clean) >= 0.0 && mean(&clean) <= 90.0);
    assert!(mean(&noisy) > 0.0);
    assert!(noisy["w1_error"]["total"].as_f64().unwrap() > 0.0);
    assert_eq!(code(&mvtv(&dir, &["noise", "r.mvi", "--snr", "0", "--out", "x.mvi"])), 2);
}

#[test]
fn distance_curve_is_almost_linear() {
    let (_d, dir) = tmp();
    ok(&dir, &["phantom", "--kind", "rotating", "--n", "10", "--angle-range", "90", "--out", "row.mvi"]);
    ok(&dir, &["export-plot", "--what", "distance-curve", "row.mvi", "--out", "dc.csv"]);
    let (h, rows) = read_csv(&dir.join("dc.csv"));
    assert_eq!(rows.len(), 10);
    let r = pearson(&column(&h, &rows, "angle_deg"), &column(&h, &rows, "w1"));
    assert!(r >= 0.99, "pearson {r}");
}

#[test]
fn gap_trace_of_converged_run() {
    let (_d, dir) = tmp();
    ok(&dir, &["phantom", "--kind", "twopoint", "--out", "tp.mvi"]);
    ok(&dir, &["denoise", "tp.mvi", "--model", "w1tv", "--lambda", "0.5", "--check-every", "100", "--out", "o.mvi", "-q"]);
    ok(&dir, &["export-plot", "--what", "gap-trace", "o.report.json", "--out", "gap.csv"]);
    let (h, rows) = read_csv(&dir.join("gap.csv"));
    let gaps = column(&h, &rows, "gap_rel");
    assert!(*gaps.last().unwrap() <= 1e-5);
    ok(&dir, &["export-plot", "--what", "odf-profile", "tp.mvi", "o.mvi", "--out", "odf.csv"]);
    let (_, rows) = read_csv(&dir.join("odf.csv"));
    assert_eq!(rows.len(), 2 * 16 * 2);
}

#[test]
fn export_plot_argument_errors() {
    let (_d, dir) = tmp();
    assert_eq!(code(&mvtv(&dir, &["export-plot", "--what", "gap-trace", "--out", "x.csv"])), 2);
    assert_eq!(code(&mvtv(&dir, &["export-plot", "--what", "histogram", "a", "--out", "x.csv"])), 2);
}

#[test]
fn check_norms_passes() {
    let (_d, dir) = tmp();
    let v = json(&ok(&dir, &["check-norms", "--samples", "500"]));
    assert_eq!(v["all_passed"], true);
}

/// W1-TV keeps sharper lobes than L2-TV on the rotating row.
#[test]
fn w1tv_concentrates_more_than_l2tv() {
    let (_d, dir) = tmp();
    ok(&dir, &["phantom", "--kind", "rotating", "--level", "1", "--n", "12", "--out", "row.mvi"]);
    for (model, lambda) in [("l2tv", "5"), ("w1tv", "10")] {
        let out = format!("{model}.mvi");
        let run = mvtv(&dir, &[
            "denoise", "row.mvi", "--model", model, "--lambda", lambda, "--max-iter", "20000", "--check-every", "500",
            "--out", &out, "-q",
        ]);
        assert!(matches!(code(&run), 0 | 3), "{}", String::from_utf8_lossy(&run.stderr));
    }
    ok(&dir, &["export-plot", "--what", "odf-profile", "l2tv.mvi", "w1tv.mvi", "--out", "odf.csv"]);
    let (h, rows) = read_csv(&dir.join("odf.csv"));
    let src = h.iter().position(|x| x == "source").unwrap();
    let voxel = column(&h, &rows, "voxel");
    let density = column(&h, &rows, "density");
    let peak = |name: &str| -> f64 {
        let mut best = vec![0.0f64; 12];
        for (i, r) in rows.iter().enumerate() {
            if r[src] == name {
                let v = voxel[i] as usize;
                best[v] = best[v].max(density[i]);
            }
        }
        best.iter().sum::<f64>() / 12.0
    };
    assert!(peak("w1tv.mvi") > peak("l2tv.mvi"));
}
