use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use sirlab::meshx::read_obj;
use sirlab::scene::io::write_voxel;
use sirlab::tasks::{voxel_task, TaskShape};
use sirlab_cli::{run, Cli};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sirlab(args: &[&str]) -> PathBuf {
    let mut full = vec!["sirlab"];
    full.extend_from_slice(args);
    run(&Cli::try_parse_from(full).expect("flags parse")).expect("command succeeds")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn gen_writes_one_row_per_outer_iteration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("stable123_like.json");
    let out = tmp.path().to_str().unwrap();
    let dir = sirlab(&["gen", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(csv_rows(&dir.join("trace.csv")).len(), 30);
    let s = summary(&dir);
    assert_eq!(s["totalNfe"], s["expectedNfe"]);
    for name in ["manifest.json", "config.json", "scene.bin", "trace_timed.csv", "renders/sheet.png"] {
        assert!(dir.join(name).exists(), "{name} missing");
    }
    let renders = fs::read_dir(dir.join("renders")).unwrap().count();
    assert_eq!(renders, 10);
}

#[test]
fn gen_with_zero_iterations_keeps_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = sirlab(&["gen", "--k", "0", "--image-format", "ppm", "--out", tmp.path().to_str().unwrap()]);
    assert!(csv_rows(&dir.join("trace.csv")).is_empty());
    let s = summary(&dir);
    assert_eq!(s["iterations"], 0);
    assert_eq!(s["psnr"], s["initPsnr"]);
    let ppm = fs::read(dir.join("renders/view_0_az000.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n32 1\n255\n"));
}

#[test]
fn default_flatland_run_clears_the_psnr_floor() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = sirlab(&["gen", "--out", tmp.path().to_str().unwrap()]);
    let s = summary(&dir);
    assert!(s["finalPsnr"].as_f64().unwrap() >= 20.0, "{s}");
}

#[test]
fn overrides_reach_the_written_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = sirlab(&[
        "gen", "--k", "2", "--i", "3", "--views", "2", "--eta", "0.25", "--cfg", "1", "--forward", "noise",
        "--seed", "9", "--shape", "ring", "--out", tmp.path().to_str().unwrap(),
    ]);
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["k"], 2);
    assert_eq!(cfg["i"], 3);
    assert_eq!(cfg["nViews"], 2);
    assert_eq!(cfg["eta"], 0.25);
    assert_eq!(cfg["cfgScale"], 1.0);
    assert_eq!(cfg["forwardKind"], "noiseOnly");
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["task"]["shape"], "ring");
    let rows = csv_rows(&dir.join("trace.csv"));
    assert!(rows.iter().all(|r| r[1] == r[2]), "noise-only rows report t1 = t2");
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let a = sirlab(&["gen", "--k", "6", "--seed", "4", "--out", out]);
    let b = sirlab(&["gen", "--k", "6", "--seed", "4", "--out", out]);
    assert_ne!(a, b);
    for name in ["trace.csv", "scene.bin", "renders/sheet.png", "renders/view_3_az135.png"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn sds_timings_add_up() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let dir = sirlab(&["sds", "--updates", "60", "--cfg", "1", "--out", out]);
    let rows = csv_rows(&dir.join("sds_timings.csv"));
    assert_eq!(rows.len(), 60);
    let mut phases = 0.0;
    let mut total = 0.0;
    for (u, r) in rows.iter().enumerate() {
        let v: Vec<f64> = r.iter().map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[1] as usize, u + 1, "one predictor call per update at unit guidance");
        phases += v[2..7].iter().sum::<f64>();
        total += v[7];
        assert_eq!(v[5], 0.0, "pixel mode spends nothing in the codec");
    }
    assert!((phases - total).abs() <= 0.05 * total, "{phases} vs {total}");
    assert_eq!(csv_rows(&dir.join("sds_trace.csv")).len(), 60);
}

#[test]
fn latent_sds_spends_time_in_the_codec() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let dir = sirlab(&["sds", "--updates", "10", "--space", "latent", "--out", out]);
    let s = summary(&dir);
    assert!(s["totals"]["codecMs"].as_f64().unwrap() > 0.0);
    assert_eq!(s["totalNfe"], 20);
}

fn write_sweep(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("sweep.json");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn ablate_views_has_a_row_per_value_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = write_sweep(
        tmp.path(),
        r#"{"base": {"k": 2, "i": 3}, "axis": "n_views", "values": [2, 4, 8], "seeds": [0, 1, 2, 3, 4]}"#,
    );
    let dir = sirlab(&["ablate", sweep.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    let rows = csv_rows(&dir.join("runs.csv"));
    assert_eq!(rows.len(), 15);
    let agg = csv_rows(&dir.join("summary.csv"));
    assert_eq!(agg.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["2", "4", "8"]);
    assert!(agg.iter().all(|r| r[1] == "5"));
}

#[test]
fn ablate_forward_kinds_report_nfe_and_error() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = write_sweep(
        tmp.path(),
        r#"{"base": {"k": 3, "i": 3}, "axis": "forward_kind", "values": ["noise_only", "inversion_only", "hybrid"], "seeds": [0]}"#,
    );
    let dir = sirlab(&["ablate", sweep.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    let text = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert!(text.starts_with("forward_kind,runs,mean_nfe,mean_psnr,mean_mse"));
    let nfe: Vec<f64> = csv_rows(&dir.join("summary.csv")).iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(nfe[0] < nfe[2] && nfe[0] < nfe[1], "noise-only skips the inversion calls: {nfe:?}");
}

#[test]
fn ablate_space_reports_iteration_time() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = write_sweep(
        tmp.path(),
        r#"{"base": {"k": 2, "i": 3, "task": {"backend": "voxel", "shape": "sphere", "side": 8}}, "axis": "space", "values": ["pixel", "latent"], "seeds": [0]}"#,
    );
    let dir = sirlab(&["ablate", sweep.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    let agg = csv_rows(&dir.join("summary.csv"));
    assert_eq!(agg.len(), 2);
    assert!(agg.iter().all(|r| r[6].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn unknown_axis_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = write_sweep(tmp.path(), r#"{"axis": "lr", "values": [1], "seeds": [0]}"#);
    let cli = Cli::try_parse_from(["sirlab", "ablate", sweep.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(run(&cli.unwrap()).is_err());
}

#[test]
fn mesh_of_a_sphere_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("sphere.bin");
    write_voxel(&scene, &voxel_task(TaskShape::Sphere, 16)).unwrap();
    let out = tmp.path().to_str().unwrap();
    let low = sirlab(&["mesh", scene.to_str().unwrap(), "--out", out]);
    let high = sirlab(&["mesh", scene.to_str().unwrap(), "--mc-threshold", "15", "--out", out]);
    let a = read_obj(&low.join("mesh.obj")).unwrap();
    let b = read_obj(&high.join("mesh.obj")).unwrap();
    assert!(!a.is_empty() && !b.is_empty());
    assert_ne!(a.vertices.len(), b.vertices.len());
    assert_eq!(summary(&high)["threshold"], 15.0);
    a.validate().unwrap();
}

#[test]
fn mesh_rejects_a_garbage_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("junk.bin");
    fs::write(&scene, b"not a scene").unwrap();
    let cli = Cli::try_parse_from(["sirlab", "mesh", scene.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]).unwrap();
    assert!(run(&cli).is_err());
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"i": 0}"#).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_sirlab"))
        .args(["gen", "--config", bad.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()])
        .env("RUST_LOG", "error")
        .status()
        .unwrap();
    assert!(!status.success());
    let ok = Command::new(env!("CARGO_BIN_EXE_sirlab"))
        .args(["gen", "--k", "1", "--out", tmp.path().to_str().unwrap()])
        .env("RUST_LOG", "error")
        .env("SIRLAB_THREADS", "2")
        .output()
        .unwrap();
    assert!(ok.status.success());
    let dir = PathBuf::from(String::from_utf8(ok.stdout).unwrap().trim());
    assert!(dir.join("manifest.json").exists());
}

#[test]
fn every_shipped_config_parses() {
    for entry in fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") {
            sirlab_cli::commands::load_config(Some(&p), &Default::default()).unwrap();
        }
    }
    for entry in fs::read_dir(configs().join("sweeps")).unwrap() {
        sirlab_cli::commands::Sweep::load(&entry.unwrap().path()).unwrap();
    }
}
