use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gbt::harness::{bench_csv, cmd_bench, cmd_run, load_case_scene, CaseConfig, HarnessError};
use gbt::parallel::{Mode, TIMING_CSV_HEADER};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn small_city() -> CaseConfig {
    let text = fs::read_to_string(data("city.cfg"))
        .unwrap()
        .replace("n_theta = 64", "n_theta = 32")
        .replace("n_phi = 64", "n_phi = 32")
        .replace("n_obs = 10201", "n_obs = 121")
        .replace("obs_origin = -100,-100,1.5", "obs_origin = -50,-50,1.5")
        .replace("obs_u = 2,0,0", "obs_u = 10,0,0")
        .replace("obs_v = 0,2,0", "obs_v = 0,10,0")
        .replace("obs_nu = 101", "obs_nu = 11")
        .replace("obs_nv = 101", "obs_nv = 11");
    CaseConfig::parse(&text).unwrap()
}

#[test]
fn bundled_configs_parse_and_echo() {
    for name in ["validation.cfg", "free_field.cfg", "city.cfg", "city_table3.cfg"] {
        let cfg = CaseConfig::load(data(name)).unwrap();
        let again = CaseConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(cfg, again, "{name}");
    }
    let free = CaseConfig::load(data("free_field.cfg")).unwrap();
    assert_eq!(free.observers.points().len(), 13586);
    assert_eq!(free.freqs_hz.len(), free.f_s);
}

#[test]
fn bad_configs_are_rejected() {
    let base = fs::read_to_string(data("city.cfg")).unwrap();
    let zero_dt = base.replace("dt_s = 0.0001", "dt_s = 0");
    assert!(matches!(CaseConfig::parse(&zero_dt), Err(HarnessError::Invalid { ref key, .. }) if key == "dt_s"));
    let missing = base.replace("source = 0,0,2", "");
    assert!(matches!(CaseConfig::parse(&missing), Err(HarnessError::MissingKey(ref k)) if k == "source"));
    let unknown = format!("{base}\ncolour = blue\n");
    assert!(matches!(CaseConfig::parse(&unknown), Err(HarnessError::UnknownKey(_))));
    let count = base.replace("n_obs = 10201", "n_obs = 10200");
    assert!(CaseConfig::parse(&count).is_err());
    assert!(matches!(CaseConfig::load(data("nope.cfg")), Err(HarnessError::Io { .. })));
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.csv")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn run_outputs_are_identical_across_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let base = small_city();
    let mut reference = None;
    for (mode, workers, budget) in [
        (Mode::Sequential, 1, None),
        (Mode::Flat, 3, None),
        (Mode::Dynamic, 2, None),
        (Mode::Dynamic, 4, Some(40_000)),
    ] {
        let cfg = CaseConfig {
            mode,
            workers,
            split_threshold: 16,
            chunk_budget_bytes: budget,
            ..base.clone()
        };
        let out = tmp.path().join(format!("{mode}_{workers}_{budget:?}"));
        let report = cmd_run(&cfg, &data("city.scene"), &out).unwrap();
        assert!(report.evaluations > 0);
        let files = read_outputs(&out);
        let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["config.txt", "field.csv", "report.txt", "spl_250hz.png", "spl_250hz.png.scale.txt"]);
        let timing = fs::read_to_string(out.join("timing.csv")).unwrap();
        assert!(timing.starts_with(TIMING_CSV_HEADER));
        assert_eq!(timing.lines().count(), 2);
        let fields: Vec<_> = files.into_iter().filter(|(n, _)| n != "config.txt" && n != "report.txt").collect();
        match &reference {
            None => reference = Some(fields),
            Some(r) => assert_eq!(r, &fields, "{mode} x{workers} budget {budget:?}"),
        }
    }
}

#[test]
fn bench_emits_one_row_per_combination() {
    let cfg = small_city();
    let scene = load_case_scene(&cfg, &data("city.scene")).unwrap();
    let rows = cmd_bench(&cfg, &scene, &[64, 100], &[Mode::Sequential, Mode::Flat, Mode::Dynamic], &[1, 2]).unwrap();
    assert_eq!(rows.len(), 2 * (1 + 2 + 2));
    assert!(rows.iter().all(|r| r.observers == 121));
    assert_eq!(rows.iter().filter(|r| r.rays == 100).count(), 5);
    let csv = bench_csv(&rows);
    assert_eq!(csv.lines().count(), rows.len() + 1);
    let cols = TIMING_CSV_HEADER.split(',').count();
    assert!(csv.lines().all(|l| l.split(',').count() == cols));
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_gbt");
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("small.cfg");
    fs::write(&cfg_path, small_city().echo()).unwrap();

    let missing = Command::new(bin).args(["validate", "--config"]).arg(data("nope.cfg")).status().unwrap();
    assert_eq!(missing.code(), Some(2));

    let out = tmp.path().join("run");
    let ok = Command::new(bin)
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--scene")
        .arg(data("city.scene"))
        .arg("--out")
        .arg(&out)
        .args(["--mode", "dyn", "--workers", "2"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join("field.csv").exists());

    let bad_mode = Command::new(bin)
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--scene")
        .arg(data("city.scene"))
        .arg("--out")
        .arg(&out)
        .args(["--mode", "sideways"])
        .output()
        .unwrap();
    assert_eq!(bad_mode.status.code(), Some(2));

    let validation = fs::read_to_string(data("validation.cfg"))
        .unwrap()
        .replace("n_theta = 256", "n_theta = 128")
        .replace("n_phi = 256", "n_phi = 128");
    let vpath = tmp.path().join("v.cfg");
    fs::write(&vpath, validation).unwrap();
    let pass = Command::new(bin).args(["validate", "--freq", "50", "--config"]).arg(&vpath).output().unwrap();
    assert_eq!(pass.status.code(), Some(0), "{}", String::from_utf8_lossy(&pass.stdout));
    let fail = Command::new(bin)
        .args(["validate", "--freq", "50", "--speed-factor", "1.1", "--config"])
        .arg(&vpath)
        .output()
        .unwrap();
    assert_eq!(fail.status.code(), Some(1));
}
