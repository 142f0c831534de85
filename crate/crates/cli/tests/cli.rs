use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mrpd_cli::fld::FldArray;
use mrpd_cli::formats::mask_from_fld;
use serde_json::Value;

const SMALL: &str = r#"
seed = 3
phantom.size = 32
mask.pattern = "uniform1d"
mask.accel = 4
mask.acs_fraction = 0.08
prior.components = 4
prior.var = 1e-4
sampler.total_steps = 100
sampler.gamma = 1.0
ablate.lambdas = [0.0, 0.5, 1.0]
ablate.runs = 2
ablate.t0_grid = [0.2, 0.3, 0.4]
ablate.t_ws_grid = [0.1]
"#;

fn mrpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrpd")).args(args).output().unwrap()
}

fn config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    mrpd(&args)
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn config_errors_exit_with_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let missing = config(dir.path(), "a.toml", "seed = 1\nphantom.size = 32\nmask.pattern = \"uniform1d\"\n");
    let o = run("simulate", &missing, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mask.accel"), "{}", stderr(&o));

    let unknown = config(dir.path(), "b.toml", &format!("{SMALL}\nsampler.gamma_typo = 1\n"));
    let o = run("simulate", &unknown, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gamma_typo"), "{}", stderr(&o));

    let bad_mode = config(dir.path(), "c.toml", SMALL);
    let o = run("reconstruct", &bad_mode, &dir.path().join("o"), &["--mode", "sideways"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_and_corrupt_files_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("simulate", &dir.path().join("nope.toml"), &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(4));

    let junk = dir.path().join("junk.fld");
    fs::write(&junk, b"MRPD\x01\x00garbage").unwrap();
    let o = mrpd(&["validate", junk.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stdout).contains("invalid"));
}

#[test]
fn numeric_blowup_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "n.toml", &SMALL.replace("sampler.gamma = 1.0", "sampler.gamma = 1e300"));
    let o = run("reconstruct", &cfg, &dir.path().join("o"), &["--mode", "soft_only"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn simulate_records_the_requested_acceleration() {
    let dir = tempfile::tempdir().unwrap();
    for accel in ["3", "6"] {
        let cfg = config(dir.path(), "s.toml", &SMALL.replace("mask.accel = 4", &format!("mask.accel = {accel}")));
        let out = dir.path().join(format!("sim{accel}"));
        assert!(run("simulate", &cfg, &out, &[]).status.success());
        let mask = mask_from_fld(&FldArray::read(&out.join("mask.fld")).unwrap()).unwrap();
        let accel: f64 = accel.parse().unwrap();
        assert_eq!(mask.accel_nominal(), accel);
        assert!((mask.achieved_acceleration() - accel).abs() <= 0.15 * accel);
        assert_eq!(manifest(&out)["metrics"]["accel_nominal"], accel);

        let o = mrpd(&["validate", out.join("mask.fld").to_str().unwrap(), out.join("measurement.fld").to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    }
}

#[test]
fn reconstruct_routes_coils_and_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "r.toml", SMALL);

    let out = dir.path().join("single");
    assert!(run("reconstruct", &cfg, &out, &[]).status.success());
    let m = manifest(&out);
    assert_eq!(m["metrics"]["coils"], 1);
    assert_eq!(m["metrics"]["mode"], "hard_to_soft");
    assert_eq!(m["metrics"]["iterations"], 40);
    let rows = fs::read_to_string(out.join("trajectory.csv")).unwrap().lines().count();
    assert_eq!(rows, 41);

    let out = dir.path().join("hard");
    assert!(run("reconstruct", &cfg, &out, &["--mode", "hard_only"]).status.success());
    assert_eq!(manifest(&out)["metrics"]["mode"], "hard_only");

    let out = dir.path().join("coils");
    assert!(run("reconstruct", &cfg, &out, &["--coils", "4"]).status.success());
    assert_eq!(manifest(&out)["metrics"]["coils"], 4);
    assert!(out.join("recon.fld").exists());

    let o = run("reconstruct", &cfg, &dir.path().join("bad"), &["--coils", "4", "--mode", "soft_only"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reconstruct_reads_simulated_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "r.toml", SMALL);
    let sim = dir.path().join("sim");
    assert!(run("simulate", &cfg, &sim, &[]).status.success());
    let direct = dir.path().join("direct");
    assert!(run("reconstruct", &cfg, &direct, &[]).status.success());

    let with_inputs = format!(
        "{SMALL}\ninput.measurement = \"sim/measurement.fld\"\ninput.mask = \"sim/mask.fld\"\ninput.reference = \"sim/phantom.fld\"\n"
    );
    let cfg = config(dir.path(), "i.toml", &with_inputs);
    let from_files = dir.path().join("files");
    assert!(run("reconstruct", &cfg, &from_files, &[]).status.success());
    assert_eq!(fs::read(direct.join("recon.fld")).unwrap(), fs::read(from_files.join("recon.fld")).unwrap());
    assert_eq!(manifest(&direct)["metrics"]["psnr"], manifest(&from_files)["metrics"]["psnr"]);
}

fn csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn ablate_writes_one_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "a.toml", SMALL);
    let out = dir.path().join("abl");
    let o = run("ablate", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));

    let lambdas = csv(&out.join("lambda.csv"));
    assert_eq!(lambdas.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["0", "0.5", "1"]);
    assert_eq!(csv(&out.join("modes.csv")).len(), 2);

    let pareto = csv(&out.join("pareto.csv"));
    assert_eq!(pareto.iter().map(|r| r[2].as_str()).collect::<Vec<_>>(), ["20", "30", "40"]);
    let points: Vec<(f64, f64)> = pareto.iter().map(|r| (r[5].parse().unwrap(), r[4].parse().unwrap())).collect();
    for (i, row) in pareto.iter().enumerate() {
        let (t, p) = points[i];
        let dominated = points.iter().any(|&(u, q)| u <= t && q >= p && (u < t || q > p));
        assert_eq!(row[6], (!dominated).to_string(), "row {i}");
    }
    let m = manifest(&out);
    assert_eq!(m["timed_outputs"][0], "pareto.csv");
    assert!(m["outputs"].get("pareto.csv").is_none());
}

#[test]
fn adapter_keeps_core_and_does_not_raise_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = "seed = 0\nphantom.size = 32\nmask.pattern = \"uniform1d\"\nmask.accel = 4\n\
                codec.kind = \"patch\"\ncodec.tile = 4\nadapter.train = 6\nadapter.holdout = 4\n";
    let cfg = config(dir.path(), "f.toml", text);
    let out = dir.path().join("ft");
    let o = run("finetune-adapter", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = &manifest(&out)["metrics"];
    assert_eq!(m["core_sha256_before"], m["core_sha256_after"]);
    assert!(m["train_error_after"].as_f64().unwrap() <= m["train_error_before"].as_f64().unwrap());
    let o = mrpd(&["validate", out.join("codec.fld").to_str().unwrap()]);
    assert!(o.status.success());

    let wrong = config(dir.path(), "g.toml", &text.replace("\"patch\"", "\"haar\""));
    assert_eq!(run("finetune-adapter", &wrong, &dir.path().join("x"), &[]).status.code(), Some(2));
}
