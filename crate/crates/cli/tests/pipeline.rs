use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMOKE: &str = include_str!("../../../configs/smoke.toml");

fn efl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_efl")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    efl(&args)
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn smoke_pipeline_emits_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "smoke.toml", SMOKE);
    let out = dir.path().join("out");
    for cmd in ["gen-data", "train", "eval", "curves"] {
        let o = run(cmd, &cfg, &out, &[]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let s0 = out.join("seed_0");
    assert_eq!(header(&s0.join("data/stats.csv")), "category,count,group,log_ratio");
    for arm in ["fl", "efl_s8"] {
        let t = s0.join(arm).join("train");
        assert_eq!(header(&t.join("train_log.csv")), "iteration,loss,lr,grad_norm,g_min,g_max");
        assert_eq!(header(&t.join("trajectory.csv")), "iteration,category,g,gamma");
        let log = std::fs::read_to_string(t.join("train_log.csv")).unwrap();
        assert_eq!(log.lines().count(), 201);
        let e = s0.join(arm).join("eval");
        assert_eq!(header(&e.join("percat.csv")), "category,group,ap_cls,f1,margin");
        assert_eq!(header(&e.join("groups.csv")), "group,num_categories,ap_cls,margin");
        assert_eq!(header(&e.join("margins.csv")), "category,group,train_count,margin");
        assert!(e.join("manifest.json").exists());
    }
    assert_eq!(header(&out.join("curves/curves.csv")), "x_t,gamma_v,weighted,loss");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("curves/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config"]["dataset"]["num_categories"], 20);
}

#[test]
fn rerunning_a_stage_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "smoke.toml", SMOKE);
    let out = dir.path().join("out");
    assert!(run("gen-data", &cfg, &out, &["--variant", "fl"]).status.success());
    assert!(run("train", &cfg, &out, &["--variant", "fl"]).status.success());
    let model = out.join("seed_0/fl/train/model.txt");
    let first = std::fs::read(&model).unwrap();
    assert!(run("train", &cfg, &out, &["--variant", "fl"]).status.success());
    assert_eq!(std::fs::read(&model).unwrap(), first);
    assert!(!out.join("seed_0/efl_s8").exists());
    let stray: Vec<_> = std::fs::read_dir(out.join("seed_0/fl"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(stray, vec![std::ffi::OsString::from("train")]);
}

#[test]
fn zero_scale_compare_matches_focal_loss() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMOKE.replace("seeds = [0]", "seeds = [0, 3]\ns_values = [0.0]");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    let o = run("compare", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("compare/compare.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for pair in rows.chunks(2) {
        assert_eq!(pair[0][0], "fl");
        assert_eq!(pair[1][0], "efl_s0");
        assert_eq!(pair[0][3..], pair[1][3..]);
    }
    for seed in ["seed_0", "seed_3"] {
        let runs = out.join("compare/runs").join(seed);
        assert_eq!(
            std::fs::read(runs.join("fl/percat.csv")).unwrap(),
            std::fs::read(runs.join("efl_s0/percat.csv")).unwrap()
        );
    }
    let summary = std::fs::read_to_string(out.join("compare/compare_summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "arm,variant,s,metric,median,min,max");
    assert_eq!(summary.lines().count(), 1 + 2 * 5);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "smoke.toml", SMOKE);
    let out = dir.path().join("out");

    let o = run("eval", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eval.bin"));

    let bad = write_config(dir.path(), "bad.toml", &SMOKE.replace("n_max = 200", "n_max = -3"));
    let o = run("gen-data", &bad, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.toml:"));

    let invalid = write_config(dir.path(), "inv.toml", &SMOKE.replace("noise_std = 1.0", "noise_std = 0.0"));
    assert_eq!(run("gen-data", &invalid, &out, &[]).status.code(), Some(2));

    let wild = SMOKE.replace("lr = 0.01", "lr = 1e9\ngrad_clip_norm = 1e300");
    let wild = write_config(dir.path(), "wild.toml", &wild);
    assert!(run("gen-data", &wild, &out, &[]).status.success());
    assert_eq!(run("train", &wild, &out, &[]).status.code(), Some(3));

    assert_eq!(efl(&["grad-check"]).status.code(), Some(0));
    let o = efl(&["grad-check", "--variant", "efl", "--rtol", "1e-14", "--atol", "1e-20"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn grad_check_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = efl(&["grad-check", "--variant", "eqfl", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("gradcheck/gradcheck_eqfl.csv")).unwrap();
    assert!(csv.starts_with("variant,x,y,quality,"));
    assert_eq!(csv.lines().count(), 1 + 140);
}
