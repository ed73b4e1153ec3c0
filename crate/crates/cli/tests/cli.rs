use std::path::Path;
use std::process::{Command, Output};

fn coexsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coexsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_preset_writes_csvs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = coexsim(&["run", "--preset", "sensing_sweep", "--out", path(&out), "--realizations", "2", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["scenario.json", "realizations.csv", "aggregate.csv", "snapshot.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["preset"], "sensing_sweep");
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = coexsim(&[
            "run", "--preset", "radius_sweep", "--out", path(out), "--realizations", "3", "--parallelism", threads,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["realizations.csv", "aggregate.csv", "snapshot.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn unknown_preset_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = coexsim(&["run", "--preset", "bogus", "--out", path(dir.path())]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown preset"));
}

#[test]
fn bad_config_key_reports_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"sensing": {"smoothing": "high"}}"#).unwrap();
    let o = coexsim(&["run", "--preset", "sensing_sweep", "--scenario", path(&cfg), "--out", path(&dir.path().join("o"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("sensing.smoothing"), "{}", stderr(&o));
}

#[test]
fn missing_ap_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = coexsim(&["case-study", "--aps", path(&dir.path().join("none.csv")), "--mode", "lte_m"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("none.csv"));
}

#[test]
fn malformed_ap_row_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let aps = dir.path().join("aps.csv");
    std::fs::write(&aps, "id,x_m,y_m\na,10,20\nb,oops,30\n").unwrap();
    let o = coexsim(&["case-study", "--aps", path(&aps), "--mode", "nb_iot", "--realizations", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains(":3:"), "{}", stderr(&o));
}

#[test]
fn unknown_mode_fails() {
    let dir = tempfile::tempdir().unwrap();
    let aps = dir.path().join("aps.csv");
    std::fs::write(&aps, "id,x_m,y_m\na,10,20\n").unwrap();
    let o = coexsim(&["case-study", "--aps", path(&aps), "--mode", "wifi"]);
    assert!(!o.status.success());
}

#[test]
fn case_study_writes_per_scheme_rows() {
    let dir = tempfile::tempdir().unwrap();
    let aps = dir.path().join("aps.csv");
    let mut text = String::from("id,x_m,y_m\n");
    for i in 0..20 {
        text.push_str(&format!("ap{i},{},{}\n", 150.0 * i as f64, 90.0 * ((i * 7) % 20) as f64));
    }
    std::fs::write(&aps, text).unwrap();
    let csv = dir.path().join("cs.csv");
    let o = coexsim(&["case-study", "--aps", path(&aps), "--mode", "lte_m", "--realizations", "1", "--out", path(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let body = std::fs::read_to_string(&csv).unwrap();
    assert!(body.starts_with("mode,scheme,mean_devices_served"));
    assert_eq!(body.lines().count(), 4);
}

#[test]
fn rem_from_rss_file() {
    let dir = tempfile::tempdir().unwrap();
    let rss = dir.path().join("rss.csv");
    let mut text = String::from("node_id,x_m,y_m,rss_dbm_sample_1,rss_dbm_sample_2,rss_dbm_sample_3\n");
    for n in 0..9 {
        let r = -50.0 - n as f64;
        text.push_str(&format!("{n},{},{},{r},{},{}\n", 0.5 * (n % 3) as f64, 0.5 * (n / 3) as f64, r - 1.0, r + 1.0));
    }
    std::fs::write(&rss, text).unwrap();
    let out = dir.path().join("w.csv");
    let o = coexsim(&["rem", "--rss", path(&rss), "--fraction", "0.5", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let body = std::fs::read_to_string(&out).unwrap();
    assert!(body.starts_with("node_id,x_m,y_m,w"));
    assert_eq!(body.lines().count(), 10);
}

#[test]
fn rem_rejects_bad_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let rss = dir.path().join("rss.csv");
    std::fs::write(&rss, "node_id,x_m,y_m,rss_dbm_sample_1,rss_dbm_sample_2\n0,0,0,-50,-51\n").unwrap();
    let o = coexsim(&["rem", "--rss", path(&rss), "--fraction", "1.5", "--out", path(&dir.path().join("w.csv"))]);
    assert!(!o.status.success());
}

#[test]
fn schedule_bench_and_deflection_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let gap = dir.path().join("gap.csv");
    let o = coexsim(&["schedule-bench", "--instances", "3", "--num-bs", "12", "--out", path(&gap)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&gap).unwrap().lines().count(), 4);

    let def = dir.path().join("d.csv");
    let o = coexsim(&["deflection", "--chains", "2", "--samples", "5000", "--out", path(&def)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let body = std::fs::read_to_string(&def).unwrap();
    assert!(body.starts_with("snr_db,delta_theory,delta_mc,delta_ed\n"));
}
