use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use masim_core::scenario::Scenario;

fn masim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_masim"))
        .args(args)
        .current_dir(dir)
        .env_remove("MASIM_SEED")
        .env_remove("MASIM_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const DEFAULT: &str = r#"{"scenario":{"fc_hz":30e9,"bs_hz":30e6,"nc":32,"n1":8,"n2":8,"m":4,"k":4,"l":6},"base_seed":9}"#;

const SMALL: &str = r#"{"scenario":{"fc_hz":30e9,"bs_hz":30e6,"nc":4,"n1":4,"n2":4,"m":2,"k":2,"l":1,"g":8,"j":16,"on_grid":true},
    "pilot_snr_db":null,"base_seed":1}"#;

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn gen_default_scenario_shape() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", DEFAULT);
    let o = masim(d.path(), &["gen", "--config", "c.json", "--out", "o", "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let path = stdout(&o).trim().to_string();
    let s = Scenario::from_json(&fs::read_to_string(d.path().join(&path)).unwrap()).unwrap();
    assert_eq!(s.grid.len(), 64);
    assert_eq!(s.users.len(), 4);
    assert_eq!(s.ofdm.num_subcarriers(), 32);
}

#[test]
fn gen_missing_field_exits_2_with_name() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", r#"{"scenario":{"fc_hz":30e9,"bs_hz":30e6,"n1":8,"n2":8,"m":4,"k":4,"l":6}}"#);
    let o = masim(d.path(), &["gen", "--config", "c.json", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nc"), "{}", stderr(&o));
    assert!(!d.path().join("o").exists());
}

#[test]
fn gen_is_deterministic_and_never_overwrites() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", DEFAULT);
    let a = masim(d.path(), &["gen", "--config", "c.json", "--out", "o"]);
    let b = masim(d.path(), &["gen", "--config", "c.json", "--out", "o"]);
    assert_eq!(stdout(&a).trim(), "o/scenario.json");
    assert_eq!(stdout(&b).trim(), "o/scenario-1.json");
    let x = fs::read(d.path().join("o/scenario.json")).unwrap();
    let y = fs::read(d.path().join("o/scenario-1.json")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn seed_flag_and_env_override_config() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", DEFAULT);
    masim(d.path(), &["gen", "--config", "c.json", "--out", "a"]);
    masim(d.path(), &["gen", "--config", "c.json", "--out", "b", "--seed", "10"]);
    let env = Command::new(env!("CARGO_BIN_EXE_masim"))
        .args(["gen", "--config", "c.json"])
        .current_dir(d.path())
        .env("MASIM_SEED", "10")
        .env("MASIM_OUT", "c")
        .output()
        .unwrap();
    assert!(env.status.success());
    let a = fs::read(d.path().join("a/scenario.json")).unwrap();
    let b = fs::read(d.path().join("b/scenario.json")).unwrap();
    let c = fs::read(d.path().join("c/scenario.json")).unwrap();
    assert_ne!(a, b);
    assert_eq!(b, c);
}

#[test]
fn estimate_noiseless_on_grid_full_pattern() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", SMALL);
    masim(d.path(), &["gen", "--config", "c.json", "--out", "o"]);
    let run = || masim(d.path(), &["estimate", "--config", "c.json", "--out", "o", "--scenario", "o/scenario.json"]);
    let first = run();
    assert!(first.status.success(), "{}", stderr(&first));
    let line = stdout(&first);
    assert_eq!(line.lines().count(), 1);
    let v: f64 = line.trim().parse().unwrap();
    assert!(v < 1e-16, "nmse {v}");
    assert!(d.path().join("o/csi.bin").exists() && d.path().join("o/csi.json").exists());

    let second = run();
    assert_eq!(stdout(&second), line);
    assert!(d.path().join("o/csi-1.bin").exists());
}

#[test]
fn estimate_with_too_many_pilots_exits_3() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", SMALL);
    masim(d.path(), &["gen", "--config", "c.json", "--out", "o"]);
    write(d.path(), "j.json", &SMALL.replace(r#""j":16"#, r#""j":17"#));
    let o = masim(d.path(), &["estimate", "--config", "j.json", "--out", "o", "--scenario", "o/scenario.json"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn select_then_beamform() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", &SMALL.replace(r#""base_seed":1"#, r#""base_seed":1,"selectors":["ceo"],"ceo":{"samples":8,"iterations":2}"#));
    masim(d.path(), &["gen", "--config", "c.json", "--out", "o"]);
    let s = masim(d.path(), &["select", "--config", "c.json", "--out", "o", "--scenario", "o/scenario.json"]);
    assert!(s.status.success(), "{}", stderr(&s));
    assert_eq!(stdout(&s).split_whitespace().count(), 2);
    let trace = fs::read_to_string(d.path().join("o/ceo_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 3);

    let b = masim(
        d.path(),
        &["beamform", "--config", "c.json", "--out", "o", "--scenario", "o/scenario.json", "--assignment", "o/assignment.json"],
    );
    assert!(b.status.success(), "{}", stderr(&b));
    let rate: f64 = stdout(&b).trim().parse().unwrap();
    assert!(rate > 0.0);
    let (w, meta) = masim_core::io::read_solution(&d.path().join("o/beams.bin")).unwrap();
    assert_eq!((meta.m, meta.k, meta.nc), (2, 2, 4));
    assert_eq!(meta.scheme, "wmmse");
    assert!(w.max_power_error(meta.pt) < 1e-9);
}

fn sweep_config(extra: &str) -> String {
    format!(
        r#"{{"experiment":"rate","scenario":{{"fc_hz":30e9,"bs_hz":30e6,"nc":4,"n1":4,"n2":4,"m":2,"k":2,"l":2,"g":8,"j":8}},
        "sweep_axis":"data_snr_db","sweep_values":[10]{extra}}}"#
    )
}

#[test]
fn one_point_sweep_has_one_row() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "s.json", &sweep_config(""));
    let o = masim(d.path(), &["sweep", "--config", "s.json", "--out", "o", "--workers", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trials = fs::read_to_string(d.path().join("o/trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 2);
    assert!(trials.starts_with("axis,value,trial,seed"));
    assert!(d.path().join("o/summary.csv").exists());
}

#[test]
fn net_rate_sweep_summary_has_row_per_j() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"experiment":"net-rate","scenario":{"fc_hz":30e9,"bs_hz":30e6,"nc":4,"n1":4,"n2":4,"m":2,"k":2,"l":2,"g":8},
        "sweep_axis":"num_pilot_positions","sweep_values":[4,8,16],"trials":2}"#;
    write(d.path(), "s.json", cfg);
    let o = masim(d.path(), &["sweep", "--config", "s.json", "--out", "o"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(d.path().join("o/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3);

    // report regenerates the same summary from the per-trial file
    let r = masim(d.path(), &["report", "--input", "o/trials.csv", "--out", "o"]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert_eq!(stdout(&r).trim(), "o/summary-1.csv");
    // per-trial rows carry 12 significant digits and no believed rate
    let again = fs::read_to_string(d.path().join("o/summary-1.csv")).unwrap();
    assert_eq!(again.lines().count(), summary.lines().count());
    for (x, y) in again.lines().skip(1).zip(summary.lines().skip(1)) {
        let (x, y): (Vec<&str>, Vec<&str>) = (x.split(',').collect(), y.split(',').collect());
        assert_eq!(x[..7], y[..7]);
        for c in 7..13 {
            let (a, b): (f64, f64) = (x[c].parse().unwrap(), y[c].parse().unwrap());
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-12), "column {c}: {a} vs {b}");
        }
        assert_eq!(x[13], "");
    }
}

#[test]
fn sweep_output_independent_of_workers() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "s.json", &sweep_config(r#","trials":3,"selectors":["random","greedy"]"#));
    masim(d.path(), &["sweep", "--config", "s.json", "--out", "a", "--workers", "1"]);
    masim(d.path(), &["sweep", "--config", "s.json", "--out", "b", "--workers", "3"]);
    for f in ["trials.csv", "summary.csv"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn sweep_config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "s.json", &sweep_config("").replace(r#""sweep_axis":"data_snr_db","#, ""));
    let o = masim(d.path(), &["sweep", "--config", "s.json", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep_axis"), "{}", stderr(&o));

    let none = masim(d.path(), &["sweep", "--out", "o"]);
    assert_eq!(none.status.code(), Some(2));
}
