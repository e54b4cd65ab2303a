use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_p2p-der");

const SMALL: &str = r#"
[synth]
n_households = 24
n_days = 6
n_regions = 3

[sweep]
t_points = 30

[prices]
p_points = 8

[localness]
t = [0.2, 0.5]
"#;

fn p2p(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--out")
        .arg(dir)
        .args(args)
        .env("RUST_LOG", "info")
        .env_remove("P2PDER_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn downstream_stage_without_fit_asks_for_it() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["sweep", "longrun", "stakeholders", "localness"] {
        let out = p2p(tmp.path(), &[cmd]);
        assert!(!out.status.success());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("run fit first"), "{cmd}: {err}");
    }
    let out = p2p(tmp.path(), &["fit"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("run gen-data first"));
}

#[test]
fn subsidy_needs_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let dir = tmp.path().join("run");
    let c = cfg.to_str().unwrap();
    ok(&p2p(&dir, &["--config", c, "gen-data"]));
    ok(&p2p(&dir, &["--config", c, "fit"]));
    let out = p2p(&dir, &["--config", c, "subsidy"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("run sweep first"));
}

#[test]
fn pipeline_is_thread_count_invariant_and_cached() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let c = cfg.to_str().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&p2p(&a, &["--config", c, "--threads", "1", "run"]));
    ok(&p2p(&b, &["--config", c, "--threads", "4", "run"]));
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    assert!(fa.len() >= 9);
    assert_eq!(fa, fb);

    let ma: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let mb: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    for stage in [
        "gen-data",
        "fit",
        "sweep",
        "longrun",
        "subsidy",
        "stakeholders",
        "localness",
    ] {
        assert_eq!(
            ma["stages"][stage]["outputs"], mb["stages"][stage]["outputs"],
            "{stage}"
        );
        assert_eq!(ma["stages"][stage]["key"], mb["stages"][stage]["key"], "{stage}");
    }

    // a rerun finds every stage up to date
    let again = p2p(&a, &["--config", c, "run"]);
    ok(&again);
    let log = String::from_utf8_lossy(&again.stderr);
    assert_eq!(log.matches("up to date").count(), 7, "{log}");

    // touching an output invalidates its stage only
    fs::write(a.join("sweep.csv"), "tampered").unwrap();
    let third = p2p(&a, &["--config", c, "sweep"]);
    ok(&third);
    assert!(!String::from_utf8_lossy(&third.stderr).contains("up to date"));
    assert_eq!(
        fs::read(a.join("sweep.csv")).unwrap(),
        fs::read(b.join("sweep.csv")).unwrap()
    );
}

#[test]
fn single_commands_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let c = cfg.to_str().unwrap();
    let d = tmp.path().join("run");
    ok(&p2p(&d, &["--config", c, "--seed", "7", "--days", "3", "gen-data"]));
    ok(&p2p(&d, &["--config", c, "--seed", "7", "--days", "3", "fit"]));
    ok(&p2p(
        &d,
        &["--config", c, "--seed", "7", "--days", "3", "clear", "--t", "0.4"],
    ));
    let eq = fs::read_to_string(d.join("equilibrium.csv")).unwrap();
    assert!(eq.starts_with("household_id,role,y_star,surplus\n"));
    assert_eq!(eq.lines().count(), 25);
    assert_eq!(eq.matches(",owner,").count(), 10);

    ok(&p2p(
        &d,
        &["--config", c, "--seed", "7", "--days", "3", "longrun", "--price", "20"],
    ));
    let lr = fs::read_to_string(d.join("longrun.csv")).unwrap();
    assert_eq!(lr.lines().count(), 2);
    assert!(lr.lines().nth(1).unwrap().starts_with("20"));

    ok(&p2p(
        &d,
        &[
            "--config",
            c,
            "--seed",
            "7",
            "--days",
            "3",
            "localness",
            "--t-grid",
            "0.3,0.7",
        ],
    ));
    assert!(d.join("flows_t0.3.csv").exists() && d.join("flows_t0.7.csv").exists());

    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 7);
}

#[test]
fn validate_reports_exclusions() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let d = tmp.path().join("run");
    ok(&p2p(&d, &["gen-data", "--seed", "3"]));
    fs::create_dir_all(&data).unwrap();
    for f in ["irradiance.csv", "tariff_buy.csv", "tariff_sell.csv", "regions.csv"] {
        fs::copy(d.join("data").join(f), data.join(f)).unwrap();
    }
    // keep two households and zero out the second one's readings
    let loads = fs::read_to_string(d.join("data/loads.csv")).unwrap();
    let mut lines = loads.lines();
    let mut text = format!("{}\n", lines.next().unwrap());
    for line in lines {
        let id = line.split(',').next().unwrap();
        if id == "H0000" {
            text += &format!("{line}\n");
        } else if id == "H0001" {
            let f: Vec<&str> = line.split(',').collect();
            text += &format!("{},{},{}{}\n", f[0], f[1], f[2], ",0".repeat(24));
        }
    }
    fs::write(data.join("loads.csv"), text).unwrap();
    let out = p2p(&d, &["validate", "--in", data.to_str().unwrap()]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("1 households kept, 1 excluded"));
    let ex = fs::read_to_string(d.join("exclusions.csv")).unwrap();
    assert_eq!(ex, "household_id,reason\nH0001,zero readings\n");
}

#[test]
fn bad_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[synth]\nn_housholds = 3\n").unwrap();
    let out = p2p(tmp.path(), &["--config", cfg.to_str().unwrap(), "gen-data"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_housholds"));
}
