use std::fs;
use std::path::Path;

use p2p_der::domain::{AssetSpec, HOURS};
use p2p_der::ingest::{load_scenario, write_exclusions, write_scenario, ExclusionReason, ScenarioPaths};
use p2p_der::synth::{generate_scenario, SynthConfig};
use p2p_der::Error;

fn hour_cols() -> String {
    (0..HOURS).map(|h| format!(",h{h}")).collect()
}

fn day_file(path: &Path, rows: &[[f64; HOURS]]) {
    let mut s = format!("day{}\n", hour_cols());
    for (d, r) in rows.iter().enumerate() {
        s.push_str(&d.to_string());
        for v in r {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

fn sun() -> [f64; HOURS] {
    std::array::from_fn(|h| if (7..18).contains(&h) { 0.6 } else { 0.0 })
}

/// Three households over two days: one clean, one mostly zeros, one tiny.
fn fixture(dir: &Path) {
    day_file(&dir.join("irradiance.csv"), &[sun(), sun()]);
    day_file(&dir.join("tariff_buy.csv"), &[[0.3; HOURS], [0.3; HOURS]]);
    day_file(&dir.join("tariff_sell.csv"), &[[0.05; HOURS], [0.05; HOURS]]);
    fs::write(
        dir.join("regions.csv"),
        "region_id,lat,lon\nA,37.0,-120.0\nB,37.1,-120.1\n",
    )
    .unwrap();
    let mut loads = format!("household_id,region_id,day{}\n", hour_cols());
    let row = |id: &str, region: &str, d: usize, f: &dyn Fn(usize) -> f64| {
        let vals: String = (0..HOURS).map(|h| format!(",{}", f(h))).collect();
        format!("{id},{region},{d}{vals}\n")
    };
    for d in [1, 0] {
        loads.push_str(&row("H3", "B", d, &|_| 0.05));
        loads.push_str(&row("H1", "A", d, &|h| 0.5 + 0.1 * (h % 3) as f64));
        loads.push_str(&row("H2", "A", d, &|h| if h < 4 { 2.0 } else { 0.0 }));
    }
    fs::write(dir.join("loads.csv"), loads).unwrap();
}

#[test]
fn three_household_fixture_screens_two() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path());
    let (scenario, excluded) = load_scenario(&ScenarioPaths::in_dir(tmp.path()), &AssetSpec::default()).unwrap();
    assert_eq!(scenario.households.len(), 1);
    assert_eq!(scenario.households[0].id, "H1");
    let reasons: Vec<_> = excluded.iter().map(|e| (e.household_id.as_str(), e.reason)).collect();
    assert_eq!(
        reasons,
        vec![
            ("H2", ExclusionReason::ZeroReadings),
            ("H3", ExclusionReason::LowConsumption)
        ]
    );
    // load 0.5/0.6/0.7 repeating: total 2 * 8 * 1.8 = 28.8; sun 2 * 11 * 0.6 = 13.2
    let expected = 28.8 / (0.96 * 13.2);
    assert!((scenario.households[0].net_zero_size - expected).abs() < 1e-12);

    let out = tmp.path().join("exclusions.csv");
    write_exclusions(&out, &excluded).unwrap();
    let text = fs::read_to_string(out).unwrap();
    assert_eq!(text, "household_id,reason\nH2,zero readings\nH3,low consumption\n");
}

#[test]
fn all_excluded_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path());
    let loads = fs::read_to_string(tmp.path().join("loads.csv")).unwrap();
    let kept: String = loads
        .lines()
        .filter(|l| !l.starts_with("H1"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(tmp.path().join("loads.csv"), kept).unwrap();
    let err = load_scenario(&ScenarioPaths::in_dir(tmp.path()), &AssetSpec::default()).unwrap_err();
    assert!(matches!(err, Error::EmptyScenario), "{err}");
}

#[test]
fn missing_day_names_household_and_file() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path());
    let loads = fs::read_to_string(tmp.path().join("loads.csv")).unwrap();
    let kept: String = loads
        .lines()
        .filter(|l| !l.starts_with("H1,A,0"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(tmp.path().join("loads.csv"), kept).unwrap();
    let err = load_scenario(&ScenarioPaths::in_dir(tmp.path()), &AssetSpec::default()).unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains("loads.csv") && msg.contains("H1") && msg.contains("day 0"),
        "{msg}"
    );
}

#[test]
fn bad_number_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path());
    let buy = fs::read_to_string(tmp.path().join("tariff_buy.csv")).unwrap();
    fs::write(tmp.path().join("tariff_buy.csv"), buy.replacen("0.3", "abc", 1)).unwrap();
    let err = load_scenario(&ScenarioPaths::in_dir(tmp.path()), &AssetSpec::default()).unwrap_err();
    match err {
        Error::Parse { line, message, .. } => {
            assert_eq!(line, 2);
            assert!(message.contains("h0"), "{message}");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn synthetic_round_trip_is_lossless() {
    let cfg = SynthConfig {
        n_households: 12,
        n_days: 5,
        n_regions: 3,
        ..SynthConfig::default()
    };
    let mut original = generate_scenario(&cfg, &AssetSpec::default()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_scenario(tmp.path(), &original).unwrap();
    let (back, excluded) = load_scenario(&ScenarioPaths::in_dir(tmp.path()), &AssetSpec::default()).unwrap();
    assert!(excluded.is_empty());
    original.households.sort_by(|a, b| a.id.cmp(&b.id));
    assert_eq!(back, original);
}

#[test]
fn clean_three_household_fixture_keeps_all() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path());
    let mut loads = format!("household_id,region_id,day{}\n", hour_cols());
    for (id, level) in [("H1", 0.5), ("H2", 1.0), ("H3", 2.0)] {
        for d in 0..2 {
            let vals: String = (0..HOURS).map(|_| format!(",{level}")).collect();
            loads.push_str(&format!("{id},A,{d}{vals}\n"));
        }
    }
    fs::write(tmp.path().join("loads.csv"), loads).unwrap();
    let (scenario, excluded) = load_scenario(&ScenarioPaths::in_dir(tmp.path()), &AssetSpec::default()).unwrap();
    assert!(excluded.is_empty());
    // 48 hours of load over 13.2 kWh/kW of sun, through a 0.96 inverter
    for (hh, level) in scenario.households.iter().zip([0.5, 1.0, 2.0]) {
        let expected = 48.0 * level / (0.96 * 13.2);
        assert!((hh.net_zero_size - expected).abs() < 1e-12 * expected, "{}", hh.id);
    }
}
