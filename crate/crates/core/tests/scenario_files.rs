use std::fs;

use propsim::netmodel::{Internet, NetParams};
use propsim::scenario::{load_scenario, run_scenario, NetSource, SweepSpec};
use propsim::Error;

#[test]
fn netparams_file_resolves_against_the_scenario_directory() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("params")).unwrap();
    let mut params = NetParams::preset(Internet::Y2019);
    params.latency_ms[0][0] = 5.0;
    fs::write(dir.path().join("params/custom.json"), params.to_json()).unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        "preset = \"2019_cbr\"\nnetparams = { file = \"params/custom.json\" }\n",
    )
    .unwrap();

    let cfg = load_scenario(&path).unwrap();
    assert_eq!(
        cfg.netparams,
        NetSource::File {
            file: dir.path().join("params/custom.json")
        }
    );
    assert_eq!(cfg.netparams.load().unwrap(), params);
}

#[test]
fn missing_and_malformed_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_scenario(dir.path().join("absent.toml")),
        Err(Error::Io { .. })
    ));
    let path = dir.path().join("bad.toml");
    fs::write(&path, "node_count = [").unwrap();
    assert!(matches!(load_scenario(&path), Err(Error::Parse(_))));
    fs::write(&path, "preset = \"2019_cbr\"\nnode_count = \"many\"\n").unwrap();
    match load_scenario(&path) {
        Err(Error::InvalidKey { key, .. }) => assert_eq!(key, "node_count"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn report_means_recompute_from_the_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    fs::write(
        &path,
        "preset = \"compare_2015_cbr\"\nnode_count = 80\nblock_count = 30\nwarmup_blocks = 5\n",
    )
    .unwrap();
    let cfg = load_scenario(&path).unwrap();
    let report = run_scenario(&cfg, &[4, 2, 9]).unwrap();
    assert_eq!(report.seeds, vec![4, 2, 9]);

    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    let runs = json["runs"].as_array().unwrap();
    for key in ["delay_p50_ms", "delay_p90_ms", "fork_rate"] {
        let xs: Vec<f64> = runs.iter().map(|r| r[key].as_f64().unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((json["mean"][key].as_f64().unwrap() - mean).abs() < 1e-9 * mean.abs().max(1.0));
    }
    // artifacts carry the resolved config
    assert_eq!(runs[0]["config"]["node_count"], 80);
    assert_eq!(runs[0]["config"]["cbr"]["compact_size_bytes"], 18_000);
}

#[test]
fn overriding_one_key_leaves_the_rest() {
    let base = propsim::scenario::preset("compare_2015_cbr").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    fs::write(
        &path,
        "preset = \"compare_2015_cbr\"\n[cbr]\ncompact_size_bytes = 9000\n",
    )
    .unwrap();
    let mut cfg = load_scenario(&path).unwrap();
    assert_eq!(cfg.cbr.compact_size_bytes, 9000);
    cfg.cbr.compact_size_bytes = base.cbr.compact_size_bytes;
    assert_eq!(cfg, base);
}

#[test]
fn four_cell_sweep_reports_effects() {
    let mut overrides = toml::Table::new();
    overrides.insert("node_count".into(), 60.into());
    overrides.insert("block_count".into(), 25.into());
    overrides.insert("warmup_blocks".into(), 0.into());
    let report = SweepSpec::four_cell(overrides, vec![1, 2])
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(report.cells.len(), 4);
    let e = report.effects.unwrap();
    let legacy = report.cell("2015_legacy").unwrap().mean;
    let cbr = report.cell("2015_cbr").unwrap().mean;
    let expected = 100.0 * (legacy.delay_p50_ms - cbr.delay_p50_ms) / legacy.delay_p50_ms;
    assert!((e.cbr_reduction_p50_pct - expected).abs() < 1e-9);
    assert!(e.cbr_reduction_p50_pct > 0.0 && e.internet_reduction_p50_pct > 0.0);
}
