use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn propsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_propsim"))
        .args(args)
        .output()
        .unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr)
        .unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&out.stderr)))
}

fn core_data() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data")
}

fn tiny_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(
        &path,
        "preset = \"2019_cbr\"\nnode_count = 40\nblock_count = 12\nwarmup_blocks = 2\n",
    )
    .unwrap();
    path
}

#[test]
fn simulate_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = tiny_scenario(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = propsim(&[
            "simulate",
            "--scenario",
            scenario.to_str().unwrap(),
            "--seed",
            "5",
            "--seeds",
            "2",
            "--out",
            out.to_str().unwrap(),
            "--trace",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a");
    let b = run("b");
    for file in [
        "report.json",
        "trace_seed5.csv",
        "trace_seed6.csv",
        "blocks_seed5.csv",
        "ledger_seed6.csv",
        "nodes_seed5.csv",
        "edges_seed5.csv",
    ] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seeds"], serde_json::json!([5, 6]));
    assert_eq!(report["runs"][0]["blocks"], 12);
    let blocks = fs::read_to_string(a.join("blocks_seed5.csv")).unwrap();
    assert!(blocks.starts_with("block_id,p50_ms,p90_ms,reached_all\n"));
    assert_eq!(blocks.lines().count(), 13);
}

#[test]
fn flags_override_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = tiny_scenario(dir.path());
    let o = propsim(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--nodes",
        "30",
        "--blocks",
        "8",
        "--cbr",
        "off",
        "--internet",
        "2015",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let cfg = &report["runs"][0]["config"];
    assert_eq!(cfg["node_count"], 30);
    assert_eq!(cfg["block_count"], 8);
    assert_eq!(cfg["cbr_enabled"], false);
    assert_eq!(cfg["netparams"], "2015");
    assert_eq!(
        report["runs"][0]["counters"]["messages"].get("compact_block"),
        None
    );
}

#[test]
fn errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    let e = error_json(&propsim(&["simulate", "--scenario", empty.to_str().unwrap()]));
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("node_count"));

    let e = error_json(&propsim(&["simulate", "--scenario", "/nonexistent/x.toml"]));
    assert_eq!(e["error"], "io");

    let scenario = tiny_scenario(dir.path());
    let e = error_json(&propsim(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--trace",
    ]));
    assert_eq!(e["error"], "config");

    let e = error_json(&propsim(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--internet",
        "2020",
    ]));
    assert_eq!(e["error"], "usage");
    let e = error_json(&propsim(&["frobnicate"]));
    assert_eq!(e["error"], "usage");
}

#[test]
fn derive_params_reproduces_the_shipped_tables() {
    let dir = tempfile::tempdir().unwrap();
    for year in ["2015", "2019"] {
        let src = core_data().join(year);
        let out = dir.path().join(format!("{year}.json"));
        let o = propsim(&[
            "derive-params",
            "--countries",
            src.join("countries.csv").to_str().unwrap(),
            "--latency",
            src.join("city_latency.csv").to_str().unwrap(),
            "--bandwidth",
            src.join("bandwidth.csv").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(
            fs::read_to_string(out).unwrap(),
            fs::read_to_string(core_data().join(format!("netparams_{year}.json"))).unwrap()
        );
    }
}

#[test]
fn derive_params_names_a_missing_city_pair() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f);
    fs::write(
        p("c.csv"),
        "country,region,node_count,city\nus,north_america,10,nyc\nde,europe,5,ber\n",
    )
    .unwrap();
    fs::write(p("l.csv"), "src_city,dst_city,ms\nnyc,nyc,5\nber,ber,4\n").unwrap();
    fs::write(p("b.csv"), "country,up_bps,down_bps\nus,1e6,2e6\nde,1e6,2e6\n").unwrap();
    let e = error_json(&propsim(&[
        "derive-params",
        "--countries",
        p("c.csv").to_str().unwrap(),
        "--latency",
        p("l.csv").to_str().unwrap(),
        "--bandwidth",
        p("b.csv").to_str().unwrap(),
        "--out",
        p("o.json").to_str().unwrap(),
    ]));
    assert_eq!(e["error"], "derivation");
}

#[test]
fn sweep_writes_cells_and_effects() {
    let dir = tempfile::tempdir().unwrap();
    let cells = dir.path().join("cells.toml");
    let mut text =
        String::from("seeds = [1, 2]\n[defaults]\nnode_count = 40\nblock_count = 15\nwarmup_blocks = 0\n");
    for name in ["2015_legacy", "2015_cbr", "2019_legacy", "2019_cbr"] {
        text += &format!("[[cell]]\nname = \"{name}\"\npreset = \"compare_{name}\"\n");
    }
    fs::write(&cells, text).unwrap();
    let out = dir.path().join("out");
    let o = propsim(&[
        "sweep",
        "--cells",
        cells.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(sweep["cells"].as_array().unwrap().len(), 4);
    assert!(sweep["effects"]["cbr_reduction_p50_pct"].as_f64().unwrap() > 0.0);
    assert!(out.join("cell_2019_cbr.json").exists());
}
