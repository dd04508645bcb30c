use propsim::metrics::fork_rate;
use propsim::mining::HashPowerProfile;
use propsim::protocol::MessageKind;
use propsim::scenario::{parse_scenario, run_seed, ScenarioConfig};
use propsim::sim::Simulation;
use propsim::topology::NodeKind;

fn sized(nodes: usize, blocks: u64, cbr: bool, extra: &str) -> ScenarioConfig {
    parse_scenario(&format!(
        "preset = \"compare_2019_legacy\"\nnode_count = {nodes}\nblock_count = {blocks}\nwarmup_blocks = 0\ncbr_enabled = {cbr}\n{extra}"
    ))
    .unwrap()
}

fn small(cbr: bool, extra: &str) -> ScenarioConfig {
    sized(50, 20, cbr, extra)
}

#[test]
fn legacy_traffic_accounts_for_every_delivery() {
    let cfg = small(false, "");
    let out = run_seed(&cfg, 3, None).unwrap();
    let c = &out.report.counters;
    let log = out.world.log();
    let deliveries: u64 = log
        .block_ids()
        .map(|b| log.get(b).unwrap().accepts.len() as u64 - 1)
        .sum();
    assert_eq!(deliveries, 20 * 49, "every block reaches every node");
    assert_eq!(c.messages_of(MessageKind::FullBlock), deliveries);
    assert_eq!(c.messages_of(MessageKind::GetData), deliveries);
    assert!(c.bytes_of(MessageKind::FullBlock) >= cfg.block_size_bytes * 49 * 20);
    let edges = out.world.network().edge_count() as u64;
    // each node announces a block to every neighbor except where it got it
    assert!(c.messages_of(MessageKind::Inv) <= 20 * 2 * edges);
    assert!(c.messages_of(MessageKind::Inv) >= deliveries);
    assert_eq!(c.protocol_errors, 0);
    assert_eq!(c.messages_of(MessageKind::CompactBlock), 0);
}

#[test]
fn compact_traffic_without_failures_never_sends_full_blocks() {
    let cfg = small(
        true,
        "[cbr]\nutilization = 1.0\np_fail_churn = 0.0\np_fail_control = 0.0\n",
    );
    let out = run_seed(&cfg, 3, None).unwrap();
    let c = &out.report.counters;
    assert_eq!(c.messages_of(MessageKind::FullBlock), 0);
    assert_eq!(c.messages_of(MessageKind::CompactBlock), 20 * 49);
    assert_eq!(c.bytes_of(MessageKind::CompactBlock), 20 * 49 * 18_000);
    assert_eq!(c.messages_of(MessageKind::GetBlockTxn), 0);
}

#[test]
fn failures_split_by_node_kind() {
    let cfg = sized(50, 200, true, "[cbr]\nutilization = 1.0\n");
    let out = run_seed(&cfg, 5, None).unwrap();
    let c = &out.report.counters;
    let total: u64 = c.reconstructions.values().sum();
    let failed: u64 = c.reconstruction_failures.values().sum();
    assert_eq!(total, c.messages_of(MessageKind::CompactBlock));
    assert_eq!(failed, c.messages_of(MessageKind::GetBlockTxn));
    assert_eq!(failed, c.messages_of(MessageKind::BlockTxn));
    let rate = |k| c.reconstruction_failures[&k] as f64 / c.reconstructions[&k] as f64;
    assert!((rate(NodeKind::Churn) - 0.27).abs() < 0.03);
    assert!(c.reconstructions.contains_key(&NodeKind::Control));
}

#[test]
fn stops_after_the_requested_block_count_and_drains() {
    let cfg = sized(50, 7, false, "");
    let params = cfg.netparams.load().unwrap();
    let mut sim = Simulation::new(&cfg, params, 9).unwrap();
    sim.run_blocks(7).unwrap();
    assert_eq!(sim.world.ledger().minted(), 7);
    assert!(sim.sched.is_empty());
    assert_eq!(sim.sched.blocks_dispatched(), 7);
    let tip = sim.world.ledger().best_tip().id;
    assert!(sim.world.heads().iter().all(|&h| h == tip));
}

#[test]
fn same_seed_same_bytes() {
    let cfg = small(true, "");
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: u64, name: &str| {
        let path = dir.path().join(name);
        let sink = Box::new(std::fs::File::create(&path).unwrap());
        let report = run_seed(&cfg, seed, Some(sink)).unwrap().report;
        (
            serde_json::to_string(&report).unwrap(),
            std::fs::read(&path).unwrap(),
        )
    };
    let (a, trace_a) = run(11, "a.csv");
    let (b, trace_b) = run(11, "b.csv");
    assert_eq!(a, b);
    assert_eq!(trace_a, trace_b);
    assert!(trace_a.starts_with(b"time,seq,kind,src,dst\n"));
    let (c, _) = run(12, "c.csv");
    assert_ne!(a, c);
}

#[test]
fn independent_of_cbr_setting_the_overlay_and_roles_match() {
    let a = run_seed(&small(false, ""), 4, None).unwrap();
    let b = run_seed(&small(true, ""), 4, None).unwrap();
    assert_eq!(a.world.network(), b.world.network());
}

#[test]
fn equal_hash_power_mines_at_the_target_interval() {
    let mut cfg = sized(20, 1500, false, "");
    cfg.hashpower = HashPowerProfile {
        mean: 1.0,
        stddev: 0.0,
        floor: 1e-6,
    };
    let out = run_seed(&cfg, 21, None).unwrap();
    let ledger = out.world.ledger();
    let mut times: Vec<u64> = ledger.blocks().map(|b| b.mint_time).collect();
    times.sort();
    let mean_gap = times.last().unwrap().to_owned() as f64 / times.len() as f64;
    assert!((mean_gap / 600_000.0 - 1.0).abs() < 0.05, "mean gap {mean_gap}");
    assert!(fork_rate(ledger, ledger.best_tip().id) < 0.01);
}
