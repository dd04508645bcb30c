//! Scenario files, presets, multi-seed runs and the four-cell sweep.
//!
//! A scenario is a TOML document. `preset = "<name>"` starts from a shipped
//! configuration and any other key overrides it (tables merge key by key):
//!
//! ```toml
//! preset = "2019_cbr"
//! node_count = 2000
//! [cbr]
//! p_fail_churn = 0.3
//! ```
//!
//! Without a preset every required key must be present.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::Millis;
use crate::error::{Error, Result};
use crate::metrics::{aggregate_delay, fork_rate, RunReport};
use crate::mining::HashPowerProfile;
use crate::netmodel::{Internet, NetParams};
use crate::protocol::{CbrConfig, RelayConfig};
use crate::sim::{Simulation, World};
use crate::stats::{mean, sample_std};
use crate::topology::DegreeDist;

/// Where a run's regional parameters come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetSource {
    /// `netparams = "2015"` or `"2019"`.
    Year(Internet),
    /// `netparams = { file = "params.json" }`, relative to the scenario file.
    File {
        file: PathBuf,
    },
    Inline(Box<NetParams<f64>>),
}

impl NetSource {
    pub fn year(&self) -> Option<Internet> {
        match self {
            NetSource::Year(y) => Some(*y),
            _ => None,
        }
    }

    pub fn load(&self) -> Result<NetParams<f64>> {
        match self {
            NetSource::Year(y) => Ok(NetParams::preset(*y)),
            NetSource::File { file } => {
                let text = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
                NetParams::from_json(&text)
            }
            NetSource::Inline(p) => {
                p.validate()?;
                Ok((**p).clone())
            }
        }
    }
}

fn default_name() -> String {
    "custom".into()
}

fn default_seed() -> u64 {
    1
}

fn default_warmup() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub node_count: usize,
    pub block_count: u64,
    pub block_size_bytes: u64,
    pub interval_ms: Millis,
    pub netparams: NetSource,
    pub cbr_enabled: bool,
    #[serde(default)]
    pub cbr: CbrConfig,
    #[serde(default)]
    pub relay: RelayConfig,
    #[serde(default)]
    pub degree: DegreeDist,
    #[serde(default)]
    pub hashpower: HashPowerProfile<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_warmup")]
    pub warmup_blocks: usize,
}

pub const REQUIRED_KEYS: [&str; 6] = [
    "node_count",
    "block_count",
    "block_size_bytes",
    "interval_ms",
    "netparams",
    "cbr_enabled",
];

pub const PRESETS: [&str; 6] = [
    "2015_legacy",
    "2019_cbr",
    "compare_2015_legacy",
    "compare_2015_cbr",
    "compare_2019_legacy",
    "compare_2019_cbr",
];

/// Shipped configurations. The two validation presets use each year's
/// population and block size; the `compare_*` family fixes 9000 nodes and
/// 1 MB blocks so only the Internet year and CBR differ.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let (nodes, size, year, cbr) = match name {
        "2015_legacy" => (6000, 535_000, Internet::Y2015, false),
        "2019_cbr" => (9000, 1_000_000, Internet::Y2019, true),
        "compare_2015_legacy" => (9000, 1_000_000, Internet::Y2015, false),
        "compare_2015_cbr" => (9000, 1_000_000, Internet::Y2015, true),
        "compare_2019_legacy" => (9000, 1_000_000, Internet::Y2019, false),
        "compare_2019_cbr" => (9000, 1_000_000, Internet::Y2019, true),
        _ => return None,
    };
    Some(ScenarioConfig {
        name: name.to_string(),
        node_count: nodes,
        block_count: 1000,
        block_size_bytes: size,
        interval_ms: 600_000,
        netparams: NetSource::Year(year),
        cbr_enabled: cbr,
        cbr: CbrConfig::default(),
        relay: RelayConfig::default(),
        degree: DegreeDist::default(),
        hashpower: HashPowerProfile::default(),
        seed: 1,
        warmup_blocks: 10,
    })
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: u64| {
            if v == 0 {
                Err(Error::InvalidKey {
                    key: key.into(),
                    reason: "must be positive".into(),
                })
            } else {
                Ok(())
            }
        };
        positive("node_count", self.node_count as u64)?;
        positive("block_count", self.block_count)?;
        positive("block_size_bytes", self.block_size_bytes)?;
        positive("interval_ms", self.interval_ms)?;
        self.cbr.validate()?;
        self.degree.validate()?;
        self.hashpower.validate()?;
        if self.node_count < self.degree.max_degree() as usize + 1 {
            return Err(Error::InvalidKey {
                key: "node_count".into(),
                reason: format!("must exceed the largest degree {}", self.degree.max_degree()),
            });
        }
        Ok(())
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes to TOML")
    }

    /// Rewrites a relative netparams file against `dir`.
    fn anchor_paths(&mut self, dir: &Path) {
        if let NetSource::File { file } = &mut self.netparams {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Resolves layered tables (later layers override earlier) into a validated
/// config. The first `preset` key found, scanning from the last layer, seeds
/// the base.
pub fn resolve_layers(layers: Vec<toml::Table>) -> Result<ScenarioConfig> {
    let mut layers = layers;
    let mut preset_name = None;
    for layer in layers.iter_mut().rev() {
        if let Some(v) = layer.remove("preset") {
            if preset_name.is_none() {
                preset_name = Some(v);
            }
        }
    }
    let mut merged = match preset_name {
        Some(toml::Value::String(name)) => preset(&name)
            .ok_or_else(|| Error::InvalidKey {
                key: "preset".into(),
                reason: format!("unknown preset `{name}` (known: {})", PRESETS.join(", ")),
            })?
            .to_table(),
        Some(other) => {
            return Err(Error::InvalidKey {
                key: "preset".into(),
                reason: format!("expected a string, found {}", other.type_str()),
            })
        }
        None => toml::Table::new(),
    };
    for layer in layers {
        merge(&mut merged, layer);
    }

    let missing: Vec<String> = REQUIRED_KEYS
        .iter()
        .filter(|k| !merged.contains_key(**k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingKeys(missing));
    }

    let cfg: ScenarioConfig = serde_path_to_error::deserialize(toml::Value::Table(merged)).map_err(|e| {
        let path = e.path().to_string();
        Error::InvalidKey {
            key: path,
            reason: e.into_inner().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    resolve_layers(vec![table])
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_scenario(&text)?;
    cfg.anchor_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

/// A finished run with its world kept for artifact dumps.
pub struct RunOutcome {
    pub report: RunReport,
    pub world: World,
}

pub fn run_seed(cfg: &ScenarioConfig, seed: u64, trace: Option<Box<dyn Write>>) -> Result<RunOutcome> {
    let params = cfg.netparams.load()?;
    let mut sim = Simulation::new(cfg, params, seed)?;
    if let Some(sink) = trace {
        sim = sim.with_trace(sink);
    }
    sim.run_blocks(cfg.block_count)?;

    let world = sim.world;
    let log = world.log();
    let p50 = aggregate_delay(log, 0.5, cfg.warmup_blocks)?;
    let p90 = aggregate_delay(log, 0.9, cfg.warmup_blocks)?;
    let head = world.ledger().best_tip().id;
    let mut config = cfg.clone();
    config.seed = seed;
    let report = RunReport {
        scenario: cfg.name.clone(),
        seed,
        blocks: world.ledger().minted(),
        delay_p50_ms: p50.mean_ms,
        delay_p90_ms: p90.mean_ms,
        fork_rate: fork_rate(world.ledger(), head),
        undefined_percentile_blocks: p90.undefined_blocks,
        final_head: head,
        events: sim.sched.dispatched(),
        trace_hash: format!("{:016x}", sim.sched.trace_hash()),
        counters: world.counters().clone(),
        config,
    };
    Ok(RunOutcome { report, world })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub delay_p50_ms: f64,
    pub delay_p90_ms: f64,
    pub fork_rate: f64,
}

/// Per-seed reports plus their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub mean: Summary,
    pub std: Summary,
    pub runs: Vec<RunReport>,
}

impl Report {
    pub fn from_runs(scenario: &str, runs: Vec<RunReport>) -> Report {
        let col = |f: fn(&RunReport) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
        let (p50, p90, fr) = (
            col(|r| r.delay_p50_ms),
            col(|r| r.delay_p90_ms),
            col(|r| r.fork_rate),
        );
        Report {
            scenario: scenario.to_string(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            mean: Summary {
                delay_p50_ms: mean(&p50).unwrap_or(f64::NAN),
                delay_p90_ms: mean(&p90).unwrap_or(f64::NAN),
                fork_rate: mean(&fr).unwrap_or(f64::NAN),
            },
            std: Summary {
                delay_p50_ms: sample_std(&p50),
                delay_p90_ms: sample_std(&p90),
                fork_rate: sample_std(&fr),
            },
            runs,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// One full simulation per seed. Seeds run on up to `available_parallelism`
/// threads; the report is ordered by the given seed list regardless.
pub fn run_scenario(cfg: &ScenarioConfig, seeds: &[u64]) -> Result<Report> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(seeds.len());
    let runs: Vec<RunReport> = if workers <= 1 {
        seeds
            .iter()
            .map(|&s| run_seed(cfg, s, None).map(|o| o.report))
            .collect::<Result<_>>()?
    } else {
        let mut slots: Vec<Option<Result<RunReport>>> = (0..seeds.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            for (chunk_seeds, chunk_slots) in seeds
                .chunks(seeds.len().div_ceil(workers))
                .zip(slots.chunks_mut(seeds.len().div_ceil(workers)))
            {
                scope.spawn(move || {
                    for (seed, slot) in chunk_seeds.iter().zip(chunk_slots) {
                        *slot = Some(run_seed(cfg, *seed, None).map(|o| o.report));
                    }
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every slot filled"))
            .collect::<Result<_>>()?
    };
    Ok(Report::from_runs(&cfg.name, runs))
}

/// `base, base + 1, ..., base + count - 1`
pub fn seed_range(base: u64, count: u64) -> Vec<u64> {
    (0..count).map(|i| base + i).collect()
}

/// A set of cells run over a shared seed list.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub seeds: Vec<u64>,
    pub cells: Vec<ScenarioConfig>,
}

impl SweepSpec {
    /// Parses a sweep file:
    ///
    /// ```toml
    /// seeds = [1, 2, 3]
    /// [defaults]          # applied to every cell
    /// block_count = 500
    /// [[cell]]
    /// name = "2015_legacy"
    /// preset = "compare_2015_legacy"
    /// ```
    pub fn parse(text: &str) -> Result<SweepSpec> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let seeds: Vec<u64> = match table.remove("seeds") {
            Some(v) => v.try_into().map_err(|e: toml::de::Error| Error::InvalidKey {
                key: "seeds".into(),
                reason: e.to_string(),
            })?,
            None => return Err(Error::MissingKeys(vec!["seeds".into()])),
        };
        let defaults = match table.remove("defaults") {
            Some(toml::Value::Table(t)) => t,
            Some(_) => {
                return Err(Error::InvalidKey {
                    key: "defaults".into(),
                    reason: "must be a table".into(),
                })
            }
            None => toml::Table::new(),
        };
        let cells = match table.remove("cell") {
            Some(toml::Value::Array(cells)) => cells,
            _ => return Err(Error::MissingKeys(vec!["cell".into()])),
        };
        if let Some(key) = table.keys().next() {
            return Err(Error::InvalidKey {
                key: key.clone(),
                reason: "unknown key".into(),
            });
        }
        let cells = cells
            .into_iter()
            .enumerate()
            .map(|(i, c)| match c {
                toml::Value::Table(t) => resolve_layers(vec![defaults.clone(), t]).map_err(|e| match e {
                    Error::InvalidKey { key, reason } => Error::InvalidKey {
                        key: format!("cell[{i}].{key}"),
                        reason,
                    },
                    other => other,
                }),
                _ => Err(Error::InvalidKey {
                    key: format!("cell[{i}]"),
                    reason: "must be a table".into(),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepSpec { seeds, cells })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SweepSpec> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::parse(&text)?;
        for cell in &mut spec.cells {
            cell.anchor_paths(path.parent().unwrap_or(Path::new(".")));
        }
        Ok(spec)
    }

    /// The 2015/2019 x legacy/CBR grid on the `compare_*` presets, with
    /// `overrides` applied to every cell.
    pub fn four_cell(overrides: toml::Table, seeds: Vec<u64>) -> Result<SweepSpec> {
        let cells = ["2015_legacy", "2015_cbr", "2019_legacy", "2019_cbr"]
            .into_iter()
            .map(|name| {
                let mut cell = toml::Table::new();
                cell.insert("preset".into(), format!("compare_{name}").into());
                cell.insert("name".into(), name.into());
                resolve_layers(vec![overrides.clone(), cell])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepSpec { seeds, cells })
    }

    pub fn run(&self) -> Result<SweepReport> {
        let cells = self
            .cells
            .iter()
            .map(|cfg| run_scenario(cfg, &self.seeds))
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepReport::new(&self.cells, cells))
    }
}

/// Relative reductions in percent: `100 * (baseline - variant) / baseline`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effects {
    /// 2015 legacy -> 2015 CBR.
    pub cbr_reduction_p50_pct: f64,
    pub cbr_reduction_p90_pct: f64,
    /// 2015 legacy -> 2019 legacy.
    pub internet_reduction_p50_pct: f64,
    pub internet_reduction_p90_pct: f64,
}

pub fn reduction_pct(baseline: f64, variant: f64) -> f64 {
    100.0 * (baseline - variant) / baseline
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub name: String,
    pub internet: Option<Internet>,
    pub cbr_enabled: bool,
    pub mean: Summary,
    pub std: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<CellSummary>,
    /// Present when the 2015 legacy, 2015 CBR and 2019 legacy cells all exist.
    pub effects: Option<Effects>,
    #[serde(skip)]
    pub reports: Vec<Report>,
}

impl SweepReport {
    fn new(configs: &[ScenarioConfig], reports: Vec<Report>) -> SweepReport {
        let cells: Vec<CellSummary> = configs
            .iter()
            .zip(&reports)
            .map(|(cfg, r)| CellSummary {
                name: cfg.name.clone(),
                internet: cfg.netparams.year(),
                cbr_enabled: cfg.cbr_enabled,
                mean: r.mean,
                std: r.std,
            })
            .collect();
        let find = |year, cbr| {
            cells
                .iter()
                .find(|c| c.internet == Some(year) && c.cbr_enabled == cbr)
                .map(|c| c.mean)
        };
        let effects = match (
            find(Internet::Y2015, false),
            find(Internet::Y2015, true),
            find(Internet::Y2019, false),
        ) {
            (Some(base), Some(cbr), Some(net)) => Some(Effects {
                cbr_reduction_p50_pct: reduction_pct(base.delay_p50_ms, cbr.delay_p50_ms),
                cbr_reduction_p90_pct: reduction_pct(base.delay_p90_ms, cbr.delay_p90_ms),
                internet_reduction_p50_pct: reduction_pct(base.delay_p50_ms, net.delay_p50_ms),
                internet_reduction_p90_pct: reduction_pct(base.delay_p90_ms, net.delay_p90_ms),
            }),
            _ => None,
        };
        SweepReport {
            cells,
            effects,
            reports,
        }
    }

    pub fn cell(&self, name: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("sweep serializes");
        s.push('\n');
        s
    }
}
