use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use propsim::metrics::{block_summaries, write_block_csv};
use propsim::netmodel::derive_from_csv;
use propsim::scenario::{load_scenario, resolve_layers, run_seed, seed_range, Report, SweepSpec};
use propsim::{Error, Internet, Result};

#[derive(Parser)]
#[command(name = "propsim", version, about = "Block propagation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario over one or more seeds.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// First seed (defaults to the scenario's).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        blocks: Option<u64>,
        #[arg(long, value_enum)]
        cbr: Option<Toggle>,
        #[arg(long, value_parser = parse_internet)]
        internet: Option<Internet>,
        /// Directory for the report and per-seed CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the event trace per seed (requires --out).
        #[arg(long)]
        trace: bool,
    },
    /// Derive regional parameters from per-country CSVs.
    DeriveParams {
        #[arg(long)]
        countries: PathBuf,
        #[arg(long)]
        latency: PathBuf,
        #[arg(long)]
        bandwidth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every cell of a sweep file.
    Sweep {
        #[arg(long)]
        cells: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_internet(s: &str) -> std::result::Result<Internet, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    scenario: &Path,
    seed: Option<u64>,
    seeds: u64,
    nodes: Option<usize>,
    blocks: Option<u64>,
    cbr: Option<Toggle>,
    internet: Option<Internet>,
    out: Option<&Path>,
    trace: bool,
) -> Result<()> {
    let base = load_scenario(scenario)?;
    let mut overrides = toml::Table::new();
    if let Some(n) = nodes {
        overrides.insert("node_count".into(), (n as i64).into());
    }
    if let Some(b) = blocks {
        overrides.insert("block_count".into(), (b as i64).into());
    }
    if let Some(c) = cbr {
        overrides.insert("cbr_enabled".into(), matches!(c, Toggle::On).into());
    }
    if let Some(year) = internet {
        let s = match year {
            Internet::Y2015 => "2015",
            Internet::Y2019 => "2019",
        };
        overrides.insert("netparams".into(), s.into());
    }
    let cfg = resolve_layers(vec![base.to_table(), overrides])?;
    if seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    if trace && out.is_none() {
        return Err(Error::Config("--trace requires --out".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut runs = Vec::new();
    for s in seed_range(seed.unwrap_or(cfg.seed), seeds) {
        let sink: Option<Box<dyn Write>> = match (trace, out) {
            (true, Some(dir)) => Some(Box::new(create(&dir.join(format!("trace_seed{s}.csv")))?)),
            _ => None,
        };
        let outcome = run_seed(&cfg, s, sink)?;
        if let Some(dir) = out {
            let world = &outcome.world;
            write_block_csv(
                &block_summaries(world.log()),
                create(&dir.join(format!("blocks_seed{s}.csv")))?,
            )?;
            world.ledger().write_csv(
                outcome.report.final_head,
                create(&dir.join(format!("ledger_seed{s}.csv")))?,
            )?;
            world
                .network()
                .write_nodes(create(&dir.join(format!("nodes_seed{s}.csv")))?)?;
            world
                .network()
                .write_edges(create(&dir.join(format!("edges_seed{s}.csv")))?)?;
        }
        runs.push(outcome.report);
    }
    let report = Report::from_runs(&cfg.name, runs);
    match out {
        Some(dir) => write_text(&dir.join("report.json"), &report.to_json())?,
        None => print!("{}", report.to_json()),
    }
    Ok(())
}

fn derive_params(countries: &Path, latency: &Path, bandwidth: &Path, out: &Path) -> Result<()> {
    let open = |p: &Path| File::open(p).map_err(|e| Error::io(p, e));
    let params = derive_from_csv(open(countries)?, open(latency)?, open(bandwidth)?)?;
    write_text(out, &params.to_json())
}

fn sweep(cells: &Path, out: &Path) -> Result<()> {
    let spec = SweepSpec::load(cells)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let report = spec.run()?;
    for r in &report.reports {
        write_text(&out.join(format!("cell_{}.json", r.scenario)), &r.to_json())?;
    }
    write_text(&out.join("sweep.json"), &report.to_json())?;
    print!("{}", report.to_json());
    Ok(())
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let body = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{body}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            return fail("usage", message.trim_end());
        }
    };
    let result = match cli.command {
        Command::Simulate {
            scenario,
            seed,
            seeds,
            nodes,
            blocks,
            cbr,
            internet,
            out,
            trace,
        } => simulate(
            &scenario,
            seed,
            seeds,
            nodes,
            blocks,
            cbr,
            internet,
            out.as_deref(),
            trace,
        ),
        Command::DeriveParams {
            countries,
            latency,
            bandwidth,
            out,
        } => derive_params(&countries, &latency, &bandwidth, &out),
        Command::Sweep { cells, out } => sweep(&cells, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
