//! Block arrival log, propagation-delay percentiles, and fork rate.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::Millis;
use crate::error::{Error, Result};
use crate::mining::{BlockId, Ledger};
use crate::protocol::ProtocolCounters;
use crate::scenario::ScenarioConfig;
use crate::stats::{mean, nearest_rank};
use crate::topology::NodeId;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockArrivals {
    pub mint_time: Millis,
    pub accepts: Vec<(NodeId, Millis)>,
}

/// Append-only record of when each node accepted each block.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalLog {
    total_nodes: usize,
    blocks: BTreeMap<BlockId, BlockArrivals>,
}

impl ArrivalLog {
    pub fn new(total_nodes: usize) -> Self {
        ArrivalLog {
            total_nodes,
            blocks: BTreeMap::new(),
        }
    }

    pub fn total_nodes(&self) -> usize {
        self.total_nodes
    }

    pub fn record_mint(&mut self, block: BlockId, at: Millis) {
        self.blocks.entry(block).or_default().mint_time = at;
    }

    pub fn record_accept(&mut self, block: BlockId, node: NodeId, at: Millis) {
        let entry = self.blocks.entry(block).or_default();
        debug_assert!(at >= entry.mint_time);
        debug_assert!(entry.accepts.iter().all(|(n, _)| *n != node), "double accept");
        entry.accepts.push((node, at));
    }

    pub fn get(&self, block: BlockId) -> Option<&BlockArrivals> {
        self.blocks.get(&block)
    }

    pub fn block_ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.blocks.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Sorted acceptance delays of one block.
    pub fn delays(&self, block: BlockId) -> Result<Vec<Millis>> {
        let b = self.blocks.get(&block).ok_or(Error::UnknownBlock(block))?;
        let mut d: Vec<Millis> = b.accepts.iter().map(|(_, t)| t - b.mint_time).collect();
        d.sort_unstable();
        Ok(d)
    }
}

/// Nearest-rank percentile over all nodes: the `ceil(q * n)`-th smallest
/// delay, or `None` if fewer nodes than that accepted the block.
pub fn propagation_percentile(log: &ArrivalLog, block: BlockId, q: f64) -> Result<Option<Millis>> {
    assert!(q > 0.0 && q <= 1.0, "quantile {q} outside (0, 1]");
    let delays = log.delays(block)?;
    Ok(percentile_of_sorted(&delays, log.total_nodes, q))
}

fn percentile_of_sorted(sorted: &[Millis], total_nodes: usize, q: f64) -> Option<Millis> {
    let k = nearest_rank(q, total_nodes);
    (sorted.len() >= k).then(|| sorted[k - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayAggregate {
    pub mean_ms: f64,
    pub eligible_blocks: usize,
    pub undefined_blocks: usize,
}

/// Mean of per-block percentiles over the blocks after the first `warmup`
/// (in block id order) whose percentile is defined.
pub fn aggregate_delay(log: &ArrivalLog, q: f64, warmup: usize) -> Result<DelayAggregate> {
    let mut values = Vec::new();
    let mut undefined = 0;
    for id in log.block_ids().skip(warmup) {
        match propagation_percentile(log, id, q)? {
            Some(ms) => values.push(ms as f64),
            None => undefined += 1,
        }
    }
    let mean_ms = mean(&values).ok_or(Error::NoEligibleBlocks)?;
    Ok(DelayAggregate {
        mean_ms,
        eligible_blocks: values.len(),
        undefined_blocks: undefined,
    })
}

/// Fraction of minted blocks (genesis excluded) not on the chain ending at
/// `final_head`.
pub fn fork_rate(ledger: &Ledger, final_head: BlockId) -> f64 {
    let minted = ledger.minted();
    if minted == 0 {
        return 0.0;
    }
    let on_main = ledger
        .main_chain_mask(final_head)
        .iter()
        .skip(1)
        .filter(|&&m| m)
        .count();
    (minted - on_main) as f64 / minted as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub block_id: BlockId,
    pub p50_ms: Option<Millis>,
    pub p90_ms: Option<Millis>,
    pub reached_all: bool,
}

pub fn block_summaries(log: &ArrivalLog) -> Vec<BlockSummary> {
    log.block_ids()
        .map(|id| {
            let d = log.delays(id).expect("id comes from the log");
            BlockSummary {
                block_id: id,
                p50_ms: percentile_of_sorted(&d, log.total_nodes, 0.5),
                p90_ms: percentile_of_sorted(&d, log.total_nodes, 0.9),
                reached_all: d.len() == log.total_nodes,
            }
        })
        .collect()
}

/// CSV `block_id,p50_ms,p90_ms,reached_all`; undefined percentiles are empty.
pub fn write_block_csv<W: Write>(summaries: &[BlockSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["block_id", "p50_ms", "p90_ms", "reached_all"])?;
    let opt = |v: Option<Millis>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in summaries {
        w.write_record([
            s.block_id.to_string(),
            opt(s.p50_ms),
            opt(s.p90_ms),
            s.reached_all.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("blocks", e))?;
    Ok(())
}

/// Outcome of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub blocks: usize,
    pub delay_p50_ms: f64,
    pub delay_p90_ms: f64,
    pub fork_rate: f64,
    pub undefined_percentile_blocks: usize,
    pub final_head: BlockId,
    pub events: u64,
    /// Hex FNV-1a over the dispatched event trace.
    pub trace_hash: String,
    pub counters: ProtocolCounters,
    pub config: ScenarioConfig,
}
