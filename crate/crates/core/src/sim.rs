//! One simulated run: the mutable world state driven by the event engine.

use std::collections::HashMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{Event, EventHandle, Handler, Millis, Scheduler, StopCondition, Traced};
use crate::error::Result;
use crate::metrics::ArrivalLog;
use crate::mining::{assign_hashpower, select_head, BlockId, Ledger, GENESIS};
use crate::netmodel::NetParams;
use crate::protocol::{CbrConfig, FailureSizeModel, Message, ProtocolCounters, RelayConfig};
use crate::scenario::ScenarioConfig;
use crate::topology::{assign_roles, build_network, Network, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    /// `node` finds a block on top of `parent`.
    MiningComplete { node: NodeId, parent: BlockId },
    MessageArrival {
        sender: NodeId,
        receiver: NodeId,
        message: Message,
    },
}

impl Traced for Payload {
    fn kind(&self) -> &'static str {
        match self {
            Payload::MiningComplete { .. } => "mine",
            Payload::MessageArrival { message, .. } => message.kind.name(),
        }
    }

    fn src(&self) -> u32 {
        match self {
            Payload::MiningComplete { node, .. } => *node,
            Payload::MessageArrival { sender, .. } => *sender,
        }
    }

    fn dst(&self) -> u32 {
        match self {
            Payload::MiningComplete { node, .. } => *node,
            Payload::MessageArrival { receiver, .. } => *receiver,
        }
    }

    fn mints_block(&self) -> bool {
        matches!(self, Payload::MiningComplete { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockStatus {
    Unknown,
    /// Requested from a peer, not yet accepted.
    InFlight,
    Accepted,
}

/// Parameters of a run that the relay and mining code read.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub block_size_bytes: u64,
    pub interval_ms: Millis,
    pub cbr_enabled: bool,
    pub cbr: CbrConfig,
    pub relay: RelayConfig,
}

impl RunSettings {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        RunSettings {
            block_size_bytes: cfg.block_size_bytes,
            interval_ms: cfg.interval_ms,
            cbr_enabled: cfg.cbr_enabled,
            cbr: cfg.cbr.clone(),
            relay: cfg.relay.clone(),
        }
    }
}

/// Independent generator for one purpose within a seeded run.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_TOPOLOGY: u64 = 0;
const STREAM_ROLES: u64 = 1;
const STREAM_HASHPOWER: u64 = 2;
const STREAM_RECONSTRUCTION: u64 = 3;
/// Node `i` mines from stream `STREAM_MINING_BASE + i`.
const STREAM_MINING_BASE: u64 = 1 << 20;

pub struct World {
    pub(crate) net: Network,
    pub(crate) params: NetParams<f64>,
    pub(crate) ledger: Ledger,
    pub(crate) head: Vec<BlockId>,
    status: Vec<Vec<BlockStatus>>,
    /// Peers that announced a block to a node that has not accepted it yet.
    pub(crate) announcers: HashMap<(BlockId, NodeId), Vec<NodeId>>,
    pub(crate) upload_free_at: Vec<Millis>,
    pub(crate) mining: Vec<Option<EventHandle>>,
    pub(crate) mining_rng: Vec<ChaCha8Rng>,
    pub(crate) mining_enabled: bool,
    pub(crate) recon_rng: ChaCha8Rng,
    pub(crate) log: ArrivalLog,
    pub(crate) counters: ProtocolCounters,
    pub(crate) block_size_bytes: u64,
    pub(crate) interval_ms: Millis,
    pub(crate) cbr_enabled: bool,
    pub(crate) cbr: CbrConfig,
    pub(crate) relay: RelayConfig,
    pub(crate) failure: FailureSizeModel<f64>,
}

impl World {
    fn new(net: Network, params: NetParams<f64>, settings: RunSettings, seed: u64) -> Self {
        let n = net.len();
        World {
            ledger: Ledger::new(),
            head: vec![GENESIS; n],
            status: vec![vec![BlockStatus::Accepted; n]],
            announcers: HashMap::new(),
            upload_free_at: vec![0; n],
            mining: vec![None; n],
            mining_rng: (0..n as u64)
                .map(|i| rng_stream(seed, STREAM_MINING_BASE + i))
                .collect(),
            mining_enabled: false,
            recon_rng: rng_stream(seed, STREAM_RECONSTRUCTION),
            log: ArrivalLog::new(n),
            counters: ProtocolCounters::default(),
            block_size_bytes: settings.block_size_bytes,
            interval_ms: settings.interval_ms,
            cbr_enabled: settings.cbr_enabled,
            failure: settings.cbr.failure_model(),
            cbr: settings.cbr,
            relay: settings.relay,
            net,
            params,
        }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &NetParams<f64> {
        &self.params
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn log(&self) -> &ArrivalLog {
        &self.log
    }

    pub fn counters(&self) -> &ProtocolCounters {
        &self.counters
    }

    pub fn head(&self, node: NodeId) -> BlockId {
        self.head[node as usize]
    }

    pub fn heads(&self) -> &[BlockId] {
        &self.head
    }

    pub fn status(&self, block: BlockId, node: NodeId) -> BlockStatus {
        self.status
            .get(block as usize)
            .map_or(BlockStatus::Unknown, |s| s[node as usize])
    }

    pub(crate) fn set_status(&mut self, block: BlockId, node: NodeId, status: BlockStatus) {
        self.status[block as usize][node as usize] = status;
    }

    /// Blocks a node has accepted, in id order.
    pub fn known_blocks(&self, node: NodeId) -> Vec<BlockId> {
        (0..self.status.len() as BlockId)
            .filter(|&b| self.status(b, node) == BlockStatus::Accepted)
            .collect()
    }

    pub(crate) fn register_block(&mut self, block: BlockId, at: Millis) {
        debug_assert_eq!(block as usize, self.status.len());
        self.status.push(vec![BlockStatus::Unknown; self.net.len()]);
        self.log.record_mint(block, at);
    }

    /// Takes a fully received block: records it, updates the head (restarting
    /// mining if it moved), and announces it onward. Accepting twice is a no-op.
    pub(crate) fn accept(
        &mut self,
        sched: &mut Scheduler<Payload>,
        node: NodeId,
        block: BlockId,
    ) -> Result<()> {
        if self.status(block, node) == BlockStatus::Accepted {
            return Ok(());
        }
        self.set_status(block, node, BlockStatus::Accepted);
        let is_minter = self.ledger.block(block).minter == Some(node);
        let validation = if is_minter { 0 } else { self.relay.validation_ms };
        self.log.record_accept(block, node, sched.now() + validation);

        let current = self.ledger.block(self.head[node as usize]);
        let chosen = select_head(current, self.ledger.block(block)).id;
        if chosen != current.id {
            self.head[node as usize] = chosen;
            self.on_head_change(sched, node)?;
        }
        self.relay_block(sched, node, block);
        Ok(())
    }
}

impl Handler<Payload> for World {
    fn handle(&mut self, sched: &mut Scheduler<Payload>, event: Event<Payload>) -> Result<()> {
        match event.payload {
            Payload::MiningComplete { node, parent } => self.mine(sched, node, parent),
            Payload::MessageArrival {
                sender,
                receiver,
                message,
            } => self.handle_message(sched, receiver, message, sender),
        }
    }
}

/// Engine plus world for one seeded run.
pub struct Simulation {
    pub sched: Scheduler<Payload>,
    pub world: World,
}

impl Simulation {
    /// Builds the overlay, roles and hash power from the seed's generator
    /// streams. Topology and mining streams do not depend on the CBR or
    /// Internet settings, so runs that differ only in those share them.
    pub fn new(cfg: &ScenarioConfig, params: NetParams<f64>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut net = build_network(
            cfg.node_count,
            &params.shares_f64(),
            &cfg.degree,
            &mut rng_stream(seed, STREAM_TOPOLOGY),
        )?;
        assign_roles(
            &mut net,
            cfg.cbr.utilization,
            cfg.cbr.churn_ratio,
            &mut rng_stream(seed, STREAM_ROLES),
        )?;
        net.hash_share = assign_hashpower(net.len(), &cfg.hashpower, &mut rng_stream(seed, STREAM_HASHPOWER));
        Ok(Self::from_network(
            net,
            params,
            RunSettings::from_config(cfg),
            seed,
        ))
    }

    /// A run over a prebuilt network. Mining is off until [`Self::start_mining`].
    pub fn from_network(net: Network, params: NetParams<f64>, settings: RunSettings, seed: u64) -> Self {
        Simulation {
            sched: Scheduler::new(),
            world: World::new(net, params, settings, seed),
        }
    }

    pub fn with_trace(mut self, sink: Box<dyn Write>) -> Self {
        self.sched = std::mem::take(&mut self.sched).with_trace(sink);
        self
    }

    pub fn now(&self) -> Millis {
        self.sched.now()
    }

    pub fn start_mining(&mut self) -> Result<()> {
        self.world.mining_enabled = true;
        for node in 0..self.world.net.len() as NodeId {
            self.world.on_head_change(&mut self.sched, node)?;
        }
        Ok(())
    }

    /// Cancels every pending mining event; in-flight messages keep flowing.
    pub fn stop_mining(&mut self) {
        self.world.mining_enabled = false;
        for slot in self.world.mining.iter_mut() {
            if let Some(h) = slot.take() {
                self.sched.cancel(h);
            }
        }
    }

    /// Forces `node` to find a block at time `at` on whatever its head is then.
    pub fn schedule_mint(&mut self, node: NodeId, at: Millis) -> Result<EventHandle> {
        // parent is resolved when the event fires
        self.sched.schedule(
            at,
            Payload::MiningComplete {
                node,
                parent: GENESIS,
            },
        )
    }

    pub fn run(&mut self, stop: StopCondition) -> Result<()> {
        self.sched.run(&mut self.world, stop)
    }

    /// Mines until `blocks` have been found, then stops mining and lets every
    /// outstanding message drain.
    pub fn run_blocks(&mut self, blocks: u64) -> Result<()> {
        self.start_mining()?;
        self.run(StopCondition::BlockCountReached(blocks))?;
        self.stop_mining();
        self.run(StopCondition::Exhausted)
    }

    pub fn trace_hash(&self) -> u64 {
        self.sched.trace_hash()
    }
}
