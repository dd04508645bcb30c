//! Proof-of-work block generation and chain selection.

use std::io::Write;

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{round_ms, Millis, Scheduler};
use crate::error::{Error, Result};
use crate::sim::{Payload, World};
use crate::topology::NodeId;

pub type BlockId = u32;

pub const GENESIS: BlockId = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    /// `None` only for genesis.
    pub parent: Option<BlockId>,
    pub height: u64,
    /// Sum of per-block difficulty along the chain. Every block contributes 1.
    pub total_difficulty: u64,
    pub size_bytes: u64,
    /// `None` only for genesis.
    pub minter: Option<NodeId>,
    pub mint_time: Millis,
}

/// Largest total difficulty wins; an exact tie keeps the block seen first.
pub fn select_head<'a>(current: &'a Block, candidate: &'a Block) -> &'a Block {
    if candidate.total_difficulty > current.total_difficulty {
        candidate
    } else {
        current
    }
}

/// Every block ever minted, indexed by id. Id 0 is genesis.
#[derive(Debug, Clone)]
pub struct Ledger {
    blocks: Vec<Block>,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::new()
    }
}

impl Ledger {
    pub fn new() -> Self {
        Ledger {
            blocks: vec![Block {
                id: GENESIS,
                parent: None,
                height: 0,
                total_difficulty: 0,
                size_bytes: 0,
                minter: None,
                mint_time: 0,
            }],
        }
    }

    pub fn genesis(&self) -> &Block {
        &self.blocks[0]
    }

    pub fn get(&self, id: BlockId) -> Option<&Block> {
        self.blocks.get(id as usize)
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id as usize]
    }

    /// Appends a child of `parent`.
    pub fn mint(&mut self, parent: BlockId, minter: NodeId, size_bytes: u64, at: Millis) -> Result<BlockId> {
        let p = self.get(parent).ok_or(Error::UnknownBlock(parent))?;
        let id = self.blocks.len() as BlockId;
        let block = Block {
            id,
            parent: Some(parent),
            height: p.height + 1,
            total_difficulty: p.total_difficulty + 1,
            size_bytes,
            minter: Some(minter),
            mint_time: at,
        };
        self.blocks.push(block);
        Ok(id)
    }

    /// Number of minted blocks, genesis excluded.
    pub fn minted(&self) -> usize {
        self.blocks.len() - 1
    }

    /// Minted blocks in id order, genesis excluded.
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().skip(1)
    }

    /// Highest total difficulty; ties go to the earlier mint (then lower id).
    pub fn best_tip(&self) -> &Block {
        self.blocks
            .iter()
            .min_by(|a, b| {
                b.total_difficulty
                    .cmp(&a.total_difficulty)
                    .then(a.mint_time.cmp(&b.mint_time))
                    .then(a.id.cmp(&b.id))
            })
            .expect("ledger holds genesis")
    }

    /// `on_main[id]` is true iff `id` is an ancestor of `head` (inclusive).
    pub fn main_chain_mask(&self, head: BlockId) -> Vec<bool> {
        let mut mask = vec![false; self.blocks.len()];
        let mut cursor = Some(head);
        while let Some(id) = cursor {
            mask[id as usize] = true;
            cursor = self.blocks[id as usize].parent;
        }
        mask
    }

    /// CSV `block_id,parent,height,minter,mint_time,on_main_chain`.
    pub fn write_csv<W: Write>(&self, head: BlockId, out: W) -> Result<()> {
        let mask = self.main_chain_mask(head);
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "block_id",
            "parent",
            "height",
            "minter",
            "mint_time",
            "on_main_chain",
        ])?;
        for b in self.blocks() {
            w.write_record([
                b.id.to_string(),
                b.parent.map(|p| p.to_string()).unwrap_or_default(),
                b.height.to_string(),
                b.minter.map(|m| m.to_string()).unwrap_or_default(),
                b.mint_time.to_string(),
                mask[b.id as usize].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("ledger", e))?;
        Ok(())
    }
}

/// Truncated Gaussian hash power; the family is fixed, the parameters are
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashPowerProfile<F> {
    pub mean: F,
    pub stddev: F,
    pub floor: F,
}

impl<F: Float + FromPrimitive> Default for HashPowerProfile<F> {
    fn default() -> Self {
        HashPowerProfile {
            mean: F::one(),
            stddev: F::from_f64(0.25).unwrap(),
            floor: F::from_f64(1e-6).unwrap(),
        }
    }
}

impl<F: Float> HashPowerProfile<F> {
    pub fn validate(&self) -> Result<()> {
        let invalid = |key: &str, reason: &str| {
            Err(Error::InvalidKey {
                key: format!("hashpower.{key}"),
                reason: reason.into(),
            })
        };
        if !(self.mean > F::zero()) || !self.mean.is_finite() {
            return invalid("mean", "must be positive");
        }
        if !(self.stddev >= F::zero()) || !self.stddev.is_finite() {
            return invalid("stddev", "must be non-negative");
        }
        if !(self.floor > F::zero()) || !self.floor.is_finite() {
            return invalid("floor", "must be positive");
        }
        Ok(())
    }
}

/// Draws `n` Gaussian hash rates, lifts anything below the floor up to it, and
/// normalizes the result into shares summing to one.
pub fn assign_hashpower<F, R>(n: usize, profile: &HashPowerProfile<F>, rng: &mut R) -> Vec<F>
where
    F: Float + FromPrimitive,
    R: Rng + ?Sized,
{
    let raw: Vec<F> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (profile.mean + profile.stddev * F::from_f64(z).unwrap()).max(profile.floor)
        })
        .collect();
    let total = raw.iter().fold(F::zero(), |a, &x| a + x);
    raw.into_iter().map(|x| x / total).collect()
}

/// Time until `hash_share` of the network finds a block: exponential with
/// mean `interval_ms / hash_share`, rounded to whole milliseconds.
pub fn sample_next_block_time<R: Rng + ?Sized>(hash_share: f64, interval_ms: Millis, rng: &mut R) -> Millis {
    debug_assert!(hash_share > 0.0 && hash_share <= 1.0 + 1e-12);
    let e: f64 = Exp1.sample(rng);
    round_ms(e * interval_ms as f64 / hash_share)
}

impl World {
    /// Restarts `node`'s mining race on its current head: the pending
    /// completion (if any) is cancelled and a fresh exponential sample drawn.
    pub fn on_head_change(&mut self, sched: &mut Scheduler<Payload>, node: NodeId) -> Result<()> {
        let i = node as usize;
        if let Some(handle) = self.mining[i].take() {
            sched.cancel(handle);
        }
        if !self.mining_enabled {
            return Ok(());
        }
        let wait = sample_next_block_time(self.net.hash_share[i], self.interval_ms, &mut self.mining_rng[i]);
        let handle = sched.schedule(
            sched.now() + wait,
            Payload::MiningComplete {
                node,
                parent: self.head[i],
            },
        )?;
        self.mining[i] = Some(handle);
        Ok(())
    }

    /// `node` found a block on its current head.
    pub(crate) fn mine(
        &mut self,
        sched: &mut Scheduler<Payload>,
        node: NodeId,
        _scheduled_on: BlockId,
    ) -> Result<()> {
        self.mining[node as usize] = None;
        let now = sched.now();
        let parent = self.head[node as usize];
        let block = self.ledger.mint(parent, node, self.block_size_bytes, now)?;
        self.register_block(block, now);
        self.accept(sched, node, block)
    }
}
