//! Block relay: message vocabulary, the compact block reconstruction failure
//! model, and the per-node relay state machine.
//!
//! Two exchanges are modeled, both announced with `inv`:
//!
//! ```text
//! legacy:   inv -> getdata        -> block
//! compact:  inv -> getdata(cmpct) -> cmpctblock [-> getblocktxn -> blocktxn]
//! ```
//!
//! The compact path is taken only when both peers are CBR-capable and compact
//! relay is enabled for the run. A compact block that cannot be reconstructed
//! costs one more round trip carrying the missing bytes. Only low-bandwidth
//! (announce-first) relaying exists.

use std::collections::BTreeMap;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{round_ms, Millis, Scheduler};
use crate::error::{Error, Result};
use crate::mining::BlockId;
use crate::sim::{BlockStatus, Payload, World};
use crate::topology::{NodeId, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Inv,
    GetData,
    FullBlock,
    GetDataCompact,
    CompactBlock,
    GetBlockTxn,
    BlockTxn,
}

impl MessageKind {
    pub const ALL: [MessageKind; 7] = [
        MessageKind::Inv,
        MessageKind::GetData,
        MessageKind::FullBlock,
        MessageKind::GetDataCompact,
        MessageKind::CompactBlock,
        MessageKind::GetBlockTxn,
        MessageKind::BlockTxn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Inv => "inv",
            MessageKind::GetData => "get_data",
            MessageKind::FullBlock => "full_block",
            MessageKind::GetDataCompact => "get_data_compact",
            MessageKind::CompactBlock => "compact_block",
            MessageKind::GetBlockTxn => "get_block_txn",
            MessageKind::BlockTxn => "block_txn",
        }
    }

    /// Block-carrying messages occupy the sender's upload link; the rest are
    /// small control messages.
    pub fn carries_block_data(self) -> bool {
        matches!(
            self,
            MessageKind::FullBlock | MessageKind::CompactBlock | MessageKind::BlockTxn
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub block: BlockId,
    /// Bytes carried. For `GetBlockTxn` this is the size the requester is
    /// missing, which the reply must carry; its own wire size is control-sized.
    pub payload_bytes: u64,
}

/// How concurrent block uploads from one node share its link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UploadModel {
    /// One block upload at a time per node, first come first served.
    Serial,
    /// Like `Serial`, but the uploader stays busy until the message has
    /// arrived, so each send costs its latency as well.
    #[default]
    StopAndWait,
    /// Every transfer gets the full bottleneck rate.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbrConfig {
    pub utilization: f64,
    pub compact_size_bytes: u64,
    pub churn_ratio: f64,
    pub p_fail_churn: f64,
    pub p_fail_control: f64,
    /// Push compact blocks before validation without an announcement. Not
    /// modeled; enabling it is a configuration error.
    pub high_bandwidth: bool,
}

impl Default for CbrConfig {
    fn default() -> Self {
        CbrConfig {
            utilization: 0.964,
            compact_size_bytes: 18_000,
            churn_ratio: 0.976,
            p_fail_churn: 0.27,
            p_fail_control: 0.13,
            high_bandwidth: false,
        }
    }
}

impl CbrConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("cbr.utilization", self.utilization),
            ("cbr.churn_ratio", self.churn_ratio),
            ("cbr.p_fail_churn", self.p_fail_churn),
            ("cbr.p_fail_control", self.p_fail_control),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidKey {
                    key: key.into(),
                    reason: format!("{v} is outside [0, 1]"),
                });
            }
        }
        if self.compact_size_bytes == 0 {
            return Err(Error::InvalidKey {
                key: "cbr.compact_size_bytes".into(),
                reason: "must be positive".into(),
            });
        }
        if self.high_bandwidth {
            return Err(Error::HighBandwidthUnsupported);
        }
        Ok(())
    }

    pub fn failure_model(&self) -> FailureSizeModel<f64> {
        FailureSizeModel {
            p_fail_churn: self.p_fail_churn,
            p_fail_control: self.p_fail_control,
            ..FailureSizeModel::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelayConfig {
    /// Size of inv/getdata/getblocktxn.
    pub control_message_bytes: u64,
    /// Delay between receiving a block and announcing it.
    pub validation_ms: Millis,
    pub upload: UploadModel,
}

impl Default for RelayConfig {
    fn default() -> Self {
        RelayConfig {
            control_message_bytes: 61,
            validation_ms: 0,
            upload: UploadModel::StopAndWait,
        }
    }
}

/// Wire size of a message. `missing_bytes` only matters for `BlockTxn`.
pub fn message_size(
    kind: MessageKind,
    block_size: u64,
    missing_bytes: u64,
    cbr: &CbrConfig,
    relay: &RelayConfig,
) -> u64 {
    match kind {
        MessageKind::FullBlock => block_size,
        MessageKind::CompactBlock => cbr.compact_size_bytes,
        MessageKind::BlockTxn => missing_bytes,
        MessageKind::Inv | MessageKind::GetData | MessageKind::GetDataCompact | MessageKind::GetBlockTxn => {
            relay.control_message_bytes
        }
    }
}

/// Distribution of the data a receiver must still download after a failed
/// compact block reconstruction, as a fraction `r` of the block size.
///
/// Survival functions:
///
/// ```text
/// churn:   P(R > r) = exp(-2.12e3 r)
/// control: P(R > r) = 1 - 0.0964 ln(2.89e4 r + 1)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureSizeModel<F> {
    pub churn_rate_constant: F,
    pub control_log_coeff: F,
    pub control_scale: F,
    pub p_fail_churn: F,
    pub p_fail_control: F,
}

impl<F: Float + FromPrimitive> Default for FailureSizeModel<F> {
    fn default() -> Self {
        let c = |x: f64| F::from_f64(x).unwrap();
        FailureSizeModel {
            churn_rate_constant: c(2.12e3),
            control_log_coeff: c(0.0964),
            control_scale: c(2.89e4),
            p_fail_churn: c(0.27),
            p_fail_control: c(0.13),
        }
    }
}

impl<F: Float> FailureSizeModel<F> {
    pub fn p_fail(&self, kind: NodeKind) -> F {
        match kind {
            NodeKind::Churn => self.p_fail_churn,
            NodeKind::Control => self.p_fail_control,
        }
    }

    /// `P(R > r)` before clamping, limited to `[0, 1]`.
    pub fn survival(&self, kind: NodeKind, r: F) -> F {
        if r < F::zero() {
            return F::one();
        }
        let p = match kind {
            NodeKind::Churn => (-self.churn_rate_constant * r).exp(),
            NodeKind::Control => F::one() - self.control_log_coeff * (self.control_scale * r + F::one()).ln(),
        };
        p.max(F::zero()).min(F::one())
    }

    /// CDF of the clamped ratio: continuous on `[0, 1)`, with the tail mass
    /// beyond 1 collected at exactly 1.
    pub fn clamped_cdf(&self, kind: NodeKind, r: F) -> F {
        if r >= F::one() {
            F::one()
        } else {
            F::one() - self.survival(kind, r)
        }
    }

    /// Left limit of [`Self::clamped_cdf`].
    pub fn clamped_cdf_left(&self, kind: NodeKind, r: F) -> F {
        if r > F::one() {
            F::one()
        } else {
            F::one() - self.survival(kind, r)
        }
    }

    /// The ratio whose survival probability is `u`, clamped to `[0, 1]`.
    pub fn ratio_at_survival(&self, kind: NodeKind, u: F) -> F {
        let r = match kind {
            NodeKind::Churn => -u.ln() / self.churn_rate_constant,
            NodeKind::Control => {
                (((F::one() - u) / self.control_log_coeff).exp() - F::one()) / self.control_scale
            }
        };
        r.max(F::zero()).min(F::one())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconstructionOutcome {
    pub failed: bool,
    /// Zero unless `failed`.
    pub missing_bytes: u64,
}

/// Missing fraction of a failed reconstruction, by inverse transform of the
/// node kind's survival function. Clamped to `[0, 1]`.
pub fn sample_failure_ratio<F, R>(kind: NodeKind, model: &FailureSizeModel<F>, rng: &mut R) -> F
where
    F: Float + FromPrimitive,
    R: Rng + ?Sized,
{
    let u: f64 = rng.sample(Open01);
    model.ratio_at_survival(kind, F::from_f64(u).unwrap())
}

pub fn sample_reconstruction<F, R>(
    kind: NodeKind,
    block_size: u64,
    model: &FailureSizeModel<F>,
    rng: &mut R,
) -> ReconstructionOutcome
where
    F: Float + FromPrimitive + ToPrimitive,
    R: Rng + ?Sized,
{
    let coin: f64 = rng.random();
    let failed = coin < model.p_fail(kind).to_f64().unwrap();
    if !failed {
        return ReconstructionOutcome {
            failed,
            missing_bytes: 0,
        };
    }
    let r = sample_failure_ratio(kind, model, rng);
    let missing = round_ms(r.to_f64().unwrap() * block_size as f64).min(block_size);
    ReconstructionOutcome {
        failed,
        missing_bytes: missing,
    }
}

/// Per-run message and reconstruction counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolCounters {
    pub messages: BTreeMap<MessageKind, u64>,
    pub bytes: BTreeMap<MessageKind, u64>,
    pub reconstructions: BTreeMap<NodeKind, u64>,
    pub reconstruction_failures: BTreeMap<NodeKind, u64>,
    pub protocol_errors: u64,
}

impl ProtocolCounters {
    pub fn record(&mut self, kind: MessageKind, bytes: u64) {
        *self.messages.entry(kind).or_default() += 1;
        *self.bytes.entry(kind).or_default() += bytes;
    }

    pub fn messages_of(&self, kind: MessageKind) -> u64 {
        self.messages.get(&kind).copied().unwrap_or(0)
    }

    pub fn bytes_of(&self, kind: MessageKind) -> u64 {
        self.bytes.get(&kind).copied().unwrap_or(0)
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes.values().sum()
    }
}

impl World {
    /// Announces `block` to every neighbor not already known to have it.
    pub fn relay_block(&mut self, sched: &mut Scheduler<Payload>, node: NodeId, block: BlockId) {
        let announced = self.announcers.remove(&(block, node)).unwrap_or_default();
        let offset = if self.ledger.block(block).minter == Some(node) {
            0
        } else {
            self.relay.validation_ms
        };
        let neighbors = std::mem::take(&mut self.net.neighbors[node as usize]);
        for &peer in neighbors.iter().filter(|p| !announced.contains(p)) {
            self.send_control(sched, node, peer, MessageKind::Inv, block, offset);
        }
        self.net.neighbors[node as usize] = neighbors;
    }

    /// Advances `node`'s side of the exchange for one delivered message.
    pub fn handle_message(
        &mut self,
        sched: &mut Scheduler<Payload>,
        node: NodeId,
        msg: Message,
        sender: NodeId,
    ) -> Result<()> {
        let known_block = (msg.block as usize) <= self.ledger.minted() && msg.block != 0;
        match msg.kind {
            MessageKind::Inv => {
                if !known_block {
                    self.counters.protocol_errors += 1;
                    return Ok(());
                }
                match self.status(msg.block, node) {
                    BlockStatus::Accepted => {}
                    BlockStatus::InFlight => {
                        self.announcers.entry((msg.block, node)).or_default().push(sender);
                    }
                    BlockStatus::Unknown => {
                        self.announcers.entry((msg.block, node)).or_default().push(sender);
                        self.set_status(msg.block, node, BlockStatus::InFlight);
                        let request = if self.compact_pair(node, sender) {
                            MessageKind::GetDataCompact
                        } else {
                            MessageKind::GetData
                        };
                        self.send_control(sched, node, sender, request, msg.block, 0);
                    }
                }
            }
            MessageKind::GetData | MessageKind::GetDataCompact | MessageKind::GetBlockTxn => {
                if !known_block || self.status(msg.block, node) != BlockStatus::Accepted {
                    self.counters.protocol_errors += 1;
                    return Ok(());
                }
                let (kind, size) = match msg.kind {
                    MessageKind::GetData => (MessageKind::FullBlock, self.ledger.block(msg.block).size_bytes),
                    MessageKind::GetDataCompact => (MessageKind::CompactBlock, self.cbr.compact_size_bytes),
                    _ => (MessageKind::BlockTxn, msg.payload_bytes),
                };
                self.send_block_data(sched, node, sender, kind, msg.block, size);
            }
            MessageKind::FullBlock | MessageKind::BlockTxn => {
                self.accept(sched, node, msg.block)?;
            }
            MessageKind::CompactBlock => {
                let kind = self.net.kind[node as usize];
                let block_size = self.ledger.block(msg.block).size_bytes;
                let outcome = sample_reconstruction(kind, block_size, &self.failure, &mut self.recon_rng);
                *self.counters.reconstructions.entry(kind).or_default() += 1;
                if outcome.failed {
                    *self.counters.reconstruction_failures.entry(kind).or_default() += 1;
                    self.send_sized_control(
                        sched,
                        node,
                        sender,
                        Message {
                            kind: MessageKind::GetBlockTxn,
                            block: msg.block,
                            payload_bytes: outcome.missing_bytes,
                        },
                    );
                } else {
                    self.accept(sched, node, msg.block)?;
                }
            }
        }
        Ok(())
    }

    /// Compact exchange iff enabled for the run and both ends are capable.
    pub fn compact_pair(&self, a: NodeId, b: NodeId) -> bool {
        self.cbr_enabled && self.net.cbr_capable[a as usize] && self.net.cbr_capable[b as usize]
    }

    fn send_control(
        &mut self,
        sched: &mut Scheduler<Payload>,
        from: NodeId,
        to: NodeId,
        kind: MessageKind,
        block: BlockId,
        offset: Millis,
    ) {
        let size = self.relay.control_message_bytes;
        let (rf, rt) = (self.net.region[from as usize], self.net.region[to as usize]);
        let delay = offset + self.params.transfer_delay(size, rf, rt);
        self.counters.record(kind, size);
        sched.schedule_in(
            delay,
            Payload::MessageArrival {
                sender: from,
                receiver: to,
                message: Message {
                    kind,
                    block,
                    payload_bytes: size,
                },
            },
        );
    }

    /// A control message that carries a number (getblocktxn's missing size)
    /// but is itself control-sized on the wire.
    fn send_sized_control(
        &mut self,
        sched: &mut Scheduler<Payload>,
        from: NodeId,
        to: NodeId,
        message: Message,
    ) {
        let size = self.relay.control_message_bytes;
        let (rf, rt) = (self.net.region[from as usize], self.net.region[to as usize]);
        self.counters.record(message.kind, size);
        sched.schedule_in(
            self.params.transfer_delay(size, rf, rt),
            Payload::MessageArrival {
                sender: from,
                receiver: to,
                message,
            },
        );
    }

    fn send_block_data(
        &mut self,
        sched: &mut Scheduler<Payload>,
        from: NodeId,
        to: NodeId,
        kind: MessageKind,
        block: BlockId,
        size: u64,
    ) {
        let (rf, rt) = (self.net.region[from as usize], self.net.region[to as usize]);
        let tx = self.params.transmission(size, rf, rt);
        let now = sched.now();
        let start = match self.relay.upload {
            UploadModel::Serial | UploadModel::StopAndWait => now.max(self.upload_free_at[from as usize]),
            UploadModel::Parallel => now,
        };
        let arrival = start + tx + self.params.latency(rf, rt);
        self.upload_free_at[from as usize] = match self.relay.upload {
            UploadModel::StopAndWait => arrival,
            _ => start + tx,
        };
        self.counters.record(kind, size);
        sched
            .schedule(
                arrival,
                Payload::MessageArrival {
                    sender: from,
                    receiver: to,
                    message: Message {
                        kind,
                        block,
                        payload_bytes: size,
                    },
                },
            )
            .expect("arrival is never before now");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn message_sizes() {
        let (cbr, relay) = (CbrConfig::default(), RelayConfig::default());
        assert_eq!(
            message_size(MessageKind::CompactBlock, 1_000_000, 0, &cbr, &relay),
            18_000
        );
        assert_eq!(
            message_size(MessageKind::FullBlock, 535_000, 0, &cbr, &relay),
            535_000
        );
        assert_eq!(message_size(MessageKind::Inv, 535_000, 0, &cbr, &relay), 61);
        assert_eq!(
            message_size(MessageKind::GetBlockTxn, 535_000, 99, &cbr, &relay),
            61
        );
        assert_eq!(message_size(MessageKind::BlockTxn, 535_000, 99, &cbr, &relay), 99);
    }

    #[test]
    fn survival_starts_at_one_and_decreases() {
        let m = FailureSizeModel::<f64>::default();
        for kind in [NodeKind::Churn, NodeKind::Control] {
            assert_eq!(m.survival(kind, 0.0), 1.0);
            let mut prev = 1.0;
            for i in 1..=1000 {
                let s = m.survival(kind, i as f64 / 1000.0);
                assert!(s <= prev);
                prev = s;
            }
        }
    }

    #[test]
    fn inverse_boundaries() {
        let m = FailureSizeModel::<f64>::default();
        assert_eq!(m.ratio_at_survival(NodeKind::Churn, 1.0), 0.0);
        assert_eq!(m.ratio_at_survival(NodeKind::Control, 1.0), 0.0);
        // deep tail of the control curve is clamped to the whole block
        assert_eq!(m.ratio_at_survival(NodeKind::Control, 1e-4), 1.0);
    }

    #[test]
    fn medians_match_closed_form() {
        let m = FailureSizeModel::<f64>::default();
        // exp(-2120 r) = 1/2
        let churn = m.ratio_at_survival(NodeKind::Churn, 0.5);
        assert!((churn - std::f64::consts::LN_2 / 2120.0).abs() < 1e-15);
        assert_eq!(round_ms(churn * 1e6), 327);
        // 1 - 0.0964 ln(28900 r + 1) = 1/2
        let control = m.ratio_at_survival(NodeKind::Control, 0.5);
        assert!((control - ((0.5f64 / 0.0964).exp() - 1.0) / 28900.0).abs() < 1e-15);
        assert!((control - 6.16e-3).abs() < 1e-5);
        assert_eq!(round_ms(control * 1e6), 6155);
    }

    #[test]
    fn outcome_invariants() {
        let m = CbrConfig::default().failure_model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..20_000 {
            let kind = if i % 2 == 0 {
                NodeKind::Churn
            } else {
                NodeKind::Control
            };
            let o = sample_reconstruction(kind, 1_000_000, &m, &mut rng);
            assert!(o.missing_bytes <= 1_000_000);
            if !o.failed {
                assert_eq!(o.missing_bytes, 0);
            }
        }
    }

    #[test]
    fn never_failing_model() {
        let m = FailureSizeModel {
            p_fail_churn: 0.0,
            p_fail_control: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!((0..1000).all(|_| !sample_reconstruction::<f64, _>(NodeKind::Churn, 10, &m, &mut rng).failed));
    }

    #[test]
    fn f32_model_agrees() {
        let m32 = FailureSizeModel::<f32>::default();
        let m64 = FailureSizeModel::<f64>::default();
        for u in [0.1, 0.5, 0.9] {
            let a = m32.ratio_at_survival(NodeKind::Control, u as f32) as f64;
            let b = m64.ratio_at_survival(NodeKind::Control, u);
            assert!((a - b).abs() / b < 1e-4);
        }
    }

    #[test]
    fn high_bandwidth_is_rejected() {
        let cfg = CbrConfig {
            high_bandwidth: true,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::HighBandwidthUnsupported)));
    }
}
