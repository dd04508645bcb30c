//! Random overlay construction and static node roles.

use std::collections::VecDeque;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u32;

pub const REGION_COUNT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    NorthAmerica,
    Europe,
    SouthAmerica,
    Asia,
    Japan,
    Australia,
}

impl Region {
    pub const ALL: [Region; REGION_COUNT] = [
        Region::NorthAmerica,
        Region::Europe,
        Region::SouthAmerica,
        Region::Asia,
        Region::Japan,
        Region::Australia,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::NorthAmerica => "north_america",
            Region::Europe => "europe",
            Region::SouthAmerica => "south_america",
            Region::Asia => "asia",
            Region::Japan => "japan",
            Region::Australia => "australia",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown region `{s}`")))
    }
}

/// Mempool-completeness class of a node; only affects compact block
/// reconstruction, never connectivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Churn,
    Control,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Churn => "churn",
            NodeKind::Control => "control",
        }
    }
}

impl FromStr for NodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "churn" => Ok(NodeKind::Churn),
            "control" => Ok(NodeKind::Control),
            _ => Err(Error::Parse(format!("unknown node kind `{s}`"))),
        }
    }
}

/// Outbound-degree distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DegreeDist {
    Constant {
        degree: u32,
    },
    /// `(degree, weight)` rows; weights need not be normalized.
    Table {
        rows: Vec<(u32, f64)>,
    },
}

impl Default for DegreeDist {
    fn default() -> Self {
        DegreeDist::Constant { degree: 8 }
    }
}

impl DegreeDist {
    pub fn max_degree(&self) -> u32 {
        match self {
            DegreeDist::Constant { degree } => *degree,
            DegreeDist::Table { rows } => rows
                .iter()
                .filter(|(_, w)| *w > 0.0)
                .map(|(d, _)| *d)
                .max()
                .unwrap_or(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DegreeDist::Constant { degree: 0 } => Err(Error::InvalidKey {
                key: "degree.degree".into(),
                reason: "must be positive".into(),
            }),
            DegreeDist::Table { rows } => {
                if rows.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite())
                    || !rows.iter().any(|(_, w)| *w > 0.0)
                {
                    return Err(Error::InvalidKey {
                        key: "degree.rows".into(),
                        reason: "weights must be finite, non-negative, and not all zero".into(),
                    });
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn sampler(&self) -> Result<DegreeSampler> {
        self.validate()?;
        Ok(match self {
            DegreeDist::Constant { degree } => DegreeSampler::Constant(*degree),
            DegreeDist::Table { rows } => DegreeSampler::Table(
                rows.iter().map(|(d, _)| *d).collect(),
                WeightedIndex::new(rows.iter().map(|(_, w)| *w))
                    .map_err(|e| Error::Config(format!("degree table: {e}")))?,
            ),
        })
    }
}

enum DegreeSampler {
    Constant(u32),
    Table(Vec<u32>, WeightedIndex<f64>),
}

impl DegreeSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            DegreeSampler::Constant(d) => *d,
            DegreeSampler::Table(degrees, w) => degrees[w.sample(rng)],
        }
    }
}

/// Static per-node attributes plus the undirected adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub region: Vec<Region>,
    pub neighbors: Vec<Vec<NodeId>>,
    pub cbr_capable: Vec<bool>,
    pub kind: Vec<NodeKind>,
    pub hash_share: Vec<f64>,
}

impl Network {
    pub fn len(&self) -> usize {
        self.region.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_connected(&self) -> bool {
        let n = self.len();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbors[u] {
                let v = v as usize;
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == n
    }

    pub fn region_counts(&self) -> [usize; REGION_COUNT] {
        let mut counts = [0; REGION_COUNT];
        for r in &self.region {
            counts[r.index()] += 1;
        }
        counts
    }

    /// Edge list CSV with header `a,b`, each undirected edge once with `a < b`.
    pub fn write_edges<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["a", "b"])?;
        for (a, adj) in self.neighbors.iter().enumerate() {
            for &b in adj.iter().filter(|&&b| b as usize > a) {
                w.write_record([a.to_string(), b.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("edges", e))?;
        Ok(())
    }

    /// Node attribute CSV `node_id,region,cbr,kind,hash_share`.
    pub fn write_nodes<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node_id", "region", "cbr", "kind", "hash_share"])?;
        for i in 0..self.len() {
            w.write_record([
                i.to_string(),
                self.region[i].name().to_string(),
                self.cbr_capable[i].to_string(),
                self.kind[i].name().to_string(),
                format!("{:e}", self.hash_share[i]),
            ])?;
        }
        w.flush().map_err(|e| Error::io("nodes", e))?;
        Ok(())
    }

    pub fn read_csv<R1: Read, R2: Read>(nodes: R1, edges: R2) -> Result<Network> {
        #[derive(Deserialize)]
        struct NodeRow {
            node_id: usize,
            region: String,
            cbr: bool,
            kind: String,
            hash_share: f64,
        }
        #[derive(Deserialize)]
        struct EdgeRow {
            a: NodeId,
            b: NodeId,
        }

        let mut rows: Vec<NodeRow> = csv::Reader::from_reader(nodes)
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        rows.sort_by_key(|r| r.node_id);
        if rows.iter().enumerate().any(|(i, r)| r.node_id != i) {
            return Err(Error::Parse("node ids must be 0..n without gaps".into()));
        }
        let n = rows.len();
        let mut net = Network {
            region: Vec::with_capacity(n),
            neighbors: vec![Vec::new(); n],
            cbr_capable: Vec::with_capacity(n),
            kind: Vec::with_capacity(n),
            hash_share: Vec::with_capacity(n),
        };
        for r in rows {
            net.region.push(r.region.parse()?);
            net.cbr_capable.push(r.cbr);
            net.kind.push(r.kind.parse()?);
            net.hash_share.push(r.hash_share);
        }
        for row in csv::Reader::from_reader(edges).deserialize() {
            let EdgeRow { a, b } = row?;
            if a == b || a as usize >= n || b as usize >= n {
                return Err(Error::Parse(format!("bad edge {a},{b}")));
            }
            net.neighbors[a as usize].push(b);
            net.neighbors[b as usize].push(a);
        }
        Ok(net)
    }
}

/// Integer counts per region that sum exactly to `n` (largest remainder).
/// Remainder ties go to the lower region index.
pub fn largest_remainder(shares: &[f64; REGION_COUNT], n: usize) -> [usize; REGION_COUNT] {
    let mut counts = [0usize; REGION_COUNT];
    let mut rems = [(0.0f64, 0usize); REGION_COUNT];
    for (i, s) in shares.iter().enumerate() {
        let exact = s * n as f64;
        counts[i] = exact.floor() as usize;
        rems[i] = (exact - exact.floor(), i);
    }
    let assigned: usize = counts.iter().sum();
    rems.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn validate_shares(shares: &[f64; REGION_COUNT]) -> Result<()> {
    let sum: f64 = shares.iter().sum();
    if shares.iter().any(|s| !(*s >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidKey {
            key: "region_shares".into(),
            reason: format!("must be non-negative and sum to 1 (got {sum})"),
        });
    }
    Ok(())
}

const MAX_BUILD_ATTEMPTS: usize = 64;

/// Builds a connected random overlay.
///
/// Regions are dealt by largest-remainder counts and shuffled across node ids.
/// Every node then draws an outbound degree and links to that many distinct
/// peers it is not yet adjacent to (fewer if not enough remain). Links are
/// undirected. If the result is disconnected the build is repeated, drawing
/// from further along the same generator.
pub fn build_network<R: Rng + ?Sized>(
    node_count: usize,
    region_shares: &[f64; REGION_COUNT],
    degree_dist: &DegreeDist,
    rng: &mut R,
) -> Result<Network> {
    validate_shares(region_shares)?;
    let sampler = degree_dist.sampler()?;
    if node_count == 0 || node_count < degree_dist.max_degree() as usize + 1 {
        return Err(Error::Config(format!(
            "node_count {node_count} is smaller than max degree {} + 1",
            degree_dist.max_degree()
        )));
    }

    let counts = largest_remainder(region_shares, node_count);
    for _ in 0..MAX_BUILD_ATTEMPTS {
        let mut region: Vec<Region> = Region::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&r, c)| std::iter::repeat_n(r, c))
            .collect();
        region.shuffle(rng);

        let mut neighbors: Vec<Vec<NodeId>> = vec![Vec::new(); node_count];
        for i in 0..node_count {
            let want = sampler.sample(rng) as usize;
            let available = node_count - 1 - neighbors[i].len();
            if available <= want {
                for j in 0..node_count {
                    if j != i && !neighbors[i].contains(&(j as NodeId)) {
                        link(&mut neighbors, i, j);
                    }
                }
                continue;
            }
            let mut added = 0;
            while added < want {
                let j = rng.random_range(0..node_count);
                if j != i && !neighbors[i].contains(&(j as NodeId)) {
                    link(&mut neighbors, i, j);
                    added += 1;
                }
            }
        }

        let net = Network {
            region,
            neighbors,
            cbr_capable: vec![false; node_count],
            kind: vec![NodeKind::Control; node_count],
            hash_share: vec![1.0 / node_count as f64; node_count],
        };
        if net.is_connected() {
            return Ok(net);
        }
    }
    Err(Error::Config(format!(
        "could not build a connected overlay in {MAX_BUILD_ATTEMPTS} attempts"
    )))
}

fn link(neighbors: &mut [Vec<NodeId>], a: usize, b: usize) {
    neighbors[a].push(b as NodeId);
    neighbors[b].push(a as NodeId);
}

/// Marks exactly `round(cbr_rate * n)` nodes CBR-capable and, independently,
/// exactly `round(churn_ratio * n)` nodes as churn nodes. Both subsets are
/// uniform over node ids.
pub fn assign_roles<R: Rng + ?Sized>(
    network: &mut Network,
    cbr_rate: f64,
    churn_ratio: f64,
    rng: &mut R,
) -> Result<()> {
    for (key, v) in [("cbr.utilization", cbr_rate), ("cbr.churn_ratio", churn_ratio)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidKey {
                key: key.into(),
                reason: format!("{v} is outside [0, 1]"),
            });
        }
    }
    let n = network.len();
    let exact = |rate: f64| ((rate * n as f64 + 0.5).floor() as usize).min(n);

    network.cbr_capable.fill(false);
    for i in index::sample(rng, n, exact(cbr_rate)) {
        network.cbr_capable[i] = true;
    }
    network.kind.fill(NodeKind::Control);
    for i in index::sample(rng, n, exact(churn_ratio)) {
        network.kind[i] = NodeKind::Churn;
    }
    Ok(())
}
