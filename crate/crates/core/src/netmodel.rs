//! Regional latency/bandwidth model and its derivation from per-country data.
//!
//! A message of `size` bytes from region `s` to region `r` takes
//! `latency[s][r] + size * 8 / min(up[s], down[r])` seconds (converted to
//! milliseconds and rounded half-up). The regional tables are node-count
//! weighted means over the countries in each region.

use std::collections::BTreeMap;
use std::io::Read;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::engine::{round_ms, Millis};
use crate::error::{Error, Result};
use crate::stats::weighted_mean;
use crate::topology::{Region, REGION_COUNT};

/// Floor applied to an intra-city latency with no self-measurement.
pub const SELF_LATENCY_FLOOR_MS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetParams<F> {
    /// Region order of every table below.
    pub regions: [Region; REGION_COUNT],
    /// `latency_ms[from][to]`, milliseconds.
    pub latency_ms: [[F; REGION_COUNT]; REGION_COUNT],
    /// Bits per second.
    pub upload_bps: [F; REGION_COUNT],
    pub download_bps: [F; REGION_COUNT],
    pub region_shares: [F; REGION_COUNT],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Internet {
    #[serde(rename = "2015")]
    Y2015,
    #[serde(rename = "2019")]
    Y2019,
}

impl std::str::FromStr for Internet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2015" => Ok(Internet::Y2015),
            "2019" => Ok(Internet::Y2019),
            _ => Err(Error::Parse(format!("unknown internet year `{s}`"))),
        }
    }
}

pub const NETPARAMS_2015_JSON: &str = include_str!("../data/netparams_2015.json");
pub const NETPARAMS_2019_JSON: &str = include_str!("../data/netparams_2019.json");

impl NetParams<f64> {
    /// Shipped regional parameters for the given year.
    pub fn preset(year: Internet) -> NetParams<f64> {
        let text = match year {
            Internet::Y2015 => NETPARAMS_2015_JSON,
            Internet::Y2019 => NETPARAMS_2019_JSON,
        };
        let params: NetParams<f64> = serde_json::from_str(text).expect("embedded netparams are well-formed");
        params.validate().expect("embedded netparams are valid");
        params
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: NetParams<f64> = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("netparams serialize");
        s.push('\n');
        s
    }
}

impl<F: Float + ToPrimitive> NetParams<F> {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| {
            Err(Error::InvalidKey {
                key: format!("netparams.{key}"),
                reason,
            })
        };
        if self.regions != Region::ALL {
            return bad("regions", "must list the six regions in canonical order".into());
        }
        if self
            .latency_ms
            .iter()
            .flatten()
            .any(|l| !(*l > F::zero()) || !l.is_finite())
        {
            return bad("latency_ms", "entries must be positive and finite".into());
        }
        for (key, table) in [
            ("upload_bps", &self.upload_bps),
            ("download_bps", &self.download_bps),
        ] {
            if table.iter().any(|b| !(*b > F::zero()) || !b.is_finite()) {
                return bad(key, "bandwidths must be positive and finite".into());
            }
        }
        let sum = self
            .region_shares
            .iter()
            .fold(F::zero(), |a, &s| a + s)
            .to_f64()
            .unwrap_or(f64::NAN);
        if self.region_shares.iter().any(|s| !(*s >= F::zero())) || !((sum - 1.0).abs() <= 1e-9) {
            return bad(
                "region_shares",
                format!("must be non-negative and sum to 1 (got {sum})"),
            );
        }
        Ok(())
    }

    pub fn shares_f64(&self) -> [f64; REGION_COUNT] {
        self.region_shares.map(|s| s.to_f64().unwrap())
    }

    /// Bottleneck rate between a sender and a receiver.
    pub fn effective_bps(&self, from: Region, to: Region) -> F {
        self.upload_bps[from.index()].min(self.download_bps[to.index()])
    }

    pub fn latency(&self, from: Region, to: Region) -> Millis {
        round_ms(self.latency_ms[from.index()][to.index()].to_f64().unwrap())
    }

    /// Time the sender's link is busy pushing `size_bytes`.
    pub fn transmission(&self, size_bytes: u64, from: Region, to: Region) -> Millis {
        let bps = self.effective_bps(from, to).to_f64().unwrap();
        round_ms(size_bytes as f64 * 8.0 / bps * 1000.0)
    }

    /// One-way delay of a `size_bytes` message.
    pub fn transfer_delay(&self, size_bytes: u64, from: Region, to: Region) -> Millis {
        self.latency(from, to) + self.transmission(size_bytes, from, to)
    }
}

/// One country's measurements. A country measured at several cities splits
/// its node weight evenly across them.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryRow {
    pub country: String,
    pub region: Region,
    pub node_count: u64,
    pub cities: Vec<String>,
    /// `(up_bps, down_bps)`
    pub bandwidth_bps: Option<(f64, f64)>,
}

/// Directional city-to-city latency table, milliseconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CityLatency(BTreeMap<(String, String), f64>);

impl CityLatency {
    pub fn insert(&mut self, from: &str, to: &str, ms: f64) {
        self.0.insert((from.to_string(), to.to_string()), ms);
    }

    /// Directional lookup, falling back to the reverse direction. A city to
    /// itself without a measurement gets [`SELF_LATENCY_FLOOR_MS`].
    pub fn get(&self, from: &str, to: &str) -> Result<f64> {
        let key = |a: &str, b: &str| (a.to_string(), b.to_string());
        if let Some(ms) = self.0.get(&key(from, to)).or_else(|| self.0.get(&key(to, from))) {
            return Ok(*ms);
        }
        if from == to {
            return Ok(SELF_LATENCY_FLOOR_MS);
        }
        Err(Error::MissingCityPair {
            from: from.to_string(),
            to: to.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn cast<F: FromPrimitive>(x: f64) -> F {
    F::from_f64(x).expect("value representable in scalar type")
}

/// Rows in a canonical order so sums do not depend on input order.
fn canonical(rows: &[CountryRow]) -> Vec<&CountryRow> {
    let mut sorted: Vec<&CountryRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.country.cmp(&b.country).then(a.region.cmp(&b.region)));
    sorted
}

pub fn derive_node_distribution<F: Float + FromPrimitive>(rows: &[CountryRow]) -> Result<[F; REGION_COUNT]> {
    let mut per_region = [0u64; REGION_COUNT];
    for row in rows {
        per_region[row.region.index()] += row.node_count;
    }
    let total: u64 = per_region.iter().sum();
    if total == 0 {
        return Err(Error::ZeroNodes);
    }
    Ok(per_region.map(|c| cast::<F>(c as f64) / cast::<F>(total as f64)))
}

/// `(city, weight)` pairs for every measured city in a region.
fn weighted_cities(rows: &[&CountryRow], region: Region) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for row in rows.iter().filter(|r| r.region == region && r.node_count > 0) {
        if row.cities.is_empty() {
            return Err(Error::MissingCity(row.country.clone()));
        }
        let share = row.node_count as f64 / row.cities.len() as f64;
        let mut cities = row.cities.clone();
        cities.sort();
        out.extend(cities.into_iter().map(|c| (c, share)));
    }
    Ok(out)
}

pub fn derive_region_latency<F: Float + FromPrimitive>(
    rows: &[CountryRow],
    table: &CityLatency,
) -> Result<[[F; REGION_COUNT]; REGION_COUNT]> {
    let rows = canonical(rows);
    let members: Vec<Vec<(String, f64)>> = Region::ALL
        .iter()
        .map(|&r| weighted_cities(&rows, r))
        .collect::<Result<_>>()?;

    let mut out = [[F::zero(); REGION_COUNT]; REGION_COUNT];
    for from in Region::ALL {
        for to in Region::ALL {
            let (src, dst) = (&members[from.index()], &members[to.index()]);
            let mut pairs = Vec::with_capacity(src.len() * dst.len());
            for (c1, w1) in src {
                for (c2, w2) in dst {
                    let ms = table.get(c1, c2)?;
                    pairs.push((cast::<F>(w1 * w2), cast::<F>(ms)));
                }
            }
            out[from.index()][to.index()] = weighted_mean(pairs)
                .ok_or_else(|| Error::Config(format!("no nodes to weight latency {from} -> {to}")))?;
        }
    }
    Ok(out)
}

/// Node-count weighted `(upload, download)` per region.
pub fn derive_region_bandwidth<F: Float + FromPrimitive>(
    rows: &[CountryRow],
) -> Result<([F; REGION_COUNT], [F; REGION_COUNT])> {
    let rows = canonical(rows);
    let mut up = [F::zero(); REGION_COUNT];
    let mut down = [F::zero(); REGION_COUNT];
    for region in Region::ALL {
        let mut ups = Vec::new();
        let mut downs = Vec::new();
        for row in rows.iter().filter(|r| r.region == region && r.node_count > 0) {
            let (u, d) = row
                .bandwidth_bps
                .ok_or_else(|| Error::MissingBandwidth(row.country.clone()))?;
            let w = cast::<F>(row.node_count as f64);
            ups.push((w, cast::<F>(u)));
            downs.push((w, cast::<F>(d)));
        }
        let none = || Error::Config(format!("no nodes to weight bandwidth in {region}"));
        up[region.index()] = weighted_mean(ups).ok_or_else(none)?;
        down[region.index()] = weighted_mean(downs).ok_or_else(none)?;
    }
    Ok((up, down))
}

pub fn derive_net_params<F: Float + FromPrimitive>(
    rows: &[CountryRow],
    table: &CityLatency,
) -> Result<NetParams<F>> {
    let region_shares = derive_node_distribution(rows)?;
    let latency_ms = derive_region_latency(rows, table)?;
    let (upload_bps, download_bps) = derive_region_bandwidth(rows)?;
    Ok(NetParams {
        regions: Region::ALL,
        latency_ms,
        upload_bps,
        download_bps,
        region_shares,
    })
}

/// Reads `countries.csv` and `bandwidth.csv` into rows. A country may appear
/// on several lines of `countries.csv`, one per measurement city.
pub fn read_country_rows<R1: Read, R2: Read>(countries: R1, bandwidth: R2) -> Result<Vec<CountryRow>> {
    #[derive(Deserialize)]
    struct Line {
        country: String,
        region: String,
        node_count: u64,
        #[serde(default)]
        city: Option<String>,
    }
    #[derive(Deserialize)]
    struct Bw {
        country: String,
        up_bps: f64,
        down_bps: f64,
    }

    let mut by_country: BTreeMap<String, CountryRow> = BTreeMap::new();
    for line in csv::Reader::from_reader(countries).deserialize() {
        let line: Line = line?;
        let region: Region = line.region.parse()?;
        let row = by_country
            .entry(line.country.clone())
            .or_insert_with(|| CountryRow {
                country: line.country.clone(),
                region,
                node_count: line.node_count,
                cities: Vec::new(),
                bandwidth_bps: None,
            });
        if row.region != region || row.node_count != line.node_count {
            return Err(Error::Parse(format!(
                "country {} has conflicting region or node_count rows",
                line.country
            )));
        }
        if let Some(city) = line.city.filter(|c| !c.is_empty()) {
            if !row.cities.contains(&city) {
                row.cities.push(city);
            }
        }
    }
    for bw in csv::Reader::from_reader(bandwidth).deserialize() {
        let bw: Bw = bw?;
        let row = by_country
            .get_mut(&bw.country)
            .ok_or_else(|| Error::Parse(format!("bandwidth for unlisted country {}", bw.country)))?;
        if row.bandwidth_bps.is_some() {
            return Err(Error::Parse(format!(
                "duplicate bandwidth row for {}",
                bw.country
            )));
        }
        row.bandwidth_bps = Some((bw.up_bps, bw.down_bps));
    }
    Ok(by_country.into_values().collect())
}

pub fn read_city_latency<R: Read>(input: R) -> Result<CityLatency> {
    #[derive(Deserialize)]
    struct Line {
        src_city: String,
        dst_city: String,
        ms: f64,
    }
    let mut table = CityLatency::default();
    for line in csv::Reader::from_reader(input).deserialize() {
        let Line {
            src_city,
            dst_city,
            ms,
        } = line?;
        if !(ms >= 0.0) || !ms.is_finite() {
            return Err(Error::Parse(format!(
                "bad latency {ms} for {src_city} -> {dst_city}"
            )));
        }
        table.insert(&src_city, &dst_city, ms);
    }
    Ok(table)
}

/// Derives parameters from the three CSV inputs.
pub fn derive_from_csv<R1: Read, R2: Read, R3: Read>(
    countries: R1,
    latency: R2,
    bandwidth: R3,
) -> Result<NetParams<f64>> {
    let rows = read_country_rows(countries, bandwidth)?;
    let table = read_city_latency(latency)?;
    let params = derive_net_params(&rows, &table)?;
    params.validate()?;
    Ok(params)
}
