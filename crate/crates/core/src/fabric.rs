//! Transfer fabric: link bandwidth/latency modeling, per-move CRC
//! verification, and fault injection.
//!
//! Links are undirected capacity pools shared by processor sharing: at any
//! instant every active flow gets bandwidth/n. Progress is integrated
//! between events only, so the model stays exact and replayable. Every file
//! move is CRC-checked against the catalog value; a mismatch triggers a
//! bounded retransfer.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::types::{FileId, LinkKey, NodeId};

#[derive(Debug, Error, PartialEq)]
pub enum FabricError {
    #[error("no link between {0} and {1}")]
    NoLink(NodeId, NodeId),
    #[error("transfer of {file} over {src} -> {dst} failed after {attempts} attempts")]
    StageFailed {
        file: FileId,
        src: NodeId,
        dst: NodeId,
        attempts: u32,
    },
    #[error("file {0} not cached at {1}")]
    NotCached(FileId, NodeId),
}

/// Standard CRC-32 (reflected 0x04C11DB7, init/final 0xFFFFFFFF).
pub fn crc32(bytes: &[u8]) -> u32 {
    const TABLE: [u32; 256] = build_crc_table();
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = (crc >> 8) ^ TABLE[((crc ^ u32::from(b)) & 0xFF) as usize];
    }
    crc ^ 0xFFFF_FFFF
}

const fn build_crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

/// Per-attempt corruption probabilities; first attempt may differ so tests
/// can force a single fault deterministically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultProfile {
    pub p_first: f64,
    pub p_rest: f64,
}

impl FaultProfile {
    pub const NONE: FaultProfile = FaultProfile { p_first: 0.0, p_rest: 0.0 };

    pub fn per_attempt(p: f64) -> Self {
        FaultProfile { p_first: p, p_rest: p }
    }

    pub fn first_attempt_only(p: f64) -> Self {
        FaultProfile { p_first: p, p_rest: 0.0 }
    }

    pub fn probability_for_attempt(&self, attempt: u32) -> f64 {
        if attempt <= 1 {
            self.p_first
        } else {
            self.p_rest
        }
    }

    pub fn is_none(&self) -> bool {
        self.p_first == 0.0 && self.p_rest == 0.0
    }
}

/// Outcome of one completed move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Clean on the first attempt.
    Ok,
    /// Succeeded after at least one corrupted attempt.
    Retried,
    /// Retry budget exhausted; never delivered.
    Corrupted,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Ok => "ok",
            Verdict::Retried => "retried",
            Verdict::Corrupted => "corrupted",
        })
    }
}

/// One completed hop, as logged to `transfers.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferRecord {
    pub t_start: f64,
    pub t_end: f64,
    pub file: FileId,
    pub logical_name: String,
    pub size: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub crc_at_src: u32,
    pub crc_at_dst: u32,
    pub verdict: Verdict,
    pub attempts: u32,
    /// Whether the bytes landed in the destination station's cache (final
    /// hop admissions and cache-in-transit replications).
    pub entered_cache: bool,
}

impl TransferRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.t_start,
            self.t_end,
            self.logical_name,
            self.size,
            self.src,
            self.dst,
            self.verdict,
            self.attempts
        )
    }
}

/// Static link parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    /// Bytes per second of shared capacity.
    pub bandwidth: f64,
    /// Per-transfer startup latency in seconds.
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum FlowKind {
    Bulk { remaining: f64 },
    Stream { close_at: f64 },
}

/// Processor-sharing state for one link. Progress is integrated lazily at
/// mutation and harvest points; between those the flow set is constant.
#[derive(Debug, Clone)]
pub struct LinkModel {
    spec: LinkSpec,
    flows: BTreeMap<u64, FlowKind>,
    last_update: f64,
}

/// Residual bytes below this are rounding dust, not payload.
const EPS_BYTES: f64 = 1e-3;
const EPS_TIME: f64 = 1e-9;

/// Remaining service below the clock's local resolution counts as done.
/// Progress integration accumulates one-ulp errors that scale with the
/// absolute time, so a fixed byte epsilon alone would leave sub-resolution
/// slivers that can never be scheduled (the completion delay rounds to
/// zero and the tick spins).
fn completion_slack(now: f64) -> f64 {
    (now.abs() * f64::EPSILON * 64.0).max(EPS_TIME)
}

impl LinkModel {
    pub fn new(spec: LinkSpec) -> Self {
        LinkModel {
            spec,
            flows: BTreeMap::new(),
            last_update: 0.0,
        }
    }

    pub fn spec(&self) -> LinkSpec {
        self.spec
    }

    pub fn active_flows(&self) -> usize {
        self.flows.len()
    }

    /// Instantaneous rate each flow currently receives.
    pub fn rate_per_flow(&self) -> f64 {
        if self.flows.is_empty() {
            self.spec.bandwidth
        } else {
            self.spec.bandwidth / self.flows.len() as f64
        }
    }

    fn integrate_to(&mut self, now: f64) {
        debug_assert!(now + EPS_TIME >= self.last_update, "link time went backwards");
        let dt = now - self.last_update;
        if dt > 0.0 && !self.flows.is_empty() {
            let rate = self.spec.bandwidth / self.flows.len() as f64;
            for kind in self.flows.values_mut() {
                if let FlowKind::Bulk { remaining } = kind {
                    *remaining = (*remaining - dt * rate).max(0.0);
                }
            }
        }
        self.last_update = self.last_update.max(now);
    }

    /// Join the sharing pool with `size` bytes left to move.
    pub fn add_bulk(&mut self, flow: u64, size: u64, now: f64) {
        self.integrate_to(now);
        self.flows.insert(flow, FlowKind::Bulk { remaining: size as f64 });
    }

    /// Hold a unit share of the link until `close_at` (network-attached read).
    pub fn add_stream(&mut self, flow: u64, close_at: f64, now: f64) {
        self.integrate_to(now);
        self.flows.insert(flow, FlowKind::Stream { close_at });
    }

    /// Earliest future time any flow completes or closes.
    pub fn next_event(&self) -> Option<f64> {
        if self.flows.is_empty() {
            return None;
        }
        let rate = self.spec.bandwidth / self.flows.len() as f64;
        self.flows
            .values()
            .map(|kind| match kind {
                FlowKind::Bulk { remaining } => self.last_update + remaining / rate,
                FlowKind::Stream { close_at } => *close_at,
            })
            .min_by(|a, b| a.total_cmp(b))
    }

    /// Advance to `now` and pop every flow that has finished, in flow-id
    /// order for simultaneous completions.
    pub fn harvest(&mut self, now: f64) -> Vec<u64> {
        self.integrate_to(now);
        let slack = completion_slack(now);
        let rate = self.rate_per_flow();
        let done: Vec<u64> = self
            .flows
            .iter()
            .filter(|(_, kind)| match kind {
                FlowKind::Bulk { remaining } => {
                    *remaining <= EPS_BYTES || *remaining / rate <= slack
                }
                FlowKind::Stream { close_at } => *close_at <= now + slack,
            })
            .map(|(id, _)| *id)
            .collect();
        for id in &done {
            self.flows.remove(id);
        }
        done
    }

    /// Drop a flow without completing it.
    pub fn abort(&mut self, flow: u64, now: f64) {
        self.integrate_to(now);
        self.flows.remove(&flow);
    }
}

/// All links of the simulated fabric, keyed by normalized endpoint pair.
#[derive(Debug, Default)]
pub struct Fabric {
    links: BTreeMap<LinkKey, LinkModel>,
}

impl Fabric {
    pub fn new() -> Self {
        Fabric::default()
    }

    pub fn add_link(&mut self, a: NodeId, b: NodeId, spec: LinkSpec) {
        self.links.insert(LinkKey::new(a, b), LinkModel::new(spec));
    }

    pub fn link(&self, key: &LinkKey) -> Option<&LinkModel> {
        self.links.get(key)
    }

    pub fn link_mut(&mut self, key: &LinkKey) -> Option<&mut LinkModel> {
        self.links.get_mut(key)
    }

    pub fn has_link(&self, a: &NodeId, b: &NodeId) -> bool {
        self.links.contains_key(&LinkKey::new(a.clone(), b.clone()))
    }

    pub fn link_between(&self, a: &NodeId, b: &NodeId) -> Result<&LinkModel, FabricError> {
        self.links
            .get(&LinkKey::new(a.clone(), b.clone()))
            .ok_or_else(|| FabricError::NoLink(a.clone(), b.clone()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &LinkKey> {
        self.links.keys()
    }
}
