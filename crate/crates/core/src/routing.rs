//! Static route tables and store-and-forward path computation.
//!
//! Each node carries one next-hop entry per destination domain. A path is
//! the chain of next hops from source to destination, with one shortcut: a
//! direct link to the destination always wins over the table. Intermediate
//! stations flagged `cache_in_transit` replicate files passing through.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::types::NodeId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RoutingError {
    #[error("unknown station or node: {0}")]
    UnknownStation(NodeId),
    #[error("route {station} -> domain {domain} via {next_hop} would create a loop")]
    WouldCreateLoop {
        station: NodeId,
        domain: String,
        next_hop: NodeId,
    },
    #[error("no route from {src} to {dst}")]
    NoRoute { src: NodeId, dst: NodeId },
    #[error("malformed route line: {0}")]
    BadLine(String),
}

#[derive(Debug, Default, Clone)]
pub struct RouteTable {
    domains: BTreeMap<NodeId, String>,
    next_hops: BTreeMap<NodeId, BTreeMap<String, NodeId>>,
    cache_in_transit: BTreeSet<NodeId>,
}

/// One parsed route config line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteLine {
    pub station: String,
    pub domain: String,
    pub next_hop: String,
    pub cache_in_transit: bool,
}

/// Parse `station,domain,next_hop,cache_in_transit(0|1)`.
pub fn parse_route_line(line: &str) -> Result<RouteLine, RoutingError> {
    let cols: Vec<&str> = line.trim().split(',').collect();
    if cols.len() != 4 {
        return Err(RoutingError::BadLine(line.to_string()));
    }
    let cache_in_transit = match cols[3] {
        "0" => false,
        "1" => true,
        _ => return Err(RoutingError::BadLine(line.to_string())),
    };
    Ok(RouteLine {
        station: cols[0].to_string(),
        domain: cols[1].to_string(),
        next_hop: cols[2].to_string(),
        cache_in_transit,
    })
}

impl RouteTable {
    pub fn new() -> Self {
        RouteTable::default()
    }

    pub fn register_node(&mut self, node: NodeId, domain: impl Into<String>) {
        self.domains.insert(node, domain.into());
    }

    pub fn is_registered(&self, node: &NodeId) -> bool {
        self.domains.contains_key(node)
    }

    pub fn domain_of(&self, node: &NodeId) -> Option<&str> {
        self.domains.get(node).map(String::as_str)
    }

    pub fn set_cache_in_transit(&mut self, node: NodeId, flag: bool) {
        if flag {
            self.cache_in_transit.insert(node);
        } else {
            self.cache_in_transit.remove(&node);
        }
    }

    pub fn caches_in_transit(&self, node: &NodeId) -> bool {
        self.cache_in_transit.contains(node)
    }

    pub fn node_count(&self) -> usize {
        self.domains.len()
    }

    /// Install (or replace) a next-hop entry, rejecting updates that would
    /// let the chain for `domain` revisit a node.
    pub fn add_route(
        &mut self,
        station: &NodeId,
        domain: &str,
        next_hop: &NodeId,
    ) -> Result<(), RoutingError> {
        if !self.is_registered(station) {
            return Err(RoutingError::UnknownStation(station.clone()));
        }
        if !self.is_registered(next_hop) {
            return Err(RoutingError::UnknownStation(next_hop.clone()));
        }
        // A new cycle must pass through the edge being added, so walking
        // the domain chain from next_hop and looking for `station` suffices.
        let mut seen: BTreeSet<&NodeId> = BTreeSet::new();
        let mut cur = next_hop;
        loop {
            if cur == station {
                return Err(RoutingError::WouldCreateLoop {
                    station: station.clone(),
                    domain: domain.to_string(),
                    next_hop: next_hop.clone(),
                });
            }
            if !seen.insert(cur) {
                break; // pre-existing structure, not our concern
            }
            match self.next_hops.get(cur).and_then(|m| m.get(domain)) {
                Some(nh) => cur = nh,
                None => break,
            }
        }
        self.next_hops
            .entry(station.clone())
            .or_default()
            .insert(domain.to_string(), next_hop.clone());
        Ok(())
    }

    pub fn next_hop(&self, from: &NodeId, domain: &str) -> Option<&NodeId> {
        self.next_hops.get(from).and_then(|m| m.get(domain))
    }

    /// Chain of nodes from `src` to `dst` (both inclusive). `is_adjacent`
    /// reports whether a direct link exists between two nodes.
    pub fn compute_path(
        &self,
        src: &NodeId,
        dst: &NodeId,
        is_adjacent: impl Fn(&NodeId, &NodeId) -> bool,
    ) -> Result<Vec<NodeId>, RoutingError> {
        if !self.is_registered(src) {
            return Err(RoutingError::UnknownStation(src.clone()));
        }
        if !self.is_registered(dst) {
            return Err(RoutingError::UnknownStation(dst.clone()));
        }
        let no_route = || RoutingError::NoRoute {
            src: src.clone(),
            dst: dst.clone(),
        };
        let dst_domain = self.domains.get(dst).expect("registered").clone();
        let mut path = vec![src.clone()];
        let mut cur = src.clone();
        while &cur != dst {
            if path.len() > self.domains.len() {
                return Err(no_route());
            }
            let next = if is_adjacent(&cur, dst) {
                dst.clone()
            } else {
                self.next_hop(&cur, &dst_domain).ok_or_else(no_route)?.clone()
            };
            path.push(next.clone());
            cur = next;
        }
        Ok(path)
    }

    /// Number of hops from `src` to `dst`, or None when unreachable.
    pub fn hop_count(
        &self,
        src: &NodeId,
        dst: &NodeId,
        is_adjacent: impl Fn(&NodeId, &NodeId) -> bool,
    ) -> Option<u32> {
        self.compute_path(src, dst, is_adjacent)
            .ok()
            .map(|p| (p.len() - 1) as u32)
    }
}
