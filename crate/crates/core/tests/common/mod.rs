//! Shared world-building helpers for the integration suites.
#![allow(dead_code)] // each suite uses a different slice of the builder

use std::collections::BTreeMap;

use datahaul::cache::{CacheConfig, CacheMode};
use datahaul::fabric::{crc32, FaultProfile, LinkSpec};
use datahaul::mss::MssConfig;
use datahaul::sim::{Runner, Sim};
use datahaul::station::{DeliveryMode, StationConfig};
use datahaul::types::{FileId, GroupId, MssId, NodeId, StationId, Tier};

pub const GB: u64 = 1_000_000_000;
pub const MB: u64 = 1_000_000;

pub fn group(name: &str) -> GroupId {
    GroupId::new(name)
}

pub fn shares(groups: &[(&str, f64)]) -> BTreeMap<GroupId, f64> {
    groups.iter().map(|(g, s)| (GroupId::new(*g), *s)).collect()
}

pub struct WorldBuilder {
    pub sim: Sim,
}

impl WorldBuilder {
    pub fn new(seed: u64) -> Self {
        WorldBuilder {
            sim: Sim::new(seed, FaultProfile::NONE, 2),
        }
    }

    pub fn with_fault(seed: u64, fault: FaultProfile, retry_budget: u32) -> Self {
        WorldBuilder {
            sim: Sim::new(seed, fault, retry_budget),
        }
    }

    pub fn station(mut self, id: &str, domain: &str, quota: u64, slots: u32, stages: u32) -> Self {
        self.sim
            .add_station(
                StationConfig {
                    id: StationId::new(id),
                    cache: CacheConfig {
                        quota,
                        mode: CacheMode::Distributed,
                        group_shares: shares(&[("g", 1.0)]),
                        node_count: 4,
                    },
                    consumer_slots: slots,
                    delivery_mode: DeliveryMode::CopyToCache,
                    max_concurrent_stages: stages,
                    nfs_read_bandwidth: None,
                },
                domain,
            )
            .unwrap();
        self
    }

    pub fn station_cfg(mut self, cfg: StationConfig, domain: &str) -> Self {
        self.sim.add_station(cfg, domain).unwrap();
        self
    }

    pub fn mss(mut self, id: &str, domain: &str) -> Self {
        self.sim
            .add_mss(MssId::new(id), MssConfig::default(), domain)
            .unwrap();
        self
    }

    pub fn mss_cfg(mut self, id: &str, domain: &str, cfg: MssConfig) -> Self {
        self.sim.add_mss(MssId::new(id), cfg, domain).unwrap();
        self
    }

    pub fn link(mut self, a: &str, b: &str, bandwidth: f64, latency: f64) -> Self {
        let node = |n: &str| self.node_of(n);
        let (na, nb) = (node(a), node(b));
        self.sim.add_link(na, nb, LinkSpec { bandwidth, latency });
        self
    }

    pub fn route(mut self, station: &str, domain: &str, next_hop: &str) -> Self {
        let (s, h) = (self.node_of(station), self.node_of(next_hop));
        self.sim.add_route(&s, domain, &h).unwrap();
        self
    }

    pub fn transit_cache(mut self, station: &str, on: bool) -> Self {
        self.sim
            .routes
            .set_cache_in_transit(NodeId::station(station), on);
        self
    }

    fn node_of(&self, name: &str) -> NodeId {
        if self.sim.mss.contains_key(&MssId::new(name)) {
            NodeId::mss(name)
        } else {
            NodeId::station(name)
        }
    }

    /// Declare `count` files named `prefix%06d` of `size` bytes; archive
    /// them when an mss id is given.
    pub fn files(mut self, prefix: &str, count: u32, size: u64, archive: Option<&str>) -> Self {
        for i in 0..count {
            let name = format!("{prefix}{i:06}");
            let id = self
                .sim
                .catalog
                .declare_file(&name, size, crc32(name.as_bytes()), Tier::Reconstructed, &[], 0.0)
                .unwrap();
            if let Some(m) = archive {
                self.sim.preload_archive(&MssId::new(m), id).unwrap();
            }
        }
        self
    }

    pub fn cached(mut self, station: &str, file: FileId, grp: &str) -> Self {
        self.sim
            .preload_cached(&StationId::new(station), file, &group(grp))
            .unwrap();
        self
    }

    pub fn dataset_all(mut self, name: &str, glob: &str) -> Self {
        self.sim
            .catalog
            .define_dataset(
                name,
                datahaul::catalog::DatasetPredicate {
                    name_glob: Some(glob.to_string()),
                    ..Default::default()
                },
            )
            .unwrap();
        self
    }

    pub fn build(self) -> Runner {
        Runner::new(self.sim)
    }
}

/// Drain every scheduled event (bounded), asserting the run stays finite.
pub fn settle(runner: &mut Runner) {
    runner.run_to_idle(1e12);
    assert_eq!(runner.kernel.pending(), 0, "simulation settled");
}
