//! Per-station disk cache: byte quota, per-group fair share, pinning, and
//! deterministic eviction.
//!
//! Groups may borrow idle share. Eviction happens only when the quota would
//! be exceeded and prefers the group furthest over its share; within the
//! chosen group the least-recently-accessed unpinned entry goes first.
//! Single-file admission is atomic: victims are planned against a scratch
//! view and applied only if the plan frees enough space.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::rng::SplitMix64;
use crate::types::{FileId, GroupId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheError {
    #[error("file {0} already cached")]
    AlreadyCached(FileId),
    #[error("file size {size} exceeds cache quota {quota}")]
    TooLarge { size: u64, quota: u64 },
    #[error("not enough evictable space for {0}")]
    InsufficientEvictable(FileId),
    #[error("file {0} not cached")]
    NotCached(FileId),
    #[error("pin count for {0} already zero")]
    PinUnderflow(FileId),
    #[error("invalid cache config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Cache spread over the station's worker nodes; placement by
    /// rendezvous hashing.
    Distributed,
    /// One shared volume behind a single server (star topology).
    NfsShared,
}

#[derive(Debug, Clone)]
pub struct CacheConfig {
    pub quota: u64,
    pub mode: CacheMode,
    pub group_shares: BTreeMap<GroupId, f64>,
    pub node_count: u32,
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), CacheError> {
        if self.quota == 0 {
            return Err(CacheError::BadConfig("quota must be > 0".into()));
        }
        if self.node_count == 0 {
            return Err(CacheError::BadConfig("node_count must be >= 1".into()));
        }
        if self.group_shares.is_empty() {
            return Err(CacheError::BadConfig("at least one group share required".into()));
        }
        let mut sum = 0.0;
        for (g, share) in &self.group_shares {
            if *share <= 0.0 {
                return Err(CacheError::BadConfig(format!("share for {g} must be > 0")));
            }
            sum += share;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CacheError::BadConfig(format!("group shares sum to {sum}, want 1.0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub file: FileId,
    pub size: u64,
    pub group: GroupId,
    pub last_access: f64,
    pub pin_count: u32,
    /// Node the entry lives on; always 0 for nfs_shared volumes.
    pub resident_node: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmitResult {
    pub evicted: Vec<FileId>,
    pub resident_node: u32,
}

/// Deterministic node placement without coordination: the node with the
/// highest keyed hash wins.
pub fn rendezvous_node(file: FileId, node_count: u32) -> u32 {
    debug_assert!(node_count >= 1);
    let mut best = (0u64, 0u32);
    for node in 0..node_count {
        let mut h = SplitMix64::new(file.0 ^ (u64::from(node) << 32) ^ 0x5851_F42D_4C95_7F2D);
        let score = h.next_u64();
        if score > best.0 {
            best = (score, node);
        }
    }
    best.1
}

#[derive(Debug, Clone)]
pub struct StationCache {
    config: CacheConfig,
    entries: BTreeMap<FileId, CacheEntry>,
    occupancy: u64,
    group_occupancy: BTreeMap<GroupId, u64>,
}

impl StationCache {
    pub fn new(config: CacheConfig) -> Result<Self, CacheError> {
        config.validate()?;
        Ok(StationCache {
            config,
            entries: BTreeMap::new(),
            occupancy: 0,
            group_occupancy: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn occupancy(&self) -> u64 {
        self.occupancy
    }

    pub fn group_occupancy(&self, group: &GroupId) -> u64 {
        self.group_occupancy.get(group).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.values()
    }

    pub fn lookup(&self, file: FileId) -> Option<&CacheEntry> {
        self.entries.get(&file)
    }

    /// Admit a file, evicting unpinned entries if needed. On any error the
    /// cache is unchanged.
    pub fn admit(
        &mut self,
        file: FileId,
        size: u64,
        group: &GroupId,
        now: f64,
    ) -> Result<AdmitResult, CacheError> {
        if self.entries.contains_key(&file) {
            return Err(CacheError::AlreadyCached(file));
        }
        if size > self.config.quota {
            return Err(CacheError::TooLarge {
                size,
                quota: self.config.quota,
            });
        }
        let victims = self.plan_evictions(file, size)?;
        for v in &victims {
            let e = self.entries.remove(v).expect("planned victim cached");
            self.occupancy -= e.size;
            let g = self.group_occupancy.get_mut(&e.group).expect("group accounted");
            *g -= e.size;
        }
        let resident_node = match self.config.mode {
            CacheMode::NfsShared => 0,
            CacheMode::Distributed => rendezvous_node(file, self.config.node_count),
        };
        self.entries.insert(
            file,
            CacheEntry {
                file,
                size,
                group: group.clone(),
                last_access: now,
                pin_count: 0,
                resident_node,
            },
        );
        self.occupancy += size;
        *self.group_occupancy.entry(group.clone()).or_insert(0) += size;
        debug_assert!(self.occupancy <= self.config.quota);
        Ok(AdmitResult {
            evicted: victims,
            resident_node,
        })
    }

    /// Plan victims for `size` incoming bytes without touching state.
    /// Victim order: the unpinned entry of the group furthest over its
    /// share (ties: smaller group name), LRU within that group (ties:
    /// smaller file id); when no group is over share, global LRU.
    fn plan_evictions(&self, incoming: FileId, size: u64) -> Result<Vec<FileId>, CacheError> {
        let mut free = self.config.quota - self.occupancy;
        if free >= size {
            return Ok(Vec::new());
        }
        let mut occ: BTreeMap<&GroupId, u64> = self
            .group_occupancy
            .iter()
            .map(|(g, b)| (g, *b))
            .collect();
        let mut alive: BTreeMap<FileId, &CacheEntry> = self
            .entries
            .iter()
            .filter(|(_, e)| e.pin_count == 0)
            .map(|(id, e)| (*id, e))
            .collect();
        let mut victims = Vec::new();
        while free < size {
            let victim = self.pick_victim(&occ, &alive);
            let Some(victim) = victim else {
                return Err(CacheError::InsufficientEvictable(incoming));
            };
            let e = alive.remove(&victim).expect("picked from alive");
            free += e.size;
            *occ.get_mut(&e.group).expect("group accounted") -= e.size;
            victims.push(victim);
        }
        Ok(victims)
    }

    fn pick_victim(
        &self,
        occ: &BTreeMap<&GroupId, u64>,
        alive: &BTreeMap<FileId, &CacheEntry>,
    ) -> Option<FileId> {
        if alive.is_empty() {
            return None;
        }
        // Group byte excess over quota*share, counting pinned bytes: a group
        // is over share by its total footprint even if parts are pinned.
        let mut over: Option<(&GroupId, f64)> = None;
        for (g, bytes) in occ {
            if *bytes == 0 {
                continue;
            }
            let share = self.config.group_shares.get(*g).copied().unwrap_or(0.0);
            let excess = *bytes as f64 - self.config.quota as f64 * share;
            if excess <= 0.0 {
                continue;
            }
            if !alive.values().any(|e| &e.group == *g) {
                continue;
            }
            match over {
                Some((_, best)) if excess <= best => {}
                _ => over = Some((g, excess)),
            }
        }
        let pool: Vec<&&CacheEntry> = match over {
            Some((g, _)) => alive.values().filter(|e| &e.group == g).collect(),
            None => alive.values().collect(),
        };
        pool.into_iter()
            .min_by(|a, b| {
                a.last_access
                    .total_cmp(&b.last_access)
                    .then_with(|| a.file.cmp(&b.file))
            })
            .map(|e| e.file)
    }

    pub fn set_pin(&mut self, file: FileId, delta: i32) -> Result<u32, CacheError> {
        let e = self.entries.get_mut(&file).ok_or(CacheError::NotCached(file))?;
        if delta < 0 && e.pin_count < delta.unsigned_abs() {
            return Err(CacheError::PinUnderflow(file));
        }
        if delta >= 0 {
            e.pin_count += delta as u32;
        } else {
            e.pin_count -= delta.unsigned_abs();
        }
        Ok(e.pin_count)
    }

    pub fn touch(&mut self, file: FileId, now: f64) -> Result<(), CacheError> {
        let e = self.entries.get_mut(&file).ok_or(CacheError::NotCached(file))?;
        e.last_access = now;
        Ok(())
    }

    /// Drop an entry outright (project cleanup, replica invalidation).
    /// Pinned entries cannot be removed.
    pub fn remove(&mut self, file: FileId) -> Result<(), CacheError> {
        match self.entries.get(&file) {
            None => return Err(CacheError::NotCached(file)),
            Some(e) if e.pin_count > 0 => return Err(CacheError::PinUnderflow(file)),
            Some(_) => {}
        }
        let e = self.entries.remove(&file).expect("checked");
        self.occupancy -= e.size;
        *self.group_occupancy.get_mut(&e.group).expect("group accounted") -= e.size;
        Ok(())
    }

    /// CSV dump: `file_id,size,group,last_access,pin_count,node`.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("file_id,size,group,last_access,pin_count,node\n");
        for e in self.entries.values() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.file, e.size, e.group, e.last_access, e.pin_count, e.resident_node
            );
        }
        out
    }

    #[cfg(test)]
    pub(crate) fn check_consistency(&self) {
        let sum: u64 = self.entries.values().map(|e| e.size).sum();
        assert_eq!(sum, self.occupancy, "occupancy out of sync");
        assert!(self.occupancy <= self.config.quota, "quota exceeded");
        for (g, b) in &self.group_occupancy {
            let gs: u64 = self
                .entries
                .values()
                .filter(|e| &e.group == g)
                .map(|e| e.size)
                .sum();
            assert_eq!(gs, *b, "group occupancy out of sync for {g}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_group_config(quota: u64) -> CacheConfig {
        let mut shares = BTreeMap::new();
        shares.insert(GroupId::new("mc"), 0.5);
        shares.insert(GroupId::new("phys"), 0.5);
        CacheConfig {
            quota,
            mode: CacheMode::Distributed,
            group_shares: shares,
            node_count: 4,
        }
    }

    #[test]
    fn over_share_group_loses_its_lru_first() {
        // quota=100, shares 50/50, cached {A:60 phys t=1, B:30 mc t=2};
        // admitting C:40 mc must evict A (phys over share, A its LRU).
        let mut cache = StationCache::new(two_group_config(100)).unwrap();
        let phys = GroupId::new("phys");
        let mc = GroupId::new("mc");
        cache.admit(FileId(0), 60, &phys, 1.0).unwrap();
        cache.admit(FileId(1), 30, &mc, 2.0).unwrap();
        let res = cache.admit(FileId(2), 40, &mc, 3.0).unwrap();
        assert_eq!(res.evicted, vec![FileId(0)]);
        assert_eq!(cache.occupancy(), 70);
        cache.check_consistency();
    }

    #[test]
    fn empty_cache_admits_without_eviction() {
        let mut cache = StationCache::new(two_group_config(100)).unwrap();
        let res = cache.admit(FileId(7), 99, &GroupId::new("mc"), 0.0).unwrap();
        assert!(res.evicted.is_empty());
    }

    #[test]
    fn all_pinned_rejects_and_leaves_cache_byte_identical() {
        let mut cache = StationCache::new(two_group_config(100)).unwrap();
        let mc = GroupId::new("mc");
        cache.admit(FileId(0), 50, &mc, 0.0).unwrap();
        cache.admit(FileId(1), 50, &mc, 1.0).unwrap();
        cache.set_pin(FileId(0), 1).unwrap();
        cache.set_pin(FileId(1), 1).unwrap();
        let before = cache.dump_csv();
        let err = cache.admit(FileId(2), 10, &mc, 2.0).unwrap_err();
        assert!(matches!(err, CacheError::InsufficientEvictable(_)));
        assert_eq!(cache.dump_csv(), before);
    }

    #[test]
    fn too_large_rejected() {
        let mut cache = StationCache::new(two_group_config(100)).unwrap();
        assert_eq!(
            cache.admit(FileId(0), 101, &GroupId::new("mc"), 0.0).unwrap_err(),
            CacheError::TooLarge { size: 101, quota: 100 }
        );
    }

    #[test]
    fn already_cached_rejected() {
        let mut cache = StationCache::new(two_group_config(100)).unwrap();
        let mc = GroupId::new("mc");
        cache.admit(FileId(0), 10, &mc, 0.0).unwrap();
        assert_eq!(
            cache.admit(FileId(0), 10, &mc, 1.0).unwrap_err(),
            CacheError::AlreadyCached(FileId(0))
        );
    }

    #[test]
    fn pin_exempts_then_unpin_restores_evictability() {
        let mut cache = StationCache::new(two_group_config(100)).unwrap();
        let mc = GroupId::new("mc");
        cache.admit(FileId(0), 60, &mc, 0.0).unwrap();
        cache.set_pin(FileId(0), 1).unwrap();
        assert!(cache.admit(FileId(1), 60, &mc, 1.0).is_err());
        assert_eq!(cache.set_pin(FileId(0), -1).unwrap(), 0);
        let res = cache.admit(FileId(1), 60, &mc, 2.0).unwrap();
        assert_eq!(res.evicted, vec![FileId(0)]);
    }

    #[test]
    fn unpin_at_zero_underflows() {
        let mut cache = StationCache::new(two_group_config(100)).unwrap();
        cache.admit(FileId(0), 10, &GroupId::new("mc"), 0.0).unwrap();
        assert_eq!(
            cache.set_pin(FileId(0), -1).unwrap_err(),
            CacheError::PinUnderflow(FileId(0))
        );
    }

    #[test]
    fn touch_refreshes_recency() {
        let mut cache = StationCache::new(two_group_config(100)).unwrap();
        let mc = GroupId::new("mc");
        cache.admit(FileId(0), 50, &mc, 0.0).unwrap();
        cache.admit(FileId(1), 50, &mc, 1.0).unwrap();
        // Untouched, FileId(0) would be LRU; after touch the peer goes first.
        cache.touch(FileId(0), 10.0).unwrap();
        let res = cache.admit(FileId(2), 50, &mc, 11.0).unwrap();
        assert_eq!(res.evicted, vec![FileId(1)]);
    }

    #[test]
    fn touch_missing_errors_and_lookup_is_pure() {
        let mut cache = StationCache::new(two_group_config(100)).unwrap();
        assert_eq!(
            cache.touch(FileId(9), 0.0).unwrap_err(),
            CacheError::NotCached(FileId(9))
        );
        assert!(cache.lookup(FileId(9)).is_none());
        let mc = GroupId::new("mc");
        cache.admit(FileId(0), 40, &mc, 0.0).unwrap();
        cache.admit(FileId(1), 40, &mc, 1.0).unwrap();
        // Two lookups must not change the eviction outcome.
        let mut mirror = cache.clone();
        let _ = cache.lookup(FileId(0));
        let _ = cache.lookup(FileId(1));
        let a = cache.admit(FileId(2), 40, &mc, 2.0).unwrap();
        let b = mirror.admit(FileId(2), 40, &mc, 2.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn remove_respects_pins_and_accounting() {
        let mut cache = StationCache::new(two_group_config(100)).unwrap();
        let mc = GroupId::new("mc");
        cache.admit(FileId(0), 40, &mc, 0.0).unwrap();
        cache.set_pin(FileId(0), 1).unwrap();
        assert!(cache.remove(FileId(0)).is_err());
        cache.set_pin(FileId(0), -1).unwrap();
        cache.remove(FileId(0)).unwrap();
        assert_eq!(cache.occupancy(), 0);
        assert!(cache.remove(FileId(0)).is_err());
        cache.check_consistency();
    }

    #[test]
    fn rendezvous_node_is_stable_and_in_range() {
        for f in 0..100u64 {
            let n = rendezvous_node(FileId(f), 7);
            assert!(n < 7);
            assert_eq!(n, rendezvous_node(FileId(f), 7));
        }
        // Placement spreads across nodes.
        let mut seen = std::collections::BTreeSet::new();
        for f in 0..100u64 {
            seen.insert(rendezvous_node(FileId(f), 7));
        }
        assert!(seen.len() >= 5);
    }

    #[test]
    fn nfs_mode_keeps_single_volume() {
        let mut shares = BTreeMap::new();
        shares.insert(GroupId::new("mc"), 1.0);
        let mut cache = StationCache::new(CacheConfig {
            quota: 100,
            mode: CacheMode::NfsShared,
            group_shares: shares,
            node_count: 32,
        })
        .unwrap();
        let res = cache.admit(FileId(3), 10, &GroupId::new("mc"), 0.0).unwrap();
        assert_eq!(res.resident_node, 0);
    }

    #[test]
    fn config_validation() {
        let mut shares = BTreeMap::new();
        shares.insert(GroupId::new("a"), 0.7);
        let cfg = CacheConfig {
            quota: 10,
            mode: CacheMode::Distributed,
            group_shares: shares.clone(),
            node_count: 1,
        };
        assert!(matches!(cfg.validate(), Err(CacheError::BadConfig(_))));
        shares.insert(GroupId::new("b"), 0.3);
        let cfg = CacheConfig {
            quota: 10,
            mode: CacheMode::Distributed,
            group_shares: shares,
            node_count: 1,
        };
        assert!(cfg.validate().is_ok());
    }
}
