//! Authoritative metadata store for files, replicas, and datasets.
//!
//! Every station queries this one catalog. A file is *physical* when at
//! least one replica is cached, pinned, or archived; a file declared with
//! metadata only (e.g. a provenance parent) is *virtual*.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::types::{DatasetId, FileId, NodeId, Tier};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error("logical name already declared: {0}")]
    DuplicateName(String),
    #[error("unknown parent file: {0}")]
    UnknownParent(FileId),
    #[error("file size must be > 0")]
    InvalidSize,
    #[error("unknown file: {0}")]
    UnknownFile(FileId),
    #[error("replica already registered for {file} at {location}")]
    DuplicateReplica { file: FileId, location: NodeId },
    #[error("no replica of {file} at {location}")]
    UnknownReplica { file: FileId, location: NodeId },
    #[error("replica of {file} at {location} is pinned")]
    ReplicaPinned { file: FileId, location: NodeId },
    #[error("dataset name already defined: {0}")]
    DuplicateDataset(String),
    #[error("unknown dataset: {0}")]
    UnknownDataset(DatasetId),
    #[error("file {0} has no physical replica")]
    NoReplica(FileId),
    #[error("malformed logical name: {0}")]
    BadName(String),
}

/// Immutable metadata for one logical file.
#[derive(Debug, Clone, PartialEq)]
pub struct FileRecord {
    pub id: FileId,
    pub logical_name: String,
    pub size: u64,
    pub crc: u32,
    pub tier: Tier,
    pub parents: BTreeSet<FileId>,
    pub declared_at: f64,
}

/// Replica lifecycle at one location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplicaState {
    /// In flight toward this location; not yet usable as a source.
    Staging,
    Cached,
    PinnedCached,
    Archived,
}

impl ReplicaState {
    /// States that make the owning file physical and usable as a transfer source.
    pub fn is_materialized(self) -> bool {
        !matches!(self, ReplicaState::Staging)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replica {
    pub file: FileId,
    pub location: NodeId,
    pub state: ReplicaState,
    /// Cache node the entry landed on (distributed stations only).
    pub node: Option<u32>,
}

/// Conjunction of predicate clauses; absent clauses match everything.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetPredicate {
    pub tier: Option<Tier>,
    pub name_glob: Option<String>,
    pub declared_range: Option<(f64, f64)>,
    /// Matches files that list the named file among their parents.
    pub parent_name: Option<String>,
}

#[derive(Debug, Clone)]
pub struct DatasetDef {
    pub id: DatasetId,
    pub name: String,
    pub predicate: DatasetPredicate,
}

/// Shell-style glob with `*` and `?`. Iterative two-pointer match.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let n: Vec<char> = name.chars().collect();
    let (mut pi, mut ni) = (0usize, 0usize);
    let mut star: Option<(usize, usize)> = None;
    while ni < n.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == n[ni]) {
            pi += 1;
            ni += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ni));
            pi += 1;
        } else if let Some((sp, sn)) = star {
            pi = sp + 1;
            ni = sn + 1;
            star = Some((sp, sn + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

#[derive(Debug, Default)]
pub struct Catalog {
    files: BTreeMap<FileId, FileRecord>,
    by_name: BTreeMap<String, FileId>,
    replicas: BTreeMap<FileId, BTreeMap<NodeId, Replica>>,
    datasets: BTreeMap<DatasetId, DatasetDef>,
    dataset_names: BTreeMap<String, DatasetId>,
    next_file: u64,
    next_dataset: u64,
}

impl Catalog {
    pub fn new() -> Self {
        Catalog::default()
    }

    /// Register a new file. It starts virtual (zero replicas).
    pub fn declare_file(
        &mut self,
        logical_name: &str,
        size: u64,
        crc: u32,
        tier: Tier,
        parents: &[FileId],
        declared_at: f64,
    ) -> Result<FileId, CatalogError> {
        if logical_name.is_empty()
            || logical_name.contains(',')
            || logical_name.contains(';')
            || logical_name.contains('\n')
        {
            return Err(CatalogError::BadName(logical_name.to_string()));
        }
        if self.by_name.contains_key(logical_name) {
            return Err(CatalogError::DuplicateName(logical_name.to_string()));
        }
        if size == 0 {
            return Err(CatalogError::InvalidSize);
        }
        for p in parents {
            if !self.files.contains_key(p) {
                return Err(CatalogError::UnknownParent(*p));
            }
        }
        let id = FileId(self.next_file);
        self.next_file += 1;
        self.by_name.insert(logical_name.to_string(), id);
        self.files.insert(
            id,
            FileRecord {
                id,
                logical_name: logical_name.to_string(),
                size,
                crc,
                tier,
                parents: parents.iter().copied().collect(),
                declared_at,
            },
        );
        Ok(id)
    }

    pub fn file(&self, id: FileId) -> Result<&FileRecord, CatalogError> {
        self.files.get(&id).ok_or(CatalogError::UnknownFile(id))
    }

    pub fn lookup_name(&self, name: &str) -> Option<FileId> {
        self.by_name.get(name).copied()
    }

    pub fn file_count(&self) -> usize {
        self.files.len()
    }

    pub fn files(&self) -> impl Iterator<Item = &FileRecord> {
        self.files.values()
    }

    /// A file is physical iff it has at least one materialized replica.
    pub fn is_physical(&self, id: FileId) -> bool {
        self.replicas
            .get(&id)
            .map(|m| m.values().any(|r| r.state.is_materialized()))
            .unwrap_or(false)
    }

    pub fn physical_count(&self) -> usize {
        self.files.keys().filter(|id| self.is_physical(**id)).count()
    }

    pub fn virtual_count(&self) -> usize {
        self.files.len() - self.physical_count()
    }

    pub fn add_replica(
        &mut self,
        file: FileId,
        location: NodeId,
        state: ReplicaState,
        node: Option<u32>,
    ) -> Result<&Replica, CatalogError> {
        if !self.files.contains_key(&file) {
            return Err(CatalogError::UnknownFile(file));
        }
        let slot = self.replicas.entry(file).or_default();
        if slot.contains_key(&location) {
            return Err(CatalogError::DuplicateReplica { file, location });
        }
        slot.insert(
            location.clone(),
            Replica {
                file,
                location: location.clone(),
                state,
                node,
            },
        );
        Ok(&slot[&location])
    }

    pub fn remove_replica(&mut self, file: FileId, location: &NodeId) -> Result<(), CatalogError> {
        let slot = self
            .replicas
            .get_mut(&file)
            .ok_or_else(|| CatalogError::UnknownReplica {
                file,
                location: location.clone(),
            })?;
        match slot.get(location) {
            None => {
                return Err(CatalogError::UnknownReplica {
                    file,
                    location: location.clone(),
                })
            }
            Some(r) if r.state == ReplicaState::PinnedCached => {
                return Err(CatalogError::ReplicaPinned {
                    file,
                    location: location.clone(),
                })
            }
            Some(_) => {}
        }
        slot.remove(location);
        if slot.is_empty() {
            self.replicas.remove(&file);
        }
        Ok(())
    }

    /// Update replica state in place (pin/unpin, staging -> cached).
    pub fn set_replica_state(
        &mut self,
        file: FileId,
        location: &NodeId,
        state: ReplicaState,
    ) -> Result<(), CatalogError> {
        let r = self
            .replicas
            .get_mut(&file)
            .and_then(|m| m.get_mut(location))
            .ok_or_else(|| CatalogError::UnknownReplica {
                file,
                location: location.clone(),
            })?;
        r.state = state;
        Ok(())
    }

    pub fn replicas_of(&self, file: FileId) -> impl Iterator<Item = &Replica> {
        self.replicas.get(&file).into_iter().flat_map(|m| m.values())
    }

    pub fn replica_at(&self, file: FileId, location: &NodeId) -> Option<&Replica> {
        self.replicas.get(&file).and_then(|m| m.get(location))
    }

    pub fn define_dataset(
        &mut self,
        name: &str,
        predicate: DatasetPredicate,
    ) -> Result<DatasetId, CatalogError> {
        if self.dataset_names.contains_key(name) {
            return Err(CatalogError::DuplicateDataset(name.to_string()));
        }
        let id = DatasetId(self.next_dataset);
        self.next_dataset += 1;
        self.dataset_names.insert(name.to_string(), id);
        self.datasets.insert(
            id,
            DatasetDef {
                id,
                name: name.to_string(),
                predicate,
            },
        );
        Ok(id)
    }

    pub fn dataset_by_name(&self, name: &str) -> Option<DatasetId> {
        self.dataset_names.get(name).copied()
    }

    /// Snapshot of matching files at call time, ordered by
    /// (declared_at, logical_name). Pure in the catalog state.
    pub fn resolve_dataset(&self, id: DatasetId) -> Result<Vec<FileId>, CatalogError> {
        let def = self.datasets.get(&id).ok_or(CatalogError::UnknownDataset(id))?;
        let parent_id = match &def.predicate.parent_name {
            Some(name) => Some(
                self.lookup_name(name)
                    .ok_or_else(|| CatalogError::BadName(name.clone()))?,
            ),
            None => None,
        };
        let mut matched: Vec<&FileRecord> = self
            .files
            .values()
            .filter(|f| {
                if let Some(t) = def.predicate.tier {
                    if f.tier != t {
                        return false;
                    }
                }
                if let Some(g) = &def.predicate.name_glob {
                    if !glob_match(g, &f.logical_name) {
                        return false;
                    }
                }
                if let Some((lo, hi)) = def.predicate.declared_range {
                    if f.declared_at < lo || f.declared_at >= hi {
                        return false;
                    }
                }
                if let Some(p) = parent_id {
                    if !f.parents.contains(&p) {
                        return false;
                    }
                }
                true
            })
            .collect();
        matched.sort_by(|a, b| {
            a.declared_at
                .total_cmp(&b.declared_at)
                .then_with(|| a.logical_name.cmp(&b.logical_name))
        });
        Ok(matched.into_iter().map(|f| f.id).collect())
    }

    /// Replicas of `file` ordered by ascending access cost from the
    /// requester: local first (cost 0), then remote stations by static-route
    /// hop count, then MSS copies last. `hop_cost` reports the number of
    /// hops needed to move the file from a replica location to the
    /// requester, or None when unreachable (unreachable sorts after
    /// reachable stations). Staging replicas are not usable sources and are
    /// skipped.
    pub fn locate(
        &self,
        file: FileId,
        requester: &NodeId,
        hop_cost: impl Fn(&NodeId) -> Option<u32>,
    ) -> Result<Vec<Replica>, CatalogError> {
        if !self.files.contains_key(&file) {
            return Err(CatalogError::UnknownFile(file));
        }
        let mut found: Vec<(u8, u32, &Replica)> = Vec::new();
        for r in self.replicas_of(file) {
            if !r.state.is_materialized() {
                continue;
            }
            let (class, cost) = if &r.location == requester {
                (0u8, 0u32)
            } else if r.location.is_mss() {
                (2, 0)
            } else {
                match hop_cost(&r.location) {
                    Some(h) => (1, h),
                    None => (1, u32::MAX),
                }
            };
            found.push((class, cost, r));
        }
        if found.is_empty() {
            return Err(CatalogError::NoReplica(file));
        }
        found.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.2.location.cmp(&b.2.location))
        });
        Ok(found.into_iter().map(|(_, _, r)| r.clone()).collect())
    }

    /// Load a bootstrap catalog from CSV lines:
    /// `logical_name,size,crc_hex,tier,parent_names(;-separated)`.
    /// Returns ids in declaration order.
    pub fn load_bootstrap_csv(&mut self, text: &str, declared_at: f64) -> Result<Vec<FileId>, String> {
        let mut ids = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(format!("line {}: expected 5 columns, got {}", lineno + 1, cols.len()));
            }
            let size: u64 = cols[1]
                .parse()
                .map_err(|_| format!("line {}: bad size {:?}", lineno + 1, cols[1]))?;
            let crc = u32::from_str_radix(cols[2].trim_start_matches("0x"), 16)
                .map_err(|_| format!("line {}: bad crc {:?}", lineno + 1, cols[2]))?;
            let tier = Tier::parse(cols[3])
                .ok_or_else(|| format!("line {}: bad tier {:?}", lineno + 1, cols[3]))?;
            let mut parents = Vec::new();
            if !cols[4].is_empty() {
                for pname in cols[4].split(';') {
                    let pid = self
                        .lookup_name(pname)
                        .ok_or_else(|| format!("line {}: unknown parent {:?}", lineno + 1, pname))?;
                    parents.push(pid);
                }
            }
            let id = self
                .declare_file(cols[0], size, crc, tier, &parents, declared_at)
                .map_err(|e| format!("line {}: {}", lineno + 1, e))?;
            ids.push(id);
        }
        Ok(ids)
    }
}
