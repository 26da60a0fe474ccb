//! The integrated simulation: one world binding catalog, station caches,
//! routing, transfer fabric, tape storage, and metrics to the event kernel.
//!
//! Everything observable flows through `handle`: trace records fire as
//! events, link and tape completions arrive as ticks, and every effect is
//! applied in deterministic order. Links and tape libraries are advanced
//! lazily; a per-resource epoch counter invalidates stale ticks instead of
//! cancelling events.

use std::collections::{BTreeMap, VecDeque};

use crate::cache::{CacheMode, StationCache};
use crate::catalog::{Catalog, CatalogError, ReplicaState};
use crate::fabric::{crc32, Fabric, FaultProfile, LinkSpec, TransferRecord, Verdict};
use crate::kernel::{Event, Kernel, RunStats};
use crate::metrics::{MetricKind, MetricsLedger};
use crate::mss::{MssConfig, RequestId, RequestKind, TapeLibrary};
use crate::rng::SplitMix64;
use crate::routing::RouteTable;
use crate::station::{
    DeliveryMode, NextAction, Project, ReleaseOutcome, StationConfig, StationError,
};
use crate::types::{
    ConsumerId, FileId, GroupId, LinkKey, MssId, NodeId, ProjectId, StationId, Tier,
};
use crate::workload::{TraceAction, TraceRecord};

/// Simulation event payloads.
#[derive(Debug, Clone)]
pub enum Ev {
    /// Fire trace record `i`.
    Trace(usize),
    /// A link may have completions; stale epochs are ignored.
    LinkTick { link: LinkKey, epoch: u64 },
    /// Per-attempt latency elapsed; the transfer joins the sharing pool.
    TransferLaunch { id: u64 },
    /// A tape library may have completions.
    MssTick { mss: MssId, epoch: u64 },
    /// Serve one deferred consumer request. Runs as a zero-delay event so
    /// long token chains never recurse through the call stack.
    ConsumerKick {
        station: StationId,
        project: ProjectId,
        consumer: ConsumerId,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("trace record {index}: {message}")]
    Replay { index: usize, message: String },
    #[error(transparent)]
    Station(#[from] StationError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("build error: {0}")]
    Build(String),
}

/// Where a delivered byte came from, for conservation audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliverySource {
    CacheHit,
    Staged,
    /// Staged in but not admitted to the cache (pin-saturated cache);
    /// consumed directly.
    Bypass,
    RemoteStream,
}

#[derive(Debug, Clone)]
pub struct DeliveryEvent {
    pub at: f64,
    pub station: StationId,
    pub project: ProjectId,
    pub consumer: ConsumerId,
    pub file: FileId,
    pub size: u64,
    pub source: DeliverySource,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct AuditCounters {
    pub hit_bytes: u64,
    pub staged_bytes: u64,
    pub bypass_bytes: u64,
    pub stream_bytes: u64,
}

#[derive(Debug)]
struct InflightStage {
    group: GroupId,
    originator: Option<ProjectId>,
    waiters: Vec<(ProjectId, ConsumerId)>,
    stream_waiters: Vec<(StationId, ProjectId, ConsumerId)>,
}

#[derive(Debug)]
pub struct StationState {
    pub config: StationConfig,
    pub cache: StationCache,
    pub projects: BTreeMap<ProjectId, Project>,
    inflight: BTreeMap<FileId, InflightStage>,
    stage_queue: VecDeque<FileId>,
    active_stages: u32,
    /// Highest concurrent stage count ever observed (test instrumentation).
    pub max_stage_watermark: u32,
    hold_pins: BTreeMap<(ProjectId, ConsumerId), bool>,
}

#[derive(Debug, Clone)]
enum Journey {
    /// Pull toward a station cache, then deliver to waiting consumers.
    Stage { station: StationId, path: Vec<NodeId>, hop: usize },
    /// Forward toward a tape archive, then store.
    Archive { mss: MssId, path: Vec<NodeId>, hop: usize },
}

#[derive(Debug)]
struct ActiveTransfer {
    file: FileId,
    name: String,
    size: u64,
    crc: u32,
    group: GroupId,
    src: NodeId,
    dst: NodeId,
    link: LinkKey,
    attempts: u32,
    t_first: f64,
    journey: Journey,
    src_pinned: bool,
}

#[derive(Debug)]
enum FlowOwner {
    Transfer(u64),
    Stream(StreamCtx),
    NfsRead(NfsCtx),
}

#[derive(Debug)]
struct StreamCtx {
    file: FileId,
    bytes: u64,
    server: StationId,
    reader: StationId,
    deliver_to: Option<(ProjectId, ConsumerId)>,
}

#[derive(Debug)]
struct NfsCtx {
    file: FileId,
    size: u64,
    station: StationId,
    project: ProjectId,
    consumer: ConsumerId,
    pinned: bool,
    source: DeliverySource,
}

#[derive(Debug)]
enum MssJourney {
    FetchForStage { station: StationId, path: Vec<NodeId>, group: GroupId },
    StoreArchive,
}

enum StagePlan {
    FromStation { src: StationId, path: Vec<NodeId> },
    FromMss { mss: MssId, path: Vec<NodeId> },
}

pub struct Sim {
    pub catalog: Catalog,
    pub routes: RouteTable,
    pub fabric: Fabric,
    pub stations: BTreeMap<StationId, StationState>,
    pub mss: BTreeMap<MssId, TapeLibrary>,
    pub ledger: MetricsLedger,
    pub transfer_log: Vec<TransferRecord>,
    pub delivery_log: Vec<DeliveryEvent>,
    pub project_reports: Vec<String>,
    pub warnings: Vec<String>,
    pub audit_counters: BTreeMap<StationId, AuditCounters>,
    /// Total corruptions injected by the fault model (ground truth for
    /// integrity accounting).
    pub injected_corruptions: u64,
    trace: Vec<TraceRecord>,
    transfers: BTreeMap<u64, ActiveTransfer>,
    flows: BTreeMap<u64, FlowOwner>,
    next_flow: u64,
    next_project: u64,
    link_epoch: BTreeMap<LinkKey, u64>,
    mss_epoch: BTreeMap<MssId, u64>,
    pending_mss: BTreeMap<(MssId, RequestId), MssJourney>,
    rng_fault: SplitMix64,
    fault: FaultProfile,
    retry_budget: u32,
}

impl Sim {
    pub fn new(master_seed: u64, fault: FaultProfile, retry_budget: u32) -> Sim {
        Sim {
            catalog: Catalog::new(),
            routes: RouteTable::new(),
            fabric: Fabric::new(),
            stations: BTreeMap::new(),
            mss: BTreeMap::new(),
            ledger: MetricsLedger::new(),
            transfer_log: Vec::new(),
            delivery_log: Vec::new(),
            project_reports: Vec::new(),
            warnings: Vec::new(),
            audit_counters: BTreeMap::new(),
            injected_corruptions: 0,
            trace: Vec::new(),
            transfers: BTreeMap::new(),
            flows: BTreeMap::new(),
            next_flow: 0,
            next_project: 0,
            link_epoch: BTreeMap::new(),
            mss_epoch: BTreeMap::new(),
            pending_mss: BTreeMap::new(),
            rng_fault: SplitMix64::derive(master_seed, 0xFA),
            fault,
            retry_budget,
        }
    }

    // ---- construction -----------------------------------------------------

    pub fn add_station(&mut self, config: StationConfig, domain: &str) -> Result<(), SimError> {
        let id = config.id.clone();
        if self.stations.contains_key(&id) {
            return Err(SimError::Build(format!("duplicate station {id}")));
        }
        if config.consumer_slots == 0 || config.max_concurrent_stages == 0 {
            return Err(SimError::Build(format!(
                "{id}: consumer_slots and max_concurrent_stages must be >= 1"
            )));
        }
        if config.cache.mode == CacheMode::NfsShared {
            let bw = config
                .nfs_read_bandwidth
                .ok_or_else(|| SimError::Build(format!("{id}: nfs_shared needs nfs_read_bandwidth")))?;
            // Local reads at an nfs station queue through one server volume,
            // modeled as a self-link shared by concurrent readers.
            let node = NodeId::Station(id.clone());
            self.fabric
                .add_link(node.clone(), node, LinkSpec { bandwidth: bw, latency: 0.0 });
        }
        let cache = StationCache::new(config.cache.clone())
            .map_err(|e| SimError::Build(format!("{id}: {e}")))?;
        self.routes.register_node(NodeId::Station(id.clone()), domain);
        self.ledger.register_station(id.as_str());
        self.audit_counters.insert(id.clone(), AuditCounters::default());
        self.stations.insert(
            id,
            StationState {
                config,
                cache,
                projects: BTreeMap::new(),
                inflight: BTreeMap::new(),
                stage_queue: VecDeque::new(),
                active_stages: 0,
                max_stage_watermark: 0,
                hold_pins: BTreeMap::new(),
            },
        );
        Ok(())
    }

    pub fn add_mss(&mut self, id: MssId, config: MssConfig, domain: &str) -> Result<(), SimError> {
        if self.mss.contains_key(&id) {
            return Err(SimError::Build(format!("duplicate mss {id}")));
        }
        self.routes.register_node(NodeId::Mss(id.clone()), domain);
        self.ledger.register_station(id.as_str());
        self.mss.insert(id.clone(), TapeLibrary::new(id, config));
        Ok(())
    }

    pub fn add_link(&mut self, a: NodeId, b: NodeId, spec: LinkSpec) {
        self.fabric.add_link(a, b, spec);
    }

    pub fn add_route(&mut self, station: &NodeId, domain: &str, next_hop: &NodeId) -> Result<(), SimError> {
        self.routes
            .add_route(station, domain, next_hop)
            .map_err(|e| SimError::Build(e.to_string()))
    }

    /// Apply route config lines (`station,domain,next_hop,cache_in_transit`).
    /// Blank lines and `#` comments are skipped.
    pub fn apply_route_lines(&mut self, text: &str) -> Result<(), SimError> {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parsed = crate::routing::parse_route_line(line)
                .map_err(|e| SimError::Build(e.to_string()))?;
            let node_of = |name: &str| {
                if self.mss.contains_key(&MssId::new(name)) {
                    NodeId::mss(name)
                } else {
                    NodeId::station(name)
                }
            };
            let station = node_of(&parsed.station);
            let next_hop = node_of(&parsed.next_hop);
            self.add_route(&station, &parsed.domain, &next_hop)?;
            self.routes
                .set_cache_in_transit(station, parsed.cache_in_transit);
        }
        Ok(())
    }

    /// Place a file on tape as pre-run state and register the archived replica.
    pub fn preload_archive(&mut self, mss: &MssId, file: FileId) -> Result<(), SimError> {
        let size = self.catalog.file(file)?.size;
        let lib = self
            .mss
            .get_mut(mss)
            .ok_or_else(|| SimError::Build(format!("unknown mss {mss}")))?;
        lib.preload(file, size)
            .map_err(|e| SimError::Build(e.to_string()))?;
        self.catalog
            .add_replica(file, NodeId::Mss(mss.clone()), ReplicaState::Archived, None)?;
        Ok(())
    }

    /// Seed a station cache with a file as pre-run state.
    pub fn preload_cached(&mut self, station: &StationId, file: FileId, group: &GroupId) -> Result<(), SimError> {
        let size = self.catalog.file(file)?.size;
        let st = self
            .stations
            .get_mut(station)
            .ok_or_else(|| SimError::Build(format!("unknown station {station}")))?;
        let res = st
            .cache
            .admit(file, size, group, 0.0)
            .map_err(|e| SimError::Build(format!("preload at {station}: {e}")))?;
        for evicted in &res.evicted {
            self.catalog
                .remove_replica(*evicted, &NodeId::Station(station.clone()))?;
        }
        self.catalog.add_replica(
            file,
            NodeId::Station(station.clone()),
            ReplicaState::Cached,
            Some(res.resident_node),
        )?;
        Ok(())
    }

    fn adjacency(&self) -> impl Fn(&NodeId, &NodeId) -> bool + '_ {
        |a, b| self.fabric.has_link(a, b)
    }

    /// Replica ordering for a requester: local, then stations by route
    /// hops, then tape copies.
    pub fn locate(&self, file: FileId, requester: &StationId) -> Result<Vec<crate::catalog::Replica>, CatalogError> {
        let here = NodeId::Station(requester.clone());
        let adj = self.adjacency();
        self.catalog
            .locate(file, &here, |loc| self.routes.hop_count(loc, &here, &adj))
    }

    // ---- trace handling ---------------------------------------------------

    /// Validate and install a trace for replay. Cross-references must
    /// resolve before any event fires.
    pub fn load_trace(&mut self, trace: Vec<TraceRecord>) -> Result<(), SimError> {
        for (index, rec) in trace.iter().enumerate() {
            let fail = |message: String| SimError::Replay { index, message };
            if !rec.t.is_finite() || rec.t < 0.0 {
                return Err(fail(format!("bad timestamp {}", rec.t)));
            }
            match &rec.action {
                TraceAction::StartProject { station, dataset, consumers, .. } => {
                    if !self.stations.contains_key(station) {
                        return Err(fail(format!("unknown station {station}")));
                    }
                    if self.catalog.dataset_by_name(dataset).is_none() {
                        return Err(fail(format!("unknown dataset {dataset}")));
                    }
                    if *consumers == 0 {
                        return Err(fail("consumers must be >= 1".into()));
                    }
                }
                TraceAction::NextFile { station, .. } | TraceAction::ReleaseFile { station, .. } => {
                    if !self.stations.contains_key(station) {
                        return Err(fail(format!("unknown station {station}")));
                    }
                }
                TraceAction::ImportFile { station, archive, .. } => {
                    if !self.stations.contains_key(station) {
                        return Err(fail(format!("unknown station {station}")));
                    }
                    if !self.mss.contains_key(archive) {
                        return Err(fail(format!("unknown mss {archive}")));
                    }
                }
            }
        }
        self.trace = trace;
        Ok(())
    }

    pub fn trace_len(&self) -> usize {
        self.trace.len()
    }

    fn warn(&mut self, msg: String) {
        self.warnings.push(msg);
    }

    // ---- event dispatch ---------------------------------------------------

    pub fn handle(&mut self, k: &mut Kernel<Ev>, ev: Event<Ev>) {
        match ev.payload {
            Ev::Trace(i) => {
                let rec = self.trace[i].clone();
                self.apply_trace(k, i, rec);
            }
            Ev::TransferLaunch { id } => self.on_transfer_launch(k, id),
            Ev::LinkTick { link, epoch } => {
                if self.link_epoch.get(&link).copied().unwrap_or(0) != epoch {
                    return;
                }
                self.on_link_tick(k, link);
            }
            Ev::MssTick { mss, epoch } => {
                if self.mss_epoch.get(&mss).copied().unwrap_or(0) != epoch {
                    return;
                }
                self.on_mss_tick(k, mss);
            }
            Ev::ConsumerKick { station, project, consumer } => {
                let pending = self
                    .stations
                    .get_mut(&station)
                    .and_then(|st| st.projects.get_mut(&project))
                    .map(|p| p.take_pending_request(consumer))
                    .unwrap_or(false);
                if pending {
                    if let Err(e) = self.request_next(k, &station, project, consumer) {
                        self.warn(format!("deferred request failed: {e}"));
                    }
                }
            }
        }
    }

    /// Defer "serve this consumer's next queued request" to a zero-delay
    /// event.
    fn kick_consumer(
        &mut self,
        k: &mut Kernel<Ev>,
        station: &StationId,
        project: ProjectId,
        consumer: ConsumerId,
    ) {
        k.schedule(
            0.0,
            Ev::ConsumerKick {
                station: station.clone(),
                project,
                consumer,
            },
        )
        .expect("zero delay");
    }

    fn apply_trace(&mut self, k: &mut Kernel<Ev>, index: usize, rec: TraceRecord) {
        match rec.action {
            TraceAction::StartProject {
                station,
                project,
                dataset,
                group,
                consumers,
                subset,
            } => {
                if let Err(e) = self.start_project_inner(
                    k,
                    &station,
                    &dataset,
                    &group,
                    consumers,
                    subset.as_deref(),
                    Some(project),
                ) {
                    self.warn(format!("trace[{index}] start_project: {e}"));
                }
            }
            TraceAction::NextFile { station, project, consumer } => {
                if let Err(e) = self.request_next(k, &station, project, consumer) {
                    self.warn(format!("trace[{index}] next_file: {e}"));
                }
            }
            TraceAction::ReleaseFile { station, project, consumer } => {
                if let Err(e) = self.release_held(k, &station, project, consumer, None) {
                    self.warn(format!("trace[{index}] release_file: {e}"));
                }
            }
            TraceAction::ImportFile { station, name, size, group, archive } => {
                if let Err(e) = self.import_file(k, &station, &name, size, &group, &archive) {
                    self.warn(format!("trace[{index}] import_file: {e}"));
                }
            }
        }
    }

    // ---- projects and deliveries -------------------------------------------

    /// Start a project over a dataset snapshot. `subset` selects indices
    /// into the resolved snapshot (workload sampling); None takes it whole.
    #[allow(clippy::too_many_arguments)]
    pub fn start_project_inner(
        &mut self,
        k: &mut Kernel<Ev>,
        station: &StationId,
        dataset: &str,
        group: &GroupId,
        consumers: u32,
        subset: Option<&[u32]>,
        explicit_id: Option<ProjectId>,
    ) -> Result<ProjectId, SimError> {
        let ds = self
            .catalog
            .dataset_by_name(dataset)
            .ok_or_else(|| StationError::UnknownDataset(dataset.to_string()))?;
        let snapshot = self.catalog.resolve_dataset(ds)?;
        let files: Vec<FileId> = match subset {
            None => snapshot,
            Some(indices) => {
                let mut files = Vec::with_capacity(indices.len());
                for &i in indices {
                    let f = snapshot.get(i as usize).ok_or_else(|| SimError::Build(format!(
                        "subset index {i} out of range for dataset {dataset} ({} files)",
                        snapshot.len()
                    )))?;
                    files.push(*f);
                }
                files
            }
        };
        let st = self
            .stations
            .get_mut(station)
            .ok_or_else(|| SimError::Build(format!("unknown station {station}")))?;
        let id = explicit_id.unwrap_or(ProjectId(self.next_project));
        self.next_project = self.next_project.max(id.0 + 1);
        if st.projects.contains_key(&id) {
            return Err(SimError::Build(format!("duplicate project id {id}")));
        }
        let project = Project::new(
            id,
            station.clone(),
            ds,
            group.clone(),
            files,
            consumers,
            st.config.consumer_slots,
            k.now(),
        )?;
        let immediately_done = project.state() == crate::station::ProjectState::Done;
        if immediately_done {
            self.project_reports.push(project.report_line());
        }
        self.stations
            .get_mut(station)
            .expect("checked")
            .projects
            .insert(id, project);
        Ok(id)
    }

    /// Consumer pull: hand out the next undelivered file or end the stream.
    pub fn request_next(
        &mut self,
        k: &mut Kernel<Ev>,
        station: &StationId,
        project: ProjectId,
        consumer: ConsumerId,
    ) -> Result<(), SimError> {
        let st = self
            .stations
            .get_mut(station)
            .ok_or_else(|| SimError::Build(format!("unknown station {station}")))?;
        let p = st
            .projects
            .get_mut(&project)
            .ok_or(StationError::UnknownProject(project))?;
        match p.request(consumer)? {
            NextAction::Deliver(file) => self.dispatch_delivery(k, station, project, consumer, file),
            NextAction::EndOfStream => {
                let now = k.now();
                let st = self.stations.get_mut(station).expect("checked");
                let p = st.projects.get_mut(&project).expect("checked");
                if p.maybe_finish(now) {
                    self.project_reports.push(
                        self.stations[station].projects[&project].report_line(),
                    );
                }
                Ok(())
            }
            NextAction::Deferred => Ok(()),
        }
    }

    /// Release the held file (trace replay passes expected=None).
    pub fn release_held(
        &mut self,
        k: &mut Kernel<Ev>,
        station: &StationId,
        project: ProjectId,
        consumer: ConsumerId,
        expected: Option<FileId>,
    ) -> Result<(), SimError> {
        let st = self
            .stations
            .get_mut(station)
            .ok_or_else(|| SimError::Build(format!("unknown station {station}")))?;
        let p = st
            .projects
            .get_mut(&project)
            .ok_or(StationError::UnknownProject(project))?;
        match p.release(consumer, expected)? {
            ReleaseOutcome::Released(file) => {
                self.after_release(k, station, project, consumer, file);
                Ok(())
            }
            ReleaseOutcome::Latched | ReleaseOutcome::Ignored => Ok(()),
        }
    }

    fn after_release(
        &mut self,
        k: &mut Kernel<Ev>,
        station: &StationId,
        project: ProjectId,
        consumer: ConsumerId,
        file: FileId,
    ) {
        let now = k.now();
        let pinned = {
            let st = self.stations.get_mut(station).expect("station exists");
            st.hold_pins.remove(&(project, consumer)).unwrap_or(false)
        };
        if pinned {
            self.unpin_cached(station, file);
        }
        let finished = {
            let st = self.stations.get_mut(station).expect("station exists");
            let p = st.projects.get_mut(&project).expect("project exists");
            p.maybe_finish(now)
        };
        if finished {
            self.project_reports
                .push(self.stations[station].projects[&project].report_line());
        }
        self.kick_consumer(k, station, project, consumer);
    }

    fn pin_cached(&mut self, station: &StationId, file: FileId) {
        let st = self.stations.get_mut(station).expect("station exists");
        let count = st.cache.set_pin(file, 1).expect("pin on cached entry");
        if count == 1 {
            let _ = self.catalog.set_replica_state(
                file,
                &NodeId::Station(station.clone()),
                ReplicaState::PinnedCached,
            );
        }
    }

    fn unpin_cached(&mut self, station: &StationId, file: FileId) {
        let st = self.stations.get_mut(station).expect("station exists");
        match st.cache.set_pin(file, -1) {
            Ok(0) => {
                let _ = self.catalog.set_replica_state(
                    file,
                    &NodeId::Station(station.clone()),
                    ReplicaState::Cached,
                );
            }
            Ok(_) => {}
            Err(e) => self.warnings.push(format!("unpin {file} at {station}: {e}")),
        }
    }

    fn dispatch_delivery(
        &mut self,
        k: &mut Kernel<Ev>,
        station: &StationId,
        project: ProjectId,
        consumer: ConsumerId,
        file: FileId,
    ) -> Result<(), SimError> {
        let now = k.now();
        let size = self.catalog.file(file)?.size;
        let st = self.stations.get_mut(station).expect("station exists");
        let mode = st.config.delivery_mode;
        let is_nfs = st.config.cache.mode == CacheMode::NfsShared;
        if st.cache.lookup(file).is_some() {
            st.cache.touch(file, now).expect("cached");
            self.pin_cached(station, file);
            if is_nfs {
                self.launch_nfs_read(k, station, project, consumer, file, size, true, DeliverySource::CacheHit);
            } else {
                self.finish_delivery(k, station, project, consumer, file, size, true, DeliverySource::CacheHit);
            }
            return Ok(());
        }
        match mode {
            DeliveryMode::CopyToCache => {
                let group = self.stations[station].projects[&project].group.clone();
                self.request_stage(k, station, file, group, Some((project, consumer)), None);
                Ok(())
            }
            DeliveryMode::NetworkAttached => {
                self.network_attached_fetch(k, station, project, consumer, file, size);
                Ok(())
            }
        }
    }

    /// Finalize delivery to a consumer: metrics, audit trail, hold
    /// bookkeeping, and any latched release.
    #[allow(clippy::too_many_arguments)]
    fn finish_delivery(
        &mut self,
        k: &mut Kernel<Ev>,
        station: &StationId,
        project: ProjectId,
        consumer: ConsumerId,
        file: FileId,
        size: u64,
        pinned: bool,
        source: DeliverySource,
    ) {
        let now = k.now();
        self.ledger
            .record(MetricKind::Consumed, station.as_str(), size as i64, 1, now)
            .expect("non-negative");
        if source == DeliverySource::RemoteStream {
            self.ledger
                .record(MetricKind::RemoteStream, station.as_str(), size as i64, 0, now)
                .expect("non-negative");
        }
        let audit = self.audit_counters.entry(station.clone()).or_default();
        match source {
            DeliverySource::CacheHit => audit.hit_bytes += size,
            DeliverySource::Staged => audit.staged_bytes += size,
            DeliverySource::Bypass => audit.bypass_bytes += size,
            DeliverySource::RemoteStream => audit.stream_bytes += size,
        }
        self.delivery_log.push(DeliveryEvent {
            at: now,
            station: station.clone(),
            project,
            consumer,
            file,
            size,
            source,
        });
        let fire_release = {
            let st = self.stations.get_mut(station).expect("station exists");
            st.hold_pins.insert((project, consumer), pinned);
            let p = st.projects.get_mut(&project).expect("project exists");
            p.delivery_complete(consumer, file, size).expect("awaiting consumer")
        };
        if fire_release {
            let released = {
                let st = self.stations.get_mut(station).expect("station exists");
                let p = st.projects.get_mut(&project).expect("project exists");
                p.apply_latched_release(consumer)
            };
            match released {
                Ok(f) => self.after_release(k, station, project, consumer, f),
                Err(e) => self.warn(format!("latched release: {e}")),
            }
        }
    }

    fn fail_delivery(
        &mut self,
        k: &mut Kernel<Ev>,
        station: &StationId,
        project: ProjectId,
        consumer: ConsumerId,
        file: FileId,
        reason: &str,
    ) {
        self.warn(format!("delivery of {file} to {station}/{project}/{consumer} failed: {reason}"));
        let now = k.now();
        let finished = {
            let st = self.stations.get_mut(station).expect("station exists");
            let p = st.projects.get_mut(&project).expect("project exists");
            if p.delivery_failed(consumer, file).is_err() {
                return;
            }
            p.maybe_finish(now)
        };
        if finished {
            self.project_reports
                .push(self.stations[station].projects[&project].report_line());
        }
        self.kick_consumer(k, station, project, consumer);
    }

    // ---- staging ------------------------------------------------------------

    fn request_stage(
        &mut self,
        k: &mut Kernel<Ev>,
        station: &StationId,
        file: FileId,
        group: GroupId,
        waiter: Option<(ProjectId, ConsumerId)>,
        stream_waiter: Option<(StationId, ProjectId, ConsumerId)>,
    ) {
        let st = self.stations.get_mut(station).expect("station exists");
        if let Some(stage) = st.inflight.get_mut(&file) {
            if let Some(w) = waiter {
                stage.waiters.push(w);
            }
            if let Some(sw) = stream_waiter {
                stage.stream_waiters.push(sw);
            }
            return;
        }
        let originator = waiter.map(|(p, _)| p).or(stream_waiter.as_ref().map(|(_, p, _)| *p));
        st.inflight.insert(
            file,
            InflightStage {
                group,
                originator,
                waiters: waiter.into_iter().collect(),
                stream_waiters: stream_waiter.into_iter().collect(),
            },
        );
        st.stage_queue.push_back(file);
        self.try_launch_stages(k, station);
    }

    fn try_launch_stages(&mut self, k: &mut Kernel<Ev>, station: &StationId) {
        loop {
            let file = {
                let st = self.stations.get_mut(station).expect("station exists");
                if st.active_stages >= st.config.max_concurrent_stages {
                    return;
                }
                match st.stage_queue.pop_front() {
                    Some(f) => f,
                    None => return,
                }
            };
            // The file may have landed while queued (transit replication).
            if self.stations[station].cache.lookup(file).is_some() {
                self.stage_hit_shortcut(k, station, file);
                continue;
            }
            let plan = self.plan_stage(station, file);
            match plan {
                Err(reason) => {
                    self.stage_failed(k, station, file, &reason, false);
                }
                Ok(plan) => {
                    let st = self.stations.get_mut(station).expect("station exists");
                    st.active_stages += 1;
                    st.max_stage_watermark = st.max_stage_watermark.max(st.active_stages);
                    debug_assert!(st.active_stages <= st.config.max_concurrent_stages);
                    let group = st.inflight[&file].group.clone();
                    let now = k.now();
                    let size = self.catalog.file(file).expect("declared").size;
                    match plan {
                        StagePlan::FromStation { src, path } => {
                            let _ = self.catalog.add_replica(
                                file,
                                NodeId::Station(station.clone()),
                                ReplicaState::Staging,
                                None,
                            );
                            self.pin_cached(&src, file);
                            self.launch_hop(
                                k,
                                file,
                                size,
                                group,
                                path.clone(),
                                0,
                                Journey::Stage { station: station.clone(), path, hop: 0 },
                                true,
                            );
                        }
                        StagePlan::FromMss { mss, path } => {
                            let _ = self.catalog.add_replica(
                                file,
                                NodeId::Station(station.clone()),
                                ReplicaState::Staging,
                                None,
                            );
                            let lib = self.mss.get_mut(&mss).expect("mss exists");
                            match lib.submit_fetch(file, size, now) {
                                Ok(req) => {
                                    self.pending_mss.insert(
                                        (mss.clone(), req),
                                        MssJourney::FetchForStage { station: station.clone(), path, group },
                                    );
                                    self.poke_mss(k, &mss);
                                }
                                Err(e) => {
                                    let _ = self.catalog.remove_replica(file, &NodeId::Station(station.clone()));
                                    self.stage_failed(k, station, file, &e.to_string(), true);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// File found cached while its stage request waited in the queue:
    /// deliver to all waiters as cache hits.
    fn stage_hit_shortcut(&mut self, k: &mut Kernel<Ev>, station: &StationId, file: FileId) {
        let stage = {
            let st = self.stations.get_mut(station).expect("station exists");
            st.inflight.remove(&file).expect("queued stage tracked")
        };
        let now = k.now();
        let size = self.catalog.file(file).expect("declared").size;
        let is_nfs = self.stations[station].config.cache.mode == CacheMode::NfsShared;
        for (project, consumer) in stage.waiters {
            let st = self.stations.get_mut(station).expect("station exists");
            st.cache.touch(file, now).expect("cached");
            self.pin_cached(station, file);
            if is_nfs {
                self.launch_nfs_read(k, station, project, consumer, file, size, true, DeliverySource::CacheHit);
            } else {
                self.finish_delivery(k, station, project, consumer, file, size, true, DeliverySource::CacheHit);
            }
        }
        for (reader, project, consumer) in stage.stream_waiters {
            self.open_stream_for(k, station, &reader, project, consumer, file, size);
        }
    }

    /// Choose the cheapest usable source for a stage, validating the route
    /// and per-hop links.
    fn plan_stage(&self, station: &StationId, file: FileId) -> Result<StagePlan, String> {
        let here = NodeId::Station(station.clone());
        let replicas = self
            .locate(file, station)
            .map_err(|e| format!("locate failed: {e}"))?;
        for r in &replicas {
            if r.location == here {
                continue;
            }
            let path = match self.routes.compute_path(&r.location, &here, self.adjacency()) {
                Ok(p) => p,
                Err(_) => continue,
            };
            if !self.path_fully_linked(&path) {
                continue;
            }
            match &r.location {
                NodeId::Station(s) => {
                    return Ok(StagePlan::FromStation { src: s.clone(), path });
                }
                NodeId::Mss(m) => {
                    return Ok(StagePlan::FromMss { mss: m.clone(), path });
                }
            }
        }
        Err(format!("no reachable replica of {file}"))
    }

    fn path_fully_linked(&self, path: &[NodeId]) -> bool {
        path.windows(2).all(|w| self.fabric.has_link(&w[0], &w[1]))
    }

    /// Tear down a failed stage. Callers that held a slot re-run
    /// `try_launch_stages` themselves (the launch loop already iterates).
    fn stage_failed(
        &mut self,
        k: &mut Kernel<Ev>,
        station: &StationId,
        file: FileId,
        reason: &str,
        release_slot: bool,
    ) {
        self.warn(format!("stage of {file} to {station} failed: {reason}"));
        let stage = {
            let st = self.stations.get_mut(station).expect("station exists");
            if release_slot {
                st.active_stages -= 1;
            }
            st.inflight.remove(&file)
        };
        let Some(stage) = stage else { return };
        for (project, consumer) in stage.waiters {
            self.fail_delivery(k, station, project, consumer, file, reason);
        }
        for (reader, project, consumer) in stage.stream_waiters {
            self.fail_delivery(k, &reader, project, consumer, file, reason);
        }
    }

    // ---- network-attached delivery ------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn network_attached_fetch(
        &mut self,
        k: &mut Kernel<Ev>,
        reader: &StationId,
        project: ProjectId,
        consumer: ConsumerId,
        file: FileId,
        size: u64,
    ) {
        let reader_node = NodeId::Station(reader.clone());
        let replicas = match self.locate(file, reader) {
            Ok(r) => r,
            Err(e) => {
                self.fail_delivery(k, reader, project, consumer, file, &e.to_string());
                return;
            }
        };
        // Prefer streaming straight from a directly linked station replica.
        let direct_server = replicas.iter().find_map(|r| match &r.location {
            NodeId::Station(s) if s != reader && self.fabric.has_link(&r.location, &reader_node) => {
                Some(s.clone())
            }
            _ => None,
        });
        if let Some(server) = direct_server {
            self.open_stream_for(k, &server, reader, project, consumer, file, size);
            return;
        }
        // Tape fallback: stage to the last station before the reader on the
        // archive route, then stream over the final link.
        for r in &replicas {
            if let NodeId::Mss(_) = &r.location {
                let path = match self.routes.compute_path(&r.location, &reader_node, self.adjacency()) {
                    Ok(p) => p,
                    Err(_) => continue,
                };
                if !self.path_fully_linked(&path) {
                    continue;
                }
                if path.len() >= 3 {
                    let gateway = match &path[path.len() - 2] {
                        NodeId::Station(s) => s.clone(),
                        NodeId::Mss(_) => continue,
                    };
                    let group = self.stations[reader].projects[&project].group.clone();
                    self.request_stage(
                        k,
                        &gateway,
                        file,
                        group,
                        None,
                        Some((reader.clone(), project, consumer)),
                    );
                    return;
                }
                // Directly attached archive: no server to stream from, so
                // fall back to an ordinary copy into the local cache.
                let group = self.stations[reader].projects[&project].group.clone();
                self.request_stage(k, reader, file, group, Some((project, consumer)), None);
                return;
            }
        }
        // Remote station replicas exist but none is directly linked:
        // degrade to a routed copy into the local cache.
        if !replicas.is_empty() {
            let group = self.stations[reader].projects[&project].group.clone();
            self.request_stage(k, reader, file, group, Some((project, consumer)), None);
            return;
        }
        self.fail_delivery(k, reader, project, consumer, file, "no usable replica");
    }

    /// Open a held-channel read of `file` from `server` to `reader`.
    #[allow(clippy::too_many_arguments)]
    fn open_stream_for(
        &mut self,
        k: &mut Kernel<Ev>,
        server: &StationId,
        reader: &StationId,
        project: ProjectId,
        consumer: ConsumerId,
        file: FileId,
        size: u64,
    ) {
        let server_node = NodeId::Station(server.clone());
        let reader_node = NodeId::Station(reader.clone());
        let key = LinkKey::new(server_node.clone(), reader_node.clone());
        let Some(model) = self.fabric.link_mut(&key) else {
            self.fail_delivery(k, reader, project, consumer, file, "no link for stream");
            return;
        };
        let hold = size as f64 / model.spec().bandwidth;
        let now = k.now();
        let close_at = now + hold;
        let flow = self.next_flow;
        self.next_flow += 1;
        model.add_stream(flow, close_at, now);
        self.flows.insert(
            flow,
            FlowOwner::Stream(StreamCtx {
                file,
                bytes: size,
                server: server.clone(),
                reader: reader.clone(),
                deliver_to: Some((project, consumer)),
            }),
        );
        self.pin_cached(server, file);
        self.poke_link(k, &key);
    }

    /// Raw stream with an explicit hold; reads at most what the hold allows
    /// at solo bandwidth. Test and library surface for held channels.
    pub fn open_stream_raw(
        &mut self,
        k: &mut Kernel<Ev>,
        server: &StationId,
        reader: &StationId,
        file: FileId,
        hold_seconds: f64,
    ) -> Result<u64, SimError> {
        let size = self.catalog.file(file)?.size;
        let server_node = NodeId::Station(server.clone());
        let st = self
            .stations
            .get(server)
            .ok_or_else(|| SimError::Build(format!("unknown station {server}")))?;
        if st.cache.lookup(file).is_none() {
            return Err(SimError::Build(format!("{file} not cached at {server}")));
        }
        let key = LinkKey::new(server_node, NodeId::Station(reader.clone()));
        let model = self
            .fabric
            .link_mut(&key)
            .ok_or_else(|| SimError::Build(format!("no link {key}")))?;
        let bytes = ((hold_seconds * model.spec().bandwidth) as u64).min(size);
        let now = k.now();
        let flow = self.next_flow;
        self.next_flow += 1;
        model.add_stream(flow, now + hold_seconds, now);
        self.flows.insert(
            flow,
            FlowOwner::Stream(StreamCtx {
                file,
                bytes,
                server: server.clone(),
                reader: reader.clone(),
                deliver_to: None,
            }),
        );
        self.pin_cached(server, file);
        self.poke_link(k, &key);
        Ok(bytes)
    }

    // ---- nfs local reads ------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn launch_nfs_read(
        &mut self,
        k: &mut Kernel<Ev>,
        station: &StationId,
        project: ProjectId,
        consumer: ConsumerId,
        file: FileId,
        size: u64,
        pinned: bool,
        source: DeliverySource,
    ) {
        let node = NodeId::Station(station.clone());
        let key = LinkKey::new(node.clone(), node);
        let now = k.now();
        let flow = self.next_flow;
        self.next_flow += 1;
        let model = self.fabric.link_mut(&key).expect("nfs self-link installed");
        model.add_bulk(flow, size, now);
        self.flows.insert(
            flow,
            FlowOwner::NfsRead(NfsCtx {
                file,
                size,
                station: station.clone(),
                project,
                consumer,
                pinned,
                source,
            }),
        );
        self.poke_link(k, &key);
    }

    // ---- imports ---------------------------------------------------------------

    /// A remote site produced a new file: declare it, cache it locally
    /// (best effort), and forward it along the static route to tape.
    pub fn import_file(
        &mut self,
        k: &mut Kernel<Ev>,
        station: &StationId,
        name: &str,
        size: u64,
        group: &GroupId,
        archive: &MssId,
    ) -> Result<(), SimError> {
        let now = k.now();
        let crc = crc32(name.as_bytes());
        let file = self
            .catalog
            .declare_file(name, size, crc, Tier::Montecarlo, &[], now)?;
        let src_node = NodeId::Station(station.clone());
        let mss_node = NodeId::Mss(archive.clone());
        let mut cached_at_src = false;
        {
            let st = self
                .stations
                .get_mut(station)
                .ok_or_else(|| SimError::Build(format!("unknown station {station}")))?;
            match st.cache.admit(file, size, group, now) {
                Ok(res) => {
                    for evicted in &res.evicted {
                        self.catalog.remove_replica(*evicted, &src_node)?;
                    }
                    self.catalog
                        .add_replica(file, src_node.clone(), ReplicaState::Cached, Some(res.resident_node))?;
                    cached_at_src = true;
                }
                Err(e) => {
                    self.warn(format!("import {name}: local cache admit failed: {e}"));
                }
            }
        }
        let path = self
            .routes
            .compute_path(&src_node, &mss_node, self.adjacency())
            .map_err(|e| SimError::Build(e.to_string()))?;
        if !self.path_fully_linked(&path) {
            return Err(SimError::Build(format!("route {src_node} -> {mss_node} missing links")));
        }
        if cached_at_src {
            self.pin_cached(station, file);
        }
        self.launch_hop(
            k,
            file,
            size,
            group.clone(),
            path.clone(),
            0,
            Journey::Archive { mss: archive.clone(), path, hop: 0 },
            cached_at_src,
        );
        Ok(())
    }

    // ---- transfers ----------------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn launch_hop(
        &mut self,
        k: &mut Kernel<Ev>,
        file: FileId,
        size: u64,
        group: GroupId,
        path: Vec<NodeId>,
        hop: usize,
        journey: Journey,
        src_pinned: bool,
    ) {
        debug_assert!(hop + 1 < path.len());
        let src = path[hop].clone();
        let dst = path[hop + 1].clone();
        let link = LinkKey::new(src.clone(), dst.clone());
        let rec = self.catalog.file(file).expect("declared");
        let id = self.next_flow;
        self.next_flow += 1;
        self.transfers.insert(
            id,
            ActiveTransfer {
                file,
                name: rec.logical_name.clone(),
                size,
                crc: rec.crc,
                group,
                src,
                dst,
                link: link.clone(),
                attempts: 1,
                t_first: k.now(),
                journey,
                src_pinned,
            },
        );
        self.flows.insert(id, FlowOwner::Transfer(id));
        let latency = self.fabric.link(&link).map(|m| m.spec().latency).unwrap_or(0.0);
        k.schedule(latency, Ev::TransferLaunch { id }).expect("latency >= 0");
    }

    fn on_transfer_launch(&mut self, k: &mut Kernel<Ev>, id: u64) {
        let now = k.now();
        let Some(tr) = self.transfers.get(&id) else { return };
        let link = tr.link.clone();
        let size = tr.size;
        let Some(model) = self.fabric.link_mut(&link) else {
            let tr = self.transfers.remove(&id).expect("present");
            self.flows.remove(&id);
            self.journey_failed(k, tr, "missing link");
            return;
        };
        model.add_bulk(id, size, now);
        self.poke_link(k, &link);
    }

    fn poke_link(&mut self, k: &mut Kernel<Ev>, link: &LinkKey) {
        let epoch = self.link_epoch.entry(link.clone()).or_insert(0);
        *epoch += 1;
        let epoch = *epoch;
        if let Some(model) = self.fabric.link(link) {
            if let Some(t) = model.next_event() {
                let delay = (t - k.now()).max(0.0);
                k.schedule(delay, Ev::LinkTick { link: link.clone(), epoch })
                    .expect("non-negative delay");
            }
        }
    }

    fn on_link_tick(&mut self, k: &mut Kernel<Ev>, link: LinkKey) {
        let now = k.now();
        let done = match self.fabric.link_mut(&link) {
            Some(m) => m.harvest(now),
            None => return,
        };
        for flow in done {
            match self.flows.remove(&flow) {
                Some(FlowOwner::Transfer(id)) => self.on_transfer_attempt_done(k, id),
                Some(FlowOwner::Stream(ctx)) => self.on_stream_closed(k, ctx),
                Some(FlowOwner::NfsRead(ctx)) => {
                    self.finish_delivery(
                        k,
                        &ctx.station.clone(),
                        ctx.project,
                        ctx.consumer,
                        ctx.file,
                        ctx.size,
                        ctx.pinned,
                        ctx.source,
                    );
                }
                None => {}
            }
        }
        self.poke_link(k, &link);
    }

    fn on_transfer_attempt_done(&mut self, k: &mut Kernel<Ev>, id: u64) {
        let now = k.now();
        let (corrupted, retry) = {
            let tr = self.transfers.get(&id).expect("active transfer");
            let p = self.fault.probability_for_attempt(tr.attempts);
            let corrupted = p > 0.0 && self.rng_fault.next_bool(p);
            if corrupted {
                self.injected_corruptions += 1;
            }
            (corrupted, corrupted && tr.attempts <= self.retry_budget)
        };
        if retry {
            let tr = self.transfers.get_mut(&id).expect("active transfer");
            tr.attempts += 1;
            let link = tr.link.clone();
            self.flows.insert(id, FlowOwner::Transfer(id));
            let latency = self.fabric.link(&link).map(|m| m.spec().latency).unwrap_or(0.0);
            k.schedule(latency, Ev::TransferLaunch { id }).expect("latency >= 0");
            return;
        }
        let tr = self.transfers.remove(&id).expect("active transfer");
        if tr.src_pinned {
            if let NodeId::Station(s) = &tr.src {
                let s = s.clone();
                self.unpin_cached(&s, tr.file);
            }
        }
        if let NodeId::Station(s) = &tr.src {
            self.ledger
                .record(MetricKind::SentOut, s.as_str(), tr.size as i64, 0, now)
                .expect("non-negative");
        }
        if corrupted {
            let delta = self.rng_fault.next_u32().max(1);
            self.log_transfer(&tr, now, tr.crc ^ delta, Verdict::Corrupted, false);
            self.journey_failed(k, tr, "retry budget exhausted");
            return;
        }
        let verdict = if tr.attempts > 1 { Verdict::Retried } else { Verdict::Ok };
        let entered_cache = self.apply_arrival(k, &tr);
        self.log_transfer(&tr, now, tr.crc, verdict, entered_cache);
        self.journey_advance(k, tr);
    }

    fn log_transfer(&mut self, tr: &ActiveTransfer, now: f64, crc_at_dst: u32, verdict: Verdict, entered_cache: bool) {
        self.transfer_log.push(TransferRecord {
            t_start: tr.t_first,
            t_end: now,
            file: tr.file,
            logical_name: tr.name.clone(),
            size: tr.size,
            src: tr.src.clone(),
            dst: tr.dst.clone(),
            crc_at_src: tr.crc,
            crc_at_dst,
            verdict,
            attempts: tr.attempts,
            entered_cache,
        });
    }

    /// Cache effects of a clean hop arrival. Returns whether the bytes
    /// entered the destination station's cache.
    fn apply_arrival(&mut self, k: &mut Kernel<Ev>, tr: &ActiveTransfer) -> bool {
        let now = k.now();
        let NodeId::Station(dst_station) = &tr.dst else {
            return false; // arrival at an MSS is handled by journey_advance
        };
        let dst_station = dst_station.clone();
        let is_final = match &tr.journey {
            Journey::Stage { path, hop, .. } => hop + 2 == path.len(),
            Journey::Archive { .. } => false,
        };
        if is_final {
            // The file may have been cached underneath us by a transit
            // replication; those bytes were already accounted.
            if self.stations[&dst_station].cache.lookup(tr.file).is_some() {
                let _ = self.catalog.set_replica_state(tr.file, &tr.dst, ReplicaState::Cached);
                return false;
            }
            // Final stage hop: a pin-saturated cache falls back to bypass
            // delivery without a local replica.
            let admit = {
                let st = self.stations.get_mut(&dst_station).expect("station exists");
                st.cache.admit(tr.file, tr.size, &tr.group, now)
            };
            match admit {
                Ok(res) => {
                    for evicted in res.evicted {
                        let _ = self.catalog.remove_replica(evicted, &tr.dst);
                    }
                    let _ = self
                        .catalog
                        .set_replica_state(tr.file, &tr.dst, ReplicaState::Cached);
                    self.ledger
                        .record(MetricKind::DeliveredIn, dst_station.as_str(), tr.size as i64, 0, now)
                        .expect("non-negative");
                    true
                }
                Err(e) => {
                    let _ = self.catalog.remove_replica(tr.file, &tr.dst);
                    self.warn(format!("admit of {} at {dst_station} failed: {e}", tr.file));
                    false
                }
            }
        } else {
            // Intermediate hop: replicate in passing when configured, best
            // effort only.
            if !self.routes.caches_in_transit(&tr.dst) {
                return false;
            }
            if self.stations[&dst_station].cache.lookup(tr.file).is_some() {
                return false;
            }
            let admit = {
                let st = self.stations.get_mut(&dst_station).expect("station exists");
                st.cache.admit(tr.file, tr.size, &tr.group, now)
            };
            match admit {
                Ok(res) => {
                    for evicted in res.evicted {
                        let _ = self.catalog.remove_replica(evicted, &tr.dst);
                    }
                    if self.catalog.replica_at(tr.file, &tr.dst).is_some() {
                        // A stage toward this station is in flight; its
                        // marker flips to a usable replica now.
                        let _ = self.catalog.set_replica_state(tr.file, &tr.dst, ReplicaState::Cached);
                    } else {
                        let _ = self.catalog.add_replica(
                            tr.file,
                            tr.dst.clone(),
                            ReplicaState::Cached,
                            Some(res.resident_node),
                        );
                    }
                    self.ledger
                        .record(MetricKind::DeliveredIn, dst_station.as_str(), tr.size as i64, 0, now)
                        .expect("non-negative");
                    true
                }
                Err(_) => false,
            }
        }
    }

    fn journey_advance(&mut self, k: &mut Kernel<Ev>, tr: ActiveTransfer) {
        match tr.journey.clone() {
            Journey::Stage { station, path, hop } => {
                if hop + 2 == path.len() {
                    self.stage_arrived(k, &station, tr.file, tr.size);
                } else {
                    self.launch_hop(
                        k,
                        tr.file,
                        tr.size,
                        tr.group.clone(),
                        path.clone(),
                        hop + 1,
                        Journey::Stage { station, path, hop: hop + 1 },
                        false,
                    );
                }
            }
            Journey::Archive { mss, path, hop } => {
                if hop + 2 == path.len() {
                    // Arrived at the archive: queue the tape write.
                    let now = k.now();
                    let lib = self.mss.get_mut(&mss).expect("mss exists");
                    match lib.submit_store(tr.file, tr.size, now) {
                        Ok(req) => {
                            self.pending_mss.insert((mss.clone(), req), MssJourney::StoreArchive);
                            self.poke_mss(k, &mss);
                        }
                        Err(e) => self.warn(format!("store of {} at {mss} failed: {e}", tr.file)),
                    }
                } else {
                    self.launch_hop(
                        k,
                        tr.file,
                        tr.size,
                        tr.group.clone(),
                        path.clone(),
                        hop + 1,
                        Journey::Archive { mss, path, hop: hop + 1 },
                        false,
                    );
                }
            }
        }
    }

    fn journey_failed(&mut self, k: &mut Kernel<Ev>, tr: ActiveTransfer, reason: &str) {
        match &tr.journey {
            Journey::Stage { station, .. } => {
                let station = station.clone();
                let _ = self.catalog.remove_replica(tr.file, &NodeId::Station(station.clone()));
                self.stage_failed(k, &station, tr.file, reason, true);
                self.try_launch_stages(k, &station);
            }
            Journey::Archive { mss, .. } => {
                self.warn(format!("archive forward of {} toward {mss} failed: {reason}", tr.file));
            }
        }
    }

    /// Final stage hop landed: deliver to all waiters and release the slot.
    fn stage_arrived(&mut self, k: &mut Kernel<Ev>, station: &StationId, file: FileId, size: u64) {
        let stage = {
            let st = self.stations.get_mut(station).expect("station exists");
            st.active_stages -= 1;
            st.inflight.remove(&file).expect("stage tracked")
        };
        let cached = self.stations[station].cache.lookup(file).is_some();
        if let Some(originator) = stage.originator {
            if let Some(p) = self
                .stations
                .get_mut(station)
                .and_then(|st| st.projects.get_mut(&originator))
            {
                p.delivered_bytes += size;
            }
        }
        let is_nfs = self.stations[station].config.cache.mode == CacheMode::NfsShared;
        let now = k.now();
        for (project, consumer) in stage.waiters {
            let source = if cached { DeliverySource::Staged } else { DeliverySource::Bypass };
            if cached {
                let st = self.stations.get_mut(station).expect("station exists");
                st.cache.touch(file, now).expect("cached");
                self.pin_cached(station, file);
            }
            if is_nfs {
                self.launch_nfs_read(k, station, project, consumer, file, size, cached, source);
            } else {
                self.finish_delivery(k, station, project, consumer, file, size, cached, source);
            }
        }
        for (reader, project, consumer) in stage.stream_waiters {
            if cached {
                self.open_stream_for(k, station, &reader, project, consumer, file, size);
            } else {
                self.fail_delivery(k, &reader, project, consumer, file, "server cache rejected file");
            }
        }
        self.try_launch_stages(k, station);
    }

    fn on_stream_closed(&mut self, k: &mut Kernel<Ev>, ctx: StreamCtx) {
        self.unpin_cached(&ctx.server, ctx.file);
        match ctx.deliver_to {
            Some((project, consumer)) => {
                self.finish_delivery(
                    k,
                    &ctx.reader,
                    project,
                    consumer,
                    ctx.file,
                    ctx.bytes,
                    false,
                    DeliverySource::RemoteStream,
                );
            }
            None => {
                if ctx.bytes > 0 {
                    self.ledger
                        .record(MetricKind::RemoteStream, ctx.reader.as_str(), ctx.bytes as i64, 0, k.now())
                        .expect("non-negative");
                }
            }
        }
    }

    // ---- mss ticks -------------------------------------------------------------

    fn poke_mss(&mut self, k: &mut Kernel<Ev>, mss: &MssId) {
        let epoch = self.mss_epoch.entry(mss.clone()).or_insert(0);
        *epoch += 1;
        let epoch = *epoch;
        // Assign immediately-available work so next_event_time is accurate.
        let completions = {
            let lib = self.mss.get_mut(mss).expect("mss exists");
            lib.drain(k.now())
        };
        self.process_mss_completions(k, mss, completions);
        if let Some(t) = self.mss[mss].next_event_time() {
            let delay = (t - k.now()).max(0.0);
            k.schedule(delay, Ev::MssTick { mss: mss.clone(), epoch })
                .expect("non-negative delay");
        }
    }

    fn on_mss_tick(&mut self, k: &mut Kernel<Ev>, mss: MssId) {
        let completions = {
            let lib = self.mss.get_mut(&mss).expect("mss exists");
            lib.drain(k.now())
        };
        self.process_mss_completions(k, &mss, completions);
        // Reschedule without bumping the epoch path twice.
        self.poke_mss(k, &mss);
    }

    fn process_mss_completions(&mut self, k: &mut Kernel<Ev>, mss: &MssId, completions: Vec<RequestId>) {
        let now = k.now();
        for req_id in completions {
            let (kind, file, size) = {
                let lib = &self.mss[mss];
                let req = lib.request(req_id).expect("tracked");
                (req.kind, req.file, req.size)
            };
            let journey = self.pending_mss.remove(&(mss.clone(), req_id));
            match kind {
                RequestKind::Store => {
                    self.ledger
                        .record(MetricKind::MssWritten, mss.as_str(), size as i64, 0, now)
                        .expect("non-negative");
                    let _ = self
                        .catalog
                        .add_replica(file, NodeId::Mss(mss.clone()), ReplicaState::Archived, None);
                }
                RequestKind::Fetch => {
                    self.ledger
                        .record(MetricKind::MssRead, mss.as_str(), size as i64, 0, now)
                        .expect("non-negative");
                    match journey {
                        Some(MssJourney::FetchForStage { station, path, group }) => {
                            self.launch_hop(
                                k,
                                file,
                                size,
                                group,
                                path.clone(),
                                0,
                                Journey::Stage { station, path, hop: 0 },
                                false,
                            );
                        }
                        Some(MssJourney::StoreArchive) | None => {}
                    }
                }
            }
        }
    }

    // ---- audits -----------------------------------------------------------------

    /// Cross-check the ledger against the transfer log, tape accounting,
    /// and delivery origins. Exact equalities; any violation is a bug.
    pub fn audit(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        for (sid, st) in &self.stations {
            let totals = self.ledger.station_totals(sid.as_str());
            let from_log: u64 = self
                .transfer_log
                .iter()
                .filter(|t| t.entered_cache && t.dst == NodeId::Station(sid.clone()))
                .map(|t| t.size)
                .sum();
            if totals.delivered_in_bytes != from_log {
                problems.push(format!(
                    "{sid}: delivered_in {} != transfer log {}",
                    totals.delivered_in_bytes, from_log
                ));
            }
            let sent_from_log: u64 = self
                .transfer_log
                .iter()
                .filter(|t| t.src == NodeId::Station(sid.clone()) && !(t.src == t.dst))
                .map(|t| t.size)
                .sum();
            if totals.sent_out_bytes != sent_from_log {
                problems.push(format!(
                    "{sid}: sent_out {} != transfer log {}",
                    totals.sent_out_bytes, sent_from_log
                ));
            }
            let audit = self.audit_counters.get(sid).copied().unwrap_or_default();
            let consumed_sum = audit.hit_bytes + audit.staged_bytes + audit.bypass_bytes + audit.stream_bytes;
            if totals.consumed_bytes != consumed_sum {
                problems.push(format!(
                    "{sid}: consumed {} != delivery origins {}",
                    totals.consumed_bytes, consumed_sum
                ));
            }
            if st.cache.occupancy() > st.cache.config().quota {
                problems.push(format!("{sid}: cache over quota"));
            }
            if st.max_stage_watermark > st.config.max_concurrent_stages {
                problems.push(format!(
                    "{sid}: stage watermark {} exceeds limit {}",
                    st.max_stage_watermark, st.config.max_concurrent_stages
                ));
            }
        }
        for (mid, lib) in &self.mss {
            let totals = self.ledger.station_totals(mid.as_str());
            if totals.mss_written_bytes != lib.total_written {
                problems.push(format!(
                    "{mid}: ledger written {} != library {}",
                    totals.mss_written_bytes, lib.total_written
                ));
            }
            if totals.mss_read_bytes != lib.total_read {
                problems.push(format!(
                    "{mid}: ledger read {} != library {}",
                    totals.mss_read_bytes, lib.total_read
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}

/// Kernel + world, with the run loop.
pub struct Runner {
    pub kernel: Kernel<Ev>,
    pub sim: Sim,
}

impl Runner {
    pub fn new(sim: Sim) -> Runner {
        Runner {
            kernel: Kernel::new(),
            sim,
        }
    }

    /// Schedule every loaded trace record at its timestamp.
    pub fn schedule_trace(&mut self) {
        for i in 0..self.sim.trace_len() {
            let t = self.sim.trace_at(i).t;
            self.kernel.schedule(t - self.kernel.now(), Ev::Trace(i)).expect("validated timestamp");
        }
    }

    pub fn run_until(&mut self, t_end: f64) -> RunStats {
        let Runner { kernel, sim } = self;
        kernel.run_until(t_end, sim, |sim, k, ev| sim.handle(k, ev))
    }

    /// Run until the queue is empty or `cap` is reached.
    pub fn run_to_idle(&mut self, cap: f64) -> RunStats {
        let mut fired = 0;
        while let Some(t) = self.kernel.peek_time() {
            if t > cap {
                break;
            }
            let stats = self.run_until(t);
            fired += stats.events_fired;
        }
        RunStats {
            events_fired: fired,
            final_time: self.kernel.now(),
        }
    }

    // Library-facing station operations (the CLI-equivalence contract:
    // everything a trace can do, a caller can do directly).

    pub fn start_project(
        &mut self,
        station: &StationId,
        dataset: &str,
        group: &GroupId,
        consumers: u32,
    ) -> Result<ProjectId, SimError> {
        let Runner { kernel, sim } = self;
        sim.start_project_inner(kernel, station, dataset, group, consumers, None, None)
    }

    pub fn next_file(
        &mut self,
        station: &StationId,
        project: ProjectId,
        consumer: ConsumerId,
    ) -> Result<(), SimError> {
        let Runner { kernel, sim } = self;
        sim.request_next(kernel, station, project, consumer)
    }

    pub fn release_file(
        &mut self,
        station: &StationId,
        project: ProjectId,
        consumer: ConsumerId,
        file: FileId,
    ) -> Result<(), SimError> {
        let Runner { kernel, sim } = self;
        sim.release_held(kernel, station, project, consumer, Some(file))
    }

    pub fn import(
        &mut self,
        station: &StationId,
        name: &str,
        size: u64,
        group: &GroupId,
        archive: &MssId,
    ) -> Result<(), SimError> {
        let Runner { kernel, sim } = self;
        sim.import_file(kernel, station, name, size, group, archive)
    }

    pub fn open_stream(
        &mut self,
        server: &StationId,
        reader: &StationId,
        file: FileId,
        hold_seconds: f64,
    ) -> Result<u64, SimError> {
        let Runner { kernel, sim } = self;
        sim.open_stream_raw(kernel, server, reader, file, hold_seconds)
    }
}

impl Sim {
    pub fn trace_at(&self, i: usize) -> &TraceRecord {
        &self.trace[i]
    }
}
