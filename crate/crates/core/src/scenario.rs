//! Scenario configs: one JSON document describing stations, links, routes,
//! tape libraries, the bootstrap catalog, datasets, and workload profiles.
//!
//! A config validates completely before any simulation state exists;
//! unknown keys are rejected so a typo in a policy knob cannot silently
//! fall back to a default. `run_scenario` is the whole pipeline: generate,
//! replay, audit, report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheConfig, CacheMode};
use crate::catalog::DatasetPredicate;
use crate::fabric::{FaultProfile, LinkSpec};
use crate::metrics::{format_factor, multiplication_factor, MetricKind, MetricsLedger};
use crate::mss::MssConfig;
use crate::rng::SplitMix64;
use crate::sim::{Runner, Sim, SimError};
use crate::station::{DeliveryMode, StationConfig};
use crate::types::{GroupId, MssId, NodeId, StationId, Tier, SECONDS_PER_DAY};
use crate::workload::{self, TraceRecord, WorkloadError, WorkloadKind, WorkloadProfile};

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config invalid: {0:?}")]
    ConfigInvalid(Vec<Issue>),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("conservation audit failed: {0:?}")]
    AuditFailed(Vec<String>),
    #[error("{0}")]
    Other(String),
}

impl ScenarioError {
    /// Machine-readable error report for the CLI.
    pub fn to_json(&self) -> String {
        match self {
            ScenarioError::ConfigInvalid(issues) => serde_json::json!({
                "error": "config_invalid",
                "issues": issues,
            })
            .to_string(),
            other => serde_json::json!({
                "error": "failure",
                "message": other.to_string(),
            })
            .to_string(),
        }
    }
}

fn default_one() -> u32 {
    1
}

fn default_stages() -> u32 {
    4
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StationEntry {
    pub id: String,
    pub domain: String,
    pub cache_bytes: u64,
    pub cache_mode: CacheMode,
    #[serde(default = "default_one")]
    pub node_count: u32,
    pub group_shares: BTreeMap<String, f64>,
    pub consumer_slots: u32,
    pub delivery_mode: DeliveryMode,
    #[serde(default = "default_stages")]
    pub max_concurrent_stages: u32,
    #[serde(default)]
    pub cache_in_transit: bool,
    #[serde(default)]
    pub nfs_read_bandwidth: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MssEntry {
    pub id: String,
    pub domain: String,
    #[serde(default = "MssEntry::default_drives")]
    pub drives: u32,
    #[serde(default = "MssEntry::default_mount_latency")]
    pub mount_latency_s: f64,
    #[serde(default = "MssEntry::default_drive_rate")]
    pub drive_rate_bps: f64,
    #[serde(default = "MssEntry::default_tape_capacity")]
    pub tape_capacity_bytes: u64,
}

impl MssEntry {
    fn default_drives() -> u32 {
        MssConfig::default().drives
    }
    fn default_mount_latency() -> f64 {
        MssConfig::default().mount_latency
    }
    fn default_drive_rate() -> f64 {
        MssConfig::default().drive_rate
    }
    fn default_tape_capacity() -> u64 {
        MssConfig::default().tape_capacity
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub a: String,
    pub b: String,
    pub bandwidth_bps: f64,
    #[serde(default)]
    pub latency_s: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RouteEntry {
    pub station: String,
    pub domain: String,
    pub next_hop: String,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogSection {
    /// Bootstrap CSV (`logical_name,size,crc_hex,tier,parents`), relative
    /// to the config file.
    #[serde(default)]
    pub csv_path: Option<String>,
    /// Archive every CSV-bootstrapped file to this mss as pre-run state.
    #[serde(default)]
    pub csv_archive: Option<String>,
    #[serde(default)]
    pub synthetic: Vec<SyntheticGroup>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticGroup {
    pub prefix: String,
    pub count: u32,
    pub size_bytes: u64,
    pub tier: Tier,
    #[serde(default)]
    pub archive: Option<String>,
    #[serde(default)]
    pub cached_at: Vec<String>,
    #[serde(default)]
    pub cache_group: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    #[serde(default)]
    pub tier: Option<Tier>,
    #[serde(default)]
    pub name_glob: Option<String>,
    #[serde(default)]
    pub declared_from: Option<f64>,
    #[serde(default)]
    pub declared_to: Option<f64>,
    #[serde(default)]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadEntry {
    pub kind: WorkloadKind,
    pub station: String,
    pub group: String,
    #[serde(default)]
    pub dataset: String,
    #[serde(default)]
    pub reuse_skew: f64,
    pub arrivals_per_day: f64,
    #[serde(default = "default_one")]
    pub consumers_per_project: u32,
    #[serde(default)]
    pub files_per_project: Option<u32>,
    #[serde(default)]
    pub think_time_s: f64,
    /// Explicit profile seed; derived from the master seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub import_file_bytes: Option<u64>,
    #[serde(default)]
    pub archive: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    #[serde(default)]
    pub corruption_probability: f64,
    #[serde(default = "FaultSection::default_retry_budget")]
    pub retry_budget: u32,
}

impl FaultSection {
    fn default_retry_budget() -> u32 {
        2
    }
}

impl Default for FaultSection {
    fn default() -> Self {
        FaultSection {
            corruption_probability: 0.0,
            retry_budget: 2,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub seed: u64,
    pub run_days: u32,
    pub stations: Vec<StationEntry>,
    #[serde(default)]
    pub mss: Vec<MssEntry>,
    #[serde(default)]
    pub links: Vec<LinkEntry>,
    #[serde(default)]
    pub routes: Vec<RouteEntry>,
    #[serde(default)]
    pub catalog: CatalogSection,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub workloads: Vec<WorkloadEntry>,
    #[serde(default)]
    pub fault: FaultSection,
}

/// CLI flag overrides applied on top of the config document.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub until_days: Option<u32>,
}

pub fn load_config(path: &Path) -> Result<(ScenarioConfig, PathBuf), ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg: ScenarioConfig = serde_json::from_str(&text).map_err(|e| {
        ScenarioError::ConfigInvalid(vec![Issue {
            path: "<document>".into(),
            message: e.to_string(),
        }])
    })?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((cfg, base))
}

impl ScenarioConfig {
    /// Full cross-reference validation. Empty vec means runnable.
    pub fn validate(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        let mut push = |path: String, message: String| issues.push(Issue { path, message });
        if self.schema != 1 {
            push("schema".into(), format!("unsupported schema {}, want 1", self.schema));
        }
        if self.run_days == 0 {
            push("run_days".into(), "must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.fault.corruption_probability) {
            push("fault.corruption_probability".into(), "must be in [0, 1)".into());
        }

        let mut node_names: BTreeSet<&str> = BTreeSet::new();
        let mut stations: BTreeMap<&str, &StationEntry> = BTreeMap::new();
        for (i, s) in self.stations.iter().enumerate() {
            let at = |f: &str| format!("stations[{i}].{f}");
            if !node_names.insert(&s.id) {
                push(at("id"), format!("duplicate node name {:?}", s.id));
            }
            stations.insert(&s.id, s);
            let shares: BTreeMap<GroupId, f64> = s
                .group_shares
                .iter()
                .map(|(g, v)| (GroupId::new(g.clone()), *v))
                .collect();
            let cache = CacheConfig {
                quota: s.cache_bytes,
                mode: s.cache_mode,
                group_shares: shares,
                node_count: s.node_count,
            };
            if let Err(e) = cache.validate() {
                push(at("group_shares"), e.to_string());
            }
            if s.consumer_slots == 0 {
                push(at("consumer_slots"), "must be >= 1".into());
            }
            if s.max_concurrent_stages == 0 {
                push(at("max_concurrent_stages"), "must be >= 1".into());
            }
            match (s.cache_mode, s.nfs_read_bandwidth) {
                (CacheMode::NfsShared, None) => {
                    push(at("nfs_read_bandwidth"), "required for nfs_shared stations".into())
                }
                (CacheMode::NfsShared, Some(bw)) if bw <= 0.0 => {
                    push(at("nfs_read_bandwidth"), "must be > 0".into())
                }
                _ => {}
            }
        }
        let mut mss_names: BTreeSet<&str> = BTreeSet::new();
        for (i, m) in self.mss.iter().enumerate() {
            let at = |f: &str| format!("mss[{i}].{f}");
            if !node_names.insert(&m.id) {
                push(at("id"), format!("duplicate node name {:?}", m.id));
            }
            mss_names.insert(&m.id);
            if m.drives == 0 {
                push(at("drives"), "must be >= 1".into());
            }
            if m.drive_rate_bps <= 0.0 {
                push(at("drive_rate_bps"), "must be > 0".into());
            }
            if m.tape_capacity_bytes == 0 {
                push(at("tape_capacity_bytes"), "must be > 0".into());
            }
            if m.mount_latency_s < 0.0 {
                push(at("mount_latency_s"), "must be >= 0".into());
            }
        }

        let mut link_pairs: BTreeSet<(String, String)> = BTreeSet::new();
        for (i, l) in self.links.iter().enumerate() {
            let at = |f: &str| format!("links[{i}].{f}");
            for (field, name) in [("a", &l.a), ("b", &l.b)] {
                if !node_names.contains(name.as_str()) {
                    push(at(field), format!("unknown node {name:?}"));
                }
            }
            if l.a == l.b {
                push(at("b"), "self links are reserved for nfs service volumes".into());
            }
            if l.bandwidth_bps <= 0.0 {
                push(at("bandwidth_bps"), "must be > 0".into());
            }
            if l.latency_s < 0.0 {
                push(at("latency_s"), "must be >= 0".into());
            }
            let key = if l.a <= l.b {
                (l.a.clone(), l.b.clone())
            } else {
                (l.b.clone(), l.a.clone())
            };
            if !link_pairs.insert(key) {
                push(at("a"), format!("duplicate link {} -- {}", l.a, l.b));
            }
        }

        // Route chains must terminate and every hop must ride a real link.
        let mut table = crate::routing::RouteTable::new();
        let node_of = |name: &str| -> NodeId {
            if mss_names.contains(name) {
                NodeId::mss(name)
            } else {
                NodeId::station(name)
            }
        };
        for s in &self.stations {
            table.register_node(NodeId::station(s.id.as_str()), s.domain.as_str());
        }
        for m in &self.mss {
            table.register_node(NodeId::mss(m.id.as_str()), m.domain.as_str());
        }
        for (i, r) in self.routes.iter().enumerate() {
            let at = |f: &str| format!("routes[{i}].{f}");
            if !node_names.contains(r.station.as_str()) {
                push(at("station"), format!("unknown node {:?}", r.station));
                continue;
            }
            if !node_names.contains(r.next_hop.as_str()) {
                push(at("next_hop"), format!("unknown node {:?}", r.next_hop));
                continue;
            }
            let key = if r.station <= r.next_hop {
                (r.station.clone(), r.next_hop.clone())
            } else {
                (r.next_hop.clone(), r.station.clone())
            };
            if !link_pairs.contains(&key) {
                push(at("next_hop"), format!("no link between {} and {}", r.station, r.next_hop));
            }
            if let Err(e) = table.add_route(&node_of(&r.station), &r.domain, &node_of(&r.next_hop)) {
                push(at("next_hop"), e.to_string());
            }
        }

        let mut dataset_names: BTreeSet<&str> = BTreeSet::new();
        for (i, d) in self.datasets.iter().enumerate() {
            let at = |f: &str| format!("datasets[{i}].{f}");
            if !dataset_names.insert(&d.name) {
                push(at("name"), format!("duplicate dataset {:?}", d.name));
            }
            if d.name.is_empty() || d.name.contains(',') || d.name.contains('|') {
                push(at("name"), "dataset names must be nonempty without ',' or '|'".into());
            }
            if let (Some(lo), Some(hi)) = (d.declared_from, d.declared_to) {
                if lo >= hi {
                    push(at("declared_to"), "empty declared_at range".into());
                }
            }
        }

        for (i, g) in self.catalog.synthetic.iter().enumerate() {
            let at = |f: &str| format!("catalog.synthetic[{i}].{f}");
            if g.count == 0 {
                push(at("count"), "must be >= 1".into());
            }
            if g.size_bytes == 0 {
                push(at("size_bytes"), "must be > 0".into());
            }
            if let Some(m) = &g.archive {
                if !mss_names.contains(m.as_str()) {
                    push(at("archive"), format!("unknown mss {m:?}"));
                }
            }
            for s in &g.cached_at {
                if !stations.contains_key(s.as_str()) {
                    push(at("cached_at"), format!("unknown station {s:?}"));
                }
            }
            if !g.cached_at.is_empty() && g.cache_group.is_none() {
                push(at("cache_group"), "required when cached_at is set".into());
            }
            if let (Some(gr), Some(first)) = (&g.cache_group, g.cached_at.first()) {
                if let Some(st) = stations.get(first.as_str()) {
                    if !st.group_shares.contains_key(gr) {
                        push(at("cache_group"), format!("group {gr:?} has no share at {first:?}"));
                    }
                }
            }
        }
        if let Some(m) = &self.catalog.csv_archive {
            if !mss_names.contains(m.as_str()) {
                push("catalog.csv_archive".into(), format!("unknown mss {m:?}"));
            }
        }

        for (i, w) in self.workloads.iter().enumerate() {
            let at = |f: &str| format!("workloads[{i}].{f}");
            let station = match stations.get(w.station.as_str()) {
                Some(s) => *s,
                None => {
                    push(at("station"), format!("unknown station {:?}", w.station));
                    continue;
                }
            };
            if !station.group_shares.contains_key(&w.group) {
                push(at("group"), format!("group {:?} has no share at {:?}", w.group, w.station));
            }
            if w.arrivals_per_day <= 0.0 {
                push(at("arrivals_per_day"), "must be > 0".into());
            }
            // Arrivals are thinned on a 60 s grid: at most one per slot.
            if w.arrivals_per_day > 1440.0 {
                push(at("arrivals_per_day"), "rates above 1440/day exceed the arrival grid".into());
            }
            match w.kind {
                WorkloadKind::Analysis | WorkloadKind::Reconstruction => {
                    if !dataset_names.contains(w.dataset.as_str()) {
                        push(at("dataset"), format!("unknown dataset {:?}", w.dataset));
                    }
                    if w.consumers_per_project == 0 || w.consumers_per_project > station.consumer_slots {
                        push(
                            at("consumers_per_project"),
                            format!("must be in 1..={}", station.consumer_slots),
                        );
                    }
                    if w.kind == WorkloadKind::Analysis && w.reuse_skew < 0.0 {
                        push(at("reuse_skew"), "must be >= 0".into());
                    }
                }
                WorkloadKind::McImport => {
                    match &w.archive {
                        Some(m) if mss_names.contains(m.as_str()) => {}
                        Some(m) => push(at("archive"), format!("unknown mss {m:?}")),
                        None => push(at("archive"), "required for mc_import".into()),
                    }
                    if w.import_file_bytes.unwrap_or(0) == 0 {
                        push(at("import_file_bytes"), "required and > 0 for mc_import".into());
                    }
                }
            }
        }
        issues
    }
}

/// Validated config -> populated world + generated trace, ready to run.
pub fn build_runner(
    cfg: &ScenarioConfig,
    base: &Path,
    ov: &Overrides,
) -> Result<(Runner, Vec<TraceRecord>), ScenarioError> {
    let (mut sim, trace) = build_sim(cfg, base, ov)?;
    sim.load_trace(trace.clone())?;
    let mut runner = Runner::new(sim);
    runner.schedule_trace();
    Ok((runner, trace))
}

/// Populated world and generated trace, with nothing loaded or scheduled
/// yet. Callers that replay custom traces start here.
pub fn build_sim(
    cfg: &ScenarioConfig,
    base: &Path,
    ov: &Overrides,
) -> Result<(Sim, Vec<TraceRecord>), ScenarioError> {
    let issues = cfg.validate();
    if !issues.is_empty() {
        return Err(ScenarioError::ConfigInvalid(issues));
    }
    let master_seed = ov.seed.unwrap_or(cfg.seed);
    let run_days = ov.until_days.unwrap_or(cfg.run_days);
    let fault = if cfg.fault.corruption_probability > 0.0 {
        FaultProfile::per_attempt(cfg.fault.corruption_probability)
    } else {
        FaultProfile::NONE
    };
    let mut sim = Sim::new(master_seed, fault, cfg.fault.retry_budget);
    let mss_names: BTreeSet<&str> = cfg.mss.iter().map(|m| m.id.as_str()).collect();
    let node_of = |name: &str| -> NodeId {
        if mss_names.contains(name) {
            NodeId::mss(name)
        } else {
            NodeId::station(name)
        }
    };

    for m in &cfg.mss {
        sim.add_mss(
            MssId::new(m.id.clone()),
            MssConfig {
                drives: m.drives,
                mount_latency: m.mount_latency_s,
                drive_rate: m.drive_rate_bps,
                tape_capacity: m.tape_capacity_bytes,
            },
            &m.domain,
        )?;
    }
    for s in &cfg.stations {
        let shares = s
            .group_shares
            .iter()
            .map(|(g, v)| (GroupId::new(g.clone()), *v))
            .collect();
        sim.add_station(
            StationConfig {
                id: StationId::new(s.id.clone()),
                cache: CacheConfig {
                    quota: s.cache_bytes,
                    mode: s.cache_mode,
                    group_shares: shares,
                    node_count: s.node_count,
                },
                consumer_slots: s.consumer_slots,
                delivery_mode: s.delivery_mode,
                max_concurrent_stages: s.max_concurrent_stages,
                nfs_read_bandwidth: s.nfs_read_bandwidth,
            },
            &s.domain,
        )?;
        sim.routes
            .set_cache_in_transit(NodeId::station(s.id.as_str()), s.cache_in_transit);
    }
    for l in &cfg.links {
        sim.add_link(
            node_of(&l.a),
            node_of(&l.b),
            LinkSpec {
                bandwidth: l.bandwidth_bps,
                latency: l.latency_s,
            },
        );
    }
    for r in &cfg.routes {
        sim.add_route(&node_of(&r.station), &r.domain, &node_of(&r.next_hop))?;
    }

    // Bootstrap catalog: CSV first, then synthetic groups, all declared at t=0.
    if let Some(rel) = &cfg.catalog.csv_path {
        let path = base.join(rel);
        let text = fs::read_to_string(&path).map_err(|source| ScenarioError::Io { path, source })?;
        let ids = sim
            .catalog
            .load_bootstrap_csv(&text, 0.0)
            .map_err(ScenarioError::Other)?;
        if let Some(m) = &cfg.catalog.csv_archive {
            let mss = MssId::new(m.clone());
            for id in ids {
                sim.preload_archive(&mss, id)?;
            }
        }
    }
    for g in &cfg.catalog.synthetic {
        for i in 0..g.count {
            let name = format!("{}{:06}", g.prefix, i);
            let crc = crate::fabric::crc32(name.as_bytes());
            let id = sim
                .catalog
                .declare_file(&name, g.size_bytes, crc, g.tier, &[], 0.0)
                .map_err(SimError::Catalog)?;
            if let Some(m) = &g.archive {
                sim.preload_archive(&MssId::new(m.clone()), id)?;
            }
            if let Some(group) = &g.cache_group {
                let group = GroupId::new(group.clone());
                for s in &g.cached_at {
                    sim.preload_cached(&StationId::new(s.clone()), id, &group)?;
                }
            }
        }
    }
    for d in &cfg.datasets {
        let range = match (d.declared_from, d.declared_to) {
            (None, None) => None,
            (lo, hi) => Some((lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY))),
        };
        sim.catalog
            .define_dataset(
                &d.name,
                DatasetPredicate {
                    tier: d.tier,
                    name_glob: d.name_glob.clone(),
                    declared_range: range,
                    parent_name: d.parent.clone(),
                },
            )
            .map_err(SimError::Catalog)?;
    }

    // Workload generation: profile seeds default to streams derived from
    // the master seed, so --seed reshuffles the whole run.
    let mut parts = Vec::new();
    let mut next_project = 0u64;
    for (i, w) in cfg.workloads.iter().enumerate() {
        let seed = w
            .seed
            .unwrap_or_else(|| SplitMix64::derive(master_seed, i as u64 + 1).next_u64());
        let population = match w.kind {
            WorkloadKind::McImport => 0,
            _ => {
                let ds = sim
                    .catalog
                    .dataset_by_name(&w.dataset)
                    .expect("validated dataset");
                sim.catalog
                    .resolve_dataset(ds)
                    .map_err(SimError::Catalog)?
                    .len()
            }
        };
        let profile = WorkloadProfile {
            kind: w.kind,
            station: StationId::new(w.station.clone()),
            group: GroupId::new(w.group.clone()),
            dataset: w.dataset.clone(),
            reuse_skew: w.reuse_skew,
            arrival_per_day: w.arrivals_per_day,
            consumers_per_project: w.consumers_per_project,
            files_per_project: w.files_per_project,
            think_time: w.think_time_s,
            duration_days: run_days,
            seed,
            import_file_bytes: w.import_file_bytes.unwrap_or(0),
            archive: w.archive.as_ref().map(|m| MssId::new(m.clone())),
        };
        let (records, np) = workload::generate(&profile, population, next_project)?;
        next_project = np;
        parts.push(records);
    }
    let trace = workload::merge_traces(parts);
    Ok((sim, trace))
}

/// Result of a run, with the final world available for inspection.
pub struct RunOutcome {
    pub runner: Runner,
    pub trace: Vec<TraceRecord>,
    pub events_fired: u64,
    pub final_time: f64,
    pub run_days: u32,
}

/// Generate and replay without touching the filesystem.
pub fn run_in_memory(
    cfg: &ScenarioConfig,
    base: &Path,
    ov: &Overrides,
) -> Result<RunOutcome, ScenarioError> {
    let run_days = ov.until_days.unwrap_or(cfg.run_days);
    let (mut runner, trace) = build_runner(cfg, base, ov)?;
    let stats = runner.run_until(f64::from(run_days) * SECONDS_PER_DAY);
    runner.sim.audit().map_err(ScenarioError::AuditFailed)?;
    Ok(RunOutcome {
        runner,
        trace,
        events_fired: stats.events_fired,
        final_time: stats.final_time,
        run_days,
    })
}

pub const OUT_TRACE: &str = "trace.csv";
pub const OUT_TRANSFERS: &str = "transfers.csv";
pub const OUT_MSS: &str = "mss.csv";
pub const OUT_METRICS: &str = "metrics.csv";
pub const OUT_SUMMARY: &str = "summary.txt";

fn write_file(dir: &Path, name: &str, content: &str) -> Result<PathBuf, ScenarioError> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|source| ScenarioError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// The full pipeline: build, generate, replay, audit, and write the five
/// output files into `out_dir`.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    base: &Path,
    out_dir: &Path,
    ov: &Overrides,
) -> Result<RunOutcome, ScenarioError> {
    fs::create_dir_all(out_dir).map_err(|source| ScenarioError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let outcome = run_in_memory(cfg, base, ov)?;
    let sim = &outcome.runner.sim;

    write_file(out_dir, OUT_TRACE, &workload::trace_to_csv(&outcome.trace))?;

    let mut transfers = String::from("t_start,t_end,file_id,size,src,dst,verdict,attempts\n");
    for t in &sim.transfer_log {
        transfers.push_str(&t.csv_row());
        transfers.push('\n');
    }
    write_file(out_dir, OUT_TRANSFERS, &transfers)?;

    let mut mss_csv = String::new();
    for (i, lib) in sim.mss.values().enumerate() {
        let body = lib.log_csv(|f| {
            sim.catalog
                .file(f)
                .map(|r| r.logical_name.clone())
                .unwrap_or_else(|_| f.to_string())
        });
        if i == 0 {
            mss_csv.push_str(&body);
        } else {
            // Skip the repeated header when several libraries are present.
            for l in body.lines().skip(1) {
                mss_csv.push_str(l);
                mss_csv.push('\n');
            }
        }
    }
    if sim.mss.is_empty() {
        mss_csv.push_str("t_complete,kind,file_id,tape_id,mounted\n");
    }
    write_file(out_dir, OUT_MSS, &mss_csv)?;

    let last_day = sim.ledger.max_day().max(outcome.run_days.saturating_sub(1));
    write_file(out_dir, OUT_METRICS, &sim.ledger.report_csv(0..=last_day))?;

    write_file(out_dir, OUT_SUMMARY, &summary_text(&outcome))?;
    Ok(outcome)
}

/// Human-readable run summary. Deterministic: no wall-clock content.
pub fn summary_text(outcome: &RunOutcome) -> String {
    let sim = &outcome.runner.sim;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "run: {} simulated days, {} events",
        outcome.run_days, outcome.events_fired
    );
    let _ = writeln!(out, "final virtual time: {} s", outcome.final_time);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<20} {:>15} {:>15} {:>15} {:>12} {:>10}",
        "station", "consumed_B", "delivered_in_B", "sent_out_B", "streams_B", "factor"
    );
    for sid in sim.stations.keys() {
        let t = sim.ledger.station_totals(sid.as_str());
        let factor = multiplication_factor(t.consumed_bytes, t.delivered_in_bytes);
        let _ = writeln!(
            out,
            "{:<20} {:>15} {:>15} {:>15} {:>12} {:>10}",
            sid.as_str(),
            t.consumed_bytes,
            t.delivered_in_bytes,
            t.sent_out_bytes,
            t.remote_stream_bytes,
            format_factor(factor)
        );
    }
    for (mid, lib) in &sim.mss {
        let _ = writeln!(
            out,
            "mss {:<16} written {} B on {} tapes, read {} B",
            mid.as_str(),
            lib.total_written,
            lib.tape_count(),
            lib.total_read
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "projects ({}):", sim.project_reports.len());
    let _ = writeln!(
        out,
        "project_id,station,group,files,bytes_consumed,bytes_delivered,wall_seconds"
    );
    for line in &sim.project_reports {
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "audit: ok");
    let _ = writeln!(out, "warnings: {}", sim.warnings.len());
    for w in sim.warnings.iter().take(20) {
        let _ = writeln!(out, "  {w}");
    }
    out
}

// ---- report-side parsing (the `report` subcommand re-reads metrics.csv) ----

/// Rebuild a ledger from a metrics.csv produced by `run_scenario`.
pub fn parse_metrics_csv(text: &str) -> Result<MetricsLedger, String> {
    let mut ledger = MetricsLedger::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(format!("metrics line {}: expected 9 columns", lineno + 1));
        }
        let day: u32 = cols[0]
            .parse()
            .map_err(|_| format!("line {}: bad day", lineno + 1))?;
        let at = f64::from(day) * SECONDS_PER_DAY;
        let station = cols[1];
        ledger.register_station(station);
        let fields: [(usize, MetricKind); 5] = [
            (2, MetricKind::Consumed),
            (4, MetricKind::DeliveredIn),
            (5, MetricKind::SentOut),
            (6, MetricKind::MssWritten),
            (7, MetricKind::MssRead),
        ];
        for (col, kind) in fields {
            let v: i64 = cols[col]
                .parse()
                .map_err(|_| format!("line {}: bad value in column {col}", lineno + 1))?;
            if v > 0 {
                let files = if col == 2 {
                    cols[3]
                        .parse::<i64>()
                        .map_err(|_| format!("line {}: bad files", lineno + 1))?
                } else {
                    0
                };
                ledger
                    .record(kind, station, v, files, at)
                    .map_err(|e| e.to_string())?;
            }
        }
    }
    Ok(ledger)
}

/// Per-day two-column chart files mirroring the operational plots:
/// consumed per station, delivered(+)/sent(-) per station, tape
/// written(+)/read(-). Returns the files written.
pub fn write_charts(ledger: &MetricsLedger, out_dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    let days = 0..=ledger.max_day();
    let mut written = Vec::new();
    let stations: Vec<String> = ledger.stations().map(String::from).collect();
    for s in &stations {
        let totals = ledger.station_totals(s);
        let safe = s.replace('/', "_");
        if totals.consumed_bytes > 0 {
            written.push(write_file(
                out_dir,
                &format!("chart_consumed_{safe}.dat"),
                &ledger.chart_series(s, days.clone(), |c| c.consumed_bytes, false),
            )?);
        }
        if totals.delivered_in_bytes > 0 || totals.sent_out_bytes > 0 {
            written.push(write_file(
                out_dir,
                &format!("chart_delivered_{safe}.dat"),
                &ledger.chart_series(s, days.clone(), |c| c.delivered_in_bytes, false),
            )?);
            written.push(write_file(
                out_dir,
                &format!("chart_sent_{safe}.dat"),
                &ledger.chart_series(s, days.clone(), |c| c.sent_out_bytes, true),
            )?);
        }
        if totals.mss_written_bytes > 0 || totals.mss_read_bytes > 0 {
            written.push(write_file(
                out_dir,
                &format!("chart_mss_written_{safe}.dat"),
                &ledger.chart_series(s, days.clone(), |c| c.mss_written_bytes, false),
            )?);
            written.push(write_file(
                out_dir,
                &format!("chart_mss_read_{safe}.dat"),
                &ledger.chart_series(s, days.clone(), |c| c.mss_read_bytes, true),
            )?);
        }
    }
    Ok(written)
}

/// Text summary of a parsed metrics.csv (per-station totals and factors).
pub fn summarize_ledger(ledger: &MetricsLedger) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>15} {:>15} {:>15} {:>15} {:>10}",
        "station", "consumed_B", "delivered_in_B", "mss_written_B", "mss_read_B", "factor"
    );
    let stations: Vec<String> = ledger.stations().map(String::from).collect();
    for s in &stations {
        let t = ledger.station_totals(s);
        let _ = writeln!(
            out,
            "{:<20} {:>15} {:>15} {:>15} {:>15} {:>10}",
            s,
            t.consumed_bytes,
            t.delivered_in_bytes,
            t.mss_written_bytes,
            t.mss_read_bytes,
            format_factor(multiplication_factor(t.consumed_bytes, t.delivered_in_bytes))
        );
    }
    out
}
