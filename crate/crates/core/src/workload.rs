//! Deterministic synthetic workload generation and trace encoding.
//!
//! Three usage patterns: reuse-heavy analysis (Zipf rank sampling over the
//! dataset snapshot), read-once reconstruction (sequential, exactly once),
//! and remote import (new files produced at a site and routed to tape).
//! All randomness comes from splitmix64 seeded per profile, so identical
//! profiles generate byte-identical traces.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::rng::{SplitMix64, ZipfSampler};
use crate::types::{ConsumerId, GroupId, MssId, ProjectId, StationId, SECONDS_PER_DAY};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("dataset {0} resolves to zero files")]
    EmptyDataset(String),
    #[error("profile invalid: {0}")]
    BadProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    Analysis,
    Reconstruction,
    McImport,
}

#[derive(Debug, Clone)]
pub struct WorkloadProfile {
    pub kind: WorkloadKind,
    pub station: StationId,
    pub group: GroupId,
    /// Dataset name the projects iterate (unused for imports).
    pub dataset: String,
    /// Zipf exponent; 0 is uniform. Analysis only.
    pub reuse_skew: f64,
    /// Project (or import) arrivals per day, thinned from the PRNG.
    pub arrival_per_day: f64,
    pub consumers_per_project: u32,
    /// Analysis working-subset size per project; defaults to the full
    /// snapshot.
    pub files_per_project: Option<u32>,
    /// Seconds a consumer sits on a file before releasing it.
    pub think_time: f64,
    pub duration_days: u32,
    pub seed: u64,
    /// Bytes per imported file (imports only).
    pub import_file_bytes: u64,
    /// Archive target for imports.
    pub archive: Option<MssId>,
}

/// One replayable action with its virtual timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub action: TraceAction,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceAction {
    StartProject {
        station: StationId,
        project: ProjectId,
        dataset: String,
        group: GroupId,
        consumers: u32,
        /// Indices into the resolved snapshot; None takes the whole
        /// dataset. Snapshots order by (declared_at, name), so files
        /// declared mid-run append after the generation-time population
        /// and never shift these indices.
        subset: Option<Vec<u32>>,
    },
    NextFile {
        station: StationId,
        project: ProjectId,
        consumer: ConsumerId,
    },
    ReleaseFile {
        station: StationId,
        project: ProjectId,
        consumer: ConsumerId,
    },
    ImportFile {
        station: StationId,
        name: String,
        size: u64,
        group: GroupId,
        archive: MssId,
    },
}

/// Generate the trace for one profile over a dataset snapshot of
/// `population` files. Projects get ids starting at `first_project`;
/// returns the next free id so profiles can be concatenated.
pub fn generate(
    profile: &WorkloadProfile,
    population: usize,
    first_project: u64,
) -> Result<(Vec<TraceRecord>, u64), WorkloadError> {
    match profile.kind {
        WorkloadKind::McImport => generate_imports(profile, first_project),
        WorkloadKind::Analysis | WorkloadKind::Reconstruction => {
            if population == 0 {
                return Err(WorkloadError::EmptyDataset(profile.dataset.clone()));
            }
            if profile.consumers_per_project == 0 {
                return Err(WorkloadError::BadProfile("consumers_per_project must be >= 1".into()));
            }
            generate_projects(profile, population, first_project)
        }
    }
}

/// Bernoulli thinning on a 60-second grid approximates Poisson arrivals
/// without platform-dependent math.
fn arrivals(rng: &mut SplitMix64, rate_per_day: f64, duration_days: u32) -> Vec<f64> {
    const SLOT: f64 = 60.0;
    let p = (rate_per_day * SLOT / SECONDS_PER_DAY).min(1.0);
    let slots = (f64::from(duration_days) * SECONDS_PER_DAY / SLOT) as u64;
    let mut out = Vec::new();
    for s in 0..slots {
        if rng.next_bool(p) {
            out.push(s as f64 * SLOT + rng.next_f64() * SLOT);
        }
    }
    out
}

fn generate_projects(
    profile: &WorkloadProfile,
    population: usize,
    first_project: u64,
) -> Result<(Vec<TraceRecord>, u64), WorkloadError> {
    let mut rng = SplitMix64::new(profile.seed);
    let sampler = match profile.kind {
        WorkloadKind::Analysis => Some(ZipfSampler::new(population, profile.reuse_skew)),
        _ => None,
    };
    let mut records = Vec::new();
    let mut next_project = first_project;
    for arrival in arrivals(&mut rng, profile.arrival_per_day, profile.duration_days) {
        let project = ProjectId(next_project);
        next_project += 1;
        let (subset, k) = match (&sampler, profile.kind) {
            (Some(sampler), WorkloadKind::Analysis) => {
                let want = profile
                    .files_per_project
                    .map(|f| f as usize)
                    .unwrap_or(population)
                    .min(population);
                let subset = draw_distinct(sampler, &mut rng, want, population);
                let k = subset.len();
                (Some(subset), k)
            }
            _ => (None, population),
        };
        records.push(TraceRecord {
            t: arrival,
            action: TraceAction::StartProject {
                station: profile.station.clone(),
                project,
                dataset: profile.dataset.clone(),
                group: profile.group.clone(),
                consumers: profile.consumers_per_project,
                subset,
            },
        });
        // Each consumer alternates request/release; one spare turn per
        // consumer discovers end-of-stream.
        let consumers = profile.consumers_per_project as usize;
        let turns = k.div_ceil(consumers) + 1;
        let spacing = profile.think_time + 1.0;
        for c in 0..consumers {
            for j in 0..turns {
                let req_t = arrival + j as f64 * spacing + (c + 1) as f64 * 0.001;
                records.push(TraceRecord {
                    t: req_t,
                    action: TraceAction::NextFile {
                        station: profile.station.clone(),
                        project,
                        consumer: ConsumerId(c as u32),
                    },
                });
                records.push(TraceRecord {
                    t: req_t + profile.think_time.max(0.25),
                    action: TraceAction::ReleaseFile {
                        station: profile.station.clone(),
                        project,
                        consumer: ConsumerId(c as u32),
                    },
                });
            }
        }
    }
    records.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok((records, next_project))
}

/// Distinct Zipf ranks; falls back to the lowest unchosen ranks if the
/// draw loop saturates (tiny populations with heavy skew).
fn draw_distinct(sampler: &ZipfSampler, rng: &mut SplitMix64, want: usize, population: usize) -> Vec<u32> {
    let mut chosen: BTreeSet<u32> = BTreeSet::new();
    let mut budget = want * 64;
    while chosen.len() < want && budget > 0 {
        chosen.insert(sampler.sample(rng) as u32);
        budget -= 1;
    }
    let mut fill = 0u32;
    while chosen.len() < want && (fill as usize) < population {
        chosen.insert(fill);
        fill += 1;
    }
    chosen.into_iter().collect()
}

fn generate_imports(
    profile: &WorkloadProfile,
    first_project: u64,
) -> Result<(Vec<TraceRecord>, u64), WorkloadError> {
    let archive = profile
        .archive
        .clone()
        .ok_or_else(|| WorkloadError::BadProfile("mc_import needs an archive target".into()))?;
    if profile.import_file_bytes == 0 {
        return Err(WorkloadError::BadProfile("import_file_bytes must be > 0".into()));
    }
    let mut rng = SplitMix64::new(profile.seed);
    let mut records = Vec::new();
    for (seq, arrival) in arrivals(&mut rng, profile.arrival_per_day, profile.duration_days)
        .into_iter()
        .enumerate()
    {
        records.push(TraceRecord {
            t: arrival,
            action: TraceAction::ImportFile {
                station: profile.station.clone(),
                name: format!("mc/{}/{:06}", profile.station, seq),
                size: profile.import_file_bytes,
                group: profile.group.clone(),
                archive: archive.clone(),
            },
        });
    }
    Ok((records, first_project))
}

/// Merge per-profile traces into one timeline. Stable by timestamp, so
/// simultaneous records keep profile order.
pub fn merge_traces(mut parts: Vec<Vec<TraceRecord>>) -> Vec<TraceRecord> {
    let mut all: Vec<TraceRecord> = parts.drain(..).flatten().collect();
    all.sort_by(|a, b| a.t.total_cmp(&b.t));
    all
}

// ---- trace CSV ---------------------------------------------------------

pub const TRACE_HEADER: &str = "t,action,station,project,consumer,file,extra";

pub fn trace_to_csv(records: &[TraceRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in records {
        match &r.action {
            TraceAction::StartProject { station, project, dataset, group, consumers, subset } => {
                let subset_txt = subset
                    .as_ref()
                    .map(|s| {
                        s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
                    })
                    .unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},start_project,{},{},,,{}|{}|{}|{}",
                    r.t, station, project.0, dataset, group, consumers, subset_txt
                );
            }
            TraceAction::NextFile { station, project, consumer } => {
                let _ = writeln!(out, "{},next_file,{},{},{},,", r.t, station, project.0, consumer.0);
            }
            TraceAction::ReleaseFile { station, project, consumer } => {
                let _ = writeln!(out, "{},release_file,{},{},{},,", r.t, station, project.0, consumer.0);
            }
            TraceAction::ImportFile { station, name, size, group, archive } => {
                let _ = writeln!(
                    out,
                    "{},import_file,{},,,{},{}|{}|{}",
                    r.t, station, name, size, group, archive
                );
            }
        }
    }
    out
}

pub fn trace_from_csv(text: &str) -> Result<Vec<TraceRecord>, String> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line != TRACE_HEADER {
                return Err(format!("bad trace header: {line:?}"));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let err = |m: &str| format!("trace line {}: {m}", lineno + 1);
        let cols: Vec<&str> = line.splitn(7, ',').collect();
        if cols.len() != 7 {
            return Err(err("expected 7 columns"));
        }
        let t: f64 = cols[0].parse().map_err(|_| err("bad timestamp"))?;
        let station = StationId::new(cols[2]);
        let action = match cols[1] {
            "start_project" => {
                let project = ProjectId(cols[3].parse().map_err(|_| err("bad project id"))?);
                let parts: Vec<&str> = cols[6].split('|').collect();
                if parts.len() != 4 {
                    return Err(err("start_project extra needs dataset|group|consumers|subset"));
                }
                let consumers: u32 = parts[2].parse().map_err(|_| err("bad consumer count"))?;
                let subset = if parts[3].is_empty() {
                    None
                } else {
                    let mut v = Vec::new();
                    for s in parts[3].split(';') {
                        v.push(s.parse().map_err(|_| err("bad subset index"))?);
                    }
                    Some(v)
                };
                TraceAction::StartProject {
                    station,
                    project,
                    dataset: parts[0].to_string(),
                    group: GroupId::new(parts[1]),
                    consumers,
                    subset,
                }
            }
            "next_file" | "release_file" => {
                let project = ProjectId(cols[3].parse().map_err(|_| err("bad project id"))?);
                let consumer = ConsumerId(cols[4].parse().map_err(|_| err("bad consumer id"))?);
                if cols[1] == "next_file" {
                    TraceAction::NextFile { station, project, consumer }
                } else {
                    TraceAction::ReleaseFile { station, project, consumer }
                }
            }
            "import_file" => {
                let parts: Vec<&str> = cols[6].split('|').collect();
                if parts.len() != 3 {
                    return Err(err("import_file extra needs size|group|mss"));
                }
                TraceAction::ImportFile {
                    station,
                    name: cols[5].to_string(),
                    size: parts[0].parse().map_err(|_| err("bad size"))?,
                    group: GroupId::new(parts[1]),
                    archive: MssId::new(parts[2]),
                }
            }
            other => return Err(err(&format!("unknown action {other:?}"))),
        };
        out.push(TraceRecord { t, action });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn analysis_profile(seed: u64) -> WorkloadProfile {
        WorkloadProfile {
            kind: WorkloadKind::Analysis,
            station: StationId::new("central"),
            group: GroupId::new("analysis"),
            dataset: "reco".into(),
            reuse_skew: 0.8,
            arrival_per_day: 4.0,
            consumers_per_project: 2,
            files_per_project: Some(10),
            think_time: 5.0,
            duration_days: 3,
            seed,
            import_file_bytes: 0,
            archive: None,
        }
    }

    #[test]
    fn reconstruction_requests_cover_population_once() {
        let profile = WorkloadProfile {
            kind: WorkloadKind::Reconstruction,
            reuse_skew: 0.0,
            files_per_project: None,
            arrival_per_day: 1.0,
            duration_days: 2,
            ..analysis_profile(7)
        };
        let (records, _) = generate(&profile, 3, 0).unwrap();
        // Whole-snapshot projects: no subsets, enough requests per project
        // to drain 3 files plus discover end of stream.
        let starts: Vec<&TraceRecord> = records
            .iter()
            .filter(|r| matches!(r.action, TraceAction::StartProject { .. }))
            .collect();
        assert!(!starts.is_empty());
        for s in starts {
            if let TraceAction::StartProject { subset, consumers, .. } = &s.action {
                assert!(subset.is_none());
                assert_eq!(*consumers, 2);
            }
        }
        let per_project_requests = records
            .iter()
            .filter(|r| matches!(&r.action, TraceAction::NextFile { project, .. } if project.0 == 0))
            .count();
        // ceil(3/2)+1 turns per consumer, 2 consumers.
        assert_eq!(per_project_requests, 2 * (2 + 1));
    }

    #[test]
    fn empty_dataset_rejected() {
        let profile = analysis_profile(1);
        assert_eq!(
            generate(&profile, 0, 0).unwrap_err(),
            WorkloadError::EmptyDataset("reco".into())
        );
    }

    #[test]
    fn same_seed_gives_byte_identical_traces() {
        let profile = analysis_profile(42);
        let (a, _) = generate(&profile, 50, 0).unwrap();
        let (b, _) = generate(&profile, 50, 0).unwrap();
        assert_eq!(trace_to_csv(&a), trace_to_csv(&b));
        let (c, _) = generate(&analysis_profile(43), 50, 0).unwrap();
        assert_ne!(trace_to_csv(&a), trace_to_csv(&c));
    }

    #[test]
    fn uniform_skew_spreads_requests_evenly() {
        // s = 0 rank draws over 10 files: per-file selection counts stay
        // within 3-sigma binomial bounds.
        let mut profile = analysis_profile(11);
        profile.reuse_skew = 0.0;
        profile.files_per_project = Some(1);
        profile.arrival_per_day = 4000.0;
        profile.duration_days = 2;
        let n = 10usize;
        let (records, _) = generate(&profile, n, 0).unwrap();
        let mut counts = vec![0usize; n];
        let mut draws = 0usize;
        for r in &records {
            if let TraceAction::StartProject { subset: Some(s), .. } = &r.action {
                counts[s[0] as usize] += 1;
                draws += 1;
            }
        }
        assert!(draws > 2000, "need volume for the bound, got {draws}");
        let p = 1.0 / n as f64;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() < 3.0 * sigma,
                "file {i}: count {c}, mean {mean:.1}, sigma {sigma:.1}"
            );
        }
    }

    #[test]
    fn analysis_subsets_are_distinct_sorted_indices() {
        let profile = analysis_profile(3);
        let (records, _) = generate(&profile, 40, 0).unwrap();
        for r in &records {
            if let TraceAction::StartProject { subset: Some(s), .. } = &r.action {
                assert_eq!(s.len(), 10);
                let mut sorted = s.clone();
                sorted.dedup();
                assert_eq!(&sorted, s, "distinct and ascending");
                assert!(s.iter().all(|&i| (i as usize) < 40));
            }
        }
    }

    #[test]
    fn import_trace_counts_and_names() {
        let profile = WorkloadProfile {
            kind: WorkloadKind::McImport,
            station: StationId::new("lyon-mc"),
            group: GroupId::new("mc"),
            dataset: String::new(),
            reuse_skew: 0.0,
            arrival_per_day: 50.0,
            consumers_per_project: 1,
            files_per_project: None,
            think_time: 0.0,
            duration_days: 4,
            seed: 5,
            import_file_bytes: 25_000_000,
            archive: Some(MssId::new("enstore")),
        };
        let (records, next) = generate(&profile, 0, 7).unwrap();
        assert_eq!(next, 7, "imports allocate no project ids");
        assert!(!records.is_empty());
        let expected = 50.0 * 4.0;
        let n = records.len() as f64;
        assert!((n - expected).abs() < 4.0 * expected.sqrt(), "about rate*days arrivals, got {n}");
        let mut names = BTreeSet::new();
        for r in &records {
            if let TraceAction::ImportFile { name, size, .. } = &r.action {
                assert_eq!(*size, 25_000_000);
                assert!(names.insert(name.clone()), "unique names");
            }
        }
    }

    #[test]
    fn timestamps_non_decreasing_after_merge() {
        let p1 = analysis_profile(1);
        let p2 = analysis_profile(2);
        let (a, next) = generate(&p1, 30, 0).unwrap();
        let (b, _) = generate(&p2, 30, next).unwrap();
        let merged = merge_traces(vec![a, b]);
        for w in merged.windows(2) {
            assert!(w[0].t <= w[1].t);
        }
    }

    #[test]
    fn csv_roundtrip_is_lossless() {
        let p = analysis_profile(9);
        let (records, next) = generate(&p, 25, 0).unwrap();
        let import = WorkloadProfile {
            kind: WorkloadKind::McImport,
            import_file_bytes: 1000,
            archive: Some(MssId::new("m1")),
            arrival_per_day: 10.0,
            ..analysis_profile(10)
        };
        let (imp, _) = generate(&import, 0, next).unwrap();
        let merged = merge_traces(vec![records, imp]);
        let csv = trace_to_csv(&merged);
        let parsed = trace_from_csv(&csv).unwrap();
        assert_eq!(parsed, merged);
        assert_eq!(trace_to_csv(&parsed), csv);
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(trace_from_csv("nope\n").is_err());
        let bad = format!("{TRACE_HEADER}\n1.0,warp,central,,,,\n");
        assert!(trace_from_csv(&bad).is_err());
    }
}
