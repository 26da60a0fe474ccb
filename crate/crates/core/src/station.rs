//! Station-side project machinery: consumer slots, ordered dispatch, and
//! hold/release bookkeeping.
//!
//! A project snapshots its file list at start and hands each file to
//! exactly one consumer exactly once, in snapshot order. Consumers pull:
//! request, hold, release, repeat. Requests and releases arriving while a
//! delivery is in flight are latched and applied when the delivery lands.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::cache::CacheConfig;
use crate::types::{ConsumerId, DatasetId, FileId, GroupId, ProjectId, StationId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StationError {
    #[error("unknown dataset name: {0}")]
    UnknownDataset(String),
    #[error("project wants {requested} consumers, station allows 1..={slots}")]
    TooManyConsumers { requested: u32, slots: u32 },
    #[error("unknown project: {0}")]
    UnknownProject(ProjectId),
    #[error("unknown consumer: {0}")]
    UnknownConsumer(ConsumerId),
    #[error("consumer {0} holds no such file")]
    NotHeld(ConsumerId),
    #[error("stage of {0} failed")]
    StageFailed(FileId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryMode {
    /// Files are copied into the local cache before consumption.
    CopyToCache,
    /// Consumers stream files from a remote server; nothing is admitted
    /// to the local cache on their behalf.
    NetworkAttached,
}

#[derive(Debug, Clone)]
pub struct StationConfig {
    pub id: StationId,
    pub cache: CacheConfig,
    pub consumer_slots: u32,
    pub delivery_mode: DeliveryMode,
    /// Upper bound on concurrently in-flight inbound stages.
    pub max_concurrent_stages: u32,
    /// Service bandwidth of the shared NFS server, bytes/second. Local
    /// reads at an nfs_shared station queue through this.
    pub nfs_read_bandwidth: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectState {
    Running,
    Draining,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsumerPhase {
    Idle,
    AwaitingDelivery(FileId),
    Holding(FileId),
    Finished,
}

#[derive(Debug, Clone)]
pub struct Consumer {
    pub phase: ConsumerPhase,
    /// Release records that arrived while a delivery was in flight. Each
    /// token fires one release; counters keep slow stages from collapsing
    /// queued turns.
    pub pending_release: u32,
    /// Requests that arrived while the consumer was busy.
    pub pending_request: u32,
}

impl Consumer {
    fn new() -> Self {
        Consumer {
            phase: ConsumerPhase::Idle,
            pending_release: 0,
            pending_request: 0,
        }
    }
}

/// What a consumer request resolves to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextAction {
    /// Deliver this file to the requesting consumer.
    Deliver(FileId),
    /// Snapshot exhausted; the consumer is finished.
    EndOfStream,
    /// Consumer already has a request or hold in flight; latched.
    Deferred,
}

#[derive(Debug, Clone)]
pub struct Project {
    pub id: ProjectId,
    pub station: StationId,
    pub dataset: DatasetId,
    pub group: GroupId,
    pub snapshot: Vec<FileId>,
    pub started_at: f64,
    pub done_at: Option<f64>,
    pub consumed_bytes: u64,
    pub consumed_files: u64,
    /// Bytes staged in from outside on behalf of this project.
    pub delivered_bytes: u64,
    consumers: BTreeMap<ConsumerId, Consumer>,
    next_index: usize,
    completed: usize,
    holds: usize,
}

impl Project {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: ProjectId,
        station: StationId,
        dataset: DatasetId,
        group: GroupId,
        snapshot: Vec<FileId>,
        consumers: u32,
        slots: u32,
        now: f64,
    ) -> Result<Self, StationError> {
        if consumers == 0 || consumers > slots {
            return Err(StationError::TooManyConsumers {
                requested: consumers,
                slots,
            });
        }
        let consumer_map = (0..consumers).map(|i| (ConsumerId(i), Consumer::new())).collect();
        let done_at = if snapshot.is_empty() { Some(now) } else { None };
        Ok(Project {
            id,
            station,
            dataset,
            group,
            snapshot,
            started_at: now,
            done_at,
            consumed_bytes: 0,
            consumed_files: 0,
            delivered_bytes: 0,
            consumers: consumer_map,
            next_index: 0,
            completed: 0,
            holds: 0,
        })
    }

    pub fn state(&self) -> ProjectState {
        if self.done_at.is_some() {
            ProjectState::Done
        } else if self.next_index >= self.snapshot.len() {
            ProjectState::Draining
        } else {
            ProjectState::Running
        }
    }

    pub fn consumer(&self, id: ConsumerId) -> Result<&Consumer, StationError> {
        self.consumers.get(&id).ok_or(StationError::UnknownConsumer(id))
    }

    fn consumer_mut(&mut self, id: ConsumerId) -> Result<&mut Consumer, StationError> {
        self.consumers.get_mut(&id).ok_or(StationError::UnknownConsumer(id))
    }

    pub fn undelivered(&self) -> usize {
        self.snapshot.len() - self.next_index
    }

    /// Resolve a consumer's request: the lowest-index unassigned file, end
    /// of stream, or a deferral when the consumer is still busy.
    pub fn request(&mut self, consumer: ConsumerId) -> Result<NextAction, StationError> {
        let c = self.consumer_mut(consumer)?;
        match c.phase {
            ConsumerPhase::Finished => Ok(NextAction::EndOfStream),
            ConsumerPhase::AwaitingDelivery(_) | ConsumerPhase::Holding(_) => {
                c.pending_request += 1;
                Ok(NextAction::Deferred)
            }
            ConsumerPhase::Idle => {
                if self.next_index >= self.snapshot.len() {
                    let c = self.consumer_mut(consumer)?;
                    c.phase = ConsumerPhase::Finished;
                    c.pending_request = 0;
                    Ok(NextAction::EndOfStream)
                } else {
                    let file = self.snapshot[self.next_index];
                    self.next_index += 1;
                    let c = self.consumer_mut(consumer)?;
                    c.phase = ConsumerPhase::AwaitingDelivery(file);
                    Ok(NextAction::Deliver(file))
                }
            }
        }
    }

    /// Record a completed delivery. Returns true when a latched release
    /// should fire immediately.
    pub fn delivery_complete(
        &mut self,
        consumer: ConsumerId,
        file: FileId,
        size: u64,
    ) -> Result<bool, StationError> {
        let c = self.consumer_mut(consumer)?;
        debug_assert_eq!(c.phase, ConsumerPhase::AwaitingDelivery(file));
        c.phase = ConsumerPhase::Holding(file);
        let fire_release = c.pending_release > 0;
        if fire_release {
            c.pending_release -= 1;
        }
        self.completed += 1;
        self.holds += 1;
        self.consumed_bytes += size;
        self.consumed_files += 1;
        Ok(fire_release)
    }

    /// Record a stage failure: the consumer goes idle, the file is counted
    /// as accounted-for so the project can still finish.
    pub fn delivery_failed(&mut self, consumer: ConsumerId, file: FileId) -> Result<(), StationError> {
        let c = self.consumer_mut(consumer)?;
        debug_assert_eq!(c.phase, ConsumerPhase::AwaitingDelivery(file));
        c.phase = ConsumerPhase::Idle;
        c.pending_release = c.pending_release.saturating_sub(1);
        self.completed += 1;
        Ok(())
    }

    /// Release the held file. `expected` pins the check to a specific file
    /// (library callers); None releases whatever is held (trace replay).
    /// While a delivery is in flight the release is latched instead.
    pub fn release(
        &mut self,
        consumer: ConsumerId,
        expected: Option<FileId>,
    ) -> Result<ReleaseOutcome, StationError> {
        let c = self.consumer_mut(consumer)?;
        match c.phase {
            ConsumerPhase::Holding(f) => {
                if let Some(want) = expected {
                    if want != f {
                        return Err(StationError::NotHeld(consumer));
                    }
                }
                c.phase = ConsumerPhase::Idle;
                self.holds -= 1;
                Ok(ReleaseOutcome::Released(f))
            }
            ConsumerPhase::AwaitingDelivery(_) => {
                c.pending_release += 1;
                Ok(ReleaseOutcome::Latched)
            }
            ConsumerPhase::Finished => Ok(ReleaseOutcome::Ignored),
            ConsumerPhase::Idle => Err(StationError::NotHeld(consumer)),
        }
    }

    /// Applied after a latched release fires at delivery time.
    pub fn apply_latched_release(&mut self, consumer: ConsumerId) -> Result<FileId, StationError> {
        match self.release(consumer, None)? {
            ReleaseOutcome::Released(f) => Ok(f),
            _ => Err(StationError::NotHeld(consumer)),
        }
    }

    pub fn take_pending_request(&mut self, consumer: ConsumerId) -> bool {
        match self.consumers.get_mut(&consumer) {
            Some(c) if c.pending_request > 0 => {
                c.pending_request -= 1;
                true
            }
            _ => false,
        }
    }

    /// Mark done when every snapshot file is accounted for and nothing is
    /// held. Returns true on the transition.
    pub fn maybe_finish(&mut self, now: f64) -> bool {
        if self.done_at.is_none()
            && self.next_index >= self.snapshot.len()
            && self.completed >= self.snapshot.len()
            && self.holds == 0
        {
            self.done_at = Some(now);
            true
        } else {
            false
        }
    }

    pub fn consumer_ids(&self) -> impl Iterator<Item = ConsumerId> + '_ {
        self.consumers.keys().copied()
    }

    /// `project_id,station,group,files,bytes_consumed,bytes_delivered,wall_seconds`
    pub fn report_line(&self) -> String {
        let wall = self.done_at.map(|d| d - self.started_at).unwrap_or(f64::NAN);
        format!(
            "{},{},{},{},{},{},{}",
            self.id,
            self.station,
            self.group,
            self.consumed_files,
            self.consumed_bytes,
            self.delivered_bytes,
            wall
        )
    }
}

/// Result of a release call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseOutcome {
    Released(FileId),
    /// Delivery still in flight; will fire when it lands.
    Latched,
    /// Consumer already finished (surplus trace record).
    Ignored,
}
