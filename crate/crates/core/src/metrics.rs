//! Append-only accounting ledger: per-station daily consumed/delivered
//! series, MSS written/read series, and the cache multiplication factor
//! (consumed bytes over bytes delivered into the cache).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::types::day_index;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("negative amount: bytes={bytes} files={files}")]
    NegativeAmount { bytes: i64, files: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    /// Bytes handed to consumer processes.
    Consumed,
    /// Bytes entering this station's cache from outside.
    DeliveredIn,
    /// Bytes leaving this station over inter-station/MSS links.
    SentOut,
    MssWritten,
    MssRead,
    /// Network-attached reads, metered apart from cache deliveries.
    RemoteStream,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub consumed_bytes: u64,
    pub consumed_files: u64,
    pub delivered_in_bytes: u64,
    pub sent_out_bytes: u64,
    pub mss_written_bytes: u64,
    pub mss_read_bytes: u64,
    pub remote_stream_bytes: u64,
}

impl Counters {
    fn add(&mut self, kind: MetricKind, bytes: u64, files: u64) {
        match kind {
            MetricKind::Consumed => {
                self.consumed_bytes += bytes;
                self.consumed_files += files;
            }
            MetricKind::DeliveredIn => self.delivered_in_bytes += bytes,
            MetricKind::SentOut => self.sent_out_bytes += bytes,
            MetricKind::MssWritten => self.mss_written_bytes += bytes,
            MetricKind::MssRead => self.mss_read_bytes += bytes,
            MetricKind::RemoteStream => self.remote_stream_bytes += bytes,
        }
    }

    fn merge(&mut self, other: &Counters) {
        self.consumed_bytes += other.consumed_bytes;
        self.consumed_files += other.consumed_files;
        self.delivered_in_bytes += other.delivered_in_bytes;
        self.sent_out_bytes += other.sent_out_bytes;
        self.mss_written_bytes += other.mss_written_bytes;
        self.mss_read_bytes += other.mss_read_bytes;
        self.remote_stream_bytes += other.remote_stream_bytes;
    }
}

/// consumed/delivered ratio: NaN when both are zero ("n/a"), +inf when
/// bytes were consumed without any delivery.
pub fn multiplication_factor(consumed: u64, delivered: u64) -> f64 {
    if delivered == 0 {
        if consumed == 0 {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        consumed as f64 / delivered as f64
    }
}

pub fn format_factor(f: f64) -> String {
    if f.is_nan() {
        "n/a".to_string()
    } else if f.is_infinite() {
        "inf".to_string()
    } else {
        format!("{f}")
    }
}

#[derive(Debug, Default)]
pub struct MetricsLedger {
    buckets: BTreeMap<(u32, String), Counters>,
    stations: BTreeSet<String>,
    max_day: u32,
}

impl MetricsLedger {
    pub fn new() -> Self {
        MetricsLedger::default()
    }

    /// Pre-register a station so report rows exist even with zero activity.
    pub fn register_station(&mut self, key: impl Into<String>) {
        self.stations.insert(key.into());
    }

    pub fn record(
        &mut self,
        kind: MetricKind,
        station: &str,
        bytes: i64,
        files: i64,
        at: f64,
    ) -> Result<(), MetricsError> {
        if bytes < 0 || files < 0 {
            return Err(MetricsError::NegativeAmount { bytes, files });
        }
        let day = day_index(at);
        self.max_day = self.max_day.max(day);
        self.stations.insert(station.to_string());
        self.buckets
            .entry((day, station.to_string()))
            .or_default()
            .add(kind, bytes as u64, files as u64);
        Ok(())
    }

    pub fn day_counters(&self, day: u32, station: &str) -> Counters {
        self.buckets
            .get(&(day, station.to_string()))
            .copied()
            .unwrap_or_default()
    }

    pub fn station_totals(&self, station: &str) -> Counters {
        let mut out = Counters::default();
        for ((_, s), c) in &self.buckets {
            if s == station {
                out.merge(c);
            }
        }
        out
    }

    pub fn grand_totals(&self) -> Counters {
        let mut out = Counters::default();
        for c in self.buckets.values() {
            out.merge(c);
        }
        out
    }

    pub fn stations(&self) -> impl Iterator<Item = &str> {
        self.stations.iter().map(String::as_str)
    }

    pub fn max_day(&self) -> u32 {
        self.max_day
    }

    /// Day with the most consumed bytes at `station`, with its counters.
    pub fn peak_consumed_day(&self, station: &str) -> Option<(u32, Counters)> {
        let mut best: Option<(u32, Counters)> = None;
        for ((day, s), c) in &self.buckets {
            if s != station || c.consumed_bytes == 0 {
                continue;
            }
            match best {
                Some((_, b)) if b.consumed_bytes >= c.consumed_bytes => {}
                _ => best = Some((*day, *c)),
            }
        }
        best
    }

    /// Dense daily series CSV:
    /// `day,station,consumed_bytes,consumed_files,delivered_in,sent_out,mss_written,mss_read,mult_factor`.
    pub fn report_csv(&self, days: std::ops::RangeInclusive<u32>) -> String {
        let mut out = String::from(
            "day,station,consumed_bytes,consumed_files,delivered_in,sent_out,mss_written,mss_read,mult_factor\n",
        );
        for day in days {
            for station in &self.stations {
                let c = self.day_counters(day, station);
                let factor = multiplication_factor(c.consumed_bytes, c.delivered_in_bytes);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    day,
                    station,
                    c.consumed_bytes,
                    c.consumed_files,
                    c.delivered_in_bytes,
                    c.sent_out_bytes,
                    c.mss_written_bytes,
                    c.mss_read_bytes,
                    format_factor(factor)
                );
            }
        }
        out
    }

    /// Two-column (day, value) series for one metric at one station;
    /// gnuplot-ready. `negate` mirrors outbound/read series below the axis.
    pub fn chart_series(
        &self,
        station: &str,
        days: std::ops::RangeInclusive<u32>,
        pick: impl Fn(&Counters) -> u64,
        negate: bool,
    ) -> String {
        let mut out = String::new();
        for day in days {
            let c = self.day_counters(day, station);
            let v = pick(&c) as i128 * if negate { -1 } else { 1 };
            let _ = writeln!(out, "{day} {v}");
        }
        out
    }
}
