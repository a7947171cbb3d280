//! Simulation event records and the newline-delimited JSON log format.
//!
//! A log file holds one [`RunHeader`] line followed by one [`SimEvent`] per
//! line, ordered by non-decreasing timestamp. The header carries everything
//! the offline checker needs to interpret the trace: machine geometry, the
//! initial cluster map, and the IPC buffer location. `Reconfig` events embed
//! the map that becomes active from that point on.

use crate::machine::{Cluster, ClusterMap, MachineConfig, MeshCoord, TileId};
use crate::netsim::{PacketKind, RoutePolicy};
use crate::secmodel::ArchMode;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

/// Process id, unique within one run.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Pid(pub u32);

/// Interactive application id.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct AppId(pub u32);

/// Which cache structure an access touched.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheLevel {
    L1,
    L2,
    Dram,
}

/// Structure addressed by a flush.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlushScope {
    /// Private L1 and TLB of one tile.
    Tile(TileId),
    /// One memory controller's queues.
    Mc(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "k", rename_all = "snake_case")]
pub enum EventKind {
    CacheAccess {
        level: CacheLevel,
        tile: TileId,
        line: u64,
        hit: bool,
        write: bool,
    },
    PacketHop {
        router: MeshCoord,
        kind: PacketKind,
        policy: RoutePolicy,
    },
    McEnqueue {
        mc: usize,
        line: u64,
        write: bool,
    },
    Flush {
        scope: FlushScope,
        writebacks: u32,
    },
    Rehome {
        page: u64,
        from: TileId,
        to: TileId,
        moved: u32,
    },
    Reconfig {
        app: AppId,
        map: ClusterMap,
    },
    EnclaveEnter,
    EnclaveExit,
    IpcSend {
        bytes: u32,
    },
    IpcRecv {
        bytes: u32,
    },
    SpecDiscard {
        line: u64,
    },
    Fault {
        line: u64,
    },
}

/// One record of the simulation trace. `time_ns` values are non-decreasing
/// within a log; `cluster` is the acting process's isolation domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    #[serde(rename = "t")]
    pub time_ns: u64,
    pub pid: Pid,
    #[serde(rename = "cl")]
    pub cluster: Cluster,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// First line of a log file: run identity plus the static context the
/// checker replays events against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub version: u32,
    pub workload: String,
    pub mode: ArchMode,
    pub seed: u64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub unused_tiles: Vec<MeshCoord>,
    pub mc_positions: Vec<MeshCoord>,
    pub regions_per_mc: usize,
    pub region_bytes: u64,
    pub line_bytes: usize,
    pub page_bytes: u64,
    pub map: ClusterMap,
    /// First line address of the IPC buffer page.
    pub ipc_line_start: u64,
    /// Number of lines in the IPC buffer page.
    pub ipc_line_count: u64,
}

impl RunHeader {
    pub fn ipc_lines(&self) -> std::ops::Range<u64> {
        self.ipc_line_start..self.ipc_line_start + self.ipc_line_count
    }

    pub fn mc_of_region(&self, region: u32) -> usize {
        region as usize % self.mc_positions.len()
    }

    pub fn region_of_line(&self, line: u64) -> Option<u32> {
        let r = line * self.line_bytes as u64 / self.region_bytes;
        let count = (self.mc_positions.len() * self.regions_per_mc) as u64;
        (r < count).then_some(r as u32)
    }
}

/// A parsed log: header plus its time-ordered events.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    pub header: RunHeader,
    pub events: Vec<SimEvent>,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("log line {line_no}: {source}")]
    Parse {
        line_no: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("log is empty: missing header record")]
    MissingHeader,
}

impl EventLog {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), LogError> {
        serde_json::to_writer(&mut w, &self.header).map_err(|e| LogError::Parse {
            line_no: 1,
            source: e,
        })?;
        w.write_all(b"\n")?;
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev).map_err(|e| LogError::Parse {
                line_no: 0,
                source: e,
            })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<(), LogError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<EventLog, LogError> {
        let mut lines = r.lines();
        let header_line = lines.next().ok_or(LogError::MissingHeader)??;
        let header: RunHeader =
            serde_json::from_str(&header_line).map_err(|e| LogError::Parse {
                line_no: 1,
                source: e,
            })?;
        let mut events = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ev: SimEvent = serde_json::from_str(&line).map_err(|e| LogError::Parse {
                line_no: i + 2,
                source: e,
            })?;
            events.push(ev);
        }
        Ok(EventLog { header, events })
    }

    pub fn read_file(path: &std::path::Path) -> Result<EventLog, LogError> {
        let f = std::fs::File::open(path)?;
        EventLog::read_from(std::io::BufReader::new(f))
    }
}

/// Builds a header from run context.
#[allow(clippy::too_many_arguments)]
pub fn run_header(
    cfg: &MachineConfig,
    map: &ClusterMap,
    mode: ArchMode,
    workload: &str,
    seed: u64,
    ipc_line_start: u64,
    ipc_line_count: u64,
) -> RunHeader {
    RunHeader {
        version: 1,
        workload: workload.to_string(),
        mode,
        seed,
        grid_rows: cfg.grid_rows,
        grid_cols: cfg.grid_cols,
        unused_tiles: cfg.unused_tiles.clone(),
        mc_positions: cfg.mc_positions.clone(),
        regions_per_mc: cfg.regions_per_mc,
        region_bytes: cfg.region_bytes,
        line_bytes: cfg.line_bytes,
        page_bytes: cfg.page_bytes,
        map: map.clone(),
        ipc_line_start,
        ipc_line_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{default_config, ClusterMap};

    #[test]
    fn log_round_trips_through_jsonl() {
        let cfg = default_config();
        let map = ClusterMap::contiguous_split(&cfg, 32);
        let header = run_header(&cfg, &map, ArchMode::Ironhide, "w", 7, 100, 64);
        let events = vec![
            SimEvent {
                time_ns: 0,
                pid: Pid(1),
                cluster: Cluster::Secure,
                kind: EventKind::EnclaveExit,
            },
            SimEvent {
                time_ns: 5,
                pid: Pid(2),
                cluster: Cluster::Insecure,
                kind: EventKind::CacheAccess {
                    level: CacheLevel::L1,
                    tile: TileId(3),
                    line: 42,
                    hit: false,
                    write: true,
                },
            },
        ];
        let log = EventLog { header, events };
        let mut buf = Vec::new();
        log.write_to(&mut buf).unwrap();
        let parsed = EventLog::read_from(&buf[..]).unwrap();
        assert_eq!(parsed, log);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let cfg = default_config();
        let map = ClusterMap::single_cluster(&cfg);
        let header = run_header(&cfg, &map, ArchMode::Mi6, "w", 1, 0, 64);
        let mut buf = Vec::new();
        serde_json::to_writer(&mut buf, &header).unwrap();
        buf.extend_from_slice(b"\n{not json\n");
        let err = EventLog::read_from(&buf[..]).unwrap_err();
        match err {
            LogError::Parse { line_no, .. } => assert_eq!(line_no, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
