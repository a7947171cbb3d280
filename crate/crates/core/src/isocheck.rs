//! Offline non-interference verification.
//!
//! [`check`] replays an event log against the cluster map active at each
//! event's time (the header's map, switched by `Reconfig` events) and
//! reports every strong-isolation violation. Rules R1 and the L1 clause of
//! R2 describe spatial partitioning and therefore apply only to cluster-mode
//! logs; time-shared modes share cores legally and are instead held to the
//! purge-completeness rule R4.
//!
//! Rules:
//! - R1: no non-IPC packet hop touches a router outside the owner's cluster
//! - R2: no access by one cluster's process touches the other cluster's
//!   L1/L2 slice, except the IPC buffer page
//! - R3: no controller enqueue crosses the cluster/controller assignment
//! - R4: after a flush, no other-cluster process hits a line that predates it
//! - R5: a discarded speculative access mutates no state
//! - R6: at most one reconfiguration per application invocation
//! - R7: the IPC buffer stays homed in insecure resources throughout

use crate::events::{
    CacheLevel, EventKind, EventLog, FlushScope, LogError, RunHeader, SimEvent,
};
use crate::machine::{Cluster, ClusterMap, MeshCoord, TileTag};
use crate::netsim::PacketKind;
use crate::secmodel::ArchMode;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleId {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
}

impl std::fmt::Display for RuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

pub const ALL_RULES: [RuleId; 7] = [
    RuleId::R1,
    RuleId::R2,
    RuleId::R3,
    RuleId::R4,
    RuleId::R5,
    RuleId::R6,
    RuleId::R7,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: RuleId,
    pub event_index: usize,
    pub description: String,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Clean,
    Violated,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViolationReport {
    pub verdict: Verdict,
    pub violations: Vec<Violation>,
    pub rules_checked: Vec<RuleId>,
    pub events_scanned: usize,
}

impl ViolationReport {
    pub fn clean(&self) -> bool {
        self.verdict == Verdict::Clean
    }

    pub fn count(&self, rule: RuleId) -> usize {
        self.violations.iter().filter(|v| v.rule == rule).count()
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "verdict: {}  ({} events, {} violations)\n",
            match self.verdict {
                Verdict::Clean => "clean",
                Verdict::Violated => "VIOLATED",
            },
            self.events_scanned,
            self.violations.len()
        );
        for rule in ALL_RULES {
            let n = self.count(rule);
            if n > 0 {
                s.push_str(&format!("  {rule}: {n}\n"));
            }
        }
        for v in self.violations.iter().take(10) {
            s.push_str(&format!("  [{}] event {}: {}\n", v.rule, v.event_index, v.description));
        }
        if self.violations.len() > 10 {
            s.push_str(&format!("  ... {} more\n", self.violations.len() - 10));
        }
        s
    }
}

struct Checker<'a> {
    header: &'a RunHeader,
    map: ClusterMap,
    spatial: bool,
    grid_cols: usize,
    violations: Vec<Violation>,
    /// Lines installed per tile since the last flush, with installer cluster.
    shadow: BTreeMap<usize, BTreeMap<u64, Cluster>>,
    /// Line owners captured at flush time.
    pre_flush: BTreeMap<usize, BTreeMap<u64, Cluster>>,
    /// Discards at the current timestamp: (pid, line).
    pending_discards: Vec<(u32, u64)>,
    discard_time: u64,
    reconfigs: BTreeMap<u32, usize>,
}

impl<'a> Checker<'a> {
    fn tile_tag(&self, coord: MeshCoord) -> TileTag {
        self.map.tile_tags[coord.y * self.grid_cols + coord.x]
    }

    fn violate(&mut self, rule: RuleId, event_index: usize, description: String) {
        self.violations.push(Violation {
            rule,
            event_index,
            description,
        });
    }

    fn router_allowed(&self, coord: MeshCoord, cluster: Cluster) -> bool {
        if self.tile_tag(coord) == TileTag::from(cluster.opposite()) {
            return false;
        }
        if let Some(mc) = self.header.mc_positions.iter().position(|&p| p == coord) {
            if self.map.mc_tags[mc] == cluster.opposite() {
                return false;
            }
        }
        true
    }

    fn is_ipc(&self, line: u64) -> bool {
        self.header.ipc_lines().contains(&line)
    }

    fn step(&mut self, i: usize, ev: &SimEvent) {
        if ev.time_ns != self.discard_time {
            self.pending_discards.clear();
            self.discard_time = ev.time_ns;
        }
        match &ev.kind {
            EventKind::PacketHop { router, kind, .. } => {
                if self.spatial
                    && *kind != PacketKind::Ipc
                    && !self.router_allowed(*router, ev.cluster)
                {
                    self.violate(
                        RuleId::R1,
                        i,
                        format!(
                            "{} packet of {} cluster touches router {router}",
                            match kind {
                                PacketKind::Coherence => "coherence",
                                PacketKind::Memory => "memory",
                                PacketKind::Ipc => "ipc",
                            },
                            ev.cluster
                        ),
                    );
                }
            }
            EventKind::CacheAccess {
                level,
                tile,
                line,
                hit,
                write,
            } => {
                // R5: state mutation attributed to a discarded access.
                if self
                    .pending_discards
                    .iter()
                    .any(|&(p, l)| p == ev.pid.0 && l == *line)
                {
                    self.violate(
                        RuleId::R5,
                        i,
                        format!("discarded access of line {line:#x} mutated cache state"),
                    );
                }
                let coord = MeshCoord::new(tile.0 % self.grid_cols, tile.0 / self.grid_cols);
                let tag = self.tile_tag(coord);
                match level {
                    CacheLevel::L1 => {
                        if self.spatial && tag != TileTag::from(ev.cluster) {
                            self.violate(
                                RuleId::R2,
                                i,
                                format!(
                                    "{} process uses the L1 of {} tile {tile}",
                                    ev.cluster,
                                    match tag {
                                        TileTag::Secure => "secure",
                                        TileTag::Insecure => "insecure",
                                        TileTag::Unused => "unused",
                                    }
                                ),
                            );
                        }
                        // R4 shadow bookkeeping.
                        let shadow = self.shadow.entry(tile.0).or_default();
                        if *hit {
                            if !shadow.contains_key(line) {
                                let prior = self
                                    .pre_flush
                                    .get(&tile.0)
                                    .and_then(|m| m.get(line))
                                    .copied();
                                if let Some(owner) = prior {
                                    if owner != ev.cluster {
                                        self.violate(
                                            RuleId::R4,
                                            i,
                                            format!(
                                                "{} process hits line {line:#x} owned by the {} cluster before the flush of {tile}",
                                                ev.cluster, owner
                                            ),
                                        );
                                    }
                                }
                            } else if *write {
                                shadow.insert(*line, ev.cluster);
                            }
                        } else {
                            shadow.insert(*line, ev.cluster);
                        }
                    }
                    CacheLevel::L2 => {
                        if self.is_ipc(*line) {
                            // R7: the buffer must live on insecure slices.
                            if tag == TileTag::Secure {
                                self.violate(
                                    RuleId::R7,
                                    i,
                                    format!("IPC line {line:#x} cached in secure slice {tile}"),
                                );
                            }
                        } else if tag != TileTag::from(ev.cluster) {
                            self.violate(
                                RuleId::R2,
                                i,
                                format!(
                                    "{} process touches L2 slice {tile} ({})",
                                    ev.cluster,
                                    match tag {
                                        TileTag::Secure => "secure",
                                        TileTag::Insecure => "insecure",
                                        TileTag::Unused => "unused",
                                    }
                                ),
                            );
                        }
                    }
                    CacheLevel::Dram => {}
                }
            }
            EventKind::McEnqueue { mc, line, .. } => {
                if self
                    .pending_discards
                    .iter()
                    .any(|&(p, l)| p == ev.pid.0 && l == *line)
                {
                    self.violate(
                        RuleId::R5,
                        i,
                        format!("discarded access of line {line:#x} reached a controller queue"),
                    );
                }
                match self.header.region_of_line(*line) {
                    Some(region) => {
                        let owner_mc = self.header.mc_of_region(region);
                        if owner_mc != *mc {
                            self.violate(
                                RuleId::R3,
                                i,
                                format!(
                                    "line {line:#x} of region {region} enqueued at MC {mc}, mapped by MC {owner_mc}"
                                ),
                            );
                        } else if !self.is_ipc(*line) && self.map.mc_tags[*mc] != ev.cluster {
                            self.violate(
                                RuleId::R3,
                                i,
                                format!(
                                    "{} process enqueues at {} MC {mc}",
                                    ev.cluster,
                                    self.map.mc_tags[*mc]
                                ),
                            );
                        }
                    }
                    None => self.violate(
                        RuleId::R3,
                        i,
                        format!("line {line:#x} lies outside every DRAM region"),
                    ),
                }
            }
            EventKind::Flush { scope, .. } => {
                if let FlushScope::Tile(tile) = scope {
                    let shadow = self.shadow.entry(tile.0).or_default();
                    let drained = std::mem::take(shadow);
                    let pre = self.pre_flush.entry(tile.0).or_default();
                    for (line, cluster) in drained {
                        pre.insert(line, cluster);
                    }
                }
            }
            EventKind::Rehome { page, to, .. } => {
                let lines_per_page = self.header.page_bytes / self.header.line_bytes as u64;
                let first = page * lines_per_page;
                if self.header.ipc_lines().contains(&first) {
                    let coord = MeshCoord::new(to.0 % self.grid_cols, to.0 / self.grid_cols);
                    if self.tile_tag(coord) != TileTag::Insecure {
                        self.violate(
                            RuleId::R7,
                            i,
                            format!("IPC buffer page re-homed to non-insecure slice {to}"),
                        );
                    }
                }
            }
            EventKind::Reconfig { app, map } => {
                let count = {
                    let c = self.reconfigs.entry(app.0).or_insert(0);
                    *c += 1;
                    *c
                };
                if count > 1 {
                    self.violate(
                        RuleId::R6,
                        i,
                        format!("app {} reconfigured {count} times in one invocation", app.0),
                    );
                }
                self.map = map.clone();
            }
            EventKind::SpecDiscard { line } => {
                self.pending_discards.push((ev.pid.0, *line));
            }
            EventKind::EnclaveEnter
            | EventKind::EnclaveExit
            | EventKind::IpcSend { .. }
            | EventKind::IpcRecv { .. }
            | EventKind::Fault { .. } => {}
        }
    }
}

/// Replays `log` against its header map (and any reconfigurations recorded
/// in the trace) and reports every violated rule.
pub fn check(log: &EventLog) -> ViolationReport {
    let spatial = log.header.mode == ArchMode::Ironhide;
    let mut checker = Checker {
        header: &log.header,
        map: log.header.map.clone(),
        spatial,
        grid_cols: log.header.grid_cols,
        violations: Vec::new(),
        shadow: BTreeMap::new(),
        pre_flush: BTreeMap::new(),
        pending_discards: Vec::new(),
        discard_time: u64::MAX,
        reconfigs: BTreeMap::new(),
    };

    // R7 also covers the static placement from the header.
    let ipc_region = log.header.map.ipc_buffer_region as usize;
    if log
        .header
        .map
        .region_tags
        .get(ipc_region)
        .copied()
        .unwrap_or(Cluster::Secure)
        != Cluster::Insecure
    {
        checker.violate(
            RuleId::R7,
            0,
            format!("IPC buffer region {ipc_region} is not insecure"),
        );
    }

    for (i, ev) in log.events.iter().enumerate() {
        checker.step(i, ev);
    }

    let rules_checked = if spatial {
        ALL_RULES.to_vec()
    } else {
        vec![
            RuleId::R2,
            RuleId::R3,
            RuleId::R4,
            RuleId::R5,
            RuleId::R6,
            RuleId::R7,
        ]
    };
    ViolationReport {
        verdict: if checker.violations.is_empty() {
            Verdict::Clean
        } else {
            Verdict::Violated
        },
        violations: checker.violations,
        rules_checked,
        events_scanned: log.events.len(),
    }
}

/// Checks a log file on disk; parse failures identify the offending line.
pub fn check_file(path: &std::path::Path) -> Result<ViolationReport, LogError> {
    let log = EventLog::read_file(path)?;
    Ok(check(&log))
}
