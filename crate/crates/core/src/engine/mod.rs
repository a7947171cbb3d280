//! Discrete-event simulation core.
//!
//! A run advances each process through its phase program, issuing memory
//! accesses from a seeded generator, synchronizing the producer and consumer
//! at every interaction, and charging the mode's security costs as global
//! stalls. Identical inputs and seed yield bit-identical metrics and logs.
//!
//! Time accounting: per-process compute clocks advance independently (and
//! synchronize at interactions); purge, entry/exit, and reconfiguration
//! costs stall every core, so completion time is the maximum compute clock
//! plus the accumulated overhead, and the four components partition it
//! exactly.

mod workload;

pub use workload::{AccessPattern, InteractiveApp, Phase, Process};

use crate::events::{
    run_header, AppId, CacheLevel, EventKind, EventLog, Pid, SimEvent,
};
use crate::heuristic::{normalize_trend, MpkiTrend, TrendError};
use crate::machine::{
    validate_cluster_map, Cluster, ClusterMap, ConfigError, MachineConfig, MapViolation, TileId,
    TileTag,
};
use crate::memsim::{AccessCtx, AccessRequest, HomingMode, MemError, MemoryHierarchy};
use crate::netsim;
use crate::secmodel::{
    self, AccessVerdict, ArchMode, AttestOutcome, Direction, SecError, SecureKernelState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cluster map rejected: {0:?}")]
    InvalidMap(Vec<MapViolation>),
    #[error("cluster map is not containable: {violations} routing pairs escape")]
    Uncontainable { violations: usize },
    #[error("attestation failed for process '{name}'; it will not run on secure tiles")]
    AttestationFailed { name: String },
    #[error("workload invalid: {0}")]
    InvalidApp(String),
    #[error("IPC buffer misconfigured: {0}")]
    IpcConfig(String),
    #[error(transparent)]
    Sec(#[from] SecError),
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Trend(#[from] TrendError),
}

/// Per-run options beyond the spec-level inputs.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub homing: HomingMode,
    /// For cluster modes: the map installed by the one reconfiguration.
    pub reconfig_target: Option<ClusterMap>,
    /// Collect the full event log (otherwise only metrics are produced).
    pub collect_events: bool,
    pub workload_name: String,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            homing: HomingMode::LocalHoming,
            reconfig_target: None,
            collect_events: false,
            workload_name: String::new(),
        }
    }
}

/// Per-process counters accumulated over a run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ProcMetrics {
    pub pid: u32,
    pub name: String,
    pub instructions: u64,
    pub l1_accesses: u64,
    pub l1_misses: u64,
    pub l2_accesses: u64,
    pub l2_misses: u64,
    pub l1_miss_rate: f64,
    pub l2_miss_rate: f64,
    pub mpki: f64,
}

/// Completion-time breakdown and cache statistics of one run.
///
/// The four time components partition the completion time exactly; the
/// cycle-granular fields are authoritative and the seconds are derived.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub completion_s: f64,
    pub compute_s: f64,
    pub purge_s: f64,
    pub entry_exit_s: f64,
    pub reconfig_s: f64,
    pub completion_cycles: u64,
    pub compute_cycles: u64,
    pub purge_cycles: u64,
    pub entry_exit_cycles: u64,
    pub reconfig_cycles: u64,
    pub interactions: u64,
    pub cores_secure: u32,
    pub cores_insecure: u32,
    pub processes: Vec<ProcMetrics>,
}

impl RunMetrics {
    pub fn aggregate_l1_miss_rate(&self) -> f64 {
        let acc: u64 = self.processes.iter().map(|p| p.l1_accesses).sum();
        let miss: u64 = self.processes.iter().map(|p| p.l1_misses).sum();
        if acc == 0 {
            0.0
        } else {
            miss as f64 / acc as f64
        }
    }

    pub fn aggregate_l2_miss_rate(&self) -> f64 {
        let acc: u64 = self.processes.iter().map(|p| p.l2_accesses).sum();
        let miss: u64 = self.processes.iter().map(|p| p.l2_misses).sum();
        if acc == 0 {
            0.0
        } else {
            miss as f64 / acc as f64
        }
    }

    pub fn aggregate_mpki(&self) -> f64 {
        let instr: u64 = self.processes.iter().map(|p| p.instructions).sum();
        let miss: u64 = self.processes.iter().map(|p| p.l2_misses).sum();
        if instr == 0 {
            0.0
        } else {
            miss as f64 * 1000.0 / instr as f64
        }
    }
}

/// Result of [`run`]: metrics plus the event log when collection was on.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub log: Option<EventLog>,
}

struct ProcState {
    pid: Pid,
    cluster: Cluster,
    tiles: Vec<TileId>,
    clock: u64,
    phase_idx: usize,
    done_in_phase: u64,
    /// Page ids backing the process footprint, index = footprint offset.
    pages: Vec<u64>,
    core_rngs: Vec<ChaCha8Rng>,
    access_carry: Vec<f64>,
    probe_carry: Vec<f64>,
    instructions: u64,
    l1_accesses: u64,
    l1_misses: u64,
    l2_accesses: u64,
    l2_misses: u64,
}

struct Sim<'a> {
    cfg: &'a MachineConfig,
    mode: ArchMode,
    app: &'a InteractiveApp,
    homing: HomingMode,
    map: ClusterMap,
    mem: MemoryHierarchy,
    kernel: SecureKernelState,
    ipc_page: u64,
    ipc_lines: std::ops::Range<u64>,
    overhead_cycles: u64,
    purge_cycles: u64,
    ee_cycles: u64,
    reconfig_cycles: u64,
    collect: bool,
    events: Vec<SimEvent>,
    procs: Vec<ProcState>,
    /// First secure region base, target of speculative probes.
    probe_target: Option<u64>,
}

fn mix_seed(base: u64, parts: &[u64]) -> [u8; 32] {
    // splitmix64 over the salted parts
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    let mut out = [0u8; 32];
    let salts: Vec<u64> = parts.to_vec();
    for (i, chunk) in out.chunks_mut(8).enumerate() {
        state = state.wrapping_add(salts.get(i % salts.len().max(1)).copied().unwrap_or(0));
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    out
}

impl<'a> Sim<'a> {
    fn wall_ns(&self, clock: u64) -> u64 {
        self.cfg.cycles_to_ns(clock + self.overhead_cycles)
    }

    fn emit(&mut self, mut ev: SimEvent, at_cycles: u64) {
        if self.collect {
            ev.time_ns = self.wall_ns(at_cycles);
            self.events.push(ev);
        }
    }

    fn emit_all(&mut self, evs: Vec<SimEvent>, at_cycles: u64) {
        if self.collect {
            let t = self.wall_ns(at_cycles);
            for mut ev in evs {
                ev.time_ns = t;
                self.events.push(ev);
            }
        }
    }

    /// Splits a spatial cluster's tiles among the processes pinned to it.
    fn assign_tiles(&mut self) {
        if !self.mode.spatial() {
            let all = self.cfg.usable_tiles();
            for p in &mut self.procs {
                p.tiles = all.clone();
            }
            return;
        }
        for cluster in [Cluster::Secure, Cluster::Insecure] {
            let tiles = self.map.cluster_tiles(self.cfg, cluster);
            let members: Vec<usize> = self
                .procs
                .iter()
                .enumerate()
                .filter(|(_, p)| p.cluster == cluster)
                .map(|(i, _)| i)
                .collect();
            if members.is_empty() {
                continue;
            }
            let share = (tiles.len() / members.len()).max(1);
            for (j, &pi) in members.iter().enumerate() {
                let start = (j * share).min(tiles.len().saturating_sub(1));
                let end = if j == members.len() - 1 {
                    tiles.len()
                } else {
                    ((j + 1) * share).min(tiles.len())
                };
                self.procs[pi].tiles = tiles[start..end.max(start + 1)].to_vec();
            }
        }
    }

    fn active_cores(&self, p: usize) -> usize {
        let threads = self.app.processes[p].threads as usize;
        threads.min(self.procs[p].tiles.len()).max(1)
    }

    /// Runs `instr` instructions of the current phase on every active core
    /// of process `p`, advancing its compute clock by the slowest core.
    fn exec_span(&mut self, p: usize, phase_idx: usize, instr: u64) -> Result<(), EngineError> {
        if instr == 0 {
            return Ok(());
        }
        let phase = &self.app.processes[p].phases[phase_idx];
        let pattern = phase.access.clone();
        let active = self.active_cores(p);
        let base_share = instr / active as u64;
        let extra = (instr % active as u64) as usize;
        let mut span_cycles = 0u64;
        let lines_per_page = self.cfg.lines_per_page();
        let word = 8usize.min(self.cfg.line_bytes);
        let slots_per_line = (self.cfg.line_bytes / word) as u64;

        let tier_total: u64 = pattern.tier_pages.iter().sum();
        let footprint = self.procs[p].pages.len() as u64;
        let t2_start = pattern.tier_pages[0] + pattern.tier_pages[1];
        let wsum: f64 = pattern.tier_weights.iter().sum();

        for core_idx in 0..active {
            let share = base_share + u64::from(core_idx < extra);
            if share == 0 {
                continue;
            }
            let core = self.procs[p].tiles[core_idx];
            let cpi_cycles = (share as f64 * self.cfg.base_cpi).round() as u64;
            let mut elapsed = 0u64;

            // Demand accesses for this core's instruction share.
            let n_acc = {
                let carry = &mut self.procs[p].access_carry[core_idx];
                *carry += share as f64 * pattern.mem_per_kilo as f64 / 1000.0;
                let n = carry.floor() as u64;
                *carry -= n as f64;
                n
            };
            for _ in 0..n_acc {
                let (page_off, is_write) = {
                    let rng = &mut self.procs[p].core_rngs[core_idx];
                    let u: f64 = rng.gen::<f64>() * wsum;
                    if u < pattern.tier_weights[0] && pattern.tier_pages[0] > 0 {
                        (rng.gen_range(0..pattern.tier_pages[0]), false)
                    } else if u < pattern.tier_weights[0] + pattern.tier_weights[1]
                        && pattern.tier_pages[1] > 0
                    {
                        (
                            pattern.tier_pages[0] + rng.gen_range(0..pattern.tier_pages[1]),
                            false,
                        )
                    } else if pattern.tier_pages[2] > 0 {
                        // Partitioned tier: cores write only their own chunk.
                        let chunk = (pattern.tier_pages[2] / active as u64).max(1);
                        let start = t2_start + (core_idx as u64 * chunk) % pattern.tier_pages[2];
                        let len = chunk.min(pattern.tier_pages[2] - (start - t2_start));
                        let page = start + rng.gen_range(0..len.max(1));
                        let w = rng.gen::<f64>() < pattern.write_fraction;
                        (page.min(tier_total - 1), w)
                    } else if pattern.tier_pages[0] > 0 {
                        (rng.gen_range(0..pattern.tier_pages[0]), false)
                    } else {
                        (0, false)
                    }
                };
                let page_off = page_off.min(footprint - 1);
                let (line_slot, word_slot, wdata) = {
                    let rng = &mut self.procs[p].core_rngs[core_idx];
                    (
                        rng.gen_range(0..lines_per_page),
                        rng.gen_range(0..slots_per_line),
                        rng.gen::<u64>().to_le_bytes(),
                    )
                };
                let page = self.procs[p].pages[page_off as usize];
                let paddr =
                    page * self.cfg.page_bytes + line_slot * self.cfg.line_bytes as u64
                        + word_slot * word as u64;
                let (pid, cluster) = (self.procs[p].pid, self.procs[p].cluster);
                let verdict = secmodel::check_access(
                    self.mode,
                    self.cfg,
                    &self.map,
                    cluster,
                    paddr,
                    self.ipc_page,
                );
                debug_assert_eq!(verdict, AccessVerdict::Allow, "own-page access stalled");
                let req = AccessRequest {
                    core,
                    pid,
                    cluster,
                    paddr,
                    size: word,
                    write: is_write.then_some(&wdata[..]),
                };
                let ctx = AccessCtx {
                    map: &self.map,
                    spatial: self.mode.spatial(),
                    ipc_lines: self.ipc_lines.clone(),
                };
                let res = self.mem.access(&ctx, &req)?;
                let at = self.procs[p].clock + elapsed;
                elapsed += res.latency;
                self.emit_all(res.events, at);
                self.procs[p].l1_accesses += 1;
                match res.level {
                    Some(CacheLevel::L1) => {}
                    Some(CacheLevel::L2) => {
                        self.procs[p].l1_misses += 1;
                        self.procs[p].l2_accesses += 1;
                    }
                    Some(CacheLevel::Dram) | None => {
                        self.procs[p].l1_misses += 1;
                        self.procs[p].l2_accesses += 1;
                        self.procs[p].l2_misses += 1;
                    }
                }
            }

            // Speculative probes into the foreign cluster's memory (stalled,
            // then discarded; the window charges only this thread).
            if pattern.probe_per_kilo > 0 && self.mode.guarded() {
                if let Some(target) = self.probe_target {
                    if self.procs[p].cluster == Cluster::Insecure {
                        let n_probe = {
                            let carry = &mut self.procs[p].probe_carry[core_idx];
                            *carry += share as f64 * pattern.probe_per_kilo as f64 / 1000.0;
                            let n = carry.floor() as u64;
                            *carry -= n as f64;
                            n
                        };
                        for _ in 0..n_probe {
                            let off = {
                                let rng = &mut self.procs[p].core_rngs[core_idx];
                                rng.gen_range(0..self.cfg.region_bytes / 8) * 8
                            };
                            let paddr = target + off;
                            let verdict = secmodel::check_access(
                                self.mode,
                                self.cfg,
                                &self.map,
                                Cluster::Insecure,
                                paddr,
                                self.ipc_page,
                            );
                            if verdict == AccessVerdict::Stall {
                                let resolved = secmodel::resolve_stall(true);
                                debug_assert_eq!(resolved, AccessVerdict::Discard);
                                let at = self.procs[p].clock + elapsed;
                                elapsed += self.cfg.spec_resolve_cycles;
                                let (pid, cluster) =
                                    (self.procs[p].pid, self.procs[p].cluster);
                                self.emit(
                                    SimEvent {
                                        time_ns: 0,
                                        pid,
                                        cluster,
                                        kind: EventKind::SpecDiscard {
                                            line: self.cfg.line_of_addr(paddr),
                                        },
                                    },
                                    at,
                                );
                            }
                        }
                    }
                }
            }

            span_cycles = span_cycles.max(cpi_cycles + elapsed);
        }
        self.procs[p].clock += span_cycles;
        self.procs[p].instructions += instr;
        Ok(())
    }

    /// Executes `budget` instructions of process `p`, crossing phase
    /// boundaries as needed and charging barrier penalties when a phase
    /// completes.
    fn exec_chunk(&mut self, p: usize, mut budget: u64) -> Result<(), EngineError> {
        while budget > 0 {
            let nphases = self.app.processes[p].phases.len();
            let idx = self.procs[p].phase_idx;
            if idx >= nphases {
                break;
            }
            let phase_instr = self.app.processes[p].phases[idx].instructions;
            let remaining = phase_instr - self.procs[p].done_in_phase;
            let span = budget.min(remaining);
            self.exec_span(p, idx, span)?;
            self.procs[p].done_in_phase += span;
            budget -= span;
            if self.procs[p].done_in_phase == phase_instr {
                let barriers = self.app.processes[p].phases[idx].barriers;
                if barriers > 0 {
                    let active = self.active_cores(p) as f64;
                    let penalty = (self.app.processes[p].sync_coeff * active).round() as u64;
                    self.procs[p].clock += penalty * barriers as u64;
                }
                self.procs[p].phase_idx += 1;
                self.procs[p].done_in_phase = 0;
            }
        }
        Ok(())
    }

    fn remaining_instructions(&self, p: usize) -> u64 {
        let proc = &self.app.processes[p];
        let mut total = 0;
        for (i, ph) in proc.phases.iter().enumerate() {
            if i < self.procs[p].phase_idx {
                continue;
            }
            total += ph.instructions;
            if i == self.procs[p].phase_idx {
                total -= self.procs[p].done_in_phase;
            }
        }
        total
    }

    /// Transfers one IPC payload from `prod` to `cons`, applying the mode's
    /// enclave protocol around it.
    fn interact(&mut self, prod: usize, cons: usize) -> Result<(), EngineError> {
        let t = self.procs[prod].clock.max(self.procs[cons].clock);
        self.procs[prod].clock = t;
        self.procs[cons].clock = t;

        let secure_pid = if self.procs[cons].cluster == Cluster::Secure {
            Some(self.procs[cons].pid)
        } else if self.procs[prod].cluster == Cluster::Secure {
            Some(self.procs[prod].pid)
        } else {
            None
        };

        // Exit: under the enclave modes the secure side leaves its enclave
        // before the insecure side produces the input.
        if matches!(self.mode, ArchMode::SgxLike | ArchMode::Mi6) {
            if let Some(spid) = secure_pid {
                let ctx_map = self.map.clone();
                let ctx = AccessCtx {
                    map: &ctx_map,
                    spatial: false,
                    ipc_lines: self.ipc_lines.clone(),
                };
                let out = secmodel::enclave_transition(
                    self.mode,
                    Direction::Exit,
                    self.cfg,
                    &mut self.mem,
                    &ctx,
                    spid,
                )?;
                self.emit_all(out.events, t);
                if out.is_purge {
                    self.purge_cycles += out.cost_cycles;
                } else {
                    self.ee_cycles += out.cost_cycles;
                }
                self.overhead_cycles += out.cost_cycles;
            }
        }

        // Producer writes the payload into the IPC buffer and publishes it.
        let payload = self.app.ipc_payload_bytes as u64;
        let nlines = payload.div_ceil(self.cfg.line_bytes as u64).max(1);
        let prod_core = self.procs[prod].tiles[0];
        let (ppid, pcluster) = (self.procs[prod].pid, self.procs[prod].cluster);
        for l in 0..nlines {
            let line = self.ipc_lines.start + (l % self.ipc_lines.clone().count() as u64);
            let paddr = line * self.cfg.line_bytes as u64;
            let data = [(l & 0xff) as u8; 8];
            let req = AccessRequest {
                core: prod_core,
                pid: ppid,
                cluster: pcluster,
                paddr,
                size: 8,
                write: Some(&data),
            };
            let ctx = AccessCtx {
                map: &self.map,
                spatial: self.mode.spatial(),
                ipc_lines: self.ipc_lines.clone(),
            };
            let res = self.mem.access(&ctx, &req)?;
            let at = self.procs[prod].clock;
            self.procs[prod].clock += res.latency;
            self.emit_all(res.events, at);
            self.procs[prod].l1_accesses += 1;
            if res.level != Some(CacheLevel::L1) {
                self.procs[prod].l1_misses += 1;
                self.procs[prod].l2_accesses += 1;
                if res.level == Some(CacheLevel::Dram) {
                    self.procs[prod].l2_misses += 1;
                }
            }
        }
        // Line-targeted fence: publish the payload to the home slice.
        for l in 0..nlines.min(self.ipc_lines.clone().count() as u64) {
            let line = self.ipc_lines.start + l;
            let ctx = AccessCtx {
                map: &self.map,
                spatial: self.mode.spatial(),
                ipc_lines: self.ipc_lines.clone(),
            };
            let evs = self.mem.fence_line(&ctx, prod_core, line);
            let at = self.procs[prod].clock;
            self.emit_all(evs, at);
        }
        let send_at = self.procs[prod].clock;
        self.emit(
            SimEvent {
                time_ns: 0,
                pid: ppid,
                cluster: pcluster,
                kind: EventKind::IpcSend {
                    bytes: self.app.ipc_payload_bytes,
                },
            },
            send_at,
        );

        // Consumer reads once the data is published.
        self.procs[cons].clock = self.procs[cons].clock.max(self.procs[prod].clock);
        let cons_core = self.procs[cons].tiles[0];
        let (cpid, ccluster) = (self.procs[cons].pid, self.procs[cons].cluster);
        for l in 0..nlines {
            let line = self.ipc_lines.start + (l % self.ipc_lines.clone().count() as u64);
            let paddr = line * self.cfg.line_bytes as u64;
            let verdict = secmodel::check_access(
                self.mode,
                self.cfg,
                &self.map,
                ccluster,
                paddr,
                self.ipc_page,
            );
            debug_assert_eq!(verdict, AccessVerdict::Allow, "IPC buffer must be shared");
            let req = AccessRequest {
                core: cons_core,
                pid: cpid,
                cluster: ccluster,
                paddr,
                size: 8,
                write: None,
            };
            let ctx = AccessCtx {
                map: &self.map,
                spatial: self.mode.spatial(),
                ipc_lines: self.ipc_lines.clone(),
            };
            let res = self.mem.access(&ctx, &req)?;
            let at = self.procs[cons].clock;
            self.procs[cons].clock += res.latency;
            self.emit_all(res.events, at);
            self.procs[cons].l1_accesses += 1;
            if res.level != Some(CacheLevel::L1) {
                self.procs[cons].l1_misses += 1;
                self.procs[cons].l2_accesses += 1;
                if res.level == Some(CacheLevel::Dram) {
                    self.procs[cons].l2_misses += 1;
                }
            }
        }
        let recv_at = self.procs[cons].clock;
        self.emit(
            SimEvent {
                time_ns: 0,
                pid: cpid,
                cluster: ccluster,
                kind: EventKind::IpcRecv {
                    bytes: self.app.ipc_payload_bytes,
                },
            },
            recv_at,
        );

        // Enter: the secure side resumes.
        if matches!(self.mode, ArchMode::SgxLike | ArchMode::Mi6) {
            if let Some(spid) = secure_pid {
                let ctx_map = self.map.clone();
                let ctx = AccessCtx {
                    map: &ctx_map,
                    spatial: false,
                    ipc_lines: self.ipc_lines.clone(),
                };
                let out = secmodel::enclave_transition(
                    self.mode,
                    Direction::Enter,
                    self.cfg,
                    &mut self.mem,
                    &ctx,
                    spid,
                )?;
                let at = self.procs[cons].clock;
                self.emit_all(out.events, at);
                if out.is_purge {
                    self.purge_cycles += out.cost_cycles;
                } else {
                    self.ee_cycles += out.cost_cycles;
                }
                self.overhead_cycles += out.cost_cycles;
            }
        }

        let done = self.procs[prod].clock.max(self.procs[cons].clock);
        self.procs[prod].clock = done;
        self.procs[cons].clock = done;
        Ok(())
    }
}

/// Chunk sizes of the producer's instruction stream, one per interaction
/// marker, plus the trailing drain work.
fn producer_chunks(proc: &Process) -> (Vec<u64>, u64) {
    let mut chunks = Vec::new();
    let mut pending = 0u64;
    for phase in &proc.phases {
        if phase.interactions == 0 {
            pending += phase.instructions;
            continue;
        }
        let m = phase.interactions;
        let base = phase.instructions / m;
        let extra = phase.instructions % m;
        for i in 0..m {
            let c = base + u64::from(i < extra);
            chunks.push(pending + c);
            pending = 0;
        }
    }
    (chunks, pending)
}

/// Runs one interactive application under `mode` on `map`.
///
/// Deterministic: identical `(cfg, map, app, mode, seed, opts)` produce
/// bit-identical metrics and logs. The simulation terminates when every
/// interaction and phase has completed.
pub fn run(
    cfg: &MachineConfig,
    map: &ClusterMap,
    app: &InteractiveApp,
    mode: ArchMode,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput, EngineError> {
    cfg.validate()?;
    let report = validate_cluster_map(cfg, map);
    if !report.ok() {
        return Err(EngineError::InvalidMap(report.violations));
    }
    if mode.spatial() && opts.homing == HomingMode::LocalHoming {
        let containment = netsim::verify_containment(cfg, map);
        if !containment.ok() {
            return Err(EngineError::Uncontainable {
                violations: containment.violations.len(),
            });
        }
    }
    app.validate(cfg).map_err(EngineError::InvalidApp)?;

    let mut kernel = SecureKernelState::new(map.clone());
    let mut attest_cost = 0u64;
    for proc in &app.processes {
        let outcome = secmodel::attest(
            &mut kernel,
            Pid(0), // assigned below; attestation keys off the token
            proc.security,
            proc.attestation_token.as_deref(),
            app.declared_signature.as_deref(),
        );
        if proc.security == Cluster::Secure {
            attest_cost += cfg.attest_cycles();
            if outcome == AttestOutcome::Rejected && mode != ArchMode::InsecureBase {
                return Err(EngineError::AttestationFailed {
                    name: proc.name.clone(),
                });
            }
        }
    }

    let mut mem = MemoryHierarchy::new(cfg, opts.homing);

    // Allocate the IPC buffer page first, then each process's footprint in
    // its cluster's regions (or everywhere under the unpartitioned modes).
    let mut region_cursor: BTreeMap<u32, u64> = BTreeMap::new();
    let mut alloc_page = |region: u32| -> u64 {
        let cursor = region_cursor.entry(region).or_insert(0);
        let page = cfg.region_base(region) / cfg.page_bytes + *cursor;
        *cursor += 1;
        page
    };
    let ipc_page = alloc_page(map.ipc_buffer_region);
    let ipc_lines = ipc_page * cfg.lines_per_page()..(ipc_page + 1) * cfg.lines_per_page();

    let insecure_tiles = if mode.spatial() {
        map.cluster_tiles(cfg, Cluster::Insecure)
    } else {
        cfg.usable_tiles()
    };
    if opts.homing == HomingMode::LocalHoming {
        let home = *insecure_tiles
            .first()
            .ok_or_else(|| EngineError::IpcConfig("no insecure slice for IPC buffer".into()))?;
        if mode.spatial() && map.tile_tags[home.0] != TileTag::Insecure {
            return Err(EngineError::IpcConfig(
                "IPC buffer homed outside insecure resources".into(),
            ));
        }
        mem.pages.assign(ipc_page, home);
    }

    let mut procs = Vec::new();
    for (i, proc) in app.processes.iter().enumerate() {
        let pid = Pid(i as u32 + 1);
        let regions: Vec<u32> = if mode.guarded() {
            map.cluster_regions(proc.security)
        } else {
            (0..cfg.region_count()).collect()
        };
        if regions.is_empty() {
            return Err(EngineError::InvalidApp(format!(
                "no DRAM regions available for process '{}'",
                proc.name
            )));
        }
        let mut pages = Vec::with_capacity(proc.footprint_pages as usize);
        for k in 0..proc.footprint_pages {
            pages.push(alloc_page(regions[(k % regions.len() as u64) as usize]));
        }
        // Home pages round-robin over the slices this process may use.
        if opts.homing == HomingMode::LocalHoming {
            let slices = if mode.guarded() {
                map.cluster_tiles(cfg, proc.security)
            } else {
                cfg.usable_tiles()
            };
            if slices.is_empty() {
                return Err(EngineError::InvalidApp(format!(
                    "no slices available for process '{}'",
                    proc.name
                )));
            }
            for (k, &page) in pages.iter().enumerate() {
                mem.pages.assign(page, slices[k % slices.len()]);
            }
        }
        // One generator stream per core the process could ever occupy.
        let streams = cfg.usable_cores.max(proc.threads as usize);
        let core_rngs = (0..streams)
            .map(|c| {
                ChaCha8Rng::from_seed(mix_seed(
                    seed,
                    &[i as u64 + 1, c as u64 + 1, 0xc0de],
                ))
            })
            .collect();
        procs.push(ProcState {
            pid,
            cluster: proc.security,
            tiles: Vec::new(),
            clock: 0,
            phase_idx: 0,
            done_in_phase: 0,
            pages,
            core_rngs,
            access_carry: vec![0.0; streams],
            probe_carry: vec![0.0; streams],
            instructions: 0,
            l1_accesses: 0,
            l1_misses: 0,
            l2_accesses: 0,
            l2_misses: 0,
        });
    }

    let probe_target = map
        .cluster_regions(Cluster::Secure)
        .first()
        .map(|&r| cfg.region_base(r));

    let mut sim = Sim {
        cfg,
        mode,
        app,
        homing: opts.homing,
        map: map.clone(),
        mem,
        kernel,
        ipc_page,
        ipc_lines: ipc_lines.clone(),
        overhead_cycles: attest_cost,
        purge_cycles: 0,
        ee_cycles: attest_cost,
        reconfig_cycles: 0,
        collect: opts.collect_events,
        events: Vec::new(),
        procs,
        probe_target,
    };
    sim.assign_tiles();

    // Cluster modes install their load-balanced map once, at invocation
    // start, before any phase work. Re-homing requires local homing; the
    // hashed diagnostic mode runs on the initial map.
    if mode == ArchMode::Ironhide && sim.homing == HomingMode::LocalHoming {
        if let Some(target) = &opts.reconfig_target {
            let outcome = secmodel::reconfigure(
                &mut sim.kernel,
                cfg,
                &mut sim.mem,
                ipc_lines.clone(),
                app.app_id,
                target,
            )?;
            sim.emit_all(outcome.events, 0);
            sim.reconfig_cycles += outcome.cost_cycles;
            sim.overhead_cycles += outcome.cost_cycles;
            sim.map = target.clone();
            sim.assign_tiles();
        }
    }

    // Producer and consumer of the interaction loop.
    let prod = app.producer_index();
    let cons = app.consumer_index();

    // Processes outside the interaction loop run their phases to completion.
    for p in 0..sim.procs.len() {
        if Some(p) == prod || Some(p) == cons {
            continue;
        }
        let all = sim.remaining_instructions(p);
        sim.exec_chunk(p, all)?;
    }

    if app.interaction_total > 0 {
        let prod = prod.ok_or_else(|| {
            EngineError::InvalidApp("interactions declared but no producer".into())
        })?;
        let cons = cons.unwrap_or(prod);
        let (chunks, drain) = producer_chunks(&app.processes[prod]);
        debug_assert_eq!(chunks.len() as u64, app.interaction_total);
        let cons_total = if cons != prod {
            sim.remaining_instructions(cons)
        } else {
            0
        };
        let k = app.interaction_total;
        let cons_base = cons_total / k;
        let cons_extra = cons_total % k;
        for (i, &chunk) in chunks.iter().enumerate() {
            sim.exec_chunk(prod, chunk)?;
            if cons != prod {
                let c = cons_base + u64::from((i as u64) < cons_extra);
                sim.exec_chunk(cons, c)?;
            }
            sim.interact(prod, cons)?;
        }
        sim.exec_chunk(prod, drain)?;
        let rest = sim.remaining_instructions(prod);
        sim.exec_chunk(prod, rest)?;
        if cons != prod {
            let rest = sim.remaining_instructions(cons);
            sim.exec_chunk(cons, rest)?;
        }
    } else {
        for p in [prod, cons].into_iter().flatten() {
            let all = sim.remaining_instructions(p);
            sim.exec_chunk(p, all)?;
        }
    }

    // Metrics: compute is the slowest process; overheads stalled everyone.
    let compute_cycles = sim.procs.iter().map(|p| p.clock).max().unwrap_or(0);
    let completion_cycles =
        compute_cycles + sim.purge_cycles + sim.ee_cycles + sim.reconfig_cycles;
    let processes = sim
        .procs
        .iter()
        .zip(&app.processes)
        .map(|(s, p)| ProcMetrics {
            pid: s.pid.0,
            name: p.name.clone(),
            instructions: s.instructions,
            l1_accesses: s.l1_accesses,
            l1_misses: s.l1_misses,
            l2_accesses: s.l2_accesses,
            l2_misses: s.l2_misses,
            l1_miss_rate: if s.l1_accesses == 0 {
                0.0
            } else {
                s.l1_misses as f64 / s.l1_accesses as f64
            },
            l2_miss_rate: if s.l2_accesses == 0 {
                0.0
            } else {
                s.l2_misses as f64 / s.l2_accesses as f64
            },
            mpki: if s.instructions == 0 {
                0.0
            } else {
                s.l2_misses as f64 * 1000.0 / s.instructions as f64
            },
        })
        .collect();
    let metrics = RunMetrics {
        completion_s: cfg.cycles_to_seconds(completion_cycles),
        compute_s: cfg.cycles_to_seconds(compute_cycles),
        purge_s: cfg.cycles_to_seconds(sim.purge_cycles),
        entry_exit_s: cfg.cycles_to_seconds(sim.ee_cycles),
        reconfig_s: cfg.cycles_to_seconds(sim.reconfig_cycles),
        completion_cycles,
        compute_cycles,
        purge_cycles: sim.purge_cycles,
        entry_exit_cycles: sim.ee_cycles,
        reconfig_cycles: sim.reconfig_cycles,
        interactions: app.interaction_total,
        cores_secure: sim.map.count_tiles(Cluster::Secure) as u32,
        cores_insecure: sim.map.count_tiles(Cluster::Insecure) as u32,
        processes,
    };

    let log = if opts.collect_events {
        let mut events = std::mem::take(&mut sim.events);
        events.sort_by_key(|e| e.time_ns);
        let header = run_header(
            cfg,
            map,
            mode,
            &opts.workload_name,
            seed,
            ipc_lines.start,
            ipc_lines.clone().count() as u64,
        );
        Some(EventLog { header, events })
    } else {
        None
    };

    // The slices of a partitioned run must each serve a single cluster.
    #[cfg(debug_assertions)]
    if mode.guarded() && opts.homing == HomingMode::LocalHoming {
        for t in cfg.usable_tiles() {
            let mut clusters: Vec<Cluster> = sim.mem.l2[t.0]
                .iter_valid()
                .filter(|l| !ipc_lines.contains(&l.line_addr))
                .map(|l| l.owner_cluster)
                .collect();
            clusters.dedup();
            debug_assert!(
                clusters.len() <= 1,
                "slice {t:?} holds lines of both clusters"
            );
        }
    }

    Ok(RunOutput { metrics, log })
}

/// Raw and normalized MPKI of one process as a function of core count.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MpkiProfile {
    pub raw: Vec<(u32, f64)>,
    pub trend: MpkiTrend,
}

/// Profiles a process standalone at each core count, recording shared-cache
/// misses per kilo-instruction, and normalizes the trend. Interaction
/// markers are ignored; the process runs unprotected on a machine restricted
/// to the first `c` usable cores.
pub fn profile_mpki(
    cfg: &MachineConfig,
    process: &Process,
    core_counts: &[u32],
    seed: u64,
) -> Result<MpkiProfile, EngineError> {
    if core_counts.is_empty()
        || core_counts[0] < 1
        || core_counts.windows(2).any(|w| w[0] >= w[1])
        || *core_counts.last().unwrap() as usize > cfg.usable_cores
    {
        return Err(EngineError::InvalidApp(
            "core_counts must be strictly increasing, within the machine".into(),
        ));
    }
    let mut standalone = process.clone();
    standalone.security = Cluster::Insecure;
    standalone.attestation_token = None;
    for phase in &mut standalone.phases {
        phase.interactions = 0;
    }
    let mut raw = Vec::with_capacity(core_counts.len());
    for &c in core_counts {
        let mut map = ClusterMap::single_cluster(cfg);
        for (i, t) in cfg.usable_tiles().into_iter().enumerate() {
            if i >= c as usize {
                map.tile_tags[t.0] = TileTag::Unused;
            }
        }
        let app = InteractiveApp {
            app_id: AppId(0),
            name: format!("profile-{}", process.name),
            processes: vec![standalone.clone()],
            interaction_rate: 1.0,
            interaction_total: 0,
            ipc_payload_bytes: 64,
            declared_signature: None,
        };
        let out = run(
            cfg,
            &map,
            &app,
            ArchMode::InsecureBase,
            seed,
            &RunOptions {
                workload_name: app.name.clone(),
                ..RunOptions::default()
            },
        )?;
        let m = &out.metrics.processes[0];
        let mpki = if m.instructions == 0 {
            0.0
        } else {
            m.l2_misses as f64 * 1000.0 / m.instructions as f64
        };
        raw.push((c, mpki));
    }
    let trend = normalize_trend(&raw)?;
    Ok(MpkiProfile { raw, trend })
}
