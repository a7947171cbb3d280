//! Security protocols of the four architecture modes and the secure kernel.
//!
//! - `InsecureBase`: no protection; interactions are free.
//! - `SgxLike`: enclave entry/exit charges a constant pipeline-flush and
//!   cryptography cost; caches are never purged.
//! - `Mi6`: static L2/DRAM partitioning plus a full purge of the time-shared
//!   private state and memory controller queues on enclave transitions, and
//!   a hardware guard on cross-cluster accesses.
//! - `Ironhide`: spatially isolated clusters with the same guard; no
//!   per-interaction transitions, at most one cluster reconfiguration per
//!   application invocation.

use crate::events::{AppId, EventKind, FlushScope, Pid, SimEvent};
use crate::machine::{
    validate_cluster_map, Cluster, ClusterMap, MachineConfig, MapViolation, TileId, TileTag,
};
use crate::memsim::{AccessCtx, MemError, MemoryHierarchy};
use crate::netsim;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Events and kernel traffic are attributed to this pid.
pub const KERNEL_PID: Pid = Pid(0);

/// The architecture mode of one run.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ArchMode {
    InsecureBase,
    SgxLike,
    Mi6,
    Ironhide,
}

impl ArchMode {
    /// Whether cores and private caches are spatially partitioned between
    /// clusters (as opposed to time-shared).
    pub fn spatial(self) -> bool {
        matches!(self, ArchMode::Ironhide)
    }

    /// Whether the mode enforces the L2/DRAM partition and the
    /// cross-cluster access guard.
    pub fn guarded(self) -> bool {
        matches!(self, ArchMode::Mi6 | ArchMode::Ironhide)
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchMode::InsecureBase => "insecure",
            ArchMode::SgxLike => "sgx",
            ArchMode::Mi6 => "mi6",
            ArchMode::Ironhide => "ironhide",
        }
    }
}

impl std::str::FromStr for ArchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "insecure" | "insecure_base" | "base" => Ok(ArchMode::InsecureBase),
            "sgx" | "sgx_like" | "sgxlike" => Ok(ArchMode::SgxLike),
            "mi6" => Ok(ArchMode::Mi6),
            "ironhide" => Ok(ArchMode::Ironhide),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

impl std::fmt::Display for ArchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Verdict of the hardware access guard.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum AccessVerdict {
    Allow,
    /// Cross-cluster request held until it resolves; see [`resolve_stall`].
    Stall,
    /// Resolved speculative: dropped with no state change.
    Discard,
    /// Resolved non-speculative: dropped with no state change, exception
    /// delivered.
    Fault,
}

#[derive(Debug, Error)]
pub enum SecError {
    #[error("{op} is not part of the {mode} protocol")]
    Protocol { mode: ArchMode, op: &'static str },
    #[error("cluster reconfiguration bound exceeded for app {0:?} (limit one per invocation)")]
    ReconfigBound(AppId),
    #[error("new cluster map is invalid: {0:?}")]
    InvalidMap(Vec<MapViolation>),
    #[error("new cluster map is not containable ({violations} routing pairs escape)")]
    Uncontainable { violations: usize },
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error("no surviving slice for cluster {0} after reconfiguration")]
    NoSurvivingSlice(Cluster),
}

/// Trusted software state: which processes were attested, how often each app
/// reconfigured, and the map currently installed.
#[derive(Clone, Debug)]
pub struct SecureKernelState {
    pub attested: BTreeSet<Pid>,
    pub reconfig_count: BTreeMap<AppId, u32>,
    pub current_map: ClusterMap,
}

impl SecureKernelState {
    pub fn new(map: ClusterMap) -> Self {
        SecureKernelState {
            attested: BTreeSet::new(),
            reconfig_count: BTreeMap::new(),
            current_map: map,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AttestOutcome {
    Admitted,
    Rejected,
}

/// Abstract signature check. Secure processes are admitted when their token
/// matches the workload's declared signature; insecure processes are
/// admitted to the insecure cluster without attestation. Rejected processes
/// never run on secure tiles.
pub fn attest(
    kernel: &mut SecureKernelState,
    pid: Pid,
    security: Cluster,
    token: Option<&str>,
    declared_signature: Option<&str>,
) -> AttestOutcome {
    match security {
        Cluster::Insecure => AttestOutcome::Admitted,
        Cluster::Secure => match (token, declared_signature) {
            (Some(t), Some(d)) if t == d => {
                kernel.attested.insert(pid);
                AttestOutcome::Admitted
            }
            _ => AttestOutcome::Rejected,
        },
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Direction {
    Enter,
    Exit,
}

/// Cost and side effects of one enclave transition.
#[derive(Clone, Debug, Default)]
pub struct TransitionOutcome {
    pub cost_cycles: u64,
    /// Cycles that belong in the purge bucket (vs. entry/exit).
    pub is_purge: bool,
    pub events: Vec<SimEvent>,
}

/// Performs one enclave entry or exit for `pid`.
///
/// SgxLike charges the constant entry/exit cost (pipeline flush plus the
/// cryptography and integrity work folded into it) and touches no cache
/// state. Mi6 additionally purges every time-shared L1/TLB and drains all
/// memory controller queues; under the default pairing the purge is
/// performed and charged once per interaction, on the exit.
pub fn enclave_transition(
    mode: ArchMode,
    direction: Direction,
    cfg: &MachineConfig,
    mem: &mut MemoryHierarchy,
    ctx: &AccessCtx,
    pid: Pid,
) -> Result<TransitionOutcome, SecError> {
    let marker = SimEvent {
        time_ns: 0,
        pid,
        cluster: Cluster::Secure,
        kind: match direction {
            Direction::Enter => EventKind::EnclaveEnter,
            Direction::Exit => EventKind::EnclaveExit,
        },
    };
    match mode {
        ArchMode::InsecureBase | ArchMode::Ironhide => Err(SecError::Protocol {
            mode,
            op: "enclave_transition",
        }),
        ArchMode::SgxLike => Ok(TransitionOutcome {
            cost_cycles: cfg.entry_exit_cycles(),
            is_purge: false,
            events: vec![marker],
        }),
        ArchMode::Mi6 => {
            let mut out = TransitionOutcome {
                cost_cycles: 0,
                is_purge: true,
                events: vec![marker],
            };
            if direction == Direction::Exit {
                out.cost_cycles = cfg.purge_event_cycles();
                let tiles = cfg.usable_tiles();
                let flush = mem.flush_invalidate_tiles(ctx, &tiles, KERNEL_PID);
                out.events.extend(flush.events);
                for mc in 0..cfg.mc_count {
                    let drained = mem.purge_mc(mc);
                    if drained > 0 {
                        out.events.push(SimEvent {
                            time_ns: 0,
                            pid: KERNEL_PID,
                            cluster: Cluster::Secure,
                            kind: EventKind::Flush {
                                scope: FlushScope::Mc(mc),
                                writebacks: drained as u32,
                            },
                        });
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Hardware guard on memory accesses. Allows in-cluster accesses and the
/// shared IPC buffer; under the guarded modes a cross-cluster request stalls
/// until resolved (see [`resolve_stall`]). Unguarded modes allow everything.
pub fn check_access(
    mode: ArchMode,
    cfg: &MachineConfig,
    map: &ClusterMap,
    actor_cluster: Cluster,
    paddr: u64,
    ipc_page: u64,
) -> AccessVerdict {
    if !mode.guarded() {
        return AccessVerdict::Allow;
    }
    if cfg.page_of_addr(paddr) == ipc_page {
        return AccessVerdict::Allow;
    }
    match cfg.region_of_addr(paddr) {
        Some(region) if map.region_tags[region as usize] == actor_cluster => AccessVerdict::Allow,
        // Unmapped addresses fault in the memory system; the guard only
        // polices mapped cross-cluster requests.
        None => AccessVerdict::Allow,
        Some(_) => AccessVerdict::Stall,
    }
}

/// Resolves a stalled request: speculative requests are discarded without
/// state change; non-speculative ones fault (also without state change).
pub fn resolve_stall(speculative: bool) -> AccessVerdict {
    if speculative {
        AccessVerdict::Discard
    } else {
        AccessVerdict::Fault
    }
}

/// Side effects of one cluster reconfiguration.
#[derive(Clone, Debug, Default)]
pub struct ReconfigOutcome {
    pub cost_cycles: u64,
    pub reassigned_tiles: Vec<TileId>,
    pub rehomed_pages: usize,
    pub events: Vec<SimEvent>,
}

/// Executes the dynamic hardware isolation sequence: stall all cores, flush
/// the reassigned tiles' private state, re-home every page whose slice
/// changed hands, then install the new map. Bounded to once per application
/// invocation.
pub fn reconfigure(
    kernel: &mut SecureKernelState,
    cfg: &MachineConfig,
    mem: &mut MemoryHierarchy,
    ipc_lines: std::ops::Range<u64>,
    app: AppId,
    new_map: &ClusterMap,
) -> Result<ReconfigOutcome, SecError> {
    let count = kernel.reconfig_count.entry(app).or_insert(0);
    if *count >= 1 {
        return Err(SecError::ReconfigBound(app));
    }
    let report = validate_cluster_map(cfg, new_map);
    if !report.ok() {
        return Err(SecError::InvalidMap(report.violations));
    }
    let containment = netsim::verify_containment(cfg, new_map);
    if !containment.ok() {
        return Err(SecError::Uncontainable {
            violations: containment.violations.len(),
        });
    }

    let old_map = kernel.current_map.clone();
    let reassigned: Vec<TileId> = cfg
        .usable_tiles()
        .into_iter()
        .filter(|t| old_map.tile_tags[t.0] != new_map.tile_tags[t.0])
        .collect();

    let mut out = ReconfigOutcome {
        cost_cycles: cfg.reconfig_cycles(),
        reassigned_tiles: reassigned.clone(),
        rehomed_pages: 0,
        events: Vec::new(),
    };

    // Flush-and-invalidate the moved cores' private state under the old map
    // (the handoff completes only after the data movement).
    let old_ctx = AccessCtx {
        map: &old_map,
        spatial: true,
        ipc_lines: ipc_lines.clone(),
    };
    let flush = mem.flush_invalidate_tiles(&old_ctx, &reassigned, KERNEL_PID);
    out.events.extend(flush.events);

    // Re-home pages away from slices that changed cluster. A page belongs to
    // the cluster of its (static) DRAM region; it must move whenever its
    // slice's new tag differs from that cluster.
    let mut rr: BTreeMap<Cluster, usize> = BTreeMap::new();
    for &tile in &reassigned {
        let new_tag = new_map.tile_tags[tile.0];
        let pages = mem.pages.pages_homed_on(tile);
        for page in pages {
            let paddr = page * cfg.page_bytes;
            let owner = match cfg.region_of_addr(paddr) {
                Some(r) => old_map.region_tags[r as usize],
                None => continue,
            };
            if new_tag == TileTag::from(owner) {
                continue;
            }
            let survivors = new_map.cluster_tiles(cfg, owner);
            if survivors.is_empty() {
                return Err(SecError::NoSurvivingSlice(owner));
            }
            let idx = rr.entry(owner).or_insert(0);
            let dest = survivors[*idx % survivors.len()];
            *idx += 1;
            let rehome = mem.rehome(&old_ctx, &[page], dest, KERNEL_PID)?;
            out.rehomed_pages += 1;
            out.events.extend(rehome.events);
        }
    }

    kernel.current_map = new_map.clone();
    *kernel.reconfig_count.get_mut(&app).expect("entry created") += 1;
    out.events.push(SimEvent {
        time_ns: 0,
        pid: KERNEL_PID,
        cluster: Cluster::Secure,
        kind: EventKind::Reconfig {
            app,
            map: new_map.clone(),
        },
    });
    Ok(out)
}

/// Side effects of an application context switch on one cluster.
#[derive(Clone, Debug, Default)]
pub struct SwitchOutcome {
    pub flushed_tiles: usize,
    pub drained_mcs: usize,
    pub events: Vec<SimEvent>,
}

/// Application context switch on `cluster`. Mutually distrusting processes
/// (different apps) sharing the secure cluster purge its per-core state and
/// drain its controllers; processes of one app co-execute without purging,
/// and the insecure cluster always switches for free.
pub fn context_switch(
    cfg: &MachineConfig,
    mem: &mut MemoryHierarchy,
    map: &ClusterMap,
    ipc_lines: std::ops::Range<u64>,
    outgoing_app: AppId,
    incoming_app: AppId,
    cluster: Cluster,
) -> SwitchOutcome {
    if outgoing_app == incoming_app || cluster == Cluster::Insecure {
        return SwitchOutcome::default();
    }
    let ctx = AccessCtx {
        map,
        spatial: true,
        ipc_lines,
    };
    let tiles = map.cluster_tiles(cfg, Cluster::Secure);
    let flush = mem.flush_invalidate_tiles(&ctx, &tiles, KERNEL_PID);
    let mut out = SwitchOutcome {
        flushed_tiles: tiles.len(),
        drained_mcs: 0,
        events: flush.events,
    };
    for mc in map.cluster_mcs(Cluster::Secure) {
        let drained = mem.purge_mc(mc);
        out.drained_mcs += 1;
        if drained > 0 {
            out.events.push(SimEvent {
                time_ns: 0,
                pid: KERNEL_PID,
                cluster: Cluster::Secure,
                kind: EventKind::Flush {
                    scope: FlushScope::Mc(mc),
                    writebacks: drained as u32,
                },
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::default_config;
    use crate::memsim::{AccessRequest, HomingMode};

    fn setup() -> (MachineConfig, ClusterMap, MemoryHierarchy) {
        let cfg = default_config();
        let map = ClusterMap::contiguous_split(&cfg, 32);
        let mem = MemoryHierarchy::new(&cfg, HomingMode::LocalHoming);
        (cfg, map, mem)
    }

    fn warm(cfg: &MachineConfig, map: &ClusterMap, mem: &mut MemoryHierarchy, core: usize) {
        for p in 0..4 {
            mem.pages.assign(p, TileId(core));
        }
        let ctx = AccessCtx {
            map,
            spatial: false,
            ipc_lines: 0..0,
        };
        let w = [3u8; 8];
        for i in 0..16u64 {
            let req = AccessRequest {
                core: TileId(core),
                pid: Pid(1),
                cluster: Cluster::Secure,
                paddr: i * cfg.line_bytes as u64,
                size: 8,
                write: (i % 2 == 0).then_some(&w[..]),
            };
            mem.access(&ctx, &req).unwrap();
        }
    }

    #[test]
    fn attest_accepts_matching_token() {
        let (_cfg, map, _mem) = setup();
        let mut kernel = SecureKernelState::new(map);
        let out = attest(&mut kernel, Pid(1), Cluster::Secure, Some("sig"), Some("sig"));
        assert_eq!(out, AttestOutcome::Admitted);
        assert!(kernel.attested.contains(&Pid(1)));
    }

    #[test]
    fn attest_rejects_bad_token() {
        let (_cfg, map, _mem) = setup();
        let mut kernel = SecureKernelState::new(map);
        let out = attest(&mut kernel, Pid(1), Cluster::Secure, Some("bad"), Some("sig"));
        assert_eq!(out, AttestOutcome::Rejected);
        assert!(!kernel.attested.contains(&Pid(1)));
    }

    #[test]
    fn insecure_process_needs_no_attestation() {
        let (_cfg, map, _mem) = setup();
        let mut kernel = SecureKernelState::new(map);
        let out = attest(&mut kernel, Pid(2), Cluster::Insecure, None, Some("sig"));
        assert_eq!(out, AttestOutcome::Admitted);
        assert!(kernel.attested.is_empty());
    }

    #[test]
    fn sgx_pair_costs_ten_microseconds_and_no_cache_flush() {
        let (cfg, map, mut mem) = setup();
        warm(&cfg, &map, &mut mem, 20);
        let valid_before = mem.l1_valid_total();
        let ctx = AccessCtx {
            map: &map,
            spatial: false,
            ipc_lines: 0..0,
        };
        let mut total = 0;
        for dir in [Direction::Exit, Direction::Enter] {
            let out = enclave_transition(ArchMode::SgxLike, dir, &cfg, &mut mem, &ctx, Pid(1))
                .unwrap();
            total += out.cost_cycles;
            assert!(out
                .events
                .iter()
                .all(|e| !matches!(e.kind, EventKind::Flush { .. })));
        }
        assert_eq!(total, 10_000); // 10us at 1GHz
        assert_eq!(mem.l1_valid_total(), valid_before);
    }

    #[test]
    fn mi6_exit_purges_everything() {
        let (cfg, map, mut mem) = setup();
        let first_usable = cfg.usable_tiles()[0].0;
        warm(&cfg, &map, &mut mem, first_usable);
        warm(&cfg, &map, &mut mem, 30);
        mem.mc[0].enqueue_write(1);
        mem.mc[3].enqueue_write(2);
        let ctx = AccessCtx {
            map: &map,
            spatial: false,
            ipc_lines: 0..0,
        };
        let out =
            enclave_transition(ArchMode::Mi6, Direction::Exit, &cfg, &mut mem, &ctx, Pid(1))
                .unwrap();
        assert_eq!(out.cost_cycles, cfg.purge_event_cycles());
        assert!(out.is_purge);
        assert_eq!(mem.l1_valid_total(), 0);
        assert!(mem.all_mc_empty());
        assert!(out
            .events
            .iter()
            .any(|e| matches!(e.kind, EventKind::Flush { .. })));
    }

    #[test]
    fn transition_is_a_protocol_error_elsewhere() {
        let (cfg, map, mut mem) = setup();
        let ctx = AccessCtx {
            map: &map,
            spatial: false,
            ipc_lines: 0..0,
        };
        for mode in [ArchMode::InsecureBase, ArchMode::Ironhide] {
            assert!(matches!(
                enclave_transition(mode, Direction::Exit, &cfg, &mut mem, &ctx, Pid(1)),
                Err(SecError::Protocol { .. })
            ));
        }
    }

    #[test]
    fn guard_verdicts() {
        let (cfg, map, _mem) = setup();
        let ipc_page = (map.ipc_buffer_region as u64 * cfg.region_bytes) / cfg.page_bytes;
        let secure_addr = 0u64; // region 0 is secure in the half split
        // Unguarded modes allow everything.
        assert_eq!(
            check_access(ArchMode::SgxLike, &cfg, &map, Cluster::Insecure, secure_addr, ipc_page),
            AccessVerdict::Allow
        );
        // Insecure -> secure stalls, then resolves by speculation flag.
        assert_eq!(
            check_access(ArchMode::Mi6, &cfg, &map, Cluster::Insecure, secure_addr, ipc_page),
            AccessVerdict::Stall
        );
        assert_eq!(resolve_stall(true), AccessVerdict::Discard);
        assert_eq!(resolve_stall(false), AccessVerdict::Fault);
        // The secure side may read the IPC buffer.
        let ipc_addr = ipc_page * cfg.page_bytes;
        assert_eq!(
            check_access(ArchMode::Ironhide, &cfg, &map, Cluster::Secure, ipc_addr, ipc_page),
            AccessVerdict::Allow
        );
    }

    #[test]
    fn discarded_access_is_state_neutral() {
        let (cfg, map, mut mem) = setup();
        warm(&cfg, &map, &mut mem, 5);
        let before = mem.clone();
        let verdict = check_access(ArchMode::Mi6, &cfg, &map, Cluster::Insecure, 0, u64::MAX);
        assert_eq!(verdict, AccessVerdict::Stall);
        assert_eq!(resolve_stall(true), AccessVerdict::Discard);
        // The discarded request never reaches the hierarchy.
        assert_eq!(mem, before);
    }

    #[test]
    fn reconfigure_shrinks_secure_cluster() {
        let (cfg, map, mut mem) = setup();
        let mut kernel = SecureKernelState::new(map.clone());
        // Home secure pages on the four tiles that will move clusters
        // (usable tiles 28..32) and warm their L1s.
        let usable = cfg.usable_tiles();
        let moving: Vec<TileId> = usable[28..32].to_vec();
        for (i, &t) in moving.iter().enumerate() {
            mem.pages.assign(i as u64, t);
        }
        let ctx = AccessCtx {
            map: &map,
            spatial: true,
            ipc_lines: 0..0,
        };
        let w = [7u8; 8];
        for (i, &t) in moving.iter().enumerate() {
            let req = AccessRequest {
                core: t,
                pid: Pid(1),
                cluster: Cluster::Secure,
                paddr: i as u64 * cfg.page_bytes,
                size: 8,
                write: Some(&w),
            };
            mem.access(&ctx, &req).unwrap();
        }
        let new_map = ClusterMap::contiguous_split(&cfg, 28);
        let out = reconfigure(&mut kernel, &cfg, &mut mem, 0..0, AppId(1), &new_map).unwrap();
        assert_eq!(out.reassigned_tiles, moving);
        assert_eq!(out.rehomed_pages, 4);
        for &t in &moving {
            assert_eq!(mem.l1[t.0].valid_count(), 0);
            assert_eq!(
                mem.pages.pages_homed_on(t).len(),
                0,
                "secure pages left on reassigned slice"
            );
        }
        for i in 0..4u64 {
            let home = mem.pages.home_of_page(i).unwrap();
            assert_eq!(new_map.tile_tags[home.0], TileTag::Secure);
        }
        assert_eq!(kernel.current_map, new_map);
    }

    #[test]
    fn second_reconfiguration_is_rejected() {
        let (cfg, map, mut mem) = setup();
        let mut kernel = SecureKernelState::new(map);
        let first = ClusterMap::contiguous_split(&cfg, 30);
        reconfigure(&mut kernel, &cfg, &mut mem, 0..0, AppId(1), &first).unwrap();
        let second = ClusterMap::contiguous_split(&cfg, 20);
        assert!(matches!(
            reconfigure(&mut kernel, &cfg, &mut mem, 0..0, AppId(1), &second),
            Err(SecError::ReconfigBound(AppId(1)))
        ));
    }

    #[test]
    fn switch_between_apps_purges_secure_cluster_only() {
        let (cfg, map, mut mem) = setup();
        let secure_tile = map.cluster_tiles(&cfg, Cluster::Secure)[0];
        let insecure_tile = map.cluster_tiles(&cfg, Cluster::Insecure)[0];
        warm(&cfg, &map, &mut mem, secure_tile.0);
        warm(&cfg, &map, &mut mem, insecure_tile.0);
        mem.mc[0].enqueue_write(7);
        let out = context_switch(&cfg, &mut mem, &map, 0..0, AppId(1), AppId(2), Cluster::Secure);
        assert!(out.flushed_tiles > 0);
        assert_eq!(mem.l1[secure_tile.0].valid_count(), 0);
        assert!(mem.l1[insecure_tile.0].valid_count() > 0);
        assert!(mem.mc[0].is_empty());

        // Same app: no purge. Insecure cluster: no purge.
        warm(&cfg, &map, &mut mem, secure_tile.0);
        let same = context_switch(&cfg, &mut mem, &map, 0..0, AppId(3), AppId(3), Cluster::Secure);
        assert!(same.events.is_empty());
        assert!(mem.l1[secure_tile.0].valid_count() > 0);
        let insec =
            context_switch(&cfg, &mut mem, &map, 0..0, AppId(1), AppId(2), Cluster::Insecure);
        assert!(insec.events.is_empty());
    }
}
