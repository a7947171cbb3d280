//! The simulated memory system: per-tile private L1 caches and TLBs,
//! distributed shared L2 slices, DRAM regions behind memory controllers, and
//! the purge/flush/re-home primitives the isolation protocols are built on.
//!
//! The hierarchy is functional: lines carry real bytes, so a later read
//! observes the last written value and miss rates emerge from actual
//! replacement behavior. One hierarchy instance is owned by exactly one
//! simulation run and mutated sequentially.

mod cache;

pub use cache::{CacheLineState, EvictedLine, SetAssocCache, Tlb};

use crate::events::{CacheLevel, EventKind, Pid, SimEvent};
use crate::machine::{Cluster, ClusterMap, MachineConfig, TileId};
use crate::netsim::{self, PacketKind, RoutePolicy};
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MemError {
    #[error("page fault: address {paddr:#x} is not mapped")]
    PageFault { paddr: u64 },
    #[error("re-homing requires local homing; the page map is hashed per line")]
    HashedRehome,
}

/// Page-to-slice placement policy.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomingMode {
    /// Every line of a page maps to the page's single home slice.
    LocalHoming,
    /// Lines are striped across all active slices; defeats isolation and
    /// exists to demonstrate exactly that.
    HashedPerLine,
}

/// Page placement state. Under local homing every mapped page has one home
/// slice; under hashed homing the home is a pure function of the line index.
#[derive(Clone, Debug, PartialEq)]
pub struct PageMap {
    pub mode: HomingMode,
    page_home: BTreeMap<u64, TileId>,
    slice_pages: BTreeMap<TileId, BTreeSet<u64>>,
    hashed_slices: Vec<TileId>,
    lines_per_page: u64,
}

impl PageMap {
    pub fn new(mode: HomingMode, hashed_slices: Vec<TileId>, lines_per_page: u64) -> Self {
        PageMap {
            mode,
            page_home: BTreeMap::new(),
            slice_pages: BTreeMap::new(),
            hashed_slices,
            lines_per_page,
        }
    }

    pub fn assign(&mut self, page: u64, home: TileId) {
        if let Some(old) = self.page_home.insert(page, home) {
            if let Some(set) = self.slice_pages.get_mut(&old) {
                set.remove(&page);
            }
        }
        self.slice_pages.entry(home).or_default().insert(page);
    }

    /// Home slice for a line address.
    pub fn home_of_line(&self, line: u64) -> Result<TileId, MemError> {
        match self.mode {
            HomingMode::LocalHoming => {
                let page = line / self.lines_per_page;
                self.page_home.get(&page).copied().ok_or(MemError::PageFault {
                    paddr: line * 64, // reported at line granularity
                })
            }
            HomingMode::HashedPerLine => {
                let idx = (line % self.hashed_slices.len() as u64) as usize;
                Ok(self.hashed_slices[idx])
            }
        }
    }

    pub fn home_of_page(&self, page: u64) -> Option<TileId> {
        self.page_home.get(&page).copied()
    }

    pub fn pages_homed_on(&self, slice: TileId) -> Vec<u64> {
        self.slice_pages
            .get(&slice)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn mapped_pages(&self) -> impl Iterator<Item = (&u64, &TileId)> {
        self.page_home.iter()
    }
}

/// Bounded FIFO of pending writes inside one memory controller. Data commits
/// to DRAM immediately; the queue models purge-relevant occupancy only.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct McQueue {
    queue: VecDeque<u64>,
    depth: usize,
}

impl McQueue {
    pub fn new(depth: usize) -> Self {
        McQueue {
            queue: VecDeque::with_capacity(depth),
            depth,
        }
    }

    pub fn enqueue_write(&mut self, line: u64) {
        if self.queue.len() == self.depth {
            self.queue.pop_front();
        }
        self.queue.push_back(line);
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Drains every pending entry; returns how many were drained.
    pub fn purge(&mut self) -> usize {
        let n = self.queue.len();
        self.queue.clear();
        n
    }
}

/// Sparse backing store. Unwritten lines read as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Dram {
    line_bytes: usize,
    lines: HashMap<u64, Box<[u8]>>,
}

impl Dram {
    pub fn new(line_bytes: usize) -> Self {
        Dram {
            line_bytes,
            lines: HashMap::new(),
        }
    }

    pub fn copy_line(&self, line: u64) -> Box<[u8]> {
        self.lines
            .get(&line)
            .cloned()
            .unwrap_or_else(|| vec![0u8; self.line_bytes].into_boxed_slice())
    }

    pub fn write_line(&mut self, line: u64, data: &[u8]) {
        self.lines.insert(line, data.into());
    }
}

/// How far an access had to go.
pub use crate::events::CacheLevel as AccessLevel;

/// Structures an eviction can originate from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructureRef {
    L1(TileId),
    L2(TileId),
    Tlb(TileId),
}

/// A line displaced by an access.
#[derive(Clone, Debug, PartialEq)]
pub struct Eviction {
    pub structure: StructureRef,
    pub line: u64,
    pub was_dirty: bool,
}

/// Outcome of one simulated access. Event timestamps are left at zero; the
/// engine stamps them with the issuing thread's wall-clock time.
#[derive(Clone, Debug, Default)]
pub struct AccessResult {
    pub latency: u64,
    pub level: Option<CacheLevel>,
    pub evictions: Vec<Eviction>,
    pub events: Vec<SimEvent>,
    /// Bytes observed by a read; empty for writes.
    pub data: Vec<u8>,
}

/// One access request. `write` carries the bytes to store; `None` is a read
/// of `size` bytes. The request must not straddle a cache line.
#[derive(Clone, Debug)]
pub struct AccessRequest<'a> {
    pub core: TileId,
    pub pid: Pid,
    pub cluster: Cluster,
    pub paddr: u64,
    pub size: usize,
    pub write: Option<&'a [u8]>,
}

/// Per-call routing context. `spatial` selects containment-aware policy
/// choice (cluster modes); otherwise everything routes X-Y.
pub struct AccessCtx<'a> {
    pub map: &'a ClusterMap,
    pub spatial: bool,
    pub ipc_lines: std::ops::Range<u64>,
}

impl AccessCtx<'_> {
    fn is_ipc(&self, line: u64) -> bool {
        self.ipc_lines.contains(&line)
    }
}

/// Result of flushing a set of tiles.
#[derive(Clone, Debug, Default)]
pub struct FlushReport {
    pub writebacks: usize,
    pub events: Vec<SimEvent>,
}

/// Result of re-homing a set of pages.
#[derive(Clone, Debug, Default)]
pub struct RehomeReport {
    pub moved_lines: usize,
    pub events: Vec<SimEvent>,
}

/// The full memory system of one simulated machine.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryHierarchy {
    cfg: MachineConfig,
    pub l1: Vec<SetAssocCache>,
    pub tlb: Vec<Tlb>,
    pub l2: Vec<SetAssocCache>,
    pub mc: Vec<McQueue>,
    pub dram: Dram,
    pub pages: PageMap,
}

impl MemoryHierarchy {
    pub fn new(cfg: &MachineConfig, homing: HomingMode) -> Self {
        let tiles = cfg.tile_count();
        let hashed_slices = cfg.usable_tiles();
        MemoryHierarchy {
            cfg: cfg.clone(),
            l1: (0..tiles)
                .map(|_| SetAssocCache::new(cfg.l1_bytes, cfg.l1_assoc, cfg.line_bytes))
                .collect(),
            tlb: (0..tiles).map(|_| Tlb::new(cfg.tlb_entries)).collect(),
            l2: (0..tiles)
                .map(|_| SetAssocCache::new(cfg.l2_slice_bytes, cfg.l2_assoc, cfg.line_bytes))
                .collect(),
            mc: (0..cfg.mc_count)
                .map(|_| McQueue::new(cfg.mc_queue_depth))
                .collect(),
            dram: Dram::new(cfg.line_bytes),
            pages: PageMap::new(homing, hashed_slices, cfg.lines_per_page()),
        }
    }

    pub fn config(&self) -> &MachineConfig {
        &self.cfg
    }

    /// Home slice for a physical address under the current page map.
    pub fn home_of(&self, paddr: u64) -> Result<TileId, MemError> {
        if self.cfg.region_of_addr(paddr).is_none() {
            return Err(MemError::PageFault { paddr });
        }
        self.pages
            .home_of_line(self.cfg.line_of_addr(paddr))
            .map_err(|_| MemError::PageFault { paddr })
    }

    fn hop_events(
        &self,
        ctx: &AccessCtx,
        src: TileId,
        dst: crate::machine::MeshCoord,
        kind: PacketKind,
        pid: Pid,
        cluster: Cluster,
        out: &mut Vec<SimEvent>,
    ) -> usize {
        let src_c = self.cfg.coord_of(src);
        let policy = if !ctx.spatial || kind == PacketKind::Ipc {
            RoutePolicy::Xy
        } else {
            netsim::choose_policy(&self.cfg, ctx.map, src_c, dst, kind)
                .unwrap_or(RoutePolicy::Xy)
        };
        let path = netsim::route(&self.cfg, src_c, dst, policy).expect("endpoints in grid");
        for &router in &path {
            out.push(SimEvent {
                time_ns: 0,
                pid,
                cluster,
                kind: EventKind::PacketHop {
                    router,
                    kind,
                    policy,
                },
            });
        }
        path.len() - 1
    }

    fn packet_kind(&self, ctx: &AccessCtx, line: u64, memory_leg: bool) -> PacketKind {
        if ctx.is_ipc(line) {
            PacketKind::Ipc
        } else if memory_leg {
            PacketKind::Memory
        } else {
            PacketKind::Coherence
        }
    }

    /// Writes a dirty line back to DRAM through its region's controller.
    fn writeback_to_dram(
        &mut self,
        ctx: &AccessCtx,
        from_slice: TileId,
        line: &EvictedLine,
        out: &mut Vec<SimEvent>,
    ) {
        let line_paddr = line.line_addr * self.cfg.line_bytes as u64;
        self.dram.write_line(line.line_addr, &line.data);
        if let Some(region) = self.cfg.region_of_addr(line_paddr) {
            let mc = self.cfg.mc_of_region(region);
            let kind = self.packet_kind(ctx, line.line_addr, true);
            self.hop_events(
                ctx,
                from_slice,
                self.cfg.mc_positions[mc],
                kind,
                line.owner,
                line.owner_cluster,
                out,
            );
            self.mc[mc].enqueue_write(line.line_addr);
            out.push(SimEvent {
                time_ns: 0,
                pid: line.owner,
                cluster: line.owner_cluster,
                kind: EventKind::McEnqueue {
                    mc,
                    line: line.line_addr,
                    write: true,
                },
            });
        }
    }

    /// Merges an evicted L1 line into its home slice, spilling the slice's
    /// own victim to DRAM if the install displaces one.
    fn writeback_to_home(
        &mut self,
        ctx: &AccessCtx,
        from_core: TileId,
        line: EvictedLine,
        evictions: &mut Vec<Eviction>,
        out: &mut Vec<SimEvent>,
    ) {
        let home = match self.pages.home_of_line(line.line_addr) {
            Ok(h) => h,
            // The page vanished from the map (never under normal operation);
            // spill straight to DRAM to preserve the data.
            Err(_) => {
                self.dram.write_line(line.line_addr, &line.data);
                return;
            }
        };
        let kind = self.packet_kind(ctx, line.line_addr, false);
        self.hop_events(
            ctx,
            from_core,
            self.cfg.coord_of(home),
            kind,
            line.owner,
            line.owner_cluster,
            out,
        );
        let slice = &mut self.l2[home.0];
        if let Some(idx) = slice.lookup(line.line_addr) {
            slice.merge(idx, &line.data, true);
        } else if let Some(victim) =
            slice.fill(line.line_addr, line.owner, line.owner_cluster, true, &line.data)
        {
            evictions.push(Eviction {
                structure: StructureRef::L2(home),
                line: victim.line_addr,
                was_dirty: victim.dirty,
            });
            if victim.dirty {
                self.writeback_to_dram(ctx, home, &victim, out);
            }
        }
    }

    /// Simulates one access through L1, the home L2 slice, and DRAM.
    ///
    /// Latency composes the configured constants along the path taken:
    /// an L1 hit costs `lat_l1_hit`; an L2 hit adds the mesh hops to the home
    /// slice plus `lat_l2_hit`; a DRAM fill adds `lat_dram` on top.
    pub fn access(&mut self, ctx: &AccessCtx, req: &AccessRequest) -> Result<AccessResult, MemError> {
        debug_assert!(
            (req.paddr % self.cfg.line_bytes as u64) as usize + req.size
                <= self.cfg.line_bytes,
            "access must not straddle a line"
        );
        let mut res = AccessResult::default();
        if self.cfg.region_of_addr(req.paddr).is_none() {
            return Err(MemError::PageFault { paddr: req.paddr });
        }
        let line = self.cfg.line_of_addr(req.paddr);
        let offset = (req.paddr % self.cfg.line_bytes as u64) as usize;
        let page = self.cfg.page_of_addr(req.paddr);
        let is_write = req.write.is_some();

        // Address translation.
        if !self.tlb[req.core.0].access(page) {
            res.latency += self.cfg.tlb_walk_cycles;
        }

        // L1.
        let l1 = &mut self.l1[req.core.0];
        if let Some(idx) = l1.lookup(line) {
            res.latency += self.cfg.lat_l1_hit;
            res.level = Some(CacheLevel::L1);
            res.events.push(SimEvent {
                time_ns: 0,
                pid: req.pid,
                cluster: req.cluster,
                kind: EventKind::CacheAccess {
                    level: CacheLevel::L1,
                    tile: req.core,
                    line,
                    hit: true,
                    write: is_write,
                },
            });
            match req.write {
                Some(bytes) => l1.write(idx, offset, bytes, req.pid, req.cluster),
                None => {
                    res.data.resize(req.size, 0);
                    l1.read(idx, offset, &mut res.data);
                }
            }
            return Ok(res);
        }
        res.latency += self.cfg.lat_l1_hit;
        res.events.push(SimEvent {
            time_ns: 0,
            pid: req.pid,
            cluster: req.cluster,
            kind: EventKind::CacheAccess {
                level: CacheLevel::L1,
                tile: req.core,
                line,
                hit: false,
                write: is_write,
            },
        });

        // Home L2 slice over the mesh.
        let home = self.home_of(req.paddr)?;
        let kind = self.packet_kind(ctx, line, false);
        let hops = self.hop_events(
            ctx,
            req.core,
            self.cfg.coord_of(home),
            kind,
            req.pid,
            req.cluster,
            &mut res.events,
        );
        res.latency += hops as u64 * self.cfg.lat_hop + self.cfg.lat_l2_hit;

        let l2_hit = self.l2[home.0].lookup(line).is_some();
        res.events.push(SimEvent {
            time_ns: 0,
            pid: req.pid,
            cluster: req.cluster,
            kind: EventKind::CacheAccess {
                level: CacheLevel::L2,
                tile: home,
                line,
                hit: l2_hit,
                write: is_write,
            },
        });

        let line_data = if l2_hit {
            res.level = Some(CacheLevel::L2);
            let idx = self.l2[home.0].lookup(line).expect("hit just observed");
            let mut buf = vec![0u8; self.cfg.line_bytes];
            self.l2[home.0].read(idx, 0, &mut buf);
            buf
        } else {
            // DRAM fill through the owning controller.
            res.level = Some(CacheLevel::Dram);
            res.latency += self.cfg.lat_dram;
            let region = self.cfg.region_of_addr(req.paddr).expect("checked above");
            let mc = self.cfg.mc_of_region(region);
            let mem_kind = self.packet_kind(ctx, line, true);
            self.hop_events(
                ctx,
                home,
                self.cfg.mc_positions[mc],
                mem_kind,
                req.pid,
                req.cluster,
                &mut res.events,
            );
            res.events.push(SimEvent {
                time_ns: 0,
                pid: req.pid,
                cluster: req.cluster,
                kind: EventKind::McEnqueue {
                    mc,
                    line,
                    write: false,
                },
            });
            let data = self.dram.copy_line(line);
            if let Some(victim) =
                self.l2[home.0].fill(line, req.pid, req.cluster, false, &data)
            {
                res.evictions.push(Eviction {
                    structure: StructureRef::L2(home),
                    line: victim.line_addr,
                    was_dirty: victim.dirty,
                });
                if victim.dirty {
                    let mut evs = Vec::new();
                    self.writeback_to_dram(ctx, home, &victim, &mut evs);
                    res.events.extend(evs);
                }
            }
            data.into_vec()
        };

        // Install into L1, spilling its victim toward the victim's own home.
        if let Some(victim) =
            self.l1[req.core.0].fill(line, req.pid, req.cluster, false, &line_data)
        {
            res.evictions.push(Eviction {
                structure: StructureRef::L1(req.core),
                line: victim.line_addr,
                was_dirty: victim.dirty,
            });
            if victim.dirty {
                let mut evs = Vec::new();
                let mut evictions = Vec::new();
                self.writeback_to_home(ctx, req.core, victim, &mut evictions, &mut evs);
                res.evictions.extend(evictions);
                res.events.extend(evs);
            }
        }
        let l1 = &mut self.l1[req.core.0];
        let idx = l1.lookup(line).expect("line just filled");
        match req.write {
            Some(bytes) => l1.write(idx, offset, bytes, req.pid, req.cluster),
            None => {
                res.data.resize(req.size, 0);
                l1.read(idx, offset, &mut res.data);
            }
        }
        Ok(res)
    }

    /// Flush-and-invalidate the private L1s and TLBs of `tiles`. Dirty lines
    /// are written back to their home L2 slices; every slot ends invalid.
    /// Returns the number of write-backs. The wall-clock cost of the purge is
    /// charged by the security model, not here.
    pub fn flush_invalidate_tiles(
        &mut self,
        ctx: &AccessCtx,
        tiles: &[TileId],
        kernel: Pid,
    ) -> FlushReport {
        let mut report = FlushReport::default();
        for &tile in tiles {
            let had_state =
                self.l1[tile.0].valid_count() > 0 || self.tlb[tile.0].valid_count() > 0;
            if !had_state {
                continue;
            }
            let flushed = self.l1[tile.0].flush_invalidate();
            self.tlb[tile.0].flush();
            let mut dirty = 0u32;
            for line in flushed {
                if line.dirty {
                    dirty += 1;
                    let mut evictions = Vec::new();
                    self.writeback_to_home(ctx, tile, line, &mut evictions, &mut report.events);
                }
            }
            report.writebacks += dirty as usize;
            report.events.push(SimEvent {
                time_ns: 0,
                pid: kernel,
                cluster: Cluster::Secure,
                kind: EventKind::Flush {
                    scope: crate::events::FlushScope::Tile(tile),
                    writebacks: dirty,
                },
            });
        }
        report
    }

    /// Drains one controller's queued entries; pending writes were already
    /// committed to the DRAM model at enqueue time. Returns the drain count.
    pub fn purge_mc(&mut self, mc: usize) -> usize {
        self.mc[mc].purge()
    }

    /// Moves `pages` to `new_home`: lines cached in each page's old home
    /// slice are invalidated (dirty ones propagate to DRAM) and the mapping
    /// is updated. Requires local homing.
    pub fn rehome(
        &mut self,
        ctx: &AccessCtx,
        pages: &[u64],
        new_home: TileId,
        kernel: Pid,
    ) -> Result<RehomeReport, MemError> {
        if self.pages.mode != HomingMode::LocalHoming {
            return Err(MemError::HashedRehome);
        }
        let lines_per_page = self.cfg.lines_per_page();
        let mut report = RehomeReport::default();
        for &page in pages {
            let old = match self.pages.home_of_page(page) {
                Some(h) => h,
                None => {
                    self.pages.assign(page, new_home);
                    continue;
                }
            };
            let first = page * lines_per_page;
            let range = first..first + lines_per_page;
            let cached = self.l2[old.0].valid_lines_where(|l| range.contains(&l));
            let mut moved = 0u32;
            for line in cached {
                if let Some(ev) = self.l2[old.0].invalidate(line) {
                    moved += 1;
                    if ev.dirty {
                        self.writeback_to_dram(ctx, old, &ev, &mut report.events);
                    }
                }
            }
            self.pages.assign(page, new_home);
            report.moved_lines += moved as usize;
            report.events.push(SimEvent {
                time_ns: 0,
                pid: kernel,
                cluster: Cluster::Secure,
                kind: EventKind::Rehome {
                    page,
                    from: old,
                    to: new_home,
                    moved,
                },
            });
        }
        Ok(report)
    }

    /// Forces a specific line out of one core's L1 into its home slice (the
    /// line-targeted fence used to publish IPC payloads).
    pub fn fence_line(&mut self, ctx: &AccessCtx, core: TileId, line: u64) -> Vec<SimEvent> {
        let mut events = Vec::new();
        if let Some(ev) = self.l1[core.0].invalidate(line) {
            if ev.dirty {
                let mut evictions = Vec::new();
                self.writeback_to_home(ctx, core, ev, &mut evictions, &mut events);
            }
        }
        events
    }

    /// Total valid lines across the private L1s (diagnostics and tests).
    pub fn l1_valid_total(&self) -> usize {
        self.l1.iter().map(|c| c.valid_count()).sum()
    }

    pub fn all_mc_empty(&self) -> bool {
        self.mc.iter().all(|q| q.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{default_config, ClusterMap};

    fn setup(homing: HomingMode) -> (MachineConfig, ClusterMap, MemoryHierarchy) {
        let cfg = default_config();
        let map = ClusterMap::contiguous_split(&cfg, 32);
        let mem = MemoryHierarchy::new(&cfg, homing);
        (cfg, map, mem)
    }

    fn ctx(map: &ClusterMap) -> AccessCtx {
        AccessCtx {
            map,
            spatial: false,
            ipc_lines: 0..0,
        }
    }

    fn read(core: usize, paddr: u64) -> AccessRequest<'static> {
        AccessRequest {
            core: TileId(core),
            pid: Pid(1),
            cluster: Cluster::Secure,
            paddr,
            size: 8,
            write: None,
        }
    }

    #[test]
    fn local_homing_maps_whole_page_to_one_slice() {
        let (cfg, _map, mut mem) = setup(HomingMode::LocalHoming);
        mem.pages.assign(7, TileId(12));
        let base = 7 * cfg.page_bytes;
        for off in (0..cfg.page_bytes).step_by(cfg.line_bytes) {
            assert_eq!(mem.home_of(base + off).unwrap(), TileId(12));
        }
    }

    #[test]
    fn hashed_homing_spreads_consecutive_lines() {
        let (cfg, _map, mem) = setup(HomingMode::HashedPerLine);
        let a = mem.home_of(0).unwrap();
        let b = mem.home_of(cfg.line_bytes as u64).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn unmapped_page_faults() {
        let (_cfg, _map, mem) = setup(HomingMode::LocalHoming);
        assert!(matches!(
            mem.home_of(0),
            Err(MemError::PageFault { .. })
        ));
    }

    #[test]
    fn second_access_hits_l1() {
        let (cfg, map, mut mem) = setup(HomingMode::LocalHoming);
        mem.pages.assign(0, TileId(20));
        let c = ctx(&map);
        let first = mem.access(&c, &read(10, 64)).unwrap();
        assert_eq!(first.level, Some(CacheLevel::Dram));
        let second = mem.access(&c, &read(10, 64)).unwrap();
        assert_eq!(second.level, Some(CacheLevel::L1));
        assert_eq!(second.latency, cfg.lat_l1_hit);
        assert!(second
            .events
            .iter()
            .all(|e| !matches!(e.kind, EventKind::PacketHop { .. })));
    }

    #[test]
    fn cold_latency_composes_constants() {
        let (cfg, map, mut mem) = setup(HomingMode::LocalHoming);
        // Core t20 is (2,2); home its page 3 hops away at (5,2) = t23.
        mem.pages.assign(0, TileId(23));
        let c = ctx(&map);
        let res = mem.access(&c, &read(20, 0)).unwrap();
        assert_eq!(
            res.latency,
            cfg.tlb_walk_cycles + cfg.lat_l1_hit + 3 * cfg.lat_hop + cfg.lat_l2_hit + cfg.lat_dram
        );
    }

    #[test]
    fn write_then_evict_records_dirty_eviction() {
        let cfg = default_config();
        let map = ClusterMap::contiguous_split(&cfg, 32);
        let mut mem = MemoryHierarchy::new(&cfg, HomingMode::LocalHoming);
        let c = AccessCtx {
            map: &map,
            spatial: false,
            ipc_lines: 0..0,
        };
        // L1 is 2-way with 256 sets: lines 0, 256.., 512.. collide in set 0.
        let sets = (cfg.l1_bytes / cfg.line_bytes / cfg.l1_assoc) as u64;
        for page in 0..((sets * 3 * cfg.line_bytes as u64) / cfg.page_bytes + 1) {
            mem.pages.assign(page, TileId(20));
        }
        let w = [0xabu8; 8];
        let mut reqs = Vec::new();
        for i in 0..3u64 {
            reqs.push(AccessRequest {
                core: TileId(10),
                pid: Pid(1),
                cluster: Cluster::Secure,
                paddr: i * sets * cfg.line_bytes as u64,
                size: 8,
                write: Some(&w),
            });
        }
        let mut all_evictions = Vec::new();
        for r in &reqs {
            all_evictions.extend(mem.access(&c, r).unwrap().evictions);
        }
        assert!(all_evictions
            .iter()
            .any(|e| matches!(e.structure, StructureRef::L1(_)) && e.was_dirty));
    }

    #[test]
    fn flush_returns_dirty_count_and_empties() {
        let (cfg, map, mut mem) = setup(HomingMode::LocalHoming);
        for p in 0..2 {
            mem.pages.assign(p, TileId(20));
        }
        let c = ctx(&map);
        let w = [1u8; 8];
        // 3 dirty lines, 5 clean lines in core 10's L1.
        for i in 0..8u64 {
            let req = AccessRequest {
                core: TileId(10),
                pid: Pid(1),
                cluster: Cluster::Secure,
                paddr: i * cfg.line_bytes as u64,
                size: 8,
                write: (i < 3).then_some(&w[..]),
            };
            mem.access(&c, &req).unwrap();
        }
        let report = mem.flush_invalidate_tiles(&c, &[TileId(10)], Pid(0));
        assert_eq!(report.writebacks, 3);
        assert_eq!(mem.l1[10].valid_count(), 0);
        assert_eq!(mem.tlb[10].valid_count(), 0);
        // Idempotent on the now-empty tile.
        let again = mem.flush_invalidate_tiles(&c, &[TileId(10)], Pid(0));
        assert_eq!(again.writebacks, 0);
        assert!(again.events.is_empty());
    }

    #[test]
    fn purge_mc_drains() {
        let (_cfg, _map, mut mem) = setup(HomingMode::LocalHoming);
        for l in 0..4 {
            mem.mc[1].enqueue_write(l);
        }
        assert_eq!(mem.purge_mc(1), 4);
        assert_eq!(mem.purge_mc(1), 0);
        assert!(mem.mc[1].is_empty());
    }

    #[test]
    fn rehome_moves_dirty_lines_and_updates_mapping() {
        let (cfg, map, mut mem) = setup(HomingMode::LocalHoming);
        mem.pages.assign(0, TileId(20));
        let c = ctx(&map);
        let w = [9u8; 8];
        for i in 0..2u64 {
            let req = AccessRequest {
                core: TileId(20),
                pid: Pid(1),
                cluster: Cluster::Secure,
                paddr: i * cfg.line_bytes as u64,
                size: 8,
                write: Some(&w),
            };
            mem.access(&c, &req).unwrap();
        }
        // Push the two dirty lines down into the home slice first.
        mem.flush_invalidate_tiles(&c, &[TileId(20)], Pid(0));
        let report = mem.rehome(&c, &[0], TileId(21), Pid(0)).unwrap();
        assert_eq!(report.moved_lines, 2);
        assert_eq!(mem.pages.home_of_page(0), Some(TileId(21)));
        assert_eq!(mem.l2[20].valid_count(), 0);
        // A later read homes at the new slice and still sees the data.
        let res = mem.access(&c, &read(20, 0)).unwrap();
        assert_eq!(&res.data, &w);
        assert!(res
            .events
            .iter()
            .any(|e| matches!(e.kind, EventKind::CacheAccess { level: CacheLevel::L2, tile, .. } if tile == TileId(21))));
    }

    #[test]
    fn rehome_without_cached_lines_still_updates() {
        let (_cfg, map, mut mem) = setup(HomingMode::LocalHoming);
        mem.pages.assign(5, TileId(20));
        let c = ctx(&map);
        let report = mem.rehome(&c, &[5], TileId(22), Pid(0)).unwrap();
        assert_eq!(report.moved_lines, 0);
        assert_eq!(mem.pages.home_of_page(5), Some(TileId(22)));
    }

    #[test]
    fn rehome_rejected_under_hashed_homing() {
        let (_cfg, map, mut mem) = setup(HomingMode::HashedPerLine);
        let c = ctx(&map);
        assert_eq!(
            mem.rehome(&c, &[0], TileId(22), Pid(0)).unwrap_err(),
            MemError::HashedRehome
        );
    }
}
