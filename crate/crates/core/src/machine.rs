//! Machine topology, hardware geometry, cost constants, and cluster maps.
//!
//! [`MachineConfig`] is the configuration root shared by every other module.
//! A [`ClusterMap`] assigns tiles, memory controllers, and DRAM regions to the
//! secure and insecure clusters; [`validate_cluster_map`] reports every
//! violated map invariant as data rather than failing.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Router position in the 2-D mesh: `x` is the column, `y` the row.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeshCoord {
    pub x: usize,
    pub y: usize,
}

impl MeshCoord {
    pub const fn new(x: usize, y: usize) -> Self {
        MeshCoord { x, y }
    }

    /// Manhattan distance, i.e. the hop count of any dimension-ordered route.
    pub fn hops_to(&self, other: MeshCoord) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Debug for MeshCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

impl fmt::Display for MeshCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Row-major tile index into the grid.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileId(pub usize);

impl fmt::Debug for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// The two isolation domains.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Cluster {
    Secure,
    Insecure,
}

impl Cluster {
    pub fn opposite(self) -> Cluster {
        match self {
            Cluster::Secure => Cluster::Insecure,
            Cluster::Insecure => Cluster::Secure,
        }
    }
}

impl fmt::Display for Cluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cluster::Secure => write!(f, "secure"),
            Cluster::Insecure => write!(f, "insecure"),
        }
    }
}

/// Per-tile assignment. `Unused` marks tiles whose core never runs
/// application threads (their routers remain part of the mesh substrate).
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileTag {
    Secure,
    Insecure,
    Unused,
}

impl TileTag {
    pub fn cluster(self) -> Option<Cluster> {
        match self {
            TileTag::Secure => Some(Cluster::Secure),
            TileTag::Insecure => Some(Cluster::Insecure),
            TileTag::Unused => None,
        }
    }
}

impl From<Cluster> for TileTag {
    fn from(c: Cluster) -> Self {
        match c {
            Cluster::Secure => TileTag::Secure,
            Cluster::Insecure => TileTag::Insecure,
        }
    }
}

/// Full description of the simulated multicore: grid shape, cache and TLB
/// geometry, DRAM layout, latency constants, and the wall-clock costs of the
/// security protocols. Immutable after construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MachineConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Cores available to application threads; the rest are `unused_tiles`.
    pub usable_cores: usize,
    pub unused_tiles: Vec<MeshCoord>,

    pub l1_bytes: usize,
    pub l1_assoc: usize,
    pub line_bytes: usize,
    pub tlb_entries: usize,
    /// Page-walk penalty charged on a TLB miss, in cycles.
    pub tlb_walk_cycles: u64,
    pub l2_slice_bytes: usize,
    pub l2_assoc: usize,

    pub mc_count: usize,
    /// Edge coordinates hosting the memory controllers. An MC shares the
    /// router of the tile at its coordinate.
    pub mc_positions: Vec<MeshCoord>,
    pub regions_per_mc: usize,
    pub region_bytes: u64,
    pub page_bytes: u64,
    pub mc_queue_depth: usize,

    pub lat_l1_hit: u64,
    pub lat_l2_hit: u64,
    pub lat_dram: u64,
    pub lat_hop: u64,
    /// Cycles a stalled cross-cluster access waits before it resolves.
    pub spec_resolve_cycles: u64,

    pub cost_entry_exit_us: f64,
    pub cost_purge_event_ms: f64,
    pub cost_reconfig_ms: f64,
    pub cost_attest_us: f64,

    pub base_cpi: f64,
    pub clock_ghz: f64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        default_config()
    }
}

/// The default machine: a 9x8 grid of 72 tiles with 64 usable cores, 32KB
/// 2-way L1s, 32-entry TLBs, 256KB 8-way L2 slices, and four edge memory
/// controllers. Entry/exit costs 5us, a purge event 0.19ms, and a cluster
/// reconfiguration 15ms.
pub fn default_config() -> MachineConfig {
    MachineConfig {
        grid_rows: 8,
        grid_cols: 9,
        usable_cores: 64,
        // Corner-adjacent tiles on the top and bottom rows are reserved for
        // non-application duties; their routers stay in the mesh.
        unused_tiles: vec![
            MeshCoord::new(0, 0),
            MeshCoord::new(1, 0),
            MeshCoord::new(7, 0),
            MeshCoord::new(8, 0),
            MeshCoord::new(0, 7),
            MeshCoord::new(1, 7),
            MeshCoord::new(7, 7),
            MeshCoord::new(8, 7),
        ],
        l1_bytes: 32 * 1024,
        l1_assoc: 2,
        line_bytes: 64,
        tlb_entries: 32,
        tlb_walk_cycles: 50,
        l2_slice_bytes: 256 * 1024,
        l2_assoc: 8,
        mc_count: 4,
        // Two controllers on the top edge serve the (by convention) secure
        // rows, two on the bottom edge serve the insecure rows. Their host
        // tiles are the first and last usable tiles in row-major order so
        // that contiguous splits always keep a controller inside its cluster.
        mc_positions: vec![
            MeshCoord::new(2, 0),
            MeshCoord::new(3, 0),
            MeshCoord::new(5, 7),
            MeshCoord::new(6, 7),
        ],
        regions_per_mc: 4,
        region_bytes: 64 * 1024 * 1024,
        page_bytes: 4096,
        mc_queue_depth: 16,
        lat_l1_hit: 2,
        lat_l2_hit: 12,
        lat_dram: 120,
        lat_hop: 2,
        spec_resolve_cycles: 20,
        cost_entry_exit_us: 5.0,
        cost_purge_event_ms: 0.19,
        cost_reconfig_ms: 15.0,
        cost_attest_us: 0.0,
        base_cpi: 1.0,
        clock_ghz: 1.0,
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("usable_cores {usable} exceeds grid capacity {capacity}")]
    TooManyCores { usable: usize, capacity: usize },
    #[error("unused_tiles must list exactly {expected} tiles, found {found}")]
    UnusedCount { expected: usize, found: usize },
    #[error("coordinate {0} outside the {1}x{2} grid")]
    OutOfGrid(MeshCoord, usize, usize),
    #[error("memory controller at {0} is not on the grid boundary")]
    McNotOnEdge(MeshCoord),
    #[error("duplicate coordinate {0}")]
    Duplicate(MeshCoord),
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("{what} ({bytes} bytes) is not a multiple of line_bytes x assoc ({unit})")]
    BadCacheGeometry {
        what: &'static str,
        bytes: usize,
        unit: usize,
    },
    #[error("mc_positions must list exactly mc_count ({0}) coordinates")]
    McCount(usize),
}

impl MachineConfig {
    pub fn tile_count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn in_grid(&self, c: MeshCoord) -> bool {
        c.x < self.grid_cols && c.y < self.grid_rows
    }

    pub fn tile_index(&self, c: MeshCoord) -> TileId {
        TileId(c.y * self.grid_cols + c.x)
    }

    pub fn coord_of(&self, t: TileId) -> MeshCoord {
        MeshCoord::new(t.0 % self.grid_cols, t.0 / self.grid_cols)
    }

    pub fn is_unused(&self, c: MeshCoord) -> bool {
        self.unused_tiles.contains(&c)
    }

    /// Usable tiles in row-major order. This ordering is the canonical fill
    /// order for contiguous cluster splits.
    pub fn usable_tiles(&self) -> Vec<TileId> {
        let mut out = Vec::with_capacity(self.usable_cores);
        for y in 0..self.grid_rows {
            for x in 0..self.grid_cols {
                let c = MeshCoord::new(x, y);
                if !self.is_unused(c) {
                    out.push(self.tile_index(c));
                }
            }
        }
        out
    }

    pub fn region_count(&self) -> u32 {
        (self.mc_count * self.regions_per_mc) as u32
    }

    /// DRAM regions are interleaved across controllers: region `r` is mapped
    /// by controller `r mod mc_count`.
    pub fn mc_of_region(&self, region: u32) -> usize {
        region as usize % self.mc_count
    }

    pub fn region_of_addr(&self, paddr: u64) -> Option<u32> {
        let r = paddr / self.region_bytes;
        (r < self.region_count() as u64).then_some(r as u32)
    }

    pub fn region_base(&self, region: u32) -> u64 {
        region as u64 * self.region_bytes
    }

    pub fn page_of_addr(&self, paddr: u64) -> u64 {
        paddr / self.page_bytes
    }

    pub fn line_of_addr(&self, paddr: u64) -> u64 {
        paddr / self.line_bytes as u64
    }

    pub fn lines_per_page(&self) -> u64 {
        self.page_bytes / self.line_bytes as u64
    }

    fn ns_to_cycles(&self, ns: f64) -> u64 {
        (ns * self.clock_ghz).round() as u64
    }

    pub fn us_to_cycles(&self, us: f64) -> u64 {
        self.ns_to_cycles(us * 1e3)
    }

    pub fn ms_to_cycles(&self, ms: f64) -> u64 {
        self.ns_to_cycles(ms * 1e6)
    }

    pub fn cycles_to_seconds(&self, cycles: u64) -> f64 {
        cycles as f64 / (self.clock_ghz * 1e9)
    }

    pub fn cycles_to_ns(&self, cycles: u64) -> u64 {
        (cycles as f64 / self.clock_ghz).round() as u64
    }

    pub fn entry_exit_cycles(&self) -> u64 {
        self.us_to_cycles(self.cost_entry_exit_us)
    }

    pub fn purge_event_cycles(&self) -> u64 {
        self.ms_to_cycles(self.cost_purge_event_ms)
    }

    pub fn reconfig_cycles(&self) -> u64 {
        self.ms_to_cycles(self.cost_reconfig_ms)
    }

    pub fn attest_cycles(&self) -> u64 {
        self.us_to_cycles(self.cost_attest_us)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let cap = self.tile_count();
        if self.usable_cores > cap {
            return Err(ConfigError::TooManyCores {
                usable: self.usable_cores,
                capacity: cap,
            });
        }
        let expected_unused = cap - self.usable_cores;
        if self.unused_tiles.len() != expected_unused {
            return Err(ConfigError::UnusedCount {
                expected: expected_unused,
                found: self.unused_tiles.len(),
            });
        }
        let mut seen = Vec::new();
        for &c in &self.unused_tiles {
            if !self.in_grid(c) {
                return Err(ConfigError::OutOfGrid(c, self.grid_cols, self.grid_rows));
            }
            if seen.contains(&c) {
                return Err(ConfigError::Duplicate(c));
            }
            seen.push(c);
        }
        if self.mc_positions.len() != self.mc_count {
            return Err(ConfigError::McCount(self.mc_count));
        }
        let mut seen = Vec::new();
        for &c in &self.mc_positions {
            if !self.in_grid(c) {
                return Err(ConfigError::OutOfGrid(c, self.grid_cols, self.grid_rows));
            }
            let on_edge = c.x == 0
                || c.y == 0
                || c.x == self.grid_cols - 1
                || c.y == self.grid_rows - 1;
            if !on_edge {
                return Err(ConfigError::McNotOnEdge(c));
            }
            if seen.contains(&c) {
                return Err(ConfigError::Duplicate(c));
            }
            seen.push(c);
        }
        for (name, v) in [
            ("lat_l1_hit", self.lat_l1_hit),
            ("lat_l2_hit", self.lat_l2_hit),
            ("lat_dram", self.lat_dram),
            ("lat_hop", self.lat_hop),
        ] {
            if v == 0 {
                return Err(ConfigError::NonPositive(name));
            }
        }
        for (name, v) in [
            ("cost_entry_exit_us", self.cost_entry_exit_us),
            ("cost_purge_event_ms", self.cost_purge_event_ms),
            ("cost_reconfig_ms", self.cost_reconfig_ms),
            ("base_cpi", self.base_cpi),
            ("clock_ghz", self.clock_ghz),
        ] {
            if v <= 0.0 {
                return Err(ConfigError::NonPositive(name));
            }
        }
        for (name, v) in [
            ("l1_bytes", self.l1_bytes),
            ("l1_assoc", self.l1_assoc),
            ("line_bytes", self.line_bytes),
            ("tlb_entries", self.tlb_entries),
            ("l2_slice_bytes", self.l2_slice_bytes),
            ("l2_assoc", self.l2_assoc),
            ("mc_count", self.mc_count),
            ("regions_per_mc", self.regions_per_mc),
            ("mc_queue_depth", self.mc_queue_depth),
        ] {
            if v == 0 {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if self.region_bytes == 0 || self.page_bytes == 0 {
            return Err(ConfigError::NonPositive("region_bytes/page_bytes"));
        }
        let l1_unit = self.line_bytes * self.l1_assoc;
        if self.l1_bytes % l1_unit != 0 {
            return Err(ConfigError::BadCacheGeometry {
                what: "l1_bytes",
                bytes: self.l1_bytes,
                unit: l1_unit,
            });
        }
        let l2_unit = self.line_bytes * self.l2_assoc;
        if self.l2_slice_bytes % l2_unit != 0 {
            return Err(ConfigError::BadCacheGeometry {
                what: "l2_slice_bytes",
                bytes: self.l2_slice_bytes,
                unit: l2_unit,
            });
        }
        Ok(())
    }
}

/// Non-overlapping assignment of tiles, memory controllers, and DRAM regions
/// to the two clusters, plus the location of the shared IPC buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterMap {
    /// One tag per grid tile, row-major.
    pub tile_tags: Vec<TileTag>,
    /// One tag per memory controller, indexed like `mc_positions`.
    pub mc_tags: Vec<Cluster>,
    /// One tag per DRAM region.
    pub region_tags: Vec<Cluster>,
    /// Region holding the shared IPC buffer; must be insecure.
    pub ipc_buffer_region: u32,
}

impl ClusterMap {
    /// Degenerate map: every usable core, controller, and region insecure.
    pub fn single_cluster(cfg: &MachineConfig) -> ClusterMap {
        let mut tile_tags = vec![TileTag::Unused; cfg.tile_count()];
        for t in cfg.usable_tiles() {
            tile_tags[t.0] = TileTag::Insecure;
        }
        ClusterMap {
            tile_tags,
            mc_tags: vec![Cluster::Insecure; cfg.mc_count],
            region_tags: vec![Cluster::Insecure; cfg.region_count() as usize],
            ipc_buffer_region: 0,
        }
    }

    /// Contiguous split: the first `cores_secure` usable tiles in row-major
    /// order are secure, the rest insecure. Controllers split half/half
    /// (first half secure); region tags follow their controller.
    pub fn contiguous_split(cfg: &MachineConfig, cores_secure: usize) -> ClusterMap {
        let usable = cfg.usable_tiles();
        let mut tile_tags = vec![TileTag::Unused; cfg.tile_count()];
        for (i, t) in usable.iter().enumerate() {
            tile_tags[t.0] = if i < cores_secure {
                TileTag::Secure
            } else {
                TileTag::Insecure
            };
        }
        let mc_tags: Vec<Cluster> = (0..cfg.mc_count)
            .map(|i| {
                if i < cfg.mc_count / 2 {
                    Cluster::Secure
                } else {
                    Cluster::Insecure
                }
            })
            .collect();
        let region_tags: Vec<Cluster> = (0..cfg.region_count())
            .map(|r| mc_tags[cfg.mc_of_region(r)])
            .collect();
        let ipc_buffer_region = region_tags
            .iter()
            .position(|&t| t == Cluster::Insecure)
            .unwrap_or(0) as u32;
        ClusterMap {
            tile_tags,
            mc_tags,
            region_tags,
            ipc_buffer_region,
        }
    }

    /// Row-block split: all usable tiles in the first `secure_rows` rows are
    /// secure. Equivalent to a contiguous split at the row boundary.
    pub fn row_block(cfg: &MachineConfig, secure_rows: usize) -> ClusterMap {
        let count = cfg
            .usable_tiles()
            .iter()
            .filter(|t| cfg.coord_of(**t).y < secure_rows)
            .count();
        ClusterMap::contiguous_split(cfg, count)
    }

    pub fn tag_at(&self, cfg: &MachineConfig, c: MeshCoord) -> TileTag {
        self.tile_tags[cfg.tile_index(c).0]
    }

    pub fn cluster_tiles(&self, cfg: &MachineConfig, cluster: Cluster) -> Vec<TileId> {
        cfg.usable_tiles()
            .into_iter()
            .filter(|t| self.tile_tags[t.0] == TileTag::from(cluster))
            .collect()
    }

    pub fn cluster_mcs(&self, cluster: Cluster) -> Vec<usize> {
        self.mc_tags
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cluster_regions(&self, cluster: Cluster) -> Vec<u32> {
        self.region_tags
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == cluster)
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Memory controller index hosted at `c`, if any.
    pub fn mc_at(&self, cfg: &MachineConfig, c: MeshCoord) -> Option<usize> {
        cfg.mc_positions.iter().position(|&p| p == c)
    }

    pub fn count_tiles(&self, cluster: Cluster) -> usize {
        self.tile_tags
            .iter()
            .filter(|&&t| t == TileTag::from(cluster))
            .count()
    }
}

/// A single violated [`ClusterMap`] invariant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MapViolation {
    /// An assignment vector has the wrong length for this machine.
    WrongArity {
        what: String,
        expected: usize,
        found: usize,
    },
    /// A region's tag differs from the tag of the controller that maps it.
    RegionMcMismatch { region: u32, mc: usize },
    /// The IPC buffer region is not insecure.
    IpcBufferNotInsecure { region: u32 },
    /// The IPC buffer region id is out of range.
    IpcBufferUnknown { region: u32 },
    /// Secure + insecure tile counts exceed the usable core budget.
    CoreBudgetExceeded { assigned: usize, usable: usize },
    /// A non-core tile carries a cluster tag.
    UnusedTileTagged { coord: MeshCoord },
}

impl fmt::Display for MapViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapViolation::WrongArity {
                what,
                expected,
                found,
            } => write!(f, "{what} assignment has {found} entries, expected {expected}"),
            MapViolation::RegionMcMismatch { region, mc } => {
                write!(f, "region/MC tag mismatch: region {region} vs MC {mc}")
            }
            MapViolation::IpcBufferNotInsecure { region } => {
                write!(f, "IPC buffer must be insecure (region {region})")
            }
            MapViolation::IpcBufferUnknown { region } => {
                write!(f, "IPC buffer region {region} does not exist")
            }
            MapViolation::CoreBudgetExceeded { assigned, usable } => {
                write!(f, "{assigned} tiles assigned to clusters, only {usable} usable")
            }
            MapViolation::UnusedTileTagged { coord } => {
                write!(f, "non-core tile {coord} carries a cluster tag")
            }
        }
    }
}

/// Validation outcome for a cluster map. Violations are data, not failures.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapReport {
    pub violations: Vec<MapViolation>,
}

impl MapReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every map invariant against the machine and returns the full list
/// of violations. Inputs are never mutated.
pub fn validate_cluster_map(cfg: &MachineConfig, map: &ClusterMap) -> MapReport {
    let mut violations = Vec::new();
    if map.tile_tags.len() != cfg.tile_count() {
        violations.push(MapViolation::WrongArity {
            what: "tile".into(),
            expected: cfg.tile_count(),
            found: map.tile_tags.len(),
        });
    }
    if map.mc_tags.len() != cfg.mc_count {
        violations.push(MapViolation::WrongArity {
            what: "mc".into(),
            expected: cfg.mc_count,
            found: map.mc_tags.len(),
        });
    }
    if map.region_tags.len() != cfg.region_count() as usize {
        violations.push(MapViolation::WrongArity {
            what: "region".into(),
            expected: cfg.region_count() as usize,
            found: map.region_tags.len(),
        });
    }
    // The remaining checks only make sense on well-shaped assignments.
    if !violations.is_empty() {
        return MapReport { violations };
    }
    for (r, &tag) in map.region_tags.iter().enumerate() {
        let mc = cfg.mc_of_region(r as u32);
        if map.mc_tags[mc] != tag {
            violations.push(MapViolation::RegionMcMismatch { region: r as u32, mc });
        }
    }
    if map.ipc_buffer_region >= cfg.region_count() {
        violations.push(MapViolation::IpcBufferUnknown {
            region: map.ipc_buffer_region,
        });
    } else if map.region_tags[map.ipc_buffer_region as usize] != Cluster::Insecure {
        violations.push(MapViolation::IpcBufferNotInsecure {
            region: map.ipc_buffer_region,
        });
    }
    let assigned = map.count_tiles(Cluster::Secure) + map.count_tiles(Cluster::Insecure);
    if assigned > cfg.usable_cores {
        violations.push(MapViolation::CoreBudgetExceeded {
            assigned,
            usable: cfg.usable_cores,
        });
    }
    for &c in &cfg.unused_tiles {
        if cfg.in_grid(c) && map.tag_at(cfg, c) != TileTag::Unused {
            violations.push(MapViolation::UnusedTileTagged { coord: c });
        }
    }
    MapReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_matches_target_machine() {
        let cfg = default_config();
        assert_eq!(cfg.usable_cores, 64);
        assert_eq!(cfg.grid_rows * cfg.grid_cols, 72);
        assert_eq!(cfg.l1_bytes, 32768);
        assert_eq!(cfg.tlb_entries, 32);
        assert_eq!(cfg.l2_slice_bytes, 262144);
        assert_eq!(cfg.mc_count, 4);
        assert_eq!(cfg.cost_entry_exit_us, 5.0);
        assert_eq!(cfg.cost_purge_event_ms, 0.19);
        assert_eq!(cfg.cost_reconfig_ms, 15.0);
        cfg.validate().expect("default config must self-validate");
    }

    #[test]
    fn default_cost_conversion_is_exact_at_1ghz() {
        let cfg = default_config();
        assert_eq!(cfg.entry_exit_cycles(), 5_000);
        assert_eq!(cfg.purge_event_cycles(), 190_000);
        assert_eq!(cfg.reconfig_cycles(), 15_000_000);
    }

    #[test]
    fn usable_tiles_are_row_major_and_complete() {
        let cfg = default_config();
        let tiles = cfg.usable_tiles();
        assert_eq!(tiles.len(), 64);
        assert!(tiles.windows(2).all(|w| w[0] < w[1]));
        // MC host tiles are the first and last usable tiles by construction.
        assert_eq!(cfg.coord_of(tiles[0]), MeshCoord::new(2, 0));
        assert_eq!(cfg.coord_of(tiles[1]), MeshCoord::new(3, 0));
        assert_eq!(cfg.coord_of(tiles[62]), MeshCoord::new(5, 7));
        assert_eq!(cfg.coord_of(tiles[63]), MeshCoord::new(6, 7));
    }

    #[test]
    fn single_cluster_map_is_valid() {
        let cfg = default_config();
        let map = ClusterMap::single_cluster(&cfg);
        assert!(validate_cluster_map(&cfg, &map).ok());
        assert_eq!(map.count_tiles(Cluster::Insecure), 64);
        assert_eq!(map.count_tiles(Cluster::Secure), 0);
    }

    #[test]
    fn region_mc_mismatch_is_reported() {
        let cfg = default_config();
        let mut map = ClusterMap::contiguous_split(&cfg, 32);
        // Region 2 maps to MC 2 (insecure); retag the region secure.
        map.region_tags[2] = Cluster::Secure;
        map.ipc_buffer_region = 3;
        let report = validate_cluster_map(&cfg, &map);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, MapViolation::RegionMcMismatch { region: 2, mc: 2 })));
    }

    #[test]
    fn secure_ipc_buffer_is_reported() {
        let cfg = default_config();
        let mut map = ClusterMap::contiguous_split(&cfg, 32);
        map.ipc_buffer_region = 0; // region 0 maps to MC 0, secure
        let report = validate_cluster_map(&cfg, &map);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, MapViolation::IpcBufferNotInsecure { region: 0 })));
    }

    #[test]
    fn contiguous_split_counts() {
        let cfg = default_config();
        for cores in [2, 5, 32, 37, 62] {
            let map = ClusterMap::contiguous_split(&cfg, cores);
            assert!(validate_cluster_map(&cfg, &map).ok(), "split {cores}");
            assert_eq!(map.count_tiles(Cluster::Secure), cores);
            assert_eq!(map.count_tiles(Cluster::Insecure), 64 - cores);
        }
    }

    #[test]
    fn row_block_four_rows_is_half() {
        let cfg = default_config();
        let map = ClusterMap::row_block(&cfg, 4);
        assert_eq!(map.count_tiles(Cluster::Secure), 32);
    }
}
