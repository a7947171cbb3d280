//! Deterministic 2-D mesh routing with bidirectional dimension-ordered
//! policies and cluster containment.
//!
//! A packet is routed fully along one axis, then the other. X-Y routing keeps
//! row-block clusters contained; Y-X routing rescues maps where a row is
//! split between clusters. [`choose_policy`] picks X-Y when contained, falls
//! back to Y-X, and rejects the pair otherwise; [`verify_containment`]
//! enumerates every intra-cluster pair to certify a whole map.
//!
//! Containment treats the routers of `Unused` tiles as neutral substrate: no
//! application thread runs there, so either cluster's packets may traverse
//! them. A router is foreign to a packet when its tile, or a memory
//! controller it hosts, belongs to the opposite cluster.

use crate::machine::{Cluster, ClusterMap, MachineConfig, MeshCoord, TileTag};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The two dimension orders supported by the mesh.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutePolicy {
    Xy,
    Yx,
}

/// Traffic classes carried by the mesh. Only `Ipc` packets may cross a
/// cluster boundary.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Coherence,
    Memory,
    Ipc,
}

/// A routed packet, as recorded in the event log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub src: MeshCoord,
    pub dst: MeshCoord,
    pub kind: PacketKind,
    pub owner_cluster: Cluster,
    pub policy: RoutePolicy,
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("coordinate {0} outside the {1}x{2} grid")]
    OutOfGrid(MeshCoord, usize, usize),
    #[error("endpoints {src} and {dst} are not in the same cluster")]
    CrossCluster { src: MeshCoord, dst: MeshCoord },
    #[error("endpoint {0} belongs to no cluster")]
    Unclustered(MeshCoord),
    #[error("uncontainable cluster shape: no policy contains {src} -> {dst}")]
    Uncontainable { src: MeshCoord, dst: MeshCoord },
}

/// Returns the full router path from `src` to `dst` under `policy`,
/// including both endpoints. Path length is always |dx| + |dy| + 1.
pub fn route(
    cfg: &MachineConfig,
    src: MeshCoord,
    dst: MeshCoord,
    policy: RoutePolicy,
) -> Result<Vec<MeshCoord>, NetError> {
    for c in [src, dst] {
        if !cfg.in_grid(c) {
            return Err(NetError::OutOfGrid(c, cfg.grid_cols, cfg.grid_rows));
        }
    }
    let mut path = Vec::with_capacity(src.hops_to(dst) + 1);
    let mut cur = src;
    path.push(cur);
    let step = |a: usize, b: usize| -> usize {
        if a < b {
            a + 1
        } else {
            a - 1
        }
    };
    match policy {
        RoutePolicy::Xy => {
            while cur.x != dst.x {
                cur.x = step(cur.x, dst.x);
                path.push(cur);
            }
            while cur.y != dst.y {
                cur.y = step(cur.y, dst.y);
                path.push(cur);
            }
        }
        RoutePolicy::Yx => {
            while cur.y != dst.y {
                cur.y = step(cur.y, dst.y);
                path.push(cur);
            }
            while cur.x != dst.x {
                cur.x = step(cur.x, dst.x);
                path.push(cur);
            }
        }
    }
    Ok(path)
}

/// Whether the router at `c` may carry `cluster`'s non-IPC traffic.
fn router_allowed(cfg: &MachineConfig, map: &ClusterMap, c: MeshCoord, cluster: Cluster) -> bool {
    if map.tag_at(cfg, c) == TileTag::from(cluster.opposite()) {
        return false;
    }
    if let Some(mc) = map.mc_at(cfg, c) {
        if map.mc_tags[mc] == cluster.opposite() {
            return false;
        }
    }
    true
}

/// Whether every router on `path` may carry `cluster`'s traffic.
pub fn path_contained(
    cfg: &MachineConfig,
    map: &ClusterMap,
    path: &[MeshCoord],
    cluster: Cluster,
) -> bool {
    path.iter().all(|&c| router_allowed(cfg, map, c, cluster))
}

/// Cluster an endpoint belongs to: its tile tag, or failing that the tag of
/// a memory controller hosted there.
fn endpoint_cluster(cfg: &MachineConfig, map: &ClusterMap, c: MeshCoord) -> Option<Cluster> {
    map.tag_at(cfg, c)
        .cluster()
        .or_else(|| map.mc_at(cfg, c).map(|mc| map.mc_tags[mc]))
}

/// Picks the routing policy for a packet. IPC packets route X-Y
/// unconditionally; for every other kind the endpoints must share a cluster
/// and the returned policy's path stays inside it (X-Y preferred).
pub fn choose_policy(
    cfg: &MachineConfig,
    map: &ClusterMap,
    src: MeshCoord,
    dst: MeshCoord,
    kind: PacketKind,
) -> Result<RoutePolicy, NetError> {
    if kind == PacketKind::Ipc {
        return Ok(RoutePolicy::Xy);
    }
    let sc = endpoint_cluster(cfg, map, src).ok_or(NetError::Unclustered(src))?;
    let dc = endpoint_cluster(cfg, map, dst).ok_or(NetError::Unclustered(dst))?;
    if sc != dc {
        return Err(NetError::CrossCluster { src, dst });
    }
    for policy in [RoutePolicy::Xy, RoutePolicy::Yx] {
        let path = route(cfg, src, dst, policy)?;
        if path_contained(cfg, map, &path, sc) {
            return Ok(policy);
        }
    }
    Err(NetError::Uncontainable { src, dst })
}

/// An intra-cluster endpoint pair no policy can contain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainmentViolation {
    pub cluster: Cluster,
    pub src: MeshCoord,
    pub dst: MeshCoord,
}

/// Result of exhaustively checking all intra-cluster routes of a map.
/// An empty violation list means the map is routable.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub pairs_checked: usize,
    pub violations: Vec<ContainmentViolation>,
}

impl ContainmentReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every ordered intra-cluster (src, dst) pair over each cluster's
/// tiles and its memory controllers, recording each pair for which
/// [`choose_policy`] finds no contained path.
pub fn verify_containment(cfg: &MachineConfig, map: &ClusterMap) -> ContainmentReport {
    let mut pairs_checked = 0;
    let mut violations = Vec::new();
    for cluster in [Cluster::Secure, Cluster::Insecure] {
        let mut endpoints: Vec<MeshCoord> = map
            .cluster_tiles(cfg, cluster)
            .into_iter()
            .map(|t| cfg.coord_of(t))
            .collect();
        for mc in map.cluster_mcs(cluster) {
            let pos = cfg.mc_positions[mc];
            if !endpoints.contains(&pos) {
                endpoints.push(pos);
            }
        }
        for &src in &endpoints {
            for &dst in &endpoints {
                if src == dst {
                    continue;
                }
                pairs_checked += 1;
                if choose_policy(cfg, map, src, dst, PacketKind::Coherence).is_err() {
                    violations.push(ContainmentViolation { cluster, src, dst });
                }
            }
        }
    }
    ContainmentReport {
        pairs_checked,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{default_config, validate_cluster_map, ClusterMap};

    fn c(x: usize, y: usize) -> MeshCoord {
        MeshCoord::new(x, y)
    }

    #[test]
    fn xy_route_goes_x_then_y() {
        let cfg = default_config();
        let path = route(&cfg, c(0, 0), c(3, 2), RoutePolicy::Xy).unwrap();
        assert_eq!(
            path,
            vec![c(0, 0), c(1, 0), c(2, 0), c(3, 0), c(3, 1), c(3, 2)]
        );
    }

    #[test]
    fn route_to_self_is_identity() {
        let cfg = default_config();
        assert_eq!(
            route(&cfg, c(3, 2), c(3, 2), RoutePolicy::Xy).unwrap(),
            vec![c(3, 2)]
        );
    }

    #[test]
    fn yx_route_goes_y_then_x() {
        let cfg = default_config();
        let path = route(&cfg, c(0, 0), c(3, 2), RoutePolicy::Yx).unwrap();
        assert_eq!(
            path,
            vec![c(0, 0), c(0, 1), c(0, 2), c(1, 2), c(2, 2), c(3, 2)]
        );
    }

    #[test]
    fn out_of_grid_is_rejected() {
        let cfg = default_config();
        assert!(matches!(
            route(&cfg, c(0, 0), c(9, 0), RoutePolicy::Xy),
            Err(NetError::OutOfGrid(..))
        ));
    }

    #[test]
    fn row_block_pair_uses_xy() {
        let cfg = default_config();
        let map = ClusterMap::row_block(&cfg, 4);
        let policy = choose_policy(&cfg, &map, c(2, 1), c(7, 3), PacketKind::Coherence).unwrap();
        assert_eq!(policy, RoutePolicy::Xy);
    }

    #[test]
    fn mixed_row_falls_back_to_yx() {
        let cfg = default_config();
        // 37 secure cores: rows 0..=3 plus row 4 columns 0..=4; the rest of
        // row 4 is insecure.
        let map = ClusterMap::contiguous_split(&cfg, 37);
        // Insecure pair whose X-Y route drifts through the secure half of
        // row 4; Y-X leaves the row first and stays contained.
        let src = c(8, 4);
        let dst = c(2, 5);
        let xy = route(&cfg, src, dst, RoutePolicy::Xy).unwrap();
        assert!(!path_contained(&cfg, &map, &xy, Cluster::Insecure));
        let yx = route(&cfg, src, dst, RoutePolicy::Yx).unwrap();
        assert!(path_contained(&cfg, &map, &yx, Cluster::Insecure));
        assert_eq!(
            choose_policy(&cfg, &map, src, dst, PacketKind::Coherence).unwrap(),
            RoutePolicy::Yx
        );
    }

    #[test]
    fn ipc_always_routes_xy() {
        let cfg = default_config();
        let map = ClusterMap::row_block(&cfg, 4);
        let policy = choose_policy(&cfg, &map, c(1, 1), c(6, 6), PacketKind::Ipc).unwrap();
        assert_eq!(policy, RoutePolicy::Xy);
    }

    #[test]
    fn row_block_maps_are_fully_contained() {
        let cfg = default_config();
        let map = ClusterMap::row_block(&cfg, 4);
        let report = verify_containment(&cfg, &map);
        assert!(report.ok(), "violations: {:?}", report.violations);
        // Ordered pairs over two 32-endpoint clusters.
        assert_eq!(report.pairs_checked, 2 * 32 * 31);
    }

    #[test]
    fn checkerboard_is_uncontainable() {
        let cfg = default_config();
        let mut map = ClusterMap::single_cluster(&cfg);
        for t in cfg.usable_tiles() {
            let co = cfg.coord_of(t);
            map.tile_tags[t.0] = if (co.x + co.y) % 2 == 0 {
                TileTag::Secure
            } else {
                TileTag::Insecure
            };
        }
        map.mc_tags = vec![
            Cluster::Secure,
            Cluster::Secure,
            Cluster::Insecure,
            Cluster::Insecure,
        ];
        map.region_tags = (0..cfg.region_count())
            .map(|r| map.mc_tags[cfg.mc_of_region(r)])
            .collect();
        map.ipc_buffer_region = 2;
        assert!(validate_cluster_map(&cfg, &map).ok());
        let report = verify_containment(&cfg, &map);
        assert!(!report.ok());
    }

    #[test]
    fn single_cluster_is_contained() {
        let cfg = default_config();
        let map = ClusterMap::single_cluster(&cfg);
        assert!(verify_containment(&cfg, &map).ok());
    }

    #[test]
    fn every_contiguous_split_is_contained() {
        let cfg = default_config();
        for cores in 2..=62 {
            let map = ClusterMap::contiguous_split(&cfg, cores);
            let report = verify_containment(&cfg, &map);
            assert!(
                report.ok(),
                "split {cores} violations: {:?}",
                &report.violations[..report.violations.len().min(4)]
            );
        }
    }

    #[test]
    fn hops_change_one_coordinate_by_one() {
        let cfg = default_config();
        for (src, dst) in [(c(0, 0), c(8, 7)), (c(5, 2), c(1, 6)), (c(4, 4), c(4, 0))] {
            for policy in [RoutePolicy::Xy, RoutePolicy::Yx] {
                let path = route(&cfg, src, dst, policy).unwrap();
                assert_eq!(path.len(), src.hops_to(dst) + 1);
                for w in path.windows(2) {
                    let dx = w[0].x.abs_diff(w[1].x);
                    let dy = w[0].y.abs_diff(w[1].y);
                    assert_eq!(dx + dy, 1);
                }
            }
        }
    }
}
