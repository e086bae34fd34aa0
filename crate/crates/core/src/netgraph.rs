//! Zoned road network loading and the one-time static route set.
//!
//! Network files are delimited text, one edge per line:
//! `edge_id, tail_id, head_id, length_km, lanes, zone_id[, free_flow_kmh]`;
//! node files are `node_id, x, y[, zone_id]`. Routes are computed once per
//! origin-destination zone pair (zone centroid nodes) and never change.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::NetError;

pub type NodeId = u64;
pub type EdgeId = u64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    pub zone: Option<usize>,
}

/// A directed road edge with its zone label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub tail: NodeId,
    pub head: NodeId,
    pub length_km: f64,
    pub lanes: u32,
    pub zone: usize,
    pub free_flow_kmh: Option<f64>,
}

/// Validated directed graph with a zone partition.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    nodes: Vec<Node>,
    node_index: BTreeMap<NodeId, usize>,
    edges: Vec<Edge>,
    /// Outgoing edge indices per node index, sorted by edge id.
    out_edges: Vec<Vec<usize>>,
    n_zones: usize,
    /// One representative node per zone: the node nearest the mean
    /// coordinate of the zone's nodes (ties broken by smaller node id).
    centroids: Vec<NodeId>,
}

impl NetworkGraph {
    /// Loads and validates a network from an edge file and a node file.
    pub fn load(network_file: &Path, node_file: &Path) -> Result<Self, NetError> {
        let nodes = parse_nodes(node_file)?;
        let edges = parse_edges(network_file)?;
        Self::from_parts(nodes, edges)
    }

    /// Builds and validates a graph from in-memory parts.
    pub fn from_parts(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, NetError> {
        let mut node_index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id, i).is_some() {
                return Err(NetError::Invalid(format!("duplicate node id {}", n.id)));
            }
        }
        let mut edge_ids = BTreeSet::new();
        for e in &edges {
            if !edge_ids.insert(e.id) {
                return Err(NetError::Invalid(format!("duplicate edge id {}", e.id)));
            }
            if e.length_km <= 0.0 {
                return Err(NetError::Invalid(format!("edge {}: length_km must be > 0", e.id)));
            }
            if e.lanes < 1 {
                return Err(NetError::Invalid(format!("edge {}: lanes must be ≥ 1", e.id)));
            }
            for end in [e.tail, e.head] {
                if !node_index.contains_key(&end) {
                    return Err(NetError::Invalid(format!("edge {} references unknown node {}", e.id, end)));
                }
            }
        }

        let n_zones = zone_count(&nodes, &edges)?;
        let node_zones = infer_node_zones(&nodes, &edges, &node_index);
        let centroids = compute_centroids(&nodes, &edges, &node_zones, n_zones)?;

        let mut out_edges = vec![Vec::new(); nodes.len()];
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&i| edges[i].id);
        for i in order {
            out_edges[node_index[&edges[i].tail]].push(i);
        }

        let g = NetworkGraph { nodes, node_index, edges, out_edges, n_zones, centroids };
        g.check_weak_connectivity()?;
        Ok(g)
    }

    /// Weak connectivity over the OD (centroid) node subset.
    fn check_weak_connectivity(&self) -> Result<(), NetError> {
        if self.centroids.is_empty() {
            return Ok(());
        }
        let mut undirected = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            let t = self.node_index[&e.tail];
            let h = self.node_index[&e.head];
            undirected[t].push(h);
            undirected[h].push(t);
        }
        let start = self.node_index[&self.centroids[0]];
        let mut seen = vec![false; self.nodes.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &undirected[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        for &c in &self.centroids {
            if !seen[self.node_index[&c]] {
                return Err(NetError::Disconnected(c.to_string()));
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_by_id(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.iter().find(|e| e.id == id)
    }

    pub fn n_zones(&self) -> usize {
        self.n_zones
    }

    /// Representative OD node per zone.
    pub fn centroid_nodes(&self) -> &[NodeId] {
        &self.centroids
    }

    /// Edge indices leaving `node`, sorted by edge id.
    pub fn out_edge_indices(&self, node: NodeId) -> &[usize] {
        &self.out_edges[self.node_index[&node]]
    }
}

fn zone_count(nodes: &[Node], edges: &[Edge]) -> Result<usize, NetError> {
    let mut max_zone = None;
    for z in nodes.iter().filter_map(|n| n.zone).chain(edges.iter().map(|e| e.zone)) {
        max_zone = Some(max_zone.map_or(z, |m: usize| m.max(z)));
    }
    max_zone.map(|m| m + 1).ok_or_else(|| NetError::Invalid("no zones present".into()))
}

/// Node's zone: explicit label if given, else the smallest zone among its
/// incident edges.
fn infer_node_zones(nodes: &[Node], edges: &[Edge], index: &BTreeMap<NodeId, usize>) -> Vec<Option<usize>> {
    let mut zones: Vec<Option<usize>> = nodes.iter().map(|n| n.zone).collect();
    for e in edges {
        for end in [e.tail, e.head] {
            let i = index[&end];
            if zones[i].is_none() || (nodes[i].zone.is_none() && e.zone < zones[i].unwrap()) {
                zones[i] = Some(zones[i].map_or(e.zone, |z| z.min(e.zone)));
            }
        }
    }
    zones
}

fn compute_centroids(
    nodes: &[Node],
    edges: &[Edge],
    node_zones: &[Option<usize>],
    n_zones: usize,
) -> Result<Vec<NodeId>, NetError> {
    let mut centroids = Vec::with_capacity(n_zones);
    for z in 0..n_zones {
        let members: Vec<&Node> = nodes
            .iter()
            .zip(node_zones)
            .filter(|(_, nz)| **nz == Some(z))
            .map(|(n, _)| n)
            .collect();
        if members.is_empty() {
            // zone labelled only through edges: represent it by the tail of
            // its smallest-id edge
            let rep = edges
                .iter()
                .filter(|e| e.zone == z)
                .min_by_key(|e| e.id)
                .map(|e| e.tail)
                .ok_or_else(|| NetError::Invalid(format!("zone {z} has no nodes or edges")))?;
            centroids.push(rep);
            continue;
        }
        let cx = members.iter().map(|n| n.x).sum::<f64>() / members.len() as f64;
        let cy = members.iter().map(|n| n.y).sum::<f64>() / members.len() as f64;
        let best = members
            .iter()
            .min_by(|a, b| {
                let da = (a.x - cx).powi(2) + (a.y - cy).powi(2);
                let db = (b.x - cx).powi(2) + (b.y - cy).powi(2);
                da.partial_cmp(&db).unwrap().then(a.id.cmp(&b.id))
            })
            .unwrap();
        centroids.push(best.id);
    }
    Ok(centroids)
}

fn split_line(line: &str) -> Vec<String> {
    line.split(',').map(|s| s.trim().to_string()).collect()
}

fn parse_field<T: std::str::FromStr>(
    fields: &[String],
    idx: usize,
    what: &str,
    file: &str,
    line: usize,
) -> Result<T, NetError> {
    fields
        .get(idx)
        .ok_or_else(|| NetError::Parse { file: file.into(), line, msg: format!("missing field {what}") })?
        .parse::<T>()
        .map_err(|_| NetError::Parse { file: file.into(), line, msg: format!("bad {what}: '{}'", fields[idx]) })
}

fn parse_nodes(path: &Path) -> Result<Vec<Node>, NetError> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut nodes = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let f = split_line(trimmed);
        let id: NodeId = parse_field(&f, 0, "node_id", &file, line)?;
        let x: f64 = parse_field(&f, 1, "x", &file, line)?;
        let y: f64 = parse_field(&f, 2, "y", &file, line)?;
        let zone = if f.len() > 3 && !f[3].is_empty() {
            Some(parse_field::<usize>(&f, 3, "zone_id", &file, line)?)
        } else {
            None
        };
        nodes.push(Node { id, x, y, zone });
    }
    Ok(nodes)
}

fn parse_edges(path: &Path) -> Result<Vec<Edge>, NetError> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let f = split_line(trimmed);
        let id: EdgeId = parse_field(&f, 0, "edge_id", &file, line)?;
        let tail: NodeId = parse_field(&f, 1, "tail_id", &file, line)?;
        let head: NodeId = parse_field(&f, 2, "head_id", &file, line)?;
        let length_km: f64 = parse_field(&f, 3, "length_km", &file, line)?;
        let lanes: u32 = parse_field(&f, 4, "lanes", &file, line)?;
        let zone: usize = parse_field(&f, 5, "zone_id", &file, line)?;
        let free_flow_kmh = if f.len() > 6 && !f[6].is_empty() {
            Some(parse_field::<f64>(&f, 6, "free_flow_kmh", &file, line)?)
        } else {
            None
        };
        if length_km <= 0.0 {
            return Err(NetError::Parse { file, line, msg: "length_km must be > 0".into() });
        }
        if lanes < 1 {
            return Err(NetError::Parse { file, line, msg: "lanes must be ≥ 1".into() });
        }
        edges.push(Edge { id, tail, head, length_km, lanes, zone, free_flow_kmh });
    }
    Ok(edges)
}

/// Zone partition input for [`assign_edge_zones`]: a uniform grid over a
/// bounding box, explicit per-edge labels, or both (explicit wins).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoneAssignment {
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub explicit: BTreeMap<EdgeId, usize>,
}

/// Uniform H×W cell grid over `[x0, x0+w_extent] × [y0, y0+h_extent]`.
/// Zone index of a point is `row * w + col`, rows counted from y0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub x0: f64,
    pub y0: f64,
    pub w_extent: f64,
    pub h_extent: f64,
    pub h: usize,
    pub w: usize,
}

impl GridSpec {
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        if self.w_extent <= 0.0 || self.h_extent <= 0.0 {
            return None;
        }
        let fx = (x - self.x0) / self.w_extent;
        let fy = (y - self.y0) / self.h_extent;
        if !(0.0..=1.0).contains(&fx) || !(0.0..=1.0).contains(&fy) {
            return None;
        }
        let col = ((fx * self.w as f64) as usize).min(self.w - 1);
        let row = ((fy * self.h as f64) as usize).min(self.h - 1);
        Some(row * self.w + col)
    }
}

/// Reassigns every edge's zone from a partition. An edge whose endpoints
/// fall in different cells takes the cell containing its tail node.
/// Explicit per-edge labels override geometry.
pub fn assign_edge_zones(graph: &NetworkGraph, partition: &ZoneAssignment) -> Result<NetworkGraph, NetError> {
    let mut nodes = graph.nodes.clone();
    let mut edges = graph.edges.clone();
    let by_id: BTreeMap<NodeId, (f64, f64)> = nodes.iter().map(|n| (n.id, (n.x, n.y))).collect();
    for e in &mut edges {
        if let Some(&z) = partition.explicit.get(&e.id) {
            e.zone = z;
            continue;
        }
        let Some(grid) = &partition.grid else {
            return Err(NetError::NoZone(e.id.to_string()));
        };
        let (tx, ty) = by_id[&e.tail];
        let (hx, hy) = by_id[&e.head];
        let tz = grid.cell_of(tx, ty);
        let hz = grid.cell_of(hx, hy);
        e.zone = match (tz, hz) {
            (Some(t), Some(h)) if t == h => t,
            (Some(t), _) => t, // straddling edges take the tail node's zone
            (None, _) => return Err(NetError::NoZone(e.id.to_string())),
        };
    }
    if let Some(grid) = &partition.grid {
        for n in &mut nodes {
            n.zone = grid.cell_of(n.x, n.y).or(n.zone);
        }
    }
    NetworkGraph::from_parts(nodes, edges)
}

/// Static edge weight used for route construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    FreeFlowTime,
    Length,
}

impl WeightMode {
    fn weight(&self, e: &Edge, default_speed_kmh: f64) -> f64 {
        match self {
            WeightMode::Length => e.length_km,
            WeightMode::FreeFlowTime => e.length_km / e.free_flow_kmh.unwrap_or(default_speed_kmh),
        }
    }
}

/// Fixed minimum-weight path per OD zone pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteSet {
    /// All N² zone pairs, sorted.
    pub od_pairs: Vec<(usize, usize)>,
    paths: BTreeMap<(usize, usize), Vec<EdgeId>>,
    /// Representative node per zone.
    pub centroids: Vec<NodeId>,
}

impl RouteSet {
    pub fn path(&self, origin_zone: usize, dest_zone: usize) -> Option<&[EdgeId]> {
        self.paths.get(&(origin_zone, dest_zone)).map(|p| p.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<EdgeId>)> {
        self.paths.iter()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Serializes as a JSON object mapping `"o:d"` to the edge-id list.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, &Vec<EdgeId>> =
            self.paths.iter().map(|((o, d), p)| (format!("{o}:{d}"), p)).collect();
        let doc = serde_json::json!({
            "centroids": self.centroids,
            "paths": map,
        });
        serde_json::to_string_pretty(&doc).expect("routeset serialization")
    }
}

/// Computes the minimum-weight path between every pair of zone centroids.
///
/// Deterministic: among equal-weight paths the lexicographically smallest
/// edge-id sequence wins. The path for `(o, o)` is empty.
pub fn build_static_routes(
    graph: &NetworkGraph,
    mode: WeightMode,
    default_speed_kmh: f64,
) -> Result<RouteSet, NetError> {
    let centroids = graph.centroid_nodes().to_vec();
    let mut paths = BTreeMap::new();
    for (oz, &origin) in centroids.iter().enumerate() {
        let tree = dijkstra_lex(graph, origin, mode, default_speed_kmh);
        for (dz, &dest) in centroids.iter().enumerate() {
            if oz == dz {
                paths.insert((oz, dz), Vec::new());
                continue;
            }
            let di = graph.node_index[&dest];
            match &tree[di] {
                Some((_, seq)) => {
                    paths.insert((oz, dz), seq.clone());
                }
                None => {
                    return Err(NetError::Unreachable {
                        origin: origin.to_string(),
                        dest: dest.to_string(),
                    })
                }
            }
        }
    }
    let od_pairs = paths.keys().cloned().collect();
    Ok(RouteSet { od_pairs, paths, centroids })
}

/// Dijkstra from `origin`; returns per node index the minimum weight and the
/// lexicographically smallest edge-id sequence among minimum-weight paths.
///
/// Two passes: distances first, then a DP over the shortest-path DAG in
/// ascending-distance order (valid because edge weights are strictly
/// positive).
fn dijkstra_lex(
    graph: &NetworkGraph,
    origin: NodeId,
    mode: WeightMode,
    default_speed_kmh: f64,
) -> Vec<Option<(f64, Vec<EdgeId>)>> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let n = graph.nodes.len();
    let oi = graph.node_index[&origin];
    let mut dist = vec![f64::INFINITY; n];
    dist[oi] = 0.0;
    let mut heap: BinaryHeap<Reverse<(OrdF64, usize)>> = BinaryHeap::new();
    heap.push(Reverse((OrdF64(0.0), oi)));
    while let Some(Reverse((OrdF64(d), u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &ei in &graph.out_edges[u] {
            let e = &graph.edges[ei];
            let w = mode.weight(e, default_speed_kmh);
            let v = graph.node_index[&e.head];
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((OrdF64(nd), v)));
            }
        }
    }

    // DP over the shortest-path DAG in ascending-distance order.
    let mut order: Vec<usize> = (0..n).filter(|&i| dist[i].is_finite()).collect();
    order.sort_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap().then(a.cmp(&b)));
    let mut seq: Vec<Option<Vec<EdgeId>>> = vec![None; n];
    seq[oi] = Some(Vec::new());
    for &u in &order {
        let Some(useq) = seq[u].clone() else { continue };
        for &ei in &graph.out_edges[u] {
            let e = &graph.edges[ei];
            let w = mode.weight(e, default_speed_kmh);
            let v = graph.node_index[&e.head];
            if dist[u] + w != dist[v] {
                continue;
            }
            let mut cand = useq.clone();
            cand.push(e.id);
            match &seq[v] {
                Some(cur) if *cur <= cand => {}
                _ => seq[v] = Some(cand),
            }
        }
    }

    (0..n)
        .map(|i| match &seq[i] {
            Some(s) => Some((dist[i], s.clone())),
            None => None,
        })
        .collect()
}

#[derive(PartialEq, PartialOrd)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

#[allow(clippy::derive_ord_xor_partial_ord)]
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).expect("non-NaN weights")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_two_node_network() {
        let nodes = write_tmp("0, 0.0, 0.0, 0\n1, 1.0, 0.0, 0\n");
        let edges = write_tmp("0, 0, 1, 1.0, 2, 0\n");
        let g = NetworkGraph::load(edges.path(), nodes.path()).unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.nodes().len(), 2);
        assert_eq!(g.n_zones(), 1);
    }

    #[test]
    fn zero_lanes_is_an_error() {
        let nodes = write_tmp("0, 0, 0, 0\n1, 1, 0, 0\n");
        let edges = write_tmp("0, 0, 1, 1.0, 0, 0\n");
        let err = NetworkGraph::load(edges.path(), nodes.path()).unwrap_err();
        assert!(err.to_string().contains("lanes must be ≥ 1"), "{err}");
    }

    #[test]
    fn parse_error_carries_line_number() {
        let nodes = write_tmp("0, 0, 0, 0\n1, 1, 0, 0\n");
        let edges = write_tmp("0, 0, 1, 1.0, 2, 0\nbogus line\n");
        let err = NetworkGraph::load(edges.path(), nodes.path()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn disconnected_centroid_is_an_error() {
        let nodes = write_tmp("0, 0, 0, 0\n1, 1, 0, 0\n2, 5, 5, 1\n");
        let edges = write_tmp("0, 0, 1, 1.0, 2, 0\n");
        let err = NetworkGraph::load(edges.path(), nodes.path()).unwrap_err();
        assert!(matches!(err, NetError::Disconnected(_)), "{err}");
    }

    #[test]
    fn straddling_edge_takes_tail_zone() {
        // grid of 2 zones side by side; edge 0 fully in zone 1's cell,
        // edge 1 straddles with tail in zone 1
        let nodes = vec![
            Node { id: 0, x: 1.5, y: 0.5, zone: None },
            Node { id: 1, x: 1.6, y: 0.5, zone: None },
            Node { id: 2, x: 0.5, y: 0.5, zone: None },
        ];
        let edges = vec![
            Edge { id: 0, tail: 0, head: 1, length_km: 0.1, lanes: 1, zone: 0, free_flow_kmh: None },
            Edge { id: 1, tail: 1, head: 2, length_km: 1.0, lanes: 1, zone: 0, free_flow_kmh: None },
        ];
        let g = NetworkGraph::from_parts(nodes, edges).unwrap();
        let grid = GridSpec { x0: 0.0, y0: 0.0, w_extent: 2.0, h_extent: 1.0, h: 1, w: 2 };
        let assigned =
            assign_edge_zones(&g, &ZoneAssignment { grid: Some(grid), explicit: BTreeMap::new() }).unwrap();
        assert_eq!(assigned.edges()[0].zone, 1, "fully inside cell 1");
        assert_eq!(assigned.edges()[1].zone, 1, "straddling edge follows its tail node");
    }

    #[test]
    fn explicit_mapping_overrides_geometry() {
        let nodes = vec![
            Node { id: 0, x: 0.5, y: 0.5, zone: None },
            Node { id: 1, x: 0.6, y: 0.5, zone: None },
        ];
        let edges = vec![Edge { id: 7, tail: 0, head: 1, length_km: 0.1, lanes: 1, zone: 0, free_flow_kmh: None }];
        let g = NetworkGraph::from_parts(nodes, edges).unwrap();
        let grid = GridSpec { x0: 0.0, y0: 0.0, w_extent: 2.0, h_extent: 1.0, h: 1, w: 2 };
        let mut explicit = BTreeMap::new();
        explicit.insert(7u64, 1usize);
        let assigned = assign_edge_zones(&g, &ZoneAssignment { grid: Some(grid), explicit }).unwrap();
        assert_eq!(assigned.edges()[0].zone, 1);
    }

    fn diamond_graph() -> NetworkGraph {
        // 0 -> 1 -> 3 (1 + 1) and 0 -> 2 -> 3 (2 + 1); plus direct 0 -> 3 (3)
        let nodes = vec![
            Node { id: 0, x: 0.0, y: 0.0, zone: Some(0) },
            Node { id: 1, x: 1.0, y: 1.0, zone: Some(0) },
            Node { id: 2, x: 1.0, y: -1.0, zone: Some(0) },
            Node { id: 3, x: 2.0, y: 0.0, zone: Some(1) },
        ];
        let mk = |id, tail, head, len| Edge { id, tail, head, length_km: len, lanes: 1, zone: 0, free_flow_kmh: None };
        let edges = vec![
            mk(0, 0, 1, 1.0),
            mk(1, 1, 3, 1.0),
            mk(2, 0, 2, 2.0),
            mk(3, 2, 3, 1.0),
            mk(4, 0, 3, 3.0),
            mk(5, 3, 0, 1.0),
        ];
        NetworkGraph::from_parts(nodes, edges).unwrap()
    }

    #[test]
    fn diamond_takes_cheaper_branch() {
        let g = diamond_graph();
        let routes = build_static_routes(&g, WeightMode::Length, 50.0).unwrap();
        assert_eq!(routes.path(0, 1).unwrap(), &[0, 1]);
        assert_eq!(routes.path(0, 0).unwrap(), &[] as &[EdgeId]);
    }

    #[test]
    fn equal_weight_tie_breaks_lexicographically() {
        // two parallel 2-hop paths of equal weight; edge ids pick the winner
        let nodes = vec![
            Node { id: 0, x: 0.0, y: 0.0, zone: Some(0) },
            Node { id: 1, x: 1.0, y: 1.0, zone: Some(0) },
            Node { id: 2, x: 1.0, y: -1.0, zone: Some(0) },
            Node { id: 3, x: 2.0, y: 0.0, zone: Some(1) },
        ];
        let mk = |id, tail, head| Edge { id, tail, head, length_km: 1.0, lanes: 1, zone: 0, free_flow_kmh: None };
        let edges = vec![mk(2, 0, 1), mk(3, 1, 3), mk(0, 0, 2), mk(1, 2, 3), mk(9, 3, 0)];
        let g = NetworkGraph::from_parts(nodes, edges).unwrap();
        let routes = build_static_routes(&g, WeightMode::Length, 50.0).unwrap();
        assert_eq!(routes.path(0, 1).unwrap(), &[0, 1], "lexicographically smaller sequence wins");
    }

    #[test]
    fn routeset_serialization_is_deterministic() {
        let g = diamond_graph();
        let a = build_static_routes(&g, WeightMode::Length, 50.0).unwrap().to_json();
        let b = build_static_routes(&g, WeightMode::Length, 50.0).unwrap().to_json();
        assert_eq!(a, b);
    }
}
