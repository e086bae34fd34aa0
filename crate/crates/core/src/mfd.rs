//! Zone-hour traffic aggregation and the hourly OD travel-time table.
//!
//! Per-edge flow/density series are collapsed into zone-hour macrostates
//! (vehicle-hours A, vehicle-km D) whose ratio is the space-mean speed
//! `v = D/A = q/k`. Speeds are never computed as weighted means of edge
//! speeds, which overestimate space-mean speed in heterogeneous traffic.
//! Travel times accumulate edge lengths over the static route set with
//! zone-uniform hourly speeds, giving an O(1) lookup at rollout time.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::MfdError;
use crate::netgraph::{EdgeId, NetworkGraph, RouteSet};

/// One reporting bin of an edge's flow/density series. Units: hours,
/// veh/(lane·km), veh/(h·lane).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowBin {
    pub t_start: f64,
    pub dt: f64,
    pub density: f64,
    pub flow: f64,
}

#[derive(Debug, Clone)]
pub struct EdgeFlowSeries {
    pub edge_id: EdgeId,
    pub bins: Vec<FlowBin>,
}

/// Parses a flow file (`edge_id, t_start_h, dt_h, density, flow` per line).
///
/// Bins straddling an hour boundary are split proportionally at load, so
/// every stored bin lies within a single hour. Bins must be non-negative,
/// finite, time-sorted and non-overlapping per edge.
pub fn load_flows(path: &Path) -> Result<Vec<EdgeFlowSeries>, MfdError> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut by_edge: BTreeMap<EdgeId, Vec<FlowBin>> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = trimmed.split(',').map(|s| s.trim()).collect();
        let parse = |idx: usize, what: &str| -> Result<f64, MfdError> {
            f.get(idx)
                .ok_or_else(|| MfdError::Parse { file: file.clone(), line, msg: format!("missing {what}") })?
                .parse::<f64>()
                .map_err(|_| MfdError::Parse { file: file.clone(), line, msg: format!("bad {what}: '{}'", f[idx]) })
        };
        let edge_id: EdgeId = f
            .first()
            .ok_or_else(|| MfdError::Parse { file: file.clone(), line, msg: "missing edge_id".into() })?
            .parse()
            .map_err(|_| MfdError::Parse { file: file.clone(), line, msg: format!("bad edge_id: '{}'", f[0]) })?;
        let t_start = parse(1, "t_start_h")?;
        let dt = parse(2, "dt_h")?;
        let density = parse(3, "density")?;
        let flow = parse(4, "flow")?;
        if dt <= 0.0 {
            return Err(MfdError::Parse { file, line, msg: "dt must be > 0".into() });
        }
        if !(density.is_finite() && flow.is_finite()) || density < 0.0 || flow < 0.0 {
            return Err(MfdError::Parse { file, line, msg: "density/flow must be finite and ≥ 0".into() });
        }
        for piece in split_at_hours(t_start, dt) {
            by_edge.entry(edge_id).or_default().push(FlowBin {
                t_start: piece.0,
                dt: piece.1,
                density,
                flow,
            });
        }
    }
    let mut out = Vec::new();
    for (edge_id, bins) in by_edge {
        let mut sorted = bins;
        sorted.sort_by(|a, b| a.t_start.partial_cmp(&b.t_start).unwrap());
        for w in sorted.windows(2) {
            if w[0].t_start + w[0].dt > w[1].t_start + 1e-12 {
                return Err(MfdError::Format(format!("edge {edge_id}: overlapping bins")));
            }
        }
        out.push(EdgeFlowSeries { edge_id, bins: sorted });
    }
    Ok(out)
}

/// Splits `[t, t+dt)` at integer-hour boundaries.
fn split_at_hours(t_start: f64, dt: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut t = t_start;
    let end = t_start + dt;
    while t < end - 1e-12 {
        let next_hour = t.floor() + 1.0;
        let stop = next_hour.min(end);
        out.push((t, stop - t));
        t = stop;
    }
    out
}

/// Per-zone lane-kilometers `L_z = Σ lanes·length`.
pub fn zone_lane_km(graph: &NetworkGraph) -> Vec<f64> {
    let mut out = vec![0.0; graph.n_zones()];
    for e in graph.edges() {
        out[e.zone] += e.lanes as f64 * e.length_km;
    }
    out
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MfdConfig {
    /// Density clip ε in veh/(lane·km).
    pub epsilon: f64,
    /// Speed used for zone-hours with (near-)zero vehicle-hours.
    pub fallback_speed_kmh: f64,
}

impl Default for MfdConfig {
    fn default() -> Self {
        MfdConfig { epsilon: 1e-6, fallback_speed_kmh: 50.0 }
    }
}

/// Macrostate of one zone over one hour.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoneHourState {
    pub zone: usize,
    pub hour: usize,
    pub lane_km: f64,
    /// A_z: vehicle-hours accumulated in the zone over the hour.
    pub veh_hours: f64,
    /// D_z: vehicle-km produced in the zone over the hour.
    pub veh_km: f64,
    pub density: f64,
    pub flow: f64,
    pub speed: f64,
    /// True when the fallback free-flow speed was substituted.
    pub fallback: bool,
}

/// Aggregates all edge series into the macrostate of every zone for `hour`.
pub fn aggregate_zone_hour(
    graph: &NetworkGraph,
    series: &[EdgeFlowSeries],
    hour: i64,
    cfg: &MfdConfig,
) -> Result<Vec<ZoneHourState>, MfdError> {
    if !(0..24).contains(&hour) {
        return Err(MfdError::HourRange(hour));
    }
    let hour = hour as usize;
    let lane_km = zone_lane_km(graph);
    let edge_info: BTreeMap<EdgeId, (f64, f64, usize)> = graph
        .edges()
        .iter()
        .map(|e| (e.id, (e.lanes as f64, e.length_km, e.zone)))
        .collect();

    let mut a = vec![0.0; graph.n_zones()];
    let mut d = vec![0.0; graph.n_zones()];
    // Reporting-grid coverage of this hour: the widest per-edge bin coverage.
    let mut dt_h: f64 = 0.0;
    for s in series {
        let (lanes, len, zone) = *edge_info
            .get(&s.edge_id)
            .ok_or_else(|| MfdError::Format(format!("flow series references unknown edge {}", s.edge_id)))?;
        let mut covered = 0.0;
        for b in &s.bins {
            if (b.t_start.floor() as usize) % 24 != hour {
                continue;
            }
            covered += b.dt;
            a[zone] += lanes * len * b.density * b.dt;
            d[zone] += lanes * b.flow * len * b.dt;
        }
        dt_h = dt_h.max(covered);
    }

    let mut out = Vec::with_capacity(graph.n_zones());
    for z in 0..graph.n_zones() {
        let lz = lane_km[z];
        let empty = dt_h <= 0.0 || lz <= 0.0 || a[z] <= cfg.epsilon * lz * dt_h;
        let (density, flow, speed, fallback) = if empty {
            let k = cfg.epsilon;
            let v = cfg.fallback_speed_kmh;
            (k, k * v, v, true)
        } else {
            let k = (a[z] / (lz * dt_h)).max(cfg.epsilon);
            let q = d[z] / (lz * dt_h);
            let v = d[z] / a[z];
            (k, q, v, false)
        };
        out.push(ZoneHourState {
            zone: z,
            hour,
            lane_km: lz,
            veh_hours: a[z],
            veh_km: d[z],
            density,
            flow,
            speed,
            fallback,
        });
    }
    Ok(out)
}

/// Zone-hour speed field for all 24 hours.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoneSpeeds {
    pub n_zones: usize,
    /// Row-major: `states[hour * n_zones + zone]`.
    pub states: Vec<ZoneHourState>,
}

impl ZoneSpeeds {
    pub fn state(&self, zone: usize, hour: usize) -> &ZoneHourState {
        &self.states[hour * self.n_zones + zone]
    }

    pub fn speed(&self, zone: usize, hour: usize) -> f64 {
        self.state(zone, hour).speed
    }

    /// Lane-km-weighted mean zone speed for the hour.
    pub fn mean_speed(&self, hour: usize) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for z in 0..self.n_zones {
            let s = self.state(z, hour);
            if s.lane_km > 0.0 {
                num += s.lane_km * s.speed;
                den += s.lane_km;
            }
        }
        if den > 0.0 {
            num / den
        } else {
            self.states.first().map_or(0.0, |s| s.speed)
        }
    }
}

pub fn aggregate_all(
    graph: &NetworkGraph,
    series: &[EdgeFlowSeries],
    cfg: &MfdConfig,
) -> Result<ZoneSpeeds, MfdError> {
    let mut states = Vec::with_capacity(24 * graph.n_zones());
    for hour in 0..24 {
        states.extend(aggregate_zone_hour(graph, series, hour, cfg)?);
    }
    Ok(ZoneSpeeds { n_zones: graph.n_zones(), states })
}

/// Dense 24 × N² hourly travel-time lookup (hours).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdTravelTimeTable {
    pub n_zones: usize,
    /// Row-major `times[hour][origin * n_zones + dest]`.
    times: Vec<f64>,
    pub build_hash: String,
    /// Paths retained for incident perturbations.
    pub routes: RouteSet,
}

impl OdTravelTimeTable {
    /// Travel time for hour index `hour`.
    pub fn query_hour(&self, origin: usize, dest: usize, hour: usize) -> Result<f64, MfdError> {
        if origin >= self.n_zones || dest >= self.n_zones {
            return Err(MfdError::UnknownPair(origin, dest));
        }
        Ok(self.times[(hour % 24) * self.n_zones * self.n_zones + origin * self.n_zones + dest])
    }

    /// O(1) lookup at clock time `t` (hours); the hour index is
    /// `floor(t) mod 24`.
    pub fn query(&self, origin: usize, dest: usize, t: f64) -> Result<f64, MfdError> {
        let hour = (t.rem_euclid(24.0)).floor() as usize;
        self.query_hour(origin, dest, hour)
    }

    pub fn times_at_hour(&self, hour: usize) -> &[f64] {
        let n2 = self.n_zones * self.n_zones;
        &self.times[(hour % 24) * n2..(hour % 24 + 1) * n2]
    }

    /// Returns a perturbed copy; `self` is untouched.
    pub fn perturb(
        &self,
        spec: &PerturbationSpec,
        graph: &NetworkGraph,
        rng: &mut ChaCha8Rng,
    ) -> Result<OdTravelTimeTable, MfdError> {
        spec.validate()?;
        let n = self.n_zones;
        let mut times = self.times.clone();
        match spec.kind {
            PerturbKind::Global => {
                for h in 0..24 {
                    let eta = sample_range(rng, spec.eta_range);
                    for v in &mut times[h * n * n..(h + 1) * n * n] {
                        *v *= eta;
                    }
                }
            }
            PerturbKind::Incident => {
                if graph.edges().len() < spec.corridor_edges.0 {
                    return Err(MfdError::BadSpec(format!(
                        "incident corridor needs ≥ {} edges, graph has {}",
                        spec.corridor_edges.0,
                        graph.edges().len()
                    )));
                }
                let corridor = sample_corridor(graph, spec, rng)?;
                let alpha = sample_range(rng, spec.alpha_range);
                for ((o, d), path) in self.routes.iter() {
                    if path.iter().any(|e| corridor.contains(e)) {
                        for h in 0..24 {
                            times[h * n * n + o * n + d] *= alpha;
                        }
                    }
                }
            }
        }
        let build_hash = hash_times(n, &times);
        Ok(OdTravelTimeTable { n_zones: n, times, build_hash, routes: self.routes.clone() })
    }

    /// Text export: header `(N, |R|, build hash)` then 24 row-major blocks.
    pub fn export(&self, path: &Path) -> Result<(), MfdError> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "odtable v1")?;
        writeln!(f, "zones {}", self.n_zones)?;
        writeln!(f, "routes {}", self.n_zones * self.n_zones)?;
        writeln!(f, "hash {}", self.build_hash)?;
        for h in 0..24 {
            writeln!(f, "hour {h}")?;
            for o in 0..self.n_zones {
                let row: Vec<String> = (0..self.n_zones)
                    .map(|d| format!("{}", self.times[h * self.n_zones * self.n_zones + o * self.n_zones + d]))
                    .collect();
                writeln!(f, "{}", row.join(" "))?;
            }
        }
        Ok(())
    }
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Connected edge corridor sampled by random walk over head→tail adjacency.
fn sample_corridor(
    graph: &NetworkGraph,
    spec: &PerturbationSpec,
    rng: &mut ChaCha8Rng,
) -> Result<std::collections::BTreeSet<EdgeId>, MfdError> {
    let edges = graph.edges();
    let (lo, hi) = spec.corridor_edges;
    let target = rng.random_range(lo..=hi).min(edges.len());
    for _attempt in 0..100 {
        let mut corridor = std::collections::BTreeSet::new();
        let mut current = rng.random_range(0..edges.len());
        corridor.insert(edges[current].id);
        let mut steps = 0;
        while corridor.len() < target && steps < 4 * target {
            steps += 1;
            let next_candidates = graph.out_edge_indices(edges[current].head);
            if next_candidates.is_empty() {
                break;
            }
            current = next_candidates[rng.random_range(0..next_candidates.len())];
            corridor.insert(edges[current].id);
        }
        if corridor.len() >= lo.min(edges.len()) {
            return Ok(corridor);
        }
    }
    Err(MfdError::BadSpec("could not sample a connected corridor".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    Global,
    Incident,
}

/// Robustness scenario: citywide factor or localized incident corridor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbKind,
    /// Hourly global factor range η.
    pub eta_range: (f64, f64),
    /// Corridor size range (inclusive).
    pub corridor_edges: (usize, usize),
    /// Incident penalty range α.
    pub alpha_range: (f64, f64),
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn global(seed: u64) -> Self {
        PerturbationSpec {
            kind: PerturbKind::Global,
            eta_range: (0.8, 1.2),
            corridor_edges: (5, 12),
            alpha_range: (1.5, 3.0),
            seed,
        }
    }

    pub fn incident(seed: u64) -> Self {
        PerturbationSpec { kind: PerturbKind::Incident, ..PerturbationSpec::global(seed) }
    }

    pub fn validate(&self) -> Result<(), MfdError> {
        if self.corridor_edges.0 > self.corridor_edges.1 || self.corridor_edges.0 == 0 {
            return Err(MfdError::BadSpec("corridor size range invalid".into()));
        }
        if self.eta_range.0 > self.eta_range.1 || self.alpha_range.0 > self.alpha_range.1 {
            return Err(MfdError::BadSpec("factor range invalid".into()));
        }
        Ok(())
    }
}

fn hash_times(n_zones: usize, times: &[f64]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(n_zones.to_le_bytes());
    for v in times {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Builds the full 24 × N² table from routes and zone-hour speeds.
pub fn build_od_table(
    graph: &NetworkGraph,
    routes: &RouteSet,
    speeds: &ZoneSpeeds,
) -> Result<OdTravelTimeTable, MfdError> {
    let n = speeds.n_zones;
    for h in 0..24 {
        for z in 0..n {
            if speeds.speed(z, h) <= 0.0 {
                return Err(MfdError::BadSpeed { zone: z, hour: h });
            }
        }
    }
    let edge_info: BTreeMap<EdgeId, (f64, usize)> =
        graph.edges().iter().map(|e| (e.id, (e.length_km, e.zone))).collect();
    let mut times = vec![0.0; 24 * n * n];
    for h in 0..24 {
        for ((o, d), path) in routes.iter() {
            let tau = path_time(path, &edge_info, speeds, h);
            times[h * n * n + o * n + d] = tau;
        }
    }
    Ok(OdTravelTimeTable { n_zones: n, build_hash: hash_times(n, &times), times, routes: routes.clone() })
}

/// τ of an edge sequence at hour `h`: Σ ℓ_e / v_{z(e)}.
pub fn path_time(
    path: &[EdgeId],
    edge_info: &BTreeMap<EdgeId, (f64, usize)>,
    speeds: &ZoneSpeeds,
    hour: usize,
) -> f64 {
    path.iter()
        .map(|eid| {
            let (len, zone) = edge_info[eid];
            len / speeds.speed(zone, hour)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{Edge, Node};

    fn one_edge_graph() -> NetworkGraph {
        let nodes = vec![
            Node { id: 0, x: 0.0, y: 0.0, zone: Some(0) },
            Node { id: 1, x: 1.0, y: 0.0, zone: Some(0) },
        ];
        let edges =
            vec![Edge { id: 0, tail: 0, head: 1, length_km: 2.0, lanes: 3, zone: 0, free_flow_kmh: None }];
        NetworkGraph::from_parts(nodes, edges).unwrap()
    }

    fn series(edge_id: EdgeId, hour: f64, density: f64, flow: f64) -> EdgeFlowSeries {
        EdgeFlowSeries { edge_id, bins: vec![FlowBin { t_start: hour, dt: 1.0, density, flow }] }
    }

    #[test]
    fn lane_km_single_edge() {
        let g = one_edge_graph();
        assert_eq!(zone_lane_km(&g), vec![6.0]);
    }

    #[test]
    fn lane_km_two_edges() {
        let nodes = vec![
            Node { id: 0, x: 0.0, y: 0.0, zone: Some(0) },
            Node { id: 1, x: 1.0, y: 0.0, zone: Some(0) },
        ];
        let edges = vec![
            Edge { id: 0, tail: 0, head: 1, length_km: 1.0, lanes: 2, zone: 0, free_flow_kmh: None },
            Edge { id: 1, tail: 1, head: 0, length_km: 0.5, lanes: 4, zone: 0, free_flow_kmh: None },
        ];
        let g = NetworkGraph::from_parts(nodes, edges).unwrap();
        assert_eq!(zone_lane_km(&g), vec![4.0]);
    }

    #[test]
    fn single_edge_speed_is_q_over_k() {
        let g = one_edge_graph();
        let s = aggregate_zone_hour(&g, &[series(0, 5.0, 10.0, 200.0)], 5, &MfdConfig::default()).unwrap();
        assert!((s[0].speed - 20.0).abs() < 1e-12);
        assert!(!s[0].fallback);
        // identity q = k v
        assert!((s[0].flow - s[0].density * s[0].speed).abs() / s[0].flow < 1e-12);
    }

    #[test]
    fn empty_zone_uses_fallback() {
        let g = one_edge_graph();
        let cfg = MfdConfig { fallback_speed_kmh: 37.0, ..MfdConfig::default() };
        let s = aggregate_zone_hour(&g, &[], 5, &cfg).unwrap();
        assert!(s[0].fallback);
        assert_eq!(s[0].speed, 37.0);
        assert!((s[0].flow - s[0].density * s[0].speed).abs() <= 1e-12 * s[0].flow);
    }

    #[test]
    fn hour_out_of_range_is_an_error() {
        let g = one_edge_graph();
        assert!(matches!(
            aggregate_zone_hour(&g, &[], 24, &MfdConfig::default()),
            Err(MfdError::HourRange(24))
        ));
    }

    /// Space-mean speed from D/A differs from the lane-km-weighted mean of
    /// edge speeds on heterogeneous traffic; the latter overestimates.
    #[test]
    fn space_mean_vs_weighted_edge_speeds() {
        let nodes = vec![
            Node { id: 0, x: 0.0, y: 0.0, zone: Some(0) },
            Node { id: 1, x: 1.0, y: 0.0, zone: Some(0) },
        ];
        let edges = vec![
            Edge { id: 0, tail: 0, head: 1, length_km: 1.0, lanes: 1, zone: 0, free_flow_kmh: None },
            Edge { id: 1, tail: 1, head: 0, length_km: 1.0, lanes: 1, zone: 0, free_flow_kmh: None },
        ];
        let g = NetworkGraph::from_parts(nodes, edges).unwrap();
        let flows = vec![series(0, 8.0, 100.0, 500.0), series(1, 8.0, 5.0, 300.0)];
        let s = aggregate_zone_hour(&g, &flows, 8, &MfdConfig::default()).unwrap();
        let space_mean = s[0].speed;
        assert!((space_mean - 800.0 / 105.0).abs() < 1e-12, "space mean {space_mean}");

        let weighted_edge_mean: f64 = (500.0 / 100.0 + 300.0 / 5.0) / 2.0;
        assert!((weighted_edge_mean - 32.5).abs() < 1e-12);
        assert!(weighted_edge_mean > space_mean, "edge-speed averaging must overestimate here");
    }

    #[test]
    fn bins_split_at_hour_boundaries() {
        let pieces = split_at_hours(7.75, 0.5);
        assert_eq!(pieces.len(), 2);
        assert!((pieces[0].0 - 7.75).abs() < 1e-12 && (pieces[0].1 - 0.25).abs() < 1e-12);
        assert!((pieces[1].0 - 8.0).abs() < 1e-12 && (pieces[1].1 - 0.25).abs() < 1e-12);
    }

    fn table_fixture() -> (NetworkGraph, OdTravelTimeTable) {
        // 2 zones: 10 km edge each direction between centroids
        let nodes = vec![
            Node { id: 0, x: 0.0, y: 0.0, zone: Some(0) },
            Node { id: 1, x: 10.0, y: 0.0, zone: Some(1) },
        ];
        let edges = vec![
            Edge { id: 0, tail: 0, head: 1, length_km: 10.0, lanes: 1, zone: 0, free_flow_kmh: None },
            Edge { id: 1, tail: 1, head: 0, length_km: 10.0, lanes: 1, zone: 1, free_flow_kmh: None },
        ];
        let g = NetworkGraph::from_parts(nodes, edges).unwrap();
        let routes = crate::netgraph::build_static_routes(&g, crate::netgraph::WeightMode::Length, 50.0).unwrap();
        let flows: Vec<EdgeFlowSeries> = (0..24)
            .flat_map(|h| vec![series(0, h as f64, 10.0, 500.0), series(1, h as f64, 10.0, 500.0)])
            .collect();
        let speeds = aggregate_all(&g, &flows, &MfdConfig::default()).unwrap();
        let table = build_od_table(&g, &routes, &speeds).unwrap();
        (g, table)
    }

    #[test]
    fn ten_km_at_fifty_kmh_is_point_two_hours() {
        let (_, table) = table_fixture();
        assert!((table.query_hour(0, 1, 0).unwrap() - 0.2).abs() < 1e-12);
        for h in 0..24 {
            assert_eq!(table.query_hour(0, 0, h).unwrap(), 0.0);
        }
    }

    #[test]
    fn clock_wraps_modulo_24() {
        let (_, table) = table_fixture();
        let a = table.query(0, 1, 25.5).unwrap();
        let b = table.query_hour(0, 1, 1).unwrap();
        assert_eq!(a, b);
        // repeated queries in the same hour are identical
        assert_eq!(table.query(0, 1, 25.2).unwrap(), a);
    }

    #[test]
    fn global_perturb_with_degenerate_range_is_identity() {
        let (g, table) = table_fixture();
        let spec = PerturbationSpec { eta_range: (1.0, 1.0), ..PerturbationSpec::global(3) };
        let mut rng = rand::SeedableRng::seed_from_u64(3);
        let p = table.perturb(&spec, &g, &mut rng).unwrap();
        assert_eq!(p.times, table.times);
    }

    #[test]
    fn global_perturb_is_deterministic_under_seed() {
        let (g, table) = table_fixture();
        let spec = PerturbationSpec::global(11);
        let mut r1 = rand::SeedableRng::seed_from_u64(spec.seed);
        let mut r2 = rand::SeedableRng::seed_from_u64(spec.seed);
        let p1 = table.perturb(&spec, &g, &mut r1).unwrap();
        let p2 = table.perturb(&spec, &g, &mut r2).unwrap();
        assert_eq!(p1.times, p2.times);
    }

    #[test]
    fn incident_on_tiny_graph_is_an_error() {
        let (g, table) = table_fixture();
        let spec = PerturbationSpec::incident(5);
        let mut rng = rand::SeedableRng::seed_from_u64(5);
        assert!(table.perturb(&spec, &g, &mut rng).is_err());
    }
}
