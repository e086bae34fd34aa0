//! Synthetic demand/network presets.
//!
//! The bundled scenarios are small enough for laptop-scale training while
//! keeping the trade-off that makes delayed matching interesting: peak-hour
//! congestion inflates cross-zone pickups, so matching a request against an
//! adjacent-zone driver is much more expensive than holding briefly for a
//! local one.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{ScenarioConfig, Surrogate};
use crate::error::TrainError;
use crate::mfd::{aggregate_all, build_od_table, EdgeFlowSeries, FlowBin, MfdConfig};
use crate::netgraph::{build_static_routes, Edge, NetworkGraph, Node, WeightMode};
use crate::reward::RewardConfig;
use crate::train::ScenarioBundle;

/// Demand shape of a generated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandPreset {
    /// Same rates all 24 hours.
    Flat,
    /// Morning and evening peaks with congestion to match.
    TwoPeak,
}

/// Hour classes used by the generators.
fn hour_class(h: usize) -> HourClass {
    match h {
        7..=9 | 16..=18 => HourClass::Peak,
        6 | 10 | 15 | 19 => HourClass::Shoulder,
        _ => HourClass::Off,
    }
}

enum HourClass {
    Peak,
    Shoulder,
    Off,
}

/// Options for the 2×2 toy scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyOptions {
    pub preset: DemandPreset,
    /// Off-peak passenger rate per zone (1/h).
    pub base_rate: f64,
    /// Peak-hour passenger rate per zone (1/h).
    pub peak_rate: f64,
    /// Driver arrival rate as a multiple of passenger rate.
    pub driver_mult: f64,
    pub horizon_h: f64,
    pub warmup_epochs: u32,
    pub seed: u64,
}

impl Default for ToyOptions {
    fn default() -> Self {
        ToyOptions {
            preset: DemandPreset::TwoPeak,
            base_rate: 20.0,
            peak_rate: 100.0,
            driver_mult: 1.15,
            horizon_h: 6.0,
            warmup_epochs: 60,
            seed: 42,
        }
    }
}

/// Zone speed (km/h) by hour for the generated flow fixture.
fn zone_speed(preset: DemandPreset, h: usize) -> f64 {
    match preset {
        DemandPreset::Flat => 35.0,
        DemandPreset::TwoPeak => match hour_class(h) {
            HourClass::Peak => 12.0,
            HourClass::Shoulder => 20.0,
            HourClass::Off => 35.0,
        },
    }
}

fn zone_density(preset: DemandPreset, h: usize) -> f64 {
    match preset {
        DemandPreset::Flat => 12.0,
        DemandPreset::TwoPeak => match hour_class(h) {
            HourClass::Peak => 60.0,
            HourClass::Shoulder => 30.0,
            HourClass::Off => 10.0,
        },
    }
}

fn rate_for(opts: &ToyOptions, h: usize) -> f64 {
    match opts.preset {
        DemandPreset::Flat => opts.base_rate,
        DemandPreset::TwoPeak => match hour_class(h) {
            HourClass::Peak => opts.peak_rate,
            HourClass::Shoulder => (opts.base_rate + opts.peak_rate) / 2.0,
            HourClass::Off => opts.base_rate,
        },
    }
}

/// The 2×2 grid network: one node per zone at the cell center, directed
/// edges both ways between grid neighbours (8 edges, 2 km, 2 lanes).
pub fn toy_network() -> NetworkGraph {
    let nodes = vec![
        Node { id: 0, x: 1.0, y: 1.0, zone: Some(0) },
        Node { id: 1, x: 3.0, y: 1.0, zone: Some(1) },
        Node { id: 2, x: 1.0, y: 3.0, zone: Some(2) },
        Node { id: 3, x: 3.0, y: 3.0, zone: Some(3) },
    ];
    let mk = |id, tail: u64, head: u64| Edge {
        id,
        tail,
        head,
        length_km: 2.0,
        lanes: 2,
        zone: tail as usize,
        free_flow_kmh: Some(50.0),
    };
    let edges = vec![
        mk(0, 0, 1),
        mk(1, 1, 0),
        mk(2, 0, 2),
        mk(3, 2, 0),
        mk(4, 1, 3),
        mk(5, 3, 1),
        mk(6, 2, 3),
        mk(7, 3, 2),
    ];
    NetworkGraph::from_parts(nodes, edges).expect("toy network is valid")
}

/// Hourly flow series realizing the preset's speed profile on every edge.
pub fn toy_flows(preset: DemandPreset, graph: &NetworkGraph) -> Vec<EdgeFlowSeries> {
    graph
        .edges()
        .iter()
        .map(|e| EdgeFlowSeries {
            edge_id: e.id,
            bins: (0..24)
                .map(|h| {
                    let v = zone_speed(preset, h);
                    let k = zone_density(preset, h);
                    FlowBin { t_start: h as f64, dt: 1.0, density: k, flow: k * v }
                })
                .collect(),
        })
        .collect()
}

/// Scenario config for the toy grid.
pub fn toy_scenario(opts: &ToyOptions) -> ScenarioConfig {
    let rates: Vec<Vec<f64>> = (0..4).map(|_| (0..24).map(|h| rate_for(opts, h)).collect()).collect();
    let driver_rates: Vec<Vec<f64>> =
        rates.iter().map(|row| row.iter().map(|r| r * opts.driver_mult).collect()).collect();
    // destination mix: mostly intra-zone, some adjacent, rare diagonal
    let od = |o: usize, d: usize| -> f64 {
        if o == d {
            0.55
        } else if (o ^ d) == 3 {
            0.05 // diagonal of the 2×2 grid
        } else {
            0.20
        }
    };
    ScenarioConfig {
        grid_h: 2,
        grid_w: 2,
        horizon_h: opts.horizon_h,
        epoch_dt_s: 10.0,
        warmup_epochs: opts.warmup_epochs,
        randomize_start: true,
        start_hour: 6.0,
        passenger_rates: rates,
        driver_rates,
        od_matrix: (0..4).map(|o| (0..4).map(|d| od(o, d)).collect()).collect(),
        adjacent_zone_matching: true,
        intra_zone_km: 0.8,
        driver_shift_h: 0.2,
        seed: opts.seed,
    }
}

/// Builds the complete in-memory bundle: network, surrogate, scenario and
/// reward defaults.
pub fn toy_bundle(opts: &ToyOptions) -> Result<ScenarioBundle, TrainError> {
    let graph = toy_network();
    let flows = toy_flows(opts.preset, &graph);
    let mfd_cfg = MfdConfig { fallback_speed_kmh: 50.0, ..MfdConfig::default() };
    let speeds = aggregate_all(&graph, &flows, &mfd_cfg)?;
    let routes = build_static_routes(&graph, WeightMode::FreeFlowTime, 50.0)
        .map_err(|e| TrainError::Checkpoint(format!("toy routes: {e}")))?;
    let table = build_od_table(&graph, &routes, &speeds)?;
    let scenario = toy_scenario(opts);
    let reward = RewardConfig { v_ref_kmh: 35.0, ..RewardConfig::default() };
    Ok(ScenarioBundle {
        scenario: Arc::new(scenario),
        graph: Arc::new(graph),
        surrogate: Arc::new(Surrogate { table, speeds, intra_zone_km: 0.8 }),
        reward,
    })
}

/// Writes the toy scenario as loadable files: `network.csv`, `nodes.csv`,
/// `flows.csv` and `scenario.json`. Fully deterministic.
pub fn write_toy_files(dir: &Path, opts: &ToyOptions) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir)?;
    let graph = toy_network();

    let mut nodes_text = String::new();
    nodes_text.push_str("# node_id, x, y, zone_id\n");
    for n in graph.nodes() {
        nodes_text.push_str(&format!("{}, {}, {}, {}\n", n.id, n.x, n.y, n.zone.unwrap()));
    }
    std::fs::write(dir.join("nodes.csv"), nodes_text)?;

    let mut net_text = String::new();
    net_text.push_str("# edge_id, tail_id, head_id, length_km, lanes, zone_id, free_flow_kmh\n");
    for e in graph.edges() {
        net_text.push_str(&format!(
            "{}, {}, {}, {}, {}, {}, {}\n",
            e.id,
            e.tail,
            e.head,
            e.length_km,
            e.lanes,
            e.zone,
            e.free_flow_kmh.unwrap_or(50.0)
        ));
    }
    std::fs::write(dir.join("network.csv"), net_text)?;

    let mut flows_text = String::new();
    flows_text.push_str("# edge_id, t_start_h, dt_h, density, flow\n");
    for s in toy_flows(opts.preset, &graph) {
        for b in &s.bins {
            flows_text.push_str(&format!(
                "{}, {}, {}, {}, {}\n",
                s.edge_id, b.t_start, b.dt, b.density, b.flow
            ));
        }
    }
    std::fs::write(dir.join("flows.csv"), flows_text)?;

    let scenario = toy_scenario(opts);
    let json = serde_json::to_string_pretty(&scenario)
        .map_err(|e| TrainError::Checkpoint(format!("scenario serialization: {e}")))?;
    std::fs::write(dir.join("scenario.json"), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_preset_has_identical_rates_all_day() {
        let opts = ToyOptions { preset: DemandPreset::Flat, ..ToyOptions::default() };
        let s = toy_scenario(&opts);
        for row in &s.passenger_rates {
            assert!(row.iter().all(|&r| r == row[0]));
        }
    }

    #[test]
    fn two_peak_exceeds_night_by_configured_ratio() {
        let opts = ToyOptions::default();
        let s = toy_scenario(&opts);
        let row = &s.passenger_rates[0];
        assert_eq!(row[8] / row[3], opts.peak_rate / opts.base_rate);
        assert_eq!(row[17] / row[3], opts.peak_rate / opts.base_rate);
    }

    #[test]
    fn generated_files_are_byte_identical_across_runs() {
        let opts = ToyOptions::default();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_toy_files(d1.path(), &opts).unwrap();
        write_toy_files(d2.path(), &opts).unwrap();
        for f in ["network.csv", "nodes.csv", "flows.csv", "scenario.json"] {
            let a = std::fs::read(d1.path().join(f)).unwrap();
            let b = std::fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }

    #[test]
    fn bundle_has_congested_peak_travel_times() {
        let bundle = toy_bundle(&ToyOptions::default()).unwrap();
        let peak = bundle.surrogate.table.query_hour(0, 1, 8).unwrap();
        let off = bundle.surrogate.table.query_hour(0, 1, 3).unwrap();
        assert!(peak > 2.0 * off, "peak {peak} vs off-peak {off}");
        // cross-zone at peak: 2 km at 12 km/h = 600 s
        assert!((peak * 3600.0 - 600.0).abs() < 1e-6);
    }

    #[test]
    fn scenario_validates() {
        let bundle = toy_bundle(&ToyOptions::default()).unwrap();
        bundle.scenario.validate().unwrap();
        bundle.reward.validate().unwrap();
    }
}
