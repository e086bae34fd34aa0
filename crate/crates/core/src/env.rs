//! Zone-level supply/demand simulator with binary hold/match actions.
//!
//! Each decision epoch the agent chooses, per zone, whether to match queued
//! requests now or hold them. Matching pairs requests with idle drivers
//! (same zone, optionally adjacent zones) greedily by pickup travel time
//! read from the travel-time surrogate. Arrivals are Poisson with hourly
//! piecewise-constant rates. All randomness flows from a single seeded
//! generator, so full episode traces are reproducible bit for bit.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::EnvError;
use crate::mfd::{OdTravelTimeTable, ZoneSpeeds};
use crate::reward::{self, MultiplierState, RewardBreakdown, RewardConfig};

/// Zone-to-zone travel times as seen by the simulator.
pub trait TravelTimes {
    /// Travel time in hours at clock `t`; `from == to` is the intra-zone
    /// estimate (the OD table itself stores 0 for self pairs).
    fn zone_time(&self, from: usize, to: usize, clock_h: f64) -> f64;
    /// Mean network speed (km/h) for the hour containing `t`.
    fn mean_speed_kmh(&self, clock_h: f64) -> f64;
}

/// The OD table plus zone speeds; intra-zone trips cover a configured
/// characteristic distance at the zone's hourly speed.
#[derive(Clone)]
pub struct Surrogate {
    pub table: OdTravelTimeTable,
    pub speeds: ZoneSpeeds,
    pub intra_zone_km: f64,
}

impl TravelTimes for Surrogate {
    fn zone_time(&self, from: usize, to: usize, clock_h: f64) -> f64 {
        if from == to {
            let hour = (clock_h.rem_euclid(24.0)).floor() as usize;
            self.intra_zone_km / self.speeds.speed(from, hour)
        } else {
            self.table.query(from, to, clock_h).expect("zones validated at construction")
        }
    }

    fn mean_speed_kmh(&self, clock_h: f64) -> f64 {
        let hour = (clock_h.rem_euclid(24.0)).floor() as usize;
        self.speeds.mean_speed(hour)
    }
}

/// Scenario parameters. Rates are per zone per hour-of-day (N × 24, 1/h).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub horizon_h: f64,
    pub epoch_dt_s: f64,
    pub warmup_epochs: u32,
    pub randomize_start: bool,
    /// Episode start hour when `randomize_start` is false.
    pub start_hour: f64,
    pub passenger_rates: Vec<Vec<f64>>,
    pub driver_rates: Vec<Vec<f64>>,
    /// Row-stochastic destination probabilities per origin zone.
    pub od_matrix: Vec<Vec<f64>>,
    /// Allow matching to pull idle drivers from 4-neighbour zones.
    pub adjacent_zone_matching: bool,
    /// Characteristic intra-zone trip distance (km).
    pub intra_zone_km: f64,
    /// Driver online duration; drivers go offline at the first idle moment
    /// past their shift end.
    pub driver_shift_h: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn n_zones(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn epoch_dt_h(&self) -> f64 {
        self.epoch_dt_s / 3600.0
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let n = self.n_zones();
        if n == 0 {
            return Err(EnvError::BadConfig("grid must be non-empty".into()));
        }
        if self.epoch_dt_s <= 0.0 {
            return Err(EnvError::BadConfig("epoch_dt_s must be > 0".into()));
        }
        if self.horizon_h <= self.warmup_epochs as f64 * self.epoch_dt_h() {
            return Err(EnvError::BadConfig("horizon must exceed the warm-up duration".into()));
        }
        for (name, rates) in [("passenger_rates", &self.passenger_rates), ("driver_rates", &self.driver_rates)] {
            if rates.len() != n || rates.iter().any(|r| r.len() != 24) {
                return Err(EnvError::BadConfig(format!("{name} must be {n} zones × 24 hours")));
            }
            if rates.iter().flatten().any(|&r| !(r >= 0.0) || !r.is_finite()) {
                return Err(EnvError::BadConfig(format!("{name} must be finite and ≥ 0")));
            }
        }
        if self.od_matrix.len() != n || self.od_matrix.iter().any(|r| r.len() != n) {
            return Err(EnvError::BadConfig(format!("od_matrix must be {n}×{n}")));
        }
        for (i, row) in self.od_matrix.iter().enumerate() {
            if row.iter().any(|&p| p < 0.0) || row.iter().sum::<f64>() <= 0.0 {
                return Err(EnvError::BadConfig(format!("od_matrix row {i} must be non-negative with positive sum")));
            }
        }
        if self.intra_zone_km <= 0.0 || self.driver_shift_h <= 0.0 {
            return Err(EnvError::BadConfig("intra_zone_km and driver_shift_h must be > 0".into()));
        }
        Ok(())
    }

    /// 4-neighbourhood of a zone on the H×W grid, ascending.
    pub fn adjacent_zones(&self, zone: usize) -> Vec<usize> {
        let (h, w) = (self.grid_h, self.grid_w);
        let (r, c) = (zone / w, zone % w);
        let mut out = Vec::new();
        if r > 0 {
            out.push((r - 1) * w + c);
        }
        if c > 0 {
            out.push(r * w + c - 1);
        }
        if c + 1 < w {
            out.push(r * w + c + 1);
        }
        if r + 1 < h {
            out.push((r + 1) * w + c);
        }
        out
    }
}

/// Binary per-zone action: 1 = match now, 0 = hold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    pub bits: Vec<bool>,
}

impl Action {
    pub fn ones(n: usize) -> Self {
        Action { bits: vec![true; n] }
    }

    pub fn zeros(n: usize) -> Self {
        Action { bits: vec![false; n] }
    }

    pub fn from_slice(bits: &[bool]) -> Self {
        Action { bits: bits.to_vec() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassengerRequest {
    pub id: u64,
    pub origin_zone: usize,
    pub dest_zone: usize,
    pub request_time: f64,
    pub match_time: Option<f64>,
    pub pickup_time: Option<f64>,
    /// Created before control was handed to the agent.
    pub warmup: bool,
}

impl PassengerRequest {
    pub fn matching_wait_h(&self) -> Option<f64> {
        self.match_time.map(|m| m - self.request_time)
    }

    pub fn pickup_wait_h(&self) -> Option<f64> {
        match (self.match_time, self.pickup_time) {
            (Some(m), Some(p)) => Some(p - m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriverStatus {
    Idle,
    EnroutePickup,
    Occupied,
    Offline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Driver {
    pub id: u64,
    pub zone: usize,
    pub status: DriverStatus,
    /// Time the driver becomes idle again (non-idle drivers only).
    pub free_at: f64,
    /// Passenger pickup instant of the current assignment.
    pub pickup_at: f64,
    pub location_at_free: usize,
    pub shift_end: f64,
}

/// One matched pair made by [`SimEnv::match_zone`].
#[derive(Debug, Clone, Copy)]
pub struct Assignment {
    pub request_id: u64,
    pub driver_id: u64,
    pub pickup_travel_h: f64,
}

struct CoreOutcome {
    held: u32,
    pickup_durations: Vec<f64>,
    match_waits: Vec<f64>,
    matched: u32,
    late: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceKind {
    RequestCreated,
    Matched,
    DriverArrived,
    TripDone,
    DriverExit,
}

#[derive(Debug, Clone)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: TraceKind,
    pub zone: usize,
    pub request_id: Option<u64>,
    pub driver_id: Option<u64>,
    pub value: f64,
}

/// Full simulator state; cloneable so candidate actions can be evaluated on
/// throwaway copies.
#[derive(Clone)]
pub struct SimEnv {
    cfg: Arc<ScenarioConfig>,
    times: Arc<dyn TravelTimes + Send + Sync>,
    pub clock_h: f64,
    start_h: f64,
    epoch: u64,
    requests: Vec<PassengerRequest>,
    /// Unmatched request ids per zone, FIFO.
    queues: Vec<VecDeque<u64>>,
    drivers: Vec<Driver>,
    /// Idle driver ids per zone, FIFO by arrival.
    idle: Vec<VecDeque<u64>>,
    /// Drivers en route or occupied.
    active: Vec<u64>,
    /// Per-epoch (matched, late) counts for the violation window.
    window: VecDeque<(u32, u32)>,
    /// Ids of requests matched since the warm-up handoff.
    completed_log: Vec<u64>,
    rng: ChaCha8Rng,
    done: bool,
    trace: Option<Vec<TraceEvent>>,
}

/// Everything [`SimEnv::step`] reports for one epoch.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub breakdown: RewardBreakdown,
    pub done: bool,
    pub matched: u32,
    pub held: u32,
    /// Matching waits (hours) of requests assigned this epoch.
    pub match_waits_h: Vec<f64>,
    /// Pickup durations (hours) of requests assigned this epoch.
    pub pickup_waits_h: Vec<f64>,
}

impl SimEnv {
    /// Builds the environment and runs the warm-up (constant-interval
    /// heuristic with a 20 s window). The completed-request log and the
    /// violation window are cleared at handoff so metrics exclude warm-up
    /// trips.
    pub fn new(
        cfg: Arc<ScenarioConfig>,
        times: Arc<dyn TravelTimes + Send + Sync>,
        seed: u64,
    ) -> Result<Self, EnvError> {
        cfg.validate()?;
        let n = cfg.n_zones();
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let start_h = if cfg.randomize_start {
            rng.random_range(0..24u32) as f64
        } else {
            cfg.start_hour
        };
        let mut env = SimEnv {
            cfg: cfg.clone(),
            times,
            clock_h: start_h,
            start_h,
            epoch: 0,
            requests: Vec::new(),
            queues: vec![VecDeque::new(); n],
            drivers: Vec::new(),
            idle: vec![VecDeque::new(); n],
            active: Vec::new(),
            window: VecDeque::new(),
            completed_log: Vec::new(),
            rng,
            done: false,
            trace: None,
        };
        let window_h = 20.0 / 3600.0;
        let mut last_window = -1i64;
        for _ in 0..cfg.warmup_epochs {
            let widx = (env.clock_h / window_h).floor() as i64;
            let action = if widx > last_window {
                last_window = widx;
                Action::ones(n)
            } else {
                Action::zeros(n)
            };
            env.step_core(&action, 600.0 / 3600.0)?;
        }
        env.completed_log.clear();
        env.window.clear();
        Ok(env)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn n_zones(&self) -> usize {
        self.cfg.n_zones()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn set_trace(&mut self, on: bool) {
        self.trace = if on { Some(Vec::new()) } else { None };
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.trace.take().unwrap_or_default()
    }

    fn record(&mut self, kind: TraceKind, zone: usize, request_id: Option<u64>, driver_id: Option<u64>, value: f64) {
        if let Some(t) = &mut self.trace {
            t.push(TraceEvent { time: self.clock_h, kind, zone, request_id, driver_id, value });
        }
    }

    pub fn requests(&self) -> &[PassengerRequest] {
        &self.requests
    }

    pub fn drivers(&self) -> &[Driver] {
        &self.drivers
    }

    pub fn completed_log(&self) -> &[u64] {
        &self.completed_log
    }

    /// Unmatched queue length per zone.
    pub fn queue_lens(&self) -> Vec<usize> {
        self.queues.iter().map(|q| q.len()).collect()
    }

    /// Idle driver count per zone.
    pub fn idle_counts(&self) -> Vec<usize> {
        self.idle.iter().map(|q| q.len()).collect()
    }

    fn hour_index(&self) -> usize {
        (self.clock_h.rem_euclid(24.0)).floor() as usize
    }

    /// Remaining horizon in hours.
    pub fn remaining_h(&self) -> f64 {
        (self.start_h + self.cfg.horizon_h - self.clock_h).max(0.0)
    }

    /// Observation `[τ/24, ρ/horizon, n_p, n_d, λ, μ]` of length 2 + 4N.
    pub fn observe(&self) -> Vec<f64> {
        let n = self.n_zones();
        let h = self.hour_index();
        let mut out = Vec::with_capacity(2 + 4 * n);
        out.push(self.clock_h.rem_euclid(24.0) / 24.0);
        out.push(self.remaining_h() / self.cfg.horizon_h);
        for q in &self.queues {
            out.push(q.len() as f64);
        }
        for d in &self.idle {
            out.push(d.len() as f64);
        }
        for z in 0..n {
            out.push(self.cfg.passenger_rates[z][h]);
        }
        for z in 0..n {
            out.push(self.cfg.driver_rates[z][h]);
        }
        out
    }

    /// Poisson arrival count for one epoch.
    fn sample_count(rng: &mut ChaCha8Rng, rate_per_h: f64, dt_h: f64) -> u64 {
        let mean = rate_per_h * dt_h;
        if mean <= 0.0 {
            return 0;
        }
        let pois = Poisson::new(mean).expect("positive mean");
        pois.sample(rng) as u64
    }

    fn sample_destination(&mut self, origin: usize) -> usize {
        let row = &self.cfg.od_matrix[origin];
        let total: f64 = row.iter().sum();
        let mut u = self.rng.random::<f64>() * total;
        for (d, &p) in row.iter().enumerate() {
            u -= p;
            if u <= 0.0 {
                return d;
            }
        }
        row.len() - 1
    }

    #[doc(hidden)]
    pub fn inject_request(&mut self, origin: usize, dest: usize) -> u64 {
        self.create_request(origin, dest)
    }

    #[doc(hidden)]
    pub fn inject_driver(&mut self, zone: usize) -> u64 {
        self.create_driver(zone)
    }

    fn create_request(&mut self, origin: usize, dest: usize) -> u64 {
        let id = self.requests.len() as u64;
        let warmup = self.epoch < self.cfg.warmup_epochs as u64;
        self.requests.push(PassengerRequest {
            id,
            origin_zone: origin,
            dest_zone: dest,
            request_time: self.clock_h,
            match_time: None,
            pickup_time: None,
            warmup,
        });
        self.queues[origin].push_back(id);
        self.record(TraceKind::RequestCreated, origin, Some(id), None, dest as f64);
        id
    }

    fn create_driver(&mut self, zone: usize) -> u64 {
        let id = self.drivers.len() as u64;
        self.drivers.push(Driver {
            id,
            zone,
            status: DriverStatus::Idle,
            free_at: self.clock_h,
            pickup_at: self.clock_h,
            location_at_free: zone,
            shift_end: self.clock_h + self.cfg.driver_shift_h,
        });
        self.idle[zone].push_back(id);
        self.record(TraceKind::DriverArrived, zone, None, Some(id), 0.0);
        id
    }

    /// Greedily matches queued requests in `zone` against idle drivers from
    /// the zone itself (and adjacent zones when configured), in ascending
    /// order of pickup travel time. Returns the assignments made.
    pub fn match_zone(&mut self, zone: usize) -> Vec<Assignment> {
        let request_ids: Vec<u64> = self.queues[zone].iter().copied().collect();
        if request_ids.is_empty() {
            return Vec::new();
        }
        // candidate drivers: same zone first, then adjacent zones; each with
        // its zone-level pickup travel time
        let mut cand_zones = vec![zone];
        if self.cfg.adjacent_zone_matching {
            cand_zones.extend(self.cfg.adjacent_zones(zone));
        }
        let mut candidates: Vec<(f64, u64, usize)> = Vec::new();
        for &cz in &cand_zones {
            let tt = self.times.zone_time(cz, zone, self.clock_h);
            for &did in &self.idle[cz] {
                candidates.push((tt, did, cz));
            }
        }
        if candidates.is_empty() {
            return Vec::new();
        }
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

        let costs: Vec<Vec<f64>> =
            request_ids.iter().map(|_| candidates.iter().map(|c| c.0).collect()).collect();
        let pairs = greedy_assign(&costs);

        let mut out = Vec::with_capacity(pairs.len());
        for (ri, ci) in pairs {
            let (tt, driver_id, driver_zone) = candidates[ci];
            let request_id = request_ids[ri];
            let (origin, dest) = {
                let req = &self.requests[request_id as usize];
                (req.origin_zone, req.dest_zone)
            };
            let pickup_time = self.clock_h + tt;
            let trip_tt = self.times.zone_time(origin, dest, self.clock_h);
            {
                let req = &mut self.requests[request_id as usize];
                req.match_time = Some(self.clock_h);
                req.pickup_time = Some(pickup_time);
            }
            let drv = &mut self.drivers[driver_id as usize];
            drv.status = DriverStatus::EnroutePickup;
            drv.pickup_at = pickup_time;
            drv.free_at = pickup_time + trip_tt;
            drv.location_at_free = dest;
            // remove from queue and idle set
            self.queues[zone].retain(|&r| r != request_id);
            self.idle[driver_zone].retain(|&d| d != driver_id);
            self.active.push(driver_id);
            self.completed_log.push(request_id);
            self.record(TraceKind::Matched, zone, Some(request_id), Some(driver_id), tt);
            out.push(Assignment { request_id, driver_id, pickup_travel_h: tt });
        }
        out
    }

    /// Dynamics of one epoch without reward computation.
    fn step_core(&mut self, action: &Action, late_threshold_h: f64) -> Result<CoreOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let n = self.n_zones();
        if action.bits.len() != n {
            return Err(EnvError::ActionLength { got: action.bits.len(), want: n });
        }

        // (1) matching in chosen zones, ascending zone order
        let mut pickup_durations = Vec::new();
        let mut match_waits = Vec::new();
        let mut matched = 0u32;
        let mut late = 0u32;
        let mut assignments = Vec::new();
        for z in 0..n {
            if action.bits[z] {
                assignments.extend(self.match_zone(z));
            }
        }
        for a in &assignments {
            pickup_durations.push(a.pickup_travel_h);
            matched += 1;
            let req = &self.requests[a.request_id as usize];
            match_waits.push(req.matching_wait_h().unwrap_or(0.0));
            if req.matching_wait_h().unwrap_or(0.0) > late_threshold_h
                || req.pickup_wait_h().unwrap_or(0.0) > late_threshold_h
            {
                late += 1;
            }
        }

        // (2) requests held through this epoch keep accruing matching wait
        let held: u32 = self.queues.iter().map(|q| q.len() as u32).sum();

        // (3) advance the clock; release drivers whose work completed
        let rate_hour = self.hour_index();
        self.clock_h += self.cfg.epoch_dt_h();
        self.epoch += 1;
        self.release_drivers();

        // (4) new arrivals at the epoch's starting-hour rates
        for z in 0..n {
            let count = Self::sample_count(&mut self.rng, self.cfg.passenger_rates[z][rate_hour], self.cfg.epoch_dt_h());
            for _ in 0..count {
                let dest = self.sample_destination(z);
                self.create_request(z, dest);
            }
        }
        for z in 0..n {
            let count = Self::sample_count(&mut self.rng, self.cfg.driver_rates[z][rate_hour], self.cfg.epoch_dt_h());
            for _ in 0..count {
                self.create_driver(z);
            }
        }

        // (5) episode termination
        if self.remaining_h() <= 1e-12 {
            self.done = true;
        }
        Ok(CoreOutcome { held, pickup_durations, match_waits, matched, late })
    }

    fn release_drivers(&mut self) {
        self.active.sort_unstable();
        let clock = self.clock_h;
        let mut still_active = Vec::with_capacity(self.active.len());
        let mut events = Vec::new();
        for &did in &self.active {
            let drv = &mut self.drivers[did as usize];
            if drv.status == DriverStatus::EnroutePickup && clock >= drv.pickup_at {
                drv.status = DriverStatus::Occupied;
            }
            if clock >= drv.free_at {
                let dest = drv.location_at_free;
                drv.zone = dest;
                if clock >= drv.shift_end {
                    drv.status = DriverStatus::Offline;
                    events.push((TraceKind::DriverExit, dest, did));
                } else {
                    drv.status = DriverStatus::Idle;
                    self.idle[dest].push_back(did);
                    events.push((TraceKind::TripDone, dest, did));
                }
            } else {
                still_active.push(did);
            }
        }
        self.active = still_active;
        // idle drivers whose shift ended go offline
        let mut exits = Vec::new();
        for zone in 0..self.idle.len() {
            self.idle[zone].retain(|&did| {
                let drv = &mut self.drivers[did as usize];
                if clock >= drv.shift_end {
                    drv.status = DriverStatus::Offline;
                    exits.push((TraceKind::DriverExit, zone, did));
                    false
                } else {
                    true
                }
            });
        }
        for (kind, zone, did) in events.into_iter().chain(exits) {
            self.record(kind, zone, None, Some(did), 0.0);
        }
    }

    /// Advances one epoch: matching, holding, clock advance, driver
    /// releases, arrivals, and the reward breakdown. `done` turns on when
    /// the remaining horizon reaches zero.
    pub fn step(&mut self, action: &Action, rcfg: &RewardConfig, mult: &MultiplierState) -> Result<StepOutcome, EnvError> {
        let decision_clock = self.clock_h;
        let core = self.step_core(action, rcfg.late_threshold_s / 3600.0)?;

        self.window.push_back((core.matched, core.late));
        while self.window.len() > rcfg.violation_window {
            self.window.pop_front();
        }
        let (mut tot, mut lt) = (0u64, 0u64);
        for &(m, l) in &self.window {
            tot += m as u64;
            lt += l as u64;
        }
        let g = reward::violation_fraction(lt, tot);
        let (d_match, d_pickup) =
            reward::incremental_waits(core.held as usize, self.cfg.epoch_dt_h(), &core.pickup_durations);
        let v_bar = self.times.mean_speed_kmh(decision_clock);
        let breakdown = reward::compute_reward(d_match, d_pickup, v_bar, g, mult, rcfg);
        Ok(StepOutcome {
            breakdown,
            done: self.done,
            matched: core.matched,
            held: core.held,
            match_waits_h: core.match_waits,
            pickup_waits_h: core.pickup_durations,
        })
    }
}

/// Greedy ascending-cost assignment over a (requests × drivers) cost
/// matrix: repeatedly take the cheapest unmatched pair. Ties break by
/// (cost, request index, driver index). Returns (row, col) pairs.
///
/// Zone-level travel times make all rows identical in practice, where
/// greedy is exact; the generic form keeps the matcher testable against an
/// exhaustive oracle.
pub fn greedy_assign(costs: &[Vec<f64>]) -> Vec<(usize, usize)> {
    if costs.is_empty() || costs[0].is_empty() {
        return Vec::new();
    }
    let nr = costs.len();
    let nc = costs[0].len();
    let mut entries: Vec<(f64, usize, usize)> = Vec::with_capacity(nr * nc);
    for (r, row) in costs.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            entries.push((v, r, c));
        }
    }
    entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let target = nr.min(nc);
    let mut used_r = vec![false; nr];
    let mut used_c = vec![false; nc];
    let mut out = Vec::with_capacity(target);
    for (_, r, c) in entries {
        if out.len() == target {
            break;
        }
        if !used_r[r] && !used_c[c] {
            used_r[r] = true;
            used_c[c] = true;
            out.push((r, c));
        }
    }
    out
}
