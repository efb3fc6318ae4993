//! The learning environment: candidate grids, the 81-action codec, clamped
//! transitions, cached state evaluation and the phase schedule.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::channel::Position3D;
use crate::error::{Error, Result};
use crate::metrics::{self, KpiSnapshot, RewardWeights, ThroughputBounds};
use crate::network::{associate_users, BackhaulRates, NetworkConfig, PhasePlacement, PhaseWorld, Scenario, UavPose};
use crate::rng::{self, Stream};
use crate::traffic::{self, LoadMode, SimOptions, TrafficConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateGrids {
    pub tilt_deg: Vec<f64>,
    pub x_m: Vec<f64>,
    pub y_m: Vec<f64>,
    pub z_m: Vec<f64>,
}

impl Default for CandidateGrids {
    fn default() -> Self {
        Self {
            tilt_deg: vec![-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0],
            x_m: vec![-350.0, -175.0, 0.0, 175.0, 350.0],
            y_m: vec![-350.0, -175.0, 0.0, 175.0, 350.0],
            z_m: vec![10.0, 20.0, 30.0, 35.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UavState {
    pub tilt_idx: usize,
    pub x_idx: usize,
    pub y_idx: usize,
    pub z_idx: usize,
}

impl UavState {
    fn as_array(&self) -> [usize; 4] {
        [self.tilt_idx, self.x_idx, self.y_idx, self.z_idx]
    }

    fn from_array(a: [usize; 4]) -> Self {
        Self { tilt_idx: a[0], x_idx: a[1], y_idx: a[2], z_idx: a[3] }
    }
}

impl CandidateGrids {
    /// 18 states: tilt fixed at 0, a 3x3 horizontal grid and two heights.
    pub fn miniature() -> Self {
        Self {
            tilt_deg: vec![0.0],
            x_m: vec![-175.0, 0.0, 175.0],
            y_m: vec![-175.0, 0.0, 175.0],
            z_m: vec![10.0, 20.0],
        }
    }

    fn axes(&self) -> [&[f64]; 4] {
        [&self.tilt_deg, &self.x_m, &self.y_m, &self.z_m]
    }

    pub fn dims(&self) -> [usize; 4] {
        self.axes().map(<[f64]>::len)
    }

    pub fn n_states(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        for (name, axis) in ["tilt_deg", "x_m", "y_m", "z_m"].iter().zip(self.axes()) {
            if axis.is_empty() {
                errors.push(format!("grids.{name} must not be empty"));
            } else if !axis.windows(2).all(|w| w[0] < w[1]) || axis.iter().any(|v| !v.is_finite()) {
                errors.push(format!("grids.{name} must be strictly increasing"));
            }
        }
        if self.z_m.iter().any(|&z| z <= 0.0) {
            errors.push("grids.z_m must be positive".into());
        }
    }

    /// States in canonical order: tilt slowest, then x, y, z.
    pub fn state_at(&self, index: usize) -> UavState {
        let d = self.dims();
        let mut rest = index;
        let mut idx = [0; 4];
        for k in (0..4).rev() {
            idx[k] = rest % d[k];
            rest /= d[k];
        }
        UavState::from_array(idx)
    }

    pub fn index_of(&self, s: &UavState) -> usize {
        let d = self.dims();
        s.as_array().iter().zip(d).fold(0, |acc, (&i, n)| acc * n + i)
    }

    pub fn states(&self) -> impl Iterator<Item = UavState> + '_ {
        (0..self.n_states()).map(|i| self.state_at(i))
    }

    pub fn contains(&self, s: &UavState) -> bool {
        s.as_array().iter().zip(self.dims()).all(|(&i, n)| i < n)
    }

    /// `(tilt_deg, x_m, y_m, z_m)` of a state.
    pub fn values(&self, s: &UavState) -> [f64; 4] {
        [self.tilt_deg[s.tilt_idx], self.x_m[s.x_idx], self.y_m[s.y_idx], self.z_m[s.z_idx]]
    }

    pub fn pose(&self, s: &UavState) -> UavPose {
        let [tilt, x, y, z] = self.values(s);
        UavPose { position: Position3D::new(x, y, z), tilt_deg: tilt }
    }

    /// Each coordinate min-max scaled by its grid extent. Singleton axes map to 0.
    pub fn encode(&self, s: &UavState) -> [f64; 4] {
        let v = self.values(s);
        let axes = self.axes();
        std::array::from_fn(|k| {
            let (lo, hi) = (axes[k][0], axes[k][axes[k].len() - 1]);
            if hi > lo {
                (v[k] - lo) / (hi - lo)
            } else {
                0.0
            }
        })
    }

    pub fn locate(&self, tilt: f64, x: f64, y: f64, z: f64) -> Result<UavState> {
        let find = |axis: &[f64], v: f64| axis.iter().position(|&a| (a - v).abs() < 1e-9);
        let idx = [find(&self.tilt_deg, tilt), find(&self.x_m, x), find(&self.y_m, y), find(&self.z_m, z)];
        match idx {
            [Some(a), Some(b), Some(c), Some(d)] => Ok(UavState::from_array([a, b, c, d])),
            _ => Err(Error::OffGrid(format!("({tilt}, {x}, {y}, {z})"))),
        }
    }

    /// Tilt 0, horizontal center, 20 m.
    pub fn initial_state(&self) -> Result<UavState> {
        self.locate(0.0, 0.0, 0.0, 20.0)
    }
}

pub const N_ACTIONS: usize = 81;
pub const N_POSITION_ACTIONS: usize = 27;

/// Position delta vectors in lexicographic order over (-1, 0, 1).
pub fn position_vector(ordinal: usize) -> [i8; 3] {
    assert!(ordinal < N_POSITION_ACTIONS);
    [(ordinal / 9) as i8 - 1, (ordinal / 3 % 3) as i8 - 1, (ordinal % 3) as i8 - 1]
}

pub fn position_ordinal(v: [i8; 3]) -> usize {
    v.iter().fold(0, |acc, &d| acc * 3 + (d + 1) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub tilt: i8,
    pub pos: [i8; 3],
}

impl Action {
    pub const NOOP: Action = Action { tilt: 0, pos: [0, 0, 0] };

    pub fn id(&self) -> ActionIndex {
        ActionIndex((self.tilt + 1) as usize * N_POSITION_ACTIONS + position_ordinal(self.pos))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionIndex(pub usize);

impl ActionIndex {
    pub fn decode(self) -> Result<Action> {
        if self.0 >= N_ACTIONS {
            return Err(Error::InvalidAction(self.0));
        }
        Ok(Action { tilt: (self.0 / N_POSITION_ACTIONS) as i8 - 1, pos: position_vector(self.0 % N_POSITION_ACTIONS) })
    }
}

/// Moves each index by its delta, staying put at the grid edges.
pub fn apply_action(s: &UavState, a: &Action, grids: &CandidateGrids) -> UavState {
    let deltas = [a.tilt, a.pos[0], a.pos[1], a.pos[2]];
    let dims = grids.dims();
    let cur = s.as_array();
    UavState::from_array(std::array::from_fn(|k| {
        (cur[k] as i64 + deltas[k] as i64).clamp(0, dims[k] as i64 - 1) as usize
    }))
}

/// How the clustered MC users move from phase to phase. Phase 0 is the
/// training phase; the cluster center then takes one `drift_m` step per
/// phase, the heading turning by `heading_step_deg` each time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseSchedule {
    pub n_phases: usize,
    pub cluster_start_m: [f64; 2],
    pub drift_m: f64,
    /// Compass heading of the first drift step.
    pub heading_start_deg: f64,
    pub heading_step_deg: f64,
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        Self {
            n_phases: 9,
            cluster_start_m: [-120.0, -60.0],
            drift_m: 60.0,
            heading_start_deg: 45.0,
            heading_step_deg: 40.0,
        }
    }
}

impl PhaseSchedule {
    pub fn validate(&self, mc_radius_m: f64, errors: &mut Vec<String>) {
        if self.n_phases == 0 {
            errors.push("schedule.n_phases must be at least 1".into());
        }
        if !(self.drift_m >= 0.0) {
            errors.push("schedule.drift_m must be non-negative".into());
        }
        for p in 0..self.n_phases {
            let (x, y) = self.cluster_center(p);
            if x.hypot(y) > mc_radius_m {
                errors.push(format!("schedule: phase {p} cluster center ({x:.1}, {y:.1}) leaves the MC disc"));
            }
        }
    }

    pub fn cluster_center(&self, phase: usize) -> (f64, f64) {
        let [mut x, mut y] = self.cluster_start_m;
        for j in 0..phase {
            let h = (self.heading_start_deg + j as f64 * self.heading_step_deg).to_radians();
            x += self.drift_m * h.sin();
            y += self.drift_m * h.cos();
        }
        (x, y)
    }

    pub fn placement(&self, phase: usize) -> Result<PhasePlacement> {
        if phase >= self.n_phases {
            return Err(Error::ScheduleExhausted);
        }
        Ok(PhasePlacement { phase, cluster_center: self.cluster_center(phase) })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub network: NetworkConfig,
    pub traffic: TrafficConfig,
    pub grids: CandidateGrids,
    pub schedule: PhaseSchedule,
    pub weights: RewardWeights,
    /// Pin every channel draw to its median (zero shadowing, deterministic LOS).
    pub median_channel: bool,
}

impl EnvConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        self.network.validate(errors);
        self.traffic.validate(self.network.slot_pattern.len(), errors);
        self.grids.validate(errors);
        self.schedule.validate(self.network.mc_radius_m, errors);
        self.weights.validate(errors);
    }
}

/// Raw outcome of one 2 s (or shorter) simulated drop for a UAV state.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub kpi: KpiSnapshot,
    /// False when the MC sample was empty and `kpi` holds worst-case values.
    pub kpi_valid: bool,
    pub donor: Option<usize>,
    pub backhaul: Option<BackhaulRates>,
    pub uav_users: usize,
    pub mc_users_on_uav: usize,
    pub activity_tally: [[u64; 3]; 4],
    pub relay_violations: u64,
}

/// Simulates one phase world with the UAV at `pose` (or absent).
pub fn evaluate_pose(
    world: &Arc<PhaseWorld>,
    cfg: &EnvConfig,
    pose: Option<UavPose>,
    load: LoadMode,
    seed: u64,
) -> Result<Evaluation> {
    let scenario = Scenario::new(world.clone(), pose)?;
    let (map, assoc) = associate_users(&scenario)?;
    let phase = world.phase as u64;
    let arrivals = traffic::arrivals_for_load(&cfg.traffic, load, world.users.len(), seed, phase);
    let ul_seed = rng::derive_seed(seed, phase, Stream::UplinkInterferers);
    let out = traffic::simulate_slots(&map, &assoc, &cfg.traffic, &arrivals, ul_seed, SimOptions::default());
    let (kpi, kpi_valid) = match metrics::kpi_snapshot(&out.records, &world.users, out.sim_end_s) {
        Ok(k) => (k, true),
        Err(Error::EmptyMcSample) => (KpiSnapshot::worst(), false),
        Err(e) => return Err(e),
    };
    let n_macro = map.n_macro();
    Ok(Evaluation {
        kpi,
        kpi_valid,
        donor: map.donor.map(|d| d.cell),
        backhaul: assoc.backhaul,
        uav_users: assoc.uav_users(n_macro).count(),
        mc_users_on_uav: assoc.uav_users(n_macro).filter(|&u| world.users[u].is_mc).count(),
        activity_tally: out.activity.tally,
        relay_violations: out.relay_violations,
    })
}

pub fn evaluate_state(
    world: &Arc<PhaseWorld>,
    cfg: &EnvConfig,
    state: &UavState,
    load: LoadMode,
    seed: u64,
) -> Result<Evaluation> {
    if !cfg.grids.contains(state) {
        return Err(Error::OffGrid(format!("{state:?}")));
    }
    evaluate_pose(world, cfg, Some(cfg.grids.pose(state)), load, seed)
}

/// Normalized features and reward of a raw evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub kpi: KpiSnapshot,
    pub normalized: KpiSnapshot,
    pub reward: f64,
}

pub fn score(eval: &Evaluation, bounds: &ThroughputBounds, weights: &RewardWeights) -> Result<Scored> {
    let normalized = metrics::normalize(&eval.kpi, bounds);
    let reward = metrics::reward(&normalized, weights)?;
    Ok(Scored { kpi: eval.kpi, normalized, reward })
}

type EvalKey = (usize, LoadMode, UavState);

/// Shared, thread-safe cache of phase worlds and state evaluations for one seed.
/// Evaluation is a pure function of (seed, phase, load, state), so cached
/// results are exact.
#[derive(Debug)]
pub struct Evaluator {
    cfg: EnvConfig,
    seed: u64,
    worlds: Mutex<HashMap<usize, Arc<PhaseWorld>>>,
    evals: Mutex<HashMap<EvalKey, Arc<Evaluation>>>,
}

impl Evaluator {
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<Self> {
        let mut errors = Vec::new();
        cfg.validate(&mut errors);
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        Ok(Self { cfg, seed, worlds: Mutex::default(), evals: Mutex::default() })
    }

    pub fn cfg(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn world(&self, phase: usize) -> Result<Arc<PhaseWorld>> {
        if let Some(w) = self.worlds.lock().expect("world cache").get(&phase) {
            return Ok(w.clone());
        }
        let placement = self.cfg.schedule.placement(phase)?;
        let mut w = PhaseWorld::build(&self.cfg.network, self.seed, placement, true)?;
        if self.cfg.median_channel {
            w = w.median_channel();
        }
        let w = Arc::new(w);
        Ok(self.worlds.lock().expect("world cache").entry(phase).or_insert(w).clone())
    }

    pub fn evaluate(&self, phase: usize, load: LoadMode, state: &UavState) -> Result<Arc<Evaluation>> {
        let key = (phase, load, *state);
        if let Some(e) = self.evals.lock().expect("eval cache").get(&key) {
            return Ok(e.clone());
        }
        let world = self.world(phase)?;
        let e = Arc::new(evaluate_state(&world, &self.cfg, state, load, self.seed)?);
        Ok(self.evals.lock().expect("eval cache").entry(key).or_insert(e).clone())
    }

    /// The same phase and load without any UAV.
    pub fn evaluate_without_uav(&self, phase: usize, load: LoadMode) -> Result<Evaluation> {
        evaluate_pose(&self.world(phase)?, &self.cfg, None, load, self.seed)
    }

    pub fn cached_evaluations(&self) -> usize {
        self.evals.lock().expect("eval cache").len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: UavState,
    pub action: ActionIndex,
    pub next_state: UavState,
    pub scored: Scored,
}

impl StepOutcome {
    pub fn reward(&self) -> f64 {
        self.scored.reward
    }
}

/// One UAV moving through the phase schedule under a fixed load.
#[derive(Debug, Clone)]
pub struct Env {
    evaluator: Arc<Evaluator>,
    load: LoadMode,
    bounds: ThroughputBounds,
    phase: usize,
    state: UavState,
}

impl Env {
    pub fn new(evaluator: Arc<Evaluator>, load: LoadMode, bounds: ThroughputBounds) -> Result<Self> {
        let mut errors = Vec::new();
        bounds.validate("bounds", &mut errors);
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let state = evaluator.cfg().grids.initial_state()?;
        Ok(Self { evaluator, load, bounds, phase: 0, state })
    }

    pub fn grids(&self) -> &CandidateGrids {
        &self.evaluator.cfg().grids
    }

    pub fn evaluator(&self) -> &Arc<Evaluator> {
        &self.evaluator
    }

    pub fn phase(&self) -> usize {
        self.phase
    }

    pub fn n_phases(&self) -> usize {
        self.evaluator.cfg().schedule.n_phases
    }

    pub fn load(&self) -> LoadMode {
        self.load
    }

    pub fn bounds(&self) -> &ThroughputBounds {
        &self.bounds
    }

    pub fn state(&self) -> UavState {
        self.state
    }

    pub fn set_state(&mut self, state: UavState) -> Result<()> {
        if !self.grids().contains(&state) {
            return Err(Error::OffGrid(format!("{state:?}")));
        }
        self.state = state;
        Ok(())
    }

    /// Scores a state in the current phase without moving.
    pub fn evaluate(&self, state: &UavState) -> Result<Scored> {
        let e = self.evaluator.evaluate(self.phase, self.load, state)?;
        score(&e, &self.bounds, &self.evaluator.cfg().weights)
    }

    pub fn step(&mut self, action: ActionIndex) -> Result<StepOutcome> {
        let a = action.decode()?;
        let next = apply_action(&self.state, &a, self.grids());
        let scored = self.evaluate(&next)?;
        let out = StepOutcome { state: self.state, action, next_state: next, scored };
        self.state = next;
        Ok(out)
    }

    /// Moves to the next phase. The UAV keeps its state.
    pub fn advance_phase(&mut self) -> Result<()> {
        if self.phase + 1 >= self.n_phases() {
            return Err(Error::ScheduleExhausted);
        }
        self.phase += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashSet, VecDeque};

    #[test]
    fn grid_shape_and_indexing() {
        let g = CandidateGrids::default();
        assert_eq!(g.dims(), [7, 5, 5, 4]);
        assert_eq!(g.n_states(), 700);
        for i in 0..g.n_states() {
            assert_eq!(g.index_of(&g.state_at(i)), i);
        }
        let s0 = g.initial_state().unwrap();
        assert_eq!(g.values(&s0), [0.0, 0.0, 0.0, 20.0]);
        let e = g.encode(&s0);
        assert_eq!(e, [0.5, 0.5, 0.5, 0.4]);
        assert!(g.locate(5.0, 0.0, 0.0, 20.0).is_err());
    }

    #[test]
    fn codec_examples() {
        assert_eq!(ActionIndex(0).decode().unwrap(), Action { tilt: -1, pos: [-1, -1, -1] });
        assert_eq!(ActionIndex(1).decode().unwrap(), Action { tilt: -1, pos: [-1, -1, 0] });
        assert_eq!(ActionIndex(40).decode().unwrap(), Action::NOOP);
        assert_eq!(ActionIndex(41).decode().unwrap(), Action { tilt: 0, pos: [0, 0, 1] });
        assert_eq!(ActionIndex(80).decode().unwrap(), Action { tilt: 1, pos: [1, 1, 1] });
        assert!(matches!(ActionIndex(81).decode(), Err(Error::InvalidAction(81))));
        let ids: HashSet<_> = (0..N_ACTIONS).map(|i| ActionIndex(i).decode().unwrap()).collect();
        assert_eq!(ids.len(), N_ACTIONS);
        for i in 0..N_ACTIONS {
            assert_eq!(ActionIndex(i).decode().unwrap().id(), ActionIndex(i));
        }
    }

    #[test]
    fn transition_examples() {
        let g = CandidateGrids::default();
        let s = g.initial_state().unwrap();
        let up = apply_action(&s, &Action { tilt: 1, pos: [0, 0, 0] }, &g);
        assert_eq!(g.values(&up), [10.0, 0.0, 0.0, 20.0]);
        let low = g.locate(-30.0, 0.0, 0.0, 20.0).unwrap();
        assert_eq!(apply_action(&low, &Action { tilt: -1, pos: [0, 0, 0] }, &g), low);
        let z30 = g.locate(0.0, 0.0, 0.0, 30.0).unwrap();
        let rise = Action { tilt: 0, pos: [0, 0, 1] };
        let z35 = apply_action(&z30, &rise, &g);
        assert_eq!(g.values(&z35)[3], 35.0);
        assert_eq!(apply_action(&z35, &rise, &g), z35);
        let a = Action { tilt: 1, pos: [1, -1, 1] };
        let back = Action { tilt: -1, pos: [-1, 1, -1] };
        assert_eq!(apply_action(&apply_action(&s, &a, &g), &back, &g), s);
    }

    #[test]
    fn clamping_stays_on_grid() {
        let g = CandidateGrids::default();
        for s in g.states() {
            for i in 0..N_ACTIONS {
                assert!(g.contains(&apply_action(&s, &ActionIndex(i).decode().unwrap(), &g)));
            }
        }
    }

    #[test]
    fn every_state_is_reachable() {
        let g = CandidateGrids::default();
        let start = g.initial_state().unwrap();
        let mut seen = HashSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(s) = queue.pop_front() {
            for i in 0..N_ACTIONS {
                let n = apply_action(&s, &ActionIndex(i).decode().unwrap(), &g);
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        assert_eq!(seen.len(), 700);
    }

    #[test]
    fn schedule_drift() {
        let s = PhaseSchedule {
            cluster_start_m: [0.0, 0.0],
            drift_m: 50.0,
            heading_start_deg: 90.0,
            heading_step_deg: 0.0,
            n_phases: 9,
        };
        let (x, y) = s.cluster_center(2);
        assert!((x - 100.0).abs() < 1e-9 && y.abs() < 1e-9);
        assert!(matches!(s.placement(9), Err(Error::ScheduleExhausted)));
        let mut errors = Vec::new();
        PhaseSchedule::default().validate(350.0, &mut errors);
        assert!(errors.is_empty(), "{errors:?}");
    }

    fn small_cfg() -> EnvConfig {
        let mut cfg = EnvConfig::default();
        cfg.network.n_users = 60;
        cfg.traffic.sim_time_s = 0.1;
        cfg.grids = CandidateGrids::miniature();
        cfg
    }

    fn unit_bounds() -> ThroughputBounds {
        ThroughputBounds::from_observed(&[KpiSnapshot {
            dl_tp_50: 1e8,
            dl_tp_5: 1e8,
            ul_tp_50: 1e8,
            ul_tp_5: 1e8,
            dl_drop: 0.0,
            ul_drop: 0.0,
        }])
    }

    #[test]
    fn evaluation_is_deterministic_and_cached() {
        let ev = Arc::new(Evaluator::new(small_cfg(), 3).unwrap());
        let s = ev.cfg().grids.initial_state().unwrap();
        let a = ev.evaluate(0, LoadMode::Light, &s).unwrap();
        let fresh = evaluate_state(&ev.world(0).unwrap(), ev.cfg(), &s, LoadMode::Light, 3).unwrap();
        assert_eq!(*a, fresh);
        ev.evaluate(0, LoadMode::Light, &s).unwrap();
        assert_eq!(ev.cached_evaluations(), 1);
    }

    #[test]
    fn step_semantics() {
        let ev = Arc::new(Evaluator::new(small_cfg(), 3).unwrap());
        let mut env = Env::new(ev, LoadMode::Light, unit_bounds()).unwrap();
        let s = env.state();
        let out = env.step(Action::NOOP.id()).unwrap();
        assert_eq!(out.next_state, s);
        assert_eq!(out.reward(), env.evaluate(&s).unwrap().reward);
        let east = env.step(Action { tilt: 0, pos: [1, 0, 0] }.id()).unwrap();
        assert_eq!(east.reward(), env.evaluate(&east.next_state).unwrap().reward);
        env.step(Action { tilt: 0, pos: [-1, 0, 0] }.id()).unwrap();
        assert_eq!(env.state(), s);
    }

    #[test]
    fn advance_phase_keeps_uav_and_sites() {
        let ev = Arc::new(Evaluator::new(small_cfg(), 3).unwrap());
        let mut env = Env::new(ev.clone(), LoadMode::Light, unit_bounds()).unwrap();
        env.step(Action { tilt: 0, pos: [1, 1, 0] }.id()).unwrap();
        let before = env.state();
        env.advance_phase().unwrap();
        assert_eq!(env.state(), before);
        let (w0, w1) = (ev.world(0).unwrap(), ev.world(1).unwrap());
        assert_eq!(w0.sites, w1.sites);
        assert_ne!(w0.users, w1.users);
        for _ in 1..8 {
            env.advance_phase().unwrap();
        }
        assert!(matches!(env.advance_phase(), Err(Error::ScheduleExhausted)));
    }
}
