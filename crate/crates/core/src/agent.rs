//! DQN learner: a 4-16-16-81 network with hand-written backpropagation,
//! a FIFO replay buffer, adaptive exploration and value-based action selection.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rlenv::{position_vector, Action, ActionIndex, Env, UavState, N_ACTIONS, N_POSITION_ACTIONS};
use crate::rng::{self, Stream};

pub const LAYER_SIZES: [usize; 4] = [4, 16, 16, 81];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, weights: vec![0.0; n_in * n_out], biases: vec![0.0; n_out] }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            out.push(self.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

/// Feed-forward Q-network. Hidden layers use ReLU, the output is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub layers: Vec<Layer>,
}

struct Activations {
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    q: Vec<f64>,
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

fn check_input(x: &[f64; 4]) -> Result<()> {
    const NAMES: [&str; 4] = ["tilt", "x", "y", "z"];
    for (name, &value) in NAMES.iter().zip(x) {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::UnnormalizedInput { name, value });
        }
    }
    Ok(())
}

impl QNetwork {
    pub fn zeros() -> Self {
        let layers = LAYER_SIZES.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self { layers }
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros();
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.n_in as f64).sqrt();
            for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *v = rng.random_range(-bound..=bound);
            }
        }
        net
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied()).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::Invalid(format!("expected {} parameters, got {}", self.n_params(), p.len())));
        }
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn activations(&self, x: &[f64; 4]) -> Activations {
        let mut z1 = Vec::with_capacity(16);
        self.layers[0].forward(x, &mut z1);
        let h1 = relu(&z1);
        let mut z2 = Vec::with_capacity(16);
        self.layers[1].forward(&h1, &mut z2);
        let h2 = relu(&z2);
        let mut q = Vec::with_capacity(N_ACTIONS);
        self.layers[2].forward(&h2, &mut q);
        Activations { z1, h1, z2, h2, q }
    }

    pub fn forward(&self, x: &[f64; 4]) -> Result<Vec<f64>> {
        check_input(x)?;
        if !self.is_finite() {
            return Err(Error::DivergedNetwork);
        }
        let q = self.activations(x).q;
        if q.iter().all(|v| v.is_finite()) {
            Ok(q)
        } else {
            Err(Error::DivergedNetwork)
        }
    }

    /// Accumulates `scale * d(q[action])/d(theta)` into `grad`, laid out like [`QNetwork::params`].
    fn accumulate_output_gradient(&self, x: &[f64; 4], action: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let act = self.activations(x);
        let [l1, l2, l3] = [&self.layers[0], &self.layers[1], &self.layers[2]];
        let off2 = l1.weights.len() + l1.biases.len();
        let off3 = off2 + l2.weights.len() + l2.biases.len();

        // output layer: only the acted unit carries error
        let w3 = off3 + action * l3.n_in;
        for (j, h) in act.h2.iter().enumerate() {
            grad[w3 + j] += scale * h;
        }
        grad[off3 + l3.weights.len() + action] += scale;

        let row = &l3.weights[action * l3.n_in..(action + 1) * l3.n_in];
        let dz2: Vec<f64> = row.iter().zip(&act.z2).map(|(w, &z)| if z > 0.0 { scale * w } else { 0.0 }).collect();
        for (o, d) in dz2.iter().enumerate() {
            if *d != 0.0 {
                for (i, h) in act.h1.iter().enumerate() {
                    grad[off2 + o * l2.n_in + i] += d * h;
                }
            }
            grad[off2 + l2.weights.len() + o] += d;
        }

        let mut dz1 = vec![0.0; l1.n_out];
        for (o, d) in dz2.iter().enumerate() {
            if *d != 0.0 {
                for (i, acc) in dz1.iter_mut().enumerate() {
                    *acc += d * l2.weights[o * l2.n_in + i];
                }
            }
        }
        for (i, (acc, &z)) in dz1.iter_mut().zip(&act.z1).enumerate() {
            if z <= 0.0 {
                *acc = 0.0;
            }
            for (k, xv) in x.iter().enumerate() {
                grad[i * l1.n_in + k] += *acc * xv;
            }
            grad[l1.weights.len() + i] += *acc;
        }
        act.q[action]
    }

    /// Mean squared TD error over the batch and its gradient.
    pub fn loss_and_gradient(
        &self,
        batch: &[(/*input*/ [f64; 4], /*action*/ usize, /*target*/ f64)],
    ) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.n_params()];
        let n = batch.len().max(1) as f64;
        let mut loss = 0.0;
        for (x, a, y) in batch {
            let q = self.activations(x).q[*a];
            let err = q - y;
            loss += err * err / n;
            self.accumulate_output_gradient(x, *a, 2.0 * err / n, &mut grad);
        }
        (loss, grad)
    }

    pub fn loss(&self, batch: &[([f64; 4], usize, f64)]) -> f64 {
        let n = batch.len().max(1) as f64;
        batch
            .iter()
            .map(|(x, a, y)| {
                let e = self.activations(x).q[*a] - y;
                e * e / n
            })
            .sum()
    }

    pub fn descend(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        let mut it = grad.iter();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *v -= lr * it.next().expect("gradient length");
            }
        }
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::DivergedNetwork)
        }
    }

    pub fn to_record(&self) -> ParamRecord {
        ParamRecord {
            shapes: self.layers.iter().flat_map(|l| [vec![l.n_out, l.n_in], vec![l.n_out]]).collect(),
            values: self.params(),
        }
    }

    pub fn from_record(r: &ParamRecord) -> Result<Self> {
        let mut net = Self::zeros();
        let expected: Vec<Vec<usize>> = net.to_record().shapes;
        if r.shapes != expected {
            return Err(Error::Invalid(format!("parameter shapes {:?} do not match {:?}", r.shapes, expected)));
        }
        net.set_params(&r.values)?;
        if !net.is_finite() {
            return Err(Error::DivergedNetwork);
        }
        Ok(net)
    }
}

/// Serialized network: per-tensor shapes, then all values row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shapes: Vec<Vec<usize>>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: [f64; 4],
    pub action: ActionIndex,
    pub reward: f64,
    pub next_state: [f64; 4],
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Up to `n` distinct transitions, uniformly at random.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<Transition> {
        let k = n.min(self.items.len());
        index::sample(rng, self.items.len(), k).into_iter().map(|i| self.items[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentHyperparams {
    pub epsilon_start: f64,
    pub epsilon_restart: f64,
    pub epsilon_end: f64,
    pub epsilon_decay: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub drop_threshold: f64,
    pub upper_reward_threshold: f64,
    pub grouping_threshold: f64,
    pub steps_per_iteration: usize,
    pub training_iterations: usize,
    pub validation_iterations: usize,
    /// Copy the online network into the target network every this many gradient steps.
    pub target_sync_every: usize,
}

impl Default for AgentHyperparams {
    fn default() -> Self {
        Self {
            epsilon_start: 1.0,
            epsilon_restart: 0.1,
            epsilon_end: 1e-4,
            epsilon_decay: 0.995,
            gamma: 0.95,
            learning_rate: 5e-5,
            batch_size: 32,
            buffer_capacity: 2000,
            drop_threshold: 0.15,
            upper_reward_threshold: 0.8,
            grouping_threshold: 0.0,
            steps_per_iteration: 25,
            training_iterations: 40,
            validation_iterations: 40,
            target_sync_every: 1,
        }
    }
}

impl AgentHyperparams {
    pub fn validate(&self, errors: &mut Vec<String>) {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.epsilon_end) && unit(self.epsilon_restart) && unit(self.epsilon_start)) {
            errors.push("agent epsilon values must lie in [0, 1]".into());
        }
        if self.epsilon_end > self.epsilon_start || self.epsilon_end > self.epsilon_restart {
            errors.push("agent.epsilon_end must not exceed epsilon_start or epsilon_restart".into());
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            errors.push("agent.epsilon_decay must lie in (0, 1]".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            errors.push(format!("agent.gamma must lie in (0, 1) (got {})", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            errors.push("agent.learning_rate must be positive".into());
        }
        for (name, v) in [
            ("drop_threshold", self.drop_threshold),
            ("upper_reward_threshold", self.upper_reward_threshold),
            ("grouping_threshold", self.grouping_threshold),
        ] {
            if !(v >= 0.0) {
                errors.push(format!("agent.{name} must be non-negative"));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("steps_per_iteration", self.steps_per_iteration),
            ("training_iterations", self.training_iterations),
            ("validation_iterations", self.validation_iterations),
            ("target_sync_every", self.target_sync_every),
        ] {
            if v == 0 {
                errors.push(format!("agent.{name} must be at least 1"));
            }
        }
    }
}

/// Position vectors grouped by their dot product with the previous move.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionPools {
    pub same: Vec<[i8; 3]>,
    pub opposite: Vec<[i8; 3]>,
}

fn dot(a: [i8; 3], b: [i8; 3]) -> i32 {
    a.iter().zip(b).map(|(&x, y)| x as i32 * y as i32).sum()
}

pub fn action_grouping(prev: [i8; 3], threshold: f64) -> ActionPools {
    let (same, opposite) = (0..N_POSITION_ACTIONS).map(position_vector).partition(|&v| dot(prev, v) as f64 > threshold);
    ActionPools { same, opposite }
}

/// Index of the largest value; the lowest index wins ties.
pub fn greedy_action(q: &[f64]) -> ActionIndex {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    ActionIndex(best)
}

fn all_positions() -> Vec<[i8; 3]> {
    (0..N_POSITION_ACTIONS).map(position_vector).collect()
}

/// Epsilon-greedy choice with value-based exploration: after an improvement
/// the random move keeps going the same way, otherwise it turns away.
pub fn action_selection(
    r_p: f64,
    r_t: f64,
    epsilon: f64,
    pools: &ActionPools,
    q: &[f64],
    rng: &mut impl Rng,
) -> ActionIndex {
    if rng.random::<f64>() < epsilon {
        let pool = if r_t >= r_p { &pools.same } else { &pools.opposite };
        let fallback;
        let pool = if pool.is_empty() {
            fallback = all_positions();
            &fallback
        } else {
            pool
        };
        let pos = pool[rng.random_range(0..pool.len())];
        let tilt = rng.random_range(-1i8..=1);
        Action { tilt, pos }.id()
    } else {
        greedy_action(q)
    }
}

/// Plain epsilon-greedy over all 81 actions.
pub fn uniform_selection(epsilon: f64, q: &[f64], rng: &mut impl Rng) -> ActionIndex {
    if rng.random::<f64>() < epsilon {
        ActionIndex(rng.random_range(0..N_ACTIONS))
    } else {
        greedy_action(q)
    }
}

pub fn decay_epsilon(epsilon: f64, hp: &AgentHyperparams) -> f64 {
    (epsilon * hp.epsilon_decay).max(hp.epsilon_end)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AeEvent {
    Restart,
    Settle,
    Decay,
}

impl AeEvent {
    pub fn name(self) -> &'static str {
        match self {
            AeEvent::Restart => "restart",
            AeEvent::Settle => "settle",
            AeEvent::Decay => "decay",
        }
    }
}

pub fn adaptive_exploration_event(r_p: f64, r_t: f64, hp: &AgentHyperparams) -> AeEvent {
    if r_p - r_t > hp.drop_threshold {
        AeEvent::Restart
    } else if r_t > hp.upper_reward_threshold {
        AeEvent::Settle
    } else {
        AeEvent::Decay
    }
}

pub fn adaptive_exploration(r_p: f64, r_t: f64, epsilon: f64, hp: &AgentHyperparams) -> f64 {
    match adaptive_exploration_event(r_p, r_t, hp) {
        AeEvent::Restart => hp.epsilon_restart,
        AeEvent::Settle => hp.epsilon_end,
        AeEvent::Decay => decay_epsilon(epsilon, hp),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    AeVas,
    VasRetrained,
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::AeVas, Variant::VasRetrained, Variant::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Variant::AeVas => "ae-vas",
            Variant::VasRetrained => "vas-retrained",
            Variant::Baseline => "baseline",
        }
    }

    pub fn uses_vas(self) -> bool {
        self != Variant::Baseline
    }

    pub fn uses_ae(self) -> bool {
        self == Variant::AeVas
    }

    pub fn resets_each_phase(self) -> bool {
        self == Variant::VasRetrained
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::Invalid(format!("unknown variant {s:?}")))
    }
}

/// One environment step of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub iteration: usize,
    pub phase: usize,
    pub state: UavState,
    pub action: ActionIndex,
    pub next_state: UavState,
    pub reward: f64,
    /// Exploration probability after this step's update.
    pub epsilon: f64,
    pub explored: bool,
    pub grouped: bool,
    pub ae_event: Option<AeEvent>,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingTrace {
    pub variant: Variant,
    pub rows: Vec<TraceRow>,
    /// Online parameters at the first step of each phase.
    pub phase_start_params: Vec<QNetwork>,
    pub final_params: QNetwork,
}

impl TrainingTrace {
    pub fn phase_rows(&self, phase: usize) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.phase == phase)
    }
}

/// Learner state carried across steps and phases.
pub struct Agent {
    pub hp: AgentHyperparams,
    pub variant: Variant,
    seed: u64,
    pub online: QNetwork,
    pub target: QNetwork,
    pub buffer: ReplayBuffer,
    pub epsilon: f64,
    r_p: f64,
    r_t: f64,
    pools: ActionPools,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    gradient_steps: usize,
}

impl Agent {
    pub fn new(hp: AgentHyperparams, variant: Variant, seed: u64) -> Result<Self> {
        let mut errors = Vec::new();
        hp.validate(&mut errors);
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let (online, target) = Self::fresh_networks(seed, 0);
        Ok(Self {
            buffer: ReplayBuffer::new(hp.buffer_capacity),
            epsilon: hp.epsilon_start,
            hp,
            variant,
            seed,
            online,
            target,
            r_p: 0.0,
            r_t: 0.0,
            pools: action_grouping([0, 0, 0], 0.0),
            explore_rng: rng::stream(seed, 0, Stream::Exploration),
            replay_rng: rng::stream(seed, 0, Stream::Replay),
            gradient_steps: 0,
        })
    }

    /// Independent online and target draws for a phase.
    pub fn fresh_networks(seed: u64, phase: usize) -> (QNetwork, QNetwork) {
        let mut r = rng::stream(seed, phase as u64, Stream::NetworkInit);
        let online = QNetwork::init(&mut r);
        let target = QNetwork::init(&mut r);
        (online, target)
    }

    /// Forgets everything learned: fresh weights, empty memory, full exploration.
    pub fn reset(&mut self, phase: usize) {
        (self.online, self.target) = Self::fresh_networks(self.seed, phase);
        self.buffer.clear();
        self.epsilon = self.hp.epsilon_start;
        self.r_p = 0.0;
        self.r_t = 0.0;
        self.pools = action_grouping([0, 0, 0], self.hp.grouping_threshold);
    }

    fn train_on_batch(&mut self) -> Result<f64> {
        let batch = self.buffer.sample(self.hp.batch_size, &mut self.replay_rng);
        let mut rows = Vec::with_capacity(batch.len());
        for t in &batch {
            let y = if t.terminal {
                t.reward
            } else {
                let q_next = self.target.forward(&t.next_state)?;
                t.reward + self.hp.gamma * q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            rows.push((t.state, t.action.0, y));
        }
        let (loss, grad) = self.online.loss_and_gradient(&rows);
        self.online.descend(&grad, self.hp.learning_rate)?;
        self.gradient_steps += 1;
        if self.gradient_steps.is_multiple_of(self.hp.target_sync_every) {
            self.target = self.online.clone();
        }
        Ok(loss)
    }

    /// One pass of the inner training loop. `terminal` marks the last step of an iteration.
    pub fn step(&mut self, env: &mut Env, terminal: bool) -> Result<(TraceRowCore, f64)> {
        let grids = env.grids().clone();
        let s = env.state();
        let x = grids.encode(&s);
        let q = self.online.forward(&x)?;
        let draw_before = self.explore_rng.clone();
        let action = if self.variant.uses_vas() {
            action_selection(self.r_p, self.r_t, self.epsilon, &self.pools, &q, &mut self.explore_rng)
        } else {
            uniform_selection(self.epsilon, &q, &mut self.explore_rng)
        };
        let explored = {
            let mut r = draw_before;
            r.random::<f64>() < self.epsilon
        };
        self.r_p = self.r_t;
        let out = env.step(action)?;
        self.r_t = out.reward();
        self.buffer.push(Transition {
            state: x,
            action,
            reward: self.r_t,
            next_state: grids.encode(&out.next_state),
            terminal,
        });
        let grouped = self.variant.uses_vas();
        if grouped {
            self.pools = action_grouping(action.decode()?.pos, self.hp.grouping_threshold);
        }
        let loss = self.train_on_batch()?;
        let ae_event = if self.variant.uses_ae() {
            let e = adaptive_exploration_event(self.r_p, self.r_t, &self.hp);
            self.epsilon = adaptive_exploration(self.r_p, self.r_t, self.epsilon, &self.hp);
            Some(e)
        } else {
            self.epsilon = decay_epsilon(self.epsilon, &self.hp);
            None
        };
        Ok((
            TraceRowCore {
                state: s,
                action,
                next_state: out.next_state,
                reward: self.r_t,
                explored,
                grouped,
                ae_event,
            },
            loss,
        ))
    }
}

/// The per-step fields produced by [`Agent::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRowCore {
    pub state: UavState,
    pub action: ActionIndex,
    pub next_state: UavState,
    pub reward: f64,
    pub explored: bool,
    pub grouped: bool,
    pub ae_event: Option<AeEvent>,
}

/// Runs the full schedule: the training phase, then every validation phase.
pub fn run_training(env: &mut Env, hp: &AgentHyperparams, variant: Variant, seed: u64) -> Result<TrainingTrace> {
    let mut agent = Agent::new(hp.clone(), variant, seed)?;
    let mut rows = Vec::new();
    let mut phase_start_params = Vec::new();
    let mut iteration = 0;
    for phase in 0..env.n_phases() {
        if phase > 0 {
            env.advance_phase()?;
            if variant.resets_each_phase() {
                agent.reset(phase);
            }
        }
        phase_start_params.push(agent.online.clone());
        let iterations = if phase == 0 { hp.training_iterations } else { hp.validation_iterations };
        for _ in 0..iterations {
            for t in 0..hp.steps_per_iteration {
                let (core, loss) = agent.step(env, t + 1 == hp.steps_per_iteration)?;
                rows.push(TraceRow {
                    step: rows.len(),
                    iteration,
                    phase,
                    state: core.state,
                    action: core.action,
                    next_state: core.next_state,
                    reward: core.reward,
                    epsilon: agent.epsilon,
                    explored: core.explored,
                    grouped: core.grouped,
                    ae_event: core.ae_event,
                    loss,
                });
            }
            iteration += 1;
        }
    }
    Ok(TrainingTrace { variant, rows, phase_start_params, final_params: agent.online })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let q = QNetwork::zeros().forward(&[0.3, 0.1, 0.9, 1.0]).unwrap();
        assert_eq!(q.len(), 81);
        assert!(q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_layer_is_linear() {
        let mut net = QNetwork::init(&mut rng(1));
        net.layers[2].biases.iter_mut().for_each(|b| *b = 0.0);
        let x = [0.2, 0.4, 0.6, 0.8];
        let q = net.forward(&x).unwrap();
        net.layers[2].weights.iter_mut().for_each(|w| *w *= 2.0);
        let q2 = net.forward(&x).unwrap();
        for (a, b) in q.iter().zip(&q2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_hand_matmul() {
        // one active path per layer: input 0 -> hidden 0 -> hidden 0 -> outputs 0 and 5
        let mut net = QNetwork::zeros();
        net.layers[0].weights[0] = 0.5; // h1[0] = relu(0.5 x0 - 0.1)
        net.layers[0].biases[0] = -0.1;
        net.layers[0].weights[4] = -1.0; // h1[1] = relu(-x0) = 0
        net.layers[1].weights[0] = 2.0; // h2[0] = relu(2 h1[0] + 0.25)
        net.layers[1].biases[0] = 0.25;
        net.layers[2].weights[0] = 3.0; // q[0] = 3 h2[0]
        net.layers[2].weights[5 * 16] = -1.5; // q[5] = -1.5 h2[0] + 0.75
        net.layers[2].biases[5] = 0.75;
        let x = [0.8, 0.0, 0.0, 0.0];
        let q = net.forward(&x).unwrap();
        let h1 = 0.5 * 0.8 - 0.1;
        let h2 = 2.0 * h1 + 0.25;
        assert!((q[0] - 3.0 * h2).abs() < 1e-12);
        assert!((q[5] - (-1.5 * h2 + 0.75)).abs() < 1e-12);
        assert!(q.iter().enumerate().all(|(i, v)| i == 0 || i == 5 || *v == 0.0));
    }

    #[test]
    fn rejects_unnormalized_and_diverged() {
        let net = QNetwork::init(&mut rng(1));
        assert!(matches!(net.forward(&[1.2, 0.0, 0.0, 0.0]), Err(Error::UnnormalizedInput { name: "tilt", .. })));
        let mut bad = net.clone();
        bad.layers[1].weights[3] = f64::NAN;
        assert!(matches!(bad.forward(&[0.5; 4]), Err(Error::DivergedNetwork)));
    }

    /// Central finite differences of the batch loss against backprop.
    pub(crate) fn gradient_check(seed: u64) -> f64 {
        let mut r = rng(seed);
        loop {
            let net = QNetwork::init(&mut r);
            let batch: Vec<([f64; 4], usize, f64)> = (0..4)
                .map(|_| (std::array::from_fn(|_| r.random::<f64>()), r.random_range(0..81), r.random::<f64>()))
                .collect();
            // keep pre-activations away from the ReLU kink so the difference quotient is smooth
            let kinked = batch.iter().any(|(x, _, _)| {
                let a = net.activations(x);
                a.z1.iter().chain(&a.z2).any(|z| z.abs() < 1e-4)
            });
            if kinked {
                continue;
            }
            let (_, grad) = net.loss_and_gradient(&batch);
            let p = net.params();
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            for i in 0..p.len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let mut q = p.clone();
                q[i] += h;
                plus.set_params(&q).unwrap();
                q[i] -= 2.0 * h;
                minus.set_params(&q).unwrap();
                let numeric = (plus.loss(&batch) - minus.loss(&batch)) / (2.0 * h);
                let scale = grad[i].abs().max(numeric.abs());
                if scale > 1e-7 {
                    worst = worst.max((grad[i] - numeric).abs() / scale);
                }
            }
            return worst;
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let e = gradient_check(seed);
            assert!(e < 1e-4, "seed {seed}: relative error {e}");
        }
    }

    #[test]
    fn fixed_point_batch_leaves_params_unchanged() {
        let mut net = QNetwork::init(&mut rng(4));
        let x = [0.1, 0.5, 0.7, 0.2];
        let q = net.forward(&x).unwrap();
        let batch = vec![(x, 7, q[7]), (x, 30, q[30])];
        let before = net.params();
        let (loss, grad) = net.loss_and_gradient(&batch);
        assert_eq!(loss, 0.0);
        net.descend(&grad, 0.1).unwrap();
        assert_eq!(net.params(), before);
    }

    #[test]
    fn params_round_trip() {
        let net = QNetwork::init(&mut rng(2));
        assert_eq!(net.n_params(), 4 * 16 + 16 + 16 * 16 + 16 + 16 * 81 + 81);
        let rec = net.to_record();
        let json = serde_json::to_string(&rec).unwrap();
        let back = QNetwork::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, net);
        let mut broken = rec.clone();
        broken.shapes[0] = vec![16, 5];
        assert!(QNetwork::from_record(&broken).is_err());
    }

    fn transition(r: f64) -> Transition {
        Transition { state: [0.0; 4], action: ActionIndex(0), reward: r, next_state: [0.0; 4], terminal: false }
    }

    #[test]
    fn replay_buffer_is_fifo() {
        let mut b = ReplayBuffer::new(5);
        for i in 0..8 {
            b.push(transition(i as f64));
            assert!(b.len() <= 5);
        }
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
        let s = b.sample(3, &mut rng(0));
        assert_eq!(s.len(), 3);
        assert_eq!(b.sample(10, &mut rng(0)).len(), 5);
    }

    #[test]
    fn grouping_examples() {
        let p = action_grouping([0, 0, 0], 0.0);
        assert_eq!((p.same.len(), p.opposite.len()), (0, 27));
        let p = action_grouping([1, 1, 1], 0.0);
        assert_eq!((p.same.len(), p.opposite.len()), (10, 17));
        let p = action_grouping([1, 0, 0], 0.0);
        assert_eq!(p.same.len(), 9);
        assert!(p.same.iter().all(|v| v[0] == 1));
    }

    #[test]
    fn greedy_ties_and_shift_invariance() {
        let mut q = vec![0.0; 81];
        q[10] = 1.0;
        q[20] = 1.0;
        assert_eq!(greedy_action(&q), ActionIndex(10));
        let shifted: Vec<f64> = q.iter().map(|v| v + 123.0).collect();
        assert_eq!(greedy_action(&shifted), ActionIndex(10));
        let pools = action_grouping([1, 1, 1], 0.0);
        assert_eq!(action_selection(0.0, 1.0, 0.0, &pools, &q, &mut rng(0)), ActionIndex(10));
    }

    #[test]
    fn exploration_respects_pools() {
        let pools = action_grouping([1, 1, 1], 0.0);
        let q = vec![0.0; 81];
        let mut r = rng(9);
        for _ in 0..500 {
            let a = action_selection(0.2, 0.5, 1.0, &pools, &q, &mut r).decode().unwrap();
            assert!(dot(a.pos, [1, 1, 1]) > 0);
            let b = action_selection(0.5, 0.2, 1.0, &pools, &q, &mut r).decode().unwrap();
            assert!(dot(b.pos, [1, 1, 1]) <= 0);
        }
        let empty = action_grouping([0, 0, 0], 0.0);
        let seen: std::collections::HashSet<_> =
            (0..2000).map(|_| action_selection(0.0, 0.0, 1.0, &empty, &q, &mut r).decode().unwrap().pos).collect();
        assert_eq!(seen.len(), 27);
    }

    #[test]
    fn ae_examples() {
        let hp = AgentHyperparams::default();
        assert_eq!(adaptive_exploration(0.8, 0.5, 0.3, &hp), 0.1);
        assert_eq!(adaptive_exploration(0.5, 0.9, 0.3, &hp), 0.0001);
        assert_eq!(adaptive_exploration(0.5, 0.5, 1.0, &hp), 0.995);
        assert_eq!(adaptive_exploration(0.5, 0.5, 1e-4, &hp), 1e-4);
    }
}
