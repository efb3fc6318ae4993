//! Run configuration, the exhaustive oracle sweep, the multi-phase experiment
//! driver, the tilt/position analysis sweeps and CSV output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{run_training, AgentHyperparams, TrainingTrace, Variant};
use crate::channel::Position3D;
use crate::error::{Error, Result};
use crate::metrics::{KpiSnapshot, NormalizationBounds, ThroughputBounds};
use crate::network::UavPose;
use crate::rlenv::{evaluate_pose, score, CandidateGrids, Env, EnvConfig, Evaluation, Evaluator, Scored, UavState};
use crate::traffic::LoadMode;

/// Version stamped into the comment line that opens every CSV file.
pub const SCHEMA_VERSION: u32 = 1;

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Full,
    /// 100 users, 0.2 s of traffic and the 18-state miniature grid.
    Fast,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Fast => "fast",
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "fast" => Ok(Profile::Fast),
            other => Err(Error::Invalid(format!("unknown profile {other:?}"))),
        }
    }
}

/// Everything a run needs. Missing keys take their defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub load: LoadMode,
    pub variant: Variant,
    pub env: EnvConfig,
    pub agent: AgentHyperparams,
    /// Throughput normalization bounds. Derived from the phase-0 sweep of each
    /// load when absent.
    pub bounds: Option<NormalizationBounds>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            load: LoadMode::Light,
            variant: Variant::AeVas,
            env: EnvConfig::default(),
            agent: AgentHyperparams::default(),
            bounds: None,
        }
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut cfg = Self::default();
        cfg.apply_profile(profile);
        cfg
    }

    /// `Full` leaves the configuration untouched.
    pub fn apply_profile(&mut self, profile: Profile) {
        if profile == Profile::Fast {
            self.env.network.n_users = 100;
            self.env.traffic.sim_time_s = 0.2;
            self.env.grids = CandidateGrids::miniature();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        self.env.validate(&mut errors);
        self.agent.validate(&mut errors);
        if let Some(b) = &self.bounds {
            b.validate(&mut errors);
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn evaluator(&self) -> Result<Arc<Evaluator>> {
        Ok(Arc::new(Evaluator::new(self.env.clone(), self.seed)?))
    }
}

/// Parses and validates a JSON configuration. Blank input yields the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = if text.trim().is_empty() {
        RunConfig::default()
    } else {
        serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(items) => Error::Config(items.into_iter().map(|i| format!("{}: {i}", path.display())).collect()),
        other => other,
    })
}

pub fn save_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes the configuration actually used, bounds included, next to the outputs.
pub fn write_effective_config(cfg: &RunConfig, bounds: &NormalizationBounds, dir: &Path) -> Result<PathBuf> {
    let mut eff = cfg.clone();
    eff.bounds = Some(*bounds);
    let path = dir.join(EFFECTIVE_CONFIG_FILE);
    save_config(&eff, &path)?;
    Ok(path)
}

/// Evaluates every grid state of one phase and load, in canonical order.
pub fn evaluate_grid(ev: &Evaluator, phase: usize, load: LoadMode) -> Result<Vec<Arc<Evaluation>>> {
    let grids = &ev.cfg().grids;
    (0..grids.n_states()).into_par_iter().map(|i| ev.evaluate(phase, load, &grids.state_at(i))).collect()
}

/// Zero-to-max bounds observed over the phase-0 sweep of each load.
pub fn derive_bounds(ev: &Evaluator) -> Result<NormalizationBounds> {
    let observed = |load| -> Result<ThroughputBounds> {
        let evals = evaluate_grid(ev, 0, load)?;
        Ok(ThroughputBounds::from_observed(evals.iter().map(|e| &e.kpi)))
    };
    Ok(NormalizationBounds { light: observed(LoadMode::Light)?, heavy: observed(LoadMode::Heavy)? })
}

pub fn resolve_bounds(cfg: &RunConfig, ev: &Evaluator) -> Result<NormalizationBounds> {
    match cfg.bounds {
        Some(b) => Ok(b),
        None => derive_bounds(ev),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub state: UavState,
    /// Tilt, x, y, z.
    pub values: [f64; 4],
    pub scored: Scored,
    pub kpi_valid: bool,
    pub uav_users: usize,
    pub mc_users_on_uav: usize,
    pub backhaul_dl_bps: f64,
    pub backhaul_ul_bps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub phase: usize,
    pub load: LoadMode,
    pub rows: Vec<SweepRow>,
    /// Row index of the best reward; the lowest index wins ties.
    pub argmax: usize,
}

impl SweepResult {
    pub fn best(&self) -> &SweepRow {
        &self.rows[self.argmax]
    }

    pub fn max_reward(&self) -> f64 {
        self.best().scored.reward
    }

    pub fn file_name(&self) -> String {
        format!("sweep_p{}_{}.csv", self.phase, self.load.name())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut header = vec!["index", "tilt_deg", "x_m", "y_m", "z_m"];
        header.extend(KpiSnapshot::COLUMNS);
        header.extend([
            "reward",
            "kpi_valid",
            "uav_users",
            "mc_users_on_uav",
            "backhaul_dl_bps",
            "backhaul_ul_bps",
            "argmax",
        ]);
        let rows = self.rows.iter().enumerate().map(|(i, r)| {
            let mut rec = vec![i.to_string()];
            rec.extend(r.values.iter().map(f64::to_string));
            rec.extend(r.scored.kpi.values().iter().map(f64::to_string));
            rec.extend([
                r.scored.reward.to_string(),
                r.kpi_valid.to_string(),
                r.uav_users.to_string(),
                r.mc_users_on_uav.to_string(),
                r.backhaul_dl_bps.to_string(),
                r.backhaul_ul_bps.to_string(),
                (i == self.argmax).to_string(),
            ]);
            rec
        });
        write_csv(w, "sweep", &header, rows)
    }
}

fn sweep_row(grids: &CandidateGrids, state: UavState, e: &Evaluation, scored: Scored) -> SweepRow {
    SweepRow {
        state,
        values: grids.values(&state),
        scored,
        kpi_valid: e.kpi_valid,
        uav_users: e.uav_users,
        mc_users_on_uav: e.mc_users_on_uav,
        backhaul_dl_bps: e.backhaul.map_or(0.0, |b| b.dl_bps),
        backhaul_ul_bps: e.backhaul.map_or(0.0, |b| b.ul_bps),
    }
}

/// Index of the first maximum.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Exhaustive evaluation of every candidate state in one phase.
pub fn oracle_sweep(ev: &Evaluator, bounds: &ThroughputBounds, phase: usize, load: LoadMode) -> Result<SweepResult> {
    let grids = &ev.cfg().grids;
    let weights = &ev.cfg().weights;
    let evals = evaluate_grid(ev, phase, load)?;
    let rows = evals
        .iter()
        .enumerate()
        .map(|(i, e)| Ok(sweep_row(grids, grids.state_at(i), e, score(e, bounds, weights)?)))
        .collect::<Result<Vec<_>>>()?;
    let argmax = argmax(rows.iter().map(|r| r.scored.reward)).ok_or_else(|| Error::Invalid("empty grid".into()))?;
    Ok(SweepResult { phase, load, rows, argmax })
}

/// One trained variant under one load, with the raw KPIs of every visited state.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    pub load: LoadMode,
    pub trace: TrainingTrace,
    /// KPIs of each row's next state, aligned with `trace.rows`.
    pub step_kpis: Vec<KpiSnapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationSummary {
    pub phase: usize,
    pub iteration: usize,
    pub first_step: usize,
    pub mean_reward: f64,
    pub final_reward: f64,
    pub final_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSummary {
    pub phase: usize,
    pub iterations: usize,
    /// Mean of the phase's per-iteration mean rewards.
    pub mean_reward: f64,
}

impl RunResult {
    pub fn iterations(&self) -> Vec<IterationSummary> {
        let rows = &self.trace.rows;
        let mut out = Vec::new();
        let mut start = 0;
        while start < rows.len() {
            let it = rows[start].iteration;
            let end = start + rows[start..].iter().take_while(|r| r.iteration == it).count();
            let chunk = &rows[start..end];
            let last = &chunk[chunk.len() - 1];
            out.push(IterationSummary {
                phase: chunk[0].phase,
                iteration: it,
                first_step: chunk[0].step,
                mean_reward: chunk.iter().map(|r| r.reward).sum::<f64>() / chunk.len() as f64,
                final_reward: last.reward,
                final_epsilon: last.epsilon,
            });
            start = end;
        }
        out
    }

    pub fn phases(&self) -> Vec<PhaseSummary> {
        let its = self.iterations();
        let n_phases = its.last().map_or(0, |i| i.phase + 1);
        (0..n_phases)
            .filter_map(|p| {
                let r: Vec<f64> = its.iter().filter(|i| i.phase == p).map(|i| i.mean_reward).collect();
                (!r.is_empty()).then(|| PhaseSummary {
                    phase: p,
                    iterations: r.len(),
                    mean_reward: r.iter().sum::<f64>() / r.len() as f64,
                })
            })
            .collect()
    }

    /// Mean reward over the last `fraction` of a phase's steps.
    pub fn steady_state_reward(&self, phase: usize, fraction: f64) -> Option<f64> {
        let r: Vec<f64> = self.trace.phase_rows(phase).map(|r| r.reward).collect();
        let n = ((r.len() as f64 * fraction).ceil() as usize).min(r.len());
        (n > 0).then(|| r[r.len() - n..].iter().sum::<f64>() / n as f64)
    }

    fn validation_rows(&self) -> Vec<usize> {
        let idx: Vec<usize> = (0..self.trace.rows.len()).filter(|&i| self.trace.rows[i].phase > 0).collect();
        if idx.is_empty() {
            (0..self.trace.rows.len()).collect()
        } else {
            idx
        }
    }

    /// Mean KPIs and reward over the validation phases (phase 0 alone when
    /// the schedule has no validation phase).
    pub fn validation_summary(&self) -> (KpiSnapshot, f64) {
        let idx = self.validation_rows();
        let kpi = KpiSnapshot::mean(idx.iter().map(|&i| &self.step_kpis[i])).unwrap_or_else(KpiSnapshot::worst);
        let reward = idx.iter().map(|&i| self.trace.rows[i].reward).sum::<f64>() / idx.len().max(1) as f64;
        (kpi, reward)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table3Row {
    /// Variant name, or "optimal" for the oracle argmax.
    pub label: String,
    pub load: LoadMode,
    pub kpi: KpiSnapshot,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub bounds: NormalizationBounds,
    pub runs: Vec<RunResult>,
    /// Oracle sweeps for every phase of every load that was run.
    pub oracles: Vec<SweepResult>,
}

impl Experiment {
    pub fn oracle(&self, load: LoadMode, phase: usize) -> Option<&SweepResult> {
        self.oracles.iter().find(|s| s.load == load && s.phase == phase)
    }

    pub fn run(&self, variant: Variant, load: LoadMode) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.variant == variant && r.load == load)
    }

    /// Oracle argmax KPIs and reward averaged over the validation phases.
    pub fn optimal(&self, load: LoadMode) -> Option<Table3Row> {
        let mut sweeps: Vec<&SweepResult> = self.oracles.iter().filter(|s| s.load == load && s.phase > 0).collect();
        if sweeps.is_empty() {
            sweeps = self.oracles.iter().filter(|s| s.load == load).collect();
        }
        let kpi = KpiSnapshot::mean(sweeps.iter().map(|s| &s.best().scored.kpi))?;
        let reward = sweeps.iter().map(|s| s.max_reward()).sum::<f64>() / sweeps.len() as f64;
        Some(Table3Row { label: "optimal".into(), load, kpi, reward })
    }

    pub fn table3(&self) -> Vec<Table3Row> {
        let mut loads: Vec<LoadMode> = Vec::new();
        for r in &self.runs {
            if !loads.contains(&r.load) {
                loads.push(r.load);
            }
        }
        let mut out = Vec::new();
        for load in loads {
            out.extend(self.optimal(load));
            for r in self.runs.iter().filter(|r| r.load == load) {
                let (kpi, reward) = r.validation_summary();
                out.push(Table3Row { label: r.variant.name().into(), load, kpi, reward });
            }
        }
        out
    }

    pub fn write_steps_csv<W: Write>(&self, w: W) -> Result<()> {
        let header = [
            "variant",
            "load",
            "step",
            "iteration",
            "phase",
            "tilt_idx",
            "x_idx",
            "y_idx",
            "z_idx",
            "action",
            "next_tilt_idx",
            "next_x_idx",
            "next_y_idx",
            "next_z_idx",
            "reward",
            "epsilon",
            "explored",
            "grouped",
            "ae_event",
            "loss",
        ];
        let rows = self.runs.iter().flat_map(|run| {
            run.trace.rows.iter().map(move |r| {
                vec![
                    run.variant.name().to_string(),
                    run.load.name().to_string(),
                    r.step.to_string(),
                    r.iteration.to_string(),
                    r.phase.to_string(),
                    r.state.tilt_idx.to_string(),
                    r.state.x_idx.to_string(),
                    r.state.y_idx.to_string(),
                    r.state.z_idx.to_string(),
                    r.action.0.to_string(),
                    r.next_state.tilt_idx.to_string(),
                    r.next_state.x_idx.to_string(),
                    r.next_state.y_idx.to_string(),
                    r.next_state.z_idx.to_string(),
                    r.reward.to_string(),
                    r.epsilon.to_string(),
                    r.explored.to_string(),
                    r.grouped.to_string(),
                    r.ae_event.map_or(String::new(), |e| e.name().to_string()),
                    r.loss.to_string(),
                ]
            })
        });
        write_csv(w, "steps", &header, rows)
    }

    pub fn write_iterations_csv<W: Write>(&self, w: W) -> Result<()> {
        let header =
            ["variant", "load", "phase", "iteration", "first_step", "mean_reward", "final_reward", "final_epsilon"];
        let rows = self.runs.iter().flat_map(|run| {
            run.iterations().into_iter().map(move |i| {
                vec![
                    run.variant.name().to_string(),
                    run.load.name().to_string(),
                    i.phase.to_string(),
                    i.iteration.to_string(),
                    i.first_step.to_string(),
                    i.mean_reward.to_string(),
                    i.final_reward.to_string(),
                    i.final_epsilon.to_string(),
                ]
            })
        });
        write_csv(w, "iterations", &header, rows)
    }

    pub fn write_phases_csv<W: Write>(&self, w: W) -> Result<()> {
        let header = ["variant", "load", "phase", "iterations", "mean_reward", "oracle_max_reward"];
        let rows = self.runs.iter().flat_map(|run| {
            run.phases().into_iter().map(move |p| {
                let oracle = self.oracle(run.load, p.phase).map_or(String::new(), |s| s.max_reward().to_string());
                vec![
                    run.variant.name().to_string(),
                    run.load.name().to_string(),
                    p.phase.to_string(),
                    p.iterations.to_string(),
                    p.mean_reward.to_string(),
                    oracle,
                ]
            })
        });
        write_csv(w, "phases", &header, rows)
    }

    pub fn write_table3_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut header = vec!["row", "load"];
        header.extend(KpiSnapshot::COLUMNS);
        header.push("reward");
        let rows = self.table3().into_iter().map(|t| {
            let mut rec = vec![t.label, t.load.name().to_string()];
            rec.extend(t.kpi.values().iter().map(f64::to_string));
            rec.push(t.reward.to_string());
            rec
        });
        write_csv(w, "table3", &header, rows)
    }

    /// Writes steps, iterations, phases and table3 CSVs into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let files = [
            ("steps.csv", Self::write_steps_csv as fn(&Self, fs::File) -> Result<()>),
            ("iterations.csv", Self::write_iterations_csv),
            ("phases.csv", Self::write_phases_csv),
            ("table3.csv", Self::write_table3_csv),
        ];
        let mut out = Vec::new();
        for (name, write) in files {
            let path = dir.join(name);
            write(self, fs::File::create(&path)?)?;
            out.push(path);
        }
        Ok(out)
    }
}

/// Trains each requested variant under each requested load on a shared
/// evaluator, then sweeps every phase for the oracle rows.
pub fn run_experiment(cfg: &RunConfig, variants: &[Variant], loads: &[LoadMode]) -> Result<Experiment> {
    cfg.validate()?;
    let ev = cfg.evaluator()?;
    let bounds = resolve_bounds(cfg, &ev)?;
    run_experiment_with(&ev, &cfg.agent, cfg.seed, &bounds, variants, loads)
}

/// As [`run_experiment`], on an existing evaluator and fixed bounds.
pub fn run_experiment_with(
    ev: &Arc<Evaluator>,
    hp: &AgentHyperparams,
    seed: u64,
    bounds: &NormalizationBounds,
    variants: &[Variant],
    loads: &[LoadMode],
) -> Result<Experiment> {
    let mut runs = Vec::new();
    for &load in loads {
        for &variant in variants {
            let mut env = Env::new(ev.clone(), load, *bounds.for_load(load))?;
            let trace = run_training(&mut env, hp, variant, seed)?;
            let step_kpis = trace
                .rows
                .iter()
                .map(|r| Ok(ev.evaluate(r.phase, load, &r.next_state)?.kpi))
                .collect::<Result<Vec<_>>>()?;
            runs.push(RunResult { variant, load, trace, step_kpis });
        }
    }
    let mut oracles = Vec::new();
    for &load in loads {
        for phase in 0..ev.cfg().schedule.n_phases {
            oracles.push(oracle_sweep(ev, bounds.for_load(load), phase, load)?);
        }
    }
    Ok(Experiment { bounds: *bounds, runs, oracles })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltRow {
    pub load: LoadMode,
    pub z_m: f64,
    pub tilt_deg: f64,
    pub scored: Scored,
    pub backhaul_dl_bps: f64,
    pub backhaul_ul_bps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionRow {
    pub load: LoadMode,
    pub x_m: f64,
    pub y_m: f64,
    pub scored: Scored,
    pub backhaul_dl_bps: f64,
    pub backhaul_ul_bps: f64,
}

fn evaluate_poses(
    ev: &Evaluator,
    bounds: &NormalizationBounds,
    poses: &[(LoadMode, UavPose)],
) -> Result<Vec<(Scored, f64, f64)>> {
    let world = ev.world(0)?;
    poses
        .par_iter()
        .map(|&(load, pose)| {
            let e = evaluate_pose(&world, ev.cfg(), Some(pose), load, ev.seed())?;
            let s = score(&e, bounds.for_load(load), &ev.cfg().weights)?;
            Ok((s, e.backhaul.map_or(0.0, |b| b.dl_bps), e.backhaul.map_or(0.0, |b| b.ul_bps)))
        })
        .collect()
}

/// Every tilt of the full candidate grid at the MC center, at the lowest and
/// highest candidate heights, for both loads. Phase 0.
pub fn tilt_sweep(ev: &Evaluator, bounds: &NormalizationBounds) -> Result<Vec<TiltRow>> {
    let table = CandidateGrids::default();
    let heights = [table.z_m[0], table.z_m[table.z_m.len() - 1]];
    let mut keys = Vec::new();
    for load in LoadMode::ALL {
        for &z in &heights {
            for &tilt in &table.tilt_deg {
                keys.push((load, z, tilt));
            }
        }
    }
    let poses: Vec<_> = keys
        .iter()
        .map(|&(load, z, tilt)| (load, UavPose { position: Position3D::new(0.0, 0.0, z), tilt_deg: tilt }))
        .collect();
    let results = evaluate_poses(ev, bounds, &poses)?;
    Ok(keys
        .into_iter()
        .zip(results)
        .map(|((load, z_m, tilt_deg), (scored, dl, ul))| TiltRow {
            load,
            z_m,
            tilt_deg,
            scored,
            backhaul_dl_bps: dl,
            backhaul_ul_bps: ul,
        })
        .collect())
}

/// The 5x5 horizontal grid at tilt 0 and the lowest candidate height, both loads. Phase 0.
pub fn position_sweep(ev: &Evaluator, bounds: &NormalizationBounds) -> Result<Vec<PositionRow>> {
    let table = CandidateGrids::default();
    let z = table.z_m[0];
    let mut keys = Vec::new();
    for load in LoadMode::ALL {
        for &y in &table.y_m {
            for &x in &table.x_m {
                keys.push((load, x, y));
            }
        }
    }
    let poses: Vec<_> = keys
        .iter()
        .map(|&(load, x, y)| (load, UavPose { position: Position3D::new(x, y, z), tilt_deg: 0.0 }))
        .collect();
    let results = evaluate_poses(ev, bounds, &poses)?;
    Ok(keys
        .into_iter()
        .zip(results)
        .map(|((load, x_m, y_m), (scored, dl, ul))| PositionRow {
            load,
            x_m,
            y_m,
            scored,
            backhaul_dl_bps: dl,
            backhaul_ul_bps: ul,
        })
        .collect())
}

pub fn write_tilt_csv<W: Write>(rows: &[TiltRow], w: W) -> Result<()> {
    let mut header = vec!["load", "z_m", "tilt_deg"];
    header.extend(KpiSnapshot::COLUMNS);
    header.extend(["reward", "backhaul_dl_bps", "backhaul_ul_bps"]);
    let recs = rows.iter().map(|r| {
        let mut rec = vec![r.load.name().to_string(), r.z_m.to_string(), r.tilt_deg.to_string()];
        rec.extend(r.scored.kpi.values().iter().map(f64::to_string));
        rec.extend([r.scored.reward.to_string(), r.backhaul_dl_bps.to_string(), r.backhaul_ul_bps.to_string()]);
        rec
    });
    write_csv(w, "tilt", &header, recs)
}

pub fn write_position_csv<W: Write>(rows: &[PositionRow], w: W) -> Result<()> {
    let mut header = vec!["load", "x_m", "y_m"];
    header.extend(KpiSnapshot::COLUMNS);
    header.extend(["reward", "backhaul_dl_bps", "backhaul_ul_bps"]);
    let recs = rows.iter().map(|r| {
        let mut rec = vec![r.load.name().to_string(), r.x_m.to_string(), r.y_m.to_string()];
        rec.extend(r.scored.kpi.values().iter().map(f64::to_string));
        rec.extend([r.scored.reward.to_string(), r.backhaul_dl_bps.to_string(), r.backhaul_ul_bps.to_string()]);
        rec
    });
    write_csv(w, "position", &header, recs)
}

/// The comment line that opens a CSV file of the given schema.
pub fn schema_line(schema: &str) -> String {
    format!("# uavbs {schema} schema v{SCHEMA_VERSION}")
}

fn write_csv<W: Write, H: AsRef<[u8]>>(
    mut w: W,
    schema: &str,
    header: &[H],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    writeln!(w, "{}", schema_line(schema))?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.write_record(&r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::for_profile(Profile::Fast);
        cfg.env.network.n_users = 40;
        cfg.env.traffic.sim_time_s = 0.04;
        cfg.env.schedule.n_phases = 2;
        cfg.agent.training_iterations = 2;
        cfg.agent.validation_iterations = 2;
        cfg.agent.steps_per_iteration = 5;
        cfg
    }

    #[test]
    fn blank_config_is_default() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
        assert_eq!(parse_config("  \n").unwrap(), RunConfig::default());
        assert_eq!(parse_config("{}").unwrap(), RunConfig::default());
        let d = RunConfig::default();
        assert_eq!(d.env.network.carrier_ghz, 3.5);
        assert_eq!(d.env.network.n_users, 500);
        assert_eq!(d.env.traffic.arrival_rate_light, 270.0);
        assert_eq!(d.env.traffic.arrival_rate_heavy, 540.0);
        assert_eq!(d.env.traffic.sim_time_s, 2.0);
        assert_eq!(d.env.grids.n_states(), 700);
    }

    #[test]
    fn negative_arrival_rate_is_rejected() {
        let err = parse_config(r#"{"env": {"traffic": {"arrival_rate_light": -1}}}"#).unwrap_err();
        match err {
            Error::Config(items) => assert!(items.iter().any(|i| i.contains("arrival_rate_light")), "{items:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse_config(r#"{"sed": 3}"#), Err(Error::Config(_))));
        assert!(matches!(parse_config(r#"{"env": {"network": {"isd": 3}}}"#), Err(Error::Config(_))));
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let mut cfg = RunConfig::for_profile(Profile::Fast);
        cfg.seed = 77;
        cfg.load = LoadMode::Heavy;
        cfg.variant = Variant::Baseline;
        cfg.agent.gamma = 0.9;
        save_config(&cfg, &path).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax([0.1, 0.5, 0.5, 0.2]), Some(1));
        assert_eq!(argmax(std::iter::empty()), None);
    }

    #[test]
    fn miniature_sweep_argmax_is_order_independent() {
        let cfg = tiny();
        let ev = cfg.evaluator().unwrap();
        let bounds = derive_bounds(&ev).unwrap();
        let sweep = oracle_sweep(&ev, &bounds.light, 0, LoadMode::Light).unwrap();
        assert_eq!(sweep.rows.len(), 18);
        assert!(sweep.rows.iter().all(|r| r.scored.reward <= sweep.max_reward()));

        // Fresh world, states evaluated one at a time in shuffled order.
        let grids = &cfg.env.grids;
        let world = cfg.evaluator().unwrap().world(0).unwrap();
        let mut order: Vec<usize> = (0..grids.n_states()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(5));
        let mut rewards = vec![f64::NAN; order.len()];
        for i in order {
            let e =
                crate::rlenv::evaluate_state(&world, &cfg.env, &grids.state_at(i), LoadMode::Light, cfg.seed).unwrap();
            rewards[i] = score(&e, &bounds.light, &cfg.env.weights).unwrap().reward;
        }
        assert_eq!(argmax(rewards.iter().copied()), Some(sweep.argmax));
    }

    #[test]
    fn phase_average_is_mean_of_iterations() {
        let cfg = tiny();
        let exp = run_experiment(&cfg, &[Variant::AeVas], &[LoadMode::Light]).unwrap();
        let run = &exp.runs[0];
        let its = run.iterations();
        assert_eq!(its.len(), 4);
        for p in run.phases() {
            let r: Vec<f64> = its.iter().filter(|i| i.phase == p.phase).map(|i| i.mean_reward).collect();
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            assert!((p.mean_reward - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn csv_starts_with_schema_line() {
        let mut buf = Vec::new();
        write_csv(&mut buf, "demo", &["a", "b"], [vec!["1".to_string(), "x,y".to_string()]]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "# uavbs demo schema v1\na,b\n1,\"x,y\"\n");
    }
}
