//! KPI extraction, min-max normalization and the scalar reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::UserTerminal;
use crate::traffic::{user_throughput, Direction, LoadMode, TransferRecord};

/// The six MC-user features. Throughputs in bps, drops as fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiSnapshot {
    pub dl_tp_50: f64,
    pub dl_tp_5: f64,
    pub ul_tp_50: f64,
    pub ul_tp_5: f64,
    pub dl_drop: f64,
    pub ul_drop: f64,
}

impl KpiSnapshot {
    pub const COLUMNS: [&'static str; 6] = ["dl_tp_50", "dl_tp_5", "ul_tp_50", "ul_tp_5", "dl_drop", "ul_drop"];

    /// Every feature at its worst value.
    pub fn worst() -> Self {
        Self { dl_tp_50: 0.0, dl_tp_5: 0.0, ul_tp_50: 0.0, ul_tp_5: 0.0, dl_drop: 1.0, ul_drop: 1.0 }
    }

    pub fn values(&self) -> [f64; 6] {
        [self.dl_tp_50, self.dl_tp_5, self.ul_tp_50, self.ul_tp_5, self.dl_drop, self.ul_drop]
    }

    pub fn from_values(v: [f64; 6]) -> Self {
        Self { dl_tp_50: v[0], dl_tp_5: v[1], ul_tp_50: v[2], ul_tp_5: v[3], dl_drop: v[4], ul_drop: v[5] }
    }

    /// Component-wise mean.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a KpiSnapshot>) -> Option<Self> {
        let mut acc = [0.0; 6];
        let mut n = 0usize;
        for k in items {
            for (a, v) in acc.iter_mut().zip(k.values()) {
                *a += v;
            }
            n += 1;
        }
        (n > 0).then(|| Self::from_values(acc.map(|a| a / n as f64)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { w1: 0.5, w2: 0.3, w3: 0.2 }
    }
}

impl RewardWeights {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if [self.w1, self.w2, self.w3].iter().any(|w| !(*w >= 0.0)) {
            errors.push("reward weights must be non-negative".into());
        }
        if (self.w1 + self.w2 + self.w3 - 1.0).abs() > 1e-9 {
            errors.push(format!("reward weights must sum to 1 (got {})", self.w1 + self.w2 + self.w3));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureBounds {
    pub min: f64,
    pub max: f64,
}

impl FeatureBounds {
    fn scale(&self, x: f64) -> f64 {
        ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

/// Bounds for the four throughput features of one load mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThroughputBounds {
    pub dl_tp_50: FeatureBounds,
    pub dl_tp_5: FeatureBounds,
    pub ul_tp_50: FeatureBounds,
    pub ul_tp_5: FeatureBounds,
}

impl ThroughputBounds {
    /// Zero to the largest observed value of each feature. A feature that is
    /// never positive keeps a 1 bps span so the bounds stay valid.
    pub fn from_observed<'a>(kpis: impl IntoIterator<Item = &'a KpiSnapshot>) -> Self {
        let mut max = [0.0f64; 4];
        for k in kpis {
            let v = k.values();
            for i in 0..4 {
                max[i] = max[i].max(v[i]);
            }
        }
        let fb = |m: f64| FeatureBounds { min: 0.0, max: if m > 0.0 { m } else { 1.0 } };
        Self { dl_tp_50: fb(max[0]), dl_tp_5: fb(max[1]), ul_tp_50: fb(max[2]), ul_tp_5: fb(max[3]) }
    }

    fn all(&self) -> [(&'static str, FeatureBounds); 4] {
        [("dl_tp_50", self.dl_tp_50), ("dl_tp_5", self.dl_tp_5), ("ul_tp_50", self.ul_tp_50), ("ul_tp_5", self.ul_tp_5)]
    }

    pub fn validate(&self, prefix: &str, errors: &mut Vec<String>) {
        for (name, b) in self.all() {
            if !(b.min.is_finite() && b.max.is_finite() && b.max > b.min) {
                errors.push(format!("{prefix}.{name}: max must exceed min (got {} / {})", b.min, b.max));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationBounds {
    pub light: ThroughputBounds,
    pub heavy: ThroughputBounds,
}

impl NormalizationBounds {
    pub fn for_load(&self, load: LoadMode) -> &ThroughputBounds {
        match load {
            LoadMode::Light => &self.light,
            LoadMode::Heavy => &self.heavy,
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        self.light.validate("bounds.light", errors);
        self.heavy.validate("bounds.heavy", errors);
    }
}

/// Nearest-rank percentile: element `ceil(p * n) - 1` of the sorted values.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::NoServedMcUsers);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Invalid(format!("percentile rank {p} outside (0, 1)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

/// KPIs over the MC users' transfers. Each activation counts once toward the
/// drop rate of its direction; non-dropped activations contribute one
/// throughput sample. A direction without served samples scores zero throughput.
pub fn kpi_snapshot(records: &[TransferRecord], users: &[UserTerminal], sim_end_s: f64) -> Result<KpiSnapshot> {
    let mut activated = [0usize; 2];
    let mut dropped = [0usize; 2];
    let mut tps: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for r in records.iter().filter(|r| users[r.user].is_mc) {
        let d = r.direction.index();
        activated[d] += 1;
        if r.is_dropped() {
            dropped[d] += 1;
        } else {
            tps[d].push(user_throughput(r, sim_end_s)?);
        }
    }
    if activated.contains(&0) {
        return Err(Error::EmptyMcSample);
    }
    let pct = |d: Direction, p: f64| match percentile(&tps[d.index()], p) {
        Err(Error::NoServedMcUsers) => Ok(0.0),
        other => other,
    };
    Ok(KpiSnapshot {
        dl_tp_50: pct(Direction::DL, 0.5)?,
        dl_tp_5: pct(Direction::DL, 0.05)?,
        ul_tp_50: pct(Direction::UL, 0.5)?,
        ul_tp_5: pct(Direction::UL, 0.05)?,
        dl_drop: dropped[0] as f64 / activated[0] as f64,
        ul_drop: dropped[1] as f64 / activated[1] as f64,
    })
}

/// Min-max scales the throughputs into [0, 1]. Drop rates pass through.
pub fn normalize(kpi: &KpiSnapshot, bounds: &ThroughputBounds) -> KpiSnapshot {
    KpiSnapshot {
        dl_tp_50: bounds.dl_tp_50.scale(kpi.dl_tp_50),
        dl_tp_5: bounds.dl_tp_5.scale(kpi.dl_tp_5),
        ul_tp_50: bounds.ul_tp_50.scale(kpi.ul_tp_50),
        ul_tp_5: bounds.ul_tp_5.scale(kpi.ul_tp_5),
        ..*kpi
    }
}

pub fn reward(norm: &KpiSnapshot, w: &RewardWeights) -> Result<f64> {
    for (name, value) in KpiSnapshot::COLUMNS.iter().zip(norm.values()) {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::UnnormalizedInput { name, value });
        }
    }
    Ok(w.w1 * ((1.0 - norm.dl_drop) + (1.0 - norm.ul_drop)) / 2.0
        + w.w2 * (norm.ul_tp_5 + norm.dl_tp_5) / 2.0
        + w.w3 * (norm.ul_tp_50 + norm.dl_tp_50) / 2.0)
}
