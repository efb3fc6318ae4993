//! The radio network around the coverage hole: macro sites on a hexagonal
//! ring, the UAV node with three access sectors and one backhaul antenna,
//! donor selection, per-slot SINR and user association.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{self, gain_towards, geometry, los_probability, AntennaConfig, PathlossModel, Position3D};
use crate::error::{Error, Result};
use crate::rng::{self, Stream, ANY_PHASE};

pub const N_SITES: usize = 7;
pub const CENTER_SITE: usize = 0;
pub const UAV_SECTORS: usize = 3;

/// The four IAB/TDD interference cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotType {
    DL1,
    DL2,
    UL1,
    UL2,
}

impl SlotType {
    pub const ALL: [SlotType; 4] = [SlotType::DL1, SlotType::DL2, SlotType::UL1, SlotType::UL2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_downlink(self) -> bool {
        matches!(self, SlotType::DL1 | SlotType::DL2)
    }

    /// Slots in which the UAV relays over its backhaul.
    pub fn carries_backhaul(self) -> bool {
        matches!(self, SlotType::DL1 | SlotType::UL1)
    }

    /// Slots in which the UAV serves its access sectors.
    pub fn carries_uav_access(self) -> bool {
        !self.carries_backhaul()
    }

    pub fn name(self) -> &'static str {
        match self {
            SlotType::DL1 => "DL1",
            SlotType::DL2 => "DL2",
            SlotType::UL1 => "UL1",
            SlotType::UL2 => "UL2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub carrier_ghz: f64,
    pub bandwidth_hz: f64,
    pub isd_m: f64,
    pub sectors_per_site: usize,
    pub mc_radius_m: f64,
    pub n_users: usize,
    /// Site transmit power, split evenly across the site's sectors.
    pub macro_power_dbm: f64,
    pub uav_power_dbm: f64,
    pub ue_power_dbm: f64,
    pub macro_height_m: f64,
    pub ue_height_m: f64,
    pub macro_antenna: AntennaConfig,
    pub uav_antenna: AntennaConfig,
    pub pathloss: PathlossModel,
    pub shadow_sigma_los_db: f64,
    pub shadow_sigma_nlos_db: f64,
    pub noise_density_dbm_hz: f64,
    pub noise_figure_db: f64,
    /// Spectral-efficiency ceiling in bps/Hz.
    pub se_cap: f64,
    pub drop_threshold_db: f64,
    pub association_max_iters: usize,
    /// Users are dropped in a disc of this radius around the destroyed site.
    pub area_radius_m: f64,
    /// Share of users that belong to the MC-area population.
    pub mc_user_fraction: f64,
    /// Share of the MC-area population that moves as a cluster.
    pub cluster_fraction: f64,
    pub cluster_sigma_m: f64,
    /// 8-slot super-period covering two DDUD periods.
    pub slot_pattern: Vec<SlotType>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            carrier_ghz: 3.5,
            bandwidth_hz: 100e6,
            isd_m: 750.0,
            sectors_per_site: 3,
            mc_radius_m: 350.0,
            n_users: 500,
            macro_power_dbm: 46.0,
            uav_power_dbm: 40.0,
            ue_power_dbm: 23.0,
            macro_height_m: 25.0,
            ue_height_m: 1.5,
            macro_antenna: AntennaConfig {
                bearing_deg: 0.0,
                electrical_tilt_deg: 6.0,
                hpbw_az_deg: 65.0,
                hpbw_el_deg: 10.0,
                max_gain_dbi: 14.0,
                front_to_back_db: 30.0,
                sla_v_db: 30.0,
            },
            uav_antenna: AntennaConfig {
                bearing_deg: 0.0,
                electrical_tilt_deg: 0.0,
                hpbw_az_deg: 65.0,
                hpbw_el_deg: 10.0,
                max_gain_dbi: 8.0,
                front_to_back_db: 30.0,
                sla_v_db: 30.0,
            },
            pathloss: PathlossModel::default(),
            shadow_sigma_los_db: 4.0,
            shadow_sigma_nlos_db: 8.0,
            noise_density_dbm_hz: -174.0,
            noise_figure_db: 9.0,
            se_cap: 7.8,
            drop_threshold_db: -6.0,
            association_max_iters: 10,
            area_radius_m: 1125.0,
            mc_user_fraction: 0.4,
            cluster_fraction: 0.6,
            cluster_sigma_m: 80.0,
            slot_pattern: vec![
                SlotType::DL1,
                SlotType::DL2,
                SlotType::UL1,
                SlotType::DL2,
                SlotType::DL2,
                SlotType::DL1,
                SlotType::UL2,
                SlotType::DL1,
            ],
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        let mut positive = |name: &str, v: f64| {
            if !(v.is_finite() && v > 0.0) {
                errors.push(format!("network.{name} must be positive and finite (got {v})"));
            }
        };
        positive("carrier_ghz", self.carrier_ghz);
        positive("bandwidth_hz", self.bandwidth_hz);
        positive("isd_m", self.isd_m);
        positive("mc_radius_m", self.mc_radius_m);
        positive("area_radius_m", self.area_radius_m);
        positive("ue_height_m", self.ue_height_m);
        positive("macro_height_m", self.macro_height_m);
        positive("se_cap", self.se_cap);
        positive("cluster_sigma_m", self.cluster_sigma_m);
        for (name, a) in [("macro_antenna", &self.macro_antenna), ("uav_antenna", &self.uav_antenna)] {
            if !(a.hpbw_az_deg > 0.0 && a.hpbw_el_deg > 0.0) {
                errors.push(format!("network.{name} beamwidths must be positive"));
            }
        }
        if self.sectors_per_site != 3 {
            errors.push(format!("network.sectors_per_site must be 3 (got {})", self.sectors_per_site));
        }
        if self.n_users == 0 {
            errors.push("network.n_users must be at least 1".into());
        }
        for (name, v) in [("mc_user_fraction", self.mc_user_fraction), ("cluster_fraction", self.cluster_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                errors.push(format!("network.{name} must lie in [0, 1] (got {v})"));
            }
        }
        if self.association_max_iters == 0 {
            errors.push("network.association_max_iters must be at least 1".into());
        }
        if self.slot_pattern.is_empty() {
            errors.push("network.slot_pattern must not be empty".into());
        }
        for t in SlotType::ALL {
            if !self.slot_pattern.contains(&t) {
                errors.push(format!("network.slot_pattern never schedules {}", t.name()));
            }
        }
    }

    pub fn n_macro_cells(&self) -> usize {
        N_SITES * self.sectors_per_site
    }

    pub fn n_cells(&self) -> usize {
        self.n_macro_cells() + UAV_SECTORS
    }

    pub fn macro_sector_power_dbm(&self) -> f64 {
        self.macro_power_dbm - 10.0 * (self.sectors_per_site as f64).log10()
    }

    pub fn uav_sector_power_dbm(&self) -> f64 {
        self.uav_power_dbm - 10.0 * (UAV_SECTORS as f64).log10()
    }

    pub fn noise_dbm(&self) -> f64 {
        self.noise_density_dbm_hz + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }

    /// Fraction of the super-period taken by slots of type `t`.
    pub fn duty(&self, t: SlotType) -> f64 {
        self.slot_pattern.iter().filter(|&&s| s == t).count() as f64 / self.slot_pattern.len() as f64
    }

    pub fn site_position(&self, site: usize) -> Position3D {
        if site == CENTER_SITE {
            return Position3D::new(0.0, 0.0, self.macro_height_m);
        }
        let bearing = ((site - 1) as f64 * 60.0).to_radians();
        Position3D::new(self.isd_m * bearing.sin(), self.isd_m * bearing.cos(), self.macro_height_m)
    }

    pub fn sector_bearing(&self, sector: usize) -> f64 {
        30.0 + 120.0 * sector as f64
    }
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// SINR from a wanted power and a set of interferers, all in dBm.
pub fn sinr_db(signal_dbm: f64, interferers_dbm: &[f64], noise_dbm: f64) -> f64 {
    let denom = db_to_lin(noise_dbm) + interferers_dbm.iter().map(|&i| db_to_lin(i)).sum::<f64>();
    signal_dbm - lin_to_db(denom)
}

/// Shannon rate capped at `se_cap` bps/Hz.
pub fn shannon_rate_bps(sinr_db: f64, bandwidth_hz: f64, se_cap: f64) -> f64 {
    let se = (1.0 + db_to_lin(sinr_db)).log2();
    bandwidth_hz * se.min(se_cap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: usize,
    pub position: Position3D,
    pub alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Macro { site: usize, sector: usize },
    Uav { sector: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserTerminal {
    pub id: usize,
    pub position: Position3D,
    pub is_mc: bool,
    pub clustered: bool,
}

/// Frozen per-link randomness: a uniform draw for the LOS decision and a
/// standard-normal draw for shadowing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenDraw {
    pub los_u: f64,
    pub shadow_z: f64,
}

impl FrozenDraw {
    pub const MEDIAN: FrozenDraw = FrozenDraw { los_u: 0.5, shadow_z: 0.0 };

    fn sample(rng: &mut impl Rng) -> Self {
        Self { los_u: rng.random::<f64>(), shadow_z: rng.sample(StandardNormal) }
    }

    pub fn los(&self, d2d: f64) -> bool {
        self.los_u < los_probability(d2d)
    }

    pub fn shadow_db(&self, los: bool, cfg: &NetworkConfig) -> f64 {
        let sigma = if los { cfg.shadow_sigma_los_db } else { cfg.shadow_sigma_nlos_db };
        sigma * self.shadow_z
    }
}

/// Where the MC cluster sits in a given phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePlacement {
    pub phase: usize,
    pub cluster_center: (f64, f64),
}

/// Everything about one phase that does not depend on the UAV: sites,
/// users and the frozen channel between them.
#[derive(Debug, Clone)]
pub struct PhaseWorld {
    pub cfg: NetworkConfig,
    pub seed: u64,
    pub phase: usize,
    pub sites: Vec<Site>,
    pub users: Vec<UserTerminal>,
    macro_antennas: Vec<AntennaConfig>,
    /// dB, indexed `user * n_macro + cell`.
    macro_gain: Vec<f64>,
    uav_draws: Vec<FrozenDraw>,
    backhaul_draws: Vec<FrozenDraw>,
    /// Set when every draw is pinned to its median outcome.
    pub median_channel: bool,
}

fn uniform_in_disc(rng: &mut impl Rng, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let th = rng.random::<f64>() * std::f64::consts::TAU;
    (r * th.cos(), r * th.sin())
}

impl PhaseWorld {
    pub fn build(cfg: &NetworkConfig, seed: u64, placement: PhasePlacement, center_destroyed: bool) -> Result<Self> {
        let mut errors = Vec::new();
        cfg.validate(&mut errors);
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let phase = placement.phase as u64;
        let n = cfg.n_users;
        let n_mc_pop = (cfg.mc_user_fraction * n as f64).round() as usize;
        let n_cluster = (cfg.cluster_fraction * n_mc_pop as f64).round() as usize;
        let n_disc = n_mc_pop - n_cluster;

        let mut positions = Vec::with_capacity(n);
        let mut offsets = rng::stream(seed, ANY_PHASE, Stream::ClusterOffsets);
        let (cx, cy) = placement.cluster_center;
        for _ in 0..n_cluster {
            let dx: f64 = offsets.sample::<f64, _>(StandardNormal) * cfg.cluster_sigma_m;
            let dy: f64 = offsets.sample::<f64, _>(StandardNormal) * cfg.cluster_sigma_m;
            positions.push((cx + dx, cy + dy, true));
        }
        let mut disc = rng::stream(seed, phase, Stream::DiscUsers);
        for _ in 0..n_disc {
            let (x, y) = uniform_in_disc(&mut disc, cfg.mc_radius_m);
            positions.push((x, y, false));
        }
        let mut normal = rng::stream(seed, phase, Stream::NormalUsers);
        for _ in n_mc_pop..n {
            let (x, y) = uniform_in_disc(&mut normal, cfg.area_radius_m);
            positions.push((x, y, false));
        }
        Ok(Self::from_positions(cfg, seed, placement.phase, &positions, center_destroyed))
    }

    /// Builds a world with explicit user positions `(x, y, clustered)`.
    pub fn from_positions(
        cfg: &NetworkConfig,
        seed: u64,
        phase: usize,
        positions: &[(f64, f64, bool)],
        center_destroyed: bool,
    ) -> Self {
        let sites: Vec<Site> = (0..N_SITES)
            .map(|id| Site { id, position: cfg.site_position(id), alive: !(center_destroyed && id == CENTER_SITE) })
            .collect();
        let users: Vec<UserTerminal> = positions
            .iter()
            .enumerate()
            .map(|(id, &(x, y, clustered))| UserTerminal {
                id,
                position: Position3D::new(x, y, cfg.ue_height_m),
                is_mc: x.hypot(y) <= cfg.mc_radius_m,
                clustered,
            })
            .collect();
        let macro_antennas: Vec<AntennaConfig> = (0..cfg.n_macro_cells())
            .map(|c| cfg.macro_antenna.with_bearing(cfg.sector_bearing(c % cfg.sectors_per_site)))
            .collect();

        let phase_key = phase as u64;
        let mut macro_rng = rng::stream(seed, phase_key, Stream::MacroChannel);
        let site_user_draws: Vec<FrozenDraw> =
            (0..N_SITES * users.len()).map(|_| FrozenDraw::sample(&mut macro_rng)).collect();
        let mut uav_rng = rng::stream(seed, phase_key, Stream::UavChannel);
        let uav_draws = (0..users.len()).map(|_| FrozenDraw::sample(&mut uav_rng)).collect();
        let mut bh_rng = rng::stream(seed, phase_key, Stream::BackhaulChannel);
        let backhaul_draws = (0..N_SITES).map(|_| FrozenDraw::sample(&mut bh_rng)).collect();

        let mut world = Self {
            cfg: cfg.clone(),
            seed,
            phase,
            sites,
            users,
            macro_antennas,
            macro_gain: Vec::new(),
            uav_draws,
            backhaul_draws,
            median_channel: false,
        };
        world.macro_gain = world.compute_macro_gains(&site_user_draws);
        world
    }

    /// Replaces every frozen draw by its median outcome: zero shadowing, and
    /// LOS exactly when the LOS probability is at least one half.
    pub fn median_channel(mut self) -> Self {
        self.median_channel = true;
        let median = FrozenDraw::MEDIAN;
        let draws = vec![median; N_SITES * self.users.len()];
        self.uav_draws.iter_mut().for_each(|d| *d = median);
        self.backhaul_draws.iter_mut().for_each(|d| *d = median);
        self.macro_gain = self.compute_macro_gains(&draws);
        self
    }

    fn compute_macro_gains(&self, draws: &[FrozenDraw]) -> Vec<f64> {
        let cfg = &self.cfg;
        let n_macro = cfg.n_macro_cells();
        let iso = AntennaConfig::isotropic();
        let mut out = vec![f64::NEG_INFINITY; self.users.len() * n_macro];
        for (u, user) in self.users.iter().enumerate() {
            for site in &self.sites {
                let g = geometry(&site.position, &user.position).expect("users never coincide with a site mast");
                let draw = &draws[site.id * self.users.len() + u];
                let los = draw.los(g.d2d);
                let shadow = self.shadow(draw, los);
                for s in 0..cfg.sectors_per_site {
                    let c = site.id * cfg.sectors_per_site + s;
                    out[u * n_macro + c] = channel::link_gain_db(
                        &cfg.pathloss,
                        &self.macro_antennas[c],
                        &iso,
                        &g,
                        los,
                        shadow,
                        cfg.carrier_ghz,
                    );
                }
            }
        }
        out
    }

    fn shadow(&self, draw: &FrozenDraw, los: bool) -> f64 {
        draw.shadow_db(los, &self.cfg)
    }

    pub fn n_macro_cells(&self) -> usize {
        self.cfg.n_macro_cells()
    }

    pub fn macro_gain_db(&self, user: usize, cell: usize) -> f64 {
        self.macro_gain[user * self.n_macro_cells() + cell]
    }

    pub fn macro_antenna(&self, cell: usize) -> &AntennaConfig {
        &self.macro_antennas[cell]
    }

    pub fn cell_site(&self, cell: usize) -> usize {
        cell / self.cfg.sectors_per_site
    }

    pub fn cell_alive(&self, cell: usize) -> bool {
        cell >= self.n_macro_cells() || self.sites[self.cell_site(cell)].alive
    }

    pub fn cell_kind(&self, cell: usize) -> CellKind {
        let n_macro = self.n_macro_cells();
        if cell < n_macro {
            CellKind::Macro { site: cell / self.cfg.sectors_per_site, sector: cell % self.cfg.sectors_per_site }
        } else {
            CellKind::Uav { sector: cell - n_macro }
        }
    }

    pub fn mc_count(&self) -> usize {
        self.users.iter().filter(|u| u.is_mc).count()
    }
}

/// Physical UAV configuration: position plus the tilt shared by all its antennas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavPose {
    pub position: Position3D,
    pub tilt_deg: f64,
}

#[derive(Debug, Clone)]
pub struct UavNode {
    pub pose: UavPose,
    pub access: [AntennaConfig; UAV_SECTORS],
    /// dB, per user per access sector.
    access_gain: Vec<[f64; UAV_SECTORS]>,
}

/// A phase world with (optionally) a UAV placed in it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub world: Arc<PhaseWorld>,
    pub uav: Option<UavNode>,
}

impl Scenario {
    pub fn new(world: Arc<PhaseWorld>, pose: Option<UavPose>) -> Result<Self> {
        let uav = match pose {
            None => None,
            Some(pose) => {
                if !pose.position.is_valid() {
                    return Err(Error::Invalid(format!("invalid UAV position {:?}", pose.position)));
                }
                let cfg = &world.cfg;
                let access = [0, 1, 2].map(|k| cfg.uav_antenna.with_bearing(120.0 * k as f64).with_tilt(pose.tilt_deg));
                let mut access_gain = Vec::with_capacity(world.users.len());
                for (u, user) in world.users.iter().enumerate() {
                    let g = geometry(&pose.position, &user.position)?;
                    let draw = &world.uav_draws[u];
                    let los = draw.los(g.d2d);
                    let shadow = world.shadow(draw, los);
                    let pl = cfg.pathloss.pathloss_db(&g, los, cfg.carrier_ghz);
                    access_gain.push(access.map(|a| gain_towards(&a, &g) - pl - shadow));
                }
                // user antennas are isotropic: no receive-side pattern term
                Some(UavNode { pose, access, access_gain })
            }
        };
        Ok(Self { world, uav })
    }

    pub fn cfg(&self) -> &NetworkConfig {
        &self.world.cfg
    }

    pub fn n_users(&self) -> usize {
        self.world.users.len()
    }

    pub fn uav_access_gain_db(&self, user: usize, sector: usize) -> Option<f64> {
        self.uav.as_ref().map(|u| u.access_gain[user][sector])
    }

    /// Backhaul link gain between macro cell `cell` and the UAV, with the UAV
    /// backhaul antenna steered in azimuth towards `steer_site`.
    pub fn backhaul_gain_db(&self, cell: usize, steer_site: usize) -> Result<f64> {
        let uav = self.uav.as_ref().ok_or(Error::NoDonor)?;
        let world = &self.world;
        let site = &world.sites[world.cell_site(cell)];
        let g = geometry(&site.position, &uav.pose.position)?;
        let steer = geometry(&uav.pose.position, &world.sites[steer_site].position)?;
        let bh_antenna = world.cfg.uav_antenna.with_bearing(steer.azimuth_deg).with_tilt(uav.pose.tilt_deg);
        let draw = &world.backhaul_draws[site.id];
        let los = draw.los(g.d2d);
        let shadow = world.shadow(draw, los);
        Ok(channel::link_gain_db(
            &world.cfg.pathloss,
            world.macro_antenna(cell),
            &bh_antenna,
            &g,
            los,
            shadow,
            world.cfg.carrier_ghz,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Donor {
    pub cell: usize,
    pub gain_db: f64,
}

/// Picks the alive macro sector with the strongest backhaul link gain;
/// ties go to the lowest sector id.
pub fn select_donor(scenario: &Scenario) -> Result<Donor> {
    let world = &scenario.world;
    let mut best: Option<Donor> = None;
    for cell in 0..world.n_macro_cells() {
        if !world.cell_alive(cell) {
            continue;
        }
        let gain_db = scenario.backhaul_gain_db(cell, world.cell_site(cell))?;
        if best.is_none_or(|b| gain_db > b.gain_db) {
            best = Some(Donor { cell, gain_db });
        }
    }
    best.ok_or(Error::NoDonor)
}

/// Argmax with lowest-index tie-break over `(id, score)` candidates.
pub fn pick_best<I: IntoIterator<Item = (usize, f64)>>(candidates: I) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (id, score) in candidates {
        match best {
            Some((bid, bs)) if score < bs || (score == bs && id > bid) => {}
            _ => best = Some((id, score)),
        }
    }
    best
}

/// A transmission whose SINR can be asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// Cell to user (downlink) or user to cell (uplink), chosen by the slot type.
    Access { cell: usize, user: usize },
    /// Donor to UAV in downlink slots, UAV to donor in uplink slots.
    Backhaul,
}

/// Who transmits in an uplink slot besides the link under test.
#[derive(Debug, Clone, Default)]
pub struct UplinkInterferers {
    /// One transmitting user per cell, or `None` for a silent cell.
    pub users: Vec<Option<usize>>,
    /// Whether the UAV backhaul transmitter is on.
    pub uav_backhaul: bool,
}

/// Linear-domain view of a scenario once the donor is fixed.
#[derive(Debug, Clone)]
pub struct RadioMap {
    pub scenario: Scenario,
    pub donor: Option<Donor>,
    n_macro: usize,
    n_cells: usize,
    noise_mw: f64,
    macro_tx_mw: f64,
    uav_tx_mw: f64,
    ue_tx_mw: f64,
    /// Linear gain per user per cell (macro then UAV sectors).
    gain: Vec<f64>,
    /// Linear backhaul gain per macro cell, UAV antenna steered at the donor.
    bh_gain: Vec<f64>,
    /// Which UAV access sectors transmit in DL2.
    pub uav_dl_active: [bool; UAV_SECTORS],
}

impl RadioMap {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let cfg = scenario.cfg().clone();
        let world = scenario.world.clone();
        let n_macro = cfg.n_macro_cells();
        let n_cells = cfg.n_cells();
        let n_users = world.users.len();
        let mut gain = vec![0.0; n_users * n_cells];
        for u in 0..n_users {
            for c in 0..n_macro {
                gain[u * n_cells + c] = if world.cell_alive(c) { db_to_lin(world.macro_gain_db(u, c)) } else { 0.0 };
            }
            for k in 0..UAV_SECTORS {
                gain[u * n_cells + n_macro + k] = scenario.uav_access_gain_db(u, k).map_or(0.0, db_to_lin);
            }
        }
        let (donor, bh_gain) = if scenario.uav.is_some() {
            let donor = select_donor(&scenario)?;
            let donor_site = world.cell_site(donor.cell);
            let mut bh = vec![0.0; n_macro];
            for (c, slot) in bh.iter_mut().enumerate() {
                if world.cell_alive(c) {
                    *slot = db_to_lin(scenario.backhaul_gain_db(c, donor_site)?);
                }
            }
            (Some(donor), bh)
        } else {
            (None, vec![0.0; n_macro])
        };
        let has_uav = scenario.uav.is_some();
        Ok(Self {
            scenario,
            donor,
            n_macro,
            n_cells,
            noise_mw: db_to_lin(cfg.noise_dbm()),
            macro_tx_mw: db_to_lin(cfg.macro_sector_power_dbm()),
            uav_tx_mw: db_to_lin(cfg.uav_sector_power_dbm()),
            ue_tx_mw: db_to_lin(cfg.ue_power_dbm),
            gain,
            bh_gain,
            uav_dl_active: [has_uav; UAV_SECTORS],
        })
    }

    pub fn cfg(&self) -> &NetworkConfig {
        self.scenario.cfg()
    }

    pub fn world(&self) -> &PhaseWorld {
        &self.scenario.world
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_macro(&self) -> usize {
        self.n_macro
    }

    pub fn n_users(&self) -> usize {
        self.scenario.n_users()
    }

    pub fn has_uav(&self) -> bool {
        self.scenario.uav.is_some()
    }

    pub fn is_uav_cell(&self, cell: usize) -> bool {
        cell >= self.n_macro
    }

    pub fn cell_available(&self, cell: usize) -> bool {
        if cell >= self.n_macro {
            self.has_uav() && cell < self.n_cells
        } else {
            self.world().cell_alive(cell)
        }
    }

    pub fn noise_mw(&self) -> f64 {
        self.noise_mw
    }

    fn tx_mw(&self, cell: usize) -> f64 {
        if cell < self.n_macro {
            self.macro_tx_mw
        } else {
            self.uav_tx_mw
        }
    }

    pub fn gain(&self, user: usize, cell: usize) -> f64 {
        self.gain[user * self.n_cells + cell]
    }

    pub fn backhaul_gain(&self, cell: usize) -> f64 {
        self.bh_gain[cell]
    }

    fn cell_transmits_dl(&self, cell: usize, slot: SlotType) -> bool {
        if cell < self.n_macro {
            self.world().cell_alive(cell)
        } else {
            self.has_uav() && slot == SlotType::DL2 && self.uav_dl_active[cell - self.n_macro]
        }
    }

    /// Received power at `user` from `cell` in dBm, if the cell exists.
    pub fn dl_rx_dbm(&self, user: usize, cell: usize) -> f64 {
        lin_to_db(self.tx_mw(cell) * self.gain(user, cell))
    }

    /// Total received downlink power at `user` in a slot, mW.
    pub fn dl_total_mw(&self, user: usize, slot: SlotType) -> f64 {
        (0..self.n_cells).filter(|&c| self.cell_transmits_dl(c, slot)).map(|c| self.tx_mw(c) * self.gain(user, c)).sum()
    }

    pub fn dl_access_sinr_db(&self, user: usize, cell: usize, slot: SlotType) -> Result<f64> {
        if !slot.is_downlink() {
            return Err(Error::LinkNotScheduled(slot.name()));
        }
        if !self.cell_available(cell) || (self.is_uav_cell(cell) && !slot.carries_uav_access()) {
            return Err(Error::LinkNotScheduled(slot.name()));
        }
        let s = self.tx_mw(cell) * self.gain(user, cell);
        let total = self.dl_total_mw(user, slot);
        let own = if self.cell_transmits_dl(cell, slot) { s } else { 0.0 };
        Ok(lin_to_db(s / (total - own + self.noise_mw).max(self.noise_mw)))
    }

    /// Donor to UAV in DL1. Every other alive macro sector interferes.
    pub fn backhaul_dl_sinr_db(&self) -> Result<f64> {
        let donor = self.donor.ok_or(Error::NoDonor)?;
        let s = self.macro_tx_mw * self.bh_gain[donor.cell];
        let i: f64 = (0..self.n_macro)
            .filter(|&c| c != donor.cell && self.world().cell_alive(c))
            .map(|c| self.macro_tx_mw * self.bh_gain[c])
            .sum();
        Ok(lin_to_db(s / (i + self.noise_mw)))
    }

    /// Power a user transmitting in uplink would deliver at receiving cell `rx`, mW.
    pub fn ul_rx_mw(&self, user: usize, rx: usize) -> f64 {
        self.ue_tx_mw * self.gain(user, rx)
    }

    /// UAV backhaul transmitter power at macro cell `rx`, mW.
    pub fn uav_backhaul_rx_mw(&self, rx: usize) -> f64 {
        if rx < self.n_macro {
            db_to_lin(self.cfg().uav_power_dbm) * self.bh_gain[rx]
        } else {
            0.0
        }
    }

    /// Uplink interference at receiving cell `rx` from the given interferers, mW.
    pub fn ul_interference_mw(&self, rx: usize, interferers: &UplinkInterferers, backhaul_rx: bool) -> f64 {
        let mut i = 0.0;
        for (c, u) in interferers.users.iter().enumerate() {
            if c == rx && !backhaul_rx {
                continue;
            }
            if let Some(u) = u {
                i += self.ul_rx_mw(*u, rx);
            }
        }
        if interferers.uav_backhaul && !backhaul_rx {
            i += self.uav_backhaul_rx_mw(rx);
        }
        i
    }

    pub fn ul_access_sinr_db(
        &self,
        user: usize,
        cell: usize,
        slot: SlotType,
        interferers: &UplinkInterferers,
    ) -> Result<f64> {
        if slot.is_downlink() || !self.cell_available(cell) {
            return Err(Error::LinkNotScheduled(slot.name()));
        }
        if self.is_uav_cell(cell) && !slot.carries_uav_access() {
            return Err(Error::LinkNotScheduled(slot.name()));
        }
        let s = self.ul_rx_mw(user, cell);
        let i = self.ul_interference_mw(cell, interferers, false);
        Ok(lin_to_db(s / (i + self.noise_mw)))
    }

    /// UAV to donor in UL1. The donor's own cell is busy receiving the backhaul.
    pub fn backhaul_ul_sinr_db(&self, interferers: &UplinkInterferers) -> Result<f64> {
        let donor = self.donor.ok_or(Error::NoDonor)?;
        let s = db_to_lin(self.cfg().uav_power_dbm) * self.bh_gain[donor.cell];
        let i: f64 = interferers
            .users
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != donor.cell)
            .filter_map(|(_, u)| u.map(|u| self.ul_rx_mw(u, donor.cell)))
            .sum();
        Ok(lin_to_db(s / (i + self.noise_mw)))
    }

    pub fn slot_sinr_db(&self, link: Link, slot: SlotType, interferers: &UplinkInterferers) -> Result<f64> {
        match (link, slot.is_downlink()) {
            (Link::Access { cell, user }, true) => self.dl_access_sinr_db(user, cell, slot),
            (Link::Access { cell, user }, false) => self.ul_access_sinr_db(user, cell, slot, interferers),
            (Link::Backhaul, _) if !slot.carries_backhaul() => Err(Error::LinkNotScheduled(slot.name())),
            (Link::Backhaul, true) => self.backhaul_dl_sinr_db(),
            (Link::Backhaul, false) => self.backhaul_ul_sinr_db(interferers),
        }
    }

    pub fn rate_bps(&self, sinr_db: f64) -> f64 {
        shannon_rate_bps(sinr_db, self.cfg().bandwidth_hz, self.cfg().se_cap)
    }

    /// Expected uplink interference at `rx` in slot `slot` when each active
    /// cell's transmitter is a uniformly drawn member of its user set.
    fn expected_ul_interference_mw(&self, rx: usize, slot: SlotType, members: &[Vec<usize>], backhaul_rx: bool) -> f64 {
        let mut i = 0.0;
        for (c, users) in members.iter().enumerate() {
            if users.is_empty() || (c == rx && !backhaul_rx) {
                continue;
            }
            if self.is_uav_cell(c) && !slot.carries_uav_access() {
                continue;
            }
            if backhaul_rx && self.is_uav_cell(c) {
                continue;
            }
            let mean = users.iter().map(|&u| self.ul_rx_mw(u, rx)).sum::<f64>() / users.len() as f64;
            i += mean;
        }
        let uav_has_users = members[self.n_macro..].iter().any(|m| !m.is_empty());
        if slot == SlotType::UL1 && uav_has_users && !backhaul_rx {
            i += self.uav_backhaul_rx_mw(rx);
        }
        i
    }
}

/// Per-user quality of the serving link, indexed by [`SlotType::index`].
/// Entries for slots the link does not use are `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkQuality {
    pub sinr_db: [Option<f64>; 4],
    pub rate_bps: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackhaulRates {
    pub dl_sinr_db: f64,
    pub ul_sinr_db: f64,
    pub dl_bps: f64,
    pub ul_bps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub serving: Vec<Option<usize>>,
    pub dropped_dl: Vec<bool>,
    pub dropped_ul: Vec<bool>,
    pub quality: Vec<LinkQuality>,
    /// End-to-end DL score of the chosen candidate (bps, duty-weighted).
    pub score_bps: Vec<f64>,
    pub backhaul: Option<BackhaulRates>,
    pub iterations: usize,
}

impl Association {
    pub fn uav_users(&self, n_macro: usize) -> impl Iterator<Item = usize> + '_ {
        self.serving.iter().enumerate().filter(move |(_, c)| c.is_some_and(|c| c >= n_macro)).map(|(u, _)| u)
    }

    pub fn members(&self, n_cells: usize) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); n_cells];
        for (u, c) in self.serving.iter().enumerate() {
            if let Some(c) = c {
                m[*c].push(u);
            }
        }
        m
    }
}

/// End-to-end score of a relayed path: the access rate, or the user's share
/// of the backhaul, whichever is smaller.
pub fn uav_path_rate(access_bps: f64, backhaul_bps: f64, uav_users: usize) -> f64 {
    access_bps.min(backhaul_bps / uav_users.max(1) as f64)
}

/// SINR equivalent to the mean spectral efficiency over a slot mix.
fn effective_sinr_db(parts: &[(f64, f64)]) -> f64 {
    let w: f64 = parts.iter().map(|p| p.0).sum();
    let se: f64 = parts.iter().map(|&(wt, s)| wt * (1.0 + db_to_lin(s)).log2()).sum::<f64>() / w;
    lin_to_db(2f64.powf(se) - 1.0)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cell: usize,
    sinr_db: f64,
    score: f64,
}

impl RadioMap {
    pub fn backhaul_rates(&self, members: Option<&[Vec<usize>]>) -> Result<BackhaulRates> {
        let dl_sinr_db = self.backhaul_dl_sinr_db()?;
        let ul_sinr_db = match members {
            Some(m) => {
                let donor = self.donor.ok_or(Error::NoDonor)?;
                let s = db_to_lin(self.cfg().uav_power_dbm) * self.bh_gain[donor.cell];
                let i = self.expected_ul_interference_mw(donor.cell, SlotType::UL1, m, true);
                lin_to_db(s / (i + self.noise_mw))
            }
            None => self.backhaul_ul_sinr_db(&UplinkInterferers::default())?,
        };
        Ok(BackhaulRates {
            dl_sinr_db,
            ul_sinr_db,
            dl_bps: self.rate_bps(dl_sinr_db),
            ul_bps: self.rate_bps(ul_sinr_db),
        })
    }

    fn dl_candidates(&self, user: usize, bh_dl: Option<(f64, f64)>, uav_load: usize, was_uav: bool) -> Vec<Candidate> {
        let cfg = self.cfg();
        let d1 = cfg.duty(SlotType::DL1);
        let d2 = cfg.duty(SlotType::DL2);
        let mut out = Vec::with_capacity(self.n_cells);
        let tot1 = self.dl_total_mw(user, SlotType::DL1);
        let tot2 = self.dl_total_mw(user, SlotType::DL2);
        for c in 0..self.n_macro {
            if !self.world().cell_alive(c) {
                continue;
            }
            let s = self.macro_tx_mw * self.gain(user, c);
            let s1 = lin_to_db(s / (tot1 - s + self.noise_mw));
            let s2 = lin_to_db(s / (tot2 - s + self.noise_mw));
            let score = d1 * self.rate_bps(s1) + d2 * self.rate_bps(s2);
            out.push(Candidate { cell: c, sinr_db: effective_sinr_db(&[(d1, s1), (d2, s2)]), score });
        }
        if let Some((bh_sinr, bh_rate)) = bh_dl {
            let n = if was_uav { uav_load } else { uav_load + 1 };
            for k in 0..UAV_SECTORS {
                let c = self.n_macro + k;
                let s = self.uav_tx_mw * self.gain(user, c);
                let own = if self.uav_dl_active[k] { s } else { 0.0 };
                let sa = lin_to_db(s / (tot2 - own + self.noise_mw));
                let score = uav_path_rate(d2 * self.rate_bps(sa), d1 * bh_rate, n);
                out.push(Candidate { cell: c, sinr_db: sa.min(bh_sinr), score });
            }
        }
        out
    }

    /// Iterated best-server association on end-to-end DL rate, then uplink
    /// drop checks on the resulting serving cells.
    pub fn associate(&mut self) -> Result<Association> {
        let cfg = self.cfg().clone();
        let n_users = self.n_users();
        let threshold = cfg.drop_threshold_db;
        let has_uav = self.has_uav();
        self.uav_dl_active = [has_uav; UAV_SECTORS];
        let bh_dl = if has_uav {
            let s = self.backhaul_dl_sinr_db()?;
            Some((s, self.rate_bps(s)))
        } else {
            None
        };

        let mut serving: Vec<Option<usize>> = vec![None; n_users];
        let mut chosen: Vec<Option<Candidate>> = vec![None; n_users];
        let mut iterations = 0;
        let mut provisional = true;
        loop {
            iterations += 1;
            let uav_load =
                if provisional { 0 } else { serving.iter().filter(|c| c.is_some_and(|c| c >= self.n_macro)).count() };
            let mut next = vec![None; n_users];
            for u in 0..n_users {
                let was_uav = !provisional && serving[u].is_some_and(|c| c >= self.n_macro);
                let cands = self.dl_candidates(u, bh_dl, uav_load, was_uav);
                let pick = pick_best(cands.iter().filter(|c| c.sinr_db >= threshold).map(|c| (c.cell, c.score)));
                chosen[u] = pick.and_then(|(cell, _)| cands.iter().find(|c| c.cell == cell).copied());
                next[u] = pick.map(|(cell, _)| cell);
            }
            let stable = next == serving && !provisional;
            serving = next;
            provisional = false;
            let mut active = [false; UAV_SECTORS];
            for c in serving.iter().flatten() {
                if *c >= self.n_macro {
                    active[c - self.n_macro] = true;
                }
            }
            let activity_changed = active != self.uav_dl_active;
            self.uav_dl_active = active;
            if (stable && !activity_changed) || iterations >= cfg.association_max_iters {
                break;
            }
        }

        let mut assoc = Association {
            serving: serving.clone(),
            dropped_dl: serving.iter().map(|c| c.is_none()).collect(),
            dropped_ul: vec![false; n_users],
            quality: vec![LinkQuality::default(); n_users],
            score_bps: chosen.iter().map(|c| c.map_or(0.0, |c| c.score)).collect(),
            backhaul: None,
            iterations,
        };
        let members = assoc.members(self.n_cells);
        if has_uav {
            assoc.backhaul = Some(self.backhaul_rates(Some(&members))?);
        }
        for (u, &user_cell) in serving.iter().enumerate().take(n_users) {
            let Some(cell) = user_cell else {
                assoc.dropped_ul[u] = true;
                continue;
            };
            let q = &mut assoc.quality[u];
            for slot in SlotType::ALL {
                let usable = if self.is_uav_cell(cell) { slot.carries_uav_access() } else { true };
                if !usable {
                    continue;
                }
                let sinr = if slot.is_downlink() {
                    self.dl_access_sinr_db(u, cell, slot)?
                } else {
                    let i = self.expected_ul_interference_mw(cell, slot, &members, false);
                    lin_to_db(self.ul_rx_mw(u, cell) / (i + self.noise_mw))
                };
                q.sinr_db[slot.index()] = Some(sinr);
                q.rate_bps[slot.index()] = self.rate_bps(sinr);
            }
            let ul_sinr = if self.is_uav_cell(cell) {
                let access = q.sinr_db[SlotType::UL2.index()].unwrap_or(f64::NEG_INFINITY);
                access.min(assoc.backhaul.map_or(f64::NEG_INFINITY, |b| b.ul_sinr_db))
            } else {
                let d1 = cfg.duty(SlotType::UL1);
                let d2 = cfg.duty(SlotType::UL2);
                effective_sinr_db(&[
                    (d1, q.sinr_db[SlotType::UL1.index()].unwrap_or(f64::NEG_INFINITY)),
                    (d2, q.sinr_db[SlotType::UL2.index()].unwrap_or(f64::NEG_INFINITY)),
                ])
            };
            assoc.dropped_ul[u] = ul_sinr < threshold;
        }
        Ok(assoc)
    }
}

/// Builds the radio map and associates every user.
pub fn associate_users(scenario: &Scenario) -> Result<(RadioMap, Association)> {
    let mut map = RadioMap::new(scenario.clone())?;
    let assoc = map.associate()?;
    Ok((map, assoc))
}

pub fn backhaul_rate_bps(scenario: &Scenario) -> Result<BackhaulRates> {
    let (map, assoc) = associate_users(scenario)?;
    match assoc.backhaul {
        Some(b) => Ok(b),
        None => map.backhaul_rates(None),
    }
}
