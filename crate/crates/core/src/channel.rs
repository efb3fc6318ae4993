//! Propagation and antenna primitives.
//!
//! Everything here is a pure function of its arguments. Angles are in
//! degrees, distances in meters, gains and losses in dB.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizontal separation used for links that are exactly vertical.
pub const MIN_HORIZONTAL_M: f64 = 1e-3;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

static PATHLOSS_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of pathloss evaluations whose slant distance was clamped to 1 m.
pub fn pathloss_clamp_count() -> u64 {
    PATHLOSS_CLAMPS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn horizontal_distance(&self, other: &Position3D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.z >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntennaConfig {
    pub bearing_deg: f64,
    /// Positive values tilt the beam downward.
    pub electrical_tilt_deg: f64,
    pub hpbw_az_deg: f64,
    pub hpbw_el_deg: f64,
    pub max_gain_dbi: f64,
    pub front_to_back_db: f64,
    pub sla_v_db: f64,
}

impl AntennaConfig {
    /// Flat 0 dBi pattern.
    pub const fn isotropic() -> Self {
        Self {
            bearing_deg: 0.0,
            electrical_tilt_deg: 0.0,
            hpbw_az_deg: f64::INFINITY,
            hpbw_el_deg: f64::INFINITY,
            max_gain_dbi: 0.0,
            front_to_back_db: 0.0,
            sla_v_db: 0.0,
        }
    }

    pub fn with_bearing(mut self, bearing_deg: f64) -> Self {
        self.bearing_deg = bearing_deg;
        self
    }

    pub fn with_tilt(mut self, tilt_deg: f64) -> Self {
        self.electrical_tilt_deg = tilt_deg;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub d2d: f64,
    pub d3d: f64,
    /// Bearing from transmitter to receiver, degrees clockwise from north.
    pub azimuth_deg: f64,
    /// Elevation of the receiver seen from the transmitter, negative below the horizon.
    pub elevation_deg: f64,
    pub tx_height: f64,
    pub rx_height: f64,
}

impl LinkGeometry {
    /// The same link seen from the receiver end.
    pub fn reversed(&self) -> LinkGeometry {
        LinkGeometry {
            d2d: self.d2d,
            d3d: self.d3d,
            azimuth_deg: normalize_deg(self.azimuth_deg + 180.0),
            elevation_deg: -self.elevation_deg,
            tx_height: self.rx_height,
            rx_height: self.tx_height,
        }
    }
}

/// Wraps an angle into (-180, 180].
pub fn normalize_deg(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

pub fn geometry(tx: &Position3D, rx: &Position3D) -> Result<LinkGeometry> {
    let dx = rx.x - tx.x;
    let dy = rx.y - tx.y;
    let dz = rx.z - tx.z;
    let raw_d2d = dx.hypot(dy);
    if raw_d2d == 0.0 && dz == 0.0 {
        return Err(Error::DegenerateLink);
    }
    let (d2d, azimuth_deg) = if raw_d2d < MIN_HORIZONTAL_M {
        (MIN_HORIZONTAL_M, if raw_d2d > 0.0 { dx.atan2(dy).to_degrees() } else { 0.0 })
    } else {
        (raw_d2d, dx.atan2(dy).to_degrees())
    };
    let d3d = d2d.hypot(dz);
    Ok(LinkGeometry {
        d2d,
        d3d,
        azimuth_deg: normalize_deg(azimuth_deg),
        elevation_deg: dz.atan2(d2d).to_degrees(),
        tx_height: tx.z,
        rx_height: rx.z,
    })
}

/// Rural-macro style LOS probability: certain up to 10 m, exponential decay beyond.
pub fn los_probability(d2d: f64) -> f64 {
    if d2d <= 10.0 {
        1.0
    } else {
        (-(d2d - 10.0) / 1000.0).exp()
    }
}

/// Constants of the log-distance rural-macro pathloss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathlossModel {
    pub building_height_m: f64,
    /// Excess loss added on top of the LOS value for NLOS links.
    pub nlos_excess_db: f64,
}

impl Default for PathlossModel {
    fn default() -> Self {
        Self { building_height_m: 5.0, nlos_excess_db: 20.0 }
    }
}

impl PathlossModel {
    /// Constant clutter offset derived from the average building height.
    pub fn clutter_offset_db(&self) -> f64 {
        (0.044 * self.building_height_m.powf(1.72)).min(14.77)
    }

    /// Breakpoint distance for the given antenna heights.
    pub fn breakpoint_m(tx_height: f64, rx_height: f64, carrier_ghz: f64) -> f64 {
        2.0 * std::f64::consts::PI * tx_height * rx_height * carrier_ghz * 1e9 / SPEED_OF_LIGHT
    }

    fn los_pre_breakpoint(&self, d3d: f64, carrier_ghz: f64) -> f64 {
        20.0 * (40.0 * std::f64::consts::PI * d3d * carrier_ghz / 3.0).log10() - self.clutter_offset_db()
    }

    pub fn pathloss_db(&self, g: &LinkGeometry, los: bool, carrier_ghz: f64) -> f64 {
        let mut d3d = g.d3d;
        if d3d < 1.0 {
            PATHLOSS_CLAMPS.fetch_add(1, Ordering::Relaxed);
            d3d = 1.0;
        }
        let bp = Self::breakpoint_m(g.tx_height.max(1.0), g.rx_height.max(1.0), carrier_ghz);
        let los_pl = if d3d <= bp {
            self.los_pre_breakpoint(d3d, carrier_ghz)
        } else {
            self.los_pre_breakpoint(bp, carrier_ghz) + 40.0 * (d3d / bp).log10()
        };
        if los {
            los_pl
        } else {
            los_pl + self.nlos_excess_db
        }
    }
}

/// Pathloss with the default model constants.
pub fn pathloss_db(g: &LinkGeometry, los: bool, carrier_ghz: f64) -> f64 {
    PathlossModel::default().pathloss_db(g, los, carrier_ghz)
}

/// Parabolic sector pattern with clipped horizontal and vertical cuts.
///
/// `azimuth_off_deg` is measured from the antenna bearing. `elevation_deg` is
/// the target's elevation above the horizontal plane; the beam peak sits at
/// `-electrical_tilt_deg`.
pub fn antenna_gain_db(cfg: &AntennaConfig, azimuth_off_deg: f64, elevation_deg: f64) -> f64 {
    let az = normalize_deg(azimuth_off_deg);
    let horizontal = (12.0 * (az / cfg.hpbw_az_deg).powi(2)).min(cfg.front_to_back_db);
    let el_off = elevation_deg + cfg.electrical_tilt_deg;
    let vertical = (12.0 * (el_off / cfg.hpbw_el_deg).powi(2)).min(cfg.sla_v_db);
    cfg.max_gain_dbi - (horizontal + vertical).min(cfg.front_to_back_db)
}

/// Gain of `cfg` towards the far end of `g`, with `g` oriented away from the antenna.
pub fn gain_towards(cfg: &AntennaConfig, g: &LinkGeometry) -> f64 {
    antenna_gain_db(cfg, g.azimuth_deg - cfg.bearing_deg, g.elevation_deg)
}

pub fn link_gain_db(
    model: &PathlossModel,
    tx_cfg: &AntennaConfig,
    rx_cfg: &AntennaConfig,
    g: &LinkGeometry,
    los: bool,
    shadow_db: f64,
    carrier_ghz: f64,
) -> f64 {
    gain_towards(tx_cfg, g) + gain_towards(rx_cfg, &g.reversed()) - model.pathloss_db(g, los, carrier_ghz) - shadow_db
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sector() -> AntennaConfig {
        AntennaConfig {
            bearing_deg: 0.0,
            electrical_tilt_deg: 0.0,
            hpbw_az_deg: 65.0,
            hpbw_el_deg: 10.0,
            max_gain_dbi: 14.0,
            front_to_back_db: 30.0,
            sla_v_db: 30.0,
        }
    }

    #[test]
    fn geometry_examples() {
        let g = geometry(&Position3D::new(0.0, 0.0, 0.0), &Position3D::new(3.0, 4.0, 0.0)).unwrap();
        assert!((g.d2d - 5.0).abs() < 1e-12);
        assert!((g.d3d - 5.0).abs() < 1e-12);
        assert_eq!(g.elevation_deg, 0.0);

        let g = geometry(&Position3D::new(0.0, 0.0, 25.0), &Position3D::new(300.0, 400.0, 1.5)).unwrap();
        assert!((g.d2d - 500.0).abs() < 1e-9);
        assert!((g.d3d - (500f64.powi(2) + 23.5f64.powi(2)).sqrt()).abs() < 1e-9);
        assert!((g.d3d - 500.55).abs() < 0.01);
        assert!(g.elevation_deg < 0.0);

        let g = geometry(&Position3D::new(0.0, 0.0, 35.0), &Position3D::new(1e-3, 0.0, 1.5)).unwrap();
        assert!((g.d2d - 1e-3).abs() < 1e-15);
        assert!((g.d3d - 33.5).abs() < 1e-6);
    }

    #[test]
    fn vertical_link_is_clamped_and_coincident_is_error() {
        let g = geometry(&Position3D::new(0.0, 0.0, 35.0), &Position3D::new(0.0, 0.0, 1.5)).unwrap();
        assert_eq!(g.d2d, MIN_HORIZONTAL_M);
        let p = Position3D::new(1.0, 2.0, 3.0);
        assert!(matches!(geometry(&p, &p), Err(Error::DegenerateLink)));
    }

    #[test]
    fn los_probability_examples() {
        assert_eq!(los_probability(5.0), 1.0);
        assert_eq!(los_probability(10.0), 1.0);
        assert!((los_probability(1010.0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    fn at(d3d: f64) -> LinkGeometry {
        LinkGeometry { d2d: d3d, d3d, azimuth_deg: 0.0, elevation_deg: 0.0, tx_height: 25.0, rx_height: 1.5 }
    }

    #[test]
    fn doubling_distance_costs_six_db_before_breakpoint() {
        let a = pathloss_db(&at(100.0), true, 3.5);
        let b = pathloss_db(&at(200.0), true, 3.5);
        assert!((b - a - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn pathloss_reference_value() {
        // 20*log10(40*pi*100*3.5/3) - 0.044*5^1.72, evaluated by hand
        let expected = 20.0 * (14_660.765_716_752_37f64).log10() - 0.044 * 5f64.powf(1.72);
        assert!((expected - 82.6226).abs() < 0.01);
        assert!((pathloss_db(&at(100.0), true, 3.5) - expected).abs() < 0.01);
        assert!(pathloss_db(&at(500.0), false, 3.5) >= pathloss_db(&at(500.0), true, 3.5));
    }

    #[test]
    fn short_links_are_clamped_to_one_meter() {
        let before = pathloss_clamp_count();
        let a = pathloss_db(&at(0.5), true, 3.5);
        assert_eq!(a, pathloss_db(&at(1.0), true, 3.5));
        assert!(pathloss_clamp_count() > before);
    }

    #[test]
    fn pathloss_past_breakpoint_uses_forty_db_per_decade() {
        let bp = PathlossModel::breakpoint_m(25.0, 1.5, 3.5);
        let a = pathloss_db(&at(bp), true, 3.5);
        let b = pathloss_db(&at(bp * 10.0), true, 3.5);
        assert!((b - a - 40.0).abs() < 1e-9);
    }

    #[test]
    fn antenna_examples() {
        let cfg = sector();
        assert_eq!(antenna_gain_db(&cfg, 0.0, 0.0), 14.0);
        assert!((antenna_gain_db(&cfg, 32.5, 0.0) - 11.0).abs() < 1e-12);
        let tilted = cfg.with_tilt(10.0);
        assert!((antenna_gain_db(&tilted, 32.5, -10.0) - 11.0).abs() < 1e-12);
        assert!((antenna_gain_db(&cfg, 0.0, 90.0) - (14.0 - 30.0)).abs() < 1e-12);
        assert!((antenna_gain_db(&cfg, 180.0, 0.0) - (14.0 - 30.0)).abs() < 1e-12);
        assert_eq!(antenna_gain_db(&AntennaConfig::isotropic(), 123.0, -45.0), 0.0);
    }

    #[test]
    fn down_tilt_moves_peak_down() {
        let peak = |tilt: f64| {
            let cfg = sector().with_tilt(tilt);
            (-900..=900)
                .map(|i| i as f64 * 0.1)
                .max_by(|a, b| antenna_gain_db(&cfg, 0.0, *a).total_cmp(&antenna_gain_db(&cfg, 0.0, *b)))
                .unwrap()
        };
        for delta in [5.0, 10.0, 20.0] {
            assert!((peak(delta) - peak(0.0) + delta).abs() < 1e-9);
        }
    }

    #[test]
    fn link_gain_composition() {
        let model = PathlossModel::default();
        let iso = AntennaConfig::isotropic();
        let g = geometry(&Position3D::new(0.0, 0.0, 25.0), &Position3D::new(300.0, 400.0, 1.5)).unwrap();
        let pl = model.pathloss_db(&g, true, 3.5);
        assert_eq!(link_gain_db(&model, &iso, &iso, &g, true, 0.0, 3.5), -pl);
        let shadowed = link_gain_db(&model, &iso, &iso, &g, true, 3.0, 3.5);
        assert!((shadowed - (-pl - 3.0)).abs() < 1e-12);

        // term-by-term: tx sector looking north-east with 6 deg down-tilt, isotropic rx
        let tx = sector().with_bearing(30.0).with_tilt(6.0);
        let az_off = 400f64.atan2(300.0).to_degrees();
        let az_off = (90.0 - az_off) - 30.0;
        let el = (-23.5f64).atan2(500.0).to_degrees();
        let h = (12.0 * (az_off / 65.0).powi(2)).min(30.0);
        let v = (12.0 * ((el + 6.0) / 10.0).powi(2)).min(30.0);
        let expected_tx = 14.0 - (h + v).min(30.0);
        let total = link_gain_db(&model, &tx, &iso, &g, false, 4.0, 3.5);
        let oracle = expected_tx + 0.0 - (model.pathloss_db(&g, true, 3.5) + 20.0) - 4.0;
        assert!((total - oracle).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn los_probability_is_bounded_and_monotone(a in 0.0f64..5000.0, b in 0.0f64..5000.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let (p_lo, p_hi) = (los_probability(lo), los_probability(hi));
                prop_assert!((0.0..=1.0).contains(&p_lo));
                prop_assert!(p_hi <= p_lo);
            }

            #[test]
            fn pathloss_monotone(a in 1.0f64..20_000.0, b in 1.0f64..20_000.0, los: bool) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(pathloss_db(&at(hi), los, 3.5) >= pathloss_db(&at(lo), los, 3.5));
            }

            #[test]
            fn azimuth_symmetry(az in 0.0f64..180.0, el in -90.0f64..90.0, tilt in -30.0f64..30.0) {
                let cfg = sector().with_tilt(tilt);
                let g = antenna_gain_db(&cfg, az, el);
                prop_assert!((g - antenna_gain_db(&cfg, -az, el)).abs() < 1e-12);
                prop_assert!(g <= cfg.max_gain_dbi);
                prop_assert!(g >= cfg.max_gain_dbi - cfg.front_to_back_db);
            }

            #[test]
            fn geometry_pythagoras(x in -2000.0f64..2000.0, y in -2000.0f64..2000.0, z in 0.0f64..50.0) {
                let tx = Position3D::new(0.0, 0.0, 25.0);
                let rx = Position3D::new(x, y, z);
                if let Ok(g) = geometry(&tx, &rx) {
                    prop_assert!(g.d3d >= g.d2d);
                    let dz = z - 25.0;
                    let rel = (g.d3d.powi(2) - (g.d2d.powi(2) + dz * dz)).abs() / g.d3d.powi(2);
                    prop_assert!(rel < 1e-6);
                }
            }
        }
    }
}
