//! Scenario geometry, unit conversions and AoA-based localization.
//!
//! Frame conventions:
//! * the BS array lies along the x axis, so the departure angle of a node is
//!   `psi = asin((x_node - x_bs) / d_bs)` (0 on broadside);
//! * the sensing-node displacement is `dD = L_s - L_node = [d_x, d_y, d_h]`,
//!   with `cos(phi) = d_h / |dD|` and `sin(theta) = d_x / |dD|`.
//!   Localization recovers `d_y >= 0`, so nodes must sit on the `y < y_s` side
//!   of the sensing node.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arrays::{Ula, Upa};
use crate::error::{Error, Result};

pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watt(x_dbm: f64) -> f64 {
    db_to_linear(x_dbm) / 1000.0
}

pub fn watt_to_dbm(x_w: f64) -> f64 {
    linear_to_db(x_w * 1000.0)
}

pub type Position = [f64; 3];

fn default_spacing() -> f64 {
    0.5
}
fn default_nlos_gain_db() -> [f64; 2] {
    [-10.0, -5.0]
}
fn default_nlos_angles_deg() -> [f64; 2] {
    [-90.0, 90.0]
}

/// One sensing-assisted beamforming scenario: a BS serving K vehicles, a
/// passive sensing node and one weak target.
///
/// Powers are in dBm, gains in dB, RCS in dBsm, angles in degrees and
/// positions in meters; accessors convert to linear SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub bs_position: Position,
    pub sensor_position: Position,
    pub vue_positions: Vec<Position>,
    pub target_position: Position,
    pub num_tx_antennas: usize,
    pub upa_shape: [usize; 2],
    pub num_rf_chains: usize,
    #[serde(default = "default_spacing")]
    pub spacing_ratio: f64,
    pub power_budget_dbm: f64,
    pub noise_comm_dbm: f64,
    pub noise_radar_dbm: f64,
    pub rcs_vue_dbsm: f64,
    pub rcs_target_dbsm: f64,
    pub ref_gain_db: f64,
    pub pathloss_exp: f64,
    pub num_nlos: usize,
    /// Range of `|alpha_{n,i}|^2` in dB, drawn uniformly.
    #[serde(default = "default_nlos_gain_db")]
    pub nlos_gain_db: [f64; 2],
    #[serde(default = "default_nlos_angles_deg")]
    pub nlos_angle_range_deg: [f64; 2],
    pub snapshots: usize,
    pub crlb_threshold_db: f64,
    pub rng_seed: u64,
    /// Half-width of the uniform horizontal jitter applied to VUE and target
    /// positions in each Monte-Carlo trial, meters.
    #[serde(default)]
    pub position_jitter_m: f64,
}

impl SceneConfig {
    /// Small scenario used for tests and CI: M = N = 16, K = 2, L = 100.
    pub fn desk() -> Self {
        Self {
            bs_position: [0.0, 0.0, 10.0],
            sensor_position: [5.0, 40.0, 8.0],
            vue_positions: vec![[-20.0, 14.0, 1.5], [22.0, 20.0, 1.5]],
            target_position: [6.0, 24.0, 1.0],
            num_tx_antennas: 16,
            upa_shape: [4, 4],
            num_rf_chains: 2,
            spacing_ratio: 0.5,
            power_budget_dbm: 30.0,
            noise_comm_dbm: -80.0,
            noise_radar_dbm: -80.0,
            rcs_vue_dbsm: 20.0,
            rcs_target_dbsm: 0.0,
            ref_gain_db: -50.0,
            pathloss_exp: 2.0,
            num_nlos: 3,
            nlos_gain_db: default_nlos_gain_db(),
            nlos_angle_range_deg: default_nlos_angles_deg(),
            snapshots: 100,
            // Tight enough that the ceiling binds on this geometry.
            crlb_threshold_db: -45.0,
            rng_seed: 1,
            position_jitter_m: 2.0,
        }
    }

    /// Full-size road scenario: M = N = 64 (8 x 8 UPA), K = N_rf = 4, L = 1000.
    pub fn road() -> Self {
        Self {
            bs_position: [0.0, 0.0, 10.0],
            sensor_position: [5.0, 40.0, 8.0],
            vue_positions: vec![
                [-30.0, 12.0, 1.5],
                [-8.0, 20.0, 1.5],
                [18.0, 14.0, 1.5],
                [35.0, 22.0, 1.5],
            ],
            target_position: [6.0, 26.0, 1.0],
            num_tx_antennas: 64,
            upa_shape: [8, 8],
            num_rf_chains: 4,
            snapshots: 1000,
            crlb_threshold_db: -40.0,
            ..Self::desk()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scene: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.vue_positions.len();
        let m = self.num_tx_antennas;
        let fail = |msg: String| Err(Error::Config(msg));
        if k == 0 {
            return fail("at least one VUE is required".into());
        }
        if m < k {
            return fail(format!("M = {m} antennas cannot serve K = {k} users"));
        }
        if self.num_rf_chains < k || self.num_rf_chains > m {
            return fail(format!("need K <= N_rf <= M, got N_rf = {}", self.num_rf_chains));
        }
        if self.upa_shape[0] == 0 || self.upa_shape[1] == 0 {
            return fail("UPA dimensions must be positive".into());
        }
        if self.snapshots == 0 {
            return fail("L must be at least 1".into());
        }
        if !(self.spacing_ratio > 0.0) {
            return fail("spacing ratio must be positive".into());
        }
        if self.nlos_gain_db[0] > self.nlos_gain_db[1]
            || self.nlos_angle_range_deg[0] > self.nlos_angle_range_deg[1]
        {
            return fail("ranges must be [low, high]".into());
        }
        let all = self
            .vue_positions
            .iter()
            .chain([&self.target_position, &self.bs_position, &self.sensor_position]);
        if all.flat_map(|p| p.iter()).any(|v| !v.is_finite()) {
            return fail("positions must be finite".into());
        }
        let scalars = [
            self.power_budget_dbm,
            self.noise_comm_dbm,
            self.noise_radar_dbm,
            self.rcs_vue_dbsm,
            self.rcs_target_dbsm,
            self.ref_gain_db,
            self.pathloss_exp,
            self.crlb_threshold_db,
        ];
        if scalars.iter().any(|v| !v.is_finite()) {
            return fail("power, gain and threshold parameters must be finite".into());
        }
        if !(self.position_jitter_m >= 0.0 && self.position_jitter_m.is_finite()) {
            return fail("position jitter must be a non-negative distance".into());
        }
        Ok(())
    }

    /// Copy with VUE and target positions shifted uniformly by up to
    /// `position_jitter_m` in x and y.
    pub fn jittered<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let mut out = self.clone();
        let j = self.position_jitter_m;
        if j > 0.0 {
            for p in out.vue_positions.iter_mut().chain(std::iter::once(&mut out.target_position)) {
                p[0] += rng.random_range(-j..=j);
                p[1] += rng.random_range(-j..=j);
            }
        }
        out
    }

    pub fn num_vues(&self) -> usize {
        self.vue_positions.len()
    }

    pub fn ula(&self) -> Ula<f64> {
        Ula { num_elements: self.num_tx_antennas, spacing_ratio: self.spacing_ratio }
    }

    pub fn upa(&self) -> Upa<f64> {
        Upa { n_h: self.upa_shape[0], n_v: self.upa_shape[1], spacing_ratio: self.spacing_ratio }
    }

    pub fn power_watts(&self) -> f64 {
        dbm_to_watt(self.power_budget_dbm)
    }

    pub fn noise_comm_watts(&self) -> f64 {
        dbm_to_watt(self.noise_comm_dbm)
    }

    pub fn noise_radar_watts(&self) -> f64 {
        dbm_to_watt(self.noise_radar_dbm)
    }

    /// CRLB threshold in rad^2.
    pub fn crlb_threshold(&self) -> f64 {
        db_to_linear(self.crlb_threshold_db)
    }

    pub fn ref_gain(&self) -> f64 {
        db_to_linear(self.ref_gain_db)
    }

    /// Height of the sensing node above `node`, known a priori.
    pub fn height_difference(&self, node: &Position) -> f64 {
        self.sensor_position[2] - node[2]
    }
}

/// Distances and angles of one BS -> node -> sensing-node path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    /// BS to node distance, meters.
    pub d_b: f64,
    /// Departure angle at the BS array, radians.
    pub psi: f64,
    /// Node to sensing-node distance, meters.
    pub d_r: f64,
    /// Azimuth at the sensing array, radians.
    pub theta: f64,
    /// Elevation at the sensing array, radians.
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryLinks {
    pub vues: Vec<LinkGeometry>,
    pub target: LinkGeometry,
}

fn sub(a: &Position, b: &Position) -> Position {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: &Position) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Departure angle and distance of `node` as seen from the BS array.
pub fn departure(bs: &Position, node: &Position) -> (f64, f64) {
    let d = sub(node, bs);
    let dist = norm(&d);
    ((d[0] / dist).clamp(-1.0, 1.0).asin(), dist)
}

/// Arrival angles `(theta, phi)` and distance of `node` at the sensing node.
pub fn arrival(sensor: &Position, node: &Position) -> (f64, f64, f64) {
    let d = sub(sensor, node);
    let dist = norm(&d);
    let theta = (d[0] / dist).clamp(-1.0, 1.0).asin();
    let phi = (d[2] / dist).clamp(-1.0, 1.0).acos();
    (theta, phi, dist)
}

fn link(scene: &SceneConfig, node: &Position, name: &str) -> Result<LinkGeometry> {
    let (psi, d_b) = departure(&scene.bs_position, node);
    let (theta, phi, d_r) = arrival(&scene.sensor_position, node);
    if d_b == 0.0 || d_r == 0.0 {
        return Err(Error::CoincidentNodes(name.to_string()));
    }
    Ok(LinkGeometry { d_b, psi, d_r, theta, phi })
}

pub fn compute_geometry(scene: &SceneConfig) -> Result<GeometryLinks> {
    let vues = scene
        .vue_positions
        .iter()
        .enumerate()
        .map(|(k, p)| link(scene, p, &format!("vue{k}")))
        .collect::<Result<Vec<_>>>()?;
    let target = link(scene, &scene.target_position, "target")?;
    Ok(GeometryLinks { vues, target })
}

/// Ground-plane localization of a node from its AoA pair at the sensing node,
/// given the known height difference `d_h = h_s - h_node`.
pub fn localize_from_aoa(theta: f64, phi: f64, sensor: &Position, d_h: f64) -> Result<Position> {
    let cos_phi = phi.cos();
    if cos_phi.abs() < 1e-9 {
        return Err(Error::DegenerateElevation(cos_phi.abs()));
    }
    let range = d_h / cos_phi;
    if range <= 0.0 {
        return Err(Error::NegativeRadicand(range));
    }
    let d_x = range * theta.sin();
    let radicand = range * range - d_x * d_x - d_h * d_h;
    let d_y = if radicand >= 0.0 {
        radicand.sqrt()
    } else if radicand > -1e-9 * range * range {
        0.0
    } else {
        return Err(Error::NegativeRadicand(radicand));
    };
    Ok([sensor[0] - d_x, sensor[1] - d_y, sensor[2] - d_h])
}
