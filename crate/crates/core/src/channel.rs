//! Communication channels (true and sensing-reconstructed), bistatic echo
//! links and the maximum-ratio transmission baseline.

use rand::Rng;
use std::f64::consts::PI;

use crate::arrays::{Ula, Upa};
use crate::error::{Error, Result};
use crate::linalg::{cis, outer, C64, CMatrix};
use crate::scene::{
    db_to_linear, departure, localize_from_aoa, GeometryLinks, LinkGeometry, SceneConfig,
};

/// Per-VUE downlink channels. Column `k` of each matrix is the channel of VUE `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Full channels `h_k` (LoS plus NLoS rays), used to evaluate rates.
    pub true_channels: CMatrix,
    /// LoS components alone.
    pub los_channels: CMatrix,
    pub nlos_gains: Vec<Vec<C64>>,
    pub nlos_angles: Vec<Vec<f64>>,
}

impl ChannelSet {
    pub fn num_users(&self) -> usize {
        self.true_channels.ncols()
    }
}

/// Large-scale amplitude `sqrt(rho0 d^-alpha0)`.
pub fn large_scale_amplitude(scene: &SceneConfig, distance: f64) -> f64 {
    (scene.ref_gain() * distance.powf(-scene.pathloss_exp)).sqrt()
}

/// Draws Saleh-Valenzuela channels for every VUE in the scene.
pub fn synth_true_channel<R: Rng + ?Sized>(
    scene: &SceneConfig,
    geometry: &GeometryLinks,
    rng: &mut R,
) -> ChannelSet {
    let ula = scene.ula();
    let m = ula.num_elements;
    let k = geometry.vues.len();
    let [g_lo, g_hi] = scene.nlos_gain_db;
    let [a_lo, a_hi] = scene.nlos_angle_range_deg.map(f64::to_radians);

    let mut true_channels = CMatrix::zeros(m, k);
    let mut los_channels = CMatrix::zeros(m, k);
    let mut nlos_gains = Vec::with_capacity(k);
    let mut nlos_angles = Vec::with_capacity(k);
    for (col, link) in geometry.vues.iter().enumerate() {
        let amp = large_scale_amplitude(scene, link.d_b);
        let los = ula.steering(link.psi);
        let mut h = los.clone();
        let mut gains = Vec::with_capacity(scene.num_nlos);
        let mut angles = Vec::with_capacity(scene.num_nlos);
        for _ in 0..scene.num_nlos {
            let power_db = if g_hi > g_lo { rng.random_range(g_lo..g_hi) } else { g_lo };
            let gain = cis(rng.random_range(0.0..2.0 * PI)) * db_to_linear(power_db).sqrt();
            let angle = if a_hi > a_lo { rng.random_range(a_lo..a_hi) } else { a_lo };
            h += ula.steering(angle) * gain;
            gains.push(gain);
            angles.push(angle);
        }
        los_channels.set_column(col, &(los * C64::from(amp)));
        true_channels.set_column(col, &(h * C64::from(amp)));
        nlos_gains.push(gains);
        nlos_angles.push(angles);
    }
    ChannelSet { true_channels, los_channels, nlos_gains, nlos_angles }
}

/// Departure angle and BS distance of a VUE as inferred from sensing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosEstimate {
    pub psi: f64,
    pub d_b: f64,
}

impl LosEstimate {
    pub fn exact(link: &LinkGeometry) -> Self {
        Self { psi: link.psi, d_b: link.d_b }
    }

    /// Localizes a VUE from its AoA pair and maps it to the BS frame.
    pub fn from_aoa(scene: &SceneConfig, theta: f64, phi: f64, d_h: f64) -> Result<Self> {
        let pos = localize_from_aoa(theta, phi, &scene.sensor_position, d_h)?;
        let (psi, d_b) = departure(&scene.bs_position, &pos);
        Ok(Self { psi, d_b })
    }
}

/// LoS-only channel matrix rebuilt at the BS from sensing results.
pub fn reconstruct_los_channel(scene: &SceneConfig, estimates: &[LosEstimate]) -> CMatrix {
    let ula = scene.ula();
    let mut h = CMatrix::zeros(ula.num_elements, estimates.len());
    for (col, est) in estimates.iter().enumerate() {
        let amp = large_scale_amplitude(scene, est.d_b);
        h.set_column(col, &(ula.steering(est.psi) * C64::from(amp)));
    }
    h
}

/// Parameters of one BS -> reflector -> sensing-node link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingLinkParams {
    /// Complex reflection coefficient.
    pub alpha: C64,
    pub theta: f64,
    pub phi: f64,
    pub psi: f64,
}

impl SensingLinkParams {
    /// `alpha = exp(j phase) sqrt(rho0 zeta d_b^-2 d_r^-2)`.
    pub fn from_link(scene: &SceneConfig, link: &LinkGeometry, rcs_dbsm: f64, phase: f64) -> Self {
        let amp =
            (scene.ref_gain() * db_to_linear(rcs_dbsm) / (link.d_b.powi(2) * link.d_r.powi(2))).sqrt();
        Self { alpha: cis(phase) * amp, theta: link.theta, phi: link.phi, psi: link.psi }
    }
}

/// `alpha a_r(theta, phi) b(psi)^H`, an N x M rank-one matrix.
pub fn sensing_link_matrix(params: &SensingLinkParams, ula: &Ula<f64>, upa: &Upa<f64>) -> CMatrix {
    let a = upa.steering(params.theta, params.phi);
    let b = ula.steering(params.psi);
    outer(&a, &b) * params.alpha
}

/// Maximum-ratio transmission: `w_k = sqrt(P/K) h_k / |h_k|`.
pub fn mrt_beamformer(channels: &CMatrix, power: f64) -> Result<CMatrix> {
    let k = channels.ncols();
    let scale = (power / k as f64).sqrt();
    let mut w = CMatrix::zeros(channels.nrows(), k);
    for (col, h) in channels.column_iter().enumerate() {
        let n = h.norm();
        if n == 0.0 {
            return Err(Error::ZeroChannel(col));
        }
        w.set_column(col, &(h * C64::from(scale / n)));
    }
    Ok(w)
}
