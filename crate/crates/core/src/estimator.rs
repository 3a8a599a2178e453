//! Echo synthesis at the sensing node and target angle estimation.
//!
//! Frames are generated after Doppler compensation and without clutter:
//! `Y = sum_k alpha_k a_r(th_k, ph_k) b(psi_k)^H X + alpha_t a_r b_t^H X + N`
//! with `X = W S` and unit-power Gaussian symbols `S`.
//!
//! The reduced-dimension ML estimator fixes the departure angle at an
//! assumed value `psi^`; the echo then collapses to `z = Y X^H b(psi^)`,
//! a single snapshot proportional to `a_r(th_t, ph_t)`. After the VUE null
//! filter `P` the target signature is `P a_r`, so the angle search maximizes
//! `|a_r^H P z| / |P a_r|` (the likelihood profiled over the reflection
//! coefficient) on a grid refined around the peak. Without a filter the
//! norm is constant and this is the plain `|a_r^H z|`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::arrays::{Ula, Upa};
use crate::channel::{sensing_link_matrix, SensingLinkParams};
use crate::error::{Error, Result};
use crate::linalg::{fro_norm_sq, hermitian_eigen_desc, C64, CMatrix, CVector};
use crate::scene::{GeometryLinks, SceneConfig};

/// One coherent processing interval seen by the sensing node.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoFrame {
    /// Received block, N x L.
    pub y: CMatrix,
    /// Transmitted block, M x L.
    pub x: CMatrix,
    pub target: SensingLinkParams,
    pub vues: Vec<SensingLinkParams>,
    pub noise: f64,
}

impl EchoFrame {
    pub fn snapshots(&self) -> usize {
        self.y.ncols()
    }

    /// Same frame with `P Y` in place of `Y`.
    pub fn filtered(&self, filter: &CMatrix) -> Self {
        Self { y: filter * &self.y, ..self.clone() }
    }
}

/// Circularly-symmetric complex Gaussian entries of variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, var: f64) -> CMatrix {
    let s = (0.5 * var).sqrt();
    CMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s)
    })
}

/// Draws one frame for precoder `w`. Reflection phases are uniform and drawn
/// from `rng` together with the symbols and the noise.
pub fn synth_echo<R: Rng + ?Sized>(
    scene: &SceneConfig,
    geometry: &GeometryLinks,
    w: &CMatrix,
    rng: &mut R,
) -> EchoFrame {
    let (ula, upa) = (scene.ula(), scene.upa());
    let l = scene.snapshots;
    let mut draw_phase = || rng.random_range(0.0..2.0 * PI);
    let target = SensingLinkParams::from_link(scene, &geometry.target, scene.rcs_target_dbsm, draw_phase());
    let vues: Vec<_> = geometry
        .vues
        .iter()
        .map(|link| SensingLinkParams::from_link(scene, link, scene.rcs_vue_dbsm, draw_phase()))
        .collect();
    let symbols = complex_gaussian(rng, w.ncols(), l, 1.0);
    let x = w * symbols;
    let noise = scene.noise_radar_watts();
    let y = echo_from(&ula, &upa, &target, &vues, &x) + complex_gaussian(rng, upa.num_elements(), l, noise);
    EchoFrame { y, x, target, vues, noise }
}

/// Noise-free echo of the given links for transmit block `x`.
pub fn echo_from(
    ula: &Ula<f64>,
    upa: &Upa<f64>,
    target: &SensingLinkParams,
    vues: &[SensingLinkParams],
    x: &CMatrix,
) -> CMatrix {
    let mut h = sensing_link_matrix(target, ula, upa);
    for v in vues {
        h += sensing_link_matrix(v, ula, upa);
    }
    h * x
}

/// Orthogonal projector onto the complement of the VUE arrival directions.
pub fn vue_null_filter(upa: &Upa<f64>, vue_angles: &[(f64, f64)]) -> Result<CMatrix> {
    let n = upa.num_elements();
    if vue_angles.is_empty() {
        return Ok(CMatrix::identity(n, n));
    }
    if vue_angles.len() >= n {
        return Err(Error::RankDeficiency(f64::INFINITY));
    }
    let mut a = CMatrix::zeros(n, vue_angles.len());
    for (k, &(theta, phi)) in vue_angles.iter().enumerate() {
        a.set_column(k, &upa.steering(theta, phi));
    }
    let svd = a.svd(true, false);
    let sv = &svd.singular_values;
    let cond = sv.max() / sv.min();
    if !(cond < 1e8) {
        return Err(Error::RankDeficiency(cond));
    }
    let u = svd.u.expect("left singular vectors requested");
    Ok(CMatrix::identity(n, n) - &u * u.adjoint())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Coarse grid steps `(theta, phi)` in radians.
    pub coarse_step: (f64, f64),
    /// Rounds of local refinement; each divides the step by `refine_factor`.
    pub refinements: usize,
    pub refine_factor: usize,
    /// Departure angle assumed for the target, radians.
    pub assumed_psi: f64,
}

impl EstimatorConfig {
    pub fn new(assumed_psi: f64) -> Self {
        let one_deg = 1f64.to_radians();
        Self { coarse_step: (one_deg, one_deg), refinements: 3, refine_factor: 10, assumed_psi }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.coarse_step;
        if !(a > 0.0 && b > 0.0) || self.refine_factor < 2 {
            return Err(Error::Config("grid steps must be positive and refinement at least 2x".into()));
        }
        Ok(())
    }
}

/// Azimuth in [-90, 90] deg, elevation in [0, 180] deg.
const THETA_RANGE: (f64, f64) = (-FRAC_PI_2, FRAC_PI_2);
const PHI_RANGE: (f64, f64) = (0.0, PI);

/// Matched snapshot `z = Y X^H b(psi)`.
pub fn matched_snapshot(frame: &EchoFrame, ula: &Ula<f64>, psi: f64) -> CVector {
    let b = ula.steering(psi);
    &frame.y * (frame.x.adjoint() * b)
}

/// `|a^H P z| / |P a|` with `a = a_r(theta, phi)` and `z` already filtered.
pub fn rd_objective(upa: &Upa<f64>, filter: &CMatrix, z: &CVector, theta: f64, phi: f64) -> f64 {
    let pa = filter * upa.steering(theta, phi);
    let n = pa.norm();
    if n <= 1e-12 {
        return 0.0;
    }
    pa.dotc(z).norm() / n
}

fn grid_points(lo: f64, hi: f64, center: f64, half_width: f64, step: f64) -> Vec<f64> {
    let start = (center - half_width).max(lo);
    let end = (center + half_width).min(hi);
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

fn argmax_on_grid<F: Fn(f64, f64) -> f64>(thetas: &[f64], phis: &[f64], f: F) -> (f64, f64, f64) {
    let mut best = (thetas[0], phis[0], f64::NEG_INFINITY);
    for &t in thetas {
        for &p in phis {
            let v = f(t, p);
            if v > best.2 {
                best = (t, p, v);
            }
        }
    }
    best
}

/// Reduced-dimension ML estimate of the target azimuth and elevation from
/// the spatially filtered frame.
pub fn rd_mle(
    frame: &EchoFrame,
    filter: &CMatrix,
    ula: &Ula<f64>,
    upa: &Upa<f64>,
    cfg: &EstimatorConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    let z = filter * matched_snapshot(frame, ula, cfg.assumed_psi);
    let objective = |t: f64, p: f64| rd_objective(upa, filter, &z, t, p);

    let (mut dt, mut dp) = cfg.coarse_step;
    let thetas = grid_points(THETA_RANGE.0, THETA_RANGE.1, 0.0, FRAC_PI_2, dt);
    let phis = grid_points(PHI_RANGE.0, PHI_RANGE.1, FRAC_PI_2, FRAC_PI_2, dp);
    let (mut t, mut p, coarse) = argmax_on_grid(&thetas, &phis, objective);
    if !(coarse > 0.0) || !coarse.is_finite() {
        return Err(Error::GridExhausted(format!("objective is {coarse} on the whole coarse grid")));
    }
    let mut value = coarse;
    for _ in 0..cfg.refinements {
        let (wt, wp) = (dt, dp);
        dt /= cfg.refine_factor as f64;
        dp /= cfg.refine_factor as f64;
        let thetas = grid_points(THETA_RANGE.0, THETA_RANGE.1, t, wt, dt);
        let phis = grid_points(PHI_RANGE.0, PHI_RANGE.1, p, wp, dp);
        let (nt, np, nv) = argmax_on_grid(&thetas, &phis, objective);
        if !(nv >= value) {
            return Err(Error::GridExhausted(format!("refinement lost the peak ({nv} < {value})")));
        }
        (t, p, value) = (nt, np, nv);
    }
    Ok((t, p))
}

/// Least-squares reflection coefficient `g^H y / |g|^2` with
/// `g = vec(a_r b^H X)`.
pub fn estimate_alpha(
    frame: &EchoFrame,
    ula: &Ula<f64>,
    upa: &Upa<f64>,
    theta: f64,
    phi: f64,
    psi: f64,
) -> Result<C64> {
    let a = upa.steering(theta, phi);
    let xb = frame.x.adjoint() * ula.steering(psi);
    let energy = a.norm_squared() * xb.norm_squared();
    if energy == 0.0 {
        return Err(Error::ZeroSteering);
    }
    Ok(a.dotc(&(&frame.y * xb)) / energy)
}

/// Angle grid for the MUSIC spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleGrid {
    pub theta: (f64, f64),
    pub phi: (f64, f64),
    pub step: f64,
}

impl Default for AngleGrid {
    fn default() -> Self {
        Self { theta: THETA_RANGE, phi: PHI_RANGE, step: 1f64.to_radians() }
    }
}

impl AngleGrid {
    fn axes(&self) -> (Vec<f64>, Vec<f64>) {
        let axis = |(lo, hi): (f64, f64)| {
            let n = ((hi - lo) / self.step + 1e-9).floor() as usize;
            (0..=n).map(|i| lo + i as f64 * self.step).collect::<Vec<_>>()
        };
        (axis(self.theta), axis(self.phi))
    }
}

/// MUSIC pseudo-spectrum `1 / |E_n^H a_r|^2` on the grid, row-major in
/// `(theta, phi)`, with the grid axes.
///
/// With a null filter `P` the covariance of `P Y` is used, the noise
/// subspace is taken inside the range of `P` (the nulled directions carry
/// no noise and would otherwise bias every peak) and the spectrum becomes
/// `|P a_r|^2 / |E_n^H a_r|^2`.
pub fn music_spectrum(
    frame: &EchoFrame,
    upa: &Upa<f64>,
    num_sources: usize,
    filter: Option<&CMatrix>,
    grid: &AngleGrid,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = upa.num_elements();
    let (y, rank) = match filter {
        Some(p) => (p * &frame.y, p.trace().re.round() as usize),
        None => (frame.y.clone(), n),
    };
    if num_sources == 0 || num_sources >= rank {
        return Err(Error::CovarianceRankDeficient(num_sources));
    }
    let r = &y * y.adjoint() / C64::from(frame.snapshots() as f64);
    let (values, vectors) = hermitian_eigen_desc(&r);
    if !(values[num_sources - 1] > 1e-12 * values[0].max(f64::MIN_POSITIVE)) {
        return Err(Error::CovarianceRankDeficient(num_sources));
    }
    let noise_space = vectors.columns(num_sources, rank - num_sources).into_owned();
    let (thetas, phis) = grid.axes();
    let mut spectrum = Vec::with_capacity(thetas.len() * phis.len());
    for &t in &thetas {
        for &p in &phis {
            let a = upa.steering(t, p);
            let proj = noise_space.adjoint() * &a;
            let gain = filter.map_or(1.0, |f| (f * &a).norm_squared());
            spectrum.push(gain / proj.norm_squared().max(1e-300));
        }
    }
    Ok((thetas, phis, spectrum))
}

/// The `num_sources` strongest local maxima of the MUSIC spectrum.
pub fn music_2d(
    frame: &EchoFrame,
    upa: &Upa<f64>,
    num_sources: usize,
    filter: Option<&CMatrix>,
    grid: &AngleGrid,
) -> Result<Vec<(f64, f64)>> {
    let (thetas, phis, s) = music_spectrum(frame, upa, num_sources, filter, grid)?;
    let (nt, np) = (thetas.len(), phis.len());
    let at = |i: usize, j: usize| s[i * np + j];
    let mut peaks = Vec::new();
    for i in 0..nt {
        for j in 0..np {
            let v = at(i, j);
            let mut is_peak = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0) || ii < 0 || jj < 0 || ii >= nt as i64 || jj >= np as i64 {
                        continue;
                    }
                    if at(ii as usize, jj as usize) > v {
                        is_peak = false;
                    }
                }
            }
            if is_peak {
                peaks.push((v, thetas[i], phis[j]));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(peaks.into_iter().take(num_sources).map(|(_, t, p)| (t, p)).collect())
}

/// MUSIC peaks refined by `rounds` local searches, each on a grid ten
/// times finer spanning one step of the previous grid around the peak.
pub fn music_2d_refined(
    frame: &EchoFrame,
    upa: &Upa<f64>,
    num_sources: usize,
    filter: Option<&CMatrix>,
    grid: &AngleGrid,
    rounds: usize,
) -> Result<Vec<(f64, f64)>> {
    let mut peaks = music_2d(frame, upa, num_sources, filter, grid)?;
    for peak in &mut peaks {
        let mut step = grid.step;
        for _ in 0..rounds {
            let local = AngleGrid {
                theta: ((peak.0 - step).max(grid.theta.0), (peak.0 + step).min(grid.theta.1)),
                phi: ((peak.1 - step).max(grid.phi.0), (peak.1 + step).min(grid.phi.1)),
                step: step / 10.0,
            };
            let (thetas, phis, s) = music_spectrum(frame, upa, num_sources, filter, &local)?;
            let best = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).expect("grid is non-empty");
            *peak = (thetas[best / phis.len()], phis[best % phis.len()]);
            step /= 10.0;
        }
    }
    Ok(peaks)
}

/// Writes a frame as CSV rows `block,row,col,re,im` with `block` either `y`
/// or `x`, preceded by a header.
pub fn write_frame_csv<W: Write>(frame: &EchoFrame, mut out: W) -> std::io::Result<()> {
    writeln!(out, "block,row,col,re,im")?;
    for (name, m) in [("y", &frame.y), ("x", &frame.x)] {
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                let z = m[(r, c)];
                writeln!(out, "{name},{r},{c},{:.17e},{:.17e}", z.re, z.im)?;
            }
        }
    }
    Ok(())
}

/// Squared error of an angle estimate, summed over azimuth and elevation.
pub fn squared_angle_error(est: (f64, f64), truth: &SensingLinkParams) -> f64 {
    (est.0 - truth.theta).powi(2) + (est.1 - truth.phi).powi(2)
}

/// Mean power of `Y`, handy for sanity checks.
pub fn mean_power(m: &CMatrix) -> f64 {
    fro_norm_sq(m) / (m.nrows() * m.ncols()) as f64
}
