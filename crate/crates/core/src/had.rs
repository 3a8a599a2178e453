//! Hybrid analog-digital precoding `W = F_a F_d`.
//!
//! Fully connected: `F_a` is M x N_rf with unit-modulus entries.
//! Partially connected: RF chain `i` drives antennas `i*N_p .. (i+1)*N_p`
//! only, so `F_a` is block diagonal and fully described by the stacked
//! phase vector `p` of length M.
//!
//! Both stages reuse the `W` objective of the PDD inner loop through the
//! chain rule: with `G = 2 dh/dW*`, the digital gradient is `F_a^H G` and the
//! analog gradient is `G F_d^H`.

use crate::error::{Error, Result};
use crate::fp::quadratic_part;
use crate::linalg::{cis, fro_norm_sq, re_inner, C64, CMatrix, CVector};
use crate::pdd::{
    init_beamformer, projected_ascent_step, run_pdd, PddConfig, PddOutcome, PddProblem,
    PrecoderBlock, WObjective, ARMIJO_SHRINK, ARMIJO_SLOPE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HadArchitecture {
    FullyConnected,
    PartiallyConnected,
}

impl HadArchitecture {
    pub fn label(self) -> &'static str {
        match self {
            Self::FullyConnected => "fc",
            Self::PartiallyConnected => "pc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HadBeamformer {
    pub arch: HadArchitecture,
    pub fa: CMatrix,
    pub fd: CMatrix,
}

impl HadBeamformer {
    pub fn effective(&self) -> CMatrix {
        &self.fa * &self.fd
    }

    pub fn num_rf(&self) -> usize {
        self.fa.ncols()
    }

    /// Stacked phases `p` of a partially connected `F_a`.
    pub fn phases(&self) -> CVector {
        let n_p = self.fa.nrows() / self.num_rf();
        CVector::from_fn(self.fa.nrows(), |m, _| self.fa[(m, m / n_p)])
    }
}

/// Antennas per RF chain in the partially connected layout.
pub fn subarray_len(m: usize, n_rf: usize) -> Result<usize> {
    if n_rf == 0 || m % n_rf != 0 {
        return Err(Error::Config(format!(
            "partially connected array needs N_rf dividing M (M = {m}, N_rf = {n_rf})"
        )));
    }
    Ok(m / n_rf)
}

/// Block-diagonal `F_a` with blocks `p_i` of length `len(p) / n_rf`.
pub fn block_diagonal(p: &CVector, n_rf: usize) -> CMatrix {
    let n_p = p.len() / n_rf;
    CMatrix::from_fn(p.len(), n_rf, |m, i| if m / n_p == i { p[m] } else { C64::new(0.0, 0.0) })
}

/// Diagonal of `D_k = diag(d_k ⊗ 1_{N_p})`, so that `F_a d_k = D_k p`.
pub fn dk_transform(d: &CVector, n_p: usize) -> CVector {
    CVector::from_fn(d.len() * n_p, |m, _| d[m / n_p])
}

/// `F_a^H G`: gradient of `h(F_a F_d)` with respect to `F_d`.
pub fn grad_fd(fa: &CMatrix, fd: &CMatrix, obj: &WObjective) -> CMatrix {
    fa.adjoint() * obj.gradient(&(fa * fd))
}

/// Scales `F_d` so that `|F_a F_d|_F^2 <= P`.
pub fn project_fd(fa: &CMatrix, fd: &CMatrix, power: f64) -> CMatrix {
    let n2 = fro_norm_sq(&(fa * fd));
    if n2 <= power {
        fd.clone()
    } else {
        fd * C64::from((power / n2).sqrt())
    }
}

/// `Phi = max(0, |F_a F_d|^2 - P)^2`.
pub fn power_penalty(w: &CMatrix, power: f64) -> f64 {
    (fro_norm_sq(w) - power).max(0.0).powi(2)
}

/// `2 dPhi/dF_a* = 4 (|W|^2 - P) W F_d^H` over budget, zero otherwise.
pub fn power_penalty_gradient(fa: &CMatrix, fd: &CMatrix, power: f64) -> CMatrix {
    let w = fa * fd;
    let excess = fro_norm_sq(&w) - power;
    if excess <= 0.0 {
        CMatrix::zeros(fa.nrows(), fa.ncols())
    } else {
        w * fd.adjoint() * C64::from(4.0 * excess)
    }
}

/// Projection onto the tangent space of the complex circle manifold at `x`:
/// `v - Re{v ⊙ x*} ⊙ x`.
pub fn tangent_project(x: &CMatrix, v: &CMatrix) -> CMatrix {
    x.zip_map(v, |xi, vi| vi - xi * (vi * xi.conj()).re)
}

const RETRACTION_FLOOR: f64 = 1e-14;

/// Elementwise normalization. An entry that collapses to (near) zero keeps
/// the phase it had in `prev`.
pub fn retract(prev: &CMatrix, moved: &CMatrix) -> CMatrix {
    prev.zip_map(moved, |p, z| {
        let r = z.norm();
        if r < RETRACTION_FLOOR {
            cis(p.arg())
        } else {
            z / r
        }
    })
}

/// Euclidean gradient of `h_f(F_a) = h(F_a F_d) - Phi / rho2`.
pub fn analog_gradient_fc(
    fa: &CMatrix,
    fd: &CMatrix,
    obj: &WObjective,
    rho2: f64,
) -> CMatrix {
    obj.gradient(&(fa * fd)) * fd.adjoint()
        - power_penalty_gradient(fa, fd, obj.power) * C64::from(1.0 / rho2)
}

pub fn analog_value_fc(fa: &CMatrix, fd: &CMatrix, obj: &WObjective, rho2: f64) -> f64 {
    let w = fa * fd;
    obj.value(&w) - power_penalty(&w, obj.power) / rho2
}

/// Euclidean gradient of `h_p(p) = h(F_a(p) F_d)`: the support entries of
/// `G F_d^H`, i.e. `sum_k D_k^H g_k`.
pub fn phase_gradient_pc(p: &CVector, fd: &CMatrix, obj: &WObjective) -> CVector {
    let n_rf = fd.nrows();
    let n_p = p.len() / n_rf;
    let fa = block_diagonal(p, n_rf);
    let full = obj.gradient(&(&fa * fd)) * fd.adjoint();
    CVector::from_fn(p.len(), |m, _| full[(m, m / n_p)])
}

pub fn phase_value_pc(p: &CVector, fd: &CMatrix, obj: &WObjective) -> f64 {
    obj.value(&(block_diagonal(p, fd.nrows()) * fd))
}

const MAX_BACKTRACKS: usize = 60;

/// One Armijo step along the Riemannian gradient with retraction. Returns
/// the new point, its value and the accepted step, or `None` when no step
/// length increases `value`.
pub fn manifold_ascent_step<F>(
    x: &CMatrix,
    fx: f64,
    egrad: &CMatrix,
    initial_step: f64,
    value: F,
) -> Option<(CMatrix, f64, f64)>
where
    F: Fn(&CMatrix) -> f64,
{
    let rgrad = tangent_project(x, egrad);
    let slope = fro_norm_sq(&rgrad);
    if slope == 0.0 || !slope.is_finite() {
        return None;
    }
    let mut step = initial_step;
    for _ in 0..MAX_BACKTRACKS {
        let cand = retract(x, &(x + &rgrad * C64::from(step)));
        let fc = value(&cand);
        if fc >= fx + ARMIJO_SLOPE * step * slope && fc > fx {
            return Some((cand, fc, step));
        }
        step *= ARMIJO_SHRINK;
    }
    None
}

/// One fully connected analog step on `h_f` from the given trial step.
pub fn riemannian_step_fc(
    fa: &CMatrix,
    fd: &CMatrix,
    obj: &WObjective,
    rho2: f64,
    initial_step: f64,
) -> Option<(CMatrix, f64, f64)> {
    let fx = analog_value_fc(fa, fd, obj, rho2);
    let g = analog_gradient_fc(fa, fd, obj, rho2);
    manifold_ascent_step(fa, fx, &g, initial_step, |x| analog_value_fc(x, fd, obj, rho2))
}

/// One partially connected analog step on `h_p`. The transmit power does
/// not depend on `p`, so no penalty is needed.
pub fn riemannian_step_pc(
    p: &CVector,
    fd: &CMatrix,
    obj: &WObjective,
    initial_step: f64,
) -> Option<(CVector, f64, f64)> {
    let x = CMatrix::from_column_slice(p.len(), 1, p.as_slice());
    let fx = phase_value_pc(p, fd, obj);
    let g = phase_gradient_pc(p, fd, obj);
    let g = CMatrix::from_column_slice(g.len(), 1, g.as_slice());
    let as_vec = |m: &CMatrix| CVector::from_column_slice(m.as_slice());
    manifold_ascent_step(&x, fx, &g, initial_step, |m| phase_value_pc(&as_vec(m), fd, obj))
        .map(|(m, f, s)| (as_vec(&m), f, s))
}

#[derive(Debug, Clone, Copy)]
pub struct HadConfig {
    /// Accepted digital steps per stage.
    pub digital_steps: usize,
    /// Accepted analog steps per stage.
    pub analog_steps: usize,
    /// Digital/analog alternations per visit of the precoder block.
    pub alternations: usize,
    /// Decay of the power-penalty weight after each analog stage.
    pub penalty_decay: f64,
    pub decomposition_rounds: usize,
}

impl Default for HadConfig {
    fn default() -> Self {
        Self {
            digital_steps: 20,
            analog_steps: 20,
            alternations: 5,
            penalty_decay: 0.8,
            decomposition_rounds: 50,
        }
    }
}

/// Hybrid precoder plugged into the PDD loop as the `W` block.
#[derive(Debug, Clone)]
pub struct HadPrecoder {
    pub bf: HadBeamformer,
    pub power: f64,
    /// Power-penalty weight of the fully connected analog stage; set on
    /// first use.
    pub rho2: Option<f64>,
    rho2_floor: f64,
    cfg: HadConfig,
    digital_step: Option<f64>,
    analog_step: Option<f64>,
}

impl HadPrecoder {
    pub fn new(bf: HadBeamformer, power: f64, cfg: HadConfig) -> Self {
        Self { bf, power, rho2: None, rho2_floor: 0.0, cfg, digital_step: None, analog_step: None }
    }

    /// Projected gradient ascent on `F_d`; returns the new objective value.
    fn digital_stage(&mut self, obj: &WObjective, mut f: f64) -> f64 {
        let fa = self.bf.fa.clone();
        let power = self.power;
        let value = |fd: &CMatrix| obj.value(&(&fa * fd));
        let mut g = grad_fd(&fa, &self.bf.fd, obj);
        for _ in 0..self.cfg.digital_steps {
            let gn = fro_norm_sq(&g).sqrt();
            if gn == 0.0 {
                break;
            }
            let init = self
                .digital_step
                .unwrap_or_else(|| 0.1 * fro_norm_sq(&self.bf.fd).sqrt().max(1e-12) / gn);
            let Some((fd, fv, _)) =
                projected_ascent_step(&self.bf.fd, f, &g, init, value, |x| project_fd(&fa, x, power))
            else {
                break;
            };
            let g_new = grad_fd(&fa, &fd, obj);
            let s = &fd - &self.bf.fd;
            let sy = re_inner(&s, &(&g - &g_new));
            if sy > 0.0 {
                self.digital_step = Some(fro_norm_sq(&s) / sy);
            }
            let gain = fv - f;
            self.bf.fd = fd;
            f = fv;
            g = g_new;
            if gain <= 1e-12 * f.abs().max(1e-300) {
                break;
            }
        }
        f
    }

    /// Manifold ascent on the analog weights; returns the new value of `h`.
    fn analog_stage(&mut self, obj: &WObjective, f: f64) -> f64 {
        match self.bf.arch {
            HadArchitecture::FullyConnected => self.analog_stage_fc(obj, f),
            HadArchitecture::PartiallyConnected => self.analog_stage_pc(obj, f),
        }
    }

    fn analog_stage_fc(&mut self, obj: &WObjective, f: f64) -> f64 {
        let rho2 = *self.rho2.get_or_insert_with(|| {
            let fp = quadratic_part(obj.fp, obj.channels, &self.bf.effective(), obj.noise).abs();
            // A 10% power overshoot costs 10% of the rate part.
            0.1 * self.power * self.power / fp.max(1e-300)
        });
        if self.rho2_floor == 0.0 {
            self.rho2_floor = rho2 * 1e-12;
        }
        let saved = self.bf.clone();
        let fd = self.bf.fd.clone();
        for _ in 0..self.cfg.analog_steps {
            let init = self.analog_step.unwrap_or(0.1);
            match riemannian_step_fc(&self.bf.fa, &fd, obj, rho2, init) {
                Some((fa, _, step)) => {
                    self.bf.fa = fa;
                    self.analog_step = Some(2.0 * step);
                }
                None => break,
            }
        }
        self.rho2 = Some((rho2 * self.cfg.penalty_decay).max(self.rho2_floor));
        // The penalty only discourages overshoot; restore feasibility and
        // keep the stage only if it paid off.
        self.bf.fd = project_fd(&self.bf.fa, &self.bf.fd, self.power);
        let fnew = obj.value(&self.bf.effective());
        if fnew >= f {
            fnew
        } else {
            self.bf = saved;
            f
        }
    }

    fn analog_stage_pc(&mut self, obj: &WObjective, mut f: f64) -> f64 {
        let mut p = self.bf.phases();
        let n_rf = self.bf.num_rf();
        for _ in 0..self.cfg.analog_steps {
            let init = self.analog_step.unwrap_or(0.1);
            match riemannian_step_pc(&p, &self.bf.fd, obj, init) {
                Some((pn, fv, step)) => {
                    p = pn;
                    f = fv;
                    self.analog_step = Some(2.0 * step);
                }
                None => break,
            }
        }
        self.bf.fa = block_diagonal(&p, n_rf);
        f
    }
}

impl PrecoderBlock for HadPrecoder {
    fn effective(&self) -> CMatrix {
        self.bf.effective()
    }

    fn ascend(&mut self, obj: &WObjective) -> Result<()> {
        let mut f = obj.value(&self.bf.effective());
        for _ in 0..self.cfg.alternations {
            let start = f;
            f = self.digital_stage(obj, f);
            f = self.analog_stage(obj, f);
            if f - start <= 1e-10 * f.abs().max(1e-300) {
                break;
            }
        }
        Ok(())
    }

    fn label(&self) -> &'static str {
        self.bf.arch.label()
    }
}

/// Least-squares `F_d` for a fixed `F_a`.
fn least_squares_fd(fa: &CMatrix, w: &CMatrix) -> CMatrix {
    let svd = fa.clone().svd(true, true);
    svd.solve(w, 1e-12).expect("both factors requested")
}

/// Fully connected start: two unit-modulus columns per stream reproduce
/// any entry of magnitude at most 2 exactly, so `W` is recovered when
/// `N_rf >= 2K`. Otherwise the phases of the leading left singular vectors.
fn initial_analog_fc(w: &CMatrix, n_rf: usize) -> CMatrix {
    let (m, k) = w.shape();
    let mut fa = CMatrix::from_element(m, n_rf, C64::new(1.0, 0.0));
    if n_rf >= 2 * k {
        let scale = w.iter().map(|z| z.norm()).fold(0.0, f64::max) / 2.0;
        if scale == 0.0 {
            return fa;
        }
        for col in 0..k {
            for row in 0..m {
                let z = w[(row, col)] / scale;
                let spread = (z.norm() / 2.0).min(1.0).acos();
                fa[(row, 2 * col)] = cis(z.arg() + spread);
                fa[(row, 2 * col + 1)] = cis(z.arg() - spread);
            }
        }
        return fa;
    }
    let svd = w.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    for col in 0..n_rf.min(u.ncols()) {
        for row in 0..m {
            let z = u[(row, col)];
            fa[(row, col)] = if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) };
        }
    }
    fa
}

/// Decomposes a digital precoder into hybrid factors by alternating least
/// squares and returns the best iterate, rescaled to the power budget.
pub fn decompose_baseline(
    w: &CMatrix,
    n_rf: usize,
    arch: HadArchitecture,
    power: f64,
    rounds: usize,
) -> Result<HadBeamformer> {
    let (m, k) = w.shape();
    if n_rf == 0 {
        return Err(Error::Config("at least one RF chain is required".into()));
    }
    let residual = |fa: &CMatrix, fd: &CMatrix| fro_norm_sq(&(w - fa * fd));
    let (mut fa, mut fd) = match arch {
        HadArchitecture::FullyConnected => {
            let fa = initial_analog_fc(w, n_rf);
            let fd = least_squares_fd(&fa, w);
            (fa, fd)
        }
        HadArchitecture::PartiallyConnected => {
            let n_p = subarray_len(m, n_rf)?;
            let mut p = CVector::from_element(m, C64::new(1.0, 0.0));
            let mut fd = CMatrix::zeros(n_rf, k);
            for i in 0..n_rf {
                let block = w.rows(i * n_p, n_p).into_owned();
                let svd = block.svd(true, false);
                let u = svd.u.expect("left singular vectors requested");
                for r in 0..n_p {
                    let z = u[(r, 0)];
                    p[i * n_p + r] = if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) };
                }
            }
            let fa = block_diagonal(&p, n_rf);
            pc_fd_update(&fa, w, n_p, &mut fd);
            (fa, fd)
        }
    };
    let mut best = (fa.clone(), fd.clone(), residual(&fa, &fd));
    for _ in 0..rounds {
        let product = w * fd.adjoint();
        fa = match arch {
            HadArchitecture::FullyConnected => {
                product.map(|z| if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) })
            }
            HadArchitecture::PartiallyConnected => {
                let n_p = m / n_rf;
                let p = CVector::from_fn(m, |row, _| {
                    let z = product[(row, row / n_p)];
                    if z.norm() > 0.0 { z / z.norm() } else { fa[(row, row / n_p)] }
                });
                block_diagonal(&p, n_rf)
            }
        };
        match arch {
            HadArchitecture::FullyConnected => fd = least_squares_fd(&fa, w),
            HadArchitecture::PartiallyConnected => pc_fd_update(&fa, w, m / n_rf, &mut fd),
        }
        let r = residual(&fa, &fd);
        if r < best.2 {
            best = (fa.clone(), fd.clone(), r);
        }
    }
    let (fa, fd, _) = best;
    let fd = project_fd(&fa, &fd, power);
    Ok(HadBeamformer { arch, fa, fd })
}

/// Row `i` of `F_d` is `p_i^H W_i / N_p` for a block-diagonal `F_a`.
fn pc_fd_update(fa: &CMatrix, w: &CMatrix, n_p: usize, fd: &mut CMatrix) {
    for i in 0..fd.nrows() {
        let p = fa.view((i * n_p, i), (n_p, 1));
        let row = p.adjoint() * w.rows(i * n_p, n_p) / C64::from(n_p as f64);
        fd.set_row(i, &row.row(0));
    }
}

/// Initializes from the digital heuristic, decomposes it and runs the PDD
/// loop with the hybrid precoder as the `W` block.
pub fn optimize_had(
    problem: &PddProblem,
    ula: &crate::arrays::Ula<f64>,
    n_rf: usize,
    arch: HadArchitecture,
    cfg: &PddConfig,
    had: &HadConfig,
) -> Result<PddOutcome<HadPrecoder>> {
    if arch == HadArchitecture::PartiallyConnected {
        subarray_len(problem.channels.nrows(), n_rf)?;
    }
    let init = init_beamformer(problem, ula, cfg)?;
    let bf = decompose_baseline(&init.w, n_rf, arch, problem.power, had.decomposition_rounds)?;
    let pre = HadPrecoder::new(bf, problem.power, *had);
    let mut out = run_pdd(problem, pre, init.rho, init.mu, cfg, |p: &HadPrecoder| p.rho2.unwrap_or(0.0))?;
    // The analog stage already restores feasibility; this guards rounding.
    let bf = &mut out.precoder.bf;
    bf.fd = project_fd(&bf.fa, &bf.fd, problem.power);
    out.w = bf.effective();
    out.rate = problem.sum_rate(&out.w);
    out.crlb_trace = problem.crlb_trace(&out.w).unwrap_or(f64::INFINITY);
    Ok(out)
}
