//! Penalty dual decomposition for sum-rate maximization under a CRLB
//! ceiling.
//!
//! The equality `F = J(W)` between a free information matrix `F` and the FIM
//! of the precoder is moved into an augmented Lagrangian
//!
//! ```text
//! AL = r(nu, beta, W) - 1/(2 rho) |J(W) - F + rho Z|_F^2,
//! ```
//!
//! maximized block-wise over `(nu, beta)`, `(F, Omega)` (projection SDP) and
//! `W` (gradient projection) in the inner loop. The outer loop either
//! updates the dual `Z` or shrinks `rho`.
//!
//! The FIM is handled in normalized form `J^ = eta D J D` with
//! `D = diag(1, 1, d_psi, d_a, d_a)`. Rescaling the nuisance parameters
//! leaves the angle bound unchanged, so the bound of `J^` is the bound of `J`
//! divided by `eta` and the ceiling becomes `tr(Omega^-1) <= 1`. The `d` are
//! chosen so that all diagonal entries match under an isotropic transmit
//! covariance; the AoD entries are otherwise larger by roughly `M^2`.

use nalgebra::Matrix5;

use crate::error::{Error, Result};
use crate::fim::{crlb_from_fim, TargetParams, XiFactors};
use crate::fp::{quadratic_gradient, quadratic_part, sum_rate, FpState};
use crate::linalg::{fro_norm_sq, re_inner, C64, CMatrix};
use crate::scene::SceneConfig;
use crate::sdp::{project_onto_crlb_set_in, SdpOptions, SymBasis};

/// `A_lq = u[l,q] v_l v_q^H`; only the 5x5 weights and the M x 5 matrix `V`
/// are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyCoefficients {
    pub u: CMatrix,
    pub v: CMatrix,
}

impl PenaltyCoefficients {
    /// Raw coefficients with `Re tr(A_lq W W^H) = J[l,q]`.
    pub fn new(factors: &XiFactors, noise_radar: f64, snapshots: usize) -> Self {
        let scale = 2.0 * snapshots as f64 / noise_radar;
        Self { u: factors.u_gram() * C64::from(scale), v: factors.v_matrix() }
    }

    /// Diagonal of `J` under `R = I`, up to a common factor.
    fn isotropic_diagonal(&self) -> [f64; 5] {
        std::array::from_fn(|l| self.u[(l, l)].re * self.v.column(l).norm_squared())
    }

    /// Coefficients of the normalized FIM `eta D J D`.
    pub fn normalized(&self, eta: f64) -> Self {
        let diag = self.isotropic_diagonal();
        let angle = 0.5 * (diag[0] + diag[1]);
        let d: [f64; 5] =
            std::array::from_fn(|l| if l < 2 || diag[l] <= 0.0 { 1.0 } else { (angle / diag[l]).sqrt() });
        let u = CMatrix::from_fn(5, 5, |l, q| self.u[(l, q)] * (eta * d[l] * d[q]));
        Self { u, v: self.v.clone() }
    }

    /// Dense M x M matrix `A_lq`.
    pub fn dense(&self, l: usize, q: usize) -> CMatrix {
        let vl = self.v.column(l);
        let vq = self.v.column(q);
        vl * vq.adjoint() * self.u[(l, q)]
    }

    /// `J[l,q] = Re{u[l,q] (W^H v_q)^H (W^H v_l)}`.
    pub fn fim(&self, w: &CMatrix) -> Matrix5<f64> {
        let g = w.adjoint() * &self.v;
        let s = g.adjoint() * g;
        Matrix5::from_fn(|l, q| (self.u[(l, q)] * s[(q, l)]).re)
    }

    /// Subspace of symmetric matrices containing `J(W)` for every `W`.
    ///
    /// `J` depends on `W` only through `Q = B^H W W^H B` where `B` is an
    /// orthonormal basis of the columns of `V` (rank 2 here: `b` and its
    /// derivative), so the image of the Hermitian `Q` basis spans it.
    pub fn fim_span(&self) -> SymBasis {
        let svd = self.v.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let top = svd.singular_values.max();
        let cols: Vec<usize> =
            (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-10 * top).collect();
        let r = cols.len();
        let basis = CMatrix::from_fn(self.v.nrows(), r, |i, j| u[(i, cols[j])]);
        let c = basis.adjoint() * &self.v;
        let eval = |q: &CMatrix| {
            let s = c.adjoint() * q * &c;
            Matrix5::from_fn(|l, k| (self.u[(l, k)] * s[(k, l)]).re)
        };
        let mut spanning = Vec::new();
        for i in 0..r {
            for j in i..r {
                let mut q = CMatrix::zeros(r, r);
                q[(i, j)] = C64::new(1.0, 0.0);
                q[(j, i)] = C64::new(1.0, 0.0);
                spanning.push(eval(&q));
                if i != j {
                    let mut q = CMatrix::zeros(r, r);
                    q[(i, j)] = C64::new(0.0, 1.0);
                    q[(j, i)] = C64::new(0.0, -1.0);
                    spanning.push(eval(&q));
                }
            }
        }
        let interior = eval(&CMatrix::identity(r, r));
        SymBasis::from_spanning(&spanning, interior)
    }

    /// `2 d/dW* (1/2) sum_lq r_lq^2` with `r = J(W) - target`, i.e.
    /// `sum_lq r_lq (A_lq + A_lq^H) W`, evaluated as `2 V (r o U) V^H W`.
    pub fn residual_gradient(&self, residual: &Matrix5<f64>, w: &CMatrix) -> CMatrix {
        let weights = CMatrix::from_fn(5, 5, |l, q| self.u[(l, q)] * residual[(l, q)]);
        &self.v * (weights * (self.v.adjoint() * w)) * C64::from(2.0)
    }
}

/// `sqrt(P) W / |W|_F` when over budget, identity otherwise.
pub fn project_power(w: &CMatrix, power: f64) -> CMatrix {
    let n2 = fro_norm_sq(w);
    if n2 <= power {
        w.clone()
    } else {
        w * C64::from((power / n2).sqrt())
    }
}

/// How the information-matrix block enters the `W` objective.
#[derive(Clone, Copy)]
pub enum PenaltyTarget<'a> {
    /// `F~ = F - rho Z` held fixed.
    Fixed(Matrix5<f64>),
    /// `F` re-optimized for every trial `W`: `F(W)` is the projection of
    /// `J(W) + rho Z` onto the CRLB set, so the penalty becomes the squared
    /// distance of that point to the set. Ascent on this reduced objective
    /// moves `W` and `F` jointly.
    Projected { rho_z: Matrix5<f64>, span: &'a SymBasis, sdp: SdpOptions },
}

/// The `W`-dependent part of the augmented Lagrangian at fixed
/// `(nu, beta, Z, rho)`:
/// `h(W) = Re tr(N H~^H W) - |H~^H W|^2 - sum |beta|^2 s^2 - |J(W) - F~|^2 / (2 rho)`
/// with `F~ = F - rho Z`.
pub struct WObjective<'a> {
    pub channels: &'a CMatrix,
    pub noise: f64,
    pub fp: &'a FpState,
    pub coeffs: &'a PenaltyCoefficients,
    pub target: PenaltyTarget<'a>,
    pub rho: f64,
    pub power: f64,
}

impl WObjective<'_> {
    /// `J(W) - F~`, with `F~` evaluated at `w` in projected mode.
    pub fn residual(&self, w: &CMatrix) -> Matrix5<f64> {
        let j = self.coeffs.fim(w);
        match self.target {
            PenaltyTarget::Fixed(f_tilde) => j - f_tilde,
            PenaltyTarget::Projected { rho_z, span, sdp } => {
                let t = j + rho_z;
                t - project_onto_crlb_set_in(&t, 1.0, span, sdp).f
            }
        }
    }

    pub fn penalty(&self, w: &CMatrix) -> f64 {
        self.residual(w).norm_squared() / (2.0 * self.rho)
    }

    pub fn value(&self, w: &CMatrix) -> f64 {
        quadratic_part(self.fp, self.channels, w, self.noise) - self.penalty(w)
    }

    /// `2 dh/dW*`. In projected mode the distance function is differentiable
    /// with gradient equal to the projection residual, so the same formula
    /// applies.
    pub fn gradient(&self, w: &CMatrix) -> CMatrix {
        let residual = self.residual(w);
        quadratic_gradient(self.fp, self.channels, w)
            - self.coeffs.residual_gradient(&residual, w) * C64::from(1.0 / self.rho)
    }
}

/// Armijo sufficient-increase constant shared by all line searches.
pub const ARMIJO_SLOPE: f64 = 1e-4;
pub const ARMIJO_SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

/// One projected-gradient ascent step with backtracking. Returns the new
/// point and accepted step, or `None` if no step increases `f`.
pub fn projected_ascent_step<F, P>(
    x: &CMatrix,
    fx: f64,
    grad: &CMatrix,
    initial_step: f64,
    value: F,
    project: P,
) -> Option<(CMatrix, f64, f64)>
where
    F: Fn(&CMatrix) -> f64,
    P: Fn(&CMatrix) -> CMatrix,
{
    let mut step = initial_step;
    for _ in 0..MAX_BACKTRACKS {
        let cand = project(&(x + grad * C64::from(step)));
        let predicted = re_inner(grad, &(&cand - x));
        let fc = value(&cand);
        if predicted > 0.0 && fc >= fx + ARMIJO_SLOPE * predicted {
            return Some((cand, fc, step));
        }
        step *= ARMIJO_SHRINK;
    }
    None
}

/// A precoder block that can be ascended on the `W` objective. The fully
/// digital precoder and the hybrid architectures implement this.
pub trait PrecoderBlock {
    /// Effective M x K precoder.
    fn effective(&self) -> CMatrix;
    /// Increases (never decreases) `obj.value(self.effective())`.
    fn ascend(&mut self, obj: &WObjective) -> Result<()>;
    fn label(&self) -> &'static str;
}

/// Fully digital precoder updated by projected gradient ascent.
#[derive(Debug, Clone)]
pub struct DigitalPrecoder {
    pub w: CMatrix,
    pub power: f64,
    step: Option<f64>,
    pub steps_per_cycle: usize,
}

impl DigitalPrecoder {
    pub fn new(w: CMatrix, power: f64) -> Self {
        Self { w, power, step: None, steps_per_cycle: 100 }
    }
}

impl PrecoderBlock for DigitalPrecoder {
    fn effective(&self) -> CMatrix {
        self.w.clone()
    }

    fn ascend(&mut self, obj: &WObjective) -> Result<()> {
        let mut f = obj.value(&self.w);
        let mut g = obj.gradient(&self.w);
        for _ in 0..self.steps_per_cycle {
            let gn = fro_norm_sq(&g).sqrt();
            if gn == 0.0 {
                break;
            }
            let init = self
                .step
                .unwrap_or_else(|| 0.1 * fro_norm_sq(&self.w).sqrt().max(1e-12) / gn);
            let power = self.power;
            let Some((w, fw, _)) = projected_ascent_step(&self.w, f, &g, init, |w| obj.value(w), |w| {
                project_power(w, power)
            }) else {
                break;
            };
            let gain = fw - f;
            let g_new = obj.gradient(&w);
            // Barzilai-Borwein length for the next trial step.
            let s = &w - &self.w;
            let y = &g - &g_new;
            let sy = re_inner(&s, &y);
            if sy > 0.0 {
                self.step = Some(fro_norm_sq(&s) / sy);
            }
            self.w = w;
            f = fw;
            g = g_new;
            if gain <= 1e-12 * f.abs().max(1e-300) {
                break;
            }
        }
        Ok(())
    }

    fn label(&self) -> &'static str {
        "digital"
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PddConfig {
    /// Penalty decay `c` in (0, 1).
    pub penalty_decay: f64,
    /// Initial violation threshold `epsilon` (normalized FIM units).
    pub initial_violation_threshold: f64,
    /// `epsilon <- factor * H` after each dual update.
    pub threshold_decay: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub inner_tol: f64,
    pub violation_tol: f64,
    pub rate_tol: f64,
    /// Number of intervals in the initialization sweep over `mu` in [0, 1].
    pub mu_steps: usize,
    /// Re-project the information matrix inside the precoder line search
    /// instead of holding it fixed during the precoder block.
    pub joint_precoder_update: bool,
    pub sdp: SdpOptions,
}

impl Default for PddConfig {
    fn default() -> Self {
        Self {
            penalty_decay: 0.8,
            initial_violation_threshold: 1e-2,
            threshold_decay: 0.5,
            max_inner: 50,
            max_outer: 100,
            inner_tol: 1e-6,
            violation_tol: 1e-5,
            rate_tol: 1e-5,
            mu_steps: 100,
            joint_precoder_update: false,
            sdp: SdpOptions::default(),
        }
    }
}

impl PddConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_decay > 0.0 && self.penalty_decay < 1.0) {
            return Err(Error::Config("penalty decay must lie in (0, 1)".into()));
        }
        if !(self.initial_violation_threshold > 0.0) {
            return Err(Error::Config("violation threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Design data: channels seen by the optimizer, power, noise and the
/// (normalized) penalty coefficients of the target.
#[derive(Debug, Clone)]
pub struct PddProblem {
    pub channels: CMatrix,
    pub noise_comm: f64,
    pub power: f64,
    /// CRLB ceiling in rad^2.
    pub eta: f64,
    pub coeffs: PenaltyCoefficients,
    /// Subspace holding every achievable FIM; the information-matrix
    /// variable is restricted to it.
    pub span: SymBasis,
    /// Departure angles used by the initializer for the user beams.
    pub vue_psi: Vec<f64>,
    pub target_psi: f64,
}

impl PddProblem {
    pub fn new(
        scene: &SceneConfig,
        channels: CMatrix,
        vue_psi: Vec<f64>,
        target: &TargetParams,
    ) -> Self {
        let factors = XiFactors::new(target, &scene.ula(), &scene.upa());
        let raw = PenaltyCoefficients::new(&factors, scene.noise_radar_watts(), scene.snapshots);
        let eta = scene.crlb_threshold();
        let coeffs = raw.normalized(eta);
        Self {
            channels,
            noise_comm: scene.noise_comm_watts(),
            power: scene.power_watts(),
            eta,
            span: coeffs.fim_span(),
            coeffs,
            vue_psi,
            target_psi: target.psi,
        }
    }

    /// Normalized FIM of `w`.
    pub fn fim(&self, w: &CMatrix) -> Matrix5<f64> {
        self.coeffs.fim(w)
    }

    /// Trace of the angle CRLB in rad^2.
    pub fn crlb_trace(&self, w: &CMatrix) -> Result<f64> {
        crlb_from_fim(&self.fim(w)).map(|(_, t)| t * self.eta)
    }

    pub fn sum_rate(&self, w: &CMatrix) -> f64 {
        sum_rate(&self.channels, w, self.noise_comm)
    }
}

#[derive(Debug, Clone)]
pub struct Initialization {
    pub w: CMatrix,
    pub mu: f64,
    pub rho: f64,
}

/// Blends user beams toward the target beam until the CRLB ceiling holds,
/// then balances the penalty against the initial rate for `rho`.
pub fn init_beamformer(
    problem: &PddProblem,
    ula: &crate::arrays::Ula<f64>,
    cfg: &PddConfig,
) -> Result<Initialization> {
    let k = problem.vue_psi.len();
    let m = ula.num_elements;
    let mut users = CMatrix::zeros(m, k);
    for (col, &psi) in problem.vue_psi.iter().enumerate() {
        users.set_column(col, &ula.steering(psi));
    }
    let bt = ula.steering(problem.target_psi);
    let mut target = CMatrix::zeros(m, k);
    for col in 0..k {
        target.set_column(col, &bt);
    }
    let mut best = f64::INFINITY;
    for i in 0..=cfg.mu_steps {
        let mu = i as f64 / cfg.mu_steps as f64;
        let wi = &users * C64::from(1.0 - mu) + &target * C64::from(mu);
        let n2 = fro_norm_sq(&wi);
        if n2 == 0.0 {
            continue;
        }
        let w = wi * C64::from((problem.power / n2).sqrt());
        let tr = problem.crlb_trace(&w).unwrap_or(f64::INFINITY);
        best = best.min(tr);
        if tr <= problem.eta {
            let rate_nats = problem.sum_rate(&w) * std::f64::consts::LN_2;
            let j = problem.fim(&w);
            let rho = if rate_nats > 0.0 { j.norm_squared() / (2.0 * rate_nats) } else { 1.0 };
            return Ok(Initialization { w, mu, rho: rho.max(1e-12) });
        }
    }
    Err(Error::InfeasibleThreshold { best, threshold: problem.eta })
}

/// One row of the optimizer trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub outer: usize,
    pub inner_cycles: usize,
    pub al: f64,
    pub rate: f64,
    pub violation: f64,
    pub crlb_trace: f64,
    pub rho: f64,
    pub rho2: f64,
}

pub const TRACE_HEADER: &str = "arch,outer,inner_cycles,al,rate,violation,crlb_trace,rho1,rho2";

impl TraceRow {
    pub fn csv(&self, arch: &str) -> String {
        format!(
            "{},{},{},{:.12e},{:.12e},{:.6e},{:.6e},{:.6e},{:.6e}",
            arch,
            self.outer,
            self.inner_cycles,
            self.al,
            self.rate,
            self.violation,
            self.crlb_trace,
            self.rho,
            self.rho2
        )
    }
}

/// Mutable optimizer state besides the precoder.
#[derive(Debug, Clone)]
pub struct PddState {
    pub fp: FpState,
    pub f: Matrix5<f64>,
    pub omega: nalgebra::Matrix2<f64>,
    pub z: Matrix5<f64>,
    pub rho: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct PddOutcome<P> {
    pub precoder: P,
    pub w: CMatrix,
    pub state: PddState,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub violation: f64,
    pub rate: f64,
    pub crlb_trace: f64,
    pub init_mu: f64,
    /// Largest relative AL decrease seen inside any inner loop.
    pub worst_al_drop: f64,
}

impl<P> PddOutcome<P> {
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxOuterIterations { iterations: self.trace.len(), violation: self.violation })
        }
    }
}

/// Relative tolerance of the per-cycle monotonicity assertion. Every block
/// update is an exact maximizer or a safeguarded ascent step, so only
/// rounding can produce a decrease.
const MONOTONE_TOL: f64 = 1e-9;

fn al_value(problem: &PddProblem, state: &PddState, w: &CMatrix) -> f64 {
    let dual: f64 = state.fp.nu.iter().map(|v| v.ln_1p() - v).sum();
    let target = state.f - state.z * state.rho;
    let pen = (problem.fim(w) - target).norm_squared() / (2.0 * state.rho);
    dual + quadratic_part(&state.fp, &problem.channels, w, problem.noise_comm) - pen
}

fn sdp_step(problem: &PddProblem, state: &mut PddState, w: &CMatrix, cfg: &PddConfig, force: bool) {
    let target = problem.fim(w) + state.z * state.rho;
    let sol = project_onto_crlb_set_in(&target, 1.0, &problem.span, cfg.sdp);
    let new_obj = (target - sol.f).norm_squared();
    let old_obj = (target - state.f).norm_squared();
    if force || new_obj <= old_obj {
        state.f = sol.f;
        state.omega = sol.omega;
    }
}

/// Runs the double loop from a precoder that already satisfies the power
/// budget. `rho2` reports the hybrid penalty for the trace (0 for digital).
pub fn run_pdd<P, R>(
    problem: &PddProblem,
    mut precoder: P,
    rho: f64,
    init_mu: f64,
    cfg: &PddConfig,
    mut rho2: R,
) -> Result<PddOutcome<P>>
where
    P: PrecoderBlock,
    R: FnMut(&P) -> f64,
{
    cfg.validate()?;
    let mut w = precoder.effective();
    let mut state = PddState {
        fp: FpState::refresh(&problem.channels, &w, problem.noise_comm),
        f: Matrix5::zeros(),
        omega: nalgebra::Matrix2::zeros(),
        z: Matrix5::zeros(),
        rho,
        threshold: cfg.initial_violation_threshold,
    };
    sdp_step(problem, &mut state, &w, cfg, true);

    let mut trace = Vec::new();
    let mut prev_rate = problem.sum_rate(&w);
    let mut converged = false;
    let mut violation = f64::INFINITY;
    let mut worst_drop = 0.0f64;

    for outer in 0..cfg.max_outer {
        let mut al = al_value(problem, &state, &w);
        let mut cycles = 0;
        for _ in 0..cfg.max_inner {
            cycles += 1;
            let start = al;
            let mut check = |label: &str, prev: f64, now: f64| {
                let drop = (prev - now) / prev.abs().max(1.0);
                worst_drop = worst_drop.max(drop);
                assert!(
                    drop <= MONOTONE_TOL,
                    "augmented Lagrangian decreased in {label} update: {prev} -> {now}"
                );
            };

            state.fp = FpState::refresh(&problem.channels, &w, problem.noise_comm);
            let a1 = al_value(problem, &state, &w);
            check("fp", start, a1);

            sdp_step(problem, &mut state, &w, cfg, false);
            let a2 = al_value(problem, &state, &w);
            check("sdp", a1, a2);

            let target = if cfg.joint_precoder_update {
                PenaltyTarget::Projected { rho_z: state.z * state.rho, span: &problem.span, sdp: cfg.sdp }
            } else {
                PenaltyTarget::Fixed(state.f - state.z * state.rho)
            };
            let obj = WObjective {
                channels: &problem.channels,
                noise: problem.noise_comm,
                fp: &state.fp,
                coeffs: &problem.coeffs,
                target,
                rho: state.rho,
                power: problem.power,
            };
            precoder.ascend(&obj)?;
            w = precoder.effective();
            if cfg.joint_precoder_update {
                sdp_step(problem, &mut state, &w, cfg, false);
            }
            al = al_value(problem, &state, &w);
            check("precoder", a2, al);

            if (al - start).abs() <= cfg.inner_tol * al.abs().max(1.0) {
                break;
            }
        }

        let jw = problem.fim(&w);
        let diff = jw - state.f;
        violation = diff.amax();
        if violation <= state.threshold {
            state.z += diff / state.rho;
            state.threshold = cfg.threshold_decay * violation;
        } else {
            state.rho *= cfg.penalty_decay;
        }

        let rate = problem.sum_rate(&w);
        let crlb = problem.crlb_trace(&w).unwrap_or(f64::INFINITY);
        trace.push(TraceRow {
            outer,
            inner_cycles: cycles,
            al,
            rate,
            violation,
            crlb_trace: crlb,
            rho: state.rho,
            rho2: rho2(&precoder),
        });
        let rate_change = (rate - prev_rate).abs() / rate.abs().max(1e-12);
        prev_rate = rate;
        if violation < cfg.violation_tol && rate_change < cfg.rate_tol {
            converged = true;
            break;
        }
    }

    let rate = problem.sum_rate(&w);
    let crlb_trace = problem.crlb_trace(&w).unwrap_or(f64::INFINITY);
    Ok(PddOutcome {
        precoder,
        w,
        state,
        trace,
        converged,
        violation,
        rate,
        crlb_trace,
        init_mu,
        worst_al_drop: worst_drop,
    })
}

/// Initializes and runs the fully digital optimizer.
pub fn optimize_digital(
    problem: &PddProblem,
    ula: &crate::arrays::Ula<f64>,
    cfg: &PddConfig,
) -> Result<PddOutcome<DigitalPrecoder>> {
    let init = init_beamformer(problem, ula, cfg)?;
    let pre = DigitalPrecoder::new(init.w, problem.power);
    run_pdd(problem, pre, init.rho, init.mu, cfg, |_| 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrays::{Ula, Upa};
    use crate::fim::fim;
    use crate::linalg::c;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
        })
    }

    fn small_coeffs() -> (PenaltyCoefficients, TargetParams, Ula<f64>, Upa<f64>) {
        let (ula, upa) = (Ula::new(6), Upa::new(2, 3));
        let t = TargetParams { theta: 0.3, phi: 1.1, psi: 0.2, alpha: c(0.4, 0.3) };
        let f = XiFactors::new(&t, &ula, &upa);
        (PenaltyCoefficients::new(&f, 0.5, 7), t, ula, upa)
    }

    #[test]
    fn penalty_coefficients_reproduce_fim() {
        let (pc, t, ula, upa) = small_coeffs();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let w = random_matrix(&mut rng, 6, 2);
            let rx = &w * w.adjoint();
            let j = fim(&t, &rx, 0.5, 7, &ula, &upa).unwrap().j;
            for l in 0..5 {
                for q in 0..5 {
                    let a = pc.dense(l, q);
                    let via_a = (&a * &rx).trace().re;
                    assert!((via_a - j[(l, q)]).abs() <= 1e-10 * j.norm());
                    assert!((a.adjoint() - pc.dense(q, l)).norm() <= 1e-12 * a.norm().max(1.0));
                    assert!(crate::linalg::second_singular_ratio(&a) < 1e-10);
                }
            }
            assert!((pc.fim(&w) - j).norm() <= 1e-10 * j.norm());
        }
    }

    #[test]
    fn normalization_scales_crlb_by_eta() {
        let (pc, _, _, _) = small_coeffs();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_matrix(&mut rng, 6, 2);
        let raw = crlb_from_fim(&pc.fim(&w)).unwrap().1;
        let norm = crlb_from_fim(&pc.normalized(1e-3).fim(&w)).unwrap().1;
        assert!((norm * 1e-3 - raw).abs() < 1e-9 * raw);
    }

    #[test]
    fn fim_span_contains_every_fim() {
        let (pc, _, _, _) = small_coeffs();
        let span = pc.fim_span();
        assert_eq!(span.dim(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let w = random_matrix(&mut rng, 6, 3);
            let j = pc.fim(&w);
            assert!((span.project(&j) - j).norm() < 1e-10 * j.norm());
        }
        assert!(span.interior.symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_matrix(&mut rng, 4, 2);
        let p = fro_norm_sq(&w) / 4.0;
        let pw = project_power(&w, p);
        assert!((&pw - &w * c(0.5, 0.0)).norm() < 1e-12);
        assert_eq!(project_power(&w, 2.0 * fro_norm_sq(&w)), w);
        assert_eq!(project_power(&pw, p), pw);
    }

    fn objective_fixture(
        rng: &mut ChaCha8Rng,
    ) -> (CMatrix, FpState, PenaltyCoefficients, Matrix5<f64>, CMatrix) {
        let (pc, _, _, _) = small_coeffs();
        let pc = pc.normalized(1e-2);
        let h = random_matrix(rng, 6, 2);
        let w = random_matrix(rng, 6, 2);
        let fp = FpState::refresh(&h, &random_matrix(rng, 6, 2), 0.3);
        let a = Matrix5::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let ft = a + a.transpose();
        (h, fp, pc, ft, w)
    }

    #[test]
    fn w_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (h, fp, pc, ft, w) = objective_fixture(&mut rng);
            let obj = WObjective {
                channels: &h,
                noise: 0.3,
                fp: &fp,
                coeffs: &pc,
                target: PenaltyTarget::Fixed(ft),
                rho: 0.7,
                power: 1.0,
            };
            let g = obj.gradient(&w);
            let d = random_matrix(&mut rng, 6, 2);
            let eps = 1e-6;
            let f = |t: f64| obj.value(&(&w + &d * c(t, 0.0)));
            let fd = (f(eps) - f(-eps)) / (2.0 * eps);
            let an = re_inner(&g, &d);
            assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
        }
    }

    #[test]
    fn gradient_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, fp, pc, ft, w) = objective_fixture(&mut rng);
        let obj = |rho: f64, ft: Matrix5<f64>| WObjective {
            channels: &h,
            noise: 0.3,
            fp: &fp,
            coeffs: &pc,
            target: PenaltyTarget::Fixed(ft),
            rho,
            power: 1.0,
        };
        let fp_only = quadratic_gradient(&fp, &h, &w);
        let big = obj(1e14, ft).gradient(&w);
        assert!((big - &fp_only).norm() < 1e-8 * fp_only.norm());
        let zero = CMatrix::zeros(6, 2);
        let at_zero = obj(1.0, Matrix5::zeros()).gradient(&zero);
        let lin = quadratic_gradient(&fp, &h, &zero);
        assert!((at_zero - lin).norm() < 1e-14);
    }
}
