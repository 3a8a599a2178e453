//! Acceptance suite: one pass/fail line per criterion, non-zero exit if any
//! criterion fails. Runs as a plain binary so the lines are always printed.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::Matrix5;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use ssac::arrays::{Ula, Upa};
use ssac::channel::mrt_beamformer;
use ssac::fim::{fim, TargetParams, XiFactors};
use ssac::fp::FpState;
use ssac::had::{
    analog_gradient_fc, analog_value_fc, block_diagonal, decompose_baseline, dk_transform, grad_fd,
    phase_gradient_pc, phase_value_pc, project_fd, retract, tangent_project, HadArchitecture,
};
use ssac::harness::stats::{mean, paired_difference_interval};
use ssac::harness::trial::{beam_gains, evaluate, mrt};
use ssac::harness::{execute, solve, Arch, CsiMode, ExperimentKind, ExperimentSpec, Solution, SolverConfig, TrialContext};
use ssac::linalg::{c, cis, fro_norm_sq, re_inner, C64, CMatrix, CVector};
use ssac::pdd::{project_power, PenaltyCoefficients, PenaltyTarget, WObjective};
use ssac::scene::SceneConfig;

const SEED: u64 = 2024;
const SEEDS: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

fn random_symmetric(rng: &mut ChaCha8Rng) -> Matrix5<f64> {
    let a = Matrix5::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    (a + a.transpose()) * 0.5
}

/// Richardson-extrapolated central difference of `f` at 0.
fn directional<F: Fn(f64) -> f64>(f: F, t: f64) -> f64 {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (4.0 * d(t / 2.0) - d(t)) / 3.0
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

struct GradFixture {
    h: CMatrix,
    fp: FpState,
    coeffs: PenaltyCoefficients,
    f_tilde: Matrix5<f64>,
    rho: f64,
    noise: f64,
}

impl GradFixture {
    fn new(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Self {
        let ula = Ula::new(m);
        let upa = Upa::new(2, 2);
        let t = TargetParams {
            theta: rng.random_range(-1.2..1.2),
            phi: rng.random_range(0.4..2.7),
            psi: rng.random_range(-1.2..1.2),
            alpha: c(rng.sample(StandardNormal), rng.sample(StandardNormal)),
        };
        let coeffs = PenaltyCoefficients::new(&XiFactors::new(&t, &ula, &upa), 1.0, 10).normalized(0.1);
        let h = gaussian(rng, m, k);
        let noise = 0.5;
        let w0 = gaussian(rng, m, k);
        let fp = FpState::refresh(&h, &w0, noise);
        Self { h, fp, coeffs, f_tilde: random_symmetric(rng), rho: rng.random_range(0.5..5.0), noise }
    }

    fn objective(&self, power: f64) -> WObjective<'_> {
        WObjective {
            channels: &self.h,
            noise: self.noise,
            fp: &self.fp,
            coeffs: &self.coeffs,
            target: PenaltyTarget::Fixed(self.f_tilde),
            rho: self.rho,
            power,
        }
    }
}

fn criterion_gradients() -> Outcome {
    const INSTANCES: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = [0.0f64; 4];
    for _ in 0..INSTANCES {
        let m = [4, 6, 8][rng.random_range(0..3)];
        let k = rng.random_range(1..=3);
        let fx = GradFixture::new(&mut rng, m, k);

        // h_w
        let obj = fx.objective(1.0);
        let w = gaussian(&mut rng, m, k);
        let d = gaussian(&mut rng, m, k);
        let a = re_inner(&obj.gradient(&w), &d);
        let n = directional(|t| obj.value(&(&w + &d * C64::from(t))), 1e-4);
        worst[0] = worst[0].max(rel_err(a, n));

        // h_d
        let n_rf = k + rng.random_range(0..2);
        let fa = CMatrix::from_fn(m, n_rf, |_, _| cis(rng.random_range(-PI..PI)));
        let fd = gaussian(&mut rng, n_rf, k);
        let dd = gaussian(&mut rng, n_rf, k);
        let a = re_inner(&grad_fd(&fa, &fd, &obj), &dd);
        let n = directional(|t| obj.value(&(&fa * (&fd + &dd * C64::from(t)))), 1e-4);
        worst[1] = worst[1].max(rel_err(a, n));

        // h_f with the power penalty active
        let power = 0.6 * fro_norm_sq(&(&fa * &fd));
        let obj_p = fx.objective(power);
        let rho2 = rng.random_range(1.0..10.0) * power * power;
        let da = gaussian(&mut rng, m, n_rf);
        let a = re_inner(&analog_gradient_fc(&fa, &fd, &obj_p, rho2), &da);
        let n = directional(|t| analog_value_fc(&(&fa + &da * C64::from(t)), &fd, &obj_p, rho2), 1e-5);
        worst[2] = worst[2].max(rel_err(a, n));

        // h_p on a partially connected layout
        let n_rf = [1, 2][rng.random_range(0..2)];
        let p = CVector::from_fn(m, |_, _| cis(rng.random_range(-PI..PI)));
        let fd = gaussian(&mut rng, n_rf, k);
        let dp = CVector::from_fn(m, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        let g = phase_gradient_pc(&p, &fd, &obj);
        let a = g.iter().zip(dp.iter()).map(|(x, y)| (x.conj() * y).re).sum::<f64>();
        let n = directional(|t| phase_value_pc(&(&p + &dp * C64::from(t)), &fd, &obj), 1e-4);
        worst[3] = worst[3].max(rel_err(a, n));
    }
    let pass = worst.iter().all(|&e| e < 1e-6);
    outcome(
        pass,
        format!(
            "{INSTANCES} instances each, worst rel err h_w {:.1e}, h_d {:.1e}, h_f {:.1e}, h_p {:.1e} (< 1e-6)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn criterion_fim_oracle() -> Outcome {
    let (m, n_h, n_v, l) = (4, 2, 2, 8);
    let (ula, upa) = (Ula::new(m), Upa::new(n_h, n_v));
    let noise = 0.7;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = gaussian(&mut rng, m, l);
        let xi0 = [
            rng.random_range(-1.0..1.0),
            rng.random_range(0.5..2.6),
            rng.random_range(-1.0..1.0),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ];
        let mean_of = |xi: &[f64; 5]| {
            let a = upa.steering(xi[0], xi[1]);
            let b = ula.steering(xi[2]);
            (a * (b.adjoint() * &x)) * c(xi[3], xi[4])
        };
        let mu0 = mean_of(&xi0);
        // Expected negative log-likelihood up to a constant.
        let enll = |xi: &[f64; 5]| fro_norm_sq(&(&mu0 - mean_of(xi))) / noise;
        let steps = [1e-4, 1e-4, 1e-4, 1e-4, 1e-4];
        let mut hess = Matrix5::zeros();
        for i in 0..5 {
            for j in 0..5 {
                let at = |si: f64, sj: f64| {
                    let mut xi = xi0;
                    xi[i] += si * steps[i];
                    xi[j] += sj * steps[j];
                    enll(&xi)
                };
                hess[(i, j)] =
                    (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * steps[i] * steps[j]);
            }
        }
        let t = TargetParams { theta: xi0[0], phi: xi0[1], psi: xi0[2], alpha: c(xi0[3], xi0[4]) };
        let rx = &x * x.adjoint() / C64::from(l as f64);
        let j = fim(&t, &rx, noise, l, &ula, &upa).expect("valid covariance").j;
        for r in 0..5 {
            for q in 0..5 {
                let scale = (j[(r, r)] * j[(q, q)]).sqrt();
                worst = worst.max((hess[(r, q)] - j[(r, q)]).abs() / scale);
            }
        }
    }
    outcome(worst < 1e-4, format!("M=4 N=4 L=8, 20 instances, worst normalized entry error {worst:.1e} (< 1e-4)"))
}

fn criterion_crlb_validation() -> Outcome {
    let mut spec = ExperimentSpec::new(SceneConfig::desk(), ExperimentKind::RmseVsPower);
    spec.trials = 200;
    spec.seed = SEED;
    let report = match execute(&spec) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("experiment failed: {e}")),
    };
    let value = |x: f64, metric: &str| {
        report.rows.iter().find(|r| r.x == x && r.metric == metric).map(|r| (r.mean, r.stderr.unwrap_or(0.0)))
    };
    let mut pass = report.failed_trials == 0;
    let mut parts = Vec::new();
    for &x in &spec.grid {
        let (Some((rmse, se)), Some((bound, _))) = (value(x, "rmse_rdmle"), value(x, "sqrt_crlb")) else {
            return outcome(false, format!("missing rows at {x} dBm"));
        };
        pass &= rmse >= bound;
        parts.push(format!("{x:.0}dBm {:.3}±{:.3}", rmse / bound, se / bound));
    }
    let top = *spec.grid.last().expect("grid is non-empty");
    let (rmse, _) = value(top, "rmse_rdmle").expect("checked above");
    let (bound, _) = value(top, "sqrt_crlb").expect("checked above");
    let within = rmse <= 2f64.sqrt() * bound;
    pass &= within;
    outcome(
        pass,
        format!(
            "200 trials, RMSE/sqrt(CRLB) {} (>= 1 everywhere, <= 1.414 at {top:.0} dBm)",
            parts.join(", ")
        ),
    )
}

/// Solutions of one architecture on the shared seeds, perfect CSI.
fn solve_all(scene: &SceneConfig, arch: Arch, csi: CsiMode) -> Vec<(TrialContext, ssac::Result<Solution>)> {
    (0..SEEDS)
        .into_par_iter()
        .map(|t| {
            let ctx = TrialContext::draw(scene, SEED, t, csi).expect("desk trial draws");
            let sol = solve(&ctx, arch, &SolverConfig::default());
            (ctx, sol)
        })
        .collect()
}

fn criterion_convergence(runs: &[(TrialContext, ssac::Result<Solution>)]) -> Outcome {
    let mut hits = 0;
    let mut worst_drop = 0.0f64;
    let mut firsts = Vec::new();
    for (_, sol) in runs {
        let Ok(s) = sol else { continue };
        worst_drop = worst_drop.max(s.worst_al_drop);
        let first = s.trace.iter().position(|r| r.violation < 1e-4).map(|i| i + 1);
        if first.is_some_and(|f| f <= 30) {
            hits += 1;
        }
        firsts.push(first.map_or("-".to_string(), |f| f.to_string()));
    }
    outcome(
        hits >= 18,
        format!(
            "H < 1e-4 within 30 outer iterations on {hits}/{SEEDS} seeds (>= 18); first hits [{}]; \
             AL monotone (asserted), worst relative drop {worst_drop:.1e}",
            firsts.join(" ")
        ),
    )
}

fn criterion_feasibility(all: &[(Arch, &[(TrialContext, ssac::Result<Solution>)])]) -> Outcome {
    let (mut checked, mut bad) = (0, Vec::new());
    let mut worst_crlb = 0.0f64;
    let mut worst_power = 0.0f64;
    for (arch, runs) in all {
        for (t, (ctx, sol)) in runs.iter().enumerate() {
            let Ok(s) = sol else { continue };
            if !s.converged {
                continue;
            }
            checked += 1;
            let p = &ctx.problem;
            let crlb_ratio = s.crlb_trace / p.eta;
            let power_ratio = fro_norm_sq(&s.w) / p.power;
            worst_crlb = worst_crlb.max(crlb_ratio);
            worst_power = worst_power.max(power_ratio);
            if crlb_ratio > 1.0 + 1e-3 || power_ratio > 1.0 + 1e-9 {
                bad.push(format!("{}#{t}", arch.label()));
            }
        }
    }
    outcome(
        bad.is_empty() && checked > 0,
        format!(
            "{checked} converged runs, max CRLB/eta {worst_crlb:.6}, max |W|^2/P {worst_power:.12}{}",
            if bad.is_empty() { String::new() } else { format!(", violations {}", bad.join(" ")) }
        ),
    )
}

fn rates(runs: &[(TrialContext, ssac::Result<Solution>)]) -> Vec<f64> {
    runs.iter().map(|(_, s)| s.as_ref().map_or(f64::NAN, |s| s.rate)).collect()
}

fn criterion_ordering(
    digital: &[(TrialContext, ssac::Result<Solution>)],
    fc: &[(TrialContext, ssac::Result<Solution>)],
    pc: &[(TrialContext, ssac::Result<Solution>)],
) -> Outcome {
    let (rd, rf, rp) = (rates(digital), rates(fc), rates(pc));
    if rd.iter().chain(&rf).chain(&rp).any(|r| r.is_nan()) {
        return outcome(false, "a solve failed");
    }
    let decomposed: Vec<f64> = digital
        .iter()
        .map(|(ctx, s)| {
            let w = &s.as_ref().expect("checked above").w;
            let bf = decompose_baseline(w, ctx.scene.num_rf_chains, HadArchitecture::FullyConnected, ctx.problem.power, 50)
                .expect("valid decomposition");
            evaluate(ctx, &bf.effective()).rate
        })
        .collect();
    let (md, mf, mp) = (mean(&rd), mean(&rf), mean(&rp));
    let (lo, hi) = paired_difference_interval(&rf, &decomposed, 10_000, 0.95, SEED);
    let pass = md >= mf && mf >= mp && lo > 0.0;
    outcome(
        pass,
        format!(
            "mean rate digital {md:.3} >= FC {mf:.3} >= PC {mp:.3}; FC - decomposed FC {:.3}, 95% CI [{lo:.3}, {hi:.3}] (> 0)",
            mf - mean(&decomposed)
        ),
    )
}

fn sweep_means<F>(values: &[f64], adjust: F) -> Vec<(f64, f64, usize)>
where
    F: Fn(&mut SceneConfig, f64) + Sync,
{
    values
        .iter()
        .map(|&v| {
            let mut scene = SceneConfig::desk();
            adjust(&mut scene, v);
            let runs = solve_all(&scene, Arch::Digital, CsiMode::Perfect);
            let conv: Vec<f64> =
                runs.iter().filter_map(|(_, s)| s.as_ref().ok().filter(|s| s.converged).map(|s| s.rate)).collect();
            (v, mean(&conv), conv.len())
        })
        .collect()
}

fn criterion_tradeoff() -> Outcome {
    let etas = [-55.0, -50.0, -45.0, -40.0, -35.0];
    let means = sweep_means(&etas, |s, v| s.crlb_threshold_db = v);
    let pass = means.windows(2).all(|w| w[1].1 >= w[0].1 * (1.0 - 0.005)) && means.iter().all(|m| m.2 > 0);
    let desc: Vec<_> = means.iter().map(|(v, m, n)| format!("{v:.0}dB {m:.3} ({n})")).collect();
    outcome(pass, format!("converged mean rate vs eta: {} (non-decreasing, 0.5% slack)", desc.join(", ")))
}

fn criterion_rate_vs_power() -> Outcome {
    // A ceiling that stays reachable at 10 dBm on the desk geometry.
    let powers = [10.0, 20.0, 30.0];
    let means = sweep_means(&powers, |s, v| {
        s.power_budget_dbm = v;
        s.crlb_threshold_db = -35.0;
    });
    let pass = means.windows(2).all(|w| w[1].1 >= w[0].1) && means.iter().all(|m| m.2 == SEEDS);
    let desc: Vec<_> = means.iter().map(|(v, m, n)| format!("{v:.0}dBm {m:.3} ({n})")).collect();
    outcome(pass, format!("eta -35 dB, mean rate: {} (non-decreasing)", desc.join(", ")))
}

fn criterion_baselines() -> Outcome {
    let scene = SceneConfig { num_nlos: 0, crlb_threshold_db: -30.0, ..SceneConfig::desk() };
    let runs = solve_all(&scene, Arch::Digital, CsiMode::ExactLos);
    let mut wins = 0;
    let mut worst_peak = 0.0f64;
    let mut worst_margin = f64::INFINITY;
    for (ctx, sol) in &runs {
        let Ok(s) = sol else { continue };
        let w_mrt = mrt(ctx).expect("non-zero channels");
        let r_mrt = evaluate(ctx, &w_mrt).rate;
        worst_margin = worst_margin.min(s.rate - r_mrt);
        if s.rate >= r_mrt {
            wins += 1;
        }
        let ula = ctx.scene.ula();
        let grid: Vec<f64> = (0..=18_000).map(|i| (-90.0 + 0.01 * i as f64).to_radians()).collect();
        let gains: Vec<Vec<f64>> = grid.iter().map(|&psi| beam_gains(&ula, &w_mrt, psi)).collect();
        for (k, v) in ctx.geometry.vues.iter().enumerate() {
            let best = (0..grid.len()).max_by(|&a, &b| gains[a][k].total_cmp(&gains[b][k])).expect("grid");
            worst_peak = worst_peak.max((grid[best] - v.psi).abs().to_degrees());
        }
    }
    let pass = wins == SEEDS && worst_peak <= 1.0;
    outcome(
        pass,
        format!(
            "LoS-only, eta -30 dB: PDD >= MRT on {wins}/{SEEDS} seeds (worst margin {worst_margin:.3} bit); \
             MRT peak offset <= {worst_peak:.3} deg (<= 1)"
        ),
    )
}

fn criterion_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 10);
    let mut worst = [0.0f64; 7];
    for _ in 0..100 {
        let (m, n_h, n_v) = (8, 3, 4);
        let (ula, upa) = (Ula::<f64>::new(m), Upa::<f64>::new(n_h, n_v));
        let (psi, theta, phi) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(0.0..PI));
        let b = ula.steering(psi);
        let b_ref = CVector::from_fn(m, |i, _| cis(PI * i as f64 * psi.sin()));
        let a = upa.steering(theta, phi);
        let a_ref = CVector::from_fn(n_h * n_v, |i, _| {
            cis(PI * (i / n_v) as f64 * theta.sin() * phi.sin() + PI * (i % n_v) as f64 * phi.cos())
        });
        worst[0] = worst[0].max((b - b_ref).norm()).max((a - a_ref).norm());

        let w = gaussian(&mut rng, m, 3);
        let once = project_power(&w, 2.0);
        worst[1] = worst[1].max((project_power(&once, 2.0) - &once).norm() / once.norm());
        let fa = CMatrix::from_fn(m, 2, |_, _| cis(rng.random_range(-PI..PI)));
        let fd = gaussian(&mut rng, 2, 3);
        let once = project_fd(&fa, &fd, 2.0);
        worst[1] = worst[1].max((project_fd(&fa, &once, 2.0) - &once).norm() / once.norm());

        let v = gaussian(&mut rng, m, 2);
        let r = retract(&fa, &(&fa + &v));
        worst[2] = worst[2].max(r.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max));

        let tv = tangent_project(&fa, &v);
        let res = fa.zip_map(&tv, |x, t| (t * x.conj()).re.abs()).max();
        worst[3] = worst[3].max(res / v.norm());

        let n_rf = 2;
        let n_p = m / n_rf;
        let p = CVector::from_fn(m, |_, _| cis(rng.random_range(-PI..PI)));
        let d = CVector::from_fn(n_rf, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        let lhs = block_diagonal(&p, n_rf) * &d;
        let rhs = p.component_mul(&dk_transform(&d, n_p));
        worst[4] = worst[4].max((lhs - rhs).norm() / d.norm());

        let fd = gaussian(&mut rng, n_rf, 3);
        let pw = fro_norm_sq(&(block_diagonal(&p, n_rf) * &fd));
        worst[5] = worst[5].max((pw - n_p as f64 * fro_norm_sq(&fd)).abs() / pw);

        let mrt_w = mrt_beamformer(&gaussian(&mut rng, m, 3), 2.0).expect("non-zero channels");
        worst[6] = worst[6].max((fro_norm_sq(&mrt_w) - 2.0).abs());
    }
    let limits = [1e-12, 1e-12, 1e-12, 1e-12, 1e-14, 1e-14, 1e-12];
    let pass = worst.iter().zip(&limits).all(|(w, l)| w < l);
    outcome(
        pass,
        format!(
            "steering {:.0e}, projection idempotence {:.0e}, unit modulus {:.0e}, tangency {:.0e}, \
             D_k transform {:.0e}, PC power identity {:.0e}, MRT power {:.0e}",
            worst[0], worst[1], worst[2], worst[3], worst[4], worst[5], worst[6]
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!("[{}] criterion {id:>2} {name}: {} ({secs:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o, secs));
    };

    run(1, "gradient suite", &mut criterion_gradients);
    run(2, "FIM oracle", &mut criterion_fim_oracle);
    run(3, "CRLB validation", &mut criterion_crlb_validation);

    let desk = SceneConfig::desk();
    let digital = solve_all(&desk, Arch::Digital, CsiMode::Perfect);
    let fc = solve_all(&desk, Arch::Fc, CsiMode::Perfect);
    let pc = solve_all(&desk, Arch::Pc, CsiMode::Perfect);
    run(4, "PDD convergence", &mut || criterion_convergence(&digital));
    run(5, "feasibility at convergence", &mut || {
        criterion_feasibility(&[(Arch::Digital, &digital), (Arch::Fc, &fc), (Arch::Pc, &pc)])
    });
    run(6, "architecture ordering", &mut || criterion_ordering(&digital, &fc, &pc));
    run(7, "rate vs CRLB threshold", &mut criterion_tradeoff);
    run(8, "rate vs power", &mut criterion_rate_vs_power);
    run(9, "baseline sanity", &mut criterion_baselines);
    run(10, "identity suites", &mut criterion_identities);

    let failed: Vec<_> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s{}",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
