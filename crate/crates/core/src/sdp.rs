//! Projection of a symmetric 5x5 matrix onto the set of information matrices
//! whose 2x2 angle bound has trace at most `eta`:
//!
//! ```text
//! minimize    |F - T|_F^2
//! subject to  [F_tt - Omega, F_tp; F_tp^T, F_pp] >= 0
//!             [Omega, I; I, U] >= 0,   tr U <= eta
//! ```
//!
//! The second LMI encodes `U >= Omega^-1`, so `tr(Omega^-1) <= eta`.
//! `F` ranges over the span of an orthonormal set of symmetric matrices:
//! all 15 of them by default, or a smaller subspace known to contain the
//! matrices of interest. Solved with a log-barrier Newton method.

use std::ops::SubAssign;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Matrix5};

/// Barrier parameter `m`: total LMI dimension plus the scalar constraint.
const BARRIER_DIM: f64 = 10.0;
/// Newton steps allowed per centering. Well-conditioned centerings take
/// under ten; the cap only bites at the rounding floor for very large `t`.
const MAX_CENTERING_STEPS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub f: Matrix5<f64>,
    pub omega: Matrix2<f64>,
    pub u: Matrix2<f64>,
    /// `|F - T|_F^2` at the returned point.
    pub objective: f64,
    /// Duality-gap bound `m / t` at exit.
    pub gap: f64,
    pub newton_steps: usize,
    /// Iteration cap reached before the gap target.
    pub stalled: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    /// Gap target relative to `max(1, |T|_F^2)`.
    pub rel_gap: f64,
    pub max_newton: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { rel_gap: 1e-12, max_newton: 600 }
    }
}

/// Orthonormal (Frobenius) basis of a subspace of symmetric 5x5 matrices,
/// plus a positive definite element of that subspace used to build a
/// strictly feasible start.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBasis {
    pub elems: Vec<Matrix5<f64>>,
    pub interior: Matrix5<f64>,
}

impl SymBasis {
    /// All symmetric matrices.
    pub fn full() -> Self {
        let mut elems = Vec::with_capacity(15);
        for i in 0..5 {
            for j in i..5 {
                let mut e = Matrix5::zeros();
                if i == j {
                    e[(i, i)] = 1.0;
                } else {
                    e[(i, j)] = std::f64::consts::FRAC_1_SQRT_2;
                    e[(j, i)] = std::f64::consts::FRAC_1_SQRT_2;
                }
                elems.push(e);
            }
        }
        Self { elems, interior: Matrix5::identity() }
    }

    /// Orthonormalizes `spanning` (Gram-Schmidt, dropping dependent
    /// members). `interior` must be positive definite and lie in the span.
    pub fn from_spanning(spanning: &[Matrix5<f64>], interior: Matrix5<f64>) -> Self {
        let scale = spanning.iter().map(|m| m.norm()).fold(0.0, f64::max);
        let mut elems: Vec<Matrix5<f64>> = Vec::new();
        for m in spanning {
            let mut r = (m + m.transpose()) * 0.5;
            for _ in 0..2 {
                for e in &elems {
                    r -= e * e.dot(&r);
                }
            }
            let n = r.norm();
            if n > 1e-10 * scale {
                elems.push(r / n);
            }
        }
        Self { elems, interior }
    }

    pub fn dim(&self) -> usize {
        self.elems.len()
    }

    fn coords(&self, m: &Matrix5<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.elems.iter().map(|e| e.dot(m)))
    }

    fn compose(&self, c: &[f64]) -> Matrix5<f64> {
        self.elems.iter().zip(c).fold(Matrix5::zeros(), |acc, (e, &x)| acc + e * x)
    }

    /// Orthogonal projection onto the subspace.
    pub fn project(&self, m: &Matrix5<f64>) -> Matrix5<f64> {
        self.compose(self.coords(m).as_slice())
    }
}

fn sym2(a: f64, b: f64, c: f64) -> Matrix2<f64> {
    Matrix2::new(a, b, b, c)
}

/// Unit directions of `Omega` / `U` entries: (0,0), (0,1)+(1,0), (1,1).
fn sym2_basis() -> [Matrix2<f64>; 3] {
    [sym2(1.0, 0.0, 0.0), sym2(0.0, 1.0, 0.0), sym2(0.0, 0.0, 1.0)]
}

/// Per-variable contribution to the two LMIs and to `tr U`.
struct Lmis {
    l1: Vec<Matrix5<f64>>,
    l2: Vec<Matrix4<f64>>,
    tr_u: Vec<f64>,
}

struct Problem<'a> {
    basis: &'a SymBasis,
    lmis: Lmis,
    /// Coordinates of the target in the basis.
    t: DVector<f64>,
    eta: f64,
}

struct Eval {
    l1_inv: Matrix5<f64>,
    l2_inv: Matrix4<f64>,
    slack: f64,
    /// `-log det L1 - log det L2 - log s`.
    barrier: f64,
}

impl<'a> Problem<'a> {
    fn new(basis: &'a SymBasis, target: &Matrix5<f64>, eta: f64) -> Self {
        let mut lmis = Lmis { l1: vec![], l2: vec![], tr_u: vec![] };
        for e in &basis.elems {
            lmis.l1.push(*e);
            lmis.l2.push(Matrix4::zeros());
            lmis.tr_u.push(0.0);
        }
        for e in sym2_basis() {
            let mut e1 = Matrix5::zeros();
            e1.fixed_view_mut::<2, 2>(0, 0).sub_assign(&e);
            let mut e2 = Matrix4::zeros();
            e2.fixed_view_mut::<2, 2>(0, 0).copy_from(&e);
            lmis.l1.push(e1);
            lmis.l2.push(e2);
            lmis.tr_u.push(0.0);
        }
        for e in sym2_basis() {
            let mut e2 = Matrix4::zeros();
            e2.fixed_view_mut::<2, 2>(2, 2).copy_from(&e);
            lmis.l1.push(Matrix5::zeros());
            lmis.l2.push(e2);
            lmis.tr_u.push(e.trace());
        }
        Self { basis, lmis, t: basis.coords(target), eta }
    }

    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn num_vars(&self) -> usize {
        self.dim() + 6
    }

    fn unpack(&self, x: &DVector<f64>) -> (Matrix5<f64>, Matrix2<f64>, Matrix2<f64>) {
        let d = self.dim();
        let f = self.basis.compose(&x.as_slice()[..d]);
        let omega = sym2(x[d], x[d + 1], x[d + 2]);
        let u = sym2(x[d + 3], x[d + 4], x[d + 5]);
        (f, omega, u)
    }

    fn pack(&self, f: &Matrix5<f64>, omega: &Matrix2<f64>, u: &Matrix2<f64>) -> DVector<f64> {
        let d = self.dim();
        let mut x = DVector::zeros(self.num_vars());
        x.rows_mut(0, d).copy_from(&self.basis.coords(f));
        let tail = [omega[(0, 0)], omega[(0, 1)], omega[(1, 1)], u[(0, 0)], u[(0, 1)], u[(1, 1)]];
        for (i, v) in tail.into_iter().enumerate() {
            x[d + i] = v;
        }
        x
    }

    fn lmi_values(&self, x: &DVector<f64>) -> (Matrix5<f64>, Matrix4<f64>, Matrix2<f64>) {
        let (f, omega, u) = self.unpack(x);
        let mut l1 = f;
        l1.fixed_view_mut::<2, 2>(0, 0).sub_assign(&omega);
        let mut l2 = Matrix4::zeros();
        l2.fixed_view_mut::<2, 2>(0, 0).copy_from(&omega);
        l2.fixed_view_mut::<2, 2>(2, 2).copy_from(&u);
        l2[(0, 2)] = 1.0;
        l2[(1, 3)] = 1.0;
        l2[(2, 0)] = 1.0;
        l2[(3, 1)] = 1.0;
        (l1, l2, u)
    }

    /// `|F - P T|^2` in coordinates; the out-of-span part of `T` is constant.
    fn objective(&self, x: &DVector<f64>) -> f64 {
        (0..self.dim()).map(|i| (x[i] - self.t[i]).powi(2)).sum()
    }

    /// `f(x + d) - f(x)` without cancellation.
    fn objective_change(&self, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
        (0..self.dim()).map(|i| d[i] * (2.0 * (x[i] - self.t[i]) + d[i])).sum()
    }

    /// Barrier terms at `x`, or `None` outside the interior.
    fn eval(&self, x: &DVector<f64>) -> Option<Eval> {
        let (l1, l2, u) = self.lmi_values(x);
        let slack = self.eta - u.trace();
        if !(slack > 0.0) {
            return None;
        }
        let c1 = l1.cholesky()?;
        let c2 = l2.cholesky()?;
        let logdet1: f64 = 2.0 * c1.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let logdet2: f64 = 2.0 * c2.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let barrier = -logdet1 - logdet2 - slack.ln();
        if !barrier.is_finite() {
            return None;
        }
        Some(Eval { l1_inv: c1.inverse(), l2_inv: c2.inverse(), slack, barrier })
    }

    fn gradient_hessian(&self, x: &DVector<f64>, t: f64, e: &Eval) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.num_vars();
        let d = self.dim();
        let m1: Vec<Matrix5<f64>> = self.lmis.l1.iter().map(|a| e.l1_inv * a).collect();
        let m2: Vec<Matrix4<f64>> = self.lmis.l2.iter().map(|a| e.l2_inv * a).collect();
        let tr_u = &self.lmis.tr_u;
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            let obj_grad = if i < d { 2.0 * (x[i] - self.t[i]) } else { 0.0 };
            g[i] = t * obj_grad - m1[i].trace() - m2[i].trace() + tr_u[i] / e.slack;
            for j in i..n {
                let mut v = (m1[i] * m1[j]).trace() + (m2[i] * m2[j]).trace()
                    + tr_u[i] * tr_u[j] / (e.slack * e.slack);
                if i == j && i < d {
                    v += 2.0 * t;
                }
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        (g, h)
    }

    /// Strictly feasible start: the projected target shifted along the
    /// interior direction until the first LMI is positive definite.
    fn initial_point(&self, target: &Matrix5<f64>) -> DVector<f64> {
        let omega = Matrix2::identity() * (4.0 / self.eta);
        let u = Matrix2::identity() * (3.0 * self.eta / 8.0);
        let base = self.basis.project(target);
        let mut shifted = base;
        shifted.fixed_view_mut::<2, 2>(0, 0).sub_assign(&omega);
        let dir = self.basis.project(&self.basis.interior);
        let dir = dir / dir.norm();
        let mut s = 1e-2 * (base.norm() + 4.0 / self.eta);
        for _ in 0..200 {
            if (shifted + dir * s).symmetric_eigen().eigenvalues.min() > 0.0 {
                break;
            }
            s *= 2.0;
        }
        self.pack(&(base + dir * s), &omega, &u)
    }
}

/// Projection onto the CRLB set over all symmetric `F`.
pub fn project_onto_crlb_set(target: &Matrix5<f64>, eta: f64, opts: SdpOptions) -> SdpSolution {
    project_onto_crlb_set_in(target, eta, &SymBasis::full(), opts)
}

/// Projection onto the CRLB set with `F` restricted to `basis`.
pub fn project_onto_crlb_set_in(
    target: &Matrix5<f64>,
    eta: f64,
    basis: &SymBasis,
    opts: SdpOptions,
) -> SdpSolution {
    assert!(eta > 0.0, "eta must be positive");
    let target = (target + target.transpose()) * 0.5;
    let problem = Problem::new(basis, &target, eta);
    let mut x = problem.initial_point(&target);
    let scale = target.norm_squared().max(1.0);
    let gap_target = opts.rel_gap * scale;

    let mut t = BARRIER_DIM / problem.objective(&x).max(1e-6 * scale);
    let mut steps = 0usize;
    let mut stalled = false;
    loop {
        // Centering. Changes of the barrier objective are accumulated as
        // `t (f(x+) - f(x)) + (barrier(x+) - barrier(x))` so the Armijo test
        // stays meaningful when `t f` is large.
        let mut centering_steps = 0usize;
        loop {
            let e = problem.eval(&x).expect("iterate left the interior");
            let (g, h) = problem.gradient_hessian(&x, t, &e);
            let dx = match h.clone().cholesky() {
                Some(ch) => -ch.solve(&g),
                None => -h.lu().solve(&g).unwrap_or_else(|| g.clone()),
            };
            let decrement = -g.dot(&dx);
            if decrement / 2.0 <= 1e-10
                || steps >= opts.max_newton
                || centering_steps >= MAX_CENTERING_STEPS
            {
                break;
            }
            steps += 1;
            centering_steps += 1;
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..80 {
                let d = &dx * step;
                let cand = &x + &d;
                if let Some(ec) = problem.eval(&cand) {
                    let change = t * problem.objective_change(&x, &d) + (ec.barrier - e.barrier);
                    if change <= -0.25 * step * decrement {
                        x = cand;
                        moved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if BARRIER_DIM / t <= gap_target {
            break;
        }
        if steps >= opts.max_newton {
            stalled = true;
            break;
        }
        t *= 20.0;
    }
    let (f, omega, u) = problem.unpack(&x);
    SdpSolution {
        f,
        omega,
        u,
        objective: (target - f).norm_squared(),
        gap: BARRIER_DIM / t,
        newton_steps: steps,
        stalled,
    }
}

/// Smallest eigenvalue of the Schur LMI and of `Omega`, and `eta - tr(Omega^-1)`;
/// all are non-negative for a feasible point.
pub fn feasibility_margins(sol: &SdpSolution, eta: f64) -> (f64, f64, f64) {
    let mut l1 = sol.f;
    l1.fixed_view_mut::<2, 2>(0, 0).sub_assign(&sol.omega);
    let lmi = l1.symmetric_eigen().eigenvalues.min();
    let om = sol.omega.symmetric_eigen().eigenvalues.min();
    let tr = sol.omega.try_inverse().map(|i| eta - i.trace()).unwrap_or(f64::NEG_INFINITY);
    (lmi, om, tr)
}
