//! Fisher information for the target parameters
//! `xi = [theta_t, phi_t, psi_t, Re alpha, Im alpha]` and the resulting
//! 2x2 angle CRLB.
//!
//! Every block `Xi_l` is rank one, `Xi_l = u_l v_l^H`, so
//!
//! ```text
//! J[l,q] = (2L / sigma^2) Re{ tr(Xi_q R_x Xi_l^H) }
//!        = (2L / sigma^2) Re{ (u_l^H u_q) (v_q^H R_x v_l) }
//! ```
//!
//! and with `R_x = W W^H` only the K x 5 product `W^H V` is needed.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix5};

use crate::arrays::{Ula, Upa};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_asymmetry, outer, C64, CMatrix, CVector, J};

/// Hermitian asymmetry above which a covariance is rejected.
const ASYMMETRY_TOL: f64 = 1e-10;
/// Condition number above which the angle block is declared singular.
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetParams {
    pub theta: f64,
    pub phi: f64,
    pub psi: f64,
    pub alpha: C64,
}

/// Rank-one factors of the five derivative blocks, `Xi_l = u[l] v[l]^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct XiFactors {
    pub u: [CVector; 5],
    pub v: [CVector; 5],
}

impl XiFactors {
    pub fn new(target: &TargetParams, ula: &Ula<f64>, upa: &Upa<f64>) -> Self {
        let a = upa.steering(target.theta, target.phi);
        let (da_theta, da_phi) = upa.steering_derivatives(target.theta, target.phi);
        let b = ula.steering(target.psi);
        let db = ula.steering_derivative(target.psi);
        let alpha = target.alpha;
        Self {
            u: [&da_theta * alpha, &da_phi * alpha, &a * alpha, a.clone(), &a * J],
            v: [b.clone(), b.clone(), db, b.clone(), b],
        }
    }

    /// Dense N x M blocks.
    pub fn blocks(&self) -> [CMatrix; 5] {
        std::array::from_fn(|l| outer(&self.u[l], &self.v[l]))
    }

    /// `U[l,q] = u_l^H u_q`.
    pub fn u_gram(&self) -> CMatrix {
        CMatrix::from_fn(5, 5, |l, q| self.u[l].dotc(&self.u[q]))
    }

    /// M x 5 matrix with columns `v_l`.
    pub fn v_matrix(&self) -> CMatrix {
        CMatrix::from_columns(&self.v)
    }

    pub fn num_tx(&self) -> usize {
        self.v[0].len()
    }
}

/// `J[l,q] = c Re{U[l,q] S[q,l]}` where `S[q,l] = v_q^H R_x v_l`.
fn assemble(u_gram: &CMatrix, s: &CMatrix, scale: f64) -> Matrix5<f64> {
    let mut j = Matrix5::zeros();
    for l in 0..5 {
        for q in l..5 {
            let val = scale * (u_gram[(l, q)] * s[(q, l)]).re;
            j[(l, q)] = val;
            j[(q, l)] = val;
        }
    }
    j
}

/// FIM from the precoder directly (`R_x = W W^H`), reusing precomputed
/// `U` and `V`. `scale` is `2L / sigma^2`.
pub fn fim_from_beamformer(u_gram: &CMatrix, v: &CMatrix, w: &CMatrix, scale: f64) -> Matrix5<f64> {
    let g = w.adjoint() * v;
    let s = g.adjoint() * g;
    assemble(u_gram, &s, scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FimBundle {
    pub factors: XiFactors,
    pub j: Matrix5<f64>,
}

impl FimBundle {
    pub fn j_theta_theta(&self) -> Matrix2<f64> {
        self.j.fixed_view::<2, 2>(0, 0).into_owned()
    }

    pub fn j_theta_psi(&self) -> Matrix2x3<f64> {
        self.j.fixed_view::<2, 3>(0, 2).into_owned()
    }

    pub fn j_psi_psi(&self) -> Matrix3<f64> {
        self.j.fixed_view::<3, 3>(2, 2).into_owned()
    }
}

/// `[alpha da/dtheta b^H, alpha da/dphi b^H, alpha a db^H, a b^H, j a b^H]`.
pub fn build_xi_blocks(target: &TargetParams, ula: &Ula<f64>, upa: &Upa<f64>) -> [CMatrix; 5] {
    XiFactors::new(target, ula, upa).blocks()
}

/// Fisher information for `L` snapshots with transmit covariance `rx`.
pub fn fim(
    target: &TargetParams,
    rx: &CMatrix,
    noise_power: f64,
    snapshots: usize,
    ula: &Ula<f64>,
    upa: &Upa<f64>,
) -> Result<FimBundle> {
    let asym = hermitian_asymmetry(rx);
    if asym > ASYMMETRY_TOL {
        return Err(Error::NonHermitianCovariance(asym));
    }
    let factors = XiFactors::new(target, ula, upa);
    let v = factors.v_matrix();
    let s = v.adjoint() * rx * &v;
    let j = assemble(&factors.u_gram(), &s, 2.0 * snapshots as f64 / noise_power);
    Ok(FimBundle { factors, j })
}

/// Pseudo-inverse of a symmetric PSD 3x3 matrix, dropping eigenvalues
/// below `1e-12` of the largest.
///
/// A rank-one transmit covariance makes the AoD score a complex multiple of
/// the reflection-coefficient scores, so the nuisance block is singular while
/// the angles stay identifiable.
fn pseudo_inverse_sym3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = m.symmetric_eigen();
    let top = eig.eigenvalues.max();
    let mut out = Matrix3::zeros();
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 1e-12 * top {
            let v = eig.eigenvectors.column(i);
            out += v * v.transpose() / lam;
        }
    }
    out
}

/// Angle CRLB from a raw 5x5 FIM: inverse of the Schur complement of the
/// nuisance block, and its trace.
///
/// The FIM is equilibrated by its diagonal first so the condition check
/// is insensitive to the very different physical scales of the entries.
pub fn crlb_from_fim(j: &Matrix5<f64>) -> Result<(Matrix2<f64>, f64)> {
    let diag = j.diagonal();
    if diag.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::SingularFim(f64::INFINITY));
    }
    let d = diag.map(|x| 1.0 / x.sqrt());
    let js = Matrix5::from_fn(|r, c| j[(r, c)] * d[r] * d[c]);
    let tt = js.fixed_view::<2, 2>(0, 0).into_owned();
    let tp = js.fixed_view::<2, 3>(0, 2).into_owned();
    let pp = js.fixed_view::<3, 3>(2, 2).into_owned();
    let schur = tt - tp * pseudo_inverse_sym3(&pp) * tp.transpose();
    let schur = (schur + schur.transpose()) * 0.5;
    let eig = schur.symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if lo <= 0.0 || hi / lo > MAX_CONDITION {
        let cond = if lo <= 0.0 { f64::INFINITY } else { hi / lo };
        return Err(Error::SingularFim(cond));
    }
    let inv = schur.try_inverse().ok_or(Error::SingularFim(f64::INFINITY))?;
    let crlb = Matrix2::from_fn(|r, c| inv[(r, c)] * d[r] * d[c]);
    let crlb = (crlb + crlb.transpose()) * 0.5;
    Ok((crlb, crlb.trace()))
}

pub fn crlb(bundle: &FimBundle) -> Result<(Matrix2<f64>, f64)> {
    crlb_from_fim(&bundle.j)
}

/// Convenience: trace CRLB for precoder `w`.
pub fn crlb_trace_for_beamformer(
    target: &TargetParams,
    w: &CMatrix,
    noise_power: f64,
    snapshots: usize,
    ula: &Ula<f64>,
    upa: &Upa<f64>,
) -> Result<f64> {
    let factors = XiFactors::new(target, ula, upa);
    let j = fim_from_beamformer(
        &factors.u_gram(),
        &factors.v_matrix(),
        w,
        2.0 * snapshots as f64 / noise_power,
    );
    crlb_from_fim(&j).map(|(_, t)| t)
}
