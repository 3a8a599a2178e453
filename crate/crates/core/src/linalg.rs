//! Small dense complex linear-algebra helpers shared by the optimizers.

use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const J: C64 = C64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `exp(j * phase)`
#[inline]
pub fn cis(phase: f64) -> C64 {
    let (s, co) = phase.sin_cos();
    C64::new(co, s)
}

/// Real Frobenius inner product `Re tr(a^H b)`.
pub fn re_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn fro_norm_sq(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Rank-one outer product `u v^H`.
pub fn outer(u: &CVector, v: &CVector) -> CMatrix {
    u * v.adjoint()
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted descending.
pub fn hermitian_eigen_desc(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    let sym = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Numerical rank-one check used by tests: ratio of the second to the first singular value.
pub fn second_singular_ratio(m: &CMatrix) -> f64 {
    let sv = m.clone().singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if s.is_empty() || s[0] == 0.0 {
        return 0.0;
    }
    s.get(1).copied().unwrap_or(0.0) / s[0]
}

/// Relative Hermitian asymmetry `||m - m^H||_F / ||m||_F` (0 for the zero matrix).
pub fn hermitian_asymmetry(m: &CMatrix) -> f64 {
    let norm = fro_norm_sq(m).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    fro_norm_sq(&(m - m.adjoint())).sqrt() / norm
}
