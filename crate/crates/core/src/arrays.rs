//! Steering vectors of the BS uniform linear array and the sensing-node
//! uniform planar array, with their analytic angle derivatives.
//!
//! Both arrays are generic over the real scalar (`f32`/`f64`); the crate
//! root exposes the `f64` instantiations used by the optimizers.
//!
//! Conventions (element spacing `d` relative to the wavelength, `r = d/lambda`):
//!
//! ```text
//! ULA:  b_m(psi)        = exp(j 2 pi r m sin psi),                m = 0..M-1
//! UPA:  a_rh,i(th, ph)  = exp(j 2 pi r i sin th sin ph),          i = 0..N_h-1
//!       a_rv,k(ph)      = exp(j 2 pi r k cos ph),                 k = 0..N_v-1
//!       a_r[i N_v + k]  = a_rh,i * a_rv,k                         (a_rh kron a_rv)
//! ```

use nalgebra::{convert, Complex, DVector, RealField};

/// Uniform linear array at the base station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ula<T> {
    pub num_elements: usize,
    /// Element spacing over carrier wavelength.
    pub spacing_ratio: T,
}

/// Uniform planar array at the sensing node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Upa<T> {
    pub n_h: usize,
    pub n_v: usize,
    pub spacing_ratio: T,
}

fn phase_ramp<T: RealField + Copy>(len: usize, step: T) -> DVector<Complex<T>> {
    DVector::from_fn(len, |m, _| {
        let (s, c) = (convert::<f64, T>(m as f64) * step).sin_cos();
        Complex::new(c, s)
    })
}

fn index_weighted<T: RealField + Copy>(
    v: &DVector<Complex<T>>,
    scale: T,
) -> DVector<Complex<T>> {
    // j * scale * m * v_m
    DVector::from_fn(v.len(), |m, _| {
        let w = convert::<f64, T>(m as f64) * scale;
        Complex::new(-v[m].im * w, v[m].re * w)
    })
}

fn kron<T: RealField + Copy>(
    a: &DVector<Complex<T>>,
    b: &DVector<Complex<T>>,
) -> DVector<Complex<T>> {
    let nb = b.len();
    DVector::from_fn(a.len() * nb, |idx, _| a[idx / nb] * b[idx % nb])
}

impl<T: RealField + Copy> Ula<T> {
    /// Half-wavelength array with `num_elements` elements.
    pub fn new(num_elements: usize) -> Self {
        Self { num_elements, spacing_ratio: convert(0.5) }
    }

    fn wavenumber(&self) -> T {
        T::two_pi() * self.spacing_ratio
    }

    pub fn steering(&self, psi: T) -> DVector<Complex<T>> {
        phase_ramp(self.num_elements, self.wavenumber() * psi.sin())
    }

    /// `d b(psi) / d psi`.
    pub fn steering_derivative(&self, psi: T) -> DVector<Complex<T>> {
        let b = self.steering(psi);
        index_weighted(&b, self.wavenumber() * psi.cos())
    }
}

impl<T: RealField + Copy> Upa<T> {
    pub fn new(n_h: usize, n_v: usize) -> Self {
        Self { n_h, n_v, spacing_ratio: convert(0.5) }
    }

    pub fn num_elements(&self) -> usize {
        self.n_h * self.n_v
    }

    fn wavenumber(&self) -> T {
        T::two_pi() * self.spacing_ratio
    }

    pub fn horizontal(&self, theta: T, phi: T) -> DVector<Complex<T>> {
        phase_ramp(self.n_h, self.wavenumber() * theta.sin() * phi.sin())
    }

    pub fn vertical(&self, phi: T) -> DVector<Complex<T>> {
        phase_ramp(self.n_v, self.wavenumber() * phi.cos())
    }

    pub fn steering(&self, theta: T, phi: T) -> DVector<Complex<T>> {
        kron(&self.horizontal(theta, phi), &self.vertical(phi))
    }

    /// `(d a_r / d theta, d a_r / d phi)`.
    ///
    /// The azimuth derivative only touches the horizontal factor; the
    /// elevation derivative applies the product rule across both factors.
    pub fn steering_derivatives(
        &self,
        theta: T,
        phi: T,
    ) -> (DVector<Complex<T>>, DVector<Complex<T>>) {
        let k = self.wavenumber();
        let h = self.horizontal(theta, phi);
        let v = self.vertical(phi);
        let dh_dtheta = index_weighted(&h, k * theta.cos() * phi.sin());
        let dh_dphi = index_weighted(&h, k * theta.sin() * phi.cos());
        let dv_dphi = index_weighted(&v, -k * phi.sin());
        let d_theta = kron(&dh_dtheta, &v);
        let d_phi = kron(&dh_dphi, &v) + kron(&h, &dv_dphi);
        (d_theta, d_phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, C64};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn ula_closed_forms() {
        let ula = Ula::<f64>::new(5);
        assert!(ula.steering(0.0).iter().all(|z| close(*z, c(1.0, 0.0))));

        let b = Ula::<f64>::new(4).steering(FRAC_PI_6);
        let want = [c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)];
        for (got, want) in b.iter().zip(want) {
            assert!(close(*got, want), "{got} vs {want}");
        }

        let b = Ula::<f64>::new(2).steering(FRAC_PI_2);
        assert!(close(b[0], c(1.0, 0.0)) && close(b[1], c(-1.0, 0.0)));
    }

    #[test]
    fn upa_closed_forms() {
        let upa = Upa::<f64>::new(3, 4);
        let a = upa.steering(0.0, 0.7);
        let v = upa.vertical(0.7);
        for i in 0..3 {
            for k in 0..4 {
                assert!(close(a[i * 4 + k], v[k]));
            }
        }
        assert!(upa.vertical(FRAC_PI_2).iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-12));

        let a = Upa::<f64>::new(2, 2).steering(FRAC_PI_2, FRAC_PI_2);
        let want = [1.0, 1.0, -1.0, -1.0];
        for (got, w) in a.iter().zip(want) {
            assert!(close(*got, c(w, 0.0)));
        }
    }

    #[test]
    fn kronecker_order_is_horizontal_major() {
        let upa = Upa::<f64>::new(3, 5);
        let (th, ph) = (0.4, 1.1);
        let (h, v, a) = (upa.horizontal(th, ph), upa.vertical(ph), upa.steering(th, ph));
        for i in 0..3 {
            for k in 0..5 {
                assert!(close(a[i * 5 + k], h[i] * v[k]));
            }
        }
    }

    #[test]
    fn derivative_edge_cases() {
        let ula = Ula::<f64>::new(6);
        assert!(ula.steering_derivative(FRAC_PI_2).iter().all(|z| z.norm() < 1e-12));
        let upa = Upa::<f64>::new(3, 3);
        let (dt, dp) = upa.steering_derivatives(0.3, 1.2);
        assert_eq!(dt[0], c(0.0, 0.0));
        assert_eq!(dp[0], c(0.0, 0.0));
        assert_eq!(ula.steering_derivative(0.4)[0], c(0.0, 0.0));
    }

    #[test]
    fn single_precision_instantiation() {
        let b = Ula::<f32>::new(4).steering(std::f32::consts::FRAC_PI_6);
        assert!((b[1].im - 1.0).abs() < 1e-6);
        let a = Upa::<f32>::new(2, 2).steering(0.3, 1.0);
        assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-6));
    }
}
