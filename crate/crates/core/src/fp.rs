//! Sum-rate metrics and the fractional-programming surrogate.
//!
//! `channels` is always M x K with column `k` holding `h_k`; precoders are
//! M x K with column `k` holding `w_k`. Gradients with respect to a complex
//! matrix are returned as `2 dh/dW*`, so `Re tr(G^H D)` is the directional
//! derivative along `D` and `W + lambda G` is an ascent step.

use crate::linalg::{fro_norm_sq, C64, CMatrix};

/// Auxiliary variables of the Lagrangian-dual and quadratic transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct FpState {
    pub nu: Vec<f64>,
    pub beta: Vec<C64>,
}

impl FpState {
    pub fn zeros(k: usize) -> Self {
        Self { nu: vec![0.0; k], beta: vec![C64::new(0.0, 0.0); k] }
    }

    /// Closed-form updates of both blocks at fixed `w`.
    pub fn refresh(channels: &CMatrix, w: &CMatrix, noise: f64) -> Self {
        let nu = update_nu(channels, w, noise);
        let beta = update_beta(channels, w, &nu, noise);
        Self { nu, beta }
    }

    /// `H~` with columns `beta_k h_k`.
    pub fn weighted_channels(&self, channels: &CMatrix) -> CMatrix {
        let mut out = channels.clone();
        for (k, mut col) in out.column_iter_mut().enumerate() {
            col *= self.beta[k];
        }
        out
    }

    /// Diagonal of `N = diag(2 sqrt(1 + nu))`.
    pub fn n_diag(&self) -> Vec<f64> {
        self.nu.iter().map(|v| 2.0 * (1.0 + v).sqrt()).collect()
    }
}

/// `|h_k^H w_i|^2` for all `(k, i)`.
fn cross_gains(channels: &CMatrix, w: &CMatrix) -> CMatrix {
    channels.adjoint() * w
}

/// Per-user SINR and sum rate in bits/s/Hz.
pub fn sinr_and_rate(channels: &CMatrix, w: &CMatrix, noise: f64) -> (Vec<f64>, f64) {
    let g = cross_gains(channels, w);
    let k = channels.ncols();
    let sinr: Vec<f64> = (0..k)
        .map(|u| {
            let total: f64 = g.row(u).iter().map(|z| z.norm_sqr()).sum();
            let signal = g[(u, u)].norm_sqr();
            signal / (total - signal + noise)
        })
        .collect();
    let rate = sinr.iter().map(|s| (1.0 + s).log2()).sum();
    (sinr, rate)
}

pub fn sum_rate(channels: &CMatrix, w: &CMatrix, noise: f64) -> f64 {
    sinr_and_rate(channels, w, noise).1
}

/// Optimal `nu` at fixed `w`: the SINR itself.
pub fn update_nu(channels: &CMatrix, w: &CMatrix, noise: f64) -> Vec<f64> {
    sinr_and_rate(channels, w, noise).0
}

/// `beta_k = sqrt(1 + nu_k) h_k^H w_k / (sum_i |h_k^H w_i|^2 + sigma^2)`.
pub fn update_beta(channels: &CMatrix, w: &CMatrix, nu: &[f64], noise: f64) -> Vec<C64> {
    let g = cross_gains(channels, w);
    (0..channels.ncols())
        .map(|u| {
            let total: f64 = g.row(u).iter().map(|z| z.norm_sqr()).sum();
            g[(u, u)] * ((1.0 + nu[u]).sqrt() / (total + noise))
        })
        .collect()
}

/// `Re tr(N H~^H W) - |H~^H W|_F^2 - sum_k |beta_k|^2 sigma^2`, the part of
/// the surrogate that depends on `w`.
pub fn quadratic_part(state: &FpState, channels: &CMatrix, w: &CMatrix, noise: f64) -> f64 {
    let ht = state.weighted_channels(channels);
    let g = ht.adjoint() * w;
    let n = state.n_diag();
    let linear: f64 = (0..g.nrows()).map(|k| n[k] * g[(k, k)].re).sum();
    let beta_sq: f64 = state.beta.iter().map(|b| b.norm_sqr()).sum();
    linear - fro_norm_sq(&g) - beta_sq * noise
}

/// Surrogate sum rate with `log2` in the dual-transform term. Equals the
/// sum rate when `(nu, beta)` are at their closed-form optima.
pub fn r_sum(state: &FpState, channels: &CMatrix, w: &CMatrix, noise: f64) -> f64 {
    let dual: f64 = state.nu.iter().map(|v| (1.0 + v).log2() - v).sum();
    dual + quadratic_part(state, channels, w, noise)
}

/// Surrogate with the natural logarithm. Its maximum over `(nu, beta)` is
/// the sum rate in nats and `nu = SINR` is the exact maximizer, so
/// block-coordinate ascent on it is monotone.
pub fn r_sum_nats(state: &FpState, channels: &CMatrix, w: &CMatrix, noise: f64) -> f64 {
    let dual: f64 = state.nu.iter().map(|v| v.ln_1p() - v).sum();
    dual + quadratic_part(state, channels, w, noise)
}

/// `2 d/dW*` of the quadratic part: `H~ N - 2 H~ H~^H W`.
pub fn quadratic_gradient(state: &FpState, channels: &CMatrix, w: &CMatrix) -> CMatrix {
    let ht = state.weighted_channels(channels);
    let mut lin = ht.clone();
    for (k, n) in state.n_diag().into_iter().enumerate() {
        lin.column_mut(k).scale_mut(n);
    }
    let g = ht.adjoint() * w;
    lin - (ht * g) * C64::new(2.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, re_inner};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
        })
    }

    #[test]
    fn single_user_examples() {
        let h = CMatrix::from_element(1, 1, c(1.0, 0.0));
        let w = CMatrix::from_element(1, 1, c(1.0, 0.0));
        let (sinr, rate) = sinr_and_rate(&h, &w, 0.5);
        assert!((sinr[0] - 2.0).abs() < 1e-15);
        assert!((rate - 3f64.log2()).abs() < 1e-15);
        assert!((rate - 1.58496).abs() < 1e-5);

        let beta = update_beta(&h, &w, &[2.0], 0.5);
        assert!((beta[0] - c(3f64.sqrt() / 1.5, 0.0)).norm() < 1e-15);
        assert!((beta[0].re - 1.15470).abs() < 1e-5);
    }

    #[test]
    fn zero_precoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_matrix(&mut rng, 4, 2);
        let w = CMatrix::zeros(4, 2);
        let (sinr, rate) = sinr_and_rate(&h, &w, 1.0);
        assert!(sinr.iter().all(|&s| s == 0.0) && rate == 0.0);
        assert!(update_nu(&h, &w, 1.0).iter().all(|&v| v == 0.0));
        assert!(update_beta(&h, &w, &[0.0, 0.0], 1.0).iter().all(|b| b.norm() == 0.0));
        assert_eq!(r_sum(&FpState::zeros(2), &h, &random_matrix(&mut rng, 4, 2), 1.0), 0.0);
    }

    #[test]
    fn orthogonal_users_have_no_interference() {
        let h = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(2.0, 0.0)]);
        let w = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.3, 0.0)]);
        let (sinr, _) = sinr_and_rate(&h, &w, 0.1);
        assert!((sinr[0] - 0.25 / 0.1).abs() < 1e-12);
        assert!((sinr[1] - 4.0 * 0.09 / 0.1).abs() < 1e-12);
    }

    #[test]
    fn surrogate_is_tight_at_closed_form_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let h = random_matrix(&mut rng, 6, 3);
            let w = random_matrix(&mut rng, 6, 3) * c(0.3, 0.0);
            let state = FpState::refresh(&h, &w, 0.7);
            let (sinr, rate) = sinr_and_rate(&h, &w, 0.7);
            assert!((r_sum(&state, &h, &w, 0.7) - rate).abs() < 1e-9 * rate.max(1.0));
            let nats: f64 = sinr.iter().map(|s| s.ln_1p()).sum();
            assert!((r_sum_nats(&state, &h, &w, 0.7) - nats).abs() < 1e-9 * nats.max(1.0));
            for k in 0..3 {
                let term = (1.0 + state.nu[k]).log2() - state.nu[k] + state.n_diag()[k]
                    * (state.beta[k].conj() * h.column(k).dotc(&w.column(k))).re
                    - state.beta[k].norm_sqr()
                        * ((h.adjoint() * &w).row(k).iter().map(|z| z.norm_sqr()).sum::<f64>() + 0.7);
                assert!((term - (1.0 + sinr[k]).log2()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn updates_maximize_nats_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random_matrix(&mut rng, 5, 2);
        let w = random_matrix(&mut rng, 5, 2);
        let opt = FpState::refresh(&h, &w, 0.4);
        let best = r_sum_nats(&opt, &h, &w, 0.4);
        for _ in 0..200 {
            let mut s = opt.clone();
            for k in 0..2 {
                s.nu[k] = (s.nu[k] + rng.random_range(-0.5..0.5)).max(0.0);
                s.beta[k] += c(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            }
            assert!(r_sum_nats(&s, &h, &w, 0.4) <= best + 1e-12);
        }
    }

    #[test]
    fn surrogate_concave_in_precoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let h = random_matrix(&mut rng, 4, 2);
            let s = FpState::refresh(&h, &random_matrix(&mut rng, 4, 2), 1.0);
            let a = random_matrix(&mut rng, 4, 2);
            let b = random_matrix(&mut rng, 4, 2);
            let mid = (&a + &b) * c(0.5, 0.0);
            let f = |w: &CMatrix| r_sum(&s, &h, w, 1.0);
            assert!(f(&mid) >= 0.5 * (f(&a) + f(&b)) - 1e-10);
        }
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = random_matrix(&mut rng, 4, 3);
        let w = random_matrix(&mut rng, 4, 3);
        let s = FpState::refresh(&h, &random_matrix(&mut rng, 4, 3), 0.5);
        let g = quadratic_gradient(&s, &h, &w);
        let d = random_matrix(&mut rng, 4, 3);
        let eps = 1e-6;
        let f = |t: f64| quadratic_part(&s, &h, &(&w + &d * c(t, 0.0)), 0.5);
        let fd = (f(eps) - f(-eps)) / (2.0 * eps);
        let an = re_inner(&g, &d);
        assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0));
    }
}
