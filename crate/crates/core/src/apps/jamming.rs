//! MIMO transmission-versus-jamming game.
//!
//! The transmitter chooses a covariance `Q` (maximiser) and the jammer a
//! covariance `Z` (minimiser) of the mutual information
//! `C(Q, Z) = log det(I + (s2 I + H2 Z H2^H)^{-1} H1 Q H1^H)` in nats, with
//! trace budgets `P_T` and `P_J`. Both covariances are stored with the
//! Hermitian embedding of [`crate::psd`]; `Q` is the primal block and `Z` the
//! dual block, so the game runs as a projected saddle flow without
//! multipliers.
//!
//! Parameter layout: `h` has `4 N^2` reals. The complex vector
//! `vec([H1 H2])` (column-major, `2 N^2` entries) contributes its real parts
//! first and its imaginary parts second.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::problem::{ConvexityCase, FeasibleSet, JointState, ModuliHint, PsdBlock, SaddleProblem};
use crate::psd::{embed_hermitian, embedded_len, unembed_hermitian};

pub type CMatrix = DMatrix<Complex64>;

#[derive(Debug, Clone)]
pub struct JammingInstance {
    n: usize,
    p_t: f64,
    p_j: f64,
    noise: f64,
    primal: FeasibleSet,
    dual: FeasibleSet,
}

fn log_det_hpd(m: &CMatrix) -> Result<(f64, CMatrix)> {
    let ch = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidModel("matrix in log det is not positive definite".into()))?;
    let ld = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
    Ok((ld, ch.inverse()))
}

impl JammingInstance {
    pub fn new(n: usize, p_t: f64, p_j: f64, noise: f64) -> Result<Self> {
        if n == 0 || !(p_t > 0.0) || !(p_j > 0.0) || !(noise > 0.0) {
            return Err(Error::InvalidModel(
                "jamming game needs n >= 1 and positive budgets and noise power".into(),
            ));
        }
        let block = |budget| {
            FeasibleSet::TracePsd(vec![PsdBlock {
                offset: 0,
                size: n,
                budget,
            }])
        };
        Ok(Self {
            n,
            p_t,
            p_j,
            noise,
            primal: block(p_t),
            dual: block(p_j),
        })
    }

    /// The 2x2 instance with budgets 10 and unit noise.
    pub fn two_by_two() -> Self {
        Self::new(2, 10.0, 10.0, 1.0).expect("valid constants")
    }

    pub fn antennas(&self) -> usize {
        self.n
    }
    pub fn budgets(&self) -> (f64, f64) {
        (self.p_t, self.p_j)
    }
    pub fn noise_power(&self) -> f64 {
        self.noise
    }

    /// Unpacks `h` into `(H1, H2)`.
    pub fn channels(&self, h: &DVector<f64>) -> (CMatrix, CMatrix) {
        let n = self.n;
        let half = 2 * n * n;
        let mut h1 = CMatrix::zeros(n, n);
        let mut h2 = CMatrix::zeros(n, n);
        for k in 0..half {
            let z = Complex64::new(h[k], h[half + k]);
            let (row, col) = (k % n, k / n);
            if col < n {
                h1[(row, col)] = z;
            } else {
                h2[(row, col - n)] = z;
            }
        }
        (h1, h2)
    }

    /// Packs `(H1, H2)` into the parameter layout.
    pub fn parameter(&self, h1: &CMatrix, h2: &CMatrix) -> DVector<f64> {
        let n = self.n;
        let half = 2 * n * n;
        let mut h = DVector::zeros(2 * half);
        for k in 0..half {
            let (row, col) = (k % n, k / n);
            let z = if col < n { h1[(row, col)] } else { h2[(row, col - n)] };
            h[k] = z.re;
            h[half + k] = z.im;
        }
        h
    }

    /// Line-of-sight mean: every complex channel entry equal to one.
    pub fn mean_parameter(&self) -> DVector<f64> {
        let half = 2 * self.n * self.n;
        DVector::from_fn(2 * half, |i, _| if i < half { 1.0 } else { 0.0 })
    }

    /// Packs `(Q, Z)` into a joint state.
    pub fn state(&self, q: &CMatrix, z: &CMatrix) -> JointState {
        JointState::new(embed_hermitian(q), embed_hermitian(z))
    }

    /// Unpacks a joint state into `(Q, Z)`.
    pub fn covariances(&self, s: &JointState) -> (CMatrix, CMatrix) {
        (
            unembed_hermitian(s.x.as_slice(), self.n),
            unembed_hermitian(s.lambda.as_slice(), self.n),
        )
    }

    fn noise_matrix(&self, z: &CMatrix, h2: &CMatrix) -> CMatrix {
        CMatrix::identity(self.n, self.n) * Complex64::new(self.noise, 0.0) + h2 * z * h2.adjoint()
    }

    /// Mutual information in nats.
    pub fn capacity(&self, q: &CMatrix, z: &CMatrix, h1: &CMatrix, h2: &CMatrix) -> Result<f64> {
        let r = self.noise_matrix(z, h2);
        let s = &r + h1 * q * h1.adjoint();
        let (ld_s, _) = log_det_hpd(&s)?;
        let (ld_r, _) = log_det_hpd(&r)?;
        Ok(ld_s - ld_r)
    }

    /// `(dC/dQ, dC/dZ)` as Hermitian matrices:
    /// `H1^H S^{-1} H1` and `-H2^H (R^{-1} - S^{-1}) H2`.
    pub fn gradients(&self, q: &CMatrix, z: &CMatrix, h1: &CMatrix, h2: &CMatrix) -> Result<(CMatrix, CMatrix)> {
        let r = self.noise_matrix(z, h2);
        let s = &r + h1 * q * h1.adjoint();
        let (_, s_inv) = log_det_hpd(&s)?;
        let (_, r_inv) = log_det_hpd(&r)?;
        let gq = h1.adjoint() * &s_inv * h1;
        let gz = -(h2.adjoint() * (r_inv - s_inv) * h2);
        Ok((gq, gz))
    }

    fn gradients_embedded(&self, s: &JointState, h: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let (q, z) = self.covariances(s);
        let (h1, h2) = self.channels(h);
        let (gq, gz) = self.gradients(&q, &z, &h1, &h2).ok()?;
        Some((embed_hermitian(&gq), embed_hermitian(&gz)))
    }
}

impl SaddleProblem for JammingInstance {
    fn name(&self) -> &str {
        "jamming"
    }
    fn primal_dim(&self) -> usize {
        embedded_len(self.n)
    }
    fn dual_dim(&self) -> usize {
        embedded_len(self.n)
    }
    fn param_dim(&self) -> usize {
        4 * self.n * self.n
    }

    fn value(&self, s: &JointState, h: &DVector<f64>) -> f64 {
        let (q, z) = self.covariances(s);
        let (h1, h2) = self.channels(h);
        self.capacity(&q, &z, &h1, &h2).unwrap_or(f64::NAN)
    }

    fn grad_x(&self, s: &JointState, h: &DVector<f64>) -> DVector<f64> {
        match self.gradients_embedded(s, h) {
            Some((gq, _)) => gq,
            None => DVector::from_element(self.primal_dim(), f64::NAN),
        }
    }

    fn grad_lambda(&self, s: &JointState, h: &DVector<f64>) -> DVector<f64> {
        match self.gradients_embedded(s, h) {
            Some((_, gz)) => gz,
            None => DVector::from_element(self.dual_dim(), f64::NAN),
        }
    }

    fn primal_set(&self) -> &FeasibleSet {
        &self.primal
    }
    fn dual_set(&self) -> &FeasibleSet {
        &self.dual
    }

    fn moduli_hint(&self) -> ModuliHint {
        // Strict concavity/convexity holds for full-rank channels but no
        // uniform bound is available; the moduli are sampled instead.
        ModuliHint { m_x: 0.0, m_lambda: 0.0 }
    }

    fn case(&self) -> ConvexityCase {
        ConvexityCase::Strong
    }

    fn initial_guess(&self, _h: &DVector<f64>) -> JointState {
        let n = self.n;
        let eye = CMatrix::identity(n, n);
        self.state(
            &(&eye * Complex64::new(self.p_t / n as f64, 0.0)),
            &(&eye * Complex64::new(self.p_j / n as f64, 0.0)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eye() -> CMatrix {
        CMatrix::identity(2, 2)
    }

    #[test]
    fn identity_capacities() {
        let g = JammingInstance::two_by_two();
        let zero = CMatrix::zeros(2, 2);
        let c = g.capacity(&eye(), &zero, &eye(), &eye()).unwrap();
        assert_relative_eq!(c, 2.0 * 2f64.ln(), epsilon = 1e-12);
        let c = g.capacity(&eye(), &eye(), &eye(), &eye()).unwrap();
        assert_relative_eq!(c, 2.0 * 1.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn gradient_at_zero_is_identity() {
        let g = JammingInstance::two_by_two();
        let zero = CMatrix::zeros(2, 2);
        let (gq, _) = g.gradients(&zero, &zero, &eye(), &eye()).unwrap();
        assert!((gq - eye()).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn parameter_layout_round_trips() {
        let g = JammingInstance::two_by_two();
        let h = DVector::from_fn(16, |i, _| i as f64 * 0.1 - 0.7);
        let (h1, h2) = g.channels(&h);
        assert_eq!(g.parameter(&h1, &h2), h);
        // First real entry is Re H1[0,0]; entry 8 is its imaginary part.
        assert_relative_eq!(h1[(0, 0)].re, h[0]);
        assert_relative_eq!(h1[(0, 0)].im, h[8]);
        assert_relative_eq!(h1[(1, 0)].re, h[1]);
        assert_relative_eq!(h2[(0, 0)].re, h[4]);
    }
}
