//! Scalar quadratic toy problem `L(x, lambda; h) = -(x - h)^2 / 2 + lambda^2 / 2`.
//!
//! The saddle point is `(h, 0)` and its sensitivity is `phi = (1, 0)`, which
//! makes every quantity of the tracking analysis available in closed form.

use nalgebra::{DMatrix, DVector};

use crate::problem::{FeasibleSet, JointState, ModuliHint, SaddleProblem};

#[derive(Debug, Clone)]
pub struct QuadToy {
    primal: FeasibleSet,
    dual: FeasibleSet,
}

impl Default for QuadToy {
    fn default() -> Self {
        Self::new()
    }
}

impl QuadToy {
    pub fn new() -> Self {
        Self {
            primal: FeasibleSet::Free,
            dual: FeasibleSet::Orthant,
        }
    }

    /// Closed-form saddle point at `h`.
    pub fn saddle(h: f64) -> JointState {
        JointState::new(DVector::from_element(1, h), DVector::zeros(1))
    }
}

impl SaddleProblem for QuadToy {
    fn name(&self) -> &str {
        "quad-toy"
    }
    fn primal_dim(&self) -> usize {
        1
    }
    fn dual_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        1
    }

    fn value(&self, s: &JointState, h: &DVector<f64>) -> f64 {
        -0.5 * (s.x[0] - h[0]).powi(2) + 0.5 * s.lambda[0].powi(2)
    }

    fn grad_x(&self, s: &JointState, h: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, h[0] - s.x[0])
    }

    fn grad_lambda(&self, s: &JointState, _h: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, s.lambda[0])
    }

    fn primal_set(&self) -> &FeasibleSet {
        &self.primal
    }
    fn dual_set(&self) -> &FeasibleSet {
        &self.dual
    }

    fn moduli_hint(&self) -> ModuliHint {
        ModuliHint { m_x: 1.0, m_lambda: 1.0 }
    }

    fn initial_guess(&self, _h: &DVector<f64>) -> JointState {
        JointState::zeros(1, 1)
    }

    fn direction_jacobians(&self, _s: &JointState, _h: &DVector<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((
            DMatrix::from_diagonal_element(2, 2, -1.0),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        ))
    }
}
