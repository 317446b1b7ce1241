//! Equilibrium oracle: frozen-parameter saddle solves, implicit-function
//! sensitivities `phi = dz*/dh`, and the stability constants built from them.

use nalgebra::{DMatrix, DVector};

use crate::channel::{ChannelModel, RngStream};
use crate::error::{Error, Result};
use crate::linalg::{solve_conditioned, solve_lu, solve_pseudo, spectral_norm};
use crate::problem::{
    direction, direction_jacobians, estimate_moduli, natural_residual, project_joint, residual_jacobians, ConvexityCase,
    JointState, SaddleProblem,
};

/// Tolerances and budgets for [`solve_saddle_frozen`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSettings {
    /// Target norm of the natural-map residual.
    pub tol: f64,
    /// Maximum number of solver rounds; each round is a Newton phase followed,
    /// if needed, by a block of extragradient flow steps.
    pub max_rounds: usize,
    pub newton_iters: usize,
    pub flow_iters: usize,
    /// Step of the extragradient flow, in units of the unscaled direction.
    pub flow_step: f64,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_rounds: 60,
            newton_iters: 40,
            flow_iters: 400,
            flow_step: 0.1,
        }
    }
}

/// Result of a frozen-parameter saddle solve.
#[derive(Debug, Clone)]
pub struct EquilibriumSolve {
    pub x_star: JointState,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn residual_at(problem: &dyn SaddleProblem, z: &DVector<f64>, h: &DVector<f64>) -> Result<f64> {
    let s = JointState::from_vector(z, problem.primal_dim());
    Ok(natural_residual(problem, &s, h)?.norm())
}

/// Semismooth Newton on the natural map with a backtracking line search on
/// the residual norm. Returns `true` when the residual dropped below `tol`.
fn newton_phase(
    problem: &dyn SaddleProblem,
    z: &mut DVector<f64>,
    r: &mut f64,
    h: &DVector<f64>,
    settings: &SolveSettings,
    iterations: &mut usize,
) -> Result<bool> {
    let n = problem.primal_dim();
    for _ in 0..settings.newton_iters {
        if *r <= settings.tol {
            return Ok(true);
        }
        *iterations += 1;
        let s = JointState::from_vector(z, n);
        let f = natural_residual(problem, &s, h)?;
        let (b, _) = residual_jacobians(problem, &s, h)?;
        let rhs = DMatrix::from_column_slice(f.len(), 1, (-&f).as_slice());
        // Dependent active constraints make the Jacobian singular; the
        // minimum-norm step still reduces the residual there.
        let step = match solve_lu(&b, &rhs).or_else(|_| solve_pseudo(&b, &rhs)) {
            Ok(d) => d.column(0).into_owned(),
            Err(_) => return Ok(false),
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = project_joint(problem, &(&*z + &step * t))?;
            let rt = match residual_at(problem, &trial, h) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if rt <= (1.0 - 1e-4 * t) * *r {
                *z = trial;
                *r = rt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok(*r <= settings.tol);
        }
    }
    Ok(*r <= settings.tol)
}

/// Escape from a stalled Newton phase on a singular piece. Dependent active
/// constraints leave the multipliers free along the null space of the
/// residual Jacobian; moving along a null direction until a coordinate hits
/// its bound changes the active set at no first-order cost. Each direction
/// is followed by a Newton phase, and the best improving candidate is kept.
/// Returns whether `z` was improved.
fn null_space_escape(
    problem: &dyn SaddleProblem,
    z: &mut DVector<f64>,
    r: &mut f64,
    h: &DVector<f64>,
    settings: &SolveSettings,
    iterations: &mut usize,
) -> Result<bool> {
    let n = problem.primal_dim();
    let (b, _) = residual_jacobians(problem, &JointState::from_vector(z, n), h)?;
    if b.nrows() == 0 {
        return Ok(false);
    }
    let svd = b.svd(false, true);
    let Some(v_t) = svd.v_t else {
        return Ok(false);
    };
    let smax = svd.singular_values.max();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for (k, sigma) in svd.singular_values.iter().enumerate() {
        if *sigma > 1e-8 * smax {
            continue;
        }
        let v = v_t.row(k).transpose();
        for sign in [1.0, -1.0] {
            // Drop round-off components so that coordinates resting on a
            // bound do not block the ratio test.
            let d = v.map(|c| if c.abs() < 1e-9 { 0.0 } else { c * sign });
            let tp = problem.primal_set().max_step(&z.rows(0, n).into_owned(), &d.rows(0, n).into_owned());
            let td = problem
                .dual_set()
                .max_step(&z.rows(n, z.len() - n).into_owned(), &d.rows(n, z.len() - n).into_owned());
            let t = match (tp, td) {
                (Some(a), Some(b)) => a.min(b),
                _ => continue,
            };
            if !(t.is_finite() && t > 0.0) {
                continue;
            }
            let mut trial = project_joint(problem, &(&*z + &d * t))?;
            let mut rt = match residual_at(problem, &trial, h) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => continue,
                Err(e) => return Err(e),
            };
            newton_phase(problem, &mut trial, &mut rt, h, settings, iterations)?;
            if rt < 0.5 * *r && best.as_ref().is_none_or(|(_, rb)| rt < *rb) {
                best = Some((trial, rt));
            }
        }
    }
    Ok(match best {
        Some((trial, rt)) => {
            *z = trial;
            *r = rt;
            true
        }
        None => false,
    })
}

/// Projected extragradient iterations on the frozen problem.
fn flow_phase(
    problem: &dyn SaddleProblem,
    z: &mut DVector<f64>,
    h: &DVector<f64>,
    settings: &SolveSettings,
    iterations: &mut usize,
) -> Result<()> {
    let n = problem.primal_dim();
    let s = settings.flow_step;
    for _ in 0..settings.flow_iters {
        *iterations += 1;
        let g = direction(problem, &JointState::from_vector(z, n), h)?;
        let mid = project_joint(problem, &(&*z + g * s))?;
        let g_mid = direction(problem, &JointState::from_vector(&mid, n), h)?;
        *z = project_joint(problem, &(&*z + g_mid * s))?;
    }
    Ok(())
}

/// Solves the saddle problem at a frozen parameter. Non-convergence is
/// reported through `converged = false`, not as an error.
pub fn solve_saddle_frozen(
    problem: &dyn SaddleProblem,
    h: &DVector<f64>,
    settings: &SolveSettings,
    warm_start: Option<&JointState>,
) -> Result<EquilibriumSolve> {
    let start = match warm_start {
        Some(s) => s.clone(),
        None => problem.initial_guess(h),
    };
    crate::problem::check_inputs(problem, &start, h)?;
    let n = problem.primal_dim();
    let mut z = project_joint(problem, &start.to_vector())?;
    let mut r = residual_at(problem, &z, h)?;
    let mut iterations = 0;
    let mut converged = r <= settings.tol;
    let mut round = 0;
    while !converged && round < settings.max_rounds {
        round += 1;
        converged = newton_phase(problem, &mut z, &mut r, h, settings, &mut iterations)?;
        if converged {
            break;
        }
        if null_space_escape(problem, &mut z, &mut r, h, settings, &mut iterations)? {
            converged = r <= settings.tol;
            continue;
        }
        flow_phase(problem, &mut z, h, settings, &mut iterations)?;
        r = residual_at(problem, &z, h)?;
        converged = r <= settings.tol;
    }
    Ok(EquilibriumSolve {
        x_star: JointState::from_vector(&z, n),
        residual_norm: r,
        iterations,
        converged,
    })
}

/// Sensitivity matrix `phi` of size `(n + m) x q`.
#[derive(Debug, Clone)]
pub struct SensitivityJacobian {
    pub phi: DMatrix<f64>,
    pub primal_dim: usize,
    /// Condition number of the residual Jacobian that was inverted; infinite
    /// when it was not computed.
    pub cond: f64,
}

impl SensitivityJacobian {
    pub fn norm(&self) -> f64 {
        spectral_norm(&self.phi)
    }

    /// Rows belonging to the primal variables.
    pub fn phi_x(&self) -> DMatrix<f64> {
        self.phi.rows(0, self.primal_dim).into_owned()
    }

    pub fn phi_x_norm(&self) -> f64 {
        spectral_norm(&self.phi_x())
    }

    /// `||phi A||`.
    pub fn phi_a_norm(&self, a: &DMatrix<f64>) -> f64 {
        spectral_norm(&(&self.phi * a))
    }

    /// `||phi_x A||`.
    pub fn phi_x_a_norm(&self, a: &DMatrix<f64>) -> f64 {
        spectral_norm(&(self.phi_x() * a))
    }
}

/// Implicit-function sensitivity `phi = -(dF/dz)^{-1} dF/dh` at a converged
/// equilibrium.
pub fn ift_jacobian(
    problem: &dyn SaddleProblem,
    eq: &EquilibriumSolve,
    h: &DVector<f64>,
) -> Result<SensitivityJacobian> {
    if !eq.converged {
        return Err(Error::NotConverged {
            residual: eq.residual_norm,
            iterations: eq.iterations,
        });
    }
    let (b, k) = residual_jacobians(problem, &eq.x_star, h)?;
    let (sol, cond) = solve_conditioned(&b, &(-k))?;
    Ok(SensitivityJacobian {
        phi: sol,
        primal_dim: problem.primal_dim(),
        cond,
    })
}

/// The same formula evaluated at the current iterate instead of the
/// equilibrium, used as the online compensation estimate.
pub fn estimate_phi_hat(
    problem: &dyn SaddleProblem,
    state: &JointState,
    h: &DVector<f64>,
) -> Result<SensitivityJacobian> {
    let (b, k) = residual_jacobians(problem, state, h)?;
    let (sol, cond) = solve_conditioned(&b, &(-k))?;
    Ok(SensitivityJacobian {
        phi: sol,
        primal_dim: problem.primal_dim(),
        cond,
    })
}

/// Sampled Lipschitz constant of the compensation estimate around an
/// equilibrium: `sup ||phi_hat(z) - phi_hat(z*)|| / ||z - z*||` over feasible
/// probes at several radii. When `primal_only` is set the probes move `x`
/// only and the primal rows are compared.
pub fn estimate_lipschitz(
    problem: &dyn SaddleProblem,
    x_star: &JointState,
    h: &DVector<f64>,
    rng: &mut RngStream,
    probes: usize,
    primal_only: bool,
) -> Result<f64> {
    let n = problem.primal_dim();
    let base = estimate_phi_hat(problem, x_star, h)?;
    let base_m = if primal_only { base.phi_x() } else { base.phi.clone() };
    let z0 = x_star.to_vector();
    let scale = 1.0 + z0.norm();
    let mut best: f64 = 0.0;
    for k in 0..probes {
        let radius = scale * 10f64.powi(-3 + (k % 4) as i32);
        let mut dir = rng.normal_vector(z0.len());
        if primal_only {
            dir.rows_mut(n, z0.len() - n).fill(0.0);
        }
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        let probe = project_joint(problem, &(&z0 + dir * (radius / norm)))?;
        let dz = &probe - &z0;
        let dist = if primal_only { dz.rows(0, n).norm() } else { dz.norm() };
        if dist < 1e-12 * scale {
            continue;
        }
        let ps = JointState::from_vector(&probe, n);
        let phi = match estimate_phi_hat(problem, &ps, h) {
            Ok(p) => p,
            Err(Error::Singular { .. }) | Err(Error::NonFinite { .. }) => continue,
            Err(e) => return Err(e),
        };
        let pm = if primal_only { phi.phi_x() } else { phi.phi };
        best = best.max(spectral_norm(&(pm - &base_m)) / dist);
    }
    Ok(best)
}

/// Constants of the tracking-error analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConstants {
    pub case: ConvexityCase,
    pub kappa: f64,
    pub m_x: f64,
    pub m_lambda: f64,
    /// `min(M_x, M_lambda)` in the strong case, `M_x` in the degraded case.
    pub m: f64,
    pub lambda_max_a: f64,
    /// Sampled `sup ||phi A||` (strong) or `sup ||phi_x A||` (degraded).
    pub sup_phi_a: f64,
    /// Sampled `sup ||phi||` (strong) or `sup ||phi_x||` (degraded).
    pub sup_phi: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// Bound on `||[phi; I]||`.
    pub gamma: f64,
    pub alpha_sq: f64,
    pub beta: f64,
    /// Sampled Lipschitz constant of the compensation estimate.
    pub lipschitz: f64,
    /// Sampled bound on `||dG/dz||`, the Lipschitz constant of the unscaled
    /// direction (zero when unknown).
    pub direction_lipschitz: f64,
    /// `||A||`.
    pub drift_norm: f64,
    pub samples: usize,
}

impl StabilityConstants {
    /// Assembles the constants from their ingredients.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        case: ConvexityCase,
        kappa: f64,
        m_x: f64,
        m_lambda: f64,
        lambda_max_a: f64,
        sup_phi_a: f64,
        sup_phi: f64,
        alpha_sq: f64,
        beta: f64,
        lipschitz: f64,
    ) -> Self {
        let m = match case {
            ConvexityCase::Strong => m_x.min(m_lambda),
            ConvexityCase::Degraded => m_x,
        };
        let a1 = (0.5 / kappa).min(0.5);
        let a2 = (0.5 / kappa).max(0.5);
        let a3 = (2.0 * m).min(-lambda_max_a) - sup_phi_a / kappa;
        let a4 = (1.0 / kappa).max(1.0);
        Self {
            case,
            kappa,
            m_x,
            m_lambda,
            m,
            lambda_max_a,
            sup_phi_a,
            sup_phi,
            a1,
            a2,
            a3,
            a4,
            c1: 0.5 / kappa,
            c2: 0.5 / kappa,
            c3: 2.0 * m_x,
            c4: 1.0 / kappa,
            gamma: (sup_phi * sup_phi + 1.0).sqrt(),
            alpha_sq,
            beta,
            lipschitz,
            direction_lipschitz: 0.0,
            drift_norm: -lambda_max_a,
            samples: 0,
        }
    }

    pub fn with_direction_lipschitz(mut self, value: f64) -> Self {
        self.direction_lipschitz = value;
        self
    }

    /// Whether the analysis applies (`a3 > 0`).
    pub fn valid(&self) -> bool {
        self.a3 > 0.0
    }

    pub fn ratio_a4_a3(&self) -> f64 {
        self.a4 / self.a3
    }

    /// Multiplier of `alpha^2` in the average tracking-error bound.
    pub fn bound_coefficient(&self) -> f64 {
        if self.valid() {
            (self.a4 * self.gamma / self.a3).powi(2)
        } else {
            f64::INFINITY
        }
    }

    /// Bound on the time-averaged `||z_e||^2` for excitation power `alpha_sq`.
    pub fn tracking_bound(&self, alpha_sq: f64) -> f64 {
        self.bound_coefficient() * alpha_sq
    }

    /// Largest mean excitation magnitude for which compensation drives the
    /// average error to zero.
    pub fn compensation_threshold(&self) -> f64 {
        if !self.valid() {
            return 0.0;
        }
        if self.lipschitz == 0.0 {
            return f64::INFINITY;
        }
        self.a3 / (self.a4 * self.lipschitz)
    }
}

/// Computes the constants by solving at every sampled parameter, estimating
/// the curvature and the sensitivity there, and taking the worst case.
pub fn stability_constants(
    problem: &dyn SaddleProblem,
    channel: &ChannelModel,
    kappa: f64,
    sampled_h: &[DVector<f64>],
    settings: &SolveSettings,
    rng: &mut RngStream,
) -> Result<StabilityConstants> {
    if sampled_h.is_empty() {
        return Err(Error::InvalidModel("no parameter samples".into()));
    }
    let case = problem.case();
    let a = channel.drift();
    let mut warm: Option<JointState> = None;
    let mut m_x = f64::INFINITY;
    let mut m_lambda = f64::INFINITY;
    let mut sup_phi_a: f64 = 0.0;
    let mut sup_phi: f64 = 0.0;
    let mut lipschitz: f64 = 0.0;
    let mut direction_lipschitz: f64 = 0.0;
    let lip_every = (sampled_h.len() / 20).max(1);
    for (i, h) in sampled_h.iter().enumerate() {
        let mut eq = solve_saddle_frozen(problem, h, settings, warm.as_ref())?;
        if !eq.converged {
            eq = solve_saddle_frozen(problem, h, settings, None)?;
        }
        if !eq.converged {
            return Err(Error::NotConverged {
                residual: eq.residual_norm,
                iterations: eq.iterations,
            });
        }
        let moduli = estimate_moduli(problem, h, std::slice::from_ref(&eq.x_star))?;
        let (jz, _) = direction_jacobians(problem, &eq.x_star, h)?;
        direction_lipschitz = direction_lipschitz.max(spectral_norm(&jz));
        m_x = m_x.min(moduli.m_x);
        m_lambda = m_lambda.min(moduli.m_lambda);
        let phi = ift_jacobian(problem, &eq, h)?;
        match case {
            ConvexityCase::Strong => {
                sup_phi_a = sup_phi_a.max(phi.phi_a_norm(a));
                sup_phi = sup_phi.max(phi.norm());
            }
            ConvexityCase::Degraded => {
                sup_phi_a = sup_phi_a.max(phi.phi_x_a_norm(a));
                sup_phi = sup_phi.max(phi.phi_x_norm());
            }
        }
        if i % lip_every == 0 {
            let primal_only = case == ConvexityCase::Degraded;
            lipschitz = lipschitz.max(estimate_lipschitz(problem, &eq.x_star, h, rng, 8, primal_only)?);
        }
        warm = Some(eq.x_star);
    }
    let mut c = StabilityConstants::from_parts(
        case,
        kappa,
        m_x,
        m_lambda,
        channel.lambda_max(),
        sup_phi_a,
        sup_phi,
        channel.alpha_sq_theory(),
        channel.beta_theory(),
        lipschitz,
    );
    c.samples = sampled_h.len();
    c.direction_lipschitz = direction_lipschitz;
    c.drift_norm = spectral_norm(a);
    Ok(c)
}

/// Outcome of the stability-condition check
/// `sup ||phi A|| < kappa * min(2M, -lambda_max(A))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionVerdict {
    pub case: ConvexityCase,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; positive when the condition holds.
    pub margin: f64,
    pub pass: bool,
}

pub fn condition_check(constants: &StabilityConstants, kappa: f64) -> ConditionVerdict {
    let lhs = constants.sup_phi_a;
    let rhs = kappa * (2.0 * constants.m).min(-constants.lambda_max_a);
    ConditionVerdict {
        case: constants.case,
        lhs,
        rhs,
        margin: rhs - lhs,
        pass: lhs < rhs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constants_from_parts_match_hand_values() {
        let c = StabilityConstants::from_parts(ConvexityCase::Strong, 1.0, 0.5, 0.5, -0.02, 0.01, 0.5, 0.0, 0.0, 0.0);
        assert_relative_eq!(c.a3, 0.01, epsilon = 1e-15);
        assert_relative_eq!(c.a1, 0.5);
        assert_relative_eq!(c.a4, 1.0);
        assert!(c.a1 <= c.a2);
        let v = condition_check(&c, 1.0);
        assert!(v.pass);
        assert_relative_eq!(v.margin, 0.01, epsilon = 1e-15);
    }

    #[test]
    fn condition_fails_with_negative_margin() {
        // kappa * min(2M, -lambda_max) = 0.02 against ||phi A|| = 1.
        let c = StabilityConstants::from_parts(ConvexityCase::Strong, 1.0, 1.0, 1.0, -0.02, 1.0, 50.0, 0.0, 0.0, 0.0);
        let v = condition_check(&c, 1.0);
        assert!(!v.pass);
        assert_relative_eq!(v.margin, -0.98, epsilon = 1e-12);
        assert!(!c.valid());
        assert!(c.bound_coefficient().is_infinite());
    }

    #[test]
    fn degraded_constants() {
        let c = StabilityConstants::from_parts(ConvexityCase::Degraded, 0.5, 0.3, 0.0, -0.04, 0.01, 0.25, 0.0, 0.0, 0.0);
        assert_relative_eq!(c.c1, 1.0);
        assert_relative_eq!(c.c3, 0.6);
        assert_relative_eq!(c.c4, 2.0);
        assert_relative_eq!(c.a3, 0.04 - 0.02, epsilon = 1e-15);
        assert_relative_eq!(c.a4, 2.0);
    }
}
