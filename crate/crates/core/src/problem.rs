//! Saddle problems `min_{lambda in D} max_{x in X} L(x, lambda; h)`, their
//! feasible sets, the saddle vector field and the equilibrium residual.
//!
//! Throughout, the *direction* of a problem is the unprojected ascent-descent
//! vector `G = (dL/dx, -dL/dlambda)`. The flow moves along `kappa * G`,
//! restricted to the feasible sets, and the equilibrium residual is the
//! natural map `F(z) = Pi(z + G(z)) - z`, which vanishes exactly at the
//! constrained saddle points.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{central_jacobian, concat, lambda_max_sym, lambda_min_sym};
use crate::psd;

/// Relative step used for finite-difference derivatives of problem callbacks.
pub const FD_STEP: f64 = 1e-5;

/// Joint primal-dual state `(x, lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl JointState {
    pub fn new(x: DVector<f64>, lambda: DVector<f64>) -> Self {
        Self { x, lambda }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self::new(DVector::zeros(n), DVector::zeros(m))
    }

    /// Stacked vector `(x, lambda)`.
    pub fn to_vector(&self) -> DVector<f64> {
        concat(&self.x, &self.lambda)
    }

    /// Splits a stacked vector after its first `n` entries.
    pub fn from_vector(v: &DVector<f64>, n: usize) -> Self {
        let m = v.len() - n;
        Self::new(v.rows(0, n).into_owned(), v.rows(n, m).into_owned())
    }

    pub fn len(&self) -> usize {
        self.x.len() + self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One Hermitian block of a [`FeasibleSet::TracePsd`] set, stored with the
/// embedding from [`crate::psd`].
#[derive(Debug, Clone, PartialEq)]
pub struct PsdBlock {
    pub offset: usize,
    /// Matrix side length; the block occupies `size^2` reals.
    pub size: usize,
    pub budget: f64,
}

/// Feasible region of one variable block (all of `x`, or all of `lambda`).
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibleSet {
    Free,
    /// Nonnegative orthant; the flow uses the positive projection.
    Orthant,
    /// Entrywise bounds.
    Box { lower: f64, upper: f64 },
    /// Product of trace-capped PSD sets that tile the block.
    TracePsd(Vec<PsdBlock>),
}

impl FeasibleSet {
    /// Checks that the set is well formed for a block of length `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            FeasibleSet::Box { lower, upper } if !(lower <= upper) => Err(Error::InvalidModel(
                format!("box bounds [{lower}, {upper}] are empty"),
            )),
            FeasibleSet::TracePsd(blocks) => {
                let mut next = 0;
                for b in blocks {
                    if b.offset != next || !(b.budget >= 0.0) {
                        return Err(Error::InvalidModel(format!(
                            "PSD blocks must tile the vector in order with budgets >= 0 (block at {})",
                            b.offset
                        )));
                    }
                    next += psd::embedded_len(b.size);
                }
                check_dim("PSD block tiling", dim, next)
            }
            _ => Ok(()),
        }
    }

    /// Euclidean projection, in place.
    pub fn project(&self, v: &mut DVector<f64>) -> Result<()> {
        match self {
            FeasibleSet::Free => {}
            FeasibleSet::Orthant => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            FeasibleSet::Box { lower, upper } => {
                v.iter_mut().for_each(|x| *x = x.clamp(*lower, *upper))
            }
            FeasibleSet::TracePsd(blocks) => {
                for b in blocks {
                    let len = psd::embedded_len(b.size);
                    psd::project_embedded(&mut v.as_mut_slice()[b.offset..b.offset + len], b.size, b.budget)?;
                }
            }
        }
        Ok(())
    }

    pub fn projected(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = v.clone();
        self.project(&mut out)?;
        Ok(out)
    }

    /// Largest `t >= 0` with `v + t d` in the set, for coordinate sets.
    /// `None` for PSD blocks.
    pub fn max_step(&self, v: &DVector<f64>, d: &DVector<f64>) -> Option<f64> {
        let (lower, upper) = match self {
            FeasibleSet::Free => return Some(f64::INFINITY),
            FeasibleSet::Orthant => (0.0, f64::INFINITY),
            FeasibleSet::Box { lower, upper } => (*lower, *upper),
            FeasibleSet::TracePsd(_) => return None,
        };
        let mut t = f64::INFINITY;
        for (x, dx) in v.iter().zip(d.iter()) {
            if *dx < 0.0 {
                t = t.min((lower - x) / dx);
            } else if *dx > 0.0 {
                t = t.min((upper - x) / dx);
            }
        }
        Some(t.max(0.0))
    }

    /// Membership up to tolerance `tol`.
    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> Result<bool> {
        Ok(match self {
            FeasibleSet::Free => true,
            FeasibleSet::Orthant => v.iter().all(|x| *x >= -tol),
            FeasibleSet::Box { lower, upper } => v.iter().all(|x| *x >= lower - tol && *x <= upper + tol),
            FeasibleSet::TracePsd(blocks) => {
                for b in blocks {
                    let len = psd::embedded_len(b.size);
                    let eig = psd::embedded_eigenvalues(&v.as_slice()[b.offset..b.offset + len], b.size)?;
                    if eig.iter().any(|e| *e < -tol) || eig.iter().sum::<f64>() > b.budget + tol {
                        return Ok(false);
                    }
                }
                true
            }
        })
    }

    /// One projected Euler step `v + dt * dir` kept inside the set. For the
    /// orthant the positive projection is applied to `dir` first, then the
    /// result is clipped at zero.
    pub fn euler_step(&self, v: &DVector<f64>, dir: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        let mut out = match self {
            FeasibleSet::Orthant => v + positive_projection(dir, v) * dt,
            _ => v + dir * dt,
        };
        self.project(&mut out)?;
        Ok(out)
    }

    /// Restriction of `dir` to directions that keep `v` feasible.
    pub fn tangent(&self, v: &DVector<f64>, dir: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(match self {
            FeasibleSet::Free => dir.clone(),
            FeasibleSet::Orthant => positive_projection(dir, v),
            FeasibleSet::Box { lower, upper } => DVector::from_iterator(
                v.len(),
                v.iter().zip(dir.iter()).map(|(x, d)| {
                    if (*x <= *lower && *d < 0.0) || (*x >= *upper && *d > 0.0) {
                        0.0
                    } else {
                        *d
                    }
                }),
            ),
            FeasibleSet::TracePsd(_) => {
                let eps = 1e-7 / (1.0 + dir.norm());
                let moved = self.projected(&(v + dir * eps))?;
                (moved - v) / eps
            }
        })
    }

    /// Jacobian of the projection evaluated at `y`.
    pub fn projection_jacobian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = y.len();
        Ok(match self {
            FeasibleSet::Free => DMatrix::identity(n, n),
            FeasibleSet::Orthant => {
                DMatrix::from_diagonal(&y.map(|v| if v > 0.0 { 1.0 } else { 0.0 }))
            }
            FeasibleSet::Box { lower, upper } => DMatrix::from_diagonal(
                &y.map(|v| if v > *lower && v < *upper { 1.0 } else { 0.0 }),
            ),
            FeasibleSet::TracePsd(blocks) => {
                let mut j = DMatrix::zeros(n, n);
                for b in blocks {
                    let len = psd::embedded_len(b.size);
                    let yb = y.rows(b.offset, len).into_owned();
                    let jb = central_jacobian(&yb, 1e-6, |v| {
                        let mut w = v.clone();
                        psd::project_embedded(w.as_mut_slice(), b.size, b.budget)?;
                        Ok(w)
                    })?;
                    j.view_mut((b.offset, b.offset), (len, len)).copy_from(&jb);
                }
                j
            }
        })
    }
}

/// Which stability analysis applies to a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvexityCase {
    /// Strongly concave in `x` and strongly convex in `lambda`.
    Strong,
    /// Strongly concave in `x`, merely convex (e.g. linear) in `lambda`.
    Degraded,
}

/// Analytically known lower bounds on the curvature moduli. Zero means no
/// useful bound is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModuliHint {
    pub m_x: f64,
    pub m_lambda: f64,
}

/// A parametrised saddle problem. Implementations supply the Lagrangian, its
/// partial gradients and the feasible sets; derivatives of the gradients are
/// obtained by finite differences unless `direction_jacobians` is provided.
pub trait SaddleProblem: Send + Sync {
    fn name(&self) -> &str;
    fn primal_dim(&self) -> usize;
    fn dual_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    fn value(&self, state: &JointState, h: &DVector<f64>) -> f64;
    fn grad_x(&self, state: &JointState, h: &DVector<f64>) -> DVector<f64>;
    fn grad_lambda(&self, state: &JointState, h: &DVector<f64>) -> DVector<f64>;

    fn primal_set(&self) -> &FeasibleSet;
    fn dual_set(&self) -> &FeasibleSet;

    fn moduli_hint(&self) -> ModuliHint;

    /// A feasible starting point for equilibrium searches at `h`.
    fn initial_guess(&self, h: &DVector<f64>) -> JointState;

    /// Analytic `(dG/dz, dG/dh)` for the direction `G`, if available.
    fn direction_jacobians(
        &self,
        _state: &JointState,
        _h: &DVector<f64>,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    fn case(&self) -> ConvexityCase {
        if self.moduli_hint().m_lambda > 0.0 {
            ConvexityCase::Strong
        } else {
            ConvexityCase::Degraded
        }
    }

    fn joint_dim(&self) -> usize {
        self.primal_dim() + self.dual_dim()
    }
}

/// Validates dimensions and finiteness of a call's inputs.
pub fn check_inputs(problem: &dyn SaddleProblem, state: &JointState, h: &DVector<f64>) -> Result<()> {
    check_dim("primal state", problem.primal_dim(), state.x.len())?;
    check_dim("dual state", problem.dual_dim(), state.lambda.len())?;
    check_dim("parameter", problem.param_dim(), h.len())?;
    check_finite("primal state", state.x.as_slice())?;
    check_finite("dual state", state.lambda.as_slice())?;
    check_finite("parameter", h.as_slice())
}

pub fn eval_lagrangian(problem: &dyn SaddleProblem, state: &JointState, h: &DVector<f64>) -> Result<f64> {
    check_inputs(problem, state, h)?;
    let v = problem.value(state, h);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: "Lagrangian value",
            index: 0,
        })
    }
}

/// The ascent-descent direction `(dL/dx, -dL/dlambda)`.
pub fn direction(problem: &dyn SaddleProblem, state: &JointState, h: &DVector<f64>) -> Result<DVector<f64>> {
    check_inputs(problem, state, h)?;
    let gx = problem.grad_x(state, h);
    let gl = -problem.grad_lambda(state, h);
    check_dim("primal gradient", problem.primal_dim(), gx.len())?;
    check_dim("dual gradient", problem.dual_dim(), gl.len())?;
    check_finite("primal gradient", gx.as_slice())?;
    check_finite("dual gradient", gl.as_slice())?;
    Ok(concat(&gx, &gl))
}

/// Jacobians of the direction with respect to the joint state and the
/// parameter.
pub fn direction_jacobians(
    problem: &dyn SaddleProblem,
    state: &JointState,
    h: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_inputs(problem, state, h)?;
    if let Some((jz, jh)) = problem.direction_jacobians(state, h) {
        return Ok((jz, jh));
    }
    let n = problem.primal_dim();
    let z = state.to_vector();
    let jz = central_jacobian(&z, FD_STEP, |v| direction(problem, &JointState::from_vector(v, n), h))?;
    let jh = central_jacobian(h, FD_STEP, |p| direction(problem, state, p))?;
    Ok((jz, jh))
}

/// `[u]^+_lambda`: keeps `u_i` when it is positive or `lambda_i > 0`, else 0.
pub fn positive_projection(direction: &DVector<f64>, dual: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        direction.len(),
        direction
            .iter()
            .zip(dual.iter())
            .map(|(u, l)| if *u > 0.0 || *l > 0.0 { *u } else { 0.0 }),
    )
}

/// The saddle vector field `kappa * (dL/dx, [-dL/dlambda]^+)`, with directions
/// restricted to the feasible sets.
pub fn saddle_field(
    problem: &dyn SaddleProblem,
    state: &JointState,
    h: &DVector<f64>,
    kappa: f64,
) -> Result<JointState> {
    let g = direction(problem, state, h)?;
    let n = problem.primal_dim();
    let m = problem.dual_dim();
    let gx = g.rows(0, n).into_owned() * kappa;
    let gl = g.rows(n, m).into_owned() * kappa;
    Ok(JointState::new(
        problem.primal_set().tangent(&state.x, &gx)?,
        problem.dual_set().tangent(&state.lambda, &gl)?,
    ))
}

/// Projection of a stacked joint vector onto the product of feasible sets.
pub fn project_joint(problem: &dyn SaddleProblem, z: &DVector<f64>) -> Result<DVector<f64>> {
    let s = JointState::from_vector(z, problem.primal_dim());
    Ok(concat(
        &problem.primal_set().projected(&s.x)?,
        &problem.dual_set().projected(&s.lambda)?,
    ))
}

fn projection_jacobian_joint(problem: &dyn SaddleProblem, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = problem.primal_dim();
    let m = problem.dual_dim();
    let s = JointState::from_vector(y, n);
    let mut d = DMatrix::zeros(n + m, n + m);
    d.view_mut((0, 0), (n, n))
        .copy_from(&problem.primal_set().projection_jacobian(&s.x)?);
    d.view_mut((n, n), (m, m))
        .copy_from(&problem.dual_set().projection_jacobian(&s.lambda)?);
    Ok(d)
}

/// Natural-map residual `F(z) = Pi(z + G(z)) - z`.
pub fn natural_residual(problem: &dyn SaddleProblem, state: &JointState, h: &DVector<f64>) -> Result<DVector<f64>> {
    let g = direction(problem, state, h)?;
    let z = state.to_vector();
    Ok(project_joint(problem, &(&z + g))? - z)
}

/// Residual vector and its norm.
#[derive(Debug, Clone)]
pub struct EquilibriumResidual {
    pub value: DVector<f64>,
    pub norm: f64,
}

pub fn equilibrium_residual(
    problem: &dyn SaddleProblem,
    state: &JointState,
    h: &DVector<f64>,
) -> Result<EquilibriumResidual> {
    let value = natural_residual(problem, state, h)?;
    let norm = value.norm();
    Ok(EquilibriumResidual { value, norm })
}

/// Jacobians `(dF/dz, dF/dh)` of the natural-map residual.
pub fn residual_jacobians(
    problem: &dyn SaddleProblem,
    state: &JointState,
    h: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let g = direction(problem, state, h)?;
    let (jz, jh) = direction_jacobians(problem, state, h)?;
    let y = state.to_vector() + g;
    let dpi = projection_jacobian_joint(problem, &y)?;
    let dim = y.len();
    let b = &dpi * (DMatrix::identity(dim, dim) + jz) - DMatrix::identity(dim, dim);
    let k = dpi * jh;
    Ok((b, k))
}

/// Sampled curvature moduli.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moduli {
    /// `inf -lambda_max(d2L/dx2)` over the samples.
    pub m_x: f64,
    /// `inf lambda_min(d2L/dlambda2)` over the samples.
    pub m_lambda: f64,
    pub samples: usize,
}

/// Estimates the curvature moduli from finite-difference Hessian blocks at
/// the given states. Returns an error when the primal block is not negative
/// definite at some sample.
pub fn estimate_moduli(
    problem: &dyn SaddleProblem,
    h: &DVector<f64>,
    samples: &[JointState],
) -> Result<Moduli> {
    let n = problem.primal_dim();
    let m = problem.dual_dim();
    let mut m_x = f64::INFINITY;
    let mut m_lambda = f64::INFINITY;
    for s in samples {
        let (jz, _) = direction_jacobians(problem, s, h)?;
        let hxx = jz.view((0, 0), (n, n)).into_owned();
        let top = if n > 0 { lambda_max_sym(&hxx) } else { f64::NEG_INFINITY };
        if top >= 0.0 {
            return Err(Error::InvalidModel(format!(
                "Lagrangian is not strongly concave in x at a sample (lambda_max = {top:.3e})"
            )));
        }
        m_x = m_x.min(-top);
        if m > 0 {
            // The dual rows of G carry -dL/dlambda.
            let hll = -jz.view((n, n), (m, m)).into_owned();
            m_lambda = m_lambda.min(lambda_min_sym(&hll).max(0.0));
        }
    }
    if m == 0 {
        m_lambda = 0.0;
    }
    Ok(Moduli {
        m_x,
        m_lambda,
        samples: samples.len(),
    })
}
