//! Post-processing of trajectories: time-averaged tracking errors, Lyapunov
//! drift audits, bound predictions and throughput.

use nalgebra::DVector;

use crate::apps::NumInstance;
use crate::error::{Error, Result};
use crate::flow::TrajectoryRecord;
use crate::linalg::concat;
use crate::oracle::{condition_check, StabilityConstants};
use crate::problem::ConvexityCase;

/// Default fraction of the horizon excluded from time averages.
pub const DEFAULT_BURN_IN: f64 = 0.1;

/// Safety factor of the per-step drift tolerance.
pub const DRIFT_TOLERANCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// `||x_tilde_e||^2`.
    Joint,
    /// `||x_e||^2`.
    Primal,
    /// `||z_e||^2` for the problem's case.
    Z,
}

/// Indices of records strictly after the burn-in prefix.
fn window(traj: &TrajectoryRecord, burn_in: f64) -> Result<std::ops::Range<usize>> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::InvalidModel(format!("burn-in fraction {burn_in} must lie in [0, 1)")));
    }
    let horizon = traj.steps as f64 * traj.dt;
    let cutoff = burn_in * horizon;
    let start = traj
        .times
        .iter()
        .position(|t| *t > cutoff + 1e-12 * horizon.max(1.0))
        .unwrap_or(traj.times.len());
    if start >= traj.times.len() {
        return Err(Error::InvalidModel("no records after burn-in".into()));
    }
    Ok(start..traj.times.len())
}

fn time_average(values: &[f64], range: std::ops::Range<usize>) -> Result<f64> {
    let slice = &values[range];
    if slice.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidModel("trajectory has no equilibrium series".into()));
    }
    // Every record stands for one stride of length stride * dt, so the
    // Riemann sum over the window divided by its length is the plain mean.
    Ok(slice.iter().sum::<f64>() / slice.len() as f64)
}

/// Time average of a squared error over the window after burn-in.
pub fn average_tracking_error(traj: &TrajectoryRecord, which: ErrorKind, burn_in: f64) -> Result<f64> {
    let range = window(traj, burn_in)?;
    match which {
        ErrorKind::Joint => time_average(&traj.err_joint, range),
        ErrorKind::Primal => time_average(&traj.err_primal, range),
        ErrorKind::Z => time_average(&traj.err_z(), range),
    }
}

/// Lyapunov values and the per-interval drift audit.
#[derive(Debug, Clone)]
pub struct LyapunovReport {
    pub values: Vec<f64>,
    /// `(V_{i+1} - V_i) / dt_i` for each recorded interval.
    pub drifts: Vec<f64>,
    /// Right-hand side `-a3 ||z_mid||^2 + a4 gamma ||z_mid|| ||u||`.
    pub bounds: Vec<f64>,
    pub tolerances: Vec<f64>,
    pub violations: usize,
}

fn error_vector(traj: &TrajectoryRecord, i: usize, case: ConvexityCase) -> DVector<f64> {
    let s = &traj.states[i];
    let e = &traj.equilibria[i];
    let xe = match case {
        ConvexityCase::Strong => s.to_vector() - e.to_vector(),
        ConvexityCase::Degraded => &s.x - &e.x,
    };
    concat(&xe, &(&traj.params[i] - &traj.h_bar))
}

/// Lyapunov function `||x_part||^2 / 2 kappa + ||h_e||^2 / 2` along the
/// trajectory and the check `dV/dt <= -a3 ||z||^2 + a4 gamma ||z|| ||u||`
/// on every recorded interval.
///
/// Because `V` is quadratic, `(V_{i+1} - V_i) / dt` equals the gradient at
/// the midpoint `z_mid` applied to the difference quotient. Comparing against
/// the continuous-time inequality at `z_mid` then leaves only the variation
/// of the vector field over half an interval, which is bounded by
/// `a4 ||z_mid|| * Lip * ||dz|| / 2` with `Lip = kappa ||dG/dz|| + ||A|| (1 +
/// gamma)`. The tolerance is that local curvature scale times `dt` times
/// [`DRIFT_TOLERANCE_FACTOR`]; it does not account for curvature of the
/// equilibrium map, which vanishes on linear problems.
pub fn lyapunov_series(
    traj: &TrajectoryRecord,
    constants: &StabilityConstants,
    case: ConvexityCase,
) -> Result<LyapunovReport> {
    if traj.equilibria.len() != traj.times.len() {
        return Err(Error::InvalidModel("trajectory has no equilibrium series".into()));
    }
    let kappa = traj.kappa;
    let n_x = match case {
        ConvexityCase::Strong => traj.states[0].len(),
        ConvexityCase::Degraded => traj.primal_dim,
    };
    let v_of = |z: &DVector<f64>| {
        let x = z.rows(0, n_x).norm_squared();
        let h = z.rows(n_x, z.len() - n_x).norm_squared();
        x / (2.0 * kappa) + 0.5 * h
    };
    let zs: Vec<DVector<f64>> = (0..traj.len()).map(|i| error_vector(traj, i, case)).collect();
    let values: Vec<f64> = zs.iter().map(v_of).collect();
    let lip = kappa * constants.direction_lipschitz + constants.drift_norm * (1.0 + constants.gamma);
    let mut drifts = Vec::with_capacity(zs.len().saturating_sub(1));
    let mut bounds = Vec::with_capacity(drifts.capacity());
    let mut tolerances = Vec::with_capacity(drifts.capacity());
    let mut violations = 0;
    for i in 1..zs.len() {
        let dt = traj.times[i] - traj.times[i - 1];
        let dz = &zs[i] - &zs[i - 1];
        let mid = (&zs[i] + &zs[i - 1]) * 0.5;
        let zn = mid.norm();
        let u = traj.noise_increments[i].norm() / dt;
        let drift = (values[i] - values[i - 1]) / dt;
        let bound = -constants.a3 * zn * zn + constants.a4 * constants.gamma * zn * u;
        let curvature_scale = constants.a4 * zn * lip * dz.norm() / dt;
        let tol = DRIFT_TOLERANCE_FACTOR * dt * curvature_scale + 1e-12 * (1.0 + values[i].abs()) / dt;
        if drift > bound + tol {
            violations += 1;
        }
        drifts.push(drift);
        bounds.push(bound);
        tolerances.push(tol);
    }
    Ok(LyapunovReport {
        values,
        drifts,
        bounds,
        tolerances,
        violations,
    })
}

/// Summary of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub avg_err_joint: f64,
    pub avg_err_primal: f64,
    /// `avg_err_joint - avg_err_primal`; reported, never bounded in the
    /// degraded case.
    pub avg_err_dual: f64,
    pub avg_err_z: f64,
    /// Tracking error of the problem's case: `avg_err_joint` (strong) or
    /// `avg_err_primal` (degraded).
    pub avg_err_tracking: f64,
    pub alpha_sq_measured: f64,
    pub beta_measured: f64,
    /// `a4^2 gamma^2 alpha^2 / a3^2` (strong case, condition satisfied).
    pub bound_strong: Option<f64>,
    /// The same with the primal sensitivity (degraded case).
    pub bound_primal: Option<f64>,
    pub drift_violations: Option<usize>,
    pub throughput_avg: Option<f64>,
}

/// Computes all metrics of a trajectory. Error averages are NaN when the
/// equilibrium was not tracked; bounds and the drift audit are filled in
/// only for tracked runs whose constants satisfy the stability condition.
pub fn compute_metrics(
    traj: &TrajectoryRecord,
    constants: Option<&StabilityConstants>,
    num: Option<&NumInstance>,
    burn_in: f64,
) -> Result<RunMetrics> {
    let tracked = !traj.equilibria.is_empty();
    let (joint, primal, z) = if tracked {
        (
            average_tracking_error(traj, ErrorKind::Joint, burn_in)?,
            average_tracking_error(traj, ErrorKind::Primal, burn_in)?,
            average_tracking_error(traj, ErrorKind::Z, burn_in)?,
        )
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    let mut out = RunMetrics {
        avg_err_joint: joint,
        avg_err_primal: primal,
        avg_err_dual: joint - primal,
        avg_err_z: z,
        avg_err_tracking: match traj.case {
            ConvexityCase::Strong => joint,
            ConvexityCase::Degraded => primal,
        },
        alpha_sq_measured: traj.alpha_sq,
        beta_measured: traj.beta,
        bound_strong: None,
        bound_primal: None,
        drift_violations: None,
        throughput_avg: None,
    };
    if let (Some(c), true) = (constants, tracked) {
        if condition_check(c, traj.kappa).pass && c.valid() {
            let bound = c.tracking_bound(traj.alpha_sq);
            match c.case {
                ConvexityCase::Strong => out.bound_strong = Some(bound),
                ConvexityCase::Degraded => out.bound_primal = Some(bound),
            }
            out.drift_violations = Some(lyapunov_series(traj, c, c.case)?.violations);
        }
    }
    if let Some(inst) = num {
        out.throughput_avg = Some(throughput_average(traj, inst, burn_in)?);
    }
    Ok(out)
}

/// Verdict of comparing a measured average against its bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundVerdict {
    Inapplicable,
    Checked { measured: f64, bound: f64, slack_ratio: f64, holds: bool },
}

pub fn bound_report(metrics: &RunMetrics, constants: &StabilityConstants) -> BoundVerdict {
    let bound = match constants.case {
        ConvexityCase::Strong => metrics.bound_strong,
        ConvexityCase::Degraded => metrics.bound_primal,
    };
    // avg_err_z already uses the primal error in the degraded case.
    let measured = metrics.avg_err_z;
    match bound {
        None => BoundVerdict::Inapplicable,
        Some(b) => BoundVerdict::Checked {
            measured,
            bound: b,
            slack_ratio: if measured > 0.0 { b / measured } else { f64::INFINITY },
            holds: measured <= b,
        },
    }
}

/// Time-averaged delivered throughput over the window after burn-in.
pub fn throughput_average(traj: &TrajectoryRecord, instance: &NumInstance, burn_in: f64) -> Result<f64> {
    let range = window(traj, burn_in)?;
    let n = range.len();
    let total: f64 = range
        .map(|i| instance.throughput(&traj.states[i].x, &traj.params[i]))
        .sum();
    Ok(total / n as f64)
}

/// Sup of `||phi A||` (strong case) or `||phi_x A||` (degraded case) over
/// the equilibria recorded along a trajectory.
pub fn sup_phi_a_along(
    problem: &dyn crate::problem::SaddleProblem,
    traj: &TrajectoryRecord,
    drift: &nalgebra::DMatrix<f64>,
) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for (eq, h) in traj.equilibria.iter().zip(traj.params.iter()) {
        let solve = crate::oracle::EquilibriumSolve {
            x_star: eq.clone(),
            residual_norm: 0.0,
            iterations: 0,
            converged: true,
        };
        let phi = crate::oracle::ift_jacobian(problem, &solve, h)?;
        sup = sup.max(match traj.case {
            ConvexityCase::Strong => phi.phi_a_norm(drift),
            ConvexityCase::Degraded => phi.phi_x_a_norm(drift),
        });
    }
    Ok(sup)
}

/// Across-seed mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let count = values.len();
    if count == 0 {
        return Summary {
            mean: f64::NAN,
            stderr: f64::NAN,
            count,
        };
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let stderr = if count > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
        (var / count as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, stderr, count }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn summary_of_constant_values() {
        let s = summarize(&[2.0, 2.0, 2.0]);
        assert_relative_eq!(s.mean, 2.0);
        assert_relative_eq!(s.stderr, 0.0);
    }

    #[test]
    fn summary_stderr() {
        let s = summarize(&[1.0, 3.0]);
        assert_relative_eq!(s.mean, 2.0);
        assert_relative_eq!(s.stderr, 1.0, epsilon = 1e-15);
    }
}
