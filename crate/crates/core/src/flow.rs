//! Explicit integrators for the plain, compensated and distributed
//! compensated primal-dual flows, and the seeded trajectory driver.

use nalgebra::{DMatrix, DVector};

use crate::channel::{step_channel, ChannelModel, ChannelState, RngStream};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::solve_conditioned;
use crate::oracle::{estimate_phi_hat, ift_jacobian, solve_saddle_frozen, SolveSettings};
use crate::problem::{direction, residual_jacobians, ConvexityCase, JointState, SaddleProblem};

/// Disjoint groups of joint-variable indices covering `0..n+m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(groups: Vec<Vec<usize>>, dim: usize) -> Result<Self> {
        let mut seen = vec![false; dim];
        for g in &groups {
            for &i in g {
                if i >= dim || seen[i] {
                    return Err(Error::InvalidModel(format!(
                        "partition index {i} is out of range or repeated"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidModel(format!("partition misses variable {i}")));
        }
        Ok(Self { groups })
    }

    pub fn single(dim: usize) -> Self {
        Self {
            groups: vec![(0..dim).collect()],
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Plain,
    Compensated,
    DistributedCompensated(Partition),
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Compensated => "compensated",
            Mode::DistributedCompensated(_) => "distributed-compensated",
        }
    }
}

/// Source of the parameter derivative used by the compensation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdotSource {
    /// Backward difference `(h_k - h_{k-1}) / dt`, the only choice available
    /// to a deployed algorithm.
    FiniteDifference,
    /// The true increment of the current step, `(h_{k+1} - h_k) / dt`.
    Oracle,
}

/// Which sensitivity feeds the centralised compensation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiSource {
    /// Implicit-function formula evaluated at the current iterate.
    Estimate,
    /// Exact sensitivity at the current equilibrium.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialParameter {
    Mean,
    /// Drawn from the stationary law (consumes the first `q` normals).
    Stationary,
    Given(DVector<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// The saddle point at the initial parameter.
    Saddle,
    Given(JointState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub kappa: f64,
    pub dt: f64,
    pub horizon: f64,
    pub mode: Mode,
    pub hdot: HdotSource,
    pub phi: PhiSource,
    /// Record (and, if enabled, solve for the equilibrium) every `stride` steps.
    pub stride: usize,
    pub track_equilibrium: bool,
    pub initial_parameter: InitialParameter,
    pub initial_state: InitialState,
    pub solve: SolveSettings,
}

impl IntegratorConfig {
    pub fn new(kappa: f64, dt: f64, horizon: f64) -> Self {
        Self {
            kappa,
            dt,
            horizon,
            mode: Mode::Plain,
            hdot: HdotSource::FiniteDifference,
            phi: PhiSource::Estimate,
            stride: 1,
            track_equilibrium: true,
            initial_parameter: InitialParameter::Mean,
            initial_state: InitialState::Saddle,
            solve: SolveSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !(self.dt > 0.0) || !(self.horizon >= self.dt) || self.stride == 0 {
            return Err(Error::InvalidModel(format!(
                "integrator needs kappa > 0, dt > 0, horizon >= dt and stride >= 1 (kappa {}, dt {}, horizon {}, stride {})",
                self.kappa, self.dt, self.horizon, self.stride
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Advances both blocks along `dir` (already scaled) for one step.
fn advance(problem: &dyn SaddleProblem, state: &JointState, dir: &DVector<f64>, dt: f64) -> Result<JointState> {
    let n = problem.primal_dim();
    let m = problem.dual_dim();
    check_finite("flow direction", dir.as_slice())?;
    let x = problem
        .primal_set()
        .euler_step(&state.x, &dir.rows(0, n).into_owned(), dt)?;
    let lambda = problem
        .dual_set()
        .euler_step(&state.lambda, &dir.rows(n, m).into_owned(), dt)?;
    Ok(JointState::new(x, lambda))
}

/// One Euler step of the plain flow.
pub fn pd_step(
    problem: &dyn SaddleProblem,
    state: &JointState,
    h: &DVector<f64>,
    config: &IntegratorConfig,
) -> Result<JointState> {
    let g = direction(problem, state, h)? * config.kappa;
    advance(problem, state, &g, config.dt)
}

/// One Euler step of the compensated flow: the direction is
/// `kappa * G + phi_hat * h_dot` for both blocks.
pub fn compensated_step(
    problem: &dyn SaddleProblem,
    state: &JointState,
    h: &DVector<f64>,
    h_dot: &DVector<f64>,
    phi_hat: &DMatrix<f64>,
    config: &IntegratorConfig,
) -> Result<JointState> {
    check_dim("compensation rows", problem.joint_dim(), phi_hat.nrows())?;
    check_dim("compensation columns", problem.param_dim(), phi_hat.ncols())?;
    check_dim("parameter derivative", problem.param_dim(), h_dot.len())?;
    check_finite("compensation matrix", phi_hat.as_slice())?;
    let dir = direction(problem, state, h)? * config.kappa + phi_hat * h_dot;
    advance(problem, state, &dir, config.dt)
}

/// Block-diagonal compensation estimate `phi_i = -B_i^{-1} K_i` per group.
/// Groups with a singular diagonal block get zero compensation; their count
/// is returned alongside the estimate.
pub fn distributed_phi_hat(
    problem: &dyn SaddleProblem,
    state: &JointState,
    h: &DVector<f64>,
    partition: &Partition,
) -> Result<(DMatrix<f64>, usize)> {
    let (b, k) = residual_jacobians(problem, state, h)?;
    let q = problem.param_dim();
    let mut phi = DMatrix::zeros(problem.joint_dim(), q);
    let mut fallbacks = 0;
    for group in partition.groups() {
        let d = group.len();
        let bi = DMatrix::from_fn(d, d, |r, c| b[(group[r], group[c])]);
        let ki = DMatrix::from_fn(d, q, |r, c| k[(group[r], c)]);
        match solve_conditioned(&bi, &(-ki)) {
            Ok((sol, _)) if sol.iter().all(|v| v.is_finite()) => {
                for (r, &row) in group.iter().enumerate() {
                    phi.row_mut(row).copy_from(&sol.row(r));
                }
            }
            _ => {
                log::debug!("singular diagonal block for group {group:?}; compensation disabled this step");
                fallbacks += 1;
            }
        }
    }
    Ok((phi, fallbacks))
}

/// One Euler step of the distributed compensated flow. Returns the new state
/// and the number of groups that fell back to zero compensation.
pub fn distributed_compensated_step(
    problem: &dyn SaddleProblem,
    state: &JointState,
    h: &DVector<f64>,
    h_dot: &DVector<f64>,
    partition: &Partition,
    config: &IntegratorConfig,
) -> Result<(JointState, usize)> {
    let (phi, fallbacks) = distributed_phi_hat(problem, state, h, partition)?;
    Ok((compensated_step(problem, state, h, h_dot, &phi, config)?, fallbacks))
}

/// Series recorded along a trajectory, sampled every `stride` steps
/// (index 0 is the initial condition).
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub dt: f64,
    pub kappa: f64,
    pub stride: usize,
    pub case: ConvexityCase,
    pub primal_dim: usize,
    /// Mean parameter of the driving channel.
    pub h_bar: DVector<f64>,
    pub times: Vec<f64>,
    pub states: Vec<JointState>,
    pub params: Vec<DVector<f64>>,
    /// Equilibria at the recorded parameters (empty when not tracked).
    pub equilibria: Vec<JointState>,
    /// `||x_tilde_e||^2` (NaN when not tracked).
    pub err_joint: Vec<f64>,
    /// `||x_e||^2`, primal block only.
    pub err_primal: Vec<f64>,
    /// `||h - h_bar||^2`.
    pub err_param: Vec<f64>,
    /// Lyapunov value `||.||^2 / 2 kappa + ||h_e||^2 / 2` using the joint
    /// error in the strong case and the primal error in the degraded case.
    pub lyapunov: Vec<f64>,
    /// Brownian increment accumulated over each recorded interval; entry `i`
    /// covers `(times[i-1], times[i]]`, entry 0 is zero.
    pub noise_increments: Vec<DVector<f64>>,
    /// Mean of `||sigma xi||^2` over all steps.
    pub alpha_sq: f64,
    /// Mean of `||sigma xi||` over all steps.
    pub beta: f64,
    /// Group steps that fell back to zero compensation.
    pub fallbacks: usize,
    pub steps: usize,
}

impl TrajectoryRecord {
    /// `||z_e||^2` for the problem's case.
    pub fn err_z(&self) -> Vec<f64> {
        let x = match self.case {
            ConvexityCase::Strong => &self.err_joint,
            ConvexityCase::Degraded => &self.err_primal,
        };
        x.iter().zip(self.err_param.iter()).map(|(a, b)| a + b).collect()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Simulates one seeded trajectory. At step `k` the channel is advanced to
/// `h_{k+1}`, the state is updated with gradients at `h_k`, and errors are
/// measured against the equilibrium at `h_{k+1}`.
pub fn run_trajectory(
    problem: &dyn SaddleProblem,
    channel: &ChannelModel,
    config: &IntegratorConfig,
    mut rng: RngStream,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    check_dim("channel dimension", problem.param_dim(), channel.dim())?;
    let n = problem.primal_dim();
    let needs_equilibrium_each_step = matches!(config.mode, Mode::Compensated) && config.phi == PhiSource::Exact;
    let h0 = match &config.initial_parameter {
        InitialParameter::Mean => channel.mean().clone(),
        InitialParameter::Stationary => channel.sample_stationary(&mut rng),
        InitialParameter::Given(h) => {
            check_dim("initial parameter", channel.dim(), h.len())?;
            h.clone()
        }
    };
    let solve_at = |h: &DVector<f64>, warm: Option<&JointState>, step: usize| -> Result<JointState> {
        let abort = |e: Error| Error::TrajectoryAborted {
            step,
            source: Box::new(e),
        };
        let mut eq = solve_saddle_frozen(problem, h, &config.solve, warm).map_err(abort)?;
        if !eq.converged && warm.is_some() {
            eq = solve_saddle_frozen(problem, h, &config.solve, None).map_err(abort)?;
        }
        if !eq.converged {
            return Err(abort(Error::NotConverged {
                residual: eq.residual_norm,
                iterations: eq.iterations,
            }));
        }
        Ok(eq.x_star)
    };
    let track = config.track_equilibrium || needs_equilibrium_each_step;
    let mut eq_current = if track || config.initial_state == InitialState::Saddle {
        Some(solve_at(&h0, None, 0)?)
    } else {
        None
    };
    let mut state = match &config.initial_state {
        InitialState::Saddle => eq_current.clone().expect("solved above"),
        InitialState::Given(s) => {
            crate::problem::check_inputs(problem, s, &h0)?;
            s.clone()
        }
    };

    let steps = config.steps();
    let records = steps / config.stride + 1;
    let mut rec = TrajectoryRecord {
        dt: config.dt,
        kappa: config.kappa,
        stride: config.stride,
        case: problem.case(),
        primal_dim: n,
        h_bar: channel.mean().clone(),
        times: Vec::with_capacity(records),
        states: Vec::with_capacity(records),
        params: Vec::with_capacity(records),
        equilibria: Vec::new(),
        err_joint: Vec::with_capacity(records),
        err_primal: Vec::with_capacity(records),
        err_param: Vec::with_capacity(records),
        lyapunov: Vec::with_capacity(records),
        noise_increments: Vec::with_capacity(records),
        alpha_sq: 0.0,
        beta: 0.0,
        fallbacks: 0,
        steps,
    };
    let q = channel.dim();
    let push = |rec: &mut TrajectoryRecord, t: f64, s: &JointState, h: &DVector<f64>, eq: Option<&JointState>, noise: DVector<f64>| {
        let he = (h - channel.mean()).norm_squared();
        let (ej, ep) = match eq {
            Some(e) => ((s.to_vector() - e.to_vector()).norm_squared(), (&s.x - &e.x).norm_squared()),
            None => (f64::NAN, f64::NAN),
        };
        let ex = match rec.case {
            ConvexityCase::Strong => ej,
            ConvexityCase::Degraded => ep,
        };
        rec.times.push(t);
        rec.states.push(s.clone());
        rec.params.push(h.clone());
        if let Some(e) = eq {
            rec.equilibria.push(e.clone());
        }
        rec.err_joint.push(ej);
        rec.err_primal.push(ep);
        rec.err_param.push(he);
        rec.lyapunov.push(ex / (2.0 * config.kappa) + 0.5 * he);
        rec.noise_increments.push(noise);
    };
    push(
        &mut rec,
        0.0,
        &state,
        &h0,
        if config.track_equilibrium { eq_current.as_ref() } else { None },
        DVector::zeros(q),
    );

    let mut ch = ChannelState::at(h0);
    let mut noise_acc = DVector::zeros(q);
    let sqrt_dt = config.dt.sqrt();
    for k in 0..steps {
        let next = step_channel(channel, &ch, config.dt, &mut rng).map_err(|e| Error::TrajectoryAborted {
            step: k,
            source: Box::new(e),
        })?;
        rec.alpha_sq += next.last_noise.norm_squared();
        rec.beta += next.last_noise.norm();
        noise_acc += &next.last_noise * sqrt_dt;
        let h_dot = match config.hdot {
            HdotSource::FiniteDifference => &ch.h_dot_estimate,
            HdotSource::Oracle => &next.h_dot_estimate,
        };
        let stepped = match &config.mode {
            Mode::Plain => pd_step(problem, &state, &ch.h, config),
            Mode::Compensated => {
                let phi = match config.phi {
                    PhiSource::Estimate => match estimate_phi_hat(problem, &state, &ch.h) {
                        Ok(p) => Ok(p.phi),
                        Err(Error::Singular { cond }) => {
                            log::debug!("singular sensitivity system at step {k} (cond {cond:e}); compensation disabled");
                            rec.fallbacks += 1;
                            Ok(DMatrix::zeros(problem.joint_dim(), q))
                        }
                        Err(e) => Err(e),
                    },
                    PhiSource::Exact => {
                        let eq = eq_current.as_ref().expect("tracked when exact sensitivity is used");
                        let solve = crate::oracle::EquilibriumSolve {
                            x_star: eq.clone(),
                            residual_norm: 0.0,
                            iterations: 0,
                            converged: true,
                        };
                        ift_jacobian(problem, &solve, &ch.h).map(|p| p.phi)
                    }
                };
                phi.and_then(|p| compensated_step(problem, &state, &ch.h, h_dot, &p, config))
            }
            Mode::DistributedCompensated(partition) => {
                distributed_compensated_step(problem, &state, &ch.h, h_dot, partition, config).map(|(s, f)| {
                    rec.fallbacks += f;
                    s
                })
            }
        };
        state = stepped.map_err(|e| Error::TrajectoryAborted {
            step: k,
            source: Box::new(e),
        })?;
        ch = next;
        let record_now = (k + 1) % config.stride == 0;
        if needs_equilibrium_each_step || (record_now && config.track_equilibrium) {
            eq_current = Some(solve_at(&ch.h, eq_current.as_ref(), k + 1)?);
        }
        if record_now {
            let noise = std::mem::replace(&mut noise_acc, DVector::zeros(q));
            push(
                &mut rec,
                (k + 1) as f64 * config.dt,
                &state,
                &ch.h,
                if config.track_equilibrium { eq_current.as_ref() } else { None },
                noise,
            );
        }
    }
    if steps > 0 {
        rec.alpha_sq /= steps as f64;
        rec.beta /= steps as f64;
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::QuadToy;
    use approx::assert_relative_eq;

    #[test]
    fn single_euler_step_on_quad_toy() {
        let p = QuadToy::new();
        let cfg = IntegratorConfig::new(1.0, 0.1, 1.0);
        let s = pd_step(&p, &JointState::zeros(1, 1), &DVector::from_element(1, 1.0), &cfg).unwrap();
        assert_relative_eq!(s.x[0], 0.1, epsilon = 1e-15);
        assert_eq!(s.lambda[0], 0.0);
    }

    #[test]
    fn zero_hdot_compensation_equals_plain() {
        let p = QuadToy::new();
        let cfg = IntegratorConfig::new(1.0, 0.1, 1.0);
        let s = JointState::new(DVector::from_element(1, 0.3), DVector::from_element(1, 0.2));
        let h = DVector::from_element(1, 1.0);
        let phi = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let a = pd_step(&p, &s, &h, &cfg).unwrap();
        let b = compensated_step(&p, &s, &h, &DVector::zeros(1), &phi, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(vec![vec![0, 1], vec![2]], 3).is_ok());
        assert!(Partition::new(vec![vec![0, 1], vec![1, 2]], 3).is_err());
        assert!(Partition::new(vec![vec![0]], 2).is_err());
    }

    #[test]
    fn compensation_dimension_mismatch_is_rejected() {
        let p = QuadToy::new();
        let cfg = IntegratorConfig::new(1.0, 0.1, 1.0);
        let s = JointState::zeros(1, 1);
        let h = DVector::from_element(1, 1.0);
        let phi = DMatrix::zeros(3, 1);
        assert!(matches!(
            compensated_step(&p, &s, &h, &DVector::zeros(1), &phi, &cfg),
            Err(Error::Dimension { .. })
        ));
    }
}
