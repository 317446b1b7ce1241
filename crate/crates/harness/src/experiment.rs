//! Sweep execution: one trajectory per (a, mode, seed), per-run rows,
//! per-(a, mode) aggregates and CSV output.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tvsaddle::apps::Scenario;
use tvsaddle::channel::RngStream;
use tvsaddle::flow::{run_trajectory, Mode, Partition};
use tvsaddle::metrics::{bound_report, compute_metrics, summarize, sup_phi_a_along, BoundVerdict, RunMetrics, Summary};
use tvsaddle::oracle::{condition_check, stability_constants, ConditionVerdict, SolveSettings, StabilityConstants};
use tvsaddle::problem::ConvexityCase;

use crate::config::{ExperimentConfig, ModeName};
use crate::error::{HarnessError, Result};

/// Version of the CSV column layout; columns are only ever appended.
pub const SCHEMA_VERSION: u32 = 1;

/// Stream indices at or above this offset are reserved for constant
/// estimation, so they never collide with per-seed streams.
const CONSTANTS_STREAM_OFFSET: u64 = 1 << 32;

/// Stability constants at one rate of the sweep.
#[derive(Debug, Clone)]
pub struct RateConstants {
    pub a: f64,
    pub constants: StabilityConstants,
    pub verdict: ConditionVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Outcome of one (a, mode, seed) run.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub a: f64,
    pub mode: ModeName,
    pub seed: usize,
    pub status: RunStatus,
    pub metrics: Option<RunMetrics>,
    pub bound: BoundVerdict,
    pub fallbacks: usize,
    pub sup_phi_a_run: Option<f64>,
    pub message: String,
}

impl RunRow {
    /// Reported tracking error: joint in the strong case, primal in the
    /// degraded case.
    pub fn avg_err(&self) -> f64 {
        self.metrics.as_ref().map_or(f64::NAN, |m| m.avg_err_tracking)
    }

    /// Time-averaged `||z_e||^2`, the quantity the tracking bound controls.
    pub fn avg_err_z(&self) -> f64 {
        self.metrics.as_ref().map_or(f64::NAN, |m| m.avg_err_z)
    }

    pub fn throughput(&self) -> f64 {
        self.metrics.as_ref().and_then(|m| m.throughput_avg).unwrap_or(f64::NAN)
    }
}

/// Across-seed statistics of one (a, mode) cell.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub a: f64,
    pub mode: ModeName,
    pub runs: usize,
    pub failed: usize,
    pub err: Summary,
    pub err_z: Summary,
    pub err_dual: Summary,
    pub throughput: Summary,
    pub alpha_sq: Summary,
    /// Mean of the per-run bounds, when the bound applies.
    pub bound: Option<f64>,
    /// Whether every checked run satisfied its bound.
    pub bound_holds: Option<bool>,
    pub drift_violations: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub scenario: String,
    pub constants: Vec<RateConstants>,
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl ExperimentResult {
    pub fn failed_runs(&self) -> usize {
        self.rows.iter().filter(|r| r.status == RunStatus::Failed).count()
    }

    pub fn aggregate(&self, a: f64, mode: ModeName) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|g| g.a == a && g.mode == mode)
    }
}

/// Closed-form constants of the scalar toy: `M_x = M_lambda = 1`,
/// `phi = (1, 0)`, `J_G = -I` and a state-independent sensitivity.
fn quad_constants(kappa: f64, channel: &tvsaddle::channel::ChannelModel) -> StabilityConstants {
    let a = -channel.lambda_max();
    let mut c = StabilityConstants::from_parts(
        ConvexityCase::Strong,
        kappa,
        1.0,
        1.0,
        channel.lambda_max(),
        a,
        1.0,
        channel.alpha_sq_theory(),
        channel.beta_theory(),
        0.0,
    )
    .with_direction_lipschitz(1.0);
    c.drift_norm = a;
    c
}

/// Stability constants at rate `a`: analytic for the toy, sampled from
/// stationary draws otherwise.
pub fn constants_at(cfg: &ExperimentConfig, scenario: &Scenario, a_index: usize, a: f64) -> Result<RateConstants> {
    let channel = cfg.channel(scenario, a)?;
    let kappa = cfg.integrator.kappa;
    let constants = match scenario {
        Scenario::QuadToy(_) => quad_constants(kappa, &channel),
        _ => {
            let mut rng = RngStream::new(cfg.sweep.master_seed, CONSTANTS_STREAM_OFFSET + a_index as u64);
            let samples: Vec<_> = (0..cfg.constants.samples)
                .map(|_| channel.sample_stationary(&mut rng))
                .collect();
            stability_constants(scenario.problem(), &channel, kappa, &samples, &SolveSettings::default(), &mut rng)?
        }
    };
    let verdict = condition_check(&constants, kappa);
    Ok(RateConstants { a, constants, verdict })
}

fn mode_for(scenario: &Scenario, mode: ModeName) -> Result<Mode> {
    Ok(match mode {
        ModeName::Plain => Mode::Plain,
        ModeName::Compensated => Mode::Compensated,
        ModeName::DistributedCompensated => {
            Mode::DistributedCompensated(Partition::new(scenario.default_partition(), scenario.problem().joint_dim())?)
        }
    })
}

fn run_one(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    a: f64,
    mode: ModeName,
    seed: usize,
    constants: Option<&StabilityConstants>,
) -> tvsaddle::Result<(RunMetrics, usize, Option<f64>)> {
    let channel = cfg
        .channel(scenario, a)
        .map_err(|e| tvsaddle::Error::InvalidModel(e.to_string()))?;
    let mut integ = cfg.integrator(a);
    integ.mode = mode_for(scenario, mode).map_err(|e| tvsaddle::Error::InvalidModel(e.to_string()))?;
    let rng = RngStream::new(cfg.sweep.master_seed, seed as u64);
    let traj = run_trajectory(scenario.problem(), &channel, &integ, rng)?;
    let metrics = compute_metrics(&traj, constants, scenario.num(), cfg.integrator.burn_in)?;
    let sup = if cfg.constants.per_run && !traj.equilibria.is_empty() {
        Some(sup_phi_a_along(scenario.problem(), &traj, channel.drift())?)
    } else {
        None
    };
    Ok((metrics, traj.fallbacks, sup))
}

fn finite(values: impl Iterator<Item = f64>) -> Vec<f64> {
    values.filter(|v| !v.is_nan()).collect()
}

fn aggregate(rows: &[RunRow], a: f64, mode: ModeName) -> AggregateRow {
    let cell: Vec<&RunRow> = rows.iter().filter(|r| r.a == a && r.mode == mode).collect();
    let ok: Vec<&RunRow> = cell.iter().copied().filter(|r| r.status == RunStatus::Ok).collect();
    let metric = |f: &dyn Fn(&RunMetrics) -> f64| summarize(&finite(ok.iter().filter_map(|r| r.metrics.as_ref()).map(f)));
    let checked: Vec<(f64, bool)> = ok
        .iter()
        .filter_map(|r| match r.bound {
            BoundVerdict::Checked { bound, holds, .. } => Some((bound, holds)),
            BoundVerdict::Inapplicable => None,
        })
        .collect();
    let drift: Vec<usize> = ok
        .iter()
        .filter_map(|r| r.metrics.as_ref().and_then(|m| m.drift_violations))
        .collect();
    AggregateRow {
        a,
        mode,
        runs: cell.len(),
        failed: cell.len() - ok.len(),
        err: metric(&|m| m.avg_err_tracking),
        err_z: metric(&|m| m.avg_err_z),
        err_dual: metric(&|m| m.avg_err_dual),
        throughput: metric(&|m| m.throughput_avg.unwrap_or(f64::NAN)),
        alpha_sq: metric(&|m| m.alpha_sq_measured),
        bound: (!checked.is_empty()).then(|| checked.iter().map(|c| c.0).sum::<f64>() / checked.len() as f64),
        bound_holds: (!checked.is_empty()).then(|| checked.iter().all(|c| c.1)),
        drift_violations: (!drift.is_empty()).then(|| drift.iter().sum()),
    }
}

/// Runs the whole sweep. Runs are dispatched to a pool of `workers`
/// threads (0 = all cores); rows and aggregates are assembled in
/// (a, mode, seed) order, so the result does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentResult> {
    let scenario = cfg.build_scenario()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let rates = &cfg.sweep.rates;
    let constants: Vec<Option<RateConstants>> = if cfg.constants.enabled {
        pool.install(|| {
            rates
                .par_iter()
                .enumerate()
                .map(|(i, a)| constants_at(cfg, &scenario, i, *a).map(Some))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        vec![None; rates.len()]
    };
    let jobs: Vec<(usize, ModeName, usize)> = (0..rates.len())
        .flat_map(|i| {
            cfg.sweep
                .modes
                .iter()
                .flat_map(move |m| (0..cfg.sweep.seeds).map(move |s| (i, *m, s)))
        })
        .collect();
    let rows: Vec<RunRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, mode, seed)| {
                let a = rates[i];
                // The bound and the drift audit concern the plain flow.
                let c = constants[i]
                    .as_ref()
                    .filter(|_| mode == ModeName::Plain)
                    .map(|rc| &rc.constants);
                match run_one(cfg, &scenario, a, mode, seed, c) {
                    Ok((metrics, fallbacks, sup)) => RunRow {
                        a,
                        mode,
                        seed,
                        status: RunStatus::Ok,
                        bound: c.map_or(BoundVerdict::Inapplicable, |c| bound_report(&metrics, c)),
                        metrics: Some(metrics),
                        fallbacks,
                        sup_phi_a_run: sup,
                        message: String::new(),
                    },
                    Err(e) => {
                        log::warn!("run a={a} mode={} seed={seed} failed: {e}", mode.label());
                        RunRow {
                            a,
                            mode,
                            seed,
                            status: RunStatus::Failed,
                            metrics: None,
                            bound: BoundVerdict::Inapplicable,
                            fallbacks: 0,
                            sup_phi_a_run: None,
                            message: e.to_string(),
                        }
                    }
                }
            })
            .collect()
    });
    let aggregates = rates
        .iter()
        .flat_map(|a| cfg.sweep.modes.iter().map(|m| aggregate(&rows, *a, *m)))
        .collect();
    Ok(ExperimentResult {
        scenario: cfg.scenario.clone(),
        constants: constants.into_iter().flatten().collect(),
        rows,
        aggregates,
    })
}

/// Shortest round-trip decimal; NaN becomes an empty field.
pub fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt)
}

fn fmt_opt_display<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn csv_file(path: &Path) -> Result<csv::Writer<File>> {
    let mut file = File::create(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    writeln!(file, "# schema_version={SCHEMA_VERSION}").map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(csv::Writer::from_writer(file))
}

pub const RUN_COLUMNS: &[&str] = &[
    "scenario",
    "a",
    "mode",
    "seed",
    "status",
    "avg_err",
    "avg_err_joint",
    "avg_err_primal",
    "avg_err_dual",
    "avg_err_z",
    "alpha_sq",
    "beta",
    "bound",
    "slack_ratio",
    "drift_violations",
    "throughput",
    "fallbacks",
    "sup_phi_a_run",
    "message",
];

pub const AGGREGATE_COLUMNS: &[&str] = &[
    "scenario",
    "a",
    "mode",
    "runs",
    "failed",
    "err_mean",
    "err_stderr",
    "err_dual_mean",
    "err_dual_stderr",
    "err_z_mean",
    "err_z_stderr",
    "throughput_mean",
    "throughput_stderr",
    "alpha_sq_mean",
    "bound_mean",
    "bound_holds",
    "drift_violations",
];

pub const CONSTANT_COLUMNS: &[&str] = &[
    "a",
    "case",
    "kappa",
    "samples",
    "m_x",
    "m_lambda",
    "lambda_max_a",
    "sup_phi_a",
    "sup_phi",
    "a1",
    "a2",
    "a3",
    "a4",
    "c1",
    "c2",
    "c3",
    "c4",
    "gamma",
    "bound_coefficient",
    "alpha_sq",
    "beta",
    "lipschitz",
    "compensation_threshold",
    "condition_lhs",
    "condition_rhs",
    "condition_margin",
    "condition_pass",
];

fn case_label(case: ConvexityCase) -> &'static str {
    match case {
        ConvexityCase::Strong => "strong",
        ConvexityCase::Degraded => "degraded",
    }
}

/// Writes `runs.csv`, `aggregates.csv` and (when estimated)
/// `constants.csv` into `dir`. Returns the written paths.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut written = Vec::new();

    let path = dir.join("runs.csv");
    let mut w = csv_file(&path)?;
    w.write_record(RUN_COLUMNS)?;
    for r in &result.rows {
        let m = r.metrics.as_ref();
        let (bound, slack) = match r.bound {
            BoundVerdict::Checked { bound, slack_ratio, .. } => (Some(bound), Some(slack_ratio)),
            BoundVerdict::Inapplicable => (None, None),
        };
        w.write_record([
            result.scenario.clone(),
            fmt(r.a),
            r.mode.label().to_string(),
            r.seed.to_string(),
            match r.status {
                RunStatus::Ok => "ok".to_string(),
                RunStatus::Failed => "failed".to_string(),
            },
            fmt(r.avg_err()),
            fmt_opt(m.map(|m| m.avg_err_joint)),
            fmt_opt(m.map(|m| m.avg_err_primal)),
            fmt_opt(m.map(|m| m.avg_err_dual)),
            fmt(r.avg_err_z()),
            fmt_opt(m.map(|m| m.alpha_sq_measured)),
            fmt_opt(m.map(|m| m.beta_measured)),
            fmt_opt(bound),
            fmt_opt(slack),
            fmt_opt_display(m.and_then(|m| m.drift_violations)),
            fmt(r.throughput()),
            r.fallbacks.to_string(),
            fmt_opt(r.sup_phi_a_run),
            r.message.clone(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
    written.push(path);

    let path = dir.join("aggregates.csv");
    let mut w = csv_file(&path)?;
    w.write_record(AGGREGATE_COLUMNS)?;
    for g in &result.aggregates {
        w.write_record([
            result.scenario.clone(),
            fmt(g.a),
            g.mode.label().to_string(),
            g.runs.to_string(),
            g.failed.to_string(),
            fmt(g.err.mean),
            fmt(g.err.stderr),
            fmt(g.err_dual.mean),
            fmt(g.err_dual.stderr),
            fmt(g.err_z.mean),
            fmt(g.err_z.stderr),
            fmt(g.throughput.mean),
            fmt(g.throughput.stderr),
            fmt(g.alpha_sq.mean),
            fmt_opt(g.bound),
            fmt_opt_display(g.bound_holds),
            fmt_opt_display(g.drift_violations),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
    written.push(path);

    if !result.constants.is_empty() {
        let path = dir.join("constants.csv");
        let mut w = csv_file(&path)?;
        w.write_record(CONSTANT_COLUMNS)?;
        for rc in &result.constants {
            w.write_record(constant_record(rc))?;
        }
        w.flush().map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
        written.push(path);
    }
    Ok(written)
}

/// One `constants.csv` record, in [`CONSTANT_COLUMNS`] order.
pub fn constant_record(rc: &RateConstants) -> Vec<String> {
    let c = &rc.constants;
    let v = &rc.verdict;
    vec![
        fmt(rc.a),
        case_label(c.case).to_string(),
        fmt(c.kappa),
        c.samples.to_string(),
        fmt(c.m_x),
        fmt(c.m_lambda),
        fmt(c.lambda_max_a),
        fmt(c.sup_phi_a),
        fmt(c.sup_phi),
        fmt(c.a1),
        fmt(c.a2),
        fmt(c.a3),
        fmt(c.a4),
        fmt(c.c1),
        fmt(c.c2),
        fmt(c.c3),
        fmt(c.c4),
        fmt(c.gamma),
        fmt(c.bound_coefficient()),
        fmt(c.alpha_sq),
        fmt(c.beta),
        fmt(c.lipschitz),
        fmt(c.compensation_threshold()),
        fmt(v.lhs),
        fmt(v.rhs),
        fmt(v.margin),
        v.pass.to_string(),
    ]
}
