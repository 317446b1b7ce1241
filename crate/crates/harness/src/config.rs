//! Experiment configuration: TOML parsing, validation and resolution into
//! core types.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tvsaddle::apps::num::line_column;
use tvsaddle::apps::{build_scenario, NumOptions, Scenario, Topology};
use tvsaddle::flow::{HdotSource, IntegratorConfig, PhiSource};

use crate::error::{HarnessError, Result};

/// Largest allowed `dt * max(a, kappa)`.
pub const DISCRETIZATION_LIMIT: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Plain,
    Compensated,
    DistributedCompensated,
}

impl ModeName {
    pub fn label(self) -> &'static str {
        match self {
            ModeName::Plain => "plain",
            ModeName::Compensated => "compensated",
            ModeName::DistributedCompensated => "distributed-compensated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HdotName {
    #[default]
    FiniteDifference,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PhiName {
    #[default]
    Estimate,
    Exact,
}

/// Rule for the per-component noise intensity of the fading process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseRule {
    /// Complex fading for the jamming game, real fading otherwise.
    #[default]
    Auto,
    /// `sigma = sqrt(2a)`: unit stationary variance per component.
    Real,
    /// `sigma = sqrt(a)`: unit variance per complex entry.
    Complex,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub rates: Vec<f64>,
    pub modes: Vec<ModeName>,
    pub seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub kappa: f64,
    pub dt: f64,
    /// Absolute horizon.
    pub horizon: Option<f64>,
    /// Horizon in units of the channel correlation time `1/a`.
    pub horizon_scaled: Option<f64>,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub hdot: HdotName,
    #[serde(default)]
    pub phi: PhiName,
    #[serde(default = "default_true")]
    pub track_equilibrium: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(default = "default_h_bar")]
    pub h_bar: f64,
    #[serde(default)]
    pub noise: NoiseRule,
    /// Share one Brownian path per seed across all rates in the sweep.
    #[serde(default = "default_true")]
    pub common_noise: bool,
    /// Extra noise draws per step; set to 2 on a coarse grid to share the
    /// path of a run at half the step.
    #[serde(default = "default_one")]
    pub noise_refinement: usize,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            h_bar: default_h_bar(),
            noise: NoiseRule::Auto,
            common_noise: true,
            noise_refinement: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrSection {
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default)]
    pub backoff: f64,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
}

impl Default for SnrSection {
    fn default() -> Self {
        Self {
            snr_db: default_snr(),
            backoff: 0.0,
            r_max: default_r_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    /// Stationary draws used to estimate the stability constants.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Estimate constants before running the sweep (needed for bounds and
    /// the drift audit).
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Also report the sup of `||phi A||` along each run's equilibria.
    #[serde(default)]
    pub per_run: bool,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            enabled: true,
            per_run: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    #[serde(default = "default_true")]
    pub plotdata: bool,
}

/// Parsed experiment file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    /// Topology file for `num-multinode`, relative to the config file.
    pub topology: Option<PathBuf>,
    pub sweep: SweepSection,
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub snr: SnrSection,
    #[serde(default)]
    pub constants: ConstantsSection,
    pub output: OutputSection,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_burn_in() -> f64 {
    tvsaddle::metrics::DEFAULT_BURN_IN
}
fn default_stride() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_one() -> usize {
    1
}
fn default_h_bar() -> f64 {
    1.0
}
fn default_snr() -> f64 {
    10.0
}
fn default_r_max() -> f64 {
    1e3
}
fn default_samples() -> usize {
    200
}

impl ExperimentConfig {
    /// Parses and validates a config. Syntax and schema errors carry the
    /// line and column of the offending key.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_column(text, s.start)).unwrap_or((0, 0));
            HarnessError::Config {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Self::invalid(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    fn invalid(message: impl Into<String>) -> HarnessError {
        HarnessError::Invalid(message.into())
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sweep;
        if s.rates.is_empty() {
            return Err(Self::invalid("sweep.rates is empty"));
        }
        if s.modes.is_empty() {
            return Err(Self::invalid("sweep.modes is empty"));
        }
        if s.seeds == 0 {
            return Err(Self::invalid("sweep.seeds must be at least 1"));
        }
        if let Some(a) = s.rates.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Self::invalid(format!("fading rate {a} must be positive")));
        }
        let i = &self.integrator;
        if !(i.kappa > 0.0 && i.dt > 0.0) {
            return Err(Self::invalid("integrator.kappa and integrator.dt must be positive"));
        }
        match (i.horizon, i.horizon_scaled) {
            (Some(_), Some(_)) => {
                return Err(Self::invalid("set only one of integrator.horizon and integrator.horizon_scaled"))
            }
            (None, None) => return Err(Self::invalid("integrator.horizon or integrator.horizon_scaled is required")),
            (Some(t), None) | (None, Some(t)) if !(t > 0.0) => {
                return Err(Self::invalid("integrator horizon must be positive"))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&i.burn_in) {
            return Err(Self::invalid("integrator.burn_in must lie in [0, 1)"));
        }
        if i.stride == 0 {
            return Err(Self::invalid("integrator.stride must be at least 1"));
        }
        let a_max = s.rates.iter().cloned().fold(0.0, f64::max);
        let product = i.dt * a_max.max(i.kappa);
        if product > DISCRETIZATION_LIMIT * (1.0 + 1e-12) {
            return Err(Self::invalid(format!(
                "dt * max(a, kappa) = {product} exceeds {DISCRETIZATION_LIMIT}"
            )));
        }
        for a in &s.rates {
            if self.horizon(*a) < i.dt * i.stride as f64 {
                return Err(Self::invalid(format!("horizon at a = {a} is shorter than one record stride")));
            }
        }
        if self.channel.noise_refinement == 0 {
            return Err(Self::invalid("channel.noise_refinement must be at least 1"));
        }
        if self.channel.common_noise {
            let base = self.base_rate();
            for a in &s.rates {
                let ratio = a / base;
                if (ratio - ratio.round()).abs() > 1e-9 * ratio {
                    return Err(Self::invalid(format!(
                        "common_noise needs every rate to be an integer multiple of the smallest ({base}); {a} is not"
                    )));
                }
            }
        }
        if !(self.channel.h_bar.is_finite()) {
            return Err(Self::invalid("channel.h_bar must be finite"));
        }
        if self.scenario == "num-multinode" && self.topology.is_none() {
            return Err(Self::invalid("num-multinode needs a topology path"));
        }
        if self.constants.samples == 0 {
            return Err(Self::invalid("constants.samples must be at least 1"));
        }
        Ok(())
    }

    /// Smallest rate in the sweep.
    pub fn base_rate(&self) -> f64 {
        self.sweep.rates.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn horizon(&self, a: f64) -> f64 {
        match (self.integrator.horizon, self.integrator.horizon_scaled) {
            (Some(t), _) => t,
            (None, Some(s)) => s / a,
            (None, None) => 0.0,
        }
    }

    /// Noise draws per step at rate `a`.
    pub fn noise_substeps(&self, a: f64) -> usize {
        let k = if self.channel.common_noise {
            (a / self.base_rate()).round() as usize
        } else {
            1
        };
        k.max(1) * self.channel.noise_refinement
    }

    pub fn num_options(&self) -> NumOptions {
        NumOptions {
            snr_db: self.snr.snr_db,
            h_bar: self.channel.h_bar,
            backoff: self.snr.backoff,
            r_max: self.snr.r_max,
        }
    }

    pub fn topology_path(&self) -> Option<PathBuf> {
        self.topology.as_ref().map(|p| self.base_dir.join(p))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.output.dir)
    }

    pub fn build_scenario(&self) -> Result<Scenario> {
        let topology = match self.topology_path() {
            Some(p) => Some(Topology::load(&p)?),
            None => None,
        };
        Ok(build_scenario(&self.scenario, &self.num_options(), topology.as_ref())?)
    }

    /// Fading model at rate `a` with the configured noise rule and substeps.
    pub fn channel(&self, scenario: &Scenario, a: f64) -> Result<tvsaddle::channel::ChannelModel> {
        use tvsaddle::channel::ChannelModel;
        let mean = scenario.mean_parameter(self.channel.h_bar);
        let model = match self.channel.noise {
            NoiseRule::Auto => scenario.channel(a, self.channel.h_bar)?,
            NoiseRule::Real => ChannelModel::real_fading(mean, a)?,
            NoiseRule::Complex => ChannelModel::complex_fading(mean, a)?,
        };
        Ok(model.with_noise_substeps(self.noise_substeps(a))?)
    }

    /// Integrator settings at rate `a`, before the mode is set.
    pub fn integrator(&self, a: f64) -> IntegratorConfig {
        let i = &self.integrator;
        let mut cfg = IntegratorConfig::new(i.kappa, i.dt, self.horizon(a));
        cfg.stride = i.stride;
        cfg.track_equilibrium = i.track_equilibrium;
        cfg.hdot = match i.hdot {
            HdotName::FiniteDifference => HdotSource::FiniteDifference,
            HdotName::Oracle => HdotSource::Oracle,
        };
        cfg.phi = match i.phi {
            PhiName::Estimate => PhiSource::Estimate,
            PhiName::Exact => PhiSource::Exact,
        };
        cfg.initial_parameter = tvsaddle::flow::InitialParameter::Stationary;
        cfg
    }
}
