//! Ornstein-Uhlenbeck parameter dynamics `dh = A (h - h_bar) dt + sigma dW`
//! simulated with Euler-Maruyama, plus seeded random streams.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::lambda_max_sym;

/// Driving excitation of the parameter process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Excitation {
    Zero,
    /// White noise with per-component intensity `scale`.
    White { scale: f64 },
}

impl Excitation {
    pub fn scale(&self) -> f64 {
        match self {
            Excitation::Zero => 0.0,
            Excitation::White { scale } => *scale,
        }
    }
}

/// Linear mean-reverting parameter model.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    a: DMatrix<f64>,
    h_bar: DVector<f64>,
    excitation: Excitation,
    noise_substeps: usize,
    lambda_max: f64,
}

impl ChannelModel {
    /// Builds a model; `a` must be symmetric with negative eigenvalues.
    pub fn new(a: DMatrix<f64>, h_bar: DVector<f64>, excitation: Excitation) -> Result<Self> {
        let q = h_bar.len();
        check_dim("drift matrix rows", q, a.nrows())?;
        check_dim("drift matrix columns", q, a.ncols())?;
        check_finite("drift matrix", a.as_slice())?;
        check_finite("mean parameter", h_bar.as_slice())?;
        if (&a - a.transpose()).amax() > 1e-12 * (1.0 + a.amax()) {
            return Err(Error::InvalidModel("drift matrix must be symmetric".into()));
        }
        let lambda_max = lambda_max_sym(&a);
        if !(lambda_max < 0.0) {
            return Err(Error::InvalidModel(format!(
                "drift matrix must be negative definite (largest eigenvalue {lambda_max})"
            )));
        }
        let s = excitation.scale();
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidModel(format!("excitation scale {s} must be finite and >= 0")));
        }
        Ok(Self {
            a,
            h_bar,
            excitation,
            noise_substeps: 1,
            lambda_max,
        })
    }

    /// `A = -rate * I`.
    pub fn isotropic(h_bar: DVector<f64>, rate: f64, excitation: Excitation) -> Result<Self> {
        let q = h_bar.len();
        Self::new(DMatrix::identity(q, q) * -rate, h_bar, excitation)
    }

    /// Real fading coefficients with unit stationary variance:
    /// `A = -rate * I`, intensity `sqrt(2 rate)`.
    pub fn real_fading(h_bar: DVector<f64>, rate: f64) -> Result<Self> {
        Self::isotropic(h_bar, rate, Excitation::White { scale: (2.0 * rate).sqrt() })
    }

    /// Complex fading coefficients stored as real and imaginary parts: unit
    /// variance per complex entry, half per real component.
    pub fn complex_fading(h_bar: DVector<f64>, rate: f64) -> Result<Self> {
        Self::isotropic(h_bar, rate, Excitation::White { scale: rate.sqrt() })
    }

    /// Splits every step's Brownian increment into `k` sub-increments drawn in
    /// sequence. Paths simulated with step `dt` and `k` sub-increments then
    /// coincide with paths at step `dt / k` and one sub-increment, which gives
    /// common random numbers across step sizes.
    pub fn with_noise_substeps(mut self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidModel("noise substeps must be >= 1".into()));
        }
        self.noise_substeps = k;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.h_bar.len()
    }
    pub fn drift(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn mean(&self) -> &DVector<f64> {
        &self.h_bar
    }
    pub fn excitation(&self) -> Excitation {
        self.excitation
    }
    pub fn noise_substeps(&self) -> usize {
        self.noise_substeps
    }
    /// Largest eigenvalue of the drift matrix (negative).
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Stationary covariance, the solution of `A S + S A + sigma^2 I = 0`.
    pub fn stationary_covariance(&self) -> DMatrix<f64> {
        let s2 = self.excitation.scale().powi(2);
        let inv = self
            .a
            .clone()
            .try_inverse()
            .expect("negative definite drift is invertible");
        inv * (-0.5 * s2)
    }

    /// Draws from the stationary law. Consumes `q` normals.
    pub fn sample_stationary(&self, rng: &mut RngStream) -> DVector<f64> {
        let cov = self.stationary_covariance();
        let xi = rng.normal_vector(self.dim());
        match cov.clone().cholesky() {
            Some(ch) => &self.h_bar + ch.l() * xi,
            None => self.h_bar.clone(),
        }
    }

    /// `E ||sigma xi||^2` for the continuous-time excitation.
    pub fn alpha_sq_theory(&self) -> f64 {
        self.excitation.scale().powi(2) * self.dim() as f64
    }

    /// `E ||sigma xi||`, the mean of a scaled chi variable.
    pub fn beta_theory(&self) -> f64 {
        let q = self.dim() as f64;
        // Ratio of Gamma functions via the log-gamma series for stability.
        self.excitation.scale() * std::f64::consts::SQRT_2 * (ln_gamma((q + 1.0) / 2.0) - ln_gamma(q / 2.0)).exp()
    }
}

/// Lanczos approximation of `ln Gamma(x)` for `x > 0`.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Parameter value together with the last step's derivative estimate and
/// excitation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub h: DVector<f64>,
    /// `(h_k - h_{k-1}) / dt`; zero before the first step.
    pub h_dot_estimate: DVector<f64>,
    /// Excitation sample `sigma * xi` of the last step, so that the Brownian
    /// increment was `sqrt(dt) * last_noise`.
    pub last_noise: DVector<f64>,
}

impl ChannelState {
    pub fn at(h: DVector<f64>) -> Self {
        let q = h.len();
        Self {
            h,
            h_dot_estimate: DVector::zeros(q),
            last_noise: DVector::zeros(q),
        }
    }
}

/// Seeded random stream. Streams sharing a master seed but with different
/// indices are independent; the same `(master, index)` pair replays
/// bit-identically.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(index);
        Self {
            master_seed,
            index,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }
    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal_vector(&mut self, len: usize) -> DVector<f64> {
        DVector::from_iterator(len, (0..len).map(|_| self.normal()))
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

/// One Euler-Maruyama step:
/// `h' = h + dt A (h - h_bar) + sqrt(dt) sigma xi`.
pub fn step_channel(
    model: &ChannelModel,
    state: &ChannelState,
    dt: f64,
    rng: &mut RngStream,
) -> Result<ChannelState> {
    check_dim("channel state", model.dim(), state.h.len())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidModel(format!("time step {dt} must be positive")));
    }
    let q = model.dim();
    let noise = match model.excitation {
        Excitation::Zero => DVector::zeros(q),
        Excitation::White { scale } => {
            let k = model.noise_substeps;
            let mut xi = DVector::zeros(q);
            for _ in 0..k {
                for i in 0..q {
                    xi[i] += rng.normal();
                }
            }
            xi * (scale / (k as f64).sqrt())
        }
    };
    let drift = &model.a * (&state.h - &model.h_bar);
    let h = &state.h + drift * dt + &noise * dt.sqrt();
    check_finite("channel state", h.as_slice())?;
    let h_dot_estimate = (&h - &state.h) / dt;
    Ok(ChannelState {
        h,
        h_dot_estimate,
        last_noise: noise,
    })
}

/// Sample mean of `||u||^2` over excitation samples.
pub fn excitation_power(samples: &[DVector<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidModel("no excitation samples".into()));
    }
    Ok(samples.iter().map(|u| u.norm_squared()).sum::<f64>() / samples.len() as f64)
}

/// Sample mean of `||u||` over excitation samples.
pub fn excitation_magnitude(samples: &[DVector<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidModel("no excitation samples".into()));
    }
    Ok(samples.iter().map(|u| u.norm()).sum::<f64>() / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model(rate: f64) -> ChannelModel {
        ChannelModel::real_fading(DVector::from_element(2, 1.0), rate).unwrap()
    }

    #[test]
    fn zero_excitation_decays_to_mean() {
        let m = ChannelModel::isotropic(DVector::from_element(1, 1.0), 0.5, Excitation::Zero).unwrap();
        let mut s = ChannelState::at(DVector::from_element(1, 3.0));
        let mut rng = RngStream::new(1, 0);
        for _ in 0..20_000 {
            s = step_channel(&m, &s, 1e-3, &mut rng).unwrap();
        }
        // Exact decay is exp(-0.5 * 20) of the initial offset 2.
        assert!((s.h[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn streams_replay_and_differ() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let va: Vec<f64> = (0..16).map(|_| a.normal()).collect();
        let vb: Vec<f64> = (0..16).map(|_| b.normal()).collect();
        let vc: Vec<f64> = (0..16).map(|_| c.normal()).collect();
        assert_eq!(va, vb);
        assert_ne!(va, vc);
    }

    #[test]
    fn substeps_reproduce_fine_path() {
        // Two coarse steps of dt with two sub-increments each use the same
        // normals as four steps of dt/2; the endpoints agree to O(dt^2).
        let coarse = model(0.1).with_noise_substeps(2).unwrap();
        let fine = model(0.1);
        let mut rc = RngStream::new(5, 0);
        let mut rf = RngStream::new(5, 0);
        let mut sc = ChannelState::at(DVector::from_element(2, 1.0));
        let mut sf = sc.clone();
        for _ in 0..2 {
            sc = step_channel(&coarse, &sc, 0.01, &mut rc).unwrap();
        }
        for _ in 0..4 {
            sf = step_channel(&fine, &sf, 0.005, &mut rf).unwrap();
        }
        assert!((&sc.h - &sf.h).amax() < 1e-4);
    }

    #[test]
    fn theory_moments() {
        let m = model(0.02);
        assert_relative_eq!(m.alpha_sq_theory(), 0.08, epsilon = 1e-12);
        // E||xi|| for two components is sqrt(pi/2).
        assert_relative_eq!(m.beta_theory(), 0.2 * (std::f64::consts::PI / 2.0).sqrt(), epsilon = 1e-10);
        let cov = m.stationary_covariance();
        assert_relative_eq!(cov[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_unstable_drift() {
        let a = DMatrix::from_row_slice(1, 1, &[0.1]);
        assert!(ChannelModel::new(a, DVector::zeros(1), Excitation::Zero).is_err());
    }
}
