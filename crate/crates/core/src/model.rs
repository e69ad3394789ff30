//! Probabilistic models shared by the simulator and every tracker: linear
//! Gaussian dynamics, the Poisson-rate measurement model with uniform
//! clutter, and the categorical association prior.
//!
//! States are 4-vectors `[x1, v1, x2, v2]` (position/velocity per spatial
//! dimension); measurements are position 2-vectors. Per-object covariances
//! are kept as independent 4x4 blocks throughout: the variational family
//! factorises over objects, so cross-object covariance is identically zero
//! and a full joint matrix would only waste work.

use nalgebra::{Cholesky, Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 4;
pub const MEAS_DIM: usize = 2;

const LN_2PI: f64 = 1.8378770664093453;

/// Symmetrise a 4x4 block. Applied after every covariance update to keep
/// positive-definiteness checks stable over long runs.
pub(crate) fn symmetrize4(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn symmetrize2(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Linear Gaussian transition model, shared by all objects.
#[derive(Debug, Clone)]
pub struct DynamicsModel {
    /// State-transition matrix F (block-diagonal over the two spatial dims).
    pub transition: Matrix4<f64>,
    /// Process-noise covariance Q (symmetric PSD).
    pub process_noise: Matrix4<f64>,
    /// Time interval between observations, in seconds.
    pub tau: f64,
}

impl DynamicsModel {
    /// Constant-velocity model: per spatial dimension the transition block is
    /// `[[1, tau], [0, 1]]` and the noise block is
    /// `intensity * [[tau^3/3, tau^2/2], [tau^2/2, tau]]`.
    pub fn constant_velocity(tau: f64, intensity: f64) -> Self {
        let mut f = Matrix4::identity();
        let mut q = Matrix4::zeros();
        for d in 0..2 {
            let o = 2 * d;
            f[(o, o + 1)] = tau;
            q[(o, o)] = intensity * tau.powi(3) / 3.0;
            q[(o, o + 1)] = intensity * tau.powi(2) / 2.0;
            q[(o + 1, o)] = intensity * tau.powi(2) / 2.0;
            q[(o + 1, o + 1)] = intensity * tau;
        }
        DynamicsModel {
            transition: f,
            process_noise: q,
            tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::ModelConfig(format!(
                "time interval must be positive, got {}",
                self.tau
            )));
        }
        if (self.process_noise - self.process_noise.transpose()).abs().max() > 1e-9 {
            return Err(Error::ModelConfig(
                "process noise must be symmetric".into(),
            ));
        }
        Ok(())
    }
}

/// Axis-aligned rectangular surveillance region; its area is the clutter
/// volume V unless a scenario overrides it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::ModelConfig("region must have positive extent".into()));
        }
        Ok(())
    }
}

/// One sensor's measurement model: observation matrix, per-object noise,
/// clutter volume, and the Poisson rate vector `[clutter, object 1..K]`.
#[derive(Debug, Clone)]
pub struct SensorModel {
    /// Observation matrix H (extracts positions).
    pub observation: Matrix2x4<f64>,
    /// Per-object measurement-noise covariance R_k (symmetric PD).
    pub noise: Vec<Matrix2<f64>>,
    /// Clutter region volume V.
    pub clutter_volume: f64,
    /// Poisson rates `[Λ_0, Λ_1, ..., Λ_K]`; index 0 is the clutter rate.
    pub rates: Vec<f64>,
}

impl SensorModel {
    /// The standard position-extracting observation matrix.
    pub fn position_observation() -> Matrix2x4<f64> {
        Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0)
    }

    /// Homogeneous sensor: isotropic noise `noise_var * I` for every object.
    pub fn isotropic(
        num_objects: usize,
        noise_var: f64,
        clutter_volume: f64,
        clutter_rate: f64,
        object_rate: f64,
    ) -> Self {
        let mut rates = vec![object_rate; num_objects + 1];
        rates[0] = clutter_rate;
        SensorModel {
            observation: Self::position_observation(),
            noise: vec![Matrix2::identity() * noise_var; num_objects],
            clutter_volume,
            rates,
        }
    }

    pub fn num_objects(&self) -> usize {
        self.rates.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() {
            return Err(Error::ModelConfig("rate vector must be non-empty".into()));
        }
        if self.noise.len() != self.num_objects() {
            return Err(Error::ModelConfig(format!(
                "{} noise blocks for {} objects",
                self.noise.len(),
                self.num_objects()
            )));
        }
        if self.clutter_volume <= 0.0 {
            return Err(Error::ModelConfig("clutter volume must be positive".into()));
        }
        if self.rates.iter().any(|r| *r < 0.0) {
            return Err(Error::ModelConfig("rates must be nonnegative".into()));
        }
        if self.rates.iter().all(|r| *r == 0.0) {
            return Err(Error::ModelConfig("at least one rate must be positive".into()));
        }
        for (k, r) in self.noise.iter().enumerate() {
            if Cholesky::new(symmetrize2(r)).is_none() {
                return Err(Error::ModelConfig(format!(
                    "measurement noise for object {} is not positive definite",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Moment-form multi-object Gaussian: one independent 4x4 block per object.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub means: Vec<Vector4<f64>>,
    pub covs: Vec<Matrix4<f64>>,
}

impl GaussianBelief {
    pub fn new(means: Vec<Vector4<f64>>, covs: Vec<Matrix4<f64>>) -> Result<Self> {
        if means.len() != covs.len() {
            return Err(Error::InvalidInput(format!(
                "{} means vs {} covariance blocks",
                means.len(),
                covs.len()
            )));
        }
        Ok(GaussianBelief { means, covs })
    }

    pub fn num_objects(&self) -> usize {
        self.means.len()
    }

    /// Position components of every object mean.
    pub fn positions(&self) -> Vec<Vector2<f64>> {
        self.means.iter().map(|m| Vector2::new(m[0], m[2])).collect()
    }
}

/// Tracker-facing view of one sensor's scan: measurements only. Simulation
/// ground-truth origins never cross this boundary.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub sensor_id: usize,
    pub time_step: usize,
    pub points: Vec<Vector2<f64>>,
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// One prediction step per object: `mean' = F mean`, `cov' = F cov F^T + Q`.
pub fn predict_belief(prior: &GaussianBelief, dynamics: &DynamicsModel) -> GaussianBelief {
    let f = &dynamics.transition;
    let means = prior.means.iter().map(|m| f * m).collect();
    let covs = prior
        .covs
        .iter()
        .map(|c| symmetrize4(&(f * c * f.transpose() + dynamics.process_noise)))
        .collect();
    GaussianBelief { means, covs }
}

/// Log-density of a bivariate Gaussian.
pub fn log_gaussian(y: &Vector2<f64>, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> f64 {
    let chol = match Cholesky::new(symmetrize2(cov)) {
        Some(c) => c,
        None => return f64::NEG_INFINITY,
    };
    let diff = y - mean;
    let solved = chol.solve(&diff);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (diff.dot(&solved) + log_det) - LN_2PI
}

/// Log-likelihood of measurement `y` under origin `k` for point states:
/// `k = 0` is uniform clutter over the volume, `k >= 1` the Gaussian density
/// at the object's observed position.
pub fn measurement_loglik_point(
    y: &Vector2<f64>,
    origin: usize,
    states: &[Vector4<f64>],
    sensor: &SensorModel,
) -> f64 {
    if origin == 0 {
        return -sensor.clutter_volume.ln();
    }
    let k = origin - 1;
    let mean = sensor.observation * states[k];
    log_gaussian(y, &mean, &sensor.noise[k])
}

/// Expected log-likelihood under a Gaussian belief over the origin's state:
/// `log N(y; H mu, R) - 1/2 tr(R^-1 H Sigma H^T)` for objects, `-log V` for
/// clutter.
pub fn measurement_loglik_belief(
    y: &Vector2<f64>,
    origin: usize,
    belief: &GaussianBelief,
    sensor: &SensorModel,
) -> f64 {
    if origin == 0 {
        return -sensor.clutter_volume.ln();
    }
    let k = origin - 1;
    let h = &sensor.observation;
    let mean = h * belief.means[k];
    let projected = h * belief.covs[k] * h.transpose();
    let r_inv = sensor.noise[k]
        .try_inverse()
        .unwrap_or_else(|| Matrix2::from_element(f64::NAN));
    log_gaussian(y, &mean, &sensor.noise[k]) - 0.5 * (r_inv * projected).trace()
}

/// Categorical association prior over origins `{0..K}`:
/// `p(k) = Λ_k / Σ Λ`.
pub fn association_prior(sensor: &SensorModel) -> Result<Vec<f64>> {
    let total: f64 = sensor.rates.iter().sum();
    if total <= 0.0 {
        return Err(Error::ModelConfig(
            "association prior undefined: all rates are zero".into(),
        ));
    }
    Ok(sensor.rates.iter().map(|r| r / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_belief(mean: Vector4<f64>, cov: Matrix4<f64>) -> GaussianBelief {
        GaussianBelief::new(vec![mean], vec![cov]).unwrap()
    }

    #[test]
    fn identity_dynamics_is_a_fixed_point() {
        let dynamics = DynamicsModel {
            transition: Matrix4::identity(),
            process_noise: Matrix4::zeros(),
            tau: 1.0,
        };
        let belief = single_belief(Vector4::new(1.0, 2.0, 3.0, 4.0), Matrix4::identity() * 3.0);
        let out = predict_belief(&belief, &dynamics);
        assert_eq!(out.means[0], belief.means[0]);
        assert_eq!(out.covs[0], belief.covs[0]);
    }

    #[test]
    fn constant_velocity_advances_position_by_velocity() {
        let mut dynamics = DynamicsModel::constant_velocity(1.0, 25.0);
        dynamics.process_noise = Matrix4::zeros();
        let belief = single_belief(Vector4::new(0.0, 1.0, 0.0, 1.0), Matrix4::zeros());
        let out = predict_belief(&belief, &dynamics);
        assert_relative_eq!(out.means[0], Vector4::new(1.0, 1.0, 1.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn prediction_from_zero_covariance_returns_process_noise() {
        let dynamics = DynamicsModel::constant_velocity(1.0, 25.0);
        let belief = single_belief(Vector4::zeros(), Matrix4::zeros());
        let out = predict_belief(&belief, &dynamics);
        assert_relative_eq!(out.covs[0], dynamics.process_noise, epsilon = 1e-12);
        // Spot-check the constant-velocity noise block entries.
        assert_relative_eq!(out.covs[0][(0, 0)], 25.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(out.covs[0][(0, 1)], 12.5, epsilon = 1e-12);
        assert_relative_eq!(out.covs[0][(1, 1)], 25.0, epsilon = 1e-12);
    }

    #[test]
    fn prediction_preserves_symmetry_and_definiteness() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dynamics = DynamicsModel::constant_velocity(1.0, 25.0);
        for _ in 0..50 {
            let a = Matrix4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let cov = a * a.transpose() + Matrix4::identity() * 0.1;
            let belief = single_belief(Vector4::zeros(), cov);
            let out = predict_belief(&belief, &dynamics);
            assert_eq!(out.covs[0], out.covs[0].transpose());
            assert!(Cholesky::new(out.covs[0]).is_some());
        }
    }

    #[test]
    fn clutter_loglik_is_log_inverse_volume() {
        let sensor = SensorModel::isotropic(1, 100.0, 1e6, 1.0, 1.0);
        let y = Vector2::new(3.0, -4.0);
        let ll = measurement_loglik_point(&y, 0, &[Vector4::zeros()], &sensor);
        assert_relative_eq!(ll, (1e-6f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn loglik_at_mean_with_zero_covariance_is_the_normaliser() {
        let sensor = SensorModel::isotropic(1, 100.0, 1e6, 1.0, 1.0);
        let mean = Vector4::new(10.0, 0.0, -5.0, 0.0);
        let belief = single_belief(mean, Matrix4::zeros());
        let y = sensor.observation * mean;
        let ll = measurement_loglik_belief(&y, 1, &belief, &sensor);
        assert_relative_eq!(ll, -(2.0 * std::f64::consts::PI * 100.0).ln(), epsilon = 1e-12);
    }

    #[test]
    fn isotropic_noise_gives_equal_loglik_at_equal_distance() {
        let sensor = SensorModel::isotropic(1, 100.0, 1e6, 1.0, 1.0);
        let state = Vector4::new(1.0, 0.0, 2.0, 0.0);
        let a = Vector2::new(1.0 + 3.0, 2.0 + 4.0);
        let b = Vector2::new(1.0 - 5.0, 2.0);
        let la = measurement_loglik_point(&a, 1, &[state], &sensor);
        let lb = measurement_loglik_point(&b, 1, &[state], &sensor);
        assert_relative_eq!(la, lb, epsilon = 1e-12);
    }

    #[test]
    fn belief_loglik_with_zero_covariance_matches_point_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sensor = SensorModel::isotropic(1, 100.0, 1e6, 1.0, 1.0);
        for _ in 0..20 {
            let state = Vector4::from_fn(|_, _| rng.random_range(-50.0..50.0));
            let y = Vector2::from_fn(|_, _| rng.random_range(-60.0..60.0));
            let belief = single_belief(state, Matrix4::zeros());
            let point = measurement_loglik_point(&y, 1, &[state], &sensor);
            let expected = measurement_loglik_belief(&y, 1, &belief, &sensor);
            assert_relative_eq!(point, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn association_prior_matches_rate_shares() {
        let mut sensor = SensorModel::isotropic(50, 100.0, 1e6, 500.0, 1.0);
        let prior = association_prior(&sensor).unwrap();
        assert_relative_eq!(prior[0], 500.0 / 550.0, epsilon = 1e-15);
        assert_relative_eq!(prior[1], 1.0 / 550.0, epsilon = 1e-15);

        sensor.rates = vec![0.0, 1.0];
        sensor.noise.truncate(1);
        let prior = association_prior(&sensor).unwrap();
        assert_eq!(prior, vec![0.0, 1.0]);
    }

    #[test]
    fn association_prior_uniform_for_equal_rates() {
        let k = 7;
        let sensor = SensorModel::isotropic(k, 100.0, 1e6, 2.5, 2.5);
        let prior = association_prior(&sensor).unwrap();
        for p in &prior {
            assert_relative_eq!(*p, 1.0 / (k as f64 + 1.0), epsilon = 1e-15);
        }
    }

    #[test]
    fn association_prior_sums_to_one_for_random_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let k = rng.random_range(1..20usize);
            let mut sensor = SensorModel::isotropic(k, 100.0, 1e6, 1.0, 1.0);
            for r in sensor.rates.iter_mut() {
                *r = rng.random_range(0.0..100.0);
            }
            let prior = association_prior(&sensor).unwrap();
            let sum: f64 = prior.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "sum = {sum}");
        }
    }

    #[test]
    fn all_zero_rates_is_a_configuration_error() {
        let mut sensor = SensorModel::isotropic(2, 100.0, 1e6, 0.0, 0.0);
        sensor.rates = vec![0.0; 3];
        assert!(association_prior(&sensor).is_err());
        assert!(sensor.validate().is_err());
    }
}
