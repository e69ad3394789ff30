//! Variational mathematics: natural-parameter algebra, the association
//! posterior, bound evaluation, natural gradients, and the coordinate-ascent
//! state update used by the centralised baselines.
//!
//! Everything here is closed form; all expectations under the Gaussian and
//! categorical factors are analytic, so no sampling appears anywhere in the
//! core. Association posteriors are computed in the log domain.

use nalgebra::{Cholesky, Matrix2, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    association_prior, symmetrize4, GaussianBelief, MeasurementSet, SensorModel,
};

const LN_2PI: f64 = 1.8378770664093453;

/// Flattened entries per object: 4 linear entries followed by the 10
/// upper-triangular entries (row-major) of the symmetric matrix block. This
/// order is the wire layout for every consensus payload, so all sensors
/// agree on it bit for bit.
pub const FLAT_PER_OBJECT: usize = 14;

fn flatten_into(out: &mut Vec<f64>, vectors: &[Vector4<f64>], matrices: &[Matrix4<f64>]) {
    for (v, m) in vectors.iter().zip(matrices) {
        out.extend_from_slice(v.as_slice());
        for i in 0..4 {
            for j in i..4 {
                out.push(m[(i, j)]);
            }
        }
    }
}

fn unflatten_from(data: &[f64], num_objects: usize) -> (Vec<Vector4<f64>>, Vec<Matrix4<f64>>) {
    assert_eq!(data.len(), num_objects * FLAT_PER_OBJECT, "payload length");
    let mut vectors = Vec::with_capacity(num_objects);
    let mut matrices = Vec::with_capacity(num_objects);
    for k in 0..num_objects {
        let base = k * FLAT_PER_OBJECT;
        vectors.push(Vector4::from_column_slice(&data[base..base + 4]));
        let mut m = Matrix4::zeros();
        let mut idx = base + 4;
        for i in 0..4 {
            for j in i..4 {
                m[(i, j)] = data[idx];
                m[(j, i)] = data[idx];
                idx += 1;
            }
        }
        matrices.push(m);
    }
    (vectors, matrices)
}

// ---------------------------------------------------------------------------
// Natural parameters
// ---------------------------------------------------------------------------

/// Canonical-form parameters of a block Gaussian: per object,
/// `lambda1 = Sigma^-1 mu` and `lambda2 = -1/2 Sigma^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    pub lambda1: Vec<Vector4<f64>>,
    pub lambda2: Vec<Matrix4<f64>>,
}

impl NaturalParams {
    pub fn from_belief(belief: &GaussianBelief) -> Result<Self> {
        let mut lambda1 = Vec::with_capacity(belief.num_objects());
        let mut lambda2 = Vec::with_capacity(belief.num_objects());
        for (k, (mean, cov)) in belief.means.iter().zip(&belief.covs).enumerate() {
            let chol = Cholesky::new(symmetrize4(cov))
                .ok_or(Error::NotPositiveDefinite { object: k })?;
            let precision = symmetrize4(&chol.inverse());
            lambda1.push(precision * mean);
            lambda2.push(precision * -0.5);
        }
        Ok(NaturalParams { lambda1, lambda2 })
    }

    pub fn to_belief(&self) -> Result<GaussianBelief> {
        let mut means = Vec::with_capacity(self.num_objects());
        let mut covs = Vec::with_capacity(self.num_objects());
        for (k, (l1, l2)) in self.lambda1.iter().zip(&self.lambda2).enumerate() {
            let precision = symmetrize4(&(l2 * -2.0));
            let chol =
                Cholesky::new(precision).ok_or(Error::NotPositiveDefinite { object: k })?;
            let cov = symmetrize4(&chol.inverse());
            means.push(cov * l1);
            covs.push(cov);
        }
        GaussianBelief::new(means, covs)
    }

    pub fn num_objects(&self) -> usize {
        self.lambda1.len()
    }

    /// Every precision block passes a Cholesky factorisation.
    pub fn is_valid(&self) -> bool {
        self.lambda2
            .iter()
            .all(|l2| Cholesky::new(symmetrize4(&(l2 * -2.0))).is_some())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_objects() * FLAT_PER_OBJECT);
        flatten_into(&mut out, &self.lambda1, &self.lambda2);
        out
    }

    pub fn from_flat(data: &[f64], num_objects: usize) -> Self {
        let (lambda1, lambda2) = unflatten_from(data, num_objects);
        NaturalParams { lambda1, lambda2 }
    }
}

/// A gradient (or tracked gradient estimate) with the same block shape as
/// [`NaturalParams`].
#[derive(Debug, Clone)]
pub struct Gradient {
    pub g1: Vec<Vector4<f64>>,
    pub g2: Vec<Matrix4<f64>>,
}

impl Gradient {
    pub fn zeros(num_objects: usize) -> Self {
        Gradient {
            g1: vec![Vector4::zeros(); num_objects],
            g2: vec![Matrix4::zeros(); num_objects],
        }
    }

    pub fn num_objects(&self) -> usize {
        self.g1.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_objects() * FLAT_PER_OBJECT);
        flatten_into(&mut out, &self.g1, &self.g2);
        out
    }

    pub fn from_flat(data: &[f64], num_objects: usize) -> Self {
        let (g1, g2) = unflatten_from(data, num_objects);
        Gradient { g1, g2 }
    }

    pub fn norm(&self) -> f64 {
        let v: f64 = self.g1.iter().map(|g| g.norm_squared()).sum();
        let m: f64 = self.g2.iter().map(|g| g.norm_squared()).sum();
        (v + m).sqrt()
    }

    /// `self += factor * other`, blockwise.
    pub fn add_scaled(&mut self, other: &Gradient, factor: f64) {
        for (a, b) in self.g1.iter_mut().zip(&other.g1) {
            *a += b * factor;
        }
        for (a, b) in self.g2.iter_mut().zip(&other.g2) {
            *a += b * factor;
        }
    }

    /// Largest absolute entry across all blocks.
    pub fn max_abs(&self) -> f64 {
        let v = self.g1.iter().map(|g| g.abs().max()).fold(0.0, f64::max);
        let m = self.g2.iter().map(|g| g.abs().max()).fold(0.0, f64::max);
        v.max(m)
    }
}

/// Per-object data sufficient statistics of one (or a sum of) scans:
/// `linear_k = H^T R_k^-1 sum_j y_j q_j(k)` and
/// `quadratic_k = H^T R_k^-1 H sum_j q_j(k)`.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    pub linear: Vec<Vector4<f64>>,
    pub quadratic: Vec<Matrix4<f64>>,
}

impl SufficientStats {
    pub fn zeros(num_objects: usize) -> Self {
        SufficientStats {
            linear: vec![Vector4::zeros(); num_objects],
            quadratic: vec![Matrix4::zeros(); num_objects],
        }
    }

    pub fn num_objects(&self) -> usize {
        self.linear.len()
    }

    pub fn accumulate(&mut self, other: &SufficientStats) {
        for (a, b) in self.linear.iter_mut().zip(&other.linear) {
            *a += b;
        }
        for (a, b) in self.quadratic.iter_mut().zip(&other.quadratic) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.linear.iter_mut() {
            *v *= factor;
        }
        for m in self.quadratic.iter_mut() {
            *m *= factor;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_objects() * FLAT_PER_OBJECT);
        flatten_into(&mut out, &self.linear, &self.quadratic);
        out
    }

    pub fn from_flat(data: &[f64], num_objects: usize) -> Self {
        let (linear, quadratic) = unflatten_from(data, num_objects);
        SufficientStats { linear, quadratic }
    }
}

/// Which natural-gradient expression to use. `Canonical` keeps a single
/// prior-pull term `(eta - lambda)/N_s`, whose network fixed point coincides
/// with the coordinate-ascent fixed point; `Verbatim` doubles that term,
/// reproducing the alternative printed form for fidelity experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GradientVariant {
    #[default]
    Canonical,
    Verbatim,
}

impl std::str::FromStr for GradientVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(GradientVariant::Canonical),
            "verbatim" => Ok(GradientVariant::Verbatim),
            other => Err(Error::InvalidInput(format!(
                "unknown gradient variant '{other}' (expected canonical|verbatim)"
            ))),
        }
    }
}

impl std::fmt::Display for GradientVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GradientVariant::Canonical => write!(f, "canonical"),
            GradientVariant::Verbatim => write!(f, "verbatim"),
        }
    }
}

// ---------------------------------------------------------------------------
// Association posterior
// ---------------------------------------------------------------------------

/// Per-measurement categorical posteriors over origins `{clutter, 1..K}`;
/// rows sum to one.
#[derive(Debug, Clone)]
pub struct AssociationPosterior {
    /// `rows[j][k]` with k = 0 for clutter.
    pub rows: Vec<Vec<f64>>,
}

impl AssociationPosterior {
    pub fn num_measurements(&self) -> usize {
        self.rows.len()
    }
}

struct SensorPrecomp {
    r_inv: Vec<Matrix2<f64>>,
    log_det_r: Vec<f64>,
    ht_r_inv: Vec<Matrix4x2<f64>>,
    ht_r_inv_h: Vec<Matrix4<f64>>,
}

fn precompute(sensor: &SensorModel) -> Result<SensorPrecomp> {
    let h = &sensor.observation;
    let mut pre = SensorPrecomp {
        r_inv: Vec::new(),
        log_det_r: Vec::new(),
        ht_r_inv: Vec::new(),
        ht_r_inv_h: Vec::new(),
    };
    for (k, r) in sensor.noise.iter().enumerate() {
        let chol = Cholesky::new(*r).ok_or_else(|| {
            Error::ModelConfig(format!("measurement noise for object {} is not PD", k + 1))
        })?;
        let r_inv = chol.inverse();
        pre.log_det_r
            .push(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>());
        pre.ht_r_inv.push(h.transpose() * r_inv);
        pre.ht_r_inv_h.push(symmetrize4(&(h.transpose() * r_inv * h)));
        pre.r_inv.push(r_inv);
    }
    Ok(pre)
}

/// Expected measurement log-likelihoods under the belief, `[M][K+1]`:
/// column 0 is the clutter density, column k the Gaussian density at the
/// projected mean minus the covariance trace correction.
fn expected_loglik_matrix(
    belief: &GaussianBelief,
    points: &[Vector2<f64>],
    sensor: &SensorModel,
    pre: &SensorPrecomp,
) -> Vec<Vec<f64>> {
    let num_objects = belief.num_objects();
    let h = &sensor.observation;
    let log_clutter = -sensor.clutter_volume.ln();
    let mut projected_means = Vec::with_capacity(num_objects);
    let mut constants = Vec::with_capacity(num_objects);
    for k in 0..num_objects {
        projected_means.push(h * belief.means[k]);
        let trace_term = 0.5 * (pre.r_inv[k] * (h * belief.covs[k] * h.transpose())).trace();
        constants.push(-LN_2PI - 0.5 * pre.log_det_r[k] - trace_term);
    }
    points
        .iter()
        .map(|y| {
            let mut row = Vec::with_capacity(num_objects + 1);
            row.push(log_clutter);
            for k in 0..num_objects {
                let diff = y - projected_means[k];
                row.push(constants[k] - 0.5 * diff.dot(&(pre.r_inv[k] * diff)));
            }
            row
        })
        .collect()
}

/// Normalise one row of unnormalised log weights; rows whose weights all
/// underflow fall back to the association prior so far-from-everything
/// clutter points never produce a zero row.
fn normalize_rows(log_weights: Vec<Vec<f64>>, prior: &[f64]) -> Vec<Vec<f64>> {
    log_weights
        .into_iter()
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return prior.to_vec();
            }
            let mut probs: Vec<f64> = row.iter().map(|w| (w - max).exp()).collect();
            let sum: f64 = probs.iter().sum();
            if !(sum.is_finite() && sum > 0.0) {
                return prior.to_vec();
            }
            for p in probs.iter_mut() {
                *p /= sum;
            }
            probs
        })
        .collect()
}

fn association_rows(
    loglik: &[Vec<f64>],
    sensor: &SensorModel,
) -> Result<Vec<Vec<f64>>> {
    let prior = association_prior(sensor)?;
    let log_rates: Vec<f64> = sensor.rates.iter().map(|r| r.ln()).collect();
    let log_weights = loglik
        .iter()
        .map(|row| {
            row.iter()
                .zip(&log_rates)
                .map(|(ll, lr)| ll + lr)
                .collect()
        })
        .collect();
    Ok(normalize_rows(log_weights, &prior))
}

/// Categorical posterior over origins for every measurement in the scan,
/// row j proportional to `Λ_0/V` for clutter and `Λ_k l_k` for object k,
/// with `l_k` the expected Gaussian likelihood under the current belief.
pub fn association_posterior(
    lambda: &NaturalParams,
    points: &[Vector2<f64>],
    sensor: &SensorModel,
) -> Result<AssociationPosterior> {
    let belief = lambda.to_belief()?;
    let pre = precompute(sensor)?;
    let loglik = expected_loglik_matrix(&belief, points, sensor, &pre);
    Ok(AssociationPosterior {
        rows: association_rows(&loglik, sensor)?,
    })
}

/// Weighted data statistics of one scan under the given association
/// posterior.
pub fn data_statistics(
    assoc: &AssociationPosterior,
    points: &[Vector2<f64>],
    sensor: &SensorModel,
) -> Result<SufficientStats> {
    let num_objects = sensor.num_objects();
    let pre = precompute(sensor)?;
    let mut stats = SufficientStats::zeros(num_objects);
    for k in 0..num_objects {
        let mut weight = 0.0;
        let mut weighted_sum = Vector2::zeros();
        for (row, y) in assoc.rows.iter().zip(points) {
            let q = row[k + 1];
            weight += q;
            weighted_sum += y * q;
        }
        stats.linear[k] = pre.ht_r_inv[k] * weighted_sum;
        stats.quadratic[k] = pre.ht_r_inv_h[k] * weight;
    }
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Natural gradients and the coordinate update
// ---------------------------------------------------------------------------

/// Local natural gradient of the sensor's local bound with respect to the
/// natural parameters. The association posterior is recomputed internally
/// from `lambda` and treated as fixed during differentiation; no Fisher
/// matrix is ever formed or inverted.
pub fn natural_gradient_local(
    lambda: &NaturalParams,
    eta: &NaturalParams,
    points: &[Vector2<f64>],
    sensor: &SensorModel,
    num_sensors: usize,
    variant: GradientVariant,
) -> Result<Gradient> {
    let assoc = association_posterior(lambda, points, sensor)?;
    let stats = data_statistics(&assoc, points, sensor)?;
    let pull = match variant {
        GradientVariant::Canonical => 1.0 / num_sensors as f64,
        GradientVariant::Verbatim => 2.0 / num_sensors as f64,
    };
    let num_objects = lambda.num_objects();
    let mut grad = Gradient::zeros(num_objects);
    for k in 0..num_objects {
        grad.g1[k] = stats.linear[k] + (eta.lambda1[k] - lambda.lambda1[k]) * pull;
        grad.g2[k] = stats.quadratic[k] * -0.5 + (eta.lambda2[k] - lambda.lambda2[k]) * pull;
    }
    Ok(grad)
}

/// Exact coordinate update for the state factor given fixed associations:
/// the unique zero of the summed canonical gradient,
/// `lambda1 = eta1 + sum_s linear_s`, `lambda2 = eta2 - 1/2 sum_s quad_s`.
/// The data term is negative semidefinite, so the precision stays PD.
pub fn cavi_update_from_stats(eta: &NaturalParams, stats: &SufficientStats) -> NaturalParams {
    let num_objects = eta.num_objects();
    let mut lambda1 = Vec::with_capacity(num_objects);
    let mut lambda2 = Vec::with_capacity(num_objects);
    for k in 0..num_objects {
        lambda1.push(eta.lambda1[k] + stats.linear[k]);
        lambda2.push(symmetrize4(&(eta.lambda2[k] - stats.quadratic[k] * 0.5)));
    }
    NaturalParams { lambda1, lambda2 }
}

/// Coordinate update summing the data statistics of several sensors' scans.
pub fn cavi_state_update(
    eta: &NaturalParams,
    scans: &[MeasurementSet],
    sensors: &[SensorModel],
    assocs: &[AssociationPosterior],
) -> Result<NaturalParams> {
    if scans.len() != sensors.len() || scans.len() != assocs.len() {
        return Err(Error::InvalidInput(format!(
            "{} scans, {} sensors, {} association posteriors",
            scans.len(),
            sensors.len(),
            assocs.len()
        )));
    }
    let mut total = SufficientStats::zeros(eta.num_objects());
    for ((scan, sensor), assoc) in scans.iter().zip(sensors).zip(assocs) {
        total.accumulate(&data_statistics(assoc, &scan.points, sensor)?);
    }
    Ok(cavi_update_from_stats(eta, &total))
}

// ---------------------------------------------------------------------------
// Bound evaluation
// ---------------------------------------------------------------------------

/// A bound value with its additive parts (the KL parts are the signed
/// contributions, i.e. negated divergences).
#[derive(Debug, Clone, Copy)]
pub struct ElboValue {
    pub total: f64,
    pub likelihood: f64,
    pub state_kl: f64,
    pub association_kl: f64,
}

fn gaussian_kl(
    mean1: &Vector4<f64>,
    cov1: &Matrix4<f64>,
    mean0: &Vector4<f64>,
    cov0: &Matrix4<f64>,
) -> Result<f64> {
    let chol0 = Cholesky::new(symmetrize4(cov0)).ok_or(Error::NotPositiveDefinite { object: 0 })?;
    let chol1 = Cholesky::new(symmetrize4(cov1)).ok_or(Error::NotPositiveDefinite { object: 0 })?;
    let log_det0 = 2.0 * chol0.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_det1 = 2.0 * chol1.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let trace = chol0.solve(cov1).trace();
    let diff = mean0 - mean1;
    let maha = diff.dot(&chol0.solve(&diff));
    Ok(0.5 * (trace + maha - 4.0 + log_det0 - log_det1))
}

/// Negated KL from the belief to the prior, summed over objects.
fn state_prior_term(belief: &GaussianBelief, prior: &GaussianBelief) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..belief.num_objects() {
        total -= gaussian_kl(&belief.means[k], &belief.covs[k], &prior.means[k], &prior.covs[k])
            .map_err(|_| Error::NotPositiveDefinite { object: k })?;
    }
    Ok(total)
}

/// Expected-likelihood and association terms of one sensor for the given
/// association table.
fn sensor_terms(
    rho: &[Vec<f64>],
    loglik: &[Vec<f64>],
    sensor: &SensorModel,
) -> Result<(f64, f64)> {
    let prior = association_prior(sensor)?;
    let mut likelihood = 0.0;
    let mut association = 0.0;
    for (row, ll) in rho.iter().zip(loglik) {
        for (k, &q) in row.iter().enumerate() {
            if q <= 0.0 {
                continue;
            }
            likelihood += q * ll[k];
            association += q * (prior[k].ln() - q.ln());
        }
    }
    Ok((likelihood, association))
}

fn elbo_with(
    lambda: &NaturalParams,
    eta: &NaturalParams,
    scans: &[MeasurementSet],
    sensors: &[SensorModel],
    rho: Option<&[AssociationPosterior]>,
) -> Result<ElboValue> {
    if scans.len() != sensors.len() {
        return Err(Error::InvalidInput(format!(
            "{} scans for {} sensors",
            scans.len(),
            sensors.len()
        )));
    }
    let belief = lambda.to_belief()?;
    let prior = eta.to_belief()?;
    let mut likelihood = 0.0;
    let mut association_kl = 0.0;
    for (s, (scan, sensor)) in scans.iter().zip(sensors).enumerate() {
        let pre = precompute(sensor)?;
        let loglik = expected_loglik_matrix(&belief, &scan.points, sensor, &pre);
        let rows = match rho {
            Some(tables) => {
                let table = &tables[s];
                if table.rows.len() != scan.points.len() {
                    return Err(Error::InvalidInput(format!(
                        "association table for sensor {s} has {} rows for {} measurements",
                        table.rows.len(),
                        scan.points.len()
                    )));
                }
                for (j, row) in table.rows.iter().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| *p < -1e-12) {
                        return Err(Error::InvalidInput(format!(
                            "association row {j} of sensor {s} is not a distribution (sum {sum})"
                        )));
                    }
                }
                table.rows.clone()
            }
            None => association_rows(&loglik, sensor)?,
        };
        let (lik, assoc) = sensor_terms(&rows, &loglik, sensor)?;
        likelihood += lik;
        association_kl += assoc;
    }
    let state_kl = state_prior_term(&belief, &prior)?;
    Ok(ElboValue {
        total: likelihood + state_kl + association_kl,
        likelihood,
        state_kl,
        association_kl,
    })
}

/// The network objective at `lambda`: the bound with the association factor
/// replaced by its free-form optimum (recomputed internally).
pub fn lm_elbo(
    lambda: &NaturalParams,
    eta: &NaturalParams,
    scans: &[MeasurementSet],
    sensors: &[SensorModel],
) -> Result<ElboValue> {
    elbo_with(lambda, eta, scans, sensors, None)
}

/// One sensor's local share of the objective: its likelihood and
/// association terms in full plus `1/num_sensors` of the prior term, so the
/// local values sum to the network objective when all sensors hold the same
/// parameters.
pub fn lm_elbo_local(
    lambda: &NaturalParams,
    eta: &NaturalParams,
    scan: &MeasurementSet,
    sensor: &SensorModel,
    num_sensors: usize,
) -> Result<ElboValue> {
    let belief = lambda.to_belief()?;
    let prior = eta.to_belief()?;
    let pre = precompute(sensor)?;
    let loglik = expected_loglik_matrix(&belief, &scan.points, sensor, &pre);
    let rows = association_rows(&loglik, sensor)?;
    let (likelihood, association_kl) = sensor_terms(&rows, &loglik, sensor)?;
    let state_kl = state_prior_term(&belief, &prior)? / num_sensors as f64;
    Ok(ElboValue {
        total: likelihood + state_kl + association_kl,
        likelihood,
        state_kl,
        association_kl,
    })
}

/// The fixed-form bound with an explicit association table.
pub fn fixed_form_elbo(
    lambda: &NaturalParams,
    rho: &[AssociationPosterior],
    eta: &NaturalParams,
    scans: &[MeasurementSet],
    sensors: &[SensorModel],
) -> Result<f64> {
    if rho.len() != scans.len() {
        return Err(Error::InvalidInput(format!(
            "{} association tables for {} scans",
            rho.len(),
            scans.len()
        )));
    }
    Ok(elbo_with(lambda, eta, scans, sensors, Some(rho))?.total)
}
