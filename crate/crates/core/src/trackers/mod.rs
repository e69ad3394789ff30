//! Time-recursive trackers assembled from the variational core and the
//! consensus primitives. Every method sits behind the [`Tracker`] trait and
//! is registered by name in a [`TrackerRegistry`], so the harness and CLI
//! select methods at runtime from configuration alone.
//!
//! Registered methods:
//!
//! - `c-vt`    centralised tracker consuming every sensor's scan
//! - `i-vt`    per-sensor individual trackers, no communication
//! - `dec-vt`  consensus tracker averaging data statistics each iteration
//! - `deaa-vt` local trackers fused by arithmetic averaging of moments
//! - `deng-vt` decentralised natural-gradient tracker with gradient tracking

mod average_fusion;
mod centralised;
mod consensus;
mod individual;
mod natural_gradient;

use std::collections::BTreeMap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub use average_fusion::DeAaVt;
pub use centralised::CVt;
pub use consensus::DecVt;
pub use individual::IVt;
pub use natural_gradient::DengVt;

use crate::error::{Error, Result};
use crate::model::{predict_belief, DynamicsModel, GaussianBelief, MeasurementSet, SensorModel};
use crate::sim::GraphSnapshot;
use crate::vi::{
    association_posterior, cavi_state_update, GradientVariant, NaturalParams,
};

/// Runtime configuration shared by all methods; each tracker reads the
/// knobs relevant to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Gradient step size.
    pub alpha: f64,
    /// Gradient iterations per time step.
    pub max_iterations: usize,
    pub gradient_variant: GradientVariant,
    /// Consensus rounds per fusion (consensus and average-fusion trackers).
    pub consensus_rounds: usize,
    /// Coordinate-ascent iterations per time step (CAVI-based trackers).
    pub vi_iterations: usize,
    /// Record the gradient-tracking conservation gap each step.
    pub conservation_audit: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            alpha: 1.0,
            max_iterations: 100,
            gradient_variant: GradientVariant::Canonical,
            consensus_rounds: 10,
            vi_iterations: 20,
            conservation_audit: false,
        }
    }
}

/// Everything a tracker sees at one time step. `snapshots` holds the
/// connectivity for this step; trackers consuming one snapshot per
/// iteration index it as `snapshots[min(i, len - 1)]`, so the default
/// graph-fixed-within-a-step policy supplies a single entry.
pub struct StepInput<'a> {
    pub dynamics: &'a DynamicsModel,
    pub sensors: &'a [SensorModel],
    pub scans: &'a [MeasurementSet],
    pub snapshots: &'a [GraphSnapshot],
    pub record_iterates: bool,
}

impl StepInput<'_> {
    fn validate(&self, num_sensors: usize) -> Result<()> {
        if self.sensors.len() != num_sensors || self.scans.len() != num_sensors {
            return Err(Error::InvalidInput(format!(
                "step input has {} sensors and {} scans for a {num_sensors}-sensor tracker",
                self.sensors.len(),
                self.scans.len()
            )));
        }
        Ok(())
    }
}

/// One recorded optimisation iterate: estimator positions for metric
/// evaluation plus the flattened natural parameters for exact sequence
/// comparisons. Decentralised trackers record one entry per sensor, the
/// centralised tracker a single entry.
#[derive(Debug, Clone)]
pub struct IterateRecord {
    pub iteration: usize,
    pub positions: Vec<Vec<Vector2<f64>>>,
    pub params: Vec<Vec<f64>>,
}

/// Per-step diagnostics returned by [`Tracker::step`].
#[derive(Debug, Clone, Default)]
pub struct StepTrace {
    /// Present when the step was asked to record iterates.
    pub iterates: Vec<IterateRecord>,
    /// Largest relative gradient-tracking conservation gap observed this
    /// step (zero when not audited or not applicable).
    pub conservation_gap: f64,
}

/// A multi-object tracking method advancing one time step at a time.
pub trait Tracker {
    fn name(&self) -> &'static str;

    /// Consume one time step of scans (and connectivity, for decentralised
    /// methods) and update the per-sensor posteriors.
    fn step(&mut self, input: &StepInput) -> Result<StepTrace>;

    /// Current posterior belief held at each sensor. The centralised
    /// tracker exposes its single posterior replicated across sensors.
    fn sensor_beliefs(&self) -> Vec<GaussianBelief>;

    /// Cumulative communication iterations (neighbour message rounds).
    fn comm_iterations(&self) -> u64;
}

/// Predicted prior for this step: the initial belief verbatim on the first
/// step, the one-step prediction of the previous posterior afterwards.
pub(crate) fn step_prior(
    posterior: &GaussianBelief,
    dynamics: &DynamicsModel,
    started: bool,
) -> GaussianBelief {
    if started {
        predict_belief(posterior, dynamics)
    } else {
        posterior.clone()
    }
}

/// Coordinate-ascent loop shared by the centralised-style trackers:
/// alternates the association update over every provided scan with the
/// exact state update. The callback observes the iterate sequence starting
/// at the prior (iteration 0).
pub(crate) fn cavi_run(
    eta: &NaturalParams,
    scans: &[MeasurementSet],
    sensors: &[SensorModel],
    iterations: usize,
    mut on_iterate: impl FnMut(usize, &NaturalParams),
) -> Result<NaturalParams> {
    let mut lambda = eta.clone();
    on_iterate(0, &lambda);
    for iteration in 0..iterations {
        let assocs = scans
            .iter()
            .zip(sensors)
            .map(|(scan, sensor)| association_posterior(&lambda, &scan.points, sensor))
            .collect::<Result<Vec<_>>>()?;
        lambda = cavi_state_update(eta, scans, sensors, &assocs)?;
        on_iterate(iteration + 1, &lambda);
    }
    Ok(lambda)
}

/// Normalised product of the per-sensor priors with exponent `1/N_s`: the
/// natural parameters are averaged, i.e. the precision is the mean of the
/// precisions and the information vector the mean of the information
/// vectors.
pub fn effective_prior(priors: &[NaturalParams]) -> Result<GaussianBelief> {
    let first = priors
        .first()
        .ok_or_else(|| Error::InvalidInput("effective prior of zero sensors".into()))?;
    let num_objects = first.num_objects();
    let weight = 1.0 / priors.len() as f64;
    let mut lambda1 = vec![nalgebra::Vector4::zeros(); num_objects];
    let mut lambda2 = vec![nalgebra::Matrix4::zeros(); num_objects];
    for prior in priors {
        if prior.num_objects() != num_objects {
            return Err(Error::InvalidInput("priors disagree on object count".into()));
        }
        for k in 0..num_objects {
            lambda1[k] += prior.lambda1[k] * weight;
            lambda2[k] += prior.lambda2[k] * weight;
        }
    }
    NaturalParams { lambda1, lambda2 }.to_belief()
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

type BuildFn = fn(TrackerConfig, Vec<GaussianBelief>) -> Box<dyn Tracker>;

/// Name-indexed registry of tracker constructors. Methods are selected at
/// runtime from scenario configuration or the CLI `--methods` list.
pub struct TrackerRegistry {
    builders: BTreeMap<&'static str, BuildFn>,
}

impl TrackerRegistry {
    /// Registry with every built-in method.
    pub fn standard() -> Self {
        let mut builders: BTreeMap<&'static str, BuildFn> = BTreeMap::new();
        builders.insert("c-vt", CVt::boxed);
        builders.insert("i-vt", IVt::boxed);
        builders.insert("dec-vt", DecVt::boxed);
        builders.insert("deaa-vt", DeAaVt::boxed);
        builders.insert("deng-vt", DengVt::boxed);
        TrackerRegistry { builders }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.builders.contains_key(name)
    }

    /// Build the named tracker from per-sensor initial prior beliefs.
    pub fn build(
        &self,
        name: &str,
        config: TrackerConfig,
        init: Vec<GaussianBelief>,
    ) -> Result<Box<dyn Tracker>> {
        match self.builders.get(name) {
            Some(build) => Ok(build(config, init)),
            None => Err(Error::UnknownTracker {
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }
}

impl Default for TrackerRegistry {
    fn default() -> Self {
        Self::standard()
    }
}
