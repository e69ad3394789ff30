//! Decentralised natural-gradient tracker with gradient tracking.
//!
//! Per time step every sensor initialises its iterate at the predicted
//! prior, then alternates synchronous rounds of neighbour mixing with local
//! natural-gradient steps. A second per-sensor recursion tracks the network
//! average gradient through differences of consecutive local gradients,
//! which keeps the method convergent at a constant step size; its network
//! sum equals the summed local gradients at every iteration, an identity
//! the conservation audit can check to floating-point precision.

use nalgebra::Cholesky;

use super::{step_prior, IterateRecord, StepInput, StepTrace, Tracker, TrackerConfig};
use crate::error::{Error, Result};
use crate::graph::{metropolis_weights, MixingMatrix};
use crate::model::{symmetrize4, GaussianBelief};
use crate::sim::GraphSnapshot;
use crate::vi::{natural_gradient_local, Gradient, NaturalParams};

const DAMPING_ATTEMPTS: usize = 20;

pub struct DengVt {
    config: TrackerConfig,
    posteriors: Vec<GaussianBelief>,
    started: bool,
    comm_iterations: u64,
}

impl DengVt {
    pub fn new(config: TrackerConfig, init: Vec<GaussianBelief>) -> Self {
        DengVt {
            config,
            posteriors: init,
            started: false,
            comm_iterations: 0,
        }
    }

    pub fn boxed(config: TrackerConfig, init: Vec<GaussianBelief>) -> Box<dyn Tracker> {
        Box::new(Self::new(config, init))
    }

    /// Gradient step with per-object damping: whenever a candidate block
    /// loses negative definiteness the step for that block is halved, up to
    /// the damping budget. Damping keeps the iterate on the mixing path
    /// instead of projecting it.
    fn damped_step(
        mixed: &NaturalParams,
        tracker: &Gradient,
        alpha: f64,
        sensor: usize,
        iteration: usize,
    ) -> Result<NaturalParams> {
        let mut out = mixed.clone();
        for k in 0..mixed.num_objects() {
            let mut step = alpha;
            let mut accepted = false;
            for _ in 0..=DAMPING_ATTEMPTS {
                let candidate = symmetrize4(&(mixed.lambda2[k] + tracker.g2[k] * step));
                if Cholesky::new(candidate * -2.0).is_some() {
                    out.lambda1[k] = mixed.lambda1[k] + tracker.g1[k] * step;
                    out.lambda2[k] = candidate;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                return Err(Error::TrackerDiverged {
                    sensor,
                    object: k,
                    iteration,
                });
            }
        }
        Ok(out)
    }
}

fn record_iterate(
    iterates: &mut Vec<IterateRecord>,
    iteration: usize,
    lambdas: &[NaturalParams],
) -> Result<()> {
    let mut positions = Vec::with_capacity(lambdas.len());
    let mut params = Vec::with_capacity(lambdas.len());
    for lambda in lambdas {
        positions.push(lambda.to_belief()?.positions());
        params.push(lambda.flatten());
    }
    iterates.push(IterateRecord {
        iteration,
        positions,
        params,
    });
    Ok(())
}

/// Relative gap between the summed tracked gradients and the summed local
/// gradients.
fn conservation_gap(trackers: &[Gradient], gradients: &[Gradient]) -> f64 {
    let num_objects = trackers[0].num_objects();
    let mut tracked_sum = Gradient::zeros(num_objects);
    let mut gradient_sum = Gradient::zeros(num_objects);
    for (t, g) in trackers.iter().zip(gradients) {
        tracked_sum.add_scaled(t, 1.0);
        gradient_sum.add_scaled(g, 1.0);
    }
    tracked_sum.add_scaled(&gradient_sum, -1.0);
    tracked_sum.max_abs() / gradient_sum.max_abs().max(1.0)
}

impl Tracker for DengVt {
    fn name(&self) -> &'static str {
        "deng-vt"
    }

    fn step(&mut self, input: &StepInput) -> Result<StepTrace> {
        let num_sensors = self.posteriors.len();
        input.validate(num_sensors)?;
        if input.snapshots.is_empty() {
            return Err(Error::InvalidInput("natural-gradient tracker needs a snapshot".into()));
        }
        let num_objects = self.posteriors[0].num_objects();
        let variant = self.config.gradient_variant;

        let etas: Vec<NaturalParams> = self
            .posteriors
            .iter()
            .map(|posterior| {
                NaturalParams::from_belief(&step_prior(posterior, input.dynamics, self.started))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut lambdas = etas.clone();
        let mut gradients: Vec<Gradient> = lambdas
            .iter()
            .zip(input.scans)
            .zip(input.sensors)
            .zip(&etas)
            .map(|(((lambda, scan), sensor), eta)| {
                natural_gradient_local(lambda, eta, &scan.points, sensor, num_sensors, variant)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut trackers: Vec<Gradient> = gradients.clone();

        let mut trace = StepTrace::default();
        if input.record_iterates {
            record_iterate(&mut trace.iterates, 0, &lambdas)?;
        }

        let mut weights: Option<(usize, MixingMatrix)> = None;
        for iteration in 0..self.config.max_iterations {
            // Rebuild the mixing weights only when the per-iteration
            // snapshot changes.
            let index = iteration.min(input.snapshots.len() - 1);
            if weights.as_ref().map_or(true, |(i, _)| *i != index) {
                let snapshot: &GraphSnapshot = &input.snapshots[index];
                weights = Some((index, metropolis_weights(snapshot)));
            }
            let (_, w) = weights.as_ref().unwrap();

            let lambda_payloads: Vec<Vec<f64>> = lambdas.iter().map(|l| l.flatten()).collect();
            let tracker_payloads: Vec<Vec<f64>> = trackers.iter().map(|g| g.flatten()).collect();
            let mixed_lambdas = w.mix(&lambda_payloads)?;
            let mixed_trackers = w.mix(&tracker_payloads)?;

            let mut new_lambdas = Vec::with_capacity(num_sensors);
            for s in 0..num_sensors {
                let mixed = NaturalParams::from_flat(&mixed_lambdas[s], num_objects);
                new_lambdas.push(Self::damped_step(
                    &mixed,
                    &trackers[s],
                    self.config.alpha,
                    s,
                    iteration,
                )?);
            }

            let mut new_gradients = Vec::with_capacity(num_sensors);
            let mut new_trackers = Vec::with_capacity(num_sensors);
            for s in 0..num_sensors {
                let gradient = natural_gradient_local(
                    &new_lambdas[s],
                    &etas[s],
                    &input.scans[s].points,
                    &input.sensors[s],
                    num_sensors,
                    variant,
                )?;
                let mut tracked = Gradient::from_flat(&mixed_trackers[s], num_objects);
                tracked.add_scaled(&gradient, 1.0);
                tracked.add_scaled(&gradients[s], -1.0);
                new_gradients.push(gradient);
                new_trackers.push(tracked);
            }

            lambdas = new_lambdas;
            gradients = new_gradients;
            trackers = new_trackers;

            if self.config.conservation_audit {
                trace.conservation_gap = trace
                    .conservation_gap
                    .max(conservation_gap(&trackers, &gradients));
            }
            if input.record_iterates {
                record_iterate(&mut trace.iterates, iteration + 1, &lambdas)?;
            }
        }

        for (posterior, lambda) in self.posteriors.iter_mut().zip(&lambdas) {
            *posterior = lambda.to_belief()?;
        }
        self.started = true;
        self.comm_iterations += self.config.max_iterations as u64;
        Ok(trace)
    }

    fn sensor_beliefs(&self) -> Vec<GaussianBelief> {
        self.posteriors.clone()
    }

    fn comm_iterations(&self) -> u64 {
        self.comm_iterations
    }
}
