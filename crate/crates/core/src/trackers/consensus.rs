//! Consensus tracker: a coordinate-ascent tracker whose per-iteration data
//! statistics are averaged across the network before every state update.

use super::{step_prior, StepInput, StepTrace, Tracker, TrackerConfig};
use crate::error::Result;
use crate::graph::average_consensus;
use crate::model::GaussianBelief;
use crate::vi::{
    association_posterior, cavi_update_from_stats, data_statistics, NaturalParams,
    SufficientStats,
};

pub struct DecVt {
    config: TrackerConfig,
    posteriors: Vec<GaussianBelief>,
    started: bool,
    comm_iterations: u64,
}

impl DecVt {
    pub fn new(config: TrackerConfig, init: Vec<GaussianBelief>) -> Self {
        DecVt {
            config,
            posteriors: init,
            started: false,
            comm_iterations: 0,
        }
    }

    pub fn boxed(config: TrackerConfig, init: Vec<GaussianBelief>) -> Box<dyn Tracker> {
        Box::new(Self::new(config, init))
    }
}

impl Tracker for DecVt {
    fn name(&self) -> &'static str {
        "dec-vt"
    }

    fn step(&mut self, input: &StepInput) -> Result<StepTrace> {
        let num_sensors = self.posteriors.len();
        input.validate(num_sensors)?;
        let num_objects = self.posteriors[0].num_objects();
        let rounds = self.config.consensus_rounds;
        // With zero rounds no information crosses the network; each sensor
        // falls back to a local-only update (its own statistics, unscaled).
        let scale = if rounds == 0 { 1.0 } else { num_sensors as f64 };

        let etas: Vec<NaturalParams> = self
            .posteriors
            .iter()
            .map(|posterior| {
                NaturalParams::from_belief(&step_prior(posterior, input.dynamics, self.started))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut lambdas = etas.clone();

        for _ in 0..self.config.vi_iterations {
            let payloads: Vec<Vec<f64>> = lambdas
                .iter()
                .zip(input.scans)
                .zip(input.sensors)
                .map(|((lambda, scan), sensor)| {
                    let assoc = association_posterior(lambda, &scan.points, sensor)?;
                    Ok(data_statistics(&assoc, &scan.points, sensor)?.flatten())
                })
                .collect::<Result<Vec<_>>>()?;
            let run = average_consensus(&payloads, input.snapshots, rounds)?;
            for (s, values) in run.values.iter().enumerate() {
                let mut stats = SufficientStats::from_flat(values, num_objects);
                stats.scale(scale);
                lambdas[s] = cavi_update_from_stats(&etas[s], &stats);
            }
            self.comm_iterations += rounds as u64;
        }

        for (posterior, lambda) in self.posteriors.iter_mut().zip(&lambdas) {
            *posterior = lambda.to_belief()?;
        }
        self.started = true;
        Ok(StepTrace::default())
    }

    fn sensor_beliefs(&self) -> Vec<GaussianBelief> {
        self.posteriors.clone()
    }

    fn comm_iterations(&self) -> u64 {
        self.comm_iterations
    }
}
