//! Centralised tracker: one estimator receiving every sensor's scan.

use super::{cavi_run, step_prior, IterateRecord, StepInput, StepTrace, Tracker, TrackerConfig};
use crate::error::{Error, Result};
use crate::model::GaussianBelief;
use crate::vi::NaturalParams;

/// Coordinate-ascent tracker over the union of all scans. Serves as the
/// fusion-optimal reference; it performs no neighbour communication.
pub struct CVt {
    config: TrackerConfig,
    posterior: GaussianBelief,
    network_size: usize,
    started: bool,
}

impl CVt {
    pub fn new(config: TrackerConfig, init: Vec<GaussianBelief>) -> Self {
        let network_size = init.len().max(1);
        let posterior = init.into_iter().next().unwrap_or(GaussianBelief {
            means: vec![],
            covs: vec![],
        });
        CVt {
            config,
            posterior,
            network_size,
            started: false,
        }
    }

    pub fn boxed(config: TrackerConfig, init: Vec<GaussianBelief>) -> Box<dyn Tracker> {
        Box::new(Self::new(config, init))
    }
}

impl Tracker for CVt {
    fn name(&self) -> &'static str {
        "c-vt"
    }

    fn step(&mut self, input: &StepInput) -> Result<StepTrace> {
        if input.scans.len() != input.sensors.len() {
            return Err(Error::InvalidInput("scan/sensor count mismatch".into()));
        }
        let prior = step_prior(&self.posterior, input.dynamics, self.started);
        let eta = NaturalParams::from_belief(&prior)?;
        let mut trace = StepTrace::default();
        let record = input.record_iterates;
        let lambda = cavi_run(
            &eta,
            input.scans,
            input.sensors,
            self.config.vi_iterations,
            |iteration, lambda| {
                if record {
                    if let Ok(belief) = lambda.to_belief() {
                        trace.iterates.push(IterateRecord {
                            iteration,
                            positions: vec![belief.positions()],
                            params: vec![lambda.flatten()],
                        });
                    }
                }
            },
        )?;
        self.posterior = lambda.to_belief()?;
        self.started = true;
        Ok(trace)
    }

    fn sensor_beliefs(&self) -> Vec<GaussianBelief> {
        vec![self.posterior.clone(); self.network_size]
    }

    fn comm_iterations(&self) -> u64 {
        0
    }
}
