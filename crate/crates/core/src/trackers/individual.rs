//! Individual tracker: every sensor runs its own coordinate-ascent tracker
//! on local measurements only. No fusion, no communication.

use super::{cavi_run, step_prior, StepInput, StepTrace, Tracker, TrackerConfig};
use crate::error::Result;
use crate::model::GaussianBelief;
use crate::vi::NaturalParams;

pub struct IVt {
    config: TrackerConfig,
    posteriors: Vec<GaussianBelief>,
    started: bool,
}

impl IVt {
    pub fn new(config: TrackerConfig, init: Vec<GaussianBelief>) -> Self {
        IVt {
            config,
            posteriors: init,
            started: false,
        }
    }

    pub fn boxed(config: TrackerConfig, init: Vec<GaussianBelief>) -> Box<dyn Tracker> {
        Box::new(Self::new(config, init))
    }
}

impl Tracker for IVt {
    fn name(&self) -> &'static str {
        "i-vt"
    }

    fn step(&mut self, input: &StepInput) -> Result<StepTrace> {
        input.validate(self.posteriors.len())?;
        for (s, posterior) in self.posteriors.iter_mut().enumerate() {
            let prior = step_prior(posterior, input.dynamics, self.started);
            let eta = NaturalParams::from_belief(&prior)?;
            let lambda = cavi_run(
                &eta,
                std::slice::from_ref(&input.scans[s]),
                std::slice::from_ref(&input.sensors[s]),
                self.config.vi_iterations,
                |_, _| {},
            )?;
            *posterior = lambda.to_belief()?;
        }
        self.started = true;
        Ok(StepTrace::default())
    }

    fn sensor_beliefs(&self) -> Vec<GaussianBelief> {
        self.posteriors.clone()
    }

    fn comm_iterations(&self) -> u64 {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::super::centralised::CVt;
    use super::super::test_support::{fixture, step_inputs};
    use super::*;

    #[test]
    fn single_sensor_individual_equals_centralised() {
        let f = fixture(1, 2, 4, 21);
        let mut individual = IVt::new(TrackerConfig::default(), f.init.clone());
        let mut centralised = CVt::new(TrackerConfig::default(), f.init.clone());
        for input in step_inputs(&f, false) {
            individual.step(&input).unwrap();
            centralised.step(&input).unwrap();
        }
        let a = individual.sensor_beliefs();
        let b = centralised.sensor_beliefs();
        for k in 0..2 {
            approx::assert_relative_eq!(a[0].means[k], b[0].means[k], epsilon = 1e-10);
            approx::assert_relative_eq!(a[0].covs[k], b[0].covs[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn sensors_with_different_scans_diverge() {
        let f = fixture(2, 2, 3, 33);
        let mut tracker = IVt::new(TrackerConfig::default(), f.init.clone());
        for input in step_inputs(&f, false) {
            tracker.step(&input).unwrap();
        }
        let beliefs = tracker.sensor_beliefs();
        let delta: f64 = (0..2)
            .map(|k| (beliefs[0].means[k] - beliefs[1].means[k]).norm())
            .sum();
        assert!(delta > 1e-6, "independent sensors should disagree, delta {delta}");
        assert_eq!(tracker.comm_iterations(), 0);
    }
}
