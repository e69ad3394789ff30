//! Average-fusion tracker: per-sensor local trackers whose posteriors are
//! fused by arithmetic averaging of first and second moments over the
//! network, then moment-matched back to a Gaussian.

use nalgebra::{Matrix4, Vector4};

use super::{cavi_run, step_prior, StepInput, StepTrace, Tracker, TrackerConfig};
use crate::error::Result;
use crate::graph::average_consensus;
use crate::model::{symmetrize4, GaussianBelief};
use crate::vi::NaturalParams;

/// Wire layout per object: 4 mean entries then the 10 upper-triangular
/// entries (row-major) of the second moment `Sigma + mu mu^T`.
fn flatten_moments(belief: &GaussianBelief) -> Vec<f64> {
    let mut out = Vec::with_capacity(belief.num_objects() * 14);
    for (mean, cov) in belief.means.iter().zip(&belief.covs) {
        out.extend_from_slice(mean.as_slice());
        let second = cov + mean * mean.transpose();
        for i in 0..4 {
            for j in i..4 {
                out.push(second[(i, j)]);
            }
        }
    }
    out
}

fn unflatten_moments(data: &[f64], num_objects: usize) -> GaussianBelief {
    let mut means = Vec::with_capacity(num_objects);
    let mut covs = Vec::with_capacity(num_objects);
    for k in 0..num_objects {
        let base = k * 14;
        let mean = Vector4::from_column_slice(&data[base..base + 4]);
        let mut second = Matrix4::zeros();
        let mut idx = base + 4;
        for i in 0..4 {
            for j in i..4 {
                second[(i, j)] = data[idx];
                second[(j, i)] = data[idx];
                idx += 1;
            }
        }
        covs.push(symmetrize4(&(second - mean * mean.transpose())));
        means.push(mean);
    }
    GaussianBelief { means, covs }
}

pub struct DeAaVt {
    config: TrackerConfig,
    posteriors: Vec<GaussianBelief>,
    started: bool,
    comm_iterations: u64,
}

impl DeAaVt {
    pub fn new(config: TrackerConfig, init: Vec<GaussianBelief>) -> Self {
        DeAaVt {
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

impl Tracker for DeAaVt {
    fn name(&self) -> &'static str {
        "deaa-vt"
    }

    fn step(&mut self, input: &StepInput) -> Result<StepTrace> {
        let num_sensors = self.posteriors.len();
        input.validate(num_sensors)?;
        let num_objects = self.posteriors[0].num_objects();

        // Local tracking on each sensor's own scan.
        let mut locals = Vec::with_capacity(num_sensors);
        for (s, posterior) in self.posteriors.iter().enumerate() {
            let prior = step_prior(posterior, input.dynamics, self.started);
            let eta = NaturalParams::from_belief(&prior)?;
            let lambda = cavi_run(
                &eta,
                std::slice::from_ref(&input.scans[s]),
                std::slice::from_ref(&input.sensors[s]),
                self.config.vi_iterations,
                |_, _| {},
            )?;
            locals.push(lambda.to_belief()?);
        }

        // Arithmetic-average fusion of the posterior moments. Objects are
        // index-aligned across sensors (fixed object count, shared
        // initialisation), so fusion is per object index.
        let payloads: Vec<Vec<f64>> = locals.iter().map(flatten_moments).collect();
        let run = average_consensus(&payloads, input.snapshots, self.config.consensus_rounds)?;
        self.comm_iterations += self.config.consensus_rounds as u64;
        for (posterior, values) in self.posteriors.iter_mut().zip(&run.values) {
            *posterior = unflatten_moments(values, num_objects);
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

#[cfg(test)]
mod tests {
    use super::super::test_support::fixture;
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn moment_layout_round_trips() {
        let f = fixture(1, 3, 1, 55);
        let belief = &f.init[0];
        let back = unflatten_moments(&flatten_moments(belief), 3);
        for k in 0..3 {
            assert_relative_eq!(back.means[k], belief.means[k], epsilon = 1e-12);
            assert_relative_eq!(back.covs[k], belief.covs[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn fusing_identical_posteriors_is_the_identity() {
        let f = fixture(3, 2, 1, 57);
        let payloads: Vec<Vec<f64>> = (0..3).map(|_| flatten_moments(&f.init[0])).collect();
        let snapshot = &f.snapshots[0];
        let run = average_consensus(&payloads, std::slice::from_ref(snapshot), 10).unwrap();
        for values in &run.values {
            let fused = unflatten_moments(values, 2);
            for k in 0..2 {
                assert_relative_eq!(fused.means[k], f.init[0].means[k], epsilon = 1e-9);
                assert_relative_eq!(fused.covs[k], f.init[0].covs[k], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn two_sensor_fusion_matches_the_moment_matching_algebra() {
        // Equal covariances: fused mean is the midpoint and the fused
        // covariance gains the quarter outer product of the mean gap; the
        // fused second moment is exactly the average of second moments.
        let cov = Matrix4::identity() * 3.0;
        let m1 = Vector4::new(10.0, 1.0, -4.0, 0.5);
        let m2 = Vector4::new(6.0, -1.0, 2.0, 0.0);
        let a = GaussianBelief::new(vec![m1], vec![cov]).unwrap();
        let b = GaussianBelief::new(vec![m2], vec![cov]).unwrap();
        let adjacency = vec![vec![false, true], vec![true, false]];
        let snapshot = crate::sim::GraphSnapshot::new(0, adjacency).unwrap();
        let payloads = vec![flatten_moments(&a), flatten_moments(&b)];
        // One round on the two-node complete graph averages exactly.
        let run = average_consensus(&payloads, std::slice::from_ref(&snapshot), 1).unwrap();
        let fused = unflatten_moments(&run.values[0], 1);
        let gap = m1 - m2;
        assert_relative_eq!(fused.means[0], (m1 + m2) * 0.5, epsilon = 1e-12);
        assert_relative_eq!(
            fused.covs[0],
            cov + gap * gap.transpose() * 0.25,
            epsilon = 1e-12
        );
        let second_expected =
            ((cov + m1 * m1.transpose()) + (cov + m2 * m2.transpose())) * 0.5;
        let second_fused = fused.covs[0] + fused.means[0] * fused.means[0].transpose();
        assert_relative_eq!(second_fused, second_expected, epsilon = 1e-12);
    }

    #[test]
    fn counts_one_consensus_block_per_step() {
        let f = fixture(3, 2, 2, 59);
        let config = TrackerConfig {
            consensus_rounds: 20,
            ..TrackerConfig::default()
        };
        let mut tracker = DeAaVt::new(config, f.init.clone());
        for input in super::super::test_support::step_inputs(&f, false) {
            tracker.step(&input).unwrap();
        }
        assert_eq!(tracker.comm_iterations(), 40);
    }
}
