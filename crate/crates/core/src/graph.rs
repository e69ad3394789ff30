//! Mixing-weight construction and consensus primitives shared by every
//! decentralised tracker.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sim::GraphSnapshot;

/// Symmetric doubly stochastic mixing weights for one snapshot.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    pub weights: DMatrix<f64>,
    /// Time step of the snapshot the weights were built from.
    pub time_step: usize,
}

/// Metropolis weights: `w_sj = 1 / (1 + max(d_s, d_j))` for adjacent pairs,
/// zero for non-adjacent pairs, and the complement on the diagonal. The
/// result is symmetric and doubly stochastic for any undirected graph.
pub fn metropolis_weights(snapshot: &GraphSnapshot) -> MixingMatrix {
    let n = snapshot.num_sensors();
    let mut weights = DMatrix::zeros(n, n);
    for s in 0..n {
        let mut off_diagonal = 0.0;
        for j in snapshot.neighbours(s) {
            let w = 1.0 / (1.0 + snapshot.degrees[s].max(snapshot.degrees[j]) as f64);
            weights[(s, j)] = w;
            off_diagonal += w;
        }
        weights[(s, s)] = 1.0 - off_diagonal;
    }
    MixingMatrix {
        weights,
        time_step: snapshot.time_step,
    }
}

impl MixingMatrix {
    pub fn num_sensors(&self) -> usize {
        self.weights.nrows()
    }

    /// One synchronous mixing round: `out_s = sum_j w_sj in_j`. Every sensor
    /// reads the same input generation; the network sum is preserved. The
    /// self term is accumulated first and neighbours in ascending order, a
    /// fixed grouping under which sensors in symmetric positions produce
    /// bit-identical outputs.
    pub fn mix(&self, values: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = self.num_sensors();
        if values.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} value vectors for {} sensors",
                values.len(),
                n
            )));
        }
        let len = values.first().map_or(0, Vec::len);
        if values.iter().any(|v| v.len() != len) {
            return Err(Error::InvalidInput("value vectors must have equal length".into()));
        }
        let mut out = vec![vec![0.0; len]; n];
        for s in 0..n {
            let self_weight = self.weights[(s, s)];
            for (o, v) in out[s].iter_mut().zip(&values[s]) {
                *o = self_weight * v;
            }
            for j in 0..n {
                let w = self.weights[(s, j)];
                if j == s || w == 0.0 {
                    continue;
                }
                for (o, v) in out[s].iter_mut().zip(&values[j]) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }
}

/// Consensus outcome: final per-sensor values plus the per-round
/// max-disagreement diagnostic (entry 0 is the initial disagreement).
#[derive(Debug, Clone)]
pub struct ConsensusRun {
    pub values: Vec<Vec<f64>>,
    pub disagreement: Vec<f64>,
}

fn max_disagreement(values: &[Vec<f64>]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let len = values[0].len();
    let mut mean = vec![0.0; len];
    for v in values {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    values
        .iter()
        .map(|v| {
            v.iter()
                .zip(&mean)
                .map(|(x, m)| (x - m) * (x - m))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Repeated mixing using each round's snapshot weights. When fewer snapshots
/// than rounds are supplied the last one is reused, which covers the default
/// graph-fixed-within-a-time-step policy with a single snapshot.
pub fn average_consensus(
    values: &[Vec<f64>],
    snapshots: &[GraphSnapshot],
    rounds: usize,
) -> Result<ConsensusRun> {
    if rounds > 0 && snapshots.is_empty() {
        return Err(Error::InvalidInput("consensus needs at least one snapshot".into()));
    }
    let mut current = values.to_vec();
    let mut disagreement = Vec::with_capacity(rounds + 1);
    disagreement.push(max_disagreement(&current));
    let mut weights: Option<(usize, MixingMatrix)> = None;
    for round in 0..rounds {
        let index = round.min(snapshots.len() - 1);
        // Weights depend only on the snapshot; rebuild only when it changes.
        let rebuild = weights.as_ref().map_or(true, |(i, _)| *i != index);
        if rebuild {
            weights = Some((index, metropolis_weights(&snapshots[index])));
        }
        let (_, w) = weights.as_ref().unwrap();
        current = w.mix(&current)?;
        disagreement.push(max_disagreement(&current));
    }
    Ok(ConsensusRun {
        values: current,
        disagreement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn snapshot_from_edges(n: usize, edges: &[(usize, usize)]) -> GraphSnapshot {
        let mut adjacency = vec![vec![false; n]; n];
        for &(i, j) in edges {
            adjacency[i][j] = true;
            adjacency[j][i] = true;
        }
        GraphSnapshot::new(0, adjacency).unwrap()
    }

    fn complete(n: usize) -> GraphSnapshot {
        let edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        snapshot_from_edges(n, &edges)
    }

    fn assert_doubly_stochastic(w: &MixingMatrix) {
        let n = w.num_sensors();
        for s in 0..n {
            let row: f64 = (0..n).map(|j| w.weights[(s, j)]).sum();
            let col: f64 = (0..n).map(|j| w.weights[(j, s)]).sum();
            assert!((row - 1.0).abs() < 1e-12, "row {s} sums to {row}");
            assert!((col - 1.0).abs() < 1e-12, "col {s} sums to {col}");
            for j in 0..n {
                assert!(w.weights[(s, j)] >= 0.0);
                assert_eq!(w.weights[(s, j)], w.weights[(j, s)]);
            }
        }
    }

    #[test]
    fn complete_graph_weights_are_uniform() {
        let w = metropolis_weights(&complete(5));
        for s in 0..5 {
            for j in 0..5 {
                assert_relative_eq!(w.weights[(s, j)], 0.2, epsilon = 1e-15);
            }
        }
        assert_doubly_stochastic(&w);
    }

    #[test]
    fn isolated_node_keeps_all_its_weight() {
        let snapshot = snapshot_from_edges(3, &[(0, 1)]);
        let w = metropolis_weights(&snapshot);
        assert_relative_eq!(w.weights[(2, 2)], 1.0, epsilon = 1e-15);
        assert_doubly_stochastic(&w);
    }

    #[test]
    fn path_graph_weights_match_the_formula() {
        let w = metropolis_weights(&snapshot_from_edges(3, &[(0, 1), (1, 2)]));
        assert_relative_eq!(w.weights[(0, 1)], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w.weights[(1, 2)], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w.weights[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w.weights[(1, 1)], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w.weights[(2, 2)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w.weights[(0, 2)], 0.0, epsilon = 1e-15);
        assert_doubly_stochastic(&w);
    }

    #[test]
    fn random_graphs_are_doubly_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..12usize);
            let mut adjacency = vec![vec![false; n]; n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let e = rng.random::<f64>() < 0.4;
                    adjacency[i][j] = e;
                    adjacency[j][i] = e;
                }
            }
            let snapshot = GraphSnapshot::new(0, adjacency).unwrap();
            assert_doubly_stochastic(&metropolis_weights(&snapshot));
        }
    }

    #[test]
    fn identical_inputs_are_a_fixed_point_of_mixing() {
        let w = metropolis_weights(&snapshot_from_edges(4, &[(0, 1), (1, 2), (2, 3)]));
        let values = vec![vec![3.0, -1.0]; 4];
        let out = w.mix(&values).unwrap();
        for v in &out {
            assert_relative_eq!(v[0], 3.0, epsilon = 1e-12);
            assert_relative_eq!(v[1], -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_sensor_mixing_is_identity() {
        let w = metropolis_weights(&snapshot_from_edges(1, &[]));
        let values = vec![vec![1.0, 2.0, 3.0]];
        assert_eq!(w.mix(&values).unwrap(), values);
    }

    #[test]
    fn mixing_preserves_the_network_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = metropolis_weights(&snapshot_from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]));
        let values: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-100.0..100.0)).collect())
            .collect();
        let out = w.mix(&values).unwrap();
        for d in 0..3 {
            let before: f64 = values.iter().map(|v| v[d]).sum();
            let after: f64 = out.iter().map(|v| v[d]).sum();
            assert!((before - after).abs() <= 1e-12 * before.abs().max(1.0));
        }
    }

    #[test]
    fn repeated_mixing_converges_to_the_mean() {
        let snapshot = snapshot_from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
        let w = metropolis_weights(&snapshot);
        let mut values = vec![vec![8.0], vec![0.0], vec![0.0], vec![0.0]];
        let expected = 2.0;
        for _ in 0..400 {
            values = w.mix(&values).unwrap();
        }
        for v in &values {
            assert!((v[0] - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn mismatched_payloads_are_rejected() {
        let w = metropolis_weights(&snapshot_from_edges(2, &[(0, 1)]));
        assert!(w.mix(&[vec![1.0]]).is_err());
        assert!(w.mix(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn zero_rounds_returns_inputs() {
        let values = vec![vec![1.0], vec![2.0]];
        let run = average_consensus(&values, &[], 0).unwrap();
        assert_eq!(run.values, values);
        assert_eq!(run.disagreement.len(), 1);
    }

    #[test]
    fn complete_graph_reaches_the_mean_in_one_round() {
        let snapshot = complete(4);
        let values = vec![vec![0.0], vec![4.0], vec![8.0], vec![0.0]];
        let run = average_consensus(&values, std::slice::from_ref(&snapshot), 1).unwrap();
        for v in &run.values {
            assert_relative_eq!(v[0], 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn path_graph_consensus_approaches_the_mean() {
        let snapshot = snapshot_from_edges(3, &[(0, 1), (1, 2)]);
        let values = vec![vec![0.0], vec![0.0], vec![3.0]];
        let run = average_consensus(&values, std::slice::from_ref(&snapshot), 80).unwrap();
        for v in &run.values {
            assert!((v[0] - 1.0).abs() < 1e-6, "value {}", v[0]);
        }
    }

    #[test]
    fn disagreement_is_monotone_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let snapshot = snapshot_from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)]);
        let values: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let run = average_consensus(&values, std::slice::from_ref(&snapshot), 30).unwrap();
        for pair in run.disagreement.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "disagreement increased: {pair:?}");
        }
    }
}
