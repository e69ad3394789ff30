//! GOSPA scoring with its localisation/missed/false decomposition, summary
//! aggregation over sensors, steps, and Monte Carlo runs, and
//! communication-iteration accounting.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric parameters: order `p`, cardinality penalty factor `alpha`, and
/// cut-off distance `c`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GospaParams {
    pub p: f64,
    pub alpha: f64,
    pub cutoff: f64,
}

impl Default for GospaParams {
    fn default() -> Self {
        GospaParams {
            p: 1.0,
            alpha: 2.0,
            cutoff: 50.0,
        }
    }
}

impl GospaParams {
    pub fn validate(&self) -> Result<()> {
        if self.p < 1.0 {
            return Err(Error::InvalidInput(format!("order p must be >= 1, got {}", self.p)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in (0, 2], got {}",
                self.alpha
            )));
        }
        if self.cutoff <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "cut-off distance must be positive, got {}",
                self.cutoff
            )));
        }
        Ok(())
    }
}

/// One GOSPA evaluation. With `p = 1` the decomposition is additive:
/// `total = localisation + missed + false_objects`.
#[derive(Debug, Clone)]
pub struct GospaBreakdown {
    pub total: f64,
    pub localisation: f64,
    pub missed: f64,
    pub false_objects: f64,
    /// Estimate index assigned to each truth (None for missed truths).
    pub assignment: Vec<Option<usize>>,
}

/// Exact rectangular assignment by shortest augmenting paths with
/// potentials, O(n^2 m) for an n x m cost matrix with n <= m. Returns the
/// column matched to each row.
fn solve_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let slack = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for (j, &row) in matched_row.iter().enumerate().skip(1) {
        if row > 0 {
            row_to_col[row - 1] = j - 1;
        }
    }
    row_to_col
}

/// GOSPA between estimated and true position sets. Assigned pairs closer
/// than the cut-off contribute `distance^p`; every unassigned truth or
/// estimate contributes `c^p / alpha`; the total is the p-th root of the
/// summed cost. Pairing at or beyond the cut-off is encoded with the cost
/// of leaving both elements unassigned, so the optimal matching never pays
/// more than the cardinality penalty for a bad pair.
pub fn gospa(
    estimates: &[Vector2<f64>],
    truth: &[Vector2<f64>],
    params: &GospaParams,
) -> Result<GospaBreakdown> {
    params.validate()?;
    let unassigned = params.cutoff.powf(params.p) / params.alpha;
    let root = |cost: f64| cost.powf(1.0 / params.p);

    let num_truth = truth.len();
    let num_est = estimates.len();
    let mut assignment = vec![None; num_truth];
    if num_truth == 0 || num_est == 0 {
        let missed_cost = num_truth as f64 * unassigned;
        let false_cost = num_est as f64 * unassigned;
        return Ok(GospaBreakdown {
            total: root(missed_cost + false_cost),
            localisation: 0.0,
            missed: root(missed_cost),
            false_objects: root(false_cost),
            assignment,
        });
    }

    let distance = |t: usize, e: usize| (truth[t] - estimates[e]).norm();
    let pair_cost = |t: usize, e: usize| {
        let d = distance(t, e);
        if d < params.cutoff {
            d.powf(params.p)
        } else {
            2.0 * unassigned
        }
    };

    // Solve with the smaller set as rows; the unmatched surplus of the
    // larger set pays the per-element penalty directly.
    let truth_rows = num_truth <= num_est;
    let (rows, cols) = if truth_rows {
        (num_truth, num_est)
    } else {
        (num_est, num_truth)
    };
    let cost: Vec<Vec<f64>> = (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| if truth_rows { pair_cost(r, c) } else { pair_cost(c, r) })
                .collect()
        })
        .collect();
    let row_to_col = solve_assignment(&cost);

    let mut localisation_cost = 0.0;
    let mut missed_count = num_truth - rows.min(num_truth);
    let mut false_count = num_est - rows.min(num_est);
    for (r, &c) in row_to_col.iter().enumerate() {
        let (t, e) = if truth_rows { (r, c) } else { (c, r) };
        if distance(t, e) < params.cutoff {
            localisation_cost += distance(t, e).powf(params.p);
            assignment[t] = Some(e);
        } else {
            missed_count += 1;
            false_count += 1;
        }
    }
    let missed_cost = missed_count as f64 * unassigned;
    let false_cost = false_count as f64 * unassigned;
    Ok(GospaBreakdown {
        total: root(localisation_cost + missed_cost + false_cost),
        localisation: root(localisation_cost),
        missed: root(missed_cost),
        false_objects: root(false_cost),
        assignment,
    })
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Per-run scoring material for one method: a breakdown per time step per
/// sensor, plus the integer communication-iteration counter per step.
#[derive(Debug, Clone)]
pub struct RunScores {
    /// `gospa[n][s]` scores sensor s's estimate at step n.
    pub gospa: Vec<Vec<GospaBreakdown>>,
    pub comm_iterations: Vec<u64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

/// Table-style summary of one method: mean GOSPA over all sensors and all
/// time steps with its sub-metrics (mean and across-run standard
/// deviation), and the communication iterations averaged over steps and
/// runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mgospa: MeanStd,
    pub localisation: MeanStd,
    pub missed: MeanStd,
    #[serde(rename = "false")]
    pub false_objects: MeanStd,
    pub ci: f64,
}

/// Aggregate per-run scores into a method summary. The MGOSPA of one run is
/// the mean GOSPA over all sensors and all time steps; mean and standard
/// deviation are then taken across runs.
pub fn aggregate(runs: &[RunScores]) -> Result<MethodSummary> {
    if runs.is_empty() || runs.iter().any(|r| r.gospa.is_empty()) {
        return Err(Error::InvalidInput("aggregate needs at least one scored run".into()));
    }
    let per_run = |extract: fn(&GospaBreakdown) -> f64| -> Vec<f64> {
        runs.iter()
            .map(|run| {
                let mut sum = 0.0;
                let mut count = 0usize;
                for step in &run.gospa {
                    for breakdown in step {
                        sum += extract(breakdown);
                        count += 1;
                    }
                }
                sum / count as f64
            })
            .collect()
    };
    let ci_values: Vec<f64> = runs
        .iter()
        .map(|run| {
            run.comm_iterations.iter().sum::<u64>() as f64 / run.comm_iterations.len().max(1) as f64
        })
        .collect();
    Ok(MethodSummary {
        mgospa: mean_std(&per_run(|b| b.total)),
        localisation: mean_std(&per_run(|b| b.localisation)),
        missed: mean_std(&per_run(|b| b.missed)),
        false_objects: mean_std(&per_run(|b| b.false_objects)),
        ci: ci_values.iter().sum::<f64>() / ci_values.len() as f64,
    })
}
