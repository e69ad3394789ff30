//! Experiment orchestration: Monte Carlo runs over simulated bundles, every
//! selected tracker scored on identical data, aggregated into a report and
//! emitted as versioned JSON/CSV files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{aggregate, gospa, GospaBreakdown, GospaParams, MethodSummary, RunScores};
use crate::model::MeasurementSet;
use crate::rng::{self, tags};
use crate::scenario::Scenario;
use crate::sim::{self, Bundle, GraphSnapshot};
use crate::trackers::{StepInput, Tracker, TrackerRegistry};

pub const SUMMARY_FILE: &str = "summary.json";
pub const CURVES_FILE: &str = "gospa_curves.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const LOCK_FILE: &str = "scenario.lock.json";

// ---------------------------------------------------------------------------
// Report structures
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub sim_fingerprint: String,
    pub version: String,
    pub scenario: String,
}

/// Mean GOSPA at one time step (over runs and sensors) with the
/// across-sensor standard deviation averaged over runs.
#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub step: usize,
    pub mean: f64,
    pub std: f64,
}

/// One sample of the per-iteration convergence curve at the designated
/// time step.
#[derive(Debug, Clone, Copy)]
pub struct ConvergencePoint {
    pub iteration: usize,
    pub sensor: usize,
    pub gospa: f64,
}

#[derive(Debug, Clone)]
pub struct MethodReport {
    pub summary: MethodSummary,
    pub curve: Vec<CurvePoint>,
    pub convergence: Vec<ConvergencePoint>,
    pub diverged_runs: usize,
    pub max_conservation_gap: f64,
    /// Raw per-run scores for downstream analysis; not serialised.
    pub raw_runs: Vec<RunScores>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub methods: BTreeMap<String, MethodReport>,
    pub provenance: Provenance,
    pub num_steps: usize,
}

// ---------------------------------------------------------------------------
// Simulation and tracking
// ---------------------------------------------------------------------------

fn run_seed(scenario: &Scenario, run_index: usize) -> u64 {
    rng::derive_seed(scenario.seed, &[tags::RUN, run_index as u64])
}

/// Simulate everything one Monte Carlo run consumes. Fully deterministic in
/// the scenario seed and the run index.
pub fn simulate_run_bundle(scenario: &Scenario, run_index: usize) -> Result<Bundle> {
    let seed = run_seed(scenario, run_index);
    let dynamics = scenario.dynamics_model();
    let init_states = scenario.initial_states();
    let truth = sim::simulate_truth(
        &init_states,
        &dynamics,
        scenario.num_steps,
        rng::derive_seed(seed, &[tags::TRUTH]),
    );
    let sensors = vec![scenario.sensor_model(); scenario.num_sensors];
    let scans = (0..scenario.num_steps)
        .map(|n| {
            sim::simulate_scan(
                &truth.states[n],
                &sensors,
                &scenario.region,
                n,
                rng::derive_seed(seed, &[tags::SCAN, n as u64]),
            )
        })
        .collect();
    let positions = sim::connected_positions(
        &scenario.region,
        scenario.num_sensors,
        &scenario.network_policy(),
        rng::derive_seed(seed, &[tags::SENSOR_POSITIONS]),
    )?;
    let snapshots = sim::generate_network(
        &positions,
        &scenario.network_policy(),
        scenario.num_steps,
        rng::derive_seed(seed, &[tags::NETWORK]),
    )?;
    Ok(Bundle {
        truth,
        scans,
        snapshots,
    })
}

/// Outcome of one method on one run.
#[derive(Debug, Clone)]
pub struct MethodRunOutcome {
    /// None when the tracker diverged during the run.
    pub scores: Option<RunScores>,
    pub convergence: Vec<ConvergencePoint>,
    pub max_conservation_gap: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub methods: BTreeMap<String, MethodRunOutcome>,
}

/// Run the selected methods over one bundle. All methods consume identical
/// data. Convergence curves are recorded at the scenario's designated step
/// when `record_convergence` is set.
pub fn track_bundle(
    scenario: &Scenario,
    bundle: &Bundle,
    methods: &[String],
    run_index: usize,
    record_convergence: bool,
) -> Result<RunOutcome> {
    let registry = TrackerRegistry::standard();
    let dynamics = scenario.dynamics_model();
    let sensors = vec![scenario.sensor_model(); scenario.num_sensors];
    let seed = run_seed(scenario, run_index);
    let init = scenario.initial_beliefs(&bundle.truth.states[0], seed);
    let num_steps = bundle.num_steps();

    // Per-iteration connectivity resampling regenerates snapshots from the
    // run seed; the default policy keeps the per-step snapshot fixed.
    let resample_positions = if scenario.network.resample_per_iteration {
        Some(sim::connected_positions(
            &scenario.region,
            scenario.num_sensors,
            &scenario.network_policy(),
            rng::derive_seed(seed, &[tags::SENSOR_POSITIONS]),
        )?)
    } else {
        None
    };

    let mut outcome = RunOutcome {
        methods: BTreeMap::new(),
    };
    for method in methods {
        let config = scenario.tracker_config(method);
        let iterations = config.max_iterations;
        let mut tracker: Box<dyn Tracker> = registry.build(method, config, init.clone())?;
        let mut scores = RunScores {
            gospa: Vec::with_capacity(num_steps),
            comm_iterations: Vec::with_capacity(num_steps),
        };
        let mut convergence = Vec::new();
        let mut max_gap: f64 = 0.0;
        let mut diverged = false;

        let mut previous_ci = 0u64;
        for n in 0..num_steps {
            let scans: Vec<MeasurementSet> =
                bundle.scans[n].iter().map(|s| s.strip_origins()).collect();
            let step_snapshots: Vec<GraphSnapshot> = match &resample_positions {
                Some(positions) => sim::resample_snapshots(
                    positions,
                    &scenario.network_policy(),
                    n,
                    iterations.max(1),
                    rng::derive_seed(seed, &[tags::NETWORK, 1]),
                )?,
                None => vec![bundle.snapshots[n].clone()],
            };
            let record = record_convergence && n == scenario.convergence_step;
            let input = StepInput {
                dynamics: &dynamics,
                sensors: &sensors,
                scans: &scans,
                snapshots: &step_snapshots,
                record_iterates: record,
            };
            let trace = match tracker.step(&input) {
                Ok(trace) => trace,
                Err(Error::TrackerDiverged { .. }) => {
                    diverged = true;
                    break;
                }
                Err(other) => return Err(other),
            };
            max_gap = max_gap.max(trace.conservation_gap);

            let truth_positions = bundle.truth.positions(n);
            let step_scores = tracker
                .sensor_beliefs()
                .iter()
                .map(|belief| gospa(&belief.positions(), &truth_positions, &scenario.gospa))
                .collect::<Result<Vec<_>>>()?;
            scores.gospa.push(step_scores);
            let ci = tracker.comm_iterations();
            scores.comm_iterations.push(ci - previous_ci);
            previous_ci = ci;

            for record in &trace.iterates {
                for (sensor, positions) in record.positions.iter().enumerate() {
                    let value = gospa(positions, &truth_positions, &scenario.gospa)?;
                    convergence.push(ConvergencePoint {
                        iteration: record.iteration,
                        sensor,
                        gospa: value.total,
                    });
                }
            }
        }

        outcome.methods.insert(
            method.clone(),
            MethodRunOutcome {
                scores: (!diverged).then_some(scores),
                convergence,
                max_conservation_gap: max_gap,
            },
        );
    }
    Ok(outcome)
}

fn assemble(
    scenario: &Scenario,
    methods: &[String],
    outcomes: Vec<RunOutcome>,
) -> Result<RunReport> {
    let mut report_methods = BTreeMap::new();
    for method in methods {
        let per_run: Vec<&MethodRunOutcome> = outcomes
            .iter()
            .map(|o| {
                o.methods
                    .get(method)
                    .ok_or_else(|| Error::Simulation(format!("missing outcome for {method}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let run_scores: Vec<RunScores> = per_run
            .iter()
            .filter_map(|o| o.scores.clone())
            .collect();
        let diverged_runs = per_run.len() - run_scores.len();
        if run_scores.is_empty() {
            return Err(Error::Simulation(format!(
                "tracker '{method}' diverged in every run"
            )));
        }
        let summary = aggregate(&run_scores)?;

        let num_steps = run_scores[0].gospa.len();
        let mut curve = Vec::with_capacity(num_steps);
        for step in 0..num_steps {
            let mut total = 0.0;
            let mut count = 0usize;
            let mut spread = 0.0;
            for run in &run_scores {
                let sensors = &run.gospa[step];
                let mean: f64 =
                    sensors.iter().map(|b| b.total).sum::<f64>() / sensors.len() as f64;
                let var: f64 = sensors
                    .iter()
                    .map(|b| (b.total - mean) * (b.total - mean))
                    .sum::<f64>()
                    / sensors.len() as f64;
                spread += var.sqrt();
                total += mean;
                count += 1;
            }
            curve.push(CurvePoint {
                step,
                mean: total / count as f64,
                std: spread / count as f64,
            });
        }

        let convergence = per_run
            .iter()
            .flat_map(|o| o.convergence.iter().copied())
            .collect();
        let max_conservation_gap = per_run
            .iter()
            .map(|o| o.max_conservation_gap)
            .fold(0.0, f64::max);
        report_methods.insert(
            method.clone(),
            MethodReport {
                summary,
                curve,
                convergence,
                diverged_runs,
                max_conservation_gap,
                raw_runs: run_scores,
            },
        );
    }
    Ok(RunReport {
        methods: report_methods,
        provenance: Provenance {
            seed: scenario.seed,
            config_hash: scenario.config_hash(),
            sim_fingerprint: scenario.sim_fingerprint(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            scenario: scenario.name.clone(),
        },
        num_steps: scenario.num_steps,
    })
}

/// Run the selected methods over one recorded bundle and assemble a
/// single-run report. `run_index` selects the per-run random streams
/// (tracker prior perturbations) and should match the bundle's run.
pub fn run_on_bundle(
    scenario: &Scenario,
    bundle: &Bundle,
    methods: &[String],
    run_index: usize,
) -> Result<RunReport> {
    scenario.validate()?;
    let outcome = track_bundle(scenario, bundle, methods, run_index, true)?;
    assemble(scenario, methods, vec![outcome])
}

/// Full Monte Carlo experiment: simulate each run, run every selected
/// tracker on identical data, score, and aggregate. Deterministic in the
/// scenario seed; runs execute in a worker pool.
pub fn run_experiment(scenario: &Scenario, methods: &[String]) -> Result<RunReport> {
    scenario.validate()?;
    let registry = TrackerRegistry::standard();
    for method in methods {
        if !registry.contains(method) {
            return Err(Error::UnknownTracker {
                name: method.clone(),
                available: registry.names().join(", "),
            });
        }
    }
    let outcomes: Vec<RunOutcome> = (0..scenario.monte_carlo_runs)
        .into_par_iter()
        .map(|run| {
            let bundle = simulate_run_bundle(scenario, run)?;
            track_bundle(scenario, &bundle, methods, run, run == 0)
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(scenario, methods, outcomes)
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MethodSummaryView {
    #[serde(flatten)]
    summary: MethodSummary,
    diverged_runs: usize,
}

#[derive(Serialize, Deserialize)]
struct SummaryFile {
    schema_version: u32,
    #[serde(flatten)]
    provenance: Provenance,
    methods: BTreeMap<String, MethodSummaryView>,
}

/// Bundle/report lock: the resolved scenario plus hashes, for byte-exact
/// replay checks.
#[derive(Serialize, Deserialize)]
pub struct LockFileContents {
    pub schema_version: u32,
    pub config_hash: String,
    pub sim_fingerprint: String,
    pub version: String,
    pub scenario: Scenario,
}

pub fn write_scenario_lock(scenario: &Scenario, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(LOCK_FILE);
    let contents = LockFileContents {
        schema_version: crate::scenario::SCHEMA_VERSION,
        config_hash: scenario.config_hash(),
        sim_fingerprint: scenario.sim_fingerprint(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: scenario.clone(),
    };
    let mut text = serde_json::to_string_pretty(&contents)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Verify that a bundle directory was produced by a scenario with the same
/// simulation-relevant fields. Bundles without a lock pass unchecked.
pub fn check_bundle_lock(scenario: &Scenario, dir: &Path) -> Result<()> {
    let path = dir.join(LOCK_FILE);
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let lock: LockFileContents = serde_json::from_str(&text)?;
    if lock.sim_fingerprint != scenario.sim_fingerprint() {
        return Err(Error::Scenario(format!(
            "bundle at {} was simulated from a different scenario (fingerprint {} vs {})",
            dir.display(),
            lock.sim_fingerprint,
            scenario.sim_fingerprint()
        )));
    }
    Ok(())
}

/// Write `summary.json`, `gospa_curves.csv`, `convergence.csv`, and
/// `scenario.lock.json` into `dir`. Emission is deterministic: identical
/// reports produce identical bytes.
pub fn emit_reports(report: &RunReport, scenario: &Scenario, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let summary_path = dir.join(SUMMARY_FILE);
    let summary = SummaryFile {
        schema_version: crate::scenario::SCHEMA_VERSION,
        provenance: report.provenance.clone(),
        methods: report
            .methods
            .iter()
            .map(|(name, m)| {
                (
                    name.clone(),
                    MethodSummaryView {
                        summary: m.summary.clone(),
                        diverged_runs: m.diverged_runs,
                    },
                )
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;
    written.push(summary_path);

    let curves_path = dir.join(CURVES_FILE);
    {
        let file = File::create(&curves_path).map_err(|e| Error::io(&curves_path, e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "step,method,mean,std").map_err(|e| Error::io(&curves_path, e))?;
        for (name, method) in &report.methods {
            for point in &method.curve {
                writeln!(w, "{},{},{},{}", point.step, name, point.mean, point.std)
                    .map_err(|e| Error::io(&curves_path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&curves_path, e))?;
    }
    written.push(curves_path);

    let convergence_path = dir.join(CONVERGENCE_FILE);
    {
        let file = File::create(&convergence_path).map_err(|e| Error::io(&convergence_path, e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "method,iteration,sensor,gospa").map_err(|e| Error::io(&convergence_path, e))?;
        for (name, method) in &report.methods {
            for point in &method.convergence {
                writeln!(
                    w,
                    "{},{},{},{}",
                    name, point.iteration, point.sensor, point.gospa
                )
                .map_err(|e| Error::io(&convergence_path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&convergence_path, e))?;
    }
    written.push(convergence_path);

    written.push(write_scenario_lock(scenario, dir)?);
    Ok(written)
}

// ---------------------------------------------------------------------------
// External estimate scoring
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(untagged)]
enum PointsRecord {
    States {
        time_step: usize,
        states: Vec<[f64; 4]>,
    },
    Positions {
        time_step: usize,
        positions: Vec<[f64; 2]>,
    },
}

impl PointsRecord {
    fn time_step(&self) -> usize {
        match self {
            PointsRecord::States { time_step, .. } => *time_step,
            PointsRecord::Positions { time_step, .. } => *time_step,
        }
    }

    fn points(&self) -> Vec<Vector2<f64>> {
        match self {
            PointsRecord::States { states, .. } => states
                .iter()
                .map(|s| Vector2::new(s[0], s[2]))
                .collect(),
            PointsRecord::Positions { positions, .. } => {
                positions.iter().map(|p| Vector2::new(p[0], p[1])).collect()
            }
        }
    }
}

fn read_points_file(path: &Path) -> Result<BTreeMap<usize, Vec<Vector2<f64>>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PointsRecord = serde_json::from_str(&line)?;
        out.insert(record.time_step(), record.points());
    }
    Ok(out)
}

/// Score externally produced estimates against a truth file. Both files are
/// JSON lines keyed by `time_step`; positions may be given directly or as
/// 4-state records (positions are extracted). Steps present in the
/// estimates but absent from the truth are an error.
pub fn score_estimate_files(
    estimates: &Path,
    truth: &Path,
    params: &GospaParams,
) -> Result<Vec<(usize, GospaBreakdown)>> {
    let estimates = read_points_file(estimates)?;
    let truth = read_points_file(truth)?;
    estimates
        .into_iter()
        .map(|(step, points)| {
            let truth_points = truth.get(&step).ok_or_else(|| {
                Error::InvalidInput(format!("no truth record for time step {step}"))
            })?;
            Ok((step, gospa(&points, truth_points, params)?))
        })
        .collect()
}
