//! Scenario simulation: ground-truth trajectories, per-sensor measurement
//! scans, and the time-varying sensor network, all seed-driven and
//! replayable byte-for-byte through a JSON-lines bundle.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, Matrix2, Matrix4, Vector2, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DynamicsModel, MeasurementSet, Region, SensorModel};
use crate::rng;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Ground-truth object states for every time step.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// `states[n][k]` is object k at time step n.
    pub states: Vec<Vec<Vector4<f64>>>,
}

impl GroundTruth {
    pub fn num_steps(&self) -> usize {
        self.states.len()
    }

    pub fn num_objects(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Position components at one step, for metric evaluation.
    pub fn positions(&self, step: usize) -> Vec<Vector2<f64>> {
        self.states[step]
            .iter()
            .map(|s| Vector2::new(s[0], s[2]))
            .collect()
    }
}

/// One sensor's measurement batch at one time step. `truth_origins` records
/// which object (or clutter, 0) generated each measurement; it exists for
/// diagnostics only and is stripped before anything reaches a tracker.
#[derive(Debug, Clone)]
pub struct Scan {
    pub sensor_id: usize,
    pub time_step: usize,
    pub measurements: Vec<Vector2<f64>>,
    pub truth_origins: Vec<usize>,
}

impl Scan {
    /// Project to the tracker-facing view, dropping the latent origins.
    pub fn strip_origins(&self) -> MeasurementSet {
        MeasurementSet {
            sensor_id: self.sensor_id,
            time_step: self.time_step,
            points: self.measurements.clone(),
        }
    }
}

/// Sensor adjacency at one time step.
#[derive(Debug, Clone)]
pub struct GraphSnapshot {
    pub time_step: usize,
    pub adjacency: Vec<Vec<bool>>,
    pub degrees: Vec<usize>,
}

impl GraphSnapshot {
    pub fn new(time_step: usize, adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let n = adjacency.len();
        for (i, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidInput("adjacency must be square".into()));
            }
            if row[i] {
                return Err(Error::InvalidInput("adjacency diagonal must be false".into()));
            }
            for j in 0..n {
                if adjacency[i][j] != adjacency[j][i] {
                    return Err(Error::InvalidInput("adjacency must be symmetric".into()));
                }
            }
        }
        let degrees = adjacency
            .iter()
            .map(|row| row.iter().filter(|&&e| e).count())
            .collect();
        Ok(GraphSnapshot {
            time_step,
            adjacency,
            degrees,
        })
    }

    pub fn num_sensors(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbours(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[s]
            .iter()
            .enumerate()
            .filter_map(|(j, &e)| e.then_some(j))
    }

    /// Breadth-first reachability from sensor 0.
    pub fn is_connected(&self) -> bool {
        let n = self.num_sensors();
        if n <= 1 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = vec![0usize];
        seen[0] = true;
        while let Some(s) = queue.pop() {
            for j in self.neighbours(s) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push(j);
                }
            }
        }
        seen.into_iter().all(|v| v)
    }
}

/// Random-geometric network policy: edges connect sensors within
/// `radius` of each other, then each edge is independently dropped with
/// probability `dropout`, resampling until the graph is connected.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkPolicy {
    pub radius: f64,
    pub dropout: f64,
    pub max_retries: usize,
}

impl Default for NetworkPolicy {
    fn default() -> Self {
        NetworkPolicy {
            radius: 300.0,
            dropout: 0.2,
            max_retries: 100,
        }
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

fn sample_standard_normal4(rng: &mut ChaCha8Rng) -> Vector4<f64> {
    Vector4::from_fn(|_, _| StandardNormal.sample(rng))
}

/// Matrix square root used for noise sampling: Cholesky when the covariance
/// is PD, spectral square root with clamped eigenvalues for semidefinite
/// blocks (e.g. the zero matrix).
fn noise_transform(cov: &Matrix4<f64>) -> Matrix4<f64> {
    if cov.amax() == 0.0 {
        return Matrix4::zeros();
    }
    if let Some(chol) = Cholesky::new(*cov) {
        return chol.l();
    }
    let eig = cov.symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * Matrix4::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// Sample ground-truth trajectories: `X_n = F X_{n-1} + w`, `w ~ N(0, Q)`,
/// independently per object. The first step equals the initial states.
pub fn simulate_truth(
    init_states: &[Vector4<f64>],
    dynamics: &DynamicsModel,
    num_steps: usize,
    seed: u64,
) -> GroundTruth {
    let transform = noise_transform(&dynamics.process_noise);
    let mut states = Vec::with_capacity(num_steps);
    states.push(init_states.to_vec());
    for n in 1..num_steps {
        let prev = &states[n - 1];
        let mut step = Vec::with_capacity(prev.len());
        for (k, x) in prev.iter().enumerate() {
            let mut object_rng = rng::stream(seed, &[n as u64, k as u64]);
            let noise = transform * sample_standard_normal4(&mut object_rng);
            step.push(dynamics.transition * x + noise);
        }
        states.push(step);
    }
    GroundTruth { states }
}

/// Sample one time step of measurements for every sensor under the Poisson
/// measurement model: the count is Poisson with the summed rate, each
/// measurement's origin follows the association prior, object-origin
/// measurements are Gaussian about the observed state, and clutter is
/// uniform over the region.
pub fn simulate_scan(
    truth_states: &[Vector4<f64>],
    sensors: &[SensorModel],
    region: &Region,
    time_step: usize,
    seed: u64,
) -> Vec<Scan> {
    sensors
        .iter()
        .enumerate()
        .map(|(sensor_id, sensor)| {
            let mut rng = rng::stream(seed, &[sensor_id as u64]);
            let total_rate: f64 = sensor.rates.iter().sum();
            let count = if total_rate > 0.0 {
                Poisson::new(total_rate).expect("positive rate").sample(&mut rng) as usize
            } else {
                0
            };
            let cumulative: Vec<f64> = sensor
                .rates
                .iter()
                .scan(0.0, |acc, r| {
                    *acc += r / total_rate.max(f64::MIN_POSITIVE);
                    Some(*acc)
                })
                .collect();
            let noise_l: Vec<Matrix2<f64>> = sensor
                .noise
                .iter()
                .map(|r| Cholesky::new(*r).expect("validated noise").l())
                .collect();
            let mut measurements = Vec::with_capacity(count);
            let mut truth_origins = Vec::with_capacity(count);
            for _ in 0..count {
                let u: f64 = rng.random();
                let origin = cumulative.iter().position(|c| u <= *c).unwrap_or(0);
                let point = if origin == 0 {
                    Vector2::new(
                        rng.random_range(region.x_min..region.x_max),
                        rng.random_range(region.y_min..region.y_max),
                    )
                } else {
                    let k = origin - 1;
                    let mean = sensor.observation * truth_states[k];
                    let z = Vector2::from_fn(|_, _| StandardNormal.sample(&mut rng));
                    mean + noise_l[k] * z
                };
                measurements.push(point);
                truth_origins.push(origin);
            }
            Scan {
                sensor_id,
                time_step,
                measurements,
                truth_origins,
            }
        })
        .collect()
}

/// Place `n` sensor positions uniformly in the region.
pub fn random_positions(region: &Region, n: usize, seed: u64) -> Vec<Vector2<f64>> {
    let mut rng = rng::stream(seed, &[]);
    (0..n)
        .map(|_| {
            Vector2::new(
                rng.random_range(region.x_min..region.x_max),
                rng.random_range(region.y_min..region.y_max),
            )
        })
        .collect()
}

/// Uniform sensor positions whose radius graph (before dropout) is
/// connected, by rejection sampling. Per-step dropout rejection alone
/// cannot repair a disconnected base graph, so positions are drawn until
/// the base graph connects.
pub fn connected_positions(
    region: &Region,
    n: usize,
    policy: &NetworkPolicy,
    seed: u64,
) -> Result<Vec<Vector2<f64>>> {
    for attempt in 0..=policy.max_retries {
        let positions = random_positions(region, n, rng::derive_seed(seed, &[attempt as u64]));
        let adjacency: Vec<Vec<bool>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| i != j && (positions[i] - positions[j]).norm() <= policy.radius)
                    .collect()
            })
            .collect();
        if GraphSnapshot::new(0, adjacency)?.is_connected() {
            return Ok(positions);
        }
    }
    Err(Error::Simulation(format!(
        "no connected sensor placement within {} attempts (radius {})",
        policy.max_retries, policy.radius
    )))
}

fn sample_snapshot(
    positions: &[Vector2<f64>],
    policy: &NetworkPolicy,
    time_step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GraphSnapshot> {
    let n = positions.len();
    for _ in 0..=policy.max_retries {
        let mut adjacency = vec![vec![false; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let within = (positions[i] - positions[j]).norm() <= policy.radius;
                let kept = within && rng.random::<f64>() >= policy.dropout;
                adjacency[i][j] = kept;
                adjacency[j][i] = kept;
            }
        }
        let snapshot = GraphSnapshot::new(time_step, adjacency)?;
        if snapshot.is_connected() {
            return Ok(snapshot);
        }
    }
    Err(Error::Simulation(format!(
        "no connected network within {} retries at step {} (radius {})",
        policy.max_retries, time_step, policy.radius
    )))
}

/// Generate one connected snapshot per time step over fixed sensor positions.
pub fn generate_network(
    positions: &[Vector2<f64>],
    policy: &NetworkPolicy,
    num_steps: usize,
    seed: u64,
) -> Result<Vec<GraphSnapshot>> {
    (0..num_steps)
        .map(|step| {
            let mut rng = rng::stream(seed, &[step as u64]);
            sample_snapshot(positions, policy, step, &mut rng)
        })
        .collect()
}

/// Extra per-iteration snapshots for one time step, for experiments where
/// connectivity changes between optimisation iterations.
pub fn resample_snapshots(
    positions: &[Vector2<f64>],
    policy: &NetworkPolicy,
    time_step: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<GraphSnapshot>> {
    (0..count)
        .map(|iter| {
            let mut rng = rng::stream(seed, &[time_step as u64, iter as u64]);
            sample_snapshot(positions, policy, time_step, &mut rng)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Scenario bundle (JSON-lines replay files)
// ---------------------------------------------------------------------------

/// Everything one Monte Carlo run consumes: truth, scans, and snapshots.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub truth: GroundTruth,
    /// `scans[n][s]` is sensor s's scan at step n.
    pub scans: Vec<Vec<Scan>>,
    pub snapshots: Vec<GraphSnapshot>,
}

#[derive(Serialize, Deserialize)]
struct TruthRecord {
    time_step: usize,
    states: Vec<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
struct ScanEntry {
    sensor_id: usize,
    measurements: Vec<[f64; 2]>,
    truth_origins: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ScanRecord {
    time_step: usize,
    scans: Vec<ScanEntry>,
}

#[derive(Serialize, Deserialize)]
struct NetworkRecord {
    time_step: usize,
    adjacency: Vec<Vec<bool>>,
}

pub const TRUTH_FILE: &str = "truth.jsonl";
pub const SCANS_FILE: &str = "scans.jsonl";
pub const NETWORK_FILE: &str = "network.jsonl";

fn write_jsonl<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .filter(|line| line.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|line| {
            let line = line.map_err(|e| Error::io(path, e))?;
            Ok(serde_json::from_str(&line)?)
        })
        .collect()
}

impl Bundle {
    pub fn num_steps(&self) -> usize {
        self.truth.num_steps()
    }

    pub fn num_sensors(&self) -> usize {
        self.scans.first().map_or(0, Vec::len)
    }

    /// Write `truth.jsonl`, `scans.jsonl`, and `network.jsonl` (one record
    /// per time step each) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let truth_path = dir.join(TRUTH_FILE);
        write_jsonl(
            &truth_path,
            self.truth.states.iter().enumerate().map(|(n, states)| TruthRecord {
                time_step: n,
                states: states.iter().map(|s| [s[0], s[1], s[2], s[3]]).collect(),
            }),
        )?;
        let scans_path = dir.join(SCANS_FILE);
        write_jsonl(
            &scans_path,
            self.scans.iter().enumerate().map(|(n, scans)| ScanRecord {
                time_step: n,
                scans: scans
                    .iter()
                    .map(|scan| ScanEntry {
                        sensor_id: scan.sensor_id,
                        measurements: scan.measurements.iter().map(|m| [m.x, m.y]).collect(),
                        truth_origins: scan.truth_origins.clone(),
                    })
                    .collect(),
            }),
        )?;
        let network_path = dir.join(NETWORK_FILE);
        write_jsonl(
            &network_path,
            self.snapshots.iter().map(|s| NetworkRecord {
                time_step: s.time_step,
                adjacency: s.adjacency.clone(),
            }),
        )?;
        Ok(vec![truth_path, scans_path, network_path])
    }

    pub fn read(dir: &Path) -> Result<Bundle> {
        let truth_records: Vec<TruthRecord> = read_jsonl(&dir.join(TRUTH_FILE))?;
        let scan_records: Vec<ScanRecord> = read_jsonl(&dir.join(SCANS_FILE))?;
        let network_records: Vec<NetworkRecord> = read_jsonl(&dir.join(NETWORK_FILE))?;
        let truth = GroundTruth {
            states: truth_records
                .into_iter()
                .map(|r| r.states.into_iter().map(Vector4::from).collect())
                .collect(),
        };
        let scans = scan_records
            .into_iter()
            .map(|r| {
                r.scans
                    .into_iter()
                    .map(|e| Scan {
                        sensor_id: e.sensor_id,
                        time_step: r.time_step,
                        measurements: e.measurements.into_iter().map(Vector2::from).collect(),
                        truth_origins: e.truth_origins,
                    })
                    .collect()
            })
            .collect();
        let snapshots = network_records
            .into_iter()
            .map(|r| GraphSnapshot::new(r.time_step, r.adjacency))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bundle {
            truth,
            scans,
            snapshots,
        })
    }
}
