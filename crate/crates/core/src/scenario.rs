//! Scenario configuration: every experimental constant in one validated,
//! versioned JSON document. Two built-in scenarios ship with the crate: the
//! full-scale benchmark (20 sensors, 50 objects, 50 steps) and a `desk`
//! scenario sized to finish in minutes.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::GospaParams;
use crate::model::{DynamicsModel, GaussianBelief, Region, SensorModel};
use crate::rng::{self, tags};
use crate::sim::NetworkPolicy;
use crate::trackers::TrackerConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSettings {
    /// Scale of the constant-velocity process-noise blocks.
    pub process_noise_intensity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSettings {
    /// Isotropic measurement-noise variance (the R = var * I blocks).
    pub measurement_noise_variance: f64,
    /// Poisson rate of each object.
    pub object_rate: f64,
    /// Poisson rate of clutter.
    pub clutter_rate: f64,
    /// Clutter volume V; defaults to the region area when absent.
    #[serde(default)]
    pub clutter_volume: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSettings {
    /// Explicit initial object states; generated inside `spawn` when absent.
    #[serde(default)]
    pub initial_states: Option<Vec<[f64; 4]>>,
    /// Sub-rectangle in which generated objects start.
    pub spawn: Region,
    /// Generated initial speeds are uniform in [-max_speed, max_speed] per axis.
    pub max_speed: f64,
    /// Std of the Gaussian perturbation applied to true initial positions
    /// when centring the tracker priors.
    pub prior_position_noise_std: f64,
    /// Diagonal prior variance on positions.
    pub prior_position_variance: f64,
    /// Diagonal prior variance on velocities.
    pub prior_velocity_variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSettings {
    /// Connection radius of the geometric graph.
    pub radius: f64,
    /// Per-step independent edge dropout probability.
    pub dropout: f64,
    /// Rejection-resampling budget for connectivity.
    pub max_retries: usize,
    /// Resample connectivity every optimisation iteration instead of once
    /// per time step.
    #[serde(default)]
    pub resample_per_iteration: bool,
}

/// A complete experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub num_objects: usize,
    pub num_sensors: usize,
    pub num_steps: usize,
    pub tau: f64,
    pub dynamics: DynamicsSettings,
    pub sensor: SensorSettings,
    pub region: Region,
    pub initialisation: InitSettings,
    pub network: NetworkSettings,
    /// Per-method configuration overrides, keyed by registry name.
    #[serde(default)]
    pub trackers: BTreeMap<String, TrackerConfig>,
    pub monte_carlo_runs: usize,
    pub seed: u64,
    /// Time step at which per-iteration convergence curves are recorded.
    pub convergence_step: usize,
    #[serde(default)]
    pub gospa: GospaParams,
}

impl Scenario {
    /// Desk-scale scenario: finishes in minutes, keeps the full method
    /// ordering visible (individual tracking degrades, fusion recovers).
    pub fn desk() -> Self {
        let mut trackers = BTreeMap::new();
        trackers.insert(
            "deng-vt".to_string(),
            TrackerConfig {
                alpha: 1.0,
                max_iterations: 100,
                conservation_audit: true,
                ..TrackerConfig::default()
            },
        );
        trackers.insert(
            "dec-vt".to_string(),
            TrackerConfig {
                consensus_rounds: 10,
                vi_iterations: 20,
                ..TrackerConfig::default()
            },
        );
        trackers.insert(
            "deaa-vt".to_string(),
            TrackerConfig {
                consensus_rounds: 20,
                vi_iterations: 20,
                ..TrackerConfig::default()
            },
        );
        Scenario {
            schema_version: SCHEMA_VERSION,
            name: "desk".to_string(),
            num_objects: 10,
            num_sensors: 5,
            num_steps: 20,
            tau: 1.0,
            dynamics: DynamicsSettings {
                process_noise_intensity: 25.0,
            },
            sensor: SensorSettings {
                measurement_noise_variance: 100.0,
                object_rate: 2.0,
                clutter_rate: 100.0,
                clutter_volume: None,
            },
            region: Region {
                x_min: 0.0,
                x_max: 1500.0,
                y_min: 0.0,
                y_max: 1500.0,
            },
            initialisation: InitSettings {
                initial_states: None,
                spawn: Region {
                    x_min: 350.0,
                    x_max: 1150.0,
                    y_min: 350.0,
                    y_max: 1150.0,
                },
                max_speed: 5.0,
                prior_position_noise_std: 5.0,
                prior_position_variance: 100.0,
                prior_velocity_variance: 25.0,
            },
            network: NetworkSettings {
                radius: 1100.0,
                dropout: 0.2,
                max_retries: 100,
                resample_per_iteration: false,
            },
            trackers,
            monte_carlo_runs: 10,
            seed: 7,
            convergence_step: 10,
            gospa: GospaParams::default(),
        }
    }

    /// Full-scale benchmark scenario: 20 sensors, 50 objects, clutter rate
    /// 500, 50 steps.
    pub fn full_scale() -> Self {
        let mut scenario = Scenario::desk();
        scenario.name = "full".to_string();
        scenario.num_objects = 50;
        scenario.num_sensors = 20;
        scenario.num_steps = 50;
        scenario.sensor.object_rate = 1.0;
        scenario.sensor.clutter_rate = 500.0;
        scenario.region = Region {
            x_min: 0.0,
            x_max: 2000.0,
            y_min: 0.0,
            y_max: 2000.0,
        };
        scenario.initialisation.spawn = Region {
            x_min: 400.0,
            x_max: 1600.0,
            y_min: 400.0,
            y_max: 1600.0,
        };
        scenario.network.radius = 800.0;
        scenario.monte_carlo_runs = 50;
        if let Some(cfg) = scenario.trackers.get_mut("deng-vt") {
            cfg.max_iterations = 100;
        }
        if let Some(cfg) = scenario.trackers.get_mut("dec-vt") {
            cfg.consensus_rounds = 50;
        }
        if let Some(cfg) = scenario.trackers.get_mut("deaa-vt") {
            cfg.consensus_rounds = 100;
        }
        scenario
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scenario: Scenario = serde_json::from_str(&text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Scenario(format!(
                "schema version {} not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.num_objects == 0 || self.num_sensors == 0 || self.num_steps == 0 {
            return Err(Error::Scenario(
                "object, sensor, and step counts must be positive".into(),
            ));
        }
        if self.monte_carlo_runs == 0 {
            return Err(Error::Scenario("at least one Monte Carlo run".into()));
        }
        if self.convergence_step >= self.num_steps {
            return Err(Error::Scenario(format!(
                "convergence step {} outside 0..{}",
                self.convergence_step, self.num_steps
            )));
        }
        self.region.validate()?;
        self.initialisation.spawn.validate()?;
        if let Some(states) = &self.initialisation.initial_states {
            if states.len() != self.num_objects {
                return Err(Error::Scenario(format!(
                    "{} explicit initial states for {} objects",
                    states.len(),
                    self.num_objects
                )));
            }
        }
        self.dynamics_model().validate()?;
        self.sensor_model().validate()?;
        self.gospa.validate()?;
        for (name, config) in &self.trackers {
            if config.alpha <= 0.0 {
                return Err(Error::Scenario(format!(
                    "tracker '{name}' has non-positive step size {}",
                    config.alpha
                )));
            }
        }
        Ok(())
    }

    pub fn dynamics_model(&self) -> DynamicsModel {
        DynamicsModel::constant_velocity(self.tau, self.dynamics.process_noise_intensity)
    }

    /// The homogeneous per-sensor measurement model.
    pub fn sensor_model(&self) -> SensorModel {
        SensorModel::isotropic(
            self.num_objects,
            self.sensor.measurement_noise_variance,
            self.sensor.clutter_volume.unwrap_or_else(|| self.region.area()),
            self.sensor.clutter_rate,
            self.sensor.object_rate,
        )
    }

    pub fn network_policy(&self) -> NetworkPolicy {
        NetworkPolicy {
            radius: self.network.radius,
            dropout: self.network.dropout,
            max_retries: self.network.max_retries,
        }
    }

    /// Per-method configuration: the scenario override when present,
    /// defaults otherwise.
    pub fn tracker_config(&self, method: &str) -> TrackerConfig {
        self.trackers.get(method).cloned().unwrap_or_default()
    }

    /// Ground-truth initial states: explicit from the file, or generated
    /// uniformly in the spawn rectangle with uniform velocities. Generation
    /// depends only on the master seed, so every run shares the starts.
    pub fn initial_states(&self) -> Vec<Vector4<f64>> {
        if let Some(states) = &self.initialisation.initial_states {
            return states.iter().map(|s| Vector4::from(*s)).collect();
        }
        let spawn = &self.initialisation.spawn;
        let speed = self.initialisation.max_speed;
        let mut stream = rng::stream(self.seed, &[tags::INIT_STATES]);
        (0..self.num_objects)
            .map(|_| {
                Vector4::new(
                    stream.random_range(spawn.x_min..spawn.x_max),
                    stream.random_range(-speed..speed),
                    stream.random_range(spawn.y_min..spawn.y_max),
                    stream.random_range(-speed..speed),
                )
            })
            .collect()
    }

    /// Tracker initialisation for one run: priors centred on the true
    /// initial states with perturbed positions and the configured broad
    /// diagonal covariance. Identical across sensors; the perturbation is
    /// drawn once per run.
    pub fn initial_beliefs(
        &self,
        init_states: &[Vector4<f64>],
        run_seed: u64,
    ) -> Vec<GaussianBelief> {
        let mut stream = rng::stream(run_seed, &[tags::PRIOR_INIT]);
        let noise = self.initialisation.prior_position_noise_std;
        let cov = Matrix4::from_diagonal(&Vector4::new(
            self.initialisation.prior_position_variance,
            self.initialisation.prior_velocity_variance,
            self.initialisation.prior_position_variance,
            self.initialisation.prior_velocity_variance,
        ));
        let means: Vec<Vector4<f64>> = init_states
            .iter()
            .map(|state| {
                let dx: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut stream);
                let dy: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut stream);
                state + Vector4::new(noise * dx, 0.0, noise * dy, 0.0)
            })
            .collect();
        let belief = GaussianBelief {
            means,
            covs: vec![cov; init_states.len()],
        };
        vec![belief; self.num_sensors]
    }

    /// Hash of the complete resolved configuration.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serialises");
        hex_digest(json.as_bytes())
    }

    /// Hash of the simulation-relevant fields only; tracker configuration
    /// changes do not invalidate a recorded bundle.
    pub fn sim_fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct SimFields<'a> {
            num_objects: usize,
            num_sensors: usize,
            num_steps: usize,
            tau: f64,
            dynamics: &'a DynamicsSettings,
            sensor: &'a SensorSettings,
            region: &'a Region,
            initialisation: &'a InitSettings,
            network: &'a NetworkSettings,
            seed: u64,
        }
        let fields = SimFields {
            num_objects: self.num_objects,
            num_sensors: self.num_sensors,
            num_steps: self.num_steps,
            tau: self.tau,
            dynamics: &self.dynamics,
            sensor: &self.sensor,
            region: &self.region,
            initialisation: &self.initialisation,
            network: &self.network,
            seed: self.seed,
        };
        let json = serde_json::to_string(&fields).expect("fields serialise");
        hex_digest(json.as_bytes())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
