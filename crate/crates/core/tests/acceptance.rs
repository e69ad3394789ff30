//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. The desk-scale experiment is run once and shared.
//!
//! Criterion 10 (full-scale benchmark band) is informational and marked
//! `#[ignore]`; run it explicitly with
//! `cargo test -p denfuse-core --test acceptance -- --ignored`.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Vector2, Vector4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use denfuse_core::harness::{run_experiment, simulate_run_bundle, RunReport};
use denfuse_core::metrics::{gospa, GospaParams};
use denfuse_core::model::{GaussianBelief, MeasurementSet, SensorModel};
use denfuse_core::scenario::Scenario;
use denfuse_core::sim::GraphSnapshot;
use denfuse_core::trackers::{
    effective_prior, StepInput, TrackerConfig, TrackerRegistry,
};
use denfuse_core::vi::{
    association_posterior, cavi_state_update, fixed_form_elbo, lm_elbo, lm_elbo_local,
    natural_gradient_local, AssociationPosterior, GradientVariant, NaturalParams,
};

fn check(criterion: &str, pass: bool, details: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {criterion}: {verdict} ({details})");
    assert!(pass, "{criterion}: {details}");
}

const ALL_METHODS: [&str; 5] = ["c-vt", "i-vt", "dec-vt", "deaa-vt", "deng-vt"];

fn desk() -> &'static (Scenario, RunReport, Duration) {
    static DESK: OnceLock<(Scenario, RunReport, Duration)> = OnceLock::new();
    DESK.get_or_init(|| {
        let scenario = Scenario::desk();
        let methods: Vec<String> = ALL_METHODS.iter().map(|s| s.to_string()).collect();
        let start = Instant::now();
        let report = run_experiment(&scenario, &methods).expect("desk experiment");
        (scenario, report, start.elapsed())
    })
}

// ---------------------------------------------------------------------------
// Shared random-instance machinery (test-side oracles)
// ---------------------------------------------------------------------------

fn random_belief(rng: &mut ChaCha8Rng, num_objects: usize) -> GaussianBelief {
    let mut means = Vec::new();
    let mut covs = Vec::new();
    for _ in 0..num_objects {
        means.push(Vector4::from_fn(|_, _| rng.random_range(-50.0..50.0)));
        let a = Matrix4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let sym = (a * a.transpose() + Matrix4::identity() * 5.0) * 0.5;
        covs.push(sym + sym.transpose());
    }
    GaussianBelief::new(means, covs).unwrap()
}

fn random_instance(
    rng: &mut ChaCha8Rng,
    num_objects: usize,
    num_points: usize,
) -> (NaturalParams, NaturalParams, MeasurementSet, SensorModel) {
    let eta = NaturalParams::from_belief(&random_belief(rng, num_objects)).unwrap();
    let belief = random_belief(rng, num_objects);
    let lambda = NaturalParams::from_belief(&belief).unwrap();
    let sensor = SensorModel::isotropic(num_objects, 100.0, 1e6, 10.0, 1.0);
    let points = (0..num_points)
        .map(|j| {
            let base = sensor.observation * belief.means[j % num_objects];
            base + Vector2::from_fn(|_, _| rng.random_range(-15.0..15.0))
        })
        .collect();
    let scan = MeasurementSet {
        sensor_id: 0,
        time_step: 0,
        points,
    };
    (lambda, eta, scan, sensor)
}

/// Mean parameters (mu, Sigma + mu mu^T) by direct matrix inversion,
/// independent of the conversion path under test.
fn mean_params(lambda: &NaturalParams, k: usize) -> (Vector4<f64>, Matrix4<f64>) {
    let precision = lambda.lambda2[k] * -2.0;
    let cov = precision.try_inverse().unwrap();
    let mu = cov * lambda.lambda1[k];
    (mu, cov + mu * mu.transpose())
}

type Direction = (Option<usize>, Option<(usize, usize)>);

fn symmetric_directions() -> Vec<Direction> {
    let mut dirs = Vec::new();
    for i in 0..4 {
        dirs.push((Some(i), None));
    }
    for i in 0..4 {
        for j in i..4 {
            dirs.push((None, Some((i, j))));
        }
    }
    dirs
}

fn perturbed(lambda: &NaturalParams, object: usize, dir: &Direction, eps: f64) -> NaturalParams {
    let mut out = lambda.clone();
    match dir {
        (Some(i), None) => out.lambda1[object][*i] += eps,
        (None, Some((i, j))) => {
            out.lambda2[object][(*i, *j)] += eps;
            if i != j {
                out.lambda2[object][(*j, *i)] += eps;
            }
        }
        _ => unreachable!(),
    }
    out
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

/// Criterion 1: with a single sensor and unit step the gradient tracker's
/// iterate sequence equals the centralised coordinate-ascent sequence.
#[test]
fn criterion_1_single_sensor_oracle_equivalence() {
    let start = Instant::now();
    let mut scenario = Scenario::desk();
    scenario.num_sensors = 1;
    let config = TrackerConfig {
        alpha: 1.0,
        max_iterations: 20,
        vi_iterations: 20,
        gradient_variant: GradientVariant::Canonical,
        ..TrackerConfig::default()
    };
    scenario.trackers.clear();
    scenario.trackers.insert("deng-vt".into(), config.clone());
    scenario.trackers.insert("c-vt".into(), config.clone());

    let bundle = simulate_run_bundle(&scenario, 0).unwrap();
    let dynamics = scenario.dynamics_model();
    let sensors = vec![scenario.sensor_model()];
    let init = scenario.initial_beliefs(&bundle.truth.states[0], 1);
    let registry = TrackerRegistry::standard();
    let mut gradient = registry.build("deng-vt", config.clone(), init.clone()).unwrap();
    let mut coordinate = registry.build("c-vt", config, init).unwrap();

    let mut worst: f64 = 0.0;
    for n in 0..bundle.num_steps() {
        let scans: Vec<MeasurementSet> =
            bundle.scans[n].iter().map(|s| s.strip_origins()).collect();
        let input = StepInput {
            dynamics: &dynamics,
            sensors: &sensors,
            scans: &scans,
            snapshots: std::slice::from_ref(&bundle.snapshots[n]),
            record_iterates: true,
        };
        let a = gradient.step(&input).unwrap();
        let b = coordinate.step(&input).unwrap();
        assert_eq!(a.iterates.len(), 21);
        assert_eq!(b.iterates.len(), 21);
        for (ra, rb) in a.iterates.iter().zip(&b.iterates) {
            for (x, y) in ra.params[0].iter().zip(&rb.params[0]) {
                worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(1.0));
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        "1 single-sensor oracle equivalence",
        worst <= 1e-10 && elapsed <= Duration::from_secs(10),
        &format!("max relative deviation {worst:.3e} over 20 steps x 21 iterates, {elapsed:.2?}"),
    );
}

/// Criterion 2: the converged gradient tracker matches the centralised
/// tracker on the desk scenario and the network agrees at every step.
#[test]
fn criterion_2_fixed_point_equivalence() {
    let (_, report, elapsed) = desk();
    let deng = &report.methods["deng-vt"];
    let cvt = &report.methods["c-vt"];
    let gap = (deng.summary.mgospa.mean - cvt.summary.mgospa.mean).abs() / cvt.summary.mgospa.mean;

    let mut worst_spread: f64 = 0.0;
    for run in &deng.raw_runs {
        for step in &run.gospa {
            let mean: f64 = step.iter().map(|b| b.total).sum::<f64>() / step.len() as f64;
            let var: f64 = step
                .iter()
                .map(|b| (b.total - mean) * (b.total - mean))
                .sum::<f64>()
                / step.len() as f64;
            worst_spread = worst_spread.max(var.sqrt() / mean);
        }
    }
    check(
        "2 fixed-point equivalence",
        gap <= 0.02 && worst_spread <= 0.01 && *elapsed <= Duration::from_secs(300),
        &format!(
            "mgospa deng {:.2} vs c {:.2} (gap {:.3}%), worst across-sensor std/mean {:.4}%, desk run {elapsed:.2?}",
            deng.summary.mgospa.mean,
            cvt.summary.mgospa.mean,
            gap * 100.0,
            worst_spread * 100.0
        ),
    );
}

/// Criterion 3: method ordering with at least a 20% gap between the optimal
/// group, average fusion, and individual tracking.
#[test]
fn criterion_3_method_ordering() {
    let (_, report, elapsed) = desk();
    let value = |m: &str| report.methods[m].summary.mgospa.mean;
    let group = [value("deng-vt"), value("dec-vt"), value("c-vt")];
    let group_max = group.iter().cloned().fold(0.0, f64::max);
    let group_min = group.iter().cloned().fold(f64::INFINITY, f64::min);
    let deaa = value("deaa-vt");
    let ivt = value("i-vt");
    let group_tight = group_max / group_min <= 1.05;
    let first_gap = deaa >= 1.2 * group_max;
    let second_gap = ivt >= 1.2 * deaa;
    check(
        "3 method ordering",
        group_tight && first_gap && second_gap && *elapsed <= Duration::from_secs(600),
        &format!(
            "group [{:.1}, {:.1}] < deaa {:.1} (x{:.2}) < i-vt {:.1} (x{:.2}), all baselines in {elapsed:.2?}",
            group_min,
            group_max,
            deaa,
            deaa / group_max,
            ivt,
            ivt / deaa
        ),
    );
}

/// Criterion 4: the preconditioned gradient matches central finite
/// differences of the reduced objective on 50 random instances.
#[test]
fn criterion_4_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let num_objects = rng.random_range(1..=3);
        let num_points = rng.random_range(0..=5);
        let (lambda, eta, scan, sensor) = random_instance(&mut rng, num_objects, num_points);
        let grad = natural_gradient_local(
            &lambda,
            &eta,
            &scan.points,
            &sensor,
            1,
            GradientVariant::Canonical,
        )
        .unwrap();
        let mut lhs = Vec::new();
        let mut rhs = Vec::new();
        for object in 0..num_objects {
            for dir in symmetric_directions() {
                let plus = perturbed(&lambda, object, &dir, eps);
                let minus = perturbed(&lambda, object, &dir, -eps);
                // G(lambda) g along this direction via the mean-parameter map
                let (mu_p, m2_p) = mean_params(&plus, object);
                let (mu_m, m2_m) = mean_params(&minus, object);
                let dmu = (mu_p - mu_m) / (2.0 * eps);
                let dm2 = (m2_p - m2_m) / (2.0 * eps);
                lhs.push(grad.g1[object].dot(&dmu) + (grad.g2[object].transpose() * dm2).trace());
                // finite differences of the objective, association recomputed
                let f_p = lm_elbo_local(&plus, &eta, &scan, &sensor, 1).unwrap().total;
                let f_m = lm_elbo_local(&minus, &eta, &scan, &sensor, 1).unwrap().total;
                rhs.push((f_p - f_m) / (2.0 * eps));
            }
        }
        let err: f64 = lhs
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = rhs.iter().map(|b| b * b).sum::<f64>().sqrt().max(1.0);
        worst = worst.max(err / scale);
    }
    let elapsed = start.elapsed();
    check(
        "4 gradient correctness",
        worst <= 1e-4 && elapsed <= Duration::from_secs(30),
        &format!("worst relative gradient error {worst:.3e} over 50 instances, {elapsed:.2?}"),
    );
}

/// Criterion 5: the fixed-form bound never exceeds the reduced objective
/// and attains it at the free-form association optimum.
#[test]
fn criterion_5_bound_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0B0);
    let mut worst_violation: f64 = f64::NEG_INFINITY;
    let mut worst_equality_gap: f64 = 0.0;
    for _ in 0..100 {
        let num_objects = rng.random_range(1..=3);
        let num_points = rng.random_range(1..=5);
        let (lambda, eta, scan, sensor) = random_instance(&mut rng, num_objects, num_points);
        let scans = vec![scan];
        let sensors = vec![sensor];
        let objective = lm_elbo(&lambda, &eta, &scans, &sensors).unwrap().total;

        let rows = (0..num_points)
            .map(|_| {
                let raw: Vec<f64> = (0..=num_objects)
                    .map(|_| rng.random_range(0.01..1.0f64))
                    .collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / sum).collect()
            })
            .collect();
        let rho = vec![AssociationPosterior { rows }];
        let fixed = fixed_form_elbo(&lambda, &rho, &eta, &scans, &sensors).unwrap();
        worst_violation = worst_violation.max(fixed - objective);

        let rho_star =
            vec![association_posterior(&lambda, &scans[0].points, &sensors[0]).unwrap()];
        let at_optimum = fixed_form_elbo(&lambda, &rho_star, &eta, &scans, &sensors).unwrap();
        worst_equality_gap = worst_equality_gap.max((at_optimum - objective).abs());
    }
    check(
        "5 bound properties",
        worst_violation <= 1e-9 && worst_equality_gap <= 1e-10,
        &format!(
            "max bound violation {worst_violation:.3e}, max equality gap {worst_equality_gap:.3e} over 100 draws"
        ),
    );
}

/// Criterion 6: gradient-tracking conservation holds at every iteration of
/// every desk run.
#[test]
fn criterion_6_gradient_tracking_conservation() {
    let (scenario, report, _) = desk();
    assert!(
        scenario.tracker_config("deng-vt").conservation_audit,
        "desk scenario must audit conservation"
    );
    let gap = report.methods["deng-vt"].max_conservation_gap;
    check(
        "6 gradient-tracking conservation",
        gap <= 1e-10,
        &format!("max relative conservation gap {gap:.3e} across all runs, steps, iterations"),
    );
}

/// Exhaustive-assignment GOSPA used as the criterion-7 oracle.
fn brute_force_gospa(
    estimates: &[Vector2<f64>],
    truth: &[Vector2<f64>],
    params: &GospaParams,
) -> (f64, f64, f64, f64) {
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        t: usize,
        truth: &[Vector2<f64>],
        estimates: &[Vector2<f64>],
        used: &mut Vec<bool>,
        params: &GospaParams,
        unassigned: f64,
        loc_cost: f64,
        missed: usize,
        best: &mut (f64, f64, f64, f64),
    ) {
        if t == truth.len() {
            let unused = used.iter().filter(|u| !**u).count();
            let missed_cost = missed as f64 * unassigned;
            let false_cost = unused as f64 * unassigned;
            let total = (loc_cost + missed_cost + false_cost).powf(1.0 / params.p);
            if total < best.0 {
                *best = (
                    total,
                    loc_cost.powf(1.0 / params.p),
                    missed_cost.powf(1.0 / params.p),
                    false_cost.powf(1.0 / params.p),
                );
            }
            return;
        }
        recurse(
            t + 1,
            truth,
            estimates,
            used,
            params,
            unassigned,
            loc_cost,
            missed + 1,
            best,
        );
        for e in 0..estimates.len() {
            if used[e] {
                continue;
            }
            let d = (truth[t] - estimates[e]).norm();
            if d < params.cutoff {
                used[e] = true;
                recurse(
                    t + 1,
                    truth,
                    estimates,
                    used,
                    params,
                    unassigned,
                    loc_cost + d.powf(params.p),
                    missed,
                    best,
                );
                used[e] = false;
            }
        }
    }
    let unassigned = params.cutoff.powf(params.p) / params.alpha;
    let mut used = vec![false; estimates.len()];
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    recurse(
        0,
        truth,
        estimates,
        &mut used,
        params,
        unassigned,
        0.0,
        0,
        &mut best,
    );
    best
}

/// Criterion 7: exact agreement with the exhaustive-assignment oracle, and
/// the pinned empty-estimate case.
#[test]
fn criterion_7_gospa_oracle() {
    let params = GospaParams::default();
    let single = gospa(&[], &[Vector2::new(3.0, 4.0)], &params).unwrap();
    let pinned_ok = (single.total - 25.0).abs() < 1e-12 && (single.missed - 25.0).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(0x905A);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let num_truth = rng.random_range(0..=6);
        let num_est = rng.random_range(0..=6);
        let truth: Vec<Vector2<f64>> = (0..num_truth)
            .map(|_| Vector2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)))
            .collect();
        let estimates: Vec<Vector2<f64>> = (0..num_est)
            .map(|_| Vector2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)))
            .collect();
        let fast = gospa(&estimates, &truth, &params).unwrap();
        let (total, loc, missed, false_objects) = brute_force_gospa(&estimates, &truth, &params);
        worst = worst
            .max((fast.total - total).abs())
            .max((fast.localisation - loc).abs())
            .max((fast.missed - missed).abs())
            .max((fast.false_objects - false_objects).abs());
    }
    check(
        "7 GOSPA oracle",
        pinned_ok && worst <= 1e-12,
        &format!("empty-vs-one-truth total {:.1}, max |fast - brute| {worst:.3e} over 200 instances", single.total),
    );
}

/// Criterion 8: with heterogeneous priors on a static connected graph, the
/// converged gradient tracker matches centralised coordinate ascent under
/// the geometric-average prior.
#[test]
fn criterion_8_effective_prior_property() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xEFF);
    let num_sensors = 3;
    let num_objects = 2;

    // Heterogeneous per-sensor priors around common object locations.
    let base = random_belief(&mut rng, num_objects);
    let mut priors = Vec::new();
    for _ in 0..num_sensors {
        let mut belief = base.clone();
        for k in 0..num_objects {
            belief.means[k] += Vector4::from_fn(|_, _| rng.random_range(-4.0..4.0));
            let a = Matrix4::from_fn(|_, _| rng.random_range(-0.5..0.5));
            belief.covs[k] += a * a.transpose();
        }
        priors.push(belief);
    }
    let etas: Vec<NaturalParams> = priors
        .iter()
        .map(|b| NaturalParams::from_belief(b).unwrap())
        .collect();

    let sensor = SensorModel::isotropic(num_objects, 100.0, 1e6, 10.0, 1.0);
    let sensors = vec![sensor; num_sensors];
    let scans: Vec<MeasurementSet> = (0..num_sensors)
        .map(|s| {
            let points = (0..4)
                .map(|j| {
                    let base_pos = sensors[s].observation * base.means[j % num_objects];
                    base_pos + Vector2::from_fn(|_, _| rng.random_range(-12.0..12.0))
                })
                .collect();
            MeasurementSet {
                sensor_id: s,
                time_step: 0,
                points,
            }
        })
        .collect();

    // Static connected ring.
    let mut adjacency = vec![vec![false; num_sensors]; num_sensors];
    for s in 0..num_sensors {
        let next = (s + 1) % num_sensors;
        adjacency[s][next] = true;
        adjacency[next][s] = true;
    }
    let snapshot = GraphSnapshot::new(0, adjacency).unwrap();

    let dynamics = denfuse_core::model::DynamicsModel::constant_velocity(1.0, 25.0);
    let config = TrackerConfig {
        alpha: 1.0,
        max_iterations: 800,
        ..TrackerConfig::default()
    };
    let registry = TrackerRegistry::standard();
    let mut tracker = registry.build("deng-vt", config, priors.clone()).unwrap();
    let input = StepInput {
        dynamics: &dynamics,
        sensors: &sensors,
        scans: &scans,
        snapshots: std::slice::from_ref(&snapshot),
        record_iterates: false,
    };
    tracker.step(&input).unwrap();
    let converged = tracker.sensor_beliefs();

    // Oracle: centralised coordinate ascent under the fused prior.
    let fused_prior = effective_prior(&etas).unwrap();
    let eta_eff = NaturalParams::from_belief(&fused_prior).unwrap();
    let mut lambda = eta_eff.clone();
    for _ in 0..2000 {
        let assocs: Vec<AssociationPosterior> = scans
            .iter()
            .zip(&sensors)
            .map(|(scan, sensor)| association_posterior(&lambda, &scan.points, sensor).unwrap())
            .collect();
        lambda = cavi_state_update(&eta_eff, &scans, &sensors, &assocs).unwrap();
    }
    let oracle = lambda.to_belief().unwrap();

    let mut worst: f64 = 0.0;
    for belief in &converged {
        for k in 0..num_objects {
            let mean_gap = (belief.means[k] - oracle.means[k]).norm()
                / oracle.means[k].norm().max(1.0);
            let cov_gap =
                (belief.covs[k] - oracle.covs[k]).norm() / oracle.covs[k].norm().max(1.0);
            worst = worst.max(mean_gap).max(cov_gap);
        }
    }
    check(
        "8 geometric-average effective prior",
        worst <= 1e-6,
        &format!("max relative gap to the fused-prior fixed point {worst:.3e}"),
    );
}

/// Criterion 9: convergence shape at the designated step: at least half of
/// the eventual decrease within the first 10 iterations, and every sensor
/// within 1% of the centralised value by iteration 100.
#[test]
fn criterion_9_convergence_shape() {
    let (scenario, report, _) = desk();
    let deng = &report.methods["deng-vt"];
    let cvt = &report.methods["c-vt"];
    assert!(!deng.convergence.is_empty(), "no convergence trace recorded");

    let cvt_final = cvt
        .convergence
        .iter()
        .max_by_key(|p| p.iteration)
        .expect("centralised trace")
        .gospa;

    let at = |sensor: usize, iteration: usize| -> f64 {
        deng.convergence
            .iter()
            .find(|p| p.sensor == sensor && p.iteration == iteration)
            .expect("trace point")
            .gospa
    };
    let final_iteration = scenario.tracker_config("deng-vt").max_iterations;
    let mut worst_drop: f64 = f64::INFINITY;
    let mut worst_final_gap: f64 = 0.0;
    for sensor in 0..scenario.num_sensors {
        let g0 = at(sensor, 0);
        let g10 = at(sensor, 10);
        let g_final = at(sensor, final_iteration);
        let total_decrease = g0 - g_final;
        let early_decrease = g0 - g10;
        worst_drop = worst_drop.min(early_decrease / total_decrease);
        worst_final_gap = worst_final_gap.max((g_final - cvt_final).abs() / cvt_final);
    }
    check(
        "9 convergence shape",
        worst_drop >= 0.5 && worst_final_gap <= 0.01,
        &format!(
            "min early-drop fraction {worst_drop:.3}, max final gap to centralised {:.4}%",
            worst_final_gap * 100.0
        ),
    );
}

/// Criterion 10 (informational): a single full-scale run completes within
/// budget with the gradient tracker agreeing with the centralised tracker.
#[test]
#[ignore = "informational full-scale band; run with --ignored"]
fn criterion_10_full_scale_band() {
    let start = Instant::now();
    let mut scenario = Scenario::full_scale();
    scenario.monte_carlo_runs = 1;
    let methods = vec!["c-vt".to_string(), "deng-vt".to_string()];
    let report = run_experiment(&scenario, &methods).unwrap();
    let elapsed = start.elapsed();
    let deng = report.methods["deng-vt"].summary.mgospa.mean;
    let cvt = report.methods["c-vt"].summary.mgospa.mean;
    let gap = (deng - cvt).abs() / cvt;
    check(
        "10 full-scale band (informational)",
        gap <= 0.01 && elapsed <= Duration::from_secs(900),
        &format!("mgospa deng {deng:.2} vs c {cvt:.2} (gap {:.3}%), single run in {elapsed:.2?}", gap * 100.0),
    );
}
