//! `denfuse`: simulate multi-sensor tracking scenarios, run the tracker
//! family over recorded bundles, benchmark end to end, and score external
//! estimates.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use denfuse_core::harness::{
    check_bundle_lock, emit_reports, run_experiment, run_on_bundle, score_estimate_files,
    simulate_run_bundle, write_scenario_lock,
};
use denfuse_core::metrics::GospaParams;
use denfuse_core::scenario::Scenario;
use denfuse_core::sim::Bundle;
use denfuse_core::trackers::TrackerRegistry;
use denfuse_core::vi::GradientVariant;

#[derive(Parser)]
#[command(
    name = "denfuse",
    version,
    about = "Decentralised multi-sensor multi-object tracking workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run's scenario bundle (truth, scans, network) for replay
    Simulate(SimulateArgs),
    /// Run tracking methods over a recorded bundle and emit reports
    Track(TrackArgs),
    /// End-to-end Monte Carlo benchmark: simulate, track, score, report
    Bench(BenchArgs),
    /// Score external estimate files with the GOSPA metric
    Gospa(GospaArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file path, or a built-in name ("desk", "full")
    #[arg(long, env = "DENFUSE_SCENARIO", default_value = "desk")]
    scenario: String,
    /// Override the scenario master seed
    #[arg(long, env = "DENFUSE_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct MethodArgs {
    /// Comma-separated method list (default: every registered method)
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Override the per-method iteration count (gradient iterations for
    /// deng-vt, variational iterations for the coordinate-ascent methods)
    #[arg(long)]
    iterations: Option<usize>,
    /// Override the gradient step size
    #[arg(long)]
    alpha: Option<f64>,
    /// Gradient variant: canonical | verbatim
    #[arg(long)]
    variant: Option<GradientVariant>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory for the bundle
    #[arg(long, env = "DENFUSE_OUT")]
    out: PathBuf,
    /// Monte Carlo run index to simulate
    #[arg(long, default_value_t = 0)]
    run: usize,
}

#[derive(Args)]
struct TrackArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Bundle directory produced by `simulate`
    #[arg(long, env = "DENFUSE_BUNDLE")]
    bundle: PathBuf,
    #[command(flatten)]
    methods: MethodArgs,
    /// Output directory for reports
    #[arg(long, env = "DENFUSE_OUT")]
    out: PathBuf,
    /// Monte Carlo run index the bundle was simulated with
    #[arg(long, default_value_t = 0)]
    run: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    methods: MethodArgs,
    /// Output directory for reports
    #[arg(long, env = "DENFUSE_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct GospaArgs {
    /// Estimates file (JSON lines with time_step and positions)
    #[arg(long)]
    estimates: PathBuf,
    /// Truth file (JSON lines with time_step and states or positions)
    #[arg(long)]
    truth: PathBuf,
    /// Metric order
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// Cardinality penalty factor
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Cut-off distance
    #[arg(long, default_value_t = 50.0)]
    c: f64,
    /// Write the JSON result here instead of stdout
    #[arg(long, env = "DENFUSE_OUT")]
    out: Option<PathBuf>,
}

fn load_scenario(args: &ScenarioArgs) -> anyhow::Result<Scenario> {
    let mut scenario = match args.scenario.as_str() {
        "desk" => Scenario::desk(),
        "full" => Scenario::full_scale(),
        path => Scenario::load(Path::new(path))
            .with_context(|| format!("loading scenario '{path}'"))?,
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn resolve_methods(scenario: &mut Scenario, args: &MethodArgs) -> anyhow::Result<Vec<String>> {
    let registry = TrackerRegistry::standard();
    let methods: Vec<String> = if args.methods.is_empty() {
        registry.names().iter().map(|s| s.to_string()).collect()
    } else {
        args.methods.clone()
    };
    for method in &methods {
        if !registry.contains(method) {
            bail!(
                "unknown method '{method}' (available: {})",
                registry.names().join(", ")
            );
        }
        let mut config = scenario.tracker_config(method);
        if let Some(iterations) = args.iterations {
            if method == "deng-vt" {
                config.max_iterations = iterations;
            } else {
                config.vi_iterations = iterations;
            }
        }
        if let Some(alpha) = args.alpha {
            config.alpha = alpha;
        }
        if let Some(variant) = args.variant {
            config.gradient_variant = variant;
        }
        scenario.trackers.insert(method.clone(), config);
    }
    Ok(methods)
}

fn print_summary(report: &denfuse_core::harness::RunReport) {
    println!(
        "{:<10} {:>12} {:>12} {:>10} {:>10} {:>8}",
        "method", "mgospa", "location", "missed", "false", "ci"
    );
    for (name, method) in &report.methods {
        let s = &method.summary;
        println!(
            "{:<10} {:>7.1} ±{:<4.1} {:>7.1} ±{:<4.1} {:>10.1} {:>10.1} {:>8.0}",
            name,
            s.mgospa.mean,
            s.mgospa.std,
            s.localisation.mean,
            s.localisation.std,
            s.missed.mean,
            s.false_objects.mean,
            s.ci
        );
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => {
            let scenario = load_scenario(&args.scenario)?;
            scenario.validate()?;
            let bundle = simulate_run_bundle(&scenario, args.run)?;
            let mut files = bundle.write(&args.out)?;
            files.push(write_scenario_lock(&scenario, &args.out)?);
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Track(args) => {
            let mut scenario = load_scenario(&args.scenario)?;
            let methods = resolve_methods(&mut scenario, &args.methods)?;
            check_bundle_lock(&scenario, &args.bundle)?;
            let bundle = Bundle::read(&args.bundle)
                .with_context(|| format!("reading bundle at {}", args.bundle.display()))?;
            let report = run_on_bundle(&scenario, &bundle, &methods, args.run)?;
            let files = emit_reports(&report, &scenario, &args.out)?;
            print_summary(&report);
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Bench(args) => {
            let mut scenario = load_scenario(&args.scenario)?;
            let methods = resolve_methods(&mut scenario, &args.methods)?;
            let report = run_experiment(&scenario, &methods)?;
            let files = emit_reports(&report, &scenario, &args.out)?;
            print_summary(&report);
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Gospa(args) => {
            let params = GospaParams {
                p: args.p,
                alpha: args.alpha,
                cutoff: args.c,
            };
            let scores = score_estimate_files(&args.estimates, &args.truth, &params)?;
            let per_step: Vec<serde_json::Value> = scores
                .iter()
                .map(|(step, b)| {
                    serde_json::json!({
                        "time_step": step,
                        "total": b.total,
                        "localisation": b.localisation,
                        "missed": b.missed,
                        "false": b.false_objects,
                    })
                })
                .collect();
            let count = scores.len().max(1) as f64;
            let mean = serde_json::json!({
                "total": scores.iter().map(|(_, b)| b.total).sum::<f64>() / count,
                "localisation": scores.iter().map(|(_, b)| b.localisation).sum::<f64>() / count,
                "missed": scores.iter().map(|(_, b)| b.missed).sum::<f64>() / count,
                "false": scores.iter().map(|(_, b)| b.false_objects).sum::<f64>() / count,
            });
            let output = serde_json::to_string_pretty(&serde_json::json!({
                "schema_version": 1,
                "params": { "p": params.p, "alpha": params.alpha, "c": params.cutoff },
                "per_step": per_step,
                "mean": mean,
            }))?;
            match args.out {
                Some(path) => std::fs::write(&path, output + "\n")
                    .with_context(|| format!("writing {}", path.display()))?,
                None => println!("{output}"),
            }
        }
    }
    Ok(())
}
