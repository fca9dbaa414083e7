use std::time::Instant;

use ntklab_core::experiments::synthesize;
use ntklab_core::stats::derive_seed;
use ntklab_core::{GradientFeatures, NetworkParams, Trajectory};

use super::{is_json, Context};
use crate::config::{in_section, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{RunEntry, RunManifest};
use crate::output::{csv_bytes, ensure_dir};
use crate::svg::{Chart, Series};

const DATA_STREAM: u64 = 0x10;
const INIT_STREAM: u64 = 0x20;

/// A config file, a previous run's manifest, or the defaults.
pub fn resolve_config(ctx: &Context) -> CliResult<RunConfig> {
    let mut config = match &ctx.config {
        Some(path) if is_json(path) => {
            let manifest = crate::manifest::RunManifest::load(path)?;
            if manifest.command != "train" {
                return Err(CliError::Config(format!(
                    "manifest was written by `{}`, only train manifests can be replayed",
                    manifest.command
                )));
            }
            serde_json::from_value(manifest.config)
                .map_err(|e| CliError::Config(format!("manifest config: {e}")))?
        }
        _ => ctx.load_config()?.run_config(),
    };
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn chart_points(
    traj: &Trajectory,
    f: impl Fn(&ntklab_core::TrajectoryRecord) -> f64,
) -> Vec<(f64, f64)> {
    traj.records.iter().map(|r| (r.iter as f64, f(r))).collect()
}

fn write_outputs(ctx: &Context, manifest: &mut RunManifest, traj: &Trajectory) -> CliResult<()> {
    let csv = if traj.records.is_empty() {
        format!("{}\n", crate::output::TRAJECTORY_HEADER).into_bytes()
    } else {
        csv_bytes(&traj.records)
            .map_err(|e| CliError::io(ctx.path("trajectory.csv"), std::io::Error::other(e)))?
    };
    ctx.emit(manifest, "trajectory.csv", &csv)?;
    let loss = Chart {
        title: "Training loss".into(),
        x_label: "iteration".into(),
        y_label: "loss".into(),
        log_y: true,
        series: vec![Series::new("loss", chart_points(traj, |r| r.loss))],
        ..Chart::default()
    };
    ctx.emit(manifest, "loss.svg", loss.render().as_bytes())?;
    let distances = Chart {
        title: "Distances along the trajectory".into(),
        x_label: "iteration".into(),
        y_label: "squared distance".into(),
        log_y: true,
        series: vec![
            Series::new("V_perp", chart_points(traj, |r| r.v_perp)),
            Series::new("V_par", chart_points(traj, |r| r.v_par)),
            Series::new("|w - w_L*|^2", chart_points(traj, |r| r.dist_minnorm_sq)),
            Series::new("|w - w(0)|^2", chart_points(traj, |r| r.dist_init_sq)),
        ],
        ..Chart::default()
    };
    ctx.emit(manifest, "trajectory.svg", distances.render().as_bytes())?;
    Ok(())
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let config = resolve_config(ctx)?;
    config
        .train
        .validate()
        .map_err(|e| in_section("train", e))?;
    ensure_dir(&ctx.out)?;

    let data_seed = derive_seed(config.seed, DATA_STREAM);
    let init_seed = derive_seed(config.seed, INIT_STREAM);
    let problem = synthesize(&config.data.spec(data_seed)).map_err(|e| in_section("data", e))?;
    let mut params = NetworkParams::initialize(
        config.network.width,
        config.data.d,
        config.network.init_scale,
        init_seed,
    )
    .map_err(|e| in_section("network", e))?;

    let mut manifest = RunManifest::new("train", &config);
    manifest.seeds.insert("base".into(), config.seed);
    manifest.seeds.insert("data".into(), data_seed);
    manifest.seeds.insert("init".into(), init_seed);
    manifest.summary = serde_json::json!({
        "beta": problem.target.beta,
        "beta_rescaled": problem.target.beta_rescaled,
        "label_shift": problem.target.shift,
        "label_scale": problem.target.scale,
        "label_bound": problem.data.label_bound(),
    });

    let start = Instant::now();
    let features = GradientFeatures::build(&params, &problem.data)?;
    let sol = features.min_norm_solution(&params, problem.data.labels())?;
    let result =
        ntklab_core::trainer::train(&mut params, &problem.data, &config.train, &features, &sol);
    let wall_ms = start.elapsed().as_millis() as u64;
    let (traj, failure) = match result {
        Ok(t) => (t, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    manifest.runs.push(RunEntry {
        label: format!("m={}", config.network.width),
        seed: init_seed,
        jitter: features.jitter(),
        step_size: config.train.step_size,
        terminal_loss: traj.terminal_loss(),
        iterations: traj.final_iter(),
        converged: traj.converged,
        wall_ms,
        error: failure.as_ref().map(|e| e.to_string()),
    });
    manifest.checks.insert("converged".into(), traj.converged);
    manifest
        .checks
        .insert("loss_monotone".into(), traj.loss_increases().is_empty());
    write_outputs(ctx, &mut manifest, &traj)?;
    ctx.finish(manifest)?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    log::info!(
        "trained m={} for {} iterations, terminal loss {:e}",
        config.network.width,
        traj.final_iter(),
        traj.terminal_loss()
    );
    Ok(())
}
