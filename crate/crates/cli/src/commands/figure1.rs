use ntklab_core::experiments::{reproduce_figure1, Figure1Result};
use ntklab_core::TrajectoryRecord;
use serde::Serialize;

use super::Context;
use crate::config::in_section;
use crate::error::{CliError, CliResult};
use crate::manifest::{RunEntry, RunManifest};
use crate::output::{csv_bytes, ensure_dir};
use crate::svg::{mean_band, Chart, Series};

#[derive(Debug, Clone)]
pub struct Overrides {
    pub widths: Option<Vec<usize>>,
    pub seeds: Option<usize>,
}

/// One trajectory record tagged with its cell.
#[derive(Debug, Serialize)]
struct Row {
    width: usize,
    seed: u64,
    iter: usize,
    loss: f64,
    v_perp: f64,
    v_par: f64,
    dist_minnorm_sq: f64,
    dist_init_sq: f64,
    max_unit_drift: f64,
    sign_flips: usize,
    wall_ms: u64,
}

impl Row {
    fn new(width: usize, seed: u64, r: &TrajectoryRecord) -> Self {
        Self {
            width,
            seed,
            iter: r.iter,
            loss: r.loss,
            v_perp: r.v_perp,
            v_par: r.v_par,
            dist_minnorm_sq: r.dist_minnorm_sq,
            dist_init_sq: r.dist_init_sq,
            max_unit_drift: r.max_unit_drift,
            sign_flips: r.sign_flips,
            wall_ms: r.wall_ms,
        }
    }
}

fn width_chart(
    result: &Figure1Result,
    title: &str,
    y_label: &str,
    metric: fn(&TrajectoryRecord) -> f64,
) -> Chart {
    let series = result
        .trends
        .widths
        .iter()
        .map(|&w| {
            let runs: Vec<Vec<(f64, f64)>> = result
                .sweep
                .cells
                .iter()
                .filter(|c| c.cell.width == w)
                .filter_map(|c| c.trajectory.as_ref())
                .map(|t| {
                    t.records
                        .iter()
                        .map(|r| (r.iter as f64, metric(r)))
                        .collect()
                })
                .collect();
            let (points, band) = mean_band(&runs);
            Series {
                label: format!("m={w}"),
                points,
                band: Some(band),
                dashed: false,
            }
        })
        .collect();
    Chart {
        title: title.into(),
        x_label: "iteration".into(),
        y_label: y_label.into(),
        log_y: true,
        series,
        ..Chart::default()
    }
}

pub fn run(ctx: &Context, overrides: &Overrides) -> CliResult<()> {
    let file = ctx.load_config()?;
    let mut config = file.figure1;
    if let Some(widths) = &overrides.widths {
        config.widths = widths.clone();
    }
    if let Some(count) = overrides.seeds {
        config.seeds = (1..=count as u64).collect();
    }
    if let Some(seed) = ctx.seed {
        config.data_seed = seed;
    }
    if config.widths.is_empty() || config.widths.contains(&0) {
        return Err(CliError::Config(
            "figure1.widths must be a non-empty list of positive widths".into(),
        ));
    }
    if config.seeds.is_empty() {
        return Err(CliError::Config("figure1.seeds must not be empty".into()));
    }
    config
        .train
        .validate()
        .map_err(|e| in_section("figure1.train", e))?;
    ensure_dir(&ctx.out)?;

    let result = reproduce_figure1(&config).map_err(|e| in_section("figure1", e))?;

    let mut manifest = RunManifest::new("figure1", &config);
    manifest.seeds.insert("data".into(), config.data_seed);
    for (i, s) in config.seeds.iter().enumerate() {
        manifest.seeds.insert(format!("init_{i}"), *s);
    }
    let mut rows = Vec::new();
    for cell in &result.sweep.cells {
        if let Some(t) = &cell.trajectory {
            rows.extend(
                t.records
                    .iter()
                    .map(|r| Row::new(cell.cell.width, cell.cell.seed, r)),
            );
        }
        let m = cell.manifest.as_ref();
        manifest.runs.push(RunEntry {
            label: format!("m={}", cell.cell.width),
            seed: cell.cell.seed,
            jitter: m.map_or(f64::NAN, |m| m.jitter),
            step_size: m.map_or(config.train.step_size, |m| m.step_size),
            terminal_loss: m.map_or(f64::NAN, |m| m.terminal_loss),
            iterations: m.map_or(0, |m| m.iterations),
            converged: m.is_some_and(|m| m.converged),
            wall_ms: m.map_or(0, |m| m.wall_ms),
            error: cell.error.clone(),
        });
    }
    let csv = csv_bytes(&rows)
        .map_err(|e| CliError::io(ctx.path("figure1.csv"), std::io::Error::other(e)))?;
    ctx.emit(&mut manifest, "figure1.csv", &csv)?;
    let charts = [
        (
            "v_perp.svg",
            width_chart(
                &result,
                "Orthogonal component V_perp",
                "|P_perp (w - w_L*)|^2",
                |r| r.v_perp,
            ),
        ),
        (
            "dist_minnorm.svg",
            width_chart(
                &result,
                "Distance to the min-norm solution",
                "|w - w_L*|^2",
                |r| r.dist_minnorm_sq,
            ),
        ),
        (
            "dist_init.svg",
            width_chart(
                &result,
                "Distance from initialization",
                "|w - w(0)|^2",
                |r| r.dist_init_sq,
            ),
        ),
    ];
    for (name, chart) in &charts {
        ctx.emit(&mut manifest, name, chart.render().as_bytes())?;
    }
    let t = &result.trends;
    manifest
        .checks
        .insert("v_perp_non_increasing".into(), t.v_perp_non_increasing);
    manifest.checks.insert(
        "dist_minnorm_non_increasing".into(),
        t.dist_minnorm_non_increasing,
    );
    manifest
        .checks
        .insert("all_converged".into(), t.all_converged);
    manifest
        .checks
        .insert("loss_monotone".into(), t.loss_monotone);
    manifest.summary = serde_json::to_value(t).unwrap_or_default();
    ctx.finish(manifest)?;

    let failed = result.sweep.failures().count();
    if failed > 0 {
        return Err(CliError::Numerical(format!(
            "{failed} of {} cells failed, see manifest.json",
            result.sweep.cells.len()
        )));
    }
    println!(
        "median terminal V_perp by width: {:?} (non-increasing: {})",
        t.median_v_perp, t.v_perp_non_increasing
    );
    println!(
        "median terminal |w - w_L*|^2 by width: {:?} (non-increasing: {})",
        t.median_dist_minnorm_sq, t.dist_minnorm_non_increasing
    );
    Ok(())
}
