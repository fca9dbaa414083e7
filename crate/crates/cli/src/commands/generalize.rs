use ntklab_core::experiments::generalization_sweep;
use ntklab_core::stats;
use serde::Serialize;

use super::Context;
use crate::config::in_section;
use crate::error::{CliError, CliResult};
use crate::manifest::{RunEntry, RunManifest};
use crate::output::{csv_bytes, ensure_dir};
use crate::svg::{Chart, Series};

/// Fitted slopes inside this range pass the rate gate.
pub const SLOPE_GATE: (f64, f64) = (-0.9, -0.25);

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub degree: Option<u32>,
    pub sample_sizes: Option<Vec<usize>>,
    pub seeds: Option<usize>,
    pub width: Option<usize>,
    pub normalize: bool,
}

#[derive(Debug, Serialize)]
struct Row {
    n: usize,
    seed: u64,
    gen_error: f64,
    gen_std_err: f64,
    terminal_loss: f64,
    iterations: usize,
    converged: bool,
}

pub fn run(ctx: &Context, overrides: &Overrides) -> CliResult<()> {
    let file = ctx.load_config()?;
    let mut config = file.generalize;
    if let Some(p) = overrides.degree {
        config.degree = p;
    }
    if let Some(ns) = &overrides.sample_sizes {
        config.sample_sizes = ns.clone();
    }
    if let Some(w) = overrides.width {
        config.width = w;
    }
    if overrides.normalize {
        config.normalize_labels = true;
    }
    let count = overrides.seeds.unwrap_or(config.seeds.len());
    if let Some(base) = ctx.seed {
        config.seeds = (base..base + count as u64).collect();
    } else if overrides.seeds.is_some() {
        config.seeds = (1..=count as u64).collect();
    }
    if config.seeds.is_empty() {
        return Err(CliError::Config(
            "generalize.seeds must not be empty".into(),
        ));
    }
    config
        .train
        .validate()
        .map_err(|e| in_section("generalize.train", e))?;
    ensure_dir(&ctx.out)?;

    let result = generalization_sweep(&config).map_err(|e| in_section("generalize", e))?;

    let mut manifest = RunManifest::new("generalize", &config);
    for (i, s) in config.seeds.iter().enumerate() {
        manifest.seeds.insert(format!("seed_{i}"), *s);
    }
    let mut rows = Vec::new();
    for cell in &result.sweep.cells {
        let m = cell.manifest.as_ref();
        let g = cell.generalization;
        rows.push(Row {
            n: cell.cell.n,
            seed: cell.cell.seed,
            gen_error: g.map_or(f64::NAN, |g| g.mean),
            gen_std_err: g.map_or(f64::NAN, |g| g.std_err),
            terminal_loss: m.map_or(f64::NAN, |m| m.terminal_loss),
            iterations: m.map_or(0, |m| m.iterations),
            converged: m.is_some_and(|m| m.converged),
        });
        manifest.runs.push(RunEntry {
            label: format!("n={}", cell.cell.n),
            seed: cell.cell.seed,
            jitter: m.map_or(f64::NAN, |m| m.jitter),
            step_size: m.map_or(f64::NAN, |m| m.step_size),
            terminal_loss: m.map_or(f64::NAN, |m| m.terminal_loss),
            iterations: m.map_or(0, |m| m.iterations),
            converged: m.is_some_and(|m| m.converged),
            wall_ms: m.map_or(0, |m| m.wall_ms),
            error: cell.error.clone(),
        });
    }
    let csv = csv_bytes(&rows)
        .map_err(|e| CliError::io(ctx.path("generalize.csv"), std::io::Error::other(e)))?;
    ctx.emit(&mut manifest, "generalize.csv", &csv)?;

    let ns: Vec<f64> = result.sample_sizes.iter().map(|&n| n as f64).collect();
    let ln_x: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ln_y: Vec<f64> = result.median_error.iter().map(|e| e.ln()).collect();
    let intercept = stats::mean(&ln_y) - result.fitted_slope * stats::mean(&ln_x);
    let fit: Vec<(f64, f64)> = ns
        .iter()
        .map(|&n| (n, (intercept + result.fitted_slope * n.ln()).exp()))
        .collect();
    let chart = Chart {
        title: format!(
            "Test error for degree {} target, slope {:.3}",
            config.degree, result.fitted_slope
        ),
        x_label: "training points n".into(),
        y_label: "mean squared test error".into(),
        log_x: true,
        log_y: true,
        series: vec![
            Series::new(
                "median error",
                ns.iter()
                    .copied()
                    .zip(result.median_error.iter().copied())
                    .collect(),
            ),
            Series {
                dashed: true,
                ..Series::new(format!("fit n^{:.2}", result.fitted_slope), fit)
            },
        ],
    };
    ctx.emit(&mut manifest, "generalize.svg", chart.render().as_bytes())?;
    let in_gate = (SLOPE_GATE.0..=SLOPE_GATE.1).contains(&result.fitted_slope);
    manifest.checks.insert("slope_in_gate".into(), in_gate);
    manifest.checks.insert(
        "error_decreasing".into(),
        stats::is_strictly_decreasing(&result.median_error),
    );
    manifest.summary = serde_json::json!({
        "sample_sizes": result.sample_sizes,
        "median_error": result.median_error,
        "fitted_slope": result.fitted_slope,
        "slope_gate": [SLOPE_GATE.0, SLOPE_GATE.1],
    });
    ctx.finish(manifest)?;

    let failed = result.sweep.failures().count();
    if failed > 0 {
        return Err(CliError::Numerical(format!(
            "{failed} of {} cells failed, see manifest.json",
            result.sweep.cells.len()
        )));
    }
    println!(
        "median test error by n {:?}: {:?}, fitted slope {:.3}",
        result.sample_sizes, result.median_error, result.fitted_slope
    );
    Ok(())
}
