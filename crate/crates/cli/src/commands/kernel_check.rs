use ntklab_core::experiments::{
    empirical_kernel_rate, kernel_identity_check, synthesize, InputRadius, KernelIdentityReport,
    KernelRateReport, SyntheticSpec, Target,
};
use ntklab_core::stats::derive_seed;
use serde::Serialize;

use super::Context;
use crate::config::{in_section, KernelCheckSection};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::output::{ensure_dir, write_json};

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub d: Option<usize>,
    pub trials: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Report {
    d: usize,
    trials: usize,
    seeds: Vec<u64>,
    series_max_err: f64,
    feature_map_max_err: f64,
    tail_bound: f64,
    degree_bounds_hold: bool,
    identities: Vec<KernelIdentityReport>,
    empirical: KernelRateReport,
}

pub fn run(ctx: &Context, overrides: &Overrides) -> CliResult<()> {
    let file = ctx.load_config()?;
    let mut section: KernelCheckSection = file.kernel_check;
    if let Some(d) = overrides.d {
        section.d = d;
    }
    if let Some(t) = overrides.trials {
        section.trials = t;
    }
    if section.trials == 0 {
        return Err(CliError::Config(
            "kernel_check.trials must be at least 1".into(),
        ));
    }
    if section.d == 0 {
        return Err(CliError::Config("kernel_check.d must be at least 1".into()));
    }
    let base = ctx.seed.unwrap_or(file.seed);
    let seeds: Vec<u64> = (0..section.trials as u64)
        .map(|t| derive_seed(base, t))
        .collect();
    ensure_dir(&ctx.out)?;

    let identities = seeds
        .iter()
        .map(|&s| {
            kernel_identity_check(
                section.d,
                section.pairs_per_trial,
                s,
                section.degree_cap,
                section.series_cap,
            )
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| in_section("kernel_check", e))?;
    let data = synthesize(&SyntheticSpec {
        n: section.n,
        d: section.d,
        target: Target::Poly {
            degree: 1,
            beta: None,
        },
        normalize_labels: false,
        input_radius: InputRadius::Unit,
        seed: base,
    })
    .map_err(|e| in_section("kernel_check", e))?
    .data;
    let empirical = empirical_kernel_rate(&data, &section.widths, &seeds, 1.0)
        .map_err(|e| in_section("kernel_check", e))?;

    let fold = |f: fn(&KernelIdentityReport) -> f64| identities.iter().map(f).fold(0.0, f64::max);
    let report = Report {
        d: section.d,
        trials: section.trials,
        series_max_err: fold(|r| r.series_max_err),
        feature_map_max_err: fold(|r| r.feature_map_max_err),
        tail_bound: identities[0].tail_bound,
        degree_bounds_hold: identities
            .iter()
            .all(|r| r.degree_bounds.iter().all(|b| b.holds)),
        seeds: seeds.clone(),
        identities,
        empirical,
    };
    let report_path = ctx.path("report.json");
    write_json(&report_path, &report)?;

    let mut manifest = RunManifest::new("kernel-check", &section);
    manifest.seeds.insert("base".into(), base);
    manifest.outputs.push("report.json".into());
    manifest
        .checks
        .insert("series_below_1e-10".into(), report.series_max_err < 1e-10);
    manifest.checks.insert(
        "feature_map_below_1e-6".into(),
        report.feature_map_max_err < 1e-6,
    );
    manifest
        .checks
        .insert("degree_bounds_hold".into(), report.degree_bounds_hold);
    manifest.checks.insert(
        "empirical_slope_in_range".into(),
        (-0.65..=-0.35).contains(&report.empirical.slope),
    );
    ctx.finish(manifest)?;
    println!(
        "series max err {:.3e}, feature map max err {:.3e}, empirical slope {:.3}",
        report.series_max_err, report.feature_map_max_err, report.empirical.slope
    );
    Ok(())
}
