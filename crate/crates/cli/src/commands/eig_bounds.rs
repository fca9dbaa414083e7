use std::path::Path;

use ntklab_core::experiments::{synthesize, InputRadius, SyntheticSpec, Target};
use ntklab_core::kernel::eigen_bounds;
use ntklab_core::LabeledDataset;

use super::Context;
use crate::config::in_section;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::output::{ensure_dir, write_json};

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<std::path::PathBuf>,
    pub n: Option<usize>,
    pub d: Option<usize>,
}

/// Headerless CSV, one input per row; lines starting with `#` are skipped.
pub fn read_dataset(path: &Path) -> CliResult<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => CliError::Config(format!("{}: {other:?}", path.display())),
        })?;
    let mut inputs = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::Config(format!("{} row {}: {e}", path.display(), line + 1)))?;
        inputs.push(row);
    }
    if inputs.is_empty() {
        return Err(CliError::Config(format!(
            "{} contains no points",
            path.display()
        )));
    }
    let labels = vec![0.0; inputs.len()];
    LabeledDataset::new(inputs, labels).map_err(|e| in_section("dataset", e))
}

pub fn run(ctx: &Context, overrides: &Overrides) -> CliResult<()> {
    let file = ctx.load_config()?;
    let mut section = file.eig_bounds;
    if let Some(n) = overrides.n {
        section.n = n;
    }
    if let Some(d) = overrides.d {
        section.d = d;
    }
    let seed = ctx.seed.unwrap_or(file.seed);
    let (data, source) = match &overrides.dataset {
        Some(path) => (read_dataset(path)?, serde_json::json!({ "dataset": path })),
        None => {
            let spec = SyntheticSpec {
                n: section.n,
                d: section.d,
                target: Target::Poly {
                    degree: 1,
                    beta: None,
                },
                normalize_labels: false,
                input_radius: InputRadius::SqrtD,
                seed,
            };
            let data = synthesize(&spec)
                .map_err(|e| in_section("eig_bounds", e))?
                .data;
            (data, serde_json::to_value(&section).unwrap_or_default())
        }
    };
    ensure_dir(&ctx.out)?;
    let report = eigen_bounds(&data).map_err(|e| in_section("eig_bounds", e))?;
    write_json(&ctx.path("eig_bounds.json"), &report)?;

    let mut manifest = RunManifest::new("eig-bounds", &source);
    manifest.seeds.insert("data".into(), seed);
    manifest.outputs.push("eig_bounds.json".into());
    manifest
        .checks
        .insert("sandwich_holds".into(), report.sandwich_holds);
    manifest.summary = serde_json::to_value(report).unwrap_or_default();
    ctx.finish(manifest)?;

    println!(
        "theta_min = {:.6} rad, lower = {:.6e}, lambda_min = {:.6e}, upper = {:.6e}",
        report.theta_min, report.lower_bound, report.exact_lambda_min, report.upper_bound
    );
    if !report.small_angle_regime {
        log::warn!("theta_min >= 1 rad: the lower bound formula is outside its stated regime");
    }
    if !report.sandwich_holds {
        return Err(CliError::Numerical(format!(
            "eigenvalue sandwich violated: {:e} <= {:e} <= {:e} fails",
            report.lower_bound, report.exact_lambda_min, report.upper_bound
        )));
    }
    Ok(())
}
