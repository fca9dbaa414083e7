pub mod eig_bounds;
pub mod figure1;
pub mod generalize;
pub mod kernel_check;
pub mod train;

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::ConfigFile;
use crate::error::CliResult;
use crate::manifest::RunManifest;
use crate::output;

/// Flags shared by every subcommand, after environment overrides.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub started: Instant,
}

impl Context {
    pub fn load_config(&self) -> CliResult<ConfigFile> {
        match &self.config {
            Some(path) => ConfigFile::load(path),
            None => Ok(ConfigFile::default()),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes `bytes` to `name` under the output directory and records it.
    pub fn emit(&self, manifest: &mut RunManifest, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.path(name);
        output::write_atomic(&path, bytes)?;
        manifest.outputs.push(name.to_owned());
        Ok(path)
    }

    pub fn finish(&self, mut manifest: RunManifest) -> CliResult<PathBuf> {
        manifest.wall_ms = self.started.elapsed().as_millis() as u64;
        manifest.outputs.push("manifest.json".to_owned());
        let path = self.path("manifest.json");
        output::write_json(&path, &manifest)?;
        Ok(path)
    }
}

pub(crate) fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}
