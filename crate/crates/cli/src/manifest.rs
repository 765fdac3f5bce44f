use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use serde::Serialize;

pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub command: String,
    pub config: C,
    pub seed: u64,
    pub build: String,
    pub wall_time_secs: f64,
    pub outputs: Vec<PathBuf>,
}

/// Tracks output files of one run; `finish` writes `manifest.json`.
pub struct Run {
    dir: PathBuf,
    started: Instant,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn start(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            outputs: Vec::new(),
        })
    }

    /// Opens `name` in the output directory and records it.
    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.outputs.push(path);
        Ok(BufWriter::new(f))
    }

    pub fn csv(&mut self, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
        Ok(csv::Writer::from_writer(self.create(name)?))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let w = self.create(name)?;
        serde_json::to_writer_pretty(w, value)?;
        Ok(())
    }

    pub fn finish<C: Serialize>(self, command: &str, config: C, seed: u64) -> Result<()> {
        let path = self.dir.join("manifest.json");
        let manifest = RunManifest {
            command: command.to_string(),
            config,
            seed,
            build: option_env!("MCVI_BUILD_ID").unwrap_or(BUILD_ID).to_string(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs.clone(),
        };
        for o in &self.outputs {
            ensure!(o.exists(), "output {} missing", o.display());
        }
        serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &manifest)?;
        Ok(())
    }
}
