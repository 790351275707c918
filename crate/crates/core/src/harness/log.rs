use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::plant::PLANT_DT;
use crate::types::Input;

/// Exact CSV header of experiment logs.
pub const LOG_HEADER: &str = "t,u_heat,u_cool,bit_heat,bit_cool,y,r,controller,solver_status,solver_iterations,objective,terminal_residual,fallback";

/// One plant second. Solver columns are filled only on the seconds where
/// an MPC decision was taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    pub u_heat: f64,
    pub u_cool: f64,
    pub bit_heat: u8,
    pub bit_cool: u8,
    pub y: f64,
    pub r: f64,
    pub controller: String,
    pub solver_status: Option<String>,
    pub solver_iterations: Option<usize>,
    pub objective: Option<f64>,
    pub terminal_residual: Option<f64>,
    pub fallback: u8,
}

impl LogRecord {
    pub fn input(&self) -> Input {
        Input::new(self.u_heat, self.u_cool)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMetadata {
    pub controller: String,
    pub seed: u64,
    pub config_hash: String,
    /// Plant clock, s.
    pub dt: f64,
    /// Controller clock of the MPC variants, s.
    pub tau_s: f64,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentLog {
    pub metadata: LogMetadata,
    pub records: Vec<LogRecord>,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

impl ExperimentLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// End of the covered interval, s.
    pub fn end_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t + self.metadata.dt)
    }

    pub fn references(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.r).collect()
    }

    /// Analog inputs and measurements at the plant clock.
    pub fn to_dataset(&self) -> Result<Dataset> {
        Dataset::new(
            self.metadata.dt,
            self.records.iter().map(LogRecord::input).collect(),
            self.records.iter().map(|r| r.y).collect(),
        )
    }

    /// Executed binary inputs and measurements at the plant clock; window
    /// averages of this series are realized duty ratios.
    pub fn to_executed_dataset(&self) -> Result<Dataset> {
        Dataset::new(
            self.metadata.dt,
            self.records
                .iter()
                .map(|r| Input::new(r.bit_heat as f64, r.bit_cool as f64))
                .collect(),
            self.records.iter().map(|r| r.y).collect(),
        )
    }

    pub fn fallback_count(&self) -> usize {
        self.records.iter().filter(|r| r.fallback != 0).count()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(LOG_HEADER.split(','))?;
        for r in &self.records {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes the CSV at `path` and the metadata next to it as `.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        self.write_csv(std::fs::File::create(path)?)?;
        std::fs::write(sidecar(path), serde_json::to_string_pretty(&self.metadata)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let metadata: LogMetadata = serde_json::from_str(&std::fs::read_to_string(sidecar(path))?)?;
        let mut rdr = csv::Reader::from_path(path)?;
        let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
        if header != LOG_HEADER {
            return Err(Error::Config(format!("{}: unexpected header {header}", path.display())));
        }
        let records = rdr.deserialize().collect::<std::result::Result<Vec<LogRecord>, _>>()?;
        Ok(Self { metadata, records })
    }
}

pub(crate) fn metadata(controller: &str, seed: u64, config_hash: String, tau_s: f64) -> LogMetadata {
    LogMetadata {
        controller: controller.to_string(),
        seed,
        config_hash,
        dt: PLANT_DT,
        tau_s,
        records: 0,
    }
}
