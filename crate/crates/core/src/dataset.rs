use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{decimate, window_mean};
use crate::types::Input;

/// Uniformly sampled input/output record used for identification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Seconds between samples.
    pub sample_time: f64,
    /// Time stamp of the first sample, seconds.
    pub start_time: f64,
    pub inputs: Vec<Input>,
    /// Measured feed temperature, °C.
    pub outputs: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    t: f64,
    u_heat: f64,
    u_cool: f64,
    y: f64,
}

impl Dataset {
    pub fn new(sample_time: f64, inputs: Vec<Input>, outputs: Vec<f64>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::domain(format!(
                "{} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        if !(sample_time > 0.0) {
            return Err(Error::domain("sample time must be positive"));
        }
        Ok(Self {
            sample_time,
            start_time: 0.0,
            inputs,
            outputs,
        })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start_time + k as f64 * self.sample_time
    }

    /// Contiguous sub-range `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Dataset> {
        if start + len > self.len() {
            return Err(Error::domain(format!(
                "window [{start}, {}) exceeds dataset length {}",
                start + len,
                self.len()
            )));
        }
        Ok(Dataset {
            sample_time: self.sample_time,
            start_time: self.time(start),
            inputs: self.inputs[start..start + len].to_vec(),
            outputs: self.outputs[start..start + len].to_vec(),
        })
    }

    /// Decimates outputs and window-averages inputs by `factor`.
    pub fn resample(&self, factor: usize) -> Result<Dataset> {
        let heat: Vec<f64> = self.inputs.iter().map(|u| u.heat).collect();
        let cool: Vec<f64> = self.inputs.iter().map(|u| u.cool).collect();
        let heat = window_mean(&heat, factor)?;
        let cool = window_mean(&cool, factor)?;
        let outputs = decimate(&self.outputs, factor)?;
        Ok(Dataset {
            sample_time: self.sample_time * factor as f64,
            start_time: self.start_time,
            inputs: heat
                .into_iter()
                .zip(cool)
                .map(|(h, c)| Input::new(h, c))
                .collect(),
            outputs,
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for k in 0..self.len() {
            wtr.serialize(Row {
                t: self.time(k),
                u_heat: self.inputs[k].heat,
                u_cool: self.inputs[k].cool,
                y: self.outputs[k],
            })?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows: Vec<Row> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        if rows.len() < 2 {
            return Err(Error::domain("dataset needs at least two rows"));
        }
        let sample_time = rows[1].t - rows[0].t;
        let mut ds = Dataset::new(
            sample_time,
            rows.iter().map(|r| Input::new(r.u_heat, r.u_cool)).collect(),
            rows.iter().map(|r| r.y).collect(),
        )?;
        ds.start_time = rows[0].t;
        Ok(ds)
    }
}
