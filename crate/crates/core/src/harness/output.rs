//! CSV tables and the JSON run manifest.
//!
//! Floats are written with 17 significant digits so that they round-trip exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiments::{NmseResult, SweepResult};
use super::runner::TrialSetup;
use crate::error::{Error, Result};
use crate::metrics::{DecayFit, TvCurve};

/// Version of the CSV layouts written by this module.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out)
}

/// `n,tv_mean,tv_stderr`, one row per step starting at `n = 0`.
pub fn write_tv_curve<W: Write>(out: W, curve: &TvCurve) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["n", "tv_mean", "tv_stderr"])
        .map_err(csv_err)?;
    for (n, (v, se)) in curve.values.iter().zip(&curve.stderr).enumerate() {
        w.write_record([n.to_string(), format_float(*v), format_float(*se)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `tv_mean` (and, if present, `tv_stderr`) column of a TV curve table.
pub fn read_tv_curve<R: Read>(input: R) -> Result<TvCurve> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mean_col =
        col("tv_mean").ok_or_else(|| Error::Io("TV table has no `tv_mean` column".into()))?;
    let se_col = col("tv_stderr");
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::Io(format!("bad number `{s}`: {e}")))
    };
    let mut values = Vec::new();
    let mut stderr = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_err)?;
        values.push(parse(&record[mean_col])?);
        stderr.push(match se_col {
            Some(c) => parse(&record[c])?,
            None => 0.0,
        });
    }
    TvCurve::new(values, stderr, 1)
}

/// `n,nmse_<arm>...`, one row per observation step starting at `n = 1`.
pub fn write_nmse_table<W: Write>(out: W, result: &NmseResult) -> Result<()> {
    let mut w = writer(out);
    let mut header = vec!["n".to_string()];
    header.extend(result.arms.iter().map(|a| format!("nmse_{a}")));
    w.write_record(&header).map_err(csv_err)?;
    let steps = result.mean.first().map_or(0, Vec::len);
    for n in 0..steps {
        let mut row = vec![(n + 1).to_string()];
        row.extend(result.mean.iter().map(|curve| format_float(curve[n])));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `d_x,filter,nmse_mean,nmse_stderr`.
pub fn write_sweep_table<W: Write>(out: W, result: &SweepResult) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["d_x", "filter", "nmse_mean", "nmse_stderr"])
        .map_err(csv_err)?;
    for row in &result.rows {
        w.write_record([
            row.d_x.to_string(),
            row.filter.name().to_string(),
            format_float(row.nmse_mean),
            format_float(row.nmse_stderr),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `n,t,x_0..x_{d_x−1},y_0..y_{d_y−1}`; the `y` fields are empty at `n = 0`.
pub fn write_trajectory<W: Write>(out: W, setup: &TrialSetup) -> Result<()> {
    let mut w = writer(out);
    let (d_x, d_y) = (setup.model.d_x, setup.model.d_y);
    let mut header = vec!["n".to_string(), "t".to_string()];
    header.extend((0..d_x).map(|i| format!("x_{i}")));
    header.extend((0..d_y).map(|j| format!("y_{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for (n, x) in setup.truth.states.iter().enumerate() {
        let mut row = vec![n.to_string(), format_float(setup.grid.obs_time(n))];
        row.extend(x.iter().map(|v| format_float(*v)));
        match n.checked_sub(1).map(|k| &setup.truth.observations[k]) {
            Some(y) => row.extend(y.iter().map(|v| format_float(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), d_y)),
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `(H)_{ij}` as a headerless `d_x × d_y` table.
pub fn write_matrix<W: Write>(out: W, setup: &TrialSetup) -> Result<()> {
    let mut w = writer(out);
    let h = setup.h();
    for i in 0..h.nrows() {
        let row: Vec<String> = (0..h.ncols()).map(|j| format_float(h[(i, j)])).collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub gamma_hat: f64,
    pub d0: f64,
    pub n_cut: usize,
    pub rms_log_residual: f64,
}

impl From<DecayFit> for FitReport {
    fn from(f: DecayFit) -> Self {
        FitReport {
            gamma_hat: f.gamma_hat,
            d0: f.d0,
            n_cut: f.n_cut,
            rms_log_residual: f.rms_log_residual,
        }
    }
}

pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Io(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Durations {
    pub total_seconds: f64,
    /// Wall-clock time of each trial, in trial order.
    pub trial_seconds: Vec<f64>,
}

/// Provenance record written next to every set of results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub csv_schema_version: u32,
    pub crate_version: String,
    pub git_describe: String,
    pub seed: u64,
    pub threads: usize,
    pub outputs: Vec<String>,
    pub durations: Durations,
    pub config: ExperimentConfig,
}
