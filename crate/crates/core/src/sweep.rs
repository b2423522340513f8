//! Parameter-grid scans with deterministic, resumable output.
//!
//! Cells are enumerated row-major over the axes in declaration order (last
//! axis fastest). Each cell is evaluated independently, so the records do not
//! depend on the number of worker threads.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate_cell_within, Budget, CellStatus, MetricsConfig, MetricsRecord};
use crate::model::ModelParams;
use crate::provenance::{config_hash, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisName {
    #[serde(rename = "N")]
    N,
    #[serde(rename = "z")]
    Z,
    #[serde(rename = "alpha")]
    Alpha,
    #[serde(rename = "lambda")]
    Lambda,
    #[serde(rename = "g")]
    G,
}

impl AxisName {
    pub const ALL: [AxisName; 5] = [
        AxisName::N,
        AxisName::Z,
        AxisName::Alpha,
        AxisName::Lambda,
        AxisName::G,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AxisName::N => "N",
            AxisName::Z => "z",
            AxisName::Alpha => "alpha",
            AxisName::Lambda => "lambda",
            AxisName::G => "g",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, AxisName::N | AxisName::Z)
    }
}

impl fmt::Display for AxisName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AxisName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AxisName::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown axis `{s}` (expected N, z, alpha, lambda or g)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: AxisName,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: AxisName, values: Vec<f64>) -> Self {
        Self { name, values }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputMetric {
    #[serde(rename = "t_q")]
    Tq,
    #[serde(rename = "f_star")]
    FStar,
    #[serde(rename = "t_star")]
    TStar,
}

impl OutputMetric {
    pub const ALL: [OutputMetric; 3] = [OutputMetric::Tq, OutputMetric::FStar, OutputMetric::TStar];

    pub fn as_str(self) -> &'static str {
        match self {
            OutputMetric::Tq => "t_q",
            OutputMetric::FStar => "f_star",
            OutputMetric::TStar => "t_star",
        }
    }
}

impl FromStr for OutputMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OutputMetric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown output `{s}` (expected t_q, f_star or t_star)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub axes: Vec<Axis>,
    /// Values for every parameter not on an axis.
    pub fixed: ModelParams,
    pub config: MetricsConfig,
    pub outputs: Vec<OutputMetric>,
    /// Wall-clock seconds per cell; `None` is unlimited.
    pub cell_time_budget: Option<f64>,
}

impl SweepGrid {
    pub fn new(axes: Vec<Axis>, fixed: ModelParams, config: MetricsConfig) -> Self {
        Self {
            axes,
            fixed,
            config,
            outputs: OutputMetric::ALL.to_vec(),
            cell_time_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::InvalidConfig("sweep needs at least one axis".into()));
        }
        for (i, axis) in self.axes.iter().enumerate() {
            if self.axes[..i].iter().any(|a| a.name == axis.name) {
                return Err(Error::InvalidConfig(format!(
                    "axis `{}` declared twice",
                    axis.name
                )));
            }
            if axis.values.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "axis `{}` has no values",
                    axis.name
                )));
            }
            for &v in &axis.values {
                if !v.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "axis `{}` has non-finite value {v}",
                        axis.name
                    )));
                }
                if axis.name.is_integer() && (v < 0.0 || v.fract() != 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "axis `{}` needs non-negative integers, got {v}",
                        axis.name
                    )));
                }
            }
        }
        if self.outputs.is_empty() {
            return Err(Error::InvalidConfig("no output metrics requested".into()));
        }
        if let Some(b) = self.cell_time_budget {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "cell time budget {b} must be positive"
                )));
            }
        }
        self.config.validate()?;
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// Parameters of cell `index`, not yet validated.
    pub fn cell(&self, index: usize) -> ModelParams {
        let mut params = self.fixed;
        let mut rest = index;
        for axis in self.axes.iter().rev() {
            let v = axis.values[rest % axis.values.len()];
            rest /= axis.values.len();
            match axis.name {
                AxisName::N => params.n_sites = v as usize,
                AxisName::Z => params.coordination = v as usize,
                AxisName::Alpha => params.falloff = v,
                AxisName::Lambda => params.anisotropy = v,
                AxisName::G => params.field = v,
            }
        }
        params
    }

    pub fn config_hash(&self) -> String {
        config_hash(self)
    }

    fn wants(&self, metric: OutputMetric) -> bool {
        self.outputs.contains(&metric)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub grid: SweepGrid,
    pub records: Vec<MetricsRecord>,
    pub provenance: Provenance,
}

fn run_cell(grid: &SweepGrid, index: usize) -> MetricsRecord {
    let params = grid.cell(index);
    if params.validate().is_err() || params.n_sites < 2 {
        return MetricsRecord::empty(params, CellStatus::InvalidCell);
    }
    let mut rec = match evaluate_cell_within(
        &params,
        &grid.config,
        Budget::seconds(grid.cell_time_budget),
    ) {
        Ok(rec) => rec,
        Err(Error::TimedOut(_)) => MetricsRecord::empty(params, CellStatus::TimedOut),
        Err(Error::InvalidModel(_) | Error::InvalidConfig(_)) => {
            MetricsRecord::empty(params, CellStatus::InvalidCell)
        }
        Err(_) => MetricsRecord::empty(params, CellStatus::ComputeFailed),
    };
    if !grid.wants(OutputMetric::Tq) {
        rec.t_q = None;
    }
    if !grid.wants(OutputMetric::FStar) {
        rec.f_star = None;
    }
    if !grid.wants(OutputMetric::TStar) {
        rec.t_star = None;
    }
    rec
}

fn thread_pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    if parallelism == 0 {
        return Err(Error::InvalidConfig(
            "parallelism must be at least 1".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {parallelism} workers: {e}")))
}

pub fn run_sweep(grid: &SweepGrid, parallelism: usize) -> Result<SweepResult> {
    grid.validate()?;
    let pool = thread_pool(parallelism)?;
    let records = pool.install(|| {
        (0..grid.n_cells())
            .into_par_iter()
            .map(|i| run_cell(grid, i))
            .collect()
    });
    Ok(SweepResult {
        grid: grid.clone(),
        records,
        provenance: Provenance::new(grid.config_hash()),
    })
}

/// Like [`run_sweep`], but keeps one JSON file per finished cell under
/// `cache_dir/<config hash>/` and skips cells already present there.
/// Timed-out cells are not cached so that a rerun retries them.
pub fn run_sweep_resumable(
    grid: &SweepGrid,
    parallelism: usize,
    cache_dir: &Path,
) -> Result<SweepResult> {
    grid.validate()?;
    let hash = grid.config_hash();
    let dir = cache_dir.join(&hash);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let pool = thread_pool(parallelism)?;
    let records = pool.install(|| {
        (0..grid.n_cells())
            .into_par_iter()
            .map(|i| {
                let path = cell_path(&dir, i);
                if let Some(rec) = read_cached(&path) {
                    return Ok(rec);
                }
                let rec = run_cell(grid, i);
                if rec.status != CellStatus::TimedOut {
                    write_cached(&path, &rec)?;
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SweepResult {
        grid: grid.clone(),
        records,
        provenance: Provenance::new(hash),
    })
}

pub fn cell_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("cell-{index}.json"))
}

fn read_cached(path: &Path) -> Option<MetricsRecord> {
    // a torn or foreign file is recomputed rather than trusted
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_cached(path: &Path, rec: &MetricsRecord) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let body = serde_json::to_vec(rec).expect("records always serialize");
    std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// One exported line: the swept parameters, the metrics and the status.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub z: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub g: f64,
    pub t_q: Option<f64>,
    pub f_star: Option<f64>,
    pub t_star: Option<f64>,
    pub status: CellStatus,
}

impl From<&MetricsRecord> for RecordRow {
    fn from(rec: &MetricsRecord) -> Self {
        Self {
            n: rec.params.n_sites,
            z: rec.params.coordination,
            alpha: rec.params.falloff,
            lambda: rec.params.anisotropy,
            g: rec.params.field,
            t_q: rec.t_q,
            f_star: rec.f_star,
            t_star: rec.t_star,
            status: rec.status,
        }
    }
}

impl RecordRow {
    /// Rebuilds the record, taking the unswept parameters from `fixed`.
    pub fn to_record(&self, fixed: &ModelParams) -> MetricsRecord {
        let mut params = *fixed;
        params.n_sites = self.n;
        params.coordination = self.z;
        params.falloff = self.alpha;
        params.anisotropy = self.lambda;
        params.field = self.g;
        MetricsRecord {
            params,
            t_q: self.t_q,
            f_star: self.f_star,
            t_star: self.t_star,
            status: self.status,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl ExportFormat {
    /// Picks JSONL for `.jsonl` / `.json` paths and CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json") => ExportFormat::Jsonl,
            _ => ExportFormat::Csv,
        }
    }
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "jsonl" => Ok(ExportFormat::Jsonl),
            _ => Err(Error::InvalidConfig(format!(
                "unknown format `{s}` (expected csv or jsonl)"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ProvenanceLine {
    provenance: Provenance,
}

impl SweepResult {
    pub fn rows(&self) -> Vec<RecordRow> {
        self.records.iter().map(RecordRow::from).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows() {
            w.serialize(row)?;
        }
        if self.records.is_empty() {
            w.write_record(CSV_HEADER)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = ProvenanceLine {
            provenance: self.provenance.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for row in self.rows() {
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn export(&self, path: &Path, format: ExportFormat) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let out = std::io::BufWriter::new(file);
        match format {
            ExportFormat::Csv => self.write_csv(out).map_err(|e| Error::parse(path, e)),
            ExportFormat::Jsonl => self.write_jsonl(out).map_err(|e| Error::io(path, e)),
        }
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "N", "z", "alpha", "lambda", "g", "t_q", "f_star", "t_star", "status",
];

pub fn read_csv(path: &Path) -> Result<Vec<RecordRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| Error::parse(path, e)))
        .collect()
}

/// Returns the provenance header and the rows of a JSONL export.
pub fn read_jsonl(path: &Path) -> Result<(Provenance, Vec<RecordRow>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::parse(path, "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    let header: ProvenanceLine =
        serde_json::from_str(&first).map_err(|e| Error::parse(path, format!("line 1: {e}")))?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", i + 2)))?;
        rows.push(row);
    }
    Ok((header.provenance, rows))
}
