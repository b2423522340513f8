use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use lrxy_core::fitting::{fit_scaling, read_points_csv};
use lrxy_core::oracle::{protocol_fidelity, Quadrature, MAX_DENSE_SITES};
use lrxy_core::provenance::{config_hash, Provenance};
use lrxy_core::sweep::{run_sweep, run_sweep_resumable, ExportFormat, RecordRow};
use lrxy_core::{
    evaluate_cell, fidelity_trace, CellStatus, Error, FidelityEvaluator, ModelParams,
    CLASSICAL_LIMIT,
};

use crate::config::RunConfig;

fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance::new(config_hash(cfg))
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// CSV cannot hold a header comment, so its provenance goes next to it.
fn write_sidecar(out: &Path, prov: &Provenance, cfg: &RunConfig) -> Result<PathBuf> {
    let mut name = out.as_os_str().to_owned();
    name.push(".provenance.json");
    let path = PathBuf::from(name);
    let body = json!({ "provenance": prov, "config": cfg });
    std::fs::write(&path, serde_json::to_string_pretty(&body)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_json<T: Serialize>(cfg: &RunConfig, value: &T) -> Result<()> {
    let mut out = open_out(cfg.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn trace(cfg: &RunConfig) -> Result<()> {
    let params = cfg.model()?;
    let metrics = cfg.metrics()?;
    let t_max = cfg.trace_horizon(&params);
    let tr = fidelity_trace(&params, t_max, metrics.dt)?;
    let out = open_out(cfg.out.as_deref())?;
    tr.write_csv(out).context("writing trace")?;
    if let Some(path) = &cfg.out {
        write_sidecar(path, &provenance(cfg), cfg)?;
    }
    Ok(())
}

pub fn metrics(cfg: &RunConfig) -> Result<()> {
    let params = cfg.model()?;
    let metrics = cfg.metrics()?;
    metrics.validate_for(&params)?;
    let rec = evaluate_cell(&params, &metrics)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    eprintln!(
        "N={} z={} alpha={} lambda={} g={}: {} (t_q {}, f* {}, t* {}, horizon {})",
        params.n_sites,
        params.coordination,
        params.falloff,
        params.anisotropy,
        params.field,
        rec.status,
        fmt(rec.t_q),
        fmt(rec.f_star),
        fmt(rec.t_star),
        metrics.horizon(&params),
    );
    let body = json!({
        "provenance": provenance(cfg),
        "params": params,
        "metrics": metrics,
        "record": RecordRow::from(&rec),
    });
    write_json(cfg, &body)
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let grid = cfg.sweep_grid()?;
    let parallelism = match cfg.parallelism {
        Some(p) => p,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let result = match &cfg.cache_dir {
        Some(dir) => run_sweep_resumable(&grid, parallelism, dir)?,
        None => run_sweep(&grid, parallelism)?,
    };
    let format = cfg
        .format
        .or_else(|| cfg.out.as_deref().map(ExportFormat::from_path))
        .unwrap_or(ExportFormat::Csv);
    match &cfg.out {
        Some(path) => {
            result.export(path, format)?;
            if format == ExportFormat::Csv {
                write_sidecar(path, &result.provenance, cfg)?;
            }
        }
        None => {
            let out = io::stdout().lock();
            match format {
                ExportFormat::Csv => result.write_csv(out)?,
                ExportFormat::Jsonl => result.write_jsonl(out)?,
            }
        }
    }
    let count = |s: CellStatus| result.records.iter().filter(|r| r.status == s).count();
    eprintln!(
        "{} cells: {} found, {} without advantage, {} invalid, {} timed out, {} failed",
        result.records.len(),
        count(CellStatus::Found),
        count(CellStatus::NoAdvantageWithinHorizon),
        count(CellStatus::InvalidCell),
        count(CellStatus::TimedOut),
        count(CellStatus::ComputeFailed),
    );
    Ok(())
}

pub fn fit(cfg: &RunConfig) -> Result<()> {
    let input = cfg
        .input
        .as_deref()
        .context("fit needs `input` (or --input) naming an N,f_star CSV")?;
    let points = read_points_csv(input)?;
    let fix_a = cfg.fix_a.unwrap_or(false);
    let (result, converged) = match fit_scaling(&points, fix_a) {
        Ok(r) => (r, true),
        Err(Error::FitNoConvergence { best, .. }) => {
            eprintln!("warning: fit did not converge; reporting the best parameters found");
            (*best, false)
        }
        Err(e) => return Err(e.into()),
    };
    let target = cfg.target.unwrap_or(CLASSICAL_LIMIT);
    eprintln!(
        "a = {:.6}, b = {:.6e}, eta = {:.6}, rms = {:.3e} over {} points",
        result.a,
        result.b,
        result.eta,
        result.residual,
        points.len()
    );
    let body = json!({
        "provenance": provenance(cfg),
        "fit": result,
        "converged": converged,
        "points": points.len(),
        "target": target,
        "n_at_target": result.solve_for(target),
    });
    write_json(cfg, &body)
}

#[derive(Serialize)]
struct OracleSample {
    params: ModelParams,
    t: f64,
    free_fermion: f64,
    oracle: f64,
    deviation: f64,
}

pub fn oracle_check(cfg: &RunConfig) -> Result<()> {
    let base = cfg.model()?;
    let n = base.n_sites;
    if !(2..=MAX_DENSE_SITES).contains(&n) {
        bail!("oracle-check needs 2 <= n_sites <= {MAX_DENSE_SITES}, got {n}");
    }
    let samples = cfg.samples.unwrap_or(5);
    let seed = cfg.seed.unwrap_or(0);
    let tolerance = cfg.tolerance.unwrap_or(1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Vec::with_capacity(samples);
    let mut attempts = 0;
    while report.len() < samples {
        attempts += 1;
        if attempts > 20 * samples.max(1) {
            bail!("could not draw {samples} instances with a non-degenerate ground state");
        }
        let mut params = base;
        params.coordination = rng.random_range(1..n);
        params.falloff = rng.random_range(0.5..=3.0);
        params.anisotropy = rng.random_range(0.0..=1.5);
        params.field = 2.0 - rng.random_range(0.0..1.0);
        let t = rng.random_range(0.0..=3.0 * n as f64);
        let oracle = match protocol_fidelity(&params, t, Quadrature::Cardinal) {
            Ok(f) => f,
            Err(Error::DegenerateGroundState { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let free_fermion = FidelityEvaluator::new(&params)?.fidelity(t);
        report.push(OracleSample {
            params,
            t,
            free_fermion,
            oracle,
            deviation: (free_fermion - oracle).abs(),
        });
    }
    let max_deviation = report.iter().map(|s| s.deviation).fold(0.0, f64::max);
    let passed = max_deviation < tolerance;
    eprintln!(
        "{samples} samples at N = {n}: max deviation {max_deviation:.3e} (tolerance {tolerance:e})"
    );
    let body = json!({
        "provenance": provenance(cfg),
        "seed": seed,
        "tolerance": tolerance,
        "samples": report,
        "max_deviation": max_deviation,
        "passed": passed,
    });
    write_json(cfg, &body)?;
    if !passed {
        bail!("oracle deviation {max_deviation:e} exceeds tolerance {tolerance:e}");
    }
    Ok(())
}
