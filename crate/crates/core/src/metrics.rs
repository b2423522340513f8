//! Figures of merit extracted from the fidelity curve `f(t)`.
//!
//! * `t_q`: earliest time with `f - 2/3 > epsilon`, found on a grid and then
//!   bisected to [`BISECTION_TOL`].
//! * `f*`, `t*`: value and time of the first local maximum of `f` at or after `t_q`.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::{FidelityEvaluator, CLASSICAL_LIMIT};
use crate::model::ModelParams;

pub const BISECTION_TOL: f64 = 1e-6;

/// Horizon used when none is configured, in units of `N / J`.
pub const DEFAULT_HORIZON_PER_SITE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub epsilon: f64,
    /// Search horizon for `t_q`; `None` means `5 N / J`.
    pub t_max: Option<f64>,
    pub dt: f64,
    pub classical_limit: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            t_max: None,
            dt: 0.05,
            classical_limit: CLASSICAL_LIMIT,
        }
    }
}

impl MetricsConfig {
    pub fn with_horizon(mut self, t_max: f64) -> Self {
        self.t_max = Some(t_max);
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn horizon(&self, params: &ModelParams) -> f64 {
        self.t_max
            .unwrap_or(DEFAULT_HORIZON_PER_SITE * params.n_sites as f64 / params.coupling_scale)
    }

    /// Checks the parts of the config that do not depend on a model instance.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0 / 3.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon = {} must lie in (0, 1/3)",
                self.epsilon
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        if let Some(t_max) = self.t_max {
            if !(t_max.is_finite() && t_max > self.dt) {
                return Err(Error::InvalidConfig(format!(
                    "t_max = {t_max} must be finite and exceed dt = {}",
                    self.dt
                )));
            }
        }
        if !(0.5..1.0).contains(&self.classical_limit) {
            return Err(Error::InvalidConfig(format!(
                "classical limit {} outside [1/2, 1)",
                self.classical_limit
            )));
        }
        Ok(())
    }

    /// Checks the config together with the instance it will be applied to.
    pub fn validate_for(&self, params: &ModelParams) -> Result<()> {
        self.validate()?;
        params.validate()?;
        let horizon = self.horizon(params);
        if horizon <= self.dt {
            return Err(Error::InvalidConfig(format!(
                "horizon {horizon} must exceed dt = {}",
                self.dt
            )));
        }
        Ok(())
    }

    fn threshold(&self) -> f64 {
        self.classical_limit + self.epsilon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellStatus {
    Found,
    NoAdvantageWithinHorizon,
    /// Parameters violate the model constraints (sweeps only).
    InvalidCell,
    /// Cell exceeded its wall-clock budget (sweeps only).
    TimedOut,
    /// Numerical failure inside the cell (sweeps only).
    ComputeFailed,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Found => "found",
            CellStatus::NoAdvantageWithinHorizon => "no-advantage-within-horizon",
            CellStatus::InvalidCell => "invalid-cell",
            CellStatus::TimedOut => "timed-out",
            CellStatus::ComputeFailed => "compute-failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            CellStatus::Found,
            CellStatus::NoAdvantageWithinHorizon,
            CellStatus::InvalidCell,
            CellStatus::TimedOut,
            CellStatus::ComputeFailed,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
    }
}

impl std::fmt::Display for CellStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub params: ModelParams,
    pub t_q: Option<f64>,
    pub f_star: Option<f64>,
    pub t_star: Option<f64>,
    pub status: CellStatus,
}

impl MetricsRecord {
    pub fn empty(params: ModelParams, status: CellStatus) -> Self {
        Self {
            params,
            t_q: None,
            f_star: None,
            t_star: None,
            status,
        }
    }
}

/// Optional wall-clock limit, polled from inside the time scans.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Budget {
    deadline: Option<(Instant, f64)>,
}

impl Budget {
    pub(crate) const UNLIMITED: Budget = Budget { deadline: None };

    pub(crate) fn seconds(secs: Option<f64>) -> Self {
        Budget {
            deadline: secs.map(|s| (Instant::now() + Duration::from_secs_f64(s), s)),
        }
    }

    fn check(&self) -> Result<()> {
        match self.deadline {
            Some((at, secs)) if Instant::now() > at => Err(Error::TimedOut(secs)),
            _ => Ok(()),
        }
    }
}

const POLL_EVERY: usize = 4096;

/// Grid index and refined time of the first threshold crossing.
fn scan_crossing(
    eval: &FidelityEvaluator,
    config: &MetricsConfig,
    budget: Budget,
) -> Result<Option<(usize, f64)>> {
    let threshold = config.threshold();
    let horizon = config.horizon(eval.params());
    let dt = config.dt;
    let steps = crate::fidelity::grid_len(horizon, dt);
    for i in 0..steps {
        if i % POLL_EVERY == POLL_EVERY - 1 {
            budget.check()?;
        }
        let t = i as f64 * dt;
        if eval.fidelity(t) > threshold {
            if i == 0 {
                return Ok(Some((0, 0.0)));
            }
            let (mut lo, mut hi) = ((i - 1) as f64 * dt, t);
            while hi - lo > BISECTION_TOL {
                let mid = 0.5 * (lo + hi);
                if eval.fidelity(mid) > threshold {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(Some((i, hi)));
        }
    }
    Ok(None)
}

/// First local maximum of `f` at or after the crossing at grid index `start`.
fn first_peak(
    eval: &FidelityEvaluator,
    config: &MetricsConfig,
    start: usize,
    t_q: f64,
    budget: Budget,
) -> Result<(f64, f64)> {
    let dt = config.dt;
    let at = |k: usize| eval.fidelity(k as f64 * dt);
    // f is quasi-periodic, so the climb ends long before this cap
    let cap = start + 2 * crate::fidelity::grid_len(config.horizon(eval.params()), dt);
    let mut k = start;
    let mut here = at(k);
    let mut next = at(k + 1);
    while next >= here && k < cap {
        if k % POLL_EVERY == POLL_EVERY - 1 {
            budget.check()?;
        }
        k += 1;
        here = next;
        next = at(k + 1);
    }
    let mut best = (k as f64 * dt, here);
    if k > 0 {
        let prev = at(k - 1);
        let curvature = prev - 2.0 * here + next;
        if curvature < 0.0 {
            let shift = 0.5 * (prev - next) / curvature;
            let t = (k as f64 + shift.clamp(-1.0, 1.0)) * dt;
            let t = t.max(t_q);
            let f = eval.fidelity(t);
            if f > best.1 {
                best = (t, f);
            }
        }
    }
    Ok(best)
}

pub fn find_tq(params: &ModelParams, config: &MetricsConfig) -> Result<Option<f64>> {
    config.validate_for(params)?;
    let eval = FidelityEvaluator::new(params)?;
    Ok(scan_crossing(&eval, config, Budget::UNLIMITED)?.map(|(_, t)| t))
}

/// `(f*, t*)`, or `None` when the threshold is never crossed within the horizon.
pub fn find_fstar(params: &ModelParams, config: &MetricsConfig) -> Result<Option<(f64, f64)>> {
    let rec = evaluate_cell(params, config)?;
    Ok(rec.f_star.zip(rec.t_star))
}

/// `t_q`, `f*` and `t*` for one instance from a single diagonalization.
pub fn evaluate_cell(params: &ModelParams, config: &MetricsConfig) -> Result<MetricsRecord> {
    evaluate_cell_within(params, config, Budget::UNLIMITED)
}

pub(crate) fn evaluate_cell_within(
    params: &ModelParams,
    config: &MetricsConfig,
    budget: Budget,
) -> Result<MetricsRecord> {
    config.validate_for(params)?;
    let eval = FidelityEvaluator::new(params)?;
    match scan_crossing(&eval, config, budget)? {
        None => Ok(MetricsRecord::empty(
            *params,
            CellStatus::NoAdvantageWithinHorizon,
        )),
        Some((index, t_q)) => {
            let (t_star, f_star) = first_peak(&eval, config, index, t_q, budget)?;
            Ok(MetricsRecord {
                params: *params,
                t_q: Some(t_q),
                f_star: Some(f_star),
                t_star: Some(t_star),
                status: CellStatus::Found,
            })
        }
    }
}

/// Evaluates every instance in parallel; output order follows input order.
pub fn evaluate_family(
    family: &[ModelParams],
    config: &MetricsConfig,
) -> Result<Vec<MetricsRecord>> {
    family
        .par_iter()
        .map(|p| evaluate_cell(p, config))
        .collect()
}

/// `t_q` as a function of the interaction range `z = 1..N-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TqSaturation {
    pub per_z: Vec<(usize, Option<f64>)>,
    /// `t_q` at the largest `z` with a crossing (normally `z = N - 1`).
    pub t_q_sat: f64,
    pub z_sat: usize,
    /// True when the trailing `ceil(N/5)` values spread by less than 2 %.
    pub saturated: bool,
    /// True when some `z` had no crossing and was left out.
    pub partial: bool,
}

/// Relative spread under which the trailing `t_q(z)` values count as saturated.
pub const SATURATION_SPREAD: f64 = 0.02;

pub fn tq_saturation_in_z(base: &ModelParams, config: &MetricsConfig) -> Result<TqSaturation> {
    let n = base.n_sites;
    if n < 2 {
        return Err(Error::InvalidModel(
            "a z family needs at least two sites".into(),
        ));
    }
    let family: Vec<ModelParams> = (1..n).map(|z| base.with_coordination(z)).collect();
    let records = evaluate_family(&family, config)?;
    let per_z: Vec<(usize, Option<f64>)> = records
        .iter()
        .map(|r| (r.params.coordination, r.t_q))
        .collect();
    saturation_from(per_z, n)
}

fn saturation_from(per_z: Vec<(usize, Option<f64>)>, n: usize) -> Result<TqSaturation> {
    let partial = per_z.iter().any(|(_, t)| t.is_none());
    let (z_sat, t_q_sat) = per_z
        .iter()
        .rev()
        .find_map(|&(z, t)| t.map(|t| (z, t)))
        .ok_or(Error::NoAdvantageInFamily)?;
    let window = n.div_ceil(5).max(1);
    let tail: Vec<f64> = per_z
        .iter()
        .rev()
        .take(window)
        .filter_map(|(_, t)| *t)
        .collect();
    let saturated = if tail.is_empty() {
        false
    } else {
        let max = tail.iter().cloned().fold(f64::MIN, f64::max);
        let min = tail.iter().cloned().fold(f64::MAX, f64::min);
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        (max - min) / mean.abs() < SATURATION_SPREAD
    };
    Ok(TqSaturation {
        per_z,
        t_q_sat,
        z_sat,
        saturated,
        partial,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTq {
    pub mean: f64,
    pub found: usize,
    pub total: usize,
    pub per_z: Vec<(usize, Option<f64>)>,
}

/// Arithmetic mean of `t_q` over `z = 1..N-1`, skipping cells without a crossing.
pub fn mean_tq_over_z(base: &ModelParams, config: &MetricsConfig) -> Result<MeanTq> {
    let n = base.n_sites;
    if n < 2 {
        return Err(Error::InvalidModel(
            "a z family needs at least two sites".into(),
        ));
    }
    let family: Vec<ModelParams> = (1..n).map(|z| base.with_coordination(z)).collect();
    let records = evaluate_family(&family, config)?;
    let per_z: Vec<(usize, Option<f64>)> = records
        .iter()
        .map(|r| (r.params.coordination, r.t_q))
        .collect();
    let found: Vec<f64> = per_z.iter().filter_map(|(_, t)| *t).collect();
    if found.is_empty() {
        return Err(Error::NoAdvantageInFamily);
    }
    Ok(MeanTq {
        mean: found.iter().sum::<f64>() / found.len() as f64,
        found: found.len(),
        total: per_z.len(),
        per_z,
    })
}

/// Non-monotonicity of `f*` in the fall-off at maximal range `z = N - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaFstar {
    pub per_alpha: Vec<(f64, Option<f64>)>,
    pub f_star_max: f64,
    pub alpha_at_max: f64,
    /// `f*` at the largest fall-off of the family.
    pub f_star_sat: f64,
    pub alpha_sat: f64,
    pub delta: f64,
}

/// Fall-off values: 0.5 to 4 in steps of 0.05, then 4.5 to 10 in steps of 0.5.
pub fn default_alpha_family() -> Vec<f64> {
    let fine = (0..=70).map(|i| 0.5 + 0.05 * i as f64);
    let coarse = (1..=12).map(|i| 4.0 + 0.5 * i as f64);
    fine.chain(coarse).collect()
}

fn validate_alpha_family(alphas: &[f64]) -> Result<()> {
    if alphas
        .windows(2)
        .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
    {
        return Err(Error::InvalidConfig(
            "alpha family must be strictly increasing".into(),
        ));
    }
    let (first, last) = match (alphas.first(), alphas.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(Error::InvalidConfig("alpha family is empty".into())),
    };
    if first > 0.5 + 1e-9 || last < 8.0 {
        return Err(Error::InvalidConfig(format!(
            "alpha family [{first}, {last}] must span [0.5, 8]"
        )));
    }
    let coarse = alphas
        .windows(2)
        .any(|w| w[1] > 1.5 && w[0] < 3.0 && w[1] - w[0] > 0.1 + 1e-9);
    if coarse {
        return Err(Error::InvalidConfig(
            "alpha family needs spacing <= 0.1 on [1.5, 3]".into(),
        ));
    }
    Ok(())
}

pub fn delta_fstar(
    base: &ModelParams,
    alphas: &[f64],
    config: &MetricsConfig,
) -> Result<DeltaFstar> {
    validate_alpha_family(alphas)?;
    let full = base.with_coordination(base.n_sites.saturating_sub(1));
    let family: Vec<ModelParams> = alphas.iter().map(|&a| full.with_falloff(a)).collect();
    let records = evaluate_family(&family, config)?;
    let per_alpha: Vec<(f64, Option<f64>)> = records
        .iter()
        .map(|r| (r.params.falloff, r.f_star))
        .collect();
    let (alpha_at_max, f_star_max) = per_alpha
        .iter()
        .filter_map(|&(a, f)| f.map(|f| (a, f)))
        .fold(None, |acc: Option<(f64, f64)>, (a, f)| match acc {
            Some((_, best)) if best >= f => acc,
            _ => Some((a, f)),
        })
        .ok_or(Error::NoAdvantageInFamily)?;
    let (alpha_sat, f_star_sat) = match per_alpha.last() {
        Some(&(a, Some(f))) => (a, f),
        _ => return Err(Error::NoAdvantageInFamily),
    };
    Ok(DeltaFstar {
        per_alpha,
        f_star_max,
        alpha_at_max,
        f_star_sat,
        alpha_sat,
        delta: f_star_max - f_star_sat,
    })
}
