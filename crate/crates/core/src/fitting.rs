//! Least-squares fit of `f*(N) = a exp(-b N^eta)` to system-size data.
//!
//! `eta` carries its sign, so both `exp(-b N^eta)` and `exp(-b N^-eta)`
//! readings are covered. The fit runs a coarse grid over `(ln b, eta)` and
//! polishes the best cell with Levenberg-Marquardt.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub eta: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    pub fixed_a: bool,
    /// `b N^eta` varies by less than 1e-8 across the data: the curve is flat.
    pub no_decay: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn predict(&self, n: f64) -> f64 {
        self.a * (-self.b * n.powf(self.eta)).exp()
    }

    /// System size at which the fitted curve equals `value`, if it ever does.
    pub fn solve_for(&self, value: f64) -> Option<f64> {
        let x = (self.a / value).ln() / self.b;
        if x.is_nan() || x <= 0.0 || self.eta == 0.0 {
            return None;
        }
        let n = x.powf(1.0 / self.eta);
        n.is_finite().then_some(n)
    }
}

const LN_B_RANGE: (f64, f64) = (-13.8, 2.3); // b in [1e-6, 10]
const LN_B_FLOOR: f64 = -60.0;
const ETA_RANGE: (f64, f64) = (-3.0, 3.0);
const GRID_B: usize = 81;
const GRID_ETA: usize = 121;
const MAX_ITER: usize = 2000;

struct Problem<'a> {
    n: &'a [f64],
    y: &'a [f64],
    fixed_a: bool,
}

impl Problem<'_> {
    /// Best `a` for fixed `(ln b, eta)`, by linear least squares.
    fn best_a(&self, ln_b: f64, eta: f64) -> f64 {
        if self.fixed_a {
            return 1.0;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (n, y) in self.n.iter().zip(self.y) {
            let g = (-(ln_b + eta * n.ln()).exp()).exp();
            num += y * g;
            den += g * g;
        }
        if den > 0.0 {
            num / den
        } else {
            1.0
        }
    }

    fn sse(&self, a: f64, ln_b: f64, eta: f64) -> f64 {
        self.n
            .iter()
            .zip(self.y)
            .map(|(n, y)| {
                let r = a * (-(ln_b + eta * n.ln()).exp()).exp() - y;
                r * r
            })
            .sum()
    }

    /// Parameter vector is `[ln b, eta]` or `[ln b, eta, a]`.
    fn unpack(&self, x: &[f64]) -> (f64, f64, f64) {
        let a = if self.fixed_a { 1.0 } else { x[2] };
        (a, x[0], x[1])
    }

    fn residuals_and_jacobian(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (a, ln_b, eta) = self.unpack(x);
        let mut r = Vec::with_capacity(self.n.len());
        let mut jac = Vec::with_capacity(self.n.len());
        for (n, y) in self.n.iter().zip(self.y) {
            let ln_n = n.ln();
            let s = (ln_b + eta * ln_n).exp();
            let g = (-s).exp();
            r.push(a * g - y);
            let mut row = vec![-a * g * s, -a * g * s * ln_n];
            if !self.fixed_a {
                row.push(g);
            }
            jac.push(row);
        }
        (r, jac)
    }
}

fn validate_points(points: &[(f64, f64)]) -> Result<()> {
    if points.len() < 4 {
        return Err(Error::InvalidFitInput(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    if points
        .windows(2)
        .any(|w| w[1].0.partial_cmp(&w[0].0) != Some(std::cmp::Ordering::Greater))
    {
        return Err(Error::InvalidFitInput(
            "N must be strictly increasing".into(),
        ));
    }
    if let Some(&(n, _)) = points.iter().find(|(n, _)| !(n.is_finite() && *n > 0.0)) {
        return Err(Error::InvalidFitInput(format!("N = {n} must be positive")));
    }
    if let Some(&(_, f)) = points.iter().find(|(_, f)| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::InvalidFitInput(format!("f* = {f} outside (0, 1]")));
    }
    Ok(())
}

fn solve_small(m: Vec<Vec<f64>>, rhs: Vec<f64>) -> Option<Vec<f64>> {
    let k = rhs.len();
    let mat = DMatrix::from_fn(k, k, |i, j| m[i][j]);
    let x = mat.lu().solve(&DVector::from_vec(rhs))?;
    x.iter()
        .all(|v| v.is_finite())
        .then(|| x.iter().copied().collect())
}

/// Levenberg-Marquardt from `x0`. Returns `(x, sse, iterations, converged)`.
fn levenberg_marquardt(problem: &Problem, x0: Vec<f64>) -> (Vec<f64>, f64, usize, bool) {
    let k = x0.len();
    let sse_of = |x: &[f64]| {
        let (a, ln_b, eta) = problem.unpack(x);
        problem.sse(a, ln_b, eta)
    };
    let mut x = x0;
    let mut sse = sse_of(&x);
    let mut mu = 1e-3;
    for iter in 1..=MAX_ITER {
        if sse < 1e-28 {
            return (x, sse, iter, true);
        }
        let (r, jac) = problem.residuals_and_jacobian(&x);
        let mut jtj = vec![vec![0.0; k]; k];
        let mut jtr = vec![0.0; k];
        for (row, ri) in jac.iter().zip(&r) {
            for i in 0..k {
                jtr[i] += row[i] * ri;
                for j in 0..k {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let grad = jtr.iter().map(|g| g.abs()).fold(0.0, f64::max);
        if grad < 1e-15 * (1.0 + sse) {
            return (x, sse, iter, true);
        }
        let mut improved = false;
        while mu < 1e20 {
            let mut damped = jtj.clone();
            for i in 0..k {
                damped[i][i] += mu * jtj[i][i].max(1e-12);
            }
            let Some(step) = solve_small(damped, jtr.iter().map(|g| -g).collect()) else {
                mu *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            trial[0] = trial[0].max(LN_B_FLOOR);
            let trial_sse = sse_of(&trial);
            if trial_sse < sse {
                let rel = (sse - trial_sse) / sse.max(1e-300);
                let step_norm = step.iter().map(|s| s.abs()).fold(0.0, f64::max);
                x = trial;
                sse = trial_sse;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-15 && step_norm < 1e-12 {
                    return (x, sse, iter, true);
                }
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            // no descent direction left at machine precision
            return (x, sse, iter, true);
        }
    }
    (x, sse, MAX_ITER, false)
}

pub fn fit_scaling(points: &[(f64, f64)], fix_a_to_one: bool) -> Result<FitResult> {
    validate_points(points)?;
    let n: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let problem = Problem {
        n: &n,
        y: &y,
        fixed_a: fix_a_to_one,
    };

    let mut starts: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..GRID_B {
        let ln_b = LN_B_RANGE.0 + (LN_B_RANGE.1 - LN_B_RANGE.0) * i as f64 / (GRID_B - 1) as f64;
        for j in 0..GRID_ETA {
            let eta = ETA_RANGE.0 + (ETA_RANGE.1 - ETA_RANGE.0) * j as f64 / (GRID_ETA - 1) as f64;
            let a = problem.best_a(ln_b, eta);
            let sse = problem.sse(a, ln_b, eta);
            if sse < best.0 {
                best = (sse, ln_b, eta);
            }
        }
    }
    let (_, ln_b, eta) = best;
    let mut x0 = vec![ln_b, eta];
    if !fix_a_to_one {
        x0.push(problem.best_a(ln_b, eta));
    }
    starts.push((best.0, x0));
    if !fix_a_to_one {
        // the a = 1 optimum is feasible here, so the free fit can only do better
        if let Ok(fixed) = fit_scaling(points, true) {
            starts.push((0.0, vec![fixed.b.ln(), fixed.eta, 1.0]));
        }
    }

    let mut outcome: Option<(Vec<f64>, f64, usize, bool)> = None;
    for (_, x0) in starts {
        let run = levenberg_marquardt(&problem, x0);
        if outcome.as_ref().is_none_or(|o| run.1 < o.1) {
            outcome = Some(run);
        }
    }
    let (x, sse, iterations, converged) = outcome.expect("at least one start");
    let (a, ln_b, eta) = problem.unpack(&x);
    let b = ln_b.exp();
    let decay: Vec<f64> = n.iter().map(|n| b * n.powf(eta)).collect();
    let spread = decay.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - decay.iter().cloned().fold(f64::INFINITY, f64::min);
    let result = FitResult {
        a,
        b,
        eta,
        residual: (sse / n.len() as f64).sqrt(),
        fixed_a: fix_a_to_one,
        no_decay: spread < 1e-8,
        iterations,
    };
    if !converged {
        return Err(Error::FitNoConvergence {
            iterations,
            rms: result.residual,
            best: Box::new(result),
        });
    }
    Ok(result)
}

#[derive(Debug, Deserialize)]
struct PointRow {
    #[serde(rename = "N")]
    n: f64,
    f_star: f64,
}

/// Reads `N,f_star` rows. Rows with an empty `f_star` are skipped.
pub fn read_points_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    let headers = reader.headers().map_err(|e| Error::parse(path, e))?.clone();
    let mut points = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::parse(path, e))?;
        let f_idx = headers.iter().position(|h| h == "f_star");
        if f_idx.is_some_and(|i| row.get(i).is_some_and(str::is_empty)) {
            continue;
        }
        let parsed: PointRow = row
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(path, e))?;
        points.push((parsed.n, parsed.f_star));
    }
    Ok(points)
}
