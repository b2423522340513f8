//! Transfer amplitudes and the Bloch-sphere averaged transfer fidelity.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freefermion::{diagonalize, Propagators, TransferKernel};
use crate::model::{build_quadratic_form, ModelParams};

/// Best average fidelity reachable without an entangled channel.
pub const CLASSICAL_LIMIT: f64 = 2.0 / 3.0;

const AMPLITUDE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityPoint {
    pub time: f64,
    pub p: f64,
    pub q: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityTrace {
    pub params: ModelParams,
    pub times: Vec<f64>,
    pub points: Vec<FidelityPoint>,
}

/// `(p, q) = (|Phi_{N,1}|, |Psi_{N,1}|)`: sender is the first site, receiver the last.
pub fn transfer_amplitudes(prop: &Propagators) -> (f64, f64) {
    let n = prop.phi.nrows();
    (prop.phi[(n - 1, 0)].norm(), prop.psi[(n - 1, 0)].norm())
}

/// `f = 1/2 + |p^2 - q^2| / 6 + max(p, q) / 3`.
pub fn average_fidelity(p: f64, q: f64) -> Result<f64> {
    let p = check_amplitude("p", p)?;
    let q = check_amplitude("q", q)?;
    Ok(fidelity_formula(p, q))
}

fn check_amplitude(name: &'static str, value: f64) -> Result<f64> {
    if !(-AMPLITUDE_SLACK..=1.0 + AMPLITUDE_SLACK).contains(&value) {
        return Err(Error::AmplitudeOutOfRange { name, value });
    }
    Ok(value.clamp(0.0, 1.0))
}

#[inline]
fn fidelity_formula(p: f64, q: f64) -> f64 {
    0.5 + (p * p - q * q).abs() / 6.0 + p.max(q) / 3.0
}

/// Evaluates `f(t)` for one model instance from a single diagonalization.
#[derive(Debug, Clone)]
pub struct FidelityEvaluator {
    params: ModelParams,
    kernel: TransferKernel,
}

impl FidelityEvaluator {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let form = build_quadratic_form(params)?;
        let sol = diagonalize(&form)?;
        let n = params.n_sites;
        Ok(Self {
            params: *params,
            kernel: sol.transfer_kernel(n - 1, 0),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn point(&self, t: f64) -> FidelityPoint {
        let (phi, psi) = self.kernel.amplitudes(t);
        let p = phi.norm().min(1.0);
        let q = psi.norm().min(1.0);
        FidelityPoint {
            time: t,
            p,
            q,
            f: fidelity_formula(p, q),
        }
    }

    #[inline]
    pub fn fidelity(&self, t: f64) -> f64 {
        self.point(t).f
    }
}

/// Number of grid points `0, dt, 2dt, ... <= t_max`.
pub fn grid_len(t_max: f64, dt: f64) -> usize {
    // Absorb round-off so that t_max = k * dt lands on the grid.
    (t_max / dt * (1.0 + 1e-12)).floor() as usize + 1
}

pub fn fidelity_trace(params: &ModelParams, t_max: f64, dt: f64) -> Result<FidelityTrace> {
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "t_max = {t_max} must be positive"
        )));
    }
    if !(dt.is_finite() && dt > 0.0 && dt <= t_max) {
        return Err(Error::InvalidConfig(format!(
            "dt = {dt} must satisfy 0 < dt <= t_max = {t_max}"
        )));
    }
    let eval = FidelityEvaluator::new(params)?;
    let len = grid_len(t_max, dt);
    let times: Vec<f64> = (0..len).map(|i| i as f64 * dt).collect();
    let points = times.iter().map(|&t| eval.point(t)).collect();
    Ok(FidelityTrace {
        params: *params,
        times,
        points,
    })
}

impl FidelityTrace {
    /// CSV with header `t,p,q,f`, shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "p", "q", "f"])?;
        for pt in &self.points {
            w.write_record(&[
                pt.time.to_string(),
                pt.p.to_string(),
                pt.q.to_string(),
                pt.f.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file).map_err(|e| Error::parse(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freefermion::propagators;
    use proptest::prelude::*;

    #[test]
    fn anchor_values() {
        assert_eq!(average_fidelity(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(average_fidelity(0.0, 0.0).unwrap(), 0.5);
        assert_eq!(average_fidelity(0.5, 0.5).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(average_fidelity(1.1, 0.0).is_err());
        assert!(average_fidelity(0.2, -0.01).is_err());
        assert!(average_fidelity(f64::NAN, 0.0).is_err());
        // round-off slack
        assert_eq!(average_fidelity(1.0 + 1e-14, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn amplitudes_vanish_at_time_zero() {
        let p = ModelParams::new(7, 3, 1.0, 0.8, 0.5).unwrap();
        let sol = diagonalize(&build_quadratic_form(&p).unwrap()).unwrap();
        let (pa, qa) = transfer_amplitudes(&propagators(&sol, 0.0).unwrap());
        assert!(pa < 1e-12 && qa < 1e-12);
    }

    #[test]
    fn single_site_keeps_its_state() {
        let p = ModelParams::new(1, 1, 1.0, 0.0, 0.9).unwrap();
        let eval = FidelityEvaluator::new(&p).unwrap();
        for t in [0.0, 1.0, 17.3] {
            let pt = eval.point(t);
            assert!((pt.p - 1.0).abs() < 1e-14 && pt.q == 0.0);
        }
    }

    #[test]
    fn two_site_hopping_transfers_at_half_period() {
        // H restricted to one excitation is -1/2 sigma_x, so p(t) = |sin(t/2)|.
        let p = ModelParams::new(2, 1, 1.0, 0.0, 0.0).unwrap();
        let eval = FidelityEvaluator::new(&p).unwrap();
        for t in [0.3, 1.1, 2.5, 4.0] {
            assert!((eval.point(t).p - (t / 2.0).sin().abs()).abs() < 1e-13);
        }
        let peak = eval.point(std::f64::consts::PI);
        assert!((peak.f - 1.0).abs() < 1e-14);
    }

    #[test]
    fn trace_grid() {
        let p = ModelParams::new(5, 2, 1.0, 0.3, 0.4).unwrap();
        let tr = fidelity_trace(&p, 1.0, 0.1).unwrap();
        assert_eq!(tr.times.len(), 11);
        assert!((tr.points[0].f - 0.5).abs() < 1e-15);
        let tr = fidelity_trace(&p, 50.0, 0.05).unwrap();
        assert_eq!(tr.points.len(), 1001);
        assert!(fidelity_trace(&p, 1.0, 0.0).is_err());
        assert!(fidelity_trace(&p, 1.0, 2.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let p = ModelParams::new(3, 1, 1.0, 0.0, 0.0).unwrap();
        let tr = fidelity_trace(&p, 0.2, 0.1).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,p,q,f");
        let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[0], 0.0);
        assert!(first[1] < 1e-15 && first[2] < 1e-15);
        assert!((first[3] - 0.5).abs() < 1e-15);
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn reference_instance_crosses_classical_limit() {
        // nearest-neighbour chain of 25 sites at lambda = 0.5, g = 0.7
        let p = ModelParams::new(25, 1, 2.3, 0.5, 0.7).unwrap();
        let tr = fidelity_trace(&p, 40.0, 0.01).unwrap();
        let first = tr
            .points
            .iter()
            .find(|pt| pt.f - CLASSICAL_LIMIT > 1e-4)
            .unwrap();
        assert!((first.time - 30.84).abs() < 0.5, "{}", first.time);
    }

    proptest! {
        #[test]
        fn range_and_identities(p in 0.0..=1.0f64, q in 0.0..=1.0f64) {
            let f = average_fidelity(p, q).unwrap();
            prop_assert!((0.5..=1.0).contains(&f));
            // the closed form only sees |p^2 - q^2| and max(p, q)
            prop_assert_eq!(f, average_fidelity(q, p).unwrap());
            if p == q {
                prop_assert!((f - (0.5 + p / 3.0)).abs() < 1e-15);
            }
        }

        #[test]
        fn monotone_in_larger_amplitude(p in 0.0..0.9f64, q in 0.0..0.9f64, bump in 0.0..0.1f64) {
            // raising both amplitudes along p^2 - q^2 = const raises max(p, q)
            let d = p * p - q * q;
            let p2 = p + bump;
            let q2 = (p2 * p2 - d).max(0.0).sqrt();
            prop_assume!(q2 <= 1.0 && ((p2 * p2 - q2 * q2) - d).abs() < 1e-12);
            prop_assert!(average_fidelity(p2, q2).unwrap() >= average_fidelity(p, q).unwrap() - 1e-15);
        }

        #[test]
        fn xx_model_has_no_anomalous_amplitude(
            n in 2usize..16, alpha in 0.0..3.0f64, g in -2.0..2.0f64, t in 0.0..50.0f64,
        ) {
            let params = ModelParams::new(n, n - 1, alpha, 0.0, g).unwrap();
            let pt = FidelityEvaluator::new(&params).unwrap().point(t);
            prop_assert!(pt.q < 1e-12);
            prop_assert!((pt.f - (0.5 + pt.p * pt.p / 6.0 + pt.p / 3.0)).abs() < 1e-10);
        }

        #[test]
        fn fine_grid_is_smooth(alpha in 0.5..3.0f64, lambda in 0.0..1.3f64, g in 0.0..2.0f64) {
            let params = ModelParams::new(12, 5, alpha, lambda, g).unwrap();
            let tr = fidelity_trace(&params, 30.0, 0.01).unwrap();
            for w in tr.points.windows(2) {
                prop_assert!((w[1].f - w[0].f).abs() < 0.05);
            }
        }
    }
}
