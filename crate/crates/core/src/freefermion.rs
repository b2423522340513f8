//! Bogoliubov diagonalization and Heisenberg-picture propagators.
//!
//! Quasiparticles are `eta_q = sum_m (A_qm c_m + B_qm c_m^+)` with
//! `[H, eta_q] = -e_q eta_q`. Writing `phi = A + B`, `psi = A - B` turns the
//! Bogoliubov-de Gennes problem into `(P + Q) phi = e psi` and
//! `(P - Q) psi = e phi`, i.e. one SVD of `P + Q`.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::model::QuadraticForm;

pub type C64 = Complex<f64>;

/// Energies below this, relative to the largest matrix element, are exact zero modes.
pub const ZERO_MODE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct BogoliubovSolution {
    /// Row `q` holds the particle amplitudes of mode `q`.
    pub amp_a: DMatrix<f64>,
    /// Row `q` holds the hole amplitudes of mode `q`.
    pub amp_b: DMatrix<f64>,
    /// Quasiparticle energies, ascending and non-negative.
    pub energies: Vec<f64>,
}

impl BogoliubovSolution {
    pub fn n_modes(&self) -> usize {
        self.energies.len()
    }

    /// Largest elementwise violation of `AA^T + BB^T = I` and `AB^T + BA^T = 0`.
    pub fn canonicity_error(&self) -> f64 {
        let (a, b) = (&self.amp_a, &self.amp_b);
        let n = self.n_modes();
        let norm = a * a.transpose() + b * b.transpose() - DMatrix::<f64>::identity(n, n);
        let cross = a * b.transpose() + b * a.transpose();
        norm.amax().max(cross.amax())
    }

    /// Rebuild `(P, Q)` from the diagonal form.
    pub fn reconstruct(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let e = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.energies));
        let (a, b) = (&self.amp_a, &self.amp_b);
        let p = a.transpose() * &e * a - b.transpose() * &e * b;
        let q = a.transpose() * &e * b - b.transpose() * &e * a;
        (p, q)
    }

    /// Kernel for the `(row, col)` entries of `Phi(t)` and `Psi(t)`.
    pub fn transfer_kernel(&self, row: usize, col: usize) -> TransferKernel {
        let (a, b) = (&self.amp_a, &self.amp_b);
        let n = self.n_modes();
        let mut k = TransferKernel {
            energies: self.energies.clone(),
            phi_neg: Vec::with_capacity(n),
            phi_pos: Vec::with_capacity(n),
            psi_neg: Vec::with_capacity(n),
            psi_pos: Vec::with_capacity(n),
        };
        for q in 0..n {
            k.phi_neg.push(a[(q, row)] * a[(q, col)]);
            k.phi_pos.push(b[(q, row)] * b[(q, col)]);
            k.psi_neg.push(a[(q, row)] * b[(q, col)]);
            k.psi_pos.push(b[(q, row)] * a[(q, col)]);
        }
        k
    }
}

pub fn diagonalize(form: &QuadraticForm) -> Result<BogoliubovSolution> {
    let n = form.n_modes();
    let m = &form.hopping + &form.pairing;
    let svd = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)])
        .svd()
        .map_err(|_| Error::NoConvergence("SVD of P + Q"))?;
    let (u, v, s) = (svd.U(), svd.V(), svd.S().column_vector());

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    let tol = ZERO_MODE_TOL * m.amax().max(1.0);

    let mut amp_a = DMatrix::<f64>::zeros(n, n);
    let mut amp_b = DMatrix::<f64>::zeros(n, n);
    let mut energies = Vec::with_capacity(n);
    for (q, &k) in order.iter().enumerate() {
        for site in 0..n {
            let phi = v[(site, k)];
            let psi = u[(site, k)];
            amp_a[(q, site)] = 0.5 * (phi + psi);
            amp_b[(q, site)] = 0.5 * (phi - psi);
        }
        energies.push(if s[k] < tol { 0.0 } else { s[k] });
    }
    Ok(BogoliubovSolution {
        amp_a,
        amp_b,
        energies,
    })
}

/// Energy of the quasiparticle vacuum.
pub fn ground_energy(form: &QuadraticForm, sol: &BogoliubovSolution) -> f64 {
    form.offset + 0.5 * (form.hopping.trace() - sol.energies.iter().sum::<f64>())
}

/// All `2^N` many-body levels `E_0 + sum_q n_q e_q`, ascending.
pub fn many_body_spectrum(form: &QuadraticForm, sol: &BogoliubovSolution) -> Vec<f64> {
    let mut levels = vec![ground_energy(form, sol)];
    for &e in &sol.energies {
        let shifted: Vec<f64> = levels.iter().map(|x| x + e).collect();
        levels.extend(shifted);
    }
    levels.sort_by(f64::total_cmp);
    levels
}

/// `c_m(t) = sum_k Phi_mk(t) c_k + Psi_mk(t) c_k^+`.
#[derive(Debug, Clone)]
pub struct Propagators {
    pub time: f64,
    pub phi: DMatrix<C64>,
    pub psi: DMatrix<C64>,
}

impl Propagators {
    /// Largest elementwise violation of `Phi Phi^+ + Psi Psi^+ = I` and
    /// `Phi Psi^T + Psi Phi^T = 0`.
    pub fn canonicity_error(&self) -> f64 {
        let n = self.phi.nrows();
        let norm = &self.phi * self.phi.adjoint() + &self.psi * self.psi.adjoint()
            - DMatrix::<C64>::identity(n, n);
        let cross = &self.phi * self.psi.transpose() + &self.psi * self.phi.transpose();
        max_abs(&norm).max(max_abs(&cross))
    }

    /// Propagators at `t1 + t2` from those at `t1` (self) and `t2`.
    pub fn compose(&self, later: &Propagators) -> Propagators {
        let phi = &self.phi * &later.phi + &self.psi * later.psi.map(|z| z.conj());
        let psi = &self.phi * &later.psi + &self.psi * later.phi.map(|z| z.conj());
        Propagators {
            time: self.time + later.time,
            phi,
            psi,
        }
    }
}

pub(crate) fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn propagators(sol: &BogoliubovSolution, t: f64) -> Result<Propagators> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeTime(t));
    }
    Ok(evolve(sol, t))
}

/// Spectral formula without the sign check on `t`.
pub(crate) fn evolve(sol: &BogoliubovSolution, t: f64) -> Propagators {
    let n = sol.n_modes();
    let a = sol.amp_a.map(|x| C64::new(x, 0.0));
    let b = sol.amp_b.map(|x| C64::new(x, 0.0));
    let mut ea = a.clone();
    let mut eb = b.clone();
    let mut ea_conj = a.clone();
    let mut eb_conj = b.clone();
    for q in 0..n {
        let phase = C64::from_polar(1.0, -sol.energies[q] * t);
        for m in 0..n {
            ea[(q, m)] *= phase;
            eb[(q, m)] *= phase;
            ea_conj[(q, m)] *= phase.conj();
            eb_conj[(q, m)] *= phase.conj();
        }
    }
    let phi = a.transpose() * &ea + b.transpose() * &eb_conj;
    let psi = a.transpose() * &eb + b.transpose() * &ea_conj;
    Propagators { time: t, phi, psi }
}

/// Precomputed weights for one `(row, col)` entry of the propagators, so a
/// time scan costs `O(N)` per point after a single diagonalization.
#[derive(Debug, Clone)]
pub struct TransferKernel {
    energies: Vec<f64>,
    phi_neg: Vec<f64>,
    phi_pos: Vec<f64>,
    psi_neg: Vec<f64>,
    psi_pos: Vec<f64>,
}

impl TransferKernel {
    /// `(Phi_rc(t), Psi_rc(t))`.
    pub fn amplitudes(&self, t: f64) -> (C64, C64) {
        let mut phi = C64::new(0.0, 0.0);
        let mut psi = C64::new(0.0, 0.0);
        for q in 0..self.energies.len() {
            let (s, c) = (self.energies[q] * t).sin_cos();
            // e^{-i e t} = c - i s, e^{+i e t} = c + i s
            phi.re += (self.phi_neg[q] + self.phi_pos[q]) * c;
            phi.im += (self.phi_pos[q] - self.phi_neg[q]) * s;
            psi.re += (self.psi_neg[q] + self.psi_pos[q]) * c;
            psi.im += (self.psi_pos[q] - self.psi_neg[q]) * s;
        }
        (phi, psi)
    }
}
