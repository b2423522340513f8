//! Brute-force simulation of the transfer protocol on the full `2^N` space.
//!
//! Basis index bit `j` is the state of site `j + 1`: bit 0 is spin up
//! (`Z = +1`), bit 1 is spin down. The sender is bit 0, the receiver bit `N-1`.
//!
//! The protocol: the last `N - 1` sites start in the ground state of the
//! `(N-1)`-site Hamiltonian, the first site holds the input qubit, the whole
//! chain evolves under the `N`-site Hamiltonian, and the receiver's reduced
//! state is compared against the input averaged over the Bloch sphere.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freefermion::C64;
use crate::model::{build_couplings, ModelParams};

pub const MAX_DENSE_SITES: usize = 12;

/// Channel ground states with a smaller gap than this are rejected.
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-8;

/// Dense Hamiltonian. Every term is real, so a real symmetric matrix suffices.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub sites: usize,
    pub matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).amax()
    }
}

#[inline]
fn pauli_z(state: usize, site: usize) -> f64 {
    if state >> site & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// The Hamiltonian of `params` restricted to the first `sites` sites.
pub fn build_dense_hamiltonian(params: &ModelParams, sites: usize) -> Result<DenseOperator> {
    params.validate()?;
    if sites > MAX_DENSE_SITES {
        return Err(Error::TooManySites {
            requested: sites,
            max: MAX_DENSE_SITES,
        });
    }
    if sites == 0 {
        return Err(Error::InvalidModel(
            "dense Hamiltonian needs at least one site".into(),
        ));
    }
    let dim = 1usize << sites;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let field = params.field * params.coupling_scale;
    let lambda = params.anisotropy;
    let string = params.string_convention;

    for s in 0..dim {
        let mz: f64 = (0..sites).map(|j| pauli_z(s, j)).sum();
        h[(s, s)] = -0.5 * field * mz;
    }
    let range = params.coordination.min(sites - 1);
    if range > 0 {
        let couplings = build_couplings(&params.with_sites(params.n_sites.max(range + 1)))?;
        for delta in 1..=range {
            let jd = couplings.strength(delta);
            for a in 0..sites - delta {
                let b = a + delta;
                let flip = (1 << a) | (1 << b);
                for s in 0..dim {
                    let between: f64 = (a + 1..b)
                        .map(|l| string.site_factor(pauli_z(s, l)))
                        .product();
                    // X_a X_b = 1, Y_a Y_b = -Z_a Z_b on the flipped pair
                    let yy = -pauli_z(s, a) * pauli_z(s, b);
                    let amp = -jd * between * ((1.0 + lambda) / 4.0 + (1.0 - lambda) / 4.0 * yy);
                    h[(s ^ flip, s)] += amp;
                }
            }
        }
    }
    Ok(DenseOperator { sites, matrix: h })
}

/// Eigenpairs sorted by ascending energy.
fn sorted_eigen(op: &DenseOperator) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(op.matrix.clone());
    let mut order: Vec<usize> = (0..op.dim()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(op.dim(), op.dim(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Full many-body spectrum of the `N`-site chain, ascending.
pub fn dense_spectrum(params: &ModelParams) -> Result<Vec<f64>> {
    let op = build_dense_hamiltonian(params, params.n_sites)?;
    let mut values: Vec<f64> = SymmetricEigen::new(op.matrix)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Jordan-Wigner annihilator `c_j = prod_{i<j} Z_i |up><down|_j` as a dense matrix.
fn dense_annihilator(sites: usize, j: usize) -> DMatrix<f64> {
    let dim = 1usize << sites;
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for s in 0..dim {
        if s >> j & 1 == 1 {
            let sign: f64 = (0..j).map(|i| pauli_z(s, i)).product();
            m[(s ^ (1 << j), s)] = sign;
        }
    }
    m
}

/// `(Phi_rc(t), Psi_rc(t))` read off the dense Heisenberg-picture operator
/// `c_r(t)` through `{c_r(t), c_c^+}` and `{c_r(t), c_c}`.
pub fn heisenberg_amplitudes(
    params: &ModelParams,
    t: f64,
    row: usize,
    col: usize,
) -> Result<(C64, C64)> {
    let n = params.n_sites;
    let op = build_dense_hamiltonian(params, n)?;
    let (values, vectors) = sorted_eigen(&op);
    let dim = op.dim();
    let v = vectors.map(|x| C64::new(x, 0.0));
    let phases = DMatrix::from_diagonal(&DVector::from_iterator(
        dim,
        values.iter().map(|e| C64::from_polar(1.0, -e * t)),
    ));
    let u = &v * phases * v.transpose();
    let c_row = dense_annihilator(n, row).map(|x| C64::new(x, 0.0));
    let c_col = dense_annihilator(n, col).map(|x| C64::new(x, 0.0));
    let evolved = u.adjoint() * c_row * &u;
    let anti =
        |a: &DMatrix<C64>, b: &DMatrix<C64>| (a * b + b * a).trace() / C64::new(dim as f64, 0.0);
    Ok((anti(&evolved, &c_col.adjoint()), anti(&evolved, &c_col)))
}

/// Bloch-sphere averaging rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    /// Average over the six Pauli eigenstates; exact for qubit channels.
    Cardinal,
    /// Gauss-Legendre in `cos(theta)` times a uniform rule in `phi`.
    Grid { n_theta: usize, n_phi: usize },
}

/// Which local unitary the receiver applies before comparing states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReceiverFrame {
    /// Best rotation of the receiver qubit, as in the closed-form fidelity.
    #[default]
    Optimal,
    /// No correction: the bare overlap with the input.
    Identity,
}

/// One input on the Bloch sphere and the receiver's reduced state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSample {
    pub theta: f64,
    pub phi: f64,
    pub output_state: Matrix2<C64>,
}

impl ChannelSample {
    pub fn input_bloch(&self) -> Vector3<f64> {
        bloch_of_angles(self.theta, self.phi)
    }

    pub fn output_bloch(&self) -> Vector3<f64> {
        bloch_of_state(&self.output_state)
    }

    pub fn trace(&self) -> f64 {
        self.output_state.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let r = self.output_bloch().norm();
        0.5 * self.trace() - 0.5 * r
    }
}

fn bloch_of_angles(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    )
}

fn bloch_of_state(rho: &Matrix2<C64>) -> Vector3<f64> {
    Vector3::new(
        2.0 * rho[(0, 1)].re,
        -2.0 * rho[(0, 1)].im,
        (rho[(0, 0)] - rho[(1, 1)]).re,
    )
}

fn input_amplitudes(theta: f64, phi: f64) -> [C64; 2] {
    [
        C64::new((theta / 2.0).cos(), 0.0),
        C64::from_polar((theta / 2.0).sin(), phi),
    ]
}

const CARDINAL: [(f64, f64); 6] = [
    (0.0, 0.0),
    (PI, 0.0),
    (PI / 2.0, 0.0),
    (PI / 2.0, PI),
    (PI / 2.0, PI / 2.0),
    (PI / 2.0, 3.0 * PI / 2.0),
];

/// Affine action `r -> T r + c` of the channel on Bloch vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitChannel {
    pub linear: Matrix3<f64>,
    pub shift: Vector3<f64>,
}

impl QubitChannel {
    /// From the outputs for `+z, -z, +x, -x, +y, -y`.
    pub fn from_cardinal(out: &[Vector3<f64>; 6]) -> Self {
        let shift = (out[0] + out[1]) / 2.0;
        let linear = Matrix3::from_columns(&[
            (out[2] - out[3]) / 2.0,
            (out[4] - out[5]) / 2.0,
            (out[0] - out[1]) / 2.0,
        ]);
        Self { linear, shift }
    }

    /// From the outputs for `+z, -z, +x, +y` only.
    pub fn from_four(
        plus_z: Vector3<f64>,
        minus_z: Vector3<f64>,
        plus_x: Vector3<f64>,
        plus_y: Vector3<f64>,
    ) -> Self {
        let shift = (plus_z + minus_z) / 2.0;
        let linear =
            Matrix3::from_columns(&[plus_x - shift, plus_y - shift, (plus_z - minus_z) / 2.0]);
        Self { linear, shift }
    }

    pub fn apply(&self, r: &Vector3<f64>) -> Vector3<f64> {
        self.linear * r + self.shift
    }

    /// Proper rotation `R` maximizing `tr(R T)`.
    pub fn optimal_rotation(&self) -> Matrix3<f64> {
        let svd = self.linear.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let smallest = svd.singular_values.imin();
        let mut d = Matrix3::identity();
        d[(smallest, smallest)] = (v_t.transpose() * u.transpose()).determinant().signum();
        v_t.transpose() * d * u.transpose()
    }

    /// Closed-form average fidelity `1/2 + tr(R T)/6`.
    pub fn average_fidelity(&self, frame: ReceiverFrame) -> f64 {
        let r = match frame {
            ReceiverFrame::Optimal => self.optimal_rotation(),
            ReceiverFrame::Identity => Matrix3::identity(),
        };
        0.5 + (r * self.linear).trace() / 6.0
    }
}

/// Dense protocol for one model instance, diagonalized once for all times.
#[derive(Debug, Clone)]
pub struct ProtocolOracle {
    params: ModelParams,
    energies: Vec<f64>,
    vectors: DMatrix<f64>,
    channel_state: DVector<f64>,
    ground_gap: f64,
}

impl ProtocolOracle {
    pub fn new(params: &ModelParams) -> Result<Self> {
        Self::with_degeneracy_tol(params, DEFAULT_DEGENERACY_TOL)
    }

    pub fn with_degeneracy_tol(params: &ModelParams, tolerance: f64) -> Result<Self> {
        params.validate()?;
        let n = params.n_sites;
        if n < 2 {
            return Err(Error::InvalidModel(
                "the protocol needs at least two sites".into(),
            ));
        }
        if n > MAX_DENSE_SITES {
            return Err(Error::TooManySites {
                requested: n,
                max: MAX_DENSE_SITES,
            });
        }
        let channel = build_dense_hamiltonian(params, n - 1)?;
        let (chan_values, chan_vectors) = sorted_eigen(&channel);
        let ground_gap = if chan_values.len() > 1 {
            chan_values[1] - chan_values[0]
        } else {
            f64::INFINITY
        };
        if ground_gap < tolerance {
            return Err(Error::DegenerateGroundState {
                gap: ground_gap,
                tolerance,
            });
        }
        let channel_state = chan_vectors.column(0).into_owned();
        let (energies, vectors) = sorted_eigen(&build_dense_hamiltonian(params, n)?);
        Ok(Self {
            params: *params,
            energies,
            vectors,
            channel_state,
            ground_gap,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Gap above the ground state of the `(N-1)`-site channel Hamiltonian.
    pub fn ground_gap(&self) -> f64 {
        self.ground_gap
    }

    /// Initial state with the sender qubit in basis state `bit`.
    fn basis_input(&self, bit: usize) -> DVector<f64> {
        let dim = 1usize << self.params.n_sites;
        let mut psi = DVector::<f64>::zeros(dim);
        for (g, amp) in self.channel_state.iter().enumerate() {
            psi[(g << 1) | bit] = *amp;
        }
        psi
    }

    fn evolve(&self, psi0: &DVector<f64>, t: f64) -> DVector<C64> {
        let coeffs = self.vectors.tr_mul(psi0);
        let (re, im): (Vec<f64>, Vec<f64>) = coeffs
            .iter()
            .zip(&self.energies)
            .map(|(c, e)| {
                let (s, co) = (e * t).sin_cos();
                (c * co, -c * s)
            })
            .unzip();
        let re = &self.vectors * DVector::from_vec(re);
        let im = &self.vectors * DVector::from_vec(im);
        re.zip_map(&im, C64::new)
    }

    /// Receiver blocks `M_ij = tr_{1..N-1} |psi_i(t)><psi_j(t)|` for the two
    /// basis inputs; the state for input `a|0> + b|1>` is `sum a_i conj(a_j) M_ij`.
    fn receiver_blocks(&self, t: f64) -> Result<[[Matrix2<C64>; 2]; 2]> {
        if t.is_nan() {
            return Err(Error::NegativeTime(t));
        }
        let states = [
            self.evolve(&self.basis_input(0), t),
            self.evolve(&self.basis_input(1), t),
        ];
        let receiver = self.params.n_sites - 1;
        let mut blocks = [[Matrix2::<C64>::zeros(); 2]; 2];
        for (i, si) in states.iter().enumerate() {
            for (j, sj) in states.iter().enumerate() {
                blocks[i][j] = partial_trace_to(si, sj, receiver);
            }
        }
        Ok(blocks)
    }

    pub fn sample(&self, theta: f64, phi: f64, t: f64) -> Result<ChannelSample> {
        let blocks = self.receiver_blocks(t)?;
        Ok(sample_from_blocks(&blocks, theta, phi))
    }

    pub fn channel(&self, t: f64) -> Result<QubitChannel> {
        let blocks = self.receiver_blocks(t)?;
        Ok(channel_from_blocks(&blocks))
    }

    /// Bloch-averaged fidelity of the protocol at time `t`.
    pub fn fidelity(&self, t: f64, quadrature: Quadrature, frame: ReceiverFrame) -> Result<f64> {
        let blocks = self.receiver_blocks(t)?;
        let channel = channel_from_blocks(&blocks);
        let rotation = match frame {
            ReceiverFrame::Optimal => channel.optimal_rotation(),
            ReceiverFrame::Identity => Matrix3::identity(),
        };
        let overlap = |theta: f64, phi: f64| {
            let s = sample_from_blocks(&blocks, theta, phi);
            0.5 * (1.0 + s.input_bloch().dot(&(rotation * s.output_bloch())))
        };
        match quadrature {
            Quadrature::Cardinal => Ok(CARDINAL
                .iter()
                .map(|&(th, ph)| overlap(th, ph))
                .sum::<f64>()
                / 6.0),
            Quadrature::Grid { n_theta, n_phi } => {
                if n_theta == 0 || n_phi == 0 {
                    return Err(Error::InvalidConfig(
                        "quadrature grid must be non-empty".into(),
                    ));
                }
                let (nodes, weights) = gauss_legendre(n_theta);
                let mut total = 0.0;
                for (u, w) in nodes.iter().zip(&weights) {
                    let theta = u.acos();
                    for k in 0..n_phi {
                        let phi = 2.0 * PI * k as f64 / n_phi as f64;
                        total += w * overlap(theta, phi);
                    }
                }
                // (1 / 4 pi) * (2 pi / n_phi) * sum
                Ok(total / (2.0 * n_phi as f64))
            }
        }
    }
}

fn partial_trace_to(a: &DVector<C64>, b: &DVector<C64>, site: usize) -> Matrix2<C64> {
    let mut rho = Matrix2::<C64>::zeros();
    let mask = 1usize << site;
    for s in 0..a.len() {
        if s & mask != 0 {
            continue;
        }
        let t = s | mask;
        rho[(0, 0)] += a[s] * b[s].conj();
        rho[(0, 1)] += a[s] * b[t].conj();
        rho[(1, 0)] += a[t] * b[s].conj();
        rho[(1, 1)] += a[t] * b[t].conj();
    }
    rho
}

fn sample_from_blocks(blocks: &[[Matrix2<C64>; 2]; 2], theta: f64, phi: f64) -> ChannelSample {
    let amp = input_amplitudes(theta, phi);
    let mut rho = Matrix2::<C64>::zeros();
    for i in 0..2 {
        for j in 0..2 {
            rho += blocks[i][j] * (amp[i] * amp[j].conj());
        }
    }
    ChannelSample {
        theta,
        phi,
        output_state: rho,
    }
}

fn channel_from_blocks(blocks: &[[Matrix2<C64>; 2]; 2]) -> QubitChannel {
    let out = CARDINAL.map(|(th, ph)| sample_from_blocks(blocks, th, ph).output_bloch());
    QubitChannel::from_cardinal(&out)
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            // three-term recurrence for P_n(x) and P_{n-1}(x)
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let step = pn / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Dense protocol fidelity with the receiver's optimal local rotation.
pub fn protocol_fidelity(params: &ModelParams, t: f64, quadrature: Quadrature) -> Result<f64> {
    ProtocolOracle::new(params)?.fidelity(t, quadrature, ReceiverFrame::Optimal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fidelity::FidelityEvaluator;
    use crate::freefermion::{diagonalize, many_body_spectrum, propagators};
    use crate::model::{build_quadratic_form, StringConvention};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(n: usize, z: usize, alpha: f64, lambda: f64, g: f64) -> ModelParams {
        ModelParams::new(n, z, alpha, lambda, g).unwrap()
    }

    fn max_spectrum_gap(params: &ModelParams) -> f64 {
        let dense = dense_spectrum(params).unwrap();
        let form = build_quadratic_form(params).unwrap();
        let ff = many_body_spectrum(&form, &diagonalize(&form).unwrap());
        dense
            .iter()
            .zip(&ff)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn single_site_is_field_only() {
        let op = build_dense_hamiltonian(&p(1, 1, 1.0, 0.5, 0.8), 1).unwrap();
        assert_eq!(op.matrix[(0, 0)], -0.4);
        assert_eq!(op.matrix[(1, 1)], 0.4);
        assert_eq!(op.matrix[(0, 1)], 0.0);
    }

    #[test]
    fn two_site_xx_spectrum_is_symmetric() {
        let op = build_dense_hamiltonian(&p(2, 1, 1.0, 0.0, 0.0), 2).unwrap();
        assert_eq!(op.hermiticity_error(), 0.0);
        assert!(op.matrix.trace().abs() < 1e-15);
        let mut e = dense_spectrum(&p(2, 1, 1.0, 0.0, 0.0)).unwrap();
        e.sort_by(f64::total_cmp);
        for (a, b) in e.iter().zip(e.iter().rev()) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_large_systems() {
        let params = p(13, 2, 1.0, 0.0, 0.0);
        assert!(matches!(
            build_dense_hamiltonian(&params, 13),
            Err(Error::TooManySites { .. })
        ));
        assert!(matches!(
            ProtocolOracle::new(&params),
            Err(Error::TooManySites { .. })
        ));
    }

    #[test]
    fn spectrum_matches_free_fermions() {
        assert!(max_spectrum_gap(&p(6, 2, 1.5, 0.7, 0.4)) < 1e-9);
        assert!(max_spectrum_gap(&p(6, 3, 0.5, 1.0, 1.7)) < 1e-9);
    }

    #[test]
    fn pauli_string_spectrum_matches_too() {
        let params = p(7, 4, 0.8, 0.6, -0.3).with_string_convention(StringConvention::Pauli);
        assert!(max_spectrum_gap(&params) < 1e-9);
    }

    #[test]
    fn conventions_differ_beyond_nearest_neighbour() {
        let jw = p(6, 3, 0.5, 0.7, 0.4);
        let pauli = jw.with_string_convention(StringConvention::Pauli);
        let a = dense_spectrum(&jw).unwrap();
        let b = dense_spectrum(&pauli).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-3));
    }

    #[test]
    fn heisenberg_amplitude_matches_propagator() {
        let params = p(6, 2, 1.5, 0.7, 0.4);
        let sol = diagonalize(&build_quadratic_form(&params).unwrap()).unwrap();
        let prop = propagators(&sol, 3.7).unwrap();
        let (phi, psi) = heisenberg_amplitudes(&params, 3.7, 5, 0).unwrap();
        assert!((phi - prop.phi[(5, 0)]).norm() < 1e-9);
        assert!((psi - prop.psi[(5, 0)]).norm() < 1e-9);
        let (phi, psi) = heisenberg_amplitudes(&params, 3.7, 2, 4).unwrap();
        assert!((phi - prop.phi[(2, 4)]).norm() < 1e-9);
        assert!((psi - prop.psi[(2, 4)]).norm() < 1e-9);
    }

    #[test]
    fn half_at_time_zero() {
        let oracle = ProtocolOracle::new(&p(6, 2, 1.5, 0.7, 0.4)).unwrap();
        for frame in [ReceiverFrame::Optimal, ReceiverFrame::Identity] {
            let f = oracle.fidelity(0.0, Quadrature::Cardinal, frame).unwrap();
            assert!((f - 0.5).abs() < 1e-12, "{f}");
        }
    }

    #[test]
    fn identity_channel_is_perfect() {
        let id = QubitChannel {
            linear: Matrix3::identity(),
            shift: Vector3::zeros(),
        };
        assert!((id.average_fidelity(ReceiverFrame::Identity) - 1.0).abs() < 1e-15);
        assert!((id.average_fidelity(ReceiverFrame::Optimal) - 1.0).abs() < 1e-15);

        // swap the sender onto the receiver site by hand
        let oracle = ProtocolOracle::new(&p(5, 2, 1.0, 0.3, 0.5)).unwrap();
        let swapped = |bit: usize| {
            let psi = oracle.basis_input(bit);
            let n = 5;
            let mut out = DVector::<C64>::zeros(psi.len());
            for s in 0..psi.len() {
                let (b0, bn) = (s & 1, s >> (n - 1) & 1);
                let t = (s & !1 & !(1 << (n - 1))) | bn | (b0 << (n - 1));
                out[t] = C64::new(psi[s], 0.0);
            }
            out
        };
        let states = [swapped(0), swapped(1)];
        let mut blocks = [[Matrix2::<C64>::zeros(); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                blocks[i][j] = partial_trace_to(&states[i], &states[j], 4);
            }
        }
        let ch = channel_from_blocks(&blocks);
        assert!((ch.average_fidelity(ReceiverFrame::Identity) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn samples_are_states() {
        let oracle = ProtocolOracle::new(&p(6, 3, 1.0, 0.9, 0.6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let s = oracle
                .sample(
                    rng.random_range(0.0..PI),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.0..15.0),
                )
                .unwrap();
            assert!((s.trace() - 1.0).abs() < 1e-12);
            assert!(s.min_eigenvalue() > -1e-12);
        }
    }

    #[test]
    fn channel_is_affine() {
        let oracle = ProtocolOracle::new(&p(6, 3, 1.0, 0.9, 0.6)).unwrap();
        let t = 4.2;
        let six = oracle.channel(t).unwrap();
        let out = |th: f64, ph: f64| oracle.sample(th, ph, t).unwrap().output_bloch();
        let four = QubitChannel::from_four(
            out(0.0, 0.0),
            out(PI, 0.0),
            out(PI / 2.0, 0.0),
            out(PI / 2.0, PI / 2.0),
        );
        for frame in [ReceiverFrame::Optimal, ReceiverFrame::Identity] {
            let avg = oracle.fidelity(t, Quadrature::Cardinal, frame).unwrap();
            assert!((avg - four.average_fidelity(frame)).abs() < 1e-9);
            assert!((avg - six.average_fidelity(frame)).abs() < 1e-9);
        }
        let r: Vector3<f64> = Vector3::new(0.3, -0.5, 0.2);
        let unit = r / r.norm();
        let direct_unit = oracle
            .sample(unit.z.acos(), unit.y.atan2(unit.x), t)
            .unwrap()
            .output_bloch();
        assert!((six.apply(&unit) - direct_unit).norm() < 1e-9);
    }

    #[test]
    fn quadratures_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..4 {
            let params = p(
                6,
                rng.random_range(1..6),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..1.3),
                rng.random_range(1.1..2.0),
            );
            let oracle = ProtocolOracle::new(&params).unwrap();
            let t = rng.random_range(0.0..18.0);
            for frame in [ReceiverFrame::Optimal, ReceiverFrame::Identity] {
                let a = oracle.fidelity(t, Quadrature::Cardinal, frame).unwrap();
                let b = oracle
                    .fidelity(
                        t,
                        Quadrature::Grid {
                            n_theta: 50,
                            n_phi: 100,
                        },
                        frame,
                    )
                    .unwrap();
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((integral - 2.0 / 9.0).abs() < 1e-14);
        let (x, w) = gauss_legendre(1);
        assert_eq!((x[0], w[0]), (0.0, 2.0));
    }

    #[test]
    fn closed_form_matches_protocol() {
        for params in [
            p(6, 2, 1.5, 0.0, 1.4),
            p(6, 2, 1.5, 0.7, 0.4),
            p(7, 6, 0.6, 1.0, 1.7),
        ] {
            let oracle = ProtocolOracle::new(&params).unwrap();
            let eval = FidelityEvaluator::new(&params).unwrap();
            for t in [0.0, 1.3, 5.0, 9.9] {
                let dense = oracle
                    .fidelity(t, Quadrature::Cardinal, ReceiverFrame::Optimal)
                    .unwrap();
                let ff = eval.fidelity(t);
                assert!(
                    (dense - ff).abs() < 1e-8,
                    "{params:?} t={t}: {dense} vs {ff}"
                );
            }
        }
    }
}
