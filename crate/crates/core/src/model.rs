//! Extended XY chain with power-law couplings and its quadratic fermionic form.
//!
//! The spin Hamiltonian on an open chain of `N` sites is
//!
//! ```text
//! H = - sum_j sum_{d=1..z} J_d [ (1+l)/4 X_j S_{j,d} X_{j+d} + (1-l)/4 Y_j S_{j,d} Y_{j+d} ]
//!     - g J / 2 sum_j Z_j,            J_d = J / d^alpha
//! ```
//!
//! where `S_{j,d}` is a string over the sites strictly between `j` and `j+d`.
//! Terms with `j + d > N` are dropped. After Jordan-Wigner the Hamiltonian is
//! exactly quadratic:
//!
//! ```text
//! H = sum_ij P_ij c_i^+ c_j + 1/2 sum_ij (Q_ij c_i^+ c_j^+ + h.c.) + E_shift
//! ```
//!
//! with the fermion occupation `n_j = (1 - Z_j) / 2`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which operator sits on the intermediate sites of the string `S_{j,d}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StringConvention {
    /// Fermion parity `1 - 2 n_l = -Z_l` on every intermediate site. The
    /// range-`d` hopping and pairing pick up a factor `(-1)^(d-1)`.
    #[default]
    JordanWigner,
    /// Plain Pauli `Z_l` on every intermediate site.
    Pauli,
}

impl StringConvention {
    /// Sign multiplying the range-`delta` hopping and pairing amplitudes.
    pub fn sign(self, delta: usize) -> f64 {
        match self {
            StringConvention::JordanWigner if delta.is_multiple_of(2) => -1.0,
            _ => 1.0,
        }
    }

    /// Factor contributed by one intermediate site whose Pauli-Z eigenvalue is `z`.
    pub fn site_factor(self, z: f64) -> f64 {
        match self {
            StringConvention::JordanWigner => -z,
            StringConvention::Pauli => z,
        }
    }
}

/// One Hamiltonian instance `(N, z, alpha, lambda, g, J)`.
///
/// Fields are public so that sweeps can carry out-of-range cells around;
/// every builder calls [`ModelParams::validate`] before doing any work.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_sites: usize,
    pub coordination: usize,
    pub falloff: f64,
    pub anisotropy: f64,
    pub field: f64,
    #[serde(default = "unit_scale")]
    pub coupling_scale: f64,
    #[serde(default)]
    pub string_convention: StringConvention,
}

fn unit_scale() -> f64 {
    1.0
}

impl ModelParams {
    /// Validated constructor with `J = 1` and the default string convention.
    pub fn new(
        n_sites: usize,
        coordination: usize,
        falloff: f64,
        anisotropy: f64,
        field: f64,
    ) -> Result<Self> {
        let params = Self {
            n_sites,
            coordination,
            falloff,
            anisotropy,
            field,
            coupling_scale: 1.0,
            string_convention: StringConvention::default(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_coupling_scale(mut self, j: f64) -> Result<Self> {
        self.coupling_scale = j;
        self.validate()?;
        Ok(self)
    }

    pub fn with_string_convention(mut self, convention: StringConvention) -> Self {
        self.string_convention = convention;
        self
    }

    /// Same instance with a different interaction range. Not validated.
    pub fn with_coordination(mut self, z: usize) -> Self {
        self.coordination = z;
        self
    }

    /// Same instance with a different fall-off exponent. Not validated.
    pub fn with_falloff(mut self, alpha: f64) -> Self {
        self.falloff = alpha;
        self
    }

    /// Same instance on a chain of `n` sites. Not validated.
    pub fn with_sites(mut self, n: usize) -> Self {
        self.n_sites = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_sites;
        if n == 0 {
            return Err(Error::InvalidModel("n_sites must be at least 1".into()));
        }
        // A single site has no bonds; z is irrelevant there.
        if n > 1 && (self.coordination < 1 || self.coordination > n - 1) {
            return Err(Error::InvalidModel(format!(
                "coordination z = {} must satisfy 1 <= z <= N - 1 = {}",
                self.coordination,
                n - 1
            )));
        }
        if !(self.falloff.is_finite() && self.falloff >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "falloff alpha = {} must be finite and >= 0",
                self.falloff
            )));
        }
        if !(self.anisotropy.is_finite() && self.anisotropy >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "anisotropy lambda = {} must be finite and >= 0",
                self.anisotropy
            )));
        }
        if !self.field.is_finite() {
            return Err(Error::InvalidModel(format!(
                "field g = {} is not finite",
                self.field
            )));
        }
        if !(self.coupling_scale.is_finite() && self.coupling_scale > 0.0) {
            return Err(Error::InvalidModel(format!(
                "coupling scale J = {} must be positive",
                self.coupling_scale
            )));
        }
        Ok(())
    }

    /// Largest bond length present on this chain.
    pub fn max_range(&self) -> usize {
        self.coordination.min(self.n_sites.saturating_sub(1))
    }
}

/// Power-law coupling strengths `J_d = J / d^alpha` for `d = 1..=z`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTable {
    strengths: Vec<f64>,
}

impl CouplingTable {
    /// Strength at bond length `delta` (1-based), zero beyond the range.
    pub fn strength(&self, delta: usize) -> f64 {
        if delta == 0 {
            return 0.0;
        }
        self.strengths.get(delta - 1).copied().unwrap_or(0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.strengths
    }

    pub fn len(&self) -> usize {
        self.strengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strengths.is_empty()
    }
}

pub fn build_couplings(params: &ModelParams) -> Result<CouplingTable> {
    params.validate()?;
    if params.n_sites < 2 {
        return Err(Error::InvalidModel(
            "a coupling table needs at least two sites".into(),
        ));
    }
    let j = params.coupling_scale;
    let strengths = (1..=params.coordination)
        .map(|d| j / (d as f64).powf(params.falloff))
        .collect();
    Ok(CouplingTable { strengths })
}

/// Real quadratic form `(P, Q)` plus the scalar energy shift.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    /// Symmetric hopping and on-site matrix `P`.
    pub hopping: DMatrix<f64>,
    /// Antisymmetric pairing matrix `Q`.
    pub pairing: DMatrix<f64>,
    /// Constant `E_shift` left over from rewriting `Z_j` as `1 - 2 n_j`.
    pub offset: f64,
}

impl QuadraticForm {
    pub fn n_modes(&self) -> usize {
        self.hopping.nrows()
    }
}

pub fn build_quadratic_form(params: &ModelParams) -> Result<QuadraticForm> {
    params.validate()?;
    let n = params.n_sites;
    let j = params.coupling_scale;
    let field = params.field * j;
    let lambda = params.anisotropy;

    let mut hopping = DMatrix::<f64>::zeros(n, n);
    let mut pairing = DMatrix::<f64>::zeros(n, n);
    for site in 0..n {
        hopping[(site, site)] = field;
    }
    if n > 1 {
        let couplings = build_couplings(params)?;
        for delta in 1..=params.max_range() {
            let amp = params.string_convention.sign(delta) * couplings.strength(delta) / 2.0;
            for a in 0..n - delta {
                let b = a + delta;
                hopping[(a, b)] = -amp;
                hopping[(b, a)] = -amp;
                pairing[(a, b)] = -lambda * amp;
                pairing[(b, a)] = lambda * amp;
            }
        }
    }
    Ok(QuadraticForm {
        hopping,
        pairing,
        offset: -field * n as f64 / 2.0,
    })
}
