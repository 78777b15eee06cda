//! Coherent Hamiltonians of the two-BEC cavity scheme and the closed-form
//! effective quantities derived from them. All energies and rates are in
//! units of the laser coupling g (hbar = 1) unless stated otherwise.

use ndarray::Array1;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fockspace::{mode_operator, BasisTable, Mode, SparseOperator};

/// Couplings, detunings and decay rates of the scheme.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Laser coupling g.
    pub g: f64,
    /// Atom-cavity coupling G.
    pub big_g: f64,
    /// Cavity detuning.
    pub delta_c: f64,
    /// Laser detuning.
    pub delta_l: f64,
    /// Spontaneous emission rate.
    #[serde(default)]
    pub gamma_s: f64,
    /// Cavity decay rate.
    #[serde(default)]
    pub gamma_c: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.g <= 0.0 || self.big_g <= 0.0 {
            return Err(Error::InvalidArgument("couplings g, G must be positive".into()));
        }
        if self.gamma_s < 0.0 || self.gamma_c < 0.0 {
            return Err(Error::InvalidArgument("decay rates must be non-negative".into()));
        }
        Ok(())
    }
}

/// Effective ground-manifold rates: the single-spin rotation omega and the
/// entangling rate Omega.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EffectiveParams {
    pub omega: f64,
    pub omega_big: f64,
}

/// Ratio between the entangling rate implied by the raw adiabatic-elimination
/// Hamiltonian and the canonical effective-Hamiltonian value used here.
/// The canonical rate is Omega = G^2 g^2 / (2 Dc Dl^2); multiplying by this
/// constant recovers the alternative convention.
pub const ADIABATIC_RATE_RATIO: f64 = 2.0;

/// omega = g^2/(2 Dl) + G^2 g^2 N / (Dc Dl^2),
/// Omega = G^2 g^2 / (2 Dc Dl^2).
pub fn effective_params(params: &ModelParams, n: usize) -> Result<EffectiveParams> {
    if params.delta_c == 0.0 || params.delta_l == 0.0 {
        return Err(Error::ZeroDetuning("effective_params needs nonzero detunings"));
    }
    let g2 = params.g * params.g;
    let gg2 = params.big_g * params.big_g;
    let omega_big = gg2 * g2 / (2.0 * params.delta_c * params.delta_l * params.delta_l);
    let omega = g2 / (2.0 * params.delta_l)
        + gg2 * g2 * n as f64 / (params.delta_c * params.delta_l * params.delta_l);
    Ok(EffectiveParams { omega, omega_big })
}

/// H_c = Dc c^dag c + sum_i G (e_i^dag b_i c + b_i^dag e_i c^dag).
pub fn hamiltonian_cavity(params: &ModelParams, table: &BasisTable) -> SparseOperator {
    let c = mode_operator(Mode::C, table);
    let number_c = c.adjoint().matmul(&c).expect("same basis");
    let mut h = number_c.scale(C64::new(params.delta_c, 0.0));
    for (e, b) in [(Mode::E1, Mode::B1), (Mode::E2, Mode::B2)] {
        let term = mode_operator(e, table)
            .adjoint()
            .matmul(&mode_operator(b, table))
            .and_then(|m| m.matmul(&c))
            .expect("same basis");
        let coupling = term
            .add(&term.adjoint())
            .expect("same basis")
            .scale(C64::new(params.big_g, 0.0));
        h = h.add(&coupling).expect("same basis");
    }
    h
}

/// H_l = sum_i g (e_i^dag b_i + b_i^dag e_i) + Dl e_i^dag e_i.
pub fn hamiltonian_laser(params: &ModelParams, table: &BasisTable) -> SparseOperator {
    let mut h = SparseOperator::zeros(table.len());
    for (e, b) in [(Mode::E1, Mode::B1), (Mode::E2, Mode::B2)] {
        let eop = mode_operator(e, table);
        let term = eop
            .adjoint()
            .matmul(&mode_operator(b, table))
            .expect("same basis");
        let coupling = term
            .add(&term.adjoint())
            .expect("same basis")
            .scale(C64::new(params.g, 0.0));
        let number_e = eop
            .adjoint()
            .matmul(&eop)
            .expect("same basis")
            .scale(C64::new(params.delta_l, 0.0));
        h = h.add(&coupling).and_then(|m| m.add(&number_e)).expect("same basis");
    }
    h
}

pub fn hamiltonian_total(params: &ModelParams, table: &BasisTable) -> SparseOperator {
    hamiltonian_cavity(params, table)
        .add(&hamiltonian_laser(params, table))
        .expect("same basis")
}

/// Dark eigenmode of the cavity-fiber-cavity coupling: c = (p1 - p2)/sqrt(2)
/// with eigenvalue omega_f, independent of the fiber coupling nu.
/// Returns the eigenvector over (p1, p, p2) and the eigenvalue, after
/// checking the eigen-residual directly against the 3x3 one-excitation
/// matrix.
pub fn fiber_common_mode(nu: f64, omega_f: f64) -> Result<([f64; 3], f64)> {
    if nu == 0.0 {
        return Err(Error::InvalidArgument("fiber coupling nu must be nonzero".into()));
    }
    let inv_sqrt2 = 1.0 / 2f64.sqrt();
    let v = [inv_sqrt2, 0.0, -inv_sqrt2];
    let m = [
        [omega_f, nu, 0.0],
        [nu, omega_f, nu],
        [0.0, nu, omega_f],
    ];
    let mut res = 0.0f64;
    for i in 0..3 {
        let mv: f64 = (0..3).map(|j| m[i][j] * v[j]).sum();
        res += (mv - omega_f * v[i]).powi(2);
    }
    let res = res.sqrt();
    if res > 1e-12 {
        return Err(Error::InvalidState(format!("dark-mode residual {res:.3e}")));
    }
    Ok((v, omega_f))
}

/// Diagonal of the effective ground-manifold Hamiltonian
/// omega (Sz1 + Sz2) - Omega [Sz1 Sz2 + Sz1^2/2 + Sz2^2/2],
/// indexed by k1 * (N+1) + k2 with m_i = N - 2 k_i.
pub fn effective_hamiltonian(eff: &EffectiveParams, n: usize) -> Array1<f64> {
    let d = n + 1;
    Array1::from_shape_fn(d * d, |i| {
        let k1 = i / d;
        let k2 = i % d;
        let m1 = (n as f64) - 2.0 * k1 as f64;
        let m2 = (n as f64) - 2.0 * k2 as f64;
        eff.omega * (m1 + m2) - eff.omega_big * (m1 * m2 + 0.5 * m1 * m1 + 0.5 * m2 * m2)
    })
}

/// How the laser detuning grows with atom number in the scaling studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetuningStrategy {
    Constant,
    Sqrt,
    Linear,
}

impl std::str::FromStr for DetuningStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(DetuningStrategy::Constant),
            "sqrt" => Ok(DetuningStrategy::Sqrt),
            "linear" => Ok(DetuningStrategy::Linear),
            other => Err(Error::UnknownStrategy(other.into())),
        }
    }
}

pub fn detuning_strategy(strategy: DetuningStrategy, n: usize, base: f64) -> f64 {
    match strategy {
        DetuningStrategy::Constant => base,
        DetuningStrategy::Sqrt => base * (n as f64).sqrt(),
        DetuningStrategy::Linear => base * n as f64,
    }
}

/// Exact ac Stark shift of a state with k atoms in level b:
/// k/2 (Dl - sqrt(Dl^2 + 4 g^2)).
pub fn ac_stark_exact(k: usize, g: f64, delta_l: f64) -> f64 {
    0.5 * k as f64 * (delta_l - (delta_l * delta_l + 4.0 * g * g).sqrt())
}

/// Coefficients of the truncation-induced spurious Hamiltonian:
/// g^2/(2 Dl) on (Sz1 + Sz2) and g^4/(4 Dl^3) on (Sz1^2 + Sz2^2).
pub fn spurious_squeeze_coeffs(g: f64, delta_l: f64) -> Result<(f64, f64)> {
    if delta_l == 0.0 {
        return Err(Error::ZeroDetuning("spurious_squeeze_coeffs needs nonzero delta_l"));
    }
    let linear = g * g / (2.0 * delta_l);
    let quadratic = g.powi(4) / (4.0 * delta_l.powi(3));
    Ok((linear, quadratic))
}
