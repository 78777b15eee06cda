//! Closed-form ideal evolution of the initial spin coherent product state
//! under the Sz1 Sz2 interaction (optionally with the single-spin squeezing
//! terms), serving as the ground-truth entanglement curve.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg;

/// Pure two-condensate ground state: amplitude matrix c[k1][k2].
#[derive(Debug, Clone)]
pub struct PureGroundState {
    pub atoms: usize,
    pub amplitudes: Array2<C64>,
}

impl PureGroundState {
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// ln C(n, k), exact for the small n used here.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..k.min(n - k) {
        acc += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    acc
}

/// Evolves |1/sqrt2, 1/sqrt2>>_1 |1/sqrt2, 1/sqrt2>>_2 for a dimensionless
/// time Omega*t under exp(-i Omega t [Sz1 Sz2 (+ Sz1^2/2 + Sz2^2/2)]).
pub fn ideal_evolve(n: usize, omega_t: f64, include_squeezing: bool) -> PureGroundState {
    let d = n + 1;
    let amplitudes = Array2::from_shape_fn((d, d), |(k1, k2)| {
        let m1 = (n as f64) - 2.0 * k1 as f64;
        let m2 = (n as f64) - 2.0 * k2 as f64;
        let mut phase = m1 * m2;
        if include_squeezing {
            phase += 0.5 * (m1 * m1 + m2 * m2);
        }
        let ln_mag = 0.5 * (ln_binomial(n, k1) + ln_binomial(n, k2)) - (n as f64) * 2f64.ln();
        C64::from_polar(ln_mag.exp(), -omega_t * phase)
    });
    PureGroundState { atoms: n, amplitudes }
}

/// Applies the local frame rotation exp(-i theta (Sz1 + Sz2)) to a state.
pub fn rotate_frame(state: &PureGroundState, theta: f64) -> PureGroundState {
    let n = state.atoms as f64;
    let amplitudes = Array2::from_shape_fn(state.amplitudes.dim(), |(k1, k2)| {
        let m1 = n - 2.0 * k1 as f64;
        let m2 = n - 2.0 * k2 as f64;
        state.amplitudes[[k1, k2]] * C64::from_polar(1.0, -theta * (m1 + m2))
    });
    PureGroundState { atoms: state.atoms, amplitudes }
}

/// E = 2 log2 (sum of singular values of the coefficient matrix).
/// The singular values are the square roots of the eigenvalues of C^dag C.
pub fn pure_state_negativity(state: &PureGroundState) -> Result<f64> {
    let norm = state.norm_sqr();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState(format!("state norm^2 = {norm}")));
    }
    let schmidt_sum: f64 = linalg::singular_values(&state.amplitudes).into_iter().sum();
    Ok(2.0 * schmidt_sum.log2())
}

/// Ideal entanglement at each requested dimensionless time.
pub fn crevasse_curve(n: usize, times: &[f64], include_squeezing: bool) -> Result<Vec<f64>> {
    times
        .iter()
        .map(|&t| pure_state_negativity(&ideal_evolve(n, t, include_squeezing)))
        .collect()
}

/// Characteristic interaction times of the scheme, in units of 1/Omega.
#[derive(Debug, Clone, Copy)]
pub struct CharacteristicTimes {
    /// CNOT-like gate: Omega t = pi / (4N).
    pub cnot_time: f64,
    /// Macroscopic superposition: Omega t = 1 / sqrt(2N).
    pub macro_time: f64,
}

pub fn characteristic_times(n: usize) -> CharacteristicTimes {
    CharacteristicTimes {
        cnot_time: std::f64::consts::PI / (4.0 * n as f64),
        macro_time: 1.0 / (2.0 * n as f64).sqrt(),
    }
}

/// Fits a single time-rescale factor a in [lo, hi] minimizing
/// sum_t (E_sim(t) - E_oracle(a t))^2 on the sampled grid; returns
/// (best factor, residual sum of squares). Scanned on a fine grid then
/// refined by golden-section search.
pub fn fit_time_rescale(
    n: usize,
    times: &[f64],
    e_sim: &[f64],
    include_squeezing: bool,
    lo: f64,
    hi: f64,
) -> Result<(f64, f64)> {
    if times.len() != e_sim.len() || times.is_empty() {
        return Err(Error::InvalidArgument("times and E arrays must match and be non-empty".into()));
    }
    let objective = |a: f64| -> Result<f64> {
        let scaled: Vec<f64> = times.iter().map(|&t| a * t).collect();
        let e_or = crevasse_curve(n, &scaled, include_squeezing)?;
        Ok(e_or.iter().zip(e_sim).map(|(o, s)| (o - s) * (o - s)).sum())
    };
    let coarse = 64;
    let mut best_a = lo;
    let mut best_f = f64::INFINITY;
    for i in 0..=coarse {
        let a = lo + (hi - lo) * i as f64 / coarse as f64;
        let f = objective(a)?;
        if f < best_f {
            best_f = f;
            best_a = a;
        }
    }
    let step = (hi - lo) / coarse as f64;
    let (mut a, mut b) = ((best_a - step).max(lo), (best_a + step).min(hi));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
    let (mut f1, mut f2) = (objective(x1)?, objective(x2)?);
    for _ in 0..60 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = objective(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = objective(x2)?;
        }
    }
    let a_star = 0.5 * (a + b);
    Ok((a_star, objective(a_star)?))
}
