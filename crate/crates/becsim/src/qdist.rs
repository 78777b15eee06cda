//! Partial Husimi Q-distributions of condensate 1 conditioned on number
//! states of condensate 2, sampled on the Bloch sphere.
//!
//! Convention: alpha = cos(theta/2), beta = e^{i phi} sin(theta/2), theta
//! measured from the a-pole, so the equatorial circle is |alpha| = |beta|.

use num_complex::Complex64 as C64;

use crate::entanglement::GroundDensityMatrix;
use crate::error::{Error, Result};
use crate::oracle::ln_binomial;

/// A point on the collective Bloch sphere.
#[derive(Debug, Clone, Copy)]
pub struct SpinCoherentState {
    pub alpha: C64,
    pub beta: C64,
    pub atoms: usize,
}

impl SpinCoherentState {
    pub fn new(alpha: C64, beta: C64, atoms: usize) -> Result<Self> {
        let norm = alpha.norm_sqr() + beta.norm_sqr();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!(
                "|alpha|^2 + |beta|^2 = {norm}, expected 1"
            )));
        }
        Ok(SpinCoherentState { alpha, beta, atoms })
    }

    pub fn from_angles(theta: f64, phi: f64, atoms: usize) -> Self {
        SpinCoherentState {
            alpha: C64::new((0.5 * theta).cos(), 0.0),
            beta: C64::from_polar((0.5 * theta).sin(), phi),
            atoms,
        }
    }
}

/// Amplitudes over k (atoms in b): sqrt(C(N,k)) alpha^{N-k} beta^k.
pub fn spin_coherent_vector(state: &SpinCoherentState) -> Vec<C64> {
    let n = state.atoms;
    let mut v = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let coeff = (0.5 * ln_binomial(n, k)).exp();
        v.push(coeff * state.alpha.powu((n - k) as u32) * state.beta.powu(k as u32));
    }
    v
}

/// Q_{k2}(theta, phi) = (N+1)/(4 pi) <<a,b| <k2| rho |k2> |a,b>>.
pub fn partial_q(rho_g: &GroundDensityMatrix, k2: usize, theta: f64, phi: f64) -> Result<f64> {
    let n = rho_g.atoms;
    if k2 > n {
        return Err(Error::InvalidArgument(format!("k2 = {k2} out of range 0..={n}")));
    }
    let v = spin_coherent_vector(&SpinCoherentState::from_angles(theta, phi, n));
    let d = n + 1;
    let mut acc = C64::new(0.0, 0.0);
    for k1 in 0..d {
        for k1p in 0..d {
            acc += v[k1].conj() * rho_g.matrix[[k1 * d + k2, k1p * d + k2]] * v[k1p];
        }
    }
    Ok((n + 1) as f64 / (4.0 * std::f64::consts::PI) * acc.re)
}

/// Sampled Q-distributions for every k2, with the quadrature grid attached.
#[derive(Debug, Clone)]
pub struct QGrid {
    pub thetas: Vec<f64>,
    pub phis: Vec<f64>,
    /// values[k2][i_theta][i_phi]
    pub values: Vec<Vec<Vec<f64>>>,
}

impl QGrid {
    /// Integral of Q_{k2} over the sphere: trapezoid in theta (with sin theta
    /// weight), periodic uniform rule in phi.
    pub fn integral(&self, k2: usize) -> f64 {
        let nt = self.thetas.len();
        let np = self.phis.len();
        let dphi = 2.0 * std::f64::consts::PI / np as f64;
        let mut total = 0.0;
        for i in 0..nt {
            let wt = if i == 0 || i == nt - 1 { 0.5 } else { 1.0 };
            let dtheta = self.thetas[1] - self.thetas[0];
            let ring: f64 = self.values[k2][i].iter().sum();
            total += wt * dtheta * self.thetas[i].sin() * ring * dphi;
        }
        total
    }

    pub fn total_integral(&self) -> f64 {
        (0..self.values.len()).map(|k2| self.integral(k2)).sum()
    }

    /// Grid point of the maximum of Q_{k2}.
    pub fn peak(&self, k2: usize) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for (i, row) in self.values[k2].iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = (i, j);
                }
            }
        }
        best
    }
}

/// Samples partial_q for all k2 on a resolution_theta x resolution_phi grid.
/// Theta spans [0, pi] inclusive; phi spans [0, 2 pi) on a periodic grid.
pub fn q_grid(
    rho_g: &GroundDensityMatrix,
    resolution_theta: usize,
    resolution_phi: usize,
) -> Result<QGrid> {
    if resolution_theta < 2 || resolution_phi < 2 {
        return Err(Error::InvalidArgument("grid resolutions must be at least 2".into()));
    }
    let n = rho_g.atoms;
    let thetas: Vec<f64> = (0..resolution_theta)
        .map(|i| std::f64::consts::PI * i as f64 / (resolution_theta - 1) as f64)
        .collect();
    let phis: Vec<f64> = (0..resolution_phi)
        .map(|j| 2.0 * std::f64::consts::PI * j as f64 / resolution_phi as f64)
        .collect();
    let mut values = Vec::with_capacity(n + 1);
    for k2 in 0..=n {
        let mut sheet = Vec::with_capacity(thetas.len());
        for &theta in &thetas {
            let mut row = Vec::with_capacity(phis.len());
            for &phi in &phis {
                row.push(partial_q(rho_g, k2, theta, phi)?);
            }
            sheet.push(row);
        }
        values.push(sheet);
    }
    Ok(QGrid { thetas, phis, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ideal_evolve;
    use ndarray::Array2;
    use std::f64::consts::PI;

    fn pure_ground(n: usize, amps: &Array2<C64>) -> GroundDensityMatrix {
        let d = n + 1;
        let mut v = Vec::with_capacity(d * d);
        for k1 in 0..d {
            for k2 in 0..d {
                v.push(amps[[k1, k2]]);
            }
        }
        let matrix = Array2::from_shape_fn((d * d, d * d), |(i, j)| v[i] * v[j].conj());
        GroundDensityMatrix { atoms: n, matrix }
    }

    #[test]
    fn coherent_vector_poles_and_equator() {
        let s = SpinCoherentState::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), 3).unwrap();
        let v = spin_coherent_vector(&s);
        assert!((v[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(v[1..].iter().all(|z| z.norm() == 0.0));

        let eq = SpinCoherentState::from_angles(PI / 2.0, 0.0, 2);
        let v = spin_coherent_vector(&eq);
        let expect = [0.5, 1.0 / 2f64.sqrt(), 0.5];
        for (a, b) in v.iter().zip(expect) {
            assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-15);
        }
    }

    #[test]
    fn coherent_vector_normalized() {
        for &(theta, phi) in &[(0.3, 1.1), (1.9, 4.0), (2.8, 0.2)] {
            let v = spin_coherent_vector(&SpinCoherentState::from_angles(theta, phi, 7));
            let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            assert!((n2 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_unnormalized() {
        assert!(SpinCoherentState::new(C64::new(1.0, 0.0), C64::new(0.5, 0.0), 2).is_err());
    }

    #[test]
    fn initial_state_equator_value() {
        // product of two equatorial coherent states: Q_{k2} at (pi/2, 0)
        // equals (N+1)/(4 pi) C(N,k2)/2^N
        for n in [1usize, 4] {
            let g = {
                let s = ideal_evolve(n, 0.0, false);
                pure_ground(n, &s.amplitudes)
            };
            for k2 in 0..=n {
                let q = partial_q(&g, k2, PI / 2.0, 0.0).unwrap();
                let expect = (n + 1) as f64 / (4.0 * PI) * ln_binomial(n, k2).exp()
                    / 2f64.powi(n as i32);
                assert!((q - expect).abs() < 1e-12, "N={n} k2={k2}: {q} vs {expect}");
            }
        }
    }

    #[test]
    fn orthogonal_projection_vanishes() {
        // state |k1=0>|k2=0>: conditioning on k2=1 gives zero everywhere
        let mut amps = Array2::<C64>::zeros((2, 2));
        amps[[0, 0]] = C64::new(1.0, 0.0);
        let g = pure_ground(1, &amps);
        for &(theta, phi) in &[(0.0, 0.0), (1.0, 2.0), (PI / 2.0, 3.0)] {
            assert_eq!(partial_q(&g, 1, theta, phi).unwrap(), 0.0);
        }
        assert!(partial_q(&g, 2, 0.0, 0.0).is_err());
    }

    #[test]
    fn antipode_falloff() {
        // Q at the antipode of a pole-localized state falls off as 2^-N
        let n = 8;
        let mut amps = Array2::<C64>::zeros((n + 1, n + 1));
        amps[[0, 0]] = C64::new(1.0, 0.0); // all atoms in a (k1 = 0)
        let g = pure_ground(n, &amps);
        let q = partial_q(&g, 0, PI / 2.0, 0.0).unwrap(); // equator, not antipode
        let bound_eq = (n + 1) as f64 / (4.0 * PI) * 2f64.powi(-(n as i32));
        assert!((q - bound_eq).abs() < 1e-12);
        let q_anti = partial_q(&g, 0, PI, 0.0).unwrap();
        assert!(q_anti <= 1e-15);
    }

    #[test]
    fn grid_normalization() {
        let n = 4;
        let g = {
            let s = ideal_evolve(n, 0.3, false);
            pure_ground(n, &s.amplitudes)
        };
        let grid = q_grid(&g, 96, 192).unwrap();
        assert!((grid.total_integral() - 1.0).abs() < 1e-3);
        let weights = g.k2_weights();
        for k2 in 0..=n {
            assert!((grid.integral(k2) - weights[k2]).abs() < 1e-3);
        }
        // positivity up to rounding
        for sheet in &grid.values {
            for row in sheet {
                for &v in row {
                    assert!(v >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn quadrature_order() {
        // doubling resolution changes integrals by O(h^2)
        let n = 2;
        let g = {
            let s = ideal_evolve(n, 0.5, true);
            pure_ground(n, &s.amplitudes)
        };
        let coarse = q_grid(&g, 17, 32).unwrap().total_integral();
        let fine = q_grid(&g, 33, 64).unwrap().total_integral();
        let finer = q_grid(&g, 65, 128).unwrap().total_integral();
        let e1 = (coarse - 1.0).abs();
        let e2 = (fine - 1.0).abs();
        let e3 = (finer - 1.0).abs();
        assert!(e2 < e1 || e1 < 1e-9);
        assert!(e3 < 0.3 * e2 || e2 < 1e-9);
    }

    #[test]
    fn phase_rotation_shifts_phi() {
        // rotating by exp(-i theta Sz1) shifts every Q sheet in phi
        let n = 4;
        let s = ideal_evolve(n, 0.2, false);
        let g0 = pure_ground(n, &s.amplitudes);
        let np = 64;
        let shift_cells = 8usize; // theta_rot = 2 pi * 8 / 64 ... in m-units
        // Sz phase exp(-i t m1): amplitude at k1 gains exp(-i t (N - 2 k1)),
        // equivalent to beta -> beta e^{2 i t}: phi shift of 2 t
        let t = 2.0 * PI * shift_cells as f64 / np as f64 / 2.0;
        let rotated = Array2::from_shape_fn((n + 1, n + 1), |(k1, k2)| {
            let m1 = (n as f64) - 2.0 * k1 as f64;
            s.amplitudes[[k1, k2]] * C64::from_polar(1.0, -t * m1)
        });
        let g1 = pure_ground(n, &rotated);
        let grid0 = q_grid(&g0, 33, np).unwrap();
        let grid1 = q_grid(&g1, 33, np).unwrap();
        for k2 in 0..=n {
            for i in 0..33 {
                for j in 0..np {
                    let jj = (j + shift_cells) % np;
                    assert!(
                        (grid0.values[k2][i][j] - grid1.values[k2][i][jj]).abs() < 1e-9,
                        "k2={k2} i={i} j={j}"
                    );
                }
            }
        }
    }

    #[test]
    fn macro_state_peaks_shift_with_k2() {
        // at Omega t = 1/sqrt(2N) the k2-conditioned blobs sit on the
        // equator at phi = 2 (N - 2 k2) Omega t
        let n = 8;
        let t = 1.0 / (2.0 * n as f64).sqrt();
        let s = ideal_evolve(n, t, false);
        let g = pure_ground(n, &s.amplitudes);
        let np = 128;
        let grid = q_grid(&g, 65, np).unwrap();
        let dphi = 2.0 * PI / np as f64;
        for k2 in 0..=n {
            let (i, j) = grid.peak(k2);
            assert!((grid.thetas[i] - PI / 2.0).abs() < PI / 32.0, "k2={k2} off equator");
            let expect = (2.0 * ((n as f64) - 2.0 * k2 as f64) * t).rem_euclid(2.0 * PI);
            let got = grid.phis[j];
            let mut diff = (got - expect).abs();
            if diff > PI {
                diff = 2.0 * PI - diff;
            }
            assert!(diff <= dphi + 1e-12, "k2={k2}: peak phi {got}, expected {expect}");
        }
    }
}
