//! Logarithmic negativity between the two condensates.
//!
//! The full density matrix is first reduced to the ground manifold by tracing
//! over the excited and photonic labels, then partially transposed over the
//! first condensate's index.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fockspace::BasisTable;
use crate::linalg;

/// Reduced density matrix over (k1, k2), row index k1 * (N+1) + k2.
#[derive(Debug, Clone)]
pub struct GroundDensityMatrix {
    pub atoms: usize,
    pub matrix: Array2<C64>,
}

impl GroundDensityMatrix {
    pub fn dim(&self) -> usize {
        self.atoms + 1
    }

    pub fn trace(&self) -> f64 {
        (0..self.matrix.nrows()).map(|i| self.matrix[[i, i]].re).sum()
    }

    /// Diagonal of the trace over condensate 1: probabilities of each |k2>.
    pub fn k2_weights(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|k2| (0..d).map(|k1| self.matrix[[k1 * d + k2, k1 * d + k2]].re).sum())
            .collect()
    }

    /// Density matrix of a pure (k1, k2) amplitude matrix.
    pub fn from_pure(atoms: usize, amplitudes: &Array2<C64>) -> Self {
        let d = atoms + 1;
        let mut v = Vec::with_capacity(d * d);
        for k1 in 0..d {
            for k2 in 0..d {
                v.push(amplitudes[[k1, k2]]);
            }
        }
        let matrix = Array2::from_shape_fn((d * d, d * d), |(i, j)| v[i] * v[j].conj());
        GroundDensityMatrix { atoms, matrix }
    }

    /// The block <k2| rho |k2'> over k1, k1'.
    pub fn block(&self, k2: usize, k2p: usize) -> Array2<C64> {
        let d = self.dim();
        Array2::from_shape_fn((d, d), |(k1, k1p)| self.matrix[[k1 * d + k2, k1p * d + k2p]])
    }
}

/// Tr_{n1 n2 l} rho: sums the diagonal (n1, n2, l) blocks, keeping coherences
/// in (k1, k2) within each block.
pub fn partial_trace_ground(rho: &Array2<C64>, table: &BasisTable) -> Result<GroundDensityMatrix> {
    let dim = table.len();
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: rho.nrows() });
    }
    let n = table.trunc.atoms;
    let d = n + 1;
    let mut out = Array2::<C64>::zeros((d * d, d * d));
    for r in 0..dim {
        let sr = table.state(r);
        for c in 0..dim {
            let sc = table.state(c);
            if sr.n1 == sc.n1 && sr.n2 == sc.n2 && sr.l == sc.l {
                out[[sr.k1 * d + sr.k2, sc.k1 * d + sc.k2]] += rho[[r, c]];
            }
        }
    }
    Ok(GroundDensityMatrix { atoms: n, matrix: out })
}

/// Partial transpose over the first condensate:
/// ((k1,k2),(k1',k2')) -> ((k1',k2),(k1,k2')).
pub fn partial_transpose(rho_g: &GroundDensityMatrix) -> Array2<C64> {
    let d = rho_g.dim();
    Array2::from_shape_fn((d * d, d * d), |(row, col)| {
        let (k1, k2) = (row / d, row % d);
        let (k1p, k2p) = (col / d, col % d);
        rho_g.matrix[[k1p * d + k2, k1 * d + k2p]]
    })
}

/// Eigenvalues of a Hermitian matrix, rejecting non-Hermitian input.
pub fn hermitian_eigenvalues(m: &Array2<C64>) -> Result<Vec<f64>> {
    let dev = linalg::hermiticity_deviation(m);
    if dev > 1e-10 {
        return Err(Error::NotHermitian(dev));
    }
    Ok(linalg::eigvalsh(m))
}

/// E = log2 sum_i |lambda_i| of the partial transpose.
pub fn log_negativity(rho_g: &GroundDensityMatrix) -> Result<f64> {
    let pt = partial_transpose(rho_g);
    let lambdas = hermitian_eigenvalues(&pt)?;
    let trace_norm: f64 = lambdas.iter().map(|l| l.abs()).sum();
    Ok(trace_norm.log2())
}

/// E_max = log2(N + 1).
pub fn max_entanglement(n: usize) -> f64 {
    ((n + 1) as f64).log2()
}

/// Normalized entanglement deficit between an ideal and a simulated curve.
pub fn delta_e(e_ideal: f64, e_scheme: f64, n: usize) -> f64 {
    let emax = max_entanglement(n);
    e_ideal / emax - e_scheme / emax
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{build_basis, BasisState, TruncationSpec};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Ground-manifold density matrix from a (k1, k2) amplitude matrix.
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
    fn partial_trace_of_ground_supported_state() {
        let table = build_basis(TruncationSpec::new(1)).unwrap();
        let dim = table.len();
        // equal superposition over the 4 ground states: all entries 1/4
        let mut rho = Array2::<C64>::zeros((dim, dim));
        let ground: Vec<usize> = (0..dim)
            .filter(|&i| {
                let s = table.state(i);
                s.n1 == 0 && s.n2 == 0 && s.l == 0
            })
            .collect();
        assert_eq!(ground.len(), 4);
        for &i in &ground {
            for &j in &ground {
                rho[[i, j]] = c(0.25, 0.0);
            }
        }
        let g = partial_trace_ground(&rho, &table).unwrap();
        assert!((g.trace() - 1.0).abs() < 1e-15);
        for i in 0..4 {
            for j in 0..4 {
                assert!((g.matrix[[i, j]] - c(0.25, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn partial_trace_discards_cross_block_coherence() {
        let table = build_basis(TruncationSpec::new(1)).unwrap();
        let dim = table.len();
        let g0 = table.index_of(&BasisState { k1: 0, n1: 0, k2: 0, n2: 0, l: 0 }).unwrap();
        let e1 = table.index_of(&BasisState { k1: 0, n1: 1, k2: 0, n2: 0, l: 0 }).unwrap();
        let mut rho = Array2::<C64>::zeros((dim, dim));
        rho[[g0, g0]] = c(0.5, 0.0);
        rho[[e1, e1]] = c(0.5, 0.0);
        rho[[g0, e1]] = c(0.5, 0.0);
        rho[[e1, g0]] = c(0.5, 0.0);
        let g = partial_trace_ground(&rho, &table).unwrap();
        // all weight lands on k1 = k2 = 0; coherence between blocks is gone
        assert!((g.trace() - 1.0).abs() < 1e-15);
        assert!((g.matrix[[0, 0]].re - 1.0).abs() < 1e-15);
        let off: f64 = g
            .matrix
            .indexed_iter()
            .filter(|((i, j), _)| i != j)
            .map(|(_, v)| v.norm())
            .sum();
        assert_eq!(off, 0.0);
    }

    #[test]
    fn partial_trace_preserves_trace() {
        let table = build_basis(TruncationSpec::new(2)).unwrap();
        let dim = table.len();
        // normalized diagonal test state spread over every label
        let mut rho = Array2::<C64>::zeros((dim, dim));
        let w = 1.0 / dim as f64;
        for i in 0..dim {
            rho[[i, i]] = c(w, 0.0);
        }
        let g = partial_trace_ground(&rho, &table).unwrap();
        assert!((g.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partial_transpose_identity_and_bell() {
        // identity is a fixed point
        let eye = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { c(0.25, 0.0) } else { c(0.0, 0.0) });
        let g = GroundDensityMatrix { atoms: 1, matrix: eye.clone() };
        let pt = partial_transpose(&g);
        assert_eq!(pt, eye);

        // Bell state |00> + |11>: PT eigenvalues {1/2, 1/2, 1/2, -1/2}
        let mut amps = Array2::<C64>::zeros((2, 2));
        amps[[0, 0]] = c(1.0 / 2f64.sqrt(), 0.0);
        amps[[1, 1]] = c(1.0 / 2f64.sqrt(), 0.0);
        let bell = pure_ground(1, &amps);
        let mut ev = hermitian_eigenvalues(&partial_transpose(&bell)).unwrap();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [-0.5, 0.5, 0.5, 0.5];
        for (a, b) in ev.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((log_negativity(&bell).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn product_state_has_zero_negativity() {
        // random-ish product amplitudes
        let u = [c(0.6, 0.1), c(0.3, -0.4), c(0.5, 0.2)];
        let v = [c(0.2, 0.5), c(0.7, 0.0), c(-0.1, 0.3)];
        let nu: f64 = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let nv: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let amps = Array2::from_shape_fn((3, 3), |(i, j)| u[i] / nu * v[j] / nv);
        let g = pure_ground(2, &amps);
        let e = log_negativity(&g).unwrap();
        assert!(e.abs() < 1e-9, "E = {e}");
    }

    #[test]
    fn uniform_diagonal_state_is_maximal() {
        for n in 1..=8usize {
            let d = n + 1;
            let w = 1.0 / (d as f64).sqrt();
            let amps = Array2::from_shape_fn((d, d), |(i, j)| {
                if i == j { c(w, 0.0) } else { c(0.0, 0.0) }
            });
            let g = pure_ground(n, &amps);
            let e = log_negativity(&g).unwrap();
            assert!((e - max_entanglement(n)).abs() < 1e-9, "N={n}: {e}");
        }
    }

    #[test]
    fn swap_symmetry_of_trace_norm() {
        // transpose over subsystem 2 realized by swapping k2 indices
        let amps = Array2::from_shape_fn((3, 3), |(i, j)| {
            c(0.1 + 0.2 * i as f64 - 0.05 * j as f64, 0.03 * (i * j) as f64)
        });
        let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let amps = amps.mapv(|z| z / norm);
        let g = pure_ground(2, &amps);
        let e1 = log_negativity(&g).unwrap();
        let d = 3;
        let pt2 = Array2::from_shape_fn((d * d, d * d), |(row, col)| {
            let (k1, k2) = (row / d, row % d);
            let (k1p, k2p) = (col / d, col % d);
            g.matrix[[k1 * d + k2p, k1p * d + k2]]
        });
        let tn2: f64 = hermitian_eigenvalues(&pt2).unwrap().iter().map(|l| l.abs()).sum();
        assert!((e1 - tn2.log2()).abs() < 1e-9);
    }

    #[test]
    fn local_phase_invariance() {
        let amps = Array2::from_shape_fn((3, 3), |(i, j)| {
            c(0.4 - 0.1 * i as f64 + 0.15 * j as f64, 0.05 + 0.02 * (i + 2 * j) as f64)
        });
        let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let amps = amps.mapv(|z| z / norm);
        let e0 = log_negativity(&pure_ground(2, &amps)).unwrap();
        // conjugate by exp(-i theta Sz) on each side: phase exp(-i(th1 m1 + th2 m2))
        let (th1, th2) = (0.37, -1.21);
        let n = 2i64;
        let rotated = Array2::from_shape_fn((3, 3), |(i, j)| {
            let m1 = (n - 2 * i as i64) as f64;
            let m2 = (n - 2 * j as i64) as f64;
            amps[[i, j]] * C64::from_polar(1.0, -(th1 * m1 + th2 * m2))
        });
        let e1 = log_negativity(&pure_ground(2, &rotated)).unwrap();
        assert!((e0 - e1).abs() < 1e-9);
    }

    #[test]
    fn max_entanglement_values() {
        assert!((max_entanglement(1) - 1.0).abs() < 1e-15);
        assert!((max_entanglement(7) - 3.0).abs() < 1e-15);
        assert!((max_entanglement(8) - 9f64.log2()).abs() < 1e-15);
    }

    #[test]
    fn delta_e_arithmetic() {
        assert_eq!(delta_e(0.7, 0.7, 3), 0.0);
        assert!((delta_e(max_entanglement(4), 0.0, 4) - 1.0).abs() < 1e-15);
        let emax = max_entanglement(2);
        assert!((delta_e(0.5 * emax, 0.3 * emax, 2) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut m = Array2::<C64>::zeros((2, 2));
        m[[0, 1]] = c(1.0, 0.0);
        assert!(matches!(hermitian_eigenvalues(&m), Err(Error::NotHermitian(_))));
    }
}
