//! Dense complex linear algebra: Hermitian eigensolver (cyclic Jacobi) and
//! a Schur decomposition for the small non-Hermitian sector blocks used by
//! the implicit integrator.
//!
//! Matrices here are at most a few hundred on a side (the ground manifold is
//! 81x81 for N = 8, sector blocks are at most 8x8), so O(n^3) methods with
//! good constants are the right tool.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Max |a_ij - conj(a_ji)| over all pairs.
pub fn hermiticity_deviation(a: &Array2<C64>) -> f64 {
    let n = a.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    dev
}

fn off_diagonal_norm(a: &Array2<C64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[[i, j]].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix,
/// by cyclic Jacobi with complex rotations.
pub fn eigh(a: &Array2<C64>) -> (Vec<f64>, Array2<C64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<C64>::eye(n);
    let scale = m
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let tol = 1e-14 * scale;
    for _sweep in 0..60 {
        if off_diagonal_norm(&m) <= tol * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                let b = apq.norm();
                if b <= tol {
                    m[[p, q]] = C64::new(0.0, 0.0);
                    m[[q, p]] = C64::new(0.0, 0.0);
                    continue;
                }
                let u = apq / b; // phase of the off-diagonal entry
                let app = m[[p, p]].re;
                let aqq = m[[q, q]].re;
                let tau = (aqq - app) / (2.0 * b);
                // small root of t^2 - 2 tau t - 1 = 0 for the rotation
                // convention below (which applies the angle with flipped sign)
                let t = if tau >= 0.0 {
                    -1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let uc = u.conj();
                // columns: U = D.R with D = diag(1, conj(u)), R the real rotation
                for i in 0..n {
                    let aip = m[[i, p]];
                    let aiq = m[[i, q]];
                    m[[i, p]] = c * aip + s * uc * aiq;
                    m[[i, q]] = -s * aip + c * uc * aiq;
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip + s * uc * viq;
                    v[[i, q]] = -s * vip + c * uc * viq;
                }
                for j in 0..n {
                    let apj = m[[p, j]];
                    let aqj = m[[q, j]];
                    m[[p, j]] = c * apj + s * u * aqj;
                    m[[q, j]] = -s * apj + c * u * aqj;
                }
                m[[p, q]] = C64::new(0.0, 0.0);
                m[[q, p]] = C64::new(0.0, 0.0);
                m[[p, p]] = C64::new(m[[p, p]].re, 0.0);
                m[[q, q]] = C64::new(m[[q, q]].re, 0.0);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let eig: Vec<f64> = (0..n).map(|i| m[[i, i]].re).collect();
    order.sort_by(|&i, &j| eig[i].partial_cmp(&eig[j]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig[i]).collect();
    let mut vectors = Array2::<C64>::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[[row, col]] = v[[row, src]];
        }
    }
    (values, vectors)
}

/// Eigenvalues only, ascending.
pub fn eigvalsh(a: &Array2<C64>) -> Vec<f64> {
    eigh(a).0
}

/// Dense inverse by Gauss-Jordan elimination with partial pivoting.
pub fn inverse(a: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::<C64>::eye(n);
    for col in 0..n {
        let (pivot, mag) = (col..n)
            .map(|r| (r, m[[r, col]].norm()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if mag == 0.0 {
            return Err(Error::InvalidState("singular matrix in inverse".into()));
        }
        if pivot != col {
            for j in 0..n {
                m.swap([pivot, j], [col, j]);
                inv.swap([pivot, j], [col, j]);
            }
        }
        let d = m[[col, col]];
        for j in 0..n {
            m[[col, j]] /= d;
            inv[[col, j]] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[[r, col]];
            if f.norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..n {
                let mcj = m[[col, j]];
                let icj = inv[[col, j]];
                m[[r, j]] -= f * mcj;
                inv[[r, j]] -= f * icj;
            }
        }
    }
    Ok(inv)
}

/// Singular values (descending) by one-sided Jacobi: column pairs are
/// rotated until mutually orthogonal and the singular values read off as
/// column norms. Unlike an eigendecomposition of the Gram matrix this keeps
/// high *relative* accuracy for tiny singular values, which matters when the
/// nuclear norm of a near-product state is compared against 1 at 1e-9.
pub fn singular_values(a: &Array2<C64>) -> Vec<f64> {
    let (n, m) = (a.nrows(), a.ncols());
    let mut w = a.clone();
    let tol = 1e-15;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..m {
            for q in (p + 1)..m {
                let mut app = 0.0f64;
                let mut aqq = 0.0f64;
                let mut apq = C64::new(0.0, 0.0);
                for i in 0..n {
                    app += w[[i, p]].norm_sqr();
                    aqq += w[[i, q]].norm_sqr();
                    apq += w[[i, p]].conj() * w[[i, q]];
                }
                let b = apq.norm();
                if b <= tol * (app * aqq).sqrt() || b == 0.0 {
                    continue;
                }
                rotated = true;
                let u = apq / b;
                let tau = (aqq - app) / (2.0 * b);
                // small root of b t^2 + (aqq - app) t - b = 0
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let uc = u.conj();
                for i in 0..n {
                    let wip = w[[i, p]];
                    let wiq = w[[i, q]];
                    w[[i, p]] = c * wip - s * uc * wiq;
                    w[[i, q]] = s * u * wip + c * wiq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: Vec<f64> =
        (0..m).map(|j| (0..n).map(|i| w[[i, j]].norm_sqr()).sum::<f64>().sqrt()).collect();
    sigma.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sigma
}

/// Schur decomposition `a = q t q^H` with `t` upper triangular and `q`
/// unitary, for small dense complex matrices.
pub struct Schur {
    pub q: Array2<C64>,
    pub t: Array2<C64>,
}

struct Givens {
    c: C64,
    s: C64,
}

/// Rotation G = [[c, s], [-conj(s), conj(c)]]... we use the form that maps
/// (a, b) to (r, 0): G = (1/r) [[conj(a), conj(b)], [-b, a]].
fn givens(a: C64, b: C64) -> (Givens, f64) {
    let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
    if r == 0.0 {
        return (
            Givens {
                c: C64::new(1.0, 0.0),
                s: C64::new(0.0, 0.0),
            },
            0.0,
        );
    }
    (Givens { c: a.conj() / r, s: b.conj() / r }, r)
}

fn apply_givens_rows(m: &mut Array2<C64>, g: &Givens, i: usize, j: usize, from: usize) {
    let n = m.ncols();
    for col in from..n {
        let a = m[[i, col]];
        let b = m[[j, col]];
        m[[i, col]] = g.c * a + g.s * b;
        m[[j, col]] = -g.s.conj() * a + g.c.conj() * b;
    }
}

fn apply_givens_cols(m: &mut Array2<C64>, g: &Givens, i: usize, j: usize, upto: usize) {
    for row in 0..upto {
        let a = m[[row, i]];
        let b = m[[row, j]];
        m[[row, i]] = a * g.c.conj() + b * g.s.conj();
        m[[row, j]] = -a * g.s + b * g.c;
    }
}

/// Wilkinson shift: eigenvalue of the trailing 2x2 block closest to its
/// bottom-right entry.
fn wilkinson_shift(t: &Array2<C64>, m: usize) -> C64 {
    if m < 2 {
        return t[[m - 1, m - 1]];
    }
    let a = t[[m - 2, m - 2]];
    let b = t[[m - 2, m - 1]];
    let c = t[[m - 1, m - 2]];
    let d = t[[m - 1, m - 1]];
    let tr = a + d;
    let det = a * d - b * c;
    let disc = (tr * tr - 4.0 * det).sqrt();
    let l1 = (tr + disc) / 2.0;
    let l2 = (tr - disc) / 2.0;
    if (l1 - d).norm() < (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

pub fn schur(a: &Array2<C64>) -> Result<Schur> {
    let n = a.nrows();
    let mut t = a.clone();
    let mut q = Array2::<C64>::eye(n);

    // Hessenberg reduction with Givens similarity transforms.
    for col in 0..n.saturating_sub(2) {
        for row in (col + 2..n).rev() {
            let b = t[[row, col]];
            if b.norm() == 0.0 {
                continue;
            }
            let apiv = t[[row - 1, col]];
            let (g, _) = givens(apiv, b);
            apply_givens_rows(&mut t, &g, row - 1, row, col);
            apply_givens_cols(&mut t, &g, row - 1, row, n);
            apply_givens_cols(&mut q, &g, row - 1, row, n);
        }
    }

    // Shifted QR on the Hessenberg form.
    let scale = a
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let eps = 1e-15;
    let mut m = n;
    let mut iter_budget = 40 * n.max(1);
    while m > 1 {
        // deflate converged subdiagonals
        let mut deflated = false;
        for i in (1..m).rev() {
            let sub = t[[i, i - 1]].norm();
            if sub <= eps * (t[[i - 1, i - 1]].norm() + t[[i, i]].norm() + scale) {
                t[[i, i - 1]] = C64::new(0.0, 0.0);
                if i == m - 1 {
                    m -= 1;
                    deflated = true;
                    break;
                }
            }
        }
        if deflated || m <= 1 {
            continue;
        }
        if iter_budget == 0 {
            return Err(Error::SolverDiverged {
                residual: t[[m - 1, m - 2]].norm(),
                iterations: 40 * n,
            });
        }
        iter_budget -= 1;

        // find the start of the active unreduced block ending at m
        let mut lo = m - 1;
        while lo > 0 && t[[lo, lo - 1]].norm() != 0.0 {
            lo -= 1;
        }
        let mu = wilkinson_shift(&t, m);
        for i in lo..m {
            t[[i, i]] -= mu;
        }
        // QR factor the active block, then multiply back in reverse order.
        let mut rots: Vec<(Givens, usize)> = Vec::with_capacity(m - lo);
        for i in lo..m - 1 {
            let (g, _) = givens(t[[i, i]], t[[i + 1, i]]);
            apply_givens_rows(&mut t, &g, i, i + 1, i);
            t[[i + 1, i]] = C64::new(0.0, 0.0);
            rots.push((g, i));
        }
        for (g, i) in &rots {
            apply_givens_cols(&mut t, g, *i, *i + 1, (i + 2).min(n));
            apply_givens_cols(&mut q, g, *i, *i + 1, n);
        }
        for i in lo..m {
            t[[i, i]] += mu;
        }
    }
    // clean the strictly-lower part
    for i in 0..n {
        for j in 0..i {
            t[[i, j]] = C64::new(0.0, 0.0);
        }
    }
    Ok(Schur { q, t })
}
