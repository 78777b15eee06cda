//! Truncated product Fock basis |k1 n1 k2 n2 l> for two N-atom BECs and the
//! common cavity mode, plus sparse matrix representations of the mode, spin
//! and collapse operators over it.
//!
//! Labels: `k_i` atoms in level b_i, `n_i` atoms in the excited level e_i,
//! `l` photons in the common mode. The a_i occupation is implicit,
//! `N - k_i - n_i`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Basis truncation: atom number per BEC plus hard cutoffs on the excited
/// and photon occupations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TruncationSpec {
    /// Atoms per BEC.
    #[serde(alias = "N")]
    pub atoms: usize,
    /// Max atoms in e_i (cutoff on n_i).
    #[serde(default = "one")]
    pub max_excited: usize,
    /// Max photons in the common mode (cutoff on l).
    #[serde(default = "one")]
    pub max_photons: usize,
}

fn one() -> usize {
    1
}

impl TruncationSpec {
    pub fn new(atoms: usize) -> Self {
        TruncationSpec { atoms, max_excited: 1, max_photons: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms < 1 {
            return Err(Error::InvalidTruncation("atoms must be >= 1".into()));
        }
        if self.max_excited > self.atoms {
            return Err(Error::InvalidTruncation(format!(
                "max_excited {} exceeds atoms {}",
                self.max_excited, self.atoms
            )));
        }
        Ok(())
    }

    /// Closed-form basis size: (per-BEC count)^2 * (photon levels).
    pub fn dimension(&self) -> usize {
        let per_bec: usize = (0..=self.max_excited)
            .map(|n| self.atoms - n + 1)
            .sum();
        per_bec * per_bec * (self.max_photons + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisState {
    pub k1: usize,
    pub n1: usize,
    pub k2: usize,
    pub n2: usize,
    pub l: usize,
}

impl BasisState {
    /// Excitation sector (k1+n1, k2+n2); conserved by the coherent dynamics.
    pub fn sector(&self) -> (usize, usize) {
        (self.k1 + self.n1, self.k2 + self.n2)
    }
}

/// The enumerated basis and its index map. Ordering is lexicographic in
/// (k1, n1, k2, n2, l).
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub trunc: TruncationSpec,
    states: Vec<BasisState>,
    index: HashMap<BasisState, usize>,
}

pub fn build_basis(trunc: TruncationSpec) -> Result<BasisTable> {
    trunc.validate()?;
    let n = trunc.atoms;
    let mut states = Vec::with_capacity(trunc.dimension());
    for k1 in 0..=n {
        for n1 in 0..=trunc.max_excited.min(n - k1) {
            for k2 in 0..=n {
                for n2 in 0..=trunc.max_excited.min(n - k2) {
                    for l in 0..=trunc.max_photons {
                        states.push(BasisState { k1, n1, k2, n2, l });
                    }
                }
            }
        }
    }
    let index = states
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, i))
        .collect();
    Ok(BasisTable { trunc, states, index })
}

impl BasisTable {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> BasisState {
        self.states[i]
    }

    pub fn states(&self) -> &[BasisState] {
        &self.states
    }

    pub fn index_of(&self, s: &BasisState) -> Option<usize> {
        self.index.get(s).copied()
    }
}

/// Mode annihilation operators. `A1`/`A2` act on the implicit a_i occupation
/// and are diagonal in the label basis (the labels do not track a_i).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    A1,
    B1,
    E1,
    A2,
    B2,
    E2,
    C,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a1" => Ok(Mode::A1),
            "b1" => Ok(Mode::B1),
            "e1" => Ok(Mode::E1),
            "a2" => Ok(Mode::A2),
            "b2" => Ok(Mode::B2),
            "e2" => Ok(Mode::E2),
            "c" => Ok(Mode::C),
            other => Err(Error::UnknownLabel(other.into())),
        }
    }
}

/// Collapse channels of the master equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Collapse {
    Fa1,
    Fb1,
    Fa2,
    Fb2,
    Cavity,
}

impl Collapse {
    pub const ALL: [Collapse; 5] =
        [Collapse::Fa1, Collapse::Fb1, Collapse::Fa2, Collapse::Fb2, Collapse::Cavity];
}

impl FromStr for Collapse {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Fa1" => Ok(Collapse::Fa1),
            "Fb1" => Ok(Collapse::Fb1),
            "Fa2" => Ok(Collapse::Fa2),
            "Fb2" => Ok(Collapse::Fb2),
            "c" => Ok(Collapse::Cavity),
            other => Err(Error::UnknownLabel(other.into())),
        }
    }
}

impl fmt::Display for Collapse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Collapse::Fa1 => "Fa1",
            Collapse::Fb1 => "Fb1",
            Collapse::Fa2 => "Fa2",
            Collapse::Fb2 => "Fb2",
            Collapse::Cavity => "c",
        };
        f.write_str(s)
    }
}

/// Sparse complex matrix in compressed-row form.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOperator {
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut merged: Vec<(usize, usize, C64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            debug_assert!(r < dim && c < dim);
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|t| t.2.norm_sqr() != 0.0);
        let mut row_ptr = vec![0usize; dim + 1];
        for &(r, _, _) in &merged {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = merged.iter().map(|t| t.1).collect();
        let vals = merged.iter().map(|t| t.2).collect();
        SparseOperator { dim, row_ptr, cols, vals }
    }

    pub fn zeros(dim: usize) -> Self {
        SparseOperator { dim, row_ptr: vec![0; dim + 1], cols: vec![], vals: vec![] }
    }

    pub fn identity(dim: usize) -> Self {
        let triplets = (0..dim).map(|i| (i, i, C64::new(1.0, 0.0))).collect();
        SparseOperator::from_triplets(dim, triplets)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let triplets = diag
            .iter()
            .enumerate()
            .map(|(i, &d)| (i, i, C64::new(d, 0.0)))
            .collect();
        SparseOperator::from_triplets(diag.len(), triplets)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        let (lo, hi) = (self.row_ptr[row], self.row_ptr[row + 1]);
        for p in lo..hi {
            if self.cols[p] == col {
                return self.vals[p];
            }
        }
        C64::new(0.0, 0.0)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |p| (r, self.cols[p], self.vals[p]))
        })
    }

    pub fn adjoint(&self) -> Self {
        let triplets = self.triplets().map(|(r, c, v)| (c, r, v.conj())).collect();
        SparseOperator::from_triplets(self.dim, triplets)
    }

    pub fn scale(&self, factor: C64) -> Self {
        let triplets = self.triplets().map(|(r, c, v)| (r, c, v * factor)).collect();
        SparseOperator::from_triplets(self.dim, triplets)
    }

    pub fn add(&self, other: &SparseOperator) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let triplets = self.triplets().chain(other.triplets()).collect();
        Ok(SparseOperator::from_triplets(self.dim, triplets))
    }

    pub fn matmul(&self, other: &SparseOperator) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut triplets = Vec::new();
        for (r, k, v) in self.triplets() {
            for p in other.row_ptr[k]..other.row_ptr[k + 1] {
                triplets.push((r, other.cols[p], v * other.vals[p]));
            }
        }
        Ok(SparseOperator::from_triplets(self.dim, triplets))
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let adj = self.adjoint();
        let mut dev = 0.0f64;
        for (r, c, v) in self.triplets() {
            dev = dev.max((v - adj.get(r, c)).norm());
        }
        for (r, c, v) in adj.triplets() {
            dev = dev.max((v - self.get(r, c)).norm());
        }
        dev
    }

    /// out = self * dense
    pub fn apply_left(&self, dense: &Array2<C64>, out: &mut Array2<C64>) {
        out.fill(C64::new(0.0, 0.0));
        let n = self.dim;
        let d = dense.as_slice().expect("contiguous");
        let o = out.as_slice_mut().expect("contiguous");
        for r in 0..n {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let k = self.cols[p];
                let v = self.vals[p];
                let src = &d[k * n..(k + 1) * n];
                let dst = &mut o[r * n..(r + 1) * n];
                for j in 0..n {
                    dst[j] += v * src[j];
                }
            }
        }
    }

    /// out = dense * self
    pub fn apply_right(&self, dense: &Array2<C64>, out: &mut Array2<C64>) {
        out.fill(C64::new(0.0, 0.0));
        let n = self.dim;
        let d = dense.as_slice().expect("contiguous");
        let o = out.as_slice_mut().expect("contiguous");
        // (dense * S)[i][c] = sum_k dense[i][k] S[k][c]
        for k in 0..n {
            for p in self.row_ptr[k]..self.row_ptr[k + 1] {
                let c = self.cols[p];
                let v = self.vals[p];
                for i in 0..n {
                    o[i * n + c] += d[i * n + k] * v;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::<C64>::zeros((self.dim, self.dim));
        for (r, c, v) in self.triplets() {
            m[[r, c]] += v;
        }
        m
    }
}

fn sq(x: usize) -> f64 {
    (x as f64).sqrt()
}

/// Annihilation operator for one mode in the truncated label basis.
/// Transitions that would leave the truncation contribute nothing.
pub fn mode_operator(mode: Mode, table: &BasisTable) -> SparseOperator {
    let dim = table.len();
    let mut triplets = Vec::new();
    let n_atoms = table.trunc.atoms;
    for (i, s) in table.states().iter().enumerate() {
        match mode {
            Mode::A1 | Mode::A2 => {
                // diagonal sqrt of the implicit a_i occupation
                let occ = if mode == Mode::A1 {
                    n_atoms - s.k1 - s.n1
                } else {
                    n_atoms - s.k2 - s.n2
                };
                if occ > 0 {
                    triplets.push((i, i, C64::new(sq(occ), 0.0)));
                }
            }
            Mode::B1 | Mode::B2 => {
                let k = if mode == Mode::B1 { s.k1 } else { s.k2 };
                if k > 0 {
                    let mut t = *s;
                    if mode == Mode::B1 {
                        t.k1 -= 1;
                    } else {
                        t.k2 -= 1;
                    }
                    if let Some(j) = table.index_of(&t) {
                        triplets.push((j, i, C64::new(sq(k), 0.0)));
                    }
                }
            }
            Mode::E1 | Mode::E2 => {
                let n = if mode == Mode::E1 { s.n1 } else { s.n2 };
                if n > 0 {
                    let mut t = *s;
                    if mode == Mode::E1 {
                        t.n1 -= 1;
                    } else {
                        t.n2 -= 1;
                    }
                    if let Some(j) = table.index_of(&t) {
                        triplets.push((j, i, C64::new(sq(n), 0.0)));
                    }
                }
            }
            Mode::C => {
                if s.l > 0 {
                    let mut t = *s;
                    t.l -= 1;
                    if let Some(j) = table.index_of(&t) {
                        triplets.push((j, i, C64::new(sq(s.l), 0.0)));
                    }
                }
            }
        }
    }
    SparseOperator::from_triplets(dim, triplets)
}

/// Collapse operators of the master equation: F_a = a^dag e, F_b = b^dag e,
/// and the cavity mode c.
pub fn collapse_operator(label: Collapse, table: &BasisTable) -> SparseOperator {
    match label {
        Collapse::Fa1 => mode_operator(Mode::A1, table)
            .adjoint()
            .matmul(&mode_operator(Mode::E1, table))
            .expect("same basis"),
        Collapse::Fb1 => mode_operator(Mode::B1, table)
            .adjoint()
            .matmul(&mode_operator(Mode::E1, table))
            .expect("same basis"),
        Collapse::Fa2 => mode_operator(Mode::A2, table)
            .adjoint()
            .matmul(&mode_operator(Mode::E2, table))
            .expect("same basis"),
        Collapse::Fb2 => mode_operator(Mode::B2, table)
            .adjoint()
            .matmul(&mode_operator(Mode::E2, table))
            .expect("same basis"),
        Collapse::Cavity => mode_operator(Mode::C, table),
    }
}

/// S^z_i = a_i^dag a_i - b_i^dag b_i, diagonal with entry N - 2 k_i - n_i.
pub fn spin_z_operator(bec: u8, table: &BasisTable) -> SparseOperator {
    let n = table.trunc.atoms as i64;
    let diag: Vec<f64> = table
        .states()
        .iter()
        .map(|s| {
            let (k, ne) = if bec == 1 { (s.k1, s.n1) } else { (s.k2, s.n2) };
            (n - 2 * k as i64 - ne as i64) as f64
        })
        .collect();
    SparseOperator::from_diagonal(&diag)
}
