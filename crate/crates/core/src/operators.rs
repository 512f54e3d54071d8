//! Composite Hilbert space of one cavity mode and `n_atoms` three-level
//! atoms, plus the sparse operator algebra used everywhere else.
//!
//! Basis ordering: the cavity Fock index varies slowest, followed by atom 0,
//! atom 1, ... with the atomic level index (g = 0, e = 1, f = 2) varying
//! fastest for the last atom.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Dimension limits applied when building spaces and dense representations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionCaps {
    /// Largest state-vector dimension accepted.
    pub max_vector_dim: usize,
    /// Largest dimension of any dense matrix path (dense diagonalization,
    /// dense LU on the vectorized Liouvillian).
    pub max_dense_dim: usize,
}

impl Default for DimensionCaps {
    fn default() -> Self {
        DimensionCaps { max_vector_dim: 100_000, max_dense_dim: 4_000 }
    }
}

/// Level of a three-level (transmon-like) atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    G,
    E,
    F,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::G, Level::E, Level::F];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Level> {
        match i {
            0 => Some(Level::G),
            1 => Some(Level::E),
            2 => Some(Level::F),
            _ => None,
        }
    }

    /// Excitation number carried by the level (g = 0, e = 1, f = 2).
    pub fn excitation(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            Level::G => 'g',
            Level::E => 'e',
            Level::F => 'f',
        }
    }
}

pub const LEVELS_PER_ATOM: usize = 3;

/// Shape of the composite cavity + atoms Hilbert space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceDescriptor {
    n_max: usize,
    n_atoms: usize,
    dim: usize,
    caps: DimensionCaps,
}

/// Builds a space with Fock states `0..n_max` and `n_atoms` three-level atoms.
pub fn build_space(n_max: usize, n_atoms: usize) -> Result<SpaceDescriptor> {
    SpaceDescriptor::with_caps(n_max, n_atoms, DimensionCaps::default())
}

impl SpaceDescriptor {
    pub fn with_caps(n_max: usize, n_atoms: usize, caps: DimensionCaps) -> Result<Self> {
        if n_max < 2 {
            return Err(Error::InvalidSpace(format!("n_max must be at least 2, got {n_max}")));
        }
        let atomic = u32::try_from(n_atoms)
            .ok()
            .and_then(|n| LEVELS_PER_ATOM.checked_pow(n))
            .ok_or(Error::DimensionCap { what: "state vector", dim: usize::MAX, cap: caps.max_vector_dim })?;
        let dim = n_max.checked_mul(atomic).ok_or(Error::DimensionCap {
            what: "state vector",
            dim: usize::MAX,
            cap: caps.max_vector_dim,
        })?;
        if dim > caps.max_vector_dim {
            return Err(Error::DimensionCap { what: "state vector", dim, cap: caps.max_vector_dim });
        }
        Ok(SpaceDescriptor { n_max, n_atoms, dim, caps })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn caps(&self) -> DimensionCaps {
        self.caps
    }

    /// Dimension of the atomic factor, `3^n_atoms`.
    pub fn atomic_dim(&self) -> usize {
        self.dim / self.n_max
    }

    /// Flat basis index of `|n; levels[0], levels[1], ...⟩`.
    pub fn index(&self, n: usize, levels: &[Level]) -> Result<usize> {
        if n >= self.n_max {
            return Err(Error::IndexOutOfRange(format!("Fock index {n} >= n_max {}", self.n_max)));
        }
        if levels.len() != self.n_atoms {
            return Err(Error::DimensionMismatch { expected: self.n_atoms, found: levels.len() });
        }
        let atomic = levels.iter().fold(0, |acc, l| acc * LEVELS_PER_ATOM + l.index());
        Ok(n * self.atomic_dim() + atomic)
    }

    /// Inverse of [`SpaceDescriptor::index`].
    pub fn decompose(&self, index: usize) -> Result<(usize, Vec<Level>)> {
        if index >= self.dim {
            return Err(Error::IndexOutOfRange(format!("basis index {index} >= dimension {}", self.dim)));
        }
        let ad = self.atomic_dim();
        let n = index / ad;
        let mut rest = index % ad;
        let mut levels = vec![Level::G; self.n_atoms];
        for slot in levels.iter_mut().rev() {
            *slot = Level::from_index(rest % LEVELS_PER_ATOM).unwrap();
            rest /= LEVELS_PER_ATOM;
        }
        Ok((n, levels))
    }

    /// Fock number of a basis index.
    pub fn photon_number(&self, index: usize) -> usize {
        index / self.atomic_dim()
    }

    /// Level of atom `atom` in basis state `index`.
    pub fn atom_level(&self, index: usize, atom: usize) -> Level {
        let stride = LEVELS_PER_ATOM.pow((self.n_atoms - 1 - atom) as u32);
        Level::from_index((index / stride) % LEVELS_PER_ATOM).unwrap()
    }

    /// Total excitation number `n + Σ_k (e_k + 2 f_k)` of a basis index.
    pub fn excitation_number(&self, index: usize) -> usize {
        let n = self.photon_number(index);
        n + (0..self.n_atoms).map(|k| self.atom_level(index, k).excitation()).sum::<usize>()
    }

    /// Ket label such as `|3;g,e⟩` (or `|3⟩` without atoms).
    pub fn label(&self, index: usize) -> String {
        let n = self.photon_number(index);
        if self.n_atoms == 0 {
            return format!("|{n}⟩");
        }
        let levels: Vec<String> =
            (0..self.n_atoms).map(|k| self.atom_level(index, k).symbol().to_string()).collect();
        format!("|{n};{}⟩", levels.join(","))
    }

    /// Normalized basis vector.
    pub fn basis_state(&self, n: usize, levels: &[Level]) -> Result<Vec<C64>> {
        let mut v = vec![ZERO; self.dim];
        v[self.index(n, levels)?] = ONE;
        Ok(v)
    }

    /// `|0; g, g, ...⟩`, the undriven zero-temperature ground state.
    pub fn ground_state(&self) -> Vec<C64> {
        let mut v = vec![ZERO; self.dim];
        v[0] = ONE;
        v
    }
}

/// Complex sparse matrix in compressed-row layout.
///
/// Equality compares entries only; the hermiticity flag is metadata.
#[derive(Clone)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<C64>,
    hermitian: bool,
}

impl PartialEq for SparseOperator {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
            && self.values == other.values
    }
}

impl fmt::Debug for SparseOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SparseOperator")
            .field("dim", &self.dim)
            .field("nnz", &self.nnz())
            .field("hermitian", &self.hermitian)
            .finish()
    }
}

impl SparseOperator {
    pub fn zeros(dim: usize) -> Self {
        SparseOperator { dim, row_ptr: vec![0; dim + 1], col_idx: Vec::new(), values: Vec::new(), hermitian: true }
    }

    pub fn identity(dim: usize) -> Self {
        let mut op = Self::diagonal(&vec![ONE; dim]);
        op.hermitian = true;
        op
    }

    pub fn diagonal(diag: &[C64]) -> Self {
        Self::from_triplets(diag.len(), diag.iter().enumerate().map(|(i, &v)| (i, i, v)))
            .expect("diagonal indices are in range")
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets<I>(dim: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut entries: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        if let Some(&(r, c, _)) = entries.iter().find(|&&(r, c, _)| r >= dim || c >= dim) {
            return Err(Error::IndexOutOfRange(format!("entry ({r}, {c}) outside dimension {dim}")));
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<C64> = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            if let (Some(&lr), Some(&lc)) = (rows.last(), col_idx.last()) {
                if lr == r && lc == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            col_idx.push(c);
            values.push(v);
        }
        let keep: Vec<bool> = values.iter().map(|v| *v != ZERO).collect();
        let mut k = 0;
        let (mut rows2, mut cols2, mut vals2) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..values.len() {
            if keep[i] {
                rows2.push(rows[i]);
                cols2.push(col_idx[i]);
                vals2.push(values[i]);
                k += 1;
            }
        }
        debug_assert_eq!(k, vals2.len());
        for &r in &rows2 {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseOperator { dim, row_ptr, col_idx: cols2, values: vals2, hermitian: false })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Whether hermiticity has been asserted (and checked) for this operator.
    pub fn is_marked_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Checks `max|A − A†| ≤ tol · max|A|` and sets the hermiticity flag.
    pub fn mark_hermitian(mut self, rel_tol: f64) -> Result<Self> {
        let dev = self.hermiticity_deviation();
        let scale = self.max_abs();
        if dev > rel_tol * scale {
            return Err(Error::InvalidInput(format!(
                "operator is not Hermitian: max|A - A†| = {dev:.3e} with max|A| = {scale:.3e}"
            )));
        }
        self.hermitian = true;
        Ok(self)
    }

    /// `max|A − A†|` over all entries.
    pub fn hermiticity_deviation(&self) -> f64 {
        let diff = self.add(&self.adjoint(), -ONE);
        diff.max_abs()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    /// Row `r` as `(col, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => ZERO,
        }
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (c, r, v.conj())))
            .expect("transposed indices stay in range");
        out.hermitian = self.hermitian;
        out
    }

    pub fn scale(&self, factor: C64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out.hermitian = self.hermitian && factor.im == 0.0;
        out
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(C64::new(factor, 0.0))
    }

    /// `self + factor · other`.
    pub fn add(&self, other: &SparseOperator, factor: C64) -> Self {
        assert_eq!(self.dim, other.dim, "operator dimensions differ");
        let mut out = Self::from_triplets(
            self.dim,
            self.triplets().chain(other.triplets().map(|(r, c, v)| (r, c, v * factor))),
        )
        .expect("indices stay in range");
        out.hermitian = self.hermitian && other.hermitian && factor.im == 0.0;
        out
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &SparseOperator) -> Self {
        assert_eq!(self.dim, other.dim, "operator dimensions differ");
        let mut acc = vec![ZERO; self.dim];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; self.dim];
        let mut trip = Vec::new();
        for r in 0..self.dim {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if !mark[c] {
                        mark[c] = true;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            for &c in &touched {
                trip.push((r, c, acc[c]));
                acc[c] = ZERO;
                mark[c] = false;
            }
            touched.clear();
        }
        Self::from_triplets(self.dim, trip).expect("indices stay in range")
    }

    /// Commutator `[self, other]`.
    pub fn commutator(&self, other: &SparseOperator) -> Self {
        self.matmul(other).add(&other.matmul(self), -ONE)
    }

    /// `y = A x`.
    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yr = s;
        }
    }

    /// `y = factor · A x`.
    pub fn apply_scaled_into(&self, factor: C64, x: &[C64], y: &mut [C64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yr = factor * s;
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.dim];
        self.apply_into(x, &mut y);
        y
    }

    /// `⟨x|A|x⟩` without normalization.
    pub fn sandwich(&self, x: &[C64]) -> C64 {
        let mut s = ZERO;
        for r in 0..self.dim {
            let mut row = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.values[k] * x[self.col_idx[k]];
            }
            s += x[r].conj() * row;
        }
        s
    }

    /// `⟨x|A|x⟩ / ⟨x|x⟩`.
    pub fn expectation(&self, x: &[C64]) -> C64 {
        self.sandwich(x) / norm_sqr(x)
    }

    /// `Tr(A ρ)` for a dense density matrix.
    pub fn expectation_dm(&self, rho: &DMatrix<C64>) -> C64 {
        let mut s = ZERO;
        for (r, c, v) in self.triplets() {
            s += v * rho[(c, r)];
        }
        s
    }

    /// `out = A · m` for dense `m`.
    pub fn left_mul_dense(&self, m: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        let n = m.ncols();
        out.fill(ZERO);
        for j in 0..n {
            let col = m.column(j);
            for r in 0..self.dim {
                let mut s = ZERO;
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    s += self.values[k] * col[self.col_idx[k]];
                }
                out[(r, j)] = s;
            }
        }
    }

    /// `out = m · A` for dense `m`.
    pub fn right_mul_dense(&self, m: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        out.fill(ZERO);
        for (r, c, v) in self.triplets() {
            // out[:, c] += m[:, r] * v
            for i in 0..m.nrows() {
                out[(i, c)] += m[(i, r)] * v;
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    /// Dense copy restricted to `basis` (rows and columns in that order).
    pub fn dense_block(&self, basis: &[usize]) -> DMatrix<C64> {
        let mut pos = std::collections::HashMap::with_capacity(basis.len());
        for (i, &b) in basis.iter().enumerate() {
            pos.insert(b, i);
        }
        let mut m = DMatrix::zeros(basis.len(), basis.len());
        for (i, &b) in basis.iter().enumerate() {
            for (c, v) in self.row(b) {
                if let Some(&j) = pos.get(&c) {
                    m[(i, j)] = v;
                }
            }
        }
        m
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        let n = m.nrows();
        Self::from_triplets(n, (0..n).flat_map(|r| (0..n).map(move |c| (r, c, m[(r, c)]))))
    }
}

pub fn norm_sqr(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

/// Kronecker product `A ⊗ B`.
pub fn tensor_product(a: &SparseOperator, b: &SparseOperator) -> Result<SparseOperator> {
    tensor_product_capped(a, b, DimensionCaps::default().max_vector_dim)
}

pub fn tensor_product_capped(a: &SparseOperator, b: &SparseOperator, cap: usize) -> Result<SparseOperator> {
    let dim = a
        .dim
        .checked_mul(b.dim)
        .filter(|&d| d <= cap)
        .ok_or(Error::DimensionCap { what: "tensor product", dim: a.dim.saturating_mul(b.dim), cap })?;
    let bd = b.dim;
    let mut out = SparseOperator::from_triplets(
        dim,
        a.triplets()
            .flat_map(|(ra, ca, va)| b.triplets().map(move |(rb, cb, vb)| (ra * bd + rb, ca * bd + cb, va * vb))),
    )?;
    out.hermitian = a.hermitian && b.hermitian;
    Ok(out)
}

/// Cavity annihilation operator `a` embedded on the full space.
pub fn annihilation(space: &SpaceDescriptor) -> SparseOperator {
    let ad = space.atomic_dim();
    let trip = (1..space.n_max()).flat_map(|n| {
        let amp = C64::new((n as f64).sqrt(), 0.0);
        (0..ad).map(move |s| ((n - 1) * ad + s, n * ad + s, amp))
    });
    SparseOperator::from_triplets(space.dim(), trip).expect("indices in range")
}

/// Cavity creation operator `a†`.
pub fn creation(space: &SpaceDescriptor) -> SparseOperator {
    annihilation(space).adjoint()
}

/// Photon number `a†a`.
pub fn number(space: &SpaceDescriptor) -> SparseOperator {
    let diag: Vec<C64> = (0..space.dim()).map(|i| C64::new(space.photon_number(i) as f64, 0.0)).collect();
    let mut op = SparseOperator::diagonal(&diag);
    op.hermitian = true;
    op
}

/// Total excitation number `a†a + Σ_k (|e⟩⟨e|_k + 2|f⟩⟨f|_k)`.
pub fn excitation_operator(space: &SpaceDescriptor) -> SparseOperator {
    let diag: Vec<C64> =
        (0..space.dim()).map(|i| C64::new(space.excitation_number(i) as f64, 0.0)).collect();
    let mut op = SparseOperator::diagonal(&diag);
    op.hermitian = true;
    op
}

/// `|bra⟩⟨ket|` acting on atom `atom`, identity on everything else.
pub fn atomic_op(space: &SpaceDescriptor, atom: usize, bra: Level, ket: Level) -> Result<SparseOperator> {
    if atom >= space.n_atoms() {
        return Err(Error::IndexOutOfRange(format!("atom {atom} but only {} atoms", space.n_atoms())));
    }
    let stride = LEVELS_PER_ATOM.pow((space.n_atoms() - 1 - atom) as u32);
    let shift = bra.index() as isize - ket.index() as isize;
    let trip = (0..space.dim())
        .filter(|&i| space.atom_level(i, atom) == ket)
        .map(|i| (((i as isize) + shift * stride as isize) as usize, i, ONE));
    let mut op = SparseOperator::from_triplets(space.dim(), trip)?;
    op.hermitian = bra == ket;
    Ok(op)
}

/// `Σ_k |l⟩⟨l|_k` population of level `l` summed over atoms.
pub fn level_population(space: &SpaceDescriptor, level: Level) -> SparseOperator {
    let diag: Vec<C64> = (0..space.dim())
        .map(|i| {
            let c = (0..space.n_atoms()).filter(|&k| space.atom_level(i, k) == level).count();
            C64::new(c as f64, 0.0)
        })
        .collect();
    let mut op = SparseOperator::diagonal(&diag);
    op.hermitian = true;
    op
}

/// Transmon parameters; all frequencies are ordinary frequencies in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmonSpec {
    pub e_c: f64,
    pub e_j: f64,
    pub nu_eg: f64,
    pub nu_fe: f64,
}

/// `ν_eg = √(8 E_C E_J) − E_C`, `ν_fe = ν_eg − E_C`.
pub fn transmon_derive(e_c: f64, e_j: f64) -> Result<TransmonSpec> {
    if !(e_c > 0.0 && e_j > e_c && e_j.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "transmon regime requires E_J > E_C > 0 (E_C = {e_c}, E_J = {e_j})"
        )));
    }
    let nu_eg = (8.0 * e_c * e_j).sqrt() - e_c;
    Ok(TransmonSpec { e_c, e_j, nu_eg, nu_fe: nu_eg - e_c })
}
