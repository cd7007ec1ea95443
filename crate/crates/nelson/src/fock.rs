//! Truncated bosonic Fock space over a momentum grid.
//!
//! Enumerates occupation-number states with total photon number up to a
//! cap, assembles the model operators (ladder fields, field energy, field
//! momentum, quadratic forms, the fiber Hamiltonian) as sparse matrices,
//! and evaluates vacuum expectation values of operator strings by direct
//! matrix application.
//!
//! The form factor is real, so every assembled operator is real in the
//! occupation basis; imaginary parts are identically zero and the textual
//! dump format keeps its `im` column only for cross-tool compatibility.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::modes::{dot3, phi_radial, ModeGrid, ModelParams};
use crate::wick::{OpString, VertexKind};

/// Hard cap on basis dimension; enumeration refuses larger requests so a
/// typo in grid sizes fails fast instead of exhausting memory.
pub const BASIS_DIM_CAP: usize = 200_000;

/// Dense-matrix conversions refuse dimensions above this.
pub const DENSE_DIM_CAP: usize = 4_000;

/// One occupation-number basis state: a sorted sparse map from mode index
/// to a positive photon count.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OccupationState {
    occ: Vec<(u16, u16)>,
}

impl OccupationState {
    pub fn vacuum() -> Self {
        OccupationState { occ: Vec::new() }
    }

    /// Total photon number.
    pub fn total(&self) -> u32 {
        self.occ.iter().map(|&(_, n)| n as u32).sum()
    }

    /// Sorted (mode, count) pairs with every count positive.
    pub fn pairs(&self) -> &[(u16, u16)] {
        &self.occ
    }

    pub fn count(&self, mode: u16) -> u16 {
        match self.occ.binary_search_by_key(&mode, |&(m, _)| m) {
            Ok(i) => self.occ[i].1,
            Err(_) => 0,
        }
    }

    /// State with one more photon in `mode`.
    fn with_added(&self, mode: u16) -> OccupationState {
        let mut occ = self.occ.clone();
        match occ.binary_search_by_key(&mode, |&(m, _)| m) {
            Ok(i) => occ[i].1 += 1,
            Err(i) => occ.insert(i, (mode, 1)),
        }
        OccupationState { occ }
    }

    /// State with one photon removed from `mode`; None if none present.
    fn with_removed(&self, mode: u16) -> Option<OccupationState> {
        let i = self.occ.binary_search_by_key(&mode, |&(m, _)| m).ok()?;
        let mut occ = self.occ.clone();
        if occ[i].1 == 1 {
            occ.remove(i);
        } else {
            occ[i].1 -= 1;
        }
        Some(OccupationState { occ })
    }
}

/// Graded-lexicographic enumeration of all occupation states with total
/// photon number at most `n_max`.
pub struct FockBasis {
    states: Vec<OccupationState>,
    index: HashMap<OccupationState, usize>,
    n_modes: usize,
    n_max: u32,
}

impl FockBasis {
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn states(&self) -> &[OccupationState] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &OccupationState {
        &self.states[i]
    }

    pub fn index_of(&self, s: &OccupationState) -> Option<usize> {
        self.index.get(s).copied()
    }
}

/// Number of multisets of size `n` over `m` symbols.
fn sector_dim(m: usize, n: u32) -> Option<usize> {
    let mut acc: u128 = 1;
    for i in 0..n as u128 {
        acc = acc.checked_mul(m as u128 + i)?;
        acc /= i + 1;
    }
    usize::try_from(acc).ok()
}

/// Enumerate the truncated basis for `grid` with photon cap `n_max`.
///
/// Order is graded by total photon number, then lexicographic in the
/// sorted multiset of occupied mode indices; the vacuum is ordinal 0.
pub fn enumerate_basis(grid: &ModeGrid, n_max: u32) -> Result<FockBasis> {
    let m = grid.len();
    let overflow = || Error::DimensionOverflow { dim: usize::MAX, cap: BASIS_DIM_CAP };
    let mut dim: usize = 0;
    for n in 0..=n_max {
        let d = sector_dim(m, n).ok_or_else(overflow)?;
        dim = dim.checked_add(d).ok_or_else(overflow)?;
    }
    if dim > BASIS_DIM_CAP {
        return Err(Error::DimensionOverflow { dim, cap: BASIS_DIM_CAP });
    }

    let mut states = Vec::with_capacity(dim);
    let mut modes_buf: Vec<u16> = Vec::new();
    for n in 0..=n_max {
        push_sector(m as u16, n, 0, &mut modes_buf, &mut states);
    }
    let index = states
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    Ok(FockBasis { states, index, n_modes: m, n_max })
}

/// Emit all non-decreasing mode tuples of length `remaining` starting at
/// `start`, in lexicographic order.
fn push_sector(
    m: u16,
    remaining: u32,
    start: u16,
    modes_buf: &mut Vec<u16>,
    out: &mut Vec<OccupationState>,
) {
    if remaining == 0 {
        let mut occ: Vec<(u16, u16)> = Vec::new();
        for &mode in modes_buf.iter() {
            match occ.last_mut() {
                Some(last) if last.0 == mode => last.1 += 1,
                _ => occ.push((mode, 1)),
            }
        }
        out.push(OccupationState { occ });
        return;
    }
    for mode in start..m {
        modes_buf.push(mode);
        push_sector(m, remaining - 1, mode, modes_buf, out);
        modes_buf.pop();
    }
}

/// A sparse real matrix on the Fock basis, stored as CSR over explicit
/// entries. With `hermitian` set only the upper triangle (row ≤ col) is
/// stored and application mirrors it; otherwise entries are the literal
/// matrix and the adjoint action transposes.
#[derive(Clone, Debug)]
pub struct SparseHermitianOp {
    dim: usize,
    hermitian: bool,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseHermitianOp {
    /// Build from (row, col, value) triplets, merging duplicates by
    /// summation. Hermitian storage rejects entries below the diagonal.
    pub fn from_triplets(
        dim: usize,
        hermitian: bool,
        mut triplets: Vec<(u32, u32, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r as usize >= dim || c as usize >= dim {
                return Err(Error::InvalidParams(format!(
                    "triplet ({r}, {c}) outside dimension {dim}"
                )));
            }
            if hermitian && r > c {
                return Err(Error::InvalidParams(format!(
                    "hermitian storage expects row <= col, got ({r}, {c})"
                )));
            }
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().expect("a previous entry exists") += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r as usize + 1] = cols.len();
                last = Some((r, c));
            }
        }
        // forward-fill empty rows
        for i in 1..=dim {
            if row_ptr[i] < row_ptr[i - 1] {
                row_ptr[i] = row_ptr[i - 1];
            }
        }
        Ok(SparseHermitianOp { dim, hermitian, row_ptr, cols, vals })
    }

    /// Diagonal matrix as hermitian sparse storage.
    pub fn from_diagonal(diag: &[f64]) -> SparseHermitianOp {
        let dim = diag.len();
        let triplets = diag
            .iter()
            .enumerate()
            .filter(|&(_, &v)| v != 0.0)
            .map(|(i, &v)| (i as u32, i as u32, v))
            .collect();
        SparseHermitianOp::from_triplets(dim, true, triplets).expect("diagonal triplets are valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// y = M x.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "vector length mismatch");
        let mut y = vec![0.0; self.dim];
        for r in 0..self.dim {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[idx] as usize;
                let v = self.vals[idx];
                y[r] += v * x[c];
                if self.hermitian && c != r {
                    y[c] += v * x[r];
                }
            }
        }
        y
    }

    /// y = M x in double-double arithmetic. The stored entries are exact
    /// f64 values, so this evaluates the matvec of the same matrix with
    /// roughly 32 significant digits.
    pub(crate) fn apply_dd(&self, x: &[Dd]) -> Vec<Dd> {
        assert_eq!(x.len(), self.dim, "vector length mismatch");
        let mut y = vec![Dd::from_f64(0.0); self.dim];
        for r in 0..self.dim {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[idx] as usize;
                let v = self.vals[idx];
                y[r] = y[r].add(x[c].mul_f64(v));
                if self.hermitian && c != r {
                    y[c] = y[c].add(x[r].mul_f64(v));
                }
            }
        }
        y
    }

    /// y = M* x (transpose; all entries are real).
    pub fn apply_adjoint(&self, x: &[f64]) -> Vec<f64> {
        if self.hermitian {
            return self.apply(x);
        }
        assert_eq!(x.len(), self.dim, "vector length mismatch");
        let mut y = vec![0.0; self.dim];
        for r in 0..self.dim {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[idx] as usize;
                y[c] += self.vals[idx] * x[r];
            }
        }
        y
    }

    /// Stored triplets in (row, col, value) order.
    pub fn triplets(&self) -> Vec<(u32, u32, f64)> {
        let mut out = Vec::with_capacity(self.vals.len());
        for r in 0..self.dim {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.push((r as u32, self.cols[idx], self.vals[idx]));
            }
        }
        out
    }

    /// Dense reconstruction, refused above `DENSE_DIM_CAP`.
    pub fn to_dense(&self) -> Result<nalgebra::DMatrix<f64>> {
        if self.dim > DENSE_DIM_CAP {
            return Err(Error::DimensionOverflow { dim: self.dim, cap: DENSE_DIM_CAP });
        }
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[idx] as usize;
                m[(r, c)] += self.vals[idx];
                if self.hermitian && c != r {
                    m[(c, r)] += self.vals[idx];
                }
            }
        }
        Ok(m)
    }

    /// Textual triplet dump: header "dim hermitian", then one line per
    /// stored entry "row col re im" with 17-digit floats (im is always 0
    /// for this real model).
    pub fn dump_triplets(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.dim, self.hermitian);
        for r in 0..self.dim {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                let _ = writeln!(
                    s,
                    "{} {} {:.16e} {:.16e}",
                    r, self.cols[idx], self.vals[idx], 0.0
                );
            }
        }
        s
    }
}

/// The eight dotted two-operator words appearing in the expansion strings
/// and the lemma sandwiches. Dots pair 3-vector components; `P` is the
/// total field momentum, diagonal in the occupation basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LadderWord {
    /// A·A, double annihilation
    Aa,
    /// A*·A*, double creation
    Cc,
    /// A*·A, photon-number preserving
    Ca,
    /// A·A*, photon-number preserving
    Ac,
    /// P·A, annihilate then dot the remaining momentum
    Pa,
    /// A*·P, dot the incoming momentum then create
    Cp,
    /// P·A*, create then dot the resulting momentum
    Pc,
    /// A·P, dot the incoming momentum then annihilate
    Ap,
}

impl From<VertexKind> for LadderWord {
    fn from(v: VertexKind) -> LadderWord {
        match v {
            VertexKind::Aa => LadderWord::Aa,
            VertexKind::Cc => LadderWord::Cc,
            VertexKind::Ca => LadderWord::Ca,
            VertexKind::Ac => LadderWord::Ac,
            VertexKind::Pa => LadderWord::Pa,
            VertexKind::Cp => LadderWord::Cp,
        }
    }
}

/// A mode grid dressed with everything the operators need: vector
/// couplings sqrt(w_i) phi(k_i), frequencies, and the truncated basis.
pub struct FockSpace {
    grid: ModeGrid,
    basis: FockBasis,
    /// sqrt(w_i) * phi_j(k_i) per mode, the ladder coupling vector
    coef: Vec<[f64; 3]>,
    /// sqrt(w_i) * |phi(k_i)| per mode, the scalar coupling
    coef_abs: Vec<f64>,
    /// |k_i| per mode
    omega: Vec<f64>,
    /// k_i per mode
    momenta: Vec<[f64; 3]>,
    ir_shift: f64,
}

impl FockSpace {
    pub fn new(grid: ModeGrid, n_max: u32, params: &ModelParams) -> Result<FockSpace> {
        let basis = enumerate_basis(&grid, n_max)?;
        let mut coef = Vec::with_capacity(grid.len());
        let mut coef_abs = Vec::with_capacity(grid.len());
        let mut omega = Vec::with_capacity(grid.len());
        let mut momenta = Vec::with_capacity(grid.len());
        for node in grid.nodes() {
            let rho = phi_radial(node.k_norm, &params.lambda);
            if !rho.is_finite() {
                return Err(Error::DegenerateGrid {
                    index: coef.len(),
                    value: node.k_norm,
                    tol: 0.0,
                });
            }
            let c = node.weight.sqrt() * rho;
            coef.push([
                c * node.k[0] / node.k_norm,
                c * node.k[1] / node.k_norm,
                c * node.k[2] / node.k_norm,
            ]);
            coef_abs.push(c);
            omega.push(node.k_norm);
            momenta.push(node.k);
        }
        Ok(FockSpace { grid, basis, coef, coef_abs, omega, momenta, ir_shift: params.ir_shift })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn n_modes(&self) -> usize {
        self.basis.n_modes()
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    pub fn grid(&self) -> &ModeGrid {
        &self.grid
    }

    pub fn ir_shift(&self) -> f64 {
        self.ir_shift
    }

    /// Total photon number of basis state `i`.
    pub fn sector(&self, i: usize) -> u32 {
        self.basis.state(i).total()
    }

    /// The vacuum as a dense coefficient vector.
    pub fn vacuum_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        v[0] = 1.0;
        v
    }

    /// Total field momentum of an occupation state.
    fn state_momentum(&self, s: &OccupationState) -> [f64; 3] {
        let mut p = [0.0; 3];
        for &(mode, n) in s.pairs() {
            let k = self.momenta[mode as usize];
            for d in 0..3 {
                p[d] += n as f64 * k[d];
            }
        }
        p
    }

    /// Field energy diagonal: sum of occupied frequencies, plus the
    /// infrared shift on every excited state (the vacuum stays exactly 0
    /// so vacuum expectations of normal-ordered strings vanish).
    pub fn hf_diagonal(&self) -> Vec<f64> {
        self.basis
            .states()
            .iter()
            .map(|s| {
                let base: f64 = s
                    .pairs()
                    .iter()
                    .map(|&(mode, n)| n as f64 * self.omega[mode as usize])
                    .sum();
                if s.total() > 0 {
                    base + self.ir_shift
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// One component of the field-momentum diagonal.
    pub fn momentum_diagonal(&self, component: usize) -> Vec<f64> {
        assert!(component < 3, "component index out of range");
        self.basis
            .states()
            .iter()
            .map(|s| self.state_momentum(s)[component])
            .collect()
    }

    /// D_f diagonal: |total momentum|^2 plus the field energy.
    pub fn df_diagonal(&self) -> Vec<f64> {
        let hf = self.hf_diagonal();
        self.basis
            .states()
            .iter()
            .zip(hf)
            .map(|(s, h)| {
                let p = self.state_momentum(s);
                dot3(p, p) + h
            })
            .collect()
    }

    /// Action of one dotted word on basis state `col`, as (row, amplitude)
    /// pairs in ascending row order. Targets beyond the photon cap are
    /// dropped (the operator is compressed to the truncated space).
    pub fn word_column(&self, word: LadderWord, col: usize) -> Vec<(usize, f64)> {
        let s = self.basis.state(col);
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        match word {
            LadderWord::Aa => {
                for &(mj, nj) in s.pairs() {
                    let s1 = s.with_removed(mj).expect("count positive");
                    let amp1 = (nj as f64).sqrt();
                    for &(mi, ni) in s1.pairs() {
                        let s2 = s1.with_removed(mi).expect("count positive");
                        let amp = amp1
                            * (ni as f64).sqrt()
                            * dot3(self.coef[mi as usize], self.coef[mj as usize]);
                        let row = self.basis.index_of(&s2).expect("sector within cap");
                        *acc.entry(row).or_insert(0.0) += amp;
                    }
                }
            }
            LadderWord::Cc => {
                if s.total() + 2 <= self.basis.n_max() {
                    for mj in 0..self.n_modes() as u16 {
                        let s1 = s.with_added(mj);
                        let amp1 = (s1.count(mj) as f64).sqrt();
                        for mi in 0..self.n_modes() as u16 {
                            let s2 = s1.with_added(mi);
                            let amp = amp1
                                * (s2.count(mi) as f64).sqrt()
                                * dot3(self.coef[mi as usize], self.coef[mj as usize]);
                            let row = self.basis.index_of(&s2).expect("sector within cap");
                            *acc.entry(row).or_insert(0.0) += amp;
                        }
                    }
                }
            }
            LadderWord::Ca => {
                for &(mj, nj) in s.pairs() {
                    let s1 = s.with_removed(mj).expect("count positive");
                    let amp1 = (nj as f64).sqrt();
                    for mi in 0..self.n_modes() as u16 {
                        let s2 = s1.with_added(mi);
                        let amp = amp1
                            * (s2.count(mi) as f64).sqrt()
                            * dot3(self.coef[mi as usize], self.coef[mj as usize]);
                        let row = self.basis.index_of(&s2).expect("same sector");
                        *acc.entry(row).or_insert(0.0) += amp;
                    }
                }
            }
            LadderWord::Ac => {
                if s.total() + 1 <= self.basis.n_max() {
                    for mj in 0..self.n_modes() as u16 {
                        let s1 = s.with_added(mj);
                        let amp1 = (s1.count(mj) as f64).sqrt();
                        for &(mi, ni) in s1.pairs() {
                            let s2 = s1.with_removed(mi).expect("count positive");
                            let amp = amp1
                                * (ni as f64).sqrt()
                                * dot3(self.coef[mi as usize], self.coef[mj as usize]);
                            let row = self.basis.index_of(&s2).expect("same sector");
                            *acc.entry(row).or_insert(0.0) += amp;
                        }
                    }
                }
            }
            LadderWord::Pa => {
                for &(mj, nj) in s.pairs() {
                    let s1 = s.with_removed(mj).expect("count positive");
                    let p = self.state_momentum(&s1);
                    let amp = (nj as f64).sqrt() * dot3(self.coef[mj as usize], p);
                    let row = self.basis.index_of(&s1).expect("sector within cap");
                    *acc.entry(row).or_insert(0.0) += amp;
                }
            }
            LadderWord::Cp => {
                if s.total() + 1 <= self.basis.n_max() {
                    let p = self.state_momentum(s);
                    for mj in 0..self.n_modes() as u16 {
                        let s1 = s.with_added(mj);
                        let amp = (s1.count(mj) as f64).sqrt() * dot3(self.coef[mj as usize], p);
                        let row = self.basis.index_of(&s1).expect("sector within cap");
                        *acc.entry(row).or_insert(0.0) += amp;
                    }
                }
            }
            LadderWord::Pc => {
                if s.total() + 1 <= self.basis.n_max() {
                    for mj in 0..self.n_modes() as u16 {
                        let s1 = s.with_added(mj);
                        let p = self.state_momentum(&s1);
                        let amp = (s1.count(mj) as f64).sqrt() * dot3(self.coef[mj as usize], p);
                        let row = self.basis.index_of(&s1).expect("sector within cap");
                        *acc.entry(row).or_insert(0.0) += amp;
                    }
                }
            }
            LadderWord::Ap => {
                let p = self.state_momentum(s);
                for &(mj, nj) in s.pairs() {
                    let s1 = s.with_removed(mj).expect("count positive");
                    let amp = (nj as f64).sqrt() * dot3(self.coef[mj as usize], p);
                    let row = self.basis.index_of(&s1).expect("sector within cap");
                    *acc.entry(row).or_insert(0.0) += amp;
                }
            }
        }
        acc.into_iter().filter(|&(_, v)| v != 0.0).collect()
    }

    /// One dotted word as a stored sparse matrix (literal, not folded).
    pub fn word_matrix(&self, word: LadderWord) -> SparseHermitianOp {
        let mut triplets = Vec::new();
        for col in 0..self.dim() {
            for (row, amp) in self.word_column(word, col) {
                triplets.push((row as u32, col as u32, amp));
            }
        }
        SparseHermitianOp::from_triplets(self.dim(), false, triplets)
            .expect("word columns stay inside the basis")
    }

    /// Apply one dotted word to a dense vector.
    pub fn apply_word(&self, word: LadderWord, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "vector length mismatch");
        let mut y = vec![0.0; self.dim()];
        for (col, &xc) in x.iter().enumerate() {
            if xc == 0.0 {
                continue;
            }
            for (row, amp) in self.word_column(word, col) {
                y[row] += amp * xc;
            }
        }
        y
    }

    /// Annihilator for a single mode with unit coupling, for commutator
    /// checks.
    pub fn mode_annihilator(&self, mode: u16) -> SparseHermitianOp {
        let mut triplets = Vec::new();
        for col in 0..self.dim() {
            let s = self.basis.state(col);
            let n = s.count(mode);
            if n > 0 {
                let s1 = s.with_removed(mode).expect("count positive");
                let row = self.basis.index_of(&s1).expect("sector within cap");
                triplets.push((row as u32, col as u32, (n as f64).sqrt()));
            }
        }
        SparseHermitianOp::from_triplets(self.dim(), false, triplets)
            .expect("annihilator columns stay inside the basis")
    }
}

/// The three Cartesian components of the smeared annihilation field plus
/// the absolutely smeared one, each stored as its literal (lowering)
/// matrix; adjoints act via `apply_adjoint`.
pub struct FieldOps {
    pub a: [SparseHermitianOp; 3],
    pub abs_a: SparseHermitianOp,
}

/// Assemble the smeared field operators on a space.
pub fn smeared_field_ops(space: &FockSpace) -> FieldOps {
    let mut comps: Vec<SparseHermitianOp> = Vec::with_capacity(3);
    for d in 0..3 {
        let mut triplets = Vec::new();
        for col in 0..space.dim() {
            let s = space.basis.state(col);
            for &(mode, n) in s.pairs() {
                let c = space.coef[mode as usize][d];
                if c == 0.0 {
                    continue;
                }
                let s1 = s.with_removed(mode).expect("count positive");
                let row = space.basis.index_of(&s1).expect("sector within cap");
                triplets.push((row as u32, col as u32, c * (n as f64).sqrt()));
            }
        }
        comps.push(
            SparseHermitianOp::from_triplets(space.dim(), false, triplets)
                .expect("field columns stay inside the basis"),
        );
    }
    let mut abs_triplets = Vec::new();
    for col in 0..space.dim() {
        let s = space.basis.state(col);
        for &(mode, n) in s.pairs() {
            let s1 = s.with_removed(mode).expect("count positive");
            let row = space.basis.index_of(&s1).expect("sector within cap");
            abs_triplets.push((
                row as u32,
                col as u32,
                space.coef_abs[mode as usize] * (n as f64).sqrt(),
            ));
        }
    }
    let abs_a = SparseHermitianOp::from_triplets(space.dim(), false, abs_triplets)
        .expect("field columns stay inside the basis");
    let a = match <[SparseHermitianOp; 3]>::try_from(comps) {
        Ok(a) => a,
        Err(_) => unreachable!("exactly three components pushed"),
    };
    FieldOps { a, abs_a }
}

/// Field-energy, momentum, and free-fiber diagonals.
pub struct DiagonalOps {
    pub hf: Vec<f64>,
    pub p: [Vec<f64>; 3],
    pub df: Vec<f64>,
}

pub fn diagonal_ops(space: &FockSpace) -> DiagonalOps {
    DiagonalOps {
        hf: space.hf_diagonal(),
        p: [
            space.momentum_diagonal(0),
            space.momentum_diagonal(1),
            space.momentum_diagonal(2),
        ],
        df: space.df_diagonal(),
    }
}

/// Assemble the zero-total-momentum fiber operator
/// T = H_f + P^2 + 2e (A*·P + P·A) + e^2 (A*·A* + A·A + 2 A*·A)
/// with exact hermiticity: only row ≤ col entries are computed and the
/// lower triangle is implied.
pub fn assemble_t(space: &FockSpace, e: f64) -> SparseHermitianOp {
    let words = [
        (LadderWord::Pa, 2.0 * e),
        (LadderWord::Cp, 2.0 * e),
        (LadderWord::Aa, e * e),
        (LadderWord::Cc, e * e),
        (LadderWord::Ca, 2.0 * e * e),
    ];
    assemble_hermitian(space, &words)
}

/// Assemble L = D_f + 2 e^2 A*·A, block diagonal in photon number.
pub fn assemble_l(space: &FockSpace, e: f64) -> SparseHermitianOp {
    let words = [(LadderWord::Ca, 2.0 * e * e)];
    assemble_hermitian(space, &words)
}

fn assemble_hermitian(space: &FockSpace, words: &[(LadderWord, f64)]) -> SparseHermitianOp {
    let df = space.df_diagonal();
    let mut triplets = Vec::new();
    for col in 0..space.dim() {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        if df[col] != 0.0 {
            acc.insert(col, df[col]);
        }
        for &(word, coeff) in words {
            if coeff == 0.0 {
                continue;
            }
            for (row, amp) in space.word_column(word, col) {
                if row <= col {
                    *acc.entry(row).or_insert(0.0) += coeff * amp;
                }
            }
        }
        for (row, v) in acc {
            if v != 0.0 {
                triplets.push((row as u32, col as u32, v));
            }
        }
    }
    SparseHermitianOp::from_triplets(space.dim(), true, triplets)
        .expect("upper-triangle assembly is valid")
}

/// Default kernel tolerance for pseudo-inversion: scaled to the largest
/// diagonal entry so only the vacuum's exact zero is treated as kernel.
pub fn default_kernel_tol(diag: &[f64]) -> f64 {
    let max = diag.iter().fold(0.0_f64, |m, &d| m.max(d.abs()));
    1e-14 * max
}

/// Divide a vector by a diagonal, projecting out the (vacuum) kernel.
///
/// Entries with |d| ≤ kernel_tol map to 0; a near-zero diagonal entry
/// anywhere except the vacuum slot signals a degenerate grid and errors.
pub fn apply_pseudo_inverse(diag: &[f64], v: &[f64], kernel_tol: f64) -> Result<Vec<f64>> {
    assert_eq!(diag.len(), v.len(), "vector length mismatch");
    let mut out = vec![0.0; v.len()];
    for i in 0..v.len() {
        if diag[i].abs() <= kernel_tol {
            if i != 0 {
                return Err(Error::DegenerateGrid { index: i, value: diag[i], tol: kernel_tol });
            }
            out[i] = 0.0;
        } else {
            out[i] = v[i] / diag[i];
        }
    }
    Ok(out)
}

/// Euclidean inner product.
pub fn inner(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    inner(v, v).sqrt()
}

/// Evaluate a vacuum expectation value of an operator string by direct
/// matrix application on a truncated space: words apply right to left
/// with the reduced resolvent (vacuum projected out) of D_f between
/// them. The photon cap must accommodate the string's deepest
/// intermediate sector for the value to be exact in the discretization.
pub fn matrix_path_vev(space: &FockSpace, s: &OpString) -> Result<f64> {
    let df = space.df_diagonal();
    let tol = default_kernel_tol(&df);
    let mut v = space.vacuum_vector();
    for (pos, &vertex) in s.vertices().iter().enumerate().rev() {
        v = space.apply_word(LadderWord::from(vertex), &v);
        if pos > 0 {
            // reduced resolvent between consecutive vertices
            v = apply_pseudo_inverse(&df, &v, tol)?;
        }
    }
    Ok(v[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::{build_mode_grid, norm3, weighted_overlap, Cutoff};
    use crate::wick::{coefficient_table, IntegrandExpr};

    fn params(lambda: f64) -> ModelParams {
        ModelParams::new(0.1, 1.0, Cutoff::Finite(lambda)).unwrap()
    }

    fn space(n_radial: usize, n_angular: usize, n_max: u32, lambda: f64) -> FockSpace {
        let p = params(lambda);
        let grid = build_mode_grid(n_radial, n_angular, &p).unwrap();
        FockSpace::new(grid, n_max, &p).unwrap()
    }

    #[test]
    fn basis_dimensions_match_stars_and_bars() {
        let sp = space(1, 2, 2, 1.0);
        // 1 radial x 1 polar x 2 azimuth = 2 modes, cap 2: 1 + 2 + 3
        assert_eq!(sp.n_modes(), 2);
        assert_eq!(sp.dim(), 6);

        let sp = space(3, 4, 3, 1.0);
        // 3 x 2 x 4 = 24 modes, cap 3: 1 + 24 + 300 + 2600
        assert_eq!(sp.n_modes(), 24);
        assert_eq!(sp.dim(), 2925);

        let sp0 = space(2, 2, 0, 1.0);
        assert_eq!(sp0.dim(), 1);
    }

    #[test]
    fn enumeration_is_graded_and_vacuum_first() {
        let sp = space(2, 2, 3, 1.0);
        assert_eq!(sp.basis().state(0), &OccupationState::vacuum());
        let mut last_sector = 0;
        for i in 0..sp.dim() {
            let n = sp.sector(i);
            assert!(n >= last_sector, "grading violated at {i}");
            last_sector = n;
        }
        // indices round trip
        for i in 0..sp.dim() {
            assert_eq!(sp.basis().index_of(sp.basis().state(i)), Some(i));
        }
    }

    #[test]
    fn ccr_holds_below_the_truncation_boundary() {
        let sp = space(2, 2, 3, 1.0);
        let dim = sp.dim();
        for i in [0u16, 2] {
            for j in [0u16, 2] {
                let ai = sp.mode_annihilator(i).to_dense().unwrap();
                let aj = sp.mode_annihilator(j).to_dense().unwrap();
                let comm = &ai * aj.transpose() - aj.transpose() * &ai;
                let expect = if i == j { 1.0 } else { 0.0 };
                for r in 0..dim {
                    for c in 0..dim {
                        // the commutator identity holds on sectors that
                        // creation does not push past the cap
                        if sp.sector(r) <= 2 && sp.sector(c) <= 2 {
                            let want = if r == c { expect } else { 0.0 };
                            assert!(
                                (comm[(r, c)] - want).abs() < 1e-12,
                                "[a_{i}, a_{j}*] at ({r}, {c}): {}",
                                comm[(r, c)]
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn field_vacuum_moments_match_grid_overlap() {
        let sp = space(3, 2, 2, 1.0);
        let ops = smeared_field_ops(&sp);
        let vac = sp.vacuum_vector();
        // A_j annihilates the vacuum
        for d in 0..3 {
            assert_eq!(norm(&ops.a[d].apply(&vac)), 0.0);
        }
        // sum_j <O| A_j A_j* |O> = discretized ||phi||^2
        let mut total = 0.0;
        for d in 0..3 {
            let created = ops.a[d].apply_adjoint(&vac);
            total += inner(&created, &created);
        }
        let g = sp.grid();
        let vals: Vec<num_complex::Complex64> = g
            .nodes()
            .iter()
            .map(|n| num_complex::Complex64::new(phi_radial(n.k_norm, &Cutoff::Finite(1.0)), 0.0))
            .collect();
        let overlap = weighted_overlap(&vals, &vals, g).unwrap().re;
        assert!(
            (total - overlap).abs() < 1e-12 * overlap.max(1.0),
            "{total} vs {overlap}"
        );
        // absA reproduces the same scalar norm
        let created = ops.abs_a.apply_adjoint(&vac);
        assert!((inner(&created, &created) - overlap).abs() < 1e-12);
    }

    #[test]
    fn diagonals_follow_occupations() {
        let sp = space(3, 2, 2, 1.0);
        let d = diagonal_ops(&sp);
        assert_eq!(d.hf[0], 0.0);
        assert_eq!(d.df[0], 0.0);
        let eps = sp.ir_shift();
        for i in 1..sp.dim() {
            let s = sp.basis().state(i);
            let want_hf: f64 = s
                .pairs()
                .iter()
                .map(|&(m, n)| n as f64 * norm3(sp.momenta[m as usize]))
                .sum::<f64>()
                + eps;
            assert!((d.hf[i] - want_hf).abs() < 1e-15 * want_hf.max(1.0));
            let mut p = [0.0; 3];
            for &(m, n) in s.pairs() {
                for c in 0..3 {
                    p[c] += n as f64 * sp.momenta[m as usize][c];
                }
            }
            for c in 0..3 {
                assert!((d.p[c][i] - p[c]).abs() < 1e-14);
            }
            assert!((d.df[i] - (dot3(p, p) + want_hf)).abs() < 1e-13);
        }
    }

    #[test]
    fn assembled_t_is_graded_and_vacuum_neutral() {
        let sp = space(2, 2, 3, 1.0);
        let e = 0.2;
        let t = assemble_t(&sp, e);
        // vacuum expectation is exactly zero at any coupling
        let vac = sp.vacuum_vector();
        assert_eq!(inner(&vac, &t.apply(&vac)), 0.0);
        // entries only couple sectors differing by 0, 1, or 2
        for (r, c, v) in t.triplets() {
            let dn = sp.sector(r as usize).abs_diff(sp.sector(c as usize));
            assert!(dn <= 2, "entry ({r}, {c}) = {v} couples sectors {dn} apart");
        }
        // e = 0 reduces to the free diagonal
        let t0 = assemble_t(&sp, 0.0);
        let df = sp.df_diagonal();
        for (r, c, v) in t0.triplets() {
            assert_eq!(r, c);
            assert_eq!(v, df[r as usize]);
        }
    }

    #[test]
    fn dense_t_matches_word_composition() {
        let sp = space(2, 2, 3, 1.0);
        let e = 0.3;
        let t = assemble_t(&sp, e).to_dense().unwrap();
        let dim = sp.dim();
        // rebuild from the literal word matrices
        let mut want = nalgebra::DMatrix::zeros(dim, dim);
        for (i, v) in sp.df_diagonal().iter().enumerate() {
            want[(i, i)] = *v;
        }
        for (word, coeff) in [
            (LadderWord::Pa, 2.0 * e),
            (LadderWord::Cp, 2.0 * e),
            (LadderWord::Aa, e * e),
            (LadderWord::Cc, e * e),
            (LadderWord::Ca, 2.0 * e * e),
        ] {
            want += sp.word_matrix(word).to_dense().unwrap() * coeff;
        }
        let diff = (&t - &want).abs().max();
        assert!(diff < 1e-13, "assembled vs composed: {diff}");
        let asym = (&t - t.transpose()).abs().max();
        assert_eq!(asym, 0.0, "hermitian storage must be exactly symmetric");
    }

    #[test]
    fn word_adjoint_pairs_transpose() {
        let sp = space(2, 2, 3, 1.0);
        for (w, wt) in [
            (LadderWord::Aa, LadderWord::Cc),
            (LadderWord::Pa, LadderWord::Cp),
            (LadderWord::Ap, LadderWord::Pc),
            (LadderWord::Ca, LadderWord::Ca),
            (LadderWord::Ac, LadderWord::Ac),
        ] {
            let m = sp.word_matrix(w).to_dense().unwrap();
            let mt = sp.word_matrix(wt).to_dense().unwrap();
            let diff = (&m - mt.transpose()).abs().max();
            assert!(diff < 1e-13, "{w:?} vs {wt:?} transpose: {diff}");
        }
    }

    #[test]
    fn l_dominates_free_part() {
        let sp = space(2, 2, 2, 1.0);
        let l = assemble_l(&sp, 0.25).to_dense().unwrap();
        let mut df = nalgebra::DMatrix::zeros(sp.dim(), sp.dim());
        for (i, v) in sp.df_diagonal().iter().enumerate() {
            df[(i, i)] = *v;
        }
        let gap = (l - df).symmetric_eigen().eigenvalues;
        let min = gap.iter().fold(f64::INFINITY, |m, &x| m.min(x));
        assert!(min >= -1e-12, "L - D_f must be positive semidefinite, min eig {min}");

        let l0 = assemble_l(&sp, 0.0);
        let df_diag = sp.df_diagonal();
        for (r, c, v) in l0.triplets() {
            assert_eq!(r, c);
            assert_eq!(v, df_diag[r as usize]);
        }
    }

    #[test]
    fn pseudo_inverse_projects_kernel_and_flags_degeneracy() {
        let sp = space(2, 2, 2, 1.0);
        let df = sp.df_diagonal();
        let tol = default_kernel_tol(&df);
        let mut v = vec![1.0; sp.dim()];
        let out = apply_pseudo_inverse(&df, &v, tol).unwrap();
        assert_eq!(out[0], 0.0);
        for i in 1..sp.dim() {
            assert!((out[i] - 1.0 / df[i]).abs() < 1e-15);
        }
        // multiplying back reproduces v minus its vacuum component
        for i in 1..sp.dim() {
            assert!((out[i] * df[i] - v[i]).abs() < 1e-12);
        }
        // a tiny non-vacuum diagonal entry is an error, not a silent zero
        let mut bad = df.clone();
        bad[3] = tol / 2.0;
        v[0] = 0.0;
        assert!(matches!(
            apply_pseudo_inverse(&bad, &v, tol),
            Err(Error::DegenerateGrid { index: 3, .. })
        ));
    }

    #[test]
    fn matrix_vev_equals_grid_summed_integrand_for_a4() {
        // the two-photon VEV evaluated by matrix algebra must equal the
        // same discretization of the continuum integrand summed over the
        // grid, node by node, because both are finite sums of identical
        // terms
        let p = params(1.0);
        let sp = space(3, 4, 2, 1.0);
        let table = coefficient_table();
        let a4 = &table[0];
        assert_eq!(a4.name, "a4");
        let s = OpString::parse(&a4.string).unwrap();
        let got = matrix_path_vev(&sp, &s).unwrap();

        let expr = IntegrandExpr::from_string(&s, &p).unwrap();
        let g = sp.grid();
        let mut want = 0.0;
        for a in g.nodes() {
            for b in g.nodes() {
                want += a.weight * b.weight * expr.eval(&[a.k, b.k]);
            }
        }
        assert!(
            (got - want).abs() < 1e-12 * want.abs().max(1e-30),
            "matrix {got} vs grid sum {want}"
        );
        assert!(got > 0.0);
    }

    #[test]
    fn matrix_vev_needs_enough_photon_room() {
        // the three-photon string evaluates to zero if the cap cuts its
        // intermediate sector, and is stable once the cap is sufficient
        let table = coefficient_table();
        let b1 = table.iter().find(|c| c.name == "b1").unwrap();
        let s = OpString::parse(&b1.string).unwrap();
        let shallow = space(2, 2, 2, 1.0);
        let deep = space(2, 2, 3, 1.0);
        let v_shallow = matrix_path_vev(&shallow, &s).unwrap();
        let v_deep = matrix_path_vev(&deep, &s).unwrap();
        assert!(v_deep.abs() > 0.0);
        assert!(
            v_shallow.abs() < v_deep.abs() * 1e-10,
            "cap 2 must kill the 3-photon channel: {v_shallow} vs {v_deep}"
        );
    }

    #[test]
    fn dump_format_is_stable() {
        let sp = space(1, 2, 1, 1.0);
        let t = assemble_t(&sp, 0.1);
        let dump = t.dump_triplets();
        let mut lines = dump.lines();
        let header = lines.next().unwrap();
        assert_eq!(header, format!("{} true", sp.dim()));
        for line in lines {
            let parts: Vec<&str> = line.split(' ').collect();
            assert_eq!(parts.len(), 4, "row col re im: {line}");
            let _: usize = parts[0].parse().unwrap();
            let _: usize = parts[1].parse().unwrap();
            let _: f64 = parts[2].parse().unwrap();
            let im: f64 = parts[3].parse().unwrap();
            assert_eq!(im, 0.0);
        }
    }

    #[test]
    fn oversized_basis_is_refused() {
        let p = params(1.0);
        let grid = build_mode_grid(12, 8, &p).unwrap();
        // 12 x 4 x 8 = 384 modes at cap 3 overflows the configured cap
        match FockSpace::new(grid, 3, &p) {
            Err(Error::DimensionOverflow { cap, .. }) => assert_eq!(cap, BASIS_DIM_CAP),
            Err(other) => panic!("expected overflow, got {other:?}"),
            Ok(_) => panic!("expected overflow, got a basis"),
        }
    }
}
