//! Hamiltonians on a truncated Fock basis.
//!
//! Operators are stored in compressed sparse rows; `H_I` couples each state to
//! at most `2K` neighbours and `H_P` is diagonal, so dense storage is only
//! materialized when a solver asks for it.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, BufRead, Read, Write};
use std::str::FromStr;

use faer::Mat;
use num_bigint::{BigInt, BigUint};
use num_traits::{FromPrimitive, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::fock::{BasisMeta, FockBasis};
use crate::poly::Polynomial;

#[derive(Debug, thiserror::Error)]
pub enum OpsError {
    #[error("polynomial has {got} unknowns, basis has {expected} modes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operators live on different bases ({left:?} vs {right:?})")]
    BasisMismatch { left: BasisMeta, right: BasisMeta },
    #[error("H_P entry at state {state:?} has {digits} digits and does not fit a float; shift the variables or lower the cutoff")]
    OutOfRange { state: Vec<u32>, digits: usize },
    #[error("displacement {0} is not finite")]
    NonFiniteAlpha(f64),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("operator file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Real symmetric operator in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    meta: BasisMeta,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    symmetry_tol: f64,
}

impl OperatorMatrix {
    /// Assembles from per-row `(column, value)` lists; duplicates are summed.
    pub fn from_rows(meta: BasisMeta, rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(rows.len(), meta.size);
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let start = cols.len();
            for (c, v) in row {
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { meta, row_ptr, cols, vals, symmetry_tol: 0.0 }
    }

    pub fn diagonal_matrix(meta: BasisMeta, diag: &[f64]) -> Self {
        let rows = diag.iter().enumerate().map(|(i, &d)| vec![(i, d)]).collect();
        Self::from_rows(meta, rows)
    }

    pub fn dim(&self) -> usize {
        self.meta.size
    }

    pub fn meta(&self) -> &BasisMeta {
        &self.meta
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn symmetry_tol(&self) -> f64 {
        self.symmetry_tol
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim()).all(|i| self.row(i).all(|(j, v)| j == i || v == 0.0))
    }

    /// Largest `|M_ij - M_ji|` over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn is_exactly_symmetric(&self) -> bool {
        (0..self.dim()).all(|i| self.row(i).all(|(j, v)| v.to_bits() == self.get(j, i).to_bits() || v == self.get(j, i)))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.vals.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Maximum absolute row sum, an upper bound on the spectral norm.
    pub fn row_sum_norm(&self) -> f64 {
        (0..self.dim()).map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn apply_complex(&self, x: &[num_complex::Complex64], y: &mut [num_complex::Complex64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| x[j] * v).sum();
        }
    }

    /// `<u|M|v>` for real vectors.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        (0..self.dim()).map(|i| u[i] * self.row(i).map(|(j, m)| m * v[j]).sum::<f64>()).sum()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let n = self.dim();
        let mut m = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// `a*left + b*right`, entries merged over the union of sparsity patterns.
    pub fn combine(a: f64, left: &Self, b: f64, right: &Self) -> Result<Self, OpsError> {
        same_basis(left, right)?;
        let n = left.dim();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(left.nnz().max(right.nnz()));
        let mut vals = Vec::with_capacity(cols.capacity());
        row_ptr.push(0);
        for i in 0..n {
            let mut l = left.row(i).peekable();
            let mut r = right.row(i).peekable();
            loop {
                let (c, v) = match (l.peek().copied(), r.peek().copied()) {
                    (Some((cl, vl)), Some((cr, vr))) if cl == cr => {
                        l.next();
                        r.next();
                        (cl, a * vl + b * vr)
                    }
                    (Some((cl, vl)), Some((cr, _))) if cl < cr => {
                        l.next();
                        (cl, a * vl)
                    }
                    (_, Some((cr, vr))) => {
                        r.next();
                        (cr, b * vr)
                    }
                    (Some((cl, vl)), None) => {
                        l.next();
                        (cl, a * vl)
                    }
                    (None, None) => break,
                };
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        let symmetry_tol = a.abs() * left.symmetry_tol + b.abs() * right.symmetry_tol;
        Ok(Self { meta: left.meta.clone(), row_ptr, cols, vals, symmetry_tol })
    }

    /// Sparse product `self * other`.
    pub fn multiply(&self, other: &Self) -> Result<Self, OpsError> {
        same_basis(self, other)?;
        let n = self.dim();
        let mut acc = vec![0.0; n];
        let mut touched = vec![false; n];
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let mut hit = Vec::new();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if !touched[j] {
                        touched[j] = true;
                        hit.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            let row = hit
                .into_iter()
                .map(|j| {
                    touched[j] = false;
                    (j, std::mem::take(&mut acc[j]))
                })
                .collect();
            rows.push(row);
        }
        Ok(Self::from_rows(self.meta.clone(), rows))
    }

    /// Whether `M[perm[i], perm[j]] == M[i, j]` for every entry.
    pub fn is_invariant_under(&self, perm: &[usize]) -> bool {
        (0..self.dim()).all(|i| self.row(i).all(|(j, v)| self.get(perm[i], perm[j]) == v))
    }

    pub fn write_dense_text<W: Write>(&self, name: &str, mut w: W) -> Result<(), OpsError> {
        let header = FileHeader::new(name, &self.meta);
        writeln!(w, "# {}", serde_json::to_string(&header).expect("header serializes"))?;
        let mut line = String::new();
        for i in 0..self.dim() {
            line.clear();
            let mut dense_row = vec![0.0; self.dim()];
            for (j, v) in self.row(i) {
                dense_row[j] = v;
            }
            for (j, v) in dense_row.iter().enumerate() {
                if j > 0 {
                    line.push(' ');
                }
                line.push_str(&format_sig17(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Binary layout: magic, u64 LE header length, JSON header, then
    /// row-major little-endian f64 entries.
    pub fn write_dense_binary<W: Write>(&self, name: &str, mut w: W) -> Result<(), OpsError> {
        let header = serde_json::to_vec(&FileHeader::new(name, &self.meta)).expect("header serializes");
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for i in 0..self.dim() {
            let mut dense_row = vec![0.0; self.dim()];
            for (j, v) in self.row(i) {
                dense_row[j] = v;
            }
            for v in dense_row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

const BINARY_MAGIC: &[u8; 8] = b"ADIOPMAT";

/// Metadata line/block at the top of an exported operator file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHeader {
    pub format: String,
    pub operator: String,
    pub basis: BasisMeta,
    pub layout: String,
}

impl FileHeader {
    fn new(name: &str, meta: &BasisMeta) -> Self {
        Self { format: "adiadio-operator/1".into(), operator: name.into(), basis: meta.clone(), layout: "row-major".into() }
    }
}

/// Reads a dense text export back into its header and row-major entries.
pub fn read_dense_text<R: BufRead>(r: R) -> Result<(FileHeader, Vec<f64>), OpsError> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| OpsError::Format("empty file".into()))??;
    let json = first.strip_prefix("# ").ok_or_else(|| OpsError::Format("missing header line".into()))?;
    let header: FileHeader = serde_json::from_str(json).map_err(|e| OpsError::Format(e.to_string()))?;
    let mut data = Vec::with_capacity(header.basis.size * header.basis.size);
    for line in lines {
        for tok in line?.split_whitespace() {
            data.push(tok.parse::<f64>().map_err(|e| OpsError::Format(e.to_string()))?);
        }
    }
    if data.len() != header.basis.size * header.basis.size {
        return Err(OpsError::Format(format!("expected {} entries, found {}", header.basis.size.pow(2), data.len())));
    }
    Ok((header, data))
}

pub fn read_dense_binary<R: Read>(mut r: R) -> Result<(FileHeader, Vec<f64>), OpsError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(OpsError::Format("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: FileHeader = serde_json::from_slice(&header).map_err(|e| OpsError::Format(e.to_string()))?;
    let n = header.basis.size;
    let mut data = Vec::with_capacity(n * n);
    let mut buf = [0u8; 8];
    for _ in 0..n * n {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Ok((header, data))
}

/// Scientific notation with 17 significant digits, the precision used in
/// all numeric exports.
pub fn format_sig17(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v:.16e}")
}

fn same_basis(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<(), OpsError> {
    if a.meta != b.meta {
        return Err(OpsError::BasisMismatch { left: a.meta.clone(), right: b.meta.clone() });
    }
    Ok(())
}

/// `H_P` together with its exact integer diagonal.
#[derive(Debug, Clone)]
pub struct ProblemHamiltonian {
    matrix: OperatorMatrix,
    exact: Vec<BigUint>,
    inexact: Vec<usize>,
}

impl ProblemHamiltonian {
    pub fn matrix(&self) -> &OperatorMatrix {
        &self.matrix
    }

    /// `D(n)^2` at basis position `i`, exactly.
    pub fn exact_energy(&self, i: usize) -> &BigUint {
        &self.exact[i]
    }

    pub fn exact_energies(&self) -> &[BigUint] {
        &self.exact
    }

    /// Positions whose float entry differs from the exact integer.
    pub fn inexact_entries(&self) -> &[usize] {
        &self.inexact
    }

    pub fn min_exact(&self) -> &BigUint {
        self.exact.iter().min().expect("basis is never empty")
    }

    /// Positions attaining the minimum diagonal value.
    pub fn minimizers(&self) -> Vec<usize> {
        let m = self.min_exact();
        (0..self.exact.len()).filter(|&i| &self.exact[i] == m).collect()
    }
}

/// Builds the diagonal operator `D(N_1, ..., N_K)^2`.
pub fn build_hp(p: &Polynomial, basis: &FockBasis) -> Result<ProblemHamiltonian, OpsError> {
    if p.num_vars() != basis.num_modes() && p.num_vars() != 0 {
        return Err(OpsError::DimensionMismatch { expected: basis.num_modes(), got: p.num_vars() });
    }
    let mut exact = Vec::with_capacity(basis.len());
    let mut diag = Vec::with_capacity(basis.len());
    let mut inexact = Vec::new();
    for (i, occ) in basis.states().iter().enumerate() {
        let sq = if p.num_vars() == 0 {
            let c = p.constant_term();
            (&c * &c).magnitude().clone()
        } else {
            p.square_at(occ).map_err(|_| OpsError::DimensionMismatch { expected: basis.num_modes(), got: p.num_vars() })?
        };
        let v = sq.to_f64().unwrap_or(f64::INFINITY);
        if !v.is_finite() {
            return Err(OpsError::OutOfRange { state: occ.clone(), digits: sq.to_string().len() });
        }
        if BigUint::from_f64(v).as_ref() != Some(&sq) {
            inexact.push(i);
        }
        exact.push(sq);
        diag.push(v);
    }
    Ok(ProblemHamiltonian { matrix: OperatorMatrix::diagonal_matrix(basis.meta(), &diag), exact, inexact })
}

/// Real displacements of the initial coherent state, one per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherentParams {
    alphas: Vec<f64>,
}

pub const DEFAULT_ALPHA: f64 = 0.5;

impl CoherentParams {
    pub fn new(alphas: Vec<f64>) -> Result<Self, OpsError> {
        if let Some(&a) = alphas.iter().find(|a| !a.is_finite()) {
            return Err(OpsError::NonFiniteAlpha(a));
        }
        Ok(Self { alphas })
    }

    pub fn uniform(num_modes: usize, alpha: f64) -> Result<Self, OpsError> {
        Self::new(vec![alpha; num_modes])
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

/// `sum_i (a_i^dag - alpha_i)(a_i - alpha_i)` projected onto the basis.
pub fn build_hi(c: &CoherentParams, basis: &FockBasis) -> Result<OperatorMatrix, OpsError> {
    if c.alphas.len() != basis.num_modes() {
        return Err(OpsError::DimensionMismatch { expected: basis.num_modes(), got: c.alphas.len() });
    }
    let shift: f64 = c.alphas.iter().map(|a| a * a).sum();
    let mut rows = Vec::with_capacity(basis.len());
    for (i, occ) in basis.states().iter().enumerate() {
        let mut row = Vec::with_capacity(2 * occ.len() + 1);
        let number: u32 = occ.iter().sum();
        row.push((i, f64::from(number) + shift));
        for (mode, &alpha) in c.alphas.iter().enumerate() {
            if alpha == 0.0 {
                continue;
            }
            // <n+1| a^dag |n> = sqrt(n+1); both directions use the same
            // expression so the result is bitwise symmetric
            if let Some(j) = basis.neighbor(i, mode, true) {
                row.push((j, -alpha * f64::from(occ[mode] + 1).sqrt()));
            }
            if let Some(j) = basis.neighbor(i, mode, false) {
                row.push((j, -alpha * f64::from(occ[mode]).sqrt()));
            }
        }
        rows.push(row);
    }
    Ok(OperatorMatrix::from_rows(basis.meta(), rows))
}

/// Monotone ramp `f` with `f(0) = 0`, `f(1) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Ramp {
    #[default]
    Linear,
    /// `3s^2 - 2s^3`
    Smoothstep,
    /// `sin^2(pi s / 2)`
    Sine,
}

impl Ramp {
    pub fn value(self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return 1.0;
        }
        match self {
            Ramp::Linear => s,
            Ramp::Smoothstep => s * s * (3.0 - 2.0 * s),
            Ramp::Sine => (0.5 * PI * s).sin().powi(2),
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        match self {
            Ramp::Linear => 1.0,
            Ramp::Smoothstep => 6.0 * s * (1.0 - s),
            Ramp::Sine => 0.5 * PI * (PI * s).sin(),
        }
    }

    pub fn max_derivative(self) -> f64 {
        match self {
            Ramp::Linear => 1.0,
            Ramp::Smoothstep => 1.5,
            Ramp::Sine => 0.5 * PI,
        }
    }
}

impl fmt::Display for Ramp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ramp::Linear => "linear",
            Ramp::Smoothstep => "smoothstep",
            Ramp::Sine => "sine",
        })
    }
}

impl FromStr for Ramp {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(Ramp::Linear),
            "smoothstep" => Ok(Ramp::Smoothstep),
            "sine" => Ok(Ramp::Sine),
            other => Err(format!("unknown ramp '{other}' (expected linear|smoothstep|sine)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    total_time: f64,
    ramp: Ramp,
    grid: Vec<f64>,
}

impl Schedule {
    pub fn new(total_time: f64, ramp: Ramp, grid: Vec<f64>) -> Result<Self, OpsError> {
        if !(total_time.is_finite() && total_time >= 0.0) {
            return Err(OpsError::Schedule(format!("total time {total_time} must be finite and non-negative")));
        }
        if grid.is_empty() {
            return Err(OpsError::Schedule("grid is empty".into()));
        }
        if grid.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(OpsError::Schedule("grid points must lie in [0, 1]".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(OpsError::Schedule("grid must be strictly increasing".into()));
        }
        Ok(Self { total_time, ramp, grid })
    }

    /// `points` equally spaced values from 0 to 1 inclusive.
    pub fn uniform(total_time: f64, ramp: Ramp, points: usize) -> Result<Self, OpsError> {
        let grid = match points {
            0 => Vec::new(),
            1 => vec![1.0],
            _ => (0..points).map(|i| i as f64 / (points - 1) as f64).collect(),
        };
        Self::new(total_time, ramp, grid)
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn ramp(&self) -> Ramp {
        self.ramp
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn with_total_time(&self, total_time: f64) -> Result<Self, OpsError> {
        Self::new(total_time, self.ramp, self.grid.clone())
    }
}

/// `(1 - f(s)) H_I + f(s) H_P`.
pub fn build_interpolated(hi: &OperatorMatrix, hp: &OperatorMatrix, s: f64, ramp: Ramp) -> Result<OperatorMatrix, OpsError> {
    same_basis(hi, hp)?;
    let f = ramp.value(s);
    if f == 0.0 {
        return Ok(hi.clone());
    }
    if f == 1.0 {
        return Ok(hp.clone());
    }
    OperatorMatrix::combine(1.0 - f, hi, f, hp)
}

/// `W = H_P - H_I`, the direction of the interpolation.
pub fn deformation(hi: &OperatorMatrix, hp: &OperatorMatrix) -> Result<OperatorMatrix, OpsError> {
    OperatorMatrix::combine(1.0, hp, -1.0, hi)
}

/// Frobenius norm of `[H_P, H_I]` on the truncated space.
pub fn commutator_norm(hi: &OperatorMatrix, hp: &OperatorMatrix) -> Result<f64, OpsError> {
    let ab = hp.multiply(hi)?;
    let ba = hi.multiply(hp)?;
    Ok(OperatorMatrix::combine(1.0, &ab, -1.0, &ba)?.frobenius_norm())
}

/// Whether `H_P` and `H_I` fail to commute, judged against `tol`.
pub fn commutator_nonzero(hi: &OperatorMatrix, hp: &OperatorMatrix, tol: f64) -> Result<bool, OpsError> {
    Ok(commutator_norm(hi, hp)? > tol)
}

/// Converts an exact integer to f64 for reporting.
pub fn bigint_to_f64(v: &BigInt) -> f64 {
    if v.is_zero() {
        0.0
    } else {
        v.to_f64().unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{parse_equation, ParseOptions};

    fn poly(s: &str) -> Polynomial {
        parse_equation(s, &ParseOptions::default()).unwrap()
    }

    fn dense_vec(m: &OperatorMatrix) -> Vec<Vec<f64>> {
        (0..m.dim()).map(|i| (0..m.dim()).map(|j| m.get(i, j)).collect()).collect()
    }

    #[test]
    fn hp_linear_example() {
        let b = FockBasis::enumerate(1, 8).unwrap();
        let hp = build_hp(&poly("x - 6"), &b).unwrap();
        let oracle: Vec<f64> = (0..=8).map(|n: i64| ((n - 6) * (n - 6)) as f64).collect();
        assert_eq!(hp.matrix().diagonal(), oracle);
        assert!(hp.matrix().is_diagonal());
        assert!(hp.inexact_entries().is_empty());
        assert_eq!(hp.minimizers(), vec![6]);
    }

    #[test]
    fn hp_zero_polynomial() {
        let b = FockBasis::enumerate(2, 3).unwrap();
        let hp = build_hp(&poly("0"), &b).unwrap();
        assert!(hp.matrix().diagonal().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hp_pythagoras_root_is_zero() {
        let b = FockBasis::enumerate(3, 9).unwrap();
        let hp = build_hp(&poly("(x+1)^2 + (y+1)^2 - (z+1)^2"), &b).unwrap();
        let i = b.index_of(&[2, 3, 4]).unwrap().unwrap();
        assert_eq!(hp.matrix().get(i, i), 0.0);
        let zeros = hp.minimizers();
        let states: Vec<&[u32]> = zeros.iter().map(|&i| b.state(i)).collect();
        assert_eq!(states, vec![&[2, 3, 4][..], &[3, 2, 4][..]]);
    }

    #[test]
    fn hp_flags_inexact_and_overflow() {
        let b = FockBasis::enumerate(1, 3).unwrap();
        let hp = build_hp(&poly("x + 9007199254740993"), &b).unwrap();
        assert!(!hp.inexact_entries().is_empty());
        let e = build_hp(&poly("x^20 + 100000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000000"), &b);
        assert!(matches!(e, Err(OpsError::OutOfRange { .. })));
        assert!(matches!(build_hp(&poly("x + y"), &b), Err(OpsError::DimensionMismatch { .. })));
    }

    #[test]
    fn hi_small_example() {
        let b = FockBasis::enumerate(1, 2).unwrap();
        let hi = build_hi(&CoherentParams::uniform(1, 0.5).unwrap(), &b).unwrap();
        let r2 = 0.5 * 2f64.sqrt();
        let expected = [vec![0.25, -0.5, 0.0], vec![-0.5, 1.25, -r2], vec![0.0, -r2, 2.25]];
        let got = dense_vec(&hi);
        for i in 0..3 {
            for j in 0..3 {
                assert!((got[i][j] - expected[i][j]).abs() < 1e-15, "({i},{j})");
            }
        }
        assert!(hi.is_exactly_symmetric());
    }

    #[test]
    fn hi_zero_alpha_is_number_operator() {
        let b = FockBasis::enumerate(2, 3).unwrap();
        let hi = build_hi(&CoherentParams::uniform(2, 0.0).unwrap(), &b).unwrap();
        assert!(hi.is_diagonal());
        let n: Vec<f64> = b.states().iter().map(|s| s.iter().sum::<u32>() as f64).collect();
        assert_eq!(hi.diagonal(), n);
    }

    #[test]
    fn hi_symmetric_multimode() {
        let b = FockBasis::enumerate(3, 6).unwrap();
        let hi = build_hi(&CoherentParams::new(vec![0.5, -0.3, 1.1]).unwrap(), &b).unwrap();
        assert!(hi.is_exactly_symmetric());
        assert_eq!(hi.max_asymmetry(), 0.0);
    }

    #[test]
    fn hi_truncation_consistency() {
        let c = CoherentParams::uniform(2, 0.5).unwrap();
        let small = FockBasis::enumerate(2, 4).unwrap();
        let big = FockBasis::enumerate(2, 5).unwrap();
        let hs = build_hi(&c, &small).unwrap();
        let hb = build_hi(&c, &big).unwrap();
        for i in 0..small.len() {
            for j in 0..small.len() {
                assert_eq!(hs.get(i, j), hb.get(i, j));
            }
        }
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let b = FockBasis::enumerate(1, 6).unwrap();
        let hi = build_hi(&CoherentParams::uniform(1, 0.5).unwrap(), &b).unwrap();
        let hp = build_hp(&poly("x - 3"), &b).unwrap();
        let hp = hp.matrix();
        assert_eq!(build_interpolated(&hi, hp, 0.0, Ramp::Linear).unwrap(), hi);
        assert_eq!(&build_interpolated(&hi, hp, 1.0, Ramp::Linear).unwrap(), hp);
        let mid = build_interpolated(&hi, hp, 0.5, Ramp::Linear).unwrap();
        for i in 0..b.len() {
            for j in 0..b.len() {
                assert_eq!(mid.get(i, j), 0.5 * hi.get(i, j) + 0.5 * hp.get(i, j));
            }
        }
        let other = FockBasis::enumerate(1, 5).unwrap();
        let hi5 = build_hi(&CoherentParams::uniform(1, 0.5).unwrap(), &other).unwrap();
        assert!(matches!(build_interpolated(&hi5, hp, 0.5, Ramp::Linear), Err(OpsError::BasisMismatch { .. })));
    }

    #[test]
    fn commutator_cases() {
        let b = FockBasis::enumerate(1, 8).unwrap();
        let hp = build_hp(&poly("x - 6"), &b).unwrap();
        let hp = hp.matrix();
        let h0 = build_hi(&CoherentParams::uniform(1, 0.0).unwrap(), &b).unwrap();
        assert_eq!(commutator_norm(&h0, hp).unwrap(), 0.0);
        assert_eq!(commutator_norm(hp, hp).unwrap(), 0.0);
        let hi = build_hi(&CoherentParams::uniform(1, 0.5).unwrap(), &b).unwrap();
        let norm = commutator_norm(&hi, hp).unwrap();
        // dense oracle
        let (a, p) = (dense_vec(&hi), dense_vec(hp));
        let n = b.len();
        let mut fro = 0.0;
        for i in 0..n {
            for j in 0..n {
                let c: f64 = (0..n).map(|k| p[i][k] * a[k][j] - a[i][k] * p[k][j]).sum();
                fro += c * c;
            }
        }
        assert!((norm - fro.sqrt()).abs() < 1e-12 * fro.sqrt());
        assert!(commutator_nonzero(&hi, hp, 1e-12).unwrap());
    }

    #[test]
    fn number_operators_commute_with_hp() {
        let b = FockBasis::enumerate(3, 6).unwrap();
        let hp = build_hp(&poly("(x+1)^2 + (y+1)^2 - (z+1)^2"), &b).unwrap();
        for mode in 0..3 {
            let diag: Vec<f64> = b.states().iter().map(|s| s[mode] as f64).collect();
            let n = OperatorMatrix::diagonal_matrix(b.meta(), &diag);
            assert_eq!(commutator_norm(&n, hp.matrix()).unwrap(), 0.0);
        }
    }

    #[test]
    fn hp_sandwich_bound() {
        let b = FockBasis::enumerate(2, 6).unwrap();
        let p = poly("x*y - 3*x + 2*y - 7");
        let hp = build_hp(&p, &b).unwrap();
        let min = hp.matrix().diagonal().into_iter().fold(f64::INFINITY, f64::min);
        let at_origin = bigint_to_f64(&p.constant_term()).powi(2);
        assert!(0.0 <= min && min <= at_origin);
    }

    #[test]
    fn ramps_hit_endpoints() {
        for r in [Ramp::Linear, Ramp::Smoothstep, Ramp::Sine] {
            assert_eq!(r.value(0.0), 0.0);
            assert_eq!(r.value(1.0), 1.0);
            let h = 1e-6;
            let fd = (r.value(0.3 + h) - r.value(0.3 - h)) / (2.0 * h);
            assert!((fd - r.derivative(0.3)).abs() < 1e-8);
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::uniform(10.0, Ramp::Linear, 101).is_ok());
        assert!(Schedule::new(1.0, Ramp::Linear, vec![0.5, 0.2]).is_err());
        assert!(Schedule::new(1.0, Ramp::Linear, vec![1.5]).is_err());
        assert!(Schedule::new(-1.0, Ramp::Linear, vec![0.5]).is_err());
        let g = Schedule::uniform(1.0, Ramp::Linear, 101).unwrap();
        assert_eq!(g.grid()[0], 0.0);
        assert_eq!(*g.grid().last().unwrap(), 1.0);
    }

    #[test]
    fn export_round_trips() {
        let b = FockBasis::enumerate(2, 3).unwrap();
        let hi = build_hi(&CoherentParams::uniform(2, 0.5).unwrap(), &b).unwrap();
        let dense: Vec<f64> = dense_vec(&hi).into_iter().flatten().collect();
        let mut text = Vec::new();
        hi.write_dense_text("H_I", &mut text).unwrap();
        let (h, data) = read_dense_text(&text[..]).unwrap();
        assert_eq!(h.basis, b.meta());
        assert_eq!(data, dense);
        let mut bin = Vec::new();
        hi.write_dense_binary("H_I", &mut bin).unwrap();
        let (h, data) = read_dense_binary(&bin[..]).unwrap();
        assert_eq!(h.operator, "H_I");
        assert_eq!(data, dense);
    }
}
