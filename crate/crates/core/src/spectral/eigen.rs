//! Lowest eigenpairs of real symmetric operators.
//!
//! Small operators go through a dense solver. When a basis permutation
//! `sigma` (an involution) commutes with the operator, the dense problem is
//! split into its even and odd sectors first, which roughly quarters the cost.
//! Above `dense_limit` a Lanczos iteration with full reorthogonalization and
//! locking is used instead; it touches the operator only through products.

use faer::{Mat, Side};

use super::SpectralError;
use crate::ops::OperatorMatrix;

pub const DEFAULT_DENSE_LIMIT: usize = 4096;

/// Eigenvalues ascending; `vectors[q]` belongs to `values[q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct EigenOptions {
    pub dense_limit: usize,
    /// Involutive basis permutation commuting with the operator.
    pub symmetry: Option<Vec<usize>>,
    pub orthonormality_tol: f64,
    /// Residual bound relative to the operator norm.
    pub residual_tol: f64,
    pub lanczos_max_dim: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            dense_limit: DEFAULT_DENSE_LIMIT,
            symmetry: None,
            orthonormality_tol: 1e-10,
            residual_tol: 1e-9,
            lanczos_max_dim: 600,
        }
    }
}

/// All eigenpairs from a dense solve, ascending.
pub struct FullEigen {
    pub values: Vec<f64>,
    /// Column `q` is the eigenvector of `values[q]`.
    pub vectors: Mat<f64>,
}

impl FullEigen {
    pub fn column(&self, q: usize) -> Vec<f64> {
        (0..self.vectors.nrows()).map(|i| self.vectors[(i, q)]).collect()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Orbit bookkeeping for a basis involution.
struct Sectors {
    // (sector, position in sector, coefficient) for each basis state
    even: Vec<(usize, f64)>,
    odd: Vec<Option<(usize, f64)>>,
    even_dim: usize,
    odd_dim: usize,
}

impl Sectors {
    fn new(perm: &[usize]) -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let n = perm.len();
        let mut even = vec![(0, 0.0); n];
        let mut odd = vec![None; n];
        let (mut e, mut o) = (0, 0);
        for i in 0..n {
            let j = perm[i];
            if j == i {
                even[i] = (e, 1.0);
                e += 1;
            } else if i < j {
                even[i] = (e, r);
                even[j] = (e, r);
                e += 1;
                odd[i] = Some((o, r));
                odd[j] = Some((o, -r));
                o += 1;
            }
        }
        Self { even, odd, even_dim: e, odd_dim: o }
    }
}

fn dense_eigen(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>), SpectralError> {
    if m.nrows() == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let e = m.self_adjoint_eigen(Side::Lower).map_err(|e| SpectralError::Solver(format!("{e:?}")))?;
    let n = m.nrows();
    let values: Vec<f64> = (0..n).map(|i| e.S()[i]).collect();
    let u = e.U();
    let vectors = Mat::from_fn(n, n, |i, j| u[(i, j)]);
    Ok((values, vectors))
}

/// Every eigenpair of `h` via the dense solver, using `symmetry` to split the
/// problem when given.
pub fn full_eigen(h: &OperatorMatrix, symmetry: Option<&[usize]>) -> Result<FullEigen, SpectralError> {
    let n = h.dim();
    let Some(perm) = symmetry else {
        let (values, vectors) = dense_eigen(&h.to_dense())?;
        return Ok(FullEigen { values, vectors });
    };
    let sec = Sectors::new(perm);
    let mut even = Mat::<f64>::zeros(sec.even_dim, sec.even_dim);
    let mut odd = Mat::<f64>::zeros(sec.odd_dim, sec.odd_dim);
    for i in 0..n {
        let (ei, ci) = sec.even[i];
        let oi = sec.odd[i];
        for (j, v) in h.row(i) {
            let (ej, cj) = sec.even[j];
            even[(ei, ej)] += ci * v * cj;
            if let (Some((a, ca)), Some((b, cb))) = (oi, sec.odd[j]) {
                odd[(a, b)] += ca * v * cb;
            }
        }
    }
    let (ev, eu) = dense_eigen(&even)?;
    let (ov, ou) = dense_eigen(&odd)?;
    let mut order: Vec<(f64, bool, usize)> =
        ev.iter().enumerate().map(|(k, &v)| (v, true, k)).chain(ov.iter().enumerate().map(|(k, &v)| (v, false, k))).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut vectors = Mat::<f64>::zeros(n, n);
    for (col, &(_, is_even, k)) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, col)] = if is_even {
                let (e, c) = sec.even[i];
                c * eu[(e, k)]
            } else {
                match sec.odd[i] {
                    Some((o, c)) => c * ou[(o, k)],
                    None => 0.0,
                }
            };
        }
    }
    Ok(FullEigen { values: order.iter().map(|t| t.0).collect(), vectors })
}

/// `m` lowest eigenpairs with default options.
pub fn eigs_lowest(h: &OperatorMatrix, m: usize) -> Result<EigenPairs, SpectralError> {
    eigs_lowest_with(h, m, &EigenOptions::default())
}

pub fn eigs_lowest_with(h: &OperatorMatrix, m: usize, opts: &EigenOptions) -> Result<EigenPairs, SpectralError> {
    let n = h.dim();
    if m > n {
        return Err(SpectralError::TooFewStates { requested: m, dim: n });
    }
    let (pairs, norm) = if n <= opts.dense_limit {
        let full = full_eigen(h, opts.symmetry.as_deref())?;
        let norm = full.norm();
        let pairs = EigenPairs { values: full.values[..m].to_vec(), vectors: (0..m).map(|q| full.column(q)).collect() };
        (pairs, norm)
    } else {
        let norm = h.row_sum_norm();
        (lanczos_lowest(h, m, norm, opts)?, norm)
    };
    verify(h, &pairs, norm, opts)?;
    Ok(pairs)
}

fn verify(h: &OperatorMatrix, pairs: &EigenPairs, norm: f64, opts: &EigenOptions) -> Result<(), SpectralError> {
    let residuals = residuals(h, pairs);
    let bound = opts.residual_tol * norm.max(1.0);
    if residuals.iter().any(|&r| r > bound) {
        return Err(SpectralError::NonConvergence { residuals, bound });
    }
    let defect = orthonormality_defect(&pairs.vectors);
    if defect > opts.orthonormality_tol {
        return Err(SpectralError::NotOrthonormal(defect));
    }
    Ok(())
}

/// `||H v - lambda v||` for each pair.
pub fn residuals(h: &OperatorMatrix, pairs: &EigenPairs) -> Vec<f64> {
    let mut hv = vec![0.0; h.dim()];
    pairs
        .values
        .iter()
        .zip(&pairs.vectors)
        .map(|(&lam, v)| {
            h.apply(v, &mut hv);
            hv.iter().zip(v).map(|(a, b)| (a - lam * b).powi(2)).sum::<f64>().sqrt()
        })
        .collect()
}

/// Largest `|<v_i|v_j> - delta_ij|`.
pub fn orthonormality_defect(vs: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..vs.len() {
        for j in 0..=i {
            let d = dot(&vs[i], &vs[j]) - if i == j { 1.0 } else { 0.0 };
            worst = worst.max(d.abs());
        }
    }
    worst
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let nrm = dot(v, v).sqrt();
    if nrm > 0.0 {
        v.iter_mut().for_each(|x| *x /= nrm);
    }
    nrm
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    // two passes of classical Gram-Schmidt
    for _ in 0..2 {
        for q in against {
            let c = dot(v, q);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
    }
}

fn start_vector(n: usize, salt: u64) -> Vec<f64> {
    let mut state = 0x9e37_79b9_7f4a_7c15u64 ^ salt.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

/// Krylov sweep in the complement of `locked`; returns Ritz pairs ascending
/// with their true residual norms. The projected matrix is formed explicitly
/// from the stored products, so rounding in the three-term recurrence cannot
/// produce spurious Ritz values.
fn lanczos_sweep(h: &OperatorMatrix, locked: &[Vec<f64>], dim: usize, want: usize, salt: u64) -> Result<Vec<(f64, Vec<f64>, f64)>, SpectralError> {
    let n = h.dim();
    let mut q = start_vector(n, salt);
    orthogonalize(&mut q, locked);
    if normalize(&mut q) == 0.0 {
        return Ok(Vec::new());
    }
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut products: Vec<Vec<f64>> = Vec::new();
    let breakdown = 1e-12 * (h.row_sum_norm() + 1.0);
    loop {
        let k = basis.len() - 1;
        let mut w = vec![0.0; n];
        h.apply(&basis[k], &mut w);
        products.push(w.clone());
        if basis.len() >= dim {
            break;
        }
        orthogonalize(&mut w, locked);
        orthogonalize(&mut w, &basis);
        if normalize(&mut w) <= breakdown {
            break;
        }
        basis.push(w);
    }
    let k = basis.len();
    let t = Mat::<f64>::from_fn(k, k, |i, j| 0.5 * (dot(&basis[i], &products[j]) + dot(&basis[j], &products[i])));
    let (vals, vecs) = dense_eigen(&t)?;
    Ok((0..want.min(k))
        .map(|c| {
            let mut v = vec![0.0; n];
            let mut hv = vec![0.0; n];
            for r in 0..k {
                let y = vecs[(r, c)];
                v.iter_mut().zip(&basis[r]).for_each(|(x, b)| *x += y * b);
                hv.iter_mut().zip(&products[r]).for_each(|(x, b)| *x += y * b);
            }
            let res = hv.iter().zip(&v).map(|(a, b)| (a - vals[c] * b).powi(2)).sum::<f64>().sqrt();
            (vals[c], v, res)
        })
        .collect())
}

fn lanczos_lowest(h: &OperatorMatrix, m: usize, norm: f64, opts: &EigenOptions) -> Result<EigenPairs, SpectralError> {
    let n = h.dim();
    let bound = opts.residual_tol * norm.max(1.0);
    let mut locked: Vec<Vec<f64>> = Vec::new();
    let mut locked_vals: Vec<f64> = Vec::new();
    let mut dim = (4 * m).max(60).min(n);
    let mut salt = 0;
    let mut misses = 0;
    // lock converged pairs until m are held, then probe the complement once
    // more: a degenerate partner missed by the first sweeps shows up there
    loop {
        let want = m.saturating_sub(locked.len()).max(1);
        let ritz = lanczos_sweep(h, &locked, dim.min(n - locked.len()), want, salt)?;
        salt += 1;
        let mut gained = 0;
        let ceiling = if locked.len() >= m { locked_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max) } else { f64::INFINITY };
        for (val, vec, est) in ritz.into_iter().take(want) {
            if est > bound || val >= ceiling {
                break;
            }
            locked_vals.push(val);
            locked.push(vec);
            gained += 1;
        }
        if locked.len() >= m && gained == 0 {
            break;
        }
        if gained == 0 {
            misses += 1;
            if dim >= opts.lanczos_max_dim.min(n) || misses > 8 {
                return Err(SpectralError::NonConvergence { residuals: Vec::new(), bound });
            }
            dim = (dim * 2).min(opts.lanczos_max_dim).min(n);
        }
        if locked.len() >= n {
            break;
        }
    }
    let mut order: Vec<usize> = (0..locked.len()).collect();
    order.sort_by(|&a, &b| locked_vals[a].total_cmp(&locked_vals[b]));
    order.truncate(m);
    Ok(EigenPairs { values: order.iter().map(|&i| locked_vals[i]).collect(), vectors: order.iter().map(|&i| locked[i].clone()).collect() })
}
