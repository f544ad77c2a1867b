//! Action of `exp(-i tau H)` on a vector through a Lanczos basis.

use faer::{Mat, Side};
use num_complex::Complex64;

use crate::ops::OperatorMatrix;

fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn cnorm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Outcome of one Krylov substep.
pub struct KrylovStep {
    pub next: Vec<Complex64>,
    /// A-posteriori estimate of the error in `next`.
    pub error: f64,
}

/// `exp(-i tau H) v` from an `m`-dimensional Krylov space.
pub fn expm_krylov(h: &OperatorMatrix, v: &[Complex64], tau: f64, m: usize) -> KrylovStep {
    let n = v.len();
    let beta0 = cnorm(v);
    if beta0 == 0.0 {
        return KrylovStep { next: v.to_vec(), error: 0.0 };
    }
    let m = m.min(n).max(1);
    let mut basis: Vec<Vec<Complex64>> = vec![v.iter().map(|x| x / beta0).collect()];
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut breakdown = false;
    for k in 0..m {
        h.apply_complex(&basis[k], &mut w);
        let a = cdot(&basis[k], &w).re;
        alpha.push(a);
        // full reorthogonalization, two passes
        for _ in 0..2 {
            for q in &basis {
                let c = cdot(q, &w);
                w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = cnorm(&w);
        beta.push(b);
        if b <= 1e-14 * (a.abs() + 1.0) {
            breakdown = true;
            break;
        }
        if k + 1 < m {
            basis.push(w.iter().map(|x| x / b).collect());
        }
    }
    let k = alpha.len();
    let t = Mat::<f64>::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = t.self_adjoint_eigen(Side::Lower).expect("tridiagonal eigenproblem");
    let z = eig.U();
    // c = exp(-i tau T) e_1
    let coeffs: Vec<Complex64> = (0..k)
        .map(|r| (0..k).map(|c| Complex64::from_polar(z[(r, c)] * z[(0, c)], -tau * eig.S()[c])).sum())
        .collect();
    let mut next = vec![Complex64::new(0.0, 0.0); n];
    for (q, &c) in basis.iter().zip(&coeffs) {
        next.iter_mut().zip(q).for_each(|(x, y)| *x += c * beta0 * y);
    }
    let error = if breakdown { 0.0 } else { beta0 * beta[k - 1] * coeffs[k - 1].norm() };
    KrylovStep { next, error }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::FockBasis;
    use crate::ops::{build_hi, CoherentParams};
    use crate::spectral::full_eigen;

    #[test]
    fn matches_spectral_exponential() {
        let b = FockBasis::enumerate(2, 6).unwrap();
        let h = build_hi(&CoherentParams::new(vec![0.5, 0.8]).unwrap(), &b).unwrap();
        let v: Vec<Complex64> = (0..b.len()).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let nv = cnorm(&v);
        let v: Vec<Complex64> = v.iter().map(|x| x / nv).collect();
        let tau = 0.3;
        let step = expm_krylov(&h, &v, tau, 20);
        let full = full_eigen(&h, None).unwrap();
        let n = b.len();
        let mut exact = vec![Complex64::new(0.0, 0.0); n];
        for q in 0..n {
            let col = full.column(q);
            let proj: Complex64 = col.iter().zip(&v).map(|(c, x)| x * c).sum();
            let ph = Complex64::from_polar(1.0, -tau * full.values[q]);
            exact.iter_mut().zip(&col).for_each(|(e, c)| *e += ph * proj * c);
        }
        let err: f64 = exact.iter().zip(&step.next).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        assert!(step.error < 1e-10);
    }
}
