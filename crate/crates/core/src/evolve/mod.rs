//! Time-dependent Schrödinger evolution on a truncated Fock basis and the
//! measurement distributions it produces.
//!
//! `i dpsi/dt = H(t/T) psi` is integrated with piecewise-constant midpoint
//! steps. Each step applies `exp(-i H(s_mid) dt)` through a Lanczos
//! approximation (error-controlled substeps), exactly from a dense
//! eigendecomposition, or by symmetric splitting into the `H_I` and diagonal
//! `H_P` parts. The splitting costs two dense basis changes per step and is
//! the automatic choice whenever `H_P` is diagonal and the basis fits the
//! dense limit. Whatever the propagator, `evolve` doubles the step count
//! until the probabilities stop moving.

mod krylov;

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use krylov::{expm_krylov, KrylovStep};

use crate::fock::{BasisMeta, FockBasis, Truncation};
use crate::ops::{build_interpolated, format_sig17, CoherentParams, OperatorMatrix, OpsError, Schedule};
use crate::spectral::{detect_mode_swap, full_eigen, SpectralError};

#[derive(Debug, thiserror::Error)]
pub enum EvolveError {
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("coherent state loses {mass:e} probability beyond cutoff {cutoff} (tolerance {tol:e}); use a larger cutoff")]
    TailMass { mass: f64, tol: f64, cutoff: u32 },
    #[error("norm drifted by {drift:e}, above the tolerance {tol:e}")]
    NormDrift { drift: f64, tol: f64 },
    #[error("step-halving difference {diff:e} still above {tol:e} at {steps} steps (cap {max_steps})")]
    StepTolUnachievable { steps: usize, max_steps: usize, diff: f64, tol: f64 },
    #[error("state and operators live on different bases")]
    BasisMismatch,
    #[error("state norm {0} is not 1")]
    NotNormalized(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Complex amplitudes over a Fock basis at time `time`.
#[derive(Debug, Clone)]
pub struct QuantumState {
    basis: Arc<FockBasis>,
    amps: Vec<Complex64>,
    time: f64,
}

impl QuantumState {
    pub fn new(basis: Arc<FockBasis>, amps: Vec<Complex64>, time: f64) -> Result<Self, EvolveError> {
        if amps.len() != basis.len() {
            return Err(EvolveError::BasisMismatch);
        }
        Ok(Self { basis, amps, time })
    }

    /// The number state at basis position `i`.
    pub fn basis_state(basis: Arc<FockBasis>, i: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); basis.len()];
        amps[i] = Complex64::new(1.0, 0.0);
        Self { basis, amps, time: 0.0 }
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `<psi|H|psi>`.
    pub fn expectation(&self, h: &OperatorMatrix) -> f64 {
        let mut hv = vec![Complex64::new(0.0, 0.0); self.amps.len()];
        h.apply_complex(&self.amps, &mut hv);
        self.amps.iter().zip(&hv).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

/// Probability beyond the truncation for a product coherent state.
pub fn coherent_tail_mass(c: &CoherentParams, basis: &FockBasis) -> f64 {
    let cutoff = basis.cutoff();
    match basis.truncation() {
        Truncation::Total => {
            // total occupation is Poisson with mean sum |alpha_i|^2
            let lambda: f64 = c.alphas().iter().map(|a| a * a).sum();
            poisson_tail(lambda, cutoff)
        }
        Truncation::PerMode => {
            let inside: f64 = c.alphas().iter().map(|a| 1.0 - poisson_tail(a * a, cutoff)).product();
            1.0 - inside
        }
    }
}

/// `P(X > n)` for `X ~ Poisson(lambda)`, summed upward from `n + 1`.
fn poisson_tail(lambda: f64, n: u32) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut term = (-lambda).exp();
    for k in 1..=n + 1 {
        term *= lambda / f64::from(k);
    }
    let mut sum = 0.0;
    let mut k = n + 1;
    while term > 1e-300 && (sum == 0.0 || term > sum * 1e-17) {
        sum += term;
        k += 1;
        term *= lambda / f64::from(k);
    }
    sum.min(1.0)
}

/// Default tolerance on the probability lost to truncation.
pub const DEFAULT_TAIL_TOL: f64 = 0.05;

/// Product of truncated coherent expansions, renormalized to unit norm.
pub fn coherent_initial_state(c: &CoherentParams, basis: Arc<FockBasis>, tail_tol: f64) -> Result<QuantumState, EvolveError> {
    if c.alphas().len() != basis.num_modes() {
        return Err(OpsError::DimensionMismatch { expected: basis.num_modes(), got: c.alphas().len() }.into());
    }
    let mass = coherent_tail_mass(c, &basis);
    if mass > tail_tol {
        return Err(EvolveError::TailMass { mass, tol: tail_tol, cutoff: basis.cutoff() });
    }
    let top = basis.states().iter().flatten().copied().max().unwrap_or(0) as usize;
    // per-mode coefficients alpha^n / sqrt(n!), times exp(-alpha^2 / 2)
    let tables: Vec<Vec<f64>> = c
        .alphas()
        .iter()
        .map(|&a| {
            let mut t = Vec::with_capacity(top + 1);
            let mut v = (-0.5 * a * a).exp();
            t.push(v);
            for n in 1..=top {
                v *= a / (n as f64).sqrt();
                t.push(v);
            }
            t
        })
        .collect();
    let mut amps: Vec<Complex64> = basis
        .states()
        .iter()
        .map(|occ| Complex64::new(occ.iter().zip(&tables).map(|(&n, t)| t[n as usize]).product(), 0.0))
        .collect();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    amps.iter_mut().for_each(|a| *a /= norm);
    Ok(QuantumState { basis, amps, time: 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Propagator {
    /// Pick per run from the cost model.
    #[default]
    Auto,
    /// Exact exponential from a dense eigendecomposition at every step.
    Spectral,
    /// Lanczos approximation with error-controlled substeps.
    Krylov,
    /// Symmetric (Strang) splitting of the midpoint Hamiltonian into its
    /// `H_I` and diagonal `H_P` parts; `H_I` is diagonalized once.
    Split,
}

impl std::str::FromStr for Propagator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Propagator::Auto),
            "spectral" => Ok(Propagator::Spectral),
            "krylov" => Ok(Propagator::Krylov),
            "split" => Ok(Propagator::Split),
            other => Err(format!("unknown propagator '{other}' (expected auto|spectral|krylov|split)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub propagator: Propagator,
    pub min_steps: usize,
    /// Largest time step of the first attempt.
    pub max_dt: f64,
    pub max_steps: usize,
    /// Per-step error allowed in the Krylov exponential.
    pub step_tol: f64,
    pub norm_tol: f64,
    /// Sup-norm tolerance of the step-halving test; `None` runs once.
    pub conv_tol: Option<f64>,
    pub krylov_dim: usize,
    /// Dense exponentials are never used above this dimension.
    pub spectral_limit: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            propagator: Propagator::Auto,
            min_steps: 100,
            max_dt: 0.1,
            max_steps: 1 << 18,
            step_tol: 1e-10,
            norm_tol: 1e-9,
            conv_tol: Some(1e-6),
            krylov_dim: 30,
            spectral_limit: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveReport {
    pub steps: usize,
    pub attempts: usize,
    /// Sup-norm change of the probabilities between the last two step counts.
    pub halving_diff: Option<f64>,
    pub norm_drift: f64,
    pub propagator: Propagator,
    pub krylov_substeps: usize,
}

fn check_inputs(hi: &OperatorMatrix, hp: &OperatorMatrix, psi0: &QuantumState) -> Result<(), EvolveError> {
    if hi.meta() != hp.meta() || hi.meta() != &psi0.basis.meta() {
        return Err(EvolveError::BasisMismatch);
    }
    let norm = psi0.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(EvolveError::NotNormalized(norm));
    }
    Ok(())
}

/// Chooses a concrete propagator for `steps` steps over total time `t`.
pub fn resolve_propagator(opts: &EvolveOptions, hi: &OperatorMatrix, hp: &OperatorMatrix, t: f64, steps: usize, split: bool) -> Propagator {
    let n = hi.dim();
    match opts.propagator {
        Propagator::Spectral if n <= opts.spectral_limit => Propagator::Spectral,
        Propagator::Split if n <= opts.spectral_limit && hp.is_diagonal() => Propagator::Split,
        Propagator::Spectral | Propagator::Krylov | Propagator::Split => Propagator::Krylov,
        Propagator::Auto => {
            if n > opts.spectral_limit {
                return Propagator::Krylov;
            }
            if hp.is_diagonal() {
                return Propagator::Split;
            }
            let hnorm = hi.row_sum_norm().max(hp.row_sum_norm());
            let dt = t / steps.max(1) as f64;
            let m = opts.krylov_dim.min(n) as f64;
            let substeps = (hnorm * dt / 8.0).ceil().max(1.0);
            let nnz = hi.nnz().max(hp.nnz()) as f64;
            let krylov = substeps * m * (4.0 * nnz + 8.0 * m * n as f64);
            let nf = n as f64;
            let dense = if split { 2.5 * nf.powi(3) } else { 10.0 * nf.powi(3) } + 16.0 * nf * nf;
            if dense < krylov {
                Propagator::Spectral
            } else {
                Propagator::Krylov
            }
        }
    }
}

/// Propagates with exactly `steps` midpoint steps; `backward` applies the
/// inverse steps in reverse order.
pub fn evolve_fixed(
    hi: &OperatorMatrix,
    hp: &OperatorMatrix,
    sched: &Schedule,
    psi0: &QuantumState,
    steps: usize,
    backward: bool,
    opts: &EvolveOptions,
) -> Result<(QuantumState, EvolveReport), EvolveError> {
    check_inputs(hi, hp, psi0)?;
    let t = sched.total_time();
    let steps = steps.max(1);
    let symmetry = detect_mode_swap(psi0.basis(), &[hi, hp]).map(|(_, p)| p);
    let propagator = resolve_propagator(opts, hi, hp, t, steps, symmetry.is_some());
    let dt = t / steps as f64;
    let sign = if backward { -1.0 } else { 1.0 };
    if propagator == Propagator::Split {
        let amps = split_steps(hi, hp, sched, &psi0.amps, steps, sign * dt, backward, symmetry.as_deref())?;
        return finish(psi0, amps, t, backward, steps, propagator, 0, opts);
    }
    let mut amps = psi0.amps.clone();
    let mut substeps = 0;
    let n = amps.len();
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    let mut sub = dt.abs();
    for j in 0..steps {
        let idx = if backward { steps - 1 - j } else { j };
        let s_mid = (idx as f64 + 0.5) / steps as f64;
        let h = build_interpolated(hi, hp, s_mid, sched.ramp())?;
        let tau = sign * dt;
        match propagator {
            Propagator::Spectral => {
                let e = full_eigen(&h, symmetry.as_deref())?;
                let u = &e.vectors;
                for q in 0..n {
                    let mut c = Complex64::new(0.0, 0.0);
                    for i in 0..n {
                        c += amps[i] * u[(i, q)];
                    }
                    scratch[q] = c * Complex64::from_polar(1.0, -tau * e.values[q]);
                }
                amps.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
                for q in 0..n {
                    let c = scratch[q];
                    for i in 0..n {
                        amps[i] += c * u[(i, q)];
                    }
                }
            }
            _ => {
                let mut remaining = tau.abs();
                while remaining > 0.0 {
                    sub = sub.min(remaining);
                    let step = expm_krylov(&h, &amps, sign * sub, opts.krylov_dim);
                    if step.error > opts.step_tol * (sub / dt.abs()).max(1e-3) && sub > dt.abs() * 1e-6 {
                        sub *= 0.5;
                        continue;
                    }
                    amps = step.next;
                    remaining -= sub;
                    substeps += 1;
                    if remaining < 1e-15 * dt.abs() {
                        remaining = 0.0;
                    }
                    sub *= 1.5;
                }
            }
        }
    }
    finish(psi0, amps, t, backward, steps, propagator, substeps, opts)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    psi0: &QuantumState,
    amps: Vec<Complex64>,
    t: f64,
    backward: bool,
    steps: usize,
    propagator: Propagator,
    substeps: usize,
    opts: &EvolveOptions,
) -> Result<(QuantumState, EvolveReport), EvolveError> {
    let out = QuantumState { basis: psi0.basis.clone(), amps, time: if backward { 0.0 } else { t } };
    let drift = (out.norm() - 1.0).abs();
    if drift > opts.norm_tol {
        return Err(EvolveError::NormDrift { drift, tol: opts.norm_tol });
    }
    Ok((
        out,
        EvolveReport { steps, attempts: 1, halving_diff: None, norm_drift: drift, propagator, krylov_substeps: substeps },
    ))
}

// Two Gram-Schmidt passes bring the basis to orthonormal within rounding, so
// that long runs of basis changes do not drift the norm.
fn reorthonormalize(u: &mut faer::Mat<f64>) {
    let n = u.ncols();
    for _ in 0..2 {
        for q in 0..n {
            for p in 0..q {
                let c: f64 = (0..u.nrows()).map(|i| u[(i, p)] * u[(i, q)]).sum();
                for i in 0..u.nrows() {
                    let v = u[(i, p)];
                    u[(i, q)] -= c * v;
                }
            }
            let norm = (0..u.nrows()).map(|i| u[(i, q)] * u[(i, q)]).sum::<f64>().sqrt();
            for i in 0..u.nrows() {
                u[(i, q)] /= norm;
            }
        }
    }
}

/// Strang steps `e^{-i tau (1-f) H_I / 2} e^{-i tau f H_P} e^{-i tau (1-f) H_I / 2}`
/// with `f` taken at each step midpoint. The state is kept in the `H_I`
/// eigenbasis between `H_P` kicks, so adjacent half steps merge.
#[allow(clippy::too_many_arguments)]
fn split_steps(
    hi: &OperatorMatrix,
    hp: &OperatorMatrix,
    sched: &Schedule,
    amps: &[Complex64],
    steps: usize,
    tau: f64,
    backward: bool,
    symmetry: Option<&[usize]>,
) -> Result<Vec<Complex64>, EvolveError> {
    let mut eig = full_eigen(hi, symmetry)?;
    reorthonormalize(&mut eig.vectors);
    let u = &eig.vectors;
    let n = amps.len();
    let diag = hp.diagonal();
    let to_eigen = |x: &[Complex64], out: &mut [Complex64]| {
        for (q, o) in out.iter_mut().enumerate() {
            let col = u.col(q);
            let mut c = Complex64::new(0.0, 0.0);
            for i in 0..n {
                c += x[i] * col[i];
            }
            *o = c;
        }
    };
    let from_eigen = |c: &[Complex64], out: &mut [Complex64]| {
        out.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        for (q, &cq) in c.iter().enumerate() {
            let col = u.col(q);
            for i in 0..n {
                out[i] += cq * col[i];
            }
        }
    };
    let frac = |j: usize| {
        let idx = if backward { steps - 1 - j } else { j };
        sched.ramp().value((idx as f64 + 0.5) / steps as f64)
    };
    let mut coeffs = vec![Complex64::new(0.0, 0.0); n];
    let mut state = amps.to_vec();
    to_eigen(&state, &mut coeffs);
    // pending H_I weight carried into the next eigenbasis phase
    let mut weight = 0.5 * (1.0 - frac(0));
    for j in 0..steps {
        let f = frac(j);
        coeffs.iter_mut().zip(&eig.values).for_each(|(c, &e)| *c *= Complex64::from_polar(1.0, -tau * weight * e));
        from_eigen(&coeffs, &mut state);
        state.iter_mut().zip(&diag).for_each(|(a, &d)| *a *= Complex64::from_polar(1.0, -tau * f * d));
        to_eigen(&state, &mut coeffs);
        weight = 0.5 * (1.0 - f) + if j + 1 < steps { 0.5 * (1.0 - frac(j + 1)) } else { 0.0 };
    }
    coeffs.iter_mut().zip(&eig.values).for_each(|(c, &e)| *c *= Complex64::from_polar(1.0, -tau * weight * e));
    from_eigen(&coeffs, &mut state);
    Ok(state)
}

/// Initial step count for a run of total time `t`.
pub fn initial_steps(t: f64, opts: &EvolveOptions) -> usize {
    opts.min_steps.max((t / opts.max_dt).ceil() as usize)
}

/// `psi(T)` with the step count doubled until the final probabilities move by
/// less than `conv_tol` in sup norm.
pub fn evolve(
    hi: &OperatorMatrix,
    hp: &OperatorMatrix,
    sched: &Schedule,
    psi0: &QuantumState,
    opts: &EvolveOptions,
) -> Result<(QuantumState, EvolveReport), EvolveError> {
    let mut steps = initial_steps(sched.total_time(), opts).min(opts.max_steps);
    let (mut psi, mut report) = evolve_fixed(hi, hp, sched, psi0, steps, false, opts)?;
    let Some(tol) = opts.conv_tol else {
        return Ok((psi, report));
    };
    let mut attempts = 1;
    let mut substeps = report.krylov_substeps;
    loop {
        if steps * 2 > opts.max_steps {
            return Err(EvolveError::StepTolUnachievable {
                steps,
                max_steps: opts.max_steps,
                diff: report.halving_diff.unwrap_or(f64::INFINITY),
                tol,
            });
        }
        steps *= 2;
        let (finer, finer_report) = evolve_fixed(hi, hp, sched, psi0, steps, false, opts)?;
        attempts += 1;
        substeps += finer_report.krylov_substeps;
        let diff = psi
            .amps
            .iter()
            .zip(&finer.amps)
            .map(|(a, b)| (a.norm_sqr() - b.norm_sqr()).abs())
            .fold(0.0, f64::max);
        psi = finer;
        report = EvolveReport { halving_diff: Some(diff), attempts, krylov_substeps: substeps, ..finer_report };
        if diff < tol {
            return Ok((psi, report));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionSource {
    SimulatedReference,
    TruncatedModel,
    SampledHistogram,
}

/// Probabilities over a Fock basis.
#[derive(Debug, Clone)]
pub struct Distribution {
    basis: Arc<FockBasis>,
    probs: Vec<f64>,
    source: DistributionSource,
    accuracy: Option<f64>,
}

impl Distribution {
    /// Validates and renormalizes `probs`.
    pub fn new(basis: Arc<FockBasis>, probs: Vec<f64>, source: DistributionSource, accuracy: Option<f64>) -> Result<Self, EvolveError> {
        if probs.len() != basis.len() {
            return Err(EvolveError::BasisMismatch);
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(EvolveError::InvalidDistribution("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(EvolveError::InvalidDistribution("all probabilities are zero".into()));
        }
        let probs = probs.into_iter().map(|p| p / total).collect();
        Ok(Self { basis, probs, source, accuracy })
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn source(&self) -> DistributionSource {
        self.source
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.accuracy
    }

    pub fn with_source(mut self, source: DistributionSource) -> Self {
        self.source = source;
        self
    }

    /// Probability of the given occupation vector (0 outside the basis).
    pub fn prob_of(&self, occ: &[u32]) -> f64 {
        match self.basis.index_of(occ) {
            Ok(Some(i)) => self.probs[i],
            _ => 0.0,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvolveError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["state".to_string()];
        header.extend((1..=self.basis.num_modes()).map(|i| format!("n_{i}")));
        header.push("probability".into());
        out.write_record(&header)?;
        for (i, p) in self.probs.iter().enumerate() {
            let mut row = vec![self.basis.label(i)];
            row.extend(self.basis.state(i).iter().map(|n| n.to_string()));
            row.push(format_sig17(*p));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn export(&self) -> DistributionExport {
        DistributionExport {
            basis: self.basis.meta(),
            source: self.source,
            accuracy: self.accuracy,
            entries: self
                .probs
                .iter()
                .enumerate()
                .map(|(i, &p)| DistributionEntry { state: self.basis.state(i).to_vec(), label: self.basis.label(i), probability: p })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionEntry {
    pub state: Vec<u32>,
    pub label: String,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionExport {
    pub basis: BasisMeta,
    pub source: DistributionSource,
    pub accuracy: Option<f64>,
    pub entries: Vec<DistributionEntry>,
}

/// Born-rule probabilities of a state.
pub fn probabilities(psi: &QuantumState) -> Distribution {
    let probs = psi.amps.iter().map(|a| a.norm_sqr()).collect();
    Distribution::new(psi.basis.clone(), probs, DistributionSource::TruncatedModel, None).expect("state has nonzero norm")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{build_hi, build_hp, Ramp};
    use crate::poly::{parse_equation, ParseOptions};

    fn ops_for(eq: &str, k: usize, cutoff: u32) -> (Arc<FockBasis>, OperatorMatrix, OperatorMatrix) {
        let b = Arc::new(FockBasis::enumerate(k, cutoff).unwrap());
        let p = parse_equation(eq, &ParseOptions::default()).unwrap();
        let hp = build_hp(&p, &b).unwrap().matrix().clone();
        let hi = build_hi(&CoherentParams::uniform(k, 0.5).unwrap(), &b).unwrap();
        (b, hi, hp)
    }

    #[test]
    fn vacuum_for_zero_alpha() {
        let b = Arc::new(FockBasis::enumerate(2, 4).unwrap());
        let psi = coherent_initial_state(&CoherentParams::uniform(2, 0.0).unwrap(), b, 1e-12).unwrap();
        assert_eq!(psi.amplitudes()[0], Complex64::new(1.0, 0.0));
        assert!(psi.amplitudes()[1..].iter().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn coherent_amplitudes_and_tail() {
        let b = Arc::new(FockBasis::enumerate(1, 8).unwrap());
        let c = CoherentParams::uniform(1, 0.5).unwrap();
        let tail = coherent_tail_mass(&c, &b);
        // independent oracle: 1 - sum_{n<=8} e^-l l^n / n!
        let lambda: f64 = 0.25;
        let mut fact = 1.0;
        let mut inside = 0.0;
        for n in 0..=8 {
            if n > 0 {
                fact *= n as f64;
            }
            inside += (-lambda).exp() * lambda.powi(n) / fact;
        }
        assert!(tail < 1e-10);
        assert!((tail - (1.0 - inside)).abs() < 1e-15);
        let psi = coherent_initial_state(&c, b.clone(), 1e-9).unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-15);
        let mut fact = 1.0;
        for n in 0..=8usize {
            if n > 0 {
                fact *= n as f64;
            }
            let expected = (-0.125f64).exp() * 0.5f64.powi(n as i32) / fact.sqrt() / (1.0 - tail).sqrt();
            assert!((psi.amplitudes()[n].re - expected).abs() < 1e-15);
        }
        let d = probabilities(&psi);
        let poisson_ratio = d.probs()[1] / d.probs()[0];
        assert!((poisson_ratio - 0.25).abs() < 1e-14);
    }

    #[test]
    fn tail_mass_gate() {
        let b = Arc::new(FockBasis::enumerate(3, 1).unwrap());
        let c = CoherentParams::uniform(3, 0.5).unwrap();
        assert!(matches!(coherent_initial_state(&c, b, 1e-3), Err(EvolveError::TailMass { .. })));
    }

    #[test]
    fn initial_energy_is_near_zero() {
        let (b, hi, _) = ops_for("x - 6", 1, 24);
        let psi = coherent_initial_state(&CoherentParams::uniform(1, 0.5).unwrap(), b, 1e-12).unwrap();
        assert!(psi.expectation(&hi).abs() < 1e-12);
    }

    #[test]
    fn static_diagonal_only_changes_phases() {
        let (b, _, hp) = ops_for("x - 3", 1, 6);
        let psi0 = coherent_initial_state(&CoherentParams::uniform(1, 0.5).unwrap(), b, 1e-3).unwrap();
        let sched = Schedule::uniform(2.0, Ramp::Linear, 2).unwrap();
        for prop in [Propagator::Krylov, Propagator::Spectral, Propagator::Split] {
            let opts = EvolveOptions { propagator: prop, conv_tol: None, min_steps: 10, ..Default::default() };
            let (psi, _) = evolve_fixed(&hp, &hp, &sched, &psi0, 10, false, &opts).unwrap();
            for (i, (a, b)) in psi0.amplitudes().iter().zip(psi.amplitudes()).enumerate() {
                let expected = a * Complex64::from_polar(1.0, -hp.get(i, i) * 2.0);
                assert!((expected - b).norm() < 1e-11, "{prop:?} {i}");
            }
        }
    }

    #[test]
    fn propagators_agree() {
        let (b, hi, hp) = ops_for("x*y - 2", 2, 5);
        let psi0 = coherent_initial_state(&CoherentParams::uniform(2, 0.5).unwrap(), b, 0.05).unwrap();
        let sched = Schedule::uniform(3.0, Ramp::Linear, 2).unwrap();
        let kry = EvolveOptions { propagator: Propagator::Krylov, ..Default::default() };
        let spe = EvolveOptions { propagator: Propagator::Spectral, ..Default::default() };
        let (a, _) = evolve_fixed(&hi, &hp, &sched, &psi0, 200, false, &kry).unwrap();
        let (c, _) = evolve_fixed(&hi, &hp, &sched, &psi0, 200, false, &spe).unwrap();
        let err = a.amplitudes().iter().zip(c.amplitudes()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn splitting_converges_to_midpoint_exponential() {
        let (b, hi, hp) = ops_for("x*y - 2", 2, 5);
        let psi0 = coherent_initial_state(&CoherentParams::uniform(2, 0.5).unwrap(), b, 0.05).unwrap();
        let sched = Schedule::uniform(3.0, Ramp::Linear, 2).unwrap();
        let spe = EvolveOptions { propagator: Propagator::Spectral, ..Default::default() };
        let spl = EvolveOptions { propagator: Propagator::Split, ..Default::default() };
        let (exact, _) = evolve_fixed(&hi, &hp, &sched, &psi0, 4000, false, &spe).unwrap();
        let mut prev = f64::INFINITY;
        for steps in [500, 1000, 2000] {
            let (psi, rep) = evolve_fixed(&hi, &hp, &sched, &psi0, steps, false, &spl).unwrap();
            assert_eq!(rep.propagator, Propagator::Split);
            let err = probabilities(&psi).probs().iter().zip(probabilities(&exact).probs()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < prev / 3.0, "{steps}: {err} vs {prev}");
            prev = err;
        }
        assert!(prev < 1e-5, "{prev}");
    }

    #[test]
    fn forward_then_backward_returns() {
        let (b, hi, hp) = ops_for("x - 6", 1, 12);
        let psi0 = coherent_initial_state(&CoherentParams::uniform(1, 0.5).unwrap(), b, 1e-6).unwrap();
        let sched = Schedule::uniform(5.0, Ramp::Linear, 2).unwrap();
        let opts = EvolveOptions { step_tol: 1e-11, ..Default::default() };
        let (fwd, _) = evolve_fixed(&hi, &hp, &sched, &psi0, 300, false, &opts).unwrap();
        let (back, _) = evolve_fixed(&hi, &hp, &sched, &fwd, 300, true, &opts).unwrap();
        let err = back.amplitudes().iter().zip(psi0.amplitudes()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 10.0 * 1e-9, "{err}");
    }

    #[test]
    fn sudden_limit_keeps_distribution() {
        let (b, hi, hp) = ops_for("x - 6", 1, 24);
        let psi0 = coherent_initial_state(&CoherentParams::uniform(1, 0.5).unwrap(), b, 1e-12).unwrap();
        let sched = Schedule::uniform(1e-4, Ramp::Linear, 2).unwrap();
        let (psi, _) = evolve(&hi, &hp, &sched, &psi0, &EvolveOptions::default()).unwrap();
        let (p0, p1) = (probabilities(&psi0), probabilities(&psi));
        let diff = p0.probs().iter().zip(p1.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn basis_state_gives_indicator() {
        let b = Arc::new(FockBasis::enumerate(2, 3).unwrap());
        let d = probabilities(&QuantumState::basis_state(b.clone(), 4));
        assert_eq!(d.probs()[4], 1.0);
        assert_eq!(d.probs().iter().sum::<f64>(), 1.0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![Complex64::new(0.0, 0.0); b.len()];
        amps[1] = Complex64::new(r, 0.0);
        amps[2] = Complex64::new(0.0, r);
        let d = probabilities(&QuantumState::new(b, amps, 0.0).unwrap());
        assert!((d.probs()[1] - 0.5).abs() < 1e-15 && (d.probs()[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn distribution_exports() {
        let b = Arc::new(FockBasis::enumerate(2, 1).unwrap());
        let d = Distribution::new(b, vec![0.5, 0.25, 0.25], DistributionSource::TruncatedModel, None).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("state,n_1,n_2,probability\n\"|0,0>\",0,0,"));
        let json = serde_json::to_value(d.export()).unwrap();
        assert_eq!(json["source"], "truncated_model");
        assert!(Distribution::new(d.basis().clone(), vec![0.5, -0.1, 0.6], DistributionSource::TruncatedModel, None).is_err());
    }
}
