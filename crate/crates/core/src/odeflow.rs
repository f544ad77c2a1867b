//! Eigenvalues and eigenvectors of `H(s) = H_I + f(s) W` carried from `s = 0`
//! towards `s = 1` by integrating their flow equations
//!
//! ```text
//! dE_q/ds   = f'(s) <E_q|W|E_q>
//! d|E_q>/ds = f'(s) sum_{l != q} <E_l|W|E_q> / (E_q - E_l) |E_l>
//! ```
//!
//! With [`LevelCoupling::Tracked`] the sum runs over the `m` tracked levels
//! only. The tracked vectors then never leave their initial span, so
//! [`LevelCoupling::Complete`] (the default) adds the untracked remainder of
//! the sum through the reduced resolvent `Q (E_q - H)^{-1} Q W |E_q>`, with `Q`
//! projecting out the tracked span.
//!
//! Integration is classical RK4 with step-doubling error control, followed by
//! Gram-Schmidt re-orthonormalization of the tracked vectors after every
//! accepted step. Every `check_every` accepted steps each energy is compared
//! with the nearest eigenvalue of a direct diagonalization. The run stops at `s = 1 - s_margin`; `E_0(1)`
//! is extrapolated from the three checkpoints `1 - 4 mu`, `1 - 2 mu`, `1 - mu`.
//!
//! When `H_I` and `H_P` are both invariant under a mode swap, the flow runs in
//! the symmetric sector, which holds the ground state of `H_I`. Levels of the
//! other sector may cross the tracked ones freely without entering the
//! equations.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::ops::{commutator_norm, deformation, format_sig17, OperatorMatrix, OpsError, Ramp};
use crate::spectral::{detect_mode_swap, SpectralError};
use crate::fock::FockBasis;

#[derive(Debug, thiserror::Error)]
pub enum OdeFlowError {
    #[error("levels {lower} and {upper} are {gap:e} apart at s = {s}, below the gap floor {floor:e}")]
    Degenerate { s: f64, lower: usize, upper: usize, gap: f64, floor: f64 },
    #[error("integrated and directly diagonalized energies differ by {diff:e} (relative) at s = {s}, above {tol:e}")]
    Drift { s: f64, diff: f64, tol: f64 },
    #[error("H_I and H_P commute (commutator norm {0:e}); the flow is trivial")]
    Commuting(f64),
    #[error("step size underflow at s = {0}")]
    StepUnderflow(f64),
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
    #[error("{requested} levels requested but the flow space has dimension {dim}")]
    TooFewStates { requested: usize, dim: usize },
    #[error("s margin {0} must lie in (0, 0.25)")]
    Margin(f64),
    #[error("reduced resolvent solve failed at s = {0}")]
    Resolvent(f64),
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LevelCoupling {
    /// Sum over the tracked levels only.
    Tracked,
    /// Tracked levels plus the reduced resolvent of the rest.
    #[default]
    Complete,
}

impl std::str::FromStr for LevelCoupling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tracked" => Ok(LevelCoupling::Tracked),
            "complete" => Ok(LevelCoupling::Complete),
            other => Err(format!("unknown coupling '{other}' (expected tracked|complete)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeFlowOptions {
    pub levels: usize,
    pub s_margin: f64,
    /// Local error allowed per accepted step.
    pub local_tol: f64,
    pub drift_tol: f64,
    pub check_every: usize,
    pub gap_floor: f64,
    pub coupling: LevelCoupling,
    pub use_symmetry: bool,
    pub initial_step: f64,
    pub max_steps: usize,
    /// Commutator norms at or below this count as commuting.
    pub commutator_tol: f64,
    /// Smallest separation of the tracked levels (and of the first untracked
    /// one) accepted as a starting point.
    pub start_gap: f64,
}

impl Default for OdeFlowOptions {
    fn default() -> Self {
        Self {
            levels: 8,
            s_margin: 1e-3,
            local_tol: 1e-8,
            drift_tol: 1e-6,
            check_every: 10,
            gap_floor: 1e-8,
            coupling: LevelCoupling::Complete,
            use_symmetry: true,
            initial_step: 1e-3,
            max_steps: 1_000_000,
            commutator_tol: 1e-12,
            start_gap: 1e-4,
        }
    }
}

/// Tracked eigenpairs at one value of `s`, in the full basis.
#[derive(Debug, Clone)]
pub struct OdeFlowState {
    pub s: f64,
    pub energies: Vec<f64>,
    /// Column `q` is `|E_q(s)>`.
    pub vectors: Mat<f64>,
    /// `W = H_P - H_I`.
    pub w: OperatorMatrix,
    pub ramp_derivative: f64,
}

#[derive(Debug, Clone)]
pub struct FlowDerivatives {
    pub energies: Vec<f64>,
    pub vectors: Mat<f64>,
}

/// Right-hand side of the flow equations, with the sum over `l` restricted to
/// the tracked levels.
pub fn flow_derivatives(st: &OdeFlowState, gap_floor: f64) -> Result<FlowDerivatives, OdeFlowError> {
    let m = st.energies.len();
    check_gaps(&st.energies, st.s, gap_floor)?;
    let n = st.w.dim();
    let mut wv = Mat::<f64>::zeros(n, m);
    let mut col = vec![0.0; n];
    let mut out = vec![0.0; n];
    for q in 0..m {
        col.iter_mut().enumerate().for_each(|(i, c)| *c = st.vectors[(i, q)]);
        st.w.apply(&col, &mut out);
        out.iter().enumerate().for_each(|(i, &v)| wv[(i, q)] = v);
    }
    let coupling = st.vectors.transpose() * &wv;
    let fp = st.ramp_derivative;
    let energies = (0..m).map(|q| fp * coupling[(q, q)]).collect();
    let mut vectors = Mat::<f64>::zeros(n, m);
    for q in 0..m {
        for l in (0..m).filter(|&l| l != q) {
            let c = fp * coupling[(l, q)] / (st.energies[q] - st.energies[l]);
            for i in 0..n {
                vectors[(i, q)] += c * st.vectors[(i, l)];
            }
        }
    }
    Ok(FlowDerivatives { energies, vectors })
}

fn check_gaps(energies: &[f64], s: f64, floor: f64) -> Result<f64, OdeFlowError> {
    let mut min_gap = f64::INFINITY;
    for q in 1..energies.len() {
        let gap = energies[q] - energies[q - 1];
        if gap.abs() < floor {
            return Err(OdeFlowError::Degenerate { s, lower: q - 1, upper: q, gap: gap.abs(), floor });
        }
        min_gap = min_gap.min(gap.abs());
    }
    Ok(min_gap)
}

/// Orthonormal columns spanning the states symmetric under `perm`.
fn symmetric_sector(perm: &[usize]) -> Mat<f64> {
    let n = perm.len();
    let orbits: Vec<usize> = (0..n).filter(|&i| perm[i] >= i).collect();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut b = Mat::<f64>::zeros(n, orbits.len());
    for (c, &i) in orbits.iter().enumerate() {
        if perm[i] == i {
            b[(i, c)] = 1.0;
        } else {
            b[(i, c)] = r;
            b[(perm[i], c)] = r;
        }
    }
    b
}

fn sorted_eigen(h: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>), OdeFlowError> {
    let e = h.self_adjoint_eigen(Side::Lower).map_err(|e| SpectralError::Solver(format!("{e:?}")))?;
    let n = h.nrows();
    let values = (0..n).map(|i| e.S()[i]).collect();
    let u = e.U();
    Ok((values, Mat::from_fn(n, n, |i, j| u[(i, j)])))
}

/// Dense operators of the flow, restricted to the symmetric sector when one
/// is used.
pub struct FlowSystem {
    hi: Mat<f64>,
    w: Mat<f64>,
    full_w: OperatorMatrix,
    ramp: Ramp,
    sector: Option<Mat<f64>>,
    swapped_modes: Option<(usize, usize)>,
}

impl FlowSystem {
    pub fn new(hi: &OperatorMatrix, hp: &OperatorMatrix, ramp: Ramp, basis: &FockBasis, use_symmetry: bool) -> Result<Self, OdeFlowError> {
        let full_w = deformation(hi, hp)?;
        let swap = if use_symmetry { detect_mode_swap(basis, &[hi, hp]) } else { None };
        let (hi_d, w_d) = (hi.to_dense(), full_w.to_dense());
        let (sector, swapped_modes, hi_r, w_r) = match swap {
            Some((modes, perm)) => {
                let b = symmetric_sector(&perm);
                let hi_r = b.transpose() * &hi_d * &b;
                let w_r = b.transpose() * &w_d * &b;
                (Some(b), Some(modes), hi_r, w_r)
            }
            None => (None, None, hi_d, w_d),
        };
        Ok(Self { hi: hi_r, w: w_r, full_w, ramp, sector, swapped_modes })
    }

    /// Dimension of the space the flow runs in.
    pub fn dim(&self) -> usize {
        self.hi.nrows()
    }

    pub fn swapped_modes(&self) -> Option<(usize, usize)> {
        self.swapped_modes
    }

    fn hamiltonian(&self, s: f64) -> Mat<f64> {
        let f = self.ramp.value(s);
        Mat::from_fn(self.dim(), self.dim(), |i, j| self.hi[(i, j)] + f * self.w[(i, j)])
    }

    /// Lowest `m` eigenpairs of `H(s)` by direct diagonalization.
    pub fn lowest(&self, s: f64, m: usize) -> Result<(Vec<f64>, Mat<f64>), OdeFlowError> {
        let (values, vectors) = sorted_eigen(&self.hamiltonian(s))?;
        let n = self.dim();
        Ok((values[..m].to_vec(), Mat::from_fn(n, m, |i, j| vectors[(i, j)])))
    }

    fn to_full(&self, v: &Mat<f64>) -> Mat<f64> {
        match &self.sector {
            Some(b) => b * v,
            None => v.clone(),
        }
    }

    /// Flow right-hand side in the working space.
    pub fn derivatives(
        &self,
        s: f64,
        energies: &[f64],
        vectors: &Mat<f64>,
        coupling: LevelCoupling,
        gap_floor: f64,
    ) -> Result<FlowDerivatives, OdeFlowError> {
        let m = energies.len();
        let n = self.dim();
        check_gaps(energies, s, gap_floor)?;
        let fp = self.ramp.derivative(s);
        let wv = &self.w * vectors;
        let g = vectors.transpose() * &wv;
        let d_energies = (0..m).map(|q| fp * g[(q, q)]).collect();
        let mut dv = Mat::<f64>::zeros(n, m);
        for q in 0..m {
            for l in (0..m).filter(|&l| l != q) {
                let c = fp * g[(l, q)] / (energies[q] - energies[l]);
                for i in 0..n {
                    dv[(i, q)] += c * vectors[(i, l)];
                }
            }
        }
        if coupling == LevelCoupling::Complete && m < n {
            // Q = I - V V^T
            let proj = vectors * vectors.transpose();
            let h = self.hamiltonian(s);
            let qhq = {
                let hq = &h - &h * &proj;
                &hq - &proj * &hq
            };
            for q in 0..m {
                // [Q (E_q - H) Q + P] x = Q W v_q has its solution in range(Q)
                let a = Mat::from_fn(n, n, |i, j| {
                    let id = if i == j { 1.0 } else { 0.0 };
                    energies[q] * (id - proj[(i, j)]) - qhq[(i, j)] + proj[(i, j)]
                });
                let rhs = Mat::from_fn(n, 1, |i, _| wv[(i, q)] - (0..n).map(|k| proj[(i, k)] * wv[(k, q)]).sum::<f64>());
                let x = a.partial_piv_lu().solve(&rhs);
                for i in 0..n {
                    let v = x[(i, 0)];
                    if !v.is_finite() {
                        return Err(OdeFlowError::Resolvent(s));
                    }
                    dv[(i, q)] += fp * v;
                }
            }
        }
        Ok(FlowDerivatives { energies: d_energies, vectors: dv })
    }
}

fn orthonormalize(v: &mut Mat<f64>) {
    let (n, m) = (v.nrows(), v.ncols());
    for _ in 0..2 {
        for q in 0..m {
            for p in 0..q {
                let c: f64 = (0..n).map(|i| v[(i, p)] * v[(i, q)]).sum();
                for i in 0..n {
                    let x = v[(i, p)];
                    v[(i, q)] -= c * x;
                }
            }
            let norm = (0..n).map(|i| v[(i, q)] * v[(i, q)]).sum::<f64>().sqrt();
            for i in 0..n {
                v[(i, q)] /= norm;
            }
        }
    }
}

/// `max |<E_q|E_l> - delta_ql|`.
pub fn orthonormality_defect(v: &Mat<f64>) -> f64 {
    let g = v.transpose() * v;
    let m = v.ncols();
    let mut worst = 0.0f64;
    for q in 0..m {
        for l in 0..m {
            let target = if q == l { 1.0 } else { 0.0 };
            worst = worst.max((g[(q, l)] - target).abs());
        }
    }
    worst
}

/// Largest `|a_q - b_q| / max(|b_q|, 1)`.
/// Nearest eigenvalue in `spectrum` (ascending) for each of `energies`.
fn nearest_eigenvalues(energies: &[f64], spectrum: &[f64]) -> Vec<f64> {
    energies
        .iter()
        .map(|&e| {
            let k = spectrum.partition_point(|&x| x < e);
            let below = k.checked_sub(1).map(|i| spectrum[i]);
            let above = spectrum.get(k).copied();
            match (below, above) {
                (Some(b), Some(a)) => if e - b <= a - e { b } else { a },
                (Some(b), None) => b,
                (None, Some(a)) => a,
                (None, None) => f64::NAN,
            }
        })
        .collect()
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub s: f64,
    pub energies: Vec<f64>,
    pub min_gap: f64,
    pub orthonormality_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub s: f64,
    pub integrated: Vec<f64>,
    /// Nearest eigenvalue of a direct solve to each integrated one.
    pub direct: Vec<f64>,
    pub relative_diff: f64,
}

#[derive(Debug, Clone)]
pub struct OdeFlowResult {
    pub final_state: OdeFlowState,
    /// Where integration began: 0 unless tracked levels of `H_I` coincide.
    pub start_s: f64,
    pub trajectory: Vec<TrajectoryPoint>,
    pub checks: Vec<CrossCheck>,
    /// `(s, E_0)` at `1 - 4 mu`, `1 - 2 mu`, `1 - mu`.
    pub checkpoints: Vec<(f64, f64)>,
    /// Quadratic extrapolation of `E_0` to `s = 1`.
    pub extrapolated_e0: f64,
    /// Distance between the quadratic and linear extrapolations.
    pub extrapolation_error: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub swapped_modes: Option<(usize, usize)>,
    pub coupling: LevelCoupling,
}

impl OdeFlowResult {
    /// `s, E_0..E_{m-1}, min_gap, orthonormality_defect`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), OdeFlowError> {
        let mut out = csv::Writer::from_writer(w);
        let m = self.final_state.energies.len();
        let mut header = vec!["s".to_string()];
        header.extend((0..m).map(|q| format!("E_{q}")));
        header.push("min_gap".into());
        header.push("orthonormality_defect".into());
        out.write_record(&header)?;
        for p in &self.trajectory {
            let mut row = vec![format_sig17(p.s)];
            row.extend(p.energies.iter().map(|&e| format_sig17(e)));
            row.push(format_sig17(p.min_gap));
            row.push(format_sig17(p.orthonormality_defect));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn max_check_diff(&self) -> f64 {
        self.checks.iter().map(|c| c.relative_diff).fold(0.0, f64::max)
    }
}

struct Point {
    energies: Vec<f64>,
    vectors: Mat<f64>,
}

impl Point {
    fn shifted(&self, h: f64, d: &FlowDerivatives) -> Point {
        Point {
            energies: self.energies.iter().zip(&d.energies).map(|(e, de)| e + h * de).collect(),
            vectors: Mat::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| self.vectors[(i, j)] + h * d.vectors[(i, j)]),
        }
    }

    fn distance(&self, other: &Point) -> f64 {
        let de = self.energies.iter().zip(&other.energies).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let mut dv = 0.0f64;
        for j in 0..self.vectors.ncols() {
            for i in 0..self.vectors.nrows() {
                dv = dv.max((self.vectors[(i, j)] - other.vectors[(i, j)]).abs());
            }
        }
        de.max(dv)
    }
}

struct Stepper<'a> {
    sys: &'a FlowSystem,
    coupling: LevelCoupling,
    gap_floor: f64,
}

impl Stepper<'_> {
    fn rhs(&self, s: f64, p: &Point) -> Result<FlowDerivatives, OdeFlowError> {
        self.sys.derivatives(s, &p.energies, &p.vectors, self.coupling, self.gap_floor)
    }

    fn rk4(&self, s: f64, p: &Point, h: f64) -> Result<Point, OdeFlowError> {
        let k1 = self.rhs(s, p)?;
        let k2 = self.rhs(s + h / 2.0, &p.shifted(h / 2.0, &k1))?;
        let k3 = self.rhs(s + h / 2.0, &p.shifted(h / 2.0, &k2))?;
        let k4 = self.rhs(s + h, &p.shifted(h, &k3))?;
        let combine = |a: f64, b: f64, c: f64, d: f64| (a + 2.0 * b + 2.0 * c + d) / 6.0;
        Ok(Point {
            energies: (0..p.energies.len())
                .map(|q| p.energies[q] + h * combine(k1.energies[q], k2.energies[q], k3.energies[q], k4.energies[q]))
                .collect(),
            vectors: Mat::from_fn(p.vectors.nrows(), p.vectors.ncols(), |i, j| {
                p.vectors[(i, j)] + h * combine(k1.vectors[(i, j)], k2.vectors[(i, j)], k3.vectors[(i, j)], k4.vectors[(i, j)])
            }),
        })
    }
}

/// Reorders levels ascending, permuting vectors along.
fn sort_levels(p: &mut Point) {
    let m = p.energies.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p.energies[a].total_cmp(&p.energies[b]));
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return;
    }
    p.energies = order.iter().map(|&o| p.energies[o]).collect();
    p.vectors = Mat::from_fn(p.vectors.nrows(), m, |i, j| p.vectors[(i, order[j])]);
}

/// Integrates the flow of the lowest `opts.levels` levels from `s = 0` to
/// `s = 1 - opts.s_margin`.
pub fn integrate_flow(
    hi: &OperatorMatrix,
    hp: &OperatorMatrix,
    ramp: Ramp,
    basis: &FockBasis,
    opts: &OdeFlowOptions,
) -> Result<OdeFlowResult, OdeFlowError> {
    if !(opts.s_margin > 0.0 && opts.s_margin < 0.25) {
        return Err(OdeFlowError::Margin(opts.s_margin));
    }
    let comm = commutator_norm(hi, hp)?;
    if comm <= opts.commutator_tol {
        return Err(OdeFlowError::Commuting(comm));
    }
    let sys = FlowSystem::new(hi, hp, ramp, basis, opts.use_symmetry)?;
    let m = opts.levels;
    if m == 0 || m > sys.dim() {
        return Err(OdeFlowError::TooFewStates { requested: m, dim: sys.dim() });
    }
    let stepper = Stepper { sys: &sys, coupling: opts.coupling, gap_floor: opts.gap_floor };
    let (start_s, mut point) = starting_point(&sys, m, opts)?;

    let mu = opts.s_margin;
    let marks = [1.0 - 4.0 * mu, 1.0 - 2.0 * mu, 1.0 - mu];
    let mut next_mark = 0;
    let mut s = start_s;
    let mut h = if start_s > 0.0 { opts.initial_step.min(start_s) } else { opts.initial_step };
    let mut trajectory = vec![record(s, &point)?];
    let mut checks = Vec::new();
    let mut checkpoints = Vec::new();
    let (mut accepted, mut rejected) = (0usize, 0usize);

    while next_mark < marks.len() {
        if accepted + rejected >= opts.max_steps {
            return Err(OdeFlowError::TooManySteps(opts.max_steps));
        }
        let target = marks[next_mark];
        let step = h.min(target - s);
        let attempt = (|| -> Result<(Point, f64), OdeFlowError> {
            let coarse = stepper.rk4(s, &point, step)?;
            let half = stepper.rk4(s, &point, step / 2.0)?;
            let fine = stepper.rk4(s + step / 2.0, &half, step / 2.0)?;
            let err = fine.distance(&coarse) / 15.0;
            Ok((fine, err))
        })();
        let (mut fine, err) = match attempt {
            Ok(v) => v,
            // a sub-stage may step past a near-degeneracy the accepted path avoids
            Err(OdeFlowError::Degenerate { .. } | OdeFlowError::Resolvent(_)) if step > 1e-14 => {
                rejected += 1;
                h = step / 4.0;
                continue;
            }
            Err(e) => return Err(e),
        };
        if err > opts.local_tol {
            rejected += 1;
            h = step * (0.9 * (opts.local_tol / err).powf(0.2)).max(0.1);
            if h < 1e-14 {
                return Err(OdeFlowError::StepUnderflow(s));
            }
            continue;
        }
        orthonormalize(&mut fine.vectors);
        sort_levels(&mut fine);
        let landed = step == target - s;
        s = if landed { target } else { s + step };
        point = fine;
        accepted += 1;
        trajectory.push(record(s, &point)?);
        let grow = if err > 0.0 { (0.9 * (opts.local_tol / err).powf(0.2)).min(4.0) } else { 4.0 };
        h = step * grow.max(0.2);
        if landed {
            checkpoints.push((s, point.energies[0]));
            next_mark += 1;
        }
        if accepted % opts.check_every == 0 || next_mark == marks.len() {
            // Tracked curves stay eigenvalues but can leave the lowest m
            // when they cross levels they do not couple to.
            let (spectrum, _) = sys.lowest(s, sys.dim())?;
            let direct = nearest_eigenvalues(&point.energies, &spectrum);
            let diff = relative_gap(&point.energies, &direct);
            checks.push(CrossCheck { s, integrated: point.energies.clone(), direct, relative_diff: diff });
            if diff > opts.drift_tol {
                return Err(OdeFlowError::Drift { s, diff, tol: opts.drift_tol });
            }
        }
    }

    let (e4, e2, e1) = (checkpoints[0].1, checkpoints[1].1, checkpoints[2].1);
    let quadratic = (8.0 * e1 - 6.0 * e2 + e4) / 3.0;
    let linear = 2.0 * e1 - e2;
    let final_state = OdeFlowState {
        s,
        energies: point.energies.clone(),
        vectors: sys.to_full(&point.vectors),
        w: sys.full_w.clone(),
        ramp_derivative: ramp.derivative(s),
    };
    Ok(OdeFlowResult {
        final_state,
        start_s,
        trajectory,
        checks,
        checkpoints,
        extrapolated_e0: quadratic,
        extrapolation_error: (quadratic - linear).abs(),
        accepted_steps: accepted,
        rejected_steps: rejected,
        swapped_modes: sys.swapped_modes(),
        coupling: opts.coupling,
    })
}

/// Lowest `m` eigenpairs at the first `s` in `0, 1e-6, 2e-6, 4e-6, ...` where
/// levels `0..=m` are at least `start_gap` apart. The ground level itself
/// must already be separated at `s = 0`.
fn starting_point(sys: &FlowSystem, m: usize, opts: &OdeFlowOptions) -> Result<(f64, Point), OdeFlowError> {
    let probe = (m + 1).min(sys.dim());
    let (e0, _) = sys.lowest(0.0, probe)?;
    if probe > 1 && e0[1] - e0[0] < opts.gap_floor {
        return Err(OdeFlowError::Degenerate { s: 0.0, lower: 0, upper: 1, gap: e0[1] - e0[0], floor: opts.gap_floor });
    }
    let mut s = 0.0;
    loop {
        let (energies, vectors) = sys.lowest(s, probe)?;
        let min_gap = energies.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if min_gap >= opts.start_gap {
            let vectors = Mat::from_fn(vectors.nrows(), m, |i, j| vectors[(i, j)]);
            return Ok((s, Point { energies: energies[..m].to_vec(), vectors }));
        }
        s = if s == 0.0 { 1e-6 } else { 2.0 * s };
        if s > 0.25 {
            let at = energies.windows(2).position(|w| w[1] - w[0] < opts.start_gap).unwrap_or(0);
            return Err(OdeFlowError::Degenerate { s, lower: at, upper: at + 1, gap: min_gap, floor: opts.start_gap });
        }
    }
}

fn record(s: f64, p: &Point) -> Result<TrajectoryPoint, OdeFlowError> {
    let min_gap = if p.energies.len() > 1 { check_gaps(&p.energies, s, 0.0)? } else { f64::INFINITY };
    Ok(TrajectoryPoint { s, energies: p.energies.clone(), min_gap, orthonormality_defect: orthonormality_defect(&p.vectors) })
}

/// Effect of doubling the number of tracked levels on the terminal and
/// extrapolated ground energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelConvergence {
    pub levels: usize,
    pub doubled_levels: usize,
    pub terminal_e0_change: f64,
    pub extrapolated_e0_change: f64,
}

pub fn level_convergence(
    hi: &OperatorMatrix,
    hp: &OperatorMatrix,
    ramp: Ramp,
    basis: &FockBasis,
    opts: &OdeFlowOptions,
) -> Result<LevelConvergence, OdeFlowError> {
    let base = integrate_flow(hi, hp, ramp, basis, opts)?;
    let dim = FlowSystem::new(hi, hp, ramp, basis, opts.use_symmetry)?.dim();
    let doubled = (2 * opts.levels).min(dim);
    let wide = integrate_flow(hi, hp, ramp, basis, &OdeFlowOptions { levels: doubled, ..opts.clone() })?;
    Ok(LevelConvergence {
        levels: opts.levels,
        doubled_levels: doubled,
        terminal_e0_change: (base.final_state.energies[0] - wide.final_state.energies[0]).abs(),
        extrapolated_e0_change: (base.extrapolated_e0 - wide.extrapolated_e0).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::FockBasis;
    use crate::ops::{build_hi, build_hp, CoherentParams};
    use crate::poly::parse_equation;

    fn ops_for(eq: &str, k: usize, cutoff: u32) -> (FockBasis, OperatorMatrix, OperatorMatrix) {
        let b = FockBasis::enumerate(k, cutoff).unwrap();
        let p = parse_equation(eq, &Default::default()).unwrap();
        let hp = build_hp(&p, &b).unwrap().matrix().clone();
        let hi = build_hi(&CoherentParams::uniform(k, 0.5).unwrap(), &b).unwrap();
        (b, hi, hp)
    }

    fn two_level(b: &FockBasis, w: f64) -> (OperatorMatrix, OperatorMatrix) {
        let hi = OperatorMatrix::diagonal_matrix(b.meta(), &[0.0, 1.0]);
        let hp = OperatorMatrix::from_rows(b.meta(), vec![vec![(0, 0.0), (1, w)], vec![(0, w), (1, 1.0)]]);
        (hi, hp)
    }

    #[test]
    fn no_deformation_no_motion() {
        let (b, hi, _) = ops_for("x - 2", 1, 6);
        let w = deformation(&hi, &hi).unwrap();
        let sys = FlowSystem::new(&hi, &hi, Ramp::Linear, &b, false).unwrap();
        let (e, v) = sys.lowest(0.0, 3).unwrap();
        let st = OdeFlowState { s: 0.2, energies: e.clone(), vectors: v.clone(), w, ramp_derivative: 1.0 };
        let d = flow_derivatives(&st, 1e-8).unwrap();
        assert!(d.energies.iter().all(|x| x.abs() < 1e-12));
        let full = sys.derivatives(0.2, &e, &v, LevelCoupling::Complete, 1e-8).unwrap();
        assert!(full.energies.iter().all(|x| x.abs() < 1e-12));
        assert!(full.vectors.col_iter().all(|c| c.iter().all(|x| x.abs() < 1e-12)));
    }

    #[test]
    fn two_level_closed_form() {
        // H(s) = [[0, s w], [s w, 1]]: E = (1 -+ sqrt(1 + 4 s^2 w^2)) / 2
        let w = 0.7;
        let b = FockBasis::enumerate(1, 1).unwrap();
        let (hi, hp) = two_level(&b, w);
        let sys = FlowSystem::new(&hi, &hp, Ramp::Linear, &b, false).unwrap();
        for s in [0.1, 0.4, 0.8] {
            let (e, v) = sys.lowest(s, 2).unwrap();
            let d = sys.derivatives(s, &e, &v, LevelCoupling::Tracked, 1e-8).unwrap();
            let root = (1.0 + 4.0 * s * s * w * w).sqrt();
            let de = 2.0 * s * w * w / root;
            assert!((d.energies[0] + de).abs() < 1e-12);
            assert!((d.energies[1] - de).abs() < 1e-12);
            // tracked sum is complete for two levels
            let c = sys.derivatives(s, &e, &v, LevelCoupling::Complete, 1e-8).unwrap();
            assert!((0..2).all(|i| (c.vectors[(i, 0)] - d.vectors[(i, 0)]).abs() < 1e-12));
            // vector derivative against central differences of aligned eigenvectors
            let eps = 1e-5;
            let (_, vp) = sys.lowest(s + eps, 2).unwrap();
            let (_, vm) = sys.lowest(s - eps, 2).unwrap();
            for q in 0..2 {
                let align = |u: &Mat<f64>| if (0..2).map(|i| u[(i, q)] * v[(i, q)]).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
                let (sp, sm) = (align(&vp), align(&vm));
                for i in 0..2 {
                    let fd = (sp * vp[(i, q)] - sm * vm[(i, q)]) / (2.0 * eps);
                    assert!((fd - d.vectors[(i, q)]).abs() < 1e-7, "{fd} {}", d.vectors[(i, q)]);
                }
            }
        }
    }

    #[test]
    fn initial_slope_matches_finite_difference() {
        let (b, hi, hp) = ops_for("x - 6", 1, 24);
        let sys = FlowSystem::new(&hi, &hp, Ramp::Linear, &b, false).unwrap();
        let (e, v) = sys.lowest(0.0, 4).unwrap();
        let d = sys.derivatives(0.0, &e, &v, LevelCoupling::Complete, 1e-8).unwrap();
        let h = 1e-4;
        let (ep, _) = sys.lowest(h, 4).unwrap();
        let fd = (ep[0] - e[0]) / h;
        assert!((fd - d.energies[0]).abs() / d.energies[0].abs() < 1e-3, "{fd} vs {}", d.energies[0]);
    }

    #[test]
    fn sparse_and_dense_tracked_sums_agree() {
        let (b, hi, hp) = ops_for("x*y - 2", 2, 4);
        let sys = FlowSystem::new(&hi, &hp, Ramp::Smoothstep, &b, false).unwrap();
        let s = 0.3;
        let (e, v) = sys.lowest(s, 5).unwrap();
        let st = OdeFlowState { s, energies: e.clone(), vectors: v.clone(), w: deformation(&hi, &hp).unwrap(), ramp_derivative: Ramp::Smoothstep.derivative(s) };
        let a = flow_derivatives(&st, 1e-8).unwrap();
        let c = sys.derivatives(s, &e, &v, LevelCoupling::Tracked, 1e-8).unwrap();
        for q in 0..5 {
            assert!((a.energies[q] - c.energies[q]).abs() < 1e-12);
            for i in 0..b.len() {
                assert!((a.vectors[(i, q)] - c.vectors[(i, q)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn degeneracy_rejected() {
        let (b, hi, _) = ops_for("x", 1, 3);
        let hp = OperatorMatrix::diagonal_matrix(b.meta(), &[1.0; 4]);
        let sys = FlowSystem::new(&hi, &hp, Ramp::Linear, &b, false).unwrap();
        let e = vec![1.0, 1.0 + 1e-10];
        let v = Mat::from_fn(4, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        assert!(matches!(sys.derivatives(0.5, &e, &v, LevelCoupling::Tracked, 1e-8), Err(OdeFlowError::Degenerate { .. })));
    }

    #[test]
    fn commuting_pair_rejected() {
        let (b, _, hp) = ops_for("x - 1", 1, 3);
        let other = OperatorMatrix::diagonal_matrix(b.meta(), &[0.0, 1.0, 2.0, 3.0]);
        let err = integrate_flow(&other, &hp, Ramp::Linear, &b, &OdeFlowOptions { levels: 2, ..Default::default() });
        assert!(matches!(err, Err(OdeFlowError::Commuting(_))));
    }

    #[test]
    fn linear_root_flow() {
        let (b, hi, hp) = ops_for("x - 6", 1, 24);
        let res = integrate_flow(&hi, &hp, Ramp::Linear, &b, &OdeFlowOptions::default()).unwrap();
        assert!(res.extrapolated_e0.abs() < 1e-6, "{}", res.extrapolated_e0);
        assert!(res.max_check_diff() < 1e-6);
        assert!(res.trajectory.iter().all(|p| p.orthonormality_defect < 1e-8));
        assert!(res.checks.len() >= 2);
        let mut csv = Vec::new();
        res.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("s,E_0,E_1,E_2,E_3,E_4,E_5,E_6,E_7,min_gap,orthonormality_defect\n"));
    }

    #[test]
    fn tracked_only_stays_in_initial_span() {
        let (b, hi, hp) = ops_for("x - 6", 1, 24);
        let opts = OdeFlowOptions { coupling: LevelCoupling::Tracked, drift_tol: f64::INFINITY, ..Default::default() };
        let res = integrate_flow(&hi, &hp, Ramp::Linear, &b, &opts).unwrap();
        assert!(res.extrapolated_e0 > 1e-3, "{}", res.extrapolated_e0);
    }

    #[test]
    fn fermat_cubic_without_root_stays_positive() {
        let (b, hi, hp) = ops_for("(x+1)^3+(y+1)^3-(z+1)^3", 3, 3);
        let res = integrate_flow(&hi, &hp, Ramp::Linear, &b, &OdeFlowOptions { levels: 4, ..Default::default() }).unwrap();
        // tracked excited levels of H_I coincide at s = 0
        assert!(res.start_s > 0.0 && res.start_s < 1e-2, "{}", res.start_s);
        assert!(res.swapped_modes.is_some());
        assert!((res.extrapolated_e0 - 1.0).abs() < 1e-6, "{}", res.extrapolated_e0);
        assert!(res.max_check_diff() < 1e-6);
    }

    #[test]
    fn tracked_levels_may_cross_uncoupled_ones() {
        // The problem operator depends on x + y only, so the antisymmetric
        // mode occupation is conserved and its blocks cross freely.
        let (basis, hi, hp) = ops_for("3*x + 3*y - 7", 2, 4);
        let opts = OdeFlowOptions { levels: 3, ..Default::default() };
        let res = integrate_flow(&hi, &hp, Ramp::Linear, &basis, &opts).unwrap();
        assert!(res.max_check_diff() < 1e-6);
        assert!(res.extrapolated_e0 > 0.5);
    }
}
