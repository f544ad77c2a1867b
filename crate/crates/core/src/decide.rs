//! Decision loop: a reference simulation at a large truncation stands in for
//! the measuring apparatus, truncated model runs are compared against its
//! histogram, and a candidate minimum is eliminated or confirmed.
//!
//! One call to [`run_decision`] is a sequence of rounds at increasing run time
//! `T`. A round:
//!
//! 1. evolves the reference basis to `T`, samples `L` outcomes and takes the
//!    lowest-energy outcome as the candidate; an exact zero ends the run;
//! 2. sweeps model cutoffs upward, accepting those whose distribution lies
//!    within `epsilon` of the histogram in sup norm, and reads the exact
//!    minimum `E_g'` of `H_P` on each accepted basis; an exact zero ends the
//!    run with that state as witness;
//! 3. once the model covers the reference basis, compares `E_g'` with the
//!    candidate energy `E_c`. A lower model minimum eliminates the candidate;
//!    an equal one triggers the trend test on the candidate's energy level at
//!    `T`, `g T`, `g^2 T` (`g = t_growth`), and a level whose probability
//!    falls by at least `trend_margin` is declared spurious;
//! 4. a surviving candidate with fluctuation `delta < E_c` gives
//!    `no_solution_within_confidence`. Otherwise the next round runs at
//!    `max(t_min, g T)` with `t_min` from the model gap report, capped at
//!    `max_t`.
//!
//! Every `has_solution` witness is re-evaluated in exact integer arithmetic.
//!
//! Evolutions, flows and operators do not depend on the seed, so
//! [`DecisionCache`] reuses them across runs that differ only in the seed.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::evolve::{
    coherent_initial_state, evolve, probabilities, Distribution, EvolveError, EvolveOptions, EvolveReport, Propagator,
    QuantumState,
};
use crate::fock::{basis_size, FockBasis, FockError, Truncation};
use crate::ops::{bigint_to_f64, build_hi, build_hp, CoherentParams, OperatorMatrix, OpsError, ProblemHamiltonian, Ramp, Schedule, DEFAULT_ALPHA};
use crate::poly::{PolyError, Polynomial};
use crate::sampler::{sample_histogram, sup_distance, SamplerError, SamplingPlan};
use crate::spectral::{gap_and_time, ground_multiplicity, spectral_flow, FlowOptions, GapOptions, GapReport, SpectralError};

/// Basis size bound of the default reference cutoff.
pub const DEFAULT_REFERENCE_STATES: usize = 256;
/// Largest default reference cutoff.
pub const DEFAULT_REFERENCE_CUTOFF_CAP: u32 = 32;
/// Number of trailing accepted cutoffs entering the fluctuation estimate.
pub const FLUCTUATION_WINDOW: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum DecideError {
    #[error("invalid decision config: {0}")]
    Config(String),
    #[error("fluctuation estimate needs at least two accepted cutoffs, got {0}")]
    TooFewCutoffs(usize),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub epsilon: f64,
    pub confidence: f64,
    pub seed: u64,
    pub initial_t: f64,
    pub max_t: f64,
    pub t_growth: f64,
    /// `None` picks [`default_reference_cutoff`].
    pub reference_cutoff: Option<u32>,
    pub initial_model_cutoff: u32,
    /// `None` means the reference cutoff.
    pub max_model_cutoff: Option<u32>,
    /// `None` means `DEFAULT_ALPHA` on every mode.
    pub alphas: Option<Vec<f64>>,
    pub ramp: Ramp,
    pub trend_margin: f64,
    pub tail_tol: f64,
    pub gap_grid: usize,
    pub flow_levels: usize,
    pub propagator: Propagator,
    /// Step-halving tolerance of every evolution; `None` means `epsilon / 10`.
    pub conv_tol: Option<f64>,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            confidence: 0.9,
            seed: 0,
            initial_t: 10.0,
            max_t: 1280.0,
            t_growth: 2.0,
            reference_cutoff: None,
            initial_model_cutoff: 1,
            max_model_cutoff: None,
            alphas: None,
            ramp: Ramp::Linear,
            trend_margin: 0.02,
            tail_tol: crate::evolve::DEFAULT_TAIL_TOL,
            gap_grid: 51,
            flow_levels: 8,
            propagator: Propagator::Auto,
            conv_tol: None,
        }
    }
}

impl DecisionConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), DecideError> {
        let bad = |msg: String| Err(DecideError::Config(msg));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon {} outside (0, 1)", self.epsilon));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad(format!("confidence {} outside (0, 1)", self.confidence));
        }
        if !(self.initial_t > 0.0 && self.initial_t.is_finite()) {
            return bad(format!("initial T {} must be positive", self.initial_t));
        }
        if !(self.max_t >= self.initial_t) {
            return bad(format!("max T {} below initial T {}", self.max_t, self.initial_t));
        }
        if !(self.t_growth > 1.0) {
            return bad(format!("T growth {} must exceed 1", self.t_growth));
        }
        if let Some(r) = self.reference_cutoff {
            if r < self.initial_model_cutoff {
                return bad(format!("reference cutoff {r} below initial model cutoff {}", self.initial_model_cutoff));
            }
        }
        if let Some(m) = self.max_model_cutoff {
            if m < self.initial_model_cutoff {
                return bad(format!("max model cutoff {m} below initial model cutoff {}", self.initial_model_cutoff));
            }
        }
        if !(self.trend_margin >= 0.0) {
            return bad("trend margin must be non-negative".into());
        }
        if let Some(tol) = self.conv_tol {
            if !(tol > 0.0) {
                return bad("conv_tol must be positive".into());
            }
        }
        Ok(())
    }

    fn evolve_options(&self) -> EvolveOptions {
        EvolveOptions { propagator: self.propagator, conv_tol: Some(self.conv_tol.unwrap_or(self.epsilon / 10.0)), ..Default::default() }
    }
}

/// Largest total cutoff `N <= DEFAULT_REFERENCE_CUTOFF_CAP` whose basis has at
/// most `max_states` states.
pub fn default_reference_cutoff(num_modes: usize, max_states: usize) -> u32 {
    let mut cutoff = 0;
    while cutoff < DEFAULT_REFERENCE_CUTOFF_CAP {
        if basis_size(num_modes, cutoff + 1, Truncation::Total) > max_states as u128 {
            break;
        }
        cutoff += 1;
    }
    cutoff
}

/// Model cutoffs `start, 2 start + 1, ...` followed by the last
/// [`FLUCTUATION_WINDOW`] consecutive cutoffs up to `cap`.
pub fn model_cutoffs(start: u32, cap: u32) -> Vec<u32> {
    let tail_start = cap.saturating_sub(FLUCTUATION_WINDOW as u32 - 1).max(start);
    let mut out = Vec::new();
    let mut m = start;
    while m < tail_start {
        out.push(m);
        m = (2 * m + 1).max(m + 1);
    }
    out.extend(tail_start..=cap);
    out
}

/// Spread of the model minima plus their floating-point rounding bound.
pub fn fluctuation_estimate(model_minima: &[f64]) -> Result<f64, DecideError> {
    if model_minima.len() < 2 {
        return Err(DecideError::TooFewCutoffs(model_minima.len()));
    }
    let lo = model_minima.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = model_minima.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(hi - lo + hi.abs() * f64::EPSILON)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    HasSolution,
    NoSolutionWithinConfidence,
    Inconclusive,
}

impl Verdict {
    /// Process exit code of the verdict.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::HasSolution => 0,
            Verdict::NoSolutionWithinConfidence => 1,
            Verdict::Inconclusive => 4,
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::HasSolution => "has_solution",
            Verdict::NoSolutionWithinConfidence => "no_solution_within_confidence",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Setup { reference_cutoff: u32, reference_states: usize, model_cutoffs: Vec<u32>, repetitions: u64 },
    ShortCircuit { constant: String },
    ReferenceRun { round: usize, t: f64, cutoff: u32, steps: usize, halving_diff: Option<f64>, propagator: Propagator },
    Histogram { round: usize, seed: u64, repetitions: u64, distinct_outcomes: usize, candidate: Vec<u32>, candidate_energy: String, candidate_count: u64 },
    ModelSkipped { round: usize, cutoff: u32, reason: String },
    ModelRun { round: usize, cutoff: u32, t: f64, states: usize, sup_distance: f64, accepted: bool, model_minimum: String },
    Fluctuation { round: usize, cutoffs: Vec<u32>, model_minima: Vec<f64>, delta: f64 },
    Scenario { round: usize, scenario: u8, model_minimum: String, candidate_energy: String, outcome: String },
    Trend { round: usize, times: Vec<f64>, probabilities: Vec<f64>, spurious: bool },
    Gap { round: usize, gap: Option<f64>, argmin_s: Option<f64>, t_min: Option<f64>, note: Option<String>, next_t: f64 },
    Verdict { verdict: Verdict, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub verdict: Verdict,
    pub witness: Option<Vec<u32>>,
    #[serde(rename = "E_g_estimate")]
    pub e_g_estimate: Option<f64>,
    #[serde(rename = "E_candidate")]
    pub e_candidate: Option<f64>,
    pub delta: Option<f64>,
    pub confidence: f64,
    pub epsilon: f64,
    pub reason: String,
    pub reference_cutoff: u32,
    pub rounds: usize,
    pub final_t: Option<f64>,
    pub trace: Vec<TraceEvent>,
}

impl DecisionReport {
    pub fn write_json<W: Write>(&self, w: W) -> Result<(), DecideError> {
        crate::cli::write_json(w, self)?;
        Ok(())
    }

    /// The trace as JSON lines, one event per line.
    pub fn write_trace_lines<W: Write>(&self, mut w: W) -> Result<(), DecideError> {
        for event in &self.trace {
            crate::cli::write_json_line(&mut w, event)?;
        }
        Ok(())
    }
}

struct CutoffOps {
    basis: Arc<FockBasis>,
    hi: OperatorMatrix,
    hp: ProblemHamiltonian,
    initial: Result<QuantumState, String>,
}

/// Seed-independent intermediate results of one `(polynomial, config)` pair.
#[derive(Default)]
pub struct DecisionCache {
    key: Option<String>,
    ops: HashMap<u32, Arc<CutoffOps>>,
    runs: HashMap<(u32, u64), Arc<(Distribution, EvolveReport)>>,
    gaps: HashMap<u32, Result<GapReport, String>>,
}

impl DecisionCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn bind(&mut self, poly: &Polynomial, cfg: &DecisionConfig) -> Result<(), DecideError> {
        let key = format!("{}|{}", poly.to_canonical_string(), serde_json::to_string(&DecisionConfig { seed: 0, ..cfg.clone() })?);
        if self.key.as_deref() != Some(key.as_str()) {
            *self = Self { key: Some(key), ..Self::default() };
        }
        Ok(())
    }
}

struct Engine<'a> {
    poly: &'a Polynomial,
    cfg: &'a DecisionConfig,
    alphas: CoherentParams,
    opts: EvolveOptions,
    cache: &'a mut DecisionCache,
    trace: Vec<TraceEvent>,
}

impl Engine<'_> {
    fn ops(&mut self, cutoff: u32) -> Result<Arc<CutoffOps>, DecideError> {
        if let Some(o) = self.cache.ops.get(&cutoff) {
            return Ok(o.clone());
        }
        let basis = Arc::new(FockBasis::enumerate(self.poly.num_vars(), cutoff)?);
        let hi = build_hi(&self.alphas, &basis)?;
        let hp = build_hp(self.poly, &basis)?;
        let initial = coherent_initial_state(&self.alphas, basis.clone(), self.cfg.tail_tol).map_err(|e| e.to_string());
        let o = Arc::new(CutoffOps { basis, hi, hp, initial });
        self.cache.ops.insert(cutoff, o.clone());
        Ok(o)
    }

    fn run(&mut self, cutoff: u32, t: f64) -> Result<Arc<(Distribution, EvolveReport)>, DecideError> {
        let key = (cutoff, t.to_bits());
        if let Some(r) = self.cache.runs.get(&key) {
            return Ok(r.clone());
        }
        let o = self.ops(cutoff)?;
        let psi0 = o.initial.as_ref().map_err(|e| DecideError::Config(format!("cutoff {cutoff}: {e}")))?;
        let sched = Schedule::uniform(t, self.cfg.ramp, 2)?;
        let (psi, report) = evolve(&o.hi, o.hp.matrix(), &sched, psi0, &self.opts)?;
        let dist = probabilities(&psi);
        let r = Arc::new((dist, report));
        self.cache.runs.insert(key, r.clone());
        Ok(r)
    }

    fn gap(&mut self, cutoff: u32) -> Result<Result<GapReport, String>, DecideError> {
        if let Some(g) = self.cache.gaps.get(&cutoff) {
            return Ok(g.clone());
        }
        let o = self.ops(cutoff)?;
        let hp = o.hp.matrix();
        let n = o.basis.len();
        let levels = self.cfg.flow_levels.max(ground_multiplicity(hp) + 2).min(n);
        let sched = Schedule::uniform(1.0, self.cfg.ramp, self.cfg.gap_grid)?;
        let flow_opts = FlowOptions { num_levels: levels, ..Default::default() };
        let outcome = match spectral_flow(&o.hi, hp, &sched, &flow_opts) {
            Ok(flow) => match gap_and_time(&flow, &o.hi, hp, &GapOptions::default()) {
                Ok(rep) => Ok(rep),
                Err(e @ SpectralError::GapBelowFloor { .. }) => return Err(e.into()),
                Err(e) => Err(e.to_string()),
            },
            Err(e) => Err(e.to_string()),
        };
        self.cache.gaps.insert(cutoff, outcome.clone());
        Ok(outcome)
    }
}

fn round_seed(seed: u64, round: usize) -> u64 {
    seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `state` if the polynomial vanishes there in exact arithmetic.
fn verified_root(poly: &Polynomial, state: &[u32]) -> Result<Option<Vec<u32>>, DecideError> {
    Ok(poly.evaluate_occupation(state)?.is_zero().then(|| state.to_vec()))
}

struct Outcome {
    verdict: Verdict,
    reason: String,
    witness: Option<Vec<u32>>,
    e_g: Option<BigUint>,
    e_c: Option<BigUint>,
    delta: Option<f64>,
}

impl Outcome {
    fn inconclusive(reason: impl Into<String>) -> Self {
        Self { verdict: Verdict::Inconclusive, reason: reason.into(), witness: None, e_g: None, e_c: None, delta: None }
    }
}

pub fn run_decision(poly: &Polynomial, cfg: &DecisionConfig) -> Result<DecisionReport, DecideError> {
    run_decision_cached(poly, cfg, &mut DecisionCache::new())
}

/// [`run_decision`] reusing seed-independent work stored in `cache`.
pub fn run_decision_cached(poly: &Polynomial, cfg: &DecisionConfig, cache: &mut DecisionCache) -> Result<DecisionReport, DecideError> {
    cfg.validate()?;
    let plan = SamplingPlan::new(cfg.epsilon, cfg.confidence, cfg.seed)?;
    let num_modes = poly.num_vars();
    let reference = cfg.reference_cutoff.unwrap_or_else(|| default_reference_cutoff(num_modes, DEFAULT_REFERENCE_STATES));

    if poly.is_constant() {
        let value = poly.constant_term();
        let witness = vec![0u32; num_modes];
        let energy = value.magnitude() * value.magnitude();
        let mut out = if value.is_zero() {
            Outcome { verdict: Verdict::HasSolution, reason: "constant zero polynomial".into(), witness: Some(witness), e_g: None, e_c: None, delta: None }
        } else {
            Outcome {
                verdict: Verdict::NoSolutionWithinConfidence,
                reason: "nonzero constant polynomial".into(),
                witness: None,
                e_g: Some(energy.clone()),
                e_c: Some(energy),
                delta: Some(0.0),
            }
        };
        out.reason = format!("{} (no simulation)", out.reason);
        let trace = vec![TraceEvent::ShortCircuit { constant: value.to_string() }];
        return Ok(finish(cfg, reference, 0, None, out, trace));
    }
    if reference < cfg.initial_model_cutoff {
        return Err(DecideError::Config(format!("reference cutoff {reference} below initial model cutoff {}", cfg.initial_model_cutoff)));
    }

    cache.bind(poly, cfg)?;
    let alphas = match &cfg.alphas {
        Some(a) => CoherentParams::new(a.clone())?,
        None => CoherentParams::uniform(num_modes, DEFAULT_ALPHA)?,
    };
    if alphas.alphas().len() != num_modes {
        return Err(DecideError::Config(format!("{} alphas for {num_modes} modes", alphas.alphas().len())));
    }
    let max_model = cfg.max_model_cutoff.unwrap_or(reference);
    let cutoffs = model_cutoffs(cfg.initial_model_cutoff, max_model);
    let mut engine = Engine { poly, cfg, alphas, opts: cfg.evolve_options(), cache, trace: Vec::new() };
    let reference_states = engine.ops(reference)?.basis.len();
    engine.trace.push(TraceEvent::Setup { reference_cutoff: reference, reference_states, model_cutoffs: cutoffs.clone(), repetitions: plan.repetitions });

    let mut t = cfg.initial_t;
    let mut round = 0;
    let outcome = loop {
        round += 1;
        match decision_round(&mut engine, &plan, reference, &cutoffs, max_model, round, t)? {
            RoundResult::Done(outcome) => break outcome,
            RoundResult::Continue { furthest_t } => {
                if t >= cfg.max_t {
                    break Outcome::inconclusive(format!("max T {} exhausted", cfg.max_t));
                }
                let gap = match engine.gap(reference) {
                    Ok(g) => g,
                    Err(DecideError::Spectral(e @ SpectralError::GapBelowFloor { .. })) => {
                        break Outcome::inconclusive(format!("{e}; degenerate spectrum, the adiabatic run time is unbounded"));
                    }
                    Err(e) => return Err(e),
                };
                let grown = (t * cfg.t_growth).max(furthest_t);
                let next_t = match &gap {
                    Ok(rep) => rep.t_min.max(grown),
                    Err(_) => grown,
                }
                .min(cfg.max_t);
                engine.trace.push(TraceEvent::Gap {
                    round,
                    gap: gap.as_ref().ok().map(|r| r.gap),
                    argmin_s: gap.as_ref().ok().map(|r| r.argmin_s),
                    t_min: gap.as_ref().ok().map(|r| r.t_min),
                    note: gap.as_ref().err().cloned(),
                    next_t,
                });
                t = next_t;
            }
        }
    };
    let trace = std::mem::take(&mut engine.trace);
    Ok(finish(cfg, reference, round, Some(t), outcome, trace))
}

fn finish(cfg: &DecisionConfig, reference: u32, rounds: usize, final_t: Option<f64>, out: Outcome, mut trace: Vec<TraceEvent>) -> DecisionReport {
    trace.push(TraceEvent::Verdict { verdict: out.verdict, reason: out.reason.clone() });
    DecisionReport {
        verdict: out.verdict,
        witness: out.witness,
        e_g_estimate: out.e_g.as_ref().map(|e| bigint_to_f64(&e.clone().into())),
        e_candidate: out.e_c.as_ref().map(|e| bigint_to_f64(&e.clone().into())),
        delta: out.delta,
        confidence: cfg.confidence,
        epsilon: cfg.epsilon,
        reason: out.reason,
        reference_cutoff: reference,
        rounds,
        final_t,
        trace,
    }
}

enum RoundResult {
    Done(Outcome),
    Continue { furthest_t: f64 },
}

fn decision_round(
    engine: &mut Engine<'_>,
    plan: &SamplingPlan,
    reference: u32,
    cutoffs: &[u32],
    max_model: u32,
    round: usize,
    t: f64,
) -> Result<RoundResult, DecideError> {
    let cfg = engine.cfg;
    let poly = engine.poly;

    // measurement emulation on the reference basis
    let run = engine.run(reference, t)?;
    let (ref_dist, ref_report) = (&run.0, &run.1);
    engine.trace.push(TraceEvent::ReferenceRun {
        round,
        t,
        cutoff: reference,
        steps: ref_report.steps,
        halving_diff: ref_report.halving_diff,
        propagator: ref_report.propagator,
    });
    let ref_ops = engine.ops(reference)?;
    let round_plan = SamplingPlan { seed: round_seed(plan.seed, round - 1), ..*plan };
    let hist = sample_histogram(ref_dist, &round_plan);
    let candidate = hist.candidate(ref_ops.hp.exact_energies())?;
    engine.trace.push(TraceEvent::Histogram {
        round,
        seed: round_plan.seed,
        repetitions: round_plan.repetitions,
        distinct_outcomes: hist.counts().iter().filter(|&&c| c > 0).count(),
        candidate: candidate.state.clone(),
        candidate_energy: candidate.energy.to_string(),
        candidate_count: candidate.count,
    });
    if candidate.energy.is_zero() {
        if let Some(w) = verified_root(poly, &candidate.state)? {
            return Ok(RoundResult::Done(Outcome {
                verdict: Verdict::HasSolution,
                reason: "measured candidate has zero energy".into(),
                witness: Some(w),
                e_g: None,
                e_c: Some(candidate.energy),
                delta: None,
            }));
        }
    }
    let hist_dist = hist.distribution();

    // truncated model sweep
    let mut accepted: Vec<(u32, BigUint)> = Vec::new();
    let mut streak = 0usize;
    for &m in cutoffs {
        let ops = engine.ops(m)?;
        if let Err(reason) = &ops.initial {
            engine.trace.push(TraceEvent::ModelSkipped { round, cutoff: m, reason: reason.clone() });
            streak = 0;
            continue;
        }
        let model = engine.run(m, t)?;
        let sup = sup_distance(&model.0, &hist_dist)?;
        let ok = sup < cfg.epsilon;
        let minimum = ops.hp.min_exact().clone();
        engine.trace.push(TraceEvent::ModelRun {
            round,
            cutoff: m,
            t,
            states: ops.basis.len(),
            sup_distance: sup,
            accepted: ok,
            model_minimum: minimum.to_string(),
        });
        if !ok {
            streak = 0;
            continue;
        }
        streak += 1;
        if minimum.is_zero() {
            let first = ops.hp.minimizers()[0];
            if let Some(w) = verified_root(poly, ops.basis.state(first))? {
                return Ok(RoundResult::Done(Outcome {
                    verdict: Verdict::HasSolution,
                    reason: format!("model ground state at cutoff {m} has zero energy"),
                    witness: Some(w),
                    e_g: Some(minimum),
                    e_c: Some(candidate.energy),
                    delta: None,
                }));
            }
        }
        accepted.push((m, minimum));
    }

    if max_model < reference {
        return Ok(RoundResult::Done(Outcome::inconclusive(format!(
            "model cutoff cap {max_model} does not cover the reference cutoff {reference}"
        ))));
    }
    let covered = accepted.last().is_some_and(|(m, _)| *m == reference) && streak > 0;
    if !covered {
        return Ok(RoundResult::Continue { furthest_t: t });
    }
    let window: Vec<(u32, BigUint)> = accepted[accepted.len() - streak.min(FLUCTUATION_WINDOW)..].to_vec();
    if window.len() < 2 {
        return Ok(RoundResult::Continue { furthest_t: t });
    }
    let minima: Vec<f64> = window.iter().map(|(_, e)| bigint_to_f64(&e.clone().into())).collect();
    let delta = fluctuation_estimate(&minima)?;
    engine.trace.push(TraceEvent::Fluctuation { round, cutoffs: window.iter().map(|(m, _)| *m).collect(), model_minima: minima, delta });

    let e_g = window.last().expect("window is non-empty").1.clone();
    let e_c = candidate.energy.clone();
    if e_g < e_c {
        engine.trace.push(TraceEvent::Scenario {
            round,
            scenario: 1,
            model_minimum: e_g.to_string(),
            candidate_energy: e_c.to_string(),
            outcome: "candidate eliminated".into(),
        });
        return Ok(RoundResult::Continue { furthest_t: t });
    }
    engine.trace.push(TraceEvent::Scenario {
        round,
        scenario: 2,
        model_minimum: e_g.to_string(),
        candidate_energy: e_c.to_string(),
        outcome: "consistent, checking trend".into(),
    });

    let times = [t, t * cfg.t_growth, t * cfg.t_growth * cfg.t_growth];
    if times[2] > cfg.max_t {
        return Ok(RoundResult::Done(Outcome::inconclusive(format!(
            "trend test needs T = {} beyond max T {}",
            times[2], cfg.max_t
        ))));
    }
    let level: Vec<usize> = (0..ref_ops.basis.len()).filter(|&i| *ref_ops.hp.exact_energy(i) == e_c).collect();
    let mut probs = Vec::with_capacity(times.len());
    for &tt in &times {
        let r = engine.run(reference, tt)?;
        probs.push(level.iter().map(|&i| r.0.probs()[i]).sum::<f64>());
    }
    let spurious = probs.windows(2).all(|w| w[1] <= w[0]) && probs[0] - probs[2] >= cfg.trend_margin;
    engine.trace.push(TraceEvent::Trend { round, times: times.to_vec(), probabilities: probs, spurious });
    if spurious {
        return Ok(RoundResult::Continue { furthest_t: times[2] });
    }
    let e_c_f = bigint_to_f64(&e_c.clone().into());
    if delta < e_c_f {
        Ok(RoundResult::Done(Outcome {
            verdict: Verdict::NoSolutionWithinConfidence,
            reason: "candidate confirmed with nonzero energy above the fluctuation".into(),
            witness: None,
            e_g: Some(e_g),
            e_c: Some(e_c),
            delta: Some(delta),
        }))
    } else {
        Ok(RoundResult::Done(Outcome {
            reason: format!("fluctuation {delta} not below candidate energy {e_c}"),
            e_g: Some(e_g),
            e_c: Some(e_c),
            delta: Some(delta),
            ..Outcome::inconclusive("")
        }))
    }
}
