//! Emulated projective measurements: repeated draws from a distribution,
//! frequency histograms and the sup-norm comparison between distributions.
//!
//! Draws use ChaCha8 seeded with `seed_from_u64(seed)`. The `L` draws are cut
//! into chunks of [`CHUNK_DRAWS`]; chunk `c` runs on its own stream
//! (`set_stream(c)`), so the histogram does not depend on how chunks are
//! scheduled across threads. A uniform variate is `(next_u64 >> 11) * 2^-53`
//! and selects the first state whose cumulative probability exceeds it.

use std::cmp::Ordering;
use std::io::Write;
use std::sync::Arc;

use num_bigint::BigUint;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evolve::{Distribution, DistributionSource, EvolveError};
use crate::fock::{BasisMeta, FockBasis};

/// Draws per RNG stream.
pub const CHUNK_DRAWS: u64 = 4096;

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("epsilon must lie in (0, 1), got {0}")]
    Epsilon(f64),
    #[error("confidence must lie in (0, 1), got {0}")]
    Confidence(f64),
    #[error("{given} repetitions are fewer than the {needed} required")]
    TooFewRepetitions { given: u64, needed: u64 },
    #[error("distributions live on incomparable bases")]
    IncomparableBases,
    #[error("energies cover {got} states but the histogram has {expected}")]
    EnergyLength { expected: usize, got: usize },
    #[error(transparent)]
    Distribution(#[from] EvolveError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// `ceil(1 / (epsilon^2 (1 - p)))`.
pub fn repetitions_needed(epsilon: f64, confidence: f64) -> Result<u64, SamplerError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(SamplerError::Epsilon(epsilon));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(SamplerError::Confidence(confidence));
    }
    let raw = 1.0 / (epsilon * epsilon * (1.0 - confidence));
    // absorb rounding such as 999.9999999999999 for (0.1, 0.9)
    let rounded = raw.round();
    let reps = if (raw - rounded).abs() <= 1e-9 * rounded { rounded } else { raw.ceil() };
    Ok(reps as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub epsilon: f64,
    pub confidence: f64,
    pub repetitions: u64,
    pub seed: u64,
}

impl SamplingPlan {
    /// Plan with the minimal repetition count for `(epsilon, confidence)`.
    pub fn new(epsilon: f64, confidence: f64, seed: u64) -> Result<Self, SamplerError> {
        let repetitions = repetitions_needed(epsilon, confidence)?;
        Ok(Self { epsilon, confidence, repetitions, seed })
    }

    pub fn with_repetitions(mut self, repetitions: u64) -> Result<Self, SamplerError> {
        let needed = repetitions_needed(self.epsilon, self.confidence)?;
        if repetitions < needed {
            return Err(SamplerError::TooFewRepetitions { given: repetitions, needed });
        }
        self.repetitions = repetitions;
        Ok(self)
    }
}

/// Outcome counts of `plan.repetitions` measurements.
#[derive(Debug, Clone)]
pub struct Histogram {
    basis: Arc<FockBasis>,
    counts: Vec<u64>,
    plan: SamplingPlan,
}

/// Lowest-energy observed outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub index: usize,
    pub state: Vec<u32>,
    /// Exact diagonal of `H_P` at `state`.
    pub energy: BigUint,
    pub count: u64,
}

impl Histogram {
    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn plan(&self) -> &SamplingPlan {
        &self.plan
    }

    /// Frequencies `count / L`.
    pub fn distribution(&self) -> Distribution {
        let total = self.plan.repetitions as f64;
        let probs = self.counts.iter().map(|&c| c as f64 / total).collect();
        Distribution::new(self.basis.clone(), probs, DistributionSource::SampledHistogram, Some(self.plan.epsilon))
            .expect("histogram has at least one count")
    }

    /// The observed state with the smallest exact energy; ties go to the
    /// larger count, then to the lexicographically smaller state.
    pub fn candidate(&self, energies: &[BigUint]) -> Result<Candidate, SamplerError> {
        if energies.len() != self.counts.len() {
            return Err(SamplerError::EnergyLength { expected: self.counts.len(), got: energies.len() });
        }
        let best = (0..self.counts.len())
            .filter(|&i| self.counts[i] > 0)
            .min_by(|&a, &b| {
                energies[a]
                    .cmp(&energies[b])
                    .then_with(|| self.counts[b].cmp(&self.counts[a]))
                    .then_with(|| self.basis.state(a).cmp(self.basis.state(b)))
            })
            .expect("histogram has at least one count");
        Ok(Candidate {
            index: best,
            state: self.basis.state(best).to_vec(),
            energy: energies[best].clone(),
            count: self.counts[best],
        })
    }

    pub fn export(&self) -> HistogramExport {
        HistogramExport {
            basis_meta: self.basis.meta(),
            counts: self
                .counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &count)| HistogramCount { state: self.basis.state(i).to_vec(), count })
                .collect(),
            repetitions: self.plan.repetitions,
            epsilon: self.plan.epsilon,
            p: self.plan.confidence,
            seed: self.plan.seed,
        }
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), SamplerError> {
        crate::cli::write_json(w, &self.export())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramCount {
    pub state: Vec<u32>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramExport {
    pub basis_meta: BasisMeta,
    /// Non-zero counts in basis order.
    pub counts: Vec<HistogramCount>,
    #[serde(rename = "L")]
    pub repetitions: u64,
    pub epsilon: f64,
    pub p: f64,
    pub seed: u64,
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `plan.repetitions` independent draws from `d`.
pub fn sample_histogram(d: &Distribution, plan: &SamplingPlan) -> Histogram {
    let mut cdf = Vec::with_capacity(d.probs().len());
    let mut acc = 0.0;
    for &p in d.probs() {
        acc += p;
        cdf.push(acc);
    }
    let last = d.probs().iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let n = cdf.len();
    let chunks = plan.repetitions.div_ceil(CHUNK_DRAWS);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(chunk);
            let draws = CHUNK_DRAWS.min(plan.repetitions - chunk * CHUNK_DRAWS);
            let mut local = vec![0u64; n];
            for _ in 0..draws {
                let u = uniform(&mut rng);
                let i = cdf.partition_point(|&c| c <= u).min(last);
                local[i] += 1;
            }
            local
        })
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Histogram { basis: d.basis().clone(), counts, plan: *plan }
}

/// `max_i |a_i - b_i|`, matching states by occupation vector. One basis must
/// contain the other; states missing from the smaller one count as 0.
pub fn sup_distance(a: &Distribution, b: &Distribution) -> Result<f64, SamplerError> {
    let (big, small) = match a.probs().len().cmp(&b.probs().len()) {
        Ordering::Less => (b, a),
        _ => (a, b),
    };
    let (bb, sb) = (big.basis(), small.basis());
    if bb.num_modes() != sb.num_modes() {
        return Err(SamplerError::IncomparableBases);
    }
    let mut seen = 0;
    let mut worst = 0.0f64;
    for (i, &p) in big.probs().iter().enumerate() {
        let q = match sb.index_of(bb.state(i)).map_err(|_| SamplerError::IncomparableBases)? {
            Some(j) => {
                seen += 1;
                small.probs()[j]
            }
            None => 0.0,
        };
        worst = worst.max((p - q).abs());
    }
    if seen != sb.len() {
        return Err(SamplerError::IncomparableBases);
    }
    Ok(worst)
}
