use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adiadio::evolve::{coherent_initial_state, evolve, probabilities, Distribution, DistributionSource, EvolveOptions};
use adiadio::fock::FockBasis;
use adiadio::ops::{build_hi, build_hp, CoherentParams, Ramp, Schedule};
use adiadio::poly::parse_equation;
use adiadio::sampler::{repetitions_needed, sample_histogram, sup_distance, SamplingPlan, CHUNK_DRAWS};

const GOLDEN: &str = include_str!("golden/histogram_half_half_seed2024.json");

fn half_half() -> Distribution {
    let basis = Arc::new(FockBasis::enumerate(1, 1).unwrap());
    Distribution::new(basis, vec![0.5, 0.5], DistributionSource::SimulatedReference, None).unwrap()
}

#[test]
fn fixed_seed_histogram_matches_golden_file() {
    let plan = SamplingPlan::new(0.5, 0.5, 2024).unwrap().with_repetitions(1000).unwrap();
    let hist = sample_histogram(&half_half(), &plan);
    let mut out = Vec::new();
    hist.write_json(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), GOLDEN);
    for &c in hist.counts() {
        assert!((c as f64 / 1000.0 - 0.5).abs() < 0.05);
    }
}

#[test]
fn golden_counts_follow_the_documented_generator() {
    // One chunk: ChaCha8 seeded with the plan seed on stream 0, 53-bit uniforms.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    rng.set_stream(0);
    let below = (0..1000).filter(|_| ((rng.next_u64() >> 11) as f64) / ((1u64 << 53) as f64) < 0.5).count();
    let golden: serde_json::Value = serde_json::from_str(GOLDEN).unwrap();
    assert_eq!(golden["counts"][0]["count"].as_u64().unwrap() as usize, below);
    assert_eq!(golden["counts"][1]["count"].as_u64().unwrap() as usize, 1000 - below);
}

#[test]
fn counts_do_not_depend_on_worker_count() {
    let d = half_half();
    let plan = SamplingPlan::new(0.1, 0.9, 5).unwrap().with_repetitions(3 * CHUNK_DRAWS + 17).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| sample_histogram(&d, &plan).counts().to_vec())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one.iter().sum::<u64>(), 3 * CHUNK_DRAWS + 17);
}

/// Final distribution of a linear-ramp run for x - 6 on 25 states.
fn linear_root_distribution(total_time: f64) -> Distribution {
    let basis = FockBasis::enumerate(1, 24).unwrap();
    let p = parse_equation("x - 6", &Default::default()).unwrap();
    let hp = build_hp(&p, &basis).unwrap();
    let c = CoherentParams::uniform(1, 0.5).unwrap();
    let hi = build_hi(&c, &basis).unwrap();
    let psi0 = coherent_initial_state(&c, Arc::new(basis), 0.05).unwrap();
    let sched = Schedule::uniform(total_time, Ramp::Linear, 2).unwrap();
    let (psi, _) = evolve(&hi, hp.matrix(), &sched, &psi0, &EvolveOptions::default()).unwrap();
    probabilities(&psi)
}

#[test]
fn sup_distance_concentrates_as_the_bound_promises() {
    let d = linear_root_distribution(40.0);
    let reps = repetitions_needed(0.1, 0.9).unwrap();
    assert_eq!(reps, 1000);
    let within = (0..200u64)
        .filter(|&seed| {
            let hist = sample_histogram(&d, &SamplingPlan::new(0.1, 0.9, seed).unwrap());
            sup_distance(&hist.distribution(), &d).unwrap() <= 0.1
        })
        .count();
    assert!(within >= 180, "{within} of 200 within 0.1");
}

#[test]
fn histogram_export_validates() {
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/schemas/histogram.schema.json")).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let golden: serde_json::Value = serde_json::from_str(GOLDEN).unwrap();
    assert!(validator.is_valid(&golden));
}
