use std::time::Instant;

use strataeval::estimation::{bernoulli_sd, pooled_proportion, SdDivisor};
use strataeval::sampling::{
    allocate_counts, derive_seed, neyman_fractions, proportional_fractions, sample_without_replacement, RandomState,
    StratumSpec,
};
use strataeval::simulator::{coverage_experiment, synth_corpus, CoverageSummary, Oracle, SimSpec, SimStratum};
use strataeval::{Corpus, PosClass, Verdict};

fn recall_error_and_mc_se(summary: &CoverageSummary) -> (f64, f64) {
    let r = summary.rows.len() as f64;
    let mean = summary.mean_recall;
    let var = summary.rows.iter().map(|row| (row.recall - mean).powi(2)).sum::<f64>() / (r - 1.0);
    ((mean - summary.truth_recall).abs(), (var / r).sqrt())
}

#[test]
fn smoke_run_of_one_hundred_replications() {
    let spec = SimSpec::uniform([1000, 1000, 1000], 0.9, 0.04, 5, 100);
    let start = Instant::now();
    let summary = coverage_experiment(&spec, 0.01).unwrap();
    assert!(start.elapsed().as_secs_f64() < 10.0, "{:?}", start.elapsed());
    assert_eq!(summary.rows.len(), 100);
    assert!(summary.coverage_recall > 0.8);
}

#[test]
fn pooled_estimate_converges_with_replications() {
    let spec = |r| SimSpec::uniform([8000, 2300, 4500], 0.9, 0.04, 77, r);
    let small = coverage_experiment(&spec(200), 0.01).unwrap();
    let large = coverage_experiment(&spec(2000), 0.01).unwrap();
    let (err_small, se_small) = recall_error_and_mc_se(&small);
    let (err_large, se_large) = recall_error_and_mc_se(&large);
    assert!(se_large < se_small / 2.5, "{se_small} {se_large}");
    // Reusing the pilot in the estimate leaves a small bias, a fraction of
    // the target standard error, on top of the Monte Carlo error.
    let bias_allowance = 0.3 * 0.01;
    assert!(err_small < 4.0 * se_small + bias_allowance, "{err_small} {se_small}");
    assert!(err_large < 4.0 * se_large + bias_allowance, "{err_large} {se_large}");
    assert!(err_large < 0.01);
}

fn heterogeneous_corpus() -> (Corpus, Oracle) {
    let stratum = |class, size, correctness| SimStratum {
        class,
        size,
        correctness,
        no_output: 0.0,
        tags: None,
    };
    let spec = SimSpec {
        strata: vec![
            stratum(PosClass::Noun, 6000, 0.99),
            stratum(PosClass::Adjective, 3000, 0.6),
            stratum(PosClass::Verb, 6000, 0.97),
        ],
        ..SimSpec::uniform([1, 1, 1], 1.0, 0.0, 31, 100)
    };
    synth_corpus(&spec).unwrap()
}

/// Empirical variance of the population-weighted recall estimate over
/// repeated stratified samples with fixed per-stratum counts.
fn estimator_variance(corpus: &Corpus, oracle: &Oracle, counts: &[u64], reps: u64) -> f64 {
    let total = corpus.population_size() as f64;
    let estimates: Vec<f64> = (0..reps)
        .map(|r| {
            let mut rng = RandomState::new(derive_seed(99, r));
            let terms: Vec<(f64, f64)> = PosClass::STRATA
                .iter()
                .zip(counts)
                .map(|(&class, &k)| {
                    let items = sample_without_replacement(corpus.stratum(class), k as usize, &mut rng).unwrap();
                    let correct = items
                        .iter()
                        .filter(|&&i| oracle.verdict(i) == Some(Verdict::CorrectLemma))
                        .count();
                    (corpus.stratum_size(class) as f64 / total, correct as f64 / k as f64)
                })
                .collect();
            pooled_proportion(&terms).unwrap()
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / reps as f64;
    estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
}

#[test]
fn neyman_beats_proportional_when_spreads_differ() {
    let (corpus, oracle) = heterogeneous_corpus();
    let specs: Vec<StratumSpec> = PosClass::STRATA
        .iter()
        .map(|&class| {
            let items = corpus.stratum(class);
            let (_, recall) = oracle.truth(items.iter().copied());
            StratumSpec::new(
                class,
                items.len() as u64,
                bernoulli_sd(recall, items.len() as u64, SdDivisor::Population),
            )
            .unwrap()
        })
        .collect();
    let n = 600;
    let neyman = allocate_counts(n, &neyman_fractions(&specs).unwrap()).unwrap();
    let proportional = allocate_counts(n, &proportional_fractions(&specs).unwrap()).unwrap();
    assert_ne!(neyman, proportional);

    let v_neyman = estimator_variance(&corpus, &oracle, &neyman, 3000);
    let v_prop = estimator_variance(&corpus, &oracle, &proportional, 3000);
    assert!(v_neyman < 0.8 * v_prop, "neyman {v_neyman} proportional {v_prop}");
}
