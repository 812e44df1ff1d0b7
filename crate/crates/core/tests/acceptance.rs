//! Acceptance criteria A1–A10. Runs without the libtest harness so that one
//! PASS/FAIL line per criterion is always printed.

use std::fs;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use strataeval::corpus::{self, frequency_table, PosClass};
use strataeval::estimation::{confidence_interval, f_measure, pooled_proportion};
use strataeval::sampling::{
    allocate_counts, neyman_fractions, proportional_fractions, required_sample_size, StratumSpec,
};
use strataeval::simulator::reference::{reference_tags, STUDY_PILOT_SDS, STUDY_STRATUM_SIZES};
use strataeval::simulator::{coverage_experiment, reference_fixture, run_study, synthetic_ref, SimSpec};
use strataeval::study::{Study, StudyConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn reference_strata() -> Vec<StratumSpec> {
    PosClass::STRATA
        .iter()
        .zip(STUDY_STRATUM_SIZES)
        .zip(STUDY_PILOT_SDS)
        .map(|((&class, size), sd)| StratumSpec::new(class, size, sd).unwrap())
        .collect()
}

fn a1_neyman_fractions() -> Outcome {
    let f = neyman_fractions(&reference_strata()).map_err(|e| e.to_string())?;
    let ok = f.iter().zip([0.534, 0.224, 0.242]).all(|(g, w)| (g - w).abs() <= 0.002);
    check(
        ok,
        format!(
            "fractions {:.4}, {:.4}, {:.4} vs (0.534, 0.224, 0.242) ±0.002",
            f[0], f[1], f[2]
        ),
    )
}

fn a2_sample_size() -> Outcome {
    let n = required_sample_size(&reference_strata(), 0.01).map_err(|e| e.to_string())?;
    check(
        (595.0..=604.0).contains(&n.exact) && (595.0..=604.0).contains(&597.0),
        format!("n = {:.3} (ceil {}) in [595, 604]", n.exact, n.ceil),
    )
}

fn a3_allocation() -> Outcome {
    let f = neyman_fractions(&reference_strata()).map_err(|e| e.to_string())?;
    let counts = allocate_counts(1373, &f).map_err(|e| e.to_string())?;
    let second: Vec<u64> = counts.iter().map(|c| c - 40).collect();
    let sum: u64 = counts.iter().sum();
    let within = |got: &[u64], want: [u64; 3]| got.iter().zip(want).all(|(g, w)| g.abs_diff(w) <= 3);
    check(
        sum == 1373 && within(&counts, [732, 308, 333]) && within(&second, [692, 268, 293]),
        format!("counts {counts:?} (sum {sum}), second phase {second:?}"),
    )
}

fn a4_f_measure() -> Outcome {
    let f = f_measure(0.97, 0.93, 1.0);
    check(
        (f - 0.94958).abs() <= 5e-4 && (f * 100.0).round() == 95.0,
        format!("F = {f:.5}"),
    )
}

fn a5_confidence_interval() -> Outcome {
    let ci = confidence_interval(0.97, 0.0102, 0.95).map_err(|e| e.to_string())?;
    check(
        (ci.lo - 0.950).abs() <= 0.001 && (ci.hi - 0.990).abs() <= 0.001,
        format!("({:.4}, {:.4}) vs (0.950, 0.990) ±0.001", ci.lo, ci.hi),
    )
}

fn a6_tables_fixture() -> Outcome {
    let (fixture, _) = reference_fixture(2015, 0.95, 0.02).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("fixture.tsv");
    fs::write(&path, corpus::corpus_to_tsv(&fixture).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let (parsed, _) = corpus::load_corpus(&path).map_err(|e| e.to_string())?;
    let mut rows = 0;
    for class in PosClass::STRATA {
        let table = frequency_table(&parsed, class).map_err(|e| e.to_string())?;
        if table.entries.len() != reference_tags(class).len() {
            return Err(format!(
                "{class}: {} tags, expected {}",
                table.entries.len(),
                reference_tags(class).len()
            ));
        }
        for &(tag, n) in reference_tags(class) {
            if table.get(tag) != Some(n as usize) {
                return Err(format!("{tag}: {:?} vs {n}", table.get(tag)));
            }
            rows += 1;
        }
    }
    let spot = |c, t| frequency_table(&parsed, c).unwrap().get(t).unwrap();
    check(
        spot(PosClass::Noun, "N-msi") == 18667
            && spot(PosClass::Adjective, "Amsi") == 3256
            && spot(PosClass::Verb, "V---f-r3s") == 15582,
        format!("{rows} rows match; N-msi 18667, Amsi 3256, V---f-r3s 15582"),
    )
}

fn fixed_time() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH
}

fn pipeline_report_json(seed: u64) -> Result<Vec<u8>, String> {
    let (corpus, oracle) = reference_fixture(7, 0.93, 0.03).map_err(|e| e.to_string())?;
    let cref = synthetic_ref(&corpus).map_err(|e| e.to_string())?;
    let mut study =
        Study::create(Arc::new(corpus), cref, StudyConfig::new(seed), fixed_time()).map_err(|e| e.to_string())?;
    run_study(&mut study, &oracle, fixed_time()).map_err(|e| e.to_string())?;
    let report = study.report().map_err(|e| e.to_string())?;
    serde_json::to_vec_pretty(&report).map_err(|e| e.to_string())
}

fn a7_determinism() -> Outcome {
    let a = pipeline_report_json(0xC0FFEE)?;
    let b = pipeline_report_json(0xC0FFEE)?;
    check(
        a == b,
        format!("two runs, {} bytes each, identical = {}", a.len(), a == b),
    )
}

fn a8_coverage() -> Outcome {
    let spec = SimSpec::uniform([8000, 2300, 4500], 0.9, 0.04, 20_151_015, 2000);
    let s = coverage_experiment(&spec, 0.01).map_err(|e| e.to_string())?;
    check(
        (0.93..=0.97).contains(&s.coverage_recall),
        format!(
            "recall coverage {:.4} in [0.93, 0.97] (precision {:.4}, mean n {:.1}, R={})",
            s.coverage_recall, s.coverage_precision, s.mean_n, s.replications
        ),
    )
}

fn a9_equivalences() -> Outcome {
    // Proportional allocation: sample weights n_j proportional to N_j.
    let sizes = [8000.0, 2300.0, 4500.0];
    let p = [0.91, 0.84, 0.88];
    let n: Vec<f64> = sizes.iter().map(|s| s / 10.0).collect();
    let sw = pooled_proportion(&[(n[0], p[0]), (n[1], p[1]), (n[2], p[2])]).map_err(|e| e.to_string())?;
    let pw = pooled_proportion(&[(sizes[0], p[0]), (sizes[1], p[1]), (sizes[2], p[2])]).map_err(|e| e.to_string())?;

    let single = [StratumSpec::new(PosClass::Noun, 1000, 0.5).unwrap()];
    let one_stratum = required_sample_size(&single, 0.05).map_err(|e| e.to_string())?.exact;
    let classical = 0.25 / (0.05f64.powi(2) + 0.25 / 1000.0);

    let base = neyman_fractions(&reference_strata()).map_err(|e| e.to_string())?;
    let scaled: Vec<StratumSpec> = reference_strata()
        .into_iter()
        .map(|s| StratumSpec { sd: s.sd * 0.37, ..s })
        .collect();
    let scaled = neyman_fractions(&scaled).map_err(|e| e.to_string())?;
    let scale_gap = base.iter().zip(&scaled).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let prop = proportional_fractions(&reference_strata()).map_err(|e| e.to_string())?;
    let prop_sum: f64 = prop.iter().sum();

    check(
        (sw - pw).abs() <= 1e-12
            && (one_stratum - classical).abs() <= 1e-9
            && scale_gap <= 1e-12
            && (prop_sum - 1.0).abs() < 1e-12,
        format!(
            "|SW-PW| = {:.1e}, |one-stratum n - classical n| = {:.1e}, scale gap = {:.1e}",
            (sw - pw).abs(),
            (one_stratum - classical).abs(),
            scale_gap
        ),
    )
}

fn a10_event_sourcing() -> Outcome {
    let spec = SimSpec::uniform([1500, 600, 900], 0.88, 0.05, 99, 100);
    let (corpus, oracle) = strataeval::simulator::synth_corpus(&spec).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus_path = dir.path().join("corpus.tsv");
    fs::write(&corpus_path, corpus::corpus_to_tsv(&corpus).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let (corpus, cref) = corpus::load_corpus(&corpus_path).map_err(|e| e.to_string())?;
    let corpus = Arc::new(corpus);

    let mut study =
        Study::create(corpus.clone(), cref.clone(), StudyConfig::new(5), fixed_time()).map_err(|e| e.to_string())?;
    let mut clock = 0;
    let mut tick = || {
        clock += 1;
        fixed_time() + chrono::Duration::seconds(clock)
    };
    while study.phase() != strataeval::Phase::Reported {
        for i in study.unjudged_items() {
            // Re-judge some items to exercise last-write-wins.
            let v = oracle.verdict(i).unwrap();
            if i % 5 == 0 && v != strataeval::Verdict::NoOutput {
                let other = if v == strataeval::Verdict::CorrectLemma {
                    strataeval::Verdict::WrongLemma
                } else {
                    strataeval::Verdict::CorrectLemma
                };
                study
                    .record_judgment(i, other, "first-pass", tick())
                    .map_err(|e| e.to_string())?;
            }
            study
                .record_judgment(i, v, "judge", tick())
                .map_err(|e| e.to_string())?;
        }
        study.advance(tick()).map_err(|e| e.to_string())?;
    }
    let replayed = Study::replay(corpus, cref, &study.state().audit_log).map_err(|e| e.to_string())?;
    let study_path = dir.path().join("study.json");
    study.save(&study_path).map_err(|e| e.to_string())?;
    let loaded = Study::load(&study_path, None).map_err(|e| e.to_string())?;
    check(
        replayed.state() == study.state() && loaded.state() == study.state(),
        format!(
            "{} audit entries replayed; replay equal = {}, save/load equal = {}",
            study.state().audit_log.len(),
            replayed.state() == study.state(),
            loaded.state() == study.state()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("A1 neyman fractions", a1_neyman_fractions, Duration::from_secs(1)),
        ("A2 total sample size", a2_sample_size, Duration::from_secs(1)),
        ("A3 allocation of 1373", a3_allocation, Duration::from_secs(1)),
        ("A4 F-measure", a4_f_measure, Duration::from_secs(1)),
        ("A5 confidence interval", a5_confidence_interval, Duration::from_secs(1)),
        ("A6 frequency tables fixture", a6_tables_fixture, Duration::from_secs(5)),
        ("A7 pipeline determinism", a7_determinism, Duration::from_secs(10)),
        ("A8 recall CI coverage", a8_coverage, Duration::from_secs(300)),
        ("A9 estimator equivalences", a9_equivalences, Duration::from_secs(1)),
        ("A10 event sourcing", a10_event_sourcing, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if elapsed <= budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took {elapsed:.2?}, budget {budget:?}")),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} {name}: {detail} [{elapsed:.2?}]");
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
