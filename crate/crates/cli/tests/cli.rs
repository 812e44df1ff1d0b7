use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use strataeval::corpus::load_corpus;
use strataeval::estimation::{bernoulli_sd, SdDivisor};
use strataeval::sampling::{allocate_bounded, neyman_fractions, required_sample_size, StratumSpec};
use strataeval::{Corpus, PosClass, Study, Verdict};
use tempfile::TempDir;

const SPEC: &str = r#"{
  "strata": [
    {"class": "noun", "size": 600, "correctness": 0.85, "no_output": 0.05},
    {"class": "adjective", "size": 250, "correctness": 0.7, "no_output": 0.05},
    {"class": "verb", "size": 400, "correctness": 0.95, "no_output": 0.02}
  ],
  "replications": 100,
  "pilot_per_stratum": 20
}"#;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_strataeval"));
    cmd.env_remove("STRATAEVAL_SEED").env_remove("STRATAEVAL_JUDGE");
    cmd
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(dir: &Path, args: &[&str]) -> Value {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    serde_json::from_str(&ok(dir, &full)).unwrap()
}

fn truth(corpus: &Corpus, index: usize) -> Verdict {
    let r = corpus.get(index).unwrap();
    match (&r.system_lemma, &r.gold_lemma) {
        (None, _) => Verdict::NoOutput,
        (Some(s), Some(g)) if s == g => Verdict::CorrectLemma,
        _ => Verdict::WrongLemma,
    }
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("spec.json"), SPEC).unwrap();
        ok(
            dir.path(),
            &["simulate", "corpus", "spec.json", "--seed", "11", "--out", "corpus.tsv"],
        );
        Workspace { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn study_file(&self) -> PathBuf {
        self.path().join("study.json")
    }

    fn corpus(&self) -> Corpus {
        load_corpus(self.path().join("corpus.tsv")).unwrap().0
    }

    fn init(&self) {
        ok(
            self.path(),
            &[
                "study",
                "init",
                "--study",
                "study.json",
                "--corpus",
                "corpus.tsv",
                "--seed",
                "0x2a",
                "--pilot",
                "20",
                "--target-se",
                "0.02",
            ],
        );
    }

    /// Judges everything currently drawn with single-item calls.
    fn judge_drawn(&self) {
        let corpus = self.corpus();
        let study = Study::load(self.study_file(), None).unwrap();
        for index in study.unjudged_items() {
            let v = truth(&corpus, index).short().to_string();
            let item = index.to_string();
            ok(
                self.path(),
                &[
                    "study",
                    "judge",
                    "--study",
                    "study.json",
                    "--judge",
                    "ann",
                    "--item",
                    &item,
                    "--verdict",
                    &v,
                ],
            );
        }
    }

    /// Runs the whole workflow, returning the stdout of each step.
    fn full_run(&self) -> Vec<String> {
        let mut outs = Vec::new();
        self.init();
        outs.push(ok(
            self.path(),
            &["--json", "study", "pilot", "--study", "study.json", "--seed", "42"],
        ));
        self.judge_drawn();
        outs.push(ok(
            self.path(),
            &["--json", "study", "allocate", "--study", "study.json"],
        ));
        outs.push(
            ok(self.path(), &["study", "allocate", "--study", "study.json"])
                .len()
                .to_string(),
        );
        outs.push(ok(
            self.path(),
            &["--json", "study", "draw", "--study", "study.json", "--seed", "42"],
        ));
        self.judge_drawn();
        outs.push(ok(self.path(), &["--json", "study", "report", "--study", "study.json"]));
        outs.push(ok(
            self.path(),
            &["study", "report", "--study", "study.json", "--mode", "sample"],
        ));
        outs
    }
}

#[test]
fn freq_first_row_matches_reference_table() {
    let dir = TempDir::new().unwrap();
    ok(
        dir.path(),
        &["simulate", "fixture", "--seed", "3", "--out", "fixture.tsv"],
    );
    let out = ok(dir.path(), &["freq", "fixture.tsv", "--class", "noun"]);
    assert_eq!(out.lines().next(), Some("N-msi 18667"));
    assert_eq!(out.lines().count(), 14);
    let adj = json(dir.path(), &["freq", "fixture.tsv", "--class", "adj"]);
    assert_eq!(adj["entries"][0]["tag"], "A-pi");
    let amsi = adj["entries"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["tag"] == "Amsi")
        .unwrap();
    assert_eq!(amsi["count"], 3256);
}

#[test]
fn validate_empty_corpus() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("empty.tsv"), "").unwrap();
    let out = run(dir.path(), &["validate", "empty.tsv"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().next(), Some("0 tokens"));
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["validate", "x.tsv", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(dir.path(), &["explode"]).status.code(), Some(2));
    assert_eq!(
        run(dir.path(), &["freq", "x.tsv", "--class", "adverb"]).status.code(),
        Some(2)
    );

    let out = run(dir.path(), &["validate", "missing.tsv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.tsv"));
    std::fs::write(dir.path().join("bad.tsv"), "a\tb\n").unwrap();
    assert_eq!(run(dir.path(), &["validate", "bad.tsv"]).status.code(), Some(3));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn randomized_commands_need_a_seed() {
    let ws = Workspace::new();
    let p = ws.path();
    let out = run(p, &["study", "init", "--study", "study.json", "--corpus", "corpus.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(
        p,
        &[
            "study",
            "init",
            "--study",
            "study.json",
            "--corpus",
            "corpus.tsv",
            "--seed",
            "nope",
        ],
    );
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .current_dir(p)
        .env("STRATAEVAL_SEED", "42")
        .args([
            "study",
            "init",
            "--study",
            "study.json",
            "--corpus",
            "corpus.tsv",
            "--pilot",
            "20",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(Study::load(ws.study_file(), None).unwrap().config().seed, 42);

    assert_eq!(
        run(p, &["study", "pilot", "--study", "study.json"]).status.code(),
        Some(2)
    );
    let out = run(p, &["study", "pilot", "--study", "study.json", "--seed", "41"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
    // Re-init refuses to clobber the study.
    let out = run(
        p,
        &[
            "study",
            "init",
            "--study",
            "study.json",
            "--corpus",
            "corpus.tsv",
            "--seed",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn phase_errors_exit_with_state_code() {
    let ws = Workspace::new();
    let p = ws.path();
    ws.init();
    assert_eq!(
        run(p, &["study", "allocate", "--study", "study.json"]).status.code(),
        Some(4)
    );
    assert_eq!(
        run(p, &["study", "report", "--study", "study.json"]).status.code(),
        Some(4)
    );
    ok(p, &["study", "pilot", "--study", "study.json", "--seed", "42"]);
    let out = run(p, &["study", "allocate", "--study", "study.json"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("20 remaining in Noun"));
    assert_eq!(
        run(p, &["study", "pilot", "--study", "study.json", "--seed", "42"])
            .status
            .code(),
        Some(4)
    );
    assert_eq!(
        run(p, &["study", "draw", "--study", "study.json", "--seed", "42"])
            .status
            .code(),
        Some(4)
    );
    let out = run(
        p,
        &[
            "study",
            "judge",
            "--study",
            "study.json",
            "--judge",
            "ann",
            "--item",
            "999999",
            "--verdict",
            "c",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn allocate_matches_library_calls() {
    let ws = Workspace::new();
    let p = ws.path();
    ws.init();
    ok(p, &["study", "pilot", "--study", "study.json", "--seed", "42"]);
    ws.judge_drawn();
    let plan = json(p, &["study", "allocate", "--study", "study.json"]);

    let corpus = ws.corpus();
    let study = Study::load(ws.study_file(), None).unwrap();
    let pilot = study.state().draws.pilot.clone().unwrap();
    let m = 20u64;
    let specs: Vec<StratumSpec> = PosClass::STRATA
        .iter()
        .map(|&class| {
            let items = pilot.stratum(class);
            let correct = items
                .iter()
                .filter(|&&i| truth(&corpus, i) == Verdict::CorrectLemma)
                .count();
            let p = correct as f64 / items.len() as f64;
            StratumSpec::new(
                class,
                corpus.stratum_size(class) as u64,
                bernoulli_sd(p, m, SdDivisor::Population),
            )
            .unwrap()
        })
        .collect();
    let fractions = neyman_fractions(&specs).unwrap();
    let required = required_sample_size(&specs, 0.02).unwrap();
    let n_total = required.ceil.max(3 * m);
    let max: Vec<u64> = specs.iter().map(|s| s.size).collect();
    let counts = allocate_bounded(n_total, &fractions, &[m; 3], &max).unwrap();

    assert_eq!(plan["n_total"], n_total);
    assert_eq!(plan["required"]["ceil"], required.ceil);
    assert!((plan["required"]["exact"].as_f64().unwrap() - required.exact).abs() < 1e-12);
    for j in 0..3 {
        assert!((plan["fractions"][j].as_f64().unwrap() - fractions[j]).abs() < 1e-12);
        assert!((plan["strata"][j]["sd"].as_f64().unwrap() - specs[j].sd).abs() < 1e-12);
        assert_eq!(plan["counts"][j], counts[j]);
        assert_eq!(plan["second_phase_counts"][j], counts[j] - m);
    }

    let text = ok(p, &["study", "allocate", "--study", "study.json"]);
    assert!(text.contains(&format!("total n {n_total}")), "{text}");
}

#[test]
fn workflow_is_deterministic_and_report_matches_library() {
    let a = Workspace::new();
    let b = Workspace::new();
    let outs_a = a.full_run();
    let outs_b = b.full_run();
    assert_eq!(outs_a, outs_b);

    let report: Value = serde_json::from_str(&outs_a[4]).unwrap();
    let expected = serde_json::to_value(Study::load(a.study_file(), None).unwrap().report().unwrap()).unwrap();
    assert_eq!(report, expected);
    assert!(outs_a[5].contains("sample_weighted"), "{}", outs_a[5]);

    let status = json(a.path(), &["study", "status", "--study", "study.json"]);
    assert_eq!(status["phase"], "main_drawn");
    assert_eq!(status["unjudged"], 0);
    ok(a.path(), &["study", "report", "--study", "study.json", "--finalize"]);
    assert_eq!(
        json(a.path(), &["study", "status", "--study", "study.json"])["phase"],
        "reported"
    );
    let out = run(
        a.path(),
        &[
            "study",
            "judge",
            "--study",
            "study.json",
            "--judge",
            "ann",
            "--item",
            "0",
            "--verdict",
            "c",
        ],
    );
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn interactive_judge_loop() {
    let ws = Workspace::new();
    let p = ws.path();
    ws.init();
    ok(p, &["study", "pilot", "--study", "study.json", "--seed", "42"]);
    let corpus = ws.corpus();
    let study = Study::load(ws.study_file(), None).unwrap();
    let items = study.unjudged_items();

    // A bad key, then for a no-output item a rejected lemma verdict, then the truth.
    let mut script = String::from("?\n");
    let mut expected = Vec::new();
    for &i in &items[..5] {
        let v = truth(&corpus, i);
        if v == Verdict::NoOutput {
            script.push_str("c\n");
        }
        script.push_str(&format!("{}\n", v.short()));
        expected.push((i, v));
    }
    script.push_str("q\n");

    let mut child = bin()
        .current_dir(p)
        .args(["--json", "study", "judge", "--study", "study.json", "--judge", "bo"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(script.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["judged"], 5);
    assert_eq!(summary["remaining"], items.len() - 5);
    let term = String::from_utf8(out.stderr).unwrap();
    assert!(term.contains("unknown key '?'"));
    assert!(term.contains("[["));

    let study = Study::load(ws.study_file(), None).unwrap();
    for (i, v) in expected {
        assert_eq!(study.judgments()[&i].verdict, v);
        assert_eq!(study.judgments()[&i].judge_id, "bo");
    }

    // End of input stops the loop without error.
    let out = bin()
        .current_dir(p)
        .args([
            "study",
            "judge",
            "--study",
            "study.json",
            "--judge",
            "bo",
            "--stratum",
            "verb",
        ])
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        format!("judged 0, {} remaining\n", items.len() - 5)
    );
}

#[test]
fn simulate_coverage_outputs() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    std::fs::write(p.join("spec.json"), SPEC).unwrap();
    let args = [
        "--json",
        "simulate",
        "coverage",
        "spec.json",
        "--seed",
        "9",
        "--target-se",
        "0.03",
        "--csv",
        "rows.csv",
    ];
    let first = ok(p, &args);
    let csv = std::fs::read_to_string(p.join("rows.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
    assert!(csv.starts_with("replication,seed,n_total"));
    assert_eq!(ok(p, &args), first);
    let summary: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(summary["replications"], 100);
    let cov = summary["coverage_recall"].as_f64().unwrap();
    assert!((0.8..=1.0).contains(&cov), "{cov}");
    assert!(summary.get("rows").is_none());

    let text = ok(
        p,
        &[
            "simulate",
            "coverage",
            "spec.json",
            "--seed",
            "9",
            "--target-se",
            "0.03",
        ],
    );
    assert!(text.contains("recall"));
    std::fs::write(
        p.join("few.json"),
        SPEC.replace("\"replications\": 100", "\"replications\": 10"),
    )
    .unwrap();
    assert_eq!(
        run(p, &["simulate", "coverage", "few.json", "--seed", "9"])
            .status
            .code(),
        Some(3)
    );
}
