mod judge;

use std::fmt::Write as _;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use strataeval::corpus::{frequency_table, load_corpus, write_corpus};
use strataeval::estimation::SdDivisor;
use strataeval::sampling::parse_seed;
use strataeval::simulator::{coverage_experiment, reference_fixture, synth_corpus, SimError, SimSpec};
use strataeval::study::{PrecisionTarget, SdSource};
use strataeval::{Phase, PosClass, Study, StudyConfig, StudyError, WeightMode};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_STATE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "strataeval",
    version,
    about = "Stratified two-phase evaluation of lemmatizer accuracy"
)]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that a corpus file parses and count its tokens.
    Validate { corpus: PathBuf },
    /// Tag frequency table of one stratum.
    Freq {
        corpus: PathBuf,
        #[arg(long)]
        class: PosClass,
    },
    /// Run an evaluation study step by step.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Monte Carlo checks on synthetic corpora.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Serve a study over HTTP for the review UI.
    Serve {
        #[arg(long)]
        study: PathBuf,
        /// Corpus file; defaults to the path recorded in the study.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

#[derive(Args)]
struct SeedArg {
    /// 64-bit seed, decimal or 0x-prefixed hex.
    #[arg(long, env = "STRATAEVAL_SEED", value_parser = seed_value)]
    seed: u64,
}

fn seed_value(s: &str) -> Result<u64, String> {
    parse_seed(s).ok_or_else(|| format!("'{s}' is not a 64-bit decimal or 0x-hex seed"))
}

#[derive(Args)]
struct StudyPath {
    /// Study state file.
    #[arg(long)]
    study: PathBuf,
    /// Corpus file; defaults to the path recorded in the study.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Create a study file for a corpus.
    Init(InitArgs),
    /// Draw the pilot sample.
    Pilot {
        #[command(flatten)]
        path: StudyPath,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Compute the sample size and allocation from the judged pilot.
    Allocate {
        #[command(flatten)]
        path: StudyPath,
    },
    /// Draw the second-phase sample.
    Draw {
        #[command(flatten)]
        path: StudyPath,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Judge drawn items, interactively or one at a time.
    Judge(judge::JudgeArgs),
    /// Estimate precision, recall and F from all judgments.
    Report {
        #[command(flatten)]
        path: StudyPath,
        /// Weighting shown as primary: population or sample.
        #[arg(long)]
        mode: Option<WeightMode>,
        /// Close the study: no further judgments are accepted.
        #[arg(long)]
        finalize: bool,
    },
    /// Phase and per-stratum progress.
    Status {
        #[command(flatten)]
        path: StudyPath,
    },
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    study: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
    /// Pilot items per stratum.
    #[arg(long, default_value_t = 40)]
    pilot: u64,
    /// Target standard error of the pooled proportion.
    #[arg(long, conflicts_with = "margin")]
    target_se: Option<f64>,
    /// Target interval half-width at the confidence level instead.
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Context tokens shown on each side of a judged item.
    #[arg(long, default_value_t = 5)]
    context: usize,
    #[arg(long, default_value = "population")]
    weight_mode: WeightMode,
    /// Pilot proportion driving allocation: recall or precision.
    #[arg(long, default_value = "recall")]
    sd_source: SdSource,
    /// Use n-1 in the pilot standard deviation.
    #[arg(long)]
    sample_sd: bool,
    /// Total sample size to use instead of the computed minimum.
    #[arg(long)]
    total: Option<u64>,
    /// Apply the finite population correction to standard errors.
    #[arg(long)]
    fpc: bool,
    /// Overwrite an existing study file.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Interval coverage over repeated full studies.
    Coverage {
        spec: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
        /// Overrides the spec's target standard error (default 0.01).
        #[arg(long)]
        target_se: Option<f64>,
        /// Write one CSV row per replication to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a synthetic corpus described by a spec file.
    Corpus {
        spec: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a corpus realizing the reference tag frequency tables exactly.
    Fixture {
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.93)]
        correctness: f64,
        #[arg(long, default_value_t = 0.03)]
        no_output: f64,
    },
}

/// A command run in the wrong phase.
#[derive(Debug)]
struct WrongPhase(String);

impl std::fmt::Display for WrongPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for WrongPhase {}

fn wrong_phase(msg: String) -> anyhow::Error {
    WrongPhase(msg).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<WrongPhase>() {
            return EXIT_STATE;
        }
        if let Some(se) = cause.downcast_ref::<StudyError>() {
            return if se.is_state_error() { EXIT_STATE } else { EXIT_DATA };
        }
        if let Some(SimError::Study { source, .. }) = cause.downcast_ref::<SimError>() {
            return if source.is_state_error() { EXIT_STATE } else { EXIT_DATA };
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

struct Out {
    json: bool,
}

impl Out {
    fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String) -> Result<()> {
        let mut stdout = std::io::stdout().lock();
        if self.json {
            serde_json::to_writer_pretty(&mut stdout, value)?;
            writeln!(stdout)?;
        } else {
            write!(stdout, "{}", text())?;
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = Out { json: cli.json };
    match cli.command {
        Command::Validate { corpus } => validate(&out, &corpus),
        Command::Freq { corpus, class } => freq(&out, &corpus, class),
        Command::Study(cmd) => study(&out, cmd),
        Command::Simulate(cmd) => simulate(&out, cmd),
        Command::Serve { study, corpus, bind } => serve(&study, corpus.as_deref(), bind),
    }
}

fn validate(out: &Out, path: &Path) -> Result<()> {
    let (corpus, corpus_ref) = load_corpus(path)?;
    let mut counts = serde_json::Map::new();
    for class in PosClass::STRATA {
        counts.insert(class.as_str().into(), corpus.stratum_size(class).into());
    }
    counts.insert("other".into(), corpus.other_count().into());
    let value = json!({
        "tokens": corpus.total_tokens(),
        "strata": counts,
        "digest": corpus_ref.digest,
    });
    out.emit(&value, || {
        let mut s = format!("{} tokens\n", corpus.total_tokens());
        for class in PosClass::STRATA {
            let _ = writeln!(s, "{:<10} {}", class.as_str(), corpus.stratum_size(class));
        }
        let _ = writeln!(s, "{:<10} {}", "other", corpus.other_count());
        s
    })
}

fn freq(out: &Out, path: &Path, class: PosClass) -> Result<()> {
    let (corpus, _) = load_corpus(path)?;
    let table = frequency_table(&corpus, class)?;
    out.emit(&table, || {
        table
            .entries
            .iter()
            .map(|e| format!("{} {}\n", e.tag, e.count))
            .collect()
    })
}

fn load_study(path: &StudyPath) -> Result<Study> {
    Study::load(&path.study, path.corpus.as_deref()).with_context(|| format!("loading {}", path.study.display()))
}

fn save_study(study: &Study, path: &Path) -> Result<()> {
    study.save(path).with_context(|| format!("saving {}", path.display()))
}

fn check_seed(study: &Study, seed: u64) -> Result<()> {
    let stored = study.config().seed;
    if seed != stored {
        bail!("seed {seed} does not match the seed {stored} this study was created with");
    }
    Ok(())
}

fn expect_phase(study: &Study, want: &[Phase], action: &str) -> Result<()> {
    let phase = study.phase();
    if !want.contains(&phase) {
        return Err(wrong_phase(format!("cannot {action}: study is in phase {phase}")));
    }
    Ok(())
}

fn study(out: &Out, cmd: StudyCommand) -> Result<()> {
    match cmd {
        StudyCommand::Init(args) => init(out, args),
        StudyCommand::Pilot { path, seed } => {
            let mut study = load_study(&path)?;
            check_seed(&study, seed.seed)?;
            expect_phase(&study, &[Phase::Created], "draw the pilot")?;
            study.advance(Utc::now())?;
            save_study(&study, &path.study)?;
            print_status(out, &study)
        }
        StudyCommand::Allocate { path } => {
            let mut study = load_study(&path)?;
            // Once allocated, the stored plan is printed again.
            if study.phase() < Phase::Allocated {
                expect_phase(&study, &[Phase::PilotDrawn, Phase::PilotJudged], "allocate")?;
                while study.phase() < Phase::Allocated {
                    study.advance(Utc::now())?;
                }
                save_study(&study, &path.study)?;
            }
            print_allocation(out, &study)
        }
        StudyCommand::Draw { path, seed } => {
            let mut study = load_study(&path)?;
            check_seed(&study, seed.seed)?;
            expect_phase(&study, &[Phase::Allocated], "draw the main sample")?;
            study.advance(Utc::now())?;
            save_study(&study, &path.study)?;
            print_status(out, &study)
        }
        StudyCommand::Judge(args) => judge::run(out, args),
        StudyCommand::Report { path, mode, finalize } => {
            let mut study = load_study(&path)?;
            let report = study.report()?;
            if finalize {
                while study.phase() < Phase::Reported {
                    study.advance(Utc::now())?;
                }
                save_study(&study, &path.study)?;
            }
            let report = match mode {
                Some(m) => report.with_primary(m),
                None => report,
            };
            out.emit(&report, || report.to_text())
        }
        StudyCommand::Status { path } => print_status(out, &load_study(&path)?),
    }
}

fn init(out: &Out, args: InitArgs) -> Result<()> {
    if args.study.exists() && !args.force {
        bail!("{} already exists (use --force to overwrite)", args.study.display());
    }
    let (corpus, mut corpus_ref) = load_corpus(&args.corpus)?;
    corpus_ref.path = stored_corpus_path(&args.study, &args.corpus)?;
    let mut config = StudyConfig::new(args.seed.seed);
    config.pilot_per_stratum = args.pilot;
    config.target = match (args.target_se, args.margin) {
        (_, Some(margin)) => PrecisionTarget::Margin {
            margin,
            confidence: args.confidence,
        },
        (Some(se), None) => PrecisionTarget::StandardError { se },
        (None, None) => config.target,
    };
    config.confidence_level = args.confidence;
    config.beta = args.beta;
    config.context_radius = args.context;
    config.weight_mode = args.weight_mode;
    config.sd_source = args.sd_source;
    config.sd_divisor = if args.sample_sd {
        SdDivisor::Sample
    } else {
        SdDivisor::Population
    };
    config.total_override = args.total;
    config.fpc = args.fpc;
    let study = Study::create(Arc::new(corpus), corpus_ref, config, Utc::now())?;
    save_study(&study, &args.study)?;
    print_status(out, &study)
}

/// The corpus path to record in a study: relative to the study file's
/// directory when the corpus lives under it, absolute otherwise.
fn stored_corpus_path(study: &Path, corpus: &Path) -> Result<PathBuf> {
    let corpus = std::fs::canonicalize(corpus).with_context(|| format!("resolving {}", corpus.display()))?;
    let dir = match study.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let dir = std::fs::canonicalize(&dir).with_context(|| format!("resolving {}", dir.display()))?;
    Ok(corpus
        .strip_prefix(&dir)
        .map_or_else(|_| corpus.clone(), Path::to_path_buf))
}

#[derive(Serialize)]
struct StatusView<'a> {
    phase: Phase,
    corpus_digest: &'a str,
    judged: usize,
    unjudged: usize,
    progress: Vec<strataeval::study::StratumProgress>,
}

fn print_status(out: &Out, study: &Study) -> Result<()> {
    let view = StatusView {
        phase: study.phase(),
        corpus_digest: &study.state().corpus_digest,
        judged: study.judgments().len(),
        unjudged: study.unjudged_items().len(),
        progress: study.progress(),
    };
    out.emit(&view, || {
        let mut s = format!("phase {}\n", view.phase);
        let _ = writeln!(
            s,
            "{:<10} {:>10} {:>7} {:>7} {:>7} {:>7}",
            "stratum", "population", "planned", "drawn", "judged", "left"
        );
        for p in &view.progress {
            let planned = p.planned.map_or("-".to_string(), |n| n.to_string());
            let _ = writeln!(
                s,
                "{:<10} {:>10} {:>7} {:>7} {:>7} {:>7}",
                p.class.as_str(),
                p.population,
                planned,
                p.drawn,
                p.judged,
                p.remaining()
            );
        }
        s
    })
}

fn print_allocation(out: &Out, study: &Study) -> Result<()> {
    let plan = study.allocation().ok_or_else(|| anyhow!("study has no allocation"))?;
    out.emit(plan, || {
        let mut s = format!("target se {}\n", plan.target_se);
        let _ = writeln!(s, "required n {:.3} (ceil {})", plan.required.exact, plan.required.ceil);
        let _ = writeln!(s, "total n {}", plan.n_total);
        let _ = writeln!(
            s,
            "{:<10} {:>10} {:>8} {:>9} {:>7} {:>7}",
            "stratum", "population", "sd", "fraction", "count", "second"
        );
        for (j, spec) in plan.strata.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<10} {:>10} {:>8.4} {:>9.5} {:>7} {:>7}",
                spec.class.as_str(),
                spec.size,
                spec.sd,
                plan.fractions[j],
                plan.counts[j],
                plan.second_phase_counts[j]
            );
        }
        s
    })
}

fn read_spec(path: &Path, seed: u64) -> Result<SimSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut spec: SimSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing simulation spec {}", path.display()))?;
    spec.seed = seed;
    Ok(spec)
}

fn write_tsv(corpus: &strataeval::Corpus, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    write_corpus(corpus, &mut w)?;
    w.flush()?;
    Ok(())
}

fn simulate(out: &Out, cmd: SimulateCommand) -> Result<()> {
    match cmd {
        SimulateCommand::Coverage {
            spec,
            seed,
            target_se,
            csv,
        } => {
            let spec = read_spec(&spec, seed.seed)?;
            let target_se = target_se.or(spec.target_se).unwrap_or(0.01);
            let summary = coverage_experiment(&spec, target_se)?;
            if let Some(path) = csv {
                let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                let mut w = std::io::BufWriter::new(file);
                summary.write_csv(&mut w)?;
                w.flush()?;
            }
            let mut brief = serde_json::to_value(&summary)?;
            brief.as_object_mut().expect("summary is an object").remove("rows");
            out.emit(&brief, || {
                let mut s = format!("replications {}\n", summary.replications);
                let _ = writeln!(s, "target se {}", summary.target_se);
                let _ = writeln!(s, "mean n {:.1}", summary.mean_n);
                let _ = writeln!(
                    s,
                    "{:<10} {:>8} {:>8} {:>9} {:>10}",
                    "", "truth", "mean", "coverage", "mean width"
                );
                for (name, truth, mean, cov, width) in [
                    (
                        "precision",
                        summary.truth_precision,
                        summary.mean_precision,
                        summary.coverage_precision,
                        summary.mean_width_precision,
                    ),
                    (
                        "recall",
                        summary.truth_recall,
                        summary.mean_recall,
                        summary.coverage_recall,
                        summary.mean_width_recall,
                    ),
                ] {
                    let _ = writeln!(s, "{name:<10} {truth:>8.4} {mean:>8.4} {cov:>9.4} {width:>10.4}");
                }
                s
            })
        }
        SimulateCommand::Corpus { spec, seed, out: path } => {
            let spec = read_spec(&spec, seed.seed)?;
            let (corpus, _) = synth_corpus(&spec)?;
            write_tsv(&corpus, &path)?;
            validate(out, &path)
        }
        SimulateCommand::Fixture {
            seed,
            out: path,
            correctness,
            no_output,
        } => {
            if !(0.0..=1.0).contains(&correctness) || !(0.0..=1.0).contains(&no_output) {
                bail!("correctness and no-output rates must be in [0, 1]");
            }
            let (corpus, _) = reference_fixture(seed.seed, correctness, no_output)?;
            write_tsv(&corpus, &path)?;
            validate(out, &path)
        }
    }
}

fn serve(study: &Path, corpus: Option<&Path>, bind: SocketAddr) -> Result<()> {
    let state =
        strataeval_server::AppState::load(study, corpus).with_context(|| format!("loading {}", study.display()))?;
    let runtime = tokio::runtime::Runtime::new()?;
    eprintln!("serving {} on http://{bind}", study.display());
    runtime
        .block_on(strataeval_server::serve(state, bind))
        .with_context(|| format!("serving on {bind}"))
}
