//! Synthetic corpora with known ground truth, and Monte Carlo runs of the
//! whole two-phase procedure to measure confidence-interval coverage.

pub mod reference;

use std::io::Write;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{content_digest, corpus_to_tsv, Corpus, CorpusError, CorpusRef, PosClass, TokenRecord};
use crate::estimation::{SdDivisor, Verdict, WeightMode};
use crate::sampling::{derive_seed, RandomState};
use crate::study::{PrecisionTarget, Study, StudyConfig, StudyError};
pub use reference::{reference_inventory, reference_tags};

pub const SYNTHETIC_PATH: &str = "<synthetic>";
const MIN_REPLICATIONS: usize = 100;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{0} stratum has an empty tag inventory")]
    EmptyInventory(PosClass),
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("precision is undefined: the synthetic corpus has no produced lemma")]
    NoOutputAnywhere,
    #[error("coverage needs at least {MIN_REPLICATIONS} replications, got {0}")]
    TooFewReplications(usize),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("replication {replication}: {source}")]
    Study {
        replication: usize,
        #[source]
        source: StudyError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

fn default_pilot() -> u64 {
    40
}

fn default_level() -> f64 {
    0.95
}

fn default_fpc() -> bool {
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStratum {
    pub class: PosClass,
    pub size: u64,
    /// Probability that a produced lemma is correct.
    pub correctness: f64,
    /// Probability that the system produces no lemma.
    pub no_output: f64,
    /// Weighted tag inventory; defaults to the reference table for the class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<(String, u64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub strata: Vec<SimStratum>,
    #[serde(default)]
    pub seed: u64,
    pub replications: usize,
    #[serde(default = "default_pilot")]
    pub pilot_per_stratum: u64,
    #[serde(default = "default_level")]
    pub confidence_level: f64,
    #[serde(default)]
    pub target_se: Option<f64>,
    #[serde(default)]
    pub sd_divisor: SdDivisor,
    #[serde(default = "default_fpc")]
    pub fpc: bool,
}

impl SimSpec {
    /// Three strata sharing one correctness and no-output rate.
    pub fn uniform(sizes: [u64; 3], correctness: f64, no_output: f64, seed: u64, replications: usize) -> Self {
        SimSpec {
            strata: PosClass::STRATA
                .iter()
                .zip(sizes)
                .map(|(&class, size)| SimStratum {
                    class,
                    size,
                    correctness,
                    no_output,
                    tags: None,
                })
                .collect(),
            seed,
            replications,
            pilot_per_stratum: default_pilot(),
            confidence_level: default_level(),
            target_se: None,
            sd_divisor: SdDivisor::Population,
            fpc: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if self.strata.is_empty() {
            return bad("no strata".into());
        }
        for s in &self.strata {
            if !s.class.is_stratum() {
                return bad(format!("class {} is not a stratum", s.class));
            }
            if s.size == 0 {
                return bad(format!("{} size must be at least 1", s.class));
            }
            for (name, v) in [("correctness", s.correctness), ("no_output", s.no_output)] {
                if !(0.0..=1.0).contains(&v) {
                    return bad(format!("{} {name} {v} outside [0, 1]", s.class));
                }
            }
            if let Some(tags) = &s.tags {
                if tags.iter().map(|t| t.1).sum::<u64>() == 0 {
                    return Err(SimError::EmptyInventory(s.class));
                }
            }
        }
        Ok(())
    }
}

/// Ground-truth verdict per corpus index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Oracle(Vec<Verdict>);

impl Oracle {
    pub fn verdict(&self, index: usize) -> Option<Verdict> {
        self.0.get(index).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Realized population precision and recall over the given indices.
    pub fn truth(&self, indices: impl IntoIterator<Item = usize>) -> (Option<f64>, f64) {
        let (mut n, mut produced, mut correct) = (0u64, 0u64, 0u64);
        for i in indices {
            n += 1;
            match self.0[i] {
                Verdict::CorrectLemma => {
                    produced += 1;
                    correct += 1;
                }
                Verdict::WrongLemma => produced += 1,
                Verdict::NoOutput => {}
            }
        }
        let precision = (produced > 0).then(|| correct as f64 / produced as f64);
        let recall = if n == 0 { 0.0 } else { correct as f64 / n as f64 };
        (precision, recall)
    }
}

fn token(index: usize, tag: String, verdict: Verdict) -> TokenRecord {
    let gold = format!("l{index}");
    let system_lemma = match verdict {
        Verdict::CorrectLemma => Some(gold.clone()),
        Verdict::WrongLemma => Some(format!("x{index}")),
        Verdict::NoOutput => None,
    };
    TokenRecord {
        index,
        surface: format!("w{index}"),
        tag,
        system_lemma,
        gold_lemma: Some(gold),
        doc_id: "sim".into(),
    }
}

fn draw_verdict(rng: &mut RandomState, correctness: f64, no_output: f64) -> Verdict {
    if rng.next_f64() < no_output {
        Verdict::NoOutput
    } else if rng.next_f64() < correctness {
        Verdict::CorrectLemma
    } else {
        Verdict::WrongLemma
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut RandomState) {
    for i in (1..items.len()).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

struct TagSampler {
    tags: Vec<String>,
    cumulative: Vec<u64>,
}

impl TagSampler {
    fn new(inventory: &[(String, u64)]) -> Self {
        let mut total = 0;
        let mut tags = Vec::new();
        let mut cumulative = Vec::new();
        for (tag, w) in inventory.iter().filter(|x| x.1 > 0) {
            total += w;
            tags.push(tag.clone());
            cumulative.push(total);
        }
        TagSampler { tags, cumulative }
    }

    fn sample(&self, rng: &mut RandomState) -> String {
        let total = *self.cumulative.last().expect("non-empty inventory");
        let r = rng.next_below(total);
        let k = self.cumulative.partition_point(|&c| c <= r);
        self.tags[k].clone()
    }
}

/// Builds a corpus whose tokens are in shuffled stratum order, tagged from
/// each stratum's inventory, with each token independently unlemmatized
/// with probability `no_output` and otherwise correct with probability
/// `correctness`.
pub fn synth_corpus(spec: &SimSpec) -> Result<(Corpus, Oracle)> {
    spec.validate()?;
    let mut rng = RandomState::new(spec.seed);
    let samplers: Vec<TagSampler> = spec
        .strata
        .iter()
        .map(|s| {
            let inventory = s.tags.clone().unwrap_or_else(|| reference_inventory(s.class));
            let sampler = TagSampler::new(&inventory);
            if sampler.tags.is_empty() {
                Err(SimError::EmptyInventory(s.class))
            } else {
                Ok(sampler)
            }
        })
        .collect::<Result<_>>()?;

    let mut slots: Vec<usize> = spec
        .strata
        .iter()
        .enumerate()
        .flat_map(|(j, s)| std::iter::repeat_n(j, s.size as usize))
        .collect();
    shuffle(&mut slots, &mut rng);

    let mut records = Vec::with_capacity(slots.len());
    let mut verdicts = Vec::with_capacity(slots.len());
    for (index, j) in slots.into_iter().enumerate() {
        let stratum = &spec.strata[j];
        let tag = samplers[j].sample(&mut rng);
        let verdict = draw_verdict(&mut rng, stratum.correctness, stratum.no_output);
        records.push(token(index, tag, verdict));
        verdicts.push(verdict);
    }
    Ok((Corpus::from_records(records)?, Oracle(verdicts)))
}

/// Corpus whose frequency tables equal the reference tables exactly, in
/// shuffled order, with the given lemmatizer behaviour.
pub fn reference_fixture(seed: u64, correctness: f64, no_output: f64) -> Result<(Corpus, Oracle)> {
    let mut rng = RandomState::new(seed);
    let mut tags: Vec<&str> = PosClass::STRATA
        .iter()
        .flat_map(|&c| reference_tags(c))
        .flat_map(|&(tag, n)| std::iter::repeat_n(tag, n as usize))
        .collect();
    shuffle(&mut tags, &mut rng);
    let mut records = Vec::with_capacity(tags.len());
    let mut verdicts = Vec::with_capacity(tags.len());
    for (index, tag) in tags.into_iter().enumerate() {
        let verdict = draw_verdict(&mut rng, correctness, no_output);
        records.push(token(index, tag.to_string(), verdict));
        verdicts.push(verdict);
    }
    Ok((Corpus::from_records(records)?, Oracle(verdicts)))
}

/// Reference for an in-memory corpus: its TSV digest under a placeholder path.
pub fn synthetic_ref(corpus: &Corpus) -> Result<CorpusRef> {
    Ok(CorpusRef {
        path: SYNTHETIC_PATH.into(),
        digest: content_digest(&corpus_to_tsv(corpus)?),
    })
}

/// Judges every drawn, unjudged item with the oracle's verdict. Returns the
/// number of judgments added.
pub fn auto_judge(study: &mut Study, oracle: &Oracle, judge_id: &str, at: DateTime<Utc>) -> Result<usize, StudyError> {
    let pending = study.unjudged_items();
    for &index in &pending {
        let verdict = oracle.verdict(index).ok_or(StudyError::NotDrawn(index))?;
        study.record_judgment(index, verdict, judge_id, at)?;
    }
    Ok(pending.len())
}

/// Runs a study from creation to report, judging with the oracle.
pub fn run_study(study: &mut Study, oracle: &Oracle, at: DateTime<Utc>) -> Result<(), StudyError> {
    use crate::study::Phase;
    while study.phase() != Phase::Reported {
        auto_judge(study, oracle, "oracle", at)?;
        study.advance(at)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub seed: u64,
    pub n_total: u64,
    pub precision: Option<f64>,
    pub precision_lo: Option<f64>,
    pub precision_hi: Option<f64>,
    pub recall: f64,
    pub recall_lo: f64,
    pub recall_hi: f64,
    pub covers_precision: bool,
    pub covers_recall: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub replications: usize,
    pub target_se: f64,
    pub confidence_level: f64,
    pub truth_precision: f64,
    pub truth_recall: f64,
    pub coverage_precision: f64,
    pub coverage_recall: f64,
    pub mean_n: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_width_precision: f64,
    pub mean_width_recall: f64,
    pub rows: Vec<ReplicationRow>,
}

impl CoverageSummary {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "replication,seed,n_total,precision,precision_lo,precision_hi,recall,recall_lo,recall_hi,covers_precision,covers_recall"
        )?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.replication,
                r.seed,
                r.n_total,
                opt(r.precision),
                opt(r.precision_lo),
                opt(r.precision_hi),
                r.recall,
                r.recall_lo,
                r.recall_hi,
                r.covers_precision,
                r.covers_recall
            )?;
        }
        Ok(())
    }
}

fn epoch() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH
}

/// Runs `spec.replications` independent studies over one synthetic corpus
/// and reports how often their intervals cover the corpus's realized
/// precision and recall (population-weighted estimates).
pub fn coverage_experiment(spec: &SimSpec, target_se: f64) -> Result<CoverageSummary> {
    if spec.replications < MIN_REPLICATIONS {
        return Err(SimError::TooFewReplications(spec.replications));
    }
    if !(target_se > 0.0) {
        return Err(SimError::InvalidSpec(format!("target_se {target_se} must be positive")));
    }
    let (corpus, oracle) = synth_corpus(spec)?;
    let population: Vec<usize> = PosClass::STRATA
        .iter()
        .flat_map(|&c| corpus.stratum(c).iter().copied())
        .collect();
    let (truth_precision, truth_recall) = oracle.truth(population);
    let truth_precision = truth_precision.ok_or(SimError::NoOutputAnywhere)?;
    let corpus_ref = synthetic_ref(&corpus)?;
    let corpus = Arc::new(corpus);

    let rows: Vec<ReplicationRow> = (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(spec.seed, r as u64);
            let mut config = StudyConfig::new(seed);
            config.pilot_per_stratum = spec.pilot_per_stratum;
            config.target = PrecisionTarget::StandardError { se: target_se };
            config.confidence_level = spec.confidence_level;
            config.weight_mode = WeightMode::PopulationWeighted;
            config.sd_divisor = spec.sd_divisor;
            config.fpc = spec.fpc;
            let fail = |source| SimError::Study { replication: r, source };
            let mut study = Study::create(corpus.clone(), corpus_ref.clone(), config, epoch()).map_err(fail)?;
            run_study(&mut study, &oracle, epoch()).map_err(fail)?;
            let report = study.report().map_err(fail)?;
            let p = report.population_weighted.precision;
            let rec = report.population_weighted.recall;
            Ok(ReplicationRow {
                replication: r,
                seed,
                n_total: study.allocation().map_or(0, |a| a.n_total),
                precision: p.map(|e| e.point),
                precision_lo: p.map(|e| e.lo),
                precision_hi: p.map(|e| e.hi),
                recall: rec.point,
                recall_lo: rec.lo,
                recall_hi: rec.hi,
                covers_precision: p.is_some_and(|e| e.lo <= truth_precision && truth_precision <= e.hi),
                covers_recall: rec.lo <= truth_recall && truth_recall <= rec.hi,
            })
        })
        .collect::<Result<_>>()?;

    let count = rows.len() as f64;
    let mean = |f: &dyn Fn(&ReplicationRow) -> f64| rows.iter().map(f).sum::<f64>() / count;
    let with_precision: Vec<&ReplicationRow> = rows.iter().filter(|r| r.precision.is_some()).collect();
    let mean_over_precision = |f: &dyn Fn(&ReplicationRow) -> f64| {
        if with_precision.is_empty() {
            f64::NAN
        } else {
            with_precision.iter().map(|r| f(r)).sum::<f64>() / with_precision.len() as f64
        }
    };
    Ok(CoverageSummary {
        replications: rows.len(),
        target_se,
        confidence_level: spec.confidence_level,
        truth_precision,
        truth_recall,
        coverage_precision: mean(&|r| r.covers_precision as u8 as f64),
        coverage_recall: mean(&|r| r.covers_recall as u8 as f64),
        mean_n: mean(&|r| r.n_total as f64),
        mean_precision: mean_over_precision(&|r| r.precision.unwrap_or(0.0)),
        mean_recall: mean(&|r| r.recall),
        mean_width_precision: mean_over_precision(&|r| r.precision_hi.unwrap_or(0.0) - r.precision_lo.unwrap_or(0.0)),
        mean_width_recall: mean(&|r| r.recall_hi - r.recall_lo),
        rows,
    })
}
