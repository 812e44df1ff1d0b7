//! Corpus ingestion, POS stratification and per-tag frequency tables.
//!
//! The corpus file is UTF-8 TSV with one token per line:
//!
//! ```text
//! surface <TAB> tag <TAB> system_lemma <TAB> gold_lemma <TAB> doc_id
//! ```
//!
//! Empty lemma columns mean "absent". Lines starting with `#` are comments and
//! blank lines are ignored. Tags are BTB-TS positional strings; only the first
//! character is interpreted (it selects the POS class), the rest is an opaque
//! key for frequency tables.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const COLUMNS: usize = 5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is not valid UTF-8: {0}")]
    Encoding(#[from] std::string::FromUtf8Error),
    #[error("line {line}: expected {COLUMNS} tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: empty tag")]
    EmptyTag { line: usize },
    #[error("token {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("token index {index} out of range (corpus has {len} tokens)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("class {0} is not a sampling stratum")]
    NotAStratum(PosClass),
    #[error("unknown POS class '{0}' (expected noun, adjective or verb)")]
    UnknownClass(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Coarse part-of-speech class derived from the first character of a tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosClass {
    Noun,
    Adjective,
    Verb,
    Other,
}

impl PosClass {
    /// The three sampling strata, in canonical order.
    pub const STRATA: [PosClass; 3] = [PosClass::Noun, PosClass::Adjective, PosClass::Verb];

    pub fn is_stratum(self) -> bool {
        !matches!(self, PosClass::Other)
    }

    /// Position within [`PosClass::STRATA`], `None` for `Other`.
    pub fn stratum_index(self) -> Option<usize> {
        match self {
            PosClass::Noun => Some(0),
            PosClass::Adjective => Some(1),
            PosClass::Verb => Some(2),
            PosClass::Other => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosClass::Noun => "noun",
            PosClass::Adjective => "adjective",
            PosClass::Verb => "verb",
            PosClass::Other => "other",
        }
    }
}

impl fmt::Display for PosClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PosClass::Noun => "Noun",
            PosClass::Adjective => "Adjective",
            PosClass::Verb => "Verb",
            PosClass::Other => "Other",
        };
        f.write_str(name)
    }
}

impl FromStr for PosClass {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "noun" | "nouns" | "n" => Ok(PosClass::Noun),
            "adjective" | "adjectives" | "adj" | "a" => Ok(PosClass::Adjective),
            "verb" | "verbs" | "v" => Ok(PosClass::Verb),
            "other" => Ok(PosClass::Other),
            _ => Err(CorpusError::UnknownClass(s.to_string())),
        }
    }
}

/// Maps a BTB-TS tag to its POS class by its first character.
pub fn pos_class(tag: &str) -> PosClass {
    match tag.chars().next() {
        Some('N') => PosClass::Noun,
        Some('A') => PosClass::Adjective,
        Some('V') => PosClass::Verb,
        _ => PosClass::Other,
    }
}

/// One corpus token: the unit of sampling and judgment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub index: usize,
    pub surface: String,
    pub tag: String,
    /// `None` when the lemmatizer produced no output for this token.
    pub system_lemma: Option<String>,
    pub gold_lemma: Option<String>,
    pub doc_id: String,
}

impl TokenRecord {
    pub fn class(&self) -> PosClass {
        pos_class(&self.tag)
    }

    pub fn has_output(&self) -> bool {
        self.system_lemma.is_some()
    }
}

/// An immutable, stratified corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    records: Vec<TokenRecord>,
    strata: [Vec<usize>; 3],
}

impl Corpus {
    /// Builds a corpus from records whose `index` fields are `0..len` in order.
    pub fn from_records(records: Vec<TokenRecord>) -> Result<Self> {
        let mut strata: [Vec<usize>; 3] = Default::default();
        for (pos, record) in records.iter().enumerate() {
            if record.index != pos {
                return Err(CorpusError::InvalidRecord {
                    index: pos,
                    reason: format!("index field is {}, expected {pos}", record.index),
                });
            }
            if record.tag.is_empty() {
                return Err(CorpusError::InvalidRecord {
                    index: pos,
                    reason: "empty tag".into(),
                });
            }
            if let Some(slot) = record.class().stratum_index() {
                strata[slot].push(pos);
            }
        }
        Ok(Corpus { records, strata })
    }

    pub fn records(&self) -> &[TokenRecord] {
        &self.records
    }

    pub fn get(&self, index: usize) -> Option<&TokenRecord> {
        self.records.get(index)
    }

    pub fn total_tokens(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted corpus indices of one stratum; empty for `Other`.
    pub fn stratum(&self, class: PosClass) -> &[usize] {
        match class.stratum_index() {
            Some(slot) => &self.strata[slot],
            None => &[],
        }
    }

    pub fn stratum_size(&self, class: PosClass) -> usize {
        self.stratum(class).len()
    }

    /// Population size N: tokens in the noun, adjective and verb strata.
    pub fn population_size(&self) -> usize {
        self.strata.iter().map(Vec::len).sum()
    }

    pub fn other_count(&self) -> usize {
        self.total_tokens() - self.population_size()
    }
}

/// Parses a corpus from the TSV format described in the module docs.
pub fn parse_corpus<R: Read>(mut input: R) -> Result<Corpus> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes)?;

    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_number = lineno + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != COLUMNS {
            return Err(CorpusError::ColumnCount {
                line: line_number,
                found: cols.len(),
            });
        }
        if cols[1].is_empty() {
            return Err(CorpusError::EmptyTag { line: line_number });
        }
        records.push(TokenRecord {
            index: records.len(),
            surface: cols[0].to_string(),
            tag: cols[1].to_string(),
            system_lemma: optional(cols[2]),
            gold_lemma: optional(cols[3]),
            doc_id: cols[4].to_string(),
        });
    }
    Corpus::from_records(records)
}

fn optional(col: &str) -> Option<String> {
    (!col.is_empty()).then(|| col.to_string())
}

/// Writes a corpus in the TSV format accepted by [`parse_corpus`].
///
/// Fails on values the format cannot carry: tabs or newlines anywhere, a
/// surface starting with `#`, or an empty lemma string.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    for record in corpus.records() {
        check_representable(record)?;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            record.surface,
            record.tag,
            record.system_lemma.as_deref().unwrap_or(""),
            record.gold_lemma.as_deref().unwrap_or(""),
            record.doc_id
        )?;
    }
    Ok(())
}

fn check_representable(record: &TokenRecord) -> Result<()> {
    let bad = |reason: &str| CorpusError::InvalidRecord {
        index: record.index,
        reason: reason.to_string(),
    };
    let fields = [
        Some(record.surface.as_str()),
        Some(record.tag.as_str()),
        record.system_lemma.as_deref(),
        record.gold_lemma.as_deref(),
        Some(record.doc_id.as_str()),
    ];
    if fields.iter().flatten().any(|f| f.contains(['\t', '\n', '\r'])) {
        return Err(bad("field contains a tab or line break"));
    }
    if record.surface.starts_with('#') {
        return Err(bad("surface starts with '#' and would read back as a comment"));
    }
    if record.system_lemma.as_deref() == Some("") || record.gold_lemma.as_deref() == Some("") {
        return Err(bad("empty lemma string is indistinguishable from absent"));
    }
    Ok(())
}

/// Serializes to the TSV byte form. Used to digest in-memory corpora.
pub fn corpus_to_tsv(corpus: &Corpus) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_corpus(corpus, &mut buf)?;
    Ok(buf)
}

/// Hex SHA-256 of raw corpus bytes.
pub fn content_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Where a corpus came from, and the digest of its bytes at load time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRef {
    pub path: PathBuf,
    pub digest: String,
}

/// Reads and parses a corpus file, returning it with its reference digest.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<(Corpus, CorpusRef)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let digest = content_digest(&bytes);
    let corpus = parse_corpus(bytes.as_slice())?;
    Ok((
        corpus,
        CorpusRef {
            path: path.to_path_buf(),
            digest,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCount {
    pub tag: String,
    pub count: usize,
}

/// Per-tag token counts within one stratum, sorted by descending count and
/// then by tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub class: PosClass,
    pub entries: Vec<TagCount>,
}

impl FrequencyTable {
    pub fn get(&self, tag: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.tag == tag).map(|e| e.count)
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }
}

pub fn frequency_table(corpus: &Corpus, class: PosClass) -> Result<FrequencyTable> {
    if !class.is_stratum() {
        return Err(CorpusError::NotAStratum(class));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for &idx in corpus.stratum(class) {
        *counts.entry(corpus.records[idx].tag.as_str()).or_default() += 1;
    }
    let mut entries: Vec<TagCount> = counts
        .into_iter()
        .map(|(tag, count)| TagCount {
            tag: tag.to_string(),
            count,
        })
        .collect();
    entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.tag.cmp(&b.tag)));
    Ok(FrequencyTable { class, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextToken<'a> {
    pub record: &'a TokenRecord,
    pub is_center: bool,
}

/// Tokens `index - radius ..= index + radius`, clipped to the corpus bounds.
pub fn context_window(corpus: &Corpus, index: usize, radius: usize) -> Result<Vec<ContextToken<'_>>> {
    let len = corpus.total_tokens();
    if index >= len {
        return Err(CorpusError::IndexOutOfRange { index, len });
    }
    let start = index.saturating_sub(radius);
    let end = index.saturating_add(radius).min(len - 1);
    Ok(corpus.records[start..=end]
        .iter()
        .map(|record| ContextToken {
            record,
            is_center: record.index == index,
        })
        .collect())
}
